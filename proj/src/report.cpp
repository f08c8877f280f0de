#include "coefflab/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace coefflab {

namespace {

std::string quote(const std::string& f) {
  if (f.find_first_of(",\"\n\r") == std::string::npos) return f;
  std::string out = "\"";
  for (char c : f) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

CsvWriter::CsvWriter(std::ostream& out, std::vector<std::string> header)
    : out_(out), width_(header.size()) {
  if (header.empty()) throw UsageError("CSV header must not be empty");
  row(header);
  rows_ = 0;
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  if (fields.size() != width_) {
    throw ArityError("CSV row has " + std::to_string(fields.size()) + " fields, header has " +
                     std::to_string(width_));
  }
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ << ',';
    out_ << quote(fields[i]);
  }
  out_ << '\n';
  ++rows_;
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string scatter_svg(const std::vector<ScatterSeries>& series, const std::string& title,
                        int width, int height) {
  double lo_x = std::numeric_limits<double>::infinity(), hi_x = -lo_x;
  double lo_y = lo_x, hi_y = -lo_x;
  for (const auto& s : series) {
    if (s.points.cols() != 2) throw DimensionError("scatter points must have 2 columns");
    for (std::size_t r = 0; r < s.points.rows(); ++r) {
      lo_x = std::min(lo_x, s.points(r, 0));
      hi_x = std::max(hi_x, s.points(r, 0));
      lo_y = std::min(lo_y, s.points(r, 1));
      hi_y = std::max(hi_y, s.points(r, 1));
    }
  }
  if (!std::isfinite(lo_x)) lo_x = lo_y = -1.0, hi_x = hi_y = 1.0;
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-9}) * 1.15;
  const double cx = (lo_x + hi_x) / 2, cy = (lo_y + hi_y) / 2;
  const double margin = 40.0, top = 30.0;
  const double plot = std::min(width - 2 * margin, height - margin - top - 20.0 * series.size());
  auto px = [&](double x) { return margin + (x - cx + span / 2) / span * plot; };
  auto py = [&](double y) { return top + (cy + span / 2 - y) / span * plot; };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"14\">" << xml_escape(title) << "</text>\n"
      << "<rect x=\"" << margin << "\" y=\"" << top << "\" width=\"" << plot << "\" height=\""
      << plot << "\" fill=\"none\" stroke=\"#999\"/>\n";
  if (lo_x <= 0 && hi_x >= 0) {
    svg << "<line x1=\"" << px(0) << "\" y1=\"" << top << "\" x2=\"" << px(0) << "\" y2=\""
        << top + plot << "\" stroke=\"#ddd\"/>\n";
  }
  if (lo_y <= 0 && hi_y >= 0) {
    svg << "<line x1=\"" << margin << "\" y1=\"" << py(0) << "\" x2=\"" << margin + plot
        << "\" y2=\"" << py(0) << "\" stroke=\"#ddd\"/>\n";
  }
  for (const auto& s : series) {
    svg << "<g fill=\"" << xml_escape(s.color) << "\" fill-opacity=\"0.7\">\n";
    for (std::size_t r = 0; r < s.points.rows(); ++r) {
      svg << "<circle cx=\"" << px(s.points(r, 0)) << "\" cy=\"" << py(s.points(r, 1))
          << "\" r=\"" << s.radius << "\"/>\n";
    }
    svg << "</g>\n";
  }
  double ly = top + plot + 20.0;
  for (const auto& s : series) {
    svg << "<circle cx=\"" << margin + 6 << "\" cy=\"" << ly - 4 << "\" r=\"4\" fill=\""
        << xml_escape(s.color) << "\"/>"
        << "<text x=\"" << margin + 16 << "\" y=\"" << ly
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(s.label) << "</text>\n";
    ly += 18.0;
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace coefflab

#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "coefflab/matrix.hpp"

namespace coefflab {

/// Minimal CSV writer. The header is written on construction; every row must
/// have the header's width. Fields containing , " or newlines are quoted.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::vector<std::string> header);

  void row(const std::vector<std::string>& fields);
  std::size_t rows_written() const { return rows_; }

 private:
  std::ostream& out_;
  std::size_t width_;
  std::size_t rows_ = 0;
};

/// Shortest round-trip representation of a double.
std::string fmt_double(double v);

struct ScatterSeries {
  std::string label;
  std::string color;
  Matrix points;  // rows of (x, y)
  double radius = 4.0;
};

/// Standalone SVG 1.1 scatter plot with a legend.
std::string scatter_svg(const std::vector<ScatterSeries>& series, const std::string& title,
                        int width = 480, int height = 480);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace coefflab

#include "coefflab/params.hpp"

#include <cstdio>

#include "coefflab/coeff.hpp"

namespace coefflab {

void validate(const LayerDims& d) {
  if (d.in_dim == 0 || d.out_dim == 0 || d.heads == 0) {
    throw UsageError("Ci, Co and H must all be positive");
  }
  if (d.out_dim % d.heads != 0) {
    throw DimensionError("Co=" + std::to_string(d.out_dim) + " is not divisible by H=" +
                         std::to_string(d.heads));
  }
  if (d.lora_rank && *d.lora_rank == 0) throw UsageError("LoRA rank must be >= 1");
}

double ratio_vs_attention(const LayerDims& d) {
  validate(d);
  const double ci = static_cast<double>(d.in_dim), co = static_cast<double>(d.out_dim);
  const double h = static_cast<double>(d.heads);
  return h * h / (3.0 * ci * co + co * co);
}

double ratio_vs_lora(const LayerDims& d) {
  validate(d);
  if (!d.lora_rank) throw UsageError("ratio_vs_lora needs a LoRA rank r");
  const double ci = static_cast<double>(d.in_dim), co = static_cast<double>(d.out_dim);
  const double h = static_cast<double>(d.heads), r = static_cast<double>(*d.lora_rank);
  return h * h / (3.0 * r * ci + 5.0 * r * co);
}

std::size_t vit_coeff_budget() { return count_coeff_params(12, 12); }

std::string format_millions(std::size_t count) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4fM", static_cast<double>(count) / 1e6);
  return buf;
}

std::string format_percent(double fraction) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g%%", fraction * 100.0);
  return buf;
}

}  // namespace coefflab

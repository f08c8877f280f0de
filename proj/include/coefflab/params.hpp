#pragma once

#include <cstddef>
#include <optional>
#include <string>

namespace coefflab {

struct LayerDims {
  std::size_t in_dim = 0;   // Ci
  std::size_t out_dim = 0;  // Co
  std::size_t heads = 0;    // H
  std::optional<std::size_t> lora_rank;
};

/// Throws UsageError for zero sizes and DimensionError when H does not divide Co.
void validate(const LayerDims& d);

/// H^2 / (3 Ci Co + Co^2): coefficients relative to the attention weights.
double ratio_vs_attention(const LayerDims& d);

/// H^2 / (3 r Ci + 5 r Co): coefficients relative to a rank-r LoRA adapter.
double ratio_vs_lora(const LayerDims& d);

/// Coefficient count of a 12-layer, 12-head ViT.
std::size_t vit_coeff_budget();

/// "0.0017M" style, rounded to four decimals of a million.
std::string format_millions(std::size_t count);

/// Percent with four significant digits, e.g. 1.993e-3 -> "0.1993%".
std::string format_percent(double fraction);

}  // namespace coefflab

#pragma once

#include <cstdint>
#include <random>

#include "coefflab/matrix.hpp"

namespace coefflab {

using Rng = std::mt19937_64;

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

/// Independent stream seed for (master, stream, index), so parallel trials get
/// the same draws regardless of how they are scheduled.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index);

}  // namespace coefflab

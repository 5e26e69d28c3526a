#pragma once

#include <cstddef>
#include <vector>

namespace evc {

// In-place iterative radix-2 FFT; n must be a power of two. Inverse includes
// the 1/n factor.
void fft_complex(std::vector<double>& re, std::vector<double>& im, bool inverse);

bool is_power_of_two(std::size_t n);

}  // namespace evc

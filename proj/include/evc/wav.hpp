#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "evc/tensor.hpp"

namespace evc {

struct WavData {
  std::vector<Scalar> samples;  // mono, in [-1, 1]
  std::size_t sample_rate = 0;
};

// Reads 16-bit integer or 32-bit float PCM; stereo is downmixed by averaging.
WavData read_wav(const std::filesystem::path& path);

// Writes mono 16-bit PCM.
void write_wav(const std::filesystem::path& path, const std::vector<Scalar>& samples,
               std::size_t sample_rate);

}  // namespace evc

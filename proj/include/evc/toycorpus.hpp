#pragma once

#include <filesystem>
#include <vector>

#include "evc/rng.hpp"
#include "evc/tensor.hpp"

namespace evc {

// Two synthetic prosody classes: emotion "A" is a low, gently modulated vowel
// and emotion "B" a higher one with wide duty-asymmetric swings. Writes
// n_per_emotion WAV files per class plus manifest.tsv; returns the manifest
// path. Deterministic per seed.
std::filesystem::path make_toy_corpus(const std::filesystem::path& out_dir,
                                      std::size_t n_per_emotion, std::uint64_t seed);

// Per-sample log-F0 contour for one utterance of the given emotion.
std::vector<Scalar> toy_contour(char emotion, Scalar duration_s, std::size_t sample_rate,
                                Rng& rng);

// Pulse train at the contour pitch driven through three formant resonators.
std::vector<Scalar> toy_vowel(const std::vector<Scalar>& log_f0_per_sample,
                              std::size_t sample_rate, Rng& rng);

}  // namespace evc

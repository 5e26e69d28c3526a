#pragma once

#include <cstdint>
#include <vector>

#include "evc/dsp.hpp"
#include "evc/tensor.hpp"

namespace evc {

struct SynthesisConfig {
  std::size_t sample_rate = kTargetSampleRate;
  std::uint64_t noise_seed = 0;
  std::size_t ir_length = 256;  // truncation of the minimum-phase response
  Scalar peak = 0.9;
};

// Deterministic source-filter rendering: pulse-train excitation at the
// reconstructed F0 for voiced frames, seeded white noise for unvoiced ones,
// filtered per frame by the minimum-phase response of the spectral envelope
// and overlap-added on the 5 ms grid. Output is peak-normalized.
std::vector<Scalar> synthesize(const FeatureSet& features, const SynthesisConfig& config);

// Minimum-phase impulse response from one log-power envelope row (cepstral
// folding); exposed for the synthesis tests.
std::vector<Scalar> minimum_phase_response(const std::vector<Scalar>& log_power,
                                           std::size_t fft_size, std::size_t ir_length);

struct RoundtripReport {
  bool unvoiced_only = false;
  Scalar f0_rmse_hz = 0.0;
  Scalar log_envelope_rmse = 0.0;
  std::size_t voiced_frames = 0;
  std::size_t total_frames = 0;
};

// Fidelity of extract -> synthesize -> extract against the original features.
RoundtripReport analysis_synthesis_roundtrip(const std::vector<Scalar>& samples,
                                             std::size_t sample_rate,
                                             const ExtractConfig& cfg = {});

}  // namespace evc

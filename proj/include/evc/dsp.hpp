#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evc/tensor.hpp"

namespace evc {

// 5 ms analysis grid shared by every per-frame feature.
inline constexpr Scalar kFrameShift = 0.005;
inline constexpr std::size_t kNumCwtScales = 10;
// tau0 of the wavelet scale grid (distinct from the pitch period used by the
// envelope estimator).
inline constexpr Scalar kCwtTau0 = 0.005;
inline constexpr Scalar kDefaultUnvoicedF0 = 160.0;
inline constexpr std::size_t kDefaultFftSize = 1024;
inline constexpr std::size_t kTargetSampleRate = 16000;

struct F0Contour {
  std::vector<Scalar> values;          // Hz per frame, 0 where unvoiced
  std::vector<std::uint8_t> voicing;   // 1 voiced, 0 unvoiced
  Scalar frame_shift = kFrameShift;

  std::size_t frames() const { return values.size(); }
};

struct F0TrackerConfig {
  Scalar f0_min = 50.0;
  Scalar f0_max = 600.0;
  Scalar periodicity_threshold = 0.3;
  Scalar energy_gate_rel = 0.01;  // frame RMS relative to utterance RMS
};

struct NormalizedLogF0 {
  std::vector<Scalar> series;  // zero-mean, unit-variance log F0
  Scalar mean = 0.0;
  Scalar stddev = 1.0;
};

struct CwtScales {
  std::vector<Scalar> coefficients;           // 10 x T, row-major
  std::size_t frame_count = 0;
  std::array<Scalar, kNumCwtScales> scales{};  // dilations in seconds
  Scalar log_f0_mean = 0.0;
  Scalar log_f0_std = 1.0;

  Scalar at(std::size_t scale, std::size_t t) const {
    return coefficients[scale * frame_count + t];
  }
};

struct SpectralEnvelope {
  std::vector<Scalar> frames;  // T x (fft_size/2 + 1), row-major, log power
  std::size_t frame_count = 0;
  std::size_t fft_size = kDefaultFftSize;
  std::size_t sample_rate = kTargetSampleRate;

  std::size_t bins() const { return fft_size / 2 + 1; }
  Scalar at(std::size_t t, std::size_t k) const { return frames[t * bins() + k]; }
};

struct FeatureSet {
  CwtScales cwt;
  SpectralEnvelope envelope;
  std::vector<std::uint8_t> voicing;
  std::string utterance_id;
  Scalar duration_s = 0.0;

  std::size_t frames() const { return cwt.frame_count; }
};

// Normalized-autocorrelation pitch tracking on a 5 ms grid. Unvoiced frames
// carry value 0.
F0Contour track_f0(const std::vector<Scalar>& samples, std::size_t sample_rate,
                   const F0TrackerConfig& cfg = {});

// Log-F0 with linear interpolation across unvoiced gaps (edges held), then
// zero-mean/unit-variance. Throws InputError when no frame is voiced.
NormalizedLogF0 interpolate_and_normalize(const F0Contour& contour);

// Inverse of the normalization; returns the log-F0 series.
std::vector<Scalar> denormalize_log_f0(const std::vector<Scalar>& series, Scalar mean,
                                       Scalar stddev);

// The scale grid 2^(i+1) * tau0 for i = 1..10, in seconds.
std::array<Scalar, kNumCwtScales> cwt_scale_grid();

// Mexican-hat CWT of a normalized log-F0 series at the 10 octave scales.
// Boundary handling is mirror reflection; each row carries a fixed per-scale
// gain so that cwt_reconstruct is approximately unity-gain (see cwt_scale_gain).
CwtScales cwt_decompose(const std::vector<Scalar>& series);

// Sum over scales of W_i(t) * (i + 2.5)^(-5/2).
std::vector<Scalar> cwt_reconstruct(const CwtScales& scales);

// L2-normalized Mexican hat mother wavelet.
Scalar mexican_hat(Scalar u);
// Per-scale gain applied by cwt_decompose (i is 1-based).
Scalar cwt_scale_gain(std::size_t i);
// Reconstruction weight (i + 2.5)^(-5/2) (i is 1-based).
Scalar cwt_recon_weight(std::size_t i);

// Three-step spectral envelope estimate: pitch-synchronous 3-period window,
// rectangular smoothing of width 2/3 * F0, cepstral liftering with
// l_s = sinc(F0 tau) and l_q = q0 + 2 q1 cos(2 pi tau F0), q0=1.18, q1=-0.09.
SpectralEnvelope cheaptrick_envelope(const std::vector<Scalar>& samples,
                                     std::size_t sample_rate, const F0Contour& contour,
                                     std::size_t fft_size,
                                     Scalar default_f0 = kDefaultUnvoicedF0);

// Exact rectangular smoothing of a piecewise-constant spectrum; exposed for
// the smoothing-oracle tests. width_hz is the full kernel width.
std::vector<Scalar> smooth_power_spectrum(const std::vector<Scalar>& power,
                                          Scalar bin_width_hz, Scalar width_hz);

// Quefrency-domain liftering of a half-spectrum log power (fft_size/2 + 1
// bins). A flat spectrum is a fixed point because l_s(0) = l_q(0) = 1.
std::vector<Scalar> lifter_log_spectrum(const std::vector<Scalar>& log_power,
                                        std::size_t fft_size, std::size_t sample_rate,
                                        Scalar f0);

struct ExtractConfig {
  std::size_t fft_size = kDefaultFftSize;
  F0TrackerConfig tracker;
};

// Full per-utterance extraction at 16 kHz (input resampled on ingest).
FeatureSet extract_features(const std::vector<Scalar>& samples, std::size_t sample_rate,
                            const std::string& utterance_id,
                            const ExtractConfig& cfg = {});

// Extraction with an externally supplied contour (bypasses the tracker). The
// contour must be on the 5 ms grid of the 16 kHz-resampled audio.
FeatureSet extract_features_with_contour(const std::vector<Scalar>& samples,
                                         std::size_t sample_rate,
                                         const F0Contour& contour,
                                         const std::string& utterance_id,
                                         const ExtractConfig& cfg = {});

// One F0 value per line (Hz), one line per 5 ms frame; 0 marks unvoiced.
F0Contour read_f0_file(const std::filesystem::path& path);

// Feature cache ("EVCF"): little-endian; f32 feature blocks, f64 stats.
void write_feature_cache(const std::filesystem::path& path, const FeatureSet& features);
FeatureSet read_feature_cache(const std::filesystem::path& path,
                              const std::string& utterance_id);

// Windowed-sinc resampling to the target rate.
std::vector<Scalar> resample(const std::vector<Scalar>& samples, std::size_t rate_in,
                             std::size_t rate_out);

}  // namespace evc

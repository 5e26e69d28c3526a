#include "evc/synthesis.hpp"

#include <algorithm>
#include <cmath>

#include "evc/errors.hpp"
#include "evc/fft.hpp"
#include "evc/rng.hpp"

namespace evc {

std::vector<Scalar> minimum_phase_response(const std::vector<Scalar>& log_power,
                                           std::size_t fft_size, std::size_t ir_length) {
  std::size_t F = fft_size / 2 + 1;
  if (log_power.size() != F) {
    throw ShapeError("minimum_phase_response: expected " + std::to_string(F) + " bins");
  }
  // log amplitude, mirrored to the full spectrum
  std::vector<Scalar> re(fft_size, 0.0), im(fft_size, 0.0);
  for (std::size_t k = 0; k < F; ++k) {
    Scalar la = 0.5 * log_power[k];
    re[k] = la;
    if (k > 0 && k < F - 1) re[fft_size - k] = la;
  }
  fft_complex(re, im, true);  // real cepstrum
  // causal folding
  std::vector<Scalar> cre(fft_size, 0.0), cim(fft_size, 0.0);
  cre[0] = re[0];
  for (std::size_t q = 1; q < fft_size / 2; ++q) cre[q] = 2.0 * re[q];
  cre[fft_size / 2] = re[fft_size / 2];
  fft_complex(cre, cim, false);
  // exp of the complex log spectrum
  for (std::size_t k = 0; k < fft_size; ++k) {
    Scalar mag = std::exp(cre[k]);
    cre[k] = mag * std::cos(cim[k]);
    cim[k] = mag * std::sin(cim[k]);
  }
  fft_complex(cre, cim, true);
  ir_length = std::min(ir_length, fft_size);
  return std::vector<Scalar>(cre.begin(), cre.begin() + static_cast<std::ptrdiff_t>(ir_length));
}

std::vector<Scalar> synthesize(const FeatureSet& features, const SynthesisConfig& config) {
  std::size_t T = features.frames();
  if (features.envelope.frame_count != T || features.voicing.size() != T) {
    throw ContractError("synthesize: envelope/voicing frame counts do not match CWT (" +
                        std::to_string(features.envelope.frame_count) + "/" +
                        std::to_string(features.voicing.size()) + " vs " +
                        std::to_string(T) + ")");
  }
  if (T == 0) return {};
  std::size_t rate = config.sample_rate;
  auto hop = static_cast<std::size_t>(std::lround(kFrameShift * rate));
  std::size_t fft_size = features.envelope.fft_size;
  std::size_t F = features.envelope.bins();

  // per-frame F0 from the wavelet reconstruction
  std::vector<Scalar> recon = cwt_reconstruct(features.cwt);
  std::vector<Scalar> f0(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    if (features.voicing[t]) {
      f0[t] = std::exp(recon[t] * features.cwt.log_f0_std + features.cwt.log_f0_mean);
    }
  }

  // excitation: split impulses on the pulse train for voiced frames, white
  // noise for unvoiced
  std::size_t n = T * hop;
  std::vector<Scalar> excitation(n, 0.0);
  Rng rng(config.noise_seed);
  Scalar noise_std = 0.1;
  Scalar phase = 1.0;  // emit a pulse at the first voiced sample
  for (std::size_t t = 0; t < T; ++t) {
    if (!features.voicing[t]) {
      for (std::size_t j = 0; j < hop; ++j) {
        excitation[t * hop + j] = noise_std * rng.normal();
      }
      phase = 1.0;
      continue;
    }
    Scalar step = f0[t] / static_cast<Scalar>(rate);
    for (std::size_t j = 0; j < hop; ++j) {
      phase += step;
      if (phase >= 1.0) {
        phase -= 1.0;
        // fractional pulse position: linear split between two samples
        Scalar frac = phase / step;
        std::size_t idx = t * hop + j;
        excitation[idx] += 1.0 - frac;
        if (idx + 1 < n) excitation[idx + 1] += frac;
      }
    }
  }

  // frame-varying minimum-phase filtering with overlap-add of the tails
  std::vector<Scalar> out(n + config.ir_length, 0.0);
  std::vector<Scalar> row(F);
  for (std::size_t t = 0; t < T; ++t) {
    bool active = false;
    for (std::size_t j = 0; j < hop; ++j) {
      if (excitation[t * hop + j] != 0.0) {
        active = true;
        break;
      }
    }
    if (!active) continue;
    for (std::size_t k = 0; k < F; ++k) row[k] = features.envelope.frames[t * F + k];
    std::vector<Scalar> ir = minimum_phase_response(row, fft_size, config.ir_length);
    for (std::size_t j = 0; j < hop; ++j) {
      Scalar e = excitation[t * hop + j];
      if (e == 0.0) continue;
      std::size_t base = t * hop + j;
      for (std::size_t k = 0; k < ir.size() && base + k < out.size(); ++k) {
        out[base + k] += e * ir[k];
      }
    }
  }
  out.resize(n);

  Scalar peak = 0.0;
  for (Scalar v : out) peak = std::max(peak, std::fabs(v));
  if (peak > 0.0) {
    Scalar gain = config.peak / peak;
    for (Scalar& v : out) v *= gain;
  }
  for (Scalar v : out) {
    if (!std::isfinite(v)) throw NumericError("synthesize: non-finite sample");
  }
  return out;
}

RoundtripReport analysis_synthesis_roundtrip(const std::vector<Scalar>& samples,
                                             std::size_t sample_rate,
                                             const ExtractConfig& cfg) {
  RoundtripReport report;
  FeatureSet original;
  try {
    original = extract_features(samples, sample_rate, "roundtrip", cfg);
  } catch (const InputError&) {
    report.unvoiced_only = true;
    return report;
  }
  SynthesisConfig synth_cfg;
  std::vector<Scalar> rebuilt = synthesize(original, synth_cfg);
  FeatureSet again;
  try {
    again = extract_features(rebuilt, synth_cfg.sample_rate, "roundtrip2", cfg);
  } catch (const InputError&) {
    report.unvoiced_only = true;
    return report;
  }

  std::size_t T = std::min(original.frames(), again.frames());
  report.total_frames = T;
  // compare F0 where both analyses agree the frame is voiced
  std::vector<Scalar> rec_a = cwt_reconstruct(original.cwt);
  std::vector<Scalar> rec_b = cwt_reconstruct(again.cwt);
  Scalar f0_sq = 0.0;
  std::size_t voiced = 0;
  for (std::size_t t = 0; t < T; ++t) {
    if (!original.voicing[t] || !again.voicing[t]) continue;
    Scalar fa =
        std::exp(rec_a[t] * original.cwt.log_f0_std + original.cwt.log_f0_mean);
    Scalar fb = std::exp(rec_b[t] * again.cwt.log_f0_std + again.cwt.log_f0_mean);
    f0_sq += (fa - fb) * (fa - fb);
    ++voiced;
  }
  report.voiced_frames = voiced;
  if (voiced == 0) {
    report.unvoiced_only = true;
    return report;
  }
  report.f0_rmse_hz = std::sqrt(f0_sq / static_cast<Scalar>(voiced));

  std::size_t F = original.envelope.bins();
  Scalar env_sq = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < F; ++k) {
      Scalar d = original.envelope.at(t, k) - again.envelope.at(t, k);
      env_sq += d * d;
    }
  }
  report.log_envelope_rmse = std::sqrt(env_sq / static_cast<Scalar>(T * F));
  return report;
}

}  // namespace evc

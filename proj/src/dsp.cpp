#include "evc/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "evc/errors.hpp"
#include "evc/fft.hpp"
#include "evc/log.hpp"

namespace evc {

namespace {

constexpr Scalar kPi = 3.14159265358979323846;

// mirror reflection with period 2T-2 (no edge duplication)
std::size_t reflect_index(std::ptrdiff_t m, std::size_t T) {
  if (T == 1) return 0;
  std::ptrdiff_t p = 2 * static_cast<std::ptrdiff_t>(T) - 2;
  m %= p;
  if (m < 0) m += p;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(T) ? m : p - m);
}

}  // namespace

// --- pitch tracking ----------------------------------------------------------

namespace {

// zero-phase low-pass (two passes of a one-pole filter); keeps the first few
// harmonics so the autocorrelation peaks at the pitch period rather than at
// formant lags
std::vector<Scalar> lowpass_for_tracking(const std::vector<Scalar>& x,
                                         std::size_t sample_rate, Scalar cutoff_hz) {
  Scalar a = std::exp(-2.0 * kPi * cutoff_hz / static_cast<Scalar>(sample_rate));
  std::vector<Scalar> y(x.size());
  Scalar state = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    state = (1.0 - a) * x[i] + a * state;
    y[i] = state;
  }
  state = 0.0;
  for (std::size_t i = x.size(); i-- > 0;) {
    state = (1.0 - a) * y[i] + a * state;
    y[i] = state;
  }
  return y;
}

}  // namespace

F0Contour track_f0(const std::vector<Scalar>& samples, std::size_t sample_rate,
                   const F0TrackerConfig& cfg) {
  switch (sample_rate) {
    case 16000:
    case 22050:
    case 44100:
    case 48000:
      break;
    default:
      throw InputError("track_f0: unsupported sample rate " + std::to_string(sample_rate));
  }
  std::size_t hop = static_cast<std::size_t>(std::lround(kFrameShift * sample_rate));
  std::size_t window = static_cast<std::size_t>(std::lround(2.0 / cfg.f0_min * sample_rate));
  if (samples.size() < window) {
    throw InputError("track_f0: signal too short (" + std::to_string(samples.size()) +
                     " samples, need at least " + std::to_string(window) + ")");
  }
  std::vector<Scalar> filtered = lowpass_for_tracking(samples, sample_rate, 900.0);
  std::size_t frames = samples.size() / hop;
  std::size_t lag_min = static_cast<std::size_t>(std::floor(sample_rate / cfg.f0_max));
  std::size_t lag_max = static_cast<std::size_t>(std::ceil(sample_rate / cfg.f0_min));
  lag_max = std::min(lag_max, window - 1);
  std::size_t corr_len = window - lag_max;

  Scalar global_energy = 0.0;
  for (Scalar s : filtered) global_energy += s * s;
  Scalar global_rms = std::sqrt(global_energy / static_cast<Scalar>(filtered.size()));
  Scalar gate = std::max(cfg.energy_gate_rel * global_rms, 1e-6);

  F0Contour out;
  out.values.assign(frames, 0.0);
  out.voicing.assign(frames, 0);
  std::vector<Scalar> frame(window), raw(window);
  std::vector<Scalar> r(lag_max + 1, 0.0);

  auto nacf_at = [corr_len](const std::vector<Scalar>& buf, std::size_t lag) {
    Scalar num = 0.0, e0 = 0.0, e1 = 0.0;
    const Scalar* a = buf.data();
    const Scalar* b = buf.data() + lag;
    for (std::size_t j = 0; j < corr_len; ++j) {
      num += a[j] * b[j];
      e0 += a[j] * a[j];
      e1 += b[j] * b[j];
    }
    Scalar denom = std::sqrt(e0 * e1);
    return denom > 1e-12 ? num / denom : 0.0;
  };

  for (std::size_t t = 0; t < frames; ++t) {
    std::ptrdiff_t center = static_cast<std::ptrdiff_t>(t * hop);
    std::ptrdiff_t start = center - static_cast<std::ptrdiff_t>(window / 2);
    // windows that hang past the signal produce edge-biased estimates
    if (start < 0 ||
        start + static_cast<std::ptrdiff_t>(window) >
            static_cast<std::ptrdiff_t>(filtered.size())) {
      continue;
    }
    for (std::size_t j = 0; j < window; ++j) {
      frame[j] = filtered[static_cast<std::size_t>(start) + j];
      raw[j] = samples[static_cast<std::size_t>(start) + j];
    }
    Scalar energy = 0.0;
    for (std::size_t j = 0; j < corr_len; ++j) energy += frame[j] * frame[j];
    Scalar rms = std::sqrt(energy / static_cast<Scalar>(corr_len));
    if (rms < gate) continue;

    // lag candidates from the low-passed frame (formant-robust)
    Scalar e0 = energy;
    Scalar best = 0.0;
    std::size_t best_lag = 0;
    for (std::size_t lag = lag_min; lag <= lag_max; ++lag) {
      Scalar num = 0.0, e1 = 0.0;
      const Scalar* a = frame.data();
      const Scalar* b = frame.data() + lag;
      for (std::size_t j = 0; j < corr_len; ++j) {
        num += a[j] * b[j];
        e1 += b[j] * b[j];
      }
      Scalar denom = std::sqrt(e0 * e1);
      r[lag] = denom > 1e-12 ? num / denom : 0.0;
      if (r[lag] > best) {
        best = r[lag];
        best_lag = lag;
      }
    }
    if (best_lag == 0) continue;

    // among local maxima within 1% of the global peak, take the smallest lag;
    // rejects subharmonic picks without promoting formant lags
    std::size_t lag = best_lag;
    for (std::size_t cand = lag_min + 1; cand + 1 <= lag_max; ++cand) {
      if (r[cand] >= 0.99 * best && r[cand] >= r[cand - 1] && r[cand] >= r[cand + 1]) {
        lag = cand;
        break;
      }
    }
    // the voicing verdict uses the unfiltered signal at the chosen lag, so
    // band-limited noise cannot masquerade as periodic
    if (std::max(nacf_at(raw, lag), nacf_at(raw, best_lag)) <
        cfg.periodicity_threshold) {
      continue;
    }
    // parabolic refinement around the peak
    Scalar refined = static_cast<Scalar>(lag);
    if (lag > lag_min && lag < lag_max) {
      Scalar ym = r[lag - 1], y0 = r[lag], yp = r[lag + 1];
      Scalar denom = ym - 2.0 * y0 + yp;
      if (std::fabs(denom) > 1e-12) {
        Scalar delta = 0.5 * (ym - yp) / denom;
        if (std::fabs(delta) <= 1.0) refined += delta;
      }
    }
    Scalar f0 = static_cast<Scalar>(sample_rate) / refined;
    f0 = std::min(std::max(f0, cfg.f0_min), cfg.f0_max);
    out.values[t] = f0;
    out.voicing[t] = 1;
  }
  return out;
}

// --- interpolation / normalization --------------------------------------------

NormalizedLogF0 interpolate_and_normalize(const F0Contour& contour) {
  std::size_t T = contour.frames();
  if (T == 0) throw InputError("interpolate_and_normalize: empty contour");
  std::vector<std::size_t> voiced;
  for (std::size_t t = 0; t < T; ++t) {
    if (contour.voicing[t]) voiced.push_back(t);
  }
  if (voiced.empty()) {
    throw InputError("interpolate_and_normalize: utterance has no voiced frames");
  }
  std::vector<Scalar> series(T, 0.0);
  for (std::size_t t : voiced) series[t] = std::log(contour.values[t]);
  // edge hold
  for (std::size_t t = 0; t < voiced.front(); ++t) series[t] = series[voiced.front()];
  for (std::size_t t = voiced.back() + 1; t < T; ++t) series[t] = series[voiced.back()];
  // linear interpolation across interior gaps
  for (std::size_t i = 0; i + 1 < voiced.size(); ++i) {
    std::size_t a = voiced[i], b = voiced[i + 1];
    for (std::size_t t = a + 1; t < b; ++t) {
      Scalar w = static_cast<Scalar>(t - a) / static_cast<Scalar>(b - a);
      series[t] = (1.0 - w) * series[a] + w * series[b];
    }
  }
  Scalar mean = 0.0;
  for (Scalar v : series) mean += v;
  mean /= static_cast<Scalar>(T);
  Scalar var = 0.0;
  for (Scalar v : series) var += (v - mean) * (v - mean);
  var /= static_cast<Scalar>(T);
  Scalar stddev = std::sqrt(var);
  if (stddev < 1e-10) stddev = 1.0;
  NormalizedLogF0 out;
  out.mean = mean;
  out.stddev = stddev;
  out.series.resize(T);
  for (std::size_t t = 0; t < T; ++t) out.series[t] = (series[t] - mean) / stddev;
  return out;
}

std::vector<Scalar> denormalize_log_f0(const std::vector<Scalar>& series, Scalar mean,
                                       Scalar stddev) {
  std::vector<Scalar> out(series.size());
  for (std::size_t t = 0; t < series.size(); ++t) out[t] = series[t] * stddev + mean;
  return out;
}

// --- continuous wavelet transform ---------------------------------------------

Scalar mexican_hat(Scalar u) {
  // L2-normalized: 2 / (sqrt(3) pi^(1/4)) (1 - u^2) exp(-u^2/2)
  constexpr Scalar norm = 0.86732507058407751;
  return norm * (1.0 - u * u) * std::exp(-0.5 * u * u);
}

namespace {
// Torrence & Compo reconstruction factor for the DOG(2) wavelet at one-octave
// spacing, and psi(0); together they fix the decomposition gain so that the
// weighted scale sum reproduces the input at approximately unity gain.
constexpr Scalar kCwtCdelta = 3.541;
constexpr Scalar kPsiZero = 0.86732507058407751;
constexpr Scalar kCwtSupport = 8.0;  // taps truncated at |u| <= 8
}  // namespace

std::array<Scalar, kNumCwtScales> cwt_scale_grid() {
  std::array<Scalar, kNumCwtScales> s{};
  for (std::size_t i = 1; i <= kNumCwtScales; ++i) {
    s[i - 1] = std::pow(2.0, static_cast<Scalar>(i + 1)) * kCwtTau0;
  }
  return s;
}

Scalar cwt_recon_weight(std::size_t i) {
  return std::pow(static_cast<Scalar>(i) + 2.5, -2.5);
}

Scalar cwt_scale_gain(std::size_t i) {
  Scalar tau = std::pow(2.0, static_cast<Scalar>(i + 1)) * kCwtTau0;
  return std::pow(static_cast<Scalar>(i) + 2.5, 2.5) * kFrameShift /
         (kCwtCdelta * kPsiZero * tau);
}

CwtScales cwt_decompose(const std::vector<Scalar>& series) {
  std::size_t T = series.size();
  if (T < 2) throw InputError("cwt_decompose: series too short");
  CwtScales out;
  out.frame_count = T;
  out.scales = cwt_scale_grid();
  out.coefficients.assign(kNumCwtScales * T, 0.0);
  Scalar largest_support = kCwtSupport * out.scales.back() / kFrameShift;
  if (static_cast<Scalar>(T) < largest_support) {
    static bool warned = false;
    if (!warned) {
      warned = true;
      log_warn("cwt_decompose: series of " + std::to_string(T) +
               " frames is shorter than the largest scale support; large scales use "
               "reflected padding (reported once)");
    }
  }
  for (std::size_t i = 1; i <= kNumCwtScales; ++i) {
    Scalar tau = out.scales[i - 1];
    Scalar gain = cwt_scale_gain(i);
    std::ptrdiff_t half =
        static_cast<std::ptrdiff_t>(std::ceil(kCwtSupport * tau / kFrameShift));
    std::vector<Scalar> taps(2 * half + 1);
    for (std::ptrdiff_t m = -half; m <= half; ++m) {
      taps[m + half] = mexican_hat(static_cast<Scalar>(m) * kFrameShift / tau);
    }
    Scalar* row = out.coefficients.data() + (i - 1) * T;
    for (std::size_t t = 0; t < T; ++t) {
      Scalar acc = 0.0;
      for (std::ptrdiff_t m = -half; m <= half; ++m) {
        acc += series[reflect_index(static_cast<std::ptrdiff_t>(t) + m, T)] *
               taps[m + half];
      }
      row[t] = gain * acc;
    }
  }
  return out;
}

std::vector<Scalar> cwt_reconstruct(const CwtScales& scales) {
  std::size_t T = scales.frame_count;
  if (scales.coefficients.size() != kNumCwtScales * T) {
    throw ShapeError("cwt_reconstruct: expected 10 x " + std::to_string(T) +
                     " coefficients, got " + std::to_string(scales.coefficients.size()));
  }
  std::vector<Scalar> out(T, 0.0);
  for (std::size_t i = 1; i <= kNumCwtScales; ++i) {
    Scalar w = cwt_recon_weight(i);
    const Scalar* row = scales.coefficients.data() + (i - 1) * T;
    for (std::size_t t = 0; t < T; ++t) out[t] += w * row[t];
  }
  return out;
}

// --- CheapTrick envelope -------------------------------------------------------

std::vector<Scalar> smooth_power_spectrum(const std::vector<Scalar>& power,
                                          Scalar bin_width_hz, Scalar width_hz) {
  std::size_t F = power.size();
  if (F < 2) throw InputError("smooth_power_spectrum: need at least two bins");
  if (width_hz <= 0.0 || bin_width_hz <= 0.0) {
    throw ContractError("smooth_power_spectrum: widths must be positive");
  }
  // Piecewise-constant extension, mirrored at DC and Nyquist.
  std::ptrdiff_t margin =
      static_cast<std::ptrdiff_t>(std::ceil(width_hz / (2.0 * bin_width_hz))) + 2;
  std::ptrdiff_t n_ext = static_cast<std::ptrdiff_t>(F) + 2 * margin;
  auto ext_value = [&](std::ptrdiff_t e) {
    return power[reflect_index(e - margin, F)];
  };
  // C0[j] = integral of P up to boundary j (boundaries at (e - margin - 0.5) df),
  // C1[j] = integral of C0 up to boundary j.
  std::vector<Scalar> c0(n_ext + 1, 0.0), c1(n_ext + 1, 0.0);
  for (std::ptrdiff_t j = 0; j < n_ext; ++j) {
    Scalar p = ext_value(j);
    c0[j + 1] = c0[j] + p * bin_width_hz;
    c1[j + 1] = c1[j] + c0[j] * bin_width_hz + 0.5 * p * bin_width_hz * bin_width_hz;
  }
  Scalar origin = (-static_cast<Scalar>(margin) - 0.5) * bin_width_hz;
  auto eval_c1 = [&](Scalar x) {
    Scalar rel = (x - origin) / bin_width_hz;
    std::ptrdiff_t j = static_cast<std::ptrdiff_t>(std::floor(rel));
    j = std::max<std::ptrdiff_t>(0, std::min(j, n_ext - 1));
    Scalar dx = x - (origin + static_cast<Scalar>(j) * bin_width_hz);
    Scalar p = ext_value(j);
    return c1[j] + c0[j] * dx + 0.5 * p * dx * dx;
  };
  Scalar h = 0.5 * width_hz;
  std::vector<Scalar> out(F);
  for (std::size_t k = 0; k < F; ++k) {
    Scalar a = (static_cast<Scalar>(k) - 0.5) * bin_width_hz;
    Scalar b = (static_cast<Scalar>(k) + 0.5) * bin_width_hz;
    Scalar integral = eval_c1(b + h) - eval_c1(a + h) - eval_c1(b - h) + eval_c1(a - h);
    out[k] = integral / (width_hz * bin_width_hz);
  }
  return out;
}

std::vector<Scalar> lifter_log_spectrum(const std::vector<Scalar>& log_power,
                                        std::size_t fft_size, std::size_t sample_rate,
                                        Scalar f0) {
  std::size_t F = fft_size / 2 + 1;
  if (log_power.size() != F) {
    throw ShapeError("lifter_log_spectrum: expected " + std::to_string(F) + " bins");
  }
  std::vector<Scalar> cre(fft_size, 0.0), cim(fft_size, 0.0);
  for (std::size_t k = 0; k < F; ++k) {
    cre[k] = log_power[k];
    if (k > 0 && k < F - 1) cre[fft_size - k] = log_power[k];
  }
  fft_complex(cre, cim, true);
  for (std::size_t q = 0; q < fft_size; ++q) {
    std::size_t qm = std::min(q, fft_size - q);
    Scalar tau = static_cast<Scalar>(qm) / static_cast<Scalar>(sample_rate);
    Scalar arg = kPi * f0 * tau;
    Scalar ls = arg < 1e-12 ? 1.0 : std::sin(arg) / arg;
    Scalar lq = 1.18 + 2.0 * (-0.09) * std::cos(2.0 * kPi * tau * f0);
    cre[q] *= ls * lq;
    cim[q] *= ls * lq;
  }
  fft_complex(cre, cim, false);
  return std::vector<Scalar>(cre.begin(), cre.begin() + static_cast<std::ptrdiff_t>(F));
}

namespace {

// Windowed 3-period segment -> smoothed, liftered log-power envelope row.
void cheaptrick_frame(const std::vector<Scalar>& samples, std::size_t sample_rate,
                      Scalar f0, std::ptrdiff_t center, std::size_t fft_size,
                      Scalar* out_row) {
  std::size_t F = fft_size / 2 + 1;
  Scalar period = static_cast<Scalar>(sample_rate) / f0;
  std::ptrdiff_t half = static_cast<std::ptrdiff_t>(std::lround(1.5 * period));
  std::size_t win_len = static_cast<std::size_t>(2 * half + 1);
  if (win_len > fft_size) {
    throw ContractError("cheaptrick: fft_size " + std::to_string(fft_size) +
                        " below 3-period window for F0 " + std::to_string(f0));
  }
  std::vector<Scalar> re(fft_size, 0.0), im(fft_size, 0.0);
  std::vector<Scalar> win(win_len);
  Scalar wsum = 0.0, wsq = 0.0;
  for (std::size_t j = 0; j < win_len; ++j) {
    win[j] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<Scalar>(j) /
                                  static_cast<Scalar>(win_len - 1));
    wsum += win[j];
    wsq += win[j] * win[j];
  }
  Scalar xw_sum = 0.0;
  for (std::size_t j = 0; j < win_len; ++j) {
    std::ptrdiff_t idx = center - half + static_cast<std::ptrdiff_t>(j);
    Scalar x = (idx >= 0 && idx < static_cast<std::ptrdiff_t>(samples.size()))
                   ? samples[static_cast<std::size_t>(idx)]
                   : 0.0;
    re[j] = x * win[j];
    xw_sum += re[j];
  }
  // remove windowed DC, then normalize window energy (power identity of the
  // 3-period Hann window)
  Scalar dc = xw_sum / wsum;
  Scalar inv_norm = 1.0 / std::sqrt(wsq);
  for (std::size_t j = 0; j < win_len; ++j) re[j] = (re[j] - dc * win[j]) * inv_norm;

  fft_complex(re, im, false);
  std::vector<Scalar> power(F);
  for (std::size_t k = 0; k < F; ++k) power[k] = re[k] * re[k] + im[k] * im[k];

  Scalar bin_width = static_cast<Scalar>(sample_rate) / static_cast<Scalar>(fft_size);
  std::vector<Scalar> smooth = smooth_power_spectrum(power, bin_width, 2.0 * f0 / 3.0);

  std::vector<Scalar> log_power(F);
  for (std::size_t k = 0; k < F; ++k) log_power[k] = std::log(std::max(smooth[k], 1e-30));
  std::vector<Scalar> env = lifter_log_spectrum(log_power, fft_size, sample_rate, f0);
  for (std::size_t k = 0; k < F; ++k) out_row[k] = env[k];
}

}  // namespace

SpectralEnvelope cheaptrick_envelope(const std::vector<Scalar>& samples,
                                     std::size_t sample_rate, const F0Contour& contour,
                                     std::size_t fft_size, Scalar default_f0) {
  if (!is_power_of_two(fft_size) || fft_size < 16) {
    throw ContractError("cheaptrick: fft_size must be a power of two >= 16");
  }
  std::size_t T = contour.frames();
  std::size_t hop = static_cast<std::size_t>(std::lround(kFrameShift * sample_rate));
  SpectralEnvelope env;
  env.frame_count = T;
  env.fft_size = fft_size;
  env.sample_rate = sample_rate;
  env.frames.assign(T * (fft_size / 2 + 1), 0.0);
  Scalar f0_floor = 4.0 * static_cast<Scalar>(sample_rate) / static_cast<Scalar>(fft_size);
  for (std::size_t t = 0; t < T; ++t) {
    Scalar f0;
    if (contour.voicing[t]) {
      f0 = contour.values[t];
      if (f0 <= 0.0) {
        throw ContractError("cheaptrick: voiced frame " + std::to_string(t) +
                            " carries F0 = 0");
      }
    } else {
      f0 = default_f0;
    }
    if (f0 < f0_floor) {
      throw ContractError("cheaptrick: F0 " + std::to_string(f0) + " below floor " +
                          std::to_string(f0_floor) + " for fft_size " +
                          std::to_string(fft_size));
    }
    cheaptrick_frame(samples, sample_rate, f0, static_cast<std::ptrdiff_t>(t * hop),
                     fft_size, env.frames.data() + t * env.bins());
  }
  return env;
}

// --- resampling -----------------------------------------------------------------

std::vector<Scalar> resample(const std::vector<Scalar>& samples, std::size_t rate_in,
                             std::size_t rate_out) {
  if (rate_in == rate_out) return samples;
  Scalar ratio = static_cast<Scalar>(rate_out) / static_cast<Scalar>(rate_in);
  std::size_t n_out = static_cast<std::size_t>(
      std::floor(static_cast<Scalar>(samples.size()) * ratio));
  Scalar cutoff = 0.45 * std::min<Scalar>(1.0, ratio);  // fraction of input rate
  constexpr int kHalfTaps = 24;
  std::vector<Scalar> out(n_out, 0.0);
  for (std::size_t n = 0; n < n_out; ++n) {
    Scalar t_in = static_cast<Scalar>(n) / ratio;
    std::ptrdiff_t m0 = static_cast<std::ptrdiff_t>(std::floor(t_in));
    Scalar acc = 0.0;
    for (std::ptrdiff_t m = m0 - kHalfTaps + 1; m <= m0 + kHalfTaps; ++m) {
      if (m < 0 || m >= static_cast<std::ptrdiff_t>(samples.size())) continue;
      Scalar d = t_in - static_cast<Scalar>(m);
      Scalar sinc_arg = 2.0 * cutoff * d;
      Scalar s = sinc_arg == 0.0 ? 1.0 : std::sin(kPi * sinc_arg) / (kPi * sinc_arg);
      Scalar w = 0.5 + 0.5 * std::cos(kPi * d / static_cast<Scalar>(kHalfTaps));
      acc += samples[static_cast<std::size_t>(m)] * 2.0 * cutoff * s * w;
    }
    out[n] = acc;
  }
  return out;
}

// --- composition -----------------------------------------------------------------

namespace {

std::vector<Scalar> ingest_to_target_rate(const std::vector<Scalar>& samples,
                                          std::size_t sample_rate) {
  if (sample_rate == kTargetSampleRate) return samples;
  switch (sample_rate) {
    case 22050:
    case 44100:
    case 48000:
      break;
    default:
      throw InputError("extract_features: unsupported sample rate " +
                       std::to_string(sample_rate));
  }
  return resample(samples, sample_rate, kTargetSampleRate);
}

}  // namespace

FeatureSet extract_features(const std::vector<Scalar>& samples, std::size_t sample_rate,
                            const std::string& utterance_id, const ExtractConfig& cfg) {
  std::vector<Scalar> pcm = ingest_to_target_rate(samples, sample_rate);
  F0Contour contour = track_f0(pcm, kTargetSampleRate, cfg.tracker);
  return extract_features_with_contour(pcm, kTargetSampleRate, contour, utterance_id,
                                       cfg);
}

FeatureSet extract_features_with_contour(const std::vector<Scalar>& samples,
                                         std::size_t sample_rate,
                                         const F0Contour& contour,
                                         const std::string& utterance_id,
                                         const ExtractConfig& cfg) {
  std::vector<Scalar> pcm = ingest_to_target_rate(samples, sample_rate);
  std::size_t hop = static_cast<std::size_t>(std::lround(kFrameShift * kTargetSampleRate));
  if (contour.frames() != pcm.size() / hop) {
    throw InputError("extract_features: contour has " + std::to_string(contour.frames()) +
                     " frames, audio spans " + std::to_string(pcm.size() / hop));
  }
  NormalizedLogF0 norm = interpolate_and_normalize(contour);
  CwtScales cwt = cwt_decompose(norm.series);
  cwt.log_f0_mean = norm.mean;
  cwt.log_f0_std = norm.stddev;
  // keep the envelope windowing inside the fft_size contract
  Scalar f0_floor =
      4.0 * static_cast<Scalar>(kTargetSampleRate) / static_cast<Scalar>(cfg.fft_size);
  F0Contour clamped = contour;
  for (std::size_t t = 0; t < clamped.frames(); ++t) {
    if (clamped.voicing[t]) {
      clamped.values[t] = std::max(clamped.values[t], f0_floor);
    }
  }
  SpectralEnvelope env =
      cheaptrick_envelope(pcm, kTargetSampleRate, clamped, cfg.fft_size);
  FeatureSet fs;
  fs.cwt = std::move(cwt);
  fs.envelope = std::move(env);
  fs.voicing = contour.voicing;
  fs.utterance_id = utterance_id;
  fs.duration_s = static_cast<Scalar>(contour.frames()) * kFrameShift;
  quantize_f32(fs.cwt.coefficients);
  quantize_f32(fs.envelope.frames);
  return fs;
}

F0Contour read_f0_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("f0 file: cannot open " + path.string());
  F0Contour contour;
  Scalar v;
  while (is >> v) {
    if (v < 0.0 || !std::isfinite(v)) {
      throw InputError("f0 file: invalid value in " + path.string());
    }
    contour.values.push_back(v);
    contour.voicing.push_back(v > 0.0 ? 1 : 0);
  }
  if (contour.values.empty()) throw InputError("f0 file: empty " + path.string());
  return contour;
}

// --- feature cache -----------------------------------------------------------------

namespace {

constexpr char kCacheMagic[4] = {'E', 'V', 'C', 'F'};
constexpr std::uint32_t kCacheVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("feature cache: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32_block(std::ostream& os, const std::vector<Scalar>& data) {
  for (Scalar v : data) {
    float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
  }
}

void get_f32_block(std::istream& is, std::vector<Scalar>& data) {
  for (Scalar& v : data) {
    std::uint32_t bits = get_u32(is);
    float f;
    std::memcpy(&f, &bits, 4);
    v = static_cast<Scalar>(f);
  }
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u32(os, static_cast<std::uint32_t>(bits & 0xffffffffULL));
  put_u32(os, static_cast<std::uint32_t>(bits >> 32));
}

double get_f64(std::istream& is) {
  std::uint64_t lo = get_u32(is);
  std::uint64_t hi = get_u32(is);
  std::uint64_t bits = lo | (hi << 32);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void write_feature_cache(const std::filesystem::path& path, const FeatureSet& features) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("feature cache: cannot open " + path.string() + " for writing");
  os.write(kCacheMagic, 4);
  put_u32(os, kCacheVersion);
  put_u32(os, static_cast<std::uint32_t>(features.envelope.sample_rate));
  put_u32(os, static_cast<std::uint32_t>(features.frames()));
  put_u32(os, static_cast<std::uint32_t>(features.envelope.fft_size));
  put_f32_block(os, features.cwt.coefficients);
  put_f32_block(os, features.envelope.frames);
  os.write(reinterpret_cast<const char*>(features.voicing.data()),
           static_cast<std::streamsize>(features.voicing.size()));
  put_f64(os, features.cwt.log_f0_mean);
  put_f64(os, features.cwt.log_f0_std);
  if (!os) throw IoError("feature cache: write failure for " + path.string());
}

FeatureSet read_feature_cache(const std::filesystem::path& path,
                              const std::string& utterance_id) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("feature cache: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCacheMagic, 4) != 0) {
    throw IoError("feature cache: bad magic in " + path.string());
  }
  std::uint32_t version = get_u32(is);
  if (version != kCacheVersion) {
    throw CompatError("feature cache: unsupported version " + std::to_string(version));
  }
  FeatureSet fs;
  fs.envelope.sample_rate = get_u32(is);
  std::size_t T = get_u32(is);
  fs.envelope.fft_size = get_u32(is);
  fs.cwt.frame_count = T;
  fs.cwt.scales = cwt_scale_grid();
  fs.cwt.coefficients.resize(kNumCwtScales * T);
  get_f32_block(is, fs.cwt.coefficients);
  fs.envelope.frame_count = T;
  fs.envelope.frames.resize(T * fs.envelope.bins());
  get_f32_block(is, fs.envelope.frames);
  fs.voicing.resize(T);
  is.read(reinterpret_cast<char*>(fs.voicing.data()), static_cast<std::streamsize>(T));
  if (!is) throw IoError("feature cache: truncated voicing block");
  fs.cwt.log_f0_mean = get_f64(is);
  fs.cwt.log_f0_std = get_f64(is);
  fs.utterance_id = utterance_id;
  fs.duration_s = static_cast<Scalar>(T) * kFrameShift;
  return fs;
}

}  // namespace evc

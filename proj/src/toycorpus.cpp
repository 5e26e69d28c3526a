#include "evc/toycorpus.hpp"

#include <cmath>
#include <fstream>

#include "evc/errors.hpp"
#include "evc/manifest.hpp"
#include "evc/wav.hpp"

namespace evc {

namespace {

constexpr Scalar kPi = 3.14159265358979323846;

// moving-average smoothing with symmetric edge clamping
std::vector<Scalar> smooth(const std::vector<Scalar>& x, std::size_t half) {
  std::vector<Scalar> out(x.size());
  auto n = static_cast<std::ptrdiff_t>(x.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    Scalar acc = 0.0;
    std::ptrdiff_t lo = i - static_cast<std::ptrdiff_t>(half);
    std::ptrdiff_t hi = i + static_cast<std::ptrdiff_t>(half);
    for (std::ptrdiff_t j = lo; j <= hi; ++j) {
      acc += x[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(j, 0, n - 1))];
    }
    out[static_cast<std::size_t>(i)] = acc / static_cast<Scalar>(2 * half + 1);
  }
  return out;
}

struct Resonator {
  Scalar a1, a2, gain;
  Scalar z1 = 0.0, z2 = 0.0;

  Resonator(Scalar freq, Scalar bandwidth, std::size_t rate) {
    Scalar r = std::exp(-kPi * bandwidth / static_cast<Scalar>(rate));
    Scalar theta = 2.0 * kPi * freq / static_cast<Scalar>(rate);
    a1 = 2.0 * r * std::cos(theta);
    a2 = -r * r;
    gain = 1.0 - r;
  }

  Scalar tick(Scalar x) {
    Scalar y = gain * x + a1 * z1 + a2 * z2;
    z2 = z1;
    z1 = y;
    return y;
  }
};

}  // namespace

std::vector<Scalar> toy_contour(char emotion, Scalar duration_s, std::size_t sample_rate,
                                Rng& rng) {
  auto n = static_cast<std::size_t>(duration_s * static_cast<Scalar>(sample_rate));
  std::vector<Scalar> logf0(n);
  Scalar fm = rng.uniform(1.6, 2.4);
  Scalar phase = rng.uniform(0.0, 2.0 * kPi);
  if (emotion == 'A') {
    Scalar base = rng.uniform(170.0, 182.0);
    Scalar amp = rng.uniform(0.15, 0.19);
    for (std::size_t i = 0; i < n; ++i) {
      Scalar t = static_cast<Scalar>(i) / static_cast<Scalar>(sample_rate);
      logf0[i] = std::log(base) +
                 amp * std::sqrt(2.0) * std::sin(2.0 * kPi * fm * t + phase);
    }
  } else {
    Scalar base = rng.uniform(242.0, 262.0);
    Scalar amp = rng.uniform(0.36, 0.46);
    Scalar duty = rng.uniform(0.56, 0.59);
    Scalar high = std::sqrt((1.0 - duty) / duty);
    Scalar low = -std::sqrt(duty / (1.0 - duty));
    Scalar threshold = std::cos(kPi * duty);
    std::vector<Scalar> wave(n);
    for (std::size_t i = 0; i < n; ++i) {
      Scalar t = static_cast<Scalar>(i) / static_cast<Scalar>(sample_rate);
      Scalar s = std::sin(2.0 * kPi * fm * t + phase);
      wave[i] = s > threshold ? high : low;
    }
    wave = smooth(wave, static_cast<std::size_t>(0.015 * static_cast<Scalar>(sample_rate)));
    for (std::size_t i = 0; i < n; ++i) logf0[i] = std::log(base) + amp * wave[i];
  }
  return logf0;
}

std::vector<Scalar> toy_vowel(const std::vector<Scalar>& log_f0_per_sample,
                              std::size_t sample_rate, Rng& rng) {
  std::size_t n = log_f0_per_sample.size();
  std::vector<Scalar> excitation(n, 0.0);
  Scalar phase = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    Scalar f0 = std::exp(log_f0_per_sample[i]);
    phase += f0 / static_cast<Scalar>(sample_rate);
    if (phase >= 1.0) {
      phase -= 1.0;
      excitation[i] = 1.0;
    }
  }
  Resonator f1(rng.uniform(600.0, 720.0), 90.0, sample_rate);
  Resonator f2(rng.uniform(1100.0, 1350.0), 120.0, sample_rate);
  Resonator f3(rng.uniform(2400.0, 2800.0), 170.0, sample_rate);
  std::vector<Scalar> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f3.tick(f2.tick(f1.tick(excitation[i])));
  }
  Scalar peak = 0.0;
  for (Scalar v : out) peak = std::max(peak, std::fabs(v));
  if (peak > 0.0) {
    for (Scalar& v : out) v *= 0.8 / peak;
  }
  for (Scalar& v : out) v += 1e-3 * rng.normal();
  // edge fades keep the file click-free
  auto fade = static_cast<std::size_t>(0.03 * static_cast<Scalar>(sample_rate));
  for (std::size_t i = 0; i < fade && i < n; ++i) {
    Scalar w = static_cast<Scalar>(i) / static_cast<Scalar>(fade);
    out[i] *= w;
    out[n - 1 - i] *= w;
  }
  return out;
}

std::filesystem::path make_toy_corpus(const std::filesystem::path& out_dir,
                                      std::size_t n_per_emotion, std::uint64_t seed) {
  if (n_per_emotion < 2) {
    throw InputError("make_toy_corpus: need at least 2 utterances per emotion");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("make_toy_corpus: cannot create " + out_dir.string());
  constexpr std::size_t kRate = 16000;
  Manifest manifest;
  for (char emotion : {'A', 'B'}) {
    for (std::size_t i = 0; i < n_per_emotion; ++i) {
      Rng rng(hash_combine(hash_combine(seed, std::string(1, emotion)), i));
      Scalar duration = rng.uniform(0.8, 2.5);
      std::vector<Scalar> contour = toy_contour(emotion, duration, kRate, rng);
      std::vector<Scalar> wav = toy_vowel(contour, kRate, rng);
      char name[32];
      std::snprintf(name, sizeof(name), "%c_%03zu", emotion, i);
      auto path = out_dir / (std::string(name) + ".wav");
      write_wav(path, wav, kRate);
      manifest.entries.push_back({name, std::string(1, emotion), path});
    }
  }
  auto manifest_path = out_dir / "manifest.tsv";
  write_manifest(manifest_path, manifest);
  return manifest_path;
}

}  // namespace evc

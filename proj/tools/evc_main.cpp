// evc: emotional voice conversion pipeline driver.
//
// Subcommands: make-toy-corpus, extract, train, convert, roundtrip-report.
// Exit codes: 0 success, 1 input error, 2 numeric failure during training.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "evc/config.hpp"
#include "evc/curriculum.hpp"
#include "evc/dsp.hpp"
#include "evc/errors.hpp"
#include "evc/log.hpp"
#include "evc/manifest.hpp"
#include "evc/runconfig.hpp"
#include "evc/synthesis.hpp"
#include "evc/toycorpus.hpp"
#include "evc/wav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void print_summary(const json& j) { std::cout << j.dump() << std::endl; }

std::uint64_t file_content_hash(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[4096];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
    if (!is) break;
  }
  return h;
}

int cmd_make_toy_corpus(const std::string& out_dir, std::size_t n, std::uint64_t seed) {
  fs::path manifest = evc::make_toy_corpus(out_dir, n, seed);
  print_summary({{"command", "make-toy-corpus"},
                 {"manifest", manifest.string()},
                 {"files", 2 * n},
                 {"seed", seed}});
  return 0;
}

// re-extraction is skipped when the source hash recorded in the cache index
// still matches
int cmd_extract(const std::string& manifest_path, const std::string& cache_dir,
                std::size_t fft_size, std::size_t jobs) {
  evc::Manifest manifest = evc::read_manifest(manifest_path);
  fs::create_directories(cache_dir);
  fs::path index_path = fs::path(cache_dir) / "cache_index.tsv";

  std::map<std::string, std::string> index;
  if (fs::exists(index_path)) {
    std::ifstream is(index_path);
    std::string id, hash;
    while (is >> id >> hash) index[id] = hash;
  }

  evc::ExtractConfig cfg;
  cfg.fft_size = fft_size;

  struct Item {
    evc::ManifestEntry entry;
    std::string hash;
    bool skipped = false;
    std::string error;
  };
  std::vector<Item> items;
  for (const auto& entry : manifest.entries) {
    Item item;
    item.entry = entry;
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx-%zu",
                  static_cast<unsigned long long>(file_content_hash(entry.audio_path)),
                  fft_size);
    item.hash = hex;
    auto cache_file = fs::path(cache_dir) / (entry.id + ".evcf");
    auto it = index.find(entry.id);
    item.skipped = it != index.end() && it->second == item.hash && fs::exists(cache_file);
    items.push_back(std::move(item));
  }

  auto worker = [&](Item& item) {
    if (item.skipped) return;
    try {
      evc::WavData wav = evc::read_wav(item.entry.audio_path);
      fs::path sidecar = item.entry.audio_path;
      sidecar += ".f0";
      evc::FeatureSet features =
          fs::exists(sidecar)
              ? evc::extract_features_with_contour(wav.samples, wav.sample_rate,
                                                   evc::read_f0_file(sidecar),
                                                   item.entry.id, cfg)
              : evc::extract_features(wav.samples, wav.sample_rate, item.entry.id, cfg);
      evc::write_feature_cache(fs::path(cache_dir) / (item.entry.id + ".evcf"), features);
    } catch (const std::exception& e) {
      item.error = e.what();
    }
  };

  jobs = std::max<std::size_t>(1, jobs);
  for (std::size_t base = 0; base < items.size(); base += jobs) {
    std::vector<std::future<void>> batch;
    for (std::size_t j = base; j < std::min(base + jobs, items.size()); ++j) {
      batch.push_back(std::async(std::launch::async, worker, std::ref(items[j])));
    }
    for (auto& f : batch) f.get();
  }

  json failed = json::array();
  std::size_t written = 0, skipped = 0;
  std::ofstream idx(index_path, std::ios::trunc);
  for (const auto& item : items) {
    if (!item.error.empty()) {
      failed.push_back({{"id", item.entry.id}, {"error", item.error}});
      continue;
    }
    idx << item.entry.id << "\t" << item.hash << "\n";
    item.skipped ? ++skipped : ++written;
  }
  print_summary({{"command", "extract"},
                 {"written", written},
                 {"skipped", skipped},
                 {"failed", failed}});
  return failed.empty() ? 0 : 1;
}

std::size_t envelope_bins_from_cache(const evc::TrainingRunConfig& cfg) {
  evc::Manifest manifest = evc::read_manifest(cfg.manifest_path);
  for (const auto& entry : manifest.entries) {
    auto cache_file = cfg.cache_dir / (entry.id + ".evcf");
    if (fs::exists(cache_file)) {
      return evc::read_feature_cache(cache_file, entry.id).envelope.bins();
    }
  }
  throw evc::InputError("train: no feature caches found in " + cfg.cache_dir.string() +
                        "; run 'evc extract' first");
}

int cmd_train(const evc::KeyValueConfig& merged) {
  evc::TrainingRunConfig cfg = evc::training_config_from_config(merged);
  cfg.hyper = evc::hyper_from_config(merged, envelope_bins_from_cache(cfg));
  fs::create_directories(cfg.run_dir);
  evc::resolved_training_config(cfg, merged).write(cfg.run_dir / "config.resolved");
  cfg.resume = merged.get_bool("resume", false);
  evc::TrainResult result = evc::train(cfg);
  print_summary({{"command", "train"},
                 {"run_dir", cfg.run_dir.string()},
                 {"epochs", result.epochs_run},
                 {"completed", result.completed},
                 {"final_checkpoint", result.final_checkpoint.string()},
                 {"first_epoch_l_cyc", result.first_epoch_cyc},
                 {"final_epoch_l_cyc", result.final_epoch_cyc}});
  return 0;
}

int cmd_convert(const std::string& checkpoint, const std::string& direction,
                const std::string& in_wav, const std::string& out_wav,
                std::string config_path) {
  if (config_path.empty()) {
    config_path = (fs::path(checkpoint).parent_path().parent_path() / "config.resolved")
                      .string();
  }
  evc::KeyValueConfig kv = evc::KeyValueConfig::from_file(config_path);
  evc::Variant variant = evc::parse_variant(kv.get_string("variant", "cl"));
  std::size_t fft_size = kv.get_size("fft_size", evc::kDefaultFftSize);
  evc::SuiteHyper hyper = evc::hyper_from_config(kv, fft_size / 2 + 1);
  evc::LoadedSuite loaded = evc::load_suite_checkpoint(checkpoint, hyper, variant);

  evc::WavData wav = evc::read_wav(in_wav);
  evc::ExtractConfig ecfg;
  ecfg.fft_size = fft_size;
  evc::FeatureSet features =
      evc::extract_features(wav.samples, wav.sample_rate, fs::path(in_wav).stem(), ecfg);
  evc::FeatureSet converted =
      evc::convert(loaded.suite, evc::parse_direction(direction), features);
  evc::SynthesisConfig scfg;
  scfg.noise_seed = kv.get_u64("seed", 0);
  std::vector<evc::Scalar> rendered = evc::synthesize(converted, scfg);
  evc::write_wav(out_wav, rendered, scfg.sample_rate);
  print_summary({{"command", "convert"},
                 {"direction", direction},
                 {"in", in_wav},
                 {"out", out_wav},
                 {"frames", converted.frames()},
                 {"duration_s", converted.duration_s}});
  return 0;
}

int cmd_roundtrip_report(const std::string& in_wav, std::size_t fft_size) {
  evc::WavData wav = evc::read_wav(in_wav);
  evc::ExtractConfig cfg;
  cfg.fft_size = fft_size;
  evc::RoundtripReport report =
      evc::analysis_synthesis_roundtrip(wav.samples, wav.sample_rate, cfg);
  print_summary({{"command", "roundtrip-report"},
                 {"in", in_wav},
                 {"unvoiced_only", report.unvoiced_only},
                 {"f0_rmse_hz", report.f0_rmse_hz},
                 {"log_envelope_rmse", report.log_envelope_rmse},
                 {"voiced_frames", report.voiced_frames},
                 {"total_frames", report.total_frames}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"emotional voice conversion pipeline"};
  app.require_subcommand(1);

  auto* toy = app.add_subcommand("make-toy-corpus", "generate the synthetic two-emotion corpus");
  std::string toy_out = "toy_corpus";
  std::size_t toy_n = 10;
  std::uint64_t toy_seed = 1;
  toy->add_option("--out", toy_out, "output directory");
  toy->add_option("--n-per-emotion", toy_n, "utterances per emotion");
  toy->add_option("--seed", toy_seed, "corpus seed");

  auto* extract = app.add_subcommand("extract", "extract feature caches for a manifest");
  std::string ex_manifest, ex_cache = "cache";
  std::size_t ex_fft = evc::kDefaultFftSize, ex_jobs = 2;
  extract->add_option("--manifest", ex_manifest, "manifest file")->required();
  extract->add_option("--cache-dir", ex_cache, "feature cache directory");
  extract->add_option("--fft-size", ex_fft, "envelope fft size (power of two)");
  extract->add_option("--jobs", ex_jobs, "parallel extraction workers");

  auto* train = app.add_subcommand("train", "run curriculum training");
  std::string tr_config;
  std::vector<std::string> tr_overrides;
  std::string tr_variant, tr_manifest, tr_cache, tr_run;
  std::uint64_t tr_seed = 0;
  bool tr_seed_set = false, tr_resume = false;
  train->add_option("--config", tr_config, "key = value configuration file");
  train->add_option("--set", tr_overrides, "extra key=value overrides")->expected(-1);
  train->add_option("--variant", tr_variant, "base|cl|all");
  train->add_option("--manifest", tr_manifest, "manifest file");
  train->add_option("--cache-dir", tr_cache, "feature cache directory");
  train->add_option("--run-dir", tr_run, "run output directory");
  train->add_option("--seed", tr_seed, "training seed")->each([&](const std::string&) {
    tr_seed_set = true;
  });
  train->add_flag("--resume", tr_resume, "resume from the last checkpoint in run-dir");

  auto* convert = app.add_subcommand("convert", "convert one utterance through a checkpoint");
  std::string cv_ckpt, cv_dir, cv_in, cv_out, cv_config;
  convert->add_option("--checkpoint", cv_ckpt, "checkpoint file")->required();
  convert->add_option("--direction", cv_dir, "a2b|b2a")->required();
  convert->add_option("--in", cv_in, "input WAV")->required();
  convert->add_option("--out", cv_out, "output WAV")->required();
  convert->add_option("--config", cv_config, "resolved run config (default: next to checkpoint)");

  auto* rt = app.add_subcommand("roundtrip-report", "analysis/synthesis fidelity report");
  std::string rt_in;
  std::size_t rt_fft = evc::kDefaultFftSize;
  rt->add_option("--in", rt_in, "input WAV")->required();
  rt->add_option("--fft-size", rt_fft, "envelope fft size");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*toy) return cmd_make_toy_corpus(toy_out, toy_n, toy_seed);
    if (*extract) return cmd_extract(ex_manifest, ex_cache, ex_fft, ex_jobs);
    if (*train) {
      evc::KeyValueConfig merged;
      if (!tr_config.empty()) merged = evc::KeyValueConfig::from_file(tr_config);
      for (const auto& kvpair : tr_overrides) {
        auto eq = kvpair.find('=');
        if (eq == std::string::npos) {
          throw evc::InputError("--set expects key=value, got '" + kvpair + "'");
        }
        merged.set(kvpair.substr(0, eq), kvpair.substr(eq + 1));
      }
      if (!tr_variant.empty()) merged.set("variant", tr_variant);
      if (!tr_manifest.empty()) merged.set("manifest", tr_manifest);
      if (!tr_cache.empty()) merged.set("cache_dir", tr_cache);
      if (!tr_run.empty()) merged.set("run_dir", tr_run);
      if (tr_seed_set) merged.set("seed", std::to_string(tr_seed));
      if (tr_resume) merged.set("resume", "true");
      return cmd_train(merged);
    }
    if (*convert) return cmd_convert(cv_ckpt, cv_dir, cv_in, cv_out, cv_config);
    if (*rt) return cmd_roundtrip_report(rt_in, rt_fft);
  } catch (const evc::NumericError& e) {
    evc::log_error(e.what());
    return 2;
  } catch (const std::exception& e) {
    evc::log_error(e.what());
    return 1;
  }
  return 1;
}

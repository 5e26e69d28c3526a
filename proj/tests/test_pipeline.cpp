#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "evc/config.hpp"
#include "evc/curriculum.hpp"
#include "evc/dsp.hpp"
#include "evc/errors.hpp"
#include "evc/manifest.hpp"
#include "evc/runconfig.hpp"
#include "evc/toycorpus.hpp"
#include "evc/wav.hpp"

using namespace evc;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "evc_pipeline" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(EVC_BIN) + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

struct ToyFixture {
  fs::path dir, corpus, cache;
  ToyFixture() {
    dir = fresh_dir("fixture");
    corpus = dir / "corpus";
    cache = dir / "cache";
    make_toy_corpus(corpus, 4, 7);
    std::string cmd = std::string(EVC_BIN) + " extract --manifest " +
                      (corpus / "manifest.tsv").string() + " --cache-dir " +
                      cache.string() + " --fft-size 512 >/dev/null 2>&1";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  }

  TrainingRunConfig tiny_config(const fs::path& run_dir, std::uint64_t seed) const {
    TrainingRunConfig cfg;
    cfg.variant = Variant::All;
    cfg.manifest_path = corpus / "manifest.tsv";
    cfg.cache_dir = cache;
    cfg.run_dir = run_dir;
    cfg.max_length_s = 1.0;
    cfg.epochs_per_block = 2;
    cfg.steps_per_epoch = 2;
    cfg.batch_size = 1;
    cfg.seed = seed;
    cfg.checkpoint_every = 1;
    cfg.base_lr = 3e-4;
    cfg.hyper.envelope_bins = 257;
    cfg.hyper.spec_gated_channels = 4;
    cfg.hyper.spec_gated_kernel = 3;
    cfg.hyper.spec_res_hidden = 4;
    cfg.hyper.spec_heads = 2;
    cfg.hyper.spec_dropout = 0.1;
    cfg.hyper.f0_gated_channels = 8;
    cfg.hyper.f0_gated_kernel = 5;
    cfg.hyper.f0_res_hidden = 8;
    cfg.hyper.spec_disc_channels = {2, 4, 8};
    cfg.hyper.f0_disc_channels = {2, 4, 8};
    cfg.hyper.spec_disc_stride_freq = 2;
    cfg.hyper.spec_init = InitKind::Normal02;
    cfg.hyper.f0_init = InitKind::FanIn;
    cfg.hyper.f0_cond = default_f0_conditioning();
    cfg.hyper.env_cond = default_envelope_conditioning();
    return cfg;
  }
};

}  // namespace

TEST_CASE("toy corpus: counts, determinism, prosody separation") {
  fs::path dir = fresh_dir("corpus_props");
  fs::path manifest_path = make_toy_corpus(dir / "c1", 4, 11);
  Manifest manifest = read_manifest(manifest_path);
  CHECK(manifest.entries.size() == 8);
  CHECK(manifest.with_label("A").size() == 4);
  CHECK(manifest.with_label("B").size() == 4);

  SUBCASE("same seed regenerates bit-identical files") {
    make_toy_corpus(dir / "c2", 4, 11);
    for (const auto& entry : manifest.entries) {
      auto other = dir / "c2" / entry.audio_path.filename();
      CHECK(slurp(entry.audio_path) == slurp(other));
    }
  }
  SUBCASE("corpus B mean voiced F0 exceeds corpus A by at least 40 Hz") {
    auto mean_f0 = [](const std::vector<ManifestEntry>& entries) {
      Scalar sum = 0.0;
      std::size_t count = 0;
      for (const auto& e : entries) {
        WavData wav = read_wav(e.audio_path);
        F0Contour c = track_f0(wav.samples, wav.sample_rate);
        for (std::size_t t = 0; t < c.frames(); ++t) {
          if (c.voicing[t]) {
            sum += c.values[t];
            ++count;
          }
        }
      }
      return sum / static_cast<Scalar>(count);
    };
    Scalar a = mean_f0(manifest.with_label("A"));
    Scalar b = mean_f0(manifest.with_label("B"));
    CHECK(b - a >= 40.0);
  }
  SUBCASE("fewer than two utterances per emotion is rejected") {
    CHECK_THROWS_AS(make_toy_corpus(dir / "bad", 1, 1), InputError);
  }
}

TEST_CASE("extract CLI: cache files, idempotence, corrupt input") {
  fs::path dir = fresh_dir("extract_cli");
  make_toy_corpus(dir / "corpus", 3, 5);
  std::string manifest = (dir / "corpus" / "manifest.tsv").string();
  std::string cache = (dir / "cache").string();

  REQUIRE(run_cli("extract --manifest " + manifest + " --cache-dir " + cache +
                  " --fft-size 512") == 0);
  std::size_t count = 0;
  for (auto& p : fs::directory_iterator(cache)) {
    count += p.path().extension() == ".evcf";
  }
  CHECK(count == 6);

  SUBCASE("re-run rewrites nothing") {
    std::map<std::string, fs::file_time_type> stamps;
    for (auto& p : fs::directory_iterator(cache)) {
      stamps[p.path().filename()] = fs::last_write_time(p.path());
    }
    REQUIRE(run_cli("extract --manifest " + manifest + " --cache-dir " + cache +
                    " --fft-size 512") == 0);
    for (auto& p : fs::directory_iterator(cache)) {
      if (p.path().extension() != ".evcf") continue;
      CHECK(fs::last_write_time(p.path()) == stamps[p.path().filename()]);
    }
  }
  SUBCASE("corrupted wav fails with exit 1") {
    std::ofstream(dir / "corpus" / "A_000.wav", std::ios::trunc) << "not a wav";
    fs::remove(dir / "cache" / "cache_index.tsv");
    CHECK(run_cli("extract --manifest " + manifest + " --cache-dir " + cache +
                  " --fft-size 512") == 1);
  }
}

TEST_CASE("training is deterministic and resumable") {
  ToyFixture fixture;

  SUBCASE("identical config and seed give bit-identical runs") {
    TrainResult r1 = train(fixture.tiny_config(fixture.dir / "run_a", 3));
    TrainResult r2 = train(fixture.tiny_config(fixture.dir / "run_b", 3));
    CHECK(r1.epochs_run == r2.epochs_run);
    CHECK(slurp(fixture.dir / "run_a" / "training_log.tsv") ==
          slurp(fixture.dir / "run_b" / "training_log.tsv"));
    CHECK(slurp(r1.final_checkpoint) == slurp(r2.final_checkpoint));
    TrainResult r3 = train(fixture.tiny_config(fixture.dir / "run_c", 4));
    CHECK(slurp(fixture.dir / "run_a" / "training_log.tsv") !=
          slurp(fixture.dir / "run_c" / "training_log.tsv"));
  }

  SUBCASE("interrupted run resumes with an identical trace") {
    TrainResult full = train(fixture.tiny_config(fixture.dir / "run_full", 9));
    auto paused_cfg = fixture.tiny_config(fixture.dir / "run_paused", 9);
    paused_cfg.stop_after_epochs = 2;
    TrainResult paused = train(paused_cfg);
    CHECK_FALSE(paused.completed);
    CHECK(paused.epochs_run == 2);
    auto resume_cfg = fixture.tiny_config(fixture.dir / "run_paused", 9);
    resume_cfg.resume = true;
    TrainResult resumed = train(resume_cfg);
    CHECK(resumed.completed);
    CHECK(resumed.epochs_run == full.epochs_run);
    CHECK(slurp(fixture.dir / "run_full" / "training_log.tsv") ==
          slurp(fixture.dir / "run_paused" / "training_log.tsv"));
    CHECK(slurp(full.final_checkpoint) == slurp(resumed.final_checkpoint));
  }

  SUBCASE("per-epoch schedule columns in the log match advance_epoch alone") {
    auto cfg = fixture.tiny_config(fixture.dir / "run_trace", 5);
    train(cfg);
    auto rows = schedule_trace(0.5, cfg.max_length_s, cfg.epochs_per_block, cfg.base_lr);
    std::ifstream log(fixture.dir / "run_trace" / "training_log.tsv");
    std::string line;
    std::getline(log, line);  // header
    std::size_t row_count = 0;
    while (std::getline(log, line)) {
      std::istringstream is(line);
      std::size_t epoch, step;
      Scalar cyc, idl, adv_a, adv_b, total, lr, alpha, beta, len;
      is >> epoch >> step >> cyc >> idl >> adv_a >> adv_b >> total >> lr >> alpha >>
          beta >> len;
      const ScheduleRow& expect = rows.at(epoch - 1);
      CHECK(lr == expect.lr);
      CHECK(alpha == expect.alpha);
      CHECK(beta == expect.beta);
      CHECK(len == expect.input_length_s);
      // the logged total obeys the weighted composition
      CHECK(std::fabs(total - (adv_a + adv_b + alpha * cyc + beta * idl)) < 1e-12);
      ++row_count;
    }
    CHECK(row_count == rows.size() * cfg.steps_per_epoch);
  }
}

TEST_CASE("external F0 sidecar bypasses the tracker") {
  fs::path dir = fresh_dir("sidecar");
  make_toy_corpus(dir / "corpus", 2, 3);
  // constant 180 Hz sidecar for one utterance
  WavData wav = read_wav(dir / "corpus" / "A_000.wav");
  std::size_t frames = wav.samples.size() / 80;
  {
    std::ofstream f0(dir / "corpus" / "A_000.wav.f0");
    for (std::size_t t = 0; t < frames; ++t) f0 << (t < 3 ? 0.0 : 180.0) << "\n";
  }
  REQUIRE(run_cli("extract --manifest " + (dir / "corpus" / "manifest.tsv").string() +
                  " --cache-dir " + (dir / "cache").string() + " --fft-size 512") == 0);
  FeatureSet fs_bypass = read_feature_cache(dir / "cache" / "A_000.evcf", "A_000");
  // the stored stats follow the sidecar, not the tracked vibrato contour
  CHECK(fs_bypass.cwt.log_f0_mean == doctest::Approx(std::log(180.0)).epsilon(1e-6));
  CHECK(fs_bypass.voicing[0] == 0);
  CHECK(fs_bypass.voicing[10] == 1);
}

TEST_CASE("missing caches point the user at extract") {
  ToyFixture fixture;
  auto cfg = fixture.tiny_config(fixture.dir / "run_nocache", 1);
  cfg.cache_dir = fixture.dir / "empty_cache";
  fs::create_directories(cfg.cache_dir);
  CHECK_THROWS_WITH_AS(train(cfg), doctest::Contains("extract"), InputError);
}

TEST_CASE("train CLI rejects unknown variants and honors exit codes") {
  ToyFixture fixture;
  fs::path conf = fixture.dir / "bad.conf";
  std::ofstream(conf) << "manifest = " << (fixture.corpus / "manifest.tsv").string()
                      << "\ncache_dir = " << fixture.cache.string()
                      << "\nrun_dir = " << (fixture.dir / "cli_run").string()
                      << "\nvariant = bogus\n";
  CHECK(run_cli("train --config " + conf.string()) == 1);
}

TEST_CASE("convert CLI produces a duration-preserving wav") {
  ToyFixture fixture;
  auto cfg = fixture.tiny_config(fixture.dir / "run_convert", 2);
  TrainResult result = train(cfg);
  // cmd_convert discovers the resolved config next to the checkpoint
  KeyValueConfig kv;
  kv.set("fft_size", "512");
  kv.set("spec_channels", "4");
  kv.set("spec_kernel", "3");
  kv.set("spec_hidden", "4");
  kv.set("spec_heads", "2");
  kv.set("spec_dropout", "0.1");
  kv.set("f0_channels", "8");
  kv.set("f0_kernel", "5");
  kv.set("f0_hidden", "8");
  kv.set("spec_disc_channels", "2,4,8");
  kv.set("f0_disc_channels", "2,4,8");
  kv.set("spec_disc_stride_freq", "2");
  kv.set("spec_init", "normal02");
  kv.set("f0_init", "fan_in");
  kv.set("variant", "all");
  kv.write(cfg.run_dir / "config.resolved");

  fs::path in_wav = fixture.corpus / "A_001.wav";
  fs::path out_wav = fixture.dir / "converted.wav";
  REQUIRE(run_cli("convert --checkpoint " + result.final_checkpoint.string() +
                  " --direction a2b --in " + in_wav.string() + " --out " +
                  out_wav.string()) == 0);
  WavData in = read_wav(in_wav);
  WavData out = read_wav(out_wav);
  std::size_t hop = 80;
  CHECK(out.samples.size() / hop == in.samples.size() / hop);

  SUBCASE("bad direction is a usage error") {
    CHECK(run_cli("convert --checkpoint " + result.final_checkpoint.string() +
                  " --direction up --in " + in_wav.string() + " --out " +
                  out_wav.string()) == 1);
  }
  SUBCASE("checkpoint/config mismatch is a compatibility error") {
    kv.set("f0_channels", "16");
    kv.write(cfg.run_dir / "config.resolved");
    CHECK(run_cli("convert --checkpoint " + result.final_checkpoint.string() +
                  " --direction a2b --in " + in_wav.string() + " --out " +
                  out_wav.string()) == 1);
  }
}

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "evc/curriculum.hpp"
#include "evc/dsp.hpp"
#include "evc/errors.hpp"
#include "oracles.hpp"

using namespace evc;

namespace {

// Independent closed-form derivation of the schedule: for block b (1-based)
// and epoch e (1-based), beta drops after 65% of the block and each
// qualifying epoch decays lr by 5e-8, cumulatively across blocks.
struct GoldenRow {
  Scalar lr, alpha, beta, len;
};

GoldenRow golden(std::size_t block, std::size_t epoch, std::size_t epochs_per_block,
                 Scalar base_lr, Scalar start_len, Scalar max_len) {
  std::size_t decay_per_block = 0;
  for (std::size_t e = 1; e <= epochs_per_block; ++e) {
    if (100 * e > 65 * epochs_per_block) ++decay_per_block;
  }
  std::uint64_t decays_before = (block - 1) * decay_per_block;
  std::uint64_t in_block =
      100 * epoch > 65 * epochs_per_block
          ? epoch - (epochs_per_block - decay_per_block)
          : 0;
  GoldenRow row;
  row.lr = base_lr - static_cast<Scalar>(decays_before + in_block) * 5e-8;
  row.alpha = 1.0;
  row.beta = in_block > 0 ? 0.5 : 1.0;
  row.len = std::min(start_len + 0.5 * static_cast<Scalar>(block - 1), max_len);
  return row;
}

FeatureSet synthetic_features(std::size_t T, Scalar fill, std::size_t bins = 9) {
  FeatureSet fs;
  fs.cwt.frame_count = T;
  fs.cwt.scales = cwt_scale_grid();
  fs.cwt.coefficients.assign(10 * T, fill);
  fs.cwt.log_f0_mean = 5.0;
  fs.cwt.log_f0_std = 0.1;
  fs.envelope.frame_count = T;
  fs.envelope.fft_size = (bins - 1) * 2;
  fs.envelope.sample_rate = 16000;
  fs.envelope.frames.assign(T * bins, fill);
  fs.voicing.assign(T, 1);
  fs.utterance_id = "synthetic";
  fs.duration_s = static_cast<Scalar>(T) * kFrameShift;
  return fs;
}

}  // namespace

TEST_CASE("curriculum initial state matches the training algorithm header") {
  CurriculumState st = make_curriculum_state(0.5, 2.0, 500, 2e-4);
  CHECK(st.lr == 2e-4);
  CHECK(st.input_length_s == 0.5);
  CHECK(st.alpha == 1.0);
  CHECK(st.beta == 1.0);
  CHECK(st.epoch_in_block == 1);
  CHECK(st.block_index == 1);
  CHECK_FALSE(st.finished);
}

TEST_CASE("schedule golden trace: 500-epoch blocks to 2.0 s") {
  auto rows = schedule_trace(0.5, 2.0, 500, 2e-4);
  REQUIRE(rows.size() == 4 * 500);  // four blocks
  for (const auto& row : rows) {
    std::size_t block = (row.epoch - 1) / 500 + 1;
    std::size_t e = (row.epoch - 1) % 500 + 1;
    GoldenRow expect = golden(block, e, 500, 2e-4, 0.5, 2.0);
    CAPTURE(row.epoch);
    CHECK(row.block == block);
    CHECK(row.lr == expect.lr);  // bit-exact closed form
    CHECK(row.alpha == expect.alpha);
    CHECK(row.beta == expect.beta);
    CHECK(row.input_length_s == expect.len);
  }
  // beta switches exactly at epoch 326 of each block
  for (std::size_t block = 0; block < 4; ++block) {
    CHECK(rows[block * 500 + 324].beta == 1.0);   // epoch 325
    CHECK(rows[block * 500 + 325].beta == 0.5);   // epoch 326
    CHECK(rows[block * 500 + 499].beta == 0.5);   // epoch 500
  }
  // lr after one full block: 2e-4 - 175 * 5e-8 (the 1.9125e-4 of the paper
  // arithmetic, up to one ulp of double representation)
  Scalar lr_after_block1 = rows[500].lr;  // first epoch of block 2
  CHECK(lr_after_block1 == 2e-4 - 175.0 * 5e-8);
  CHECK(lr_after_block1 == doctest::Approx(1.9125e-4).epsilon(1e-12));
  // lengths double-check
  CHECK(rows[0].input_length_s == 0.5);
  CHECK(rows[500].input_length_s == 1.0);
  CHECK(rows[1000].input_length_s == 1.5);
  CHECK(rows[1500].input_length_s == 2.0);
}

TEST_CASE("schedule invariants: lr never increases, length never decreases") {
  auto rows = schedule_trace(0.5, 2.0, 50, 2e-4);
  REQUIRE(rows.size() == 4 * 50);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].lr <= rows[i - 1].lr);
    CHECK(rows[i].input_length_s >= rows[i - 1].input_length_s);
    // beta changes only at the 65% boundary or a block boundary
    if (rows[i].beta != rows[i - 1].beta) {
      std::size_t e = (rows[i].epoch - 1) % 50 + 1;
      bool at_65 = (100 * e > 65 * 50) && (100 * (e - 1) <= 65 * 50);
      CHECK((e == 1 || at_65));
    }
  }
  // toy block: beta drops first at epoch 33 of 50
  CHECK(rows[31].beta == 1.0);
  CHECK(rows[32].beta == 0.5);
}

TEST_CASE("single-block schedule when starting at max length") {
  auto rows = schedule_trace(1.0, 1.0, 50, 2e-4);
  CHECK(rows.size() == 50);
  for (const auto& r : rows) CHECK(r.input_length_s == 1.0);
}

TEST_CASE("sample_segments crops on the 5 ms grid") {
  FeatureDataset ds;
  ds.domain_a = {synthetic_features(300, 1.0)};
  ds.domain_b = {synthetic_features(250, 2.0)};
  Rng rng(7);
  SegmentBatch batch = sample_segments(ds, 0.5, 1, rng);
  CHECK(batch.cwt_a.shape() == Shape{1, 10, 100});  // 0.5 s -> 100 frames
  CHECK(batch.env_a.shape() == Shape{1, 9, 100});
  CHECK(batch.cwt_b.shape() == Shape{1, 10, 100});

  SUBCASE("same seed gives the identical crop sequence") {
    Rng r1(42), r2(42);
    auto b1 = sample_segments(ds, 0.5, 2, r1);
    auto b2 = sample_segments(ds, 0.5, 2, r2);
    CHECK(b1.cwt_a.value() == b2.cwt_a.value());
    CHECK(b1.env_b.value() == b2.env_b.value());
  }
  SUBCASE("empty domain is a dataset error") {
    FeatureDataset bad;
    bad.domain_a = ds.domain_a;
    Rng r(1);
    CHECK_THROWS_AS(sample_segments(bad, 0.5, 1, r), InputError);
  }
}

TEST_CASE("crops never cross utterance boundaries (sentinel tagging)") {
  // every utterance is tagged with a distinct constant; any crop mixing two
  // utterances would contain two values
  FeatureDataset ds;
  for (int u = 0; u < 6; ++u) {
    ds.domain_a.push_back(synthetic_features(120 + 30 * u, 10.0 + u));
    ds.domain_b.push_back(synthetic_features(140 + 25 * u, 100.0 + u));
  }
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    SegmentBatch batch = sample_segments(ds, 0.5, 2, rng);
    for (const Tensor* t : {&batch.cwt_a, &batch.env_a, &batch.cwt_b, &batch.env_b}) {
      std::size_t per_item = t->numel() / t->shape()[0];
      for (std::size_t b = 0; b < t->shape()[0]; ++b) {
        Scalar first = t->value()[b * per_item];
        for (std::size_t i = 0; i < per_item; ++i) {
          REQUIRE(t->value()[b * per_item + i] == first);
        }
      }
    }
  }
}

TEST_CASE("short utterances are reflect-padded to the crop length") {
  FeatureDataset ds;
  ds.domain_a = {synthetic_features(40, 1.5)};  // shorter than 100 frames
  ds.domain_b = {synthetic_features(200, 2.5)};
  Rng rng(5);
  SegmentBatch batch = sample_segments(ds, 0.5, 1, rng);
  CHECK(batch.cwt_a.shape() == Shape{1, 10, 100});
  for (Scalar v : batch.cwt_a.value()) CHECK(v == 1.5);
}

TEST_CASE("crop_utterance reflects indices symmetrically") {
  FeatureSet fs = synthetic_features(5, 0.0, 3);
  for (std::size_t t = 0; t < 5; ++t) {
    fs.cwt.coefficients[t] = static_cast<Scalar>(t);  // row 0 tags frame index
  }
  auto [env, cwt] = crop_utterance(fs, 8, 0);
  // frames 0,1,2,3,4 then reflection 3,2,1
  std::vector<Scalar> expect = {0, 1, 2, 3, 4, 3, 2, 1};
  for (std::size_t j = 0; j < 8; ++j) CHECK(cwt[j] == expect[j]);
}

TEST_CASE("direction parsing") {
  CHECK(parse_direction("a2b") == Direction::A2B);
  CHECK(parse_direction("b2a") == Direction::B2A);
  CHECK_THROWS_AS(parse_direction("sideways"), InputError);
}

TEST_CASE("convert passes stats and voicing through and preserves frame count") {
  SuiteHyper hyper;
  hyper.envelope_bins = 9;
  hyper.spec_gated_channels = 6;
  hyper.spec_gated_kernel = 3;
  hyper.spec_res_hidden = 6;
  hyper.spec_heads = 2;
  hyper.spec_dropout = 0.0;
  hyper.f0_gated_channels = 6;
  hyper.f0_gated_kernel = 3;
  hyper.f0_res_hidden = 6;
  hyper.spec_disc_channels = {2, 4, 8};
  hyper.f0_disc_channels = {2, 4, 8};
  ModelSuite suite = build_model_suite(Variant::CL, hyper, 11);
  FeatureSet fs = synthetic_features(123, 0.3, 9);
  FeatureSet out = convert(suite, Direction::A2B, fs);
  CHECK(out.frames() == fs.frames());
  CHECK(out.envelope.frame_count == fs.envelope.frame_count);
  CHECK(out.cwt.log_f0_mean == fs.cwt.log_f0_mean);
  CHECK(out.cwt.log_f0_std == fs.cwt.log_f0_std);
  CHECK(out.voicing == fs.voicing);
  CHECK(out.utterance_id == fs.utterance_id);
}

TEST_CASE("identity-network conversion reproduces the features") {
  SuiteHyper hyper;
  hyper.envelope_bins = 9;
  hyper.spec_gated_channels = 9;
  hyper.spec_gated_kernel = 3;
  hyper.spec_res_hidden = 9;
  hyper.spec_heads = 3;
  hyper.spec_dropout = 0.0;
  hyper.f0_gated_channels = 10;
  hyper.f0_gated_kernel = 3;
  hyper.f0_res_hidden = 10;
  hyper.spec_disc_channels = {2, 4, 8};
  hyper.f0_disc_channels = {2, 4, 8};
  hyper.spec_gen_norm = NormKind::None;
  hyper.f0_gen_norm = NormKind::None;
  hyper.f0_cond = default_f0_conditioning();
  ModelSuite suite = build_model_suite(Variant::CL, hyper, 1);
  for (const char* prefix : {"spec.gab", "spec.gba"}) {
    ParamMap id_params = identity_generator_params(suite.spec_gen, prefix);
    for (auto& [name, tensor] : id_params) suite.params[name] = tensor;
  }
  for (const char* prefix : {"f0.gab", "f0.gba"}) {
    ParamMap id_params = identity_generator_params(suite.f0_gen, prefix);
    for (auto& [name, tensor] : id_params) suite.params[name] = tensor;
  }
  FeatureSet fs = synthetic_features(80, 0.0, 9);
  Rng rng(9);
  for (Scalar& v : fs.envelope.frames) v = rng.normal();
  for (Scalar& v : fs.cwt.coefficients) v = rng.normal();
  quantize_f32(fs.envelope.frames);
  quantize_f32(fs.cwt.coefficients);
  FeatureSet out = convert(suite, Direction::A2B, fs);
  for (std::size_t i = 0; i < fs.envelope.frames.size(); ++i) {
    CHECK(std::fabs(out.envelope.frames[i] - fs.envelope.frames[i]) < 1e-5);
  }
  for (std::size_t i = 0; i < fs.cwt.coefficients.size(); ++i) {
    CHECK(std::fabs(out.cwt.coefficients[i] - fs.cwt.coefficients[i]) < 1e-5);
  }
}

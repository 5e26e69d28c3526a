#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "evc/dsp.hpp"
#include "evc/losses.hpp"
#include "evc/models.hpp"
#include "evc/rng.hpp"
#include "evc/tensor.hpp"

namespace evc {

// Mutable schedule state; values describe the epoch currently being run.
struct CurriculumState {
  Scalar input_length_s = 0.5;
  Scalar max_length_s = 2.0;
  std::size_t epoch_in_block = 1;  // 1-based
  std::size_t epochs_per_block = 500;
  Scalar lr = 2e-4;
  Scalar alpha = 1.0;
  Scalar beta = 1.0;
  std::size_t block_index = 1;  // 1-based
  bool finished = false;

  // closed-form decay bookkeeping: lr = base_lr - decay_steps * lr_decay
  Scalar base_lr = 2e-4;
  Scalar lr_decay = 5e-8;
  std::uint64_t decay_steps = 0;
};

// Initial state; start_length_s is clamped to max_length_s.
CurriculumState make_curriculum_state(Scalar start_length_s, Scalar max_length_s,
                                      std::size_t epochs_per_block, Scalar base_lr,
                                      Scalar lr_decay = 5e-8);

// One schedule transition. Inside a block: the identity weight drops to 0.5
// and the learning rate decays once the (1-based) epoch index exceeds 65% of
// the block; at a block boundary the crop length grows by 0.5 s (clamped) and
// the weights reset. After the max-length block completes the state is final.
CurriculumState advance_epoch(const CurriculumState& state);

// Per-epoch (lr, alpha, beta, length) rows produced by iterating advance_epoch.
struct ScheduleRow {
  std::size_t epoch = 0;  // global, 1-based
  std::size_t block = 0;
  Scalar lr = 0.0;
  Scalar alpha = 0.0;
  Scalar beta = 0.0;
  Scalar input_length_s = 0.0;
};

std::vector<ScheduleRow> schedule_trace(Scalar start_length_s, Scalar max_length_s,
                                        std::size_t epochs_per_block, Scalar base_lr);

// --- segment sampling -------------------------------------------------------

struct FeatureDataset {
  std::vector<FeatureSet> domain_a;
  std::vector<FeatureSet> domain_b;
};

struct SegmentBatch {
  Tensor env_a, env_b;  // [B, F, T]
  Tensor cwt_a, cwt_b;  // [B, 10, T]
};

// Uniform random aligned crops of ceil(length/5ms) frames, each from one
// independently chosen utterance per domain; short utterances reflect-pad.
SegmentBatch sample_segments(const FeatureDataset& dataset, Scalar input_length_s,
                             std::size_t batch_size, Rng& rng);

// Aligned crop of one utterance (exposed for the sampling property tests).
std::pair<std::vector<Scalar>, std::vector<Scalar>> crop_utterance(
    const FeatureSet& features, std::size_t frames, std::size_t offset);

// --- training ----------------------------------------------------------------

struct TrainingRunConfig {
  Variant variant = Variant::CL;
  std::filesystem::path manifest_path;
  std::filesystem::path cache_dir;
  std::filesystem::path run_dir;
  std::string emotion_a = "A";
  std::string emotion_b = "B";
  Scalar max_length_s = 2.0;
  std::size_t epochs_per_block = 500;
  std::size_t steps_per_epoch = 0;  // 0: one pass over the smaller domain
  std::size_t batch_size = 1;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 25;
  Scalar base_lr = 2e-4;
  Scalar lr_decay = 5e-8;
  SuiteHyper hyper;
  std::size_t stop_after_epochs = 0;  // testing knob: pause the run early
  bool resume = false;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::size_t epochs_run = 0;
  Scalar first_epoch_cyc = 0.0;
  Scalar final_epoch_cyc = 0.0;
  bool completed = false;  // false when stop_after_epochs paused the run
};

// Full curriculum training per the schedule; deterministic given the config
// seed. Writes training_log.tsv, config-stamped checkpoints, and
// trainer_state.txt under run_dir.
TrainResult train(const TrainingRunConfig& config);

// --- conversion ----------------------------------------------------------------

enum class Direction { A2B, B2A };
Direction parse_direction(const std::string& s);

// Loads a checkpoint written by train() and rebuilds its suite; throws
// CompatError when the stored hash does not match the rebuilt architecture.
struct LoadedSuite {
  ModelSuite suite;
  std::map<std::string, AdamState> optimizer_state;
  std::size_t epoch = 0;
};
LoadedSuite load_suite_checkpoint(const std::filesystem::path& path,
                                  const SuiteHyper& hyper, Variant variant);

void save_suite_checkpoint(const std::filesystem::path& path, const ModelSuite& suite,
                           const std::map<std::string, AdamState>& optimizer_state,
                           std::size_t epoch);

// Envelope through the spectrogram generator, CWT scales through the F0
// generator; voicing and normalization stats pass through unchanged.
FeatureSet convert(const ModelSuite& suite, Direction direction,
                   const FeatureSet& features);

// Cached features for every manifest entry of one emotion, in manifest order.
std::vector<FeatureSet> load_cached_features(const std::filesystem::path& manifest_path,
                                             const std::filesystem::path& cache_dir,
                                             const std::string& label);

}  // namespace evc

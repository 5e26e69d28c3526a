#include "evc/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "evc/checkpoint.hpp"
#include "evc/config.hpp"
#include "evc/manifest.hpp"
#include "evc/errors.hpp"
#include "evc/log.hpp"

namespace evc {

namespace {

bool in_decay_zone(std::size_t epoch_1based, std::size_t epochs_per_block) {
  return 100 * epoch_1based > 65 * epochs_per_block;
}

void apply_decay_entry(CurriculumState& st) {
  if (in_decay_zone(st.epoch_in_block, st.epochs_per_block)) {
    st.beta = 0.5;
    st.decay_steps += 1;
    st.lr = std::max(0.0, st.base_lr - static_cast<Scalar>(st.decay_steps) * st.lr_decay);
  }
}

}  // namespace

CurriculumState make_curriculum_state(Scalar start_length_s, Scalar max_length_s,
                                      std::size_t epochs_per_block, Scalar base_lr,
                                      Scalar lr_decay) {
  if (epochs_per_block < 1) throw ConfigError("curriculum: epochs_per_block must be >= 1");
  if (max_length_s < 0.5) throw ConfigError("curriculum: max_length_s must be >= 0.5 s");
  CurriculumState st;
  st.input_length_s = std::min(start_length_s, max_length_s);
  st.max_length_s = max_length_s;
  st.epochs_per_block = epochs_per_block;
  st.base_lr = base_lr;
  st.lr = base_lr;
  st.lr_decay = lr_decay;
  apply_decay_entry(st);  // degenerate blocks can start inside the decay zone
  return st;
}

CurriculumState advance_epoch(const CurriculumState& state) {
  if (state.finished) return state;
  CurriculumState next = state;
  if (state.epoch_in_block < state.epochs_per_block) {
    next.epoch_in_block += 1;
    apply_decay_entry(next);
    return next;
  }
  // block boundary
  if (state.input_length_s >= state.max_length_s) {
    next.finished = true;
    return next;
  }
  next.input_length_s = std::min(state.input_length_s + 0.5, state.max_length_s);
  next.epoch_in_block = 1;
  next.block_index += 1;
  next.alpha = 1.0;
  next.beta = 1.0;
  apply_decay_entry(next);
  return next;
}

std::vector<ScheduleRow> schedule_trace(Scalar start_length_s, Scalar max_length_s,
                                        std::size_t epochs_per_block, Scalar base_lr) {
  std::vector<ScheduleRow> rows;
  CurriculumState st =
      make_curriculum_state(start_length_s, max_length_s, epochs_per_block, base_lr);
  std::size_t global = 0;
  while (true) {
    ++global;
    rows.push_back({global, st.block_index, st.lr, st.alpha, st.beta, st.input_length_s});
    CurriculumState next = advance_epoch(st);
    if (next.finished) break;
    st = next;
  }
  return rows;
}

// --- segment sampling ----------------------------------------------------------

namespace {

std::size_t reflect_frame(std::ptrdiff_t m, std::size_t T) {
  if (T == 1) return 0;
  std::ptrdiff_t p = 2 * static_cast<std::ptrdiff_t>(T) - 2;
  m %= p;
  if (m < 0) m += p;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(T) ? m : p - m);
}

}  // namespace

std::pair<std::vector<Scalar>, std::vector<Scalar>> crop_utterance(
    const FeatureSet& features, std::size_t frames, std::size_t offset) {
  std::size_t T = features.frames();
  std::size_t F = features.envelope.bins();
  std::vector<Scalar> env(F * frames);   // [F, frames] channel-major
  std::vector<Scalar> cwt(10 * frames);  // [10, frames]
  for (std::size_t j = 0; j < frames; ++j) {
    std::size_t src =
        reflect_frame(static_cast<std::ptrdiff_t>(offset + j), T);
    for (std::size_t f = 0; f < F; ++f) {
      env[f * frames + j] = features.envelope.frames[src * F + f];
    }
    for (std::size_t s = 0; s < 10; ++s) {
      cwt[s * frames + j] = features.cwt.coefficients[s * T + src];
    }
  }
  return {std::move(env), std::move(cwt)};
}

SegmentBatch sample_segments(const FeatureDataset& dataset, Scalar input_length_s,
                             std::size_t batch_size, Rng& rng) {
  if (input_length_s < 0.5) {
    throw ContractError("sample_segments: input_length_s must be >= 0.5 s");
  }
  if (dataset.domain_a.empty() || dataset.domain_b.empty()) {
    throw InputError("sample_segments: empty feature domain");
  }
  if (batch_size < 1) throw ContractError("sample_segments: batch_size must be >= 1");
  auto frames = static_cast<std::size_t>(std::ceil(input_length_s / kFrameShift));
  std::size_t F = dataset.domain_a.front().envelope.bins();

  auto draw = [&](const std::vector<FeatureSet>& pool, std::vector<Scalar>& env_out,
                  std::vector<Scalar>& cwt_out, std::size_t item) {
    const FeatureSet& fs = pool[rng.uniform_index(pool.size())];
    std::size_t T = fs.frames();
    std::size_t offset =
        T > frames ? static_cast<std::size_t>(rng.uniform_index(T - frames + 1)) : 0;
    auto [env, cwt] = crop_utterance(fs, frames, offset);
    std::copy(env.begin(), env.end(), env_out.begin() + item * F * frames);
    std::copy(cwt.begin(), cwt.end(), cwt_out.begin() + item * 10 * frames);
  };

  std::vector<Scalar> env_a(batch_size * F * frames), env_b(batch_size * F * frames);
  std::vector<Scalar> cwt_a(batch_size * 10 * frames), cwt_b(batch_size * 10 * frames);
  for (std::size_t b = 0; b < batch_size; ++b) {
    draw(dataset.domain_a, env_a, cwt_a, b);
    draw(dataset.domain_b, env_b, cwt_b, b);
  }
  SegmentBatch out;
  out.env_a = Tensor::from({batch_size, F, frames}, std::move(env_a));
  out.env_b = Tensor::from({batch_size, F, frames}, std::move(env_b));
  out.cwt_a = Tensor::from({batch_size, 10, frames}, std::move(cwt_a));
  out.cwt_b = Tensor::from({batch_size, 10, frames}, std::move(cwt_b));
  return out;
}

// --- checkpoint plumbing ----------------------------------------------------------

namespace {

const std::vector<std::pair<std::string, std::vector<std::string>>> kOptimGroups = {
    {"spec_d", {"spec.da.", "spec.db."}},
    {"spec_g", {"spec.gab.", "spec.gba."}},
    {"f0_d", {"f0.da.", "f0.db."}},
    {"f0_g", {"f0.gab.", "f0.gba."}},
};

bool name_in_group(const std::string& name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) {
    if (name.rfind(p, 0) == 0) return true;
  }
  return false;
}

void zero_all_grads(ParamMap& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

// one optimizer step over the named group; other gradients are untouched
void adam_step_group(ParamMap& params, const std::vector<std::string>& prefixes,
                     const AdamConfig& cfg, AdamState& state) {
  state.step += 1;
  for (auto& [name, tensor] : params) {
    if (!name_in_group(name, prefixes) || !tensor.has_grad()) continue;
    adam_update(tensor.mutable_value(), tensor.grad(), cfg, state.m[name],
                state.v[name], state.step);
  }
}

}  // namespace

void save_suite_checkpoint(const std::filesystem::path& path, const ModelSuite& suite,
                           const std::map<std::string, AdamState>& optimizer_state,
                           std::size_t epoch) {
  CheckpointFile file;
  file.variant = variant_name(suite.variant);
  file.config_hash = suite_config_hash(suite);
  for (const auto& [name, tensor] : suite.params) {
    file.records.emplace_back(name, tensor);
  }
  for (const auto& [group, state] : optimizer_state) {
    for (const auto& [name, m] : state.m) {
      file.records.emplace_back(name + "/m", Tensor::from({m.size()}, m));
    }
    for (const auto& [name, v] : state.v) {
      file.records.emplace_back(name + "/v", Tensor::from({v.size()}, v));
    }
    file.records.emplace_back("opt." + group + ".step",
                              Tensor::from({1}, {static_cast<Scalar>(state.step)}));
  }
  file.records.emplace_back("meta.epoch",
                            Tensor::from({1}, {static_cast<Scalar>(epoch)}));
  write_checkpoint(path, file);
}

LoadedSuite load_suite_checkpoint(const std::filesystem::path& path,
                                  const SuiteHyper& hyper, Variant variant) {
  CheckpointFile file = read_checkpoint(path);
  if (file.variant != variant_name(variant)) {
    throw CompatError("checkpoint variant '" + file.variant +
                      "' does not match requested '" + variant_name(variant) + "'");
  }
  LoadedSuite out;
  out.suite = build_model_suite(variant, hyper, /*seed=*/0);
  std::string expect_hash = suite_config_hash(out.suite);
  if (file.config_hash != expect_hash) {
    throw CompatError("checkpoint config hash " + file.config_hash +
                      " does not match configured architecture " + expect_hash);
  }
  std::size_t restored = 0;
  for (auto& [name, tensor] : file.records) {
    if (name == "meta.epoch") {
      out.epoch = static_cast<std::size_t>(tensor.value()[0]);
      continue;
    }
    if (name.rfind("opt.", 0) == 0) {
      // opt.<group>.step
      std::string group = name.substr(4, name.size() - 4 - 5);
      out.optimizer_state[group].step = static_cast<std::uint64_t>(tensor.value()[0]);
      continue;
    }
    if (name.size() > 2 && name[name.size() - 2] == '/') {
      std::string base = name.substr(0, name.size() - 2);
      char kind = name.back();
      for (const auto& [group, prefixes] : kOptimGroups) {
        if (name_in_group(base, prefixes)) {
          auto& st = out.optimizer_state[group];
          (kind == 'm' ? st.m : st.v)[base] = tensor.value();
          break;
        }
      }
      continue;
    }
    auto it = out.suite.params.find(name);
    if (it == out.suite.params.end()) {
      throw CompatError("checkpoint carries unknown parameter '" + name + "'");
    }
    if (it->second.shape() != tensor.shape()) {
      throw CompatError("checkpoint parameter '" + name + "' has shape " +
                        shape_str(tensor.shape()) + ", expected " +
                        shape_str(it->second.shape()));
    }
    it->second.mutable_value() = tensor.value();
    ++restored;
  }
  if (restored != out.suite.params.size()) {
    throw CompatError("checkpoint restored " + std::to_string(restored) + " of " +
                      std::to_string(out.suite.params.size()) + " parameters");
  }
  return out;
}

// --- feature loading ----------------------------------------------------------------

std::vector<FeatureSet> load_cached_features(const std::filesystem::path& manifest_path,
                                             const std::filesystem::path& cache_dir,
                                             const std::string& label) {
  Manifest manifest = read_manifest(manifest_path);
  std::vector<FeatureSet> out;
  for (const auto& entry : manifest.with_label(label)) {
    auto cache_path = cache_dir / (entry.id + ".evcf");
    if (!std::filesystem::exists(cache_path)) {
      throw InputError("missing feature cache " + cache_path.string() +
                       "; run the extract command first");
    }
    out.push_back(read_feature_cache(cache_path, entry.id));
  }
  return out;
}

// --- training --------------------------------------------------------------------

namespace {

struct StreamBinders {
  ApplyFn gab, gba;
  DiscFn da, db;
};

StreamBinders bind_spec_stream(ModelSuite& suite, bool training) {
  StreamBinders s;
  s.gab = [&suite, training](Graph& g, const Tensor& x) {
    return generator_forward(g, suite.params, "spec.gab", suite.spec_gen, x, training);
  };
  s.gba = [&suite, training](Graph& g, const Tensor& x) {
    return generator_forward(g, suite.params, "spec.gba", suite.spec_gen, x, training);
  };
  s.da = [&suite](Graph& g, const Tensor& x) {
    Tensor img = reshape(g, x, {x.shape()[0], 1, x.shape()[1], x.shape()[2]});
    return discriminator_forward(g, suite.params, "spec.da", suite.spec_disc, img);
  };
  s.db = [&suite](Graph& g, const Tensor& x) {
    Tensor img = reshape(g, x, {x.shape()[0], 1, x.shape()[1], x.shape()[2]});
    return discriminator_forward(g, suite.params, "spec.db", suite.spec_disc, img);
  };
  return s;
}

StreamBinders bind_f0_stream(ModelSuite& suite, bool training) {
  StreamBinders s;
  s.gab = [&suite, training](Graph& g, const Tensor& x) {
    return generator_forward(g, suite.params, "f0.gab", suite.f0_gen, x, training);
  };
  s.gba = [&suite, training](Graph& g, const Tensor& x) {
    return generator_forward(g, suite.params, "f0.gba", suite.f0_gen, x, training);
  };
  s.da = [&suite](Graph& g, const Tensor& x) {
    return discriminator_forward(g, suite.params, "f0.da", suite.f0_disc, x);
  };
  s.db = [&suite](Graph& g, const Tensor& x) {
    return discriminator_forward(g, suite.params, "f0.db", suite.f0_disc, x);
  };
  return s;
}

// D update then G update on one stream; returns the step's loss bundle.
LossBundle train_stream_step(ModelSuite& suite, const StreamBinders& s,
                             const std::string& d_group, const std::string& g_group,
                             std::map<std::string, AdamState>& optim,
                             const Tensor& batch_a, const Tensor& batch_b,
                             const LossWeights& weights, const AdamConfig& adam_cfg,
                             std::uint64_t seed_d, std::uint64_t seed_g) {
  const auto& d_prefixes = [&d_group] {
    for (const auto& [g, p] : kOptimGroups) {
      if (g == d_group) return p;
    }
    throw ConfigError("unknown optimizer group");
  }();
  const auto& g_prefixes = [&g_group] {
    for (const auto& [g, p] : kOptimGroups) {
      if (g == g_group) return p;
    }
    throw ConfigError("unknown optimizer group");
  }();

  // discriminator phase: fakes detached
  Graph gd(seed_d);
  AdversarialLosses adv_d = adversarial_losses(gd, s.da, s.db, s.gab, s.gba, batch_a,
                                               batch_b, AdvMode::DiscriminatorOnly);
  gd.backward(adv_d.d_loss);
  adam_step_group(suite.params, d_prefixes, adam_cfg, optim[d_group]);
  zero_all_grads(suite.params);

  // generator phase; the fakes feed both the cycle path and the adversarial
  // term so each generator runs once per direction
  Graph gg(seed_g);
  Tensor fake_b = s.gab(gg, batch_a);
  Tensor fake_a = s.gba(gg, batch_b);
  Tensor cyc = add(gg, l1_distance(gg, s.gba(gg, fake_b), batch_a),
                   l1_distance(gg, s.gab(gg, fake_a), batch_b));
  Tensor idl = add(gg, l1_distance(gg, s.gba(gg, batch_a), batch_a),
                   l1_distance(gg, s.gab(gg, batch_b), batch_b));
  Tensor g_adv = add(gg, generator_fake_score_loss(gg, s.da(gg, fake_a)),
                     generator_fake_score_loss(gg, s.db(gg, fake_b)));
  Tensor g_total = weighted_generator_loss(gg, g_adv, cyc, idl, weights);
  gg.backward(g_total);
  adam_step_group(suite.params, g_prefixes, adam_cfg, optim[g_group]);
  zero_all_grads(suite.params);

  return total_loss(cyc.item(), idl.item(), adv_d.l_adv_a, adv_d.l_adv_b, weights);
}

std::string format_log_row(std::size_t epoch, std::size_t step, const LossBundle& b,
                           const CurriculumState& st) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%zu\t%zu\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g",
                epoch, step, b.l_cyc, b.l_id, b.l_adv_a, b.l_adv_b, b.total, st.lr,
                st.alpha, st.beta, st.input_length_s);
  return std::string(buf);
}

constexpr const char* kLogHeader =
    "epoch\tstep\tl_cyc\tl_id\tl_adv_A\tl_adv_B\ttotal\tlr\talpha\tbeta\tinput_length_s";

void truncate_log(const std::filesystem::path& log_path, std::size_t keep_epoch) {
  if (!std::filesystem::exists(log_path)) return;
  std::ifstream is(log_path);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == 'e') {  // header
      keep.push_back(line);
      continue;
    }
    std::size_t epoch = std::stoull(line.substr(0, line.find('\t')));
    if (epoch <= keep_epoch) keep.push_back(line);
  }
  is.close();
  std::ofstream os(log_path, std::ios::trunc);
  for (const auto& l : keep) os << l << "\n";
}

void write_trainer_state(const std::filesystem::path& run_dir, std::size_t epoch,
                         bool completed) {
  std::ofstream os(run_dir / "trainer_state.txt", std::ios::trunc);
  os << "epoch = " << epoch << "\n";
  os << "completed = " << (completed ? 1 : 0) << "\n";
}

}  // namespace

TrainResult train(const TrainingRunConfig& config) {
  namespace fs = std::filesystem;
  fs::create_directories(config.run_dir);
  fs::create_directories(config.run_dir / "checkpoints");
  auto log_path = config.run_dir / "training_log.tsv";

  FeatureDataset dataset;
  dataset.domain_a =
      load_cached_features(config.manifest_path, config.cache_dir, config.emotion_a);
  dataset.domain_b =
      load_cached_features(config.manifest_path, config.cache_dir, config.emotion_b);
  if (dataset.domain_a.empty() || dataset.domain_b.empty()) {
    throw InputError("train: a domain has no cached utterances");
  }

  std::size_t steps_per_epoch = config.steps_per_epoch;
  if (steps_per_epoch == 0) {
    steps_per_epoch = std::max<std::size_t>(
        1, std::min(dataset.domain_a.size(), dataset.domain_b.size()) /
               std::max<std::size_t>(1, config.batch_size));
  }

  // base variant trains without curriculum: a single block at full length
  Scalar start_length =
      config.variant == Variant::Base ? config.max_length_s : 0.5;

  ModelSuite suite;
  std::map<std::string, AdamState> optim;
  std::size_t start_epoch = 1;  // global, 1-based
  CurriculumState state = make_curriculum_state(
      start_length, config.max_length_s, config.epochs_per_block, config.base_lr,
      config.lr_decay);

  if (config.resume) {
    auto state_path = config.run_dir / "trainer_state.txt";
    if (!fs::exists(state_path)) {
      throw InputError("train: --resume set but " + state_path.string() + " not found");
    }
    KeyValueConfig st = KeyValueConfig::from_file(state_path);
    std::size_t done_epoch = st.get_size("epoch", 0);
    auto ckpt = config.run_dir / "checkpoints" /
                ("epoch_" + std::to_string(done_epoch) + ".evck");
    LoadedSuite loaded = load_suite_checkpoint(ckpt, config.hyper, config.variant);
    suite = std::move(loaded.suite);
    optim = std::move(loaded.optimizer_state);
    for (std::size_t e = 1; e < done_epoch; ++e) state = advance_epoch(state);
    CurriculumState resumed = advance_epoch(state);
    if (resumed.finished) {
      TrainResult done;
      done.final_checkpoint = config.run_dir / "checkpoints" / "final.evck";
      done.epochs_run = done_epoch;
      done.completed = true;
      return done;
    }
    state = resumed;
    start_epoch = done_epoch + 1;
    truncate_log(log_path, done_epoch);
  } else {
    suite = build_model_suite(config.variant, config.hyper, config.seed);
    std::ofstream os(log_path, std::ios::trunc);
    os << kLogHeader << "\n";
  }

  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("train: cannot open " + log_path.string());

  StreamBinders spec = bind_spec_stream(suite, /*training=*/true);
  StreamBinders f0 = bind_f0_stream(suite, /*training=*/true);

  TrainResult result;
  std::size_t epoch = start_epoch;
  Scalar first_cyc_sum = 0.0;
  bool have_first = false;

  auto checkpoint_at = [&](std::size_t e) {
    auto path = config.run_dir / "checkpoints" / ("epoch_" + std::to_string(e) + ".evck");
    save_suite_checkpoint(path, suite, optim, e);
    write_trainer_state(config.run_dir, e, false);
    return path;
  };

  while (true) {
    Rng sample_rng(hash_combine(hash_combine(config.seed, "sample"), epoch));
    LossWeights weights{state.alpha, state.beta};
    AdamConfig adam_cfg;
    adam_cfg.lr = state.lr;
    adam_cfg.beta1 = 0.5;
    Scalar epoch_cyc = 0.0;

    for (std::size_t step = 1; step <= steps_per_epoch; ++step) {
      SegmentBatch batch =
          sample_segments(dataset, state.input_length_s, config.batch_size, sample_rng);
      std::uint64_t sd = hash_combine(hash_combine(hash_combine(config.seed, "spec_d"), epoch), step);
      std::uint64_t sg = hash_combine(hash_combine(hash_combine(config.seed, "spec_g"), epoch), step);
      std::uint64_t fd = hash_combine(hash_combine(hash_combine(config.seed, "f0_d"), epoch), step);
      std::uint64_t fg = hash_combine(hash_combine(hash_combine(config.seed, "f0_g"), epoch), step);
      LossBundle bundle;
      try {
        LossBundle spec_bundle =
            train_stream_step(suite, spec, "spec_d", "spec_g", optim, batch.env_a,
                              batch.env_b, weights, adam_cfg, sd, sg);
        LossBundle f0_bundle =
            train_stream_step(suite, f0, "f0_d", "f0_g", optim, batch.cwt_a,
                              batch.cwt_b, weights, adam_cfg, fd, fg);
        bundle = total_loss(spec_bundle.l_cyc + f0_bundle.l_cyc,
                            spec_bundle.l_id + f0_bundle.l_id,
                            spec_bundle.l_adv_a + f0_bundle.l_adv_a,
                            spec_bundle.l_adv_b + f0_bundle.l_adv_b, weights);
      } catch (const NumericError& e) {
        log.flush();
        std::ofstream abort_note(config.run_dir / "ABORT.txt", std::ios::trunc);
        abort_note << "aborted at epoch " << epoch << " step " << step << ": " << e.what()
                   << "\n";
        throw NumericError("training aborted at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step) +
                           " (last checkpoint retained): " + e.what());
      }
      log << format_log_row(epoch, step, bundle, state) << "\n";
      epoch_cyc += bundle.l_cyc;
    }
    log.flush();
    epoch_cyc /= static_cast<Scalar>(steps_per_epoch);
    if (!have_first) {
      result.first_epoch_cyc = epoch_cyc;
      have_first = true;
    }
    result.final_epoch_cyc = epoch_cyc;
    result.epochs_run = epoch;

    if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      checkpoint_at(epoch);
    }
    if (config.stop_after_epochs > 0 && epoch >= config.stop_after_epochs) {
      result.final_checkpoint = checkpoint_at(epoch);
      result.completed = false;
      return result;
    }

    CurriculumState next = advance_epoch(state);
    if (next.finished) break;
    state = next;
    ++epoch;
  }

  checkpoint_at(epoch);
  auto final_path = config.run_dir / "checkpoints" / "final.evck";
  save_suite_checkpoint(final_path, suite, optim, epoch);
  write_trainer_state(config.run_dir, epoch, true);
  result.final_checkpoint = final_path;
  result.completed = true;
  log_info("training complete after " + std::to_string(epoch) + " epochs");
  return result;
}

// --- conversion --------------------------------------------------------------------

Direction parse_direction(const std::string& s) {
  if (s == "a2b") return Direction::A2B;
  if (s == "b2a") return Direction::B2A;
  throw InputError("unknown direction '" + s + "' (expected a2b or b2a)");
}

FeatureSet convert(const ModelSuite& suite, Direction direction,
                   const FeatureSet& features) {
  std::size_t T = features.frames();
  std::size_t F = features.envelope.bins();
  const char* spec_prefix = direction == Direction::A2B ? "spec.gab" : "spec.gba";
  const char* f0_prefix = direction == Direction::A2B ? "f0.gab" : "f0.gba";

  // envelope rows T x F -> [1, F, T]
  std::vector<Scalar> env(F * T);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t f = 0; f < F; ++f) env[f * T + t] = features.envelope.frames[t * F + f];
  }
  Graph g_env(0);
  Tensor env_out =
      generator_forward(g_env, suite.params, spec_prefix, suite.spec_gen,
                        Tensor::from({1, F, T}, std::move(env)), /*training=*/false);

  Graph g_f0(0);
  Tensor cwt_out = generator_forward(g_f0, suite.params, f0_prefix, suite.f0_gen,
                                     Tensor::from({1, 10, T}, features.cwt.coefficients),
                                     /*training=*/false);

  FeatureSet out = features;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t f = 0; f < F; ++f) {
      out.envelope.frames[t * F + f] = env_out.value()[f * T + t];
    }
  }
  out.cwt.coefficients = cwt_out.value();
  quantize_f32(out.envelope.frames);
  quantize_f32(out.cwt.coefficients);
  return out;
}

}  // namespace evc

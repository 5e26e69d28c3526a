#include "evc/runconfig.hpp"

#include <cstdio>
#include <sstream>

#include "evc/errors.hpp"

namespace evc {

namespace {

std::vector<std::size_t> parse_channel_list(const std::string& csv) {
  std::vector<std::size_t> out;
  std::istringstream is(csv);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(std::stoull(item));
  if (out.size() != 3) {
    throw InputError("config: discriminator channels must list exactly 3 values: " + csv);
  }
  return out;
}

NormKind parse_norm(const std::string& s) {
  if (s == "instance") return NormKind::Instance;
  if (s == "none") return NormKind::None;
  throw InputError("config: unknown norm kind '" + s + "'");
}

InitKind parse_init(const std::string& s) {
  if (s == "normal02") return InitKind::Normal02;
  if (s == "fan_in") return InitKind::FanIn;
  throw InputError("config: unknown init kind '" + s + "'");
}

}  // namespace

SuiteHyper hyper_from_config(const KeyValueConfig& kv, std::size_t envelope_bins) {
  SuiteHyper h;
  h.envelope_bins = envelope_bins;
  h.spec_gated_channels = kv.get_size("spec_channels", h.spec_gated_channels);
  h.spec_gated_kernel = kv.get_size("spec_kernel", h.spec_gated_kernel);
  h.spec_res_hidden = kv.get_size("spec_hidden", h.spec_res_hidden);
  h.spec_heads = kv.get_size("spec_heads", h.spec_heads);
  h.spec_dropout = kv.get_double("spec_dropout", h.spec_dropout);
  h.f0_gated_channels = kv.get_size("f0_channels", h.f0_gated_channels);
  h.f0_gated_kernel = kv.get_size("f0_kernel", h.f0_gated_kernel);
  h.f0_res_hidden = kv.get_size("f0_hidden", h.f0_res_hidden);
  if (kv.has("spec_disc_channels")) {
    h.spec_disc_channels = parse_channel_list(kv.get_string("spec_disc_channels", ""));
  }
  if (kv.has("f0_disc_channels")) {
    h.f0_disc_channels = parse_channel_list(kv.get_string("f0_disc_channels", ""));
  }
  h.disc_kernel = kv.get_size("disc_kernel", h.disc_kernel);
  h.spec_disc_kernel = kv.get_size("spec_disc_kernel", h.spec_disc_kernel);
  h.spec_disc_stride_freq = kv.get_size("spec_disc_stride_freq", h.spec_disc_stride_freq);
  h.spec_gen_norm = parse_norm(kv.get_string("spec_gen_norm", kv.get_string("gen_norm", "instance")));
  h.f0_gen_norm = parse_norm(kv.get_string("f0_gen_norm", kv.get_string("gen_norm", "instance")));
  h.disc_norm = parse_norm(kv.get_string("disc_norm", "none"));
  h.spec_init = parse_init(kv.get_string("spec_init", kv.get_string("init", "normal02")));
  h.f0_init = parse_init(kv.get_string("f0_init", kv.get_string("init", "normal02")));
  if (kv.get_bool("f0_conditioning", true)) {
    h.f0_cond = default_f0_conditioning();
  }
  if (kv.get_bool("env_conditioning", true)) {
    h.env_cond = default_envelope_conditioning();
    h.env_cond.scale = {kv.get_double("env_cond_scale", h.env_cond.scale[0])};
    h.env_cond.shift = {kv.get_double("env_cond_shift", h.env_cond.shift[0])};
  }
  return h;
}

TrainingRunConfig training_config_from_config(const KeyValueConfig& kv) {
  TrainingRunConfig cfg;
  cfg.variant = parse_variant(kv.get_string("variant", "cl"));
  cfg.manifest_path = kv.get_string("manifest", "");
  cfg.cache_dir = kv.get_string("cache_dir", "");
  cfg.run_dir = kv.get_string("run_dir", "");
  cfg.emotion_a = kv.get_string("emotion_a", "A");
  cfg.emotion_b = kv.get_string("emotion_b", "B");
  cfg.max_length_s = kv.get_double("max_length_s", cfg.max_length_s);
  cfg.epochs_per_block = kv.get_size("epochs_per_block", cfg.epochs_per_block);
  cfg.steps_per_epoch = kv.get_size("steps_per_epoch", cfg.steps_per_epoch);
  cfg.batch_size = kv.get_size("batch_size", cfg.batch_size);
  cfg.seed = kv.get_u64("seed", cfg.seed);
  cfg.checkpoint_every = kv.get_size("checkpoint_every", cfg.checkpoint_every);
  cfg.base_lr = kv.get_double("base_lr", cfg.base_lr);
  cfg.lr_decay = kv.get_double("lr_decay", cfg.lr_decay);
  cfg.stop_after_epochs = kv.get_size("stop_after_epochs", 0);
  if (cfg.manifest_path.empty() || cfg.cache_dir.empty() || cfg.run_dir.empty()) {
    throw InputError("config: manifest, cache_dir, and run_dir are required");
  }
  return cfg;
}

KeyValueConfig resolved_training_config(const TrainingRunConfig& cfg,
                                        const KeyValueConfig& kv) {
  KeyValueConfig out = kv;
  out.set("variant", variant_name(cfg.variant));
  out.set("manifest", cfg.manifest_path.string());
  out.set("cache_dir", cfg.cache_dir.string());
  out.set("run_dir", cfg.run_dir.string());
  out.set("emotion_a", cfg.emotion_a);
  out.set("emotion_b", cfg.emotion_b);
  out.set("max_length_s", std::to_string(cfg.max_length_s));
  out.set("epochs_per_block", std::to_string(cfg.epochs_per_block));
  out.set("steps_per_epoch", std::to_string(cfg.steps_per_epoch));
  out.set("batch_size", std::to_string(cfg.batch_size));
  out.set("seed", std::to_string(cfg.seed));
  out.set("checkpoint_every", std::to_string(cfg.checkpoint_every));
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", cfg.base_lr);
  out.set("base_lr", buf);
  std::snprintf(buf, sizeof(buf), "%.17g", cfg.lr_decay);
  out.set("lr_decay", buf);
  return out;
}

}  // namespace evc

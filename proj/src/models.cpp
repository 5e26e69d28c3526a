#include "evc/models.hpp"

#include <cmath>
#include <sstream>

#include "evc/errors.hpp"

namespace evc {

namespace {

const Tensor& lookup(const ParamMap& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) {
    throw CompatError("models: missing parameter '" + name + "'");
  }
  return it->second;
}

Scalar init_std(InitKind kind, std::size_t fan_in) {
  if (kind == InitKind::Normal02) return 0.02;
  return std::sqrt(2.0 / static_cast<Scalar>(fan_in));
}

Tensor random_param(Rng& rng, Shape shape, Scalar stddev) {
  std::vector<Scalar> data(shape_numel(shape));
  for (Scalar& v : data) v = rng.normal(0.0, stddev);
  quantize_f32(data);
  return Tensor::param(std::move(shape), std::move(data));
}

Tensor zeros_param(Shape shape) {
  return Tensor::param(shape, std::vector<Scalar>(shape_numel(shape), 0.0));
}

Tensor const_param(Shape shape, Scalar v) {
  return Tensor::param(shape, std::vector<Scalar>(shape_numel(shape), v));
}

void add_conv1d_pair(ParamMap& out, Rng& rng, const std::string& name, std::size_t cout,
                     std::size_t cin, std::size_t k, InitKind init) {
  out[name + ".w"] = random_param(rng, {cout, cin, k}, init_std(init, cin * k));
  out[name + ".b"] = zeros_param({cout});
}

void add_conv2d_pair(ParamMap& out, Rng& rng, const std::string& name, std::size_t cout,
                     std::size_t cin, std::size_t k, InitKind init) {
  out[name + ".w"] = random_param(rng, {cout, cin, k, k}, init_std(init, cin * k * k));
  out[name + ".b"] = zeros_param({cout});
}

void add_norm_pair(ParamMap& out, const std::string& name, std::size_t c) {
  out[name + ".g"] = const_param({c}, 1.0);
  out[name + ".b"] = zeros_param({c});
}

void add_linear_pair(ParamMap& out, Rng& rng, const std::string& name, std::size_t rows,
                     std::size_t cols, InitKind init) {
  out[name + ".w"] = random_param(rng, {rows, cols}, init_std(init, rows));
  out[name + ".b"] = zeros_param({cols});
}

std::size_t gated_in_channels(const GeneratorConfig& cfg, std::size_t block) {
  return block == 0 ? cfg.in_channels : cfg.gated_channels;
}

std::size_t out_block_in_channels(const GeneratorConfig& cfg) {
  return cfg.res_repeat > 0 ? cfg.res_hidden : cfg.gated_channels;
}

}  // namespace

ParamMap init_generator_params(const GeneratorConfig& cfg, const std::string& prefix,
                               std::uint64_t seed) {
  if (cfg.in_channels == 0) throw ConfigError("generator: in_channels must be set");
  Rng rng(seed);
  ParamMap p;
  for (std::size_t i = 0; i < cfg.gated_repeat; ++i) {
    std::string base = prefix + ".blk" + std::to_string(i);
    std::size_t cin = gated_in_channels(cfg, i);
    add_conv1d_pair(p, rng, base + ".conv", cfg.gated_channels, cin, cfg.gated_kernel,
                    cfg.init);
    add_conv1d_pair(p, rng, base + ".gate", cfg.gated_channels, cin, cfg.gated_kernel,
                    cfg.init);
    if (cfg.norm == NormKind::Instance) add_norm_pair(p, base + ".norm", cfg.gated_channels);
  }
  if (cfg.res_repeat > 0) {
    add_conv1d_pair(p, rng, prefix + ".adapt", cfg.res_hidden, cfg.gated_channels, 1,
                    cfg.init);
    for (std::size_t j = 0; j < cfg.res_repeat; ++j) {
      std::string base = prefix + ".res" + std::to_string(j);
      add_conv1d_pair(p, rng, base + ".conv", cfg.res_hidden, cfg.res_hidden,
                      cfg.res_kernel, cfg.init);
      if (cfg.use_transformer) {
        std::size_t H = cfg.res_hidden;
        add_linear_pair(p, rng, base + ".attn.q", H, H, cfg.init);
        add_linear_pair(p, rng, base + ".attn.k", H, H, cfg.init);
        add_linear_pair(p, rng, base + ".attn.v", H, H, cfg.init);
        add_linear_pair(p, rng, base + ".attn.o", H, H, cfg.init);
        add_linear_pair(p, rng, base + ".ffn.l1", H, 2 * H, cfg.init);
        add_linear_pair(p, rng, base + ".ffn.l2", 2 * H, H, cfg.init);
      }
    }
  }
  std::string out_base = prefix + ".out";
  add_conv1d_pair(p, rng, out_base + ".conv", cfg.gated_channels,
                  out_block_in_channels(cfg), cfg.gated_kernel, cfg.init);
  add_conv1d_pair(p, rng, out_base + ".gate", cfg.gated_channels,
                  out_block_in_channels(cfg), cfg.gated_kernel, cfg.init);
  if (cfg.norm == NormKind::Instance) add_norm_pair(p, out_base + ".norm", cfg.gated_channels);
  add_conv1d_pair(p, rng, prefix + ".post", cfg.in_channels, cfg.gated_channels,
                  cfg.post_kernel, cfg.init);
  return p;
}

ParamMap init_discriminator_params(const DiscriminatorConfig& cfg,
                                   const std::string& prefix, std::uint64_t seed) {
  if (cfg.in_channels == 0) throw ConfigError("discriminator: in_channels must be set");
  if (cfg.channels.size() != 3) {
    throw ConfigError("discriminator: exactly three conv blocks are required");
  }
  Rng rng(seed);
  ParamMap p;
  std::size_t cin = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    std::string base = prefix + ".blk" + std::to_string(i);
    if (cfg.two_d) {
      add_conv2d_pair(p, rng, base + ".conv", cfg.channels[i], cin, cfg.kernel, cfg.init);
      add_conv2d_pair(p, rng, base + ".gate", cfg.channels[i], cin, cfg.kernel, cfg.init);
    } else {
      add_conv1d_pair(p, rng, base + ".conv", cfg.channels[i], cin, cfg.kernel, cfg.init);
      add_conv1d_pair(p, rng, base + ".gate", cfg.channels[i], cin, cfg.kernel, cfg.init);
    }
    if (cfg.norm == NormKind::Instance) add_norm_pair(p, base + ".norm", cfg.channels[i]);
    cin = cfg.channels[i];
  }
  add_linear_pair(p, rng, prefix + ".head", cin, 1, cfg.init);
  if (cfg.fine_grained) {
    add_conv1d_pair(p, rng, prefix + ".fine", 1, cin, 1, cfg.init);
  }
  return p;
}

ParamMap identity_generator_params(const GeneratorConfig& cfg, const std::string& prefix) {
  if (cfg.norm != NormKind::None) {
    throw ContractError("identity generator: requires norm == None");
  }
  if (cfg.gated_channels < cfg.in_channels ||
      (cfg.res_repeat > 0 && cfg.res_hidden != cfg.gated_channels)) {
    throw ContractError(
        "identity generator: requires gated_channels == res_hidden >= in_channels");
  }
  ParamMap p = init_generator_params(cfg, prefix, 0);
  auto delta_kernel = [](Tensor& w) {
    const Shape& s = w.shape();  // [cout, cin, k]
    std::vector<Scalar>& v = w.mutable_value();
    std::fill(v.begin(), v.end(), 0.0);
    std::size_t center = (s[2] - 1) / 2;
    for (std::size_t c = 0; c < std::min(s[0], s[1]); ++c) {
      v[(c * s[1] + c) * s[2] + center] = 1.0;
    }
  };
  auto zero = [&p](const std::string& name) {
    std::vector<Scalar>& v = p[name].mutable_value();
    std::fill(v.begin(), v.end(), 0.0);
  };
  auto saturate = [&p](const std::string& name) {
    std::vector<Scalar>& v = p[name].mutable_value();
    std::fill(v.begin(), v.end(), 60.0);
  };
  for (std::size_t i = 0; i < cfg.gated_repeat; ++i) {
    std::string base = prefix + ".blk" + std::to_string(i);
    delta_kernel(p[base + ".conv.w"]);
    zero(base + ".conv.b");
    zero(base + ".gate.w");
    saturate(base + ".gate.b");
  }
  if (cfg.res_repeat > 0) {
    delta_kernel(p[prefix + ".adapt.w"]);
    zero(prefix + ".adapt.b");
    for (std::size_t j = 0; j < cfg.res_repeat; ++j) {
      std::string base = prefix + ".res" + std::to_string(j);
      zero(base + ".conv.w");
      zero(base + ".conv.b");
      if (cfg.use_transformer) {
        for (const char* n : {".attn.q", ".attn.k", ".attn.v", ".attn.o", ".ffn.l1",
                              ".ffn.l2"}) {
          zero(base + n + std::string(".w"));
          zero(base + n + std::string(".b"));
        }
      }
    }
  }
  delta_kernel(p[prefix + ".out.conv.w"]);
  zero(prefix + ".out.conv.b");
  zero(prefix + ".out.gate.w");
  saturate(prefix + ".out.gate.b");
  delta_kernel(p[prefix + ".post.w"]);
  zero(prefix + ".post.b");
  return p;
}

namespace {

Tensor gated_block(Graph& g, const ParamMap& params, const std::string& base,
                   const GeneratorConfig& cfg, const Tensor& h) {
  Tensor c = bias_add_channels(
      g, conv1d(g, h, lookup(params, base + ".conv.w"), 1, Padding::Same),
      lookup(params, base + ".conv.b"));
  Tensor gate = bias_add_channels(
      g, conv1d(g, h, lookup(params, base + ".gate.w"), 1, Padding::Same),
      lookup(params, base + ".gate.b"));
  Tensor y = glu_gate(g, c, gate);
  if (cfg.norm == NormKind::Instance) {
    y = instance_norm(g, y, lookup(params, base + ".norm.g"),
                      lookup(params, base + ".norm.b"), cfg.norm_eps);
  }
  return y;
}

}  // namespace

Tensor generator_forward(Graph& g, const ParamMap& params, const std::string& prefix,
                         const GeneratorConfig& cfg, const Tensor& x, bool training) {
  if (x.rank() != 3 || x.shape()[1] != cfg.in_channels) {
    throw ShapeError("generator: expected input [B," + std::to_string(cfg.in_channels) +
                     ",T], got " + shape_str(x.shape()));
  }
  std::size_t min_t = std::max(cfg.gated_kernel, std::max(cfg.res_kernel, cfg.post_kernel));
  if (x.shape()[2] < min_t) {
    throw InputError("generator: input length " + std::to_string(x.shape()[2]) +
                     " below the receptive field minimum " + std::to_string(min_t));
  }
  Tensor h = channel_affine(g, x, cfg.cond.scale, cfg.cond.shift, false);
  for (std::size_t i = 0; i < cfg.gated_repeat; ++i) {
    h = gated_block(g, params, prefix + ".blk" + std::to_string(i), cfg, h);
  }
  if (cfg.res_repeat > 0) {
    h = bias_add_channels(g, conv1d(g, h, lookup(params, prefix + ".adapt.w"), 1,
                                    Padding::Same),
                          lookup(params, prefix + ".adapt.b"));
    std::size_t T = h.shape()[2];
    std::size_t H = cfg.res_hidden;
    for (std::size_t j = 0; j < cfg.res_repeat; ++j) {
      std::string base = prefix + ".res" + std::to_string(j);
      Tensor r = add(g, h,
                     bias_add_channels(g, conv1d(g, h, lookup(params, base + ".conv.w"),
                                                 1, Padding::Same),
                                       lookup(params, base + ".conv.b")));
      if (cfg.use_transformer) {
        Tensor s = permute(g, r, {0, 2, 1});  // [B,T,H]
        // position information feeds the attention branch; the residual
        // stream stays clean
        Tensor attn_in = add_time_table(g, s, positional_embedding(T, H));
        AttentionParams ap;
        ap.wq = lookup(params, base + ".attn.q.w");
        ap.bq = lookup(params, base + ".attn.q.b");
        ap.wk = lookup(params, base + ".attn.k.w");
        ap.bk = lookup(params, base + ".attn.k.b");
        ap.wv = lookup(params, base + ".attn.v.w");
        ap.bv = lookup(params, base + ".attn.v.b");
        ap.wo = lookup(params, base + ".attn.o.w");
        ap.bo = lookup(params, base + ".attn.o.b");
        Scalar rate = training ? cfg.dropout : 0.0;
        Tensor a = add(g, s, multi_head_attention(g, attn_in, ap, cfg.heads, rate));
        Tensor z = linear(g, a, lookup(params, base + ".ffn.l1.w"),
                          lookup(params, base + ".ffn.l1.b"));
        z = evc::tanh(g, z);
        z = linear(g, z, lookup(params, base + ".ffn.l2.w"),
                   lookup(params, base + ".ffn.l2.b"));
        if (training && cfg.dropout > 0.0) z = dropout(g, z, cfg.dropout);
        Tensor f = add(g, a, z);
        h = permute(g, f, {0, 2, 1});
      } else {
        h = r;
      }
    }
  }
  h = gated_block(g, params, prefix + ".out", cfg, h);
  Tensor y = bias_add_channels(
      g, conv1d(g, h, lookup(params, prefix + ".post.w"), 1, Padding::Same),
      lookup(params, prefix + ".post.b"));
  return channel_affine(g, y, cfg.cond.scale, cfg.cond.shift, true);
}

std::size_t discriminator_frame_count(const DiscriminatorConfig& cfg, std::size_t T) {
  std::size_t t = T;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    t = conv_out_length(t, cfg.kernel, cfg.stride_time, Padding::Same);
  }
  return t;
}

DiscriminatorOutput discriminator_forward(Graph& g, const ParamMap& params,
                                          const std::string& prefix,
                                          const DiscriminatorConfig& cfg,
                                          const Tensor& x) {
  if (cfg.two_d) {
    if (x.rank() != 4 || x.shape()[1] != cfg.in_channels) {
      throw ShapeError("discriminator: expected [B," + std::to_string(cfg.in_channels) +
                       ",F,T] input, got " + shape_str(x.shape()));
    }
  } else {
    if (x.rank() != 3 || x.shape()[1] != cfg.in_channels) {
      throw ShapeError("discriminator: expected [B," + std::to_string(cfg.in_channels) +
                       ",T] input, got " + shape_str(x.shape()));
    }
  }
  Tensor h = channel_affine(g, x, cfg.cond.scale, cfg.cond.shift, false);
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    std::string base = prefix + ".blk" + std::to_string(i);
    Tensor c, gate;
    if (cfg.two_d) {
      c = conv2d(g, h, lookup(params, base + ".conv.w"), cfg.stride_freq,
                 cfg.stride_time, Padding::Same);
      gate = conv2d(g, h, lookup(params, base + ".gate.w"), cfg.stride_freq,
                    cfg.stride_time, Padding::Same);
    } else {
      c = conv1d(g, h, lookup(params, base + ".conv.w"), cfg.stride_time, Padding::Same);
      gate = conv1d(g, h, lookup(params, base + ".gate.w"), cfg.stride_time,
                    Padding::Same);
    }
    c = bias_add_channels(g, c, lookup(params, base + ".conv.b"));
    gate = bias_add_channels(g, gate, lookup(params, base + ".gate.b"));
    h = glu_gate(g, c, gate);
    if (cfg.norm == NormKind::Instance) {
      h = instance_norm(g, h, lookup(params, base + ".norm.g"),
                        lookup(params, base + ".norm.b"), cfg.norm_eps);
    }
  }
  std::size_t B = h.shape()[0];
  Tensor time_features = cfg.two_d ? mean_axis(g, h, 2) : h;  // [B,C,T']
  Tensor pooled = mean_axis(g, time_features, 2);             // [B,C]
  Tensor utterance = sigmoid(
      g, linear(g, pooled, lookup(params, prefix + ".head.w"),
                lookup(params, prefix + ".head.b")));
  DiscriminatorOutput out;
  out.utterance = reshape(g, utterance, {B});
  if (cfg.fine_grained) {
    Tensor f = bias_add_channels(
        g, conv1d(g, time_features, lookup(params, prefix + ".fine.w"), 1, Padding::Valid),
        lookup(params, prefix + ".fine.b"));
    f = sigmoid(g, f);
    out.frames = reshape(g, f, {B, f.shape()[2]});
  }
  return out;
}

Variant parse_variant(const std::string& s) {
  if (s == "base") return Variant::Base;
  if (s == "cl") return Variant::CL;
  if (s == "all") return Variant::All;
  throw ConfigError("unknown variant '" + s + "' (expected base, cl, or all)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Base: return "base";
    case Variant::CL: return "cl";
    case Variant::All: return "all";
  }
  return "base";
}

FeatureConditioning default_f0_conditioning() {
  // undoes the (i+2.5)^(5/2) decomposition gain so every scale row reaches the
  // network at O(1) magnitude
  constexpr std::size_t kScales = 10;
  FeatureConditioning c;
  c.scale.resize(kScales);
  c.shift.assign(kScales, 0.0);
  for (std::size_t i = 1; i <= kScales; ++i) {
    c.scale[i - 1] = std::pow(static_cast<Scalar>(i) + 2.5, 2.5) / 3.0;
  }
  return c;
}

FeatureConditioning default_envelope_conditioning() {
  // toy-corpus log-power envelopes concentrate around -12 with spread ~6
  FeatureConditioning c;
  c.scale = {6.0};
  c.shift = {-12.0};
  return c;
}

ModelSuite build_model_suite(Variant variant, const SuiteHyper& hyper,
                             std::uint64_t seed) {
  ModelSuite suite;
  suite.variant = variant;

  GeneratorConfig spec;
  spec.in_channels = hyper.envelope_bins;
  spec.gated_kernel = hyper.spec_gated_kernel;
  spec.gated_channels = hyper.spec_gated_channels;
  spec.gated_repeat = 2;
  spec.res_hidden = hyper.spec_res_hidden;
  spec.res_repeat = 2;
  spec.heads = hyper.spec_heads;
  spec.dropout = hyper.spec_dropout;
  spec.post_kernel = hyper.spec_gated_kernel;
  spec.use_transformer = true;
  spec.norm = hyper.spec_gen_norm;
  spec.init = hyper.spec_init;
  spec.cond = hyper.env_cond;
  suite.spec_gen = spec;

  GeneratorConfig f0;
  f0.in_channels = 10;
  f0.gated_kernel = hyper.f0_gated_kernel;
  f0.gated_channels = hyper.f0_gated_channels;
  f0.gated_repeat = 1;
  f0.res_hidden = hyper.f0_res_hidden;
  f0.res_repeat = 1;
  f0.heads = 1;
  f0.dropout = 0.0;
  f0.post_kernel = hyper.f0_gated_kernel;
  f0.use_transformer = false;
  f0.norm = hyper.f0_gen_norm;
  f0.init = hyper.f0_init;
  f0.cond = hyper.f0_cond;
  suite.f0_gen = f0;

  DiscriminatorConfig spec_d;
  spec_d.two_d = true;
  spec_d.in_channels = 1;
  spec_d.kernel = hyper.spec_disc_kernel;
  spec_d.channels = hyper.spec_disc_channels;
  spec_d.stride_freq = hyper.spec_disc_stride_freq;
  spec_d.stride_time = 2;
  spec_d.fine_grained = variant == Variant::All;
  spec_d.norm = hyper.disc_norm;
  spec_d.init = hyper.spec_init;
  spec_d.cond = hyper.env_cond;
  suite.spec_disc = spec_d;

  DiscriminatorConfig f0_d;
  f0_d.two_d = false;
  f0_d.in_channels = 10;
  f0_d.kernel = hyper.disc_kernel;
  f0_d.channels = hyper.f0_disc_channels;
  f0_d.stride_time = 2;
  f0_d.fine_grained = variant == Variant::All;
  f0_d.norm = hyper.disc_norm;
  f0_d.init = hyper.f0_init;
  f0_d.cond = hyper.f0_cond;
  suite.f0_disc = f0_d;

  auto merge = [&suite](ParamMap&& part) {
    for (auto& [k, v] : part) suite.params[k] = std::move(v);
  };
  merge(init_generator_params(spec, "spec.gab", hash_combine(seed, "spec.gab")));
  merge(init_generator_params(spec, "spec.gba", hash_combine(seed, "spec.gba")));
  merge(init_discriminator_params(spec_d, "spec.da", hash_combine(seed, "spec.da")));
  merge(init_discriminator_params(spec_d, "spec.db", hash_combine(seed, "spec.db")));
  merge(init_generator_params(f0, "f0.gab", hash_combine(seed, "f0.gab")));
  merge(init_generator_params(f0, "f0.gba", hash_combine(seed, "f0.gba")));
  merge(init_discriminator_params(f0_d, "f0.da", hash_combine(seed, "f0.da")));
  merge(init_discriminator_params(f0_d, "f0.db", hash_combine(seed, "f0.db")));
  return suite;
}

namespace {

void hash_gen(std::ostringstream& os, const GeneratorConfig& c) {
  os << c.in_channels << "," << c.gated_kernel << "," << c.gated_channels << ","
     << c.gated_repeat << "," << c.res_hidden << "," << c.res_kernel << ","
     << c.res_repeat << "," << c.heads << "," << c.dropout << "," << c.post_kernel << ","
     << c.use_transformer << "," << static_cast<int>(c.norm) << ","
     << static_cast<int>(c.init) << ",[";
  for (Scalar v : c.cond.scale) os << v << " ";
  os << "][";
  for (Scalar v : c.cond.shift) os << v << " ";
  os << "];";
}

void hash_disc(std::ostringstream& os, const DiscriminatorConfig& c) {
  os << c.two_d << "," << c.in_channels << "," << c.kernel << ",[";
  for (std::size_t v : c.channels) os << v << " ";
  os << "]," << c.stride_freq << "," << c.stride_time << "," << c.fine_grained << ","
     << static_cast<int>(c.norm) << "," << static_cast<int>(c.init) << ",[";
  for (Scalar v : c.cond.scale) os << v << " ";
  os << "][";
  for (Scalar v : c.cond.shift) os << v << " ";
  os << "];";
}

}  // namespace

std::string suite_config_hash(const ModelSuite& suite) {
  // architecture only; the variant rides in the manifest next to the hash
  std::ostringstream os;
  hash_gen(os, suite.spec_gen);
  hash_gen(os, suite.f0_gen);
  hash_disc(os, suite.spec_disc);
  hash_disc(os, suite.f0_disc);
  std::string s = os.str();
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ULL;
  }
  std::ostringstream hex;
  hex << std::hex << h;
  return hex.str();
}

}  // namespace evc

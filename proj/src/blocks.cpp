#include "hrvit/blocks.hpp"

namespace hrvit {

void MixCFNConfig::validate() const {
  if (channels < 1 || ratio < 1) throw ConfigError("MixCFN needs positive channels and ratio");
  if (use_mixcfn && hidden() % 2 != 0) {
    throw ConfigError("MixCFN hidden width r·C = " + std::to_string(hidden()) +
                      " must be even to split in two");
  }
}

MixCFNWeights make_mixcfn(const MixCFNConfig& cfg, SplitMix64& rng) {
  cfg.validate();
  MixCFNWeights w;
  w.norm = make_layer_norm(cfg.channels);
  w.expand = make_pointwise(cfg.channels, cfg.hidden(), rng);
  if (cfg.use_mixcfn) {
    w.dw3 = make_depthwise(cfg.hidden() / 2, 3, rng);
    w.dw5 = make_depthwise(cfg.hidden() / 2, 5, rng);
  }
  w.project = make_pointwise(cfg.hidden(), cfg.channels, rng);
  return w;
}

ParamList mixcfn_parameters(const MixCFNWeights& w) {
  ParamList p;
  append_params(p, "norm", w.norm);
  append_params(p, "expand", w.expand);
  append_params(p, "dw3", w.dw3);
  append_params(p, "dw5", w.dw5);
  append_params(p, "project", w.project);
  return p;
}

Tensor mixcfn_forward(const Tensor& x, const MixCFNConfig& cfg, const MixCFNWeights& w) {
  cfg.validate();
  if (x.rank() != 4 || x.dim(1) != cfg.channels) {
    throw ShapeError("MixCFN expects N×" + std::to_string(cfg.channels) + "×H×W, got " +
                     to_string(x.shape()));
  }
  Tensor h = apply(w.expand, apply(w.norm, x));
  if (cfg.use_mixcfn) {
    const auto half = cfg.hidden() / 2;
    Tensor a = apply(w.dw3, slice(h, 1, 0, half));
    Tensor b = apply(w.dw5, slice(h, 1, half, half));
    h = gelu(concat({a, b}, 1));
  } else {
    h = gelu(h);
  }
  return add(x, apply(w.project, h));
}

PatchEmbedWeights make_patch_embed(std::int64_t cin, std::int64_t cout, bool efficient,
                                   SplitMix64& rng) {
  PatchEmbedWeights w;
  if (efficient) {
    w.pointwise = make_pointwise(cin, cout, rng);
    w.depthwise = make_depthwise(cout, 3, rng);
  } else {
    w.full = make_conv(cin, cout, 3, rng, 1, 1);
  }
  w.norm = make_layer_norm(cout);
  return w;
}

ParamList patch_embed_parameters(const PatchEmbedWeights& w) {
  ParamList p;
  append_params(p, "pw", w.pointwise);
  append_params(p, "dw", w.depthwise);
  append_params(p, "conv", w.full);
  append_params(p, "norm", w.norm);
  return p;
}

Tensor eff_patch_embed(const Tensor& x, const PatchEmbedWeights& w) {
  if (w.efficient()) return apply(w.norm, apply(w.depthwise, apply(w.pointwise, x)));
  return apply(w.norm, apply(w.full, x));
}

StemWeights make_stem(std::int64_t in_channels, std::int64_t channels, SplitMix64& rng) {
  StemWeights w;
  w.conv1 = make_conv(in_channels, channels, 3, rng, 2, 1);
  w.bn1 = make_batch_norm(channels);
  w.conv2 = make_conv(channels, channels, 3, rng, 2, 1);
  w.bn2 = make_batch_norm(channels);
  return w;
}

ParamList stem_parameters(const StemWeights& w) {
  ParamList p;
  append_params(p, "conv1", w.conv1);
  append_params(p, "bn1", w.bn1);
  append_params(p, "conv2", w.conv2);
  append_params(p, "bn2", w.bn2);
  return p;
}

Tensor stem_forward(const Tensor& x, const StemWeights& w) {
  if (x.rank() != 4 || x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) {
    throw ConfigError("stem input must be N×C×H×W with H and W divisible by 4, got " +
                      to_string(x.shape()));
  }
  Tensor y = relu(apply(w.bn1, apply(w.conv1, x)));
  return relu(apply(w.bn2, apply(w.conv2, y)));
}

}  // namespace hrvit

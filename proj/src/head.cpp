#include "hrvit/head.hpp"

namespace hrvit {

void HeadConfig::validate() const {
  if (in_channels.size() != widths.size()) {
    throw ConfigError("head expects " + std::to_string(widths.size()) + " branches, got " +
                      std::to_string(in_channels.size()));
  }
  if (num_classes < 1 || final_channels < 1 || bottleneck_reduction < 1) {
    throw ConfigError("head sizes must be positive");
  }
  for (auto wd : widths) {
    if (wd < bottleneck_reduction || wd % bottleneck_reduction != 0) {
      throw ConfigError("head width " + std::to_string(wd) + " not divisible by the bottleneck reduction");
    }
  }
}

HeadWeights make_head(const HeadConfig& cfg, SplitMix64& rng) {
  cfg.validate();
  HeadWeights w;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const auto cin = cfg.in_channels[i], out = cfg.widths[i];
    const auto mid = out / cfg.bottleneck_reduction;
    Bottleneck b;
    b.reduce = make_pointwise(cin, mid, rng);
    b.bn1 = make_batch_norm(mid);
    b.conv = make_conv(mid, mid, 3, rng, 1, 1);
    b.bn2 = make_batch_norm(mid);
    b.expand = make_pointwise(mid, out, rng);
    b.bn3 = make_batch_norm(out);
    b.shortcut = make_pointwise(cin, out, rng);
    b.bn_shortcut = make_batch_norm(out);
    w.bottlenecks.push_back(std::move(b));
  }
  for (std::size_t i = 0; i + 1 < cfg.widths.size(); ++i) {
    w.downs.push_back({make_conv(cfg.widths[i], cfg.widths[i + 1], 3, rng, 2, 1),
                       make_batch_norm(cfg.widths[i + 1])});
  }
  w.final_conv = make_pointwise(cfg.widths.back(), cfg.final_channels, rng);
  w.final_bn = make_batch_norm(cfg.final_channels);
  w.classifier = make_linear(cfg.final_channels, cfg.num_classes, rng);
  return w;
}

ParamList head_parameters(const HeadWeights& w) {
  ParamList p;
  for (std::size_t i = 0; i < w.bottlenecks.size(); ++i) {
    const auto& b = w.bottlenecks[i];
    const auto pre = "bottleneck" + std::to_string(i);
    append_params(p, pre + ".reduce", b.reduce);
    append_params(p, pre + ".bn1", b.bn1);
    append_params(p, pre + ".conv", b.conv);
    append_params(p, pre + ".bn2", b.bn2);
    append_params(p, pre + ".expand", b.expand);
    append_params(p, pre + ".bn3", b.bn3);
    append_params(p, pre + ".shortcut", b.shortcut);
    append_params(p, pre + ".bn_shortcut", b.bn_shortcut);
  }
  for (std::size_t i = 0; i < w.downs.size(); ++i) {
    append_params(p, "down" + std::to_string(i) + ".conv", w.downs[i].conv);
    append_params(p, "down" + std::to_string(i) + ".bn", w.downs[i].bn);
  }
  append_params(p, "final.conv", w.final_conv);
  append_params(p, "final.bn", w.final_bn);
  append_params(p, "classifier", w.classifier);
  return p;
}

Tensor bottleneck_forward(const Tensor& x, const Bottleneck& b) {
  Tensor y = relu(apply(b.bn1, apply(b.reduce, x)));
  y = relu(apply(b.bn2, apply(b.conv, y)));
  y = apply(b.bn3, apply(b.expand, y));
  return relu(add(y, apply(b.bn_shortcut, apply(b.shortcut, x))));
}

Tensor cls_head_forward(const std::vector<Tensor>& features, const HeadConfig& cfg,
                        const HeadWeights& w) {
  cfg.validate();
  if (features.size() != cfg.widths.size()) {
    throw ConfigError("head expects " + std::to_string(cfg.widths.size()) +
                      " feature maps, got " + std::to_string(features.size()));
  }
  Tensor y = bottleneck_forward(features[0], w.bottlenecks[0]);
  for (std::size_t i = 1; i < features.size(); ++i) {
    Tensor down = relu(apply(w.downs[i - 1].bn, apply(w.downs[i - 1].conv, y)));
    Tensor branch = bottleneck_forward(features[i], w.bottlenecks[i]);
    if (down.shape() != branch.shape()) {
      throw ShapeError("head cascade into branch " + std::to_string(i + 1) + ": " +
                       to_string(down.shape()) + " vs " + to_string(branch.shape()));
    }
    y = add(down, branch);
  }
  y = relu(apply(w.final_bn, apply(w.final_conv, y)));
  return apply(w.classifier, global_avg_pool(y));
}

}  // namespace hrvit

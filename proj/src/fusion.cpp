#include "hrvit/fusion.hpp"

#include <cstdlib>

namespace hrvit {

namespace {

std::string path_name(int i, int j) {
  return "(" + std::to_string(i) + "→" + std::to_string(j) + ")";
}

}  // namespace

bool FusionSpec::connects(int i, int j) const {
  if (i >= in_branches() || j >= out_branches()) return false;
  return dense || std::abs(i - j) <= 1;
}

void FusionSpec::validate() const {
  if (in_branches() < 1) throw ConfigError("fusion needs at least one input branch");
  if (out_branches() != in_branches() && out_branches() != in_branches() + 1) {
    throw ConfigError("fusion maps " + std::to_string(in_branches()) + " branches to " +
                      std::to_string(out_branches()) + "; expected the same count or one more");
  }
  for (int i = 0; i < in_branches(); ++i) {
    if (in_channels[i] != out_channels[i]) {
      throw ConfigError("fusion identity path " + path_name(i, i) + " changes channels " +
                        std::to_string(in_channels[i]) + " to " + std::to_string(out_channels[i]));
    }
  }
}

FusionWeights make_fusion(const FusionSpec& spec, SplitMix64& rng) {
  spec.validate();
  FusionWeights w;
  w.paths.assign(spec.in_branches(), std::vector<FusionPath>(spec.out_branches()));
  for (int i = 0; i < spec.in_branches(); ++i) {
    for (int j = 0; j < spec.out_branches(); ++j) {
      if (!spec.connects(i, j)) continue;
      auto& p = w.paths[i][j];
      p.factor = 1 << std::abs(i - j);
      if (i == j) {
        p.kind = PathKind::kIdentity;
      } else if (i < j) {
        p.kind = PathKind::kDown;
        const int k = p.factor + 1;
        p.depthwise = make_conv(spec.in_channels[i], spec.in_channels[i], k, rng, p.factor,
                                (k - 1) / 2, static_cast<int>(spec.in_channels[i]));
        p.pointwise = make_pointwise(spec.in_channels[i], spec.out_channels[j], rng);
      } else {
        p.kind = PathKind::kUp;
        p.pointwise = make_pointwise(spec.in_channels[i], spec.out_channels[j], rng);
      }
    }
  }
  return w;
}

ParamList fusion_parameters(const FusionWeights& w) {
  ParamList out;
  for (std::size_t i = 0; i < w.paths.size(); ++i) {
    for (std::size_t j = 0; j < w.paths[i].size(); ++j) {
      const auto prefix = "path" + std::to_string(i) + std::to_string(j);
      append_params(out, prefix + ".dw", w.paths[i][j].depthwise);
      append_params(out, prefix + ".pw", w.paths[i][j].pointwise);
    }
  }
  return out;
}

Tensor fusion_path_forward(const Tensor& x, const FusionPath& path) {
  switch (path.kind) {
    case PathKind::kIdentity:
      return x;
    case PathKind::kDown:
      return apply(path.pointwise, apply(path.depthwise, x));
    case PathKind::kUp:
      return nearest_upsample(apply(path.pointwise, x), path.factor);
    case PathKind::kNone:
      break;
  }
  throw StructuralError("fusion path is not connected");
}

std::vector<Tensor> fusion_forward(const std::vector<Tensor>& inputs, const FusionSpec& spec,
                                   const FusionWeights& w) {
  spec.validate();
  if (static_cast<int>(inputs.size()) != spec.in_branches()) {
    throw ConfigError("fusion expects " + std::to_string(spec.in_branches()) + " inputs, got " +
                      std::to_string(inputs.size()));
  }
  const auto& ref = inputs[0];
  std::vector<Tensor> out;
  for (int j = 0; j < spec.out_branches(); ++j) {
    const Shape want{ref.dim(0), spec.out_channels[j], ref.dim(2) >> j, ref.dim(3) >> j};
    Tensor acc;
    for (int i = 0; i < spec.in_branches(); ++i) {
      if (!spec.connects(i, j)) continue;
      const auto& x = inputs[i];
      if (x.rank() != 4 || x.dim(1) != spec.in_channels[i]) {
        throw ShapeError("fusion path " + path_name(i, j) + ": input " + to_string(x.shape()) +
                         " does not have " + std::to_string(spec.in_channels[i]) + " channels");
      }
      Tensor y = fusion_path_forward(x, w.paths[i][j]);
      if (y.shape() != want) {
        throw ShapeError("fusion path " + path_name(i, j) + " produced " + to_string(y.shape()) +
                         ", expected " + to_string(want));
      }
      acc = acc.defined() ? add(acc, y) : y;
    }
    out.push_back(acc);
  }
  return out;
}

}  // namespace hrvit

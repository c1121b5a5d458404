#include "hyperinv/gradsuite.hpp"

#include <algorithm>
#include <array>
#include <functional>

#include "hyperinv/encoders.hpp"
#include "hyperinv/error.hpp"
#include "hyperinv/generator.hpp"
#include "hyperinv/hypernet.hpp"
#include "hyperinv/losses.hpp"
#include "hyperinv/rng.hpp"

namespace hyperinv {

namespace {

constexpr std::array<std::string_view, 18> kComposites = {
    "mapping-network", "synthesis",          "synthesis-residual", "content-encoder",
    "appearance-encoder", "fuse",            "hypernet-main-conv", "hypernet-torgb",
    "predict-residuals", "discriminator",    "loss-l2",            "loss-perceptual",
    "loss-id",           "loss-rec-total",   "loss-adv-g",         "loss-d",
    "loss-r1",           "loss-enc"};

// Coordinates checked per parameter tensor or input.
constexpr std::size_t kCompositeCoords = 24;

ToyDims suite_dims() {
  ToyDims d;
  d.resolution = 8;
  d.w_dim = 4;
  d.channel_base = 4;
  d.appearance_channels = 2;
  d.appearance_size = 4;
  return d;
}

HyperConfig suite_hyper() {
  HyperConfig h;
  h.hidden_dim = 3;
  h.feature_dim = 4;
  return h;
}

// Zero-initialized tensors (heads, biases, mapper B) get seeded values so
// every parameter carries gradient.
NamedTensors randomized(NamedTensors p, Rng& rng) {
  for (auto& [name, t] : p)
    if (std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; }))
      t = rng.normal(t.shape(), 0.3);
  return p;
}

using NamedFn = std::function<Var(std::span<const Var> inputs, const VarMap& params)>;

// Leaves are the explicit inputs followed by the parameters in name order.
GradCheckReport check_named(std::vector<Tensor> inputs, const NamedTensors& params,
                            const NamedFn& f, std::uint64_t seed) {
  const std::size_t n = inputs.size();
  std::vector<std::string> names;
  for (const auto& [name, t] : params) {
    names.push_back(name);
    inputs.push_back(t);
  }
  const GraphFn fn = [&](std::span<const Var> v) {
    VarMap p;
    for (std::size_t i = 0; i < names.size(); ++i) p.emplace(names[i], v[n + i]);
    return f(v.first(n), p);
  };
  return check_gradients(fn, std::move(inputs), seed, kCompositeCoords);
}

NamedTensors with_prefix(const NamedTensors& p, std::string_view prefix) {
  NamedTensors out;
  for (const auto& [name, t] : p)
    if (name.starts_with(prefix)) out.emplace(name, t);
  return out;
}

}  // namespace

std::span<const std::string_view> composite_kinds() { return kComposites; }

GradCheckReport composite_check(std::string_view kind, std::uint64_t seed) {
  if (std::find(kComposites.begin(), kComposites.end(), kind) == kComposites.end())
    throw Error("composite_check: unknown composite '" + std::string(kind) + "'");
  const ToyDims dims = suite_dims();
  const HyperConfig hyper = suite_hyper();
  const auto table = layer_table(dims);
  const std::size_t R = dims.resolution, B = 2;
  Rng rng(derive_seed(seed, "gradsuite." + std::string(kind)));
  const std::uint64_t init_seed = rng.next_u64();
  const ProxyFeatureNet proxy(rng.next_u64());
  LossConfig lc;
  const Tensor images = rng.uniform({B, 3, R, R}, -1.0, 1.0);
  const Tensor images2 = rng.uniform({B, 3, R, R}, -1.0, 1.0);

  if (kind == "mapping-network") {
    const NamedTensors gp = with_prefix(Generator::init_params(dims, init_seed), "g.map");
    return check_named({rng.normal({B, dims.w_dim})}, gp,
                       [](std::span<const Var> v, const VarMap& p) { return map_latent(p, v[0]); },
                       seed);
  }
  if (kind == "synthesis") {
    const NamedTensors gp = randomized(Generator::init_params(dims, init_seed), rng);
    return check_named({rng.normal({B, dims.w_dim})}, with_prefix(gp, "g."),
                       [&](std::span<const Var> v, const VarMap& p) {
                         return synthesize(p, table, v[0]);
                       },
                       seed);
  }
  if (kind == "synthesis-residual") {
    const NamedTensors gp = Generator::init_params(dims, init_seed);
    std::vector<Tensor> inputs{rng.normal({B, dims.w_dim})};
    for (const LayerSpec& l : table) {
      Shape s{B};
      const Shape k = l.kernel_shape();
      s.insert(s.end(), k.begin(), k.end());
      inputs.push_back(rng.normal(s, 0.05));
    }
    return check_named(std::move(inputs), gp,
                       [&](std::span<const Var> v, const VarMap& p) {
                         std::vector<Var> kernels;
                         for (std::size_t j = 0; j < table.size(); ++j)
                           kernels.push_back(param_at(p, layer_weight_name(j + 1)) + v[1 + j]);
                         return synthesize(p, table, v[0], kernels);
                       },
                       seed);
  }
  if (kind == "content-encoder") {
    const NamedTensors ep = randomized(init_content_encoder(dims, init_seed), rng);
    return check_named({images}, ep,
                       [](std::span<const Var> v, const VarMap& p) { return encode_content(p, v[0]); },
                       seed);
  }
  if (kind == "appearance-encoder") {
    const NamedTensors ep = randomized(init_appearance_encoder(dims, hyper, init_seed), rng);
    return check_named({images}, ep,
                       [](std::span<const Var> v, const VarMap& p) {
                         return encode_appearance(p, v[0]);
                       },
                       seed);
  }
  if (kind == "fuse") {
    const std::size_t L = table.size(), C = dims.appearance_channels, s = dims.appearance_size;
    return check_named({rng.normal({B, L, C, s, s}), rng.normal({B, L, C, s, s})}, {},
                       [](std::span<const Var> v, const VarMap&) { return fuse(v[0], v[1]); },
                       seed);
  }
  if (kind == "hypernet-main-conv" || kind == "hypernet-torgb") {
    const NamedTensors hp = randomized(init_hypernet(dims, hyper, init_seed), rng);
    const LayerRole role = kind == "hypernet-main-conv" ? LayerRole::MainConv : LayerRole::ToRgb;
    const auto it = std::find_if(table.begin(), table.end(),
                                 [&](const LayerSpec& l) { return l.role == role; });
    const LayerSpec layer = *it;
    const std::string prefix = "hyper." + std::to_string(layer.index) + ".";
    const std::size_t ch = hyper_input_channels(dims, hyper), s = dims.appearance_size;
    return check_named({rng.normal({B, ch, s, s})}, with_prefix(hp, prefix),
                       [&](std::span<const Var> v, const VarMap& p) {
                         return hyper_layer_forward(p, layer, hyper.hidden_dim, v[0]);
                       },
                       seed);
  }
  if (kind == "predict-residuals") {
    const NamedTensors hp = randomized(init_hypernet(dims, hyper, init_seed), rng);
    const std::size_t ch = hyper_input_channels(dims, hyper), s = dims.appearance_size;
    return check_named({rng.normal({B, table.size(), ch, s, s})}, hp,
                       [&](std::span<const Var> v, const VarMap& p) {
                         const auto deltas = predict_residuals(p, table, hyper.hidden_dim, v[0]);
                         std::vector<Var> flat;
                         for (const Var& d : deltas) flat.push_back(reshape(d, Shape{numel(d.shape())}));
                         return concat(flat, 0);
                       },
                       seed);
  }
  if (kind == "discriminator") {
    const NamedTensors dp = init_discriminator(dims, init_seed);
    return check_named({images}, dp,
                       [](std::span<const Var> v, const VarMap& p) { return discriminate(p, v[0]); },
                       seed);
  }
  if (kind == "loss-l2" || kind == "loss-perceptual" || kind == "loss-id" ||
      kind == "loss-rec-total") {
    const std::string k(kind);
    return check_named({images, images2}, {},
                       [&, k](std::span<const Var> v, const VarMap&) {
                         const RecLoss r = rec_loss(proxy, v[0], v[1], lc);
                         if (k == "loss-l2") return r.l2;
                         if (k == "loss-perceptual") return r.perc;
                         if (k == "loss-id") return r.id;
                         return r.total;
                       },
                       seed);
  }
  if (kind == "loss-adv-g") {
    return check_named({rng.normal({B})}, {},
                       [](std::span<const Var> v, const VarMap&) { return adv_loss_g(v[0]); },
                       seed);
  }
  if (kind == "loss-d" || kind == "loss-r1") {
    const NamedTensors dp = init_discriminator(dims, init_seed);
    const bool r1_only = kind == "loss-r1";
    return check_named({images, images2}, dp,
                       [&, r1_only](std::span<const Var> v, const VarMap& p) {
                         if (r1_only) return r1_penalty(v[0], discriminate(p, v[0]), lc.r1_gamma);
                         return d_loss(p, v[0], v[1], lc.r1_gamma).total;
                       },
                       seed);
  }
  // loss-enc
  const NamedTensors dp = init_discriminator(dims, init_seed);
  LossConfig adv = lc;
  adv.lambda_adv = 0.5;
  return check_named({images, images2}, dp,
                     [&](std::span<const Var> v, const VarMap& p) {
                       return enc_loss(rec_loss(proxy, v[0], v[1], adv), discriminate(p, v[1]), adv);
                     },
                     seed);
}

namespace {

// Shapes for case `c` of a primitive op; sizes vary with the case index.
std::vector<Shape> primitive_shapes(std::string_view op, std::size_t c) {
  const std::size_t a = 2 + c % 3, b = 3 + (c * 2) % 4, k = c % 2 == 0 ? 3 : 1;
  if (op == "matmul") return {{a, b}, {b, a + 1}};
  if (op == "conv2d") return {{2, a, 4 + c % 3, 5}, {b, a, k, k}};
  if (op == "modulated-conv2d") return {{2, a, 5, 4 + c % 3}, {b, a, k, k}, {2, a}};
  if (op == "concat") return {{a, b}, {c % 2 + 1, b}, {1, b}};
  if (op == "broadcast-add" || op == "broadcast-mul") {
    if (c % 2 == 0) return {{a, b}, {b}};
    return {{2, a, b}, {a, 1}};
  }
  if (op == "upsample-nearest-2x") return {{2, a, 3, 2 + c % 2}};
  return {{a, b}};
}

}  // namespace

std::vector<GradSuiteRow> gradient_suite(std::size_t cases, std::uint64_t seed) {
  std::vector<GradSuiteRow> rows;
  for (std::string_view op : primitive_op_kinds())
    for (std::size_t c = 0; c < cases; ++c) {
      const auto shapes = primitive_shapes(op, c);
      const std::uint64_t s = derive_seed(seed, std::string(op) + "#" + std::to_string(c));
      rows.push_back({std::string(op), false, c, grad_check(op, shapes, s)});
    }
  for (std::string_view kind : composite_kinds())
    for (std::size_t c = 0; c < cases; ++c) {
      const std::uint64_t s = derive_seed(seed, std::string(kind) + "#" + std::to_string(c));
      rows.push_back({std::string(kind), true, c, composite_check(kind, s)});
    }
  return rows;
}

}  // namespace hyperinv

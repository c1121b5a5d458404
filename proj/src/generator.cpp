#include "hyperinv/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "hyperinv/error.hpp"

namespace hyperinv {

std::string_view role_name(LayerRole role) {
  return role == LayerRole::MainConv ? "main-conv" : "torgb-conv";
}

std::size_t block_channels(const ToyDims& dims, std::size_t resolution) {
  return resolution <= 8 ? dims.channel_base : dims.channel_base / 2;
}

std::vector<LayerSpec> layer_table(const ToyDims& dims) {
  std::vector<LayerSpec> table;
  std::size_t in = dims.channel_base;
  for (std::size_t res = 4; res <= dims.resolution; res *= 2) {
    const std::size_t out = block_channels(dims, res);
    const std::size_t j = table.size() + 1;
    table.push_back({j, LayerRole::MainConv, res, in, out, 3, j});
    table.push_back({j + 1, LayerRole::ToRgb, res, out, 3, 1, j + 1});
    in = out;
  }
  return table;
}

Tensor encode_layer_table(std::span<const LayerSpec> table) {
  Tensor t({table.size(), 7});
  for (std::size_t r = 0; r < table.size(); ++r) {
    const LayerSpec& l = table[r];
    const double row[7] = {double(l.index),       l.role == LayerRole::MainConv ? 0.0 : 1.0,
                           double(l.resolution),  double(l.in_channels),
                           double(l.out_channels), double(l.kernel),
                           double(l.style_index)};
    std::copy(row, row + 7, t.ptr() + r * 7);
  }
  return t;
}

std::vector<LayerSpec> decode_layer_table(const Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 7) throw FormatError("layer table must be [N,7]");
  std::vector<LayerSpec> table;
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    const double* row = t.ptr() + r * 7;
    auto as_size = [](double v) { return static_cast<std::size_t>(v); };
    table.push_back({as_size(row[0]), row[1] == 0.0 ? LayerRole::MainConv : LayerRole::ToRgb,
                     as_size(row[2]), as_size(row[3]), as_size(row[4]), as_size(row[5]),
                     as_size(row[6])});
  }
  return table;
}

Var map_latent(const VarMap& gp, Var z) {
  const std::size_t axes[] = {1};
  Var x = z / sqrt(add_scalar(reduce_mean(square(z), axes, true), 1e-8));
  x = leaky_relu(linear(gp, "g.map.0", x));
  return leaky_relu(linear(gp, "g.map.1", x));
}

Var synthesize(const VarMap& gp, std::span<const LayerSpec> table, Var w,
               std::span<const Var> kernels) {
  if (!kernels.empty() && kernels.size() != table.size())
    throw ShapeError("synthesize", Shape{table.size()}, Shape{kernels.size()});
  if (w.shape().size() != 2) throw ShapeError("synthesize", Shape{0, 0}, w.shape());
  const std::size_t batch = w.shape()[0];
  const Var& c = param_at(gp, "g.const");
  Shape xs = c.shape();
  xs[0] = batch;
  Var x = broadcast_to(c, xs);
  Var rgb;
  for (const LayerSpec& l : table) {
    const std::string name = "g.layer." + std::to_string(l.index);
    const Var& kernel = kernels.empty() ? param_at(gp, name + ".weight") : kernels[l.index - 1];
    const Var& bias = param_at(gp, name + ".bias");
    Var styles = linear(gp, name + ".affine", w);
    const Shape bshape{1, l.out_channels, 1, 1};
    if (l.role == LayerRole::MainConv) {
      if (l.resolution > 4) x = upsample2x(x);
      x = modulated_conv2d(x, kernel, styles, true, static_cast<int>(l.kernel / 2));
      x = leaky_relu(x + reshape(bias, bshape));
    } else {
      Var y = modulated_conv2d(x, kernel, styles, false, 0) + reshape(bias, bshape);
      rgb = rgb.valid() ? upsample2x(rgb) + y : y;
    }
  }
  return rgb;
}

// ---------------------------------------------------------------------------

Generator::Generator(ToyDims dims, NamedTensors params)
    : dims_(dims), params_(std::move(params)), table_(layer_table(dims)) {
  auto it = params_.find("g.layer_spec");
  if (it == params_.end()) throw FormatError("generator: missing g.layer_spec");
  if (decode_layer_table(it->second) != table_)
    throw FormatError("generator: stored layer table does not match the configured dimensions");
  auto expect = [&](const std::string& name, const Shape& shape) {
    auto p = params_.find(name);
    if (p == params_.end()) throw FormatError("generator: missing " + name);
    if (p->second.shape() != shape) throw ShapeError(name, shape, p->second.shape());
  };
  expect("g.const", {1, dims_.channel_base, 4, 4});
  for (int i = 0; i < 2; ++i) {
    const std::string n = "g.map." + std::to_string(i);
    expect(n + ".weight", {dims_.w_dim, dims_.w_dim});
    expect(n + ".bias", {dims_.w_dim});
  }
  for (const LayerSpec& l : table_) {
    const std::string n = "g.layer." + std::to_string(l.index);
    expect(n + ".weight", l.kernel_shape());
    expect(n + ".bias", {l.out_channels});
    expect(n + ".affine.weight", {dims_.w_dim, l.in_channels});
    expect(n + ".affine.bias", {l.in_channels});
  }
  hash_ = params_hash(params_, "g.");
}

NamedTensors Generator::init_params(const ToyDims& dims, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "generator.init"));
  const auto table = layer_table(dims);
  NamedTensors p;
  p["g.layer_spec"] = encode_layer_table(table);
  p["g.const"] = rng.normal({1, dims.channel_base, 4, 4});
  init_linear(p, "g.map.0", dims.w_dim, dims.w_dim, rng, kLeakyGain);
  init_linear(p, "g.map.1", dims.w_dim, dims.w_dim, rng, kLeakyGain);
  for (const LayerSpec& l : table) {
    const std::string n = "g.layer." + std::to_string(l.index);
    const double gain = l.role == LayerRole::MainConv ? 1.0 : 0.5;
    init_conv(p, n, l.out_channels, l.in_channels, l.kernel, rng, gain);
    init_linear(p, n + ".affine", dims.w_dim, l.in_channels, rng);
    p[n + ".affine.bias"] = Tensor({l.in_channels}, 1.0);
  }
  return p;
}

Generator Generator::initialize(const ToyDims& dims, std::uint64_t seed) {
  return Generator(dims, init_params(dims, seed));
}

const Tensor& Generator::kernel(std::size_t j) const {
  if (j == 0 || j > table_.size()) throw Error("generator: layer index out of range");
  return params_.at(layer_weight_name(j));
}

Tensor Generator::map(const Tensor& z) const {
  Graph g;
  const VarMap gp = bind_params(g, params_, false, "g.map.");
  return map_latent(gp, g.constant(z)).value();
}

ContentCode Generator::sample_codes(std::uint64_t seed, std::size_t n) const {
  Rng rng(seed);
  return {map(rng.normal({n, dims_.w_dim})), hash_};
}

Tensor Generator::generate(const Tensor& w) const { return generate(w, {}); }

Tensor Generator::generate(const ContentCode& code) const {
  if (code.generator_hash != hash_)
    throw HashMismatch("content code was produced against generator " +
                       hex64(code.generator_hash) + ", not " + hex64(hash_));
  return generate(code.w);
}

Tensor Generator::generate(const Tensor& w, std::span<const Tensor> residuals) const {
  if (!residuals.empty() && residuals.size() != table_.size())
    throw ShapeError("generate", Shape{table_.size()}, Shape{residuals.size()});
  Graph g;
  const VarMap gp = bind_params(g, params_, false, "g.");
  std::vector<Var> kernels;
  for (std::size_t j = 0; j < residuals.size(); ++j)
    kernels.push_back(param_at(gp, layer_weight_name(j + 1)) + g.constant(residuals[j]));
  return synthesize(gp, table_, g.constant(w), kernels).value();
}

Generator Generator::refine(std::span<const Tensor> deltas) const {
  if (deltas.size() != table_.size())
    throw ShapeError("refine_generator", Shape{table_.size()}, Shape{deltas.size()});
  NamedTensors p = params_;
  for (const LayerSpec& l : table_) {
    Tensor& k = p.at(layer_weight_name(l.index));
    const Tensor& d = deltas[l.index - 1];
    if (d.size() != k.size()) throw ShapeError("refine_generator", k.shape(), d.shape());
    for (std::size_t i = 0; i < k.size(); ++i) k[i] += d[i];
  }
  Generator out(dims_, std::move(p));
  out.hash_ = hash_;
  out.refined_ = true;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct DiscLayer {
  std::size_t in, out;
  int stride;
};

std::vector<DiscLayer> disc_layers(const ToyDims& dims) {
  std::vector<DiscLayer> layers;
  std::size_t in = 3, ch = 16;
  for (std::size_t res = dims.resolution; res > 4; res /= 2) {
    layers.push_back({in, ch, 2});
    in = ch;
    ch = std::min<std::size_t>(ch * 2, 64);
  }
  layers.push_back({in, 64, 1});
  return layers;
}

}  // namespace

Var discriminate(const VarMap& dp, Var images) {
  if (images.shape().size() != 4 || images.shape()[1] != 3)
    throw ShapeError("discriminate", Shape{0, 3, 0, 0}, images.shape());
  Var x = images;
  for (std::size_t i = 0;; ++i) {
    const std::string name = "d.conv." + std::to_string(i);
    if (!dp.contains(name + ".weight")) break;
    const int stride = x.shape()[2] > 4 ? 2 : 1;
    x = leaky_relu(conv_layer(dp, name, x, stride, 1));
  }
  const std::size_t axes[] = {2, 3};
  Var pooled = reduce_mean(x, axes, false);
  Var logit = linear(dp, "d.fc", pooled);
  return reshape(logit, Shape{images.shape()[0]});
}

Tensor discriminate(const NamedTensors& d, const Tensor& images) {
  Graph g;
  const VarMap dp = bind_params(g, d, false, "d.");
  return discriminate(dp, g.constant(images)).value();
}

NamedTensors init_discriminator(const ToyDims& dims, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "discriminator.init"));
  NamedTensors p;
  const auto layers = disc_layers(dims);
  for (std::size_t i = 0; i < layers.size(); ++i)
    init_conv(p, "d.conv." + std::to_string(i), layers[i].out, layers[i].in, 3, rng, kLeakyGain);
  init_linear(p, "d.fc", layers.back().out, 1, rng);
  return p;
}

// ---------------------------------------------------------------------------

Tensor procedural_image(std::uint64_t seed, std::uint64_t index, std::size_t resolution) {
  std::uint64_t mix = derive_seed(seed, "procedural") ^ (index * 0x9E3779B97F4A7C15ULL);
  Rng rng(splitmix64(mix));
  const std::size_t r = resolution;
  Tensor img({3, r, r});

  double c0[3], c1[3];
  for (double& c : c0) c = rng.uniform(-1.0, 1.0);
  for (double& c : c1) c = rng.uniform(-1.0, 1.0);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dx = std::cos(angle), dy = std::sin(angle);
  for (std::size_t y = 0; y < r; ++y)
    for (std::size_t x = 0; x < r; ++x) {
      const double u = (double(x) + 0.5) / double(r) - 0.5, v = (double(y) + 0.5) / double(r) - 0.5;
      const double t = std::clamp(0.5 + (u * dx + v * dy), 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) img[(c * r + y) * r + x] = (1 - t) * c0[c] + t * c1[c];
    }

  const std::size_t shapes = 1 + rng.below(3);
  constexpr int kSuper = 4;
  for (std::size_t s = 0; s < shapes; ++s) {
    const bool ellipse = rng.below(2) == 0;
    const double cx = rng.uniform(0.2, 0.8) * double(r), cy = rng.uniform(0.2, 0.8) * double(r);
    const double hx = rng.uniform(0.1, 0.3) * double(r), hy = rng.uniform(0.1, 0.3) * double(r);
    double color[3];
    for (double& c : color) c = rng.uniform(-1.0, 1.0);
    for (std::size_t y = 0; y < r; ++y)
      for (std::size_t x = 0; x < r; ++x) {
        int inside = 0;
        for (int sy = 0; sy < kSuper; ++sy)
          for (int sx = 0; sx < kSuper; ++sx) {
            const double px = double(x) + (sx + 0.5) / kSuper - cx;
            const double py = double(y) + (sy + 0.5) / kSuper - cy;
            const bool hit = ellipse ? (px * px) / (hx * hx) + (py * py) / (hy * hy) <= 1.0
                                     : std::abs(px) <= hx && std::abs(py) <= hy;
            inside += hit;
          }
        if (!inside) continue;
        const double a = double(inside) / (kSuper * kSuper);
        for (std::size_t c = 0; c < 3; ++c) {
          double& p = img[(c * r + y) * r + x];
          p = (1 - a) * p + a * color[c];
        }
      }
  }
  return img;
}

Tensor sample_dataset(std::uint64_t seed, std::size_t n, std::size_t resolution) {
  std::vector<Tensor> items;
  items.reserve(n);
  for (std::size_t i = 0; i < n; ++i) items.push_back(procedural_image(seed, i, resolution));
  if (items.empty()) return Tensor({0, 3, resolution, resolution});
  return stack(items);
}

Tensor batch_rows(const Tensor& batch, std::size_t first, std::size_t count) {
  if (batch.rank() < 1 || first + count > batch.dim(0))
    throw ShapeError("batch_rows", batch.shape(), Shape{first, count});
  Shape s = batch.shape();
  const std::size_t row = batch.size() / s[0];
  s[0] = count;
  return Tensor(std::move(s), std::vector<double>(batch.ptr() + first * row,
                                                  batch.ptr() + (first + count) * row));
}

Tensor gather_rows(const Tensor& batch, std::span<const std::size_t> rows) {
  Shape s = batch.shape();
  const std::size_t row = s.at(0) ? batch.size() / s[0] : 0;
  std::vector<double> data;
  data.reserve(row * rows.size());
  for (std::size_t r : rows) {
    if (r >= s[0]) throw ShapeError("gather_rows", batch.shape(), Shape{r});
    data.insert(data.end(), batch.ptr() + r * row, batch.ptr() + (r + 1) * row);
  }
  s[0] = rows.size();
  return Tensor(std::move(s), std::move(data));
}

}  // namespace hyperinv

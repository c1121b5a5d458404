#include "hyperinv/encoders.hpp"

#include <algorithm>

#include "hyperinv/error.hpp"

namespace hyperinv {

namespace {

void check_images(const char* op, const Shape& s) {
  if (s.size() != 4 || s[1] != 3) throw ShapeError(op, Shape{0, 3, 0, 0}, s);
}

}  // namespace

NamedTensors init_content_encoder(const ToyDims& dims, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "e1.init"));
  NamedTensors p;
  std::size_t in = 3, ch = 16, i = 0;
  for (std::size_t res = dims.resolution; res > 4; res /= 2, ++i) {
    init_conv(p, "e1.conv." + std::to_string(i), ch, in, 3, rng, kLeakyGain);
    in = ch;
    ch = std::min<std::size_t>(ch * 2, 64);
  }
  init_conv(p, "e1.conv." + std::to_string(i), 64, in, 3, rng, kLeakyGain);
  p["e1.head.weight"] = Tensor({64, dims.w_dim});
  p["e1.head.bias"] = Tensor({dims.w_dim});
  return p;
}

Var encode_content(const VarMap& ep, Var images) {
  check_images("encode_content", images.shape());
  Var x = images;
  for (std::size_t i = 0;; ++i) {
    const std::string name = "e1.conv." + std::to_string(i);
    if (!ep.contains(name + ".weight")) break;
    x = leaky_relu(conv_layer(ep, name, x, x.shape()[2] > 4 ? 2 : 1, 1));
  }
  const std::size_t axes[] = {2, 3};
  return linear(ep, "e1.head", reduce_mean(x, axes, false));
}

ContentCode encode_content(const NamedTensors& e1, const Tensor& images,
                           std::uint64_t generator_hash) {
  Graph g;
  const VarMap ep = bind_params(g, e1, false, "e1.");
  return {encode_content(ep, g.constant(images)).value(), generator_hash};
}

std::size_t appearance_layers(const ToyDims& dims, const HyperConfig& hyper) {
  return hyper.code == CodeSharing::Shared ? 1 : layer_table(dims).size();
}

NamedTensors init_appearance_encoder(const ToyDims& dims, const HyperConfig& hyper,
                                     std::uint64_t seed) {
  Rng rng(derive_seed(seed, "e2.init"));
  NamedTensors p;
  std::size_t in = 3, ch = 16, i = 0;
  for (std::size_t res = dims.resolution; res > dims.appearance_size; res /= 2, ++i) {
    init_conv(p, "e2.trunk." + std::to_string(i), ch, in, 3, rng, kLeakyGain);
    in = ch;
    ch = std::min<std::size_t>(ch * 2, 32);
  }
  const std::size_t heads = appearance_layers(dims, hyper);
  for (std::size_t l = 0; l < heads; ++l)
    init_conv(p, "e2.head." + std::to_string(l), dims.appearance_channels, in, 1, rng);
  return p;
}

Var encode_appearance(const VarMap& ep, Var images) {
  check_images("encode_appearance", images.shape());
  Var x = images;
  for (std::size_t i = 0;; ++i) {
    const std::string name = "e2.trunk." + std::to_string(i);
    if (!ep.contains(name + ".weight")) break;
    x = leaky_relu(conv_layer(ep, name, x, 2, 1));
  }
  std::vector<Var> heads;
  for (std::size_t l = 0;; ++l) {
    const std::string name = "e2.head." + std::to_string(l);
    if (!ep.contains(name + ".weight")) break;
    Var h = conv_layer(ep, name, x, 1, 0);
    Shape s = h.shape();
    s.insert(s.begin() + 1, 1);
    heads.push_back(reshape(h, s));
  }
  if (heads.empty()) throw Error("encode_appearance: no heads");
  return concat(heads, 1);
}

Tensor encode_appearance(const NamedTensors& e2, const Tensor& images) {
  Graph g;
  const VarMap ep = bind_params(g, e2, false, "e2.");
  return encode_appearance(ep, g.constant(images)).value();
}

Var fuse(Var h_x, Var h_xw) {
  const Shape& a = h_x.shape();
  if (a != h_xw.shape() || (a.size() != 4 && a.size() != 5))
    throw ShapeError("fuse", a, h_xw.shape());
  const Var parts[] = {h_x, h_xw};
  return concat(parts, a.size() - 3);
}

Tensor fuse(const Tensor& h_x, const Tensor& h_xw) {
  Graph g;
  return fuse(g.constant(h_x), g.constant(h_xw)).value();
}

}  // namespace hyperinv

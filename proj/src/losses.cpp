#include "hyperinv/losses.hpp"

#include <cmath>

#include "hyperinv/error.hpp"
#include "hyperinv/generator.hpp"
#include "hyperinv/rng.hpp"

namespace hyperinv {

ProxyFeatureNet::ProxyFeatureNet(std::uint64_t seed) : seed_(seed) {
  Rng rng(derive_seed(seed, "proxy.init"));
  init_conv(params_, "proxy.conv.0", 16, 3, 3, rng, kLeakyGain);
  init_conv(params_, "proxy.conv.1", 32, 16, 3, rng, kLeakyGain);
  init_conv(params_, "proxy.conv.2", 32, 32, 3, rng, kLeakyGain);
  init_linear(params_, "proxy.deep", 32, 32, rng);
  for (const char* n : {"proxy.conv.0.bias", "proxy.conv.1.bias", "proxy.conv.2.bias"})
    params_[n] = rng.normal(params_[n].shape(), 0.1);
  params_["proxy.deep.bias"] = rng.normal({32}, 0.5);
}

ProxyFeatureNet::Features ProxyFeatureNet::features(Var images) const {
  Graph& g = images.graph();
  const VarMap p = bind_params(g, params_, false);
  Features f;
  Var x = images;
  for (int i = 0; i < 3; ++i) {
    x = leaky_relu(conv_layer(p, "proxy.conv." + std::to_string(i), x, 2, 1));
    f.stages.push_back(x);
  }
  const std::size_t axes[] = {2, 3};
  f.deep = linear(p, "proxy.deep", reduce_mean(x, axes, false));
  return f;
}

Var cosine_similarity(Var a, Var b) {
  if (a.shape() != b.shape() || a.shape().size() != 2)
    throw ShapeError("cosine_similarity", a.shape(), b.shape());
  const std::size_t axes[] = {1};
  Var dot = reduce_sum(a * b, axes);
  Var na = reduce_sum(square(a), axes);
  Var nb = reduce_sum(square(b), axes);
  return dot / sqrt(na * nb);
}

RecLoss rec_loss(const ProxyFeatureNet& proxy, Var x, Var xhat, const LossConfig& cfg) {
  if (x.shape() != xhat.shape()) throw ShapeError("rec_loss", x.shape(), xhat.shape());
  RecLoss r;
  r.l2 = mean(square(x - xhat));
  const auto fx = proxy.features(x);
  const auto fy = proxy.features(xhat);
  for (std::size_t s = 0; s < fx.stages.size(); ++s) {
    Var term = mean(square(fx.stages[s] - fy.stages[s]));
    r.perc = s == 0 ? term : r.perc + term;
  }
  r.id = mean(1.0 - cosine_similarity(fx.deep, fy.deep));
  r.total = cfg.lambda_pixel * r.l2 + cfg.lambda_perc * r.perc + cfg.lambda_id * r.id;
  return r;
}

Tensor id_similarity(const ProxyFeatureNet& proxy, const Tensor& x, const Tensor& xhat) {
  if (x.shape() != xhat.shape()) throw ShapeError("id_similarity", x.shape(), xhat.shape());
  Graph g;
  const auto fx = proxy.features(g.constant(x));
  const auto fy = proxy.features(g.constant(xhat));
  for (const Var* v : {&fx.deep, &fy.deep}) {
    const Tensor& t = v->value();
    const std::size_t n = t.dim(1);
    for (std::size_t b = 0; b < t.dim(0); ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += t[b * n + i] * t[b * n + i];
      if (s == 0.0) throw Error("id_similarity: zero-norm embedding");
    }
  }
  return cosine_similarity(fx.deep, fy.deep).value();
}

Var adv_loss_g(Var fake_logits) { return mean(softplus(-fake_logits)); }

Var r1_penalty(Var real, Var real_logits, double gamma) {
  Graph& g = real.graph();
  const Var wrt[] = {real};
  Var grad = g.backward(sum(real_logits), wrt)[0];
  const double batch = static_cast<double>(real.shape()[0]);
  return sum(square(grad)) * (0.5 * gamma / batch);
}

DLoss d_loss(const VarMap& dp, Var real, Var fake, double gamma) {
  if (real.shape() != fake.shape()) throw ShapeError("d_loss", real.shape(), fake.shape());
  DLoss d;
  Var real_logits = discriminate(dp, real);
  Var fake_logits = discriminate(dp, fake);
  d.adv = mean(softplus(-real_logits)) + mean(softplus(fake_logits));
  d.total = d.adv;
  if (gamma != 0.0) {
    d.r1 = r1_penalty(real, real_logits, gamma);
    d.total = d.total + d.r1;
  }
  return d;
}

Var enc_loss(const RecLoss& rec, Var fake_logits, const LossConfig& cfg) {
  if (cfg.lambda_adv == 0.0) return rec.total;
  return rec.total + cfg.lambda_adv * adv_loss_g(fake_logits);
}

}  // namespace hyperinv

#pragma once

#include <cstdint>
#include <vector>

#include "hyperinv/config.hpp"
#include "hyperinv/nn.hpp"

namespace hyperinv {

/// Frozen random conv net standing in for perceptual and identity feature
/// extractors. Three stride-2 conv stages plus a pooled, linearly projected
/// deep embedding. Parameters "proxy.*" depend only on the seed.
class ProxyFeatureNet {
 public:
  explicit ProxyFeatureNet(std::uint64_t seed);

  struct Features {
    std::vector<Var> stages;
    Var deep;  // [B, 32]
  };
  /// Parameters enter `images`' graph as constants.
  Features features(Var images) const;

  std::uint64_t seed() const noexcept { return seed_; }
  const NamedTensors& params() const noexcept { return params_; }
  std::uint64_t hash() const { return params_hash(params_); }

 private:
  std::uint64_t seed_;
  NamedTensors params_;
};

struct RecLoss {
  Var total;
  Var l2;    // mean squared pixel error
  Var perc;  // sum over stages of mean squared feature error
  Var id;    // batch mean of 1 - cos(deep(x), deep(xhat))
};

RecLoss rec_loss(const ProxyFeatureNet& proxy, Var x, Var xhat, const LossConfig& cfg);

/// Row-wise cosine similarity of [B,n] embeddings -> [B].
Var cosine_similarity(Var a, Var b);
/// Cosine of the deep proxy embeddings, one value per image. Throws on a
/// zero-norm embedding.
Tensor id_similarity(const ProxyFeatureNet& proxy, const Tensor& x, const Tensor& xhat);

/// Non-saturating generator loss: mean softplus(-logit).
Var adv_loss_g(Var fake_logits);

/// (gamma/2) * batch mean of |grad_x D(x)|^2. `real` must be a leaf of the
/// graph and `real_logits` = D(real) with shape [B].
Var r1_penalty(Var real, Var real_logits, double gamma);

struct DLoss {
  Var total;
  Var adv;  // logistic part
  Var r1;   // invalid when gamma == 0
};

/// mean softplus(-D(real)) + mean softplus(D(fake)) + r1_penalty(real).
/// `real` must be a leaf; `fake` should be a constant (detached) leaf.
DLoss d_loss(const VarMap& dp, Var real, Var fake, double gamma);

/// rec + lambda_adv * adv_loss_g(fake_logits); exactly rec.total when
/// lambda_adv is 0.
Var enc_loss(const RecLoss& rec, Var fake_logits, const LossConfig& cfg);

}  // namespace hyperinv

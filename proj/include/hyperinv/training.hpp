#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "hyperinv/config.hpp"
#include "hyperinv/generator.hpp"
#include "hyperinv/losses.hpp"
#include "hyperinv/optim.hpp"
#include "hyperinv/rng.hpp"

namespace hyperinv {

/// One row of the training CSV. Absent terms are NaN and print empty.
struct TrainLogRow {
  std::size_t iteration = 0;
  double l2 = 0, perc = 0, id = 0, adv = 0, d_loss = 0, r1 = 0;
};
std::string log_csv_header();
std::string log_csv_row(const TrainLogRow& row);

using LogSink = std::function<void(const TrainLogRow&)>;
/// Called after iteration `it` completes when it is a multiple of
/// train.checkpoint_interval (if nonzero).
using CheckpointSink = std::function<void(std::size_t it)>;

enum class CheckpointKind { Pretrain = 0, Phase1 = 1, Phase2 = 2 };

/// Bookkeeping stored under "meta.*" in every checkpoint.
struct CheckpointMeta {
  CheckpointKind kind = CheckpointKind::Pretrain;
  std::size_t iteration = 0;
  std::uint64_t generator_hash = 0;
  Rng::State rng{};
  std::string config;  // dump_config text
};
void put_meta(NamedTensors& ckpt, const CheckpointMeta& meta);
CheckpointMeta get_meta(const NamedTensors& ckpt);
/// Reads the generator of a pretraining checkpoint and verifies its hash.
Generator generator_from_checkpoint(const NamedTensors& ckpt, const ToyDims& dims);
/// Throws HashMismatch when the checkpoint was produced against another
/// generator.
void require_generator(const NamedTensors& ckpt, const Generator& G);

/// Training / held-out images for the configured data mode. Self-inversion
/// draws targets from G itself; procedural draws shapes images.
struct Dataset {
  Tensor train;  // [n,3,R,R]
  Tensor test;
};
Dataset make_dataset(const TrainConfig& cfg, const Generator& G);

/// Adversarial pretraining of the toy generator and discriminator on
/// procedural images (no reconstruction terms).
class Pretrainer {
 public:
  explicit Pretrainer(TrainConfig cfg);
  void restore(const NamedTensors& ckpt);
  NamedTensors checkpoint() const;

  TrainLogRow step();
  void run(const LogSink& log = {}, const CheckpointSink& ckpt = {});

  std::size_t iteration() const noexcept { return iteration_; }
  const NamedTensors& generator_params() const noexcept { return g_; }
  const NamedTensors& discriminator_params() const noexcept { return d_; }

 private:
  TrainConfig cfg_;
  NamedTensors g_, d_;
  Adam opt_g_, opt_d_;
  Rng rng_;
  std::size_t iteration_ = 0;
  std::vector<LayerSpec> table_;
};

/// Runs pretraining for cfg.pretrain.iters and returns the checkpoint.
NamedTensors pretrain_gan(const TrainConfig& cfg, const LogSink& log = {});

/// Mean D(real) - mean D(fake) on held-out procedural images and fresh
/// generator samples.
double discriminator_gap(const TrainConfig& cfg, const NamedTensors& ckpt, std::size_t n);

/// Phase I: trains E1 on rec_loss(x, G(E1(x), theta)).
class Phase1Trainer {
 public:
  Phase1Trainer(TrainConfig cfg, Generator G, Tensor train_images);
  void restore(const NamedTensors& ckpt);
  NamedTensors checkpoint() const;

  TrainLogRow step();
  void run(const LogSink& log = {}, const CheckpointSink& ckpt = {});

  std::size_t iteration() const noexcept { return iteration_; }
  const NamedTensors& encoder() const noexcept { return e1_; }

 private:
  TrainConfig cfg_;
  Generator G_;
  Tensor train_;
  ProxyFeatureNet proxy_;
  NamedTensors e1_;
  Adam opt_;
  Rng rng_;
  std::size_t iteration_ = 0;
};

/// Phase II: trains E2, the hypernetworks and D with E1 and theta frozen.
class Phase2Trainer {
 public:
  /// `d_init` holds the pretrained "d.*" parameters.
  Phase2Trainer(TrainConfig cfg, Generator G, NamedTensors e1, NamedTensors d_init,
                Tensor train_images);
  void restore(const NamedTensors& ckpt);
  NamedTensors checkpoint() const;

  TrainLogRow step();
  void run(const LogSink& log = {}, const CheckpointSink& ckpt = {});

  std::size_t iteration() const noexcept { return iteration_; }
  /// "e2.*" and "hyper.*" parameters.
  NamedTensors appearance_encoder() const;
  NamedTensors hypernet() const;
  const NamedTensors& discriminator() const noexcept { return d_; }
  const NamedTensors& content_encoder() const noexcept { return e1_; }
  const Generator& generator() const noexcept { return G_; }

  /// (x, x_hat_w, x_hat) for the given training rows under the current
  /// parameters, without updating anything.
  struct Preview {
    Tensor x, xw, xhat;
  };
  Preview preview(std::span<const std::size_t> rows) const;

 private:
  struct Forward;
  Forward forward(Graph& g, std::span<const std::size_t> rows, bool adversarial) const;

  TrainConfig cfg_;
  Generator G_;
  NamedTensors e1_;
  Tensor train_, w_cache_, xw_cache_;
  ProxyFeatureNet proxy_;
  NamedTensors enc_, d_;  // enc_ holds e2.* and hyper.*
  Adam opt_enc_, opt_disc_;
  Rng rng_;
  std::size_t iteration_ = 0;
};

}  // namespace hyperinv

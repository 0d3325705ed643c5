#pragma once
// Training objectives and loop: the multi-parallel loss (reconstruction +
// translation cross-entropy + the three KL families under one trade-off
// weight), the partially-missing-sample procedure (pseudo-fill, ground-truth
// shift latents, inner-loop re-disentanglement), decoupled-weight-decay Adam
// with a linearly decayed learning rate, and a seed-deterministic epoch loop
// whose gradient reduction is independent of the worker count.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xlat/corpus.hpp"
#include "xlat/model.hpp"
#include "xlat/tensor.hpp"

namespace xlat::train {

struct LossBreakdown {
  std::vector<double> ce;        // per target language; 0 when masked out
  std::vector<uint8_t> ce_mask;  // 1 iff CE was computed for that language
  std::vector<double> mse;       // per language flag-reconstruction error
  std::vector<double> kl_specific;
  double kl_shared = 0.0;
  std::vector<double> kl_shift;
  double lambda = 0.0;
  double total = 0.0;
};

// Canonical fixed-order recomposition:
//   (1+λ)·(Σ ce + Σ mse) + (1+λ)·Σ kl_specific + kl_shared + λ·Σ kl_shift
// with every Σ running over languages in ascending index order.
double compose_total(const LossBreakdown& b);
// d total / dλ implied by the stored components.
double lambda_slope(const LossBreakdown& b);

enum class MissingStrategy {
  kPartial,       // Algorithm-style pseudo-filled training
  kParallelOnly,  // drop partially missing samples (baseline)
};

struct TrainConfig {
  double lambda = 1e-3;
  double lr = 1e-4;  // linearly decayed to 0 over the full run
  int batch_size = 16;
  int max_epochs = 1;
  uint64_t seed = 0;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int workers = 1;
  double mse_weight = 1.0;  // multiplier inside the first loss term
  MissingStrategy missing = MissingStrategy::kPartial;
  std::string pseudo_strategy = "uniform";  // only uniform is implemented
  // Algorithm ambiguity switch: when true the inner loop also runs over
  // shift latents of pseudo-filled languages (default restricts to
  // ground-truth languages).
  bool inner_loop_all_languages = false;
  int64_t eval_max_new = 64;  // validation decode ceiling
};

void validate_train_config(const TrainConfig& cfg);

// A loss with its differentiable total still attached to the tape.
struct LossGraph {
  nd::Tensor total;
  LossBreakdown breakdown;
};

// Full losses need every language present (MissingInstance otherwise).
// noise_seed drives reparameterization noise and the per-target choice of
// translation source language.
LossGraph multi_parallel_graph(const corpus::MultiParallelSample& sample,
                               const corpus::Vocabulary& vocab,
                               model::BoundParams& bp, double lambda,
                               double mse_weight, uint64_t noise_seed);
LossBreakdown loss_multi_parallel(const corpus::MultiParallelSample& sample,
                                  const corpus::Vocabulary& vocab,
                                  const model::ModelParams& params,
                                  double lambda, uint64_t noise_seed);

// Per-language pools of candidate pseudo instances (token sequences of
// training samples where that language is present).
struct PseudoPool {
  std::vector<std::vector<const std::vector<std::string>*>> by_language;
  static PseudoPool build(const corpus::SemiParallelCorpus& train_corpus);
};

// Partially-missing-sample loss: pseudo-fill the absent languages from the
// pool, take shift-shared latents of the present (ground-truth) languages,
// and for each of them re-disentangle the reconstructed parallel set and
// accumulate the loss terms; CE only ever targets present languages.
LossGraph partially_missing_graph(const corpus::MultiParallelSample& sample,
                                  const PseudoPool& pool,
                                  const corpus::Vocabulary& vocab,
                                  model::BoundParams& bp,
                                  const TrainConfig& cfg, uint64_t seed);

// -- optimizer -------------------------------------------------------------

struct OptState {
  std::vector<double> m;  // first-moment accumulator
  std::vector<double> v;  // second-moment accumulator
  int64_t step = 0;
  double weight_decay = 0.0;

  static OptState init(size_t n_params, double weight_decay);
};

// One decoupled-weight-decay Adam update: bias-corrected moment step first,
// then the multiplicative decay, both scaled by the supplied learning rate.
void adamw_step(std::vector<double>& params, const std::vector<double>& grads,
                OptState& state, double lr, double beta1, double beta2,
                double eps);

// Linear decay from `lr0` to 0 across `total_steps` (step counts from 0).
double linear_lr(double lr0, int64_t step, int64_t total_steps);

// Builds the sample's loss graph, runs one backward sweep, and applies one
// optimizer step (gradients of the whole inner loop accumulate beforehand).
LossBreakdown step_partially_missing(const corpus::MultiParallelSample& sample,
                                     const PseudoPool& pool,
                                     const corpus::Vocabulary& vocab,
                                     model::ModelParams& params,
                                     OptState& state, const TrainConfig& cfg,
                                     uint64_t seed);

// -- training loop -----------------------------------------------------

struct EpochMetrics {
  int epoch = 0;
  int64_t step = 0;  // optimizer steps completed so far
  double total = 0.0, ce = 0.0, mse = 0.0;
  double kl_specific = 0.0, kl_shared = 0.0, kl_shift = 0.0;
  std::optional<double> val_bleu;  // mean over directions, when evaluated
};

struct TrainResult {
  model::ModelParams params;
  std::vector<EpochMetrics> history;
  std::string metrics_csv;  // epoch,step,total,ce,mse,... one row per epoch
};

// Seeded epoch loop: shuffled sample order, per-sample loss graphs evaluated
// by `cfg.workers` threads, gradients reduced in sample order (bit-identical
// for any worker count), one optimizer step per batch, optional per-epoch
// validation BLEU, checkpoint written per epoch when out_dir is non-empty.
TrainResult train(const corpus::SemiParallelCorpus& train_corpus,
                  const corpus::SemiParallelCorpus* val_corpus,
                  const corpus::Vocabulary& vocab,
                  const model::ModelConfig& mcfg, const TrainConfig& cfg,
                  const std::string& out_dir = "");

}  // namespace xlat::train

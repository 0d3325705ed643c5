#include "xlat/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>
#include <utility>

#include "xlat/evaluate.hpp"
#include "xlat/gaussian.hpp"
#include "xlat/rng.hpp"

namespace xlat::train {

using model::BoundParams;
using model::EncodedInstance;
using nd::Tensor;

// -- composition -----------------------------------------------------------

double compose_total(const LossBreakdown& b) {
  double s_ce = 0.0, s_mse = 0.0, s_spec = 0.0, s_shift = 0.0;
  for (double v : b.ce) s_ce += v;
  for (double v : b.mse) s_mse += v;
  for (double v : b.kl_specific) s_spec += v;
  for (double v : b.kl_shift) s_shift += v;
  const double head = (s_ce + s_mse) * (1.0 + b.lambda);
  const double spec = s_spec * (1.0 + b.lambda);
  const double shift = s_shift * b.lambda;
  return ((head + spec) + b.kl_shared) + shift;
}

double lambda_slope(const LossBreakdown& b) {
  double s = 0.0;
  for (double v : b.ce) s += v;
  for (double v : b.mse) s += v;
  for (double v : b.kl_specific) s += v;
  for (double v : b.kl_shift) s += v;
  return s;
}

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
  if (cfg.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (cfg.mse_weight < 0.0) throw ConfigError("mse_weight must be >= 0");
  if (cfg.pseudo_strategy != "uniform")
    throw ConfigError("unknown pseudo-instance strategy '" +
                      cfg.pseudo_strategy + "'");
}

// -- graph helpers -----------------------------------------------------

namespace {

Tensor fold_sum(const std::vector<Tensor>& parts) {
  Tensor acc;
  for (const Tensor& t : parts) acc = acc.defined() ? nd::add(acc, t) : t;
  return acc.defined() ? acc : Tensor::scalar(0.0);
}

std::vector<int> teacher_ids(const corpus::Vocabulary& v,
                             const std::vector<std::string>& code) {
  std::vector<int> out;
  out.reserve(code.size() + 1);
  for (const auto& t : code) out.push_back(v.id_of(t));
  out.push_back(v.eos);
  return out;
}

Tensor noise_tensor(Rng& rng, int64_t latent) {
  return Tensor::constant({1, latent},
                          rng.normal_vec(static_cast<size_t>(latent)));
}

// Mean-squared error against the frozen (gradient-severed) target.
Tensor mse_against(const Tensor& prediction, const Tensor& target,
                   double weight) {
  const Tensor diff = nd::sub(prediction, nd::detach(target));
  return nd::mul(nd::mean(nd::mul(diff, diff)), Tensor::scalar(weight));
}

// Sums each language's contribution list, fills the per-language component
// values, and composes the total exactly as compose_total does.
LossGraph compose_graph(int n, double lambda,
                        std::vector<std::vector<Tensor>>& ce_acc,
                        std::vector<std::vector<Tensor>>& mse_acc,
                        std::vector<std::vector<Tensor>>& spec_acc,
                        std::vector<Tensor>& shared_acc,
                        std::vector<std::vector<Tensor>>& shift_acc) {
  LossGraph g;
  g.breakdown.lambda = lambda;
  g.breakdown.ce.assign(static_cast<size_t>(n), 0.0);
  g.breakdown.ce_mask.assign(static_cast<size_t>(n), 0);
  g.breakdown.mse.assign(static_cast<size_t>(n), 0.0);
  g.breakdown.kl_specific.assign(static_cast<size_t>(n), 0.0);
  g.breakdown.kl_shift.assign(static_cast<size_t>(n), 0.0);

  std::vector<Tensor> ce_lang, mse_lang, spec_lang, shift_lang;
  for (int i = 0; i < n; ++i) {
    const size_t ui = static_cast<size_t>(i);
    ce_lang.push_back(fold_sum(ce_acc[ui]));
    mse_lang.push_back(fold_sum(mse_acc[ui]));
    spec_lang.push_back(fold_sum(spec_acc[ui]));
    shift_lang.push_back(fold_sum(shift_acc[ui]));
    g.breakdown.ce[ui] = ce_lang.back().item();
    g.breakdown.ce_mask[ui] = ce_acc[ui].empty() ? 0 : 1;
    g.breakdown.mse[ui] = mse_lang.back().item();
    g.breakdown.kl_specific[ui] = spec_lang.back().item();
    g.breakdown.kl_shift[ui] = shift_lang.back().item();
  }
  const Tensor kl_shared = fold_sum(shared_acc);
  g.breakdown.kl_shared = kl_shared.item();

  const Tensor one_plus = Tensor::scalar(1.0 + lambda);
  const Tensor head =
      nd::mul(nd::add(fold_sum(ce_lang), fold_sum(mse_lang)), one_plus);
  const Tensor spec = nd::mul(fold_sum(spec_lang), one_plus);
  const Tensor shift = nd::mul(fold_sum(shift_lang), Tensor::scalar(lambda));
  g.total = nd::add(nd::add(nd::add(head, spec), kl_shared), shift);
  g.breakdown.total = g.total.item();
  return g;
}

}  // namespace

// -- multi-parallel loss -----------------------------------------------

LossGraph multi_parallel_graph(const corpus::MultiParallelSample& sample,
                               const corpus::Vocabulary& vocab,
                               BoundParams& bp, double lambda,
                               double mse_weight, uint64_t noise_seed) {
  const model::ModelConfig& cfg = bp.config();
  const int n = static_cast<int>(cfg.languages.size());
  if (static_cast<int>(sample.entries.size()) != n)
    throw DimMismatch("sample language count does not match the model");
  for (const auto& e : sample.entries)
    if (!e.has_value())
      throw MissingInstance("multi-parallel loss needs every language");

  Rng rng(derive_seed(noise_seed, "mp"));

  std::vector<EncodedInstance> enc;
  std::vector<gauss::GaussianT> q(static_cast<size_t>(n));
  std::vector<gauss::GaussianT> r(static_cast<size_t>(n));
  std::vector<std::pair<std::string, Tensor>> flag_set;
  for (int i = 0; i < n; ++i) {
    enc.push_back(model::encode(
        corpus::encode_input(vocab, *sample.entries[static_cast<size_t>(i)],
                             i),
        bp));
    const std::string& lang = cfg.languages[static_cast<size_t>(i)];
    q[static_cast<size_t>(i)] =
        model::infer_specific(enc.back().flag_rep, lang, bp);
    r[static_cast<size_t>(i)] =
        model::infer_shift(enc.back().flag_rep, lang, bp);
    flag_set.emplace_back(lang, enc.back().flag_rep);
  }
  gauss::GaussianT qs = model::infer_shared(flag_set, bp);

  // Draw order: per-language specific noise (ascending), then shared noise,
  // then one source-language pick per translation target (ascending).
  std::vector<Tensor> z(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    z[static_cast<size_t>(i)] = gauss::reparameterize_t(
        q[static_cast<size_t>(i)], noise_tensor(rng, cfg.latent_dim));
  const Tensor zs =
      gauss::reparameterize_t(qs, noise_tensor(rng, cfg.latent_dim));
  std::vector<int> ce_src(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    int pick = static_cast<int>(rng.below(static_cast<uint64_t>(n - 1)));
    ce_src[static_cast<size_t>(i)] = pick + (pick >= i ? 1 : 0);
  }

  std::vector<std::vector<Tensor>> ce_acc(static_cast<size_t>(n)),
      mse_acc(static_cast<size_t>(n)), spec_acc(static_cast<size_t>(n)),
      shift_acc(static_cast<size_t>(n));
  std::vector<Tensor> shared_acc;

  for (int i = 0; i < n; ++i) {
    const size_t ui = static_cast<size_t>(i);
    const std::string& lang = cfg.languages[ui];
    const Tensor xhat = model::reconstruct_flag(z[ui], zs, lang, bp);
    const std::vector<int> teacher =
        teacher_ids(vocab, *sample.entries[ui]);
    const Tensor logits =
        model::decode_teacher(xhat, enc[static_cast<size_t>(ce_src[ui])].code_rep,
                              lang, teacher, vocab.bos, bp);
    ce_acc[ui].push_back(nd::cross_entropy_rows(
        logits, std::vector<int64_t>(teacher.begin(), teacher.end())));
    mse_acc[ui].push_back(mse_against(xhat, enc[ui].flag_rep, mse_weight));
    spec_acc[ui].push_back(gauss::kl_to_standard_t(q[ui]));
    shift_acc[ui].push_back(gauss::kl_between_t(qs, r[ui]));
  }
  shared_acc.push_back(gauss::kl_to_standard_t(qs));

  return compose_graph(n, lambda, ce_acc, mse_acc, spec_acc, shared_acc,
                       shift_acc);
}

LossBreakdown loss_multi_parallel(const corpus::MultiParallelSample& sample,
                                  const corpus::Vocabulary& vocab,
                                  const model::ModelParams& params,
                                  double lambda, uint64_t noise_seed) {
  BoundParams bp(params, nullptr);
  return multi_parallel_graph(sample, vocab, bp, lambda, 1.0, noise_seed)
      .breakdown;
}

// -- partially-missing loss ----------------------------------------------

PseudoPool PseudoPool::build(const corpus::SemiParallelCorpus& train_corpus) {
  PseudoPool pool;
  pool.by_language.resize(train_corpus.languages.size());
  for (const auto& s : train_corpus.samples)
    for (size_t l = 0; l < s.entries.size(); ++l)
      if (s.entries[l].has_value())
        pool.by_language[l].push_back(&*s.entries[l]);
  return pool;
}

LossGraph partially_missing_graph(const corpus::MultiParallelSample& sample,
                                  const PseudoPool& pool,
                                  const corpus::Vocabulary& vocab,
                                  BoundParams& bp, const TrainConfig& cfg,
                                  uint64_t seed) {
  const model::ModelConfig& mcfg = bp.config();
  const int n = static_cast<int>(mcfg.languages.size());
  if (static_cast<int>(sample.entries.size()) != n)
    throw DimMismatch("sample language count does not match the model");
  if (sample.multi_parallel())
    throw AllPresent("sample has every language; use the multi-parallel loss");
  std::vector<int> present, absent;
  for (int i = 0; i < n; ++i)
    (sample.entries[static_cast<size_t>(i)].has_value() ? present : absent)
        .push_back(i);
  if (present.empty())
    throw MissingInstance("sample has no ground-truth language at all");

  Rng rng(derive_seed(seed, "partial"));

  // (a) pseudo-fill each absent language from the pool, ascending order.
  std::vector<const std::vector<std::string>*> tokens(
      static_cast<size_t>(n), nullptr);
  for (int i : present)
    tokens[static_cast<size_t>(i)] = &*sample.entries[static_cast<size_t>(i)];
  for (int j : absent) {
    const auto& cands = pool.by_language[static_cast<size_t>(j)];
    if (cands.empty())
      throw EmptyPool("no pseudo instance available for language '" +
                      mcfg.languages[static_cast<size_t>(j)] + "'");
    tokens[static_cast<size_t>(j)] =
        cands[static_cast<size_t>(rng.below(cands.size()))];
  }

  // (b) encode the pseudo-filled sample; (c) language-specific and
  // shift-shared posteriors on the raw encodings.
  std::vector<EncodedInstance> enc;
  std::vector<gauss::GaussianT> q_raw(static_cast<size_t>(n));
  std::vector<gauss::GaussianT> r_raw(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    enc.push_back(model::encode(
        corpus::encode_input(vocab, *tokens[static_cast<size_t>(i)], i), bp));
    const std::string& lang = mcfg.languages[static_cast<size_t>(i)];
    q_raw[static_cast<size_t>(i)] =
        model::infer_specific(enc.back().flag_rep, lang, bp);
    r_raw[static_cast<size_t>(i)] =
        model::infer_shift(enc.back().flag_rep, lang, bp);
  }
  std::vector<Tensor> z_raw(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    z_raw[static_cast<size_t>(i)] = gauss::reparameterize_t(
        q_raw[static_cast<size_t>(i)], noise_tensor(rng, mcfg.latent_dim));

  std::vector<std::vector<Tensor>> ce_acc(static_cast<size_t>(n)),
      mse_acc(static_cast<size_t>(n)), spec_acc(static_cast<size_t>(n)),
      shift_acc(static_cast<size_t>(n));
  std::vector<Tensor> shared_acc;

  // Specific-posterior KL of the pseudo-filled encodings (all languages).
  for (int i = 0; i < n; ++i)
    spec_acc[static_cast<size_t>(i)].push_back(
        gauss::kl_to_standard_t(q_raw[static_cast<size_t>(i)]));

  // (d) one pass per ground-truth shift latent (every language when the
  // ambiguity switch is on).
  std::vector<int> anchors = present;
  if (cfg.inner_loop_all_languages) {
    anchors.clear();
    for (int i = 0; i < n; ++i) anchors.push_back(i);
  }
  for (int g : anchors) {
    const Tensor zs_anchor = gauss::reparameterize_t(
        r_raw[static_cast<size_t>(g)], noise_tensor(rng, mcfg.latent_dim));

    // Stage-1 reconstruction of a fully parallel flag set.
    std::vector<std::pair<std::string, Tensor>> stage1;
    for (int j = 0; j < n; ++j) {
      const std::string& lang = mcfg.languages[static_cast<size_t>(j)];
      stage1.emplace_back(
          lang, model::reconstruct_flag(z_raw[static_cast<size_t>(j)],
                                        zs_anchor, lang, bp));
    }

    // Re-disentangle the reconstructed set as if it were multi-parallel.
    std::vector<gauss::GaussianT> q2(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j)
      q2[static_cast<size_t>(j)] = model::infer_specific(
          stage1[static_cast<size_t>(j)].second,
          mcfg.languages[static_cast<size_t>(j)], bp);
    gauss::GaussianT qs2 = model::infer_shared(stage1, bp);

    for (int j = 0; j < n; ++j) {
      spec_acc[static_cast<size_t>(j)].push_back(
          gauss::kl_to_standard_t(q2[static_cast<size_t>(j)]));
      shift_acc[static_cast<size_t>(j)].push_back(gauss::kl_between_t(
          qs2, model::infer_shift(stage1[static_cast<size_t>(j)].second,
                                  mcfg.languages[static_cast<size_t>(j)],
                                  bp)));
    }
    shared_acc.push_back(gauss::kl_to_standard_t(qs2));

    // Stage-2 reconstruction and supervision, ground-truth targets only.
    std::vector<Tensor> z2(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j)
      z2[static_cast<size_t>(j)] = gauss::reparameterize_t(
          q2[static_cast<size_t>(j)], noise_tensor(rng, mcfg.latent_dim));
    const Tensor zs2 =
        gauss::reparameterize_t(qs2, noise_tensor(rng, mcfg.latent_dim));

    for (int j : present) {
      const size_t uj = static_cast<size_t>(j);
      const std::string& lang = mcfg.languages[uj];
      const Tensor xhat = model::reconstruct_flag(z2[uj], zs2, lang, bp);
      // Source code representations come from a present language other than
      // the target when one exists.
      int src = j;
      if (present.size() > 1) {
        int pick = static_cast<int>(
            rng.below(static_cast<uint64_t>(present.size() - 1)));
        int rank = 0;
        for (int cand : present) {
          if (cand == j) continue;
          if (rank == pick) {
            src = cand;
            break;
          }
          ++rank;
        }
      }
      const std::vector<int> teacher = teacher_ids(vocab, *tokens[uj]);
      const Tensor logits = model::decode_teacher(
          xhat, enc[static_cast<size_t>(src)].code_rep, lang, teacher,
          vocab.bos, bp);
      ce_acc[uj].push_back(nd::cross_entropy_rows(
          logits, std::vector<int64_t>(teacher.begin(), teacher.end())));
      mse_acc[uj].push_back(
          mse_against(xhat, enc[uj].flag_rep, cfg.mse_weight));
    }
  }

  return compose_graph(n, cfg.lambda, ce_acc, mse_acc, spec_acc, shared_acc,
                       shift_acc);
}

// -- optimizer -------------------------------------------------------------

OptState OptState::init(size_t n_params, double weight_decay) {
  OptState st;
  st.m.assign(n_params, 0.0);
  st.v.assign(n_params, 0.0);
  st.step = 0;
  st.weight_decay = weight_decay;
  return st;
}

void adamw_step(std::vector<double>& params, const std::vector<double>& grads,
                OptState& state, double lr, double beta1, double beta2,
                double eps) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size())
    throw ShapeMismatch("optimizer state does not match the parameters");
  state.step += 1;
  const double bc1 =
      1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 =
      1.0 - std::pow(beta2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * state.weight_decay;
  for (size_t i = 0; i < params.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    params[i] *= decay;
  }
}

double linear_lr(double lr0, int64_t step, int64_t total_steps) {
  if (total_steps <= 0) return lr0;
  if (step >= total_steps) return 0.0;
  return lr0 * (static_cast<double>(total_steps - step) /
                static_cast<double>(total_steps));
}

LossBreakdown step_partially_missing(const corpus::MultiParallelSample& sample,
                                     const PseudoPool& pool,
                                     const corpus::Vocabulary& vocab,
                                     model::ModelParams& params,
                                     OptState& state, const TrainConfig& cfg,
                                     uint64_t seed) {
  validate_train_config(cfg);
  nd::Tape tape;
  BoundParams bp(params, &tape);
  LossGraph g = partially_missing_graph(sample, pool, vocab, bp, cfg, seed);
  nd::GradMap grads = tape.backward(g.total);
  const std::vector<double> flat = bp.fold_grads(grads);
  adamw_step(params.values(), flat, state, cfg.lr, cfg.beta1, cfg.beta2,
             cfg.adam_eps);
  return g.breakdown;
}

// -- training loop -----------------------------------------------------

namespace {

struct SampleOutcome {
  std::vector<double> grads;
  LossBreakdown breakdown;
};

double sum_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

TrainResult train(const corpus::SemiParallelCorpus& train_corpus,
                  const corpus::SemiParallelCorpus* val_corpus,
                  const corpus::Vocabulary& vocab,
                  const model::ModelConfig& mcfg, const TrainConfig& cfg,
                  const std::string& out_dir) {
  validate_train_config(cfg);
  model::validate_config(mcfg);
  if (mcfg.vocab_size != vocab.size())
    throw ConfigError("model vocab_size does not match the vocabulary");
  if (mcfg.flag_count != vocab.k)
    throw ConfigError("model flag_count does not match the vocabulary");
  if (mcfg.languages != train_corpus.languages)
    throw ConfigError("model languages do not match the corpus");

  // Usable sample indices under the missing-sample strategy.
  std::vector<size_t> usable;
  for (size_t i = 0; i < train_corpus.samples.size(); ++i) {
    if (train_corpus.samples[i].multi_parallel() ||
        cfg.missing == MissingStrategy::kPartial)
      usable.push_back(i);
  }
  if (usable.empty())
    throw EmptyCorpus("no trainable samples under this strategy");

  const PseudoPool pool = PseudoPool::build(train_corpus);
  model::ModelParams params =
      model::ModelParams::init(mcfg, derive_seed(cfg.seed, "init"));
  OptState state = OptState::init(params.values().size(), cfg.weight_decay);

  const int64_t batches_per_epoch =
      static_cast<int64_t>((usable.size() + cfg.batch_size - 1) /
                           static_cast<size_t>(cfg.batch_size));
  const int64_t total_steps = batches_per_epoch * cfg.max_epochs;

  TrainResult result;
  result.metrics_csv =
      "epoch,step,total,ce,mse,kl_specific,kl_shared,kl_shift,val_bleu\n";

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::vector<size_t> order = usable;
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double ep_total = 0, ep_ce = 0, ep_mse = 0, ep_spec = 0, ep_shared = 0,
           ep_shift = 0;

    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t count = std::min(static_cast<size_t>(cfg.batch_size),
                                    order.size() - start);
      std::vector<SampleOutcome> outcomes(count);

      auto run_one = [&](size_t pos) {
        const corpus::MultiParallelSample& s =
            train_corpus.samples[order[start + pos]];
        const uint64_t sample_seed = derive_seed(
            cfg.seed, "sample", static_cast<uint64_t>(epoch),
            static_cast<uint64_t>(start + pos));
        nd::Tape tape;
        BoundParams bp(params, &tape);
        LossGraph g =
            s.multi_parallel()
                ? multi_parallel_graph(s, vocab, bp, cfg.lambda,
                                       cfg.mse_weight, sample_seed)
                : partially_missing_graph(s, pool, vocab, bp, cfg,
                                          sample_seed);
        nd::GradMap gm = tape.backward(g.total);
        outcomes[pos] = SampleOutcome{bp.fold_grads(gm), g.breakdown};
      };

      const int workers =
          std::min<int>(cfg.workers, static_cast<int>(count));
      if (workers <= 1) {
        for (size_t p = 0; p < count; ++p) run_one(p);
      } else {
        std::vector<std::thread> threads;
        threads.reserve(static_cast<size_t>(workers));
        for (int t = 0; t < workers; ++t)
          threads.emplace_back([&, t] {
            for (size_t p = static_cast<size_t>(t); p < count;
                 p += static_cast<size_t>(workers))
              run_one(p);
          });
        for (auto& th : threads) th.join();
      }

      // Fixed-order reduction: identical totals for any worker count.
      std::vector<double> grad(params.values().size(), 0.0);
      for (size_t p = 0; p < count; ++p) {
        const auto& g = outcomes[p].grads;
        for (size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
        const LossBreakdown& b = outcomes[p].breakdown;
        ep_total += b.total;
        ep_ce += sum_of(b.ce);
        ep_mse += sum_of(b.mse);
        ep_spec += sum_of(b.kl_specific);
        ep_shared += b.kl_shared;
        ep_shift += sum_of(b.kl_shift);
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (double& g : grad) g *= inv;

      const double lr = linear_lr(cfg.lr, state.step, total_steps);
      adamw_step(params.values(), grad, state, lr, cfg.beta1, cfg.beta2,
                 cfg.adam_eps);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.step = state.step;
    const double inv_n = 1.0 / static_cast<double>(order.size());
    m.total = ep_total * inv_n;
    m.ce = ep_ce * inv_n;
    m.mse = ep_mse * inv_n;
    m.kl_specific = ep_spec * inv_n;
    m.kl_shared = ep_shared * inv_n;
    m.kl_shift = ep_shift * inv_n;

    if (val_corpus != nullptr) {
      eval::DecodeConfig dc;
      dc.max_new = cfg.eval_max_new;
      eval::EvalMatrix em =
          eval::evaluate_matrix(*val_corpus, params, vocab, dc);
      double sum = 0.0;
      int cells = 0;
      for (const auto& row : em.model)
        for (const auto& cell : row)
          if (cell.present) {
            sum += cell.bleu;
            ++cells;
          }
      if (cells > 0) m.val_bleu = sum / cells;
    }

    result.metrics_csv += std::to_string(m.epoch) + "," +
                          std::to_string(m.step) + "," + format_g17(m.total) +
                          "," + format_g17(m.ce) + "," + format_g17(m.mse) +
                          "," + format_g17(m.kl_specific) + "," +
                          format_g17(m.kl_shared) + "," +
                          format_g17(m.kl_shift) + "," +
                          (m.val_bleu ? format_g17(*m.val_bleu) : "") + "\n";
    result.history.push_back(m);

    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      char name[64];
      std::snprintf(name, sizeof(name), "/epoch_%03d.ckpt", epoch);
      model::save_checkpoint(params, vocab, out_dir + name);
    }
  }

  if (!out_dir.empty()) {
    std::ofstream csv(out_dir + "/metrics.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write metrics CSV");
    csv << result.metrics_csv;
  }
  result.params = std::move(params);
  return result;
}

}  // namespace xlat::train

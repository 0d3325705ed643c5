#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "xlat/corpus.hpp"
#include "xlat/discrete.hpp"
#include "xlat/evaluate.hpp"
#include "xlat/gaussian.hpp"
#include "xlat/model.hpp"
#include "xlat/rng.hpp"
#include "xlat/tensor.hpp"
#include "xlat/train.hpp"

using namespace xlat;
using namespace xlat::nd;
using namespace xlat::gauss;

namespace {

std::vector<double> rand_vec(Rng& rng, size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = 2.0 * rng.uniform() - 1.0;
  return v;
}

void BM_matmul_forward(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(1);
  Tensor a = Tensor::constant({n, n}, rand_vec(rng, n * n));
  Tensor b = Tensor::constant({n, n}, rand_vec(rng, n * n));
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_matmul_forward)->Arg(32)->Arg(64)->Arg(128);

void BM_matmul_train_step(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(2);
  auto av = rand_vec(rng, n * n);
  auto bv = rand_vec(rng, n * n);
  for (auto _ : state) {
    Tape tape;
    Tensor a = Tensor::leaf({n, n}, av, tape);
    Tensor b = Tensor::leaf({n, n}, bv, tape);
    Tensor loss = mean(tanh(matmul(a, b)));
    GradMap g = tape.backward(loss);
    benchmark::DoNotOptimize(g.at(a.node()).data());
  }
}
BENCHMARK(BM_matmul_train_step)->Arg(32)->Arg(64);

void BM_softmax_rows(benchmark::State& state) {
  Rng rng(3);
  Tensor x = Tensor::constant({64, 64}, rand_vec(rng, 64 * 64));
  for (auto _ : state) {
    Tensor s = softmax(x, 1);
    benchmark::DoNotOptimize(s.values().data());
  }
}
BENCHMARK(BM_softmax_rows);

void BM_gaussian_kl(benchmark::State& state) {
  Rng rng(4);
  DiagGaussian q = make_gaussian(rand_vec(rng, 256), rand_vec(rng, 256));
  DiagGaussian r = make_gaussian(rand_vec(rng, 256), rand_vec(rng, 256));
  for (auto _ : state) {
    double kl = kl_between(q, r);
    benchmark::DoNotOptimize(kl);
  }
}
BENCHMARK(BM_gaussian_kl);

struct DeskFixture {
  corpus::SemiParallelCorpus c;
  corpus::Vocabulary v{};
  model::ModelParams params;

  DeskFixture() {
    corpus::GenerateConfig gc;
    gc.n_langs = 3;
    gc.sample_count = 16;
    gc.missing_rates = {0, 0, 0};
    gc.seed = 11;
    c = corpus::generate_corpus(gc);
    v = corpus::build_vocabulary(c, 4);
    model::ModelConfig mc;
    mc.vocab_size = v.size();
    mc.model_dim = 64;
    mc.n_heads = 4;
    mc.enc_layers = 1;
    mc.dec_layers = 1;
    mc.latent_dim = 16;
    mc.flag_count = v.k;
    mc.ffn_mult = 2;
    mc.max_len = 64;
    mc.languages = c.languages;
    params = model::ModelParams::init(mc, 5);
  }
};

const DeskFixture& desk() {
  static DeskFixture f;
  return f;
}

void BM_encoder_forward(benchmark::State& state) {
  const DeskFixture& f = desk();
  const std::vector<int> ids = corpus::encode_input(
      f.v, *f.c.samples[0].entries[0], 0);
  for (auto _ : state) {
    model::BoundParams bp(f.params, nullptr);
    model::EncodedInstance enc = model::encode(ids, bp);
    benchmark::DoNotOptimize(enc.flag_rep.values().data());
  }
}
BENCHMARK(BM_encoder_forward);

void BM_loss_forward_backward(benchmark::State& state) {
  const DeskFixture& f = desk();
  for (auto _ : state) {
    Tape tape;
    model::BoundParams bp(f.params, &tape);
    train::LossGraph g =
        train::multi_parallel_graph(f.c.samples[0], f.v, bp, 1e-3, 1.0, 9);
    GradMap grads = tape.backward(g.total);
    benchmark::DoNotOptimize(grads.size());
  }
}
BENCHMARK(BM_loss_forward_backward);

void BM_corpus_bleu(benchmark::State& state) {
  Rng rng(6);
  std::vector<std::vector<std::string>> cands, refs;
  for (int i = 0; i < 100; ++i) {
    std::vector<std::string> ref;
    for (int t = 0; t < 24; ++t)
      ref.push_back("tok" + std::to_string(rng.below(40)));
    std::vector<std::string> cand = ref;
    if (!cand.empty()) cand[rng.below(cand.size())] = "oops";
    refs.push_back(std::move(ref));
    cands.push_back(std::move(cand));
  }
  for (auto _ : state) {
    eval::BleuReport r = eval::bleu4(cands, refs);
    benchmark::DoNotOptimize(r.bleu);
  }
}
BENCHMARK(BM_corpus_bleu);

void BM_bound_enumeration(benchmark::State& state) {
  const info::FactoredModel m = info::random_factored_model(3, 3, 3, 2, 2);
  for (auto _ : state) {
    info::BoundsReport rep = info::verify_bounds(m, 1.0);
    benchmark::DoNotOptimize(rep.combined.gap);
  }
}
BENCHMARK(BM_bound_enumeration);

}  // namespace

BENCHMARK_MAIN();

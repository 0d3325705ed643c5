#include "xlat/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <thread>
#include <utility>

#include "xlat/rng.hpp"

namespace xlat::eval {

using model::BoundParams;
using model::EncodedInstance;
using nd::Tensor;

namespace {

int lang_index_in(const std::vector<std::string>& languages,
                  const std::string& lang) {
  for (size_t i = 0; i < languages.size(); ++i)
    if (languages[i] == lang) return static_cast<int>(i);
  throw UnknownLanguage("language '" + lang + "' is not registered");
}

struct BeamHyp {
  std::vector<int> tokens;
  double score = 0.0;  // summed token log-probabilities
  bool done = false;
};

// Log-softmax of one logit row, evaluated outside the graph.
std::vector<double> log_probs_of_row(const double* row, int64_t vocab) {
  double mx = row[0];
  for (int64_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
  double sum = 0.0;
  for (int64_t j = 0; j < vocab; ++j) sum += std::exp(row[j] - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(static_cast<size_t>(vocab));
  for (int64_t j = 0; j < vocab; ++j) out[static_cast<size_t>(j)] = row[j] - lse;
  return out;
}

// Width-limited beam search over the same decoder as greedy generation;
// hypotheses are ranked by total log-probability with deterministic
// tie-breaking (lower token ids first).
model::Generated decode_beam(const Tensor& target_flag_rep,
                             const Tensor& source_code_rep,
                             const std::string& lang, int bos, int eos,
                             int64_t max_new, int width, BoundParams& bp) {
  const model::ModelConfig& cfg = bp.config();
  std::vector<BeamHyp> beam{BeamHyp{}};
  std::vector<BeamHyp> finished;
  for (int64_t step = 0; step < max_new; ++step) {
    std::vector<BeamHyp> expanded;
    for (const BeamHyp& h : beam) {
      if (h.done) continue;
      std::vector<int> input{bos};
      input.insert(input.end(), h.tokens.begin(), h.tokens.end());
      if (static_cast<int64_t>(input.size()) > cfg.max_len - 1) continue;
      std::vector<int> teacher = h.tokens;
      teacher.push_back(eos);  // length placeholder; logits of last row used
      const Tensor logits = model::decode_teacher(
          target_flag_rep, source_code_rep, lang, teacher, bos, bp);
      const int64_t last = logits.shape()[0] - 1;
      const auto lp =
          log_probs_of_row(logits.values().data() + last * cfg.vocab_size,
                           cfg.vocab_size);
      // Top `width` continuations of this hypothesis.
      std::vector<int> order(lp.size());
      for (size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);
      std::partial_sort(order.begin(),
                        order.begin() + std::min<size_t>(order.size(),
                                                         static_cast<size_t>(width)),
                        order.end(), [&](int a, int b) {
                          if (lp[static_cast<size_t>(a)] !=
                              lp[static_cast<size_t>(b)])
                            return lp[static_cast<size_t>(a)] >
                                   lp[static_cast<size_t>(b)];
                          return a < b;
                        });
      for (int r = 0; r < width && r < static_cast<int>(order.size()); ++r) {
        BeamHyp next = h;
        next.score += lp[static_cast<size_t>(order[static_cast<size_t>(r)])];
        const int tok = order[static_cast<size_t>(r)];
        if (tok == eos) {
          next.done = true;
          finished.push_back(std::move(next));
        } else {
          next.tokens.push_back(tok);
          expanded.push_back(std::move(next));
        }
      }
    }
    if (expanded.empty()) break;
    std::sort(expanded.begin(), expanded.end(),
              [](const BeamHyp& a, const BeamHyp& b) {
                if (a.score != b.score) return a.score > b.score;
                return a.tokens < b.tokens;
              });
    if (static_cast<int>(expanded.size()) > width) expanded.resize(width);
    beam = std::move(expanded);
  }

  model::Generated out;
  const BeamHyp* best = nullptr;
  for (const BeamHyp& h : finished)
    if (best == nullptr || h.score > best->score ||
        (h.score == best->score && h.tokens < best->tokens))
      best = &h;
  if (best != nullptr) {
    out.tokens = best->tokens;
    out.truncated = false;
    return out;
  }
  // Nothing reached EOS within the ceiling: report the best live prefix.
  for (const BeamHyp& h : beam)
    if (best == nullptr || h.score > best->score) best = &h;
  if (best != nullptr) out.tokens = best->tokens;
  out.truncated = true;
  return out;
}

}  // namespace

TranslationResult translate(const TranslationRequest& req,
                            const model::ModelParams& params,
                            const corpus::Vocabulary& vocab) {
  const model::ModelConfig& cfg = params.config();
  if (req.source_lang == req.target_lang)
    throw ConfigError("source and target language must differ");
  const int src = lang_index_in(cfg.languages, req.source_lang);
  cfg.lang_index(req.target_lang);
  if (req.decode.max_new < 1) throw ConfigError("max length must be >= 1");
  if (req.decode.beam_width < 1) throw ConfigError("beam width must be >= 1");

  BoundParams bp(params, nullptr);
  const std::vector<int> ids = corpus::encode_input(vocab, req.source_tokens,
                                                    src);
  EncodedInstance enc = model::encode(ids, bp);

  // z_s comes from the source language's shift-shared projector: the full
  // parallel set is unavailable at inference time.
  gauss::GaussianT shift = model::infer_shift(enc.flag_rep, req.source_lang,
                                              bp);
  Tensor z_shared;
  Tensor z_target;
  if (req.decode.deterministic) {
    z_shared = shift.mean;
    z_target = Tensor::zeros({1, cfg.latent_dim});  // prior mean
  } else {
    Rng rng(derive_seed(req.decode.seed, "translate"));
    z_shared = gauss::reparameterize_t(
        shift, Tensor::constant({1, cfg.latent_dim},
                                rng.normal_vec(static_cast<size_t>(
                                    cfg.latent_dim))));
    z_target = Tensor::constant(
        {1, cfg.latent_dim},
        rng.normal_vec(static_cast<size_t>(cfg.latent_dim)));
  }
  const Tensor target_flags =
      model::reconstruct_flag(z_target, z_shared, req.target_lang, bp);

  model::Generated gen =
      req.decode.beam_width == 1
          ? model::decode_greedy(target_flags, enc.code_rep, req.target_lang,
                                 vocab.bos, vocab.eos, req.decode.max_new, bp)
          : decode_beam(target_flags, enc.code_rep, req.target_lang,
                        vocab.bos, vocab.eos, req.decode.max_new,
                        req.decode.beam_width, bp);

  TranslationResult out;
  out.truncated = gen.truncated;
  out.tokens.reserve(gen.tokens.size());
  for (int id : gen.tokens)
    out.tokens.push_back(vocab.id_to_token[static_cast<size_t>(id)]);
  return out;
}

EvalMatrix evaluate_matrix(const corpus::SemiParallelCorpus& test,
                           const model::ModelParams& params,
                           const corpus::Vocabulary& vocab,
                           const DecodeConfig& decode, int workers) {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  const int n = static_cast<int>(test.languages.size());
  EvalMatrix m;
  m.languages = test.languages;
  m.model.assign(static_cast<size_t>(n),
                 std::vector<EvalCell>(static_cast<size_t>(n)));
  m.naive_copy = m.model;

  // Each ordered direction is scored independently into its own matrix
  // slot, so splitting them across threads cannot reorder anything.
  std::vector<std::pair<int, int>> directions;
  for (int src = 0; src < n; ++src)
    for (int tgt = 0; tgt < n; ++tgt)
      if (src != tgt) directions.emplace_back(src, tgt);

  auto score_direction = [&](int src, int tgt) {
    std::vector<std::vector<std::string>> cands, copies, refs;
    for (const auto& s : test.samples) {
      const auto& se = s.entries[static_cast<size_t>(src)];
      const auto& te = s.entries[static_cast<size_t>(tgt)];
      if (!se.has_value() || !te.has_value()) continue;
      TranslationRequest req;
      req.source_tokens = *se;
      req.source_lang = test.languages[static_cast<size_t>(src)];
      req.target_lang = test.languages[static_cast<size_t>(tgt)];
      req.decode = decode;
      cands.push_back(translate(req, params, vocab).tokens);
      copies.push_back(*se);
      refs.push_back(*te);
    }
    EvalCell& cell =
        m.model[static_cast<size_t>(src)][static_cast<size_t>(tgt)];
    EvalCell& base =
        m.naive_copy[static_cast<size_t>(src)][static_cast<size_t>(tgt)];
    if (refs.empty()) return;  // absent direction, not zero
    cell.present = base.present = true;
    cell.pairs = base.pairs = static_cast<int64_t>(refs.size());
    cell.bleu = bleu4(cands, refs).bleu;
    base.bleu = bleu4(copies, refs).bleu;
  };

  const int use = std::min<int>(workers, static_cast<int>(directions.size()));
  if (use <= 1) {
    for (const auto& [src, tgt] : directions) score_direction(src, tgt);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(use));
    for (int t = 0; t < use; ++t)
      threads.emplace_back([&, t] {
        for (size_t d = static_cast<size_t>(t); d < directions.size();
             d += static_cast<size_t>(use))
          score_direction(directions[d].first, directions[d].second);
      });
    for (auto& th : threads) th.join();
  }
  return m;
}

std::string matrix_to_csv(const std::vector<std::string>& languages,
                          const std::vector<std::vector<EvalCell>>& cells) {
  std::string out = "source";
  for (const auto& l : languages) out += "," + l;
  out += "\n";
  char buf[64];
  for (size_t i = 0; i < languages.size(); ++i) {
    out += languages[i];
    for (size_t j = 0; j < languages.size(); ++j) {
      out += ",";
      if (cells[i][j].present) {
        std::snprintf(buf, sizeof(buf), "%.17g", cells[i][j].bleu);
        out += buf;
      }
    }
    out += "\n";
  }
  return out;
}

// -- parameter accounting ------------------------------------------------

namespace {

// Materializes one named array and returns its element count; arrays are
// allocated (and touched) one at a time so even full-scale dims fit.
int64_t instantiate_entry(const model::ParamEntry& e) {
  if (e.numel <= 0) throw ConfigError("parameter entry with no elements");
  std::unique_ptr<double[]> buf(new double[static_cast<size_t>(e.numel)]);
  buf[0] = 1.0;
  buf[static_cast<size_t>(e.numel) - 1] = 1.0;
  return e.numel;
}

std::vector<std::string> synthetic_languages(int n) {
  std::vector<std::string> langs;
  langs.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) langs.push_back("lang" + std::to_string(i + 1));
  return langs;
}

}  // namespace

ParamReport count_params(const model::ModelConfig& dims_template,
                         int n_langs) {
  if (n_langs < 2) throw ConfigError("paradigm comparison needs N >= 2");
  ParamReport r;
  r.n_langs = n_langs;

  model::ModelConfig cfg = dims_template;
  cfg.languages = synthetic_languages(n_langs);

  // Unified paradigm: instantiate each named array of the single model.
  int64_t shared = 0, per_lang_all = 0;
  for (const auto& e : model::build_param_plan(cfg)) {
    const int64_t n = instantiate_entry(e);
    r.unified_total += n;
    const bool is_shared =
        e.name.rfind("enc.", 0) == 0 || e.name.rfind("proj.qs.", 0) == 0;
    (is_shared ? shared : per_lang_all) += n;
  }
  r.unified_shared = shared;
  if (per_lang_all % n_langs != 0)
    throw VerificationFailed("per-language arrays do not divide evenly");
  r.unified_per_language = per_lang_all / n_langs;
  r.unified_formula = r.unified_shared + n_langs * r.unified_per_language;

  // Pairwise paradigm: one standalone encoder-decoder per direction, each
  // instantiated in turn.
  r.direction_count = static_cast<int64_t>(n_langs) * (n_langs - 1);
  model::ModelConfig pair_cfg = dims_template;
  pair_cfg.languages = synthetic_languages(2);
  const auto pair_plan = model::build_pairwise_plan(pair_cfg);
  for (int64_t d = 0; d < r.direction_count; ++d) {
    int64_t this_model = 0;
    for (const auto& e : pair_plan) this_model += instantiate_entry(e);
    r.pairwise_total += this_model;
    r.pairwise_per_model = this_model;
  }
  r.pairwise_formula = r.direction_count * r.pairwise_per_model;

  if (r.unified_total != r.unified_formula ||
      r.pairwise_total != r.pairwise_formula)
    throw VerificationFailed("instantiated counts disagree with the formula");
  r.ratio = static_cast<double>(r.unified_total) /
            static_cast<double>(r.pairwise_total);
  return r;
}

std::string param_report_csv_header() { return "N,paradigm,total_params\n"; }

std::string param_report_csv_row(const ParamReport& r) {
  return std::to_string(r.n_langs) + ",unified," +
         std::to_string(r.unified_total) + "\n" + std::to_string(r.n_langs) +
         ",pairwise," + std::to_string(r.pairwise_total) + "\n";
}

}  // namespace xlat::eval

#pragma once
// Conditional-generation translation between registered languages, the
// per-direction BLEU matrix with its naive-copy baseline, and the parameter
// accounting that compares the unified paradigm against one model per
// direction.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xlat/bleu.hpp"
#include "xlat/corpus.hpp"
#include "xlat/model.hpp"

namespace xlat::eval {

struct DecodeConfig {
  int beam_width = 1;       // 1 = greedy
  int64_t max_new = 64;     // generation length ceiling
  bool deterministic = true;  // prior/shift latents use distribution means
  uint64_t seed = 0;          // sampling seed when not deterministic
};

struct TranslationRequest {
  std::vector<std::string> source_tokens;
  std::string source_lang;
  std::string target_lang;
  DecodeConfig decode;
};

struct TranslationResult {
  std::vector<std::string> tokens;
  bool truncated = false;
};

// encode source -> shift-shared posterior of the source language for z_s ->
// target-language latent from the standard-normal prior -> reconstruct the
// target flag block -> decode against [target flags ; source code reps].
TranslationResult translate(const TranslationRequest& req,
                            const model::ModelParams& params,
                            const corpus::Vocabulary& vocab);

struct EvalCell {
  bool present = false;  // direction had at least one test pair
  double bleu = 0.0;
  int64_t pairs = 0;
};

struct EvalMatrix {
  std::vector<std::string> languages;
  std::vector<std::vector<EvalCell>> model;       // [src][tgt]
  std::vector<std::vector<EvalCell>> naive_copy;  // same pairs, copy source
};

EvalMatrix evaluate_matrix(const corpus::SemiParallelCorpus& test,
                           const model::ModelParams& params,
                           const corpus::Vocabulary& vocab,
                           const DecodeConfig& decode, int workers = 1);

// rows = source language, columns = target language, empty cell = direction
// with no test pairs.
std::string matrix_to_csv(const std::vector<std::string>& languages,
                          const std::vector<std::vector<EvalCell>>& cells);

// -- parameter accounting ------------------------------------------------

struct ParamReport {
  int n_langs = 0;
  // unified paradigm: one shared encoder + N decoders + projector stack
  int64_t unified_total = 0;       // summed from instantiated arrays
  int64_t unified_formula = 0;     // shared + N * per-language
  int64_t unified_shared = 0;      // encoder + pooled-posterior projector
  int64_t unified_per_language = 0;
  // pairwise paradigm: one standalone encoder-decoder per direction
  int64_t direction_count = 0;     // N * (N - 1)
  int64_t pairwise_per_model = 0;
  int64_t pairwise_total = 0;      // summed from instantiated arrays
  int64_t pairwise_formula = 0;    // direction_count * per-model
  double ratio = 0.0;              // unified_total / pairwise_total
};

// Instantiates every named array of both paradigms at the given dims
// (allocated one at a time, so full-scale dims stay within memory) and
// cross-checks the affine formula against the instantiated totals.
ParamReport count_params(const model::ModelConfig& dims_template, int n_langs);

std::string param_report_csv_header();
std::string param_report_csv_row(const ParamReport& r);

}  // namespace xlat::eval

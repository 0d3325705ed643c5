// Semi-parallel multilingual corpus machinery: seeded synthetic generation
// with controlled per-language missingness and task-distribution shift,
// whitespace tokenization, flag-token input encoding, statistics, and a
// line-oriented interchange format (also used to ingest external datasets).
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "xlat/errors.hpp"

namespace xlat::corpus {

struct MultiParallelSample {
  std::string id;
  std::string level;  // "snippet" or "program"
  std::string task;   // task profile when generated; empty when loaded
  // One entry per registered language; absent languages have no value.
  std::vector<std::optional<std::vector<std::string>>> entries;

  int present_count() const;
  bool multi_parallel() const;  // every language present
};

struct SemiParallelCorpus {
  std::vector<std::string> languages;  // names; display ids are 1..N
  std::vector<MultiParallelSample> samples;
  std::string split;  // "train", "val", "test", or empty
};

struct Vocabulary {
  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;
  int pad = 0, cls = 0, sep = 0, bos = 0, eos = 0;
  std::vector<std::vector<int>> flag_ids;  // per language, k ids each
  int k = 0;

  int size() const { return static_cast<int>(id_to_token.size()); }
  int id_of(const std::string& token) const;  // UnknownToken
};

struct GenerateConfig {
  int n_langs = 3;  // 2..number of registered toy languages
  int sample_count = 0;
  // Per-language drop probability in [0, 1).
  std::vector<double> missing_rates;
  // Per-language weights over task profiles (arith, loop); empty means
  // uniform for every language.
  std::vector<std::vector<double>> shift_weights;
  uint64_t seed = 0;
  int max_code_len = 26;
};

// Seeded synthetic corpus. Presence of language i on a task-t sample is an
// independent draw with probability (1 - missing_rate_i) * w_i(t) / max_t'
// w_i(t'), which reduces to 1 - missing_rate_i under uniform weights;
// all-absent masks are redrawn so at least one language survives.
SemiParallelCorpus generate_corpus(const GenerateConfig& cfg);

// Deterministic vocabulary over a corpus: PAD=0, then the control tokens,
// k flag tokens per language, then all corpus tokens sorted.
Vocabulary build_vocabulary(const SemiParallelCorpus& c, int k);

// [CLS] flag_1..flag_k code... [SEP] as token ids.
std::vector<int> encode_input(const Vocabulary& v,
                              const std::vector<std::string>& code,
                              int lang);

struct CorpusStats {
  std::vector<std::string> languages;
  std::vector<int64_t> counts;                  // per-language present count
  std::vector<std::vector<int64_t>> pairwise;   // symmetric; diagonal=counts
  int64_t total_samples = 0;
  int64_t multi_parallel = 0;
  double multi_parallel_fraction = 0.0;
  // Realized language pairs over all possible pairs: sum_{i<j} pairwise /
  // (samples * C(N,2)).
  double bilingual_pair_fraction = 0.0;
  std::unordered_map<std::string, int64_t> task_counts;
};

CorpusStats stats(const SemiParallelCorpus& c);

// One record per line: id TAB level TAB lang=BASE64(text)...; absent
// languages omitted. Text is the space-joined token sequence.
void save_corpus(const SemiParallelCorpus& c, const std::string& path);
SemiParallelCorpus load_corpus_file(const std::string& path);

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);  // ParseError

}  // namespace xlat::corpus

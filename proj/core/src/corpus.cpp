#include "xlat/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "xlat/rng.hpp"
#include "xlat/toylang.hpp"

namespace xlat::corpus {

int MultiParallelSample::present_count() const {
  int n = 0;
  for (const auto& e : entries) n += e.has_value() ? 1 : 0;
  return n;
}

bool MultiParallelSample::multi_parallel() const {
  return present_count() == static_cast<int>(entries.size());
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id.find(token);
  if (it == token_to_id.end())
    throw UnknownToken("token '" + token + "' is not in the vocabulary");
  return it->second;
}

SemiParallelCorpus generate_corpus(const GenerateConfig& cfg) {
  if (cfg.n_langs < 2 || cfg.n_langs > toy::language_count())
    throw ConfigError("language count must be between 2 and " +
                      std::to_string(toy::language_count()));
  if (cfg.sample_count < 1) throw ConfigError("sample count must be positive");
  if (static_cast<int>(cfg.missing_rates.size()) != cfg.n_langs)
    throw ConfigError("need one missing rate per language");
  for (double r : cfg.missing_rates)
    if (!(r >= 0.0 && r < 1.0))
      throw ConfigError("missing rates must lie in [0, 1)");
  const auto& tasks = toy::task_names();
  if (!cfg.shift_weights.empty()) {
    if (static_cast<int>(cfg.shift_weights.size()) != cfg.n_langs)
      throw ConfigError("need one shift-weight row per language");
    for (const auto& row : cfg.shift_weights) {
      if (row.size() != tasks.size())
        throw ConfigError("each shift-weight row needs one weight per task");
      double mx = 0.0;
      for (double w : row) {
        if (!(w >= 0.0)) throw ConfigError("shift weights must be >= 0");
        mx = std::max(mx, w);
      }
      if (mx <= 0.0) throw ConfigError("shift weights must not be all zero");
    }
  }

  SemiParallelCorpus c;
  c.languages.assign(toy::language_names().begin(),
                     toy::language_names().begin() + cfg.n_langs);
  c.split = "train";

  Rng rng(derive_seed(cfg.seed, "corpus"));
  for (int s = 0; s < cfg.sample_count; ++s) {
    const size_t task_idx = rng.below(tasks.size());
    const std::string& task = tasks[task_idx];
    toy::SemanticProgram prog =
        toy::sample_program(rng, task, cfg.max_code_len);

    MultiParallelSample sample;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "p%06d", s);
    sample.id = idbuf;
    sample.task = task;
    sample.level = prog.stmts.size() > 1 ? "program" : "snippet";
    sample.entries.resize(cfg.n_langs);

    // Redraw the presence mask until at least one language survives.
    std::vector<bool> present(cfg.n_langs);
    while (true) {
      bool any = false;
      for (int i = 0; i < cfg.n_langs; ++i) {
        double keep = 1.0 - cfg.missing_rates[i];
        if (!cfg.shift_weights.empty()) {
          const auto& row = cfg.shift_weights[i];
          keep *= row[task_idx] / *std::max_element(row.begin(), row.end());
        }
        present[i] = rng.uniform() < keep;
        any |= present[i];
      }
      if (any) break;
    }
    for (int i = 0; i < cfg.n_langs; ++i)
      if (present[i]) sample.entries[i] = toy::render(prog, i);
    c.samples.push_back(std::move(sample));
  }
  return c;
}

Vocabulary build_vocabulary(const SemiParallelCorpus& c, int k) {
  if (k < 1) throw ConfigError("flag-token count must be at least 1");
  Vocabulary v;
  v.k = k;
  auto add = [&v](const std::string& tok) {
    v.token_to_id.emplace(tok, static_cast<int>(v.id_to_token.size()));
    v.id_to_token.push_back(tok);
  };
  add("[PAD]");
  v.pad = 0;
  add("[CLS]");
  v.cls = 1;
  add("[SEP]");
  v.sep = 2;
  add("[BOS]");
  v.bos = 3;
  add("[EOS]");
  v.eos = 4;
  for (size_t lang = 0; lang < c.languages.size(); ++lang) {
    std::vector<int> flags;
    for (int j = 0; j < k; ++j) {
      flags.push_back(static_cast<int>(v.id_to_token.size()));
      add("[F" + std::to_string(lang + 1) + "_" + std::to_string(j + 1) + "]");
    }
    v.flag_ids.push_back(std::move(flags));
  }
  std::set<std::string> tokens;
  for (const auto& s : c.samples)
    for (const auto& e : s.entries)
      if (e.has_value()) tokens.insert(e->begin(), e->end());
  for (const auto& t : tokens) add(t);
  return v;
}

std::vector<int> encode_input(const Vocabulary& v,
                              const std::vector<std::string>& code,
                              int lang) {
  if (lang < 0 || lang >= static_cast<int>(v.flag_ids.size()))
    throw UnknownLanguage("language index out of range");
  std::vector<int> ids;
  ids.reserve(code.size() + v.k + 2);
  ids.push_back(v.cls);
  for (int f : v.flag_ids[lang]) ids.push_back(f);
  for (const auto& t : code) ids.push_back(v.id_of(t));
  ids.push_back(v.sep);
  return ids;
}

CorpusStats stats(const SemiParallelCorpus& c) {
  const int n = static_cast<int>(c.languages.size());
  CorpusStats st;
  st.languages = c.languages;
  st.counts.assign(n, 0);
  st.pairwise.assign(n, std::vector<int64_t>(n, 0));
  st.total_samples = static_cast<int64_t>(c.samples.size());
  for (const auto& s : c.samples) {
    if (!s.task.empty()) ++st.task_counts[s.task];
    for (int i = 0; i < n; ++i) {
      if (!s.entries[i].has_value()) continue;
      ++st.counts[i];
      ++st.pairwise[i][i];
      for (int j = i + 1; j < n; ++j)
        if (s.entries[j].has_value()) {
          ++st.pairwise[i][j];
          ++st.pairwise[j][i];
        }
    }
    if (s.multi_parallel()) ++st.multi_parallel;
  }
  if (st.total_samples > 0) {
    st.multi_parallel_fraction =
        static_cast<double>(st.multi_parallel) / st.total_samples;
    if (n >= 2) {
      int64_t realized = 0;
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) realized += st.pairwise[i][j];
      st.bilingual_pair_fraction =
          static_cast<double>(realized) /
          (static_cast<double>(st.total_samples) * (n * (n - 1) / 2));
    }
  }
  return st;
}

namespace {

const char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char ch) {
  if (ch >= 'A' && ch <= 'Z') return ch - 'A';
  if (ch >= 'a' && ch <= 'z') return ch - 'a' + 26;
  if (ch >= '0' && ch <= '9') return ch - '0' + 52;
  if (ch == '+') return 62;
  if (ch == '/') return 63;
  return -1;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

}  // namespace

std::string base64_encode(const std::string& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 3 <= bytes.size()) {
    const uint32_t v = (static_cast<uint8_t>(bytes[i]) << 16) |
                       (static_cast<uint8_t>(bytes[i + 1]) << 8) |
                       static_cast<uint8_t>(bytes[i + 2]);
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += kB64Alphabet[(v >> 6) & 63];
    out += kB64Alphabet[v & 63];
    i += 3;
  }
  const size_t rest = bytes.size() - i;
  if (rest == 1) {
    const uint32_t v = static_cast<uint8_t>(bytes[i]) << 16;
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const uint32_t v = (static_cast<uint8_t>(bytes[i]) << 16) |
                       (static_cast<uint8_t>(bytes[i + 1]) << 8);
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += kB64Alphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::string base64_decode(const std::string& text) {
  if (text.size() % 4 != 0)
    throw ParseError("base64 payload length is not a multiple of 4");
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char ch = text[i + j];
      if (ch == '=') {
        if (i + 4 != text.size() || j < 2)
          throw ParseError("unexpected base64 padding");
        vals[j] = 0;
        ++pad;
      } else {
        if (pad > 0) throw ParseError("base64 data after padding");
        vals[j] = b64_value(ch);
        if (vals[j] < 0) throw ParseError("invalid base64 character");
      }
    }
    const uint32_t v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) |
                       vals[3];
    out += static_cast<char>((v >> 16) & 0xff);
    if (pad < 2) out += static_cast<char>((v >> 8) & 0xff);
    if (pad < 1) out += static_cast<char>(v & 0xff);
  }
  return out;
}

void save_corpus(const SemiParallelCorpus& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& s : c.samples) {
    out << s.id << '\t' << s.level;
    for (size_t i = 0; i < s.entries.size(); ++i)
      if (s.entries[i].has_value())
        out << '\t' << c.languages[i] << '='
            << base64_encode(join_tokens(*s.entries[i]));
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

SemiParallelCorpus load_corpus_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");

  struct RawSample {
    std::string id, level;
    std::vector<std::pair<std::string, std::string>> texts;  // lang, text
  };
  std::vector<RawSample> raw;
  std::set<std::string> ids;
  std::set<std::string> langs;

  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      size_t tab = line.find('\t', start);
      fields.push_back(line.substr(
          start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const std::string at = "line " + std::to_string(line_no) + ": ";
    if (fields.size() < 3)
      throw ParseError(at + "expected id, level and at least one language");
    RawSample rs;
    rs.id = fields[0];
    rs.level = fields[1];
    if (rs.id.empty()) throw ParseError(at + "empty id");
    if (!ids.insert(rs.id).second)
      throw DuplicateId(at + "duplicate id '" + rs.id + "'");
    for (size_t f = 2; f < fields.size(); ++f) {
      const size_t eq = fields[f].find('=');
      if (eq == std::string::npos || eq == 0)
        throw ParseError(at + "expected lang=BASE64 field");
      const std::string lang = fields[f].substr(0, eq);
      std::string text;
      try {
        text = base64_decode(fields[f].substr(eq + 1));
      } catch (const ParseError& e) {
        throw ParseError(at + e.what());
      }
      for (const auto& kv : rs.texts)
        if (kv.first == lang)
          throw ParseError(at + "language '" + lang + "' repeated");
      rs.texts.emplace_back(lang, text);
      langs.insert(lang);
    }
    raw.push_back(std::move(rs));
  }

  SemiParallelCorpus c;
  c.languages.assign(langs.begin(), langs.end());
  for (auto& rs : raw) {
    MultiParallelSample s;
    s.id = std::move(rs.id);
    s.level = std::move(rs.level);
    s.entries.resize(c.languages.size());
    for (auto& [lang, text] : rs.texts) {
      const auto it =
          std::find(c.languages.begin(), c.languages.end(), lang);
      s.entries[it - c.languages.begin()] = split_ws(text);
    }
    c.samples.push_back(std::move(s));
  }
  return c;
}

}  // namespace xlat::corpus

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "xlat/corpus.hpp"
#include "xlat/rng.hpp"
#include "xlat/toylang.hpp"

using namespace xlat;
using namespace xlat::toy;
using namespace xlat::corpus;

namespace {

SemanticProgram example_assign() {
  SemanticProgram p;
  p.task_profile = "arith";
  Stmt s;
  s.kind = Stmt::Kind::Assign;
  s.var = "x";
  s.expr.atoms = {"1", "2"};
  s.expr.ops = {'+'};
  p.stmts.push_back(s);
  return p;
}

std::string temp_path(const char* name) {
  return std::string("/tmp/xlat_test_") + name;
}

}  // namespace

TEST_CASE("the fixed example renders per each language's grammar") {
  SemanticProgram p = example_assign();
  CHECK(render(p, 0) ==
        std::vector<std::string>{"set", "x", "=", "1", "+", "2", ";"});
  CHECK(render(p, 1) ==
        std::vector<std::string>{"x", ":=", "add", "(", "1", ",", "2", ")"});
  CHECK(render(p, 2) ==
        std::vector<std::string>{"[", "let", "x", "[", "plus", "1", "2", "]",
                                 "]"});
  CHECK_THROWS_AS(render(p, 3), UnknownLanguage);
  CHECK_THROWS_AS(language_id("cobol"), UnknownLanguage);
  CHECK(language_id("beta") == 1);
}

TEST_CASE("keyword sets are pairwise disjoint") {
  for (int a = 0; a < language_count(); ++a)
    for (int b = a + 1; b < language_count(); ++b) {
      std::set<std::string> sa(keyword_tokens(a).begin(),
                               keyword_tokens(a).end());
      for (const auto& t : keyword_tokens(b)) CHECK(sa.count(t) == 0);
    }
  // Keywords never collide with the shared atoms either.
  std::set<std::string> atoms(shared_atom_tokens().begin(),
                              shared_atom_tokens().end());
  for (int l = 0; l < language_count(); ++l)
    for (const auto& t : keyword_tokens(l)) CHECK(atoms.count(t) == 0);
}

TEST_CASE("rendered programs round-trip through every language") {
  Rng rng(404);
  for (int trial = 0; trial < 50; ++trial) {
    const std::string task = trial % 2 == 0 ? "arith" : "loop";
    SemanticProgram p = sample_program(rng, task, 26);
    for (int lang = 0; lang < language_count(); ++lang) {
      auto tokens = render(p, lang);
      CHECK(static_cast<int>(tokens.size()) <= 26);
      // Every token is either a language keyword or a shared atom.
      std::set<std::string> allowed(keyword_tokens(lang).begin(),
                                    keyword_tokens(lang).end());
      allowed.insert(shared_atom_tokens().begin(), shared_atom_tokens().end());
      for (const auto& t : tokens) CHECK(allowed.count(t) == 1);

      SemanticProgram back = parse(tokens, lang);
      CHECK(equal_programs(p, back));
      CHECK(back.task_profile == task);
      CHECK(render(back, lang) == tokens);
    }
    // Cross-language parallelism: parse language A's rendering, render it in
    // language B, parse again -> same program.
    SemanticProgram via_a = parse(render(p, 0), 0);
    SemanticProgram via_b = parse(render(via_a, 1), 1);
    CHECK(equal_programs(via_b, p));
  }
}

TEST_CASE("malformed token streams raise parse errors") {
  CHECK_THROWS_AS(parse({"set", "x", "=", ";"}, 0), ParseError);
  CHECK_THROWS_AS(parse({"set", "x", "=", "1"}, 0), ParseError);
  CHECK_THROWS_AS(parse({"loop", "2", "{", "}"}, 0), ParseError);
  CHECK_THROWS_AS(parse({"x", ":=", "add", "(", "1", "2", ")"}, 1), ParseError);
  CHECK_THROWS_AS(parse({"[", "iter", "x", "]"}, 2), ParseError);
  CHECK_THROWS_AS(parse({}, 0), ParseError);
  // A loop inside a loop is outside the grammar.
  CHECK_THROWS_AS(parse({"loop", "2", "{", "loop", "2", "{", "say", "1", ";",
                         "}", "}"},
                        0),
                  ParseError);
}

TEST_CASE("generation config is validated") {
  GenerateConfig cfg;
  cfg.n_langs = 3;
  cfg.sample_count = 10;
  cfg.missing_rates = {0.0, 0.0, 0.0};
  cfg.seed = 1;
  CHECK_NOTHROW(generate_corpus(cfg));

  GenerateConfig bad = cfg;
  bad.n_langs = 1;
  CHECK_THROWS_AS(generate_corpus(bad), ConfigError);
  bad = cfg;
  bad.missing_rates = {0.0, 1.0, 0.0};
  CHECK_THROWS_AS(generate_corpus(bad), ConfigError);
  bad = cfg;
  bad.missing_rates = {0.0, 0.0};
  CHECK_THROWS_AS(generate_corpus(bad), ConfigError);
  bad = cfg;
  bad.sample_count = 0;
  CHECK_THROWS_AS(generate_corpus(bad), ConfigError);
  bad = cfg;
  bad.shift_weights = {{1.0, 1.0}, {1.0, 1.0}};
  CHECK_THROWS_AS(generate_corpus(bad), ConfigError);
  bad = cfg;
  bad.shift_weights = {{0.0, 0.0}, {1.0, 1.0}, {1.0, 1.0}};
  CHECK_THROWS_AS(generate_corpus(bad), ConfigError);
}

TEST_CASE("zero missing rates give a fully multi-parallel corpus") {
  GenerateConfig cfg;
  cfg.n_langs = 3;
  cfg.sample_count = 50;
  cfg.missing_rates = {0.0, 0.0, 0.0};
  cfg.seed = 2;
  SemiParallelCorpus c = generate_corpus(cfg);
  CHECK(c.samples.size() == 50);
  for (const auto& s : c.samples) CHECK(s.multi_parallel());
  CorpusStats st = stats(c);
  CHECK(st.multi_parallel_fraction == 1.0);
  CHECK(st.bilingual_pair_fraction == 1.0);
}

TEST_CASE("missingness yields the expected multi-parallel fraction") {
  GenerateConfig cfg;
  cfg.n_langs = 3;
  cfg.sample_count = 1000;
  cfg.missing_rates = {0.0, 0.4, 0.4};
  cfg.seed = 7;
  SemiParallelCorpus c = generate_corpus(cfg);
  CorpusStats st = stats(c);
  // Expected 0.6^2 = 0.36; the exact count is pinned by the seed.
  CHECK(st.multi_parallel_fraction > 0.30);
  CHECK(st.multi_parallel_fraction < 0.42);
  // Language 1 never drops.
  CHECK(st.counts[0] == 1000);
  // Regeneration is bit-identical.
  SemiParallelCorpus c2 = generate_corpus(cfg);
  CorpusStats st2 = stats(c2);
  CHECK(st2.multi_parallel == st.multi_parallel);
  for (int i = 0; i < 3; ++i) CHECK(st2.counts[i] == st.counts[i]);
  REQUIRE(c2.samples.size() == c.samples.size());
  for (size_t i = 0; i < c.samples.size(); ++i) {
    CHECK(c.samples[i].id == c2.samples[i].id);
    for (int l = 0; l < 3; ++l)
      CHECK(c.samples[i].entries[l] == c2.samples[i].entries[l]);
  }
}

TEST_CASE("pairwise counts are symmetric with sane diagonals") {
  GenerateConfig cfg;
  cfg.n_langs = 3;
  cfg.sample_count = 300;
  cfg.missing_rates = {0.2, 0.4, 0.3};
  cfg.seed = 11;
  CorpusStats st = stats(generate_corpus(cfg));
  for (int i = 0; i < 3; ++i) {
    CHECK(st.pairwise[i][i] == st.counts[i]);
    for (int j = 0; j < 3; ++j) {
      CHECK(st.pairwise[i][j] == st.pairwise[j][i]);
      CHECK(st.pairwise[i][j] <= std::min(st.counts[i], st.counts[j]));
    }
  }
  CHECK(st.multi_parallel_fraction >= 0.0);
  CHECK(st.multi_parallel_fraction <= 1.0);
}

TEST_CASE("task shift skews the distribution of present samples") {
  GenerateConfig cfg;
  cfg.n_langs = 3;
  cfg.sample_count = 2000;
  cfg.missing_rates = {0.0, 0.0, 0.3};
  // Language 3 sees loop tasks nine times as often as arithmetic ones.
  cfg.shift_weights = {{1.0, 1.0}, {1.0, 1.0}, {0.1, 0.9}};
  cfg.seed = 13;
  SemiParallelCorpus c = generate_corpus(cfg);
  int64_t present3 = 0, loops3 = 0;
  for (const auto& s : c.samples) {
    if (!s.entries[2].has_value()) continue;
    ++present3;
    loops3 += s.task == "loop" ? 1 : 0;
  }
  const double frac = static_cast<double>(loops3) / present3;
  CHECK(frac > 0.85);
  CHECK(frac < 0.95);
  // Unshifted languages stay balanced.
  CorpusStats st = stats(c);
  const double arith_share =
      static_cast<double>(st.task_counts.at("arith")) / st.total_samples;
  CHECK(arith_share > 0.45);
  CHECK(arith_share < 0.55);
}

TEST_CASE("vocabulary is contiguous, padded at zero, within budget") {
  GenerateConfig cfg;
  cfg.n_langs = 3;
  cfg.sample_count = 200;
  cfg.missing_rates = {0.0, 0.0, 0.0};
  cfg.seed = 3;
  SemiParallelCorpus c = generate_corpus(cfg);
  Vocabulary v = build_vocabulary(c, 4);
  CHECK(v.id_of("[PAD]") == 0);
  CHECK(v.pad == 0);
  CHECK(v.size() <= 80);
  for (int i = 0; i < v.size(); ++i)
    CHECK(v.id_of(v.id_to_token[i]) == i);
  CHECK(v.flag_ids.size() == 3);
  for (const auto& f : v.flag_ids) CHECK(f.size() == 4);
  // Flag ids are distinct across languages.
  std::set<int> all;
  for (const auto& f : v.flag_ids) all.insert(f.begin(), f.end());
  CHECK(all.size() == 12);
  CHECK_THROWS_AS(build_vocabulary(c, 0), ConfigError);
  CHECK_THROWS_AS(v.id_of("not-a-token"), UnknownToken);
}

TEST_CASE("input encoding follows the flag-sandwich layout") {
  SemiParallelCorpus c;
  c.languages = {"alpha", "beta", "gamma"};
  MultiParallelSample s;
  s.id = "p000000";
  s.level = "program";
  s.task = "arith";
  s.entries = {std::vector<std::string>{"set", "x", "=", "y", ";"},
               std::vector<std::string>{"x", ":=", "y"},
               std::vector<std::string>{"[", "let", "x", "y", "]"}};
  c.samples.push_back(s);
  Vocabulary v = build_vocabulary(c, 2);

  auto ids = encode_input(v, {"x", "y"}, 1);
  CHECK(ids == std::vector<int>{v.cls, v.flag_ids[1][0], v.flag_ids[1][1],
                                v.id_of("x"), v.id_of("y"), v.sep});
  CHECK(ids.size() == 2 + v.k + 2);

  auto degenerate = encode_input(v, {}, 0);
  CHECK(degenerate ==
        std::vector<int>{v.cls, v.flag_ids[0][0], v.flag_ids[0][1], v.sep});

  CHECK_THROWS_AS(encode_input(v, {"notatoken"}, 0), UnknownToken);
  CHECK_THROWS_AS(encode_input(v, {"x"}, 9), UnknownLanguage);
}

TEST_CASE("base64 round-trips and rejects malformed input") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("fo") == "Zm8=");
  CHECK(base64_encode("foo") == "Zm9v");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
  for (const char* s : {"", "a", "ab", "abc", "set x = 1 + 2 ;", "x := y"})
    CHECK(base64_decode(base64_encode(s)) == s);
  CHECK_THROWS_AS(base64_decode("abc"), ParseError);
  CHECK_THROWS_AS(base64_decode("a=bc"), ParseError);
  CHECK_THROWS_AS(base64_decode("!!!!"), ParseError);
}

TEST_CASE("corpus files round-trip exactly") {
  GenerateConfig cfg;
  cfg.n_langs = 3;
  cfg.sample_count = 120;
  cfg.missing_rates = {0.1, 0.3, 0.2};
  cfg.seed = 21;
  SemiParallelCorpus c = generate_corpus(cfg);
  const std::string path = temp_path("roundtrip.tsv");
  save_corpus(c, path);
  SemiParallelCorpus back = load_corpus_file(path);
  REQUIRE(back.languages == c.languages);
  REQUIRE(back.samples.size() == c.samples.size());
  for (size_t i = 0; i < c.samples.size(); ++i) {
    CHECK(back.samples[i].id == c.samples[i].id);
    CHECK(back.samples[i].level == c.samples[i].level);
    for (size_t l = 0; l < c.languages.size(); ++l)
      CHECK(back.samples[i].entries[l] == c.samples[i].entries[l]);
  }
  CorpusStats a = stats(c), b = stats(back);
  CHECK(a.multi_parallel == b.multi_parallel);
  CHECK(a.counts == b.counts);
  std::remove(path.c_str());
}

TEST_CASE("loader reports malformed lines and duplicate ids") {
  const std::string path = temp_path("malformed.tsv");
  {
    FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("only_id\tprogram\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_corpus_file(path), ParseError);
  {
    FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("a\tprogram\talpha=Zm9v\n", f);
    std::fputs("a\tprogram\tbeta=Zm9v\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_corpus_file(path), DuplicateId);
  {
    FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("a\tprogram\talpha=###\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_corpus_file(path), ParseError);
  {
    FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("a\tprogram\t=Zm9v\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_corpus_file(path), ParseError);
  CHECK_THROWS_AS(load_corpus_file("/nonexistent/nope.tsv"), IoError);
  std::remove(path.c_str());

  // Error text carries the line number.
  {
    FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("a\tprogram\talpha=Zm9v\n", f);
    std::fputs("bad\n", f);
    std::fclose(f);
  }
  try {
    load_corpus_file(path);
    CHECK(false);
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("loaded external-style corpora keep language sets and stats") {
  const std::string path = temp_path("external.tsv");
  {
    FILE* f = std::fopen(path.c_str(), "w");
    // Three records over languages {c, java}; one bilingual pair.
    std::string l1 = "r1\tprogram\tjava=" + base64_encode("int a = 1 ;") +
                     "\tc=" + base64_encode("int a = 1 ;") + "\n";
    std::string l2 = "r2\tprogram\tjava=" + base64_encode("class B { }") + "\n";
    std::string l3 = "r3\tsnippet\tc=" + base64_encode("return 0 ;") + "\n";
    std::fputs(l1.c_str(), f);
    std::fputs(l2.c_str(), f);
    std::fputs(l3.c_str(), f);
    std::fclose(f);
  }
  SemiParallelCorpus c = load_corpus_file(path);
  CHECK(c.languages == std::vector<std::string>{"c", "java"});
  CorpusStats st = stats(c);
  CHECK(st.counts == std::vector<int64_t>{2, 2});
  CHECK(st.pairwise[0][1] == 1);
  CHECK(st.multi_parallel == 1);
  CHECK(st.bilingual_pair_fraction == doctest::Approx(1.0 / 3.0));
  std::remove(path.c_str());
}

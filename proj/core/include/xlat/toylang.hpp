// Three tiny imperative languages with pairwise-disjoint keyword sets over a
// shared pool of identifiers and numerals. One abstract program renders into
// all of them, giving ground-truth semantic parallelism: render -> parse
// round-trips to an equal program in every language.
#pragma once

#include <string>
#include <vector>

#include "xlat/errors.hpp"
#include "xlat/rng.hpp"

namespace xlat::toy {

// Arithmetic as a flat left-associative chain keeps the canonical rendering
// unique in every surface syntax.
struct Expr {
  std::vector<std::string> atoms;  // identifiers or single-digit numerals
  std::vector<char> ops;           // '+', '-', '*'; size == atoms.size() - 1
};

struct Stmt {
  enum class Kind { Assign, Print, Loop };
  Kind kind = Kind::Assign;
  std::string var;      // Assign target
  Expr expr;            // Assign / Print payload
  int loop_count = 0;   // Loop repetitions, 1..9
  std::vector<Stmt> body;  // Loop body; never contains another Loop
};

struct SemanticProgram {
  std::vector<Stmt> stmts;
  std::string task_profile;  // "arith" or "loop"
};

int language_count();
const std::vector<std::string>& language_names();
// Zero-based index for a registered name; UnknownLanguage otherwise.
int language_id(const std::string& name);

// Keyword/operator surface tokens owned exclusively by one language.
const std::vector<std::string>& keyword_tokens(int lang);
// Identifiers and numerals shared by all languages.
const std::vector<std::string>& shared_atom_tokens();

std::vector<std::string> render(const SemanticProgram& p, int lang);
SemanticProgram parse(const std::vector<std::string>& tokens, int lang);
bool equal_programs(const SemanticProgram& a, const SemanticProgram& b);

const std::vector<std::string>& task_names();  // {"arith", "loop"}

// Random well-formed program for the task whose rendering fits within
// max_code_len tokens in every language (resamples until it does).
SemanticProgram sample_program(Rng& rng, const std::string& task,
                               int max_code_len);

}  // namespace xlat::toy

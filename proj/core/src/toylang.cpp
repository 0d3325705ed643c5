#include "xlat/toylang.hpp"

#include <algorithm>

namespace xlat::toy {

namespace {

const std::vector<std::string> kLanguages = {"alpha", "beta", "gamma"};
const std::vector<std::string> kTasks = {"arith", "loop"};

const std::vector<std::string> kKeywordsAlpha = {"set", "=", ";",  "say",
                                                 "loop", "{", "}", "+",
                                                 "-",    "*"};
const std::vector<std::string> kKeywordsBeta = {":=", "add", "sub",    "mul",
                                                "(",  ")",   ",",      "emit",
                                                "repeat",    "do",     "end"};
const std::vector<std::string> kKeywordsGamma = {"[",    "]",     "let",
                                                 "show", "iter",  "plus",
                                                 "minus", "times"};

const std::vector<std::string> kIdentifiers = {"x", "y", "z", "u", "v", "w"};

std::vector<std::string> make_shared_atoms() {
  std::vector<std::string> atoms = kIdentifiers;
  for (int d = 0; d <= 9; ++d) atoms.push_back(std::to_string(d));
  return atoms;
}

bool is_identifier(const std::string& t) {
  return std::find(kIdentifiers.begin(), kIdentifiers.end(), t) !=
         kIdentifiers.end();
}
bool is_numeral(const std::string& t) {
  return t.size() == 1 && t[0] >= '0' && t[0] <= '9';
}
bool is_atom(const std::string& t) { return is_identifier(t) || is_numeral(t); }

const char* word_for_op(int lang, char op) {
  if (lang == 1) return op == '+' ? "add" : op == '-' ? "sub" : "mul";
  return op == '+' ? "plus" : op == '-' ? "minus" : "times";
}
char op_for_word(const std::string& w) {
  if (w == "add" || w == "plus") return '+';
  if (w == "sub" || w == "minus") return '-';
  if (w == "mul" || w == "times") return '*';
  return 0;
}

void check_expr(const Expr& e) {
  if (e.atoms.empty() || e.ops.size() + 1 != e.atoms.size())
    throw ParseError("malformed expression chain");
  for (const auto& a : e.atoms)
    if (!is_atom(a)) throw ParseError("unknown atom '" + a + "'");
}

// --- rendering ---------------------------------------------------------

void render_expr_infix(const Expr& e, std::vector<std::string>& out) {
  out.push_back(e.atoms[0]);
  for (size_t i = 0; i < e.ops.size(); ++i) {
    out.push_back(std::string(1, e.ops[i]));
    out.push_back(e.atoms[i + 1]);
  }
}

// Left-nested call style: a+b-c becomes sub ( add ( a , b ) , c ).
void render_expr_calls(const Expr& e, size_t upto,
                       std::vector<std::string>& out) {
  if (upto == 0) {
    out.push_back(e.atoms[0]);
    return;
  }
  out.push_back(word_for_op(1, e.ops[upto - 1]));
  out.push_back("(");
  render_expr_calls(e, upto - 1, out);
  out.push_back(",");
  out.push_back(e.atoms[upto]);
  out.push_back(")");
}

// Left-nested bracket style: a+b-c becomes [ minus [ plus a b ] c ].
void render_expr_brackets(const Expr& e, size_t upto,
                          std::vector<std::string>& out) {
  if (upto == 0) {
    out.push_back(e.atoms[0]);
    return;
  }
  out.push_back("[");
  out.push_back(word_for_op(2, e.ops[upto - 1]));
  render_expr_brackets(e, upto - 1, out);
  out.push_back(e.atoms[upto]);
  out.push_back("]");
}

void render_expr(const Expr& e, int lang, std::vector<std::string>& out) {
  check_expr(e);
  if (lang == 0)
    render_expr_infix(e, out);
  else if (lang == 1)
    render_expr_calls(e, e.ops.size(), out);
  else
    render_expr_brackets(e, e.ops.size(), out);
}

void render_stmt(const Stmt& s, int lang, std::vector<std::string>& out) {
  switch (s.kind) {
    case Stmt::Kind::Assign:
      if (!is_identifier(s.var))
        throw ParseError("assignment target is not an identifier");
      if (lang == 0) {
        out.push_back("set");
        out.push_back(s.var);
        out.push_back("=");
        render_expr(s.expr, lang, out);
        out.push_back(";");
      } else if (lang == 1) {
        out.push_back(s.var);
        out.push_back(":=");
        render_expr(s.expr, lang, out);
      } else {
        out.push_back("[");
        out.push_back("let");
        out.push_back(s.var);
        render_expr(s.expr, lang, out);
        out.push_back("]");
      }
      break;
    case Stmt::Kind::Print:
      if (lang == 0) {
        out.push_back("say");
        render_expr(s.expr, lang, out);
        out.push_back(";");
      } else if (lang == 1) {
        out.push_back("emit");
        out.push_back("(");
        render_expr(s.expr, lang, out);
        out.push_back(")");
      } else {
        out.push_back("[");
        out.push_back("show");
        render_expr(s.expr, lang, out);
        out.push_back("]");
      }
      break;
    case Stmt::Kind::Loop:
      if (s.loop_count < 1 || s.loop_count > 9)
        throw ParseError("loop count out of range");
      for (const auto& inner : s.body)
        if (inner.kind == Stmt::Kind::Loop)
          throw ParseError("nested loops are not part of the grammar");
      if (s.body.empty()) throw ParseError("empty loop body");
      if (lang == 0) {
        out.push_back("loop");
        out.push_back(std::to_string(s.loop_count));
        out.push_back("{");
        for (const auto& inner : s.body) render_stmt(inner, lang, out);
        out.push_back("}");
      } else if (lang == 1) {
        out.push_back("repeat");
        out.push_back(std::to_string(s.loop_count));
        out.push_back("do");
        for (const auto& inner : s.body) render_stmt(inner, lang, out);
        out.push_back("end");
      } else {
        out.push_back("[");
        out.push_back("iter");
        out.push_back(std::to_string(s.loop_count));
        for (const auto& inner : s.body) render_stmt(inner, lang, out);
        out.push_back("]");
      }
      break;
  }
}

// --- parsing ------------------------------------------------------------

struct Cursor {
  const std::vector<std::string>& toks;
  size_t pos = 0;

  bool done() const { return pos >= toks.size(); }
  const std::string& peek() const {
    if (done()) throw ParseError("unexpected end of input");
    return toks[pos];
  }
  std::string take() {
    if (done()) throw ParseError("unexpected end of input");
    return toks[pos++];
  }
  void expect(const std::string& t) {
    std::string got = take();
    if (got != t)
      throw ParseError("expected '" + t + "', found '" + got + "'");
  }
};

Expr parse_expr_infix(Cursor& c) {
  Expr e;
  e.atoms.push_back(c.take());
  while (!c.done() &&
         (c.peek() == "+" || c.peek() == "-" || c.peek() == "*")) {
    e.ops.push_back(c.take()[0]);
    e.atoms.push_back(c.take());
  }
  check_expr(e);
  return e;
}

Expr parse_expr_calls(Cursor& c) {
  char op = op_for_word(c.peek());
  if (op == 0) {
    Expr e;
    e.atoms.push_back(c.take());
    check_expr(e);
    return e;
  }
  c.take();
  c.expect("(");
  Expr inner = parse_expr_calls(c);
  c.expect(",");
  inner.atoms.push_back(c.take());
  inner.ops.push_back(op);
  c.expect(")");
  check_expr(inner);
  return inner;
}

Expr parse_expr_brackets(Cursor& c) {
  if (c.peek() != "[") {
    Expr e;
    e.atoms.push_back(c.take());
    check_expr(e);
    return e;
  }
  c.expect("[");
  char op = op_for_word(c.take());
  if (op == 0) throw ParseError("expected arithmetic word");
  Expr inner = parse_expr_brackets(c);
  inner.atoms.push_back(c.take());
  inner.ops.push_back(op);
  c.expect("]");
  check_expr(inner);
  return inner;
}

Stmt parse_stmt(Cursor& c, int lang, bool allow_loop);

std::vector<Stmt> parse_stmts_until(Cursor& c, int lang,
                                    const std::string& closer,
                                    bool allow_loop) {
  std::vector<Stmt> out;
  while (c.peek() != closer) out.push_back(parse_stmt(c, lang, allow_loop));
  c.expect(closer);
  if (out.empty()) throw ParseError("empty statement block");
  return out;
}

Stmt parse_stmt(Cursor& c, int lang, bool allow_loop) {
  Stmt s;
  if (lang == 0) {
    std::string head = c.take();
    if (head == "set") {
      s.kind = Stmt::Kind::Assign;
      s.var = c.take();
      c.expect("=");
      s.expr = parse_expr_infix(c);
      c.expect(";");
    } else if (head == "say") {
      s.kind = Stmt::Kind::Print;
      s.expr = parse_expr_infix(c);
      c.expect(";");
    } else if (head == "loop" && allow_loop) {
      s.kind = Stmt::Kind::Loop;
      std::string n = c.take();
      if (!is_numeral(n)) throw ParseError("loop count must be a numeral");
      s.loop_count = n[0] - '0';
      c.expect("{");
      s.body = parse_stmts_until(c, lang, "}", false);
    } else {
      throw ParseError("unexpected token '" + head + "'");
    }
  } else if (lang == 1) {
    if (c.peek() == "emit") {
      c.take();
      s.kind = Stmt::Kind::Print;
      c.expect("(");
      s.expr = parse_expr_calls(c);
      c.expect(")");
    } else if (c.peek() == "repeat" && allow_loop) {
      c.take();
      s.kind = Stmt::Kind::Loop;
      std::string n = c.take();
      if (!is_numeral(n)) throw ParseError("loop count must be a numeral");
      s.loop_count = n[0] - '0';
      c.expect("do");
      s.body = parse_stmts_until(c, lang, "end", false);
    } else {
      s.kind = Stmt::Kind::Assign;
      s.var = c.take();
      c.expect(":=");
      s.expr = parse_expr_calls(c);
    }
  } else {
    c.expect("[");
    std::string head = c.take();
    if (head == "let") {
      s.kind = Stmt::Kind::Assign;
      s.var = c.take();
      s.expr = parse_expr_brackets(c);
      c.expect("]");
    } else if (head == "show") {
      s.kind = Stmt::Kind::Print;
      s.expr = parse_expr_brackets(c);
      c.expect("]");
    } else if (head == "iter" && allow_loop) {
      s.kind = Stmt::Kind::Loop;
      std::string n = c.take();
      if (!is_numeral(n)) throw ParseError("loop count must be a numeral");
      s.loop_count = n[0] - '0';
      while (c.peek() != "]") s.body.push_back(parse_stmt(c, lang, false));
      c.expect("]");
      if (s.body.empty()) throw ParseError("empty statement block");
    } else {
      throw ParseError("unexpected token '" + head + "'");
    }
  }
  if (s.kind == Stmt::Kind::Assign && !is_identifier(s.var))
    throw ParseError("assignment target is not an identifier");
  return s;
}

bool equal_exprs(const Expr& a, const Expr& b) {
  return a.atoms == b.atoms && a.ops == b.ops;
}

bool equal_stmts(const Stmt& a, const Stmt& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case Stmt::Kind::Assign:
      return a.var == b.var && equal_exprs(a.expr, b.expr);
    case Stmt::Kind::Print:
      return equal_exprs(a.expr, b.expr);
    case Stmt::Kind::Loop: {
      if (a.loop_count != b.loop_count || a.body.size() != b.body.size())
        return false;
      for (size_t i = 0; i < a.body.size(); ++i)
        if (!equal_stmts(a.body[i], b.body[i])) return false;
      return true;
    }
  }
  return false;
}

void check_lang(int lang) {
  if (lang < 0 || lang >= static_cast<int>(kLanguages.size()))
    throw UnknownLanguage("language index out of range");
}

}  // namespace

int language_count() { return static_cast<int>(kLanguages.size()); }

const std::vector<std::string>& language_names() { return kLanguages; }

int language_id(const std::string& name) {
  for (size_t i = 0; i < kLanguages.size(); ++i)
    if (kLanguages[i] == name) return static_cast<int>(i);
  throw UnknownLanguage("unknown language '" + name + "'");
}

const std::vector<std::string>& keyword_tokens(int lang) {
  check_lang(lang);
  if (lang == 0) return kKeywordsAlpha;
  if (lang == 1) return kKeywordsBeta;
  return kKeywordsGamma;
}

const std::vector<std::string>& shared_atom_tokens() {
  static const std::vector<std::string> atoms = make_shared_atoms();
  return atoms;
}

std::vector<std::string> render(const SemanticProgram& p, int lang) {
  check_lang(lang);
  std::vector<std::string> out;
  if (p.stmts.empty()) throw ParseError("program has no statements");
  for (const auto& s : p.stmts) render_stmt(s, lang, out);
  return out;
}

SemanticProgram parse(const std::vector<std::string>& tokens, int lang) {
  check_lang(lang);
  Cursor c{tokens};
  SemanticProgram p;
  while (!c.done()) p.stmts.push_back(parse_stmt(c, lang, true));
  if (p.stmts.empty()) throw ParseError("program has no statements");
  bool has_loop = false;
  for (const auto& s : p.stmts) has_loop |= s.kind == Stmt::Kind::Loop;
  p.task_profile = has_loop ? "loop" : "arith";
  return p;
}

bool equal_programs(const SemanticProgram& a, const SemanticProgram& b) {
  if (a.stmts.size() != b.stmts.size()) return false;
  for (size_t i = 0; i < a.stmts.size(); ++i)
    if (!equal_stmts(a.stmts[i], b.stmts[i])) return false;
  return true;
}

const std::vector<std::string>& task_names() { return kTasks; }

namespace {

Expr sample_expr(Rng& rng, const std::vector<std::string>& defined,
                 int max_atoms) {
  Expr e;
  const int n_atoms = 1 + static_cast<int>(rng.below(max_atoms));
  for (int i = 0; i < n_atoms; ++i) {
    // Favor previously assigned variables when available.
    if (!defined.empty() && rng.below(2) == 0)
      e.atoms.push_back(defined[rng.below(defined.size())]);
    else
      e.atoms.push_back(std::to_string(rng.below(10)));
  }
  const char ops[3] = {'+', '-', '*'};
  for (int i = 0; i < n_atoms - 1; ++i) e.ops.push_back(ops[rng.below(3)]);
  return e;
}

Stmt sample_simple_stmt(Rng& rng, std::vector<std::string>& defined) {
  Stmt s;
  if (!defined.empty() && rng.below(10) < 3) {
    s.kind = Stmt::Kind::Print;
    s.expr = sample_expr(rng, defined, 3);
  } else {
    s.kind = Stmt::Kind::Assign;
    s.var = kIdentifiers[rng.below(kIdentifiers.size())];
    s.expr = sample_expr(rng, defined, 3);
    if (std::find(defined.begin(), defined.end(), s.var) == defined.end())
      defined.push_back(s.var);
  }
  return s;
}

SemanticProgram sample_once(Rng& rng, const std::string& task) {
  SemanticProgram p;
  p.task_profile = task;
  std::vector<std::string> defined;
  if (task == "arith") {
    const int n = 1 + static_cast<int>(rng.below(2));
    for (int i = 0; i < n; ++i) p.stmts.push_back(sample_simple_stmt(rng, defined));
  } else {
    if (rng.below(2) == 0) p.stmts.push_back(sample_simple_stmt(rng, defined));
    Stmt loop;
    loop.kind = Stmt::Kind::Loop;
    loop.loop_count = 2 + static_cast<int>(rng.below(4));
    const int body = 1 + static_cast<int>(rng.below(2));
    for (int i = 0; i < body; ++i)
      loop.body.push_back(sample_simple_stmt(rng, defined));
    p.stmts.push_back(loop);
  }
  return p;
}

}  // namespace

SemanticProgram sample_program(Rng& rng, const std::string& task,
                               int max_code_len) {
  if (std::find(kTasks.begin(), kTasks.end(), task) == kTasks.end())
    throw ConfigError("unknown task profile '" + task + "'");
  if (max_code_len < 8)
    throw ConfigError("max_code_len too small for any program");
  for (int attempt = 0; attempt < 10000; ++attempt) {
    SemanticProgram p = sample_once(rng, task);
    bool fits = true;
    for (int lang = 0; lang < language_count() && fits; ++lang)
      fits = static_cast<int>(render(p, lang).size()) <= max_code_len;
    if (fits) return p;
  }
  throw ConfigError("could not sample a program within the length budget");
}

}  // namespace xlat::toy

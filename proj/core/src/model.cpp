#include "xlat/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xlat/rng.hpp"

namespace xlat::model {

using nd::Shape;
using nd::Tensor;

namespace {

constexpr double kMaskValue = -1e30;

std::string layer_key(const std::string& stem, int layer,
                      const std::string& leaf) {
  return stem + ".L" + std::to_string(layer) + "." + leaf;
}

}  // namespace

int ModelConfig::lang_index(const std::string& lang) const {
  for (size_t i = 0; i < languages.size(); ++i)
    if (languages[i] == lang) return static_cast<int>(i);
  throw UnknownLanguage("language '" + lang + "' is not registered");
}

ModelConfig reference_scale_config(const std::vector<std::string>& languages) {
  ModelConfig cfg;
  cfg.vocab_size = 50265;
  cfg.model_dim = 768;
  cfg.n_heads = 12;
  cfg.enc_layers = 12;
  cfg.dec_layers = 6;
  cfg.latent_dim = 768;
  cfg.flag_count = 16;
  cfg.ffn_mult = 4;
  cfg.max_len = 512;
  cfg.languages = languages;
  return cfg;
}

void validate_config(const ModelConfig& cfg) {
  if (cfg.vocab_size < 6)
    throw ConfigError("vocab_size must cover the control tokens");
  if (cfg.model_dim <= 0 || cfg.n_heads <= 0 || cfg.enc_layers <= 0 ||
      cfg.dec_layers <= 0 || cfg.latent_dim <= 0 || cfg.flag_count <= 0 ||
      cfg.ffn_mult <= 0)
    throw ConfigError("model dimensions must be positive");
  if (cfg.model_dim % cfg.n_heads != 0)
    throw ConfigError("model_dim must be divisible by n_heads");
  if (cfg.max_len < cfg.flag_count + 2)
    throw ConfigError("max_len cannot hold even an empty framed sequence");
  if (cfg.languages.size() < 2)
    throw ConfigError("at least two languages must be registered");
  std::vector<std::string> sorted = cfg.languages;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigError("duplicate language name in registry");
}

// -- parameter plans -----------------------------------------------------

namespace {

class PlanBuilder {
 public:
  void add(std::string name, Shape shape) {
    int64_t numel = 1;
    for (int64_t d : shape) numel *= d;
    entries_.push_back(
        ParamEntry{std::move(name), std::move(shape), offset_, numel});
    offset_ += numel;
  }

  // One residual attention block: pre-norm self attention plus a feed
  // forward sublayer; decoders add a cross-attention sublayer in between.
  void add_attention(const std::string& stem, int64_t d) {
    add(stem + ".wq", {d, d});
    add(stem + ".bq", {d});
    add(stem + ".wk", {d, d});
    add(stem + ".bk", {d});
    add(stem + ".wv", {d, d});
    add(stem + ".bv", {d});
    add(stem + ".wo", {d, d});
    add(stem + ".bo", {d});
  }

  void add_norm(const std::string& stem, int64_t d) {
    add(stem + ".gain", {d});
    add(stem + ".bias", {d});
  }

  void add_ffn(const std::string& stem, int64_t d, int64_t f) {
    add(stem + ".w1", {d, f});
    add(stem + ".b1", {f});
    add(stem + ".w2", {f, d});
    add(stem + ".b2", {d});
  }

  void add_encoder_stack(const std::string& stem, const ModelConfig& cfg) {
    for (int l = 0; l < cfg.enc_layers; ++l) {
      add_norm(layer_key(stem, l, "ln1"), cfg.model_dim);
      add_attention(layer_key(stem, l, "attn"), cfg.model_dim);
      add_norm(layer_key(stem, l, "ln2"), cfg.model_dim);
      add_ffn(layer_key(stem, l, "ffn"), cfg.model_dim, cfg.ffn_dim());
    }
    add_norm(stem + ".ln_f", cfg.model_dim);
  }

  void add_decoder_stack(const std::string& stem, const ModelConfig& cfg) {
    for (int l = 0; l < cfg.dec_layers; ++l) {
      add_norm(layer_key(stem, l, "ln1"), cfg.model_dim);
      add_attention(layer_key(stem, l, "self"), cfg.model_dim);
      add_norm(layer_key(stem, l, "ln2"), cfg.model_dim);
      add_attention(layer_key(stem, l, "cross"), cfg.model_dim);
      add_norm(layer_key(stem, l, "ln3"), cfg.model_dim);
      add_ffn(layer_key(stem, l, "ffn"), cfg.model_dim, cfg.ffn_dim());
    }
    add_norm(stem + ".ln_f", cfg.model_dim);
  }

  void add_mlp(const std::string& stem, int64_t in, int64_t hidden,
               int64_t out) {
    add(stem + ".w1", {in, hidden});
    add(stem + ".b1", {hidden});
    add(stem + ".w2", {hidden, out});
    add(stem + ".b2", {out});
  }

  std::vector<ParamEntry> take() { return std::move(entries_); }

 private:
  std::vector<ParamEntry> entries_;
  int64_t offset_ = 0;
};

}  // namespace

std::vector<ParamEntry> build_param_plan(const ModelConfig& cfg) {
  validate_config(cfg);
  PlanBuilder b;
  const int64_t d = cfg.model_dim;
  const int64_t flat = cfg.flag_count * d;
  const int64_t hidden = cfg.proj_hidden();
  const int64_t lat2 = 2 * cfg.latent_dim;

  // Exactly one encoder parameter set regardless of language count; the
  // token embedding doubles as every decoder's input embedding and (tied)
  // output projection.
  b.add("enc.tok_emb", {cfg.vocab_size, d});
  b.add("enc.pos_emb", {cfg.max_len, d});
  b.add_encoder_stack("enc", cfg);

  for (const auto& lang : cfg.languages) {
    b.add_decoder_stack("dec." + lang, cfg);
    // Per-language output projection: weights tied to the shared token
    // embedding, bias owned by the language.
    b.add("dec." + lang + ".out_bias", {cfg.vocab_size});
  }
  for (const auto& lang : cfg.languages)
    b.add_mlp("proj.q." + lang, flat, hidden, lat2);
  for (const auto& lang : cfg.languages)
    b.add_mlp("proj.r." + lang, flat, hidden, lat2);
  for (const auto& lang : cfg.languages)
    b.add_mlp("proj.p." + lang, lat2, hidden, flat);
  b.add_mlp("proj.qs", flat, hidden, lat2);
  return b.take();
}

std::vector<ParamEntry> build_pairwise_plan(const ModelConfig& cfg) {
  validate_config(cfg);
  PlanBuilder b;
  const int64_t d = cfg.model_dim;
  b.add("enc.tok_emb", {cfg.vocab_size, d});
  b.add("enc.pos_emb", {cfg.max_len, d});
  b.add_encoder_stack("enc", cfg);
  b.add_decoder_stack("dec", cfg);
  // A standalone direction model carries its own untied output projection.
  b.add("dec.out_proj", {d, cfg.vocab_size});
  b.add("dec.out_bias", {cfg.vocab_size});
  return b.take();
}

// -- ModelParams -----------------------------------------------------------

namespace {

bool is_norm_gain(const std::string& name) {
  return name.size() >= 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
}

bool is_bias_like(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    const size_t n = std::string(suffix).size();
    return name.size() >= n &&
           name.compare(name.size() - n, n, suffix) == 0;
  };
  return ends_with(".bias") || ends_with(".bq") || ends_with(".bk") ||
         ends_with(".bv") || ends_with(".bo") || ends_with(".b1") ||
         ends_with(".b2") || ends_with(".out_bias");
}

bool is_embedding(const std::string& name) {
  return name.find("_emb") != std::string::npos;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed) {
  ModelParams p;
  p.config_ = cfg;
  p.entries_ = build_param_plan(cfg);
  int64_t total = 0;
  for (size_t i = 0; i < p.entries_.size(); ++i) {
    p.index_.emplace(p.entries_[i].name, static_cast<int>(i));
    total += p.entries_[i].numel;
  }
  p.values_.assign(static_cast<size_t>(total), 0.0);

  Rng rng(derive_seed(seed, "model-init"));
  for (const auto& e : p.entries_) {
    double* out = p.values_.data() + e.offset;
    if (is_norm_gain(e.name)) {
      std::fill(out, out + e.numel, 1.0);
    } else if (is_bias_like(e.name)) {
      // already zero
    } else if (is_embedding(e.name)) {
      for (int64_t i = 0; i < e.numel; ++i) out[i] = 0.02 * rng.normal();
    } else {
      // Matrices: variance-preserving normal init over fan-in/fan-out.
      const int64_t fan_in = e.shape.size() == 2 ? e.shape[0] : e.numel;
      const int64_t fan_out = e.shape.size() == 2 ? e.shape[1] : e.numel;
      const double std = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
      for (int64_t i = 0; i < e.numel; ++i) out[i] = std * rng.normal();
    }
  }
  return p;
}

ModelParams assemble_params(ModelConfig cfg, std::vector<double> values) {
  ModelParams p;
  p.config_ = std::move(cfg);
  p.entries_ = build_param_plan(p.config_);
  int64_t total = 0;
  for (size_t i = 0; i < p.entries_.size(); ++i) {
    p.index_.emplace(p.entries_[i].name, static_cast<int>(i));
    total += p.entries_[i].numel;
  }
  if (static_cast<int64_t>(values.size()) != total)
    throw DimMismatch("value blob does not match the parameter plan");
  p.values_ = std::move(values);
  return p;
}

int ModelParams::entry_index(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

const ParamEntry& ModelParams::entry(const std::string& name) const {
  int i = entry_index(name);
  if (i < 0) throw ConfigError("unknown parameter entry '" + name + "'");
  return entries_[static_cast<size_t>(i)];
}

std::vector<double> ModelParams::get(const std::string& name) const {
  const ParamEntry& e = entry(name);
  return std::vector<double>(values_.begin() + e.offset,
                             values_.begin() + e.offset + e.numel);
}

void ModelParams::set(const std::string& name, const std::vector<double>& v) {
  const ParamEntry& e = entry(name);
  if (static_cast<int64_t>(v.size()) != e.numel)
    throw DimMismatch("value size does not match entry '" + name + "'");
  std::copy(v.begin(), v.end(), values_.begin() + e.offset);
}

// -- BoundParams -----------------------------------------------------------

BoundParams::BoundParams(const ModelParams& params, nd::Tape* tape)
    : params_(&params), tape_(tape), bound_(params.entries().size()) {}

void BoundParams::override_entry(const std::string& name, const Tensor& t) {
  const ParamEntry& e = params_->entry(name);
  if (t.shape() != e.shape)
    throw DimMismatch("override shape does not match entry '" + name + "'");
  bound_[static_cast<size_t>(params_->entry_index(name))] = t;
}

const Tensor& BoundParams::at(const std::string& name) {
  int i = params_->entry_index(name);
  if (i < 0) throw ConfigError("unknown parameter entry '" + name + "'");
  Tensor& slot = bound_[static_cast<size_t>(i)];
  if (!slot.defined()) {
    const ParamEntry& e = params_->entries()[static_cast<size_t>(i)];
    std::vector<double> v(params_->values().begin() + e.offset,
                          params_->values().begin() + e.offset + e.numel);
    slot = tape_ != nullptr ? Tensor::leaf(e.shape, std::move(v), *tape_)
                            : Tensor::constant(e.shape, std::move(v));
  }
  return slot;
}

std::vector<double> BoundParams::fold_grads(const nd::GradMap& grads) const {
  std::vector<double> out(params_->values().size(), 0.0);
  const auto& entries = params_->entries();
  for (size_t i = 0; i < entries.size(); ++i) {
    const Tensor& t = bound_[i];
    if (!t.defined() || !t.on_tape()) continue;
    auto it = grads.find(t.node());
    if (it == grads.end()) continue;
    std::copy(it->second.begin(), it->second.end(),
              out.begin() + entries[i].offset);
  }
  return out;
}

// -- forward helpers ---------------------------------------------------

namespace {

Tensor norm(BoundParams& bp, const std::string& stem, const Tensor& x) {
  return nd::layer_norm(x, bp.at(stem + ".gain"), bp.at(stem + ".bias"));
}

Tensor linear(BoundParams& bp, const std::string& w, const std::string& b,
              const Tensor& x) {
  return nd::add(nd::matmul(x, bp.at(w)), bp.at(b));
}

// Multi-head scaled dot-product attention; causal restricts each query row
// to keys at or before its own position (valid only when q and kv align).
Tensor attention(BoundParams& bp, const std::string& stem, const Tensor& q_in,
                 const Tensor& kv_in, bool causal) {
  const ModelConfig& cfg = bp.config();
  const int64_t dh = cfg.head_dim();
  const Tensor q = linear(bp, stem + ".wq", stem + ".bq", q_in);
  const Tensor k = linear(bp, stem + ".wk", stem + ".bk", kv_in);
  const Tensor v = linear(bp, stem + ".wv", stem + ".bv", kv_in);
  const int64_t s = q.shape()[0];
  const int64_t m = k.shape()[0];
  const Tensor scale = Tensor::scalar(1.0 / std::sqrt(static_cast<double>(dh)));

  std::vector<uint8_t> mask;
  if (causal) {
    mask.resize(static_cast<size_t>(s * m), 0);
    for (int64_t i = 0; i < s; ++i)
      for (int64_t j = i + 1; j < m; ++j)
        mask[static_cast<size_t>(i * m + j)] = 1;
  }

  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(cfg.n_heads));
  for (int64_t h = 0; h < cfg.n_heads; ++h) {
    const Tensor qh = nd::slice(q, 1, h * dh, dh);
    const Tensor kh = nd::slice(k, 1, h * dh, dh);
    const Tensor vh = nd::slice(v, 1, h * dh, dh);
    Tensor scores = nd::mul(nd::matmul(qh, nd::transpose(kh)), scale);
    if (causal) scores = nd::masked_fill(scores, mask, kMaskValue);
    const Tensor probs = nd::softmax(scores, 1);
    heads.push_back(nd::matmul(probs, vh));
  }
  const Tensor merged = nd::concat(heads, 1);
  return linear(bp, stem + ".wo", stem + ".bo", merged);
}

Tensor ffn(BoundParams& bp, const std::string& stem, const Tensor& x) {
  const Tensor h = nd::tanh(linear(bp, stem + ".w1", stem + ".b1", x));
  return linear(bp, stem + ".w2", stem + ".b2", h);
}

Tensor embed_sequence(BoundParams& bp, const std::vector<int>& ids) {
  const ModelConfig& cfg = bp.config();
  std::vector<int64_t> ids64(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= cfg.vocab_size)
      throw MalformedSequence("token id out of vocabulary range");
    ids64[i] = ids[i];
  }
  const Tensor tok = nd::embedding(bp.at("enc.tok_emb"), ids64);
  const Tensor pos = nd::slice(bp.at("enc.pos_emb"), 0, 0,
                               static_cast<int64_t>(ids.size()));
  return nd::add(tok, pos);
}

Tensor encoder_stack(BoundParams& bp, const std::string& stem, Tensor x) {
  const ModelConfig& cfg = bp.config();
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const Tensor y = norm(bp, layer_key(stem, l, "ln1"), x);
    x = nd::add(x, attention(bp, layer_key(stem, l, "attn"), y, y, false));
    x = nd::add(x, ffn(bp, layer_key(stem, l, "ffn"),
                       norm(bp, layer_key(stem, l, "ln2"), x)));
  }
  return norm(bp, stem + ".ln_f", x);
}

Tensor decoder_stack(BoundParams& bp, const std::string& stem, Tensor x,
                     const Tensor& memory) {
  const ModelConfig& cfg = bp.config();
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const Tensor y1 = norm(bp, layer_key(stem, l, "ln1"), x);
    x = nd::add(x, attention(bp, layer_key(stem, l, "self"), y1, y1, true));
    const Tensor y2 = norm(bp, layer_key(stem, l, "ln2"), x);
    x = nd::add(x, attention(bp, layer_key(stem, l, "cross"), y2, memory,
                             false));
    x = nd::add(x, ffn(bp, layer_key(stem, l, "ffn"),
                       norm(bp, layer_key(stem, l, "ln3"), x)));
  }
  return norm(bp, stem + ".ln_f", x);
}

gauss::GaussianT split_gaussian(const Tensor& y, int64_t latent) {
  return gauss::GaussianT{
      nd::slice(y, 1, 0, latent),
      nd::clamp(nd::slice(y, 1, latent, latent), gauss::kLogVarMin,
                gauss::kLogVarMax)};
}

Tensor mlp2(BoundParams& bp, const std::string& stem, const Tensor& x) {
  const Tensor h = nd::tanh(linear(bp, stem + ".w1", stem + ".b1", x));
  return linear(bp, stem + ".w2", stem + ".b2", h);
}

Tensor flatten_flags(const Tensor& flag_rep, const ModelConfig& cfg) {
  if (flag_rep.shape() != Shape{cfg.flag_count, cfg.model_dim})
    throw DimMismatch("flag representation has the wrong shape");
  return nd::reshape(flag_rep, {1, cfg.flag_count * cfg.model_dim});
}

Tensor check_latent(const Tensor& z, const ModelConfig& cfg,
                    const char* which) {
  if (z.shape() != Shape{1, cfg.latent_dim})
    throw DimMismatch(std::string(which) + " latent has the wrong shape");
  return z;
}

// Decoder forward over an already BOS-shifted input id sequence; returns
// one vocab-logit row per input position.
Tensor decoder_logits(BoundParams& bp, const std::string& lang,
                      const std::vector<int>& input_ids,
                      const Tensor& memory) {
  const ModelConfig& cfg = bp.config();
  cfg.lang_index(lang);
  if (static_cast<int64_t>(input_ids.size()) > cfg.max_len)
    throw MalformedSequence("decoder input exceeds max_len");
  const Tensor x = embed_sequence(bp, input_ids);
  const Tensor h = decoder_stack(bp, "dec." + lang, x, memory);
  const Tensor logits = nd::matmul(h, nd::transpose(bp.at("enc.tok_emb")));
  return nd::add(logits, bp.at("dec." + lang + ".out_bias"));
}

Tensor build_memory(const Tensor& target_flag_rep,
                    const Tensor& source_code_rep, const ModelConfig& cfg) {
  if (target_flag_rep.shape() != Shape{cfg.flag_count, cfg.model_dim})
    throw DimMismatch("target flag block has the wrong shape");
  if (!source_code_rep.defined() || source_code_rep.numel() == 0)
    return target_flag_rep;
  if (source_code_rep.shape().size() != 2 ||
      source_code_rep.shape()[1] != cfg.model_dim)
    throw DimMismatch("source code representations have the wrong width");
  return nd::concat({target_flag_rep, source_code_rep}, 0);
}

}  // namespace

// -- public forward ops --------------------------------------------------

EncodedInstance encode(const std::vector<int>& ids, BoundParams& params) {
  const ModelConfig& cfg = params.config();
  const int64_t n = static_cast<int64_t>(ids.size());
  if (n < cfg.flag_count + 2)
    throw MalformedSequence("sequence too short for CLS + flags + SEP");
  if (n > cfg.max_len) throw MalformedSequence("sequence exceeds max_len");
  const Tensor h = encoder_stack(params, "enc", embed_sequence(params, ids));
  EncodedInstance out;
  out.flag_rep = nd::slice(h, 0, 1, cfg.flag_count);
  out.code_len = n - cfg.flag_count - 2;
  out.code_rep = out.code_len > 0
                     ? nd::slice(h, 0, 1 + cfg.flag_count, out.code_len)
                     : Tensor::zeros({0, cfg.model_dim});
  return out;
}

gauss::GaussianT infer_specific(const Tensor& flag_rep,
                                const std::string& lang, BoundParams& params) {
  const ModelConfig& cfg = params.config();
  cfg.lang_index(lang);
  const Tensor y = mlp2(params, "proj.q." + lang,
                        flatten_flags(flag_rep, cfg));
  return split_gaussian(y, cfg.latent_dim);
}

gauss::GaussianT infer_shift(const Tensor& flag_rep, const std::string& lang,
                             BoundParams& params) {
  const ModelConfig& cfg = params.config();
  cfg.lang_index(lang);
  const Tensor y = mlp2(params, "proj.r." + lang,
                        flatten_flags(flag_rep, cfg));
  return split_gaussian(y, cfg.latent_dim);
}

gauss::GaussianT infer_shared(
    const std::vector<std::pair<std::string, Tensor>>& flag_reps,
    BoundParams& params) {
  const ModelConfig& cfg = params.config();
  if (flag_reps.size() < 2)
    throw TooFewLanguages("shared inference needs at least two languages");
  // Fold in registry order so the pooled mean is exactly independent of the
  // order the caller listed the languages in.
  std::map<int, const Tensor*> ordered;
  for (const auto& [lang, rep] : flag_reps) {
    const int idx = cfg.lang_index(lang);
    if (!ordered.emplace(idx, &rep).second)
      throw ConfigError("language '" + lang + "' listed twice");
  }
  Tensor acc;
  for (const auto& [idx, rep] : ordered) {
    (void)idx;
    Tensor flat = flatten_flags(*rep, cfg);
    acc = acc.defined() ? nd::add(acc, flat) : flat;
  }
  const Tensor pooled =
      nd::mul(acc, Tensor::scalar(1.0 / static_cast<double>(ordered.size())));
  return split_gaussian(mlp2(params, "proj.qs", pooled), cfg.latent_dim);
}

Tensor reconstruct_flag(const Tensor& z_specific, const Tensor& z_shared,
                        const std::string& lang, BoundParams& params) {
  const ModelConfig& cfg = params.config();
  cfg.lang_index(lang);
  const Tensor z = nd::concat({check_latent(z_specific, cfg, "specific"),
                               check_latent(z_shared, cfg, "shared")},
                              1);
  const Tensor y = mlp2(params, "proj.p." + lang, z);
  return nd::reshape(y, {cfg.flag_count, cfg.model_dim});
}

Tensor decode_teacher(const Tensor& target_flag_rep,
                      const Tensor& source_code_rep, const std::string& lang,
                      const std::vector<int>& teacher, int bos,
                      BoundParams& params) {
  if (teacher.empty()) throw MalformedSequence("teacher sequence is empty");
  std::vector<int> input(teacher.size());
  input[0] = bos;
  std::copy(teacher.begin(), teacher.end() - 1, input.begin() + 1);
  const Tensor memory =
      build_memory(target_flag_rep, source_code_rep, params.config());
  return decoder_logits(params, lang, input, memory);
}

Generated decode_greedy(const Tensor& target_flag_rep,
                        const Tensor& source_code_rep, const std::string& lang,
                        int bos, int eos, int64_t max_new,
                        BoundParams& params) {
  if (max_new < 1) throw ConfigError("max_new must be at least 1");
  const ModelConfig& cfg = params.config();
  const Tensor memory = build_memory(target_flag_rep, source_code_rep, cfg);
  Generated out;
  std::vector<int> input{bos};
  while (true) {
    const Tensor logits = decoder_logits(params, lang, input, memory);
    const int64_t last = logits.shape()[0] - 1;
    const double* row = logits.values().data() + last * cfg.vocab_size;
    int best = 0;
    for (int64_t j = 1; j < cfg.vocab_size; ++j)
      if (row[j] > row[best]) best = static_cast<int>(j);
    if (best == eos) break;
    out.tokens.push_back(best);
    if (static_cast<int64_t>(out.tokens.size()) >= max_new ||
        static_cast<int64_t>(input.size()) + 1 >= cfg.max_len) {
      out.truncated = true;  // length ceiling hit before EOS
      break;
    }
    input.push_back(best);
  }
  return out;
}

}  // namespace xlat::model

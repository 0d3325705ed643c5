#pragma once
// The translation network: one weight-sharing encoder for every language,
// per-language decoders, and the latent projector stack that splits each
// encoded instance into language-specific and language-shared Gaussians.
//
// Parameters live in a single flat float64 arena described by a named entry
// plan.  A forward pass binds entries lazily onto a tape (or as constants for
// inference); gradients fold back into a flat vector aligned with the arena.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xlat/corpus.hpp"
#include "xlat/errors.hpp"
#include "xlat/gaussian.hpp"
#include "xlat/tensor.hpp"

namespace xlat::model {

struct ModelConfig {
  int64_t vocab_size = 0;
  int64_t model_dim = 64;
  int64_t n_heads = 4;
  int64_t enc_layers = 2;
  int64_t dec_layers = 2;
  int64_t latent_dim = 32;
  int64_t flag_count = 4;  // flag tokens per language at the sequence head
  int64_t ffn_mult = 2;
  int64_t max_len = 128;
  std::vector<std::string> languages;

  int64_t ffn_dim() const { return model_dim * ffn_mult; }
  int64_t head_dim() const { return model_dim / n_heads; }
  // Projector hidden width; capped so projector cost stays bounded when the
  // flattened flag block (flag_count x model_dim) grows to full scale.
  int64_t proj_hidden() const {
    const int64_t flat = flag_count * model_dim;
    return flat < 256 ? flat : 256;
  }
  int lang_index(const std::string& lang) const;  // UnknownLanguage if absent
};

// Full-scale reference dimensions (12-layer/768 encoder, 6-layer decoders,
// 16 flag tokens, 50265-token vocabulary) used for paradigm size comparisons.
ModelConfig reference_scale_config(const std::vector<std::string>& languages);

void validate_config(const ModelConfig& cfg);

struct ParamEntry {
  std::string name;
  nd::Shape shape;
  int64_t offset = 0;
  int64_t numel = 0;
};

// Named-array plan for the unified model (shared encoder + N decoders +
// projectors).  Deterministic order; offsets tile a flat arena.
std::vector<ParamEntry> build_param_plan(const ModelConfig& cfg);
// Plan for one standalone direction model of the pairwise paradigm: its own
// embedding, encoder stack, decoder stack, and untied output projection.
std::vector<ParamEntry> build_pairwise_plan(const ModelConfig& cfg);

class ModelParams {
 public:
  ModelParams() = default;
  static ModelParams init(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }
  int64_t total_params() const { return static_cast<int64_t>(values_.size()); }

  int entry_index(const std::string& name) const;  // -1 when absent
  const ParamEntry& entry(const std::string& name) const;
  std::vector<double> get(const std::string& name) const;
  void set(const std::string& name, const std::vector<double>& v);

 private:
  friend ModelParams assemble_params(ModelConfig cfg,
                                     std::vector<double> values);
  ModelConfig config_;
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, int> index_;
  std::vector<double> values_;
};

// Rebuilds a ModelParams from a config plus a value blob laid out per
// build_param_plan (checkpoint loading).
ModelParams assemble_params(ModelConfig cfg, std::vector<double> values);

// Binds named arrays as tensors for one forward pass.  With a tape the
// arrays become differentiable leaves (bound lazily, so absent languages
// cost nothing); with tape == nullptr they are constants for inference.
class BoundParams {
 public:
  BoundParams(const ModelParams& params, nd::Tape* tape);

  const ModelConfig& config() const { return params_->config(); }
  // Resolve the named entry to this externally built tensor instead of the
  // stored array (used to route gradient checks through one parameter).
  void override_entry(const std::string& name, const nd::Tensor& t);
  const nd::Tensor& at(const std::string& name);
  // Gradients from a backward sweep, flattened to the arena layout; entries
  // never bound (or unreachable) fold to zeros.
  std::vector<double> fold_grads(const nd::GradMap& grads) const;

 private:
  const ModelParams* params_;
  nd::Tape* tape_;
  std::vector<nd::Tensor> bound_;
};

struct EncodedInstance {
  nd::Tensor flag_rep;  // flag_count x model_dim
  nd::Tensor code_rep;  // code_len x model_dim (code_len may be 0)
  int64_t code_len = 0;
};

// Runs the shared encoder over a framed id sequence
// [CLS, flags..., code..., SEP] and splits the output by position.
EncodedInstance encode(const std::vector<int>& ids, BoundParams& params);

// Language-specific posterior over z_i from a flag representation.
gauss::GaussianT infer_specific(const nd::Tensor& flag_rep,
                                const std::string& lang, BoundParams& params);
// Shift-shared posterior over z_s inferred from a single language.
gauss::GaussianT infer_shift(const nd::Tensor& flag_rep,
                             const std::string& lang, BoundParams& params);
// Language-shared posterior over z_s from every present language's flags.
// Exactly permutation-invariant: inputs are folded in registry order.
gauss::GaussianT infer_shared(
    const std::vector<std::pair<std::string, nd::Tensor>>& flag_reps,
    BoundParams& params);

// Rebuilds a language's flag representation from (z_specific, z_shared).
nd::Tensor reconstruct_flag(const nd::Tensor& z_specific,
                            const nd::Tensor& z_shared,
                            const std::string& lang, BoundParams& params);

// Teacher-forced decoding: memory is the target flag block concatenated with
// the source code representations; returns len(teacher) x vocab logits where
// row t predicts teacher[t] (decoder input is BOS-shifted teacher).
nd::Tensor decode_teacher(const nd::Tensor& target_flag_rep,
                          const nd::Tensor& source_code_rep,
                          const std::string& lang,
                          const std::vector<int>& teacher, int bos,
                          BoundParams& params);

struct Generated {
  std::vector<int> tokens;  // without BOS/EOS
  bool truncated = false;   // hit the length ceiling before EOS
};

// Greedy decoding from BOS until EOS or max_new tokens (ties break toward
// the lowest token id, so generation is deterministic).
Generated decode_greedy(const nd::Tensor& target_flag_rep,
                        const nd::Tensor& source_code_rep,
                        const std::string& lang, int bos, int eos,
                        int64_t max_new, BoundParams& params);

// -- checkpointing -----------------------------------------------------

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  corpus::Vocabulary vocab;
};

void save_checkpoint(const ModelParams& params,
                     const corpus::Vocabulary& vocab, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace xlat::model

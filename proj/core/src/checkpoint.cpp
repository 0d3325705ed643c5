// Versioned checkpoint container: an 8-byte magic, a length-prefixed JSON
// header (format version, hyper-dims, language registry, parameter plan,
// vocabulary), then the flat float64 parameter arena, little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlat/model.hpp"

namespace xlat::model {

namespace {

constexpr char kMagic[8] = {'X', 'L', 'A', 'T', 'C', 'K', 'P', '\0'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs assume a little-endian host");

nlohmann::json vocab_to_json(const corpus::Vocabulary& v) {
  return nlohmann::json{{"tokens", v.id_to_token},
                        {"pad", v.pad},
                        {"cls", v.cls},
                        {"sep", v.sep},
                        {"bos", v.bos},
                        {"eos", v.eos},
                        {"flag_ids", v.flag_ids},
                        {"k", v.k}};
}

corpus::Vocabulary vocab_from_json(const nlohmann::json& j) {
  corpus::Vocabulary v;
  v.id_to_token = j.at("tokens").get<std::vector<std::string>>();
  v.pad = j.at("pad").get<int>();
  v.cls = j.at("cls").get<int>();
  v.sep = j.at("sep").get<int>();
  v.bos = j.at("bos").get<int>();
  v.eos = j.at("eos").get<int>();
  v.flag_ids = j.at("flag_ids").get<std::vector<std::vector<int>>>();
  v.k = j.at("k").get<int>();
  for (size_t i = 0; i < v.id_to_token.size(); ++i)
    v.token_to_id.emplace(v.id_to_token[i], static_cast<int>(i));
  return v;
}

}  // namespace

void save_checkpoint(const ModelParams& params,
                     const corpus::Vocabulary& vocab,
                     const std::string& path) {
  const ModelConfig& cfg = params.config();
  nlohmann::json plan = nlohmann::json::array();
  for (const auto& e : params.entries())
    plan.push_back({{"name", e.name}, {"shape", e.shape}});
  nlohmann::json header{
      {"format_version", kCheckpointVersion},
      {"config",
       {{"vocab_size", cfg.vocab_size},
        {"model_dim", cfg.model_dim},
        {"n_heads", cfg.n_heads},
        {"enc_layers", cfg.enc_layers},
        {"dec_layers", cfg.dec_layers},
        {"latent_dim", cfg.latent_dim},
        {"flag_count", cfg.flag_count},
        {"ffn_mult", cfg.ffn_mult},
        {"max_len", cfg.max_len},
        {"languages", cfg.languages}}},
      {"entries", plan},
      {"vocab", vocab_to_json(vocab)}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(params.values().data()),
            static_cast<std::streamsize>(params.values().size() *
                                         sizeof(double)));
  if (!out) throw IoError("short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ParseError("'" + path + "' is not a checkpoint file");
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len == 0 || len > (1ull << 31))
    throw ParseError("checkpoint header length is implausible");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError("checkpoint header is truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header is not valid JSON: ") +
                     e.what());
  }
  try {
    const uint32_t version = header.at("format_version").get<uint32_t>();
    if (version != kCheckpointVersion)
      throw ParseError("unsupported checkpoint format_version " +
                       std::to_string(version) + " (expected " +
                       std::to_string(kCheckpointVersion) + ")");
    const auto& jc = header.at("config");
    ModelConfig cfg;
    cfg.vocab_size = jc.at("vocab_size").get<int64_t>();
    cfg.model_dim = jc.at("model_dim").get<int64_t>();
    cfg.n_heads = jc.at("n_heads").get<int64_t>();
    cfg.enc_layers = jc.at("enc_layers").get<int64_t>();
    cfg.dec_layers = jc.at("dec_layers").get<int64_t>();
    cfg.latent_dim = jc.at("latent_dim").get<int64_t>();
    cfg.flag_count = jc.at("flag_count").get<int64_t>();
    cfg.ffn_mult = jc.at("ffn_mult").get<int64_t>();
    cfg.max_len = jc.at("max_len").get<int64_t>();
    cfg.languages = jc.at("languages").get<std::vector<std::string>>();

    const auto plan = build_param_plan(cfg);
    const auto& jplan = header.at("entries");
    if (jplan.size() != plan.size())
      throw ParseError("checkpoint plan does not match this build");
    int64_t total = 0;
    for (size_t i = 0; i < plan.size(); ++i) {
      if (jplan[i].at("name").get<std::string>() != plan[i].name ||
          jplan[i].at("shape").get<nd::Shape>() != plan[i].shape)
        throw ParseError("checkpoint entry '" + plan[i].name +
                         "' does not match this build");
      total += plan[i].numel;
    }

    std::vector<double> values(static_cast<size_t>(total));
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw ParseError("checkpoint value blob is truncated");
    in.peek();
    if (!in.eof()) throw ParseError("trailing bytes after checkpoint blob");

    Checkpoint ck;
    ck.params = assemble_params(cfg, std::move(values));
    ck.vocab = vocab_from_json(header.at("vocab"));
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header field error: ") +
                     e.what());
  }
}

}  // namespace xlat::model

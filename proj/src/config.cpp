#include "rtp/config.hpp"

#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "rtp/errors.hpp"

namespace rtp {

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  if (const char* env = std::getenv("RTP_SIM_SEED")) {
    try {
      cfg.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("RTP_SIM_SEED is not a valid u64: '") + env + "'");
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  ExperimentConfig cfg = defaults();
  cfg.merge_json_file(path);
  return cfg;
}

void ExperimentConfig::merge_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file '" + path + "' must hold a JSON object");

  auto get_u64 = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_unsigned())
      throw ConfigError(std::string("config field '") + key + "' must be a non-negative integer");
    field = j[key].template get<uint64_t>();
  };
  auto get_f64 = [&](const char* key, double& field) {
    if (!j.contains(key)) return;
    if (!j[key].is_number())
      throw ConfigError(std::string("config field '") + key + "' must be a number");
    field = j[key].get<double>();
  };
  auto get_str = [&](const char* key, std::string& field) {
    if (!j.contains(key)) return;
    if (!j[key].is_string())
      throw ConfigError(std::string("config field '") + key + "' must be a string");
    field = j[key].get<std::string>();
  };

  get_u64("attention_heads", attention_heads);
  get_u64("hidden_size", hidden_size);
  get_u64("layers", layers);
  get_u64("sequence_length", sequence_length);
  get_u64("vocab_size", vocab_size);
  get_u64("embedding_size", embedding_size);
  if (j.contains("moe")) {
    if (!j["moe"].is_boolean()) throw ConfigError("config field 'moe' must be a boolean");
    moe = j["moe"].get<bool>();
  }
  get_u64("n_workers", n_workers);
  get_str("strategy", strategy);
  get_u64("batch_size", batch_size);
  get_u64("seed", seed);
  get_str("transport", transport);
  get_f64("alpha", alpha);
  get_f64("beta", beta);
  get_f64("gamma", gamma);
  get_f64("launch_overhead", launch_overhead);

  static const char* known[] = {"attention_heads", "hidden_size",    "layers",
                                "sequence_length", "vocab_size",     "embedding_size",
                                "moe",             "n_workers",      "strategy",
                                "batch_size",      "seed",           "transport",
                                "alpha",           "beta",           "gamma",
                                "launch_overhead"};
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown config field '" + key + "'");
  }
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (n_workers == 0) fail("n_workers must be >= 1");
  if (hidden_size == 0 || attention_heads == 0 || vocab_size == 0 || sequence_length == 0)
    fail("model dimensions must be positive");
  if (hidden_size % attention_heads != 0)
    fail("hidden_size " + std::to_string(hidden_size) + " must be divisible by attention_heads " +
         std::to_string(attention_heads));
  if (attention_heads % n_workers != 0)
    fail("attention_heads " + std::to_string(attention_heads) +
         " must be divisible by n_workers " + std::to_string(n_workers) +
         "; pick a worker count that divides the head count");
  if (hidden_size % n_workers != 0)
    fail("hidden_size " + std::to_string(hidden_size) + " must be divisible by n_workers " +
         std::to_string(n_workers));
  if (vocab_size % n_workers != 0)
    fail("vocab_size " + std::to_string(vocab_size) + " must be divisible by n_workers " +
         std::to_string(n_workers));
  if (ffn_dim() % n_workers != 0)
    fail("embedding_size (feed-forward width) " + std::to_string(ffn_dim()) +
         " must be divisible by n_workers " + std::to_string(n_workers));
  if (batch_size == 0 || batch_size % n_workers != 0)
    fail("batch_size " + std::to_string(batch_size) + " must be a positive multiple of n_workers " +
         std::to_string(n_workers) + " (activations shard on the batch dimension)");
  if (strategy != "serial" && strategy != "rtp-inplace" && strategy != "rtp-outofplace")
    fail("strategy must be one of: serial, rtp-inplace, rtp-outofplace (got '" + strategy + "')");
  if (transport != "lockstep" && transport != "concurrent")
    fail("transport must be 'lockstep' or 'concurrent' (got '" + transport + "')");
  if (alpha < 0 || beta < 0 || gamma < 0 || launch_overhead < 0)
    fail("cost-model parameters must be non-negative");
}

ModelDims ExperimentConfig::model_dims() const {
  ModelDims d;
  d.heads = attention_heads;
  d.hidden = hidden_size;
  d.layers = layers;
  d.seq = sequence_length;
  d.vocab = vocab_size;
  d.ffn = ffn_dim();
  d.moe = moe;
  d.n_experts = moe ? n_workers : 1;
  return d;
}

TransportKind ExperimentConfig::transport_kind() const {
  return transport == "concurrent" ? TransportKind::Concurrent : TransportKind::Lockstep;
}

RunStrategy ExperimentConfig::run_strategy() const {
  if (strategy == "serial") return RunStrategy::Serial;
  if (strategy == "rtp-outofplace") return RunStrategy::RtpOutOfPlace;
  return RunStrategy::RtpInplace;
}

CostModel ExperimentConfig::cost_model() const { return CostModel{alpha, beta, gamma}; }

uint64_t model_param_count(const ModelDims& d) {
  const uint64_t h = d.hidden, f = d.ffn, v = d.vocab, e = d.n_experts;
  uint64_t count = v * h;  // embedding
  uint64_t block = 4 * h * h;
  if (d.moe)
    block += h * e + e * (h * f + f + f * h + h);
  else
    block += h * f + f + f * h + h;
  count += d.layers * block;
  count += h * v + v;  // head
  return count;
}

uint64_t estimate_activation_bytes(const ModelDims& d, size_t global_batch) {
  // Forward-pass tensors held at the end of forward (inputs, per-layer
  // caches, outputs); a coarse stand-in for instrumented measurement when
  // the model is too large to execute.
  const uint64_t tokens = global_batch * d.seq;
  const uint64_t h = d.hidden, f = d.ffn, v = d.vocab;
  uint64_t elems = tokens * h;  // embedding output
  for (size_t l = 0; l < d.layers; ++l) {
    elems += tokens * h;                              // attention input cache
    elems += 3 * tokens * h;                          // q/k/v
    elems += global_batch * d.heads * d.seq * d.seq;  // probabilities
    elems += 2 * tokens * h;                          // attention out + residual
    if (d.moe)
      elems += tokens * (2 * f + 2 * h) + tokens * d.n_experts;  // expert caches + gate probs
    else
      elems += 2 * tokens * f + tokens * h;  // ffn pre/hidden + output
    elems += tokens * h;                     // block output
  }
  elems += tokens * v;  // logits
  return elems * sizeof(double);
}

uint64_t estimate_boundary_activation_bytes(const ModelDims& d, size_t global_batch) {
  return global_batch * d.seq * d.hidden * sizeof(double);
}

}  // namespace rtp

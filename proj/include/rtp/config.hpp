#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "rtp/analysis.hpp"
#include "rtp/serial.hpp"

namespace rtp {

// Flat JSON config; CLI flags override file values. Field names follow the
// schema documented in the README.
struct ExperimentConfig {
  // model
  size_t attention_heads = 4;
  size_t hidden_size = 32;
  size_t layers = 2;
  size_t sequence_length = 16;
  size_t vocab_size = 64;
  size_t embedding_size = 0;  // feed-forward inner width; 0 means 4*hidden_size
  bool moe = false;

  // run
  size_t n_workers = 1;
  std::string strategy = "rtp-inplace";  // serial | rtp-inplace | rtp-outofplace
  size_t batch_size = 8;                 // global batch
  uint64_t seed = 42;
  std::string transport = "lockstep";  // lockstep | concurrent

  // cost model
  double alpha = 1e-6;
  double beta = 1e-10;
  double gamma = 1e-11;
  double launch_overhead = 0.0;

  static ExperimentConfig defaults();  // honors RTP_SIM_SEED
  static ExperimentConfig from_json_file(const std::string& path);
  void merge_json_file(const std::string& path);

  // Divisibility and enum checks with remediation hints. Throws ConfigError.
  void validate() const;

  size_t ffn_dim() const { return embedding_size ? embedding_size : 4 * hidden_size; }
  ModelDims model_dims() const;
  TransportKind transport_kind() const;
  RunStrategy run_strategy() const;
  CostModel cost_model() const;
};

uint64_t model_param_count(const ModelDims& dims);
// Analytic forward-activation estimate (bytes) for the Table-1 A column;
// formula documented in the README.
uint64_t estimate_activation_bytes(const ModelDims& dims, size_t global_batch);
// One inter-layer boundary activation (the pipeline A_p term).
uint64_t estimate_boundary_activation_bytes(const ModelDims& dims, size_t global_batch);

}  // namespace rtp

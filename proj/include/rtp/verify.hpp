#pragma once

#include <string>
#include <vector>

#include "rtp/model.hpp"

namespace rtp {

double rel_err(double a, double b, double floor = 1e-12);
double max_rel_diff(const Tensor& a, const Tensor& b, double floor = 1e-12);

struct LayerGradDiff {
  std::string layer;
  double max_rel = 0.0;
};

struct EquivalenceReport {
  size_t n = 1;
  bool moe = false;
  double max_forward_rel = 0.0;
  double max_grad_rel = 0.0;
  double loss_serial = 0.0;
  double loss_rtp = 0.0;
  std::vector<LayerGradDiff> per_layer;
};

// One training step on the serial oracle and its sharded twin over the same
// global batch; compares gathered forward outputs and every parameter
// gradient. Replicated gate gradients are summed across workers in rank
// order before comparison (data-parallel semantics).
EquivalenceReport run_equivalence(const ModelDims& dims, size_t n, TransportKind kind,
                                  size_t batch, uint64_t seed, RotationMode mode);

struct FdReport {
  size_t samples = 0;
  double max_rel = 0.0;
  std::string worst_site;
};

// Central finite differences of the end-to-end MSE loss against the analytic
// gradients in the traveling accumulators, probing `samples` parameters
// spread across every layer type. The relative-error floor of 1e-3 absorbs
// the O(1e-10) cancellation noise of double-precision central differences.
FdReport run_fd_check(const ModelDims& dims, size_t n, TransportKind kind, size_t batch,
                      uint64_t seed, size_t samples, double h = 1e-6);

}  // namespace rtp

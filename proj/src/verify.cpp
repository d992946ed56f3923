#include "rtp/verify.hpp"

#include <algorithm>
#include <cmath>

#include "rtp/errors.hpp"

namespace rtp {

double rel_err(double a, double b, double floor) {
  const double diff = std::abs(a - b);
  if (diff == 0.0) return 0.0;
  return diff / std::max({std::abs(a), std::abs(b), floor});
}

double max_rel_diff(const Tensor& a, const Tensor& b, double floor) {
  if (a.shape() != b.shape())
    throw DimensionError("max_rel_diff: shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  double worst = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, rel_err(a.at(i), b.at(i), floor));
  return worst;
}

namespace {

ModelDims resolved_dims(const ModelDims& dims, size_t n) {
  ModelDims d = dims;
  if (d.moe) d.n_experts = n;
  return d;
}

// Serial gradients flattened with the same per-shard grouping as the layer's
// weights, so shard r of the result compares against worker r's accumulator.
std::vector<Tensor> serial_grad_shards(const std::vector<ParamGroup>& groups) {
  FlatParameter fp = flatten_shards(groups);
  std::vector<Tensor> shards;
  for (size_t r = 0; r < fp.n_shards; ++r) shards.push_back(shard_view(fp, r));
  return shards;
}

void compare_layer(EquivalenceReport& report, const std::string& name, RtpLayerBase& layer,
                   const std::vector<ParamGroup>& serial_groups) {
  auto shards = serial_grad_shards(serial_groups);
  double worst = 0.0;
  for (size_t r = 0; r < shards.size(); ++r)
    worst = std::max(worst, max_rel_diff(layer.slots()[r].grad_acc, shards[r]));
  report.per_layer.push_back({name, worst});
  report.max_grad_rel = std::max(report.max_grad_rel, worst);
}

}  // namespace

EquivalenceReport run_equivalence(const ModelDims& dims, size_t n, TransportKind kind,
                                  size_t batch, uint64_t seed, RotationMode mode) {
  const ModelDims d = resolved_dims(dims, n);
  SerialModel serial(d, seed);
  BatchFixture fx = make_batch_fixture(d, batch, seed);
  const size_t global_numel = fx.target.numel();

  serial.zero_grads();
  Tensor logits_serial = serial.forward(fx.ids, Mode::Train);
  Tensor dlogits_serial = mse_grad(logits_serial, fx.target, global_numel);
  serial.backward(dlogits_serial);

  WorkerGroup group(n, kind);
  RtpModel rtp(serial, group, mode);
  auto ids_sh = shard_ids(fx, n);
  auto target_sh = shard_rows(fx.target, batch, n);

  rtp.begin_step();
  std::vector<Tensor> logits_rtp = rtp.forward(ids_sh, Mode::Train);
  std::vector<Tensor> dlogits(n);
  double sq_sum = 0.0;
  for (size_t r = 0; r < n; ++r) {
    sq_sum += squared_error_sum(logits_rtp[r], target_sh[r]);
    dlogits[r] = mse_grad(logits_rtp[r], target_sh[r], global_numel);
  }
  rtp.backward(dlogits);

  EquivalenceReport report;
  report.n = n;
  report.moe = d.moe;
  report.loss_serial = squared_error_sum(logits_serial, fx.target) / global_numel;
  report.loss_rtp = sq_sum / global_numel;

  Tensor gathered = concat(logits_rtp, 0);
  report.max_forward_rel = max_rel_diff(gathered, logits_serial);

  compare_layer(report, "embedding", rtp.embedding(),
                embedding_shard_groups(serial.embedding.gtable, n));
  for (size_t l = 0; l < rtp.rtp_blocks().size(); ++l) {
    auto& rb = rtp.rtp_blocks()[l];
    auto& sb = serial.blocks[l];
    const std::string tag = "block" + std::to_string(l);
    compare_layer(report, tag + "/attn", *rb.attn,
                  attention_shard_groups(sb.attn.gq, sb.attn.gk, sb.attn.gv, sb.attn.go,
                                         d.heads, n));
    if (rb.moe) {
      compare_layer(report, tag + "/moe", *rb.moe, moe_shard_groups(sb.moe->grads, n));
      // Replicated gate: the model gradient is the rank-ordered sum of the
      // per-worker partials.
      Tensor gate_sum(rb.moe->gate_grad(0).shape());
      for (size_t r = 0; r < n; ++r) add_inplace(gate_sum, rb.moe->gate_grad(r));
      const double worst = max_rel_diff(gate_sum, sb.moe->ggate);
      report.per_layer.push_back({tag + "/moe.gate", worst});
      report.max_grad_rel = std::max(report.max_grad_rel, worst);
    } else {
      compare_layer(report, tag + "/ffn1", *rb.ffn1,
                    linear_shard_groups(sb.ffn1.gw, sb.ffn1.gb, n));
      compare_layer(report, tag + "/ffn2", *rb.ffn2,
                    linear_shard_groups(sb.ffn2.gw, sb.ffn2.gb, n));
    }
  }
  compare_layer(report, "head", rtp.head(), linear_shard_groups(serial.head.gw, serial.head.gb, n));
  return report;
}

namespace {

struct ProbeSite {
  RtpLayerBase* layer = nullptr;
  RtpMoe* gate_of = nullptr;  // set for replicated-gate sites
  std::string name;
  size_t rank = 0;
  size_t elem = 0;
};

double eval_loss(RtpModel& rtp, std::span<const std::vector<int64_t>> ids,
                 std::span<const Tensor> targets, size_t global_numel) {
  std::vector<Tensor> out = rtp.forward(ids, Mode::Eval);
  double sq = 0.0;
  for (size_t r = 0; r < out.size(); ++r) sq += squared_error_sum(out[r], targets[r]);
  return sq / static_cast<double>(global_numel);
}

}  // namespace

FdReport run_fd_check(const ModelDims& dims, size_t n, TransportKind kind, size_t batch,
                      uint64_t seed, size_t samples, double h) {
  const ModelDims d = resolved_dims(dims, n);
  SerialModel serial(d, seed);
  WorkerGroup group(n, kind);
  RtpModel rtp(serial, group, RotationMode::InPlace);
  BatchFixture fx = make_batch_fixture(d, batch, seed);
  auto ids_sh = shard_ids(fx, n);
  auto target_sh = shard_rows(fx.target, batch, n);
  const size_t global_numel = fx.target.numel();

  // Analytic gradients once.
  rtp.zero_grads();
  std::vector<Tensor> out = rtp.forward(ids_sh, Mode::Train);
  std::vector<Tensor> dlogits(n);
  for (size_t r = 0; r < n; ++r) dlogits[r] = mse_grad(out[r], target_sh[r], global_numel);
  rtp.backward(dlogits);

  // Probe sites spread over every layer (and the replicated gates).
  std::vector<ProbeSite> sites;
  std::vector<RtpLayerBase*> layers = rtp.all_layers();
  std::vector<std::string> names;
  names.push_back("embedding");
  for (size_t l = 0; l < rtp.rtp_blocks().size(); ++l) {
    names.push_back("block" + std::to_string(l) + "/attn");
    if (rtp.rtp_blocks()[l].moe)
      names.push_back("block" + std::to_string(l) + "/moe");
    else {
      names.push_back("block" + std::to_string(l) + "/ffn1");
      names.push_back("block" + std::to_string(l) + "/ffn2");
    }
  }
  names.push_back("head");

  SplitMix64 rng(seed ^ 0xFD15D00DULL);
  const size_t per_layer = (samples + layers.size() - 1) / layers.size();
  for (size_t li = 0; li < layers.size(); ++li) {
    for (size_t i = 0; i < per_layer; ++i) {
      ProbeSite site;
      site.layer = layers[li];
      site.name = names[li];
      site.rank = rng.next_index(n);
      site.elem = rng.next_index(layers[li]->shard_len());
      sites.push_back(site);
    }
  }
  for (auto& b : rtp.rtp_blocks()) {
    if (!b.moe) continue;
    for (size_t i = 0; i < per_layer; ++i) {
      ProbeSite site;
      site.gate_of = b.moe.get();
      site.name = "moe.gate";
      site.elem = rng.next_index(b.moe->gate_weight(0).numel());
      sites.push_back(site);
    }
  }

  FdReport report;
  for (const ProbeSite& site : sites) {
    double analytic = 0.0;
    auto poke = [&](double delta) {
      if (site.gate_of) {
        // One logical parameter replicated on every worker.
        for (size_t r = 0; r < n; ++r) site.gate_of->gate_weight_mut(r).at(site.elem) += delta;
      } else {
        site.layer->slots()[site.rank].weight.at(site.elem) += delta;
      }
    };
    if (site.gate_of) {
      for (size_t r = 0; r < n; ++r) analytic += site.gate_of->gate_grad(r).at(site.elem);
    } else {
      analytic = site.layer->slots()[site.rank].grad_acc.at(site.elem);
    }

    poke(+h);
    const double loss_plus = eval_loss(rtp, ids_sh, target_sh, global_numel);
    poke(-2.0 * h);
    const double loss_minus = eval_loss(rtp, ids_sh, target_sh, global_numel);
    poke(+h);

    const double fd = (loss_plus - loss_minus) / (2.0 * h);
    const double rel = rel_err(analytic, fd, 1e-3);
    ++report.samples;
    if (rel > report.max_rel) {
      report.max_rel = rel;
      report.worst_site = site.name + "[" + std::to_string(site.elem) + "]";
    }
  }
  return report;
}

}  // namespace rtp

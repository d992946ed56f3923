#include <cassert>

#include "rtp/layers.hpp"

namespace rtp {

ParamGroup flatten_group_list(const std::vector<ParamGroup>& groups) {
  ParamGroup all;
  for (size_t j = 0; j < groups.size(); ++j)
    for (const auto& [name, t] : groups[j])
      all.emplace_back("s" + std::to_string(j) + "/" + name, t);
  return all;
}

FlatParameter flatten_shards(const std::vector<ParamGroup>& groups) {
  const size_t n = groups.size();
  FlatParameter fp = flatten(flatten_group_list(groups), n);
  // Equal-sized groups mean zero padding and aligned shard boundaries.
  size_t group_elems = 0;
  for (const auto& [name, t] : groups[0]) group_elems += t.numel();
  for (const auto& g : groups) {
    size_t e = 0;
    for (const auto& [name, t] : g) e += t.numel();
    if (e != group_elems)
      throw ConfigError("shard groups must have equal element counts; got " + std::to_string(e) +
                        " vs " + std::to_string(group_elems));
  }
  assert(fp.pad_len == 0);
  assert(fp.shard_len() == group_elems);
  return fp;
}

std::vector<ParamGroup> linear_shard_groups(const Tensor& w, const Tensor& b, size_t n) {
  if (b.numel() != w.cols())
    throw DimensionError("linear bias " + b.shape_str() + " does not match weight " +
                         w.shape_str());
  auto w_blocks = split(w, 1, n);
  auto b_blocks = split(b, 0, n);
  std::vector<ParamGroup> groups(n);
  for (size_t j = 0; j < n; ++j) {
    groups[j].emplace_back("w", std::move(w_blocks[j]));
    groups[j].emplace_back("b", std::move(b_blocks[j]));
  }
  return groups;
}

std::vector<ParamGroup> embedding_shard_groups(const Tensor& table, size_t n) {
  auto blocks = split(table, 1, n);
  std::vector<ParamGroup> groups(n);
  for (size_t j = 0; j < n; ++j) groups[j].emplace_back("table", std::move(blocks[j]));
  return groups;
}

std::vector<ParamGroup> attention_shard_groups(const Tensor& wq, const Tensor& wk,
                                               const Tensor& wv, const Tensor& wo, size_t heads,
                                               size_t n) {
  if (heads % n != 0)
    throw ConfigError("attention_shard_groups: " + std::to_string(heads) +
                      " heads not divisible by " + std::to_string(n) + " shards");
  // Column blocks for Q/K/V follow head groups; the output projection
  // contributes the matching row block.
  auto q_blocks = split(wq, 1, n);
  auto k_blocks = split(wk, 1, n);
  auto v_blocks = split(wv, 1, n);
  auto o_blocks = split(wo, 0, n);
  std::vector<ParamGroup> groups(n);
  for (size_t j = 0; j < n; ++j) {
    groups[j].emplace_back("wq", std::move(q_blocks[j]));
    groups[j].emplace_back("wk", std::move(k_blocks[j]));
    groups[j].emplace_back("wv", std::move(v_blocks[j]));
    groups[j].emplace_back("wo", std::move(o_blocks[j]));
  }
  return groups;
}

std::vector<ParamGroup> moe_shard_groups(std::span<const ExpertParams> experts, size_t n) {
  if (experts.size() != n)
    throw ConfigError("moe_shard_groups: " + std::to_string(experts.size()) + " experts for " +
                      std::to_string(n) + " shards");
  std::vector<ParamGroup> groups(n);
  for (size_t j = 0; j < n; ++j) {
    groups[j].emplace_back("w1", experts[j].w1);
    groups[j].emplace_back("b1", experts[j].b1);
    groups[j].emplace_back("w2", experts[j].w2);
    groups[j].emplace_back("b2", experts[j].b2);
  }
  return groups;
}

size_t argmax_row(const double* row, size_t n) {
  size_t best = 0;
  for (size_t k = 1; k < n; ++k)
    if (row[k] > row[best]) best = k;
  return best;
}

RtpLayerBase::RtpLayerBase(WorkerGroup& group, std::string label)
    : group_(&group), label_(std::move(label)) {}

void RtpLayerBase::init_slots(const std::vector<ParamGroup>& groups) {
  FlatParameter fp = flatten_shards(groups);
  segments_ = fp.segments;
  shard_len_ = fp.shard_len();
  slots_.resize(group_->size());
  group_->each([&](size_t r) {
    ShardSlot& slot = slots_[r];
    {
      CategoryScope param_scope(MemCategory::Param);
      slot.weight = shard_view(fp, r);
    }
    {
      CategoryScope grad_scope(MemCategory::Grad);
      slot.grad_acc = Tensor({shard_len_});
    }
    slot.logical_id = r;
    slot.rotation_offset = 0;
  });
}

void RtpLayerBase::zero_grads() {
  group_->each([&](size_t r) { slots_[r].grad_acc.fill(0.0); });
}

bool RtpLayerBase::all_home() const {
  for (size_t r = 0; r < slots_.size(); ++r)
    if (slots_[r].logical_id != r) return false;
  return true;
}

void RtpLayerBase::require_home(const char* op) const {
  if (!all_home())
    throw StateError(label_ + ": " + op + " requires every slot at its home position");
}

void RtpLayerBase::check_forward_position(size_t rank, size_t step) const {
  const size_t n = group_->size();
  const size_t expected = (rank + n - step % n) % n;
  if (slots_[rank].logical_id != expected)
    throw ProtocolError(label_ + ": worker " + std::to_string(rank) + " holds shard " +
                        std::to_string(slots_[rank].logical_id) + " at forward step " +
                        std::to_string(step) + ", expected " + std::to_string(expected));
}

void RtpLayerBase::check_backward_position(size_t rank, size_t step) const {
  const size_t n = group_->size();
  const size_t expected = (rank + 1 + step) % n;
  if (slots_[rank].logical_id != expected)
    throw ProtocolError(label_ + ": worker " + std::to_string(rank) + " holds shard " +
                        std::to_string(slots_[rank].logical_id) + " at backward step " +
                        std::to_string(step) + ", expected " + std::to_string(expected));
}

void RtpLayerBase::allocate_comm_spares() {
  if (group_->size() == 1) return;  // no rotation, no buffer
  spares_.resize(group_->size());
  group_->each([&](size_t r) {
    CategoryScope comm_scope(MemCategory::CommBuffer);
    spares_[r] = Tensor({shard_len_});
  });
}

void RtpLayerBase::release_comm_spares() { spares_.clear(); }

void RtpLayerBase::rotate_forward() {
  if (rotation_mode_ == RotationMode::OutOfPlace && !spares_.empty())
    group_->rotate_outofplace(slots_, spares_, Direction::Clockwise, PayloadKind::Weight, label_);
  else
    group_->rotate_clockwise(slots_, PayloadKind::Weight, label_);
}

void RtpLayerBase::rotate_backward() {
  if (rotation_mode_ == RotationMode::OutOfPlace && !spares_.empty())
    group_->rotate_outofplace(slots_, spares_, Direction::CounterClockwise,
                              PayloadKind::WeightAndGrad, label_);
  else
    group_->rotate_counterclockwise(slots_, PayloadKind::WeightAndGrad, label_);
}

void RtpLayerBase::rehome_after_eval() {
  if (group_->size() > 1) rotate_forward();
}

}  // namespace rtp

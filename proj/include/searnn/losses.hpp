#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "searnn/autodiff.hpp"

namespace searnn {

enum class LossKind { kMle, kLl, kKl, kLlcas, kShl, kConsistent, kSampledLl, kSampledKl };

struct LossSpec {
  LossKind kind = LossKind::kMle;
  double alpha = 10.0;  // peakiness of the cost-derived target (KL, LLCAS)
};

inline bool loss_needs_alpha(LossKind k) {
  return k == LossKind::kKl || k == LossKind::kLlcas || k == LossKind::kSampledKl;
}
inline bool loss_needs_costs(LossKind k) { return k != LossKind::kMle; }
inline bool loss_is_sampled(LossKind k) {
  return k == LossKind::kSampledLl || k == LossKind::kSampledKl;
}

// Minimal-cost index; exact ties resolve to the ground-truth token when it
// participates in the tie, otherwise to the lowest index.
inline int argmin_cost(std::span<const double> costs, int gt_index) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(costs.size()); ++i)
    if (costs[i] < costs[best]) best = i;
  if (gt_index >= 0 && gt_index < static_cast<int>(costs.size()) &&
      costs[gt_index] == costs[best])
    return gt_index;
  return best;
}

// Exponentially normalized cost-derived target: P(a) proportional to
// exp(-alpha c(a)); invariant under shifting every cost by a constant.
inline std::vector<double> cost_target_distribution(std::span<const double> costs, double alpha) {
  if (alpha <= 0.0) throw ContractError("cost target distribution needs alpha > 0");
  Tensor scaled({static_cast<int>(costs.size())});
  for (int i = 0; i < scaled.numel(); ++i) scaled[i] = -alpha * costs[i];
  Tensor probs;
  kernels::softmax(scaled, probs);
  return std::vector<double>(probs.data().begin(), probs.data().end());
}

// -log softmax(s)[y] summed over cells: the teacher-forced likelihood loss.
inline Tape::NodeId mle_loss(Tape& tape, std::span<const Tape::NodeId> score_cells,
                             std::span<const int> target) {
  if (score_cells.empty() || score_cells.size() != target.size())
    throw ContractError("mle_loss: one score vector per target token required");
  Tape::NodeId total = -1;
  for (std::size_t t = 0; t < score_cells.size(); ++t) {
    Tape::NodeId term = tape.neg(tape.pick(tape.log_softmax(score_cells[t]), target[t]));
    total = (t == 0) ? term : tape.add(total, term);
  }
  return total;
}

// Log-loss against the minimal-cost token. Costs are constants.
inline Tape::NodeId ll_loss(Tape& tape, Tape::NodeId scores, std::span<const double> costs,
                            int gt_index) {
  if (static_cast<int>(costs.size()) != tape.value(scores).numel())
    throw DimensionError("ll_loss: cost vector does not match the score vector");
  const int target = argmin_cost(costs, gt_index);
  return tape.neg(tape.pick(tape.log_softmax(scores), target));
}

// Cross-entropy from the exp-normalized cost distribution to the model's
// softmax; with costs fixed, this matches the divergence up to a constant.
inline Tape::NodeId kl_loss(Tape& tape, Tape::NodeId scores, std::span<const double> costs,
                            double alpha) {
  if (static_cast<int>(costs.size()) != tape.value(scores).numel())
    throw DimensionError("kl_loss: cost vector does not match the score vector");
  const std::vector<double> target = cost_target_distribution(costs, alpha);
  Tape::NodeId tgt = tape.constant(Tensor({static_cast<int>(target.size())}, target));
  return tape.neg(tape.sum(tape.mul(tgt, tape.log_softmax(scores))));
}

// Log-loss with the scaled full cost vector added inside the exponential.
inline Tape::NodeId llcas_loss(Tape& tape, Tape::NodeId scores, std::span<const double> costs,
                               double alpha, int gt_index) {
  if (static_cast<int>(costs.size()) != tape.value(scores).numel())
    throw DimensionError("llcas_loss: cost vector does not match the score vector");
  if (alpha < 0.0) throw ContractError("llcas_loss: alpha must be nonnegative");
  Tensor shift({static_cast<int>(costs.size())});
  for (int i = 0; i < shift.numel(); ++i) shift[i] = alpha * costs[i];
  Tape::NodeId augmented = tape.add(scores, tape.constant(std::move(shift)));
  const int target = argmin_cost(costs, gt_index);
  return tape.neg(tape.pick(tape.log_softmax(augmented), target));
}

// Cost-augmented structured hinge: max_a(s(a) + c(a)) - s(a*).
inline Tape::NodeId shl_loss(Tape& tape, Tape::NodeId scores, std::span<const double> costs,
                             int gt_index) {
  if (static_cast<int>(costs.size()) != tape.value(scores).numel())
    throw DimensionError("shl_loss: cost vector does not match the score vector");
  Tensor c({static_cast<int>(costs.size())}, std::vector<double>(costs.begin(), costs.end()));
  Tape::NodeId hinge = tape.max(tape.add(scores, tape.constant(std::move(c))));
  const int target = argmin_cost(costs, gt_index);
  return tape.sub(hinge, tape.pick(scores, target));
}

// Sum of c(a) softplus(s(a) - mean(s)) over tokens.
inline Tape::NodeId consistent_loss(Tape& tape, Tape::NodeId scores,
                                    std::span<const double> costs) {
  const int a_total = tape.value(scores).numel();
  if (static_cast<int>(costs.size()) != a_total)
    throw DimensionError("consistent_loss: cost vector does not match the score vector");
  Tape::NodeId mean = tape.scale_add(tape.sum(scores), 1.0 / a_total, 0.0);
  Tape::NodeId centered = tape.sub(scores, mean);
  Tape::NodeId zero = tape.constant(Tensor::scalar(0.0));
  std::vector<Tape::NodeId> softplus;
  softplus.reserve(static_cast<std::size_t>(a_total));
  for (int a = 0; a < a_total; ++a) {
    // softplus(x) = -log_softmax([x, 0])[1]
    Tape::NodeId pairwise = tape.concat({tape.pick(centered, a), zero});
    softplus.push_back(tape.neg(tape.pick(tape.log_softmax(pairwise), 1)));
  }
  Tensor c({a_total}, std::vector<double>(costs.begin(), costs.end()));
  return tape.sum(tape.mul(tape.constant(std::move(c)), tape.concat(softplus)));
}

namespace detail {

inline int position_in_set(std::span<const int> token_set, int token) {
  for (int i = 0; i < static_cast<int>(token_set.size()); ++i)
    if (token_set[i] == token) return i;
  return -1;
}

}  // namespace detail

// Log-loss over the sampled token subset only; unsampled scores receive
// exactly zero gradient.
inline Tape::NodeId sampled_ll(Tape& tape, Tape::NodeId scores, std::span<const int> token_set,
                               std::span<const double> costs_on_set, int gt_token) {
  if (token_set.size() != costs_on_set.size())
    throw DimensionError("sampled_ll: token set and cost vector differ in size");
  const int gt_pos = detail::position_in_set(token_set, gt_token);
  if (gt_pos < 0) throw ContractError("sampled_ll: ground-truth token not in the sampled set");
  Tape::NodeId restricted =
      tape.gather(scores, std::vector<int>(token_set.begin(), token_set.end()));
  const int target = argmin_cost(costs_on_set, gt_pos);
  return tape.neg(tape.pick(tape.log_softmax(restricted), target));
}

// Cross-entropy between the restricted cost target and the restricted
// softmax, over the sampled token subset only.
inline Tape::NodeId sampled_kl(Tape& tape, Tape::NodeId scores, std::span<const int> token_set,
                               std::span<const double> costs_on_set, double alpha, int gt_token) {
  if (token_set.size() != costs_on_set.size())
    throw DimensionError("sampled_kl: token set and cost vector differ in size");
  if (detail::position_in_set(token_set, gt_token) < 0)
    throw ContractError("sampled_kl: ground-truth token not in the sampled set");
  Tape::NodeId restricted =
      tape.gather(scores, std::vector<int>(token_set.begin(), token_set.end()));
  const std::vector<double> target = cost_target_distribution(costs_on_set, alpha);
  Tape::NodeId tgt = tape.constant(Tensor({static_cast<int>(target.size())}, target));
  return tape.neg(tape.sum(tape.mul(tgt, tape.log_softmax(restricted))));
}

}  // namespace searnn

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <ostream>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include "searnn/datasets.hpp"
#include "searnn/policies.hpp"

namespace searnn {

/// Per-sample matrix of roll-out costs, one row per cell, one column per
/// token. Entries that were never rolled out hold NaN and are flagged absent.
struct CostTensor {
  int n_cells = 0;
  int n_actions = 0;
  std::vector<double> cost;              // n_cells * n_actions, NaN when absent
  std::vector<std::uint8_t> present;     // parallel to cost
  std::vector<std::uint8_t> cell_sampled;
  std::vector<std::vector<int>> token_sets;  // sorted, empty for unsampled cells

  CostTensor() = default;
  CostTensor(int cells, int actions)
      : n_cells(cells),
        n_actions(actions),
        cost(static_cast<std::size_t>(cells) * actions, std::numeric_limits<double>::quiet_NaN()),
        present(static_cast<std::size_t>(cells) * actions, 0),
        cell_sampled(static_cast<std::size_t>(cells), 0),
        token_sets(static_cast<std::size_t>(cells)) {}

  bool has(int t, int a) const { return present[idx(t, a)] != 0; }
  double at(int t, int a) const {
    if (!has(t, a)) throw ContractError("cost entry was not sampled");
    return cost[idx(t, a)];
  }
  void set(int t, int a, double c) {
    cost[idx(t, a)] = c;
    present[idx(t, a)] = 1;
  }
  // Dense cost row for a fully sampled cell.
  std::vector<double> full_row(int t) const {
    std::vector<double> row(static_cast<std::size_t>(n_actions));
    for (int a = 0; a < n_actions; ++a) row[static_cast<std::size_t>(a)] = at(t, a);
    return row;
  }
  std::vector<double> row_at(int t, std::span<const int> tokens) const {
    std::vector<double> row;
    row.reserve(tokens.size());
    for (int a : tokens) row.push_back(at(t, a));
    return row;
  }

 private:
  std::size_t idx(int t, int a) const {
    if (t < 0 || t >= n_cells || a < 0 || a >= n_actions)
      throw ContractError("cost tensor index out of range");
    return static_cast<std::size_t>(t) * n_actions + a;
  }
};

enum class TokenStrategy { kAll, kUniform, kPolicy, kBiasedPolicy, kTopK, kNeighborMix };

constexpr int kAllCells = -1;

struct SamplerSpec {
  int cells_per_sequence = kAllCells;
  TokenStrategy token_strategy = TokenStrategy::kAll;
  int tokens_per_cell = 1;   // k, ground truth included
  int neighbor_window = 0;   // NeighborMix: gt positions t-w..t+w join the set
};

struct RolloutBudget {
  long long rollouts = 0;
};

// n distinct cell indices from [0, T), uniform without replacement.
inline std::vector<int> sample_cells(int t_total, int n, std::mt19937_64& rng) {
  if (n < 1 || n > t_total) throw ContractError("sample_cells: need 1 <= n <= T");
  std::vector<int> all(static_cast<std::size_t>(t_total));
  for (int i = 0; i < t_total; ++i) all[static_cast<std::size_t>(i)] = i;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  std::sample(all.begin(), all.end(), std::back_inserter(out), n, rng);
  return out;
}

namespace detail {

// Sequential without-replacement draws proportional to `weights`, excluding
// already-chosen entries; `chosen` marks exclusions on entry.
inline void weighted_draws(std::span<const double> weights, std::vector<std::uint8_t>& chosen,
                           int draws, std::mt19937_64& rng, std::vector<int>* out) {
  for (int d = 0; d < draws; ++d) {
    double total = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i)
      if (!chosen[i]) total += weights[i];
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double u = unit(rng) * total;
    int pick = -1;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (chosen[i]) continue;
      u -= weights[i];
      pick = static_cast<int>(i);
      if (u <= 0.0) break;
    }
    chosen[static_cast<std::size_t>(pick)] = 1;
    out->push_back(pick);
  }
}

}  // namespace detail

// Token subset of size k for one cell. The ground-truth token is always
// included; the remaining k-1 come from the strategy. Returned sorted.
inline std::vector<int> sample_tokens(const Tensor& scores, int gt_token, const SamplerSpec& spec,
                                      std::mt19937_64& rng) {
  const int a_total = scores.numel();
  const int k = spec.tokens_per_cell;
  if (k < 1) throw ContractError("sample_tokens: k must be at least 1");
  if (k > a_total) throw ContractError("sample_tokens: k exceeds the number of tokens");
  if (gt_token < 0 || gt_token >= a_total)
    throw ContractError("sample_tokens: ground-truth token out of range");

  std::vector<int> out{gt_token};
  std::vector<std::uint8_t> chosen(static_cast<std::size_t>(a_total), 0);
  chosen[static_cast<std::size_t>(gt_token)] = 1;
  const int extra = k - 1;

  switch (spec.token_strategy) {
    case TokenStrategy::kAll:
      out.clear();
      for (int a = 0; a < a_total; ++a) out.push_back(a);
      return out;
    case TokenStrategy::kUniform: {
      std::vector<double> w(static_cast<std::size_t>(a_total), 1.0);
      detail::weighted_draws(w, chosen, extra, rng, &out);
      break;
    }
    case TokenStrategy::kPolicy: {
      Tensor probs;
      kernels::softmax(scores, probs);
      std::vector<double> w(probs.data().begin(), probs.data().end());
      detail::weighted_draws(w, chosen, extra, rng, &out);
      break;
    }
    case TokenStrategy::kBiasedPolicy: {
      Tensor neg, probs;
      kernels::scale_add(scores, -1.0, 0.0, neg);
      kernels::softmax(neg, probs);
      std::vector<double> w(probs.data().begin(), probs.data().end());
      detail::weighted_draws(w, chosen, extra, rng, &out);
      break;
    }
    case TokenStrategy::kTopK: {
      std::vector<int> order(static_cast<std::size_t>(a_total));
      for (int a = 0; a < a_total; ++a) order[static_cast<std::size_t>(a)] = a;
      std::stable_sort(order.begin(), order.end(),
                       [&scores](int x, int y) { return scores[x] > scores[y]; });
      int taken = 0;
      for (int a : order) {
        if (taken == extra) break;
        if (chosen[static_cast<std::size_t>(a)]) continue;
        chosen[static_cast<std::size_t>(a)] = 1;
        out.push_back(a);
        ++taken;
      }
      break;
    }
    case TokenStrategy::kNeighborMix:
      throw ContractError("sample_tokens: use neighbor_mix_sample for the neighbor strategy");
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Union of the top-k scoring tokens and the ground-truth tokens in the
// window cell-w .. cell+w (clipped to the sequence), plus gt[cell] itself.
inline std::vector<int> neighbor_mix_sample(const Tensor& scores, std::span<const int> gt_ext,
                                            int cell, const SamplerSpec& spec) {
  const int a_total = scores.numel();
  if (spec.tokens_per_cell + (2 * spec.neighbor_window + 1) > a_total)
    throw ContractError("neighbor_mix_sample: budgets exceed the token count");
  std::vector<std::uint8_t> chosen(static_cast<std::size_t>(a_total), 0);
  std::vector<int> out;
  auto take = [&](int a) {
    if (!chosen[static_cast<std::size_t>(a)]) {
      chosen[static_cast<std::size_t>(a)] = 1;
      out.push_back(a);
    }
  };
  take(gt_ext[static_cast<std::size_t>(cell)]);
  const int lo = std::max(0, cell - spec.neighbor_window);
  const int hi = std::min(static_cast<int>(gt_ext.size()) - 1, cell + spec.neighbor_window);
  for (int i = lo; i <= hi; ++i) take(gt_ext[static_cast<std::size_t>(i)]);
  std::vector<int> order(static_cast<std::size_t>(a_total));
  for (int a = 0; a < a_total; ++a) order[static_cast<std::size_t>(a)] = a;
  std::stable_sort(order.begin(), order.end(),
                   [&scores](int x, int y) { return scores[x] > scores[y]; });
  int taken = 0;
  for (int a : order) {
    if (taken == spec.tokens_per_cell) break;
    take(a);
    ++taken;
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct CollectedSample {
  RollInRecord rollin;
  CostTensor costs;
};

namespace detail {

inline void parallel_over(int n, const std::function<void(int)>& fn) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int workers = static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(n)));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto worker = [&] {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace detail

// One roll-in per sample, then one roll-out per sampled (cell, token) pair,
// with the resulting costs stored per sample. Model parameters are read-only
// throughout; samples are processed concurrently, and every random stream is
// derived from (seed, sample, cell, token) so the outcome does not depend on
// scheduling. The budget counter advances by exactly the number of roll-outs.
inline std::vector<CollectedSample> collect_costs(const Seq2SeqModel& model,
                                                  std::span<const SeqPair> batch,
                                                  const PolicySpec& policy,
                                                  const SamplerSpec& sampler, const CostFn& cost_fn,
                                                  std::uint64_t seed, RolloutBudget* budget) {
  if (batch.empty()) throw ContractError("collect_costs: empty batch");
  const int a_total = model.config().vocab_size;
  std::vector<CollectedSample> out(batch.size());
  std::atomic<long long> rollouts{0};

  detail::parallel_over(static_cast<int>(batch.size()), [&](int s) {
    const SeqPair& pair = batch[static_cast<std::size_t>(s)];
    CollectedSample& slot = out[static_cast<std::size_t>(s)];
    slot.rollin = roll_in(model, pair.src, pair.tgt, policy);
    const int n_cells = slot.rollin.n_cells();
    const std::vector<int> gt_ext =
        extended_target(pair.tgt, model.config().eos_id, model.config().t_max);
    slot.costs = CostTensor(n_cells, a_total);

    std::vector<int> cells;
    if (sampler.cells_per_sequence == kAllCells || sampler.cells_per_sequence >= n_cells) {
      for (int t = 0; t < n_cells; ++t) cells.push_back(t);
    } else {
      std::mt19937_64 cell_rng(detail::seed_mix({seed, static_cast<std::uint64_t>(s), 0xce11}));
      cells = sample_cells(n_cells, sampler.cells_per_sequence, cell_rng);
    }

    long long local_rollouts = 0;
    Seq2SeqModel::DecodeWorkspace workspace;
    for (int t : cells) {
      std::vector<int> tokens;
      if (sampler.token_strategy == TokenStrategy::kAll) {
        tokens.resize(static_cast<std::size_t>(a_total));
        for (int a = 0; a < a_total; ++a) tokens[static_cast<std::size_t>(a)] = a;
      } else if (sampler.token_strategy == TokenStrategy::kNeighborMix) {
        tokens = neighbor_mix_sample(slot.rollin.scores[static_cast<std::size_t>(t)], gt_ext, t,
                                     sampler);
      } else {
        std::mt19937_64 tok_rng(detail::seed_mix(
            {seed, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(t), 0x70c5}));
        tokens = sample_tokens(slot.rollin.scores[static_cast<std::size_t>(t)],
                               gt_ext[static_cast<std::size_t>(t)], sampler, tok_rng);
      }
      slot.costs.cell_sampled[static_cast<std::size_t>(t)] = 1;
      slot.costs.token_sets[static_cast<std::size_t>(t)] = tokens;
      for (int a : tokens) {
        const std::uint64_t flip_seed =
            detail::seed_mix({seed, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(t),
                              static_cast<std::uint64_t>(a)});
        const std::vector<int> pred =
            roll_out(model, slot.rollin, t, a, policy, pair.tgt, flip_seed, &workspace);
        double c;
        try {
          c = cost_fn(pred, pair.tgt);
        } catch (const std::exception& e) {
          throw RolloutError(std::string("cost function failed: ") + e.what(), s, t, a);
        }
        slot.costs.set(t, a, c);
        ++local_rollouts;
      }
    }
    rollouts.fetch_add(local_rollouts);
  });

  if (budget) budget->rollouts += rollouts.load();
  return out;
}

// Tab-separated dump of sampled entries: sample_id, cell (1-based), token,
// cost — one record per line.
inline void dump_cost_tensor(std::ostream& os, int sample_id, const CostTensor& costs) {
  os.precision(17);
  for (int t = 0; t < costs.n_cells; ++t) {
    if (!costs.cell_sampled[static_cast<std::size_t>(t)]) continue;
    for (int a : costs.token_sets[static_cast<std::size_t>(t)])
      os << sample_id << '\t' << (t + 1) << '\t' << a << '\t' << costs.at(t, a) << '\n';
  }
}

}  // namespace searnn

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "searnn/error.hpp"

namespace searnn {

using TokenSeq = std::vector<int>;
using CostFn = std::function<double(std::span<const int>, std::span<const int>)>;

// Position-wise mismatches up to the longer length; every position past the
// shorter sequence counts as one error.
inline double hamming_cost(std::span<const int> pred, std::span<const int> gt) {
  const std::size_t n = std::max(pred.size(), gt.size());
  double errors = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= pred.size() || i >= gt.size() || pred[i] != gt[i]) errors += 1.0;
  }
  return errors;
}

// Unit-cost Levenshtein distance (insert/delete/substitute).
inline int edit_distance(std::span<const int> a, std::span<const int> b) {
  const int n = static_cast<int>(a.size()), m = static_cast<int>(b.size());
  std::vector<int> prev(static_cast<std::size_t>(m) + 1), cur(static_cast<std::size_t>(m) + 1);
  for (int j = 0; j <= m; ++j) prev[static_cast<std::size_t>(j)] = j;
  for (int i = 1; i <= n; ++i) {
    cur[0] = i;
    for (int j = 1; j <= m; ++j) {
      const int sub = prev[static_cast<std::size_t>(j - 1)] + (a[i - 1] == b[j - 1] ? 0 : 1);
      const int del = prev[static_cast<std::size_t>(j)] + 1;
      const int ins = cur[static_cast<std::size_t>(j - 1)] + 1;
      cur[static_cast<std::size_t>(j)] = std::min({sub, del, ins});
    }
    std::swap(prev, cur);
  }
  return prev[static_cast<std::size_t>(m)];
}

// Levenshtein distance divided by the ground-truth length.
inline double edit_cost(std::span<const int> pred, std::span<const int> gt) {
  if (gt.empty()) throw ContractError("edit_cost: empty ground truth");
  return static_cast<double>(edit_distance(pred, gt)) / static_cast<double>(gt.size());
}

namespace detail {

// Clipped n-gram matches and candidate n-gram count.
inline std::pair<int, int> ngram_matches(std::span<const int> pred, std::span<const int> gt,
                                         int n) {
  const int np = static_cast<int>(pred.size()) - n + 1;
  const int ng = static_cast<int>(gt.size()) - n + 1;
  if (np <= 0) return {0, 0};
  std::map<std::vector<int>, int> ref;
  for (int i = 0; i < std::max(ng, 0); ++i)
    ref[std::vector<int>(gt.begin() + i, gt.begin() + i + n)] += 1;
  int matches = 0;
  std::map<std::vector<int>, int> used;
  for (int i = 0; i < np; ++i) {
    std::vector<int> g(pred.begin() + i, pred.begin() + i + n);
    auto it = ref.find(g);
    if (it != ref.end() && used[g] < it->second) {
      used[g] += 1;
      matches += 1;
    }
  }
  return {matches, np};
}

inline double brevity_penalty(std::size_t pred_len, std::size_t gt_len) {
  if (pred_len >= gt_len) return 1.0;
  return std::exp(1.0 - static_cast<double>(gt_len) / static_cast<double>(pred_len));
}

}  // namespace detail

// Sentence-level BLEU-4 with add-one smoothing on the n >= 2 precisions;
// n-gram orders with no candidate n-grams drop out of the geometric mean.
inline double smoothed_bleu4(std::span<const int> pred, std::span<const int> gt) {
  if (pred.empty() || gt.empty()) throw ContractError("smoothed_bleu4: empty sequence");
  double log_sum = 0.0;
  int levels = 0;
  for (int n = 1; n <= 4; ++n) {
    auto [matches, count] = detail::ngram_matches(pred, gt, n);
    if (count == 0) continue;
    double p;
    if (n == 1) {
      p = static_cast<double>(matches) / static_cast<double>(count);
      if (p == 0.0) return 0.0;
    } else {
      p = (static_cast<double>(matches) + 1.0) / (static_cast<double>(count) + 1.0);
    }
    log_sum += std::log(p);
    levels += 1;
  }
  const double geo = std::exp(log_sum / static_cast<double>(levels));
  return detail::brevity_penalty(pred.size(), gt.size()) * geo;
}

inline double smoothed_bleu_cost(std::span<const int> pred, std::span<const int> gt) {
  return 1.0 - smoothed_bleu4(pred, gt);
}

// Brevity penalty times unsmoothed clipped unigram precision.
inline double bleu1(std::span<const int> pred, std::span<const int> gt) {
  if (pred.empty() || gt.empty()) throw ContractError("bleu1: empty sequence");
  auto [matches, count] = detail::ngram_matches(pred, gt, 1);
  const double p = static_cast<double>(matches) / static_cast<double>(count);
  return detail::brevity_penalty(pred.size(), gt.size()) * p;
}

}  // namespace searnn

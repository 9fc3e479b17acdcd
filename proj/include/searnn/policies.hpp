#pragma once

#include <random>
#include <span>
#include <vector>

#include "searnn/costs.hpp"
#include "searnn/model.hpp"

namespace searnn {

enum class RollIn { kReference, kLearned };
enum class RollOut { kReference, kLearned, kMixed };
enum class ReferenceKind { kCopyGroundTruth, kSuffixBleu1 };

struct PolicySpec {
  RollIn roll_in = RollIn::kLearned;
  RollOut roll_out = RollOut::kMixed;
  double mix_probability = 0.5;  // chance a mixed roll-out follows the learned policy
  ReferenceKind reference_kind = ReferenceKind::kCopyGroundTruth;
};

/// One roll-in trajectory: per-cell hidden states, emitted tokens and score
/// vectors, plus the encoder context needed to resume decoding mid-sequence.
struct RollInRecord {
  std::vector<int> prefix;     // token emitted at each cell
  std::vector<Tensor> states;  // hidden state after each cell
  std::vector<Tensor> scores;  // projection scores at each cell
  Seq2SeqModel::EncoderContext ctx;
  PolicySpec policy;
  int n_cells() const { return static_cast<int>(prefix.size()); }
};

// Ground-truth suffix once `emitted` positions are already fixed.
inline std::vector<int> reference_completion(std::span<const int> gt, int emitted,
                                             ReferenceKind kind = ReferenceKind::kCopyGroundTruth) {
  (void)kind;
  if (emitted < 0 || emitted > static_cast<int>(gt.size()))
    throw ContractError("reference_completion: position outside the ground truth");
  return std::vector<int>(gt.begin() + emitted, gt.end());
}

// Among all |gt|+1 suffixes of the ground truth (empty included), the one
// whose concatenation with `prefix` scores highest under BLEU-1. Ties keep
// the longest suffix.
inline std::vector<int> suffix_reference_completion(std::span<const int> prefix,
                                                    std::span<const int> gt) {
  if (gt.empty()) throw ContractError("suffix_reference_completion: empty ground truth");
  if (prefix.empty()) throw ContractError("suffix_reference_completion: empty prefix");
  std::vector<int> best;
  double best_score = -1.0;
  std::vector<int> candidate(prefix.begin(), prefix.end());
  for (std::size_t start = 0; start <= gt.size(); ++start) {
    candidate.resize(prefix.size());
    candidate.insert(candidate.end(), gt.begin() + static_cast<long>(start), gt.end());
    const double score = bleu1(candidate, gt);
    if (score > best_score) {
      best_score = score;
      best.assign(gt.begin() + static_cast<long>(start), gt.end());
    }
  }
  return best;
}

// Runs the decoder for one full trajectory, recording states, emitted tokens
// and scores at every cell. A reference roll-in feeds the ground truth and
// records it verbatim, regardless of what the cells would have predicted; a
// learned roll-in feeds each cell's own greedy prediction. The trajectory
// always spans min(|gt|+1, t_max) cells, end-of-sequence emissions included.
inline RollInRecord roll_in(const Seq2SeqModel& model, std::span<const int> input,
                            std::span<const int> gt, const PolicySpec& spec) {
  if (gt.empty()) throw ContractError("roll_in: empty ground truth");
  const ModelConfig& cfg = model.config();
  const std::vector<int> gt_ext = extended_target(gt, cfg.eos_id, cfg.t_max);
  const int n_cells = static_cast<int>(gt_ext.size());

  RollInRecord rec;
  rec.policy = spec;
  rec.ctx = model.encode(input);
  Seq2SeqModel::DecoderState st = model.init_decoder(rec.ctx);
  Seq2SeqModel::DecodeWorkspace ws;
  rec.prefix.reserve(static_cast<std::size_t>(n_cells));
  rec.states.reserve(static_cast<std::size_t>(n_cells));
  rec.scores.reserve(static_cast<std::size_t>(n_cells));
  Tensor scores;
  int prev = cfg.sos_id;
  for (int t = 0; t < n_cells; ++t) {
    model.step_with(ws, st, prev, &scores);
    const int emitted = (spec.roll_in == RollIn::kReference) ? gt_ext[static_cast<std::size_t>(t)]
                                                             : kernels::argmax(scores.data());
    rec.prefix.push_back(emitted);
    rec.states.push_back(st.h);
    rec.scores.push_back(scores);
    prev = emitted;
  }
  return rec;
}

namespace detail {

// Content tokens of a trajectory: everything before the first end-of-sequence.
inline std::vector<int> content_of(std::span<const int> trajectory, int eos_id) {
  std::vector<int> out;
  for (int tok : trajectory) {
    if (tok == eos_id) break;
    out.push_back(tok);
  }
  return out;
}

}  // namespace detail

// Completed output sequence for enforcing `action` at `cell` (0-based) on
// top of a stored roll-in. The suffix after the enforced token follows the
// roll-out policy; a mixed roll-out flips one seeded coin for the whole
// trajectory. Returns content tokens only (no end-of-sequence marker). The
// record is never mutated, so repeated calls with the same flip seed agree.
inline std::vector<int> roll_out(const Seq2SeqModel& model, const RollInRecord& rec, int cell,
                                 int action, const PolicySpec& spec, std::span<const int> gt,
                                 std::uint64_t flip_seed,
                                 Seq2SeqModel::DecodeWorkspace* workspace = nullptr) {
  if (cell < 0 || cell >= rec.n_cells()) throw ContractError("roll_out: cell out of range");
  const ModelConfig& cfg = model.config();
  if (action < 0 || action >= cfg.vocab_size) throw VocabularyError("roll_out: invalid action");

  std::vector<int> trajectory(rec.prefix.begin(), rec.prefix.begin() + cell);
  trajectory.push_back(action);
  std::vector<int> content = detail::content_of(trajectory, cfg.eos_id);
  // An end-of-sequence inside the fixed part ends the output immediately.
  if (static_cast<int>(content.size()) <= cell) return content;

  RollOut mode = spec.roll_out;
  if (mode == RollOut::kMixed) {
    std::mt19937_64 rng(flip_seed);
    std::bernoulli_distribution learned(spec.mix_probability);
    mode = learned(rng) ? RollOut::kLearned : RollOut::kReference;
  }

  if (mode == RollOut::kReference) {
    std::vector<int> suffix;
    if (spec.reference_kind == ReferenceKind::kSuffixBleu1) {
      suffix = suffix_reference_completion(content, gt);
    } else {
      const int emitted = static_cast<int>(content.size());
      suffix = emitted >= static_cast<int>(gt.size())
                   ? std::vector<int>{}
                   : reference_completion(gt, emitted, spec.reference_kind);
    }
    for (int tok : suffix) {
      if (static_cast<int>(content.size()) >= cfg.t_max) break;
      content.push_back(tok);
    }
    return content;
  }

  // Learned completion: greedy decoding from the stored state.
  Seq2SeqModel::DecoderState st{rec.states[static_cast<std::size_t>(cell)], cell + 1, &rec.ctx};
  Seq2SeqModel::DecodeWorkspace local_ws;
  Seq2SeqModel::DecodeWorkspace& ws = workspace ? *workspace : local_ws;
  Tensor scores;
  int prev = action;
  while (static_cast<int>(content.size()) < cfg.t_max && st.t < cfg.t_max) {
    model.step_with(ws, st, prev, &scores);
    const int tok = kernels::argmax(scores.data());
    if (tok == cfg.eos_id) break;
    content.push_back(tok);
    prev = tok;
  }
  return content;
}

}  // namespace searnn

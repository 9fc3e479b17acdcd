#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "searnn/datasets.hpp"
#include "searnn/engine.hpp"
#include "searnn/losses.hpp"

namespace searnn {

struct TrainConfig {
  // data
  std::string task = "spelling";  // spelling | transduce | tsv
  std::string data_dir;
  int alphabet = 43;  // total vocabulary size, reserved tokens included
  int t_max = 10;
  double corrupt_prob = 0.3;
  int len_min = 3;
  int train_size = 2000;
  int valid_size = 300;
  int test_size = 500;
  std::string transduce_rule = "shift1";
  int transduce_len = 4;
  // model
  int hidden = 32;
  int embed = 16;
  bool attention = false;
  // method
  std::string loss = "mle";  // mle | ll | kl | llcas | shl | consistent | sll | skl
  double alpha = 10.0;
  std::string roll_in = "learned";
  std::string roll_out = "mixed";
  double mix_prob = 0.5;
  std::string reference_kind = "copy";  // copy | suffix_bleu1
  std::string cells = "all";            // all | <count>
  std::string token_strategy = "all";   // all | uniform | policy | biased | topk | neighbor
  int tokens_per_cell = 5;
  int neighbor_window = 2;
  std::string cost = "hamming";  // hamming | edit | bleu
  // optimization
  std::string optimizer = "adam";
  double lr = 0.001;
  double sgd_step = 0.5;
  int batch = 32;
  int rounds = 200;
  std::uint64_t seed = 1;
  int eval_every = 50;
  std::string eval_metric = "edit";  // hamming | edit | bleu
  std::string metrics_path;
  std::string checkpoint_path;
  std::string cost_dump_path;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out;
  in >> out;
  if (in.fail() || !in.eof()) throw ConfigError("bad numeric value for " + key + ": " + value);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("bad boolean value for " + key + ": " + value);
}

}  // namespace detail

// One "key = value" assignment; unknown keys are errors.
inline void apply_config_entry(TrainConfig& cfg, const std::string& key,
                               const std::string& value) {
  using detail::parse_bool;
  using detail::parse_number;
  if (key == "task") cfg.task = value;
  else if (key == "data_dir") cfg.data_dir = value;
  else if (key == "alphabet") cfg.alphabet = parse_number<int>(key, value);
  else if (key == "t_max") cfg.t_max = parse_number<int>(key, value);
  else if (key == "corrupt_prob") cfg.corrupt_prob = parse_number<double>(key, value);
  else if (key == "len_min") cfg.len_min = parse_number<int>(key, value);
  else if (key == "train_size") cfg.train_size = parse_number<int>(key, value);
  else if (key == "valid_size") cfg.valid_size = parse_number<int>(key, value);
  else if (key == "test_size") cfg.test_size = parse_number<int>(key, value);
  else if (key == "transduce_rule") cfg.transduce_rule = value;
  else if (key == "transduce_len") cfg.transduce_len = parse_number<int>(key, value);
  else if (key == "hidden") cfg.hidden = parse_number<int>(key, value);
  else if (key == "embed") cfg.embed = parse_number<int>(key, value);
  else if (key == "attention") cfg.attention = parse_bool(key, value);
  else if (key == "loss") cfg.loss = value;
  else if (key == "alpha") cfg.alpha = parse_number<double>(key, value);
  else if (key == "roll_in") cfg.roll_in = value;
  else if (key == "roll_out") cfg.roll_out = value;
  else if (key == "mix_prob") cfg.mix_prob = parse_number<double>(key, value);
  else if (key == "reference_kind") cfg.reference_kind = value;
  else if (key == "cells") cfg.cells = value;
  else if (key == "token_strategy") cfg.token_strategy = value;
  else if (key == "tokens_per_cell") cfg.tokens_per_cell = parse_number<int>(key, value);
  else if (key == "neighbor_window") cfg.neighbor_window = parse_number<int>(key, value);
  else if (key == "cost") cfg.cost = value;
  else if (key == "optimizer") cfg.optimizer = value;
  else if (key == "lr") cfg.lr = parse_number<double>(key, value);
  else if (key == "sgd_step") cfg.sgd_step = parse_number<double>(key, value);
  else if (key == "batch") cfg.batch = parse_number<int>(key, value);
  else if (key == "rounds") cfg.rounds = parse_number<int>(key, value);
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "eval_every") cfg.eval_every = parse_number<int>(key, value);
  else if (key == "eval_metric") cfg.eval_metric = value;
  else if (key == "metrics_path") cfg.metrics_path = value;
  else if (key == "checkpoint_path") cfg.checkpoint_path = value;
  else if (key == "cost_dump_path") cfg.cost_dump_path = value;
  else throw ConfigError("unknown config key: " + key);
}

// Flat "key = value" text; blank lines and '#' comments are ignored.
inline TrainConfig parse_config(std::istream& in) {
  TrainConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    apply_config_entry(cfg, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
  }
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  return parse_config(in);
}

// ---- resolved pieces ----

enum class Metric { kHammingNorm, kEditNorm, kBleuCost };

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "mle") return LossKind::kMle;
  if (s == "ll") return LossKind::kLl;
  if (s == "kl") return LossKind::kKl;
  if (s == "llcas") return LossKind::kLlcas;
  if (s == "shl") return LossKind::kShl;
  if (s == "consistent") return LossKind::kConsistent;
  if (s == "sll") return LossKind::kSampledLl;
  if (s == "skl") return LossKind::kSampledKl;
  throw ConfigError("unknown loss: " + s);
}

inline PolicySpec policy_from(const TrainConfig& cfg) {
  PolicySpec p;
  if (cfg.roll_in == "reference") p.roll_in = RollIn::kReference;
  else if (cfg.roll_in == "learned") p.roll_in = RollIn::kLearned;
  else throw ConfigError("unknown roll_in: " + cfg.roll_in);
  if (cfg.roll_out == "reference") p.roll_out = RollOut::kReference;
  else if (cfg.roll_out == "learned") p.roll_out = RollOut::kLearned;
  else if (cfg.roll_out == "mixed") p.roll_out = RollOut::kMixed;
  else throw ConfigError("unknown roll_out: " + cfg.roll_out);
  if (cfg.mix_prob < 0.0 || cfg.mix_prob > 1.0) throw ConfigError("mix_prob must be in [0, 1]");
  p.mix_probability = cfg.mix_prob;
  if (cfg.reference_kind == "copy") p.reference_kind = ReferenceKind::kCopyGroundTruth;
  else if (cfg.reference_kind == "suffix_bleu1") p.reference_kind = ReferenceKind::kSuffixBleu1;
  else throw ConfigError("unknown reference_kind: " + cfg.reference_kind);
  return p;
}

inline SamplerSpec sampler_from(const TrainConfig& cfg) {
  SamplerSpec s;
  if (cfg.cells == "all") s.cells_per_sequence = kAllCells;
  else s.cells_per_sequence = detail::parse_number<int>("cells", cfg.cells);
  if (cfg.token_strategy == "all") s.token_strategy = TokenStrategy::kAll;
  else if (cfg.token_strategy == "uniform") s.token_strategy = TokenStrategy::kUniform;
  else if (cfg.token_strategy == "policy") s.token_strategy = TokenStrategy::kPolicy;
  else if (cfg.token_strategy == "biased") s.token_strategy = TokenStrategy::kBiasedPolicy;
  else if (cfg.token_strategy == "topk") s.token_strategy = TokenStrategy::kTopK;
  else if (cfg.token_strategy == "neighbor") s.token_strategy = TokenStrategy::kNeighborMix;
  else throw ConfigError("unknown token_strategy: " + cfg.token_strategy);
  s.tokens_per_cell = cfg.tokens_per_cell;
  s.neighbor_window = cfg.neighbor_window;
  return s;
}

inline LossSpec loss_from(const TrainConfig& cfg) {
  LossSpec spec;
  spec.kind = parse_loss_kind(cfg.loss);
  spec.alpha = cfg.alpha;
  if (loss_needs_alpha(spec.kind) && cfg.alpha <= 0.0)
    throw ConfigError("loss " + cfg.loss + " requires alpha > 0");
  return spec;
}

inline CostFn make_cost_fn(const std::string& name) {
  if (name == "hamming")
    return [](std::span<const int> p, std::span<const int> g) { return hamming_cost(p, g); };
  if (name == "edit")
    return [](std::span<const int> p, std::span<const int> g) { return edit_cost(p, g); };
  if (name == "bleu")
    return [](std::span<const int> p, std::span<const int> g) {
      return p.empty() ? 1.0 : smoothed_bleu_cost(p, g);
    };
  throw ConfigError("unknown cost: " + name);
}

inline Metric parse_metric(const std::string& s) {
  if (s == "hamming") return Metric::kHammingNorm;
  if (s == "edit") return Metric::kEditNorm;
  if (s == "bleu") return Metric::kBleuCost;
  throw ConfigError("unknown metric: " + s);
}

inline GeneratedData build_dataset(const TrainConfig& cfg) {
  if (cfg.task == "spelling") {
    SpellingParams p;
    p.vocab_size = cfg.alphabet;
    p.t_max = cfg.t_max;
    p.replace_prob = cfg.corrupt_prob;
    p.len_min = cfg.len_min;
    p.n_train = cfg.train_size;
    p.n_valid = cfg.valid_size;
    p.n_test = cfg.test_size;
    return gen_spelling(p, cfg.seed);
  }
  if (cfg.task == "transduce") {
    TransduceParams p;
    p.n_symbols = cfg.alphabet - Vocabulary::first_content();
    p.length = cfg.transduce_len;
    if (cfg.transduce_rule == "identity") p.rule = TransduceRule::kIdentity;
    else if (cfg.transduce_rule == "shift1") p.rule = TransduceRule::kShiftByOne;
    else if (cfg.transduce_rule == "reverse") p.rule = TransduceRule::kReverse;
    else throw ConfigError("unknown transduce_rule: " + cfg.transduce_rule);
    p.n_train = cfg.train_size;
    p.n_valid = cfg.valid_size;
    p.n_test = cfg.test_size;
    return gen_transduce(p, cfg.seed);
  }
  if (cfg.task == "tsv") {
    if (cfg.data_dir.empty()) throw ConfigError("task tsv requires data_dir");
    GeneratedData data;
    data.vocab = Vocabulary::load(cfg.data_dir + "/vocab.txt");
    data.split.train = load_tsv(cfg.data_dir + "/train.tsv", &data.vocab);
    data.split.valid = load_tsv(cfg.data_dir + "/valid.tsv", &data.vocab);
    data.split.test = load_tsv(cfg.data_dir + "/test.tsv", &data.vocab);
    data.split.seed = cfg.seed;
    return data;
  }
  throw ConfigError("unknown task: " + cfg.task);
}

// ---- optimizers ----

/// SGD with a constant step, or Adam with bias-corrected moments that
/// persist across rounds.
class Optimizer {
 public:
  static Optimizer sgd(double step) {
    Optimizer o;
    o.kind_ = Kind::kSgd;
    o.step_ = step;
    return o;
  }
  static Optimizer adam(double lr) {
    Optimizer o;
    o.kind_ = Kind::kAdam;
    o.lr_ = lr;
    return o;
  }
  static Optimizer from_config(const TrainConfig& cfg) {
    if (cfg.optimizer == "sgd") return sgd(cfg.sgd_step);
    if (cfg.optimizer == "adam") return adam(cfg.lr);
    throw ConfigError("unknown optimizer: " + cfg.optimizer);
  }

  void apply(ParameterStore& store) {
    ++t_;
    for (const std::string& name : store.names()) {
      if (!store.trainable(name)) continue;
      const Tensor& g = store.grad(name);
      if (!g.all_finite()) throw DivergenceError("non-finite gradient in " + name, t_);
      Tensor& v = store.value(name);
      if (kind_ == Kind::kSgd) {
        for (int i = 0; i < v.numel(); ++i) v[i] -= step_ * g[i];
      } else {
        auto& [m, s] = moments_[name];
        if (m.empty()) {
          m = Tensor(v.shape());
          s = Tensor(v.shape());
        }
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (int i = 0; i < v.numel(); ++i) {
          m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
          s[i] = beta2_ * s[i] + (1.0 - beta2_) * g[i] * g[i];
          v[i] -= lr_ * (m[i] / c1) / (std::sqrt(s[i] / c2) + eps_);
        }
      }
    }
  }

 private:
  enum class Kind { kSgd, kAdam };
  Optimizer() = default;
  Kind kind_ = Kind::kSgd;
  double step_ = 0.5;
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  std::unordered_map<std::string, std::pair<Tensor, Tensor>> moments_;
};

// ---- evaluation ----

// Greedy-decodes every pair. Hamming: total errors over total ground-truth
// tokens. Edit: mean per-sample normalized distance. Bleu: mean cost.
inline double evaluate(const Seq2SeqModel& model, std::span<const SeqPair> pairs, Metric metric) {
  if (pairs.empty()) return 0.0;
  double total = 0.0;
  double denom = 0.0;
  for (const SeqPair& p : pairs) {
    const std::vector<int> pred = model.greedy_decode(p.src, model.config().t_max);
    switch (metric) {
      case Metric::kHammingNorm:
        total += hamming_cost(pred, p.tgt);
        denom += static_cast<double>(p.tgt.size());
        break;
      case Metric::kEditNorm:
        total += edit_cost(pred, p.tgt);
        denom += 1.0;
        break;
      case Metric::kBleuCost:
        total += pred.empty() ? 1.0 : smoothed_bleu_cost(pred, p.tgt);
        denom += 1.0;
        break;
    }
  }
  return total / denom;
}

// ---- loss assembly ----

// Per-sample training loss on the tape: the plain sum over sampled cells
// (every cell for the likelihood loss). Costs and roll-in prefixes enter as
// constants; gradients flow only through the score computation.
// `cell_filter`, when given, drops cells it rejects (gradient checking uses
// this to exclude hinge ties).
inline Tape::NodeId build_sample_loss(Tape& tape, const Seq2SeqModel& model, const LossSpec& spec,
                                      const SeqPair& pair, const CollectedSample* collected,
                                      const std::function<bool(int)>* cell_filter = nullptr) {
  const ModelConfig& mc = model.config();
  const std::vector<int> gt_ext = extended_target(pair.tgt, mc.eos_id, mc.t_max);

  if (spec.kind == LossKind::kMle) {
    const auto scores =
        model.scores_on_tape(tape, pair.src, gt_ext, static_cast<int>(gt_ext.size()));
    return mle_loss(tape, scores, gt_ext);
  }

  if (!collected) throw ContractError("cost-sensitive loss requires collected costs");
  const RollInRecord& rollin = collected->rollin;
  const CostTensor& costs = collected->costs;
  const int n_cells = rollin.n_cells();
  const auto scores = model.scores_on_tape(tape, pair.src, rollin.prefix, n_cells);

  Tape::NodeId total = -1;
  for (int t = 0; t < n_cells; ++t) {
    if (!costs.cell_sampled[static_cast<std::size_t>(t)]) continue;
    if (cell_filter && !(*cell_filter)(t)) continue;
    const int gt_tok = gt_ext[static_cast<std::size_t>(t)];
    Tape::NodeId term = -1;
    switch (spec.kind) {
      case LossKind::kLl: {
        const auto row = costs.full_row(t);
        term = ll_loss(tape, scores[static_cast<std::size_t>(t)], row, gt_tok);
        break;
      }
      case LossKind::kKl: {
        const auto row = costs.full_row(t);
        term = kl_loss(tape, scores[static_cast<std::size_t>(t)], row, spec.alpha);
        break;
      }
      case LossKind::kLlcas: {
        const auto row = costs.full_row(t);
        term = llcas_loss(tape, scores[static_cast<std::size_t>(t)], row, spec.alpha, gt_tok);
        break;
      }
      case LossKind::kShl: {
        const auto row = costs.full_row(t);
        term = shl_loss(tape, scores[static_cast<std::size_t>(t)], row, gt_tok);
        break;
      }
      case LossKind::kConsistent: {
        const auto row = costs.full_row(t);
        term = consistent_loss(tape, scores[static_cast<std::size_t>(t)], row);
        break;
      }
      case LossKind::kSampledLl: {
        const auto& set = costs.token_sets[static_cast<std::size_t>(t)];
        const auto row = costs.row_at(t, set);
        term = sampled_ll(tape, scores[static_cast<std::size_t>(t)], set, row, gt_tok);
        break;
      }
      case LossKind::kSampledKl: {
        const auto& set = costs.token_sets[static_cast<std::size_t>(t)];
        const auto row = costs.row_at(t, set);
        term =
            sampled_kl(tape, scores[static_cast<std::size_t>(t)], set, row, spec.alpha, gt_tok);
        break;
      }
      case LossKind::kMle:
        break;  // handled above
    }
    total = (total < 0) ? term : tape.add(total, term);
  }
  if (total < 0) throw ContractError("no sampled cells contributed to the loss");
  return total;
}

// ---- training ----

struct MetricsRow {
  int round = 0;
  double train_loss = 0.0;
  double test_metric = 0.0;
  long long rollouts = 0;  // roll-outs performed in this round
  double seconds = 0.0;    // wall-clock since training started
};

inline void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows) {
  os << "round,train_loss,test_metric,rollouts,seconds\n";
  os.precision(17);
  for (const MetricsRow& r : rows)
    os << r.round << ',' << r.train_loss << ',' << r.test_metric << ',' << r.rollouts << ','
       << r.seconds << '\n';
}

struct TrainResult {
  ParameterStore store;       // final parameters
  ParameterStore best_store;  // best validation checkpoint
  double best_valid = std::numeric_limits<double>::infinity();
  std::vector<MetricsRow> metrics;
  long long total_rollouts = 0;
  double final_train_loss = 0.0;
};

namespace detail {

enum StreamTag : std::uint64_t { kInitTag = 0x11a7, kBatchTag = 0xba7c };

}  // namespace detail

// One round = one mini-batch, one backward pass, one optimizer step.
// Fully reproducible from (config, data, seed); evaluation every
// `eval_every` rounds records metrics and keeps the best validation
// checkpoint.
inline TrainResult train(const TrainConfig& cfg, const Vocabulary& vocab,
                         const DatasetSplit& split) {
  if (cfg.batch < 1) throw ConfigError("batch must be at least 1");
  if (cfg.rounds < 1) throw ConfigError("rounds must be at least 1");
  if (cfg.eval_every < 1) throw ConfigError("eval_every must be at least 1");
  if (split.train.empty()) throw ConfigError("empty training split");

  const LossSpec loss_spec = loss_from(cfg);
  const PolicySpec policy = policy_from(cfg);
  const SamplerSpec sampler = sampler_from(cfg);
  const CostFn cost_fn = make_cost_fn(cfg.cost);
  const Metric metric = parse_metric(cfg.eval_metric);
  if (loss_needs_costs(loss_spec.kind) && !loss_is_sampled(loss_spec.kind) &&
      sampler.token_strategy != TokenStrategy::kAll)
    throw ConfigError("loss " + cfg.loss + " needs full cost rows; use token_strategy = all");

  TrainResult result;
  ModelConfig mc;
  mc.vocab_size = vocab.size();
  mc.embed_dim = cfg.embed;
  mc.hidden_dim = cfg.hidden;
  mc.attention = cfg.attention;
  mc.t_max = cfg.t_max;
  Seq2SeqModel model(mc, result.store, detail::seed_mix({cfg.seed, detail::kInitTag}));
  Optimizer opt = Optimizer::from_config(cfg);
  std::mt19937_64 batch_rng(detail::seed_mix({cfg.seed, detail::kBatchTag}));

  std::ofstream dump;
  if (!cfg.cost_dump_path.empty()) {
    dump.open(cfg.cost_dump_path, std::ios::trunc);
    if (!dump) throw IoError("cannot open cost dump: " + cfg.cost_dump_path);
  }
  int dump_sample_id = 0;

  const auto t0 = std::chrono::steady_clock::now();
  const int n_train = static_cast<int>(split.train.size());
  std::vector<SeqPair> batch;
  for (int round = 1; round <= cfg.rounds; ++round) {
    batch.clear();
    if (cfg.batch >= n_train) {
      batch.assign(split.train.begin(), split.train.end());
    } else {
      std::uniform_int_distribution<int> pick(0, n_train - 1);
      for (int i = 0; i < cfg.batch; ++i)
        batch.push_back(split.train[static_cast<std::size_t>(pick(batch_rng))]);
    }

    RolloutBudget round_budget;
    std::vector<CollectedSample> collected;
    if (loss_needs_costs(loss_spec.kind)) {
      collected = collect_costs(model, batch, policy, sampler, cost_fn,
                                detail::seed_mix({cfg.seed, 0xc057, static_cast<std::uint64_t>(round)}),
                                &round_budget);
      if (dump.is_open())
        for (const CollectedSample& c : collected) dump_cost_tensor(dump, dump_sample_id++, c.costs);
    }

    Tape tape;
    Tape::NodeId total = -1;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const CollectedSample* c = collected.empty() ? nullptr : &collected[i];
      Tape::NodeId li = build_sample_loss(tape, model, loss_spec, batch[i], c);
      total = (i == 0) ? li : tape.add(total, li);
    }
    Tape::NodeId root = tape.scale_add(total, 1.0 / static_cast<double>(batch.size()), 0.0);
    const double loss_value = tape.value(root)[0];
    if (!std::isfinite(loss_value)) throw DivergenceError("non-finite training loss", round);

    result.store.zero_grads();
    tape.backward(root);
    opt.apply(result.store);
    result.total_rollouts += round_budget.rollouts;
    result.final_train_loss = loss_value;

    if (round % cfg.eval_every == 0 || round == cfg.rounds) {
      const double test_metric = evaluate(model, split.test, metric);
      const double valid_metric = evaluate(model, split.valid, metric);
      if (valid_metric < result.best_valid) {
        result.best_valid = valid_metric;
        result.best_store = result.store;
        if (!cfg.checkpoint_path.empty()) result.best_store.save(cfg.checkpoint_path);
      }
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.metrics.push_back({round, loss_value, test_metric, round_budget.rollouts, secs});
    }
  }

  if (!cfg.metrics_path.empty()) {
    std::ofstream mout(cfg.metrics_path, std::ios::trunc);
    if (!mout) throw IoError("cannot open metrics file: " + cfg.metrics_path);
    write_metrics_csv(mout, result.metrics);
  }
  return result;
}

inline TrainResult train(const TrainConfig& cfg) {
  const GeneratedData data = build_dataset(cfg);
  return train(cfg, data.vocab, data.split);
}

// ---- gradient checking ----

// Central finite differences of `loss_value` over every trainable
// parameter coordinate, at step h.
template <class F>
std::vector<std::pair<std::string, Tensor>> finite_diff_param_grads(ParameterStore& store,
                                                                    F&& loss_value,
                                                                    double h = 1e-5) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const std::string& name : store.names()) {
    if (!store.trainable(name)) continue;
    Tensor& v = store.value(name);
    Tensor g(v.shape());
    for (int i = 0; i < v.numel(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      const double up = loss_value();
      v[i] = saved - h;
      const double down = loss_value();
      v[i] = saved;
      g[i] = (up - down) / (2.0 * h);
    }
    out.emplace_back(name, std::move(g));
  }
  return out;
}

inline double relative_error(double a, double b) {
  return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

// The hinge loss is not differentiable where two cost-augmented scores tie
// for the max; such cells are excluded from gradient checking.
inline bool shl_cell_is_tied(const Tensor& scores, std::span<const double> costs,
                             double tol = 1e-6) {
  double best = -std::numeric_limits<double>::infinity(), second = best;
  for (int a = 0; a < scores.numel(); ++a) {
    const double v = scores[a] + costs[static_cast<std::size_t>(a)];
    if (v > best) {
      second = best;
      best = v;
    } else if (v > second) {
      second = v;
    }
  }
  return best - second < tol;
}

struct GradCheckRow {
  std::string loss;
  std::string policy;
  double max_rel_err = 0.0;
  int coords = 0;
  int skipped_cells = 0;  // hinge ties excluded from the check
};

struct GradCheckReport {
  std::vector<GradCheckRow> rows;
  double threshold = 1e-4;
  bool ok() const {
    for (const auto& r : rows)
      if (r.max_rel_err > threshold) return false;
    return true;
  }
};

inline void print_gradcheck_report(std::ostream& os, const GradCheckReport& report) {
  os << "loss        policy               max_rel_err   coords  skipped\n";
  for (const auto& r : report.rows) {
    os << std::left << std::setw(12) << r.loss << std::setw(21) << r.policy << std::scientific
       << std::setprecision(3) << r.max_rel_err << std::defaultfloat << "      " << r.coords
       << "       " << r.skipped_cells << (r.max_rel_err > report.threshold ? "   FAIL" : "")
       << '\n';
  }
}

// Small-model defaults for gradient checking (a few hundred parameters).
inline TrainConfig gradcheck_defaults() {
  TrainConfig cfg;
  cfg.task = "transduce";
  cfg.alphabet = 8;
  cfg.transduce_len = 3;
  cfg.t_max = 5;
  cfg.hidden = 4;
  cfg.embed = 3;
  cfg.batch = 2;
  cfg.train_size = 8;
  cfg.valid_size = 2;
  cfg.test_size = 2;
  cfg.cost = "hamming";
  cfg.alpha = 2.0;
  return cfg;
}

// Runs the finite-difference suite over every loss kind and roll-in /
// roll-out combination on one mini-batch. Hinge cells sitting exactly on an
// argmax tie are excluded and reported as skipped.
inline GradCheckReport gradcheck(const TrainConfig& cfg) {
  const GeneratedData data = build_dataset(cfg);
  ParameterStore store;
  ModelConfig mc;
  mc.vocab_size = data.vocab.size();
  mc.embed_dim = cfg.embed;
  mc.hidden_dim = cfg.hidden;
  mc.attention = cfg.attention;
  mc.t_max = cfg.t_max;
  Seq2SeqModel model(mc, store, detail::seed_mix({cfg.seed, detail::kInitTag}));
  if (model.param_count() > 2000)
    throw ContractError("gradcheck needs a model with at most 2000 parameters");

  const int b = std::min<int>(cfg.batch, static_cast<int>(data.split.train.size()));
  const std::vector<SeqPair> batch(data.split.train.begin(), data.split.train.begin() + b);
  const CostFn cost_fn = make_cost_fn(cfg.cost);

  const std::vector<std::pair<std::string, PolicySpec>> combos = [] {
    std::vector<std::pair<std::string, PolicySpec>> out;
    const std::pair<std::string, RollIn> ins[] = {{"reference", RollIn::kReference},
                                                  {"learned", RollIn::kLearned}};
    const std::pair<std::string, RollOut> outs[] = {{"reference", RollOut::kReference},
                                                    {"learned", RollOut::kLearned},
                                                    {"mixed", RollOut::kMixed}};
    for (const auto& [iname, ri] : ins)
      for (const auto& [oname, ro] : outs) {
        PolicySpec p;
        p.roll_in = ri;
        p.roll_out = ro;
        out.emplace_back(iname + "/" + oname, p);
      }
    return out;
  }();

  const LossKind kinds[] = {LossKind::kMle,    LossKind::kLl,        LossKind::kKl,
                            LossKind::kLlcas,  LossKind::kShl,       LossKind::kConsistent,
                            LossKind::kSampledLl, LossKind::kSampledKl};
  const char* kind_names[] = {"mle", "ll", "kl", "llcas", "shl", "consistent", "sll", "skl"};

  GradCheckReport report;
  for (std::size_t ki = 0; ki < std::size(kinds); ++ki) {
    LossSpec spec{kinds[ki], cfg.alpha > 0 ? cfg.alpha : 10.0};
    const bool needs_costs = loss_needs_costs(spec.kind);
    const auto& combo_list =
        needs_costs ? combos
                    : std::vector<std::pair<std::string, PolicySpec>>{{"-", PolicySpec{}}};
    for (const auto& [combo_name, policy] : combo_list) {
      SamplerSpec sampler;
      if (loss_is_sampled(spec.kind)) {
        sampler.token_strategy = TokenStrategy::kTopK;
        sampler.tokens_per_cell = std::min(3, data.vocab.size());
      }
      std::vector<CollectedSample> collected;
      if (needs_costs) {
        RolloutBudget budget;
        collected = collect_costs(model, batch, policy, sampler, cost_fn,
                                  detail::seed_mix({cfg.seed, 0x6c4d, ki}), &budget);
      }

      // Cells whose hinge argmax is (numerically) tied are excluded.
      std::vector<std::function<bool(int)>> filters;
      int skipped = 0;
      if (spec.kind == LossKind::kShl) {
        for (std::size_t i = 0; i < batch.size(); ++i) {
          Tape probe;
          const auto scores = model.scores_on_tape(probe, batch[i].src, collected[i].rollin.prefix,
                                                   collected[i].rollin.n_cells());
          std::vector<std::uint8_t> keep(scores.size(), 1);
          for (std::size_t t = 0; t < scores.size(); ++t) {
            const auto row = collected[i].costs.full_row(static_cast<int>(t));
            if (shl_cell_is_tied(probe.value(scores[t]), row)) {
              keep[t] = 0;
              ++skipped;
            }
          }
          filters.emplace_back([keep](int t) { return keep[static_cast<std::size_t>(t)] != 0; });
        }
      }

      auto batch_loss = [&](Tape& tape) {
        Tape::NodeId total = -1;
        for (std::size_t i = 0; i < batch.size(); ++i) {
          const CollectedSample* c = needs_costs ? &collected[i] : nullptr;
          const std::function<bool(int)>* filter =
              filters.empty() ? nullptr : &filters[i];
          Tape::NodeId li = build_sample_loss(tape, model, spec, batch[i], c, filter);
          total = (i == 0) ? li : tape.add(total, li);
        }
        return total;
      };

      store.zero_grads();
      {
        Tape tape;
        tape.backward(batch_loss(tape));
      }
      std::vector<std::pair<std::string, Tensor>> analytic;
      for (const std::string& name : store.names())
        if (store.trainable(name)) analytic.emplace_back(name, store.grad(name));

      const auto fd = finite_diff_param_grads(store, [&]() {
        Tape tape;
        return tape.value(batch_loss(tape))[0];
      });

      GradCheckRow row;
      row.loss = kind_names[ki];
      row.policy = combo_name;
      row.skipped_cells = skipped;
      for (std::size_t p = 0; p < fd.size(); ++p) {
        const Tensor& ga = analytic[p].second;
        const Tensor& gf = fd[p].second;
        for (int i = 0; i < ga.numel(); ++i) {
          row.max_rel_err = std::max(row.max_rel_err, relative_error(ga[i], gf[i]));
          ++row.coords;
        }
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

}  // namespace searnn

#pragma once

#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "searnn/model.hpp"

namespace searnn {

struct SeqPair {
  std::vector<int> src;
  std::vector<int> tgt;
};

struct DatasetSplit {
  std::vector<SeqPair> train;
  std::vector<SeqPair> valid;
  std::vector<SeqPair> test;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> params;  // manifest entries
};

struct GeneratedData {
  Vocabulary vocab;
  DatasetSplit split;
};

namespace detail {

// Split tags keep train/valid/test random streams disjoint.
enum SplitTag : std::uint64_t { kTrainTag = 0x1133, kValidTag = 0x2244, kTestTag = 0x3355 };

inline std::mt19937_64 pair_rng(std::uint64_t seed, std::uint64_t split_tag, std::uint64_t index) {
  return std::mt19937_64(seed_mix({seed, split_tag, index}));
}

}  // namespace detail

struct SpellingParams {
  int vocab_size = 43;       // total tokens, reserved included
  int t_max = 10;
  double replace_prob = 0.3;
  int len_min = 3;
  int n_train = 2000;
  int n_valid = 300;
  int n_test = 500;
  std::vector<std::vector<int>> clean_lines;  // optional corpus of content tokens
};

namespace detail {

inline SeqPair make_spelling_pair(const SpellingParams& p, int n_content, std::mt19937_64& rng,
                                  const std::vector<int>* clean) {
  SeqPair pair;
  if (clean) {
    pair.tgt.assign(clean->begin(),
                    clean->begin() + std::min<std::size_t>(clean->size(),
                                                           static_cast<std::size_t>(p.t_max)));
  } else {
    std::uniform_int_distribution<int> len_dist(p.len_min, p.t_max);
    std::uniform_int_distribution<int> tok_dist(0, n_content - 1);
    const int len = len_dist(rng);
    pair.tgt.reserve(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i)
      pair.tgt.push_back(Vocabulary::first_content() + tok_dist(rng));
  }
  pair.src = pair.tgt;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> shift(1, n_content - 1);
  for (int& tok : pair.src) {
    if (unit(rng) < p.replace_prob) {
      // replace with a uniformly random *different* content token
      const int cur = tok - Vocabulary::first_content();
      tok = Vocabulary::first_content() + (cur + shift(rng)) % n_content;
    }
  }
  return pair;
}

}  // namespace detail

// Noisy-input restoration task: targets are clean sequences (random strings
// or supplied lines, clipped to t_max); sources corrupt each position
// independently with probability replace_prob.
inline GeneratedData gen_spelling(const SpellingParams& p, std::uint64_t seed) {
  if (p.replace_prob < 0.0 || p.replace_prob >= 1.0)
    throw ContractError("gen_spelling: replace_prob must be in [0, 1)");
  const int n_content = p.vocab_size - Vocabulary::first_content();
  if (n_content < 2) throw ContractError("gen_spelling: need at least 2 content tokens");
  if (p.len_min < 1 || p.len_min > p.t_max) throw ContractError("gen_spelling: bad length range");

  GeneratedData data;
  data.vocab = Vocabulary::symbols(n_content);
  data.split.seed = seed;
  data.split.params = {{"task", "spelling"},
                       {"vocab_size", std::to_string(p.vocab_size)},
                       {"t_max", std::to_string(p.t_max)},
                       {"replace_prob", std::to_string(p.replace_prob)},
                       {"len_min", std::to_string(p.len_min)},
                       {"n_train", std::to_string(p.n_train)},
                       {"n_valid", std::to_string(p.n_valid)},
                       {"n_test", std::to_string(p.n_test)},
                       {"seed", std::to_string(seed)}};

  auto fill = [&](std::vector<SeqPair>* out, int n, std::uint64_t tag, std::size_t line_base) {
    out->reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      auto rng = detail::pair_rng(seed, tag, static_cast<std::uint64_t>(i));
      const std::vector<int>* clean = nullptr;
      if (!p.clean_lines.empty())
        clean = &p.clean_lines[(line_base + static_cast<std::size_t>(i)) % p.clean_lines.size()];
      out->push_back(detail::make_spelling_pair(p, n_content, rng, clean));
    }
  };
  fill(&data.split.train, p.n_train, detail::kTrainTag, 0);
  fill(&data.split.valid, p.n_valid, detail::kValidTag, static_cast<std::size_t>(p.n_train));
  fill(&data.split.test, p.n_test, detail::kTestTag,
       static_cast<std::size_t>(p.n_train) + static_cast<std::size_t>(p.n_valid));
  return data;
}

enum class TransduceRule { kIdentity, kShiftByOne, kReverse };

// Rule on raw content-symbol ids in [0, n_symbols).
inline std::vector<int> apply_rule(TransduceRule rule, std::span<const int> symbols,
                                   int n_symbols) {
  std::vector<int> out(symbols.begin(), symbols.end());
  switch (rule) {
    case TransduceRule::kIdentity:
      break;
    case TransduceRule::kShiftByOne:
      for (int& s : out) s = (s + 1) % n_symbols;
      break;
    case TransduceRule::kReverse:
      std::reverse(out.begin(), out.end());
      break;
  }
  return out;
}

struct TransduceParams {
  int n_symbols = 3;  // content alphabet size
  int length = 4;     // fixed sequence length
  TransduceRule rule = TransduceRule::kShiftByOne;
  int n_train = 256;
  int n_valid = 64;
  int n_test = 64;
};

// Token-wise transduction with seeded random sources and a deterministic
// target rule; every pair has the same fixed length.
inline GeneratedData gen_transduce(const TransduceParams& p, std::uint64_t seed) {
  if (p.n_symbols < 2) throw ContractError("gen_transduce: need an alphabet of at least 2");
  if (p.length < 1) throw ContractError("gen_transduce: length must be positive");
  GeneratedData data;
  data.vocab = Vocabulary::symbols(p.n_symbols);
  data.split.seed = seed;
  const char* rule_name = p.rule == TransduceRule::kIdentity    ? "identity"
                          : p.rule == TransduceRule::kShiftByOne ? "shift1"
                                                                 : "reverse";
  data.split.params = {{"task", "transduce"},
                       {"n_symbols", std::to_string(p.n_symbols)},
                       {"length", std::to_string(p.length)},
                       {"rule", rule_name},
                       {"n_train", std::to_string(p.n_train)},
                       {"n_valid", std::to_string(p.n_valid)},
                       {"n_test", std::to_string(p.n_test)},
                       {"seed", std::to_string(seed)}};

  auto fill = [&](std::vector<SeqPair>* out, int n, std::uint64_t tag) {
    out->reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      auto rng = detail::pair_rng(seed, tag, static_cast<std::uint64_t>(i));
      std::uniform_int_distribution<int> tok_dist(0, p.n_symbols - 1);
      std::vector<int> symbols(static_cast<std::size_t>(p.length));
      for (int& s : symbols) s = tok_dist(rng);
      std::vector<int> target = apply_rule(p.rule, symbols, p.n_symbols);
      SeqPair pair;
      for (int s : symbols) pair.src.push_back(Vocabulary::first_content() + s);
      for (int s : target) pair.tgt.push_back(Vocabulary::first_content() + s);
      out->push_back(std::move(pair));
    }
  };
  fill(&data.split.train, p.n_train, detail::kTrainTag);
  fill(&data.split.valid, p.n_valid, detail::kValidTag);
  fill(&data.split.test, p.n_test, detail::kTestTag);
  return data;
}

namespace detail {

inline std::vector<std::string> split_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

}  // namespace detail

// One pair per line: source tokens, a tab, target tokens; tokens are
// space-separated. With a fixed vocabulary, unknown tokens are rejected;
// otherwise the vocabulary is built from the file (sorted content tokens)
// and returned through `built`.
inline std::vector<SeqPair> load_tsv(const std::string& path, const Vocabulary* fixed = nullptr,
                                     Vocabulary* built = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset: " + path);
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> raw;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError(path + ": line " + std::to_string(line_no) + ": missing tab separator");
    raw.emplace_back(detail::split_tokens(line.substr(0, tab)),
                     detail::split_tokens(line.substr(tab + 1)));
  }

  Vocabulary local;
  const Vocabulary* vocab = fixed;
  if (!fixed) {
    std::vector<std::string> tokens;
    for (const auto& [src, tgt] : raw) {
      tokens.insert(tokens.end(), src.begin(), src.end());
      tokens.insert(tokens.end(), tgt.begin(), tgt.end());
    }
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    for (const auto& t : tokens)
      if (!local.contains(t)) local.add(t);
    vocab = &local;
  }

  std::vector<SeqPair> out;
  out.reserve(raw.size());
  int n = 0;
  for (const auto& [src, tgt] : raw) {
    ++n;
    SeqPair pair;
    try {
      for (const auto& t : src) pair.src.push_back(vocab->lookup(t));
      for (const auto& t : tgt) pair.tgt.push_back(vocab->lookup(t));
    } catch (const VocabularyError& e) {
      throw VocabularyError(path + ": pair " + std::to_string(n) + ": " + e.what());
    }
    out.push_back(std::move(pair));
  }
  if (built) *built = *vocab;
  return out;
}

inline void save_tsv(const std::string& path, std::span<const SeqPair> pairs,
                     const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open dataset for writing: " + path);
  for (const SeqPair& p : pairs) {
    for (std::size_t i = 0; i < p.src.size(); ++i)
      out << (i ? " " : "") << vocab.token(p.src[i]);
    out << '\t';
    for (std::size_t i = 0; i < p.tgt.size(); ++i)
      out << (i ? " " : "") << vocab.token(p.tgt[i]);
    out << '\n';
  }
}

inline void save_manifest(const std::string& path, const DatasetSplit& split) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open manifest for writing: " + path);
  for (const auto& [k, v] : split.params) out << k << " = " << v << '\n';
}

}  // namespace searnn

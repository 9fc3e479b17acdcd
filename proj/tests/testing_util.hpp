#pragma once

#include <memory>
#include <random>
#include <vector>

#include "searnn/model.hpp"

namespace searnn::testing_util {

// Small model with its own parameter store, for policy/engine/loss tests.
struct ModelFixture {
  ParameterStore store;
  ModelConfig cfg;
  std::unique_ptr<Seq2SeqModel> model;

  ModelFixture(int vocab, int embed, int hidden, int t_max, std::uint64_t seed,
               bool attention = false) {
    cfg.vocab_size = vocab;
    cfg.embed_dim = embed;
    cfg.hidden_dim = hidden;
    cfg.t_max = t_max;
    cfg.attention = attention;
    model = std::make_unique<Seq2SeqModel>(cfg, store, seed);
  }
};

inline void fill_uniform(Tensor& t, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (int i = 0; i < t.numel(); ++i) t[i] = dist(rng);
}

}  // namespace searnn::testing_util

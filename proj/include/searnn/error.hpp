#pragma once

#include <stdexcept>
#include <string>

namespace searnn {

// Shape or size mismatch in a tensor primitive.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Decoder stepped past the configured maximum sequence length.
class SequenceLengthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Token index or token string outside the vocabulary.
class VocabularyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input (config, TSV, vocabulary, checkpoint).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unknown or invalid configuration key/value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Cost evaluation failed during a roll-out; carries the origin triple.
class RolloutError : public std::runtime_error {
 public:
  RolloutError(const std::string& msg, int sample, int cell, int action)
      : std::runtime_error(msg + " (sample " + std::to_string(sample) + ", cell " +
                           std::to_string(cell) + ", action " + std::to_string(action) + ")"),
        sample(sample),
        cell(cell),
        action(action) {}
  int sample;
  int cell;
  int action;
};

// Training produced a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& msg, long round)
      : std::runtime_error(msg + " (round " + std::to_string(round) + ")"), round(round) {}
  long round;
};

}  // namespace searnn

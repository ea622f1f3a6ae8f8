#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace knnssd {

using Token = std::int32_t;
using DomainId = int;

// Bad arguments, malformed files, mismatched shapes.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Speculative output diverged from the full-model greedy output.
class LosslessnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Prompt {
  std::string id;
  DomainId domain = 0;
  std::vector<Token> tokens;

  bool operator==(const Prompt&) const = default;
};

using Corpus = std::vector<Prompt>;

}  // namespace knnssd

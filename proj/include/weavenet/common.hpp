// Copyright 2026 The Weavenet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef WEAVENET_COMMON_HPP_
#define WEAVENET_COMMON_HPP_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace weavenet {

// Seeded RNG used everywhere determinism matters (init, shuffles, dropout).
using Rng = std::mt19937_64;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// SMILES/CSV syntax problems; `offset` is a 0-based character position.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t offset)
      : Error(msg + " (at offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace weavenet

#endif  // WEAVENET_COMMON_HPP_

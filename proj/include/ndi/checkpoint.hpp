#pragma once

// Binary checkpoint container. Layout (all integers u32, all reals f64,
// little-endian):
//
//   magic   "NDICKPT\0" (8 bytes)
//   version
//   kind    length-prefixed string ("made" | "ebm" | "softmax" | "gaussian" | "mlp")
//   widths  count, then one u32 per layer width
//   meta    count, then (name, f64) pairs
//   arrays  count, then (name, rows, cols, rows*cols f64 in row-major order)
//
// Names are length-prefixed strings.

#include "ndi/nn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ndi::ckpt {

inline constexpr char kMagic[8] = {'N', 'D', 'I', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
  std::string kind;
  std::vector<std::uint32_t> widths;
  std::map<std::string, double> meta;
  std::map<std::string, Eigen::MatrixXd> arrays;

  // Throw std::runtime_error naming the missing key.
  double meta_at(const std::string& name) const;
  const Eigen::MatrixXd& array_at(const std::string& name) const;
};

std::string serialize(const Checkpoint& c);
// Throws std::runtime_error on bad magic, unsupported version or truncation.
Checkpoint deserialize(const std::string& bytes);

// Throw std::runtime_error when the file cannot be opened.
void save(const Checkpoint& c, const std::string& path);
Checkpoint load(const std::string& path);

/// Stores an MLP under `prefix` (weights, biases, masks and power-iteration
/// vectors) and reads it back.
void put_mlp(Checkpoint& c, const std::string& prefix, const nn::Mlp& mlp);
nn::Mlp get_mlp(const Checkpoint& c, const std::string& prefix);

}  // namespace ndi::ckpt

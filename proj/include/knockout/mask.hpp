#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "knockout/error.hpp"

namespace knockout {

/// Binary indicator over the d input features, 1 = missing / knocked out.
/// Used both for the induced knockout mask and for the observed-missingness
/// mask; the role is decided at the call site.
class Mask {
 public:
  Mask() = default;
  explicit Mask(std::size_t d, bool value = false) : bits_(d, value ? 1 : 0) {}
  explicit Mask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (auto& b : bits_)
      if (b > 1) throw Error("mask entries must be 0 or 1");
  }

  /// Parses a bit string such as "010000000".
  static Mask from_string(std::string_view bits) {
    Mask m(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i] != '0' && bits[i] != '1') throw Error("invalid mask bit string '" + std::string(bits) + "'");
      m.bits_[i] = bits[i] == '1';
    }
    return m;
  }

  std::size_t size() const { return bits_.size(); }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool value = true) { bits_[i] = value ? 1 : 0; }

  std::size_t popcount() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1)); }
  bool none() const { return popcount() == 0; }
  bool all() const { return popcount() == size(); }

  std::string to_string() const {
    std::string s(bits_.size(), '0');
    for (std::size_t i = 0; i < bits_.size(); ++i)
      if (bits_[i]) s[i] = '1';
    return s;
  }

  std::span<const std::uint8_t> bits() const { return bits_; }

  Mask operator|(const Mask& other) const {
    if (other.size() != size()) throw Error("mask length mismatch");
    Mask out(*this);
    for (std::size_t i = 0; i < bits_.size(); ++i) out.bits_[i] |= other.bits_[i];
    return out;
  }

  bool operator==(const Mask&) const = default;
  auto operator<=>(const Mask&) const = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// Canonical report order: popcount first, then lexicographic bit string.
inline bool pattern_less(const Mask& a, const Mask& b) {
  auto pa = a.popcount(), pb = b.popcount();
  if (pa != pb) return pa < pb;
  return a.to_string() < b.to_string();
}

/// Row-per-sample missingness indicators (1 = missing).
using MaskMatrix = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Mask row_mask(const MaskMatrix& m, Eigen::Index row) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) bits[static_cast<std::size_t>(j)] = m(row, j);
  return Mask(std::move(bits));
}

inline MaskMatrix broadcast_mask(const Mask& pattern, Eigen::Index rows) {
  MaskMatrix out(rows, static_cast<Eigen::Index>(pattern.size()));
  for (Eigen::Index j = 0; j < out.cols(); ++j) out.col(j).setConstant(pattern[static_cast<std::size_t>(j)] ? 1 : 0);
  return out;
}

}  // namespace knockout

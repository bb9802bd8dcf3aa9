#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fusionshot/error.hpp"

namespace fusionshot {

/// Largest pool an ensemble mask can address.
inline constexpr std::size_t kMaxPoolSize = 64;

/// A candidate ensemble: bit i set means pool model i is a member.
///
/// Text form is `0b` followed by exactly `width` binary digits, most
/// significant first, so model 0 is the rightmost digit. A comma separated
/// list of model indices ("0,3,5") is accepted on input as well.
/// Invariant: 2 <= size() <= width().
class EnsembleMask {
 public:
  EnsembleMask() = default;

  EnsembleMask(std::uint64_t bits, std::size_t width) : bits_(bits), width_(width) {
    if (width_ < 2 || width_ > kMaxPoolSize)
      throw Error(ErrorKind::InvalidMask, "pool width " + std::to_string(width_) + " outside [2, 64]");
    if (width_ < 64 && (bits_ >> width_) != 0)
      throw Error(ErrorKind::InvalidMask, "bits set beyond pool width " + std::to_string(width_));
    if (size() < 2) throw Error(ErrorKind::InvalidMask, "ensemble needs at least two members");
  }

  static EnsembleMask from_members(const std::vector<std::size_t>& members, std::size_t width) {
    std::uint64_t bits = 0;
    for (auto i : members) {
      if (i >= width) throw Error(ErrorKind::InvalidMask, "member index " + std::to_string(i) + " out of range");
      bits |= std::uint64_t{1} << i;
    }
    return EnsembleMask(bits, width);
  }

  static EnsembleMask full(std::size_t width) {
    return EnsembleMask(width == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << width) - 1, width);
  }

  static EnsembleMask parse(std::string_view text, std::size_t width) {
    if (text.starts_with("0b") || text.starts_with("0B")) {
      text.remove_prefix(2);
      if (text.empty() || text.size() > width)
        throw Error(ErrorKind::InvalidMask, "binary mask must have 1.." + std::to_string(width) + " digits");
      std::uint64_t bits = 0;
      for (char c : text) {
        if (c != '0' && c != '1') throw Error(ErrorKind::InvalidMask, "non-binary digit in mask");
        bits = (bits << 1) | static_cast<std::uint64_t>(c - '0');
      }
      return EnsembleMask(bits, width);
    }
    std::vector<std::size_t> members;
    std::size_t value = 0;
    bool have_digit = false;
    for (char c : std::string(text) + ",") {
      if (c >= '0' && c <= '9') {
        value = value * 10 + static_cast<std::size_t>(c - '0');
        have_digit = true;
      } else if (c == ',' && have_digit) {
        members.push_back(value);
        value = 0;
        have_digit = false;
      } else {
        throw Error(ErrorKind::InvalidMask, "cannot parse mask '" + std::string(text) + "'");
      }
    }
    return from_members(members, width);
  }

  std::uint64_t bits() const noexcept { return bits_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(std::popcount(bits_)); }
  bool contains(std::size_t model) const noexcept { return model < 64 && ((bits_ >> model) & 1U); }

  /// Member indices in ascending order.
  std::vector<std::size_t> members() const {
    std::vector<std::size_t> out;
    out.reserve(size());
    for (std::uint64_t b = bits_; b != 0; b &= b - 1) out.push_back(static_cast<std::size_t>(std::countr_zero(b)));
    return out;
  }

  std::string to_string() const {
    std::string s = "0b";
    for (std::size_t i = width_; i-- > 0;) s.push_back(contains(i) ? '1' : '0');
    return s;
  }

  friend bool operator==(const EnsembleMask&, const EnsembleMask&) = default;

 private:
  std::uint64_t bits_ = 0;
  std::size_t width_ = 0;
};

}  // namespace fusionshot

#pragma once

#include <filesystem>

#include "cpn/error.hpp"
#include "cpn/network.hpp"

namespace cpn::net {

/// Weight file layout (little-endian):
///   "CPNW" | version u32 | entry count u32 |
///   per entry: name length u16 | UTF-8 name | rank u8 | dims u32 x rank | float32 data row-major
inline constexpr char kWeightMagic[4] = {'C', 'P', 'N', 'W'};
inline constexpr std::uint32_t kWeightVersion = 1;

class WeightFileError : public DataError {
 public:
  enum class Kind { kIo, kBadMagic, kBadVersion, kTruncated, kShapeMismatch, kNonFinite };
  WeightFileError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind file_kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

void save_weights(const NetworkWeights& weights, const std::filesystem::path& path);
/// Parses a weight file without checking it against any configuration.
NetworkWeights read_weights(const std::filesystem::path& path);
/// Parses and checks every entry against `cfg`.
NetworkWeights load_weights(const std::filesystem::path& path, const NetworkConfig& cfg);

}  // namespace cpn::net

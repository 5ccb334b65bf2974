#include "cpn/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace cpn::net {
namespace {

using Kind = WeightFileError::Kind;

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw WeightFileError(Kind::kTruncated, "weight file truncated at byte " + std::to_string(pos_));
  }
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_weights(const NetworkWeights& weights, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kWeightMagic, 4);
  w.u32(kWeightVersion);
  w.u32(static_cast<std::uint32_t>(weights.size()));
  for (const auto& [name, tensor] : weights) {
    if (!tensor.all_finite()) throw WeightFileError(Kind::kNonFinite, "non-finite values in parameter " + name);
    if (name.size() > UINT16_MAX) throw WeightFileError(Kind::kIo, "parameter name too long: " + name);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(tensor.rank()));
    for (auto d : tensor.shape().dims()) w.u32(static_cast<std::uint32_t>(d));
    for (float f : tensor.data()) w.u32(std::bit_cast<std::uint32_t>(f));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw WeightFileError(Kind::kIo, "cannot write weight file: " + path.string());
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw WeightFileError(Kind::kIo, "failed writing weight file: " + path.string());
}

NetworkWeights read_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightFileError(Kind::kIo, "cannot open weight file: " + path.string());
  Reader r(std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {}));
  if (r.remaining() < 4) throw WeightFileError(Kind::kTruncated, "weight file truncated in header: " + path.string());
  if (r.str(4) != std::string(kWeightMagic, 4))
    throw WeightFileError(Kind::kBadMagic, "bad magic in weight file (expected CPNW): " + path.string());
  const std::uint32_t version = r.u32();
  if (version != kWeightVersion)
    throw WeightFileError(Kind::kBadVersion, "unsupported weight file version " + std::to_string(version) +
                                                 " (expected " + std::to_string(kWeightVersion) + ")");
  const std::uint32_t count = r.u32();
  NetworkWeights weights;
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name = r.str(r.u16());
    const std::uint8_t rank = r.u8();
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = r.u32();
    Shape shape = [&] {
      try {
        return Shape(dims);
      } catch (const ShapeError&) {
        throw WeightFileError(Kind::kShapeMismatch, "zero dimension in parameter " + name);
      }
    }();
    std::vector<float> data(shape.numel());
    if (r.remaining() / 4 < data.size())
      throw WeightFileError(Kind::kTruncated, "weight file truncated inside parameter " + name);
    for (auto& f : data) f = std::bit_cast<float>(r.u32());
    weights.add(std::move(name), TensorF(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw WeightFileError(Kind::kTruncated, "trailing bytes after last weight entry");
  return weights;
}

NetworkWeights load_weights(const std::filesystem::path& path, const NetworkConfig& cfg) {
  NetworkWeights w = read_weights(path);
  try {
    check_weights(w, cfg);
  } catch (const ShapeError& e) {
    throw WeightFileError(Kind::kShapeMismatch, e.what());
  }
  return w;
}

}  // namespace cpn::net

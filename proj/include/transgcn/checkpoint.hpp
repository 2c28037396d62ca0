#pragma once

// Versioned binary checkpoint.
//
//   magic       8 bytes   "TGCNCKPT"
//   version     u32       kCheckpointVersion
//   config      u64 length + UTF-8 text (canonical `key = value` lines)
//   entities    u64 count, then per name u64 length + bytes
//   relations   same layout as entities
//   epoch       u64
//   best_mrr    f64       best validation filtered MRR
//   adam_step   u64
//   arrays      u64 count, then per array u64 rows, u64 cols, rows*cols f64
//               order: entities, relations, W0/W1 per layer, Adam first
//               moments in the same order, then Adam second moments
//
// All integers and floats are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "transgcn/config.hpp"
#include "transgcn/encoder.hpp"
#include "transgcn/error.hpp"
#include "transgcn/kg.hpp"
#include "transgcn/optim.hpp"

namespace transgcn {

inline constexpr std::array<char, 8> kCheckpointMagic{'T', 'G', 'C', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  ModelState state;
  AdamState adam;
  Vocabulary entities;
  Vocabulary relations;
  std::uint64_t epoch = 0;
  double best_valid_mrr = 0.0;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t x) { put_le(x, 4); }
  void u64(std::uint64_t x) { put_le(x, 8); }
  void f64(double x) { put_le(std::bit_cast<std::uint64_t>(x), 8); }
  void str(const std::string& s) {
    u64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void matrix(const Matrix& m) {
    u64(m.rows());
    u64(m.cols());
    for (double x : m.data()) f64(x);
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  void put_le(std::uint64_t x, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
  }
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  double f64() { return std::bit_cast<double>(get_le(8)); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void raw(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  Matrix matrix() {
    const std::uint64_t r = u64(), c = u64();
    if (c != 0 && r > (bytes_.size() - pos_) / 8 / c) throw FormatError("checkpoint array larger than file");
    Matrix m(r, c);
    for (double& x : m.data()) x = f64();
    return m;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw FormatError("truncated checkpoint");
  }
  std::uint64_t get_le(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t x = 0;
    for (int i = 0; i < n; ++i) x |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_ + i])} << (8 * i);
    pos_ += n;
    return x;
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> serialize_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  w.str(ck.config.to_text());
  for (const Vocabulary* v : {&ck.entities, &ck.relations}) {
    w.u64(v->size());
    for (const auto& n : v->names()) w.str(n);
  }
  w.u64(ck.epoch);
  w.f64(ck.best_valid_mrr);
  w.u64(ck.adam.step);
  const auto params = ck.state.parameters();
  w.u64(params.size() * 3);
  for (const Matrix* p : params) w.matrix(*p);
  for (const Matrix& m : ck.adam.m) w.matrix(m);
  for (const Matrix& v : ck.adam.v) w.matrix(v);
  return w.bytes();
}

inline Checkpoint deserialize_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  std::array<char, 8> magic{};
  try {
    r.raw(magic.data(), magic.size());
  } catch (const FormatError&) {
    throw FormatError("bad checkpoint header");
  }
  if (magic != kCheckpointMagic) throw FormatError("bad checkpoint header");
  if (const auto version = r.u32(); version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config = TrainConfig::from_text(r.str());
  for (Vocabulary* v : {&ck.entities, &ck.relations}) {
    const std::uint64_t n = r.u64();
    std::vector<std::string> names;
    for (std::uint64_t i = 0; i < n; ++i) names.push_back(r.str());
    *v = Vocabulary::from_names(names);
  }
  ck.epoch = r.u64();
  ck.best_valid_mrr = r.f64();
  ck.adam.step = r.u64();
  const std::size_t n_params = 2 + 2 * ck.config.layers;
  if (r.u64() != 3 * n_params) throw FormatError("checkpoint array count does not match the layer count");
  std::vector<Matrix> arrays;
  for (std::size_t i = 0; i < 3 * n_params; ++i) arrays.push_back(r.matrix());
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint arrays");

  ModelState& s = ck.state;
  s.assumption = ck.config.assumption;
  s.activation = ck.config.activation;
  s.dim = ck.config.dim;
  s.entity_embed = std::move(arrays[0]);
  s.relation_params = std::move(arrays[1]);
  for (std::size_t l = 0; l < ck.config.layers; ++l) {
    s.layers.push_back({std::move(arrays[2 + 2 * l]), std::move(arrays[3 + 2 * l])});
  }
  try {
    s.check();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("inconsistent checkpoint: ") + e.what());
  }
  if (s.num_entities() != ck.entities.size() || s.num_relations() != ck.relations.size()) {
    throw FormatError("inconsistent checkpoint: vocabulary and table sizes differ");
  }
  for (std::size_t i = 0; i < n_params; ++i) {
    ck.adam.m.push_back(std::move(arrays[n_params + i]));
    ck.adam.v.push_back(std::move(arrays[2 * n_params + i]));
  }
  const auto params = s.parameters();
  for (std::size_t i = 0; i < n_params; ++i) {
    if (!ck.adam.m[i].same_shape(*params[i]) || !ck.adam.v[i].same_shape(*params[i])) {
      throw FormatError("inconsistent checkpoint: optimizer moment shapes");
    }
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(std::move(bytes));
}

}  // namespace transgcn

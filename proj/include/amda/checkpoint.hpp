#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "amda/error.hpp"
#include "amda/hash.hpp"
#include "amda/model.hpp"

namespace amda {

// Binary checkpoint, all integers and doubles little-endian:
//
//   magic      8 bytes  "AMDACKPT"
//   version    u32      kCheckpointVersion
//   seed       u64
//   hash       u32 length + bytes (config hash, may be empty)
//   pooling    u32      0 = mean, 1 = first
//   vocab      u64 |V|, dim u64 d, layers u64 L, classes u64 K
//   words      |V| x (u32 length + UTF-8 bytes)
//   embedding  |V|*d f64, row-major
//   per layer  d*d f64 weight (out x in, row-major), d f64 bias
//   head       d*K f64 row-major, K f64 bias
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'A', 'M', 'D', 'A', 'C', 'K', 'P', 'T'};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  void doubles(std::span<const double> v) {
    for (double d : v) f64(d);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : buf_(std::move(bytes)) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    auto n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void doubles(std::span<double> out) {
    for (auto& d : out) d = f64();
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw CheckpointError("checkpoint truncated");
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Classifier& c) {
  const auto& p = c.params;
  if (c.vocab.size() != p.vocab_size()) throw CheckpointError("vocabulary size does not match embedding rows");
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.u32(kCheckpointVersion);
  w.u64(c.seed);
  w.str(c.config_hash);
  w.u32(static_cast<std::uint32_t>(p.pooling));
  w.u64(p.vocab_size());
  w.u64(p.dim());
  w.u64(p.layer_count());
  w.u64(p.class_count());
  for (const auto& word : c.vocab.words()) w.str(word);
  ModelParams::for_each_tensor(p, [&](std::span<const double> t) { w.doubles(t); });
  return w.bytes();
}

inline Classifier deserialize_checkpoint(std::string bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.raw(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw CheckpointError("not an AMDA checkpoint (bad magic)");
  }
  auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Classifier c;
  c.seed = r.u64();
  c.config_hash = r.str();
  auto pooling = r.u32();
  if (pooling > 1) throw CheckpointError("unknown pooling selector");
  const auto vocab = r.u64(), dim = r.u64(), layers = r.u64(), classes = r.u64();
  if (vocab < 2 || dim == 0 || layers < 2 || classes < 2 || vocab > (1u << 24) || dim > 4096 || layers > 256 ||
      classes > 65536) {
    throw CheckpointError("implausible checkpoint dimensions");
  }
  std::vector<std::string> words;
  words.reserve(vocab);
  for (std::uint64_t i = 0; i < vocab; ++i) words.push_back(r.str());
  try {
    c.vocab = Vocabulary::from_words(words);
  } catch (const SchemaError& e) {
    throw CheckpointError(std::string("bad vocabulary: ") + e.what());
  }
  auto& p = c.params;
  p.pooling = static_cast<Pooling>(pooling);
  p.embedding = Matrix(vocab, dim);
  p.layers.assign(layers, DenseLayer{Matrix(dim, dim), std::vector<double>(dim)});
  p.head = Matrix(dim, classes);
  p.head_bias.assign(classes, 0.0);
  ModelParams::for_each_tensor(p, [&](std::span<double> t) { r.doubles(t); });
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return c;
}

inline void save_checkpoint(const Classifier& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path);
  const auto bytes = serialize_checkpoint(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path);
}

inline Classifier load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(std::move(bytes));
}

/// Fingerprint of the serialized checkpoint; identifies SAE victims.
inline std::string checkpoint_hash(const Classifier& c) { return fnv1a_hex(serialize_checkpoint(c)); }

}  // namespace amda

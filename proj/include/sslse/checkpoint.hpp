// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Named-tensor container.
//
//   "SSLE" | u32 version | u32 count
//   count x { u16 name_len | name | u8 dtype | u8 ndim | u32 dims[ndim] | raw }
//   u64 FNV-1a of every preceding byte
//
// Little-endian throughout; dtype 0 = f32, 1 = f64, 2 = i64.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "sslse/common.hpp"
#include "sslse/models.hpp"
#include "sslse/objectives.hpp"

namespace sslse {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kI64 = 2 };

inline std::size_t dtype_size(DType d) { return d == DType::kF32 ? 4 : 8; }

template <class T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::kF32;
  else if constexpr (std::is_same_v<T, double>) return DType::kF64;
  else return DType::kI64;
}

struct TensorEntry {
  std::string name;
  DType dtype = DType::kF64;
  std::vector<std::uint32_t> dims;
  std::string raw;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  /// Values converted to U.
  template <class U>
  std::vector<U> values() const {
    std::vector<U> out(numel());
    const char* p = raw.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      switch (dtype) {
        case DType::kF32: {
          float v;
          std::memcpy(&v, p + 4 * i, 4);
          out[i] = static_cast<U>(v);
          break;
        }
        case DType::kF64: {
          double v;
          std::memcpy(&v, p + 8 * i, 8);
          out[i] = static_cast<U>(v);
          break;
        }
        case DType::kI64: {
          std::int64_t v;
          std::memcpy(&v, p + 8 * i, 8);
          out[i] = static_cast<U>(v);
          break;
        }
      }
    }
    return out;
  }
};

class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  template <class U>
  void add(const std::string& name, const std::vector<std::size_t>& shape,
           const std::vector<U>& values) {
    check(!has(name), "duplicate tensor name " + name);
    check(name.size() < 65536, "tensor name too long");
    TensorEntry e;
    e.name = name;
    e.dtype = dtype_of<U>();
    for (auto d : shape) e.dims.push_back(static_cast<std::uint32_t>(d));
    check(e.numel() == values.size(), "tensor " + name + ": shape does not match values",
          ErrorCode::kShapeMismatch);
    e.raw.assign(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(U));
    tensors_.push_back(std::move(e));
  }

  void add_i64(const std::string& name, std::int64_t v) {
    add<std::int64_t>(name, {}, std::vector<std::int64_t>{v});
  }

  template <class T>
  void add_params(const ParamSet<T>& ps) {
    for (const auto& p : ps) add(p.name, p.shape, p.value);
  }

  bool has(const std::string& name) const { return find(name) != nullptr; }

  const TensorEntry* find(const std::string& name) const {
    for (const auto& t : tensors_)
      if (t.name == name) return &t;
    return nullptr;
  }

  const TensorEntry& at(const std::string& name) const {
    const auto* e = find(name);
    if (e == nullptr) throw Error("checkpoint has no tensor " + name, ErrorCode::kUnknownTensor);
    return *e;
  }

  std::int64_t i64(const std::string& name) const {
    const auto v = at(name).values<std::int64_t>();
    check(v.size() == 1, "tensor " + name + " is not a scalar", ErrorCode::kShapeMismatch);
    return v[0];
  }

  const std::vector<TensorEntry>& tensors() const { return tensors_; }

  std::string serialize() const {
    std::string out("SSLE", 4);
    put(out, kVersion);
    put(out, static_cast<std::uint32_t>(tensors_.size()));
    for (const auto& t : tensors_) {
      put(out, static_cast<std::uint16_t>(t.name.size()));
      out += t.name;
      put(out, static_cast<std::uint8_t>(t.dtype));
      put(out, static_cast<std::uint8_t>(t.dims.size()));
      for (auto d : t.dims) put(out, d);
      out += t.raw;
    }
    put(out, fnv1a(out.data(), out.size()));
    return out;
  }

  static Checkpoint parse(const std::string& bytes) {
    Reader r{bytes, 0};
    if (bytes.size() < 4) throw Error("truncated container", ErrorCode::kTruncated);
    if (bytes.compare(0, 4, "SSLE") != 0) throw Error("bad magic", ErrorCode::kBadMagic);
    r.pos = 4;
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion)
      throw Error("unsupported container version " + std::to_string(version),
                  ErrorCode::kBadVersion);
    const auto count = r.get<std::uint32_t>();
    Checkpoint ck;
    for (std::uint32_t i = 0; i < count; ++i) {
      TensorEntry e;
      const auto len = r.get<std::uint16_t>();
      e.name = r.take(len);
      const auto dt = r.get<std::uint8_t>();
      if (dt > 2) throw Error("tensor " + e.name + ": unknown dtype", ErrorCode::kGeneric);
      e.dtype = static_cast<DType>(dt);
      const auto ndim = r.get<std::uint8_t>();
      for (std::uint8_t k = 0; k < ndim; ++k) e.dims.push_back(r.get<std::uint32_t>());
      e.raw = r.take(e.numel() * dtype_size(e.dtype));
      ck.tensors_.push_back(std::move(e));
    }
    const std::size_t payload = r.pos;
    const auto stored = r.get<std::uint64_t>();
    if (r.pos != bytes.size())
      throw Error("trailing bytes after checkpoint footer", ErrorCode::kGeneric);
    if (stored != fnv1a(bytes.data(), payload))
      throw Error("checksum mismatch", ErrorCode::kChecksum);
    return ck;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string(), ErrorCode::kIo);
    const auto bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path.string(), ErrorCode::kIo);
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string(), ErrorCode::kIo);
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return parse(bytes);
  }

 private:
  struct Reader {
    const std::string& b;
    std::size_t pos;

    template <class U>
    U get() {
      if (pos + sizeof(U) > b.size()) throw Error("truncated container", ErrorCode::kTruncated);
      U v;
      std::memcpy(&v, b.data() + pos, sizeof(U));
      pos += sizeof(U);
      return v;
    }

    std::string take(std::size_t n) {
      if (pos + n > b.size()) throw Error("truncated container", ErrorCode::kTruncated);
      std::string s = b.substr(pos, n);
      pos += n;
      return s;
    }
  };

  template <class U>
  static void put(std::string& out, U v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(U));
  }

  std::vector<TensorEntry> tensors_;
};

/// Copies checkpoint tensors into `ps`. Every parameter must be present with
/// the same shape. In strict mode any checkpoint tensor that is neither a
/// parameter of `ps` nor under one of `other_prefixes` is an error.
template <class T>
void load_params(ParamSet<T>& ps, const Checkpoint& ck, bool strict = false,
                 const std::vector<std::string>& other_prefixes = {}) {
  std::string missing, mismatched;
  for (auto& p : ps) {
    const auto* e = ck.find(p.name);
    if (e == nullptr) {
      missing += (missing.empty() ? "" : ",") + p.name;
      continue;
    }
    std::vector<std::size_t> dims(e->dims.begin(), e->dims.end());
    if (dims != p.shape || e->dtype == DType::kI64) {
      mismatched += (mismatched.empty() ? "" : ",") + p.name + " (checkpoint " +
                    ad::shape_str(dims) + ", model " + ad::shape_str(p.shape) + ")";
      continue;
    }
    p.value = e->template values<T>();
  }
  if (!missing.empty())
    throw Error("checkpoint is missing tensors: " + missing, ErrorCode::kUnknownTensor);
  if (!mismatched.empty())
    throw Error("checkpoint dimension mismatch: " + mismatched, ErrorCode::kShapeMismatch);
  if (!strict) return;
  std::string unknown;
  for (const auto& e : ck.tensors()) {
    if (ps.has(e.name)) continue;
    bool other = false;
    for (const auto& pre : other_prefixes) other = other || e.name.rfind(pre, 0) == 0;
    if (!other) unknown += (unknown.empty() ? "" : ",") + e.name;
  }
  if (!unknown.empty())
    throw Error("unknown tensors in checkpoint: " + unknown, ErrorCode::kUnknownTensor);
}

/// Codebook stored as `quantizer.centroids` (f64) and `quantizer.C` (i64).
inline void add_codebook(Checkpoint& ck, const QuantizerCodebook& cb) {
  ck.add<double>("quantizer.centroids", {cb.centroids.rows, cb.centroids.cols}, cb.centroids.data);
  ck.add_i64("quantizer.C", static_cast<std::int64_t>(cb.C));
}

inline QuantizerCodebook read_codebook(const Checkpoint& ck) {
  QuantizerCodebook cb;
  cb.C = static_cast<std::size_t>(ck.i64("quantizer.C"));
  const auto& e = ck.at("quantizer.centroids");
  check(e.dims.size() == 2 && e.dims[0] == cb.C, "quantizer.centroids does not match quantizer.C",
        ErrorCode::kShapeMismatch);
  cb.centroids = Matrix<double>(e.dims[0], e.dims[1]);
  cb.centroids.data = e.values<double>();
  return cb;
}

}  // namespace sslse

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "cmda/errors.hpp"
#include "cmda/tensor.hpp"

namespace cmda {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'C', 'M', 'D', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// flags layout: bit 0 set when the model is a masked LM (clear for the
// translation model); bit 1 = masked side (0 source, 1 target); bit 2 =
// conditioning (0 both sides, 1 monolingual). Bits 1..2 only matter when
// bit 0 is set.
inline constexpr std::uint32_t kFlagMaskedLm = 1u << 0;
inline constexpr std::uint32_t kFlagSideTarget = 1u << 1;
inline constexpr std::uint32_t kFlagMonolingual = 1u << 2;

struct CheckpointMeta {
  std::uint64_t vocab_size = 0;
  std::uint32_t flags = 0;
  std::string config_digest;
};

template <typename S>
struct CheckpointData {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Tensor<S>>> tensors;

  const Tensor<S>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}
inline void put_u64(std::string& out, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}
inline void put_f64(std::string& out, double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

class ByteReader {
 public:
  ByteReader(const std::string& buf, std::string path)
      : buf_(buf), path_(std::move(path)) {}
  std::uint32_t u32() {
    std::uint32_t v;
    take(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    take(&v, 8);
    return v;
  }
  double f64() {
    double v;
    take(&v, 8);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool exhausted() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > buf_.size())
      throw DataError("checkpoint truncated: " + path_);
  }
  void take(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Values are widened to f64 on disk regardless of S, so a run trained in
// one precision can be inspected or resumed in the other. The file is
// written to a sibling temp path and renamed into place.
template <typename S>
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<std::pair<std::string, Tensor<S>>>& tensors) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, meta.vocab_size);
  detail::put_u32(out, meta.flags);
  detail::put_u32(out, static_cast<std::uint32_t>(meta.config_digest.size()));
  out.append(meta.config_digest);
  detail::put_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (Index d = 0; d < t.rank(); ++d)
      detail::put_u64(out, static_cast<std::uint64_t>(t.dim(d)));
    for (Index i = 0; i < t.numel(); ++i)
      detail::put_f64(out, static_cast<double>(t[i]));
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write checkpoint: " + tmp);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("checkpoint write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("checkpoint rename failed: " + path + ": " + ec.message());
}

template <typename S>
CheckpointData<S> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  detail::ByteReader r(buf, path);

  if (r.bytes(4) != std::string(kCheckpointMagic, 4))
    throw DataError("not a checkpoint file: " + path);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) +
                    ": " + path);

  CheckpointData<S> out;
  out.meta.vocab_size = r.u64();
  out.meta.flags = r.u32();
  out.meta.config_digest = r.bytes(r.u32());
  const std::uint64_t count = r.u64();
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = r.bytes(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw DataError("corrupt checkpoint record: " + path);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d)
      shape.push_back(static_cast<Index>(r.u64()));
    Tensor<S> t(shape);
    for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(r.f64());
    out.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.exhausted()) throw DataError("trailing bytes in checkpoint: " + path);
  return out;
}

}  // namespace cmda

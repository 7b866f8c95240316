// SPDX-License-Identifier: Apache-2.0
#include "sara/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sara/hash.hpp"

namespace sara {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& s, std::size_t end) : s_(s), end_(end) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw CheckpointError("checkpoint truncated");
  }
  const std::string& s_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'S', 'A', 'R', 'A'};

}  // namespace

void Checkpoint::put(std::string name, Tensor value, DType dtype) {
  if (contains(name)) throw CheckpointError("duplicate checkpoint entry '" + name + "'");
  entries_.push_back({std::move(name), dtype, std::move(value)});
}

void Checkpoint::put(std::string name, MatrixMask mask) {
  if (contains(name)) throw CheckpointError("duplicate checkpoint entry '" + name + "'");
  entries_.push_back({std::move(name), DType::f64, std::move(mask)});
}

void Checkpoint::put_params(const std::string& prefix, const ParamStore& params, DType dtype) {
  for (const auto& [name, value] : params) put(prefix + name, value, dtype);
}

void Checkpoint::put_masks(const std::string& prefix, const SparseMask& mask) {
  for (const auto& [name, m] : mask) put(prefix + name, *m);
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const Checkpoint::Entry& Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw CheckpointError("checkpoint has no entry '" + name + "'");
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  const auto& e = find(name);
  if (!std::holds_alternative<Tensor>(e.value)) throw CheckpointError("entry '" + name + "' is a mask");
  return std::get<Tensor>(e.value);
}

const MatrixMask& Checkpoint::mask(const std::string& name) const {
  const auto& e = find(name);
  if (!std::holds_alternative<MatrixMask>(e.value)) throw CheckpointError("entry '" + name + "' is not a mask");
  return std::get<MatrixMask>(e.value);
}

std::vector<std::string> Checkpoint::suffixes(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& e : entries_)
    if (e.name.starts_with(prefix)) out.push_back(e.name.substr(prefix.size()));
  return out;
}

ParamStore Checkpoint::params(const std::string& prefix) const {
  ParamStore out;
  for (const auto& s : suffixes(prefix)) out.add(s, tensor(prefix + s));
  return out;
}

SparseMask Checkpoint::masks(const std::string& prefix, double threshold, SelectionMode mode) const {
  std::vector<SparseMask::Entry> entries;
  for (const auto& s : suffixes(prefix)) entries.emplace_back(s, std::make_shared<const MatrixMask>(mask(prefix + s)));
  return SparseMask(std::move(entries), threshold, mode);
}

std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out(kMagic, 4);
  put_le<std::uint16_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.entries().size()));
  for (const auto& e : ck.entries()) {
    if (e.name.size() > 0xFFFF) throw CheckpointError("entry name too long: " + e.name);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    const Shape& shape = std::visit([](const auto& v) -> const Shape& { return v.shape(); }, e.value);
    const bool is_mask = std::holds_alternative<MatrixMask>(e.value);
    put_le<std::uint8_t>(out, is_mask ? 2 : static_cast<std::uint8_t>(e.dtype));
    if (shape.size() > 0xFF) throw CheckpointError("too many dimensions in '" + e.name + "'");
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) {
      if (d > 0xFFFFFFFFu) throw CheckpointError("dimension too large in '" + e.name + "'");
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    if (is_mask) {
      const auto& bits = std::get<MatrixMask>(e.value).bits();
      std::string packed((bits.size() + 7) / 8, '\0');
      for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) packed[i / 8] = static_cast<char>(packed[i / 8] | (1 << (i % 8)));
      out += packed;
    } else {
      for (double x : std::get<Tensor>(e.value).data()) {
        if (e.dtype == DType::f32) put_le<float>(out, static_cast<float>(x));
        else put_le<double>(out, x);
      }
    }
  }
  const auto crc = crc32({reinterpret_cast<const unsigned char*>(out.data()), out.size()});
  put_le<std::uint32_t>(out, crc);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 + 2 + 4 + 4) throw CheckpointError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("bad checkpoint magic");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  const auto actual = crc32({reinterpret_cast<const unsigned char*>(bytes.data()), body});
  if (stored != actual) throw CheckpointError("checkpoint CRC mismatch");

  Reader r(bytes, body);
  r.bytes(4);
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  Checkpoint ck;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.bytes(r.get<std::uint16_t>());
    const auto code = r.get<std::uint8_t>();
    const auto ndim = r.get<std::uint8_t>();
    Shape shape;
    for (std::uint8_t d = 0; d < ndim; ++d) shape.push_back(r.get<std::uint32_t>());
    const std::size_t n = shape_numel(shape);
    switch (code) {
      case 0: case 1: {
        std::vector<double> data(n);
        for (double& x : data) x = code == 0 ? r.get<double>() : static_cast<double>(r.get<float>());
        ck.put(std::move(name), Tensor(shape, std::move(data)), static_cast<DType>(code));
        break;
      }
      case 2: {
        const std::string packed = r.bytes((n + 7) / 8);
        std::vector<bool> bits(n);
        for (std::size_t i = 0; i < n; ++i) bits[i] = (static_cast<unsigned char>(packed[i / 8]) >> (i % 8)) & 1;
        ck.put(std::move(name), MatrixMask(shape, std::move(bits)));
        break;
      }
      default: throw CheckpointError("unknown dtype code " + std::to_string(code) + " for '" + name + "'");
    }
  }
  if (r.pos() != body) throw CheckpointError("trailing bytes before checkpoint CRC");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ck);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace sara

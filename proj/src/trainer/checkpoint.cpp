#include "metaseg/trainer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <zlib.h>

#include "metaseg/common/error.hpp"

namespace metaseg::trainer {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::f32:
      return 4;
    case DType::f64:
    case DType::u64:
      return 8;
  }
  throw FormatError("unknown dtype tag " + std::to_string(static_cast<int>(dtype)));
}

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const TensorRecord& Checkpoint::at(const std::string& name) const {
  const TensorRecord* t = find(name);
  if (!t) throw FormatError("checkpoint has no tensor '" + name + "'");
  return *t;
}

template <typename T>
void Checkpoint::put(const std::string& name, const ad::Tensor<T>& tensor) {
  TensorRecord r;
  r.name = name;
  r.dtype = std::is_same_v<T, float> ? DType::f32 : DType::f64;
  r.shape = tensor.shape();
  r.payload.resize(tensor.size() * sizeof(T));
  if (tensor.size() > 0) std::memcpy(r.payload.data(), tensor.data().data(), r.payload.size());
  tensors.push_back(std::move(r));
}

void Checkpoint::put_u64(const std::string& name, std::uint64_t value) {
  TensorRecord r;
  r.name = name;
  r.dtype = DType::u64;
  r.payload.resize(8);
  std::memcpy(r.payload.data(), &value, 8);
  tensors.push_back(std::move(r));
}

template <typename T>
ad::Tensor<T> Checkpoint::get(const std::string& name) const {
  const TensorRecord& r = at(name);
  ad::Tensor<T> out(r.shape);
  if (r.dtype == DType::f32) {
    std::vector<float> v(out.size());
    std::memcpy(v.data(), r.payload.data(), r.payload.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(v[i]);
  } else if (r.dtype == DType::f64) {
    std::vector<double> v(out.size());
    std::memcpy(v.data(), r.payload.data(), r.payload.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(v[i]);
  } else {
    throw FormatError("tensor '" + name + "' is not floating point");
  }
  return out;
}

std::uint64_t Checkpoint::get_u64(const std::string& name) const {
  const TensorRecord& r = at(name);
  if (r.dtype != DType::u64 || r.payload.size() != 8) throw FormatError("tensor '" + name + "' is not a u64 scalar");
  std::uint64_t v = 0;
  std::memcpy(&v, r.payload.data(), 8);
  return v;
}

template void Checkpoint::put<float>(const std::string&, const ad::Tensor<float>&);
template void Checkpoint::put<double>(const std::string&, const ad::Tensor<double>&);
template ad::Tensor<float> Checkpoint::get<float>(const std::string&) const;
template ad::Tensor<double> Checkpoint::get<double>(const std::string&) const;

namespace {

constexpr char kMagic[4] = {'M', 'S', 'G', 'N'};

class Writer {
 public:
  template <typename U>
  void num(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(U));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t end, const std::string& source)
      : bytes_(bytes), end_(end), source_(source) {}

  template <typename U>
  U num() {
    U v;
    std::memcpy(&v, need(sizeof(U)), sizeof(U));
    return v;
  }
  const std::uint8_t* need(std::size_t n) {
    if (n > end_ - pos_) throw FormatError(source_ + ": truncated checkpoint at byte " + std::to_string(pos_));
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
  const std::string& source_;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, data, static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> serialize(const Checkpoint& checkpoint) {
  Writer w;
  w.raw(kMagic, 4);
  w.num<std::uint32_t>(checkpoint.version);
  w.num<std::uint32_t>(static_cast<std::uint32_t>(checkpoint.config_echo.size()));
  w.raw(checkpoint.config_echo.data(), checkpoint.config_echo.size());
  w.num<std::uint64_t>(checkpoint.tensors.size());
  for (const TensorRecord& t : checkpoint.tensors) {
    std::size_t count = 1;
    for (const auto e : t.shape) count *= e;
    if (count * dtype_size(t.dtype) != t.payload.size()) {
      throw ValidationError("tensor '" + t.name + "': payload size does not match its shape");
    }
    w.num<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.raw(t.name.data(), t.name.size());
    w.num<std::uint8_t>(static_cast<std::uint8_t>(t.dtype));
    w.num<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (const auto e : t.shape) w.num<std::uint64_t>(e);
    w.raw(t.payload.data(), t.payload.size());
  }
  w.num<std::uint32_t>(crc_of(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(source + ": not a checkpoint (bad magic)");
  }
  Checkpoint c;
  std::memcpy(&c.version, bytes.data() + 4, 4);
  if (c.version != kCheckpointVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(c.version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  // structure first so a short file reports truncation, then the checksum
  const std::size_t body = bytes.size() - 4;
  Reader r(bytes, body, source);
  r.need(8);
  const auto echo_len = r.num<std::uint32_t>();
  const auto* echo = r.need(echo_len);
  c.config_echo.assign(reinterpret_cast<const char*>(echo), echo_len);
  const auto count = r.num<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorRecord t;
    const auto name_len = r.num<std::uint32_t>();
    const auto* name = r.need(name_len);
    t.name.assign(reinterpret_cast<const char*>(name), name_len);
    const auto tag = r.num<std::uint8_t>();
    if (tag > 2) throw FormatError(source + ": tensor '" + t.name + "' has unknown dtype tag " + std::to_string(tag));
    t.dtype = static_cast<DType>(tag);
    const auto rank = r.num<std::uint32_t>();
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(r.num<std::uint64_t>());
      n *= t.shape.back();
    }
    const std::size_t payload = n * dtype_size(t.dtype);
    const auto* p = r.need(payload);
    t.payload.assign(p, p + payload);
    c.tensors.push_back(std::move(t));
  }
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (stored != crc_of(bytes.data(), body)) throw FormatError(source + ": checksum mismatch (file is corrupt)");
  if (r.pos() != body) throw FormatError(source + ": trailing bytes after tensor table");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = serialize(checkpoint);
  // write-then-rename so a crash never leaves a half-written checkpoint
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint not found: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes, path.string());
}

}  // namespace metaseg::trainer

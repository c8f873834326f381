#include "recot/container.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace recot {

namespace {

constexpr char kMagic[4] = {'R', 'C', 'O', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw FormatError(FormatError::Kind::truncated, "container truncated");
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, data, static_cast<uInt>(n)));
}

}  // namespace

const Tensor* Container::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

const Tensor& Container::tensor(const std::string& name) const {
  if (const Tensor* t = find(name)) return *t;
  throw FormatError(FormatError::Kind::malformed, "container has no tensor named '" + name + "'");
}

std::string Container::config_value(const std::string& key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return v;
  }
  throw FormatError(FormatError::Kind::malformed, "container config has no key '" + key + "'");
}

std::vector<std::uint8_t> encode_container(const Container& container) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kContainerVersion);
  const std::string config = format_key_values(container.config);
  w.u32(static_cast<std::uint32_t>(config.size()));
  w.raw(config.data(), config.size());
  w.u32(static_cast<std::uint32_t>(container.tensors.size()));
  for (const auto& [name, tensor] : container.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t extent : tensor.shape()) w.u64(extent);
    for (double v : tensor.values()) w.f64(v);
  }
  const std::uint32_t crc = crc_of(w.bytes().data(), w.bytes().size());
  w.u32(crc);
  return std::move(w.bytes());
}

Container decode_container(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw FormatError(FormatError::Kind::truncated, "container shorter than its magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(FormatError::Kind::bad_magic, "not a RCOT container (bad magic)");
  }
  Reader header(bytes.data() + 4, bytes.size() - 4);
  const std::uint32_t version = header.u32();
  if (version != kContainerVersion) {
    throw FormatError(FormatError::Kind::version_mismatch, "container version " + std::to_string(version) +
                                                               ", expected " + std::to_string(kContainerVersion));
  }
  if (bytes.size() < 12) throw FormatError(FormatError::Kind::truncated, "container missing checksum");
  const std::size_t body_size = bytes.size() - 4;
  Reader body(bytes.data() + 8, body_size - 8);

  Container out;
  const std::uint32_t config_size = body.u32();
  try {
    out.config = parse_key_values(body.str(config_size));
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatError::Kind::malformed, std::string("container config: ") + e.what());
  }
  const std::uint32_t count = body.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor record;
    record.name = body.str(body.u32());
    const std::uint32_t rank = body.u32();
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& extent : shape) {
      extent = static_cast<std::size_t>(body.u64());
      if (extent == 0) throw FormatError(FormatError::Kind::malformed, "zero extent in tensor '" + record.name + "'");
      numel *= extent;
    }
    if (numel > body.remaining() / 8) throw FormatError(FormatError::Kind::truncated, "container truncated");
    std::vector<double> values(numel);
    for (double& v : values) v = body.f64();
    try {
      record.tensor = Tensor(std::move(shape), std::move(values));
    } catch (const std::exception& e) {
      throw FormatError(FormatError::Kind::malformed, "tensor '" + record.name + "': " + e.what());
    }
    out.tensors.push_back(std::move(record));
  }
  if (body.remaining() != 0) throw FormatError(FormatError::Kind::malformed, "trailing bytes after tensor records");

  Reader trailer(bytes.data() + body_size, 4);
  if (trailer.u32() != crc_of(bytes.data(), body_size)) {
    throw FormatError(FormatError::Kind::checksum_mismatch, "container CRC32 mismatch");
  }
  return out;
}

void write_container(const std::filesystem::path& path, const Container& container) {
  const auto bytes = encode_container(container);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatError::Kind::io, "write failed for " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

}  // namespace recot

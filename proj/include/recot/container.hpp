#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "recot/config_file.hpp"
#include "recot/tensor.hpp"

namespace recot {

// Binary tensor container shared by checkpoints, selector weights and
// embedding clips. Little-endian layout:
//
//   "RCOT" | u32 version | u32 config bytes | config text (key = value lines)
//   u32 tensor count
//   per tensor: u32 name bytes | name | u32 rank | u64 extent * rank | f64 * numel
//   u32 CRC32 of everything above
inline constexpr std::uint32_t kContainerVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Container {
  KeyValues config;
  std::vector<NamedTensor> tensors;

  const Tensor& tensor(const std::string& name) const;
  const Tensor* find(const std::string& name) const;
  std::string config_value(const std::string& key) const;
};

class FormatError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, version_mismatch, truncated, checksum_mismatch, malformed };

  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

std::vector<std::uint8_t> encode_container(const Container& container);
Container decode_container(const std::vector<std::uint8_t>& bytes);

void write_container(const std::filesystem::path& path, const Container& container);
Container read_container(const std::filesystem::path& path);

}  // namespace recot

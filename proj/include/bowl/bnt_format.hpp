#pragma once

// BNT1 tensor container.
//
// Layout (all integers little-endian):
//   "BNT1"
//   repeated until end of file:
//     u16 name length, UTF-8 name bytes
//     u8 dtype (0 = f32, 1 = u32)
//     u8 rank (>= 1)
//     rank x u32 dims
//     payload, row-major, 4 bytes per element
//
// Network checkpoints and datasets both use this container.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace bowl::bnt {

enum class Dtype : std::uint8_t { f32 = 0, u32 = 1 };

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::variant<std::vector<float>, std::vector<std::uint32_t>> payload;

  Dtype dtype() const { return payload.index() == 0 ? Dtype::f32 : Dtype::u32; }
  std::size_t element_count() const;
  const std::vector<float>& f32() const;
  const std::vector<std::uint32_t>& u32() const;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

NamedTensor make_f32(std::string name, std::vector<std::uint32_t> dims,
                     std::vector<float> values);
NamedTensor make_u32(std::string name, std::vector<std::uint32_t> dims,
                     std::vector<std::uint32_t> values);

void write(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read(std::istream& in);

// Writes to a temporary sibling and renames it into place.
void write_file(const std::filesystem::path& path,
                const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_file(const std::filesystem::path& path);

const NamedTensor* find(const std::vector<NamedTensor>& tensors,
                        const std::string& name);
const NamedTensor& require(const std::vector<NamedTensor>& tensors,
                           const std::string& name);

}  // namespace bowl::bnt

#include "bowl/bnt_format.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "bowl/error.hpp"
#include "bowl/io.hpp"

namespace bowl::bnt {
namespace {

constexpr char kMagic[4] = {'B', 'N', 'T', '1'};
constexpr std::size_t kMaxElements = std::size_t{1} << 32;

void put_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

void put_u16(std::ostream& out, std::uint16_t v) {
  put_u8(out, v & 0xff);
  put_u8(out, v >> 8);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) put_u8(out, (v >> (8 * i)) & 0xff);
}

void get_bytes(std::istream& in, void* dst, std::size_t n, const char* what) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) == n) return;
  throw FormatError(std::string("truncated BNT1 stream while reading ") + what);
}

std::uint32_t decode_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

}  // namespace

std::size_t NamedTensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

const std::vector<float>& NamedTensor::f32() const {
  if (dtype() != Dtype::f32) throw FormatError("tensor '" + name + "' is not f32");
  return std::get<0>(payload);
}

const std::vector<std::uint32_t>& NamedTensor::u32() const {
  if (dtype() != Dtype::u32) throw FormatError("tensor '" + name + "' is not u32");
  return std::get<1>(payload);
}

NamedTensor make_f32(std::string name, std::vector<std::uint32_t> dims,
                     std::vector<float> values) {
  NamedTensor t{std::move(name), std::move(dims), std::move(values)};
  if (t.element_count() != t.f32().size())
    throw ShapeError("tensor '" + t.name + "' dims do not match payload");
  return t;
}

NamedTensor make_u32(std::string name, std::vector<std::uint32_t> dims,
                     std::vector<std::uint32_t> values) {
  NamedTensor t{std::move(name), std::move(dims), std::move(values)};
  if (t.element_count() != t.u32().size())
    throw ShapeError("tensor '" + t.name + "' dims do not match payload");
  return t;
}

void write(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  out.write(kMagic, 4);
  for (const auto& t : tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max())
      throw FormatError("tensor name too long: " + t.name.substr(0, 32));
    if (t.dims.empty() || t.dims.size() > 255)
      throw FormatError("tensor '" + t.name + "' has unsupported rank");
    put_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u8(out, static_cast<std::uint8_t>(t.dtype()));
    put_u8(out, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    if (t.dtype() == Dtype::f32) {
      for (float v : t.f32()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    } else {
      for (auto v : t.u32()) put_u32(out, v);
    }
  }
  if (!out) throw FormatError("failed writing BNT1 stream");
}

std::vector<NamedTensor> read(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad magic: not a BNT1 file");

  std::vector<NamedTensor> out;
  while (true) {
    unsigned char len_bytes[2];
    in.read(reinterpret_cast<char*>(len_bytes), 2);
    if (in.gcount() == 0) break;
    if (in.gcount() != 2) throw FormatError("truncated BNT1 stream while reading name length");
    std::size_t name_len = std::size_t(len_bytes[0]) | std::size_t(len_bytes[1]) << 8;

    NamedTensor t;
    t.name.resize(name_len);
    if (name_len) get_bytes(in, t.name.data(), name_len, "name");

    unsigned char header[2];
    get_bytes(in, header, 2, "dtype/rank");
    if (header[0] > 1)
      throw FormatError("tensor '" + t.name + "' has unknown dtype " + std::to_string(header[0]));
    if (header[1] == 0) throw FormatError("tensor '" + t.name + "' has rank 0");

    std::size_t count = 1;
    for (unsigned r = 0; r < header[1]; ++r) {
      unsigned char b[4];
      get_bytes(in, b, 4, "dims");
      std::uint32_t d = decode_u32(b);
      if (d != 0 && count > kMaxElements / d)
        throw FormatError("tensor '" + t.name + "' dims overflow");
      count *= d;
      t.dims.push_back(d);
    }
    if (count > kMaxElements) throw FormatError("tensor '" + t.name + "' dims overflow");

    std::vector<unsigned char> raw(count * 4);
    if (count) get_bytes(in, raw.data(), raw.size(), "payload");
    if (header[0] == 0) {
      std::vector<float> values(count);
      for (std::size_t i = 0; i < count; ++i)
        values[i] = std::bit_cast<float>(decode_u32(&raw[4 * i]));
      t.payload = std::move(values);
    } else {
      std::vector<std::uint32_t> values(count);
      for (std::size_t i = 0; i < count; ++i) values[i] = decode_u32(&raw[4 * i]);
      t.payload = std::move(values);
    }
    out.push_back(std::move(t));
  }
  return out;
}

void write_file(const std::filesystem::path& path,
                const std::vector<NamedTensor>& tensors) {
  std::ostringstream buf(std::ios::binary);
  write(buf, tensors);
  io::write_file_atomic(path, buf.str());
}

std::vector<NamedTensor> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read(in);
}

const NamedTensor* find(const std::vector<NamedTensor>& tensors,
                        const std::string& name) {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const NamedTensor& require(const std::vector<NamedTensor>& tensors,
                           const std::string& name) {
  if (const auto* t = find(tensors, name)) return *t;
  throw FormatError("missing tensor '" + name + "'");
}

}  // namespace bowl::bnt

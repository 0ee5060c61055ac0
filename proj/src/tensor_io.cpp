#include "deepca/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "deepca/errors.hpp"

namespace deepca {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'A', 'T'};
constexpr std::uint8_t kVersion = 0x01;
constexpr std::uint8_t kDtypeF64 = 0x01;

void put_u32_le(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes, 4);
}

void put_f64_le(std::ostream& out, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

std::uint32_t get_u32_le(std::istream& in) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (!in) throw FormatError("DCAT: truncated u32 field");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

double get_f64_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw FormatError("DCAT: truncated payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_dcat(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  out.put(static_cast<char>(kVersion));
  out.put(static_cast<char>(kDtypeF64));
  put_u32_le(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.dims()) {
    if (d > UINT32_MAX) throw CapacityError("DCAT: extent exceeds u32");
    put_u32_le(out, static_cast<std::uint32_t>(d));
  }
  for (std::size_t i = 0; i < t.size(); ++i) put_f64_le(out, t[i]);
  if (!out) throw FormatError("DCAT: write failure");
}

Tensor read_dcat(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("DCAT: bad magic");
  const int version = in.get();
  if (version != kVersion) throw FormatError("DCAT: unsupported version");
  const int dtype = in.get();
  if (dtype != kDtypeF64) throw FormatError("DCAT: unsupported dtype");
  const std::uint32_t rank = get_u32_le(in);
  if (rank == 0 || rank > 32) throw FormatError("DCAT: rank out of range");
  std::vector<std::size_t> dims(rank);
  std::size_t numel = 1;
  for (auto& d : dims) {
    d = get_u32_le(in);
    if (d == 0) throw FormatError("DCAT: zero extent");
    if (numel > (std::size_t{1} << 33) / d) throw CapacityError("DCAT: tensor too large");
    numel *= d;
  }
  std::vector<double> values(numel);
  for (auto& v : values) v = get_f64_le(in);
  return Tensor(std::move(dims), std::move(values));
}

void write_dcat_file(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("DCAT: cannot open " + path.string() + " for writing");
  write_dcat(out, t);
}

Tensor read_dcat_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("DCAT: cannot open " + path.string());
  Tensor t = read_dcat(in);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("DCAT: trailing bytes after payload in " + path.string());
  }
  return t;
}

}  // namespace deepca

#include "hsnerf/binary_io.hpp"

#include <array>
#include <cstring>
#include <vector>

#include "hsnerf/error.hpp"

namespace hsnerf::binio {

namespace {

template <typename U>
void put(std::ostream& os, U v) {
  std::array<char, sizeof(U)> buf;
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf.data(), buf.size());
}

template <typename U>
U get(std::istream& is, std::string_view what) {
  std::array<unsigned char, sizeof(U)> buf;
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (is.gcount() != static_cast<std::streamsize>(buf.size()))
    throw DataError(std::string(what) + ": truncated file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { put(os, v); }
void write_f32(std::ostream& os, float v) { put(os, std::bit_cast<std::uint32_t>(v)); }
void write_f64(std::ostream& os, double v) { put(os, std::bit_cast<std::uint64_t>(v)); }
void write_bytes(std::ostream& os, std::string_view bytes) {
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_f64_array(std::ostream& os, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (double v : values) write_f64(os, v);
  }
}

std::uint32_t read_u32(std::istream& is, std::string_view what) { return get<std::uint32_t>(is, what); }
std::uint64_t read_u64(std::istream& is, std::string_view what) { return get<std::uint64_t>(is, what); }
float read_f32(std::istream& is, std::string_view what) {
  return std::bit_cast<float>(get<std::uint32_t>(is, what));
}
double read_f64(std::istream& is, std::string_view what) {
  return std::bit_cast<double>(get<std::uint64_t>(is, what));
}
std::string read_bytes(std::istream& is, std::size_t n, std::string_view what) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n)) throw DataError(std::string(what) + ": truncated file");
  return s;
}

void read_f64_array(std::istream& is, std::span<double> out, std::string_view what) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()));
    if (is.gcount() != static_cast<std::streamsize>(out.size_bytes()))
      throw DataError(std::string(what) + ": truncated file");
  } else {
    for (auto& v : out) v = read_f64(is, what);
  }
}

}  // namespace hsnerf::binio

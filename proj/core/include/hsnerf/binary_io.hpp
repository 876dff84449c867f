#pragma once

// Little-endian primitive serialization shared by the binary formats.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

namespace hsnerf::binio {

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_bytes(std::ostream& os, std::string_view bytes);
void write_f64_array(std::ostream& os, std::span<const double> values);

/// Readers throw DataError mentioning `what` and "truncated" on short reads.
std::uint32_t read_u32(std::istream& is, std::string_view what);
std::uint64_t read_u64(std::istream& is, std::string_view what);
float read_f32(std::istream& is, std::string_view what);
double read_f64(std::istream& is, std::string_view what);
std::string read_bytes(std::istream& is, std::size_t n, std::string_view what);
void read_f64_array(std::istream& is, std::span<double> out, std::string_view what);

}  // namespace hsnerf::binio

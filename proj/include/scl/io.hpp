#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>

#include <json.hpp>

namespace scl::io {

// Little-endian scalar I/O. Streams must be opened in binary mode.
void write_u16(std::ostream& out, std::uint16_t x);
void write_u32(std::ostream& out, std::uint32_t x);
void write_u64(std::ostream& out, std::uint64_t x);
void write_f64(std::ostream& out, double x);
std::uint16_t read_u16(std::istream& in);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, const std::string& content);

nlohmann::json load_json(const std::filesystem::path& p);
void save_json(const std::filesystem::path& p, const nlohmann::json& j);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. fn must only touch
/// state owned by index i; result is independent of scheduling.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace scl::io

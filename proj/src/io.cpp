#include "scl/io.hpp"

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <vector>

namespace scl::io {

namespace {
static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

template <class T>
void write_raw(std::ostream& out, T x) {
    out.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

template <class T>
T read_raw(std::istream& in) {
    T x{};
    in.read(reinterpret_cast<char*>(&x), sizeof(T));
    return x;
}
}  // namespace

void write_u16(std::ostream& out, std::uint16_t x) { write_raw(out, x); }
void write_u32(std::ostream& out, std::uint32_t x) { write_raw(out, x); }
void write_u64(std::ostream& out, std::uint64_t x) { write_raw(out, x); }
void write_f64(std::ostream& out, double x) { write_raw(out, x); }
std::uint16_t read_u16(std::istream& in) { return read_raw<std::uint16_t>(in); }
std::uint32_t read_u32(std::istream& in) { return read_raw<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return read_raw<std::uint64_t>(in); }
double read_f64(std::istream& in) { return read_raw<double>(in); }

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& content) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << content;
}

nlohmann::json load_json(const std::filesystem::path& p) {
    return nlohmann::json::parse(read_file(p));
}

void save_json(const std::filesystem::path& p, const nlohmann::json& j) {
    write_file(p, j.dump(2) + "\n");
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    const int workers = std::max(1, std::min(jobs, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace scl::io

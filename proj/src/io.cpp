#include "microdesign/common.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <thread>

namespace md {

int worker_count() {
  if (const char* env = std::getenv("MICRODESIGN_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? int(hw) : 1;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
  int workers = worker_count();
  if (workers <= 1 || n <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  workers = int(std::min<std::int64_t>(workers, n));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    std::int64_t lo = n * w / workers, hi = n * (w + 1) / workers;
    pool.emplace_back([lo, hi, &fn] {
      for (std::int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

void write_bytes(const std::filesystem::path& p, const void* data, std::size_t n) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + p.string());
  f.write(static_cast<const char*>(data), std::streamsize(n));
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open: " + p.string());
  std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> v(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(v.data()), n);
  if (!f) throw std::runtime_error("read failed: " + p.string());
  return v;
}

void write_f32(const std::filesystem::path& p, const std::vector<float>& v) {
  write_bytes(p, v.data(), v.size() * sizeof(float));
}

std::vector<float> read_f32(const std::filesystem::path& p) {
  auto raw = read_bytes(p);
  if (raw.size() % sizeof(float)) throw std::runtime_error("truncated f32 file: " + p.string());
  std::vector<float> v(raw.size() / sizeof(float));
  std::memcpy(v.data(), raw.data(), raw.size());
  return v;
}

void write_f64(const std::filesystem::path& p, const std::vector<double>& v) {
  write_bytes(p, v.data(), v.size() * sizeof(double));
}

std::vector<double> read_f64(const std::filesystem::path& p) {
  auto raw = read_bytes(p);
  if (raw.size() % sizeof(double)) throw std::runtime_error("truncated f64 file: " + p.string());
  std::vector<double> v(raw.size() / sizeof(double));
  std::memcpy(v.data(), raw.data(), raw.size());
  return v;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  write_bytes(p, s.data(), s.size());
}

std::string read_text(const std::filesystem::path& p) {
  auto raw = read_bytes(p);
  return std::string(raw.begin(), raw.end());
}

}  // namespace md

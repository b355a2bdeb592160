#pragma once
// Shared basics: matrix alias, deterministic RNG, thread helpers, raw file I/O.

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace md {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

// splitmix64 step; used both as a PRNG seeder and for deriving child seeds.
inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic child seed from a root seed and up to three indices.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = seed;
  std::uint64_t h = splitmix64(s);
  s ^= a + 0x9e3779b97f4a7c15ull;
  h ^= splitmix64(s);
  s ^= b + 0xbf58476d1ce4e5b9ull;
  h ^= splitmix64(s);
  s ^= c + 0x94d049bb133111ebull;
  h ^= splitmix64(s);
  return h;
}

// Deterministic generator. Deviates are hand-rolled from raw 64-bit draws so
// streams are bit-stable across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    // expand the seed through splitmix64 as recommended for xoshiro256**
    std::uint64_t s = seed;
    for (auto& w : state_) w = splitmix64(s);
  }

  std::uint64_t u64() {
    // xoshiro256** by Blackman & Vigna (public domain reference implementation)
    auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0,1)
  double uniform() { return double(u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller (no spare caching; deterministic)
  double normal() {
    double u1 = 1.0 - uniform();  // (0,1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // uniform integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return u64() % n; }

 private:
  std::uint64_t state_[4];
};

// Worker count: MICRODESIGN_THREADS if set (>=1), else hardware concurrency.
int worker_count();

// Static-partition parallel map; fn(i) must only write state owned by index i,
// which keeps results identical for any worker count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

// --- raw little-endian array I/O -------------------------------------------

void write_bytes(const std::filesystem::path& p, const void* data, std::size_t n);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p);

void write_f32(const std::filesystem::path& p, const std::vector<float>& v);
std::vector<float> read_f32(const std::filesystem::path& p);
void write_f64(const std::filesystem::path& p, const std::vector<double>& v);
std::vector<double> read_f64(const std::filesystem::path& p);

void write_text(const std::filesystem::path& p, const std::string& s);
std::string read_text(const std::filesystem::path& p);

}  // namespace md

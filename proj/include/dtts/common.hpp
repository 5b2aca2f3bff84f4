#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace dtts {

// Row-major throughout: rows are time steps / sequence slots, cols are feature dims.
using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::RowVectorXf;

// xoshiro256++ with splitmix64 seeding. Self-contained so that streams are
// reproducible independent of the standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw std::logic_error("Rng::uniform_int: empty range");
    const uint64_t span = uint64_t(hi) - uint64_t(lo) + 1;
    return lo + int(next_u64() % span);
  }

  // Box-Muller; pairs are cached so draws stay aligned with the stream.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586477 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Independent child stream; distinct `stream` values give distinct rngs.
  Rng fork(uint64_t stream) {
    uint64_t x = state_[0] ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    return Rng(splitmix64(x));
  }

 private:
  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

  uint64_t state_[4];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

inline Mat randn(Rng& rng, int rows, int cols, float std_dev) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = float(rng.normal()) * std_dev;
  return m;
}

inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

// Little-endian binary buffer writer/reader for the on-disk formats.
struct ByteWriter {
  std::string buf;

  void put_bytes(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
  void put_u32(uint32_t v) { put_bytes(&v, 4); }
  void put_u64(uint64_t v) { put_bytes(&v, 8); }
  void put_i64(int64_t v) { put_bytes(&v, 8); }
  void put_f32(float v) { put_bytes(&v, 4); }
  void put_f64(double v) { put_bytes(&v, 8); }
  void put_str(const std::string& s) {
    put_u32(uint32_t(s.size()));
    put_bytes(s.data(), s.size());
  }
  void put_mat(const Mat& m) {
    put_u32(uint32_t(m.rows()));
    put_u32(uint32_t(m.cols()));
    put_bytes(m.data(), sizeof(float) * size_t(m.size()));
  }
};

struct ByteReader {
  const std::string& buf;
  size_t pos = 0;

  explicit ByteReader(const std::string& b) : buf(b) {}

  void get_bytes(void* p, size_t n) {
    if (pos + n > buf.size()) throw std::runtime_error("binary read past end of buffer");
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  uint32_t get_u32() { uint32_t v; get_bytes(&v, 4); return v; }
  uint64_t get_u64() { uint64_t v; get_bytes(&v, 8); return v; }
  int64_t get_i64() { int64_t v; get_bytes(&v, 8); return v; }
  float get_f32() { float v; get_bytes(&v, 4); return v; }
  double get_f64() { double v; get_bytes(&v, 8); return v; }
  std::string get_str() {
    const uint32_t n = get_u32();
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }
  Mat get_mat() {
    const uint32_t r = get_u32();
    const uint32_t c = get_u32();
    Mat m(r, c);
    get_bytes(m.data(), sizeof(float) * size_t(m.size()));
    return m;
  }
  bool eof() const { return pos >= buf.size(); }
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& data);

}  // namespace dtts

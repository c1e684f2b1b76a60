#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace styleproto {

// splitmix64 finalizer; used to derive independent stream seeds from one
// root seed plus fixed tags.
uint64_t mix64(uint64_t x);
uint64_t mix_seed(uint64_t seed, uint64_t a);
uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b);
uint64_t mix_seed(uint64_t seed, std::string_view tag);
uint64_t mix_seed(uint64_t seed, std::string_view tag, uint64_t a);
uint64_t mix_seed(uint64_t seed, std::string_view tag, uint64_t a, uint64_t b);

// FNV-1a over raw bytes; content digests for manifests and ids.
uint64_t fnv1a(const void* data, size_t len);
uint64_t fnv1a(std::string_view s);
std::string to_hex(uint64_t v);

// mt19937_64 engine with fixed distribution algorithms; the std::
// distributions are implementation-defined and would break cross-platform
// reproducibility of seeded streams.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // unbiased integer in [0, n); n must be > 0
  uint64_t uniform_u64(uint64_t n);
  size_t uniform_index(size_t n) { return static_cast<size_t>(uniform_u64(n)); }

  // [0, 1) with 53-bit resolution
  double uniform_real();

  bool bernoulli(double p) { return uniform_real() < p; }

  // Box-Muller
  double normal();

  // Fisher-Yates
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

// little-endian binary encoding helpers for the versioned file formats
void put_u32(std::string& out, uint32_t v);
void put_u64(std::string& out, uint64_t v);
void put_f32(std::string& out, float v);
void put_str(std::string& out, std::string_view s);

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  // the reader only views its input; a temporary would dangle immediately
  explicit ByteReader(std::string&&) = delete;
  uint32_t get_u32();
  uint64_t get_u64();
  float get_f32();
  std::string get_str();
  std::string get_bytes(size_t n);
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(size_t n);
  std::string_view data_;
  size_t pos_ = 0;
};

// OpenMP thread cap shared by all parallel kernels. 0 = library default.
void set_thread_cap(int n);
int thread_cap();

// Routes the numeric code between the OpenMP kernels and their serial
// references (default: parallel). The two produce bit-identical results;
// the switch exists so tests and the benchmark can prove it.
void set_parallel_enabled(bool on);
bool parallel_enabled();

}  // namespace styleproto

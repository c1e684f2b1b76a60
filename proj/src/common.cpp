#include "styleproto/common.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace styleproto {

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t mix_seed(uint64_t seed, uint64_t a) { return mix64(mix64(seed) ^ a); }

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b) {
  return mix64(mix_seed(seed, a) ^ b);
}

uint64_t mix_seed(uint64_t seed, std::string_view tag) {
  return mix_seed(seed, fnv1a(tag));
}

uint64_t mix_seed(uint64_t seed, std::string_view tag, uint64_t a) {
  return mix64(mix_seed(seed, tag) ^ a);
}

uint64_t mix_seed(uint64_t seed, std::string_view tag, uint64_t a, uint64_t b) {
  return mix64(mix_seed(seed, tag, a) ^ b);
}

uint64_t fnv1a(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t fnv1a(std::string_view s) { return fnv1a(s.data(), s.size()); }

std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

uint64_t Rng::uniform_u64(uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_u64: n must be > 0");
  uint64_t threshold = -n % n;  // rejection bound for unbiased draw
  for (;;) {
    uint64_t r = engine_();
    if (r >= threshold) return r % n;
  }
}

double Rng::uniform_real() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  double u1 = uniform_real();
  double u2 = uniform_real();
  while (u1 <= 0.0) u1 = uniform_real();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_str(std::string& out, std::string_view s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

void ByteReader::need(size_t n) {
  if (pos_ + n > data_.size()) throw std::runtime_error("truncated binary file");
}

uint32_t ByteReader::get_u32() {
  need(4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  pos_ += 4;
  return v;
}

uint64_t ByteReader::get_u64() {
  need(8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::get_f32() {
  uint32_t bits = get_u32();
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::string ByteReader::get_str() {
  uint32_t n = get_u32();
  return get_bytes(n);
}

std::string ByteReader::get_bytes(size_t n) {
  need(n);
  std::string s(data_.substr(pos_, n));
  pos_ += n;
  return s;
}

namespace {
bool g_parallel = true;
}

void set_parallel_enabled(bool on) { g_parallel = on; }
bool parallel_enabled() { return g_parallel; }

void set_thread_cap(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int thread_cap() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace styleproto

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace ld3dhs {

// Whole-file helpers; failures throw IoError naming the path.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view contents);
void ensure_directory(const std::filesystem::path& dir);

// Process-wide allocator settings suited to large short-lived matrices.
void tune_allocator();

// SplitMix64 finalizer; used to derive independent per-item seeds from a run
// seed without sharing generator state.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// 64-bit FNV-1a; stable across platforms.
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace ld3dhs

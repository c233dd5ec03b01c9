#include "ld3dhs/scene_io.hpp"

#include "ld3dhs/errors.hpp"
#include "ld3dhs/file_util.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace ld3dhs {

static_assert(std::endian::native == std::endian::little, "scene files assume a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic{'L', 'D', '3', 'D', 'S', 'C', 'N', '1'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated scene file '" + path.string() + "'");
  return v;
}

}  // namespace

void write_scene(const Scene& scene, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic.data(), kMagic.size());
  const auto n = static_cast<std::uint64_t>(scene.num_points());
  const auto c = static_cast<std::uint32_t>(scene.feature_dim());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(scene.labels.size()));
  put<std::uint32_t>(out, c);
  put<std::uint64_t>(out, n);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(scene.name.size()));
  out.write(scene.name.data(), static_cast<std::streamsize>(scene.name.size()));
  for (std::uint64_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) put<double>(out, scene.positions(static_cast<Eigen::Index>(i), a));
  }
  for (std::uint64_t i = 0; i < n; ++i) {
    for (std::uint32_t a = 0; a < c; ++a) put<double>(out, scene.features(static_cast<Eigen::Index>(i), a));
  }
  for (const auto& lab : scene.labels) {
    for (int l : lab) put<std::int32_t>(out, l);
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Scene read_scene(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open scene file '" + path.string() + "'");
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError("'" + path.string() + "' is not a scene file");
  const auto levels = get<std::uint32_t>(in, path);
  const auto c = get<std::uint32_t>(in, path);
  const auto n = get<std::uint64_t>(in, path);
  const auto name_len = get<std::uint32_t>(in, path);
  if (levels > 64 || c > 4096 || name_len > 4096) throw IoError("corrupt scene header in '" + path.string() + "'");
  Scene s;
  s.name.resize(name_len);
  in.read(s.name.data(), name_len);
  const auto rows = static_cast<Eigen::Index>(n);
  s.positions.resize(rows, 3);
  s.features.resize(rows, c);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (int a = 0; a < 3; ++a) s.positions(i, a) = get<double>(in, path);
  }
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index a = 0; a < static_cast<Eigen::Index>(c); ++a) s.features(i, a) = get<double>(in, path);
  }
  s.labels.resize(levels);
  for (auto& lab : s.labels) {
    lab.resize(static_cast<std::size_t>(n));
    for (auto& l : lab) l = get<std::int32_t>(in, path);
  }
  return s;
}

namespace {

nlohmann::json read_manifest(const std::filesystem::path& manifest) {
  try {
    auto j = nlohmann::json::parse(read_text_file(manifest));
    if (j.value("format", "") != "ld3dhs-dataset") throw IoError("'" + manifest.string() + "' is not a dataset manifest");
    if (!j.contains("taxonomy") || !j.contains("scenes")) throw IoError("manifest lacks taxonomy or scenes");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest '" + manifest.string() + "': " + e.what());
  }
}

}  // namespace

std::vector<std::filesystem::path> dataset_files(const std::filesystem::path& manifest) {
  const auto j = read_manifest(manifest);
  const auto dir = manifest.parent_path();
  std::vector<std::filesystem::path> files{dir / j["taxonomy"].get<std::string>()};
  for (const auto& s : j["scenes"]) files.push_back(dir / s.get<std::string>());
  return files;
}

Dataset load_dataset(const std::filesystem::path& manifest) {
  const auto files = dataset_files(manifest);
  Dataset d;
  d.manifest_path = manifest;
  d.taxonomy = load_taxonomy(files.front());
  for (std::size_t i = 1; i < files.size(); ++i) {
    d.scenes.push_back(read_scene(files[i]));
    try {
      validate_scene(d.scenes.back(), d.taxonomy);
    } catch (const std::invalid_argument& e) {
      throw IoError("'" + files[i].string() + "': " + e.what());
    }
  }
  if (d.scenes.empty()) throw IoError("dataset '" + manifest.string() + "' lists no scenes");
  return d;
}

}  // namespace ld3dhs

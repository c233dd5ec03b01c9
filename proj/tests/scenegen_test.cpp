#include "ld3dhs/errors.hpp"
#include "ld3dhs/scene.hpp"
#include "ld3dhs/scene_io.hpp"
#include "support.hpp"

#include <doctest.h>

#include <fstream>
#include <random>

using namespace ld3dhs;
using namespace ld3dhs::testing;

namespace {

HierarchySpec two_by_four() {
  return HierarchySpec("small", {"coarse", "fine"}, {{"p", "q"}, {"a", "b", "c", "d"}}, {{}, {0, 0, 1, 1}});
}

bool bitwise_equal(const Scene& a, const Scene& b) {
  return a.positions == b.positions && a.features == b.features && a.labels == b.labels;
}

}  // namespace

TEST_CASE("uniform profile: every fine frequency within [0.20, 0.30] at n=1000") {
  const HierarchySpec spec = two_by_four();
  const Scene s = generate_scene(spec, ImbalanceProfile::uniform(4, 7), 1000, 7);
  const auto f = class_frequencies(s, 1, 4);
  for (double v : f) {
    CHECK(v >= 0.20);
    CHECK(v <= 0.30);
  }
}

TEST_CASE("profile validation") {
  const HierarchySpec spec = two_by_four();
  ImbalanceProfile p;
  p.fine_frequencies = {1.0, 0.0, 0.0, 0.0};
  CHECK_THROWS_WITH_AS(p.validate(spec), "every frequency must be > 0", std::invalid_argument);
  p.fine_frequencies = {0.5, 0.5};
  CHECK_THROWS_AS(p.validate(spec), std::invalid_argument);
  p.fine_frequencies = {0.3, 0.3, 0.3, 0.3};
  CHECK_THROWS_AS(p.validate(spec), std::invalid_argument);
  CHECK_THROWS_AS(generate_scene(spec, ImbalanceProfile::uniform(4, 0), 3, 0), std::invalid_argument);
}

TEST_CASE("power-law profile is normalized and decreasing; coarse frequencies aggregate it") {
  const HierarchySpec spec = desk_taxonomy();
  const ImbalanceProfile p = ImbalanceProfile::power_law(10, 2.0, 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.fine_frequencies.size(); ++i) {
    sum += p.fine_frequencies[i];
    if (i > 0) CHECK(p.fine_frequencies[i] < p.fine_frequencies[i - 1]);
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  const auto coarse = p.level_frequencies(spec, 0);
  CHECK(coarse[0] == doctest::Approx(p.fine_frequencies[0] + p.fine_frequencies[1] + p.fine_frequencies[2]));
}

TEST_CASE("generated scenes are hierarchy-consistent, valid, and cover every fine class") {
  for (const HierarchySpec& spec : {desk_taxonomy(), three_level_taxonomy()}) {
    const int fine = spec.num_levels() - 1;
    const int k = spec.num_classes(fine);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Scene s = generate_scene(spec, ImbalanceProfile::power_law(k, 2.5, seed), 300, seed);
      CHECK_NOTHROW(validate_scene(s, spec));
      for (int h = 1; h <= fine; ++h) {
        CHECK(consistency_rate(s.labels[h], s.labels[h - 1], build_mapping(spec, h)) == 1.0);
      }
      for (double f : class_frequencies(s, fine, k)) CHECK(f > 0.0);
    }
  }
}

TEST_CASE("generation is a pure function of its inputs") {
  const HierarchySpec spec = desk_taxonomy();
  const auto profile = ImbalanceProfile::power_law(10, 2.0, 3);
  CHECK(bitwise_equal(generate_scene(spec, profile, 512, 9), generate_scene(spec, profile, 512, 9)));
  CHECK_FALSE(bitwise_equal(generate_scene(spec, profile, 512, 9), generate_scene(spec, profile, 512, 10)));
}

TEST_CASE("fine classes occupy distinct regions that persist across scenes sharing a layout") {
  const HierarchySpec spec = desk_taxonomy();
  const auto profile = ImbalanceProfile::uniform(10, 4);
  const Scene a = generate_scene(spec, profile, 5000, 1);
  const Scene b = generate_scene(spec, profile, 5000, 2);
  // Class centroids move by at most the per-scene placement jitter plus sampling noise.
  for (int c = 0; c < 10; ++c) {
    Eigen::Vector3d ca = Eigen::Vector3d::Zero(), cb = Eigen::Vector3d::Zero();
    int na = 0, nb = 0;
    for (Eigen::Index i = 0; i < a.num_points(); ++i) {
      if (a.labels[1][i] == c) ca += a.positions.row(i).transpose(), ++na;
      if (b.labels[1][i] == c) cb += b.positions.row(i).transpose(), ++nb;
    }
    CHECK((ca / na - cb / nb).norm() < 0.5);
  }
}

TEST_CASE("augment: identity parameters leave the scene unchanged") {
  const Scene s = generate_scene(desk_taxonomy(), ImbalanceProfile::uniform(10, 0), 200, 5);
  CHECK(bitwise_equal(augment(s, 3, AugmentParams::identity()), s));
}

TEST_CASE("augment: a single scale factor in [0.9, 1.1] for all pairwise distances") {
  const Scene s = generate_scene(desk_taxonomy(), ImbalanceProfile::uniform(10, 0), 200, 5);
  AugmentParams p;
  p.jitter_sigma = 0.0;
  p.color_drop_prob = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene t = augment(s, seed, p);
    const double ratio = (t.positions.row(7) - t.positions.row(100)).norm() / (s.positions.row(7) - s.positions.row(100)).norm();
    CHECK(ratio >= 0.9);
    CHECK(ratio <= 1.1);
    for (int i = 0; i < 50; ++i) {
      const double r = (t.positions.row(i) - t.positions.row(i + 50)).norm() / (s.positions.row(i) - s.positions.row(i + 50)).norm();
      CHECK(r == doctest::Approx(ratio).epsilon(1e-12));
    }
  }
}

TEST_CASE("augment: deterministic, label-preserving, and drops colors per scene") {
  const Scene s = generate_scene(desk_taxonomy(), ImbalanceProfile::uniform(10, 0), 200, 5);
  CHECK(bitwise_equal(augment(s, 11), augment(s, 11)));
  int dropped = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Scene t = augment(s, seed);
    CHECK(t.labels == s.labels);
    CHECK(t.num_points() == s.num_points());
    if (t.features.isZero(0.0)) ++dropped;
    else CHECK(t.features == s.features);
  }
  CHECK(dropped > 20);  // p = 0.2 over 200 draws
  CHECK(dropped < 60);
}

TEST_CASE("class_frequencies: direct counts and histogram oracle") {
  Scene s;
  s.positions = Eigen::MatrixXd::Zero(4, 3);
  s.features = Eigen::MatrixXd::Zero(4, 0);
  s.labels = {{0, 0, 1, 2}};
  CHECK(class_frequencies(s, 0, 3) == std::vector<double>{0.5, 0.25, 0.25});
  s.labels = {{1, 1, 1, 1}};
  CHECK(class_frequencies(s, 0, 3) == std::vector<double>{0.0, 1.0, 0.0});

  std::mt19937_64 rng(1);
  const auto labels = random_labels(777, 6, rng);
  s.positions = Eigen::MatrixXd::Zero(777, 3);
  s.features = Eigen::MatrixXd::Zero(777, 0);
  s.labels = {labels};
  std::vector<int> hist(6, 0);
  for (int l : labels) ++hist[l];
  const auto f = class_frequencies(s, 0, 6);
  for (int c = 0; c < 6; ++c) CHECK(f[c] == doctest::Approx(hist[c] / 777.0).epsilon(1e-15));
}

TEST_CASE("make_batch concatenates scenes and records offsets") {
  const HierarchySpec spec = desk_taxonomy();
  const auto scenes = make_scenes(spec, ImbalanceProfile::uniform(10, 0), 3, 50, 1);
  std::vector<const Scene*> ptrs{&scenes[0], &scenes[1], &scenes[2]};
  const Batch b = make_batch(ptrs);
  CHECK(b.num_points() == 150);
  CHECK(b.offsets == std::vector<Eigen::Index>{0, 50, 100, 150});
  CHECK(b.inputs.cols() == 6);
  CHECK(b.inputs.block(50, 0, 50, 3) == scenes[1].positions);
  CHECK(b.inputs.block(100, 3, 50, 3) == scenes[2].features);
  CHECK(b.labels[1][120] == scenes[2].labels[1][20]);
}

TEST_CASE("scene files round-trip bit-exactly; corrupt files raise IoError") {
  const auto dir = scratch_dir("scene_io");
  Scene s = generate_scene(desk_taxonomy(), ImbalanceProfile::power_law(10, 2.0, 2), 333, 4);
  s.name = "roundtrip";
  write_scene(s, dir / "a.scn");
  const Scene t = read_scene(dir / "a.scn");
  CHECK(t.name == "roundtrip");
  CHECK(bitwise_equal(s, t));

  std::ofstream(dir / "bad.scn") << "not a scene";
  CHECK_THROWS_AS(read_scene(dir / "bad.scn"), IoError);
  CHECK_THROWS_AS(read_scene(dir / "missing.scn"), IoError);

  std::string bytes;
  {
    std::ifstream in(dir / "a.scn", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  std::ofstream(dir / "short.scn", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(read_scene(dir / "short.scn"), IoError);
}

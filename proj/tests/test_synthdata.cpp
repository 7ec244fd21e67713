#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "jitterlab/dataset_io.hpp"
#include "jitterlab/synthdata.hpp"

namespace fs = std::filesystem;

namespace jitterlab {
namespace {

fs::path temp_dir(const std::string& tag) {
  auto d = fs::temp_directory_path() / ("jitterlab_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

DomainSpec no_shift() {
  DomainSpec d;
  d.sensor_noise_variance = 0.0;
  return d;
}

TEST(Render, CentredGazeIsMirrorSymmetric) {
  SceneParams p;
  p.gaze = {0.0, 0.0};
  const auto img = render_eye(p, no_shift());
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 16; ++x) EXPECT_NEAR(img.at(x, y), img.at(31 - x, y), 1e-6);
}

TEST(Render, IrisFollowsYaw) {
  SceneParams left, right;
  left.gaze = {0.0, -0.3};
  right.gaze = {0.0, 0.3};
  auto dark_centroid = [](const Image& img) {
    double sx = 0, w = 0;
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) {
        const double d = std::max(0.0, 0.5 - img.at(x, y));
        sx += d * x;
        w += d;
      }
    return sx / w;
  };
  EXPECT_LT(dark_centroid(render_eye(left, no_shift())), dark_centroid(render_eye(right, no_shift())));
}

TEST(Render, DeterministicForSameSeed) {
  SceneParams p;
  p.gaze = {0.1, 0.2};
  p.seed = 77;
  EXPECT_EQ(render_eye(p, DomainSpec::target()), render_eye(p, DomainSpec::target()));
}

TEST(Render, GratingAddsHighFrequencyEnergy) {
  auto hfc = no_shift();
  hfc.domain = Domain::target;
  hfc.hfc_amplitude = 0.1;
  hfc.hfc_frequency = 12;
  for (double pitch : {-0.3, 0.0, 0.2}) {
    for (double yaw : {-0.4, -0.1, 0.3}) {
      SceneParams p;
      p.gaze = {pitch, yaw};
      const double clean = spectral_energy(render_eye(p, no_shift()), 8.0 / 32.0);
      const double shifted = spectral_energy(render_eye(p, hfc), 8.0 / 32.0);
      EXPECT_GE(shifted, 10 * clean) << pitch << " " << yaw;
    }
  }
}

TEST(Render, RejectsInvalidScenes) {
  SceneParams p;
  p.gaze = {0.0, 1.5};  // iris would leave the eye
  EXPECT_THROW(render_eye(p, no_shift()), DomainError);
  p.gaze = {0.0, 0.0};
  p.eyelid_openness = 0.0;
  EXPECT_THROW(render_eye(p, no_shift()), DomainError);
  DomainSpec bad;
  bad.hfc_amplitude = 0.1;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Generate, DuplicateGroupsSatisfyGates) {
  for (const auto& spec : {DomainSpec::source(), DomainSpec::target()}) {
    const auto ds = generate_dataset(200, spec, 60, 3);
    ASSERT_EQ(ds.size(), 200u);
    const auto c = check_groups(ds);
    EXPECT_LT(c.max_label_angle_deg, 1.0);
    EXPECT_GT(c.min_ssim, 0.75);
    EXPECT_EQ(ds.group_ids[0], 0);
    EXPECT_EQ(ds.group_ids[179], 59);
    EXPECT_EQ(ds.group_ids[180], kNoGroup);
  }
}

TEST(Generate, LabelsInsideSamplingBox) {
  const auto ds = generate_dataset(500, DomainSpec::source(), 0, 4);
  for (const auto& l : ds.labels) {
    EXPECT_LE(std::abs(rad_to_deg(l.pitch)), 20.0 + 1e-9);
    EXPECT_LE(std::abs(rad_to_deg(l.yaw)), 30.0 + 1e-9);
  }
}

TEST(Generate, GazeMeanNearZero) {
  const auto ds = generate_dataset(10000, DomainSpec::source(), 0, 5);
  double p = 0, y = 0;
  for (const auto& l : ds.labels) {
    p += rad_to_deg(l.pitch) / ds.size();
    y += rad_to_deg(l.yaw) / ds.size();
  }
  EXPECT_LT(std::abs(p), 1.0);
  EXPECT_LT(std::abs(y), 1.0);
}

TEST(Generate, ManifestHashIsStable) {
  const auto a = generate_dataset(1000, DomainSpec::target(), 20, 6);
  const auto b = generate_dataset(1000, DomainSpec::target(), 20, 6);
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < a.size(); ++i) paths.push_back(image_filename(i));
  EXPECT_EQ(fnv1a(manifest_text(a, paths)), fnv1a(manifest_text(b, paths)));
  EXPECT_EQ(a.images, b.images);
}

TEST(Generate, InvalidCounts) {
  EXPECT_THROW(generate_dataset(0, DomainSpec::source(), 0, 1), ConfigError);
  EXPECT_THROW(generate_dataset(5, DomainSpec::source(), 2, 1), ConfigError);
}

TEST(DatasetIo, RoundTripIsExact) {
  const auto dir = temp_dir("ds");
  const auto ds = generate_dataset(30, DomainSpec::target(), 5, 7);
  const auto manifest = save_dataset(dir, ds);
  const auto back = load_dataset(manifest);
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.images, ds.images);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_NEAR(back.labels[i].pitch, ds.labels[i].pitch, 1e-12);
    EXPECT_NEAR(back.labels[i].yaw, ds.labels[i].yaw, 1e-12);
  }
  EXPECT_EQ(back.group_ids, ds.group_ids);
  EXPECT_EQ(back.seeds, ds.seeds);
  EXPECT_EQ(back.domains, ds.domains);
  const auto text = read_file(manifest);
  EXPECT_EQ(text.substr(0, text.find('\n')), kManifestHeader);
  fs::remove_all(dir);
}

TEST(DatasetIo, MissingImageNamesThePath) {
  const auto dir = temp_dir("missing");
  save_dataset(dir, generate_dataset(3, DomainSpec::source(), 0, 8));
  fs::remove(dir / image_filename(1));
  try {
    load_dataset(dir / "manifest.csv");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(image_filename(1)), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(DatasetIo, MalformedManifests) {
  const auto dir = temp_dir("bad");
  save_dataset(dir, generate_dataset(2, DomainSpec::source(), 0, 9));
  auto write = [&](const std::string& text) { std::ofstream(dir / "m.csv") << text; };
  const std::string h = std::string(kManifestHeader) + "\n";
  write(h + "img_000000.png,2.5,0.1,source,-1,1\n");
  EXPECT_THROW(load_dataset(dir / "m.csv"), DomainError);
  write(h + "img_000000.png,abc,0.1,source,-1,1\n");
  EXPECT_THROW(load_dataset(dir / "m.csv"), ParseError);
  write(h + "img_000000.png,0.1,0.1,source\n");
  EXPECT_THROW(load_dataset(dir / "m.csv"), ParseError);
  write("path,pitch\n");
  EXPECT_THROW(load_dataset(dir / "m.csv"), ParseError);
  std::ofstream(dir / "junk.png") << "not a png";
  write(h + "junk.png,0.1,0.1,source,-1,1\n");
  EXPECT_THROW(load_dataset(dir / "m.csv"), ParseError);
  EXPECT_THROW(load_dataset(dir / "absent.csv"), IoError);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace jitterlab

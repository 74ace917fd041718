#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>

#include "sphereat/datahub/dataset.hpp"
#include "support.hpp"

using namespace sphereat;

namespace {

using Bytes = std::vector<unsigned char>;

void put32(Bytes& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

// Two 28x28 images: the first has pixel (3,4) = 255, the second pixel (27,27) = 51.
Bytes image_fixture() {
  Bytes b;
  put32(b, 0x00000803);
  put32(b, 2);
  put32(b, 28);
  put32(b, 28);
  Bytes px(2 * 28 * 28, 0);
  px[3 * 28 + 4] = 255;
  px[784 + 27 * 28 + 27] = 51;
  b.insert(b.end(), px.begin(), px.end());
  return b;
}

Bytes label_fixture(std::uint32_t count = 2) {
  Bytes b;
  put32(b, 0x00000801);
  put32(b, count);
  for (std::uint32_t i = 0; i < count; ++i) b.push_back(i == 0 ? 5 : 0);
  return b;
}

std::string parse_error(const Bytes& images, const Bytes& labels) {
  try {
    parse_idx(images, labels);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Idx, HandBuiltFixture) {
  const Dataset d = parse_idx(image_fixture(), label_fixture());
  EXPECT_EQ(d.inputs.shape(), (Shape{2, 28, 28}));
  EXPECT_EQ(d.labels, (Labels{5, 0}));
  EXPECT_EQ(d.inputs[3 * 28 + 4], 1.0);
  EXPECT_EQ(d.inputs[784 + 27 * 28 + 27], 0.2);
  EXPECT_EQ(std::count(d.inputs.storage().begin(), d.inputs.storage().end(), 0.0), 2 * 784 - 2);
}

TEST(Idx, FilesOnDisk) {
  const auto dir = fixtures::temp_dir("idx");
  const Bytes im = image_fixture(), lb = label_fixture();
  std::ofstream(dir / "im", std::ios::binary).write(reinterpret_cast<const char*>(im.data()), im.size());
  std::ofstream(dir / "lb", std::ios::binary).write(reinterpret_cast<const char*>(lb.data()), lb.size());
  EXPECT_EQ(load_idx_images(dir / "im", dir / "lb").labels, (Labels{5, 0}));
  EXPECT_THROW(load_idx_images(dir / "missing", dir / "lb"), ParseError);
}

TEST(Idx, ParseErrors) {
  EXPECT_NE(parse_error({}, label_fixture()).find("offset 0"), std::string::npos);
  const std::string count = parse_error(image_fixture(), label_fixture(3));
  EXPECT_NE(count.find('3'), std::string::npos) << count;
  EXPECT_NE(count.find('2'), std::string::npos) << count;
  Bytes bad = image_fixture();
  bad[3] = 0x01;
  EXPECT_NE(parse_error(bad, label_fixture()).find("magic"), std::string::npos);
  Bytes shortened = image_fixture();
  shortened.resize(shortened.size() - 10);
  EXPECT_NE(parse_error(shortened, label_fixture()).find("truncated"), std::string::npos);
  Bytes big_label = label_fixture();
  big_label[8] = 10;
  EXPECT_NE(parse_error(image_fixture(), big_label).find("offset 8"), std::string::npos);
}

TEST(BundledMnist, SubsetLoadsAndIsBalanced) {
  const Dataset d = load_mnist_dir(SPHEREAT_DATA_DIR "/mnist5k", "test");
  EXPECT_EQ(d.inputs.shape(), (Shape{1000, 28, 28}));
  std::vector<int> counts(10, 0);
  for (int y : d.labels) ++counts[y];
  for (int c : counts) EXPECT_EQ(c, 100);
  EXPECT_NO_THROW(d.validate());
}

TEST(TwoMoons, NoiselessPointsLieOnTheArcs) {
  const Dataset d = make_two_moons(200, 0.0, 4);
  ASSERT_EQ(d.size(), 200u);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double ax = d.inputs.at(i, 0) / kMoonsScale + kMoonsOriginX;
    const double ay = d.inputs.at(i, 1) / kMoonsScale + kMoonsOriginY;
    const double cx = d.labels[i] == 0 ? 0.0 : 1.0, cy = d.labels[i] == 0 ? 0.0 : 0.5;
    EXPECT_NEAR(std::hypot(ax - cx, ay - cy), 1.0, 1e-12);
    if (d.labels[i] == 0) EXPECT_GE(ay, -1e-12);
    else EXPECT_LE(ay, 0.5 + 1e-12);
  }
}

TEST(TwoMoons, BalancedDeterministicAndInRange) {
  const Dataset a = make_two_moons(300, 0.1, 9), b = make_two_moons(300, 0.1, 9);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), 0), 150);
  for (double v : a.inputs.storage()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_NE(make_two_moons(300, 0.1, 10).inputs, a.inputs);
  EXPECT_THROW(make_two_moons(301, 0.1, 9), ContractViolation);
}

TEST(Corruption, ParameterTablesIncreaseWithSeverity) {
  EXPECT_EQ(corruption_parameter(CorruptionKind::gaussian_noise, 1), 0.02);
  EXPECT_EQ(corruption_parameter(CorruptionKind::gaussian_noise, 5), 0.18);
  for (auto k : {CorruptionKind::gaussian_noise, CorruptionKind::brightness, CorruptionKind::contrast,
                 CorruptionKind::pixelate}) {
    for (int s = 1; s < 5; ++s) EXPECT_LT(corruption_parameter(k, s), corruption_parameter(k, s + 1));
    EXPECT_THROW(corruption_parameter(k, 0), ContractViolation);
    EXPECT_THROW(corruption_parameter(k, 6), ContractViolation);
  }
}

TEST(Corruption, BrightnessRaisesTheMeanMonotonically) {
  const Dataset d = load_mnist_dir(SPHEREAT_DATA_DIR "/mnist5k", "test").head(20);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Dataset one = d.head(i + 1).subset({i});
    double prev = -1;
    for (int s = 1; s <= 5; ++s) {
      const Dataset c = corrupt(one, {CorruptionKind::brightness, s}, 1);
      const auto& v = c.inputs.storage();
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      EXPECT_GT(mean, prev);
      prev = mean;
    }
  }
}

TEST(Corruption, DeterministicClampedAndLabelPreserving) {
  const Dataset d = load_mnist_dir(SPHEREAT_DATA_DIR "/mnist5k", "test").head(50);
  for (auto k : {CorruptionKind::gaussian_noise, CorruptionKind::brightness, CorruptionKind::contrast,
                 CorruptionKind::pixelate}) {
    const Dataset a = corrupt(d, {k, 3}, 5), b = corrupt(d, {k, 3}, 5);
    EXPECT_EQ(a.inputs, b.inputs) << to_string(k);
    EXPECT_EQ(a.labels, d.labels);
    EXPECT_NE(a.inputs, d.inputs) << to_string(k);
    for (double v : a.inputs.storage()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
  EXPECT_NE(corrupt(d, {CorruptionKind::gaussian_noise, 3}, 6).inputs,
            corrupt(d, {CorruptionKind::gaussian_noise, 3}, 5).inputs);
  EXPECT_EQ(parse_corruption("pixelate"), CorruptionKind::pixelate);
  EXPECT_THROW(parse_corruption("fog"), ContractViolation);
}

TEST(Batches, UnionIsTheDatasetAndOrderFollowsTheSeed) {
  const Dataset d = make_two_moons(100, 0.1, 1);
  const auto a = batches(d, 32, 7), b = batches(d, 32, 7), c = batches(d, 32, 8);
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a.back().y.size(), 4u);
  std::vector<std::size_t> rows;
  for (const auto& batch : a) {
    rows.insert(rows.end(), batch.rows.begin(), batch.rows.end());
    for (std::size_t i = 0; i < batch.rows.size(); ++i) {
      EXPECT_EQ(batch.y[i], d.labels[batch.rows[i]]);
      EXPECT_EQ(batch.x.at(i, 0), d.inputs.at(batch.rows[i], 0));
    }
  }
  std::vector<std::size_t> sorted = rows;
  std::ranges::sort(sorted);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(sorted[i], i);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].rows, b[k].rows);
  EXPECT_NE(a[0].rows, c[0].rows);

  const auto one = batches(d, 1000, 7);
  ASSERT_EQ(one.size(), 1u);
  std::vector<std::size_t> identity(100);
  std::iota(identity.begin(), identity.end(), 0);
  EXPECT_NE(one[0].rows, identity);
  EXPECT_THROW(batches(d, 0, 1), ContractViolation);
}

TEST(Export, ArchiveRoundTrip) {
  const Dataset d = make_two_moons(20, 0.1, 3);
  const Dataset back = import_dataset(export_dataset(d));
  EXPECT_EQ(back.inputs, d.inputs);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.num_classes, d.num_classes);
  EXPECT_EQ(back.name, d.name);
}

#include "fixtures.hpp"
#include "gradcheck.hpp"

#include "tumordet/dataset.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>

namespace tumordet {
namespace {

namespace fs = std::filesystem;
using testing::ScratchDir;
using testing::tiny_synth;

std::map<std::string, std::string> directory_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  return out;
}

TEST(Synthetic, PureFunctionOfSeed) {
  const SyntheticScan a = generate_scan(true, 42, tiny_synth());
  const SyntheticScan b = generate_scan(true, 42, tiny_synth());
  const SyntheticScan c = generate_scan(true, 43, tiny_synth());
  EXPECT_EQ(a.image.data(), b.image.data());
  ASSERT_EQ(a.gts.size(), 1u);
  EXPECT_EQ(a.gts, b.gts);
  EXPECT_NE(a.image.data(), c.image.data());
}

TEST(Synthetic, DiametersStayInRange) {
  SynthParams p;
  std::uint64_t state = 11;
  for (int i = 0; i < 1000; ++i) {
    const double d = sample_diameter(state, p);
    ASSERT_GE(d, 15.0);
    ASSERT_LE(d, 104.0);
  }
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const SyntheticScan s = generate_scan(true, seed, p);
    ASSERT_EQ(s.gts.size(), 1u);
    const Box& g = s.gts[0];
    const double longer = std::max(g.width(), g.height());
    EXPECT_GE(longer, 15.0 - 1e-9);
    EXPECT_LE(longer, 104.0 + 1e-9);
    EXPECT_GE(g.x1, 0.0);
    EXPECT_GE(g.y1, 0.0);
    EXPECT_LE(g.x2, 256.0);
    EXPECT_LE(g.y2, 256.0);
  }
}

TEST(Synthetic, TumorFreeScansHaveNoBoxes) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SyntheticScan s = generate_scan(false, seed, tiny_synth());
    EXPECT_TRUE(s.gts.empty());
    EXPECT_EQ(s.contrast, 0.0);
  }
}

TEST(Synthetic, ContrastExceedsNoise) {
  const SynthParams p;
  for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_GT(generate_scan(true, seed, p).contrast, p.noise_sigma);
}

TEST(Synthetic, ValuesOnEightBitGrid) {
  const SyntheticScan s = generate_scan(true, 3, tiny_synth());
  EXPECT_EQ(quantize8(s.image).data(), s.image.data());
  EXPECT_GE(s.image.data().minCoeff(), 0.0);
  EXPECT_LE(s.image.data().maxCoeff(), 1.0);
}

TEST(Flip, HandEvaluatedBoxes) {
  const Box b{10, 20, 30, 40};
  EXPECT_EQ(flip_box(b, FlipMode::Horizontal, 256, 256), (Box{226, 20, 246, 40}));
  EXPECT_EQ(flip_box(b, FlipMode::Vertical, 256, 256), (Box{10, 216, 30, 236}));
  EXPECT_EQ(flip_box(b, FlipMode::Diagonal, 256, 256), (Box{20, 10, 40, 30}));
}

TEST(Flip, InvolutionsOnImagesAndBoxes) {
  Rng rng(1);
  const Tensor img = testing::random_tensor({1, 9, 9}, rng);
  const Box b{1.5, 2, 7, 8.25};
  for (FlipMode m : {FlipMode::Horizontal, FlipMode::Vertical, FlipMode::Diagonal, FlipMode::AntiDiagonal}) {
    EXPECT_EQ(flip_image(flip_image(img, m), m).data(), img.data()) << to_string(m);
    EXPECT_EQ(flip_box(flip_box(b, m, 9, 9), m, 9, 9), b) << to_string(m);
    EXPECT_EQ(parse_flip_mode(to_string(m)), m);
  }
  const Tensor t = flip_image(img, FlipMode::Diagonal);
  for (Index y = 0; y < 9; ++y)
    for (Index x = 0; x < 9; ++x) EXPECT_EQ(t.at(0, y, x), img.at(0, x, y));
  EXPECT_THROW(parse_flip_mode("sideways"), std::invalid_argument);
}

TEST(Flip, BoxFollowsPixels) {
  // A bright rectangle must land inside the flipped box.
  Tensor img({1, 16, 16});
  const Box b{2, 3, 6, 10};
  for (Index y = 3; y < 10; ++y)
    for (Index x = 2; x < 6; ++x) img.at(0, y, x) = 1.0;
  for (FlipMode m : {FlipMode::Horizontal, FlipMode::Vertical, FlipMode::Diagonal, FlipMode::AntiDiagonal}) {
    const auto [fi, fb] = augment_flips(img, {b}, m);
    double inside = 0;
    for (Index y = 0; y < 16; ++y)
      for (Index x = 0; x < 16; ++x)
        if (x >= fb[0].x1 && x < fb[0].x2 && y >= fb[0].y1 && y < fb[0].y2) inside += fi.at(0, y, x);
    EXPECT_EQ(inside, fi.data().sum()) << to_string(m);
    EXPECT_EQ(fb[0].area(), b.area());
  }
}

TEST(Flip, TransposeRejectsNonSquare) {
  const Tensor img({1, 4, 6});
  EXPECT_THROW(flip_image(img, FlipMode::Diagonal), std::invalid_argument);
  EXPECT_THROW(flip_image(img, FlipMode::AntiDiagonal), std::invalid_argument);
  EXPECT_NO_THROW(flip_image(img, FlipMode::Horizontal));
}

TEST(Annotations, JsonRoundTrip) {
  const Annotation a{"00012.png", {{1.25, 2.5, 30.125, 41}, {0, 0, 1, 1}}};
  const Annotation b = annotation_from_json(annotation_to_json(a));
  EXPECT_EQ(b.image, a.image);
  EXPECT_EQ(b.boxes, a.boxes);
  const Annotation empty = annotation_from_json(annotation_to_json({"x.png", {}}));
  EXPECT_TRUE(empty.boxes.empty());
  EXPECT_THROW(annotation_from_json("{\"image\": 3}"), DataError);
  EXPECT_THROW(annotation_from_json("not json"), DataError);
}

TEST(Png, RoundTripIsExactOnTheGrid) {
  ScratchDir dir("png");
  Rng rng(2);
  const Tensor img = quantize8(testing::random_tensor({1, 13, 17}, rng, 0, 1));
  write_png(dir.path / "a.png", img);
  const Tensor back = read_png(dir.path / "a.png");
  EXPECT_EQ(back.shape(), img.shape());
  EXPECT_EQ(back.data(), img.data());
  write_file_atomic(dir.path / "bad.png", "not a png");
  EXPECT_THROW(read_png(dir.path / "bad.png"), DataError);
  EXPECT_THROW(read_png(dir.path / "missing.png"), DataError);
}

TEST(Dataset, SameSeedGivesIdenticalBytes) {
  ScratchDir a("ds-a"), b("ds-b"), c("ds-c");
  DatasetSpec spec;
  spec.n_train = 6;
  spec.n_test = 4;
  spec.synth = tiny_synth();
  generate_dataset(a.path, spec);
  generate_dataset(b.path, spec);
  const auto bytes = directory_bytes(a.path);
  EXPECT_EQ(bytes.size(), 6u + 4u + 2u + 1u);
  EXPECT_EQ(bytes, directory_bytes(b.path));
  spec.seed = 8;
  generate_dataset(c.path, spec);
  EXPECT_NE(bytes, directory_bytes(c.path));
}

TEST(Dataset, SplitsAndTumorFraction) {
  ScratchDir dir("ds-split");
  DatasetSpec spec;
  spec.n_train = 8;
  spec.n_test = 4;
  spec.tumor_fraction = 0.5;
  spec.synth = tiny_synth();
  generate_dataset(dir.path, spec);
  const auto train = load_split(dir.path, "train");
  const auto test = load_split(dir.path, "test");
  ASSERT_EQ(train.size(), 8u);
  ASSERT_EQ(test.size(), 4u);
  const auto with_tumor = [](const std::vector<LoadedImage>& v) {
    return std::count_if(v.begin(), v.end(), [](const LoadedImage& i) { return !i.gts.empty(); });
  };
  EXPECT_EQ(with_tumor(train), 4);
  EXPECT_EQ(with_tumor(test), 2);
  for (const auto& tr : train)
    for (const auto& te : test) EXPECT_NE(tr.image.data(), te.image.data());
}

TEST(Dataset, ZeroTumorFractionGivesEmptyAnnotations) {
  ScratchDir dir("ds-empty");
  DatasetSpec spec;
  spec.n_train = 5;
  spec.n_test = 3;
  spec.tumor_fraction = 0;
  spec.synth = tiny_synth();
  generate_dataset(dir.path, spec);
  for (const char* split : {"train", "test"})
    for (const Annotation& a : read_annotations(dir.path / split / "annotations.jsonl")) EXPECT_TRUE(a.boxes.empty());
}

TEST(Dataset, RejectsBadSpecsAndMissingSplits) {
  ScratchDir dir("ds-bad");
  DatasetSpec spec;
  spec.tumor_fraction = 1.5;
  EXPECT_THROW(generate_dataset(dir.path, spec), std::invalid_argument);
  spec.tumor_fraction = 0.5;
  spec.n_test = 0;
  EXPECT_THROW(generate_dataset(dir.path, spec), std::invalid_argument);
  EXPECT_THROW(load_split(dir.path, "train"), DataError);
}

}  // namespace
}  // namespace tumordet

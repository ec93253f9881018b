#pragma once

#include "tumordet/box.hpp"
#include "tumordet/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace tumordet {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit grayscale PNG <-> [1,H,W] tensor with values in [0,1].
void write_png(const std::filesystem::path& path, const Tensor& image);
Tensor read_png(const std::filesystem::path& path);
// Quantizes to the 8-bit grid the PNG stores.
Tensor quantize8(const Tensor& image);

struct SynthParams {
  Index side = 256;
  double background = 0.30;
  double texture_amplitude = 0.06;
  int texture_bumps = 6;
  double noise_sigma = 0.05;
  double contrast_min = 0.22;
  double contrast_max = 0.40;
  double diameter_min = 15.0;
  double diameter_max = 104.0;
  double diameter_mean = 48.0;
  double diameter_sd = 18.0;
  double minor_ratio_min = 0.7;
  int max_distractors = 2;
  double distractor_contrast = 0.035;
};

struct SyntheticScan {
  Tensor image;  // [1,side,side], 8-bit quantized, values in [0,1]
  std::vector<Box> gts;
  std::uint64_t seed = 0;
  double contrast = 0;  // blob peak offset over background; 0 when tumor-free
};

// Background texture and noise plus, when `tumor` is set, one Gaussian-profile
// ellipse whose bounding box is the ground truth. Pure function of its inputs.
SyntheticScan generate_scan(bool tumor, std::uint64_t seed, const SynthParams& params = {});

// Blob diameter (larger bounding-box side): normal(mean, sd) rejected to [min, max].
double sample_diameter(std::uint64_t& state, const SynthParams& params);

std::uint64_t splitmix64(std::uint64_t& state);
double uniform01(std::uint64_t& state);

enum class FlipMode { Horizontal, Vertical, Diagonal, AntiDiagonal };

FlipMode parse_flip_mode(const std::string& name);
std::string to_string(FlipMode mode);

// Mirrors pixels and boxes; Diagonal is the transpose and AntiDiagonal the
// transpose across the other diagonal. Both need square images.
Tensor flip_image(const Tensor& image, FlipMode mode);
Box flip_box(const Box& box, FlipMode mode, double width, double height);
std::pair<Tensor, std::vector<Box>> augment_flips(const Tensor& image, const std::vector<Box>& gts, FlipMode mode);

// One line of a split's annotations.jsonl: {"image": "...", "boxes": [[x1,y1,x2,y2], ...]}.
struct Annotation {
  std::string image;
  std::vector<Box> boxes;
};

std::string annotation_to_json(const Annotation& a);
Annotation annotation_from_json(const std::string& line);
std::vector<Annotation> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, const std::vector<Annotation>& annotations);

struct DatasetSpec {
  int n_train = 200;
  int n_test = 60;
  double tumor_fraction = 0.75;
  std::uint64_t seed = 7;
  SynthParams synth;
};

// Writes <out>/dataset.json and <out>/{train,test}/{NNNNN.png, annotations.jsonl}.
// Each split draws from its own seed stream, so the splits never share an image.
void generate_dataset(const std::filesystem::path& out, const DatasetSpec& spec);

struct LoadedImage {
  std::string id;
  Tensor image;
  std::vector<Box> gts;
};

// Reads <dir>/<split>/annotations.jsonl and every image it lists.
std::vector<LoadedImage> load_split(const std::filesystem::path& dir, const std::string& split);

// Writes through a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace tumordet

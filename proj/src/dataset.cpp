#include "tumordet/dataset.hpp"

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace tumordet {
namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move " + tmp.string() + " into place: " + ec.message());
}

namespace {

void png_append(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

struct PngReadBuffer {
  const std::string* bytes;
  std::size_t offset;
};

void png_consume(png_structp png, png_bytep data, png_size_t length) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->offset + length > buf->bytes->size()) png_error(png, "truncated PNG data");
  std::copy_n(buf->bytes->data() + buf->offset, length, data);
  buf->offset += length;
}

std::string encode_png(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1) throw DataError("PNG export needs a [1,H,W] image");
  const auto h = static_cast<png_uint_32>(image.dim(1)), w = static_cast<png_uint_32>(image.dim(2));
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) throw DataError("libpng initialisation failed");
  std::string out;
  std::vector<png_byte> row(w);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, png_append, nullptr);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 y = 0; y < h; ++y) {
    for (png_uint_32 x = 0; x < w; ++x)
      row[x] = static_cast<png_byte>(std::lround(std::clamp(image.at(0, y, x), 0.0, 1.0) * 255.0));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace

void write_png(const fs::path& path, const Tensor& image) { write_file_atomic(path, encode_png(image)); }

Tensor read_png(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    throw DataError(path.string() + ": not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) throw DataError("libpng initialisation failed");
  PngReadBuffer buf{&bytes, 0};
  Tensor image;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": corrupt PNG");
  }
  png_set_read_fn(png, &buf, png_consume);
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": expected 8-bit grayscale");
  }
  const png_uint_32 w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  image = Tensor({1, static_cast<Index>(h), static_cast<Index>(w)});
  std::vector<png_byte> row(w);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x) image.at(0, y, x) = row[x] / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

Tensor quantize8(const Tensor& image) {
  Tensor out = image;
  for (Index i = 0; i < out.size(); ++i) out[i] = std::lround(std::clamp(out[i], 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double uniform01(std::uint64_t& state) { return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53; }

namespace {

double uniform(std::uint64_t& s, double lo, double hi) { return lo + (hi - lo) * uniform01(s); }

double standard_normal(std::uint64_t& s) {
  const double u1 = 1.0 - uniform01(s);  // (0,1]
  const double u2 = uniform01(s);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void paint_ellipse(Tensor& image, double cx, double cy, double rx, double ry, double contrast) {
  const Index side_h = image.dim(1), side_w = image.dim(2);
  const auto y0 = static_cast<Index>(std::max(0.0, std::floor(cy - ry)));
  const auto y1 = static_cast<Index>(std::min<double>(static_cast<double>(side_h), std::ceil(cy + ry)));
  const auto x0 = static_cast<Index>(std::max(0.0, std::floor(cx - rx)));
  const auto x1 = static_cast<Index>(std::min<double>(static_cast<double>(side_w), std::ceil(cx + rx)));
  for (Index y = y0; y < y1; ++y) {
    for (Index x = x0; x < x1; ++x) {
      const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
      const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
      const double rho2 = dx * dx + dy * dy;
      if (rho2 <= 1.0) image.at(0, y, x) += contrast * std::exp(-rho2);
    }
  }
}

}  // namespace

double sample_diameter(std::uint64_t& state, const SynthParams& p) {
  for (;;) {
    const double d = p.diameter_mean + p.diameter_sd * standard_normal(state);
    if (d >= p.diameter_min && d <= p.diameter_max) return d;
  }
}

SyntheticScan generate_scan(bool tumor, std::uint64_t seed, const SynthParams& p) {
  std::uint64_t s = seed;
  const double side = static_cast<double>(p.side);
  SyntheticScan scan;
  scan.seed = seed;
  scan.image = Tensor::constant({1, p.side, p.side}, p.background);

  for (int b = 0; b < p.texture_bumps; ++b) {
    const double amp = uniform(s, -p.texture_amplitude, p.texture_amplitude);
    const double cx = uniform(s, 0, side), cy = uniform(s, 0, side), sigma = uniform(s, 20, 60);
    for (Index y = 0; y < p.side; ++y)
      for (Index x = 0; x < p.side; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        scan.image.at(0, y, x) += amp * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      }
  }

  const int distractors = static_cast<int>(splitmix64(s) % static_cast<std::uint64_t>(p.max_distractors + 1));
  for (int d = 0; d < distractors; ++d) {
    const double rx = uniform(s, 7.5, 30), ry = uniform(s, 7.5, 30);
    paint_ellipse(scan.image, uniform(s, rx, side - rx), uniform(s, ry, side - ry), rx, ry, p.distractor_contrast);
  }

  if (tumor) {
    const double diameter = sample_diameter(s, p);
    const double minor = diameter * uniform(s, p.minor_ratio_min, 1.0);
    const bool wide = uniform01(s) < 0.5;
    const double rx = (wide ? diameter : minor) / 2, ry = (wide ? minor : diameter) / 2;
    const double margin = 2.0;
    const double cx = uniform(s, rx + margin, side - rx - margin);
    const double cy = uniform(s, ry + margin, side - ry - margin);
    scan.contrast = uniform(s, p.contrast_min, p.contrast_max);
    paint_ellipse(scan.image, cx, cy, rx, ry, scan.contrast);
    scan.gts.push_back({cx - rx, cy - ry, cx + rx, cy + ry});
  }

  for (Index i = 0; i < scan.image.size(); ++i) scan.image[i] += p.noise_sigma * standard_normal(s);
  scan.image = quantize8(scan.image);
  return scan;
}

FlipMode parse_flip_mode(const std::string& name) {
  if (name == "horizontal") return FlipMode::Horizontal;
  if (name == "vertical") return FlipMode::Vertical;
  if (name == "diagonal") return FlipMode::Diagonal;
  if (name == "anti-diagonal") return FlipMode::AntiDiagonal;
  throw std::invalid_argument("unknown flip mode '" + name + "'");
}

std::string to_string(FlipMode mode) {
  switch (mode) {
    case FlipMode::Horizontal: return "horizontal";
    case FlipMode::Vertical: return "vertical";
    case FlipMode::Diagonal: return "diagonal";
    case FlipMode::AntiDiagonal: return "anti-diagonal";
  }
  return "?";
}

Tensor flip_image(const Tensor& image, FlipMode mode) {
  if (image.rank() != 3) throw ShapeError("flip expects [C,H,W], got " + to_string(image.shape()));
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const bool transposing = mode == FlipMode::Diagonal || mode == FlipMode::AntiDiagonal;
  if (transposing && h != w) throw std::invalid_argument(to_string(mode) + " flip needs a square image");
  Tensor out(image.shape());
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        double v = 0;
        switch (mode) {
          case FlipMode::Horizontal: v = image.at(ch, y, w - 1 - x); break;
          case FlipMode::Vertical: v = image.at(ch, h - 1 - y, x); break;
          case FlipMode::Diagonal: v = image.at(ch, x, y); break;
          case FlipMode::AntiDiagonal: v = image.at(ch, w - 1 - x, h - 1 - y); break;
        }
        out.at(ch, y, x) = v;
      }
  return out;
}

Box flip_box(const Box& b, FlipMode mode, double width, double height) {
  switch (mode) {
    case FlipMode::Horizontal: return {width - b.x2, b.y1, width - b.x1, b.y2};
    case FlipMode::Vertical: return {b.x1, height - b.y2, b.x2, height - b.y1};
    case FlipMode::Diagonal: return {b.y1, b.x1, b.y2, b.x2};
    case FlipMode::AntiDiagonal: return {width - b.y2, height - b.x2, width - b.y1, height - b.x1};
  }
  return b;
}

std::pair<Tensor, std::vector<Box>> augment_flips(const Tensor& image, const std::vector<Box>& gts, FlipMode mode) {
  Tensor flipped = flip_image(image, mode);
  std::vector<Box> boxes;
  for (const Box& b : gts)
    boxes.push_back(flip_box(b, mode, static_cast<double>(image.dim(2)), static_cast<double>(image.dim(1))));
  return {std::move(flipped), std::move(boxes)};
}

std::string annotation_to_json(const Annotation& a) {
  nlohmann::json j;
  j["image"] = a.image;
  j["boxes"] = nlohmann::json::array();
  for (const Box& b : a.boxes) j["boxes"].push_back({b.x1, b.y1, b.x2, b.y2});
  return j.dump();
}

Annotation annotation_from_json(const std::string& line) {
  Annotation a;
  try {
    const auto j = nlohmann::json::parse(line);
    a.image = j.at("image").get<std::string>();
    for (const auto& b : j.at("boxes")) {
      if (b.size() != 4) throw DataError("box must have 4 coordinates");
      a.boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
      if (!a.boxes.back().valid()) throw DataError("box has non-positive extent");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed annotation: ") + e.what());
  }
  return a;
}

std::vector<Annotation> read_annotations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotations " + path.string());
  std::vector<Annotation> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(annotation_from_json(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_annotations(const fs::path& path, const std::vector<Annotation>& annotations) {
  std::string text;
  for (const Annotation& a : annotations) text += annotation_to_json(a) + "\n";
  write_file_atomic(path, text);
}

namespace {

void generate_split(const fs::path& dir, int count, double tumor_fraction, std::uint64_t stream,
                    const SynthParams& synth) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  std::uint64_t s = stream;
  const auto tumors = static_cast<int>(std::lround(count * tumor_fraction));
  std::vector<bool> has_tumor(static_cast<std::size_t>(count), false);
  std::fill_n(has_tumor.begin(), tumors, true);
  for (int i = count - 1; i > 0; --i)  // Fisher-Yates on the split's own stream
    std::swap(has_tumor[static_cast<std::size_t>(i)],
              has_tumor[static_cast<std::size_t>(splitmix64(s) % static_cast<std::uint64_t>(i + 1))]);

  std::vector<Annotation> annotations;
  for (int i = 0; i < count; ++i) {
    const SyntheticScan scan = generate_scan(has_tumor[static_cast<std::size_t>(i)], splitmix64(s), synth);
    char name[32];
    std::snprintf(name, sizeof name, "%05d.png", i);
    write_png(dir / name, scan.image);
    annotations.push_back({name, scan.gts});
  }
  write_annotations(dir / "annotations.jsonl", annotations);
}

}  // namespace

void generate_dataset(const fs::path& out, const DatasetSpec& spec) {
  if (spec.n_train <= 0 || spec.n_test <= 0) throw std::invalid_argument("split sizes must be positive");
  if (spec.tumor_fraction < 0 || spec.tumor_fraction > 1) throw std::invalid_argument("tumor_fraction must be in [0,1]");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create " + out.string() + ": " + ec.message());
  std::uint64_t root = spec.seed;
  const std::uint64_t train_stream = splitmix64(root);
  const std::uint64_t test_stream = splitmix64(root);
  generate_split(out / "train", spec.n_train, spec.tumor_fraction, train_stream, spec.synth);
  generate_split(out / "test", spec.n_test, spec.tumor_fraction, test_stream, spec.synth);

  nlohmann::json manifest;
  manifest["generator"] = "synthetic-ellipse-v1";
  manifest["train"] = spec.n_train;
  manifest["test"] = spec.n_test;
  manifest["tumor_fraction"] = spec.tumor_fraction;
  manifest["seed"] = spec.seed;
  manifest["image_side"] = spec.synth.side;
  manifest["noise_sigma"] = spec.synth.noise_sigma;
  write_file_atomic(out / "dataset.json", manifest.dump(2) + "\n");
}

std::vector<LoadedImage> load_split(const fs::path& dir, const std::string& split) {
  const fs::path split_dir = dir / split;
  std::vector<LoadedImage> out;
  for (const Annotation& a : read_annotations(split_dir / "annotations.jsonl")) {
    try {
      out.push_back({a.image, read_png(split_dir / a.image), a.boxes});
    } catch (const DataError& e) {
      throw DataError("loading " + split + "/" + a.image + ": " + e.what());
    }
  }
  if (out.empty()) throw DataError("split " + split_dir.string() + " has no images");
  return out;
}

}  // namespace tumordet

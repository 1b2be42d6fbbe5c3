#include "modnic/io.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>

#include "modnic/rng.h"

namespace modnic {

namespace {

// Skips whitespace and '#' comments, then reads a decimal integer.
int read_header_int(std::span<const uint8_t> b, size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= b.size() || !std::isdigit(b[pos])) {
    throw FormatError("pnm: malformed header at byte " + std::to_string(pos));
  }
  long value = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    value = value * 10 + (b[pos] - '0');
    if (value > 65535) throw FormatError("pnm: header value too large");
    ++pos;
  }
  return static_cast<int>(value);
}

uint8_t to_byte(double v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

uint64_t mix_seed(uint64_t seed, uint64_t index, uint64_t salt) {
  // splitmix64 finalizer over the combined key
  uint64_t z = seed * 0x9E3779B97F4A7C15ull + index * 0xBF58476D1CE4E5B9ull +
               salt * 0x94D049BB133111EBull + 0x2545F4914F6CDD1Dull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Image blank(int size) {
  Image img;
  img.width = size;
  img.height = size;
  img.channels = 3;
  img.pixels.resize(static_cast<size_t>(size) * size * 3);
  return img;
}

void random_color(Rng& rng, double out[3]) {
  for (int c = 0; c < 3; ++c) out[c] = rng.uniform(0.0, 255.0);
}

Image make_blobs(int size, Rng& rng) {
  Image img = blank(size);
  double bg[3];
  random_color(rng, bg);
  const int count = 3 + static_cast<int>(rng.below(4));
  struct Blob {
    double cx, cy, sigma, color[3];
  };
  std::vector<Blob> blobs(count);
  for (auto& b : blobs) {
    b.cx = rng.uniform(0.0, size);
    b.cy = rng.uniform(0.0, size);
    b.sigma = rng.uniform(size / 10.0, size / 3.0);
    random_color(rng, b.color);
  }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = bg[c];
        for (const auto& b : blobs) {
          const double dx = x - b.cx, dy = y - b.cy;
          const double wgt = std::exp(-(dx * dx + dy * dy) / (2 * b.sigma * b.sigma));
          v += (b.color[c] - v) * wgt;
        }
        img.pixels[(static_cast<size_t>(y) * size + x) * 3 + c] = to_byte(v);
      }
  return img;
}

Image make_gradients(int size, Rng& rng) {
  Image img = blank(size);
  double c0[3], c1[3];
  random_color(rng, c0);
  random_color(rng, c1);
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double lo = std::min(0.0, ct) + std::min(0.0, st);
  const double hi = std::max(0.0, ct) + std::max(0.0, st);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = (x * ct + y * st) / (size - 1);
      const double t = (u - lo) / (hi - lo);
      for (int c = 0; c < 3; ++c) {
        img.pixels[(static_cast<size_t>(y) * size + x) * 3 + c] =
            to_byte(c0[c] + (c1[c] - c0[c]) * t);
      }
    }
  return img;
}

Image make_checker(int size, Rng& rng) {
  Image img = blank(size);
  uint8_t a[3], b[3];
  do {
    for (int c = 0; c < 3; ++c) {
      a[c] = static_cast<uint8_t>(rng.below(256));
      b[c] = static_cast<uint8_t>(rng.below(256));
    }
  } while (std::equal(a, a + 3, b));
  static constexpr int kCells[] = {2, 4, 8};
  const int cell = kCells[rng.below(3)];
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const uint8_t* col = ((x / cell + y / cell) % 2 == 0) ? a : b;
      std::copy(col, col + 3, img.pixels.begin() + (static_cast<size_t>(y) * size + x) * 3);
    }
  return img;
}

Image make_bandnoise(int size, Rng& rng) {
  Image img = blank(size);
  struct Wave {
    double fx, fy, phase, amp;
  };
  for (int c = 0; c < 3; ++c) {
    std::vector<Wave> waves(6);
    for (auto& w : waves) {
      w.fx = rng.uniform(-4.0, 4.0);
      w.fy = rng.uniform(-4.0, 4.0);
      w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      w.amp = rng.uniform(5.0, 25.0);
    }
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double v = 128.0 + rng.uniform(-8.0, 8.0);
        for (const auto& w : waves) {
          v += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) / size + w.phase);
        }
        img.pixels[(static_cast<size_t>(y) * size + x) * 3 + c] = to_byte(v);
      }
  }
  return img;
}

}  // namespace

Image parse_pnm(std::span<const uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) {
    throw FormatError("pnm: expected binary P6 or P5 magic");
  }
  Image img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  size_t pos = 2;
  img.width = read_header_int(bytes, pos);
  img.height = read_header_int(bytes, pos);
  const int maxval = read_header_int(bytes, pos);
  if (img.width < 1 || img.height < 1) throw FormatError("pnm: empty image");
  if (maxval != 255) {
    throw FormatError("pnm: only 8-bit files (maxval 255) are supported");
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw FormatError("pnm: missing separator before raster");
  }
  ++pos;
  const size_t need =
      static_cast<size_t>(img.width) * img.height * img.channels;
  if (bytes.size() - pos < need) {
    throw FormatError("pnm: raster truncated (" +
                      std::to_string(bytes.size() - pos) + " of " +
                      std::to_string(need) + " bytes)");
  }
  img.pixels.assign(bytes.begin() + pos, bytes.begin() + pos + need);
  return img;
}

std::vector<uint8_t> serialize_pnm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw FormatError("pnm: channels must be 1 or 3");
  }
  const std::string header = std::string(image.channels == 3 ? "P6" : "P5") +
                             "\n" + std::to_string(image.width) + " " +
                             std::to_string(image.height) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

Image read_pnm(const std::filesystem::path& path) {
  return parse_pnm(read_file(path));
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
  write_file(path, serialize_pnm(image));
}

Tensor image_to_tensor(const Image& image) {
  const size_t plane = static_cast<size_t>(image.width) * image.height;
  std::vector<double> v(plane * 3);
  for (int c = 0; c < 3; ++c) {
    const int src = image.channels == 3 ? c : 0;
    for (size_t i = 0; i < plane; ++i) {
      v[c * plane + i] = image.pixels[i * image.channels + src] / 255.0;
    }
  }
  return Tensor({1, 3, image.height, image.width}, std::move(v));
}

Image tensor_to_image(const Tensor& x) {
  if (x.rank() != 4 || x.dim(0) != 1 || (x.dim(1) != 3 && x.dim(1) != 1)) {
    throw std::invalid_argument("tensor_to_image: expected [1,3,H,W] or [1,1,H,W]");
  }
  Image img;
  img.channels = x.dim(1);
  img.height = x.dim(2);
  img.width = x.dim(3);
  const size_t plane = static_cast<size_t>(img.width) * img.height;
  img.pixels.resize(plane * img.channels);
  const auto v = x.values();
  for (int c = 0; c < img.channels; ++c)
    for (size_t i = 0; i < plane; ++i) {
      img.pixels[i * img.channels + c] = to_byte(v[c * plane + i] * 255.0);
    }
  return img;
}

Tensor pad_to_multiple(const Tensor& x, int multiple) {
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ph = (h + multiple - 1) / multiple * multiple;
  const int pw = (w + multiple - 1) / multiple * multiple;
  if (ph == h && pw == w) return x;
  std::vector<double> out(static_cast<size_t>(b) * c * ph * pw);
  const auto v = x.values();
  for (int bc = 0; bc < b * c; ++bc)
    for (int r = 0; r < ph; ++r)
      for (int col = 0; col < pw; ++col) {
        out[(static_cast<size_t>(bc) * ph + r) * pw + col] =
            v[(static_cast<size_t>(bc) * h + std::min(r, h - 1)) * w +
              std::min(col, w - 1)];
      }
  return Tensor({b, c, ph, pw}, std::move(out));
}

Tensor crop(const Tensor& x, int height, int width) {
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (height > h || width > w) throw std::invalid_argument("crop: larger than input");
  if (height == h && width == w) return x;
  std::vector<double> out(static_cast<size_t>(b) * c * height * width);
  const auto v = x.values();
  for (int bc = 0; bc < b * c; ++bc)
    for (int r = 0; r < height; ++r)
      for (int col = 0; col < width; ++col) {
        out[(static_cast<size_t>(bc) * height + r) * width + col] =
            v[(static_cast<size_t>(bc) * h + r) * w + col];
      }
  return Tensor({b, c, height, width}, std::move(out));
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw std::invalid_argument("stack_batch: empty batch");
  Shape s = items[0].shape();
  if (s.size() != 4 || s[0] != 1) {
    throw std::invalid_argument("stack_batch: items must be [1,C,H,W]");
  }
  std::vector<double> out;
  out.reserve(items[0].numel() * items.size());
  for (const auto& t : items) {
    if (t.shape() != s) throw std::invalid_argument("stack_batch: shape mismatch");
    out.insert(out.end(), t.values().begin(), t.values().end());
  }
  s[0] = static_cast<int>(items.size());
  return Tensor(s, std::move(out));
}

SyntheticKind parse_synthetic_kind(std::string_view name) {
  if (name == "blobs") return SyntheticKind::kBlobs;
  if (name == "gradients") return SyntheticKind::kGradients;
  if (name == "checker") return SyntheticKind::kChecker;
  if (name == "bandnoise") return SyntheticKind::kBandNoise;
  throw std::invalid_argument("unknown synthetic kind '" + std::string(name) +
                              "' (blobs, gradients, checker, bandnoise)");
}

std::string_view synthetic_kind_name(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::kBlobs: return "blobs";
    case SyntheticKind::kGradients: return "gradients";
    case SyntheticKind::kChecker: return "checker";
    case SyntheticKind::kBandNoise: return "bandnoise";
  }
  return "unknown";
}

Image generate_image(SyntheticKind kind, int size, uint64_t seed,
                     uint64_t index) {
  if (size < 16 || size % 16 != 0) {
    throw std::invalid_argument("gen_data: size must be a positive multiple of 16");
  }
  Rng rng(mix_seed(seed, index, static_cast<uint64_t>(kind)));
  switch (kind) {
    case SyntheticKind::kBlobs: return make_blobs(size, rng);
    case SyntheticKind::kGradients: return make_gradients(size, rng);
    case SyntheticKind::kChecker: return make_checker(size, rng);
    case SyntheticKind::kBandNoise: return make_bandnoise(size, rng);
  }
  throw std::logic_error("generate_image: bad kind");
}

std::vector<std::filesystem::path> gen_data(SyntheticKind kind, int count,
                                            int size, uint64_t seed,
                                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (int i = 0; i < count; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%05d.ppm",
                  std::string(synthetic_kind_name(kind)).c_str(), i);
    paths.push_back(dir / name);
    write_pnm(paths.back(), generate_image(kind, size, seed, i));
  }
  return paths;
}

std::vector<Tensor> synthetic_dataset(int count, int size, uint64_t seed) {
  static constexpr SyntheticKind kKinds[] = {
      SyntheticKind::kBlobs, SyntheticKind::kGradients, SyntheticKind::kChecker,
      SyntheticKind::kBandNoise};
  std::vector<Tensor> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    out.push_back(image_to_tensor(generate_image(kKinds[i % 4], size, seed, i)));
  }
  return out;
}

std::vector<std::filesystem::path> list_images(
    const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                              std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path,
                std::span<const uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace modnic

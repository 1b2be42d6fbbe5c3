// Image files, synthetic datasets and small file helpers.

#ifndef MODNIC_IO_H_
#define MODNIC_IO_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "modnic/tensor.h"

namespace modnic {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit image, interleaved samples, 1 (PGM) or 3 (PPM) channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<uint8_t> pixels;

  friend bool operator==(const Image&, const Image&) = default;
};

Image parse_pnm(std::span<const uint8_t> bytes);
std::vector<uint8_t> serialize_pnm(const Image& image);
Image read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image& image);

// [1,3,H,W] in [0,1]; grayscale input is replicated over the three channels.
Tensor image_to_tensor(const Image& image);
// Clamps to [0,1], scales by 255 and rounds half away from zero.
Image tensor_to_image(const Tensor& x);

// Edge-replicates [B,C,H,W] to the next multiple of `multiple` and crops back.
Tensor pad_to_multiple(const Tensor& x, int multiple);
Tensor crop(const Tensor& x, int height, int width);

// Stacks [1,C,H,W] tensors of one shape into [B,C,H,W].
Tensor stack_batch(std::span<const Tensor> items);

enum class SyntheticKind { kBlobs, kGradients, kChecker, kBandNoise };

SyntheticKind parse_synthetic_kind(std::string_view name);
std::string_view synthetic_kind_name(SyntheticKind kind);

// Deterministic RGB image; `index` selects the image within a seeded set.
Image generate_image(SyntheticKind kind, int size, uint64_t seed,
                     uint64_t index);

// Writes count images named <kind>_<index>.ppm and returns their paths.
std::vector<std::filesystem::path> gen_data(SyntheticKind kind, int count,
                                            int size, uint64_t seed,
                                            const std::filesystem::path& dir);

// Mixed-kind in-memory dataset (kinds cycle with the index).
std::vector<Tensor> synthetic_dataset(int count, int size, uint64_t seed);

// All *.ppm / *.pgm files in a directory, sorted by name.
std::vector<std::filesystem::path> list_images(
    const std::filesystem::path& dir);

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                std::span<const uint8_t> bytes);

}  // namespace modnic

#endif  // MODNIC_IO_H_

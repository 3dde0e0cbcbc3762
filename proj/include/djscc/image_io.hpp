#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "djscc/tensor.hpp"

namespace djscc {

/// Images as [N, 3, H, W] with pixels in [0, 1], plus one provenance label per image.
struct ImageBatch {
  Tensor images;
  std::vector<std::string> labels;

  std::size_t size() const { return images.rank() == 4 ? images.dim(0) : 0; }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  // Copy of the images at the given indices, in order.
  Tensor gather(const std::vector<std::size_t>& indices) const;
  ImageBatch slice(std::size_t begin, std::size_t end) const;
};

/// Decodes an 8-bit PNG (gray, RGB, palette, with or without alpha;
/// non-interlaced) or a binary PPM (P6, maxval 255) into a one-image batch.
ImageBatch load_image(const std::filesystem::path& path);
ImageBatch decode_png(const std::vector<std::uint8_t>& bytes, const std::string& label = "png");
ImageBatch decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& label = "ppm");

/// Writes [3,H,W] or [1,3,H,W] as an 8-bit RGB PNG. Values are quantized with
/// round(255 x) after clamping to [0, 1].
void save_image(const Tensor& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Tensor& image);
std::vector<std::uint8_t> encode_ppm(const Tensor& image);

/// Every size x size window on a stride grid, image by image.
ImageBatch extract_patches(const ImageBatch& src, std::size_t size, std::size_t stride, std::size_t multiple = 4);
/// count seeded uniform crops drawn across the source images.
ImageBatch extract_random_patches(const ImageBatch& src, std::size_t size, std::size_t count, std::uint64_t seed,
                                  std::size_t multiple = 4);

/// Procedural textures: a color ramp, gaussian blobs and a sinusoid grating,
/// clamped to [0, 1]. Image i depends only on (seed, i).
ImageBatch synth_dataset(std::size_t n, std::size_t size, std::uint64_t seed);

/// Sorted *.png / *.ppm files of a directory, cropped into grid patches.
ImageBatch load_directory_patches(const std::filesystem::path& dir, std::size_t size);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace djscc

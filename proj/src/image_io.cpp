#include "djscc/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "djscc/error.hpp"
#include "djscc/rng.hpp"

namespace djscc {

Tensor ImageBatch::gather(const std::vector<std::size_t>& indices) const {
  const std::size_t per = images.numel() / images.dim(0);
  Tensor out({indices.size(), images.dim(1), images.dim(2), images.dim(3)});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(images.data().begin() + indices[i] * per, per, out.data().begin() + i * per);
  }
  return out;
}

ImageBatch ImageBatch::slice(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
  return {gather(idx), std::vector<std::string>(labels.begin() + begin, labels.begin() + end)};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

namespace {

constexpr std::array<std::uint8_t, 8> kPngSignature{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> inflate_all(const std::vector<std::uint8_t>& in, std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw IoError("zlib inflateInit failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const std::size_t produced = zs.total_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != expected) {
    throw IoError("PNG image data is corrupt or truncated (inflated " + std::to_string(produced) + " of " +
                  std::to_string(expected) + " bytes)");
  }
  return out;
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

ImageBatch decode_png(const std::vector<std::uint8_t>& b, const std::string& label) {
  if (b.size() < 8 || !std::equal(kPngSignature.begin(), kPngSignature.end(), b.begin())) {
    throw IoError("not a PNG file (bad signature at offset 0)");
  }
  std::size_t off = 8;
  std::uint32_t width = 0, height = 0;
  int depth = 0, color = -1, interlace = 0;
  std::vector<std::uint8_t> palette, idat;
  bool seen_end = false;
  while (!seen_end) {
    if (off + 12 > b.size()) throw IoError("truncated PNG chunk header at offset " + std::to_string(off));
    const std::uint32_t len = read_be32(b, off);
    const std::string type(reinterpret_cast<const char*>(&b[off + 4]), 4);
    if (off + 12 + static_cast<std::size_t>(len) > b.size()) {
      throw IoError("truncated PNG chunk '" + type + "' at offset " + std::to_string(off));
    }
    const std::uint8_t* data = &b[off + 8];
    const std::uint32_t crc = read_be32(b, off + 8 + len);
    if (crc32(crc32(0L, Z_NULL, 0), &b[off + 4], len + 4) != crc) {
      throw IoError("PNG chunk '" + type + "' CRC mismatch at offset " + std::to_string(off));
    }
    if (type == "IHDR") {
      if (len != 13) throw IoError("bad IHDR length at offset " + std::to_string(off));
      width = read_be32(b, off + 8);
      height = read_be32(b, off + 12);
      depth = data[8];
      color = data[9];
      interlace = data[12];
    } else if (type == "PLTE") {
      palette.assign(data, data + len);
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      seen_end = true;
    }
    off += 12 + len;
  }
  if (width == 0 || height == 0) throw IoError("PNG has no IHDR or zero size");
  if (interlace != 0) throw IoError("interlaced PNG is not supported");
  if (depth != 8 && !(depth == 16 && color != 3)) {
    throw IoError("unsupported PNG bit depth " + std::to_string(depth));
  }
  int channels = 0;
  switch (color) {
    case 0: channels = 1; break;
    case 2: channels = 3; break;
    case 3: channels = 1; break;
    case 4: channels = 2; break;
    case 6: channels = 4; break;
    default: throw IoError("unsupported PNG color type " + std::to_string(color));
  }
  if (color == 3 && palette.empty()) throw IoError("palette PNG without PLTE chunk");
  const std::size_t sample_bytes = static_cast<std::size_t>(depth / 8);
  const std::size_t bpp = static_cast<std::size_t>(channels) * sample_bytes;
  const std::size_t stride = width * bpp;
  auto raw = inflate_all(idat, height * (stride + 1));

  std::vector<std::uint8_t> pixels(height * stride);
  for (std::size_t y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* src = &raw[y * (stride + 1) + 1];
    std::uint8_t* row = &pixels[y * stride];
    const std::uint8_t* up = y ? &pixels[(y - 1) * stride] : nullptr;
    for (std::size_t x = 0; x < stride; ++x) {
      const int a = x >= bpp ? row[x - bpp] : 0;
      const int u = up ? up[x] : 0;
      const int c = (up && x >= bpp) ? up[x - bpp] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += u; break;
        case 3: v += (a + u) / 2; break;
        case 4: v += paeth(a, u, c); break;
        default: throw IoError("bad PNG filter type " + std::to_string(filter) + " on row " + std::to_string(y));
      }
      row[x] = static_cast<std::uint8_t>(v & 0xFF);
    }
  }

  Tensor img({1, 3, height, width});
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  const double maxv = depth == 16 ? 65535.0 : 255.0;
  auto sample = [&](std::size_t px, int ch) -> double {
    const std::size_t at = px * bpp + static_cast<std::size_t>(ch) * sample_bytes;
    if (depth == 16) return (pixels[at] << 8 | pixels[at + 1]) / maxv;
    return pixels[at] / maxv;
  };
  for (std::size_t p = 0; p < plane; ++p) {
    for (int ch = 0; ch < 3; ++ch) {
      double v;
      if (color == 3) {
        const std::size_t idx = pixels[p];
        if (3 * idx + 2 >= palette.size()) throw IoError("PNG palette index out of range");
        v = palette[3 * idx + ch] / 255.0;
      } else if (color == 0 || color == 4) {
        v = sample(p, 0);
      } else {
        v = sample(p, ch);
      }
      img[ch * plane + p] = v;
    }
  }
  return {std::move(img), {label}};
}

ImageBatch decode_ppm(const std::vector<std::uint8_t>& b, const std::string& label) {
  std::size_t off = 0;
  auto skip_space = [&]() {
    while (off < b.size()) {
      if (b[off] == '#') {
        while (off < b.size() && b[off] != '\n') ++off;
      } else if (std::isspace(b[off])) {
        ++off;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    if (off >= b.size() || !std::isdigit(b[off])) {
      throw IoError(std::string("PPM header: expected ") + what + " at offset " + std::to_string(off));
    }
    std::size_t v = 0;
    while (off < b.size() && std::isdigit(b[off])) v = v * 10 + (b[off++] - '0');
    return v;
  };
  if (b.size() < 2 || b[0] != 'P' || b[1] != '6') throw IoError("not a binary PPM (expected P6 at offset 0)");
  off = 2;
  const std::size_t w = read_int("width");
  const std::size_t h = read_int("height");
  const std::size_t maxval = read_int("maxval");
  if (w == 0 || h == 0) throw IoError("PPM has zero size");
  if (maxval != 255) throw IoError("unsupported PPM maxval " + std::to_string(maxval) + " (only 255)");
  if (off >= b.size() || !std::isspace(b[off])) throw IoError("PPM header not terminated at offset " + std::to_string(off));
  ++off;
  const std::size_t need = w * h * 3;
  if (b.size() - off < need) {
    throw IoError("truncated PPM pixel data at offset " + std::to_string(b.size()) + " (need " +
                  std::to_string(need) + " bytes from offset " + std::to_string(off) + ")");
  }
  Tensor img({1, 3, h, w});
  const std::size_t plane = w * h;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t ch = 0; ch < 3; ++ch) img[ch * plane + p] = b[off + 3 * p + ch] / 255.0;
  }
  return {std::move(img), {label}};
}

ImageBatch load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() >= 8 && std::equal(kPngSignature.begin(), kPngSignature.end(), bytes.begin())) {
    return decode_png(bytes, path.string());
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes, path.string());
  throw IoError("unsupported image format: " + path.string());
}

namespace {

struct Rgb8 {
  std::size_t h, w;
  std::vector<std::uint8_t> px;  // interleaved RGB
};

Rgb8 quantize(const Tensor& image) {
  const Shape& s = image.shape();
  const bool ok = (s.size() == 3 && s[0] == 3) || (s.size() == 4 && s[0] == 1 && s[1] == 3);
  if (!ok) throw ShapeError("save_image expects [3,H,W] or [1,3,H,W], got " + shape_str(s));
  Rgb8 out{s[s.size() - 2], s[s.size() - 1], {}};
  const std::size_t plane = out.h * out.w;
  out.px.resize(plane * 3);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double v = std::clamp(image[ch * plane + p], 0.0, 1.0);
      out.px[3 * p + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return out;
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  put_be32(out, static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), &out[start], static_cast<uInt>(data.size() + 4))));
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Tensor& image) {
  const Rgb8 q = quantize(image);
  std::vector<std::uint8_t> raw;
  raw.reserve(q.h * (q.w * 3 + 1));
  for (std::size_t y = 0; y < q.h; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), q.px.begin() + y * q.w * 3, q.px.begin() + (y + 1) * q.w * 3);
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw IoError("zlib compression failed");
  }
  z.resize(zlen);

  std::vector<std::uint8_t> out(kPngSignature.begin(), kPngSignature.end());
  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(q.w));
  put_be32(ihdr, static_cast<std::uint32_t>(q.h));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});
  return out;
}

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
  const Rgb8 q = quantize(image);
  const std::string header = "P6\n" + std::to_string(q.w) + " " + std::to_string(q.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), q.px.begin(), q.px.end());
  return out;
}

void save_image(const Tensor& image, const std::filesystem::path& path) { write_file(path, encode_png(image)); }

namespace {

void check_patch_size(const ImageBatch& src, std::size_t size, std::size_t multiple) {
  if (src.size() == 0) throw ShapeError("cannot cut patches from an empty batch");
  if (size == 0 || (multiple && size % multiple != 0)) {
    throw ShapeError("patch size " + std::to_string(size) + " must be a positive multiple of " +
                     std::to_string(multiple));
  }
  if (size > src.height() || size > src.width()) {
    throw ShapeError("patch size " + std::to_string(size) + " exceeds image " + std::to_string(src.height()) + "x" +
                     std::to_string(src.width()));
  }
}

void copy_patch(const ImageBatch& src, std::size_t img, std::size_t y0, std::size_t x0, std::size_t size,
                double* dst) {
  const std::size_t h = src.height(), w = src.width();
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const double* plane = src.images.data().data() + (img * 3 + ch) * h * w;
    for (std::size_t y = 0; y < size; ++y) {
      std::copy_n(plane + (y0 + y) * w + x0, size, dst + (ch * size + y) * size);
    }
  }
}

}  // namespace

ImageBatch extract_patches(const ImageBatch& src, std::size_t size, std::size_t stride, std::size_t multiple) {
  check_patch_size(src, size, multiple);
  if (stride == 0) throw ShapeError("patch stride must be positive");
  struct Origin {
    std::size_t img, y, x;
  };
  std::vector<Origin> origins;
  for (std::size_t i = 0; i < src.size(); ++i) {
    for (std::size_t y = 0; y + size <= src.height(); y += stride) {
      for (std::size_t x = 0; x + size <= src.width(); x += stride) origins.push_back({i, y, x});
    }
  }
  ImageBatch out{Tensor({origins.size(), 3, size, size}), {}};
  for (std::size_t p = 0; p < origins.size(); ++p) {
    const Origin& o = origins[p];
    copy_patch(src, o.img, o.y, o.x, size, out.images.data().data() + p * 3 * size * size);
    out.labels.push_back(src.labels.at(o.img) + "@" + std::to_string(o.y) + "," + std::to_string(o.x));
  }
  return out;
}

ImageBatch extract_random_patches(const ImageBatch& src, std::size_t size, std::size_t count, std::uint64_t seed,
                                  std::size_t multiple) {
  check_patch_size(src, size, multiple);
  if (count == 0) throw ShapeError("random patch count must be positive");
  Rng rng(seed);
  ImageBatch out{Tensor({count, 3, size, size}), {}};
  for (std::size_t p = 0; p < count; ++p) {
    const std::size_t img = rng.uniform_index(src.size());
    const std::size_t y = rng.uniform_index(src.height() - size + 1);
    const std::size_t x = rng.uniform_index(src.width() - size + 1);
    copy_patch(src, img, y, x, size, out.images.data().data() + p * 3 * size * size);
    out.labels.push_back(src.labels.at(img) + "@" + std::to_string(y) + "," + std::to_string(x));
  }
  return out;
}

ImageBatch synth_dataset(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (n == 0 || size == 0) throw ShapeError("synthetic dataset needs n >= 1 and size >= 1");
  ImageBatch out{Tensor({n, 3, size, size}), {}};
  const Rng root(seed);
  const double inv = 1.0 / static_cast<double>(size);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = root.split(i);
    std::array<double, 3> base{}, gx{}, gy{};
    for (int c = 0; c < 3; ++c) {
      base[c] = rng.uniform(0.25, 0.75);
      gx[c] = rng.uniform(-0.4, 0.4);
      gy[c] = rng.uniform(-0.4, 0.4);
    }
    struct Blob {
      double cx, cy, inv2s2;
      std::array<double, 3> amp;
    };
    std::vector<Blob> blobs(2 + rng.uniform_index(3));
    for (Blob& bl : blobs) {
      bl.cx = rng.uniform();
      bl.cy = rng.uniform();
      const double s = rng.uniform(0.06, 0.25);
      bl.inv2s2 = 1.0 / (2.0 * s * s);
      for (double& a : bl.amp) a = rng.uniform(-0.35, 0.35);
    }
    const double freq = rng.uniform(1.0, 6.0);
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::array<double, 3> gamp{};
    for (double& a : gamp) a = rng.uniform(0.0, 0.15);
    const double ca = std::cos(angle), sa = std::sin(angle);

    double* dst = out.images.data().data() + i * 3 * size * size;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double u = (static_cast<double>(x) + 0.5) * inv;
        const double v = (static_cast<double>(y) + 0.5) * inv;
        const double wave = std::sin(2.0 * std::numbers::pi * freq * (u * ca + v * sa) + phase);
        std::array<double, 3> px{};
        for (int c = 0; c < 3; ++c) px[c] = base[c] + gx[c] * (u - 0.5) + gy[c] * (v - 0.5) + gamp[c] * wave;
        for (const Blob& bl : blobs) {
          const double d2 = (u - bl.cx) * (u - bl.cx) + (v - bl.cy) * (v - bl.cy);
          const double g = std::exp(-d2 * bl.inv2s2);
          for (int c = 0; c < 3; ++c) px[c] += bl.amp[c] * g;
        }
        for (std::size_t c = 0; c < 3; ++c) dst[(c * size + y) * size + x] = std::clamp(px[c], 0.0, 1.0);
      }
    }
    out.labels.push_back("synth:" + std::to_string(seed) + ":" + std::to_string(i));
  }
  return out;
}

ImageBatch load_directory_patches(const std::filesystem::path& dir, std::size_t size) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".ppm" || ext == ".PNG" || ext == ".PPM")) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .png or .ppm images in " + dir.string());
  std::vector<double> all;
  std::vector<std::string> labels;
  for (const auto& f : files) {
    ImageBatch img = load_image(f);
    if (img.height() < size || img.width() < size) continue;
    ImageBatch p = extract_patches(img, size, size);
    all.insert(all.end(), p.images.data().begin(), p.images.data().end());
    labels.insert(labels.end(), p.labels.begin(), p.labels.end());
  }
  if (labels.empty()) throw IoError("no image in " + dir.string() + " is large enough for " + std::to_string(size) + " patches");
  return {Tensor({labels.size(), 3, size, size}, std::move(all)), std::move(labels)};
}

}  // namespace djscc

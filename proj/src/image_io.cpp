#include "lsc/image_io.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "lsc/common.hpp"

namespace lsc::img {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

Tensor planes_from_rows(const std::vector<uint8_t*>& rows, int h, int w, int channels) {
  Tensor out({3, h, w});
  const float inv = 1.0f / 255.0f;
  for (int y = 0; y < h; ++y) {
    const uint8_t* row = rows[size_t(y)];
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const uint8_t v = channels == 1 ? row[x] : row[x * channels + c];
        out.data[(size_t(c) * h + y) * w + x] = float(v) * inv;
      }
  }
  return out;
}

Tensor read_png_file(const std::string& path, FILE* f) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng initialization failed for " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng initialization failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path);
  }
  png_init_io(png, f);
  png_read_png(png, info,
               PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_STRIP_ALPHA,
               nullptr);
  const int w = int(png_get_image_width(png, info));
  const int h = int(png_get_image_height(png, info));
  const int channels = int(png_get_channels(png, info));
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("PNG with " + std::to_string(channels) + " channels unsupported: " + path);
  }
  png_bytepp row_ptrs = png_get_rows(png, info);
  std::vector<uint8_t*> rows(size_t(h), nullptr);
  for (int y = 0; y < h; ++y) rows[size_t(y)] = row_ptrs[y];
  Tensor out = planes_from_rows(rows, h, w, channels);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

struct JpegErrorMgr {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  JpegErrorMgr* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

Tensor read_jpeg_file(const std::string& path, FILE* f) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<uint8_t> row_buf;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError("corrupt JPEG: " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int w = int(cinfo.output_width);
  const int h = int(cinfo.output_height);
  Tensor out({3, h, w});
  row_buf.resize(size_t(w) * 3);
  const float inv = 1.0f / 255.0f;
  uint8_t* row = row_buf.data();
  while (cinfo.output_scanline < cinfo.output_height) {
    const int y = int(cinfo.output_scanline);
    jpeg_read_scanlines(&cinfo, &row, 1);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.data[(size_t(c) * h + y) * w + x] = float(row[x * 3 + c]) * inv;
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

Tensor read_image(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("cannot open image: " + path);
  uint8_t magic[8] = {0};
  const size_t got = std::fread(magic, 1, sizeof magic, f.get());
  std::rewind(f.get());
  static const uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (got >= 8 && std::memcmp(magic, png_sig, 8) == 0) return read_png_file(path, f.get());
  if (got >= 2 && magic[0] == 0xFF && magic[1] == 0xD8) return read_jpeg_file(path, f.get());
  throw DataError("unrecognized image format: " + path);
}

void write_png(const std::string& path, const Tensor& image) {
  if (image.ndim() != 3 || (image.dim(0) != 3 && image.dim(0) != 1))
    throw ShapeError("write_png expects [3,H,W] or [1,H,W], got " + image.shape_str());
  const int channels = image.dim(0), h = image.dim(1), w = image.dim(2);
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng initialization failed for " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialization failed for " + path);
  }
  std::vector<uint8_t> bytes(size_t(h) * w * channels);
  std::vector<png_bytep> rows(size_t(h), nullptr);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG write failure: " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        float v = image.data[(size_t(c) * h + y) * w + x];
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        bytes[(size_t(y) * w + x) * channels + c] = uint8_t(v * 255.0f + 0.5f);
      }
    rows[size_t(y)] = bytes.data() + size_t(y) * w * channels;
  }
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace lsc::img

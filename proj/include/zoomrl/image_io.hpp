// SPDX-License-Identifier: Apache-2.0
#pragma once

// PNG / JPEG decode and PNG encode at the file boundary. Link PNG::PNG and JPEG::JPEG.

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "zoomrl/error.hpp"
#include "zoomrl/toolbox.hpp"

namespace zoomrl {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::IoError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(Errc::IoError, "cannot write " + path);
}

inline bool looks_like_png(const std::vector<std::uint8_t>& b) {
  return b.size() >= 8 && png_sig_cmp(b.data(), 0, 8) == 0;
}
inline bool looks_like_jpeg(const std::vector<std::uint8_t>& b) {
  return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF;
}

/// Decodes to 8-bit RGB.
inline RasterImage decode_png(const std::vector<std::uint8_t>& bytes, std::string id = {}) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw Error(Errc::ImageError, std::string("png: ") + img.message);
  img.format = PNG_FORMAT_RGB;
  if (img.width < 1 || img.height < 1) {
    png_image_free(&img);
    throw Error(Errc::ImageError, "png: empty image");
  }
  RasterImage out(static_cast<int>(img.width), static_cast<int>(img.height), 3, std::move(id));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw Error(Errc::ImageError, "png: " + msg);
  }
  return out;
}

inline std::vector<std::uint8_t> encode_png(const RasterImage& in) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(in.width);
  img.height = static_cast<png_uint_32>(in.height);
  switch (in.channels) {
    case 1: img.format = PNG_FORMAT_GRAY; break;
    case 2: img.format = PNG_FORMAT_GA; break;
    case 3: img.format = PNG_FORMAT_RGB; break;
    default: img.format = PNG_FORMAT_RGBA; break;
  }
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, in.pixels.data(), 0, nullptr))
    throw Error(Errc::ImageError, std::string("png: ") + img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, in.pixels.data(), 0, nullptr))
    throw Error(Errc::ImageError, std::string("png: ") + img.message);
  out.resize(size);
  return out;
}

namespace detail {

struct JpegErr {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

extern "C" inline void jpeg_error_longjmp(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Plain-C style on purpose: nothing with a destructor may live in this frame across setjmp.
inline bool decode_jpeg_into(const std::vector<std::uint8_t>& bytes, std::vector<std::uint8_t>* pixels, int* w,
                             int* h, char* message) {
  jpeg_decompress_struct cinfo;
  JpegErr err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_longjmp;
  if (setjmp(err.jump)) {
    std::memcpy(message, err.message, JMSG_LENGTH_MAX);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  *w = static_cast<int>(cinfo.output_width);
  *h = static_cast<int>(cinfo.output_height);
  pixels->resize(static_cast<std::size_t>(*w) * static_cast<std::size_t>(*h) * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels->data() + static_cast<std::size_t>(cinfo.output_scanline) * static_cast<std::size_t>(*w) * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

}  // namespace detail

/// Decodes to 8-bit RGB.
inline RasterImage decode_jpeg(const std::vector<std::uint8_t>& bytes, std::string id = {}) {
  std::vector<std::uint8_t> pixels;
  int w = 0, h = 0;
  char message[JMSG_LENGTH_MAX] = {};
  if (!detail::decode_jpeg_into(bytes, &pixels, &w, &h, message))
    throw Error(Errc::ImageError, std::string("jpeg: ") + message);
  RasterImage out(w, h, 3, std::move(id));
  out.pixels = std::move(pixels);
  return out;
}

/// Decodes PNG or JPEG by signature. The image id defaults to the path.
inline RasterImage load_image(const std::string& path, std::string id = {}) {
  auto bytes = read_file_bytes(path);
  if (id.empty()) id = path;
  if (looks_like_png(bytes)) return decode_png(bytes, std::move(id));
  if (looks_like_jpeg(bytes)) return decode_jpeg(bytes, std::move(id));
  throw Error(Errc::ImageError, path + ": not a PNG or JPEG file");
}

inline void save_png(const RasterImage& img, const std::string& path) { write_file_bytes(path, encode_png(img)); }

}  // namespace zoomrl

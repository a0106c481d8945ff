#include "cgs/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace cgs {

namespace {
struct FileCloser {
    void operator()(FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;
}  // namespace

Tensor load_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("load_png: cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw std::runtime_error("load_png: libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("load_png: decode error in " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    png_byte color_type = png_get_color_type(png, info);
    png_byte bit_depth = png_get_bit_depth(png, info);

    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_read_update_info(png, info);

    const int channels = png_get_channels(png, info);
    std::vector<png_byte> buf(static_cast<size_t>(w) * h * static_cast<size_t>(channels));
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<size_t>(y) * w * static_cast<size_t>(channels);
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor img({static_cast<int64_t>(h), static_cast<int64_t>(w), static_cast<int64_t>(channels)});
    for (size_t i = 0; i < buf.size(); ++i) img[static_cast<int64_t>(i)] = buf[i] / 255.0;
    return img;
}

void save_png(const Tensor& image, const std::string& path) {
    if (image.ndim() != 3 || (image.dim(2) != 3 && image.dim(2) != 4))
        throw std::invalid_argument("save_png: expected [H,W,3|4] image");
    const int h = static_cast<int>(image.dim(0));
    const int w = static_cast<int>(image.dim(1));
    const int channels = static_cast<int>(image.dim(2));

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("save_png: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw std::runtime_error("save_png: libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("save_png: encode error for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 channels == 4 ? PNG_COLOR_TYPE_RGBA : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<size_t>(w) * static_cast<size_t>(channels));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                double v = std::clamp(image.at(y, x, c), 0.0, 1.0);
                row[static_cast<size_t>(x * channels + c)] =
                    static_cast<png_byte>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor composite_over(const Tensor& rgba, const double bg[3]) {
    if (rgba.ndim() != 3 || rgba.dim(2) != 4)
        throw std::invalid_argument("composite_over: expected [H,W,4] input");
    const int64_t h = rgba.dim(0), w = rgba.dim(1);
    Tensor out({h, w, 3});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const double a = rgba.at(y, x, 3);
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = rgba.at(y, x, c) * a + bg[c] * (1.0 - a);
        }
    return out;
}

double image_mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("image_mse: shape mismatch");
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return a.numel() ? s / static_cast<double>(a.numel()) : 0.0;
}

}  // namespace cgs

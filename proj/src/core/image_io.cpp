#include "core/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace ods::img {

namespace {
constexpr char kF64Magic[8] = {'O', 'D', 'S', 'I', 'M', 'G', '8', '\0'};

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
}  // namespace

void write_png(const std::string& path, const Tensor& image) {
    ODS_REQUIRE(image.rank() == 3 && image.dim(2) == 3, "write_png: image must be HxWx3");
    const int h = static_cast<int>(image.dim(0));
    const int w = static_cast<int>(image.dim(1));

    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write error: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(image.at3(y, x, c), 0.0, 1.0);
                row[static_cast<size_t>(x) * 3 + static_cast<size_t>(c)] =
                    static_cast<png_byte>(std::lround(v * 255.0));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor read_png(const std::string& path) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open png: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png read error: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    if (png_get_channels(png, info) != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: expected 3 channels after transforms: " + path);
    }

    Tensor out({static_cast<int64_t>(h), static_cast<int64_t>(w), 3});
    std::vector<png_byte> row(static_cast<size_t>(w) * 3);
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at3(y, x, c) =
                    row[static_cast<size_t>(x) * 3 + static_cast<size_t>(c)] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_f64(const std::string& path, const Tensor& image) {
    ODS_REQUIRE(image.rank() == 3, "write_f64: image must be HxWxC");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kF64Magic, 8);
    const uint32_t h = static_cast<uint32_t>(image.dim(0));
    const uint32_t w = static_cast<uint32_t>(image.dim(1));
    const uint32_t c = static_cast<uint32_t>(image.dim(2));
    os.write(reinterpret_cast<const char*>(&h), 4);
    os.write(reinterpret_cast<const char*>(&w), 4);
    os.write(reinterpret_cast<const char*>(&c), 4);
    os.write(reinterpret_cast<const char*>(image.data()),
             static_cast<std::streamsize>(image.size() * sizeof(double)));
    if (!os) throw IoError("failed writing: " + path);
}

Tensor read_f64(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kF64Magic, 8) != 0)
        throw IoError("not a float image dump: " + path);
    uint32_t h = 0, w = 0, c = 0;
    is.read(reinterpret_cast<char*>(&h), 4);
    is.read(reinterpret_cast<char*>(&w), 4);
    is.read(reinterpret_cast<char*>(&c), 4);
    Tensor out({static_cast<int64_t>(h), static_cast<int64_t>(w), static_cast<int64_t>(c)});
    is.read(reinterpret_cast<char*>(out.data()),
            static_cast<std::streamsize>(out.size() * sizeof(double)));
    if (!is) throw IoError("truncated float image dump: " + path);
    return out;
}

namespace {

void put_px(Tensor& img, int x, int y, const std::array<double, 3>& rgb) {
    if (x < 0 || y < 0 || x >= img.dim(1) || y >= img.dim(0)) return;
    for (int c = 0; c < 3; ++c) img.at3(y, x, c) = rgb[static_cast<size_t>(c)];
}

void draw_segment(Tensor& img, double x0, double y0, double x1, double y1,
                  const std::array<double, 3>& rgb) {
    const double len = std::max(std::fabs(x1 - x0), std::fabs(y1 - y0));
    const int steps = std::max(1, static_cast<int>(std::ceil(len)));
    for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
        const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
        put_px(img, x, y, rgb);
        put_px(img, x + 1, y, rgb);
        put_px(img, x, y + 1, rgb);
    }
}

}  // namespace

Tensor draw_line_chart(const std::vector<ChartSeries>& series, int width, int height) {
    Tensor img = Tensor::full({height, width, 3}, 1.0);
    const int mx = 48, my = 32;  // margins
    const std::array<double, 3> axis{0.15, 0.15, 0.15};
    const std::array<double, 3> grid{0.85, 0.85, 0.85};

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series) {
        for (double v : s.x) {
            xmin = std::min(xmin, v);
            xmax = std::max(xmax, v);
        }
        for (double v : s.y) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    }
    if (xmin > xmax) {
        xmin = 0;
        xmax = 1;
    }
    if (ymin > ymax) {
        ymin = 0;
        ymax = 1;
    }
    if (xmax - xmin < 1e-12) xmax = xmin + 1;
    if (ymax - ymin < 1e-12) ymax = ymin + 1;

    auto to_px = [&](double x, double y) {
        const double px = mx + (x - xmin) / (xmax - xmin) * (width - 2 * mx);
        const double py = height - my - (y - ymin) / (ymax - ymin) * (height - 2 * my);
        return std::pair<double, double>(px, py);
    };

    // grid + axes
    for (int i = 0; i <= 4; ++i) {
        const double gx = mx + i * (width - 2 * mx) / 4.0;
        const double gy = my + i * (height - 2 * my) / 4.0;
        draw_segment(img, gx, my, gx, height - my, grid);
        draw_segment(img, mx, gy, width - mx, gy, grid);
    }
    draw_segment(img, mx, height - my, width - mx, height - my, axis);
    draw_segment(img, mx, my, mx, height - my, axis);

    for (const auto& s : series) {
        for (size_t i = 0; i + 1 < s.x.size(); ++i) {
            auto [x0, y0] = to_px(s.x[i], s.y[i]);
            auto [x1, y1] = to_px(s.x[i + 1], s.y[i + 1]);
            draw_segment(img, x0, y0, x1, y1, s.rgb);
        }
        // lone points still get a mark
        if (s.x.size() == 1) {
            auto [x0, y0] = to_px(s.x[0], s.y[0]);
            draw_segment(img, x0 - 2, y0, x0 + 2, y0, s.rgb);
        }
    }
    return img;
}

}  // namespace ods::img

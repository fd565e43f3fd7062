#pragma once

#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace ods::img {

// 8-bit RGB PNG from an HxWx3 image in [0,1] (values clamped, rounded).
void write_png(const std::string& path, const Tensor& image);
Tensor read_png(const std::string& path);

// Raw float dump: magic "ODSIMG8\0", u32 height/width/channels, then
// little-endian f64 row-major data. Lossless round trip.
void write_f64(const std::string& path, const Tensor& image);
Tensor read_f64(const std::string& path);

struct ChartSeries {
    std::vector<double> x, y;
    std::array<double, 3> rgb{0, 0, 0};
};

// Minimal line chart (axes, grid ticks, polylines) as an RGB image.
Tensor draw_line_chart(const std::vector<ChartSeries>& series, int width = 640, int height = 400);

}  // namespace ods::img

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "smp/tensor.hpp"

// Minimal line charts rendered straight to PNG.
namespace smp::plot {

using Rgb = std::array<std::uint8_t, 3>;

struct Series {
  std::string label;
  Rgb color{0, 0, 0};
  std::vector<std::pair<Real, Real>> points;  // (x, y), drawn in order
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  /// Fixed y range; derived from the data when empty.
  std::optional<std::pair<Real, Real>> y_range;
};

/// Text is drawn upper-case with a 5x7 font; unknown glyphs render blank.
void write_png(const Chart& chart, const std::filesystem::path& path, int width = 640, int height = 400);

}  // namespace smp::plot

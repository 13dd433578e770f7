#include "smp/plot.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace smp::plot {

namespace {

// Rows top to bottom, low 5 bits, MSB is the leftmost column.
const std::map<char, std::array<std::uint8_t, 7>>& font() {
  static const std::map<char, std::array<std::uint8_t, 7>> glyphs{
      {'0', {14, 17, 19, 21, 25, 17, 14}}, {'1', {4, 12, 4, 4, 4, 4, 14}},   {'2', {14, 17, 1, 2, 4, 8, 31}},
      {'3', {31, 2, 4, 2, 1, 17, 14}},     {'4', {2, 6, 10, 18, 31, 2, 2}},  {'5', {31, 16, 30, 1, 1, 17, 14}},
      {'6', {6, 8, 16, 30, 17, 17, 14}},   {'7', {31, 1, 2, 4, 8, 8, 8}},    {'8', {14, 17, 17, 14, 17, 17, 14}},
      {'9', {14, 17, 17, 15, 1, 2, 12}},   {'A', {14, 17, 17, 31, 17, 17, 17}}, {'B', {30, 17, 17, 30, 17, 17, 30}},
      {'C', {14, 17, 16, 16, 16, 17, 14}}, {'D', {28, 18, 17, 17, 17, 18, 28}}, {'E', {31, 16, 16, 30, 16, 16, 31}},
      {'F', {31, 16, 16, 30, 16, 16, 16}}, {'G', {14, 17, 16, 23, 17, 17, 15}}, {'H', {17, 17, 17, 31, 17, 17, 17}},
      {'I', {14, 4, 4, 4, 4, 4, 14}},      {'J', {7, 2, 2, 2, 2, 18, 12}},   {'K', {17, 18, 20, 24, 20, 18, 17}},
      {'L', {16, 16, 16, 16, 16, 16, 31}}, {'M', {17, 27, 21, 21, 17, 17, 17}}, {'N', {17, 17, 25, 21, 19, 17, 17}},
      {'O', {14, 17, 17, 17, 17, 17, 14}}, {'P', {30, 17, 17, 30, 16, 16, 16}}, {'Q', {14, 17, 17, 17, 21, 18, 13}},
      {'R', {30, 17, 17, 30, 20, 18, 17}}, {'S', {15, 16, 16, 14, 1, 1, 30}}, {'T', {31, 4, 4, 4, 4, 4, 4}},
      {'U', {17, 17, 17, 17, 17, 17, 14}}, {'V', {17, 17, 17, 17, 17, 10, 4}}, {'W', {17, 17, 17, 21, 21, 21, 10}},
      {'X', {17, 17, 10, 4, 10, 17, 17}},  {'Y', {17, 17, 17, 10, 4, 4, 4}}, {'Z', {31, 1, 2, 4, 8, 16, 31}},
      {'.', {0, 0, 0, 0, 0, 12, 12}},      {',', {0, 0, 0, 0, 12, 4, 8}},    {'-', {0, 0, 0, 31, 0, 0, 0}},
      {':', {0, 12, 12, 0, 12, 12, 0}},    {'(', {2, 4, 8, 8, 8, 4, 2}},     {')', {8, 4, 2, 2, 2, 4, 8}},
      {'/', {0, 1, 2, 4, 8, 16, 0}},       {'=', {0, 0, 31, 0, 31, 0, 0}},   {'+', {0, 4, 4, 31, 4, 4, 0}},
  };
  return glyphs;
}

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w * h * 3), 255) {}

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    auto* p = &px_[static_cast<std::size_t>((y * w_ + x) * 3)];
    p[0] = c[0], p[1] = c[1], p[2] = c[2];
  }

  void line(int x0, int y0, int x1, int y1, Rgb c, int thick = 1) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      for (int a = 0; a < thick; ++a)
        for (int b = 0; b < thick; ++b) set(x0 + a - thick / 2, y0 + b - thick / 2, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) err += dy, x0 += sx;
      if (e2 <= dx) err += dx, y0 += sy;
    }
  }

  void rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) set(x, y, c);
  }

  // Scale-2 glyphs; returns the width drawn.
  int text(int x, int y, const std::string& s, Rgb c, bool vertical = false) {
    int cursor = 0;
    for (char ch : s) {
      const auto up = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      if (auto it = font().find(up); it != font().end()) {
        for (int r = 0; r < 7; ++r)
          for (int col = 0; col < 5; ++col)
            if (it->second[static_cast<std::size_t>(r)] & (16 >> col))
              for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                  if (vertical) {
                    set(x + 2 * r + a, y - cursor - 2 * col - b, c);
                  } else {
                    set(x + cursor + 2 * col + a, y + 2 * r + b, c);
                  }
                }
      }
      cursor += 12;
    }
    return cursor;
  }

  void save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      std::fclose(fp);
      throw std::runtime_error("libpng failed writing " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w_), static_cast<png_uint_32>(h_), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h_; ++y) {
      png_write_row(png, const_cast<png_bytep>(&px_[static_cast<std::size_t>(y * w_ * 3)]));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
  }

 private:
  int w_, h_;
  std::vector<std::uint8_t> px_;
};

std::string tick_label(Real v) {
  std::ostringstream os;
  if (std::abs(v) >= 100 || v == std::floor(v)) {
    os << static_cast<long long>(std::llround(v));
  } else {
    os << std::fixed << std::setprecision(2) << v;
  }
  return os.str();
}

}  // namespace

void write_png(const Chart& chart, const std::filesystem::path& path, int width, int height) {
  if (width < 200 || height < 150) throw std::invalid_argument("plot: canvas too small");
  Real xmin = std::numeric_limits<Real>::max(), xmax = std::numeric_limits<Real>::lowest();
  Real ymin = xmin, ymax = xmax;
  for (const auto& s : chart.series)
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, x), xmax = std::max(xmax, x);
      ymin = std::min(ymin, y), ymax = std::max(ymax, y);
    }
  if (xmin > xmax) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (chart.y_range) std::tie(ymin, ymax) = *chart.y_range;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;

  Canvas cv(width, height);
  const int left = 70, right = width - 20, top = 40, bottom = height - 50;
  const Rgb black{0, 0, 0}, grid{225, 225, 225};
  auto sx = [&](Real x) { return left + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * (right - left))); };
  auto sy = [&](Real y) { return bottom - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * (bottom - top))); };

  for (int i = 0; i <= 4; ++i) {
    const Real yv = ymin + (ymax - ymin) * i / 4, xv = xmin + (xmax - xmin) * i / 4;
    cv.line(left, sy(yv), right, sy(yv), grid);
    cv.line(sx(xv), top, sx(xv), bottom, grid);
    const auto yl = tick_label(yv);
    cv.text(left - 6 - 12 * static_cast<int>(yl.size()), sy(yv) - 7, yl, black);
    const auto xl = tick_label(xv);
    cv.text(sx(xv) - 6 * static_cast<int>(xl.size()), bottom + 8, xl, black);
  }
  cv.line(left, bottom, right, bottom, black);
  cv.line(left, top, left, bottom, black);
  cv.text(left, 12, chart.title, black);
  cv.text((left + right) / 2 - 6 * static_cast<int>(chart.x_label.size()), height - 22, chart.x_label, black);
  cv.text(6, (top + bottom) / 2 + 6 * static_cast<int>(chart.y_label.size()), chart.y_label, black, true);

  int legend_y = top + 6;
  for (const auto& s : chart.series) {
    for (std::size_t i = 1; i < s.points.size(); ++i) {
      cv.line(sx(s.points[i - 1].first), sy(s.points[i - 1].second), sx(s.points[i].first), sy(s.points[i].second),
              s.color, 2);
    }
    if (s.points.size() == 1) cv.rect(sx(s.points[0].first) - 2, sy(s.points[0].second) - 2,
                                      sx(s.points[0].first) + 2, sy(s.points[0].second) + 2, s.color);
    const int lx = right - 12 * static_cast<int>(s.label.size()) - 30;
    cv.rect(lx, legend_y + 4, lx + 16, legend_y + 9, s.color);
    cv.text(lx + 22, legend_y, s.label, black);
    legend_y += 20;
  }
  cv.save(path);
}

}  // namespace smp::plot

#include "camfprint/heatmap.hpp"

#include <algorithm>
#include <cstdio>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace camfp {

namespace {

constexpr int kFont = cv::FONT_HERSHEY_SIMPLEX;
constexpr int kMargin = 10;
const cv::Scalar kBackground(255, 255, 255);
const cv::Scalar kInk(0, 0, 0);

cv::Vec3b colour(double v) {
  cv::Mat1b g(1, 1, static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
  cv::Mat3b c;
  cv::applyColorMap(g, c, cv::COLORMAP_VIRIDIS);
  return c(0, 0);
}

// Draws `text` rotated 90 degrees counter-clockwise with its baseline end at
// the bottom of `area`.
void put_vertical(cv::Mat& canvas, const std::string& text, double scale, const cv::Rect& area) {
  int base = 0;
  const auto size = cv::getTextSize(text, kFont, scale, 1, &base);
  cv::Mat strip(size.height + base + 2, size.width + 2, CV_8UC3, kBackground);
  cv::putText(strip, text, {1, size.height + 1}, kFont, scale, kInk, 1, cv::LINE_AA);
  cv::Mat rotated;
  cv::rotate(strip, rotated, cv::ROTATE_90_COUNTERCLOCKWISE);
  const int w = std::min(rotated.cols, area.width);
  const int h = std::min(rotated.rows, area.height);
  const int x = area.x + (area.width - w) / 2;
  const int y = area.y + area.height - h;
  rotated(cv::Rect(0, rotated.rows - h, w, h)).copyTo(canvas(cv::Rect(x, y, w, h)));
}

}  // namespace

HeatmapLayout render_heatmap(const SimilarityMatrix& matrix, const std::filesystem::path& out_path) {
  const int n = static_cast<int>(matrix.size());
  if (n == 0 || matrix.cells.size() != static_cast<std::size_t>(n) * n) {
    throw ConfigError("render_heatmap: malformed matrix");
  }
  const int cell = std::clamp(960 / n, 14, 48);
  const double label_scale = std::min(0.45, cell / 34.0);
  const bool annotate = n <= 40;
  const double value_scale = std::min(0.4, cell / 60.0);

  int label_extent = 0, base = 0;
  for (const auto& d : matrix.devices) {
    const auto s = cv::getTextSize(d, kFont, label_scale, 1, &base);
    label_extent = std::max(label_extent, s.width);
  }
  label_extent += 6;

  HeatmapLayout layout;
  layout.annotated = annotate;
  layout.grid = {kMargin + label_extent, kMargin + label_extent, n * cell, n * cell};
  const int bar_w = 18;
  layout.colorbar = {layout.grid.x + layout.grid.width + 16, layout.grid.y, bar_w, layout.grid.height};
  const int tick_w = cv::getTextSize("1.00", kFont, 0.4, 1, &base).width;
  layout.width = layout.colorbar.x + bar_w + 6 + tick_w + kMargin;
  layout.height = layout.grid.y + layout.grid.height + kMargin;

  cv::Mat canvas(layout.height, layout.width, CV_8UC3, kBackground);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double v = matrix.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      const cv::Rect r(layout.grid.x + j * cell, layout.grid.y + i * cell, cell, cell);
      const auto c = colour(v);
      cv::rectangle(canvas, r, cv::Scalar(c[0], c[1], c[2]), cv::FILLED);
      if (annotate) {
        char buf[8];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        const auto s = cv::getTextSize(buf, kFont, value_scale, 1, &base);
        const cv::Scalar ink = v > 0.6 ? kInk : cv::Scalar(255, 255, 255);
        cv::putText(canvas, buf, {r.x + (cell - s.width) / 2, r.y + (cell + s.height) / 2}, kFont, value_scale, ink,
                    1, cv::LINE_AA);
      }
    }
  }
  cv::rectangle(canvas, cv::Rect(layout.grid.x, layout.grid.y, layout.grid.width, layout.grid.height), kInk, 1);

  for (int i = 0; i < n; ++i) {
    const auto& d = matrix.devices[static_cast<std::size_t>(i)];
    const auto s = cv::getTextSize(d, kFont, label_scale, 1, &base);
    const int y = layout.grid.y + i * cell + (cell + s.height) / 2;
    const int x = layout.grid.x - 4 - s.width;
    cv::putText(canvas, d, {x, y}, kFont, label_scale, kInk, 1, cv::LINE_AA);
    layout.row_labels.push_back({x, y - s.height, s.width, s.height + base});

    const cv::Rect col(layout.grid.x + i * cell, kMargin, cell, label_extent - 4);
    put_vertical(canvas, d, label_scale, col);
    layout.column_labels.push_back({col.x, col.y + col.height - std::min(s.width + 2, col.height), col.width,
                                    std::min(s.width + 2, col.height)});
  }

  const auto& cb = layout.colorbar;
  for (int y = 0; y < cb.height; ++y) {
    const auto c = colour(1.0 - static_cast<double>(y) / std::max(1, cb.height - 1));
    cv::line(canvas, {cb.x, cb.y + y}, {cb.x + cb.width - 1, cb.y + y}, cv::Scalar(c[0], c[1], c[2]));
  }
  cv::rectangle(canvas, cv::Rect(cb.x, cb.y, cb.width, cb.height), kInk, 1);
  for (double t : {0.0, 0.5, 1.0}) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%.1f", t);
    const int y = cb.y + static_cast<int>((1.0 - t) * (cb.height - 1));
    cv::line(canvas, {cb.x + cb.width, y}, {cb.x + cb.width + 3, y}, kInk);
    const auto s = cv::getTextSize(buf, kFont, 0.4, 1, &base);
    const int ty = std::clamp(y + s.height / 2, s.height, layout.height - 1);
    cv::putText(canvas, buf, {cb.x + cb.width + 6, ty}, kFont, 0.4, kInk, 1, cv::LINE_AA);
  }

  bool ok = false;
  try {
    ok = cv::imwrite(out_path.string(), canvas, {cv::IMWRITE_PNG_COMPRESSION, 6});
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw DataError("render_heatmap: cannot write " + out_path.string());
  return layout;
}

}  // namespace camfp

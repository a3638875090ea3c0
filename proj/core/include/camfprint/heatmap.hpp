#pragma once

#include <filesystem>
#include <vector>

#include "camfprint/evaluation.hpp"

namespace camfp {

struct PixelRect {
  int x = 0, y = 0, width = 0, height = 0;
};

/// Where things ended up in the rendered image; used by tests and callers
/// that want to crop.
struct HeatmapLayout {
  int width = 0;
  int height = 0;
  PixelRect grid;
  PixelRect colorbar;
  std::vector<PixelRect> row_labels;
  std::vector<PixelRect> column_labels;
  bool annotated = false;
};

/// Renders the matrix as a PNG: viridis cells, device labels on both axes
/// (column labels rotated), a 0..1 colour bar, and the cell values printed
/// when N <= 40. Output depends only on the matrix. Throws DataError if the
/// file cannot be written.
HeatmapLayout render_heatmap(const SimilarityMatrix& matrix, const std::filesystem::path& out_path);

}  // namespace camfp

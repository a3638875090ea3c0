#include "camfprint/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "camfprint/common.hpp"

namespace camfp {

namespace {

RgbImage from_bgr(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  RgbImage out(rgb.cols, rgb.rows);
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<std::uint8_t>(y);
    std::copy(row, row + rgb.cols * 3, out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * rgb.cols * 3);
  }
  return out;
}

cv::Mat as_mat(const RgbImage& image) {
  // const_cast is safe: the header is only read by OpenCV.
  return cv::Mat(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.pixels.data()));
}

}  // namespace

RgbImage load_rgb(const std::filesystem::path& path) {
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw DataError("cannot decode image " + path.string() + ": " + e.what());
  }
  if (bgr.empty()) throw DataError("cannot decode image " + path.string());
  return from_bgr(bgr);
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  cv::Mat bgr;
  cv::cvtColor(as_mat(image), bgr, cv::COLOR_RGB2BGR);
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr, {cv::IMWRITE_PNG_COMPRESSION, 6});
  } catch (const cv::Exception& e) {
    throw DataError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw DataError("cannot write " + path.string());
}

RgbImage resize_image(const RgbImage& image, int width, int height) {
  if (image.width == width && image.height == height) return image;
  cv::Mat out;
  cv::resize(as_mat(image), out, cv::Size(width, height), 0, 0, cv::INTER_AREA);
  RgbImage result(width, height);
  for (int y = 0; y < height; ++y) {
    const auto* row = out.ptr<std::uint8_t>(y);
    std::copy(row, row + width * 3, result.pixels.begin() + static_cast<std::ptrdiff_t>(y) * width * 3);
  }
  return result;
}

}  // namespace camfp

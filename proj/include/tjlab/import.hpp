#pragma once

// Needs OpenCV (core, imgproc, imgcodecs); not pulled in by tjlab.hpp.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tjlab/dataset.hpp"
#include "tjlab/error.hpp"

namespace tjlab {

inline bool is_image_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (const char* e : {".png", ".jpg", ".jpeg", ".ppm", ".pgm", ".bmp", ".tif", ".tiff"}) {
    if (ext == e) return true;
  }
  return false;
}

// root/<label>/<image>, label a decimal class index. Files are read in sorted
// path order and resized to the geometry (area interpolation) when needed.
inline LabeledDataset import_image_directory(const std::filesystem::path& root, const ImageGeometry& g, int class_count,
                                             Split split) {
  namespace fs = std::filesystem;
  if (g.channels != 3 && g.channels != 1) throw ShapeError("import: geometry must have 1 or 3 channels");
  if (!fs::is_directory(root)) throw IoError("import: '" + root.string() + "' is not a directory");
  std::vector<std::pair<fs::path, int>> files;
  for (const auto& dir : fs::directory_iterator(root)) {
    if (!dir.is_directory()) continue;
    const auto name = dir.path().filename().string();
    if (!std::all_of(name.begin(), name.end(), [](unsigned char c) { return std::isdigit(c); })) {
      throw Error("import: class folder '" + name + "' is not a class index");
    }
    const int label = std::stoi(name);
    if (label >= class_count) {
      throw Error("import: class folder " + name + " outside [0, " + std::to_string(class_count) + ")");
    }
    for (const auto& f : fs::directory_iterator(dir.path())) {
      if (f.is_regular_file() && is_image_file(f.path())) files.emplace_back(f.path(), label);
    }
  }
  std::sort(files.begin(), files.end());
  LabeledDataset ds{g, class_count, split, {}, {}, {}};
  for (const auto& [path, label] : files) {
    cv::Mat img = cv::imread(path.string(), g.channels == 3 ? cv::IMREAD_COLOR : cv::IMREAD_GRAYSCALE);
    if (img.empty()) throw FormatError("import: cannot decode '" + path.string() + "'");
    if (img.rows != g.height || img.cols != g.width) {
      cv::resize(img, img, cv::Size(g.width, g.height), 0, 0, cv::INTER_AREA);
    }
    if (g.channels == 3) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
    if (!img.isContinuous()) img = img.clone();
    ds.push_back({img.ptr<std::uint8_t>(), g.size()}, label);
  }
  if (ds.empty()) throw Error("import: no images under '" + root.string() + "'");
  return ds;
}

}  // namespace tjlab

#include "pdseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "pdseg/error.hpp"
#include "pdseg/ops.hpp"

namespace pdseg {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes < 1 || num_classes > 255) throw ConfigError("confusion matrix needs 1..255 classes");
  counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

void ConfusionMatrix::update(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw DimensionError("prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                         " vs ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  update(pred.labels, gt.labels);
}

void ConfusionMatrix::update(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw DimensionError("prediction and ground truth sizes differ");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == kIgnoreLabel) continue;
    if (gt[i] >= k_ || pred[i] >= k_) {
      throw ConfigError("class id " + std::to_string(std::max(gt[i], pred[i])) + " >= K=" + std::to_string(k_));
    }
    ++counts_[static_cast<std::size_t>(gt[i]) * k_ + pred[i]];
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw DimensionError("cannot merge confusion matrices with different K");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::vector<double> ConfusionMatrix::class_iou() const {
  std::vector<double> iou(static_cast<std::size_t>(k_), std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < k_; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < k_; ++j) {
      row += at(c, j);
      col += at(j, c);
    }
    const std::uint64_t uni = row + col - at(c, c);
    if (uni > 0) iou[static_cast<std::size_t>(c)] = static_cast<double>(at(c, c)) / static_cast<double>(uni);
  }
  return iou;
}

Scores ConfusionMatrix::scores() const {
  const std::uint64_t n = total();
  if (n == 0) throw ConfigError("scores() on an empty confusion matrix");
  std::uint64_t diag = 0;
  double acc_sum = 0;
  int acc_n = 0;
  for (int c = 0; c < k_; ++c) {
    diag += at(c, c);
    std::uint64_t row = 0;
    for (int j = 0; j < k_; ++j) row += at(c, j);
    if (row > 0) {
      acc_sum += static_cast<double>(at(c, c)) / static_cast<double>(row);
      ++acc_n;
    }
  }
  double iou_sum = 0;
  int iou_n = 0;
  for (double v : class_iou()) {
    if (std::isnan(v)) continue;
    iou_sum += v;
    ++iou_n;
  }
  Scores s;
  s.pixel_accuracy = static_cast<double>(diag) / static_cast<double>(n);
  s.mean_accuracy = acc_sum / acc_n;
  s.mean_iou = iou_sum / iou_n;
  return s;
}

std::string scores_csv(const std::vector<std::pair<std::string, Scores>>& rows) {
  std::ostringstream os;
  os << "name,pa,ma,miou\n";
  char buf[128];
  for (const auto& [name, s] : rows) {
    std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f\n", s.pixel_accuracy, s.mean_accuracy, s.mean_iou);
    os << name << buf;
  }
  return os.str();
}

std::string scores_table(const std::vector<std::pair<std::string, Scores>>& rows) {
  std::size_t width = 4;
  for (const auto& r : rows) width = std::max(width, r.first.size());
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-*s %8s %8s %8s\n", static_cast<int>(width), "name", "PA", "MA", "mIoU");
  os << buf;
  for (const auto& [name, s] : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s %8.2f %8.2f %8.2f\n", static_cast<int>(width), name.c_str(),
                  100 * s.pixel_accuracy, 100 * s.mean_accuracy, 100 * s.mean_iou);
    os << buf;
  }
  return os.str();
}

}  // namespace pdseg

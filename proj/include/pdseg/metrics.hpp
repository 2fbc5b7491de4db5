#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pdseg/image.hpp"

namespace pdseg {

struct Scores {
  double pixel_accuracy = 0;  // PA
  double mean_accuracy = 0;   // MA
  double mean_iou = 0;        // mIoU
};

/// K×K pixel counts, rows = ground truth, columns = prediction. Pixels whose
/// ground truth is the ignore label (255) are not counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return k_; }
  std::uint64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * k_ + pred]; }
  std::uint64_t total() const;

  void update(const LabelMap& pred, const LabelMap& gt);
  void update(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  /// Classes with an empty row are left out of MA; classes absent from both
  /// rows and columns are left out of mIoU. Throws on an empty matrix.
  Scores scores() const;
  std::vector<double> class_iou() const;  // NaN for excluded classes

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

/// "name,pa,ma,miou" CSV (header + one row per entry) and an aligned text table.
std::string scores_csv(const std::vector<std::pair<std::string, Scores>>& rows);
std::string scores_table(const std::vector<std::pair<std::string, Scores>>& rows);

}  // namespace pdseg

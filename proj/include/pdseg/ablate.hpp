#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pdseg/metrics.hpp"
#include "pdseg/segnet.hpp"

namespace pdseg {

enum class AblationGrid { kWeights, kTimestep, kDepthSource };

AblationGrid parse_ablation_grid(const std::string& s);
std::string to_string(AblationGrid grid);

struct AblationCell {
  std::string name;
  SegNetConfig model;
};

/// Rows of the grid, each a variation of `base`:
///   weights       0.6:0.4 … 1:0 under manual fusion, then "structured"
///   timestep      structured fusion at t = 0, 50, 100, 200
///   depth-source  rgb_only, sensor, sharp, smooth, quantized, addition-of-3, pdam-of-3
std::vector<AblationCell> ablation_grid(AblationGrid grid, const SegNetConfig& base);

struct CellResult {
  std::string name;
  std::vector<Scores> per_seed;  // test-set scores, seed order
  bool failed = false;
  std::string error;

  Scores mean() const;
  Scores stddev() const;  // population std over seeds
};

/// Trains the cell once per seed (model and loop seeded with base_seed + s)
/// and scores it on `test_set`. Library errors, and runs that diverge, mark
/// the cell failed instead of propagating.
template <typename T>
CellResult run_cell(const AblationCell& cell, const std::vector<SegSample>& train_set,
                    const std::vector<SegSample>& test_set, const TrainConfig& train_config, int seeds,
                    const PredictOptions& predict_options = {});

/// name,status,seeds,pa_mean,pa_std,ma_mean,ma_std,miou_mean,miou_std
std::string ablation_csv(const std::vector<CellResult>& results);

}  // namespace pdseg

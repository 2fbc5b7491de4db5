#include "pdseg/ablate.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "pdseg/error.hpp"

namespace pdseg {

AblationGrid parse_ablation_grid(const std::string& s) {
  if (s == "weights") return AblationGrid::kWeights;
  if (s == "timestep") return AblationGrid::kTimestep;
  if (s == "depth-source") return AblationGrid::kDepthSource;
  throw ConfigError("unknown ablation grid '" + s + "' (weights | timestep | depth-source)");
}

std::string to_string(AblationGrid grid) {
  switch (grid) {
    case AblationGrid::kWeights: return "weights";
    case AblationGrid::kTimestep: return "timestep";
    case AblationGrid::kDepthSource: return "depth-source";
  }
  return "?";
}

std::vector<AblationCell> ablation_grid(AblationGrid grid, const SegNetConfig& base) {
  std::vector<AblationCell> cells;
  auto with = [&](std::string name, auto edit) {
    SegNetConfig c = base;
    edit(c);
    c.validate();
    cells.push_back({std::move(name), std::move(c)});
  };
  const PdSource pdam_of_3 = PdSource::parse("pdam:sharp,smooth,quantized");

  switch (grid) {
    case AblationGrid::kWeights: {
      // RGB:PD ratios; "structured" uses the schedule's own weights at t.
      const std::pair<const char*, std::pair<double, double>> ratios[] = {
          {"0.6:0.4", {0.6, 0.4}},   {"0.8:0.2", {0.8, 0.2}},   {"0.9:0.1", {0.9, 0.1}},
          {"0.95:0.05", {0.95, 0.05}}, {"0.99:0.01", {0.99, 0.01}}, {"1:0", {1.0, 0.0}},
      };
      for (const auto& [name, w] : ratios) {
        with(name, [&](SegNetConfig& c) {
          c.fusion = FusionMode::kManual;
          c.w_rgb = w.first;
          c.w_pd = w.second;
          if (!c.pd_source.uses_depth()) c.pd_source = pdam_of_3;
        });
      }
      with("structured", [&](SegNetConfig& c) {
        c.fusion = FusionMode::kStructured;
        if (!c.pd_source.uses_depth()) c.pd_source = pdam_of_3;
      });
      break;
    }
    case AblationGrid::kTimestep:
      for (int t : {0, 50, 100, 200}) {
        with("t=" + std::to_string(t), [&](SegNetConfig& c) {
          c.fusion = FusionMode::kStructured;
          if (!c.pd_source.uses_depth()) c.pd_source = pdam_of_3;
          c.timesteps = {t};
        });
      }
      break;
    case AblationGrid::kDepthSource: {
      with("rgb_only", [](SegNetConfig& c) {
        c.fusion = FusionMode::kRgbOnly;
        c.pd_source = PdSource::parse("none");
      });
      for (const char* profile : {"sensor", "sharp", "smooth", "quantized"}) {
        with(profile, [&](SegNetConfig& c) {
          c.fusion = FusionMode::kStructured;
          c.pd_source = PdSource::parse(std::string("single:") + profile);
        });
      }
      with("addition-of-3", [](SegNetConfig& c) {
        c.fusion = FusionMode::kStructured;
        c.pd_source = PdSource::parse("sum:sharp,smooth,quantized");
      });
      with("pdam-of-3", [&](SegNetConfig& c) {
        c.fusion = FusionMode::kStructured;
        c.pd_source = pdam_of_3;
      });
      break;
    }
  }
  return cells;
}

Scores CellResult::mean() const {
  Scores m;
  if (per_seed.empty()) return m;
  for (const auto& s : per_seed) {
    m.pixel_accuracy += s.pixel_accuracy;
    m.mean_accuracy += s.mean_accuracy;
    m.mean_iou += s.mean_iou;
  }
  const double n = static_cast<double>(per_seed.size());
  return {m.pixel_accuracy / n, m.mean_accuracy / n, m.mean_iou / n};
}

Scores CellResult::stddev() const {
  Scores v;
  if (per_seed.empty()) return v;
  const Scores m = mean();
  for (const auto& s : per_seed) {
    v.pixel_accuracy += (s.pixel_accuracy - m.pixel_accuracy) * (s.pixel_accuracy - m.pixel_accuracy);
    v.mean_accuracy += (s.mean_accuracy - m.mean_accuracy) * (s.mean_accuracy - m.mean_accuracy);
    v.mean_iou += (s.mean_iou - m.mean_iou) * (s.mean_iou - m.mean_iou);
  }
  const double n = static_cast<double>(per_seed.size());
  return {std::sqrt(v.pixel_accuracy / n), std::sqrt(v.mean_accuracy / n), std::sqrt(v.mean_iou / n)};
}

template <typename T>
CellResult run_cell(const AblationCell& cell, const std::vector<SegSample>& train_set,
                    const std::vector<SegSample>& test_set, const TrainConfig& train_config, int seeds,
                    const PredictOptions& predict_options) {
  if (seeds < 1) throw ConfigError("run_cell: need at least one seed");
  CellResult result;
  result.name = cell.name;
  try {
    for (int s = 0; s < seeds; ++s) {
      TrainConfig tc = train_config;
      tc.seed = train_config.seed + static_cast<std::uint64_t>(s);
      SegNet<T> model(cell.model, tc.seed);
      const TrainResult tr = train(model, train_set, tc);
      if (tr.diverged) throw NumericError("seed " + std::to_string(tc.seed) + ": " + tr.divergence);
      result.per_seed.push_back(evaluate(model, test_set, predict_options).scores());
    }
  } catch (const Error& e) {
    result.failed = true;
    result.error = e.what();
  }
  return result;
}

std::string ablation_csv(const std::vector<CellResult>& results) {
  std::ostringstream os;
  os << "name,status,seeds,pa_mean,pa_std,ma_mean,ma_std,miou_mean,miou_std\n";
  char buf[256];
  for (const auto& r : results) {
    os << r.name << ',' << (r.failed ? "failed" : "ok") << ',' << r.per_seed.size();
    if (r.failed) {
      os << ",,,,,,\n";
      continue;
    }
    const Scores m = r.mean(), sd = r.stddev();
    std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", m.pixel_accuracy, sd.pixel_accuracy,
                  m.mean_accuracy, sd.mean_accuracy, m.mean_iou, sd.mean_iou);
    os << buf;
  }
  return os.str();
}

template CellResult run_cell<float>(const AblationCell&, const std::vector<SegSample>&, const std::vector<SegSample>&,
                                    const TrainConfig&, int, const PredictOptions&);
template CellResult run_cell<double>(const AblationCell&, const std::vector<SegSample>&,
                                     const std::vector<SegSample>&, const TrainConfig&, int, const PredictOptions&);

}  // namespace pdseg

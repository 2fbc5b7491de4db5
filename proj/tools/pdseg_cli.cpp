// pdseg: dataset generation, PDAM aggregation, gradient checks, schedule
// dumps, training, evaluation and ablation grids from the command line.
//
// Every run writes <out-dir>/config.ini, a CLI11 config file holding every
// option of the chosen subcommand (defaults included). Re-running with
//   pdseg --config <out-dir>/config.ini [--out-dir elsewhere]
// repeats the run and reproduces its outputs byte for byte.
//
// Exit status: 0 success, 1 usage error, 2 numeric or I/O failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "pdseg/ablate.hpp"
#include "pdseg/data.hpp"
#include "pdseg/diffusion.hpp"
#include "pdseg/grad_suite.hpp"
#include "pdseg/image_io.hpp"
#include "pdseg/pdam.hpp"
#include "pdseg/segnet.hpp"
#include "pdseg/serialize.hpp"

namespace fs = std::filesystem;
using namespace pdseg;

namespace {

struct Global {
  std::uint64_t seed = 0;
  std::string dtype = "f32";
  fs::path out_dir = "pdseg_out";
};

struct ModelFlags {
  std::string fusion = "structured";
  std::string pd_source = "pdam:sharp,smooth,quantized";
  double w_rgb = 0.95, w_pd = 0.05;
  double lambda_c = 0.5, lambda_s = 0.5;
  std::vector<int> timesteps{0};
  int stem_c1 = 16, stem_c2 = 32, latent = 4;
  int unet_c1 = 16, unet_c2 = 32;
  int encoder_c1 = 16, encoder_c2 = 32;

  SegNetConfig build(int num_classes) const {
    SegNetConfig c;
    c.num_classes = num_classes;
    c.fusion = parse_fusion_mode(fusion);
    c.pd_source = PdSource::parse(pd_source);
    c.w_rgb = w_rgb;
    c.w_pd = w_pd;
    c.lambda_c = lambda_c;
    c.lambda_s = lambda_s;
    c.timesteps = timesteps;
    c.stem_c1 = stem_c1;
    c.stem_c2 = stem_c2;
    c.latent = latent;
    c.unet_c1 = unet_c1;
    c.unet_c2 = unet_c2;
    c.encoder = {encoder_c1, encoder_c2, latent};
    c.validate();
    return c;
  }
};

void add_model_flags(CLI::App* app, ModelFlags& m) {
  app->add_option("--fusion", m.fusion, "rgb_only | structured | manual | gaussian")->capture_default_str();
  app->add_option("--pd-source", m.pd_source, "none | single:<profile> | sum:<p,...> | pdam[:<p,...>]")
      ->capture_default_str();
  app->add_option("--w-rgb", m.w_rgb, "RGB weight (manual fusion)")->capture_default_str();
  app->add_option("--w-pd", m.w_pd, "pseudo-depth weight (manual fusion)")->capture_default_str();
  app->add_option("--lambda-c", m.lambda_c, "PDAM channel-attention weight")->capture_default_str();
  app->add_option("--lambda-s", m.lambda_s, "PDAM spatial-attention weight")->capture_default_str();
  app->add_option("--timesteps", m.timesteps, "diffusion step(s); several concatenate features")
      ->capture_default_str()
      ->delimiter(',');
  app->add_option("--stem-c1", m.stem_c1)->capture_default_str();
  app->add_option("--stem-c2", m.stem_c2)->capture_default_str();
  app->add_option("--latent", m.latent, "latent channels (stem and depth encoder)")->capture_default_str();
  app->add_option("--unet-c1", m.unet_c1)->capture_default_str();
  app->add_option("--unet-c2", m.unet_c2)->capture_default_str();
  app->add_option("--encoder-c1", m.encoder_c1)->capture_default_str();
  app->add_option("--encoder-c2", m.encoder_c2)->capture_default_str();
}

void add_train_flags(CLI::App* app, TrainConfig& t) {
  app->add_option("--iterations", t.iterations)->capture_default_str();
  app->add_option("--batch-size", t.batch_size)->capture_default_str();
  app->add_option("--lr-backbone", t.lr_backbone, "UNet learning rate")->capture_default_str();
  app->add_option("--lr-rest", t.lr_rest, "learning rate of every other parameter")->capture_default_str();
  app->add_option("--weight-decay", t.weight_decay)->capture_default_str();
  app->add_option("--lr-decay-step", t.lr_decay_step, "iteration of the single lr decay; 0 disables")
      ->capture_default_str();
  app->add_option("--lr-decay-factor", t.lr_decay_factor)->capture_default_str();
  app->add_option("--augment", t.augment, "random scale/crop/flip/brightness")->capture_default_str();
  app->add_option("--eval-interval", t.eval_interval, "trace row every N iterations; 0 = end only")
      ->capture_default_str();
  app->add_option("--ce-weight", t.loss.ce)->capture_default_str();
  app->add_option("--dice-weight", t.loss.dice)->capture_default_str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw IoError("cannot write " + path.string());
}

struct Dataset {
  Manifest manifest;
  std::vector<SegSample> train, test;
};

Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  d.manifest = read_manifest(dir / "manifest.txt");
  for (const auto& e : d.manifest.split("train")) d.train.push_back(load_sample(e, d.manifest.profiles));
  for (const auto& e : d.manifest.split("test")) d.test.push_back(load_sample(e, d.manifest.profiles));
  return d;
}

// ---------------------------------------------------------------- gen-data

struct GenDataFlags {
  int n_train = 40, n_test = 20;
  SceneConfig scene;
  std::vector<std::string> profiles{"sharp", "smooth", "quantized", "sensor"};
};

void run_gen_data(const Global& g, const GenDataFlags& f) {
  f.scene.validate();
  const auto all = default_profiles();
  std::vector<PerturbProfile> chosen;
  for (const auto& name : f.profiles) chosen.push_back(find_profile(all, name));
  const Manifest m = build_dataset(g.out_dir, f.n_train, f.n_test, f.scene, chosen, g.seed);
  std::printf("wrote %zu samples (%d train, %d test) to %s\n", m.entries.size(), f.n_train, f.n_test,
              g.out_dir.string().c_str());
}

// --------------------------------------------------------------- aggregate

struct AggregateFlags {
  std::vector<std::string> inputs;
  std::string params;
  double lambda_c = 0.5, lambda_s = 0.5;
  std::string out = "aggregated.pfm";
};

template <typename T>
void run_aggregate(const Global& g, const AggregateFlags& f) {
  PseudoDepthSet<T> set;
  for (const auto& in : f.inputs) {
    Image img = read_pfm(in);
    if (img.channels == 1) {  // replicate a grey map to the three input channels
      Image rgb(3, img.height, img.width);
      for (int c = 0; c < 3; ++c) std::copy(img.data.begin(), img.data.end(), rgb.data.begin() + c * img.plane_size());
      img = std::move(rgb);
    }
    set.maps.push_back(to_tensor<T>(img));
    set.source_tags.push_back(fs::path(in).stem().string());
  }
  set.validate();

  PdamConfig cfg;
  cfg.num_maps = static_cast<int>(set.size());
  cfg.lambda_c = f.lambda_c;
  cfg.lambda_s = f.lambda_s;
  ParamStore<T> store;
  Rng rng(g.seed);
  // Without trained parameters every attention weight is sigmoid(0) = 0.5.
  Pdam<T> pdam(cfg, store, "pdam", f.params.empty() ? Init::kZeros : Init::kFanIn, rng);
  if (!f.params.empty()) {
    const auto ckpt = load_checkpoint<T>(f.params);
    for (const auto& e : store.entries()) {
      if (!ckpt.params.contains(e.name) || ckpt.params.get(e.name).shape() != e.tensor.shape()) {
        throw ConfigError(f.params + " has no matching '" + e.name + "' (checkpoint PDAM must have L=" +
                          std::to_string(cfg.num_maps) + ")");
      }
    }
    store.load_values(ckpt.params);
  }
  const Tensor<T> agg = pdam.aggregate(set);
  const Image out = to_image(agg);
  const fs::path pfm = g.out_dir / f.out;
  write_pfm(pfm, out);
  save_tensor(fs::path(pfm).replace_extension(".dftn"), agg);
  // The PGM keeps channel 0 min-max stretched over the full 16-bit range.
  Image plane(1, out.height, out.width);
  std::copy_n(out.data.begin(), out.plane_size(), plane.data.begin());
  const auto [lo, hi] = std::minmax_element(plane.data.begin(), plane.data.end());
  write_pgm16(fs::path(pfm).replace_extension(".pgm"), plane, *lo, *hi > *lo ? *hi : *lo + 1.0f);
  std::printf("aggregated %zu maps -> %s (range %.6g..%.6g)\n", set.size(), pfm.string().c_str(), *lo, *hi);
}

// --------------------------------------------------------------- gradcheck

struct GradcheckFlags {
  std::string which = "all";
  int seeds = 10;
};

int run_gradcheck(const Global& g, const GradcheckFlags& f) {
  if (f.seeds < 1) throw ConfigError("--seeds must be >= 1");
  auto cases = gradsuite::op_grad_cases();
  cases.push_back(gradsuite::pipeline_grad_case());
  std::ostringstream csv;
  csv << "case,seed,worst_rel_error,probes,unresolved,status\n";
  int failures = 0, ran = 0;
  for (const auto& c : cases) {
    if (f.which != "all" && f.which != c.name) continue;
    ++ran;
    double worst = 0;
    bool ok = true;
    for (int s = 0; s < f.seeds; ++s) {
      const std::uint64_t seed = g.seed + static_cast<std::uint64_t>(s);
      auto [fn, inputs] = c.build(seed);
      const auto r = grad_check(fn, inputs, c.options);
      int unresolved = 0;
      for (int n : r.unresolved) unresolved += n;
      char buf[160];
      std::snprintf(buf, sizeof(buf), ",%llu,%.3e,%d,%d,%s\n", static_cast<unsigned long long>(seed), r.worst(),
                    r.probes, unresolved, r.passed ? "pass" : "fail");
      csv << c.name << buf;
      worst = std::max(worst, r.worst());
      ok = ok && r.passed;
    }
    std::printf("%-24s %s worst=%.3e over %d seeds\n", c.name.c_str(), ok ? "pass" : "FAIL", worst, f.seeds);
    failures += ok ? 0 : 1;
  }
  if (ran == 0) throw ConfigError("unknown gradcheck case '" + f.which + "'");
  write_text(g.out_dir / "gradcheck.csv", csv.str());
  return failures == 0 ? 0 : 2;
}

// ---------------------------------------------------------------- schedule

struct ScheduleFlags {
  int steps = 1000;
  double beta_start = 0.00085, beta_end = 0.012;
  std::string kind = "scaled_linear";
};

void run_schedule(const Global& g, const ScheduleFlags& f) {
  const auto s = build_schedule(f.steps, f.beta_start, f.beta_end, parse_schedule_kind(f.kind));
  write_text(g.out_dir / "schedule.txt", s.dump());
  const auto [a, b] = s.weights(0);
  std::printf("t=0: sqrt(abar)=%.6f sqrt(1-abar)=%.6f ratio=%.6f\n", a, b, b / a);
}

// ------------------------------------------------------------- train / eval

struct TrainFlags {
  std::string data;
  ModelFlags model;
  TrainConfig train;
};

template <typename T>
void run_train(const Global& g, TrainFlags f) {
  const Dataset d = load_dataset(f.data);
  f.train.seed = g.seed;
  f.train.validate();
  SegNet<T> model(f.model.build(d.manifest.scene.num_classes), g.seed);
  const auto r = train(model, d.train, f.train, &d.test);
  save_model(g.out_dir / "model.ckpt", model, f.train);
  write_text(g.out_dir / "trace.csv", trace_csv(r.trace));
  std::printf("trained %d iterations: ce %.4f -> %.4f, %d skipped steps\n", r.iterations_run, r.first_ce, r.last_ce,
              r.skipped_steps);
  if (r.diverged) throw NumericError("training diverged: " + r.divergence);
}

struct EvalFlags {
  std::string data, checkpoint;
  std::string split = "test";
  bool multiscale = false;
  bool flip = true;
  std::vector<double> scales{0.75, 1.0, 1.25};
};

template <typename T>
void run_eval(const Global& g, const EvalFlags& f) {
  const Dataset d = load_dataset(f.data);
  const SegNet<T> model = load_model<T>(f.checkpoint);
  PredictOptions po;
  po.multiscale = f.multiscale;
  po.flip = f.flip;
  po.scales = f.scales;
  const auto& samples = f.split == "train" ? d.train : d.test;
  const ConfusionMatrix cm = evaluate(model, samples, po);
  const Scores s = cm.scores();
  write_text(g.out_dir / "scores.csv", scores_csv({{f.split, s}}));
  std::ostringstream iou;
  iou << "class,iou\n";
  const auto per_class = cm.class_iou();
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu,%.6f\n", k, per_class[k]);
    iou << buf;
  }
  write_text(g.out_dir / "class_iou.csv", iou.str());
  std::printf("%s", scores_table({{f.split, s}}).c_str());
}

// ------------------------------------------------------------------ ablate

struct AblateFlags {
  std::string data;
  std::string grid = "depth-source";
  int seeds = 5;
  bool multiscale = false;
  ModelFlags model;
  TrainConfig train;
};

template <typename T>
void run_ablate(const Global& g, AblateFlags f) {
  const Dataset d = load_dataset(f.data);
  f.train.seed = g.seed;
  f.train.validate();
  const auto grid = parse_ablation_grid(f.grid);
  const auto cells = ablation_grid(grid, f.model.build(d.manifest.scene.num_classes));
  PredictOptions po;
  po.multiscale = f.multiscale;
  std::vector<CellResult> results;
  for (const auto& cell : cells) {
    results.push_back(run_cell<T>(cell, d.train, d.test, f.train, f.seeds, po));
    const auto& r = results.back();
    if (r.failed) {
      std::printf("%-14s failed: %s\n", r.name.c_str(), r.error.c_str());
    } else {
      const Scores m = r.mean(), sd = r.stddev();
      std::printf("%-14s mIoU %.4f ± %.4f  PA %.4f  MA %.4f\n", r.name.c_str(), m.mean_iou, sd.mean_iou,
                  m.pixel_accuracy, m.mean_accuracy);
    }
    std::fflush(stdout);
  }
  write_text(g.out_dir / ("ablate_" + to_string(grid) + ".csv"), ablation_csv(results));
}

// CLI11 writes every configurable subcommand's options; keep the globals and
// the section of the subcommand that actually ran.
std::string config_echo(const CLI::App& app) {
  const CLI::App* active = app.get_subcommands().front();
  std::istringstream in(app.config_to_str(true, false));
  std::ostringstream out;
  for (std::string line; std::getline(in, line);) {
    bool foreign = false;
    for (const CLI::App* sub : app.get_subcommands({})) {
      if (sub == active) continue;
      const std::string& n = sub->get_name();
      foreign = foreign || line.rfind(n + ".", 0) == 0 || line == "[" + n + "]";
    }
    if (!foreign) out << line << '\n';
  }
  return out.str();
}

template <typename F>
auto dispatch(const std::string& dtype, F&& f) {
  if (dtype == "f64") return f(double{});
  return f(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pseudo-depth segmentation toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "re-run from a config.ini written by an earlier run");

  Global g;
  app.add_option("--seed", g.seed, "global seed")->capture_default_str();
  app.add_option("--dtype", g.dtype, "f32 | f64")->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "output directory")->capture_default_str();

  GenDataFlags gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "render a synthetic dataset with pseudo-depth maps");
  gen_cmd->add_option("--n-train", gen.n_train)->capture_default_str();
  gen_cmd->add_option("--n-test", gen.n_test)->capture_default_str();
  gen_cmd->add_option("--image-size", gen.scene.image_size)->capture_default_str();
  gen_cmd->add_option("--classes", gen.scene.num_classes)->capture_default_str();
  gen_cmd->add_option("--min-objects", gen.scene.min_objects)->capture_default_str();
  gen_cmd->add_option("--max-objects", gen.scene.max_objects)->capture_default_str();
  gen_cmd->add_option("--texture-noise", gen.scene.texture_noise)->capture_default_str();
  gen_cmd->add_option("--ground-tilt", gen.scene.ground_tilt)->capture_default_str();
  gen_cmd->add_option("--profiles", gen.profiles, "pseudo-depth profiles to render")
      ->capture_default_str()
      ->delimiter(',');

  AggregateFlags agg;
  auto* agg_cmd = app.add_subcommand("aggregate", "fuse pseudo-depth maps with PDAM");
  agg_cmd->add_option("--inputs", agg.inputs, "PFM maps, all the same size")->required()->delimiter(',');
  agg_cmd->add_option("--params", agg.params, "checkpoint with pdam.* parameters (default: zero attention)");
  agg_cmd->add_option("--lambda-c", agg.lambda_c)->capture_default_str();
  agg_cmd->add_option("--lambda-s", agg.lambda_s)->capture_default_str();
  agg_cmd->add_option("--out", agg.out, "output PFM, relative to --out-dir")->capture_default_str();

  GradcheckFlags gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc_cmd->add_option("--case", gc.which, "case name or 'all'")->capture_default_str();
  gc_cmd->add_option("--seeds", gc.seeds)->capture_default_str();

  ScheduleFlags sch;
  auto* sch_cmd = app.add_subcommand("schedule", "dump the noise schedule");
  sch_cmd->add_option("--steps", sch.steps)->capture_default_str();
  sch_cmd->add_option("--beta-start", sch.beta_start)->capture_default_str();
  sch_cmd->add_option("--beta-end", sch.beta_end)->capture_default_str();
  sch_cmd->add_option("--kind", sch.kind, "linear | scaled_linear")->capture_default_str();

  TrainFlags tr;
  auto* tr_cmd = app.add_subcommand("train", "train a segmentation model");
  tr_cmd->add_option("--data", tr.data, "dataset directory from gen-data")->required();
  add_model_flags(tr_cmd, tr.model);
  add_train_flags(tr_cmd, tr.train);

  EvalFlags ev;
  auto* ev_cmd = app.add_subcommand("eval", "score a checkpoint");
  ev_cmd->add_option("--data", ev.data, "dataset directory from gen-data")->required();
  ev_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  ev_cmd->add_option("--split", ev.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  ev_cmd->add_option("--multiscale", ev.multiscale, "average over scales (and flips)")->capture_default_str();
  ev_cmd->add_option("--flip", ev.flip, "include flipped copies in multi-scale")->capture_default_str();
  ev_cmd->add_option("--scales", ev.scales)->capture_default_str()->delimiter(',');

  AblateFlags ab;
  auto* ab_cmd = app.add_subcommand("ablate", "train and score every cell of an ablation grid");
  ab_cmd->add_option("--data", ab.data, "dataset directory from gen-data")->required();
  ab_cmd->add_option("--grid", ab.grid, "weights | timestep | depth-source")
      ->check(CLI::IsMember({"weights", "timestep", "depth-source"}))
      ->capture_default_str();
  ab_cmd->add_option("--seeds", ab.seeds)->capture_default_str();
  ab_cmd->add_option("--multiscale", ab.multiscale)->capture_default_str();
  add_model_flags(ab_cmd, ab.model);
  add_train_flags(ab_cmd, ab.train);

  for (auto* sub : app.get_subcommands({})) sub->configurable();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    fs::create_directories(g.out_dir);
    write_text(g.out_dir / "config.ini", config_echo(app));
    int status = 0;
    if (*gen_cmd) run_gen_data(g, gen);
    if (*agg_cmd) dispatch(g.dtype, [&](auto t) { run_aggregate<decltype(t)>(g, agg); });
    if (*gc_cmd) status = run_gradcheck(g, gc);
    if (*sch_cmd) run_schedule(g, sch);
    if (*tr_cmd) dispatch(g.dtype, [&](auto t) { run_train<decltype(t)>(g, tr); });
    if (*ev_cmd) dispatch(g.dtype, [&](auto t) { run_eval<decltype(t)>(g, ev); });
    if (*ab_cmd) dispatch(g.dtype, [&](auto t) { run_ablate<decltype(t)>(g, ab); });
    return status;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

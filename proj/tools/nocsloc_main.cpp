// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <optional>

#include "nocsloc/dataset.hpp"
#include "nocsloc/fusion.hpp"
#include "nocsloc/io.hpp"
#include "nocsloc/metrics.hpp"
#include "nocsloc/parallel.hpp"
#include "nocsloc/serialize.hpp"

namespace fs = std::filesystem;
using namespace nocsloc;

namespace {

// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Json parse_json_file(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("file not found: " + path.string());
  try {
    return Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

int run_synth(const fs::path& spec_path, const fs::path& out_dir,
              std::optional<uint64_t> seed_override, int threads) {
  SceneSpec spec;
  try {
    spec = scene_from_json(parse_json_file(spec_path));
  } catch (const std::invalid_argument& e) {
    throw DataError("invalid scene spec " + spec_path.string() + ": " + e.what());
  }
  if (seed_override) spec.seed = *seed_override;
  const std::vector<GeneratedObject> objects = generate(spec, threads);
  write_dataset(out_dir, spec, objects);
  std::cout << "wrote " << objects.size() << " objects to " << out_dir.string() << " (seed "
            << spec.seed << ")\n";
  return 0;
}

DeformableShapeModel init_model(uint64_t seed, int num_bases) {
  return DeformableShapeModel::init(GridShape{}, num_bases, seed);
}

int run_fit(const fs::path& dataset_dir, const fs::path& out_model,
            const std::optional<fs::path>& config_path, const std::optional<fs::path>& report_path,
            std::optional<int> iterations, std::optional<uint64_t> seed, int threads,
            std::optional<int> samples_per_ray, int num_bases) {
  FitConfig cfg;
  if (config_path) {
    try {
      cfg = fit_config_from_json(parse_json_file(*config_path));
    } catch (const std::invalid_argument& e) {
      throw DataError("invalid fit config: " + std::string(e.what()));
    }
  }
  if (iterations) cfg.iterations = *iterations;
  if (seed) cfg.seed = *seed;
  if (samples_per_ray) cfg.samples_per_ray = *samples_per_ray;
  cfg.threads = threads;
  cfg.validate();

  const Dataset dataset = load_dataset(dataset_dir);
  std::vector<TrainingObject> objects;
  objects.reserve(dataset.objects.size());
  bool any_lidar = false, any_licomp = false;
  for (const auto& obj : dataset.objects) {
    objects.push_back(obj.training);
    any_lidar |= !obj.training.lidar_points.empty();
    any_licomp |= !obj.training.completion_points.empty();
  }
  if (cfg.weight_lidar > 0.0 && !any_lidar)
    std::cerr << "warning: lidar weight is " << cfg.weight_lidar
              << " but the dataset has no lidar points; lidar loss will be 0\n";
  if (cfg.weight_licomp > 0.0 && !any_licomp && cfg.weight_lidar != cfg.weight_licomp)
    std::cerr << "warning: completion weight set but the dataset has no completion points\n";

  DeformableShapeModel shape = init_model(Rng(cfg.seed).fork(101).seed(), num_bases);
  DeformableShapeModel color = init_model(Rng(cfg.seed).fork(102).seed(), num_bases);
  const FitResult result = fit(objects, std::move(shape), std::move(color), cfg);

  Checkpoint ckpt;
  ckpt.shape_model = result.shape_model;
  ckpt.color_model = result.color_model;
  ckpt.shape_coeffs = result.shape_coeffs;
  ckpt.color_coeffs = result.color_coeffs;
  ckpt.seed = cfg.seed;
  save_checkpoint(out_model, ckpt);

  const fs::path report = report_path.value_or(fs::path(out_model).replace_extension(".csv"));
  write_text_file(report, result.report.to_csv());

  std::cout << "fit " << objects.size() << " objects for " << cfg.iterations << " iterations in "
            << result.report.wall_seconds << " s (seed " << cfg.seed << ")\n"
            << "checkpoint: " << out_model.string() << "\nreport: " << report.string() << "\n";
  if (!result.report.iterations.empty())
    std::cout << "final total loss: " << result.report.iterations.back().total << "\n";
  return 0;
}

struct LocalizeRecord {
  bool solved = false;
  std::string error;
  PnPSolution solution;
  std::optional<FusedEstimate> fused;
  Json jacobian_stats;
  ObjectMetrics metrics;
};

Json jacobian_summary(const JacobianMap& map) {
  if (map.empty()) return Json{{"count", 0}};
  double mean[4] = {0, 0, 0, 0};
  double max_abs[4] = {0, 0, 0, 0};
  for (const auto& e : map) {
    const double vals[4] = {e.drx_dtx, e.drx_dtz, e.dry_dty, e.dry_dtz};
    for (int k = 0; k < 4; ++k) {
      mean[k] += vals[k] / static_cast<double>(map.size());
      max_abs[k] = std::max(max_abs[k], std::abs(vals[k]));
    }
  }
  return Json{{"count", map.size()},
              {"mean", Json::array({mean[0], mean[1], mean[2], mean[3]})},
              {"max_abs", Json::array({max_abs[0], max_abs[1], max_abs[2], max_abs[3]})}};
}

int run_localize(const fs::path& dataset_dir, const std::string& source,
                 const std::optional<fs::path>& model_path, bool noisy,
                 std::optional<double> fusion_weight, const fs::path& out_dir, double huber_delta,
                 int yaw_hypotheses, std::optional<int> samples_per_ray, int threads) {
  if (source != "gt-nocs" && source != "rendered-nocs")
    throw UsageError("--source must be gt-nocs or rendered-nocs");
  if (source == "rendered-nocs" && !model_path)
    throw UsageError("--source rendered-nocs requires --model");

  const Dataset dataset = load_dataset(dataset_dir);
  std::optional<Checkpoint> ckpt;
  if (model_path) {
    if (!fs::exists(*model_path)) throw DataError("checkpoint not found: " + model_path->string());
    ckpt = load_checkpoint(*model_path);
  }

  RenderConfig rcfg;
  if (samples_per_ray) rcfg.samples_per_ray = *samples_per_ray;

  const int n = static_cast<int>(dataset.objects.size());
  std::vector<LocalizeRecord> records(n);
  std::vector<Box3D> gt_boxes(n);

  // Objects solve independently; output order stays fixed by index.
  const int object_threads = std::min(threads, n);
  const int render_threads = n > 1 ? 1 : threads;
  parallel_for(n, object_threads, [&](int i) {
    const GeneratedObject& obj = dataset.objects[i];
    gt_boxes[i] = obj.training.gt_box;
    LocalizeRecord& rec = records[i];

    PnPProblem problem;
    problem.size = obj.size_pred;
    problem.settings.huber_delta = huber_delta;
    problem.settings.yaw_hypotheses = yaw_hypotheses;

    if (source == "gt-nocs") {
      problem.correspondences =
          noisy ? obj.noisy_correspondences : obj.clean_correspondences;
    } else {
      // Render the NOCS map from the checkpointed shape at the GT box;
      // the rendered occupancy doubles as the foreground probability
      // that weights each pixel.
      const VecX z_shape = i < static_cast<int>(ckpt->shape_coeffs.size())
                               ? ckpt->shape_coeffs[i].mean
                               : VecX::Zero(ckpt->shape_model.num_bases());
      const VecX z_color = i < static_cast<int>(ckpt->color_coeffs.size())
                               ? ckpt->color_coeffs[i].mean
                               : VecX::Zero(ckpt->color_model.num_bases());
      const ShapeInstance shape_inst = make_instance(ckpt->shape_model, z_shape);
      const ShapeInstance color_inst = make_instance(ckpt->color_model, z_color);
      const RenderedMaps maps = render_crop(shape_inst, color_inst, obj.training.gt_box,
                                            obj.training.camera, obj.training.crop, rcfg,
                                            /*seed=*/0, render_threads);
      for (int y = 0; y < maps.crop.height; ++y) {
        for (int x = 0; x < maps.crop.width; ++x) {
          const RenderedPixel& px = maps.at(x, y);
          if (!px.nocs_valid) continue;
          Correspondence c;
          c.p = pixel_to_normalized(maps.crop.x0 + x + 0.5, maps.crop.y0 + y + 0.5,
                                    obj.training.camera);
          c.nocs = px.nocs;
          c.weight = Vec2(px.occupancy, px.occupancy);
          problem.correspondences.push_back(c);
        }
      }
    }

    try {
      rec.solution = solve(problem);
      rec.solved = true;
    } catch (const std::exception& e) {
      rec.error = e.what();
      return;
    }
    rec.jacobian_stats = jacobian_summary(jacobian_map(rec.solution, problem));

    Box3D predicted{rec.solution.pose, problem.size};
    if (fusion_weight) {
      FusionInput fin;
      fin.solution = rec.solution;
      fin.size = problem.size;
      fin.d_pred = obj.d_pred;
      fin.w = *fusion_weight;
      const FusedEstimate fused = scale_fuse(fin);
      rec.fused = fused;
      predicted = Box3D{fused.pose(), fused.size};
    }
    rec.metrics = evaluate_box(predicted, gt_boxes[i]);
  });

  fs::create_directories(out_dir);
  Json poses = Json::array();
  MetricReport report;
  int solved = 0;
  for (int i = 0; i < n; ++i) {
    const LocalizeRecord& rec = records[i];
    Json entry{{"object", i}, {"solved", rec.solved}};
    if (rec.solved) {
      ++solved;
      entry["solution"] = to_json(rec.solution);
      entry["jacobian_map"] = rec.jacobian_stats;
      if (rec.fused) {
        entry["fused"] = Json{{"pose", to_json(rec.fused->pose())},
                              {"size", to_json(rec.fused->size)},
                              {"scale", rec.fused->scale}};
      }
      entry["metrics"] = Json{{"iou3d", rec.metrics.iou3d},
                              {"iou_bev", rec.metrics.iou_bev},
                              {"depth_abs_error", rec.metrics.depth_abs_error},
                              {"yaw_error_deg", rec.metrics.yaw_error_deg},
                              {"translation_error_m", rec.metrics.translation_error_m}};
      report.per_object.push_back(rec.metrics);
    } else {
      entry["error"] = rec.error;
    }
    poses.push_back(entry);
  }

  Json out{{"schema_version", kSchemaVersion},
           {"dataset_seed", dataset.seed},
           {"source", source},
           {"noisy", noisy},
           {"fusion_weight", fusion_weight ? Json(*fusion_weight) : Json(nullptr)},
           {"objects", poses}};
  write_text_file(out_dir / "poses.json", out.dump(2) + "\n");
  write_text_file(out_dir / "metrics.csv", report.to_csv());
  const ObjectMetrics mean = report.mean();
  Json metrics_json{{"schema_version", kSchemaVersion},
                    {"dataset_seed", dataset.seed},
                    {"solved", solved},
                    {"total", n},
                    {"mean",
                     Json{{"iou3d", mean.iou3d},
                          {"iou_bev", mean.iou_bev},
                          {"depth_abs_error", mean.depth_abs_error},
                          {"yaw_error_deg", mean.yaw_error_deg},
                          {"translation_error_m", mean.translation_error_m}}}};
  write_text_file(out_dir / "metrics.json", metrics_json.dump(2) + "\n");

  std::cout << "localized " << solved << "/" << n << " objects; mean yaw error "
            << mean.yaw_error_deg << " deg, mean depth error " << mean.depth_abs_error << " m\n"
            << "outputs in " << out_dir.string() << "\n";
  return 0;
}

int run_render(const fs::path& model_path, const fs::path& view_path, const fs::path& out_dir,
               std::optional<int> samples_per_ray, int threads) {
  if (!fs::exists(model_path)) throw DataError("checkpoint not found: " + model_path.string());
  Checkpoint ckpt;
  try {
    ckpt = load_checkpoint(model_path);
  } catch (const std::exception& e) {
    throw DataError("invalid checkpoint: " + std::string(e.what()));
  }
  const Json view = parse_json_file(view_path);
  CameraIntrinsics camera;
  Box3D box;
  try {
    camera = camera_from_json(view.at("camera"));
    box = box_from_json(view.at("box"));
  } catch (const std::exception& e) {
    throw DataError("invalid view file: " + std::string(e.what()));
  }
  const int object_index = view.value("object_index", 0);

  CropRect crop;
  if (view.contains("crop")) {
    const Json& c = view.at("crop");
    crop = {c.at("x0").get<int>(), c.at("y0").get<int>(), c.at("width").get<int>(),
            c.at("height").get<int>()};
  } else {
    double min_u = 1e30, max_u = -1e30, min_v = 1e30, max_v = -1e30;
    for (const Vec3& corner : box.corners()) {
      if (!(corner.z() > 0.0)) throw DataError("render: box behind the camera");
      const Vec2 px = normalized_to_pixel(corner / corner.z(), camera);
      min_u = std::min(min_u, px.x());
      max_u = std::max(max_u, px.x());
      min_v = std::min(min_v, px.y());
      max_v = std::max(max_v, px.y());
    }
    const double margin = 0.08 * std::max(max_u - min_u, max_v - min_v);
    crop.x0 = static_cast<int>(std::floor(min_u - margin));
    crop.y0 = static_cast<int>(std::floor(min_v - margin));
    crop.width = static_cast<int>(std::ceil(max_u + margin)) - crop.x0;
    crop.height = static_cast<int>(std::ceil(max_v + margin)) - crop.y0;
  }

  auto coeff_or_zero = [&](const std::vector<DeformationCoefficients>& cs, int bases) {
    return object_index >= 0 && object_index < static_cast<int>(cs.size()) ? cs[object_index].mean
                                                                           : VecX::Zero(bases);
  };
  const ShapeInstance shape_inst =
      make_instance(ckpt.shape_model, coeff_or_zero(ckpt.shape_coeffs, ckpt.shape_model.num_bases()));
  const ShapeInstance color_inst =
      make_instance(ckpt.color_model, coeff_or_zero(ckpt.color_coeffs, ckpt.color_model.num_bases()));

  RenderConfig rcfg;  // jitter off: deterministic supervision rendering
  if (samples_per_ray) rcfg.samples_per_ray = *samples_per_ray;
  const RenderedMaps maps =
      render_crop(shape_inst, color_inst, box, camera, crop, rcfg, /*seed=*/0, threads);

  fs::create_directories(out_dir);
  const size_t n_px = maps.pixels.size();
  std::vector<double> occ(n_px), col(n_px * 3), noc(n_px * 3);
  std::vector<uint8_t> occ8(n_px);
  std::vector<Vec3> col_v(n_px), noc_v(n_px);
  std::vector<uint8_t> valid(n_px);
  for (size_t i = 0; i < n_px; ++i) {
    const RenderedPixel& px = maps.pixels[i];
    occ[i] = px.occupancy;
    occ8[i] = static_cast<uint8_t>(std::clamp(std::lround(px.occupancy * 255.0), 0l, 255l));
    for (int k = 0; k < 3; ++k) {
      col[3 * i + k] = px.color[k];
      noc[3 * i + k] = px.nocs_valid ? px.nocs[k] : 0.0;
    }
    col_v[i] = px.color;
    noc_v[i] = px.nocs;
    valid[i] = px.nocs_valid ? 1 : 0;
  }
  const uint64_t h = crop.height, w = crop.width;
  write_tensor(out_dir / "occupancy.nlt", Tensor::from_f64({h, w}, std::move(occ)));
  write_tensor(out_dir / "color.nlt", Tensor::from_f64({h, w, 3}, std::move(col)));
  write_tensor(out_dir / "nocs.nlt", Tensor::from_f64({h, w, 3}, std::move(noc)));
  write_pgm(out_dir / "occupancy.pgm", crop.width, crop.height, occ8);
  write_ppm(out_dir / "color.ppm", crop.width, crop.height, preview_color(col_v));
  write_ppm(out_dir / "nocs.ppm", crop.width, crop.height, preview_nocs(noc_v, valid));
  std::cout << "rendered " << crop.width << "x" << crop.height << " maps to " << out_dir.string()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NOCS-based monocular 3D object localization toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::optional<uint64_t> seed;
  int threads = 1;
  app.add_option("--seed", seed, "Override the seed of the invoked command");
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset from a scene spec");
  fs::path spec_path, synth_out;
  synth_cmd->add_option("spec", spec_path, "SceneSpec JSON")->required();
  synth_cmd->add_option("out_dir", synth_out, "Output dataset directory")->required();

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Fit shape and color models to a dataset");
  fs::path fit_dataset, fit_out = "model.nlck";
  std::optional<fs::path> fit_config, fit_report;
  std::optional<int> fit_iterations, fit_samples;
  int fit_bases = 0;
  fit_cmd->add_option("dataset", fit_dataset, "Dataset directory")->required();
  fit_cmd->add_option("--out", fit_out, "Checkpoint output path");
  fit_cmd->add_option("--config", fit_config, "FitConfig JSON");
  fit_cmd->add_option("--report", fit_report, "FitReport CSV path (default: <out>.csv)");
  fit_cmd->add_option("--iterations", fit_iterations, "Override iteration count");
  fit_cmd->add_option("--samples-per-ray", fit_samples, "Override samples per ray");
  fit_cmd->add_option("--bases", fit_bases, "Number of deformation bases");

  // localize
  auto* loc_cmd = app.add_subcommand("localize", "Solve object poses from NOCS correspondences");
  fs::path loc_dataset, loc_out = "localize_out";
  std::string loc_source = "gt-nocs";
  std::optional<fs::path> loc_model;
  std::optional<double> loc_fusion;
  std::optional<int> loc_samples;
  bool loc_noisy = false;
  double loc_huber = 0.005;
  int loc_hypotheses = 16;
  loc_cmd->add_option("dataset", loc_dataset, "Dataset directory")->required();
  loc_cmd->add_option("--source", loc_source, "gt-nocs | rendered-nocs");
  loc_cmd->add_option("--model", loc_model, "Checkpoint (required for rendered-nocs)");
  loc_cmd->add_flag("--noisy", loc_noisy, "Use the noise-corrupted correspondences");
  loc_cmd->add_option("--fusion-weight", loc_fusion, "Scale-fusion weight in [0,1]");
  loc_cmd->add_option("--out", loc_out, "Output directory");
  loc_cmd->add_option("--huber-delta", loc_huber, "Huber threshold, normalized units");
  loc_cmd->add_option("--yaw-hypotheses", loc_hypotheses, "Initialization hypothesis count");
  loc_cmd->add_option("--samples-per-ray", loc_samples, "Samples per ray for rendered-nocs");

  // render
  auto* render_cmd = app.add_subcommand("render", "Render occupancy/color/NOCS maps");
  fs::path render_model, render_view, render_out = "render_out";
  std::optional<int> render_samples;
  render_cmd->add_option("--model", render_model, "Checkpoint")->required();
  render_cmd->add_option("--view", render_view, "View JSON (camera + box)")->required();
  render_cmd->add_option("--out", render_out, "Output directory");
  render_cmd->add_option("--samples-per-ray", render_samples, "Samples per ray");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*synth_cmd) return run_synth(spec_path, synth_out, seed, threads);
    if (*fit_cmd)
      return run_fit(fit_dataset, fit_out, fit_config, fit_report, fit_iterations, seed, threads,
                     fit_samples, fit_bases);
    if (*loc_cmd)
      return run_localize(loc_dataset, loc_source, loc_model, loc_noisy, loc_fusion, loc_out,
                          loc_huber, loc_hypotheses, loc_samples, threads);
    if (*render_cmd)
      return run_render(render_model, render_view, render_out, render_samples, threads);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}

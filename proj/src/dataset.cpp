// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include "nocsloc/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "nocsloc/io.hpp"
#include "nocsloc/serialize.hpp"

namespace nocsloc {

namespace {

namespace fs = std::filesystem;

uint8_t to_byte(double v) {
  return static_cast<uint8_t>(std::clamp(std::lround(v * 255.0), 0l, 255l));
}

std::string object_dir_name(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "object_%03u", static_cast<unsigned>(index));
  return buf;
}

Tensor correspondences_tensor(const std::vector<Correspondence>& corr) {
  std::vector<double> data;
  data.reserve(corr.size() * 7);
  for (const auto& c : corr) {
    data.push_back(c.p.x());
    data.push_back(c.p.y());
    data.push_back(c.nocs.x());
    data.push_back(c.nocs.y());
    data.push_back(c.nocs.z());
    data.push_back(c.weight.x());
    data.push_back(c.weight.y());
  }
  return Tensor::from_f64({corr.size(), 7}, std::move(data));
}

std::vector<Correspondence> correspondences_from_tensor(const Tensor& t) {
  std::vector<Correspondence> corr(t.dims[0]);
  for (size_t i = 0; i < corr.size(); ++i) {
    const double* row = t.f64.data() + i * 7;
    corr[i].p = Vec3(row[0], row[1], 1.0);
    corr[i].nocs = Vec3(row[2], row[3], row[4]);
    corr[i].weight = Vec2(row[5], row[6]);
  }
  return corr;
}

Tensor targets_tensor(const std::vector<NocsTarget>& targets) {
  std::vector<double> data;
  data.reserve(targets.size() * 5);
  for (const auto& t : targets) {
    data.push_back(t.x);
    data.push_back(t.y);
    data.push_back(t.nocs.x());
    data.push_back(t.nocs.y());
    data.push_back(t.nocs.z());
  }
  return Tensor::from_f64({targets.size(), 5}, std::move(data));
}

std::vector<NocsTarget> targets_from_tensor(const Tensor& t) {
  std::vector<NocsTarget> targets(t.dims[0]);
  for (size_t i = 0; i < targets.size(); ++i) {
    const double* row = t.f64.data() + i * 5;
    targets[i] = {static_cast<int>(row[0]), static_cast<int>(row[1]),
                  Vec3(row[2], row[3], row[4])};
  }
  return targets;
}

}  // namespace

void write_dataset(const fs::path& dir, const SceneSpec& spec,
                   const std::vector<GeneratedObject>& objects) {
  fs::create_directories(dir);
  Json scene = to_json(spec);
  scene["num_objects"] = objects.size();
  write_text_file(dir / "scene.json", scene.dump(2) + "\n");

  for (size_t i = 0; i < objects.size(); ++i) {
    const GeneratedObject& obj = objects[i];
    const TrainingObject& tr = obj.training;
    const fs::path odir = dir / object_dir_name(i);
    fs::create_directories(odir);
    const size_t w = tr.crop.width;
    const size_t h = tr.crop.height;

    Json meta{{"schema_version", kSchemaVersion},
              {"gt_box", to_json(tr.gt_box)},
              {"camera", to_json(tr.camera)},
              {"crop", Json{{"x0", tr.crop.x0},
                            {"y0", tr.crop.y0},
                            {"width", tr.crop.width},
                            {"height", tr.crop.height}}},
              {"basis_eligible", tr.basis_eligible},
              {"d_pred", obj.d_pred},
              {"size_pred", to_json(obj.size_pred)},
              {"projected_height_px", obj.projected_height_px},
              {"object_seed", obj.object_seed},
              {"num_correspondences", obj.clean_correspondences.size()},
              {"num_lidar", tr.lidar_points.size()},
              {"num_licomp", tr.completion_points.size()}};
    write_text_file(odir / "meta.json", meta.dump(2) + "\n");

    std::vector<double> colors;
    colors.reserve(w * h * 3);
    for (const auto& c : tr.colors) {
      colors.push_back(c.x());
      colors.push_back(c.y());
      colors.push_back(c.z());
    }
    write_tensor(odir / "color.nlt", Tensor::from_f64({h, w, 3}, std::move(colors)));

    std::vector<uint8_t> mask(tr.mask.labels.size());
    for (size_t k = 0; k < mask.size(); ++k) mask[k] = static_cast<uint8_t>(tr.mask.labels[k]);
    write_tensor(odir / "mask.nlt", Tensor::from_u8({h, w}, std::move(mask)));

    std::vector<double> nocs;
    nocs.reserve(w * h * 3);
    for (const auto& o : obj.gt_nocs) {
      nocs.push_back(o.x());
      nocs.push_back(o.y());
      nocs.push_back(o.z());
    }
    write_tensor(odir / "gt_nocs.nlt", Tensor::from_f64({h, w, 3}, std::move(nocs)));
    write_tensor(odir / "gt_hit.nlt", Tensor::from_u8({h, w}, obj.gt_hit));

    write_tensor(odir / "corr_clean.nlt", correspondences_tensor(obj.clean_correspondences));
    write_tensor(odir / "corr_noisy.nlt", correspondences_tensor(obj.noisy_correspondences));
    std::vector<double> px;
    px.reserve(obj.correspondence_pixels.size() * 2);
    for (const auto& p : obj.correspondence_pixels) {
      px.push_back(p.x);
      px.push_back(p.y);
    }
    write_tensor(odir / "corr_pixels.nlt",
                 Tensor::from_f64({obj.correspondence_pixels.size(), 2}, std::move(px)));
    write_tensor(odir / "lidar.nlt", targets_tensor(tr.lidar_points));
    write_tensor(odir / "licomp.nlt", targets_tensor(tr.completion_points));

    write_ppm(odir / "color.ppm", tr.crop.width, tr.crop.height, preview_color(tr.colors));
    write_pgm(odir / "mask.pgm", tr.crop.width, tr.crop.height, preview_mask(tr.mask));
    write_ppm(odir / "nocs.ppm", tr.crop.width, tr.crop.height,
              preview_nocs(obj.gt_nocs, obj.gt_hit));
  }
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path scene_path = dir / "scene.json";
  if (!fs::exists(scene_path))
    throw std::runtime_error("load_dataset: missing " + scene_path.string());
  const Json scene = Json::parse(read_text_file(scene_path));
  Dataset dataset;
  dataset.seed = scene.value("seed", uint64_t{0});
  const size_t num_objects = scene.at("num_objects").get<size_t>();

  for (size_t i = 0; i < num_objects; ++i) {
    const fs::path odir = dir / object_dir_name(i);
    const Json meta = Json::parse(read_text_file(odir / "meta.json"));
    GeneratedObject obj;
    TrainingObject& tr = obj.training;
    tr.gt_box = box_from_json(meta.at("gt_box"));
    tr.camera = camera_from_json(meta.at("camera"));
    const Json& crop = meta.at("crop");
    tr.crop = {crop.at("x0").get<int>(), crop.at("y0").get<int>(), crop.at("width").get<int>(),
               crop.at("height").get<int>()};
    tr.basis_eligible = meta.at("basis_eligible").get<bool>();
    obj.d_pred = meta.at("d_pred").get<double>();
    obj.size_pred = size_from_json(meta.at("size_pred"));
    obj.projected_height_px = meta.value("projected_height_px", 0.0);
    obj.object_seed = meta.value("object_seed", uint64_t{0});

    const Tensor colors = read_tensor(odir / "color.nlt");
    tr.colors.resize(colors.dims[0] * colors.dims[1]);
    for (size_t k = 0; k < tr.colors.size(); ++k)
      tr.colors[k] = Vec3(colors.f64[3 * k], colors.f64[3 * k + 1], colors.f64[3 * k + 2]);

    const Tensor mask = read_tensor(odir / "mask.nlt");
    tr.mask.width = tr.crop.width;
    tr.mask.height = tr.crop.height;
    tr.mask.labels.resize(mask.u8.size());
    for (size_t k = 0; k < mask.u8.size(); ++k)
      tr.mask.labels[k] = static_cast<MaskLabel>(mask.u8[k]);

    const Tensor nocs = read_tensor(odir / "gt_nocs.nlt");
    obj.gt_nocs.resize(nocs.dims[0] * nocs.dims[1]);
    for (size_t k = 0; k < obj.gt_nocs.size(); ++k)
      obj.gt_nocs[k] = Vec3(nocs.f64[3 * k], nocs.f64[3 * k + 1], nocs.f64[3 * k + 2]);
    obj.gt_hit = read_tensor(odir / "gt_hit.nlt").u8;

    obj.clean_correspondences = correspondences_from_tensor(read_tensor(odir / "corr_clean.nlt"));
    obj.noisy_correspondences = correspondences_from_tensor(read_tensor(odir / "corr_noisy.nlt"));
    const Tensor px = read_tensor(odir / "corr_pixels.nlt");
    obj.correspondence_pixels.resize(px.dims[0]);
    for (size_t k = 0; k < obj.correspondence_pixels.size(); ++k)
      obj.correspondence_pixels[k] = {static_cast<int>(px.f64[2 * k]),
                                      static_cast<int>(px.f64[2 * k + 1])};
    tr.lidar_points = targets_from_tensor(read_tensor(odir / "lidar.nlt"));
    tr.completion_points = targets_from_tensor(read_tensor(odir / "licomp.nlt"));
    dataset.objects.push_back(std::move(obj));
  }
  return dataset;
}

std::vector<std::array<uint8_t, 3>> preview_color(const std::vector<Vec3>& colors) {
  std::vector<std::array<uint8_t, 3>> out(colors.size());
  for (size_t i = 0; i < colors.size(); ++i)
    out[i] = {to_byte(colors[i].x()), to_byte(colors[i].y()), to_byte(colors[i].z())};
  return out;
}

std::vector<uint8_t> preview_mask(const TriMask& mask) {
  std::vector<uint8_t> out(mask.labels.size());
  for (size_t i = 0; i < out.size(); ++i) {
    switch (mask.labels[i]) {
      case MaskLabel::foreground: out[i] = 255; break;
      case MaskLabel::background: out[i] = 0; break;
      case MaskLabel::unknown: out[i] = 128; break;
    }
  }
  return out;
}

std::vector<std::array<uint8_t, 3>> preview_nocs(const std::vector<Vec3>& nocs,
                                                 const std::vector<uint8_t>& valid) {
  std::vector<std::array<uint8_t, 3>> out(nocs.size(), {0, 0, 0});
  for (size_t i = 0; i < nocs.size(); ++i) {
    if (i < valid.size() && !valid[i]) continue;
    out[i] = {to_byte(nocs[i].x() + 0.5), to_byte(nocs[i].y() + 0.5), to_byte(nocs[i].z() + 0.5)};
  }
  return out;
}

}  // namespace nocsloc

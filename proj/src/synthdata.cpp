#include "seg2eye/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "seg2eye/image_io.hpp"
#include "seg2eye/rng.hpp"

namespace seg2eye {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr std::uint64_t kPersonStream = 0x7065727332ull;
constexpr std::uint64_t kPoseStream = 0x706f736531ull;
constexpr std::uint64_t kNoiseStream = 0x6e6f697365ull;

// Per-pixel noise in [-1, 1], independent of evaluation order.
double pixel_noise(std::uint64_t noise_seed, int y, int x) {
  std::uint64_t z = Rng::derive(noise_seed, static_cast<std::uint64_t>(y),
                                static_cast<std::uint64_t>(x));
  return 2.0 * (static_cast<double>(z >> 11) * 0x1.0p-53) - 1.0;
}

double internal_from_brightness(double u) { return 2.0 * std::clamp(u, 0.0, 1.0) - 1.0; }
}  // namespace

PersonStyleParams sample_person(int person_id, std::uint64_t seed) {
  Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(person_id), kPersonStream));
  PersonStyleParams p;
  p.base_brightness = rng.uniform(0.2, 0.8);
  p.iris_shade = rng.uniform(0.1, 0.9);
  p.sclera_texture_amp = rng.uniform(0.0, 0.15);
  p.skin_tone = rng.uniform(0.2, 0.9);
  p.iris_radius_ratio = rng.uniform(0.35, 0.55);
  p.mode = person_id % 2 == 0 ? EyeMode::left : EyeMode::right;
  return p;
}

EyePose sample_pose(std::uint64_t seed, int person_id, int image_index) {
  Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(person_id),
                      static_cast<std::uint64_t>(image_index), kPoseStream));
  EyePose pose;
  pose.gaze_x = rng.uniform(-0.3, 0.3);
  pose.gaze_y = rng.uniform(-0.3, 0.3);
  pose.eyelid_openness = rng.uniform(0.3, 1.0);
  return pose;
}

namespace {

// Canonical (left-mode) rendering; right mode is a horizontal mirror of the
// left geometry with the horizontal gaze negated.
void render_canonical(const PersonStyleParams& style, const EyePose& pose, int h, int w,
                      std::uint64_t noise_seed, GrayImage& img, SegMask& mask) {
  img = GrayImage(h, w);
  mask = SegMask(h, w);

  // Eyelid-clipped sclera ellipse, slightly off-center toward the nasal corner.
  double ex = 0.47 * w;
  double ey = 0.5 * h;
  double ea = 0.42 * w;
  double eb = 0.30 * h * pose.eyelid_openness;

  double cx = 0.5 * w + pose.gaze_x * w;
  double cy = 0.5 * h + pose.gaze_y * h;
  double iris_r = style.iris_radius_ratio * 0.5 * std::min(h, w);
  double pupil_r = 0.45 * iris_r;  // strictly inside the iris by construction

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double dxe = (x - ex) / ea;
      double dye = (y - ey) / eb;
      bool in_eye = dxe * dxe + dye * dye <= 1.0;
      double dxi = x - cx;
      double dyi = y - cy;
      double ri = std::sqrt(dxi * dxi + dyi * dyi);

      int cls = 0;
      if (in_eye) {
        cls = 1;
        if (ri <= iris_r) cls = 2;
        if (ri <= pupil_r) cls = 3;
      }
      mask.at(y, x) = static_cast<std::uint8_t>(cls);

      double noise = pixel_noise(noise_seed, y, x);
      // Region brightness bands are deliberately contrastive: sclera is the
      // brightest region, skin sits in the middle, iris is dark, pupil
      // darkest. Person parameters modulate within each band.
      double u;
      switch (cls) {
        case 1:
          u = 0.55 + 0.35 * style.base_brightness + style.sclera_texture_amp * noise;
          break;
        case 2:
          u = 0.10 + 0.40 * style.iris_shade + 0.04 * std::sin(10.0 * ri / iris_r) +
              0.5 * style.sclera_texture_amp * noise;
          break;
        case 3:
          u = 0.05 + 0.02 * noise;
          break;
        default:
          u = 0.35 + 0.30 * style.skin_tone + 0.02 * noise;
      }
      img.at(y, x) = internal_from_brightness(u);
    }
}

}  // namespace

void render_eye(const PersonStyleParams& style, const EyePose& pose, int h, int w,
                std::uint64_t noise_seed, GrayImage& img, SegMask& mask) {
  if (h < 32 || w < 32) throw std::invalid_argument("render_eye: resolution must be >= 32");
  if (style.mode == EyeMode::left) {
    render_canonical(style, pose, h, w, noise_seed, img, mask);
    return;
  }
  EyePose mirrored = pose;
  mirrored.gaze_x = -pose.gaze_x;
  GrayImage tmp_img;
  SegMask tmp_mask;
  render_canonical(style, mirrored, h, w, noise_seed, tmp_img, tmp_mask);
  img = GrayImage(h, w);
  mask = SegMask(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(y, x) = tmp_img.at(y, w - 1 - x);
      mask.at(y, x) = tmp_mask.at(y, w - 1 - x);
    }
}

SegMask load_mask(const std::string& path) {
  int h = 0, w = 0;
  auto px = read_png_gray(path, h, w);
  SegMask m(h, w);
  for (size_t i = 0; i < px.size(); ++i) {
    if (px[i] >= kNumClasses)
      throw std::runtime_error("load_mask: invalid class value in " + path);
    m.data[i] = px[i];
  }
  return m;
}

GrayImage load_image(const std::string& path) {
  int h = 0, w = 0;
  auto px = read_png_gray(path, h, w);
  return to_internal(px, h, w);
}

void save_mask(const std::string& path, const SegMask& mask) {
  write_png_gray(path, mask.data, mask.height, mask.width);
}

void save_image(const std::string& path, const GrayImage& img) {
  write_png_gray(path, to_disk(img), img.height, img.width);
}

DatasetIndex build_dataset(const DatasetConfig& config) {
  DatasetIndex index;
  index.seed = config.seed;
  index.root = config.root;
  std::error_code ec;
  fs::create_directories(config.root, ec);
  if (ec) throw std::runtime_error("build_dataset: cannot create " + config.root);

  int n_labeled = static_cast<int>(
      std::lround(config.labeled_fraction * config.images_per_person));

  for (int pid = 0; pid < config.persons; ++pid) {
    DatasetPerson person;
    person.id = pid;
    PersonStyleParams style = sample_person(pid, config.seed);
    person.mode = style.mode;
    fs::path pdir = fs::path(config.root) / ("p" + std::to_string(pid));
    fs::path gtdir = fs::path(config.root) / "groundtruth" / ("p" + std::to_string(pid));
    fs::create_directories(pdir, ec);
    if (ec) throw std::runtime_error("build_dataset: cannot create " + pdir.string());
    fs::create_directories(gtdir, ec);
    if (ec) throw std::runtime_error("build_dataset: cannot create " + gtdir.string());

    int labeled_seen = 0;
    for (int n = 0; n < config.images_per_person; ++n) {
      EyePose pose = sample_pose(config.seed, pid, n);
      std::uint64_t noise_seed =
          Rng::derive(config.seed, static_cast<std::uint64_t>(pid),
                      static_cast<std::uint64_t>(n), kNoiseStream);
      GrayImage img;
      SegMask mask;
      render_eye(style, pose, config.resolution, config.resolution, noise_seed, img, mask);

      DatasetRecord rec;
      rec.labeled = n < n_labeled;
      std::string img_rel = "p" + std::to_string(pid) + "/img_" + std::to_string(n) + ".png";
      std::string mask_rel = "p" + std::to_string(pid) + "/mask_" + std::to_string(n) + ".png";
      std::string gt_rel =
          "groundtruth/p" + std::to_string(pid) + "/mask_" + std::to_string(n) + ".png";
      rec.img = img_rel;
      save_image((fs::path(config.root) / img_rel).string(), img);
      save_mask((fs::path(config.root) / gt_rel).string(), mask);
      if (rec.labeled) {
        rec.mask = mask_rel;
        save_mask((fs::path(config.root) / mask_rel).string(), mask);
        // Labeled records cycle train/train/train/val/test per five.
        int j = labeled_seen++ % 5;
        rec.split = j == 3 ? "val" : (j == 4 ? "test" : "train");
      } else {
        rec.split = "train";
      }
      person.records.push_back(rec);
    }
    index.persons.push_back(std::move(person));
  }

  json j;
  j["seed"] = index.seed;
  j["persons"] = json::array();
  for (auto& p : index.persons) {
    json pj;
    pj["id"] = p.id;
    pj["mode"] = p.mode == EyeMode::left ? "left" : "right";
    pj["records"] = json::array();
    for (auto& r : p.records) {
      json rj;
      rj["img"] = r.img;
      if (r.labeled)
        rj["mask"] = r.mask;
      else
        rj["mask"] = nullptr;
      rj["split"] = r.split;
      pj["records"].push_back(rj);
    }
    j["persons"].push_back(pj);
  }
  std::ofstream out(fs::path(config.root) / "index.json", std::ios::binary);
  if (!out) throw std::runtime_error("build_dataset: cannot write index.json under " + config.root);
  out << j.dump(2) << "\n";
  return index;
}

DatasetIndex load_index(const std::string& root) {
  std::ifstream in(fs::path(root) / "index.json", std::ios::binary);
  if (!in) throw std::runtime_error("load_index: cannot open index.json under " + root);
  json j = json::parse(in);
  DatasetIndex index;
  index.seed = j.at("seed").get<std::uint64_t>();
  index.root = root;
  for (auto& pj : j.at("persons")) {
    DatasetPerson p;
    p.id = pj.at("id").get<int>();
    p.mode = pj.at("mode").get<std::string>() == "left" ? EyeMode::left : EyeMode::right;
    for (auto& rj : pj.at("records")) {
      DatasetRecord r;
      r.img = rj.at("img").get<std::string>();
      if (!rj.at("mask").is_null()) {
        r.mask = rj.at("mask").get<std::string>();
        r.labeled = true;
      }
      r.split = rj.at("split").get<std::string>();
      p.records.push_back(r);
    }
    index.persons.push_back(std::move(p));
  }
  return index;
}

std::string groundtruth_mask_path(const DatasetIndex& index, int person_id,
                                  const DatasetRecord& rec) {
  // img is "p<id>/img_<n>.png"; the withheld mask mirrors the numbering.
  auto pos = rec.img.rfind("img_");
  if (pos == std::string::npos)
    throw std::runtime_error("groundtruth_mask_path: unexpected record path " + rec.img);
  std::string num = rec.img.substr(pos + 4);
  return (fs::path(index.root) / "groundtruth" / ("p" + std::to_string(person_id)) /
          ("mask_" + num))
      .string();
}

}  // namespace seg2eye

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seg2eye/core.hpp"

namespace seg2eye {

enum class EyeMode { left, right };

// Per-person appearance parameters, a deterministic function of
// (person_id, dataset_seed).
struct PersonStyleParams {
  double base_brightness = 0.5;   // [0.2, 0.8]
  double iris_shade = 0.5;        // [0.1, 0.9]
  double sclera_texture_amp = 0;  // [0, 0.15]
  double skin_tone = 0.5;         // [0.2, 0.9]
  double iris_radius_ratio = 0.45;  // [0.35, 0.55]
  EyeMode mode = EyeMode::left;
};

struct EyePose {
  double gaze_x = 0.0;          // [-0.3, 0.3], fraction of width
  double gaze_y = 0.0;          // [-0.3, 0.3], fraction of height
  double eyelid_openness = 1.0;  // [0.3, 1.0]
};

struct DatasetRecord {
  std::string img;   // path relative to dataset root
  std::string mask;  // empty when unlabeled
  std::string split;  // train | val | test
  bool labeled = false;
};

struct DatasetPerson {
  int id = 0;
  EyeMode mode = EyeMode::left;
  std::vector<DatasetRecord> records;
};

struct DatasetIndex {
  std::uint64_t seed = 0;
  std::string root;
  std::vector<DatasetPerson> persons;
};

struct DatasetConfig {
  std::string root;
  int persons = 10;
  int images_per_person = 20;
  double labeled_fraction = 0.3;
  int resolution = 64;
  std::uint64_t seed = 0;
};

PersonStyleParams sample_person(int person_id, std::uint64_t seed);
EyePose sample_pose(std::uint64_t seed, int person_id, int image_index);

// Renders the image and its pixel-aligned mask. noise_seed drives the texture
// noise; identical arguments produce bit-identical output.
void render_eye(const PersonStyleParams& style, const EyePose& pose, int h, int w,
                std::uint64_t noise_seed, GrayImage& img, SegMask& mask);

DatasetIndex build_dataset(const DatasetConfig& config);
DatasetIndex load_index(const std::string& root);

// Ground-truth mask path for a record (labeled or withheld).
std::string groundtruth_mask_path(const DatasetIndex& index, int person_id,
                                  const DatasetRecord& rec);

SegMask load_mask(const std::string& path);
GrayImage load_image(const std::string& path);
void save_mask(const std::string& path, const SegMask& mask);
void save_image(const std::string& path, const GrayImage& img);

}  // namespace seg2eye

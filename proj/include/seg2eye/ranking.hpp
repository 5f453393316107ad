#pragma once

#include <array>
#include <json.hpp>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "seg2eye/core.hpp"
#include "seg2eye/models.hpp"
#include "seg2eye/synthdata.hpp"

namespace seg2eye {

// Per-class mean image intensity over labeled training pixels, internal units.
struct ClassMeans {
  std::array<double, kNumClasses> mean_intensity{};
};

ClassMeans compute_class_means(const std::vector<std::pair<GrayImage, SegMask>>& labeled);
ClassMeans compute_class_means(const DatasetIndex& index);

GrayImage colorize_mask(const SegMask& mask, const ClassMeans& means);

struct RankedItem {
  std::string img;  // pool image path (relative when ranking a dataset)
  double score = 0.0;
  int rank = 0;  // from 1
};
using RankedList = std::vector<RankedItem>;

struct PoolImage {
  std::string abs_path;
  std::string rel_path;  // cache key and reported path
};

// Pseudo-label a pool image with on-disk caching keyed by the segmenter
// checkpoint hash: cache_dir/<hash>/<rel_path-with-mask-ext>.png
SegMask pseudo_label(const PoolImage& img, const SegmenterModel& seg, const std::string& cache_dir,
                     const std::string& ckpt_hash);

// Rank pool images by MSE between colorized pseudo-label and colorized target
// mask, ascending; ties broken by ascending path.
RankedList rank_candidates(const SegMask& target_mask, const std::vector<PoolImage>& pool,
                           const SegmenterModel& seg, const ClassMeans& means,
                           const std::string& cache_dir, const std::string& ckpt_hash);

nlohmann::json ranked_list_to_json(const RankedList& list);
RankedList ranked_list_from_json(const nlohmann::json& j);

// For every labeled record, rank the same person's unlabeled pool against the
// record's mask. Keys are the labeled records' image paths (relative).
using DatasetRankings = std::map<std::string, RankedList>;
DatasetRankings rank_dataset(const DatasetIndex& index, const SegmenterModel& seg,
                             const ClassMeans& means, const std::string& cache_dir,
                             const std::string& ckpt_hash);
nlohmann::json rankings_to_json(const DatasetRankings& rankings);
DatasetRankings rankings_from_json(const nlohmann::json& j);

}  // namespace seg2eye

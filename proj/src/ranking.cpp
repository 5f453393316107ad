#include "seg2eye/ranking.hpp"

#include <algorithm>
#include <filesystem>
#include <stdexcept>

#include "seg2eye/losses.hpp"

namespace seg2eye {

namespace fs = std::filesystem;
using nlohmann::json;

ClassMeans compute_class_means(const std::vector<std::pair<GrayImage, SegMask>>& labeled) {
  std::array<double, kNumClasses> sum{};
  std::array<std::int64_t, kNumClasses> count{};
  for (auto& [img, mask] : labeled) {
    if (img.height != mask.height || img.width != mask.width)
      throw std::invalid_argument("compute_class_means: image/mask size mismatch");
    for (size_t i = 0; i < mask.data.size(); ++i) {
      int c = mask.data[i];
      sum[static_cast<size_t>(c)] += img.data[i];
      count[static_cast<size_t>(c)] += 1;
    }
  }
  ClassMeans means;
  for (int c = 0; c < kNumClasses; ++c) {
    if (count[static_cast<size_t>(c)] == 0)
      throw std::runtime_error("compute_class_means: class " + std::to_string(c) +
                               " has no labeled pixels");
    means.mean_intensity[static_cast<size_t>(c)] =
        sum[static_cast<size_t>(c)] / static_cast<double>(count[static_cast<size_t>(c)]);
  }
  return means;
}

ClassMeans compute_class_means(const DatasetIndex& index) {
  std::vector<std::pair<GrayImage, SegMask>> labeled;
  for (auto& p : index.persons)
    for (auto& r : p.records)
      if (r.labeled && r.split == "train")
        labeled.emplace_back(load_image((fs::path(index.root) / r.img).string()),
                             load_mask((fs::path(index.root) / r.mask).string()));
  if (labeled.empty()) throw std::runtime_error("compute_class_means: no labeled training records");
  return compute_class_means(labeled);
}

GrayImage colorize_mask(const SegMask& mask, const ClassMeans& means) {
  GrayImage img(mask.height, mask.width);
  for (size_t i = 0; i < mask.data.size(); ++i)
    img.data[i] = means.mean_intensity[mask.data[i]];
  return img;
}

SegMask pseudo_label(const PoolImage& img, const SegmenterModel& seg, const std::string& cache_dir,
                     const std::string& ckpt_hash) {
  fs::path cache_path = fs::path(cache_dir) / ckpt_hash / (img.rel_path + ".png");
  if (fs::exists(cache_path)) return load_mask(cache_path.string());
  SegMask mask = seg.predict(load_image(img.abs_path));
  std::error_code ec;
  fs::create_directories(cache_path.parent_path(), ec);
  if (!ec) save_mask(cache_path.string(), mask);
  return mask;
}

RankedList rank_candidates(const SegMask& target_mask, const std::vector<PoolImage>& pool,
                           const SegmenterModel& seg, const ClassMeans& means,
                           const std::string& cache_dir, const std::string& ckpt_hash) {
  if (pool.empty()) throw std::invalid_argument("rank_candidates: empty candidate pool");
  GrayImage target_colored = colorize_mask(target_mask, means);
  RankedList list;
  list.reserve(pool.size());
  for (auto& cand : pool) {
    SegMask pl = pseudo_label(cand, seg, cache_dir, ckpt_hash);
    RankedItem item;
    item.img = cand.rel_path;
    item.score = nn::mask_mse(colorize_mask(pl, means), target_colored);
    list.push_back(item);
  }
  std::stable_sort(list.begin(), list.end(), [](const RankedItem& a, const RankedItem& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.img < b.img;
  });
  for (size_t i = 0; i < list.size(); ++i) list[i].rank = static_cast<int>(i) + 1;
  return list;
}

json ranked_list_to_json(const RankedList& list) {
  json j = json::array();
  for (auto& item : list) {
    json e;
    e["img"] = item.img;
    e["score"] = item.score;
    e["rank"] = item.rank;
    j.push_back(e);
  }
  return j;
}

RankedList ranked_list_from_json(const json& j) {
  RankedList list;
  for (auto& e : j) {
    RankedItem item;
    item.img = e.at("img").get<std::string>();
    item.score = e.at("score").get<double>();
    item.rank = e.at("rank").get<int>();
    list.push_back(item);
  }
  return list;
}

DatasetRankings rank_dataset(const DatasetIndex& index, const SegmenterModel& seg,
                             const ClassMeans& means, const std::string& cache_dir,
                             const std::string& ckpt_hash) {
  DatasetRankings rankings;
  for (auto& p : index.persons) {
    std::vector<PoolImage> pool;
    for (auto& r : p.records)
      if (!r.labeled)
        pool.push_back({(fs::path(index.root) / r.img).string(), r.img});
    if (pool.empty()) continue;
    for (auto& r : p.records)
      if (r.labeled) {
        SegMask mask = load_mask((fs::path(index.root) / r.mask).string());
        rankings[r.img] = rank_candidates(mask, pool, seg, means, cache_dir, ckpt_hash);
      }
  }
  return rankings;
}

json rankings_to_json(const DatasetRankings& rankings) {
  json j = json::object();
  for (auto& [target, list] : rankings) j[target] = ranked_list_to_json(list);
  return j;
}

DatasetRankings rankings_from_json(const json& j) {
  DatasetRankings rankings;
  for (auto it = j.begin(); it != j.end(); ++it)
    rankings[it.key()] = ranked_list_from_json(it.value());
  return rankings;
}

}  // namespace seg2eye

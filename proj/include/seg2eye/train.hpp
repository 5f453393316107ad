#pragma once

#include <json.hpp>
#include <map>
#include <string>

#include "seg2eye/checkpoint.hpp"
#include "seg2eye/losses.hpp"
#include "seg2eye/models.hpp"
#include "seg2eye/networks.hpp"
#include "seg2eye/ranking.hpp"
#include "seg2eye/synthdata.hpp"

namespace seg2eye {

struct TrainConfig {
  std::string stage = "segmenter";  // segmenter | refiner | gan
  std::string dataset_root;
  int resolution = 64;
  int batch_size = 8;
  int steps = 2000;
  std::uint64_t seed = 0;
  int k_style_images = 4;
  int style_pool_top_n = 200;  // clipped to pool size
  double lr_g = 1e-4;
  double lr_d = 4e-4;
  double lr = 2e-4;
  double beta1_adv = 0.0, beta2_adv = 0.9;
  double beta1 = 0.9, beta2 = 0.999;
  nn::LossWeights loss_weights;
  bool l1_mean_normalize = true;  // mean|sum normalization for Eq-style L1 terms
  int checkpoint_every = 500;
  std::string cache_dir;  // pseudo-label cache; empty -> dataset_root/cache
  nn::ModelConfig model;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Adaptive moment estimation with bias correction; float state, serialized
// alongside checkpoints under "<label>.m.<param>" / "<label>.v.<param>".
class AdamOpt {
 public:
  AdamOpt(std::string label, double lr, double beta1, double beta2)
      : label_(std::move(label)), lr_(lr), beta1_(beta1), beta2_(beta2) {}

  void apply(const std::map<nn::Param<float>*, Tensor<float>>& grads);
  void snapshot(Checkpoint& ckpt) const;
  void restore(const Checkpoint& ckpt, nn::ParamStore<float>& store);

  long step_count() const { return t_; }

 private:
  std::string label_;
  double lr_, beta1_, beta2_;
  double eps_ = 1e-8;
  long t_ = 0;
  std::map<std::string, std::pair<Tensor<float>, Tensor<float>>> moments_;
  friend struct AdamAccess;
};

struct TrainResult {
  std::string checkpoint_path;
  long final_step = 0;
  double final_loss = 0.0;
  // Stage-specific validation summary:
  //   segmenter: val_metric = mean IoU
  //   refiner:   val_metric = mean challenge metric of refined outputs,
  //              val_baseline = mean challenge metric of raw references
  //   gan:       val_metric = final val pixel L2, val_baseline = step-0 val pixel L2
  double val_metric = 0.0;
  double val_baseline = 0.0;
};

TrainResult train_segmenter(const TrainConfig& cfg, const std::string& out_ckpt,
                            const std::string& metrics_path, const std::string& resume_path = "");
TrainResult train_refiner(const TrainConfig& cfg, const std::string& segmenter_ckpt,
                          const std::string& rankings_path, const std::string& out_ckpt,
                          const std::string& metrics_path, const std::string& resume_path = "");
TrainResult train_gan(const TrainConfig& cfg, const std::string& rankings_path,
                      const std::string& out_ckpt, const std::string& metrics_path,
                      const std::string& resume_path = "");

// Mean IoU of segmenter predictions against ground truth over labeled records
// of the given split (dataset-level intersection/union, averaged over classes
// present in the union).
double segmenter_val_iou(const SegmenterModel& model, const DatasetIndex& index,
                         const std::string& split);

// Mean val-split pixel L2 (internal units) of generated images vs. targets,
// with style images drawn deterministically from the top-ranked pool.
double gan_val_pixel_l2(const GanModel& model, const DatasetIndex& index,
                        const DatasetRankings& rankings, int k, int top_n, std::uint64_t seed);

// Deterministic choice of k style image paths for one target record.
std::vector<std::string> pick_style_images(const RankedList& ranked, int k, int top_n,
                                           std::uint64_t key);

StyleCode aggregate_from_paths(const GanModel& model, const std::string& root,
                               const std::vector<std::string>& rel_paths);

}  // namespace seg2eye

#include "seg2eye/train.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "seg2eye/rng.hpp"

namespace seg2eye {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::GraphCtx;
using nn::NodeRef;
using nn::Tape;

namespace {
// FNV-1a over the raw parameter bytes of all params with the given prefix.
std::uint64_t hash_params(const nn::ParamStore<float>& store, const std::string& prefix) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto& p : store.all()) {
    if (p->name.rfind(prefix, 0) != 0) continue;
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.v.data());
    for (std::int64_t i = 0; i < p->value.size() * static_cast<std::int64_t>(sizeof(float)); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

constexpr std::uint64_t kBatchStream = 0x6261746368ull;
constexpr std::uint64_t kStyleStream = 0x7374796cull;
constexpr std::uint64_t kValStream = 0x76616cull;
}  // namespace

// ---------------------------------------------------------------------------
// Config serialization
// ---------------------------------------------------------------------------

json train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["stage"] = cfg.stage;
  j["dataset_root"] = cfg.dataset_root;
  j["resolution"] = cfg.resolution;
  j["batch_size"] = cfg.batch_size;
  j["steps"] = cfg.steps;
  j["seed"] = cfg.seed;
  j["k_style_images"] = cfg.k_style_images;
  j["style_pool_top_n"] = cfg.style_pool_top_n;
  j["lr_g"] = cfg.lr_g;
  j["lr_d"] = cfg.lr_d;
  j["lr"] = cfg.lr;
  j["beta1_adv"] = cfg.beta1_adv;
  j["beta2_adv"] = cfg.beta2_adv;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["loss_weights"] = {{"gan", cfg.loss_weights.gan},
                       {"feature_matching", cfg.loss_weights.feature_matching},
                       {"l2", cfg.loss_weights.l2},
                       {"style", cfg.loss_weights.style},
                       {"gram", cfg.loss_weights.gram}};
  j["l1_mean_normalize"] = cfg.l1_mean_normalize;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["cache_dir"] = cfg.cache_dir;
  j["model"] = model_config_to_json(cfg.model);
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  cfg.stage = j.value("stage", cfg.stage);
  cfg.dataset_root = j.value("dataset_root", cfg.dataset_root);
  cfg.resolution = j.value("resolution", cfg.resolution);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.k_style_images = j.value("k_style_images", cfg.k_style_images);
  cfg.style_pool_top_n = j.value("style_pool_top_n", cfg.style_pool_top_n);
  cfg.lr_g = j.value("lr_g", cfg.lr_g);
  cfg.lr_d = j.value("lr_d", cfg.lr_d);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.beta1_adv = j.value("beta1_adv", cfg.beta1_adv);
  cfg.beta2_adv = j.value("beta2_adv", cfg.beta2_adv);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  if (j.contains("loss_weights")) {
    auto& w = j.at("loss_weights");
    cfg.loss_weights.gan = w.value("gan", cfg.loss_weights.gan);
    cfg.loss_weights.feature_matching =
        w.value("feature_matching", cfg.loss_weights.feature_matching);
    cfg.loss_weights.l2 = w.value("l2", cfg.loss_weights.l2);
    cfg.loss_weights.style = w.value("style", cfg.loss_weights.style);
    cfg.loss_weights.gram = w.value("gram", cfg.loss_weights.gram);
  }
  cfg.l1_mean_normalize = j.value("l1_mean_normalize", cfg.l1_mean_normalize);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  cfg.cache_dir = j.value("cache_dir", cfg.cache_dir);
  if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
  cfg.model.resolution = cfg.resolution;
  return cfg;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void AdamOpt::apply(const std::map<nn::Param<float>*, Tensor<float>>& grads) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [p, g] : grads) {
    auto it = moments_.find(p->name);
    if (it == moments_.end())
      it = moments_
               .emplace(p->name, std::make_pair(Tensor<float>(p->value.shape),
                                                Tensor<float>(p->value.shape)))
               .first;
    auto& [m, v] = it->second;
    for (std::int64_t i = 0; i < g.size(); ++i) {
      double gi = g[i];
      double mi = beta1_ * m[i] + (1.0 - beta1_) * gi;
      double vi = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double update = lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_);
      p->value[i] = static_cast<float>(p->value[i] - update);
    }
  }
}

void AdamOpt::snapshot(Checkpoint& ckpt) const {
  ckpt.extra[label_ + "_t"] = t_;
  for (auto& [name, mv] : moments_) {
    ckpt.tensors.emplace_back(label_ + ".m." + name, mv.first);
    ckpt.tensors.emplace_back(label_ + ".v." + name, mv.second);
  }
}

void AdamOpt::restore(const Checkpoint& ckpt, nn::ParamStore<float>& store) {
  t_ = ckpt.extra.value(label_ + "_t", 0L);
  moments_.clear();
  for (auto& p : store.all()) {
    const Tensor<float>* m = ckpt.find(label_ + ".m." + p->name);
    const Tensor<float>* v = ckpt.find(label_ + ".v." + p->name);
    if (m && v) moments_[p->name] = {*m, *v};
  }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace {

struct LabeledRecord {
  int person_id = 0;
  std::string img_rel;
  GrayImage img;
  SegMask mask;
};

std::vector<LabeledRecord> load_labeled(const DatasetIndex& index, const std::string& split) {
  std::vector<LabeledRecord> out;
  for (auto& p : index.persons)
    for (auto& r : p.records)
      if (r.labeled && r.split == split) {
        LabeledRecord lr;
        lr.person_id = p.id;
        lr.img_rel = r.img;
        lr.img = load_image((fs::path(index.root) / r.img).string());
        lr.mask = load_mask((fs::path(index.root) / r.mask).string());
        out.push_back(std::move(lr));
      }
  return out;
}

class MetricsLog {
 public:
  MetricsLog(const std::string& path, bool append) {
    if (path.empty()) return;
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot open metrics log: " + path);
  }
  void write(const json& j) {
    if (out_.is_open()) out_ << j.dump() << "\n";
  }
  void flush() {
    if (out_.is_open()) out_.flush();
  }

 private:
  std::ofstream out_;
};

std::string effective_cache_dir(const TrainConfig& cfg) {
  if (!cfg.cache_dir.empty()) return cfg.cache_dir;
  return (fs::path(cfg.dataset_root) / "cache").string();
}

}  // namespace

// ---------------------------------------------------------------------------
// Segmenter
// ---------------------------------------------------------------------------

double segmenter_val_iou(const SegmenterModel& model, const DatasetIndex& index,
                         const std::string& split) {
  auto records = load_labeled(index, split);
  if (records.empty()) throw std::runtime_error("segmenter_val_iou: empty split " + split);
  std::array<std::int64_t, kNumClasses> inter{}, uni{};
  for (auto& r : records) {
    SegMask pred = model.predict(r.img);
    for (size_t i = 0; i < pred.data.size(); ++i) {
      int a = pred.data[i], b = r.mask.data[i];
      if (a == b) {
        inter[static_cast<size_t>(a)] += 1;
        uni[static_cast<size_t>(a)] += 1;
      } else {
        uni[static_cast<size_t>(a)] += 1;
        uni[static_cast<size_t>(b)] += 1;
      }
    }
  }
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < kNumClasses; ++c)
    if (uni[static_cast<size_t>(c)] > 0) {
      sum += static_cast<double>(inter[static_cast<size_t>(c)]) / uni[static_cast<size_t>(c)];
      ++present;
    }
  return present ? sum / present : 0.0;
}

TrainResult train_segmenter(const TrainConfig& cfg, const std::string& out_ckpt,
                            const std::string& metrics_path, const std::string& resume_path) {
  DatasetIndex index = load_index(cfg.dataset_root);
  auto records = load_labeled(index, "train");
  if (records.empty()) throw std::runtime_error("train_segmenter: no labeled training records");

  nn::ModelConfig mcfg = cfg.model;
  mcfg.resolution = cfg.resolution;
  auto model = SegmenterModel::create(mcfg, cfg.seed);
  AdamOpt adam("adam", cfg.lr, cfg.beta1, cfg.beta2);

  long start_step = 1;
  if (!resume_path.empty()) {
    Checkpoint ckpt;
    model = load_segmenter(resume_path, &ckpt);
    adam.restore(ckpt, *model.store);
    start_step = ckpt.step + 1;
  }
  MetricsLog log(metrics_path, !resume_path.empty());

  long saved_at = -1;
  auto save = [&](long step) {
    saved_at = step;
    Checkpoint ckpt;
    ckpt.kind = "segmenter";
    ckpt.step = step;
    ckpt.config = model_config_to_json(model.cfg);
    ckpt.extra["train_config"] = train_config_to_json(cfg);
    snapshot_store(*model.store, ckpt);
    adam.snapshot(ckpt);
    save_checkpoint_file(out_ckpt, ckpt);
  };

  TrainResult result;
  result.final_step = start_step - 1;
  for (long step = start_step; step <= cfg.steps; ++step) {
    Rng rng(Rng::derive(cfg.seed, static_cast<std::uint64_t>(step), kBatchStream));
    std::vector<GrayImage> imgs;
    std::vector<SegMask> masks;
    for (int i = 0; i < cfg.batch_size; ++i) {
      auto& r = records[rng.uniform_int(records.size())];
      imgs.push_back(r.img);
      masks.push_back(r.mask);
    }
    Tape<float> tp;
    GraphCtx<float> ctx{tp, true, true};
    auto logits = model.net.forward(ctx, tp.constant(tensor_from_images<float>(imgs)));
    auto loss = nn::segmenter_loss(tp, logits, masks);
    tp.backward(loss);
    adam.apply(nn::collect_grads(ctx));
    result.final_loss = loss->val[0];
    log.write({{"step", step}, {"loss", result.final_loss}});
    if (cfg.checkpoint_every > 0 && (step % cfg.checkpoint_every == 0 || step == cfg.steps))
      save(step);
    result.final_step = step;
  }
  if (saved_at != result.final_step) save(result.final_step);
  result.checkpoint_path = out_ckpt;
  result.val_metric = segmenter_val_iou(model, index, "val");
  log.write({{"event", "val_iou"}, {"value", result.val_metric}});
  return result;
}

// ---------------------------------------------------------------------------
// Refiner
// ---------------------------------------------------------------------------

namespace {

struct RefinerSample {
  SegMask target_mask;
  GrayImage target_img;
  SegMask ref_mask;  // pseudo-label of the reference
  GrayImage ref_img;
};

std::vector<RefinerSample> build_refiner_samples(const DatasetIndex& index,
                                                 const std::vector<LabeledRecord>& records,
                                                 const DatasetRankings& rankings,
                                                 const SegmenterModel& seg,
                                                 const std::string& cache_dir,
                                                 const std::string& ckpt_hash) {
  std::vector<RefinerSample> samples;
  for (auto& r : records) {
    auto it = rankings.find(r.img_rel);
    if (it == rankings.end() || it->second.empty()) {
      std::cerr << "warning: no ranking for " << r.img_rel << ", skipping\n";
      continue;
    }
    const RankedItem& top = it->second.front();
    PoolImage ref{(fs::path(index.root) / top.img).string(), top.img};
    RefinerSample s;
    s.target_mask = r.mask;
    s.target_img = r.img;
    s.ref_img = load_image(ref.abs_path);
    s.ref_mask = pseudo_label(ref, seg, cache_dir, ckpt_hash);
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace

TrainResult train_refiner(const TrainConfig& cfg, const std::string& segmenter_ckpt,
                          const std::string& rankings_path, const std::string& out_ckpt,
                          const std::string& metrics_path, const std::string& resume_path) {
  DatasetIndex index = load_index(cfg.dataset_root);
  SegmenterModel seg = load_segmenter(segmenter_ckpt);
  std::string ckpt_hash = file_hash_hex(segmenter_ckpt);
  std::string cache_dir = effective_cache_dir(cfg);

  std::ifstream rin(rankings_path);
  if (!rin) throw std::runtime_error("train_refiner: cannot open rankings " + rankings_path);
  DatasetRankings rankings = rankings_from_json(json::parse(rin));

  auto train_records = load_labeled(index, "train");
  auto samples = build_refiner_samples(index, train_records, rankings, seg, cache_dir, ckpt_hash);
  if (samples.empty()) throw std::runtime_error("train_refiner: all training records skipped");

  nn::ModelConfig mcfg = cfg.model;
  mcfg.resolution = cfg.resolution;
  auto model = RefinerModel::create(mcfg, cfg.seed);
  AdamOpt adam("adam", cfg.lr, cfg.beta1, cfg.beta2);

  long start_step = 1;
  if (!resume_path.empty()) {
    Checkpoint ckpt;
    model = load_refiner(resume_path, &ckpt);
    adam.restore(ckpt, *model.store);
    start_step = ckpt.step + 1;
  }
  MetricsLog log(metrics_path, !resume_path.empty());

  long saved_at = -1;
  auto save = [&](long step) {
    saved_at = step;
    Checkpoint ckpt;
    ckpt.kind = "refiner";
    ckpt.step = step;
    ckpt.config = model_config_to_json(model.cfg);
    ckpt.extra["train_config"] = train_config_to_json(cfg);
    snapshot_store(*model.store, ckpt);
    adam.snapshot(ckpt);
    save_checkpoint_file(out_ckpt, ckpt);
  };

  TrainResult result;
  result.final_step = start_step - 1;
  for (long step = start_step; step <= cfg.steps; ++step) {
    Rng rng(Rng::derive(cfg.seed, static_cast<std::uint64_t>(step), kBatchStream));
    std::vector<SegMask> tmasks, rmasks;
    std::vector<GrayImage> rimgs, timgs;
    for (int i = 0; i < cfg.batch_size; ++i) {
      auto& s = samples[rng.uniform_int(samples.size())];
      tmasks.push_back(s.target_mask);
      rmasks.push_back(s.ref_mask);
      rimgs.push_back(s.ref_img);
      timgs.push_back(s.target_img);
    }
    Tape<float> tp;
    GraphCtx<float> ctx{tp, true, true};
    auto refs = tp.constant(tensor_from_images<float>(rimgs));
    auto out = nn::refine(ctx, model.net, tmasks, rmasks, refs);
    auto targets = tp.constant(tensor_from_images<float>(timgs));
    auto loss = nn::l2_pixel_loss(tp, out.refined, targets);
    tp.backward(loss);
    adam.apply(nn::collect_grads(ctx));
    result.final_loss = loss->val[0];
    log.write({{"step", step}, {"loss", result.final_loss}});
    if (cfg.checkpoint_every > 0 && (step % cfg.checkpoint_every == 0 || step == cfg.steps))
      save(step);
    result.final_step = step;
  }
  if (saved_at != result.final_step) save(result.final_step);
  result.checkpoint_path = out_ckpt;

  // Validation: challenge metric of refined outputs vs. the raw reference
  // baseline, over val-split samples.
  auto val_records = load_labeled(index, "val");
  auto val_samples = build_refiner_samples(index, val_records, rankings, seg, cache_dir, ckpt_hash);
  double sum_refined = 0.0, sum_ref = 0.0;
  int n = 0;
  for (auto& s : val_samples) {
    auto [residual, refined] = model.refine_image(s.target_mask, s.ref_mask, s.ref_img);
    auto target8 = to_disk(s.target_img);
    sum_refined += nn::challenge_metric(to_disk(refined), target8, s.target_img.height,
                                        s.target_img.width);
    sum_ref += nn::challenge_metric(to_disk(s.ref_img), target8, s.target_img.height,
                                    s.target_img.width);
    ++n;
  }
  if (n > 0) {
    result.val_metric = sum_refined / n;
    result.val_baseline = sum_ref / n;
  }
  log.write({{"event", "val_challenge"},
             {"refined", result.val_metric},
             {"reference", result.val_baseline}});
  return result;
}

// ---------------------------------------------------------------------------
// GAN
// ---------------------------------------------------------------------------

std::vector<std::string> pick_style_images(const RankedList& ranked, int k, int top_n,
                                           std::uint64_t key) {
  if (ranked.empty()) throw std::invalid_argument("pick_style_images: empty ranking");
  int top = std::min<int>(top_n, static_cast<int>(ranked.size()));
  Rng rng(key);
  std::vector<std::string> out;
  if (top >= k) {
    std::vector<int> idx(static_cast<size_t>(top));
    for (int i = 0; i < top; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
      int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(top - i)));
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
      out.push_back(ranked[static_cast<size_t>(idx[static_cast<size_t>(i)])].img);
    }
  } else {
    for (int i = 0; i < k; ++i)
      out.push_back(ranked[rng.uniform_int(static_cast<std::uint64_t>(top))].img);
  }
  return out;
}

StyleCode aggregate_from_paths(const GanModel& model, const std::string& root,
                               const std::vector<std::string>& rel_paths) {
  std::vector<StyleCode> codes;
  for (auto& p : rel_paths) codes.push_back(model.encode_style(load_image((fs::path(root) / p).string())));
  return nn::aggregate_styles(codes);
}

namespace {

struct GanData {
  DatasetIndex index;
  std::vector<LabeledRecord> train_records;
  std::vector<LabeledRecord> val_records;
  DatasetRankings rankings;
  std::map<std::string, GrayImage> images;  // unlabeled pool cache (rel -> image)

  const GrayImage& pool_image(const std::string& rel) {
    auto it = images.find(rel);
    if (it == images.end())
      it = images.emplace(rel, load_image((fs::path(index.root) / rel).string())).first;
    return it->second;
  }
};

}  // namespace

double gan_val_pixel_l2(const GanModel& model, const DatasetIndex& index,
                        const DatasetRankings& rankings, int k, int top_n, std::uint64_t seed) {
  auto val_records = load_labeled(index, "val");
  double sum = 0.0;
  int n = 0;
  for (size_t i = 0; i < val_records.size(); ++i) {
    auto it = rankings.find(val_records[i].img_rel);
    if (it == rankings.end() || it->second.empty()) continue;
    auto paths = pick_style_images(it->second, k, top_n,
                                   Rng::derive(seed, static_cast<std::uint64_t>(i), kValStream));
    StyleCode s = aggregate_from_paths(model, index.root, paths);
    GrayImage gen = model.generate(val_records[i].mask, s);
    double mse = 0.0;
    for (size_t p = 0; p < gen.data.size(); ++p) {
      double d = gen.data[p] - val_records[i].img.data[p];
      mse += d * d;
    }
    sum += mse / static_cast<double>(gen.data.size());
    ++n;
  }
  if (n == 0) throw std::runtime_error("gan_val_pixel_l2: no val records with rankings");
  return sum / n;
}

TrainResult train_gan(const TrainConfig& cfg, const std::string& rankings_path,
                      const std::string& out_ckpt, const std::string& metrics_path,
                      const std::string& resume_path) {
  GanData data;
  data.index = load_index(cfg.dataset_root);
  data.train_records = load_labeled(data.index, "train");
  if (data.train_records.empty()) throw std::runtime_error("train_gan: no labeled train records");
  {
    std::ifstream rin(rankings_path);
    if (!rin) throw std::runtime_error("train_gan: cannot open rankings " + rankings_path);
    data.rankings = rankings_from_json(json::parse(rin));
  }
  // Keep only records that have rankings.
  {
    std::vector<LabeledRecord> keep;
    for (auto& r : data.train_records)
      if (data.rankings.count(r.img_rel) && !data.rankings[r.img_rel].empty())
        keep.push_back(std::move(r));
    data.train_records = std::move(keep);
    if (data.train_records.empty())
      throw std::runtime_error("train_gan: no train records with rankings");
  }

  nn::ModelConfig mcfg = cfg.model;
  mcfg.resolution = cfg.resolution;
  mcfg.k_style = cfg.k_style_images;
  auto model = GanModel::create(mcfg, cfg.seed);
  AdamOpt adam_g("adam_g", cfg.lr_g, cfg.beta1_adv, cfg.beta2_adv);
  AdamOpt adam_d("adam_d", cfg.lr_d, cfg.beta1_adv, cfg.beta2_adv);

  long start_step = 1;
  double val_l2_step0 = 0.0;
  if (!resume_path.empty()) {
    Checkpoint ckpt;
    model = load_gan(resume_path, &ckpt);
    adam_g.restore(ckpt, *model.store);
    adam_d.restore(ckpt, *model.store);
    start_step = ckpt.step + 1;
    val_l2_step0 = ckpt.extra.value("val_l2_step0", 0.0);
  }
  MetricsLog log(metrics_path, !resume_path.empty());

  long saved_at = -1;
  auto save = [&](long step) {
    saved_at = step;
    Checkpoint ckpt;
    ckpt.kind = "gan";
    ckpt.step = step;
    ckpt.config = model_config_to_json(model.cfg);
    ckpt.extra["train_config"] = train_config_to_json(cfg);
    ckpt.extra["val_l2_step0"] = val_l2_step0;
    snapshot_store(*model.store, ckpt);
    adam_g.snapshot(ckpt);
    adam_d.snapshot(ckpt);
    save_checkpoint_file(out_ckpt, ckpt);
  };

  int k = cfg.k_style_images;
  int H = cfg.resolution;

  auto make_batch = [&](long step) {
    struct Batch {
      std::vector<SegMask> masks;
      Tensor<float> real;
      Tensor<float> style;
    } batch;
    Rng rng(Rng::derive(cfg.seed, static_cast<std::uint64_t>(step), kBatchStream));
    std::vector<GrayImage> real_imgs;
    std::vector<GrayImage> style_imgs;
    for (int i = 0; i < cfg.batch_size; ++i) {
      auto& r = data.train_records[rng.uniform_int(data.train_records.size())];
      batch.masks.push_back(r.mask);
      real_imgs.push_back(r.img);
      auto paths = pick_style_images(
          data.rankings[r.img_rel], k, cfg.style_pool_top_n,
          Rng::derive(cfg.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(i),
                      kStyleStream));
      for (auto& p : paths) style_imgs.push_back(data.pool_image(p));
    }
    batch.real = tensor_from_images<float>(real_imgs);
    batch.style = tensor_from_images<float>(style_imgs);
    return batch;
  };

  if (start_step == 1) {
    val_l2_step0 = gan_val_pixel_l2(model, data.index, data.rankings, k, cfg.style_pool_top_n,
                                    cfg.seed);
    log.write({{"event", "val_pixel_l2"}, {"step", 0}, {"value", val_l2_step0}});
  }

  TrainResult result;
  result.final_step = start_step - 1;
  for (long step = start_step; step <= cfg.steps; ++step) {
    auto batch = make_batch(step);
    int N = static_cast<int>(batch.masks.size());

    // Generate once without gradients for the D step.
    Tensor<float> fake_val;
    {
      Tape<float> tp;
      GraphCtx<float> ctx{tp, false, false};
      auto codes = model.enc.forward(ctx, tp.constant(batch.style)).code;
      auto s_agg = nn::group_max(tp, codes, k);
      fake_val = model.gen.forward(ctx, batch.masks, s_agg)->val;
    }

    std::uint64_t gen_hash = hash_params(*model.store, "gen.");
    std::uint64_t enc_hash = hash_params(*model.store, "enc.");
    double d_loss_val;
    {
      Tape<float> tp;
      GraphCtx<float> ctx{tp, true, true};
      auto real_out = model.disc.forward(ctx, batch.masks, tp.constant(batch.real));
      ctx.training = false;  // one spectral update per step
      auto fake_out = model.disc.forward(ctx, batch.masks, tp.constant(fake_val));
      std::vector<NodeRef<float>> rl, fl;
      for (auto& o : real_out) rl.push_back(o.logits);
      for (auto& o : fake_out) fl.push_back(o.logits);
      auto d_loss = nn::gan_loss_d(tp, rl, fl);
      tp.backward(d_loss);
      adam_d.apply(nn::collect_grads(ctx));
      d_loss_val = d_loss->val[0];
    }
    if (hash_params(*model.store, "gen.") != gen_hash ||
        hash_params(*model.store, "enc.") != enc_hash)
      throw std::logic_error("train_gan: D step mutated generator/encoder parameters");

    std::uint64_t disc_hash = hash_params(*model.store, "disc.");
    nn::LossReport report;
    {
      Tape<float> tp;
      GraphCtx<float> ctxG{tp, true, true};
      GraphCtx<float> ctxC{tp, false, false};
      auto codes = model.enc.forward(ctxG, tp.constant(batch.style)).code;
      auto s_agg = nn::group_max(tp, codes, k);
      auto fake = model.gen.forward(ctxG, batch.masks, s_agg);
      ctxG.training = false;
      auto enc_fake = model.enc.forward(ctxG, fake);

      auto real_node = tp.constant(batch.real);
      auto d_real = model.disc.forward(ctxC, batch.masks, real_node);
      auto d_fake = model.disc.forward(ctxC, batch.masks, fake);
      auto enc_real = model.enc.forward(ctxC, real_node);

      std::vector<NodeRef<float>> fl;
      std::vector<std::vector<NodeRef<float>>> ffeats, rfeats;
      for (auto& o : d_fake) {
        fl.push_back(o.logits);
        ffeats.push_back(o.feats);
      }
      for (auto& o : d_real) rfeats.push_back(o.feats);

      auto gan_term = nn::gan_loss_g(tp, fl);
      auto fm_term = nn::feature_matching_loss(tp, ffeats, rfeats, cfg.l1_mean_normalize);
      auto l2_term = nn::l2_pixel_loss(tp, fake, real_node);
      auto style_term = nn::style_code_loss(tp, nn::stop_grad(tp, s_agg), enc_fake.code);
      auto gram_term = nn::gram_loss(tp, enc_fake.feats, enc_real.feats, cfg.l1_mean_normalize);
      auto obj = nn::generator_objective(tp, gan_term, fm_term, l2_term, style_term, gram_term,
                                         cfg.loss_weights);
      tp.backward(obj.total);
      adam_g.apply(nn::collect_grads(ctxG));
      report = obj.report;
      result.final_loss = report.total;
    }
    if (hash_params(*model.store, "disc.") != disc_hash)
      throw std::logic_error("train_gan: G step mutated discriminator parameters");

    json rec;
    rec["step"] = step;
    rec["d_loss"] = d_loss_val;
    for (auto& [name, v] : report.terms) rec[name] = v;
    rec["total"] = report.total;
    log.write(rec);
    if (cfg.checkpoint_every > 0 && (step % cfg.checkpoint_every == 0 || step == cfg.steps))
      save(step);
    result.final_step = step;
    (void)N;
  }
  if (saved_at != result.final_step) save(result.final_step);
  result.checkpoint_path = out_ckpt;
  result.val_baseline = val_l2_step0;
  result.val_metric =
      gan_val_pixel_l2(model, data.index, data.rankings, k, cfg.style_pool_top_n, cfg.seed);
  log.write({{"event", "val_pixel_l2"}, {"step", result.final_step}, {"value", result.val_metric}});
  return result;
}

}  // namespace seg2eye

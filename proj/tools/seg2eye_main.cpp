#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "seg2eye/checkpoint.hpp"
#include "seg2eye/image_io.hpp"
#include "seg2eye/losses.hpp"
#include "seg2eye/models.hpp"
#include "seg2eye/ranking.hpp"
#include "seg2eye/synthdata.hpp"
#include "seg2eye/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seg2eye;

namespace {

std::string resolve_cache_dir(const std::string& flag_value, const std::string& dataset_root) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("SEG2EYE_CACHE_DIR"); env && *env) return env;
  return (fs::path(dataset_root) / "cache").string();
}

TrainConfig load_train_config(const std::string& config_path) {
  TrainConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config: " + config_path);
    cfg = train_config_from_json(json::parse(in));
  }
  return cfg;
}

// Common training flags; values applied over the config file only when given.
struct TrainFlags {
  std::string config, data, metrics, resume, cache_dir;
  long steps = 0;
  int batch_size = 0, checkpoint_every = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config, "Training config JSON file");
    cmd->add_option("--data", data, "Dataset root directory");
    cmd->add_option("--steps", steps, "Training steps");
    cmd->add_option("--batch-size", batch_size, "Batch size");
    cmd->add_option("--lr", lr, "Learning rate");
    cmd->add_option("--seed", seed, "Random seed")->default_val(0);
    cmd->add_option("--checkpoint-every", checkpoint_every, "Checkpoint interval in steps");
    cmd->add_option("--metrics", metrics, "JSON-lines metrics log path");
    cmd->add_option("--resume", resume, "Checkpoint to resume from");
    cmd->add_option("--cache-dir", cache_dir, "Pseudo-label cache directory");
  }

  TrainConfig build(const CLI::App* cmd, const std::string& stage) const {
    TrainConfig cfg = load_train_config(config);
    cfg.stage = stage;
    if (!data.empty()) cfg.dataset_root = data;
    if (cfg.dataset_root.empty()) throw CLI::ValidationError("--data", "dataset root is required");
    if (cmd->count("--steps")) cfg.steps = static_cast<int>(steps);
    if (cmd->count("--batch-size")) cfg.batch_size = batch_size;
    if (cmd->count("--lr")) cfg.lr = lr;
    if (cmd->count("--seed")) cfg.seed = seed;
    if (cmd->count("--checkpoint-every")) cfg.checkpoint_every = checkpoint_every;
    cfg.cache_dir = resolve_cache_dir(cache_dir, cfg.dataset_root);
    cfg.model.resolution = cfg.resolution;
    return cfg;
  }
};

void print_train_result(const TrainResult& r) {
  json j;
  j["checkpoint"] = r.checkpoint_path;
  j["final_step"] = r.final_step;
  j["final_loss"] = r.final_loss;
  j["val_metric"] = r.val_metric;
  j["val_baseline"] = r.val_baseline;
  std::cout << j.dump() << "\n";
}

GrayImage load_image_file(const std::string& path) {
  int h = 0, w = 0;
  auto pix = read_png_gray(path, h, w);
  return to_internal(pix, h, w);
}

void write_image_file(const std::string& path, const GrayImage& img) {
  write_png_gray(path, to_disk(img), img.height, img.width);
}

StyleCode aggregate_files(const GanModel& model, const std::vector<std::string>& paths) {
  std::vector<StyleCode> codes;
  codes.reserve(paths.size());
  for (auto& p : paths) codes.push_back(model.encode_style(load_image_file(p)));
  return nn::aggregate_styles(codes);
}

// Row-major grid with 4 columns; unused cells black.
GrayImage make_grid(const std::vector<GrayImage>& frames, int columns = 4) {
  int n = static_cast<int>(frames.size());
  int cols = std::min(columns, n);
  int rows = (n + columns - 1) / columns;
  int H = frames[0].height, W = frames[0].width;
  GrayImage grid(rows * H, cols * W);
  for (auto& p : grid.data) p = -1.0;
  for (int i = 0; i < n; ++i) {
    int r = i / columns, c = i % columns;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) grid.at(r * H + y, c * W + x) = frames[static_cast<size_t>(i)].at(y, x);
  }
  return grid;
}

double challenge_on_files(const std::string& pred_path, const std::string& target_path) {
  int ph = 0, pw = 0, th = 0, tw = 0;
  auto pp = read_png_gray(pred_path, ph, pw);
  auto tp = read_png_gray(target_path, th, tw);
  if (ph != th || pw != tw)
    throw std::runtime_error("size mismatch between " + pred_path + " and " + target_path);
  return nn::challenge_metric(pp, tp, ph, pw);
}

int run(int argc, char** argv) {
  CLI::App app{"Eye image synthesis from segmentation masks"};
  app.require_subcommand(1);

  // synth-data -----------------------------------------------------------
  auto* sd = app.add_subcommand("synth-data", "Generate the procedural eye dataset");
  std::string sd_out;
  DatasetConfig sd_cfg;
  sd->add_option("--out", sd_out, "Output dataset directory")->required();
  sd->add_option("--persons", sd_cfg.persons, "Number of persons");
  sd->add_option("--images-per-person", sd_cfg.images_per_person, "Images per person");
  sd->add_option("--labeled-fraction", sd_cfg.labeled_fraction, "Fraction of labeled images");
  sd->add_option("--resolution", sd_cfg.resolution, "Image resolution");
  sd->add_option("--seed", sd_cfg.seed, "Random seed")->default_val(0);
  sd->callback([&] {
    sd_cfg.root = sd_out;
    DatasetIndex index = build_dataset(sd_cfg);
    json j;
    j["root"] = index.root;
    j["persons"] = index.persons.size();
    std::cout << j.dump() << "\n";
  });

  // train-seg ------------------------------------------------------------
  auto* ts = app.add_subcommand("train-seg", "Train the segmenter");
  TrainFlags ts_flags;
  std::string ts_out;
  ts_flags.add_to(ts);
  ts->add_option("--out", ts_out, "Output checkpoint path")->required();
  ts->callback([&] {
    TrainConfig cfg = ts_flags.build(ts, "segmenter");
    print_train_result(train_segmenter(cfg, ts_out, ts_flags.metrics, ts_flags.resume));
  });

  // pseudo-label ---------------------------------------------------------
  auto* pl = app.add_subcommand("pseudo-label", "Pseudo-label the unlabeled pool into the cache");
  std::string pl_ckpt, pl_data, pl_cache;
  pl->add_option("--checkpoint", pl_ckpt, "Segmenter checkpoint")->required();
  pl->add_option("--data", pl_data, "Dataset root directory")->required();
  pl->add_option("--cache-dir", pl_cache, "Pseudo-label cache directory");
  pl->callback([&] {
    DatasetIndex index = load_index(pl_data);
    SegmenterModel seg = load_segmenter(pl_ckpt);
    std::string hash = file_hash_hex(pl_ckpt);
    std::string cache = resolve_cache_dir(pl_cache, pl_data);
    int count = 0;
    for (auto& p : index.persons)
      for (auto& r : p.records)
        if (!r.labeled) {
          pseudo_label({(fs::path(index.root) / r.img).string(), r.img}, seg, cache, hash);
          ++count;
        }
    json j;
    j["labeled_images"] = count;
    j["cache_dir"] = cache;
    std::cout << j.dump() << "\n";
  });

  // rank -----------------------------------------------------------------
  auto* rk = app.add_subcommand("rank", "Rank unlabeled pools against labeled masks");
  std::string rk_ckpt, rk_data, rk_out, rk_cache;
  rk->add_option("--checkpoint", rk_ckpt, "Segmenter checkpoint")->required();
  rk->add_option("--data", rk_data, "Dataset root directory")->required();
  rk->add_option("--out", rk_out, "Output rankings JSON path")->required();
  rk->add_option("--cache-dir", rk_cache, "Pseudo-label cache directory");
  rk->callback([&] {
    DatasetIndex index = load_index(rk_data);
    SegmenterModel seg = load_segmenter(rk_ckpt);
    ClassMeans means = compute_class_means(index);
    std::string hash = file_hash_hex(rk_ckpt);
    std::string cache = resolve_cache_dir(rk_cache, rk_data);
    DatasetRankings rankings = rank_dataset(index, seg, means, cache, hash);
    std::ofstream out(rk_out);
    if (!out) throw std::runtime_error("cannot open output: " + rk_out);
    out << rankings_to_json(rankings).dump(2) << "\n";
    json j;
    j["targets"] = rankings.size();
    j["out"] = rk_out;
    std::cout << j.dump() << "\n";
  });

  // train-refiner --------------------------------------------------------
  auto* tr = app.add_subcommand("train-refiner", "Train the refiner");
  TrainFlags tr_flags;
  std::string tr_seg, tr_rank, tr_out;
  tr_flags.add_to(tr);
  tr->add_option("--segmenter", tr_seg, "Segmenter checkpoint")->required();
  tr->add_option("--rankings", tr_rank, "Rankings JSON path")->required();
  tr->add_option("--out", tr_out, "Output checkpoint path")->required();
  tr->callback([&] {
    TrainConfig cfg = tr_flags.build(tr, "refiner");
    print_train_result(
        train_refiner(cfg, tr_seg, tr_rank, tr_out, tr_flags.metrics, tr_flags.resume));
  });

  // train-gan ------------------------------------------------------------
  auto* tg = app.add_subcommand("train-gan", "Train the style-based generator");
  TrainFlags tg_flags;
  std::string tg_rank, tg_out;
  double tg_lr_g = 0.0, tg_lr_d = 0.0;
  tg_flags.add_to(tg);
  tg->add_option("--rankings", tg_rank, "Rankings JSON path")->required();
  tg->add_option("--out", tg_out, "Output checkpoint path")->required();
  tg->add_option("--lr-g", tg_lr_g, "Generator learning rate");
  tg->add_option("--lr-d", tg_lr_d, "Discriminator learning rate");
  tg->callback([&] {
    TrainConfig cfg = tg_flags.build(tg, "gan");
    if (tg->count("--lr-g")) cfg.lr_g = tg_lr_g;
    if (tg->count("--lr-d")) cfg.lr_d = tg_lr_d;
    print_train_result(train_gan(cfg, tg_rank, tg_out, tg_flags.metrics, tg_flags.resume));
  });

  // generate -------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "Generate an image from a mask and style images");
  std::string gen_ckpt, gen_mask, gen_out, gen_target;
  std::vector<std::string> gen_styles;
  gen->add_option("--checkpoint", gen_ckpt, "GAN checkpoint")->required();
  gen->add_option("--mask", gen_mask, "Segmentation mask PNG")->required();
  gen->add_option("--style-images", gen_styles, "Style image PNGs")->required()->expected(1, -1);
  gen->add_option("--out", gen_out, "Output PNG path")->required();
  gen->add_option("--target", gen_target, "Target PNG; prints the challenge metric");
  gen->callback([&] {
    GanModel model = load_gan(gen_ckpt);
    SegMask mask = load_mask(gen_mask);
    StyleCode style = aggregate_files(model, gen_styles);
    GrayImage img = model.generate(mask, style);
    write_image_file(gen_out, img);
    if (!gen_target.empty())
      std::cout << json(challenge_on_files(gen_out, gen_target)).dump() << "\n";
  });

  // interpolate ----------------------------------------------------------
  auto* itp = app.add_subcommand("interpolate", "Linear style interpolation between two code sets");
  std::string itp_ckpt, itp_mask, itp_dir;
  std::vector<std::string> itp_a, itp_b;
  int itp_steps = 8;
  itp->add_option("--checkpoint", itp_ckpt, "GAN checkpoint")->required();
  itp->add_option("--mask", itp_mask, "Segmentation mask PNG")->required();
  itp->add_option("--style-a", itp_a, "Style image PNGs, side A")->required()->expected(1, -1);
  itp->add_option("--style-b", itp_b, "Style image PNGs, side B")->required()->expected(1, -1);
  itp->add_option("--steps", itp_steps, "Number of frames")->check(CLI::Range(2, 1000000));
  itp->add_option("--out-dir", itp_dir, "Output directory")->required();
  itp->callback([&] {
    GanModel model = load_gan(itp_ckpt);
    SegMask mask = load_mask(itp_mask);
    StyleCode sa = aggregate_files(model, itp_a);
    StyleCode sb = aggregate_files(model, itp_b);
    fs::create_directories(itp_dir);
    std::vector<GrayImage> frames;
    for (int i = 0; i < itp_steps; ++i) {
      double alpha = static_cast<double>(i) / (itp_steps - 1);
      StyleCode s(sa.size());
      for (size_t j = 0; j < s.size(); ++j) s[j] = (1.0 - alpha) * sa[j] + alpha * sb[j];
      frames.push_back(model.generate(mask, s));
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%03d.png", i);
      write_image_file((fs::path(itp_dir) / name).string(), frames.back());
    }
    write_image_file((fs::path(itp_dir) / "grid.png").string(), make_grid(frames));
  });

  // refine ---------------------------------------------------------------
  auto* rf = app.add_subcommand("refine", "Refine a reference image toward a target mask");
  std::string rf_ckpt, rf_tmask, rf_rmask, rf_rimg, rf_out, rf_residual;
  rf->add_option("--checkpoint", rf_ckpt, "Refiner checkpoint")->required();
  rf->add_option("--target-mask", rf_tmask, "Target mask PNG")->required();
  rf->add_option("--ref-mask", rf_rmask, "Reference mask PNG")->required();
  rf->add_option("--ref-image", rf_rimg, "Reference image PNG")->required();
  rf->add_option("--out", rf_out, "Refined output PNG")->required();
  rf->add_option("--residual-out", rf_residual, "Residual map PNG (default: <out stem>_residual.png)");
  rf->callback([&] {
    RefinerModel model = load_refiner(rf_ckpt);
    auto [residual, refined] =
        model.refine_image(load_mask(rf_tmask), load_mask(rf_rmask), load_image_file(rf_rimg));
    write_image_file(rf_out, refined);
    std::string res_path = rf_residual;
    if (res_path.empty()) {
      fs::path p(rf_out);
      res_path = (p.parent_path() / (p.stem().string() + "_residual.png")).string();
    }
    // 128-centered signed encoding: residual 0 -> gray 128.
    write_image_file(res_path, residual);
  });

  // evaluate -------------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate", "Challenge metric over matching prediction/target PNGs");
  std::string ev_pred, ev_target;
  ev->add_option("--pred-dir", ev_pred, "Prediction directory")->required();
  ev->add_option("--target-dir", ev_target, "Target directory")->required();
  ev->callback([&] {
    std::map<std::string, fs::path> preds, targets;
    for (auto& e : fs::directory_iterator(ev_pred))
      if (e.path().extension() == ".png") preds[e.path().filename().string()] = e.path();
    for (auto& e : fs::directory_iterator(ev_target))
      if (e.path().extension() == ".png") targets[e.path().filename().string()] = e.path();
    std::vector<std::string> missing;
    for (auto& [name, p] : preds)
      if (!targets.count(name)) missing.push_back("target missing for " + name);
    for (auto& [name, p] : targets)
      if (!preds.count(name)) missing.push_back("prediction missing for " + name);
    if (!missing.empty()) {
      std::string msg = "mismatched directories:";
      for (auto& m : missing) msg += "\n  " + m;
      throw std::runtime_error(msg);
    }
    if (preds.empty()) throw std::runtime_error("no PNG pairs found");
    json per_image = json::object();
    double sum = 0.0;
    for (auto& [name, p] : preds) {
      double v = challenge_on_files(p.string(), targets[name].string());
      per_image[name] = v;
      sum += v;
    }
    double mean = sum / static_cast<double>(preds.size());
    json j;
    j["per_image"] = per_image;
    j["mean"] = mean;
    std::cout << j.dump() << "\n";
    std::cout << "mean " << json(mean).dump() << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

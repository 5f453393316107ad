#include "seg2eye/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "seg2eye/rng.hpp"

namespace seg2eye {

using nlohmann::json;

json model_config_to_json(const nn::ModelConfig& cfg) {
  json j;
  j["resolution"] = cfg.resolution;
  j["num_classes"] = cfg.num_classes;
  j["ds"] = cfg.ds;
  j["k_style"] = cfg.k_style;
  j["spade_hidden"] = cfg.spade_hidden;
  j["gen_widths"] = cfg.gen_widths;
  j["enc_widths"] = cfg.enc_widths;
  j["disc_widths"] = cfg.disc_widths;
  j["disc_scales"] = cfg.disc_scales;
  j["unet_widths"] = cfg.unet_widths;
  j["eps"] = cfg.eps;
  return j;
}

nn::ModelConfig model_config_from_json(const json& j) {
  nn::ModelConfig cfg;
  cfg.resolution = j.at("resolution").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.ds = j.at("ds").get<int>();
  cfg.k_style = j.at("k_style").get<int>();
  cfg.spade_hidden = j.at("spade_hidden").get<int>();
  cfg.gen_widths = j.at("gen_widths").get<std::vector<int>>();
  cfg.enc_widths = j.at("enc_widths").get<std::vector<int>>();
  cfg.disc_widths = j.at("disc_widths").get<std::vector<int>>();
  cfg.disc_scales = j.at("disc_scales").get<int>();
  cfg.unet_widths = j.at("unet_widths").get<std::vector<int>>();
  cfg.eps = j.at("eps").get<double>();
  return cfg;
}

void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
  json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["kind"] = ckpt.kind;
  header["step"] = ckpt.step;
  header["config"] = ckpt.config;
  header["extra"] = ckpt.extra;
  json manifest = json::array();
  std::uint64_t offset = 0;
  for (auto& [name, t] : ckpt.tensors) {
    json e;
    e["name"] = name;
    e["shape"] = t.shape;
    e["offset"] = offset;
    manifest.push_back(e);
    offset += static_cast<std::uint64_t>(t.size()) * sizeof(float);
  }
  header["manifest"] = manifest;

  std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
  std::uint64_t hlen = hs.size();
  unsigned char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<unsigned char>((hlen >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(lenbuf), 8);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (auto& [name, t] : ckpt.tensors)
    out.write(reinterpret_cast<const char*>(t.v.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!out) throw CheckpointError("write failure for checkpoint: " + path);
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  unsigned char lenbuf[8];
  if (!in.read(reinterpret_cast<char*>(lenbuf), 8))
    throw CheckpointFormatError("truncated checkpoint header length: " + path);
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(lenbuf[i]) << (8 * i);
  if (hlen > (1ull << 30)) throw CheckpointFormatError("implausible header length: " + path);
  std::string hs(hlen, '\0');
  if (!in.read(hs.data(), static_cast<std::streamsize>(hlen)))
    throw CheckpointFormatError("truncated checkpoint header: " + path);
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception&) {
    throw CheckpointFormatError("unparseable checkpoint header: " + path);
  }
  int version = header.at("format_version").get<int>();
  if (version != kCheckpointFormatVersion)
    throw CheckpointVersionError("unsupported checkpoint format_version " +
                                 std::to_string(version) + " in " + path);
  Checkpoint ckpt;
  ckpt.kind = header.at("kind").get<std::string>();
  ckpt.step = header.at("step").get<long>();
  ckpt.config = header.at("config");
  ckpt.extra = header.value("extra", json::object());
  for (auto& e : header.at("manifest")) {
    std::string name = e.at("name").get<std::string>();
    auto shape = e.at("shape").get<std::vector<int>>();
    Tensor<float> t(shape);
    if (!in.read(reinterpret_cast<char*>(t.v.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(float))))
      throw CheckpointFormatError("truncated checkpoint payload at tensor " + name + ": " + path);
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

void snapshot_store(const nn::ParamStore<float>& store, Checkpoint& ckpt) {
  for (auto& p : store.all()) {
    ckpt.tensors.emplace_back("p." + p->name, p->value);
    if (p->spectral) {
      ckpt.tensors.emplace_back("u." + p->name, p->u);
      ckpt.tensors.emplace_back("v." + p->name, p->v);
    }
  }
}

void restore_store(nn::ParamStore<float>& store, const Checkpoint& ckpt) {
  for (auto& p : store.all()) {
    const Tensor<float>* t = ckpt.find("p." + p->name);
    if (!t) throw CheckpointFormatError("checkpoint missing parameter " + p->name);
    if (t->shape != p->value.shape)
      throw CheckpointFormatError("checkpoint shape mismatch for " + p->name + ": stored " +
                                  Tensor<float>(t->shape).shape_str() + " vs model " +
                                  p->value.shape_str());
    p->value = *t;
    if (p->spectral) {
      const Tensor<float>* u = ckpt.find("u." + p->name);
      const Tensor<float>* v = ckpt.find("v." + p->name);
      if (!u || !v) throw CheckpointFormatError("checkpoint missing spectral state for " + p->name);
      p->u = *u;
      p->v = *v;
    }
  }
}

namespace {
void require_kind(const Checkpoint& ckpt, const std::string& kind, const std::string& path) {
  if (ckpt.kind != kind)
    throw CheckpointKindError("checkpoint " + path + " has kind '" + ckpt.kind + "', expected '" +
                              kind + "'");
}
}  // namespace

SegmenterModel load_segmenter(const std::string& path, Checkpoint* out_ckpt) {
  Checkpoint ckpt = load_checkpoint_file(path);
  require_kind(ckpt, "segmenter", path);
  auto model = SegmenterModel::create(model_config_from_json(ckpt.config), 0);
  restore_store(*model.store, ckpt);
  if (out_ckpt) *out_ckpt = std::move(ckpt);
  return model;
}

RefinerModel load_refiner(const std::string& path, Checkpoint* out_ckpt) {
  Checkpoint ckpt = load_checkpoint_file(path);
  require_kind(ckpt, "refiner", path);
  auto model = RefinerModel::create(model_config_from_json(ckpt.config), 0);
  restore_store(*model.store, ckpt);
  if (out_ckpt) *out_ckpt = std::move(ckpt);
  return model;
}

GanModel load_gan(const std::string& path, Checkpoint* out_ckpt) {
  Checkpoint ckpt = load_checkpoint_file(path);
  require_kind(ckpt, "gan", path);
  auto model = GanModel::create(model_config_from_json(ckpt.config), 0);
  restore_store(*model.store, ckpt);
  if (out_ckpt) *out_ckpt = std::move(ckpt);
  return model;
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("file_hash_hex: cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
    if (got < static_cast<std::streamsize>(sizeof(buf))) break;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return std::string(out);
}

}  // namespace seg2eye

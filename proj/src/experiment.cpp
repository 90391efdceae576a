#include "lway/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "lway/analysis.hpp"
#include "lway/checkpoint.hpp"
#include "lway/errors.hpp"
#include "lway/imaging.hpp"
#include "lway/losses.hpp"
#include "lway/rng.hpp"
#include "lway/synthetic.hpp"
#include "lway/wavelet.hpp"

namespace lway::experiment {

using nlohmann::json;

namespace {

const std::vector<std::string> kSweepAxes = {"param_fraction", "embed_dim", "num_images", "hf_weight", "model_size"};

// Seed streams.
constexpr std::uint64_t kSrSplit = 1ull << 20;
constexpr std::uint64_t kTrainSplit = 2ull << 20;
constexpr std::uint64_t kHeldoutSplit = 3ull << 20;
constexpr std::uint64_t kTestSplit = 4ull << 20;
constexpr std::uint64_t kEmbedSplit = 5ull << 20;
constexpr std::uint64_t kEmbedDegradation = 1ull << 24;

degrade::DegradationFamily family(std::string name, degrade::Range<double> blur, std::vector<int> kernels,
                                  degrade::Range<double> noise, std::optional<degrade::Range<int>> jpeg,
                                  std::uint64_t seed) {
  degrade::DegradationFamily f;
  f.name = std::move(name);
  f.blur_sigma = blur;
  f.blur_kernel = std::move(kernels);
  f.scale = {2};
  f.noise_sigma = noise;
  f.jpeg_quality = jpeg;
  f.rng_seed = seed;
  return f;
}

template <class F>
void strict_object(const json& j, const std::string& where, const std::vector<std::string>& known, F&& read) {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown key '" + where + "." + key + "'");
    try {
      read(key, v);
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + where + "." + key + "': " + e.what());
    }
  }
}

train::FineTuneConfig training_block(const json& j, train::FineTuneConfig base, const std::string& where) {
  try {
    json merged = base;
    merged.update(j);
    return merged.get<train::FineTuneConfig>();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

// Stage seed from the run seed and the block's own seed.
train::FineTuneConfig seeded(const train::FineTuneConfig& block, std::uint64_t run_seed) {
  auto c = block;
  c.seed = derive_seed(run_seed, block.seed);
  return c;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

void write_json(const fs::path& path, const json& j) {
  ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string sample_id(const std::string& prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%04d", prefix.c_str(), i);
  return buf;
}

Image as_rgb(const Image& img) {
  if (img.channels() == 3) return img;
  Image out(3, img.height(), img.width());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) out.at(c, y, x) = img.at(0, y, x);
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// HR source shared by all splits.
class HrSource {
 public:
  explicit HrSource(const ExperimentConfig& cfg) : cfg_(cfg) {
    if (cfg.data.hr_dir.empty()) return;
    std::vector<fs::path> files;
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(cfg.data.hr_dir, ec))
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    if (ec) throw IoError("cannot list '" + cfg.data.hr_dir + "': " + ec.message());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto grid = imaging::extract_patches(as_rgb(imaging::load_image(f)), cfg.data.patch, cfg.data.stride);
      for (auto& p : grid.patches) pool_.push_back(std::move(p));
    }
    if (pool_.empty()) throw DataError("no HR patches found in '" + cfg.data.hr_dir + "'");
    Rng rng(derive_seed(cfg.seed, 17));
    std::shuffle(pool_.begin(), pool_.end(), rng);
  }

  Image get(std::uint64_t stream, int i, int side) const {
    if (pool_.empty()) return synthetic::make_scene(side, side, derive_seed(cfg_.seed, stream + static_cast<std::uint64_t>(i)));
    const auto& p = pool_[(stream / kSrSplit * 7919 + static_cast<std::uint64_t>(i)) % pool_.size()];
    return side == p.height() && side == p.width() ? p : crop(p, 0, 0, side, side);
  }

  int side() const { return pool_.empty() ? cfg_.data.hr_size : cfg_.data.patch; }

 private:
  const ExperimentConfig& cfg_;
  std::vector<Image> pool_;
};

void write_csv(const fs::path& path, const std::string& header, const std::vector<std::string>& rows) {
  ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << header << "\n";
  for (const auto& r : rows) out << r << "\n";
}

void save_sr(const fs::path& dir, const nn::SrModel<float>& model, const json& extra) {
  nn::Checkpoint ck;
  nn::append_parameters(ck, model.params());
  ck.metadata = {{"kind", "sr"}, {"sr", model.config()}};
  ck.metadata.update(extra);
  nn::save_checkpoint(dir, ck);
}

void save_lr_recon(const fs::path& dir, const nn::EncoderNet<float>& e, const nn::ReconstructorNet<float>& r) {
  nn::Checkpoint ck;
  nn::append_parameters(ck, e.params());
  nn::append_parameters(ck, r.params());
  ck.metadata = {{"kind", "lr_recon"}, {"encoder", e.config()}, {"reconstructor", r.config()}};
  nn::save_checkpoint(dir, ck);
}

void expect_kind(const nn::Checkpoint& ck, const std::string& kind, const fs::path& dir) {
  if (ck.metadata.value("kind", std::string{}) != kind)
    throw FormatError("'" + dir.string() + "' is not a " + kind + " checkpoint");
}

struct Adapted {
  std::map<std::string, nn::SrModel<float>> by_name;
  std::vector<std::string> per_image;  // model name for each test image
  const nn::SrModel<float>& model_for(std::size_t i) const { return by_name.at(per_image.at(i)); }
};

Adapted load_adapted(const Layout& lay) {
  const auto index = read_json(lay.adapted_checkpoint() / "index.json");
  Adapted a;
  for (const auto& entry : index.at("models")) {
    const auto name = entry.get<std::string>();
    a.per_image.push_back(name);
    if (!a.by_name.count(name)) a.by_name.emplace(name, load_sr(lay.adapted_checkpoint() / name));
  }
  return a;
}

struct ScoredRun {
  train::FineTuneResult result;
  std::vector<double> baseline_psnr, adapted_psnr, final_loss;
};

// Adapts on the LR images only, then scores against the HR set when given.
ScoredRun finetune_and_score(const ExperimentConfig& cfg, const nn::SrModel<float>& sr, const LrReconBundle& lrr,
                             const std::vector<Sample>& tests, const fs::path& out_dir) {
  const losses::PerceptualExtractor<float> f;
  std::vector<Image> lrs;
  for (const auto& s : tests) lrs.push_back(s.lr);
  const auto ft = seeded(cfg.finetune, cfg.seed);
  ScoredRun run{train::lway_finetune(sr, lrr.encoder, lrr.reconstructor, lrs, ft, f), {}, {}, {}};

  ensure_dir(out_dir);
  const bool per_image = ft.mode == train::FineTuneMode::PerImage;
  for (std::size_t h = 0; h < run.result.histories.size(); ++h) {
    const auto name = per_image ? "finetune_history_" + tests[h].id + ".csv" : std::string("finetune_history.csv");
    run.result.histories[h].write_csv(out_dir / name);
  }
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const auto& model = run.result.model_for(i);
    run.final_loss.push_back(train::self_supervised_loss(model, lrr.encoder, lrr.reconstructor, tests[i].lr, ft, f).total);
    if (!tests[i].hr.empty()) {
      run.baseline_psnr.push_back(imaging::psnr(sr.super_resolve(tests[i].lr), tests[i].hr));
      run.adapted_psnr.push_back(imaging::psnr(model.super_resolve(tests[i].lr), tests[i].hr));
    }
  }
  return run;
}

// Medians of the first and last tenth of a loss curve.
void history_deciles(const train::TrainHistory& h, double& first, double& last) {
  std::vector<double> totals;
  for (const auto& r : h.records) totals.push_back(r.total);
  const std::size_t n = std::max<std::size_t>(1, (totals.size() + 9) / 10);
  first = median({totals.begin(), totals.begin() + static_cast<std::ptrdiff_t>(std::min(n, totals.size()))});
  last = median({totals.end() - static_cast<std::ptrdiff_t>(std::min(n, totals.size())), totals.end()});
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.train_families = {family("blur", {1.2, 2.5}, {11}, {0.0, 0.0}, std::nullopt, 1),
                      family("noise", {0.0, 0.0}, {0}, {0.02, 0.05}, std::nullopt, 2),
                      family("jpeg", {0.0, 0.0}, {0}, {0.0, 0.0}, degrade::Range<int>{10, 30}, 3)};
  c.test_family = family("blur_noise", {1.0, 1.6}, {11}, {0.005, 0.015}, std::nullopt, 77);

  c.pretrain_sr.learning_rate = 1e-3;
  c.pretrain_sr.max_iters = 1000;
  c.pretrain_sr.patch = 16;
  c.pretrain_sr.seed = 1;
  c.pretrain_lr.learning_rate = 2e-3;
  c.pretrain_lr.max_iters = 2000;
  c.pretrain_lr.patch = 32;
  c.pretrain_lr.seed = 2;
  c.finetune.patch = 16;
  c.finetune.seed = 3;
  return c;
}

void validate(const ExperimentConfig& c) {
  const auto& m = c.model;
  if (m.scale != 2 && m.scale != 4) throw ConfigError("model.scale must be 2 or 4");
  if (m.embed_dim < 1 || m.encoder_width < 1 || m.recon_width < 1 || m.sr_width < 1 || m.sr_blocks < 0)
    throw ConfigError("model sizes must be positive");
  const int log2s = m.scale == 2 ? 1 : 2;
  if (m.recon_layers < log2s + 1) throw ConfigError("model.recon_layers too small for the scale");
  const auto& d = c.data;
  if (d.sr_pairs < 1 || d.train_pairs < 1 || d.heldout_pairs < 0 || d.test_images < 1)
    throw ConfigError("data counts must be positive");
  const int side = d.hr_dir.empty() ? d.hr_size : d.patch;
  if (side % m.scale != 0 || side / m.scale < nn::EncoderNet<float>::kMinExtent)
    throw ConfigError("HR side must be a multiple of the scale with an LR side of at least 16");
  if (d.stride < 1) throw ConfigError("data.stride must be positive");
  if (c.train_families.empty()) throw ConfigError("degradation.train needs at least one family");
  auto check_family = [&](const degrade::DegradationFamily& f) {
    if (f.scale != std::vector<int>{m.scale})
      throw ConfigError("degradation family '" + f.name + "' must use the model scale only");
  };
  for (const auto& f : c.train_families) check_family(f);
  check_family(c.test_family);
  for (const auto* b : {&c.pretrain_sr, &c.pretrain_lr, &c.finetune}) train::validate(*b);
  if (!c.sweep.axis.empty() &&
      std::find(kSweepAxes.begin(), kSweepAxes.end(), c.sweep.axis) == kSweepAxes.end())
    throw ConfigError("unknown sweep axis '" + c.sweep.axis + "'");
  if (c.embeddings.crops_per_family < 1 || c.embeddings.crop < nn::EncoderNet<float>::kMinExtent)
    throw ConfigError("embeddings.crops_per_family must be positive and embeddings.crop >= 16");
  if (!(c.embeddings.holdout > 0.0 && c.embeddings.holdout < 1.0))
    throw ConfigError("embeddings.holdout must lie in (0, 1)");
}

json to_json(const ExperimentConfig& c) {
  json train_fams = json::array();
  for (const auto& f : c.train_families) train_fams.push_back(f);
  json sweep = json::object();
  if (!c.sweep.axis.empty()) sweep[c.sweep.axis] = c.sweep.values;
  return {{"seed", c.seed},
          {"output_dir", c.output_dir},
          {"data",
           {{"hr_dir", c.data.hr_dir},
            {"hr_size", c.data.hr_size},
            {"patch", c.data.patch},
            {"stride", c.data.stride},
            {"sr_pairs", c.data.sr_pairs},
            {"train_pairs", c.data.train_pairs},
            {"heldout_pairs", c.data.heldout_pairs},
            {"test_images", c.data.test_images}}},
          {"degradation", {{"train", train_fams}, {"test", c.test_family}}},
          {"model",
           {{"scale", c.model.scale},
            {"embed_dim", c.model.embed_dim},
            {"encoder_width", c.model.encoder_width},
            {"recon_width", c.model.recon_width},
            {"recon_layers", c.model.recon_layers},
            {"sr_width", c.model.sr_width},
            {"sr_blocks", c.model.sr_blocks}}},
          {"pretrain_sr", c.pretrain_sr},
          {"pretrain_lr_recon", c.pretrain_lr},
          {"finetune", c.finetune},
          {"sweep", sweep},
          {"embeddings",
           {{"crops_per_family", c.embeddings.crops_per_family},
            {"crop", c.embeddings.crop},
            {"holdout", c.embeddings.holdout},
            {"probe_seed", c.embeddings.probe_seed}}}};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c = default_config();
  const json* degradation = nullptr;
  strict_object(j, "config",
                {"seed", "output_dir", "data", "degradation", "model", "pretrain_sr", "pretrain_lr_recon", "finetune",
                 "sweep", "embeddings"},
                [&](const std::string& key, const json& v) {
                  if (key == "seed") c.seed = v.get<std::uint64_t>();
                  else if (key == "output_dir") c.output_dir = v.get<std::string>();
                  else if (key == "data")
                    strict_object(v, "data",
                                  {"hr_dir", "hr_size", "patch", "stride", "sr_pairs", "train_pairs", "heldout_pairs",
                                   "test_images"},
                                  [&](const std::string& k, const json& x) {
                                    auto& d = c.data;
                                    if (k == "hr_dir") d.hr_dir = x.get<std::string>();
                                    else if (k == "hr_size") d.hr_size = x.get<int>();
                                    else if (k == "patch") d.patch = x.get<int>();
                                    else if (k == "stride") d.stride = x.get<int>();
                                    else if (k == "sr_pairs") d.sr_pairs = x.get<int>();
                                    else if (k == "train_pairs") d.train_pairs = x.get<int>();
                                    else if (k == "heldout_pairs") d.heldout_pairs = x.get<int>();
                                    else d.test_images = x.get<int>();
                                  });
                  else if (key == "degradation") degradation = &v;
                  else if (key == "model")
                    strict_object(v, "model",
                                  {"scale", "embed_dim", "encoder_width", "recon_width", "recon_layers", "sr_width",
                                   "sr_blocks"},
                                  [&](const std::string& k, const json& x) {
                                    auto& m = c.model;
                                    if (k == "scale") m.scale = x.get<int>();
                                    else if (k == "embed_dim") m.embed_dim = x.get<int>();
                                    else if (k == "encoder_width") m.encoder_width = x.get<int>();
                                    else if (k == "recon_width") m.recon_width = x.get<int>();
                                    else if (k == "recon_layers") m.recon_layers = x.get<int>();
                                    else if (k == "sr_width") m.sr_width = x.get<int>();
                                    else m.sr_blocks = x.get<int>();
                                  });
                  else if (key == "pretrain_sr") c.pretrain_sr = training_block(v, c.pretrain_sr, key);
                  else if (key == "pretrain_lr_recon") c.pretrain_lr = training_block(v, c.pretrain_lr, key);
                  else if (key == "finetune") c.finetune = training_block(v, c.finetune, key);
                  else if (key == "sweep") {
                    if (!v.is_object()) throw ConfigError("'sweep' must be a JSON object");
                    if (v.size() > 1) throw ConfigError("'sweep' takes a single axis");
                    for (const auto& [axis, values] : v.items()) {
                      if (std::find(kSweepAxes.begin(), kSweepAxes.end(), axis) == kSweepAxes.end())
                        throw ConfigError("unknown key 'sweep." + axis + "'");
                      if (!values.is_array() || values.empty())
                        throw ConfigError("'sweep." + axis + "' must be a non-empty array");
                      c.sweep.axis = axis;
                      c.sweep.values.assign(values.begin(), values.end());
                    }
                  } else
                    strict_object(v, "embeddings", {"crops_per_family", "crop", "holdout", "probe_seed"},
                                  [&](const std::string& k, const json& x) {
                                    auto& e = c.embeddings;
                                    if (k == "crops_per_family") e.crops_per_family = x.get<int>();
                                    else if (k == "crop") e.crop = x.get<int>();
                                    else if (k == "holdout") e.holdout = x.get<double>();
                                    else e.probe_seed = x.get<std::uint64_t>();
                                  });
                });
  // Families follow the model scale unless they name one.
  if (degradation) {
    auto read_family = [&](json f, const std::string& where) {
      if (f.is_object() && !f.contains("scale")) f["scale"] = {c.model.scale};
      try {
        return f.get<degrade::DegradationFamily>();
      } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
      } catch (const json::exception& e) {
        throw ConfigError(where + ": " + e.what());
      }
    };
    strict_object(*degradation, "degradation", {"train", "test"}, [&](const std::string& k, const json& x) {
      if (k == "test") {
        c.test_family = read_family(x, "degradation.test");
      } else {
        if (!x.is_array()) throw ConfigError("'degradation.train' must be an array");
        c.train_families.clear();
        for (const auto& f : x) c.train_families.push_back(read_family(f, "degradation.train"));
      }
    });
  }
  if (!degradation || !degradation->contains("train"))
    for (auto& f : c.train_families) f.scale = {c.model.scale};
  if (!degradation || !degradation->contains("test")) c.test_family.scale = {c.model.scale};
  validate(c);
  return c;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::stringstream path(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(path, part, '.')) {
    if (part.empty()) throw ArgumentError("--set key '" + key + "' has an empty component");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ArgumentError("--set key '" + key + "' descends into a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ArgumentError("--set key '" + key + "' descends into a non-object");
  (*node)[parts.back()] = std::move(value);
}

ExperimentConfig load_config(const std::optional<fs::path>& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (path) {
    if (!fs::exists(*path)) throw IoError("config file '" + path->string() + "' does not exist");
    doc = read_json(*path);
    if (!doc.is_object()) throw ConfigError("config '" + path->string() + "' must hold a JSON object");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  if (const char* out = std::getenv("LWAY_OUT"); out && *out) doc["output_dir"] = out;
  return config_from_json(doc);
}

std::string config_hash(const ExperimentConfig& cfg) {
  const auto s = to_json(cfg).dump();
  return hex(fnv1a(s.data(), s.size()));
}

fs::path echo_config(const ExperimentConfig& cfg, const std::string& command) {
  const auto path = fs::path(cfg.output_dir) / ("config." + command + ".json");
  write_json(path, to_json(cfg));
  return path;
}

std::vector<train::TrainingPair> Split::pairs() const {
  std::vector<train::TrainingPair> v;
  for (const auto& s : samples) {
    if (s.hr.empty()) throw DataError("sample '" + s.id + "' has no HR image");
    v.push_back({s.hr, s.lr});
  }
  return v;
}

std::vector<Image> Split::lrs() const {
  std::vector<Image> v;
  for (const auto& s : samples) v.push_back(s.lr);
  return v;
}

void generate_data(const ExperimentConfig& cfg) {
  validate(cfg);
  const Layout lay(cfg);
  echo_config(cfg, "gen-data");
  const HrSource source(cfg);
  const int side = source.side(), s = cfg.model.scale;

  json manifest = {{"format", "lway-data"}, {"version", 1}, {"splits", json::object()}};
  auto emit = [&](const std::string& split, const std::string& id, const std::string& fam, const Image& hr,
                  const Image& lr, const json& spec, bool hr_apart) {
    const auto dir = lay.data() / split;
    const auto hr_rel = hr_apart ? fs::path(split) / "hr" / (id + ".png") : fs::path(split) / (id + "_hr.png");
    const auto lr_rel = hr_apart ? fs::path(split) / "lr" / (id + ".png") : fs::path(split) / (id + "_lr.png");
    ensure_dir((lay.data() / hr_rel).parent_path());
    ensure_dir((lay.data() / lr_rel).parent_path());
    imaging::save_image(hr, lay.data() / hr_rel);
    imaging::save_image(lr, lay.data() / lr_rel);
    manifest["splits"][split].push_back(
        {{"id", id}, {"family", fam}, {"hr", hr_rel.generic_string()}, {"lr", lr_rel.generic_string()}, {"degradation", spec}});
  };

  for (int i = 0; i < cfg.data.sr_pairs; ++i) {
    const Image hr = source.get(kSrSplit, i, side);
    emit("sr_train", sample_id("sr", i), "bicubic", hr, degrade::bicubic_downsample(hr, s), nullptr, false);
  }
  const auto nf = cfg.train_families.size();
  for (int i = 0; i < cfg.data.train_pairs + cfg.data.heldout_pairs; ++i) {
    const bool held = i >= cfg.data.train_pairs;
    const auto& fam = cfg.train_families[static_cast<std::size_t>(i) % nf];
    const Image hr = source.get(held ? kHeldoutSplit : kTrainSplit, i, side);
    const auto spec = degrade::sample_degradation(fam, static_cast<std::uint64_t>(i));
    emit(held ? "lr_heldout" : "lr_train", sample_id(held ? "held" : "train", i), fam.name, hr,
         degrade::apply_degradation(hr, spec), spec, false);
  }
  for (int i = 0; i < cfg.data.test_images; ++i) {
    const Image hr = source.get(kTestSplit, i, side);
    const auto spec = degrade::sample_degradation(cfg.test_family, static_cast<std::uint64_t>(i));
    emit("test", sample_id("test", i), cfg.test_family.name, hr, degrade::apply_degradation(hr, spec), spec, true);
  }
  write_json(lay.data() / "manifest.json", manifest);
}

Split load_split(const ExperimentConfig& cfg, const std::string& split) {
  const Layout lay(cfg);
  const auto mpath = lay.data() / "manifest.json";
  if (!fs::exists(mpath)) throw IoError("no dataset at '" + lay.data().string() + "' (run gen-data first)");
  const auto manifest = read_json(mpath);
  if (!manifest.contains("splits") || !manifest["splits"].contains(split))
    throw DataError("dataset has no split '" + split + "'");
  Split out;
  for (const auto& e : manifest["splits"][split]) {
    Sample s{e.at("id").get<std::string>(), e.at("family").get<std::string>(), {}, {}};
    s.lr = imaging::load_image(lay.data() / e.at("lr").get<std::string>());
    if (split != "test") s.hr = imaging::load_image(lay.data() / e.at("hr").get<std::string>());
    out.samples.push_back(std::move(s));
  }
  return out;
}

// Test HR images are read only for scoring, never for adaptation.
static void attach_test_hr(const ExperimentConfig& cfg, Split& split) {
  const Layout lay(cfg);
  for (auto& s : split.samples) {
    s.hr = imaging::load_image(lay.data() / "test" / "hr" / (s.id + ".png"));
    if (s.hr.height() != s.lr.height() * cfg.model.scale || s.hr.width() != s.lr.width() * cfg.model.scale)
      throw DataError("test pair '" + s.id + "' does not match the model scale");
  }
}

nn::SrModel<float> load_sr(const fs::path& dir) {
  const auto ck = nn::load_checkpoint(dir);
  expect_kind(ck, "sr", dir);
  nn::SrModel<float> m(ck.metadata.at("sr").get<nn::SrConfig>(), 0);
  nn::restore_parameters(ck, m.params());
  return m;
}

LrReconBundle load_lr_recon(const fs::path& dir) {
  const auto ck = nn::load_checkpoint(dir);
  expect_kind(ck, "lr_recon", dir);
  LrReconBundle b{nn::EncoderNet<float>(ck.metadata.at("encoder").get<nn::EncoderConfig>(), 0),
                  nn::ReconstructorNet<float>(ck.metadata.at("reconstructor").get<nn::ReconstructorConfig>(), 0)};
  nn::restore_parameters(ck, b.encoder.params());
  nn::restore_parameters(ck, b.reconstructor.params());
  return b;
}

std::string checkpoint_id(const fs::path& dir) {
  const auto ck = nn::load_checkpoint(dir);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& t : ck.tensors) {
    h = fnv1a(t.name.data(), t.name.size(), h);
    h = fnv1a(t.data.data(), t.data.size() * sizeof(float), h);
  }
  return hex(h);
}

nn::SrModel<float> run_pretrain_sr(const ExperimentConfig& cfg) {
  validate(cfg);
  const Layout lay(cfg);
  echo_config(cfg, "pretrain-sr");
  const auto data = load_split(cfg, "sr_train").pairs();
  auto res = train::pretrain_sr(data, cfg.model.sr(), seeded(cfg.pretrain_sr, cfg.seed));
  save_sr(lay.sr_checkpoint(), res.model, {{"stage", "pretrain-sr"}});
  res.history.write_csv(lay.root / "pretrain_sr_history.csv");

  json summary = {{"final_loss", res.history.final_metrics.value("final_loss", 0.0)},
                  {"iterations", res.history.records.size()},
                  {"config_hash", config_hash(cfg)},
                  {"checkpoint", checkpoint_id(lay.sr_checkpoint())}};
  // Sanity check on held-out HR content under bicubic degradation.
  const auto held = load_split(cfg, "lr_heldout");
  if (!held.samples.empty()) {
    std::vector<double> model_psnr, bicubic_psnr;
    for (const auto& s : held.samples) {
      const Image lr = degrade::bicubic_downsample(s.hr, cfg.model.scale);
      model_psnr.push_back(imaging::psnr(res.model.super_resolve(lr), s.hr));
      bicubic_psnr.push_back(imaging::psnr(degrade::bicubic_upsample(lr, cfg.model.scale), s.hr));
    }
    summary["heldout_psnr"] = mean(model_psnr);
    summary["heldout_bicubic_psnr"] = mean(bicubic_psnr);
  }
  write_json(lay.root / "pretrain_sr_summary.json", summary);
  return std::move(res.model);
}

PretrainLrSummary run_pretrain_lr(const ExperimentConfig& cfg) {
  validate(cfg);
  const Layout lay(cfg);
  echo_config(cfg, "pretrain-lr");
  const losses::PerceptualExtractor<float> f;
  const auto data = load_split(cfg, "lr_train").pairs();
  auto res = train::pretrain_lr_recon(data, cfg.model.encoder(), cfg.model.reconstructor(),
                                      seeded(cfg.pretrain_lr, cfg.seed), f);
  save_lr_recon(lay.lr_checkpoint(), res.encoder, res.reconstructor);
  res.history.write_csv(lay.root / "pretrain_lr_history.csv");

  PretrainLrSummary out;
  out.final_loss = res.history.final_metrics.value("final_loss", 0.0);
  std::vector<double> rec, bic;
  for (const auto& s : load_split(cfg, "lr_heldout").samples) {
    rec.push_back(losses::l1_loss(res.reconstructor.reconstruct(s.hr, res.encoder.encode(s.lr)), s.lr));
    bic.push_back(losses::l1_loss(degrade::bicubic_downsample(s.hr, cfg.model.scale), s.lr));
  }
  out.heldout_l1 = mean(rec);
  out.bicubic_l1 = mean(bic);
  write_json(lay.root / "pretrain_lr_summary.json",
             {{"final_loss", out.final_loss},
              {"iterations", res.history.records.size()},
              {"heldout_pairs", rec.size()},
              {"heldout_l1", out.heldout_l1},
              {"heldout_bicubic_l1", out.bicubic_l1},
              {"config_hash", config_hash(cfg)},
              {"checkpoint", checkpoint_id(lay.lr_checkpoint())}});
  return out;
}

FinetuneSummary run_finetune(const ExperimentConfig& cfg) {
  validate(cfg);
  const Layout lay(cfg);
  echo_config(cfg, "finetune");
  const auto sr = load_sr(lay.sr_checkpoint());
  const auto lrr = load_lr_recon(lay.lr_checkpoint());
  const auto tests = load_split(cfg, "test");  // LR only
  const auto run = finetune_and_score(cfg, sr, lrr, tests.samples, lay.root);

  // Adapted checkpoints plus an index naming one model per image or one shared.
  std::error_code ec;
  fs::remove_all(lay.adapted_checkpoint(), ec);
  json index = {{"mode", train::to_string(cfg.finetune.mode)}, {"models", json::array()}};
  const bool per_image = cfg.finetune.mode == train::FineTuneMode::PerImage;
  for (std::size_t m = 0; m < run.result.models.size(); ++m) {
    const std::string name = per_image ? tests.samples[m].id : "all";
    save_sr(lay.adapted_checkpoint() / name, run.result.models[m], {{"stage", "finetune"}});
  }
  for (std::size_t i = 0; i < tests.samples.size(); ++i)
    index["models"].push_back(per_image ? tests.samples[i].id : "all");
  write_json(lay.adapted_checkpoint() / "index.json", index);

  ensure_dir(lay.root / "wmaps");
  for (const auto& s : tests.samples)
    imaging::save_image(wavelet::hf_weight_map(s.lr, cfg.finetune.w_floor).weights, lay.root / "wmaps" / (s.id + ".png"));

  FinetuneSummary out;
  out.mask_fraction = run.result.mask.fraction();
  out.final_loss = run.final_loss;
  json hist = json::array();
  for (const auto& h : run.result.histories) {
    double first = 0, last = 0;
    history_deciles(h, first, last);
    out.first_decile.push_back(first);
    out.last_decile.push_back(last);
    hist.push_back({{"first_decile_median", first},
                    {"last_decile_median", last},
                    {"drop", first > 0 ? 1.0 - last / first : 0.0}});
  }
  write_json(lay.root / "finetune_summary.json",
             {{"mode", train::to_string(cfg.finetune.mode)},
              {"trainable_fraction", out.mask_fraction},
              {"trainable_scalars", run.result.mask.selected_count},
              {"total_scalars", run.result.mask.total_count},
              {"histories", hist},
              {"final_self_supervised_loss", run.final_loss},
              {"mean_final_self_supervised_loss", mean(run.final_loss)},
              {"config_hash", config_hash(cfg)},
              {"checkpoints", {{"sr", checkpoint_id(lay.sr_checkpoint())}, {"lr_recon", checkpoint_id(lay.lr_checkpoint())}}}});
  return out;
}

std::vector<std::pair<std::string, EvalReport>> run_evaluate(const ExperimentConfig& cfg, const EvalOptions& opt) {
  validate(cfg);
  const Layout lay(cfg);
  echo_config(cfg, "evaluate");
  if (opt.model != "baseline" && opt.model != "adapted" && opt.model != "both")
    throw ArgumentError("--model must be baseline, adapted or both");
  if (opt.hr_dir && !opt.lr_dir) throw ArgumentError("--hr-dir requires --lr-dir");

  Split tests;
  if (opt.lr_dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(*opt.lr_dir))
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no PNG images in '" + opt.lr_dir->string() + "'");
    for (const auto& f : files) {
      Sample s{f.stem().string(), "external", {}, as_rgb(imaging::load_image(f))};
      if (opt.hr_dir) {
        const auto hp = *opt.hr_dir / f.filename();
        if (!fs::exists(hp)) throw DataError("no HR image for '" + f.string() + "'");
        s.hr = as_rgb(imaging::load_image(hp));
        if (s.hr.height() != s.lr.height() * cfg.model.scale || s.hr.width() != s.lr.width() * cfg.model.scale)
          throw DataError("'" + hp.string() + "' does not match '" + f.string() + "' at scale " +
                          std::to_string(cfg.model.scale));
      }
      tests.samples.push_back(std::move(s));
    }
  } else {
    tests = load_split(cfg, "test");
    attach_test_hr(cfg, tests);
  }

  const losses::PerceptualExtractor<float> f;
  const auto lrr = load_lr_recon(lay.lr_checkpoint());
  const auto baseline = load_sr(lay.sr_checkpoint());
  std::optional<Adapted> adapted;
  if (opt.model != "baseline") {
    if (!fs::exists(lay.adapted_checkpoint() / "index.json")) {
      if (opt.model == "adapted") throw IoError("no adapted model under '" + lay.adapted_checkpoint().string() + "'");
    } else {
      adapted = load_adapted(lay);
      if (adapted->per_image.size() != tests.samples.size())
        throw DataError("adapted models cover " + std::to_string(adapted->per_image.size()) + " images, evaluating " +
                        std::to_string(tests.samples.size()));
    }
  }

  std::vector<std::pair<std::string, EvalReport>> reports;
  auto evaluate_with = [&](const std::string& name, auto&& model_for, const json& ckpts) {
    EvalReport rep;
    const auto dir = lay.root / "eval" / name;
    ensure_dir(dir);
    std::vector<std::string> lines;
    std::vector<double> ps, ss, ls;
    for (std::size_t i = 0; i < tests.samples.size(); ++i) {
      const auto& s = tests.samples[i];
      const auto& model = model_for(i);
      const Image out = model.super_resolve(s.lr);
      imaging::save_image(out, dir / (s.id + ".png"));
      EvalRow row{s.id, std::nullopt, std::nullopt,
                  train::self_supervised_loss(model, lrr.encoder, lrr.reconstructor, s.lr, cfg.finetune, f)};
      if (!s.hr.empty()) {
        row.psnr = imaging::psnr(out, s.hr);
        row.ssim = imaging::ssim(out, s.hr);
        ps.push_back(*row.psnr);
        ss.push_back(*row.ssim);
      }
      ls.push_back(row.loss.total);
      lines.push_back(s.id + "," + (row.psnr ? fmt(*row.psnr) : "") + "," + (row.ssim ? fmt(*row.ssim) : "") + "," +
                      fmt(row.loss.total) + "," + fmt(row.loss.l1) + "," + fmt(row.loss.perceptual));
      rep.rows.push_back(std::move(row));
    }
    write_csv(dir / "report.csv", "image,psnr,ssim,loss_total,loss_l1,loss_perc", lines);
    rep.summary = {{"model", name},
                   {"images", tests.samples.size()},
                   {"mean_loss", mean(ls)},
                   {"config_hash", config_hash(cfg)},
                   {"checkpoints", ckpts}};
    if (!ps.empty()) {
      rep.summary["mean_psnr"] = mean(ps);
      rep.summary["mean_ssim"] = mean(ss);
    }
    write_json(dir / "summary.json", rep.summary);
    reports.emplace_back(name, std::move(rep));
  };

  const json base_ck = {{"sr", checkpoint_id(lay.sr_checkpoint())}, {"lr_recon", checkpoint_id(lay.lr_checkpoint())}};
  if (opt.model != "adapted")
    evaluate_with("baseline", [&](std::size_t) -> const nn::SrModel<float>& { return baseline; }, base_ck);
  if (adapted) {
    json ck = base_ck;
    for (const auto& [n, _] : adapted->by_name) ck["adapted"][n] = checkpoint_id(lay.adapted_checkpoint() / n);
    evaluate_with("adapted", [&](std::size_t i) -> const nn::SrModel<float>& { return adapted->model_for(i); }, ck);
  }

  if (reports.size() == 2 && !reports[0].second.rows.empty() && reports[0].second.rows[0].psnr) {
    const auto& b = reports[0].second.rows;
    const auto& a = reports[1].second.rows;
    int wins = 0;
    std::vector<double> gains;
    for (std::size_t i = 0; i < a.size(); ++i) {
      gains.push_back(*a[i].psnr - *b[i].psnr);
      wins += gains.back() >= 0.2;
    }
    write_json(lay.root / "eval" / "comparison.json",
               {{"mean_psnr_gain", mean(gains)}, {"images_gaining_0.2db", wins}, {"images", a.size()}, {"gains", gains}});
  }
  return reports;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg) {
  validate(cfg);
  if (cfg.sweep.axis.empty()) throw ConfigError("sweep needs an axis, e.g. --set sweep.param_fraction=[0.1,1.0]");
  const Layout lay(cfg);
  echo_config(cfg, "sweep");
  const auto& axis = cfg.sweep.axis;
  const auto root = lay.root / "sweep" / axis;

  auto tests = load_split(cfg, "test");
  attach_test_hr(cfg, tests);
  std::optional<nn::SrModel<float>> base_sr;
  std::optional<LrReconBundle> base_lrr;
  if (axis != "model_size") base_sr.emplace(load_sr(lay.sr_checkpoint()));
  if (axis != "embed_dim") base_lrr.emplace(load_lr_recon(lay.lr_checkpoint()));

  std::vector<SweepRow> rows;
  std::vector<std::string> lines;
  for (std::size_t k = 0; k < cfg.sweep.values.size(); ++k) {
    const auto& v = cfg.sweep.values[k];
    ExperimentConfig c = cfg;
    std::vector<Sample> subset = tests.samples;
    const auto dir = root / std::to_string(k);
    try {
      if (axis == "param_fraction") c.finetune.param_fraction = v.get<double>();
      else if (axis == "hf_weight") c.finetune.hf_weight = v.get<bool>();
      else if (axis == "num_images") {
        const int n = v.get<int>();
        if (n < 1 || n > static_cast<int>(subset.size()))
          throw ConfigError("sweep.num_images value " + std::to_string(n) + " outside [1, test_images]");
        subset.resize(static_cast<std::size_t>(n));
      } else if (axis == "embed_dim") c.model.embed_dim = v.get<int>();
      else c.model.sr_width = v.get<int>();
    } catch (const json::exception& e) {
      throw ConfigError("bad sweep value " + v.dump() + ": " + e.what());
    }
    validate(c);

    std::optional<nn::SrModel<float>> sr_k;
    std::optional<LrReconBundle> lrr_k;
    if (axis == "model_size") {
      auto r = train::pretrain_sr(load_split(c, "sr_train").pairs(), c.model.sr(), seeded(c.pretrain_sr, c.seed));
      ensure_dir(dir);
      r.history.write_csv(dir / "pretrain_sr_history.csv");
      sr_k.emplace(std::move(r.model));
    }
    if (axis == "embed_dim") {
      const losses::PerceptualExtractor<float> f;
      auto r = train::pretrain_lr_recon(load_split(c, "lr_train").pairs(), c.model.encoder(), c.model.reconstructor(),
                                        seeded(c.pretrain_lr, c.seed), f);
      ensure_dir(dir);
      r.history.write_csv(dir / "pretrain_lr_history.csv");
      lrr_k.emplace(LrReconBundle{std::move(r.encoder), std::move(r.reconstructor)});
    }
    const auto& sr = sr_k ? *sr_k : *base_sr;
    const auto& lrr = lrr_k ? *lrr_k : *base_lrr;
    const auto run = finetune_and_score(c, sr, lrr, subset, dir);

    SweepRow row{v, mean(run.final_loss), mean(run.adapted_psnr), mean(run.baseline_psnr), run.result.mask.fraction()};
    lines.push_back(v.dump() + "," + fmt(row.final_loss) + "," + fmt(row.psnr) + "," + fmt(row.psnr_baseline) + "," +
                    fmt(row.trainable_fraction));
    rows.push_back(std::move(row));
  }
  write_csv(lay.root / "sweep" / ("sweep_" + axis + ".csv"), axis + ",final_loss,psnr,psnr_baseline,trainable_fraction",
            lines);
  return rows;
}

EmbeddingSummary run_export_embeddings(const ExperimentConfig& cfg) {
  validate(cfg);
  const Layout lay(cfg);
  echo_config(cfg, "export-embeddings");
  if (cfg.train_families.size() < 2) throw ConfigError("the linear probe needs at least two degradation families");
  const bool trained = fs::exists(lay.lr_checkpoint() / "manifest.json");
  const auto encoder = trained ? load_lr_recon(lay.lr_checkpoint()).encoder
                               : nn::EncoderNet<float>(cfg.model.encoder(), derive_seed(cfg.seed, 11));

  const HrSource source(cfg);
  const int hr_side = cfg.embeddings.crop * cfg.model.scale;
  analysis::Rows rows;
  std::vector<int> labels;
  std::vector<std::string> lines;
  const int n = cfg.embeddings.crops_per_family;
  for (std::size_t fi = 0; fi < cfg.train_families.size(); ++fi) {
    const auto& fam = cfg.train_families[fi];
    for (int i = 0; i < n; ++i) {
      const int k = static_cast<int>(fi) * n + i;
      Image hr = source.get(kEmbedSplit, k, std::min(hr_side, source.side()));
      if (hr.height() != hr_side) hr = degrade::resize_bicubic(hr, hr_side, hr_side);
      const auto spec = degrade::sample_degradation(fam, kEmbedDegradation + static_cast<std::uint64_t>(i));
      const auto e = encoder.encode(degrade::apply_degradation(hr, spec));
      std::string line = fam.name;
      for (float x : e) line += "," + fmt(x);
      lines.push_back(std::move(line));
      rows.push_back(e);
      labels.push_back(static_cast<int>(fi));
    }
  }
  const auto dir = lay.root / "embeddings";
  std::string header = "label";
  for (int d = 1; d <= cfg.model.embed_dim; ++d) header += ",e_" + std::to_string(d);
  write_csv(dir / "embeddings.csv", header, lines);

  const auto pcs = analysis::pca_2d(rows);
  std::vector<std::string> pca_lines;
  for (std::size_t r = 0; r < pcs.size(); ++r)
    pca_lines.push_back(cfg.train_families[static_cast<std::size_t>(labels[r])].name + "," + fmt(pcs[r][0]) + "," +
                        fmt(pcs[r][1]));
  write_csv(dir / "embeddings_pca.csv", "label,pc1,pc2", pca_lines);

  const auto probe = analysis::linear_probe(rows, labels, cfg.embeddings.holdout, cfg.embeddings.probe_seed);
  json fams = json::array();
  for (const auto& f : cfg.train_families) fams.push_back(f.name);
  write_json(dir / "summary.json", {{"rows", rows.size()},
                                    {"dims", cfg.model.embed_dim},
                                    {"families", fams},
                                    {"encoder", trained ? "trained" : "untrained"},
                                    {"probe_accuracy", probe.test_accuracy},
                                    {"probe_train_accuracy", probe.train_accuracy},
                                    {"probe_train_count", probe.train_count},
                                    {"probe_test_count", probe.test_count},
                                    {"config_hash", config_hash(cfg)}});
  return {rows.size(), cfg.model.embed_dim, probe.test_accuracy};
}

}  // namespace lway::experiment

#include "lway/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "lway/errors.hpp"
#include "lway/rng.hpp"

namespace lway::train {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void check_finite(const losses::LossReport& r, long iter) {
  if (!std::isfinite(r.total) || !std::isfinite(r.l1) || !std::isfinite(r.perceptual))
    throw TrainingError("loss diverged (non-finite value)", iter);
}

IterRecord make_record(long iter, const losses::LossReport& r, double ms) {
  return {iter, r.total, r.l1, r.perceptual, ms};
}

// Aligned random crop of an (HR, LR) pair; lr_patch is clipped to the image.
void crop_pair(const TrainingPair& p, int lr_patch, int scale, Rng& rng, Image& hr_out, Image& lr_out) {
  const int ph = std::min(lr_patch, p.lr.height());
  const int pw = std::min(lr_patch, p.lr.width());
  const int r = uniform_int(rng, 0, p.lr.height() - ph);
  const int c = uniform_int(rng, 0, p.lr.width() - pw);
  lr_out = crop(p.lr, r, c, ph, pw);
  hr_out = crop(p.hr, r * scale, c * scale, ph * scale, pw * scale);
}

void check_pairs(const std::vector<TrainingPair>& data, int scale) {
  if (data.empty()) throw ConfigError("training dataset is empty");
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& p = data[i];
    if (p.hr.channels() != 3 || p.lr.channels() != 3 || p.hr.height() != p.lr.height() * scale ||
        p.hr.width() != p.lr.width() * scale)
      throw DataError("training pair " + std::to_string(i) + " is inconsistent with scale " + std::to_string(scale));
  }
}

}  // namespace

void validate(const FineTuneConfig& c) {
  if (!(c.param_fraction > 0.0 && c.param_fraction <= 1.0)) throw ConfigError("param_fraction must lie in (0, 1]");
  if (c.max_iters < 0) throw ConfigError("max_iters must be >= 0");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(c.w_floor >= 0.0f && c.w_floor < 1.0f)) throw ConfigError("w_floor must lie in [0, 1)");
  if (c.patch < 16) throw ConfigError("patch must be >= 16");
  if (c.lambda_l1 < 0.0 || c.lambda_perc < 0.0) throw ConfigError("loss weights must be non-negative");
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "iter,total,l1,perc,ms\n";
  char line[160];
  for (const auto& r : records) {
    std::snprintf(line, sizeof line, "%ld,%.9g,%.9g,%.9g,%.3f\n", r.iter, r.total, r.l1, r.perceptual, r.ms);
    out << line;
  }
}

LrReconResult pretrain_lr_recon(const std::vector<TrainingPair>& data, const nn::EncoderConfig& ecfg,
                                const nn::ReconstructorConfig& rcfg, const FineTuneConfig& cfg,
                                const losses::PerceptualExtractor<float>& f) {
  validate(cfg);
  check_pairs(data, rcfg.scale);
  if (ecfg.embed_dim != rcfg.embed_dim) throw ConfigError("encoder and reconstructor embedding sizes differ");

  LrReconResult res{nn::EncoderNet<float>(ecfg, derive_seed(cfg.seed, 11)),
                    nn::ReconstructorNet<float>(rcfg, derive_seed(cfg.seed, 12)), {}};
  nn::Adam<float> adam({&res.encoder.params(), &res.reconstructor.params()}, {cfg.learning_rate});
  Rng rng(derive_seed(cfg.seed, 13));
  const auto weights = cfg.loss_weights();

  std::vector<Image> hrs(static_cast<std::size_t>(cfg.batch_size)), lrs(hrs.size());
  for (long it = 1; it <= cfg.max_iters; ++it) {
    const auto t0 = Clock::now();
    for (std::size_t b = 0; b < hrs.size(); ++b) {
      const auto& pair = data[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(data.size()) - 1))];
      crop_pair(pair, cfg.patch, rcfg.scale, rng, hrs[b], lrs[b]);
    }
    const auto lr = ag::constant(nn::to_batch<float>(lrs));
    const auto hr = ag::constant(nn::to_batch<float>(hrs));
    const auto pred = res.reconstructor.forward(hr, res.encoder.forward(lr));
    const auto terms = losses::composite_loss(pred, lr, f, weights);
    const auto report = terms.report(weights);
    check_finite(report, it);

    res.encoder.params().zero_grad();
    res.reconstructor.params().zero_grad();
    ag::backward(terms.total);
    adam.step();
    res.history.records.push_back(make_record(it, report, elapsed_ms(t0)));
  }
  if (!res.history.records.empty()) res.history.final_metrics["final_loss"] = res.history.records.back().total;
  return res;
}

SrResult pretrain_sr(const std::vector<TrainingPair>& data, const nn::SrConfig& scfg, const FineTuneConfig& cfg) {
  validate(cfg);
  check_pairs(data, scfg.scale);

  SrResult res{nn::SrModel<float>(scfg, derive_seed(cfg.seed, 21)), {}};
  nn::Adam<float> adam({&res.model.params()}, {cfg.learning_rate});
  Rng rng(derive_seed(cfg.seed, 22));

  std::vector<Image> hrs(static_cast<std::size_t>(cfg.batch_size)), lrs(hrs.size());
  for (long it = 1; it <= cfg.max_iters; ++it) {
    const auto t0 = Clock::now();
    for (std::size_t b = 0; b < hrs.size(); ++b) {
      const auto& pair = data[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(data.size()) - 1))];
      crop_pair(pair, cfg.patch, scfg.scale, rng, hrs[b], lrs[b]);
    }
    const auto pred = res.model.forward(ag::constant(nn::to_batch<float>(lrs)));
    const auto loss = ag::l1_mean(pred, ag::constant(nn::to_batch<float>(hrs)));
    losses::LossReport report;
    report.l1 = report.total = static_cast<double>(loss.item());
    report.lambda_perc = 0.0;
    check_finite(report, it);

    res.model.params().zero_grad();
    ag::backward(loss);
    adam.step();
    res.history.records.push_back(make_record(it, report, elapsed_ms(t0)));
  }
  if (!res.history.records.empty()) res.history.final_metrics["final_loss"] = res.history.records.back().total;
  return res;
}

TrainableMask select_trainable(const nn::ParamSet<float>& params, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ArgumentError("parameter fraction must lie in (0, 1]");
  const auto& list = params.list();
  TrainableMask mask;
  mask.flags.assign(list.size(), false);
  mask.total_count = params.scalar_count();
  const double target = p * static_cast<double>(mask.total_count);
  for (std::size_t i = list.size(); i-- > 0;) {
    mask.flags[i] = true;
    mask.selected_count += list[i].var.value().size();
    if (static_cast<double>(mask.selected_count) >= target) break;
  }
  return mask;
}

void apply_mask(nn::ParamSet<float>& params, const TrainableMask& mask) {
  auto& list = params.list();
  if (mask.flags.size() != list.size()) throw ArgumentError("mask does not match parameter list");
  for (std::size_t i = 0; i < list.size(); ++i) list[i].var.set_requires_grad(mask.flags[i]);
}

namespace {

struct TestItem {
  const Image* lr;
  std::vector<float> embedding;
  Image weights;  // [1,H,W]
};

Image weight_image(const Image& lr, const FineTuneConfig& cfg) {
  if (!cfg.hf_weight) return Image(1, lr.height(), lr.width(), 1.0f);
  return wavelet::hf_weight_map(lr, cfg.w_floor).weights;
}

struct AdaptOutcome {
  nn::SrModel<float> model;
  TrainHistory history;
};

AdaptOutcome adapt(const nn::SrModel<float>& base, const nn::ReconstructorNet<float>& reconstructor,
                   const std::vector<const TestItem*>& items, const TrainableMask& mask, const FineTuneConfig& cfg,
                   const losses::PerceptualExtractor<float>& f, std::uint64_t seed) {
  AdaptOutcome out{base.clone(), {}};
  apply_mask(out.model.params(), mask);
  nn::Adam<float> adam({&out.model.params()}, {cfg.learning_rate});
  Rng rng(seed);
  const auto weights = cfg.loss_weights();
  const int d = reconstructor.config().embed_dim;

  // Round-robin over a per-epoch shuffled order.
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<Image> lrs(bs), wmaps(bs);
  ag::Tensor<float> emb({cfg.batch_size, d});
  for (long it = 1; it <= cfg.max_iters; ++it) {
    const auto t0 = Clock::now();
    for (std::size_t b = 0; b < bs; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const TestItem& item = *items[order[cursor++]];
      const int ph = std::min(cfg.patch, item.lr->height());
      const int pw = std::min(cfg.patch, item.lr->width());
      const int r = uniform_int(rng, 0, item.lr->height() - ph);
      const int c = uniform_int(rng, 0, item.lr->width() - pw);
      lrs[b] = crop(*item.lr, r, c, ph, pw);
      wmaps[b] = crop(item.weights, r, c, ph, pw);
      std::copy(item.embedding.begin(), item.embedding.end(), emb.ptr() + b * static_cast<std::size_t>(d));
    }
    std::vector<const Image*> wptrs;
    for (const auto& w : wmaps) wptrs.push_back(&w);

    const auto lr = ag::constant(nn::to_batch<float>(lrs));
    const auto sr = out.model.forward(lr);
    const auto pred = reconstructor.forward(sr, ag::constant(emb));
    const auto terms = losses::weighted_pair_loss(pred, lr, losses::weight_batch<float>(wptrs), f, weights);
    const auto report = terms.report(weights);
    check_finite(report, it);

    out.model.params().zero_grad();
    ag::backward(terms.total);
    adam.step();
    out.history.records.push_back(make_record(it, report, elapsed_ms(t0)));
  }
  if (!out.history.records.empty()) out.history.final_metrics["final_loss"] = out.history.records.back().total;
  return out;
}

std::vector<std::vector<float>> snapshot(const nn::ParamSet<float>& ps) {
  std::vector<std::vector<float>> s;
  for (const auto& p : ps.list()) s.push_back(p.var.value().data);
  return s;
}

}  // namespace

FineTuneResult lway_finetune(const nn::SrModel<float>& sr, const nn::EncoderNet<float>& encoder,
                             const nn::ReconstructorNet<float>& reconstructor, const std::vector<Image>& test_lrs,
                             const FineTuneConfig& cfg, const losses::PerceptualExtractor<float>& f) {
  validate(cfg);
  if (test_lrs.empty()) throw ConfigError("fine-tuning needs at least one test image");
  if (encoder.config().embed_dim != reconstructor.config().embed_dim)
    throw ConfigError("encoder and reconstructor embedding sizes differ");
  if (sr.config().scale != reconstructor.config().scale)
    throw ConfigError("SR model and reconstructor scales differ");

  const auto encoder_before = snapshot(encoder.params());
  const auto recon_before = snapshot(reconstructor.params());

  // Work on frozen private copies of E and R.
  auto frozen_r = reconstructor.clone();
  frozen_r.params().set_requires_grad(false);

  std::vector<TestItem> items;
  items.reserve(test_lrs.size());
  for (const auto& lr : test_lrs) {
    if (lr.channels() != 3) throw DataError("test images must be RGB");
    items.push_back({&lr, encoder.encode(lr), weight_image(lr, cfg)});
  }

  FineTuneResult result;
  result.mask = select_trainable(sr.params(), cfg.param_fraction);

  if (cfg.mode == FineTuneMode::PerImage) {
    for (std::size_t k = 0; k < items.size(); ++k) {
      auto o = adapt(sr, frozen_r, {&items[k]}, result.mask, cfg, f, derive_seed(cfg.seed, 1000 + k));
      result.models.push_back(std::move(o.model));
      result.histories.push_back(std::move(o.history));
    }
  } else {
    std::vector<const TestItem*> all;
    for (const auto& it : items) all.push_back(&it);
    auto o = adapt(sr, frozen_r, all, result.mask, cfg, f, derive_seed(cfg.seed, 999));
    result.models.push_back(std::move(o.model));
    result.histories.push_back(std::move(o.history));
  }

  if (snapshot(encoder.params()) != encoder_before || snapshot(reconstructor.params()) != recon_before)
    throw std::logic_error("lway_finetune modified the frozen LR-reconstruction branch");
  for (auto& m : result.models) m.params().set_requires_grad(true);
  return result;
}

losses::LossReport self_supervised_loss(const nn::SrModel<float>& sr, const nn::EncoderNet<float>& encoder,
                                        const nn::ReconstructorNet<float>& reconstructor, const Image& lr,
                                        const FineTuneConfig& cfg, const losses::PerceptualExtractor<float>& f) {
  const auto e = encoder.encode(lr);
  const Image pred = reconstructor.reconstruct(sr.super_resolve(lr), e);
  const wavelet::WeightMap w{weight_image(lr, cfg), cfg.hf_weight ? cfg.w_floor : 1.0f};
  return losses::weighted_pair_loss(pred, lr, w, f, cfg.loss_weights());
}

std::string to_string(FineTuneMode mode) {
  return mode == FineTuneMode::PerImage ? "per-image" : "whole-testset";
}

FineTuneMode mode_from_string(const std::string& s) {
  if (s == "per-image") return FineTuneMode::PerImage;
  if (s == "whole-testset") return FineTuneMode::WholeTestset;
  throw ConfigError("unknown fine-tuning mode '" + s + "' (expected per-image or whole-testset)");
}

namespace {

// Shortest decimal that reads back as the same float, so 0.05f echoes as 0.05.
double float_for_json(float v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::strtod(std::string(buf, r.ptr).c_str(), nullptr);
}

}  // namespace

void to_json(nlohmann::json& j, const FineTuneConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},   {"max_iters", c.max_iters},
       {"param_fraction", c.param_fraction}, {"w_floor", float_for_json(c.w_floor)}, {"hf_weight", c.hf_weight},
       {"lambda_l1", c.lambda_l1},         {"lambda_perc", c.lambda_perc}, {"seed", c.seed},
       {"mode", to_string(c.mode)},        {"patch", c.patch}};
}

void from_json(const nlohmann::json& j, FineTuneConfig& c) {
  if (!j.is_object()) throw ConfigError("training block must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "max_iters") c.max_iters = v.get<long>();
      else if (key == "param_fraction") c.param_fraction = v.get<double>();
      else if (key == "w_floor") c.w_floor = v.get<float>();
      else if (key == "hf_weight") c.hf_weight = v.get<bool>();
      else if (key == "lambda_l1") c.lambda_l1 = v.get<double>();
      else if (key == "lambda_perc") c.lambda_perc = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "mode") c.mode = mode_from_string(v.get<std::string>());
      else if (key == "patch") c.patch = v.get<int>();
      else throw ConfigError("unknown training key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad value for training key '" + key + "': " + e.what());
    }
  }
}

}  // namespace lway::train

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lway/image.hpp"
#include "lway/losses.hpp"
#include "lway/nn.hpp"
#include "lway/wavelet.hpp"

namespace lway::train {

enum class FineTuneMode { PerImage, WholeTestset };

// Shared by all three procedures; pretraining ignores the fine-tuning-only
// fields (param_fraction, w_floor, hf_weight, mode).
struct FineTuneConfig {
  double learning_rate = 2e-4;
  int batch_size = 6;
  long max_iters = 300;
  double param_fraction = 1.0;
  float w_floor = wavelet::kDefaultWeightFloor;
  bool hf_weight = true;  // false replaces W with ones (ablation)
  double lambda_l1 = 1.0;
  double lambda_perc = 1.0;
  std::uint64_t seed = 0;
  FineTuneMode mode = FineTuneMode::WholeTestset;
  int patch = 32;  // LR crop side; whole image when larger than the image

  losses::LossWeights loss_weights() const { return {lambda_l1, lambda_perc}; }
};

void validate(const FineTuneConfig& cfg);

struct IterRecord {
  long iter = 0;
  double total = 0.0;
  double l1 = 0.0;
  double perceptual = 0.0;
  double ms = 0.0;
};

struct TrainHistory {
  std::vector<IterRecord> records;
  nlohmann::json final_metrics = nlohmann::json::object();

  // iter,total,l1,perc,ms with a header row.
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainingPair {
  Image hr;
  Image lr;
};

struct LrReconResult {
  nn::EncoderNet<float> encoder;
  nn::ReconstructorNet<float> reconstructor;
  TrainHistory history;
};

// Jointly trains E and R so that R(HR, E(LR)) reproduces LR under L1 + perceptual.
LrReconResult pretrain_lr_recon(const std::vector<TrainingPair>& data, const nn::EncoderConfig& ecfg,
                                const nn::ReconstructorConfig& rcfg, const FineTuneConfig& cfg,
                                const losses::PerceptualExtractor<float>& f);

struct SrResult {
  nn::SrModel<float> model;
  TrainHistory history;
};

// Supervised L1 training of the toy SR model on (HR, LR) pairs.
SrResult pretrain_sr(const std::vector<TrainingPair>& data, const nn::SrConfig& scfg, const FineTuneConfig& cfg);

struct TrainableMask {
  std::vector<bool> flags;  // per tensor, network order
  std::size_t selected_count = 0;
  std::size_t total_count = 0;
  double fraction() const { return total_count ? static_cast<double>(selected_count) / total_count : 0.0; }
};

// Smallest suffix of the parameter list holding at least p of all scalars.
TrainableMask select_trainable(const nn::ParamSet<float>& params, double p);
void apply_mask(nn::ParamSet<float>& params, const TrainableMask& mask);

struct FineTuneResult {
  // One adapted model per test image in per-image mode, otherwise one.
  std::vector<nn::SrModel<float>> models;
  std::vector<TrainHistory> histories;
  TrainableMask mask;
  const nn::SrModel<float>& model_for(std::size_t image) const { return models.size() == 1 ? models[0] : models.at(image); }
};

// Self-supervised test-time adaptation. Takes LR test images only; the
// encoder and reconstructor are used frozen and are never modified.
FineTuneResult lway_finetune(const nn::SrModel<float>& sr, const nn::EncoderNet<float>& encoder,
                             const nn::ReconstructorNet<float>& reconstructor, const std::vector<Image>& test_lrs,
                             const FineTuneConfig& cfg, const losses::PerceptualExtractor<float>& f);

// Full-image self-supervised objective: weighted loss between R(S(lr), E(lr)) and lr.
losses::LossReport self_supervised_loss(const nn::SrModel<float>& sr, const nn::EncoderNet<float>& encoder,
                                        const nn::ReconstructorNet<float>& reconstructor, const Image& lr,
                                        const FineTuneConfig& cfg, const losses::PerceptualExtractor<float>& f);

std::string to_string(FineTuneMode mode);
FineTuneMode mode_from_string(const std::string& s);

void to_json(nlohmann::json& j, const FineTuneConfig& c);
// Strict: unknown keys raise ConfigError; missing keys keep their defaults.
void from_json(const nlohmann::json& j, FineTuneConfig& c);

}  // namespace lway::train

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lway/degrade.hpp"
#include "lway/image.hpp"
#include "lway/nn.hpp"
#include "lway/train.hpp"

namespace lway::experiment {

namespace fs = std::filesystem;

struct DataConfig {
  std::string hr_dir;  // PNG sources cut into patches; empty = synthetic scenes
  int hr_size = 96;    // synthetic HR side
  int patch = 96;      // HR patch side when reading hr_dir
  int stride = 96;
  int sr_pairs = 200;
  int train_pairs = 200;
  int heldout_pairs = 40;
  int test_images = 10;
};

struct ModelConfig {
  int scale = 2;
  int embed_dim = 64;
  int encoder_width = 32;
  int recon_width = 32;
  int recon_layers = 4;
  int sr_width = 32;
  int sr_blocks = 8;

  nn::EncoderConfig encoder() const { return {embed_dim, encoder_width}; }
  nn::ReconstructorConfig reconstructor() const { return {embed_dim, recon_width, recon_layers, scale}; }
  nn::SrConfig sr() const { return {sr_width, sr_blocks, scale}; }
};

// One axis and its values; the axis names a single knob.
struct SweepConfig {
  std::string axis;  // param_fraction | embed_dim | num_images | hf_weight | model_size
  std::vector<nlohmann::json> values;
};

struct EmbeddingConfig {
  int crops_per_family = 100;
  int crop = 48;  // LR side
  double holdout = 0.2;
  std::uint64_t probe_seed = 7;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "lway_out";
  DataConfig data;
  std::vector<degrade::DegradationFamily> train_families;
  degrade::DegradationFamily test_family;
  ModelConfig model;
  train::FineTuneConfig pretrain_sr;
  train::FineTuneConfig pretrain_lr;
  train::FineTuneConfig finetune;
  SweepConfig sweep;
  EmbeddingConfig embeddings;
};

ExperimentConfig default_config();
void validate(const ExperimentConfig& cfg);

nlohmann::json to_json(const ExperimentConfig& cfg);
// Overlays `j` on the defaults; unknown keys raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);

// Reads a JSON file, applies dotted key=value overrides (values parsed as
// JSON, else taken as strings), then LWAY_OUT when set.
ExperimentConfig load_config(const std::optional<fs::path>& path, const std::vector<std::string>& overrides);
void apply_override(nlohmann::json& doc, const std::string& assignment);

std::string config_hash(const ExperimentConfig& cfg);  // FNV-1a over the canonical dump

// Writes config.<command>.json into the output directory.
fs::path echo_config(const ExperimentConfig& cfg, const std::string& command);

struct Sample {
  std::string id;
  std::string family;
  Image hr;  // empty when not available
  Image lr;
};

struct Split {
  std::vector<Sample> samples;
  std::vector<train::TrainingPair> pairs() const;
  std::vector<Image> lrs() const;
};

// Output layout below the configured directory.
struct Layout {
  fs::path root;
  explicit Layout(const ExperimentConfig& cfg) : root(cfg.output_dir) {}
  fs::path data() const { return root / "data"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path sr_checkpoint() const { return checkpoints() / "sr"; }
  fs::path lr_checkpoint() const { return checkpoints() / "lr_recon"; }
  fs::path adapted_checkpoint() const { return checkpoints() / "adapted"; }
};

// Individual pipeline stages. Each echoes its config and writes only below
// the output directory.
void generate_data(const ExperimentConfig& cfg);
Split load_split(const ExperimentConfig& cfg, const std::string& split);

struct LrReconBundle {
  nn::EncoderNet<float> encoder;
  nn::ReconstructorNet<float> reconstructor;
};

struct PretrainLrSummary {
  double heldout_l1 = 0.0;
  double bicubic_l1 = 0.0;
  double final_loss = 0.0;
};

nn::SrModel<float> run_pretrain_sr(const ExperimentConfig& cfg);
PretrainLrSummary run_pretrain_lr(const ExperimentConfig& cfg);

struct FinetuneSummary {
  double mask_fraction = 0.0;
  std::vector<double> first_decile;  // per history
  std::vector<double> last_decile;
  std::vector<double> final_loss;    // full-image self-supervised loss per test image
};

FinetuneSummary run_finetune(const ExperimentConfig& cfg);

struct EvalRow {
  std::string id;
  std::optional<double> psnr;
  std::optional<double> ssim;
  losses::LossReport loss;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  nlohmann::json summary;
};

struct EvalOptions {
  std::string model = "both";  // baseline | adapted | both
  std::optional<fs::path> lr_dir;
  std::optional<fs::path> hr_dir;
};

// Returns one report per evaluated model, keyed by model name.
std::vector<std::pair<std::string, EvalReport>> run_evaluate(const ExperimentConfig& cfg, const EvalOptions& opt);

struct SweepRow {
  nlohmann::json value;
  double final_loss = 0.0;
  double psnr = 0.0;
  double psnr_baseline = 0.0;
  double trainable_fraction = 0.0;
};

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg);

struct EmbeddingSummary {
  std::size_t rows = 0;
  int dims = 0;
  double probe_accuracy = 0.0;
};

EmbeddingSummary run_export_embeddings(const ExperimentConfig& cfg);

// Checkpoint helpers shared by the stages and the acceptance harness.
nn::SrModel<float> load_sr(const fs::path& dir);
LrReconBundle load_lr_recon(const fs::path& dir);
std::string checkpoint_id(const fs::path& dir);

}  // namespace lway::experiment

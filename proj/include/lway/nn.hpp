#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lway/autograd.hpp"
#include "lway/image.hpp"
#include "lway/rng.hpp"

namespace lway::nn {

template <class T>
struct NamedParam {
  std::string name;
  ag::Var<T> var;
};

// Ordered parameter registry. Registration order is the network order
// (input side first) and is the order used by checkpoints and masks.
template <class T>
class ParamSet {
 public:
  ag::Var<T> add(std::string name, ag::Tensor<T> init);
  const std::vector<NamedParam<T>>& list() const noexcept { return params_; }
  std::vector<NamedParam<T>>& list() noexcept { return params_; }
  std::size_t scalar_count() const;
  void set_requires_grad(bool on);
  void zero_grad();

 private:
  std::vector<NamedParam<T>> params_;
};

// Deterministic initialisers.
template <class T>
ag::Tensor<T> normal_init(std::vector<int> shape, double stddev, Rng& rng);

template <class T>
struct Conv2d {
  ag::Var<T> weight, bias;
  int stride = 1;
  int pad = 1;

  static Conv2d make(ParamSet<T>& ps, const std::string& name, int cin, int cout, int k, int stride, Rng& rng,
                     double gain = 1.0);
  ag::Var<T> operator()(const ag::Var<T>& x) const;
};

template <class T>
struct Linear {
  ag::Var<T> weight, bias;

  static Linear make(ParamSet<T>& ps, const std::string& name, int in, int out, Rng& rng, double gain = 1.0,
                     T bias_init = T(0));
  ag::Var<T> operator()(const ag::Var<T>& x) const;
};

inline constexpr double kDemodEps = 1e-8;

// Modulated/demodulated convolution conditioned on an embedding. The style
// projection is affine with bias initialised to one, so s == 1 at e == 0.
template <class T>
struct ModulatedConv2d {
  ag::Var<T> weight;  // [Cout, Cin, k, k]
  Linear<T> style;    // d -> Cin
  ag::Var<T> bias;    // [Cout], added after the convolution
  int stride = 1;
  int pad = 1;
  T eps = static_cast<T>(kDemodEps);

  static ModulatedConv2d make(ParamSet<T>& ps, const std::string& name, int cin, int cout, int k, int stride,
                              int embed_dim, Rng& rng);
  ag::Var<T> styles(const ag::Var<T>& e) const;  // [N, Cin]
  ag::Var<T> operator()(const ag::Var<T>& x, const ag::Var<T>& e) const;
};

inline constexpr float kLeakySlope = 0.2f;

// --- networks -----------------------------------------------------------

struct EncoderConfig {
  int embed_dim = 64;
  int width = 32;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Degradation encoder: five conv blocks (the last four stride 2), global
// average pooling, linear head to embed_dim. Accepts only LR images.
template <class T>
class EncoderNet {
 public:
  static constexpr int kMinExtent = 16;

  EncoderNet(const EncoderConfig& cfg, std::uint64_t seed);
  EncoderNet(const EncoderNet&) = delete;
  EncoderNet& operator=(const EncoderNet&) = delete;
  EncoderNet(EncoderNet&&) noexcept = default;
  EncoderNet& operator=(EncoderNet&&) noexcept = default;
  // Independent deep copy (fresh parameter nodes).
  EncoderNet clone() const;
  ag::Var<T> forward(const ag::Var<T>& lr) const;  // [N,3,H,W] -> [N,d]
  std::vector<float> encode(const Image& lr) const;  // inference mode

  const EncoderConfig& config() const noexcept { return cfg_; }
  ParamSet<T>& params() noexcept { return params_; }
  const ParamSet<T>& params() const noexcept { return params_; }

 private:
  EncoderConfig cfg_;
  ParamSet<T> params_;
  std::vector<Conv2d<T>> convs_;
  Linear<T> head_;
};

struct ReconstructorConfig {
  int embed_dim = 64;
  int width = 32;
  int layers = 4;
  int scale = 4;
  friend bool operator==(const ReconstructorConfig&, const ReconstructorConfig&) = default;
};

// LR reconstructor: modulated conv stack over the HR/SR image (layer 0 stride
// 1, the next log2(scale) layers stride 2), plain 3-channel projection, added
// to the area-downsampled input and clamped to [0, 1].
template <class T>
class ReconstructorNet {
 public:
  ReconstructorNet(const ReconstructorConfig& cfg, std::uint64_t seed);
  ReconstructorNet(const ReconstructorNet&) = delete;
  ReconstructorNet& operator=(const ReconstructorNet&) = delete;
  ReconstructorNet(ReconstructorNet&&) noexcept = default;
  ReconstructorNet& operator=(ReconstructorNet&&) noexcept = default;
  // Independent deep copy (fresh parameter nodes).
  ReconstructorNet clone() const;
  ag::Var<T> forward(const ag::Var<T>& hr, const ag::Var<T>& e) const;  // -> [N,3,H/s,W/s]
  Image reconstruct(const Image& hr, std::span<const float> e) const;

  const ReconstructorConfig& config() const noexcept { return cfg_; }
  ParamSet<T>& params() noexcept { return params_; }
  const ParamSet<T>& params() const noexcept { return params_; }
  const std::vector<ModulatedConv2d<T>>& layers() const noexcept { return layers_; }

 private:
  ReconstructorConfig cfg_;
  ParamSet<T> params_;
  std::vector<ModulatedConv2d<T>> layers_;
  Conv2d<T> proj_;
};

struct SrConfig {
  int width = 32;
  int blocks = 8;
  int scale = 4;
  friend bool operator==(const SrConfig&, const SrConfig&) = default;
};

// Toy SR network: residual conv trunk, nearest-then-conv upsampler per 2x,
// output added to the bicubic upsampling of the input, clamped to [0, 1].
template <class T>
class SrModel {
 public:
  SrModel(const SrConfig& cfg, std::uint64_t seed);
  SrModel(const SrModel&) = delete;
  SrModel& operator=(const SrModel&) = delete;
  SrModel(SrModel&&) noexcept = default;
  SrModel& operator=(SrModel&&) noexcept = default;
  // Independent deep copy (fresh parameter nodes).
  SrModel clone() const;
  ag::Var<T> forward(const ag::Var<T>& lr) const;  // -> [N,3,H*s,W*s]
  Image super_resolve(const Image& lr) const;

  const SrConfig& config() const noexcept { return cfg_; }
  ParamSet<T>& params() noexcept { return params_; }
  const ParamSet<T>& params() const noexcept { return params_; }

 private:
  SrConfig cfg_;
  ParamSet<T> params_;
  Conv2d<T> head_;
  std::vector<std::pair<Conv2d<T>, Conv2d<T>>> blocks_;
  Conv2d<T> trunk_;
  std::vector<Conv2d<T>> up_;
  Conv2d<T> tail_;
};

// Deep copy of parameter values between two identically-configured sets.
template <class T>
void copy_parameters(const ParamSet<T>& from, ParamSet<T>& to);

// --- optimiser -------------------------------------------------------------

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over every registered parameter that requires grad at step time.
template <class T>
class Adam {
 public:
  Adam(std::initializer_list<ParamSet<T>*> sets, AdamConfig cfg);
  void step();

 private:
  std::vector<ag::Var<T>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  long t_ = 0;
};

// --- image <-> tensor ------------------------------------------------------

template <class T>
ag::Tensor<T> to_batch(std::span<const Image> images);
template <class T>
Image from_batch(const ag::Tensor<T>& batch, int index);

// --- JSON ----------------------------------------------------------------

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const ReconstructorConfig& c);
void from_json(const nlohmann::json& j, ReconstructorConfig& c);
void to_json(nlohmann::json& j, const SrConfig& c);
void from_json(const nlohmann::json& j, SrConfig& c);

}  // namespace lway::nn

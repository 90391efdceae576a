#pragma once

#include <cstdint>
#include <vector>

#include "lway/autograd.hpp"
#include "lway/image.hpp"
#include "lway/nn.hpp"
#include "lway/wavelet.hpp"

namespace lway::losses {

struct LossWeights {
  double l1 = 1.0;
  double perceptual = 1.0;
};

struct LossReport {
  double total = 0.0;
  double l1 = 0.0;
  double perceptual = 0.0;
  double lambda_l1 = 1.0;
  double lambda_perc = 1.0;
};

// Frozen random-feature pyramid standing in for a learned perceptual metric.
// Three conv stages (the last two stride 2); features are unit-normalised
// across channels per pixel and compared by mean squared difference.
template <class T>
class PerceptualExtractor {
 public:
  static constexpr int kMinExtent = 16;

  explicit PerceptualExtractor(std::uint64_t seed = 0x1eaf, std::vector<int> widths = {8, 16, 32});
  std::vector<ag::Var<T>> features(const ag::Var<T>& x) const;
  ag::Var<T> distance(const ag::Var<T>& a, const ag::Var<T>& b) const;

  const nn::ParamSet<T>& params() const noexcept { return params_; }

 private:
  nn::ParamSet<T> params_;
  std::vector<nn::Conv2d<T>> stages_;
};

template <class T>
struct LossTerms {
  ag::Var<T> total, l1, perceptual;
  LossReport report(const LossWeights& w) const;
};

// lambda_l1 * L1(pred, target) + lambda_perc * perceptual(pred, target)
template <class T>
LossTerms<T> composite_loss(const ag::Var<T>& pred, const ag::Var<T>& target, const PerceptualExtractor<T>& f,
                            const LossWeights& w);

// Composite loss on W * pred and W * target. weight_map is [N,1,H,W] (or the
// full shape) and is a constant of differentiation.
template <class T>
LossTerms<T> weighted_pair_loss(const ag::Var<T>& pred, const ag::Var<T>& target, const ag::Tensor<T>& weight_map,
                                const PerceptualExtractor<T>& f, const LossWeights& w);

// Image-level conveniences (no gradient).
double l1_loss(const Image& a, const Image& b);
double perceptual_loss(const Image& a, const Image& b, const PerceptualExtractor<float>& f);
LossReport weighted_pair_loss(const Image& pred, const Image& target, const wavelet::WeightMap& w,
                              const PerceptualExtractor<float>& f, const LossWeights& weights);

// Stack single-channel weight maps into [N,1,H,W].
template <class T>
ag::Tensor<T> weight_batch(const std::vector<const Image*>& maps);

}  // namespace lway::losses

#include "lway/losses.hpp"

#include <cmath>
#include <string>

#include "lway/errors.hpp"

namespace lway::losses {

namespace {
constexpr double kFeatureEps = 1e-10;
}

template <class T>
PerceptualExtractor<T>::PerceptualExtractor(std::uint64_t seed, std::vector<int> widths) {
  if (widths.empty()) throw ArgumentError("perceptual extractor needs at least one stage");
  Rng rng(derive_seed(seed, 0x9E));
  int cin = 3;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    auto conv = nn::Conv2d<T>::make(params_, "perceptual.stage" + std::to_string(i), cin, widths[i], 3,
                                    i == 0 ? 1 : 2, rng);
    for (auto& b : conv.bias.mutable_value().data) b = static_cast<T>(normal(rng, 0.0, 0.1));
    stages_.push_back(conv);
    cin = widths[i];
  }
  params_.set_requires_grad(false);
}

template <class T>
std::vector<ag::Var<T>> PerceptualExtractor<T>::features(const ag::Var<T>& x) const {
  if (x.value().rank() != 4 || x.shape()[2] < kMinExtent || x.shape()[3] < kMinExtent)
    throw ArgumentError("perceptual loss needs [N,C,H,W] with H,W >= 16, got " + ag::shape_string(x.shape()));
  std::vector<ag::Var<T>> out;
  ag::Var<T> h = x;
  for (const auto& s : stages_) {
    h = ag::leaky_relu(s(h), static_cast<T>(nn::kLeakySlope));
    out.push_back(ag::channel_normalize(h, static_cast<T>(kFeatureEps)));
  }
  return out;
}

template <class T>
ag::Var<T> PerceptualExtractor<T>::distance(const ag::Var<T>& a, const ag::Var<T>& b) const {
  if (a.shape() != b.shape())
    throw ArgumentError("perceptual loss: shape mismatch " + ag::shape_string(a.shape()) + " vs " +
                        ag::shape_string(b.shape()));
  const auto fa = features(a);
  const auto fb = features(b);
  // Squared feature differences are summed over channels and averaged over
  // positions; mse_mean averages both, so scale back by the stage width.
  auto stage = [&](std::size_t i) {
    return ag::scale(ag::mse_mean(fa[i], fb[i]), static_cast<T>(fa[i].shape()[1]));
  };
  ag::Var<T> total = stage(0);
  for (std::size_t i = 1; i < fa.size(); ++i) total = ag::add(total, stage(i));
  return total;
}

template <class T>
LossReport LossTerms<T>::report(const LossWeights& w) const {
  LossReport r;
  r.l1 = static_cast<double>(l1.item());
  r.perceptual = static_cast<double>(perceptual.item());
  r.lambda_l1 = w.l1;
  r.lambda_perc = w.perceptual;
  r.total = w.l1 * r.l1 + w.perceptual * r.perceptual;
  return r;
}

template <class T>
LossTerms<T> composite_loss(const ag::Var<T>& pred, const ag::Var<T>& target, const PerceptualExtractor<T>& f,
                            const LossWeights& w) {
  LossTerms<T> t;
  t.l1 = ag::l1_mean(pred, target);
  t.perceptual = f.distance(pred, target);
  t.total = ag::add(ag::scale(t.l1, static_cast<T>(w.l1)), ag::scale(t.perceptual, static_cast<T>(w.perceptual)));
  return t;
}

template <class T>
LossTerms<T> weighted_pair_loss(const ag::Var<T>& pred, const ag::Var<T>& target, const ag::Tensor<T>& weight_map,
                                const PerceptualExtractor<T>& f, const LossWeights& w) {
  if (pred.shape() != target.shape())
    throw ArgumentError("weighted loss: shape mismatch " + ag::shape_string(pred.shape()) + " vs " +
                        ag::shape_string(target.shape()));
  return composite_loss(ag::mul_constant(pred, weight_map), ag::mul_constant(target, weight_map), f, w);
}

double l1_loss(const Image& a, const Image& b) {
  if (!a.same_shape(b) || a.empty()) throw ArgumentError("l1_loss: image shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a.data()[i]) - b.data()[i]);
  return s / static_cast<double>(a.size());
}

double perceptual_loss(const Image& a, const Image& b, const PerceptualExtractor<float>& f) {
  if (!a.same_shape(b)) throw ArgumentError("perceptual_loss: image shapes differ");
  ag::NoGradGuard guard;
  const auto d = f.distance(ag::constant(nn::to_batch<float>(std::span<const Image>(&a, 1))),
                            ag::constant(nn::to_batch<float>(std::span<const Image>(&b, 1))));
  return static_cast<double>(d.item());
}

LossReport weighted_pair_loss(const Image& pred, const Image& target, const wavelet::WeightMap& w,
                              const PerceptualExtractor<float>& f, const LossWeights& weights) {
  if (!pred.same_shape(target)) throw ArgumentError("weighted_pair_loss: image shapes differ");
  if (w.weights.height() != pred.height() || w.weights.width() != pred.width())
    throw ArgumentError("weighted_pair_loss: weight map does not match image extent");
  ag::NoGradGuard guard;
  const auto terms = weighted_pair_loss<float>(ag::constant(nn::to_batch<float>(std::span<const Image>(&pred, 1))),
                                               ag::constant(nn::to_batch<float>(std::span<const Image>(&target, 1))),
                                               weight_batch<float>({&w.weights}), f, weights);
  return terms.report(weights);
}

template <class T>
ag::Tensor<T> weight_batch(const std::vector<const Image*>& maps) {
  if (maps.empty()) throw ArgumentError("weight_batch: no maps");
  const int h = maps.front()->height(), w = maps.front()->width();
  ag::Tensor<T> t({static_cast<int>(maps.size()), 1, h, w});
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i]->channels() != 1 || maps[i]->height() != h || maps[i]->width() != w)
      throw ArgumentError("weight_batch: maps must be single-channel and equally sized");
    std::copy(maps[i]->data().begin(), maps[i]->data().end(), t.ptr() + i * static_cast<std::size_t>(h) * w);
  }
  return t;
}

#define LWAY_LOSS_INSTANTIATE(T)                                                                               \
  template class PerceptualExtractor<T>;                                                                       \
  template struct LossTerms<T>;                                                                                \
  template LossTerms<T> composite_loss<T>(const ag::Var<T>&, const ag::Var<T>&, const PerceptualExtractor<T>&, \
                                          const LossWeights&);                                                 \
  template LossTerms<T> weighted_pair_loss<T>(const ag::Var<T>&, const ag::Var<T>&, const ag::Tensor<T>&,      \
                                              const PerceptualExtractor<T>&, const LossWeights&);              \
  template ag::Tensor<T> weight_batch<T>(const std::vector<const Image*>&);

LWAY_LOSS_INSTANTIATE(float)
LWAY_LOSS_INSTANTIATE(double)

}  // namespace lway::losses

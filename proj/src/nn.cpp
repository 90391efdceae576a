#include "lway/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lway/degrade.hpp"
#include "lway/errors.hpp"

namespace lway::nn {

template <class T>
ag::Var<T> ParamSet<T>::add(std::string name, ag::Tensor<T> init) {
  for (const auto& p : params_)
    if (p.name == name) throw ArgumentError("duplicate parameter name '" + name + "'");
  params_.push_back({std::move(name), ag::leaf(std::move(init), true)});
  return params_.back().var;
}

template <class T>
std::size_t ParamSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

template <class T>
void ParamSet<T>::set_requires_grad(bool on) {
  for (auto& p : params_) p.var.set_requires_grad(on);
}

template <class T>
void ParamSet<T>::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

template <class T>
ag::Tensor<T> normal_init(std::vector<int> shape, double stddev, Rng& rng) {
  ag::Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

template <class T>
Conv2d<T> Conv2d<T>::make(ParamSet<T>& ps, const std::string& name, int cin, int cout, int k, int stride, Rng& rng,
                          double gain) {
  Conv2d c;
  c.weight = ps.add(name + ".weight", normal_init<T>({cout, cin, k, k}, gain * std::sqrt(2.0 / (cin * k * k)), rng));
  c.bias = ps.add(name + ".bias", ag::Tensor<T>({cout}));
  c.stride = stride;
  c.pad = k / 2;
  return c;
}

template <class T>
ag::Var<T> Conv2d<T>::operator()(const ag::Var<T>& x) const {
  return ag::conv2d(x, weight, bias, stride, pad);
}

template <class T>
Linear<T> Linear<T>::make(ParamSet<T>& ps, const std::string& name, int in, int out, Rng& rng, double gain,
                          T bias_init) {
  Linear l;
  l.weight = ps.add(name + ".weight", normal_init<T>({out, in}, gain / std::sqrt(static_cast<double>(in)), rng));
  l.bias = ps.add(name + ".bias", ag::Tensor<T>({out}, bias_init));
  return l;
}

template <class T>
ag::Var<T> Linear<T>::operator()(const ag::Var<T>& x) const {
  return ag::linear(x, weight, bias);
}

template <class T>
ModulatedConv2d<T> ModulatedConv2d<T>::make(ParamSet<T>& ps, const std::string& name, int cin, int cout, int k,
                                            int stride, int embed_dim, Rng& rng) {
  ModulatedConv2d m;
  m.weight = ps.add(name + ".weight", normal_init<T>({cout, cin, k, k}, 1.0, rng));
  m.style = Linear<T>::make(ps, name + ".style", embed_dim, cin, rng, 1.0, T(1));
  m.bias = ps.add(name + ".bias", ag::Tensor<T>({cout}));
  m.stride = stride;
  m.pad = k / 2;
  return m;
}

template <class T>
ag::Var<T> ModulatedConv2d<T>::styles(const ag::Var<T>& e) const {
  if (e.value().rank() != 2 || e.shape()[1] != style.weight.shape()[1])
    throw ArgumentError("modulated conv: embedding dimension mismatch, got " + ag::shape_string(e.shape()));
  return style(e);
}

template <class T>
ag::Var<T> ModulatedConv2d<T>::operator()(const ag::Var<T>& x, const ag::Var<T>& e) const {
  const auto s = styles(e);
  return ag::add_channel_bias(ag::modulated_conv2d(x, weight, s, stride, pad, eps), bias);
}

// --- encoder ---------------------------------------------------------------

template <class T>
EncoderNet<T>::EncoderNet(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.embed_dim < 1 || cfg.width < 1) throw ConfigError("encoder: embed_dim and width must be positive");
  Rng rng(derive_seed(seed, 0xE));
  const int w = cfg.width;
  const int chans[6] = {3, w, w, 2 * w, 2 * w, 2 * w};
  for (int i = 0; i < 5; ++i)
    convs_.push_back(Conv2d<T>::make(params_, "encoder.conv" + std::to_string(i), chans[i], chans[i + 1], 3,
                                     i == 0 ? 1 : 2, rng));
  head_ = Linear<T>::make(params_, "encoder.head", 2 * w, cfg.embed_dim, rng);
}

template <class T>
ag::Var<T> EncoderNet<T>::forward(const ag::Var<T>& lr) const {
  if (lr.value().rank() != 4 || lr.shape()[1] != 3 || lr.shape()[2] < kMinExtent || lr.shape()[3] < kMinExtent)
    throw ArgumentError("encoder input must be [N,3,H,W] with H,W >= 16, got " + ag::shape_string(lr.shape()));
  // A fixed high-pass (pixel minus its 3x3 mean, valid region only) strips
  // the scene's DC so the pooled features see texture, noise and blocking.
  ag::Tensor<T> hp({3, 3, 3, 3});
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 9; ++k) hp.data[(c * 3 + c) * 9 + k] = static_cast<T>(k == 4 ? 8.0 / 9.0 : -1.0 / 9.0);
  ag::Var<T> h = ag::conv2d(lr, ag::constant(std::move(hp)), ag::constant(ag::Tensor<T>({3})), 1, 0);
  for (const auto& c : convs_) h = ag::leaky_relu(c(h), static_cast<T>(kLeakySlope));
  // Demodulation ignores the overall style scale, so nothing would pin the
  // embedding's magnitude; fix it at sqrt(d) and let only its direction vary.
  const auto e = ag::channel_normalize(head_(ag::global_avg_pool(h)), static_cast<T>(1e-8));
  return ag::scale(e, static_cast<T>(std::sqrt(static_cast<double>(cfg_.embed_dim))));
}

template <class T>
std::vector<float> EncoderNet<T>::encode(const Image& lr) const {
  ag::NoGradGuard guard;
  const auto e = forward(ag::constant(to_batch<T>(std::span<const Image>(&lr, 1))));
  return {e.value().data.begin(), e.value().data.end()};
}

// --- reconstructor -----------------------------------------------------------

namespace {

int log2_scale(int scale) {
  if (scale == 2) return 1;
  if (scale == 4) return 2;
  throw ConfigError("scale must be 2 or 4, got " + std::to_string(scale));
}

}  // namespace

template <class T>
ReconstructorNet<T>::ReconstructorNet(const ReconstructorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  const int downs = log2_scale(cfg.scale);
  if (cfg.layers < downs + 1)
    throw ConfigError("reconstructor needs at least " + std::to_string(downs + 1) + " layers for scale " +
                      std::to_string(cfg.scale));
  if (cfg.embed_dim < 1 || cfg.width < 1) throw ConfigError("reconstructor: embed_dim and width must be positive");
  Rng rng(derive_seed(seed, 0xA));
  for (int i = 0; i < cfg.layers; ++i) {
    const int cin = i == 0 ? 3 : cfg.width;
    const int stride = (i >= 1 && i <= downs) ? 2 : 1;
    layers_.push_back(ModulatedConv2d<T>::make(params_, "reconstructor.mod" + std::to_string(i), cin, cfg.width, 3,
                                               stride, cfg.embed_dim, rng));
  }
  proj_ = Conv2d<T>::make(params_, "reconstructor.proj", cfg.width, 3, 3, 1, rng, 0.1);
}

template <class T>
ag::Var<T> ReconstructorNet<T>::forward(const ag::Var<T>& hr, const ag::Var<T>& e) const {
  if (hr.value().rank() != 4 || hr.shape()[1] != 3 || hr.shape()[2] % cfg_.scale != 0 ||
      hr.shape()[3] % cfg_.scale != 0)
    throw ArgumentError("reconstructor input must be [N,3,H,W] with H,W divisible by " +
                        std::to_string(cfg_.scale) + ", got " + ag::shape_string(hr.shape()));
  if (e.value().rank() != 2 || e.shape()[0] != hr.shape()[0] || e.shape()[1] != cfg_.embed_dim)
    throw ArgumentError("reconstructor embedding must be [N," + std::to_string(cfg_.embed_dim) + "], got " +
                        ag::shape_string(e.shape()));
  ag::Var<T> h = hr;
  for (const auto& layer : layers_) {
    h = ag::leaky_relu(layer(h, e), static_cast<T>(kLeakySlope));
  }
  auto residual = proj_(h);
  return ag::clamp(ag::add(ag::avg_pool(hr, cfg_.scale), residual), T(0), T(1));
}

template <class T>
Image ReconstructorNet<T>::reconstruct(const Image& hr, std::span<const float> e) const {
  if (e.size() != static_cast<std::size_t>(cfg_.embed_dim))
    throw ArgumentError("reconstruct: embedding has " + std::to_string(e.size()) + " entries, expected " +
                        std::to_string(cfg_.embed_dim));
  ag::NoGradGuard guard;
  ag::Tensor<T> et({1, cfg_.embed_dim});
  std::copy(e.begin(), e.end(), et.data.begin());
  const auto out = forward(ag::constant(to_batch<T>(std::span<const Image>(&hr, 1))), ag::constant(std::move(et)));
  return from_batch(out.value(), 0);
}

// --- SR model ----------------------------------------------------------------

template <class T>
SrModel<T>::SrModel(const SrConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  const int ups = log2_scale(cfg.scale);
  if (cfg.width < 1 || cfg.blocks < 0) throw ConfigError("sr model: width must be positive, blocks >= 0");
  Rng rng(derive_seed(seed, 0x5));
  const int w = cfg.width;
  head_ = Conv2d<T>::make(params_, "sr.head", 3, w, 3, 1, rng);
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string n = "sr.block" + std::to_string(b);
    auto c1 = Conv2d<T>::make(params_, n + ".conv1", w, w, 3, 1, rng);
    auto c2 = Conv2d<T>::make(params_, n + ".conv2", w, w, 3, 1, rng, 0.1);
    blocks_.emplace_back(std::move(c1), std::move(c2));
  }
  trunk_ = Conv2d<T>::make(params_, "sr.trunk", w, w, 3, 1, rng, 0.1);
  for (int u = 0; u < ups; ++u) up_.push_back(Conv2d<T>::make(params_, "sr.up" + std::to_string(u), w, w, 3, 1, rng));
  tail_ = Conv2d<T>::make(params_, "sr.tail", w, 3, 3, 1, rng, 0.1);
}

template <class T>
ag::Var<T> SrModel<T>::forward(const ag::Var<T>& lr) const {
  if (lr.value().rank() != 4 || lr.shape()[1] != 3)
    throw ArgumentError("sr model input must be [N,3,H,W], got " + ag::shape_string(lr.shape()));
  const T slope = static_cast<T>(kLeakySlope);
  auto f = ag::leaky_relu(head_(lr), slope);
  auto r = f;
  for (const auto& [c1, c2] : blocks_) r = ag::add(r, c2(ag::leaky_relu(c1(r), slope)));
  f = ag::add(f, trunk_(r));
  for (const auto& up : up_) f = ag::leaky_relu(up(ag::upsample_nearest(f, 2)), slope);
  auto out = tail_(f);

  // Global skip: bicubic upsampling of the input, treated as data.
  const int n = lr.shape()[0];
  std::vector<Image> base;
  base.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) base.push_back(degrade::bicubic_upsample(from_batch(lr.value(), i), cfg_.scale));
  return ag::clamp(ag::add(ag::constant(to_batch<T>(base)), out), T(0), T(1));
}

template <class T>
Image SrModel<T>::super_resolve(const Image& lr) const {
  ag::NoGradGuard guard;
  const auto out = forward(ag::constant(to_batch<T>(std::span<const Image>(&lr, 1))));
  return from_batch(out.value(), 0);
}

template <class T>
EncoderNet<T> EncoderNet<T>::clone() const {
  EncoderNet copy(cfg_, 0);
  copy_parameters(params_, copy.params_);
  return copy;
}

template <class T>
ReconstructorNet<T> ReconstructorNet<T>::clone() const {
  ReconstructorNet copy(cfg_, 0);
  copy_parameters(params_, copy.params_);
  return copy;
}

template <class T>
SrModel<T> SrModel<T>::clone() const {
  SrModel copy(cfg_, 0);
  copy_parameters(params_, copy.params_);
  return copy;
}

template <class T>
void copy_parameters(const ParamSet<T>& from, ParamSet<T>& to) {
  const auto& a = from.list();
  auto& b = to.list();
  if (a.size() != b.size()) throw ArgumentError("copy_parameters: parameter lists differ in length");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].var.shape() != b[i].var.shape())
      throw ArgumentError("copy_parameters: mismatch at '" + a[i].name + "'");
    b[i].var.mutable_value() = a[i].var.value();
  }
}

// --- Adam --------------------------------------------------------------------

template <class T>
Adam<T>::Adam(std::initializer_list<ParamSet<T>*> sets, AdamConfig cfg) : cfg_(cfg) {
  for (const auto* set : sets)
    for (const auto& p : set->list()) {
      params_.push_back(p.var);
      m_.emplace_back(p.var.value().size(), T(0));
      v_.emplace_back(p.var.value().size(), T(0));
    }
}

template <class T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T step = static_cast<T>(cfg_.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(cfg_.eps);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& var = params_[k];
    if (!var.requires_grad() || var.grad().size() != var.value().size()) continue;
    auto& w = var.mutable_value().data;
    const auto& g = var.grad().data;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      w[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

// --- conversion --------------------------------------------------------------

template <class T>
ag::Tensor<T> to_batch(std::span<const Image> images) {
  if (images.empty()) throw ArgumentError("to_batch: no images");
  const Image& first = images.front();
  ag::Tensor<T> t({static_cast<int>(images.size()), first.channels(), first.height(), first.width()});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(first)) throw ArgumentError("to_batch: images differ in shape");
    std::copy(images[i].data().begin(), images[i].data().end(), t.ptr() + i * first.size());
  }
  return t;
}

template <class T>
Image from_batch(const ag::Tensor<T>& batch, int index) {
  if (batch.rank() != 4 || index < 0 || index >= batch.shape[0]) throw ArgumentError("from_batch: bad index");
  Image img(batch.shape[1], batch.shape[2], batch.shape[3]);
  const auto s = batch.sample(index);
  std::transform(s.begin(), s.end(), img.data().begin(), [](T v) { return static_cast<float>(v); });
  return img;
}

// --- JSON ----------------------------------------------------------------------

void to_json(nlohmann::json& j, const EncoderConfig& c) { j = {{"embed_dim", c.embed_dim}, {"width", c.width}}; }
void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.embed_dim = j.at("embed_dim").get<int>();
  c.width = j.at("width").get<int>();
}
void to_json(nlohmann::json& j, const ReconstructorConfig& c) {
  j = {{"embed_dim", c.embed_dim}, {"width", c.width}, {"layers", c.layers}, {"scale", c.scale}};
}
void from_json(const nlohmann::json& j, ReconstructorConfig& c) {
  c.embed_dim = j.at("embed_dim").get<int>();
  c.width = j.at("width").get<int>();
  c.layers = j.at("layers").get<int>();
  c.scale = j.at("scale").get<int>();
}
void to_json(nlohmann::json& j, const SrConfig& c) {
  j = {{"width", c.width}, {"blocks", c.blocks}, {"scale", c.scale}};
}
void from_json(const nlohmann::json& j, SrConfig& c) {
  c.width = j.at("width").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.scale = j.at("scale").get<int>();
}

#define LWAY_NN_INSTANTIATE(T)                                        \
  template class ParamSet<T>;                                         \
  template ag::Tensor<T> normal_init<T>(std::vector<int>, double, Rng&); \
  template struct Conv2d<T>;                                          \
  template struct Linear<T>;                                          \
  template struct ModulatedConv2d<T>;                                 \
  template class EncoderNet<T>;                                       \
  template class ReconstructorNet<T>;                                 \
  template class SrModel<T>;                                          \
  template void copy_parameters<T>(const ParamSet<T>&, ParamSet<T>&); \
  template class Adam<T>;                                             \
  template ag::Tensor<T> to_batch<T>(std::span<const Image>);         \
  template Image from_batch<T>(const ag::Tensor<T>&, int);

LWAY_NN_INSTANTIATE(float)
LWAY_NN_INSTANTIATE(double)

}  // namespace lway::nn

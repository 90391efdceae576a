#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "lway/checkpoint.hpp"
#include "lway/errors.hpp"
#include "lway/nn.hpp"
#include "lway/synthetic.hpp"
#include "test_util.hpp"

using namespace lway;
using ag::Tensor;
using ag::Var;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data) v = d(rng);
  return t;
}

// Naive zero-padded convolution, written independently of im2col.
Tensor<double> direct_conv(const Tensor<double>& x, const double* w, int cout, int k, int stride, int n_index) {
  const int cin = x.shape[1], h = x.shape[2], wd = x.shape[3], pad = k / 2;
  const int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> out({cout, ho, wo});
  for (int j = 0; j < cout; ++j)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double s = 0;
        for (int i = 0; i < cin; ++i)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              s += w[((j * cin + i) * k + ky) * k + kx] *
                   x.data[((static_cast<std::size_t>(n_index) * cin + i) * h + iy) * wd + ix];
            }
        out.data[(static_cast<std::size_t>(j) * ho + oy) * wo + ox] = s;
      }
  return out;
}

}  // namespace

TEST_CASE("modulation with unit styles and unit-norm weights is a plain convolution") {
  std::mt19937_64 rng(1);
  auto w = random_tensor({4, 3, 3, 3}, rng);
  for (int j = 0; j < 4; ++j) {
    double sq = 0;
    for (int q = 0; q < 27; ++q) sq += w.data[j * 27 + q] * w.data[j * 27 + q];
    for (int q = 0; q < 27; ++q) w.data[j * 27 + q] /= std::sqrt(sq);
  }
  nn::ParamSet<double> ps;
  Rng init(2);
  auto layer = nn::ModulatedConv2d<double>::make(ps, "m", 3, 4, 3, 1, 8, init);
  layer.weight.mutable_value() = w;
  const auto x = ag::constant(random_tensor({2, 3, 9, 7}, rng));
  const auto e = ag::constant(Tensor<double>({2, 8}, 0.0));
  const auto mod = layer(x, e);
  const auto plain = ag::conv2d(x, ag::constant(w), Var<double>(), 1, 1);
  for (std::size_t i = 0; i < mod.value().size(); ++i)
    CHECK(std::abs(mod.value().data[i] - plain.value().data[i]) < 1e-6);
}

TEST_CASE("1x1x1 modulation and demodulation by hand") {
  const Tensor<double> w({1, 1, 1, 1}, 2.0);
  const Tensor<double> s({1, 1}, 3.0);
  const auto wdd = ag::demodulated_weights(w, s, 1e-8);
  CHECK(wdd.data[0] == doctest::Approx(6.0 / std::sqrt(36.0 + 1e-8)).epsilon(1e-15));
  CHECK(wdd.data[0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("fused modulated conv matches explicit demodulated weights") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int cin = 1 + trial % 4, cout = 1 + (trial * 7) % 5, stride = 1 + trial % 2;
    const auto x = ag::constant(random_tensor({2, cin, 8 + trial % 3, 6 + trial % 4}, rng));
    const auto w = ag::constant(random_tensor({cout, cin, 3, 3}, rng));
    const auto s = ag::constant(random_tensor({2, cin}, rng, 0.2, 2.0));
    const auto fused = ag::modulated_conv2d(x, w, s, stride, 1, 1e-8);
    for (int n = 0; n < 2; ++n) {
      // w'' from the two formulas, evaluated directly.
      std::vector<double> wdd(w.value().size());
      for (int j = 0; j < cout; ++j) {
        double sq = 0;
        for (int i = 0; i < cin; ++i)
          for (int q = 0; q < 9; ++q) {
            const double v = s.value().data[n * cin + i] * w.value().data[(j * cin + i) * 9 + q];
            wdd[(j * cin + i) * 9 + q] = v;
            sq += v * v;
          }
        double check = 0;
        for (int q = 0; q < cin * 9; ++q) {
          wdd[j * cin * 9 + q] /= std::sqrt(sq + 1e-8);
          check += wdd[j * cin * 9 + q] * wdd[j * cin * 9 + q];
        }
        CHECK(std::abs(check - 1.0) <= 1e-4);
      }
      const auto ref = direct_conv(x.value(), wdd.data(), cout, 3, stride, n);
      const auto got = fused.value().sample(n);
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(got[i] - ref.data[i]) < 1e-5);
    }
  }
}

TEST_CASE("style scaling leaves modulated outputs unchanged") {
  std::mt19937_64 rng(4);
  const auto x = ag::constant(random_tensor({1, 3, 8, 8}, rng));
  const auto w = ag::constant(random_tensor({5, 3, 3, 3}, rng));
  auto s = random_tensor({1, 3}, rng, 0.5, 1.5);
  const auto ref = ag::modulated_conv2d(x, w, ag::constant(s), 1, 1, 1e-8);
  for (double c : {0.1, 10.0}) {
    auto sc = s;
    for (auto& v : sc.data) v *= c;
    const auto out = ag::modulated_conv2d(x, w, ag::constant(sc), 1, 1, 1e-8);
    for (std::size_t i = 0; i < out.value().size(); ++i)
      CHECK(std::abs(out.value().data[i] - ref.value().data[i]) <= 1e-5 * std::max(1.0, std::abs(ref.value().data[i])));
  }
}

TEST_CASE("autograd primitives agree with central differences") {
  std::mt19937_64 rng(5);
  auto x = ag::leaf(random_tensor({2, 3, 6, 6}, rng), true);
  auto w = ag::leaf(random_tensor({4, 3, 3, 3}, rng), true);
  auto b = ag::leaf(random_tensor({4}, rng), true);
  auto s = ag::leaf(random_tensor({2, 3}, rng, 0.5, 1.5), true);
  auto lw = ag::leaf(random_tensor({5, 4}, rng), true);
  const auto target = random_tensor({2, 4, 3, 3}, rng);

  auto forward = [&]() {
    auto h = ag::leaky_relu(ag::conv2d(x, w, b, 1, 1), 0.2);
    h = ag::add(h, ag::modulated_conv2d(x, w, s, 1, 1, 1e-8));
    h = ag::channel_normalize(h, 1e-10);
    auto p = ag::avg_pool(h, 2);
    auto u = ag::upsample_nearest(p, 2);
    auto g = ag::global_avg_pool(u);
    auto fc = ag::linear(g, lw, Var<double>());
    auto loss = ag::add(ag::mse_mean(ag::avg_pool(ag::sub(u, h), 2), ag::constant(target)),
                        ag::scale(ag::mse_mean(fc, ag::constant(Tensor<double>({2, 5}, 0.3))), 0.5));
    return loss;
  };
  auto loss = forward();
  ag::backward(loss);
  auto value = [&]() {
    ag::NoGradGuard g;
    return forward().item();
  };
  for (auto* p : {&x, &w, &b, &s, &lw}) {
    const auto r = testutil::central_difference_check(*p, value, 1e-5, 1e-4, 60, 9);
    CHECK(r.pass_rate() >= 0.95);
  }
}

TEST_CASE("encoder contracts") {
  nn::EncoderNet<float> enc({16, 8}, 1);
  const Image lr = synthetic::make_scene(24, 20, 2);
  const auto e1 = enc.encode(lr);
  CHECK(e1.size() == 16);
  CHECK(enc.encode(lr) == e1);
  CHECK(enc.encode(synthetic::make_scene(40, 48, 3)).size() == 16);
  CHECK_THROWS_AS(enc.encode(synthetic::make_scene(15, 32, 2)), ArgumentError);
}

TEST_CASE("reconstructor and SR model shape contracts") {
  nn::ReconstructorNet<float> rec({8, 8, 4, 4}, 1);
  const Image hr = synthetic::make_scene(32, 48, 1);
  const Image out = rec.reconstruct(hr, std::vector<float>(8, 0.0f));
  CHECK(out.channels() == 3);
  CHECK(out.height() == 8);
  CHECK(out.width() == 12);
  for (float v : out.data()) CHECK((v >= 0.0f && v <= 1.0f));
  CHECK_THROWS_AS(rec.reconstruct(synthetic::make_scene(30, 48, 1), std::vector<float>(8, 0.0f)), ArgumentError);
  CHECK_THROWS_AS(rec.reconstruct(hr, std::vector<float>(7, 0.0f)), ArgumentError);
  CHECK_THROWS_AS(nn::ReconstructorNet<float>({8, 8, 2, 4}, 1), ConfigError);

  nn::SrModel<float> sr({8, 2, 4}, 1);
  const Image lr = synthetic::make_scene(32, 32, 5);
  const Image up = sr.super_resolve(lr);
  CHECK(up.height() == 128);
  CHECK(up.width() == 128);
  CHECK(sr.super_resolve(lr) == up);
}

TEST_CASE("two-layer reconstructor gradients match central differences") {
  nn::ReconstructorNet<double> rec({4, 4, 2, 2}, 7);
  std::mt19937_64 rng(8);
  const auto hr = ag::constant(random_tensor({2, 3, 8, 8}, rng, 0.2, 0.8));
  const auto e = ag::constant(random_tensor({2, 4}, rng));
  const auto target = ag::constant(random_tensor({2, 3, 4, 4}, rng, 0.2, 0.8));
  auto loss = ag::l1_mean(rec.forward(hr, e), target);
  ag::backward(loss);
  auto value = [&]() {
    ag::NoGradGuard g;
    return ag::l1_mean(rec.forward(hr, e), target).item();
  };
  std::size_t checked = 0, passed = 0;
  for (auto& p : rec.params().list()) {
    const auto r = testutil::central_difference_check(p.var, value, 1e-3, 1e-3, 40, 3);
    checked += r.checked;
    passed += r.passed;
  }
  CHECK(static_cast<double>(passed) / checked >= 0.95);
}

TEST_CASE("checkpoint roundtrip is bit-exact and order-stable") {
  testutil::TempDir dir;
  nn::SrModel<float> a({8, 2, 2}, 11);
  nn::Checkpoint ck;
  nn::append_parameters(ck, a.params());
  ck.metadata = {{"kind", "sr"}};
  nn::save_checkpoint(dir.path() / "ck", ck);

  const auto back = nn::load_checkpoint(dir.path() / "ck");
  CHECK(back.metadata.at("kind") == "sr");
  REQUIRE(back.tensors.size() == ck.tensors.size());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) CHECK(back.tensors[i] == ck.tensors[i]);

  nn::SrModel<float> b({8, 2, 2}, 99);
  nn::restore_parameters(back, b.params());
  for (std::size_t i = 0; i < a.params().list().size(); ++i) {
    CHECK(a.params().list()[i].name == b.params().list()[i].name);
    CHECK(a.params().list()[i].var.value() == b.params().list()[i].var.value());
  }

  nn::SrModel<float> wrong({16, 2, 2}, 1);
  CHECK_THROWS_AS(nn::restore_parameters(back, wrong.params()), FormatError);
  CHECK_THROWS_AS(nn::load_checkpoint(dir.path() / "absent"), IoError);
}

TEST_CASE("clone is deep and Adam descends a quadratic") {
  nn::SrModel<float> a({4, 1, 2}, 1);
  auto b = a.clone();
  b.params().list()[0].var.mutable_value().data[0] += 1.0f;
  CHECK(a.params().list()[0].var.value().data[0] != b.params().list()[0].var.value().data[0]);

  nn::ParamSet<double> ps;
  auto x = ps.add("x", Tensor<double>({3}, 5.0));
  nn::Adam<double> adam({&ps}, {0.1});
  for (int i = 0; i < 500; ++i) {
    ps.zero_grad();
    ag::backward(ag::mse_mean(x, ag::constant(Tensor<double>({3}, 1.0))));
    adam.step();
  }
  for (double v : x.value().data) CHECK(v == doctest::Approx(1.0).epsilon(1e-2));
}

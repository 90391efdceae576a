// Acceptance harness: one PASS/FAIL line per criterion, tolerances pinned below.
// Usage: lway_acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "gradcheck.hpp"
#include "lway/degrade.hpp"
#include "lway/experiment.hpp"
#include "lway/imaging.hpp"
#include "lway/losses.hpp"
#include "lway/nn.hpp"
#include "lway/synthetic.hpp"
#include "lway/train.hpp"
#include "lway/wavelet.hpp"

namespace fs = std::filesystem;
using namespace lway;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and thresholds.
constexpr double kModConvMaxDiff = 1e-5;
constexpr int kModConvTriples = 100;
constexpr double kModConvSeconds = 10.0;
constexpr double kDemodNormTol = 1e-4;
constexpr double kStyleInvarianceRel = 1e-5;
constexpr double kDwtRoundTrip = 1e-6;
constexpr double kParsevalRel = 1e-5;
constexpr int kDwtImages = 100;
constexpr double kAffineTol = 1e-5;
constexpr double kFdStep = 1e-4;
constexpr double kFdRelTol = 1e-3;
constexpr double kFdPassRate = 0.95;
constexpr double kGradSeconds = 60.0;
constexpr double kReconL1 = 0.03;
constexpr long kReconIters = 2000;
constexpr double kStageSeconds = 600.0;
constexpr double kLossDrop = 0.30;
constexpr double kPsnrGain = 0.2;
constexpr int kImagesGaining = 7;
constexpr double kProbeAccuracy = 0.90;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  std::printf("[%s] C%-2d %-34s %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
  std::fflush(stdout);
  failures += !o.pass;
}

template <class... A>
std::string format(const char* f, A... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

// Direct convolution in double with zero padding k/2.
std::vector<double> direct_conv(const std::vector<double>& x, int cin, int h, int w, const std::vector<double>& wt,
                                int cout, int k, int stride, int& ho, int& wo) {
  const int pad = k / 2;
  ho = (h + 2 * pad - k) / stride + 1;
  wo = (w + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(cout) * ho * wo, 0.0);
  for (int j = 0; j < cout; ++j)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double s = 0;
        for (int i = 0; i < cin; ++i)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              s += wt[((static_cast<std::size_t>(j) * cin + i) * k + ky) * k + kx] *
                   x[(static_cast<std::size_t>(i) * h + iy) * w + ix];
            }
        out[(static_cast<std::size_t>(j) * ho + oy) * wo + ox] = s;
      }
  return out;
}

Outcome modconv_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < kModConvTriples; ++t) {
    const int cin = 1 + t % 5, cout = 1 + (t * 3) % 6, k = t % 3 == 0 ? 1 : 3, stride = 1 + t % 2, d = 4 + t % 5;
    const int h = 6 + t % 7, w = 5 + (t * 5) % 9;
    nn::ParamSet<float> ps;
    Rng init(derive_seed(202, static_cast<std::uint64_t>(t)));
    auto layer = nn::ModulatedConv2d<float>::make(ps, "m", cin, cout, k, stride, d, init);
    for (auto& v : layer.bias.mutable_value().data) v = static_cast<float>(u(rng));

    ag::Tensor<float> x({1, cin, h, w}), e({1, d});
    for (auto& v : x.data) v = static_cast<float>(0.5 + 0.5 * u(rng));
    for (auto& v : e.data) v = static_cast<float>(u(rng));
    ag::NoGradGuard guard;
    const auto fused = layer(ag::constant(x), ag::constant(e));

    // Styles, then w' and w'' precomputed explicitly in double.
    std::vector<double> s(static_cast<std::size_t>(cin));
    for (int i = 0; i < cin; ++i) {
      double acc = layer.style.bias.value().data[static_cast<std::size_t>(i)];
      for (int q = 0; q < d; ++q)
        acc += static_cast<double>(layer.style.weight.value().data[static_cast<std::size_t>(i * d + q)]) * e.data[static_cast<std::size_t>(q)];
      s[static_cast<std::size_t>(i)] = acc;
    }
    const auto& wv = layer.weight.value().data;
    std::vector<double> wdd(wv.size());
    const int kk = k * k;
    for (int j = 0; j < cout; ++j) {
      double sq = 0;
      for (int i = 0; i < cin; ++i)
        for (int q = 0; q < kk; ++q) {
          const std::size_t idx = (static_cast<std::size_t>(j) * cin + i) * kk + q;
          wdd[idx] = s[static_cast<std::size_t>(i)] * wv[idx];
          sq += wdd[idx] * wdd[idx];
        }
      const double sigma = std::sqrt(sq + nn::kDemodEps);
      for (int q = 0; q < cin * kk; ++q) wdd[static_cast<std::size_t>(j) * cin * kk + q] /= sigma;
    }
    std::vector<double> xd(x.data.begin(), x.data.end());
    int ho = 0, wo = 0;
    auto ref = direct_conv(xd, cin, h, w, wdd, cout, k, stride, ho, wo);
    for (int j = 0; j < cout; ++j)
      for (int p = 0; p < ho * wo; ++p) ref[static_cast<std::size_t>(j * ho * wo + p)] += layer.bias.value().data[static_cast<std::size_t>(j)];
    if (fused.value().size() != ref.size()) return {false, "shape mismatch against the oracle"};
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(fused.value().data[i] - ref[i]));
  }
  const double secs = seconds_since(t0);
  return {worst < kModConvMaxDiff && secs < kModConvSeconds,
          format("max |diff| %.3g (< %.0e) over %d triples, %.2f s (< %.0f s)", worst, kModConvMaxDiff,
                 kModConvTriples, secs, kModConvSeconds)};
}

Outcome demodulation() {
  std::mt19937_64 rng(303);
  std::normal_distribution<float> g(0.0f, 1.0f);
  double worst_norm = 0.0, worst_rel = 0.0;
  for (int net = 0; net < 4; ++net) {
    const nn::ReconstructorNet<float> rec({16, 8, 2 + net, net % 2 ? 4 : 2}, derive_seed(404, static_cast<std::uint64_t>(net)));
    for (const auto& layer : rec.layers()) {
      const int d = 16, cin = layer.weight.shape()[1];
      for (int trial = 0; trial < 10; ++trial) {
        ag::Tensor<float> e({1, d});
        for (auto& v : e.data) v = g(rng);
        ag::NoGradGuard guard;
        const auto s = layer.styles(ag::constant(e)).value();
        const auto wdd = ag::demodulated_weights(layer.weight.value(), s, layer.eps);
        const int cout = layer.weight.shape()[0];
        const std::size_t per = wdd.size() / static_cast<std::size_t>(cout);
        for (int j = 0; j < cout; ++j) {
          double sq = 0;
          for (std::size_t q = 0; q < per; ++q) sq += static_cast<double>(wdd.data[j * per + q]) * wdd.data[j * per + q];
          worst_norm = std::max(worst_norm, std::abs(sq - 1.0));
        }
        // Style scaling.
        ag::Tensor<float> x({1, cin, 12, 12});
        for (auto& v : x.data) v = g(rng);
        const auto ref = ag::modulated_conv2d(ag::constant(x), layer.weight, ag::constant(s), 1, layer.pad, layer.eps);
        double scale = 0;
        for (float v : ref.value().data) scale = std::max(scale, static_cast<double>(std::abs(v)));
        for (float c : {0.1f, 10.0f}) {
          auto sc = s;
          for (auto& v : sc.data) v *= c;
          const auto out = ag::modulated_conv2d(ag::constant(x), layer.weight, ag::constant(sc), 1, layer.pad, layer.eps);
          for (std::size_t i = 0; i < out.value().size(); ++i)
            worst_rel = std::max(worst_rel, std::abs(static_cast<double>(out.value().data[i]) - ref.value().data[i]) / scale);
        }
      }
    }
  }
  return {worst_norm <= kDemodNormTol && worst_rel < kStyleInvarianceRel,
          format("max |sum w''^2 - 1| %.3g (<= %.0e), style-scale change %.3g rel (< %.0e)", worst_norm,
                 kDemodNormTol, worst_rel, kStyleInvarianceRel)};
}

Image random_image(int c, int h, int w, std::uint64_t seed) {
  Image img(c, h, w);
  Rng rng(seed);
  for (float& v : img.data()) v = static_cast<float>(uniform(rng, 0.0, 1.0));
  return img;
}

Outcome dwt_contract() {
  double worst_inf = 0.0, worst_energy = 0.0;
  for (int t = 0; t < kDwtImages; ++t) {
    const Image x = random_image(1 + 2 * (t % 2), 2 * (4 + t % 13), 2 * (3 + (t * 7) % 17), derive_seed(505, static_cast<std::uint64_t>(t)));
    const auto sub = wavelet::dwt_haar(x);
    const Image back = wavelet::idwt_haar(sub);
    double e_in = 0, e_out = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      worst_inf = std::max(worst_inf, static_cast<double>(std::abs(back.data()[i] - x.data()[i])));
      e_in += static_cast<double>(x.data()[i]) * x.data()[i];
    }
    for (const Image* b : {&sub.ll, &sub.lh, &sub.hl, &sub.hh})
      for (float v : b->data()) e_out += static_cast<double>(v) * v;
    worst_energy = std::max(worst_energy, std::abs(e_out - e_in) / e_in);
  }
  return {worst_inf < kDwtRoundTrip && worst_energy < kParsevalRel,
          format("max |idwt(dwt(x)) - x| %.3g (< %.0e), energy %.3g rel (< %.0e), %d images", worst_inf, kDwtRoundTrip,
                 worst_energy, kParsevalRel, kDwtImages)};
}

Outcome weight_map_contract() {
  bool in_range = true, constant_ok = true;
  double worst_affine = 0.0;
  for (int t = 0; t < 50; ++t) {
    const float floor = 0.02f * static_cast<float>(t % 10);
    const Image x = t % 2 ? synthetic::make_scene(32, 40, static_cast<std::uint64_t>(t))
                          : random_image(3, 24, 32, derive_seed(606, static_cast<std::uint64_t>(t)));
    const auto w = wavelet::hf_weight_map(x, floor);
    for (float v : w.weights.data()) in_range &= v >= floor && v <= 1.0f;

    const auto flat = wavelet::hf_weight_map(Image(3, 16, 16, 0.1f + 0.01f * static_cast<float>(t)), floor);
    for (float v : flat.weights.data()) constant_ok &= v == floor;

    Image y = x;
    const float a = 0.3f + 0.02f * static_cast<float>(t), b = 0.05f;
    for (float& v : y.data()) v = a * v + b;
    const auto wy = wavelet::hf_weight_map(y, floor);
    for (std::size_t i = 0; i < w.weights.size(); ++i)
      worst_affine = std::max(worst_affine, static_cast<double>(std::abs(wy.weights.data()[i] - w.weights.data()[i])));
  }
  return {in_range && constant_ok && worst_affine <= kAffineTol,
          format("range %s, constant -> floor %s, affine change %.3g (<= %.0e)", in_range ? "ok" : "VIOLATED",
                 constant_ok ? "ok" : "VIOLATED", worst_affine, kAffineTol)};
}

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  const losses::PerceptualExtractor<double> f;
  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // weighted_pair_loss with respect to the prediction.
  ag::Tensor<double> p({2, 3, 16, 16}), t({2, 3, 16, 16}), w({2, 1, 16, 16});
  for (auto& v : p.data) v = u(rng);
  for (auto& v : t.data) v = u(rng);
  for (auto& v : w.data) v = 0.05 + 0.95 * u(rng);
  auto pred = ag::leaf(p, true);
  const auto target = ag::constant(t);
  ag::backward(losses::weighted_pair_loss(pred, target, w, f, {1.0, 1.0}).total);
  const auto loss_check = testutil::central_difference_check(
      pred, [&] {
        ag::NoGradGuard g;
        return losses::weighted_pair_loss(pred, target, w, f, {1.0, 1.0}).total.item();
      },
      kFdStep, kFdRelTol, 400, 1);

  // Two-layer reconstructor, all parameter tensors.
  nn::ReconstructorNet<double> rec({6, 6, 2, 2}, 808);
  ag::Tensor<double> hr({2, 3, 32, 32}), e({2, 6}), lr({2, 3, 16, 16}), wl({2, 1, 16, 16});
  for (auto& v : hr.data) v = 0.1 + 0.8 * u(rng);
  for (auto& v : e.data) v = 2.0 * u(rng) - 1.0;
  for (auto& v : lr.data) v = 0.1 + 0.8 * u(rng);
  for (auto& v : wl.data) v = 0.05 + 0.95 * u(rng);
  const auto hr_v = ag::constant(hr), e_v = ag::constant(e), lr_v = ag::constant(lr);
  auto objective = [&] { return losses::weighted_pair_loss(rec.forward(hr_v, e_v), lr_v, wl, f, {1.0, 1.0}).total; };
  ag::backward(objective());
  std::size_t checked = 0, passed = 0;
  std::uint64_t k = 0;
  for (auto& prm : rec.params().list()) {
    const auto r = testutil::central_difference_check(
        prm.var, [&] {
          ag::NoGradGuard g;
          return objective().item();
        },
        kFdStep, kFdRelTol, 40, ++k);
    checked += r.checked;
    passed += r.passed;
  }
  const double rec_rate = static_cast<double>(passed) / static_cast<double>(checked);
  const double secs = seconds_since(t0);
  return {loss_check.pass_rate() >= kFdPassRate && rec_rate >= kFdPassRate && secs < kGradSeconds,
          format("loss %.1f%% of %zu, reconstructor %.1f%% of %zu coords within %.0e (>= %.0f%%), %.1f s (< %.0f s)",
                 100.0 * loss_check.pass_rate(), loss_check.checked, 100.0 * rec_rate, checked, kFdRelTol,
                 100.0 * kFdPassRate, secs, kGradSeconds)};
}

double hf_band_l1(const Image& a, const Image& b) {
  const auto sa = wavelet::dwt_haar(a), sb = wavelet::dwt_haar(b);
  double s = 0;
  std::size_t n = 0;
  for (auto [x, y] : {std::pair{&sa.lh, &sb.lh}, std::pair{&sa.hl, &sb.hl}, std::pair{&sa.hh, &sb.hh}}) {
    for (std::size_t i = 0; i < x->size(); ++i) s += std::abs(static_cast<double>(x->data()[i]) - y->data()[i]);
    n += x->size();
  }
  return s / static_cast<double>(n);
}

std::vector<std::vector<float>> values_of(const nn::ParamSet<float>& ps) {
  std::vector<std::vector<float>> v;
  for (const auto& p : ps.list()) v.push_back(p.var.value().data);
  return v;
}

std::vector<Image> load_test_hr(const experiment::ExperimentConfig& cfg, const experiment::Split& split) {
  std::vector<Image> v;
  for (const auto& s : split.samples)
    v.push_back(imaging::load_image(experiment::Layout(cfg).data() / "test" / "hr" / (s.id + ".png")));
  return v;
}

struct Adaptation {
  train::FineTuneResult result;
  std::vector<double> final_loss;
  double secs = 0;
};

Adaptation adapt(const experiment::ExperimentConfig& cfg, const train::FineTuneConfig& ft, const nn::SrModel<float>& sr,
                 const experiment::LrReconBundle& lrr, const std::vector<Image>& lrs) {
  const losses::PerceptualExtractor<float> f;
  const auto t0 = Clock::now();
  auto c = ft;
  c.seed = derive_seed(cfg.seed, ft.seed);
  Adaptation a{train::lway_finetune(sr, lrr.encoder, lrr.reconstructor, lrs, c, f), {}, 0};
  a.secs = seconds_since(t0);
  for (std::size_t i = 0; i < lrs.size(); ++i)
    a.final_loss.push_back(train::self_supervised_loss(a.result.model_for(i), lrr.encoder, lrr.reconstructor, lrs[i], c, f).total);
  return a;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Files compared for reproducibility; wall-clock columns are dropped from histories.
std::string comparable_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string body = ss.str();
  if (p.extension() != ".csv") return body;
  std::istringstream lines(body);
  std::string line, out;
  bool drop_last = false;
  bool first = true;
  while (std::getline(lines, line)) {
    if (first) {
      drop_last = line.size() >= 3 && line.compare(line.size() - 3, 3, ",ms") == 0;
      first = false;
    }
    if (drop_last) line = line.substr(0, line.rfind(','));
    out += line + "\n";
  }
  return out;
}

Outcome reproducibility(const fs::path& work) {
  const fs::path a = work / "repro_a", b = work / "repro_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const std::vector<std::string> tiny = {
      "--set", "output_dir=" + a.string(), "--set", "data.sr_pairs=8", "--set", "data.train_pairs=9",
      "--set", "data.heldout_pairs=3", "--set", "data.test_images=3", "--set", "model.embed_dim=8",
      "--set", "model.sr_width=8", "--set", "model.sr_blocks=2", "--set", "model.encoder_width=8",
      "--set", "model.recon_width=8", "--set", "pretrain_sr.max_iters=15", "--set", "pretrain_lr_recon.max_iters=15",
      "--set", "finetune.max_iters=12", "--set", "finetune.mode=per-image", "--set", "finetune.param_fraction=0.5"};
  const std::vector<std::string> stages = {"gen-data", "pretrain-sr", "pretrain-lr", "finetune", "evaluate"};
  std::ostringstream sink;
  unsetenv("LWAY_OUT");
  for (const auto& s : stages) {
    std::vector<std::string> argv{"lway", s};
    argv.insert(argv.end(), tiny.begin(), tiny.end());
    if (cli::run_command(argv, sink, sink) != 0) return {false, "first run failed at " + s + ": " + sink.str()};
  }
  // Re-execute each stage from its echoed config into a second directory.
  setenv("LWAY_OUT", b.string().c_str(), 1);
  for (const auto& s : stages) {
    const auto echoed = (a / ("config." + s + ".json")).string();
    if (cli::run_command({"lway", s, "--config", echoed}, sink, sink) != 0) {
      unsetenv("LWAY_OUT");
      return {false, "re-run failed at " + s + ": " + sink.str()};
    }
  }
  unsetenv("LWAY_OUT");

  std::size_t compared = 0, differing = 0;
  std::string first_diff;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    const auto ext = rel.extension();
    if (ext != ".bin" && ext != ".csv" && ext != ".png") continue;
    if (rel.filename() == "manifest.json") continue;
    ++compared;
    if (!fs::exists(b / rel) || comparable_bytes(e.path()) != comparable_bytes(b / rel)) {
      ++differing;
      if (first_diff.empty()) first_diff = rel.string();
    }
  }
  // Checkpoint manifests carry no paths, so they must match too.
  for (const auto& e : fs::recursive_directory_iterator(a / "checkpoints"))
    if (e.is_regular_file() && e.path().filename() == "manifest.json") {
      ++compared;
      const auto rel = fs::relative(e.path(), a);
      if (comparable_bytes(e.path()) != comparable_bytes(b / rel)) {
        ++differing;
        if (first_diff.empty()) first_diff = rel.string();
      }
    }
  return {compared > 0 && differing == 0,
          format("%zu checkpoint/CSV/PNG files compared, %zu differ%s%s (ms column excluded)", compared, differing,
                 first_diff.empty() ? "" : ", first: ", first_diff.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_run");
  fs::create_directories(work);
  std::printf("acceptance work directory: %s\n", fs::absolute(work).string().c_str());

  report(1, "modulated-conv oracle", modconv_oracle());
  report(2, "demodulation normalisation", demodulation());
  report(3, "DWT reconstruction and Parseval", dwt_contract());
  report(4, "weight-map contract", weight_map_contract());
  report(5, "gradient correctness", gradient_checks());

  // Desk-scale pipeline shared by criteria 6 to 10.
  auto cfg = experiment::default_config();
  cfg.output_dir = (work / "pipeline").string();
  cfg.pretrain_lr.max_iters = kReconIters;
  experiment::validate(cfg);
  fs::remove_all(cfg.output_dir);
  experiment::generate_data(cfg);
  const auto t_sr = Clock::now();
  experiment::run_pretrain_sr(cfg);
  std::printf("       SR pretraining on bicubic pairs: %.1f s\n", seconds_since(t_sr));

  {
    const auto t0 = Clock::now();
    const auto s = experiment::run_pretrain_lr(cfg);
    const double secs = seconds_since(t0);
    report(6, "LR-reconstruction pretraining",
           {s.heldout_l1 < kReconL1 && s.heldout_l1 < s.bicubic_l1 && secs < kStageSeconds,
            format("held-out L1 %.4f (< %.2f) vs bicubic %.4f, %d families, %d pairs, %ld iters, %.0f s (< %.0f s)",
                   s.heldout_l1, kReconL1, s.bicubic_l1, static_cast<int>(cfg.train_families.size()),
                   cfg.data.train_pairs, kReconIters, secs, kStageSeconds)});
  }

  const experiment::Layout lay(cfg);
  const auto sr = experiment::load_sr(lay.sr_checkpoint());
  const auto lrr = experiment::load_lr_recon(lay.lr_checkpoint());
  const auto tests = experiment::load_split(cfg, "test");
  const auto lrs = tests.lrs();
  const auto hrs = load_test_hr(cfg, tests);

  const auto sr_before = values_of(sr.params());
  const auto enc_before = values_of(lrr.encoder.params());
  const auto rec_before = values_of(lrr.reconstructor.params());

  auto whole_cfg = cfg.finetune;
  whole_cfg.mode = train::FineTuneMode::WholeTestset;
  const auto whole = adapt(cfg, whole_cfg, sr, lrr, lrs);
  {
    std::vector<double> totals;
    for (const auto& r : whole.result.histories[0].records) totals.push_back(r.total);
    const std::size_t dec = std::max<std::size_t>(1, (totals.size() + 9) / 10);
    const double first = median({totals.begin(), totals.begin() + static_cast<std::ptrdiff_t>(dec)});
    const double last = median({totals.end() - static_cast<std::ptrdiff_t>(dec), totals.end()});
    const double drop = 1.0 - last / first;

    int gaining = 0;
    std::vector<double> gains;
    for (std::size_t i = 0; i < lrs.size(); ++i) {
      gains.push_back(imaging::psnr(whole.result.model_for(i).super_resolve(lrs[i]), hrs[i]) -
                      imaging::psnr(sr.super_resolve(lrs[i]), hrs[i]));
      gaining += gains.back() >= kPsnrGain;
    }
    // Everything the mask froze, plus E, R and the caller's S, must be untouched.
    bool frozen_ok = values_of(sr.params()) == sr_before && values_of(lrr.encoder.params()) == enc_before &&
                     values_of(lrr.reconstructor.params()) == rec_before;
    const auto& mask = whole.result.mask;
    const auto adapted_vals = values_of(whole.result.models[0].params());
    for (std::size_t t = 0; t < mask.flags.size(); ++t)
      if (!mask.flags[t]) frozen_ok &= adapted_vals[t] == sr_before[t];
    const bool pass = drop >= kLossDrop && gaining >= kImagesGaining && frozen_ok && whole.secs < kStageSeconds;
    std::string per_image;
    for (double g : gains) per_image += format(" %+.2f", g);
    report(7, "LWay fine-tuning",
           {pass, format("(a) loss drop %.1f%% (>= %.0f%%); (b) %d/%zu images >= +%.1f dB, mean %+.3f dB [%s ]; "
                         "(c) frozen tensors %s; %ld iters, %.0f s (< %.0f s)",
                         100.0 * drop, 100.0 * kLossDrop, gaining, lrs.size(), kPsnrGain, mean(gains), per_image.c_str(),
                         frozen_ok ? "bit-identical" : "CHANGED", whole_cfg.max_iters, whole.secs, kStageSeconds)});
  }

  {
    auto per_cfg = cfg.finetune;
    per_cfg.mode = train::FineTuneMode::PerImage;
    const auto per = adapt(cfg, per_cfg, sr, lrr, lrs);
    const double per_mean = mean(per.final_loss), whole_mean = mean(whole.final_loss);
    report(8, "mode ordering",
           {per_mean <= whole_mean, format("per-image mean final loss %.6f <= whole-testset %.6f (%.0f s per-image)",
                                           per_mean, whole_mean, per.secs)});
  }

  {
    auto flat_cfg = whole_cfg;
    flat_cfg.hf_weight = false;
    const auto flat = adapt(cfg, flat_cfg, sr, lrr, lrs);
    std::vector<double> with_w, without_w;
    for (std::size_t i = 0; i < lrs.size(); ++i) {
      with_w.push_back(hf_band_l1(whole.result.model_for(i).super_resolve(lrs[i]), hrs[i]));
      without_w.push_back(hf_band_l1(flat.result.model_for(i).super_resolve(lrs[i]), hrs[i]));
    }
    report(9, "HF-loss ablation",
           {mean(with_w) <= mean(without_w),
            format("HF-band L1 with W %.6f <= without W %.6f", mean(with_w), mean(without_w))});
  }

  {
    const auto s = experiment::run_export_embeddings(cfg);
    report(10, "embedding separability",
           {s.probe_accuracy >= kProbeAccuracy,
            format("linear probe %.3f (>= %.2f) on %zu embeddings of size %d, %d families", s.probe_accuracy,
                   kProbeAccuracy, s.rows, s.dims, static_cast<int>(cfg.train_families.size()))});
  }

  report(11, "reproducibility", reproducibility(work));

  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

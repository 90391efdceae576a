#include "lway/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <Eigen/Dense>

#include "lway/errors.hpp"
#include "lway/rng.hpp"

namespace lway::analysis {
namespace {

Eigen::MatrixXd to_matrix(const Rows& x) {
  if (x.empty() || x.front().empty()) throw ArgumentError("analysis: no data");
  const auto d = static_cast<Eigen::Index>(x.front().size());
  Eigen::MatrixXd m(static_cast<Eigen::Index>(x.size()), d);
  for (std::size_t r = 0; r < x.size(); ++r) {
    if (static_cast<Eigen::Index>(x[r].size()) != d) throw ArgumentError("analysis: ragged rows");
    for (Eigen::Index c = 0; c < d; ++c) m(static_cast<Eigen::Index>(r), c) = x[r][static_cast<std::size_t>(c)];
  }
  return m;
}

constexpr int kProbeSteps = 3000;
constexpr double kProbeStep = 0.5;
constexpr double kProbeDecay = 1e-4;

}  // namespace

std::vector<std::array<double, 2>> pca_2d(const Rows& x) {
  Eigen::MatrixXd m = to_matrix(x);
  const Eigen::RowVectorXd mean = m.colwise().mean();
  m.rowwise() -= mean;
  const Eigen::MatrixXd cov = (m.transpose() * m) / std::max<double>(1.0, static_cast<double>(m.rows()) - 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const auto d = cov.rows();
  Eigen::MatrixXd axes(d, 2);
  for (int k = 0; k < 2; ++k) {
    // Eigenvalues come in ascending order.
    Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
    if (d > k) v = eig.eigenvectors().col(d - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    axes.col(k) = v;
  }
  const Eigen::MatrixXd proj = m * axes;
  std::vector<std::array<double, 2>> out(x.size());
  for (std::size_t r = 0; r < out.size(); ++r)
    out[r] = {proj(static_cast<Eigen::Index>(r), 0), proj(static_cast<Eigen::Index>(r), 1)};
  return out;
}

ProbeResult linear_probe(const Rows& x, const std::vector<int>& labels, double holdout, std::uint64_t seed) {
  if (labels.size() != x.size()) throw ArgumentError("linear_probe: label count differs from row count");
  const std::set<int> classes(labels.begin(), labels.end());
  if (classes.size() < 2) throw ConfigError("linear probe needs at least two families");
  if (*classes.begin() < 0) throw ArgumentError("linear_probe: labels must be non-negative");
  if (!(holdout > 0.0 && holdout < 1.0)) throw ArgumentError("linear_probe: holdout must lie in (0, 1)");
  const int k = *classes.rbegin() + 1;

  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(holdout * static_cast<double>(x.size())));
  if (n_test == 0 || n_test >= x.size()) throw ArgumentError("linear_probe: split leaves an empty side");
  const std::size_t n_train = x.size() - n_test;

  const Eigen::MatrixXd all = to_matrix(x);
  const auto d = all.cols();
  Eigen::MatrixXd tr(static_cast<Eigen::Index>(n_train), d), te(static_cast<Eigen::Index>(n_test), d);
  std::vector<int> ytr, yte;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_train) {
      tr.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(order[i]));
      ytr.push_back(labels[order[i]]);
    } else {
      te.row(static_cast<Eigen::Index>(i - n_train)) = all.row(static_cast<Eigen::Index>(order[i]));
      yte.push_back(labels[order[i]]);
    }
  }

  const Eigen::RowVectorXd mu = tr.colwise().mean();
  Eigen::RowVectorXd sd = ((tr.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(n_train)).sqrt();
  sd = sd.unaryExpr([](double v) { return v > 1e-12 ? v : 1.0; });
  auto standardise = [&](Eigen::MatrixXd& m) {
    m.rowwise() -= mu;
    m.array().rowwise() /= sd.array();
  };
  standardise(tr);
  standardise(te);

  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_train), k);
  for (std::size_t i = 0; i < n_train; ++i) onehot(static_cast<Eigen::Index>(i), ytr[i]) = 1.0;

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, k);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(k);
  auto softmax = [&](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd z = (m * w).rowwise() + b;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      z.row(r).array() -= z.row(r).maxCoeff();
      z.row(r) = z.row(r).array().exp().matrix();
      z.row(r) /= z.row(r).sum();
    }
    return z;
  };
  for (int step = 0; step < kProbeSteps; ++step) {
    const Eigen::MatrixXd g = (softmax(tr) - onehot) / static_cast<double>(n_train);
    w -= kProbeStep * (tr.transpose() * g + kProbeDecay * w);
    b -= kProbeStep * g.colwise().sum();
  }

  auto accuracy = [&](const Eigen::MatrixXd& m, const std::vector<int>& y) {
    const Eigen::MatrixXd p = softmax(m);
    std::size_t hit = 0;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      Eigen::Index arg = 0;
      p.row(r).maxCoeff(&arg);
      hit += static_cast<int>(arg) == y[static_cast<std::size_t>(r)];
    }
    return static_cast<double>(hit) / static_cast<double>(y.size());
  };
  return {accuracy(tr, ytr), accuracy(te, yte), n_train, n_test};
}

}  // namespace lway::analysis

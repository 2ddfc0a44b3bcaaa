#include "duet/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace duet {

namespace {

Eigen::MatrixXd to_matrix(const FeatureSet& set) {
  if (set.empty()) throw std::invalid_argument("empty feature set");
  const std::size_t d = set.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(set.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set[i].size() != d) throw std::invalid_argument("feature vectors differ in length");
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = set[i][j];
  }
  return m;
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& mean) {
  const Eigen::MatrixXd c = x.rowwise() - mean;
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

Eigen::VectorXd clipped_eigenvalues(const Eigen::MatrixXd& sym, Eigen::MatrixXd* vectors) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (sym + sym.transpose()));
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition did not converge");
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -1e-8) throw std::runtime_error("matrix square root: eigenvalue " + std::to_string(ev(i)) + " is negative");
    ev(i) = std::max(ev(i), 0.0);
  }
  if (vectors) *vectors = es.eigenvectors();
  return ev;
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Distance to the k-th nearest other point of the same set.
std::vector<double> knn_radii(const FeatureSet& set, std::size_t k) {
  std::vector<double> radii(set.size());
  std::vector<double> d(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t j = 0; j < set.size(); ++j) d[j] = std::sqrt(sq_dist(set[i], set[j]));
    // index 0 after sorting is the point itself (distance 0)
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    radii[i] = d[k];
  }
  return radii;
}

double poly_kernel(const std::vector<double>& x, const std::vector<double>& y) {
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
  const double base = dot / static_cast<double>(x.size()) + 1.0;
  return base * base * base;
}

}  // namespace

F1Result micro_macro_f1(const std::vector<Labels>& predicted, const std::vector<Labels>& truth) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("F1: " + std::to_string(predicted.size()) + " predictions for " + std::to_string(truth.size()) +
                                " references");
  F1Result r;
  std::size_t tp_all = 0, fp_all = 0, fn_all = 0;
  for (std::size_t k = 0; k < kNumFindings; ++k) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool p = predicted[i][k] != 0, t = truth[i][k] != 0;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    r.per_finding[k] = tp + fn == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    r.macro += r.per_finding[k] / static_cast<double>(kNumFindings);
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
  }
  const std::size_t denom = 2 * tp_all + fp_all + fn_all;
  r.micro = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp_all) / static_cast<double>(denom);
  return r;
}

double frechet_distance(const FeatureSet& a, const FeatureSet& b) {
  const Eigen::MatrixXd xa = to_matrix(a), xb = to_matrix(b);
  if (xa.cols() != xb.cols()) throw std::invalid_argument("feature sets differ in dimension");
  const auto d = static_cast<std::size_t>(xa.cols());
  if (a.size() < d + 1 || b.size() < d + 1)
    throw std::invalid_argument("Frechet distance needs at least " + std::to_string(d + 1) + " samples per set, got " +
                                std::to_string(a.size()) + " and " + std::to_string(b.size()));
  const Eigen::RowVectorXd ma = xa.colwise().mean(), mb = xb.colwise().mean();
  const Eigen::MatrixXd sa = covariance(xa, ma), sb = covariance(xb, mb);
  Eigen::MatrixXd va;
  const Eigen::VectorXd ea = clipped_eigenvalues(sa, &va);
  const Eigen::MatrixXd sqrt_a = va * ea.cwiseSqrt().asDiagonal() * va.transpose();
  // tr((Sa Sb)^{1/2}) = tr((Sa^{1/2} Sb Sa^{1/2})^{1/2}), the latter symmetric PSD
  const Eigen::VectorXd em = clipped_eigenvalues(sqrt_a * sb * sqrt_a, nullptr);
  const double value = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * em.cwiseSqrt().sum();
  return std::max(value, 0.0);
}

double kernel_distance(const FeatureSet& a, const FeatureSet& b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("kernel distance needs at least 2 samples per set");
  const double m = static_cast<double>(a.size()), n = static_cast<double>(b.size());
  double kaa = 0.0, kbb = 0.0, kab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if (i != j) kaa += poly_kernel(a[i], a[j]);
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      if (i != j) kbb += poly_kernel(b[i], b[j]);
  for (const auto& x : a)
    for (const auto& y : b) kab += poly_kernel(x, y);
  return kaa / (m * (m - 1.0)) + kbb / (n * (n - 1.0)) - 2.0 * kab / (m * n);
}

Prdc prdc(const FeatureSet& real, const FeatureSet& fake, std::size_t k) {
  if (k == 0) throw std::invalid_argument("PRDC needs k >= 1");
  if (real.size() < k + 1 || fake.size() < k + 1)
    throw std::invalid_argument("PRDC with k=" + std::to_string(k) + " needs at least " + std::to_string(k + 1) +
                                " samples per set");
  const auto real_r = knn_radii(real, k), fake_r = knn_radii(fake, k);
  std::vector<std::vector<double>> dist(real.size(), std::vector<double>(fake.size()));
  for (std::size_t i = 0; i < real.size(); ++i)
    for (std::size_t j = 0; j < fake.size(); ++j) dist[i][j] = std::sqrt(sq_dist(real[i], fake[j]));

  Prdc out;
  double density = 0.0;
  std::size_t precise = 0;
  for (std::size_t j = 0; j < fake.size(); ++j) {
    std::size_t covering = 0;
    for (std::size_t i = 0; i < real.size(); ++i) covering += dist[i][j] < real_r[i];
    precise += covering > 0;
    density += static_cast<double>(covering);
  }
  std::size_t recalled = 0, covered = 0;
  for (std::size_t i = 0; i < real.size(); ++i) {
    bool in_fake_ball = false;
    double nearest = dist[i][0];
    for (std::size_t j = 0; j < fake.size(); ++j) {
      in_fake_ball = in_fake_ball || dist[i][j] < fake_r[j];
      nearest = std::min(nearest, dist[i][j]);
    }
    recalled += in_fake_ball;
    covered += nearest < real_r[i];
  }
  const double nf = static_cast<double>(fake.size()), nr = static_cast<double>(real.size());
  out.precision = static_cast<double>(precise) / nf;
  out.recall = static_cast<double>(recalled) / nr;
  out.density = density / (static_cast<double>(k) * nf);
  out.coverage = static_cast<double>(covered) / nr;
  return out;
}

double label_agreement(const std::vector<Labels>& predicted, const std::vector<Labels>& conditions) {
  if (predicted.size() != conditions.size() || predicted.empty())
    throw std::invalid_argument("alignment needs equally many (>0) predictions and conditions");
  std::size_t agree = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    for (std::size_t k = 0; k < kNumFindings; ++k) agree += predicted[i][k] == conditions[i][k];
  return static_cast<double>(agree) / static_cast<double>(predicted.size() * kNumFindings);
}

}  // namespace duet

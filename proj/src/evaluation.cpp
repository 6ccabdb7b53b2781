#include "adrm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "adrm/error.hpp"
#include "adrm/kernels.hpp"
#include "adrm/rng.hpp"

namespace adrm {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Shortest text that reads back to the same double.
std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

AccuracyMatrix::AccuracyMatrix(std::size_t n_tasks) {
  for (std::size_t t = 0; t < n_tasks; ++t) rows_.emplace_back(t + 1, kMissing);
}

AccuracyMatrix AccuracyMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  AccuracyMatrix m(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    require(rows[t].size() == t + 1, "row " + std::to_string(t) + " of an accuracy matrix needs " +
                                         std::to_string(t + 1) + " entries");
    for (std::size_t i = 0; i <= t; ++i) m.set(t, i, rows[t][i]);
  }
  return m;
}

void AccuracyMatrix::set(std::size_t t, std::size_t i, double accuracy) {
  require(t < rows_.size() && i <= t, "accuracy matrix index out of range (only i <= t is recorded)");
  require(accuracy >= 0.0 && accuracy <= 1.0, "accuracy must be in [0, 1]");
  rows_[t][i] = accuracy;
}

bool AccuracyMatrix::has(std::size_t t, std::size_t i) const {
  return t < rows_.size() && i <= t && !std::isnan(rows_[t][i]);
}

double AccuracyMatrix::at(std::size_t t, std::size_t i) const {
  require(has(t, i), "accuracy R[" + std::to_string(t) + "][" + std::to_string(i) + "] is not recorded");
  return rows_[t][i];
}

bool AccuracyMatrix::row_complete(std::size_t t) const {
  return t < rows_.size() && std::ranges::none_of(rows_[t], [](double v) { return std::isnan(v); });
}

std::size_t AccuracyMatrix::completed_rows() const {
  std::size_t t = 0;
  while (row_complete(t)) ++t;
  return t;
}

std::string AccuracyMatrix::to_csv() const {
  std::string out = "after_task";
  for (std::size_t i = 0; i < rows_.size(); ++i) out += ",task_" + std::to_string(i);
  out += "\n";
  for (std::size_t t = 0; t < rows_.size(); ++t) {
    out += std::to_string(t);
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      out += ",";
      if (has(t, i)) out += fixed(rows_[t][i]);
    }
    out += "\n";
  }
  return out;
}

AccuracyMatrix AccuracyMatrix::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("after_task", 0) != 0)
    fail(ErrorKind::schema_error, "accuracy matrix CSV must start with after_task");
  const auto n = static_cast<std::size_t>(std::ranges::count(line, ','));
  AccuracyMatrix m(n);
  for (std::size_t t = 0; t < n; ++t) {
    if (!std::getline(in, line)) fail(ErrorKind::schema_error, "accuracy matrix CSV has too few rows");
    std::stringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    if (cell != std::to_string(t)) fail(ErrorKind::schema_error, "accuracy matrix rows out of order");
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::getline(row, cell, ',')) cell.clear();
      if (cell.empty()) continue;
      if (i > t) fail(ErrorKind::schema_error, "accuracy recorded above the diagonal");
      m.set(t, i, std::stod(cell));
    }
  }
  return m;
}

bool AccuracyMatrix::operator==(const AccuracyMatrix& other) const {
  if (rows_.size() != other.rows_.size()) return false;
  for (std::size_t t = 0; t < rows_.size(); ++t)
    for (std::size_t i = 0; i <= t; ++i)
      if (has(t, i) != other.has(t, i) || (has(t, i) && rows_[t][i] != other.rows_[t][i])) return false;
  return true;
}

double aca(const AccuracyMatrix& matrix) {
  const std::size_t t = matrix.n_tasks();
  require(t > 0 && matrix.row_complete(t - 1), "ACA needs a fully populated final row");
  double sum = 0.0;
  for (std::size_t i = 0; i < t; ++i) sum += matrix.at(t - 1, i);
  return sum / static_cast<double>(t);
}

double accuracy(const ModelState& model, const Tensor& images, std::span<const int> labels) {
  require(!labels.empty(), "accuracy of an empty set is undefined");
  const auto pred = predict(model, images);
  require(pred.size() == labels.size(), "images and labels disagree in count");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::vector<CorruptionRow> corruption_sweep(const ModelState& model, const Tensor& images,
                                            std::span<const int> labels, const std::vector<std::string>& kinds,
                                            const std::vector<int>& severities, std::uint64_t seed,
                                            const std::string& model_id) {
  for (const auto& k : kinds)
    if (!is_corruption_kind(k)) fail(ErrorKind::unsupported_corruption, "unknown corruption kind '" + k + "'");
  std::vector<CorruptionRow> rows;
  const double clean = accuracy(model, images, labels);
  for (const auto& kind : kinds)
    for (int s : severities) {
      const double acc =
          s == 0 ? clean
                 : accuracy(model, corrupt(images, {kind, s}, derive_seed(seed, kind + "/" + std::to_string(s))),
                            labels);
      rows.push_back({model_id, kind, s, acc, labels.size()});
    }
  return rows;
}

std::vector<AttackRow> adversarial_sweep(const ModelState& model, const Tensor& images, std::span<const int> labels,
                                         const std::vector<AttackKind>& kinds, const std::vector<double>& epsilons,
                                         std::uint64_t seed, const std::string& model_id, int pgd_steps) {
  std::vector<AttackRow> rows;
  for (auto kind : kinds)
    for (double eps : epsilons) {
      AttackSpec spec = kind == AttackKind::fgsm ? AttackSpec::fgsm(eps) : AttackSpec::pgd(kind, eps, seed, pgd_steps);
      rows.push_back({model_id, to_string(kind), eps, evaluate_under_attack(model, images, labels, spec),
                      labels.size(), seed});
    }
  return rows;
}

std::string corruption_csv(const std::vector<CorruptionRow>& rows) {
  std::string out = "model_id,kind,severity,accuracy,n\n";
  for (const auto& r : rows)
    out += r.model_id + "," + r.kind + "," + std::to_string(r.severity) + "," + fixed(r.accuracy) + "," +
           std::to_string(r.n) + "\n";
  return out;
}

std::string attack_csv(const std::vector<AttackRow>& rows) {
  std::string out = "model_id,attack,epsilon,accuracy,n,seed\n";
  for (const auto& r : rows)
    out += r.model_id + "," + r.attack + "," + exact(r.epsilon) + "," + fixed(r.accuracy) + "," +
           std::to_string(r.n) + "," + std::to_string(r.seed) + "\n";
  return out;
}

FeatureMatrix extract_features(const ModelState& model, const Tensor& images, std::span<const int> labels,
                               const std::string& model_id, std::size_t chunk) {
  require(images.rank() == 4, "images must be [N, C, H, W]");
  require(labels.empty() || labels.size() == images.dim(0), "labels and images disagree in count");
  require(chunk >= 1, "chunk must be positive");
  const std::size_t n = images.dim(0);
  FeatureMatrix fm;
  fm.model_id = model_id;
  fm.labels.assign(labels.begin(), labels.end());
  fm.features = Tensor({n, model.feature_dim()});
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const auto out = forward(model, images.gather_rows(idx));
    std::ranges::copy(out.features.values(), fm.features.data() + start * fm.features.dim(1));
  }
  return fm;
}

namespace {

Tensor centered(const Tensor& x) {
  require(x.rank() == 2, "CKA inputs must be [N, F] matrices");
  require(x.dim(0) >= 2, "CKA needs at least two examples");
  require(x.all_finite(), "CKA inputs must be finite");
  Tensor c = x;
  const std::size_t n = x.dim(0), f = x.dim(1);
  for (std::size_t j = 0; j < f; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i * f + j];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) c[i * f + j] -= mean;
  }
  return c;
}

double frobenius_sq(std::span<const double> v) {
  double s = 0.0;
  for (double a : v) s += a * a;
  return s;
}

// A^T B for A [N, P], B [N, Q].
std::vector<double> cross(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), p = a.dim(1), q = b.dim(1);
  std::vector<double> out(p * q);
  kernels::matmul_tn(a.values(), b.values(), out, p, q, n);
  return out;
}

// Centered Gaussian Gram matrix H K H.
std::vector<double> centered_rbf_gram(const Tensor& x, double sigma_scale) {
  const std::size_t n = x.dim(0), f = x.dim(1);
  std::vector<double> d2(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < f; ++k) s += (x[i * f + k] - x[j * f + k]) * (x[i * f + k] - x[j * f + k]);
      d2[i * n + j] = d2[j * n + i] = s;
    }
  std::vector<double> off;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) off.push_back(std::sqrt(d2[i * n + j]));
  std::nth_element(off.begin(), off.begin() + static_cast<std::ptrdiff_t>(off.size() / 2), off.end());
  const double median = off[off.size() / 2];
  if (median <= 0.0) fail(ErrorKind::undefined_similarity, "representation has no spread (median distance is 0)");
  const double sigma = sigma_scale * median;
  std::vector<double> k(n * n);
  for (std::size_t i = 0; i < n * n; ++i) k[i] = std::exp(-d2[i] / (2 * sigma * sigma));
  std::vector<double> row_mean(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row_mean[i] += k[i * n + j];
    total += row_mean[i];
    row_mean[i] /= static_cast<double>(n);
  }
  total /= static_cast<double>(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) k[i * n + j] += total - row_mean[i] - row_mean[j];
  return k;
}

}  // namespace

double linear_cka(const Tensor& x, const Tensor& y) {
  require(x.rank() == 2 && y.rank() == 2 && x.dim(0) == y.dim(0), "CKA needs paired [N, F] matrices");
  const Tensor xc = centered(x), yc = centered(y);
  const double xx = std::sqrt(frobenius_sq(cross(xc, xc)));
  const double yy = std::sqrt(frobenius_sq(cross(yc, yc)));
  if (xx == 0.0 || yy == 0.0) fail(ErrorKind::undefined_similarity, "CKA is undefined for zero-variance features");
  return frobenius_sq(cross(yc, xc)) / (xx * yy);
}

double rbf_cka(const Tensor& x, const Tensor& y, double sigma_scale) {
  require(x.rank() == 2 && y.rank() == 2 && x.dim(0) == y.dim(0), "CKA needs paired [N, F] matrices");
  require(x.dim(0) >= 2 && sigma_scale > 0.0, "kernel CKA needs N >= 2 and a positive bandwidth");
  const auto kx = centered_rbf_gram(x, sigma_scale), ky = centered_rbf_gram(y, sigma_scale);
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < kx.size(); ++i) {
    xy += kx[i] * ky[i];
    xx += kx[i] * kx[i];
    yy += ky[i] * ky[i];
  }
  if (xx == 0.0 || yy == 0.0) fail(ErrorKind::undefined_similarity, "kernel CKA is undefined for constant kernels");
  return xy / std::sqrt(xx * yy);
}

std::string SimilarityMatrix::to_csv() const {
  std::string out = "model_id";
  for (const auto& id : model_ids) out += "," + id;
  out += "\n";
  for (std::size_t i = 0; i < model_ids.size(); ++i) {
    out += model_ids[i];
    for (double v : scores[i]) out += "," + fixed(v, 9);
    out += "\n";
  }
  return out;
}

SimilarityMatrix similarity_matrix(const std::vector<FeatureMatrix>& features, CkaKind kind) {
  SimilarityMatrix m;
  const std::size_t n = features.size();
  m.scores.assign(n, std::vector<double>(n, 0.0));
  for (const auto& f : features) m.model_ids.push_back(f.model_id);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const double s = kind == CkaKind::linear ? linear_cka(features[i].features, features[j].features)
                                               : rbf_cka(features[i].features, features[j].features);
      m.scores[i][j] = m.scores[j][i] = s;
    }
  return m;
}

}  // namespace adrm

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "draco/core/error.hpp"

namespace draco::eval {

/// Logistic accept/reject head on frozen features; positive class is "accept".
struct ProbeHead {
  std::vector<double> weight;
  double bias = 0;
  std::size_t iterations = 0;
  double grad_norm = 0;

  double logit(const std::vector<double>& f) const {
    if (f.size() != weight.size()) throw ShapeError("probe: feature length differs from the head");
    double z = bias;
    for (std::size_t i = 0; i < f.size(); ++i) z += weight[i] * f[i];
    return z;
  }
  bool accept(const std::vector<double>& f) const { return logit(f) > 0; }
};

struct ProbeOptions {
  double reg_strength = 1e-2;
  std::size_t max_iters = 100;
  double tol = 1e-6;
};

/// L2-regularized logistic regression by Newton's method on standardized
/// features; the penalty covers the weights only. Loss is the mean negative
/// log-likelihood plus reg/2 |w|^2.
inline ProbeHead probe_train(const std::vector<std::vector<double>>& features, const std::vector<bool>& labels,
                             const ProbeOptions& opt = {}) {
  if (features.size() != labels.size()) throw ShapeError("probe_train: feature and label counts differ");
  std::size_t pos = 0;
  for (bool l : labels) pos += l;
  if (pos < 2 || labels.size() - pos < 2) throw InvalidArgument("probe_train: need at least two examples of each class");
  if (!(opt.reg_strength >= 0)) throw InvalidArgument("probe_train: reg_strength must be >= 0");
  const auto n = static_cast<Eigen::Index>(features.size());
  const auto d = static_cast<Eigen::Index>(features[0].size());
  Eigen::MatrixXd X(n, d + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(features[i].size()) != d) throw ShapeError("probe_train: ragged features");
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = features[i][j];
  }
  Eigen::VectorXd mu = X.leftCols(d).colwise().mean().transpose();
  Eigen::VectorXd sd(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double v = (X.col(j).array() - mu(j)).square().mean();
    sd(j) = v > 0 ? std::sqrt(v) : 1.0;
    X.col(j) = (X.col(j).array() - mu(j)) / sd(j);
  }
  X.col(d).setOnes();
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = labels[i] ? 1.0 : 0.0;
  Eigen::VectorXd reg = Eigen::VectorXd::Constant(d + 1, opt.reg_strength);
  reg(d) = 0;

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  ProbeHead head;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (head.iterations = 0; head.iterations < opt.max_iters; ++head.iterations) {
    Eigen::VectorXd prob(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double z = X.row(i).dot(theta);
      prob(i) = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    const Eigen::VectorXd grad = inv_n * X.transpose() * (prob - y) + reg.cwiseProduct(theta);
    head.grad_norm = grad.norm();
    if (head.grad_norm < opt.tol) break;
    const Eigen::VectorXd wts = (prob.array() * (1.0 - prob.array())).matrix();
    Eigen::MatrixXd H = inv_n * X.transpose() * wts.asDiagonal() * X;
    H.diagonal() += reg;
    H.diagonal().array() += 1e-10;
    theta -= H.ldlt().solve(grad);
  }
  head.weight.resize(static_cast<std::size_t>(d));
  head.bias = theta(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    head.weight[j] = theta(j) / sd(j);
    head.bias -= theta(j) * mu(j) / sd(j);
  }
  return head;
}

struct BinaryMetrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
};

/// Precision, recall and F1 are 0 when their denominators vanish.
inline BinaryMetrics binary_metrics(const std::vector<bool>& predicted, const std::vector<bool>& labels) {
  if (predicted.size() != labels.size()) throw ShapeError("binary_metrics: prediction and label counts differ");
  if (labels.empty()) throw InvalidArgument("binary_metrics: empty evaluation set");
  BinaryMetrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predicted[i]) (labels[i] ? m.tp : m.fp)++;
    else (labels[i] ? m.fn : m.tn)++;
  }
  auto ratio = [](double a, double b) { return b > 0 ? a / b : 0.0; };
  m.accuracy = ratio(m.tp + m.tn, labels.size());
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.recall = ratio(m.tp, m.tp + m.fn);
  m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
  return m;
}

inline BinaryMetrics probe_eval(const ProbeHead& head, const std::vector<std::vector<double>>& features,
                                const std::vector<bool>& labels) {
  std::vector<bool> pred;
  pred.reserve(features.size());
  for (const auto& f : features) pred.push_back(head.accept(f));
  return binary_metrics(pred, labels);
}

struct RegSelection {
  double reg_strength = 0;
  std::vector<double> grid, cv_accuracy;
};

/// Stratified k-fold cross-validation over a grid of L2 strengths. Fold of an
/// example is its rank within its class modulo k. Ties go to the stronger
/// penalty.
inline RegSelection select_reg_strength(const std::vector<std::vector<double>>& features, const std::vector<bool>& labels,
                                        const std::vector<double>& grid, std::size_t folds = 5,
                                        const ProbeOptions& base = {}) {
  if (grid.empty()) throw InvalidArgument("select_reg_strength: empty grid");
  if (folds < 2) throw InvalidArgument("select_reg_strength: need at least 2 folds");
  if (features.size() != labels.size()) throw ShapeError("select_reg_strength: feature and label counts differ");
  std::vector<std::size_t> fold(labels.size());
  std::size_t rank[2] = {0, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) fold[i] = rank[labels[i]]++ % folds;
  RegSelection sel;
  sel.grid = grid;
  double best = -1;
  for (double reg : grid) {
    std::size_t correct = 0;
    for (std::size_t k = 0; k < folds; ++k) {
      std::vector<std::vector<double>> ftr, fte;
      std::vector<bool> ytr, yte;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        (fold[i] == k ? fte : ftr).push_back(features[i]);
        (fold[i] == k ? yte : ytr).push_back(labels[i]);
      }
      ProbeOptions o = base;
      o.reg_strength = reg;
      const auto head = probe_train(ftr, ytr, o);
      for (std::size_t i = 0; i < fte.size(); ++i) correct += head.accept(fte[i]) == yte[i];
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(labels.size());
    sel.cv_accuracy.push_back(acc);
    if (acc > best || (acc == best && reg > sel.reg_strength)) {
      best = acc;
      sel.reg_strength = reg;
    }
  }
  return sel;
}

inline std::vector<double> default_reg_grid() { return {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0}; }

}  // namespace draco::eval

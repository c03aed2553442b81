#pragma once
// Naive reference implementations used as oracles by the unit tests. These are
// deliberately written as direct transcriptions of the definitions (plain
// double loops, textbook exp/log, no max-subtraction tricks, no shared code
// with the library) so that agreement with the fast paths is meaningful.

#include <cmath>
#include <functional>
#include <vector>

#include "hierssl/core.hpp"
#include "hierssl/sampler.hpp"

namespace oracle {

using hierssl::Mat;
using hierssl::Vec;

// Multi-positive contrastive loss for one anchor, straight from the formula
//   L(i) = -(1/|P|) sum_{k in P} log( exp(s_ik/tau) / sum_{j!=i} exp(s_ij/tau) ).
inline double supcon(const Mat& f, int anchor, const std::vector<int>& pos, double tau) {
  double denom = 0.0;
  for (int j = 0; j < f.rows; ++j) {
    if (j == anchor) continue;
    double s = 0.0;
    for (int d = 0; d < f.cols; ++d) s += f.at(anchor, d) * f.at(j, d);
    denom += std::exp(s / tau);
  }
  double acc = 0.0;
  for (int k : pos) {
    double s = 0.0;
    for (int d = 0; d < f.cols; ++d) s += f.at(anchor, d) * f.at(k, d);
    acc += std::log(std::exp(s / tau) / denom);
  }
  return -acc / double(pos.size());
}

// Sum of per-anchor losses over anchors with non-empty positive sets.
inline double level_loss(const Mat& f, const std::vector<std::vector<int>>& pos, double tau) {
  double total = 0.0;
  for (int i = 0; i < f.rows; ++i)
    if (!pos[size_t(i)].empty()) total += supcon(f, i, pos[size_t(i)], tau);
  return total;
}

inline std::vector<double> softmax(const Vec& v, double tau) {
  std::vector<double> e;
  e.reserve(v.size());
  double sum = 0.0;
  for (double x : v) {
    double t = std::exp(x / tau);
    e.push_back(t);
    sum += t;
  }
  for (double& x : e) x /= sum;
  return e;
}

// KL(softmax(target/tau) || softmax(z/tau)), textbook form.
inline double kl(const Vec& target, const Vec& z, double tau) {
  std::vector<double> p = softmax(target, tau);
  std::vector<double> q = softmax(z, tau);
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) acc += p[i] * std::log(p[i] / q[i]);
  return acc;
}

// Positive sets by brute-force pair enumeration over the batch index.
inline std::vector<std::vector<int>> positive_sets(const hierssl::HierBatch& b,
                                                   hierssl::Level level) {
  const int n = b.view_count();
  std::vector<std::vector<int>> sets(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const hierssl::ViewIndex& a = b.index[size_t(i)];
      const hierssl::ViewIndex& c = b.index[size_t(j)];
      bool same = false;
      switch (level) {
        case hierssl::Level::Patch: same = a.patch == c.patch; break;
        case hierssl::Level::Slide: same = a.slide == c.slide; break;
        case hierssl::Level::Patient: same = a.patient == c.patient; break;
      }
      if (same) sets[size_t(i)].push_back(j);
    }
  return sets;
}

// Central difference of a scalar function of one scratch coordinate.
inline double central_diff(const std::function<double()>& f, double* coord, double h = 1e-4) {
  const double saved = *coord;
  *coord = saved + h;
  const double up = f();
  *coord = saved - h;
  const double down = f();
  *coord = saved;
  return (up - down) / (2.0 * h);
}

}  // namespace oracle

#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ppanel/data.hpp"
#include "ppanel/regress.hpp"

namespace testing {

/// Balanced panel of `units` x `waves` rows with x, z and y = 1 + 0.5 x + a_i + e.
inline ppanel::PanelTable small_panel(int units, int waves, std::uint64_t seed, double effect_corr = 0.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n01;
  std::vector<std::string> ids;
  std::vector<int> wv;
  std::vector<double> x, z, y, d;
  for (int i = 0; i < units; ++i) {
    const double a = n01(gen);
    for (int t = 0; t < waves; ++t) {
      ids.push_back("u" + std::to_string(100 + i));
      wv.push_back(t + 1);
      const double zz = n01(gen);
      const double xx = zz + 0.5 * n01(gen) + effect_corr * a;
      x.push_back(xx);
      z.push_back(zz);
      y.push_back(1.0 + 0.5 * xx + a + 0.3 * n01(gen));
      d.push_back(0.05 + 0.01 * ((i * 7 + t * 3) % 11));
    }
  }
  ppanel::PanelTable t(ids, wv);
  t.add_column("x", x);
  t.add_column("z", z);
  t.add_column("y", y);
  t.add_column("delta", d);
  return t;
}

inline ppanel::ModelSpec spec_yx() {
  ppanel::ModelSpec s;
  s.dependent = "y";
  s.regressors = {"x"};
  return s;
}

/// Normal-equations least squares.
inline Eigen::VectorXd normal_eq(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  return (X.transpose() * X).inverse() * X.transpose() * y;
}

inline Eigen::MatrixXd with_const(const std::vector<std::vector<double>>& cols) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(cols.front().size()), static_cast<Eigen::Index>(cols.size()) + 1);
  X.col(0).setOnes();
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < cols[j].size(); ++i) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j) + 1) = cols[j][i];
  return X;
}

inline Eigen::VectorXd vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace testing

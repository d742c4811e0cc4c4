#pragma once

#include <vector>

#include <Eigen/Dense>

namespace sail {

/// Row-major dense matrix; batches are stored one sample per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Supervised samples: one feature row, one class label and one domain index
/// per sample.
struct LabeledSet {
  Matrix features;
  std::vector<int> labels;
  std::vector<int> domains;

  std::size_t size() const { return labels.size(); }
};

}  // namespace sail

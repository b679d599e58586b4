#include "loopscope/pca.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "loopscope/error.hpp"

namespace loopscope {

PcaResult pca_project(std::span<const float> points, std::size_t dim, std::size_t components) {
  if (dim == 0 || points.size() % dim != 0) {
    throw UsageError("pca_project: point buffer is not a multiple of dim");
  }
  const std::size_t n = points.size() / dim;
  if (n < 2) throw UsageError("pca_project: need at least 2 points");
  if (components == 0 || components > dim) {
    throw UsageError("pca_project: components must lie in [1, dim]");
  }

  Eigen::MatrixXd data(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) data(i, j) = points[i * dim + j];
  }
  const Eigen::RowVectorXd mean = data.colwise().mean();
  data.rowwise() -= mean;
  const Eigen::MatrixXd cov = (data.transpose() * data) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error("pca_project: eigendecomposition failed");
  // Eigen returns ascending eigenvalues.
  const Eigen::VectorXd values = solver.eigenvalues().reverse();
  const Eigen::MatrixXd vectors = solver.eigenvectors().rowwise().reverse();

  const double total = cov.trace();
  const double floor = 1e-12 * std::max(values(0), 0.0);

  PcaResult out;
  out.components = components;
  out.dim = dim;
  out.mean.assign(mean.data(), mean.data() + dim);
  out.directions.resize(components * dim);
  for (std::size_t c = 0; c < components; ++c) {
    Eigen::VectorXd v = vectors.col(static_cast<Eigen::Index>(c));
    Eigen::Index pivot = 0;
    v.cwiseAbs().maxCoeff(&pivot);
    if (v(pivot) < 0) v = -v;
    for (std::size_t j = 0; j < dim; ++j) out.directions[c * dim + j] = v(static_cast<Eigen::Index>(j));

    double lambda = values(static_cast<Eigen::Index>(c));
    if (lambda <= floor) lambda = 0.0;
    out.explained_variance.push_back(lambda);
    out.explained_ratio.push_back(total > 0.0 ? lambda / total : 0.0);
  }

  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      dirs(out.directions.data(), static_cast<Eigen::Index>(components),
           static_cast<Eigen::Index>(dim));
  const Eigen::MatrixXd projected = data * dirs.transpose();
  out.projected.resize(n * components);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < components; ++c) {
      out.projected[i * components + c] = projected(static_cast<Eigen::Index>(i),
                                                    static_cast<Eigen::Index>(c));
    }
  }
  return out;
}

}  // namespace loopscope

#include "upa/linalg.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace upa {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::MatrixXd to_eigen(const Tensor& t) {
  return Eigen::Map<const RowMat>(t.data().data(), t.rows(), t.cols());
}

}  // namespace

Tensor least_squares_fit(const Tensor& x, const Tensor& y) {
  const std::size_t n = x.rows(), d = x.cols();
  if (y.rows() != n) throw std::invalid_argument("least_squares_fit: X and Y row counts differ");
  if (n < d) throw std::invalid_argument("least_squares_fit: need n >= d, got n=" + std::to_string(n) +
                                         " d=" + std::to_string(d));
  const Eigen::MatrixXd mx = to_eigen(x);
  const Eigen::MatrixXd my = to_eigen(y);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(mx, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  std::size_t deficient = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (!(sv[i] > 1e-10)) ++deficient;
  if (deficient > 0)
    throw std::invalid_argument("least_squares_fit: X is rank deficient (" + std::to_string(deficient) + " of " +
                                std::to_string(d) + " columns)");
  // Solve via the thin SVD; inverse singular values are safe after the check above.
  const Eigen::MatrixXd a =
      svd.matrixV() * sv.cwiseInverse().asDiagonal() * (svd.matrixU().transpose() * my);
  Tensor out({d, y.cols()});
  Eigen::Map<RowMat>(out.data().data(), d, y.cols()) = a;
  return out;
}

std::vector<double> singular_values(const Tensor& m) {
  const Eigen::MatrixXd mm = to_eigen(m);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(mm);
  const auto& sv = svd.singularValues();
  return std::vector<double>(sv.data(), sv.data() + sv.size());
}

}  // namespace upa

#include "blend/linalg.hpp"

#include "blend/error.hpp"

namespace blend::linalg {

Eigen::Index rank(const Eigen::MatrixXd& A) {
  if (A.cols() == 0) return 0;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(kRankThreshold);
  return qr.rank();
}

void require_full_column_rank(const Eigen::MatrixXd& A, const std::string& what) {
  if (A.rows() < A.cols() || rank(A) < A.cols()) {
    throw Error(ErrorCode::RankDeficient,
                what + " (" + std::to_string(A.rows()) + "x" + std::to_string(A.cols()) +
                    ") does not have full column rank");
  }
}

Eigen::VectorXd solve_symmetric(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    const Eigen::VectorXd x = ldlt.solve(b);
    if (x.allFinite()) return x;
  }
  return Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(A).solve(b);
}

Eigen::MatrixXd inverse_symmetric(const Eigen::MatrixXd& A) {
  const Eigen::Index p = A.rows();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
    if (inv.allFinite()) return 0.5 * (inv + inv.transpose());
  }
  return Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(A).pseudoInverse();
}

}  // namespace blend::linalg

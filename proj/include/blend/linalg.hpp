#pragma once

#include <Eigen/Dense>

#include <string>

namespace blend::linalg {

// Relative pivot threshold for rank decisions.
inline constexpr double kRankThreshold = 1e-10;

// Numerical rank of A by column-pivoted QR.
Eigen::Index rank(const Eigen::MatrixXd& A);

// Throws Error(RankDeficient) naming `what` when A lacks full column rank.
void require_full_column_rank(const Eigen::MatrixXd& A, const std::string& what);

// Solves A x = b for symmetric positive (semi)definite A; falls back to a
// complete orthogonal decomposition (minimum-norm solution) when LDLT fails.
Eigen::VectorXd solve_symmetric(const Eigen::MatrixXd& A, const Eigen::VectorXd& b);

// Inverse of a symmetric positive definite matrix (pseudo-inverse fallback).
Eigen::MatrixXd inverse_symmetric(const Eigen::MatrixXd& A);

}  // namespace blend::linalg

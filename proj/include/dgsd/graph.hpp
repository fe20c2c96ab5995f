#pragma once

#include "dgsd/common.hpp"

#include <span>
#include <vector>

namespace dgsd::graph {

/// Eigenpairs of a symmetric Laplacian, eigenvalues ascending.
template <typename T>
struct SpectralDecomposition {
  Mat<T> eigenvectors;  // U, columns are u_i
  Vec<T> eigenvalues;   // Lambda
  T lambda_max{};
};

/// terms[k] = T_k(L~), k = 0..K-1.
template <typename T>
struct ChebyshevBasis {
  std::vector<Mat<T>> terms;

  int order() const { return static_cast<int>(terms.size()); }
  Eigen::Index nodes() const { return terms.empty() ? 0 : terms.front().rows(); }
};

/// Largest Laplacian eigenvalue as found by power iteration. `value` is the
/// Rayleigh quotient of the last unit iterate `eigenvector`; `iterates`
/// holds v_0 .. v_m (v_m == eigenvector) so the estimate can be
/// differentiated exactly, converged or not.
template <typename T>
struct LambdaMaxEstimate {
  T value{};
  Vec<T> eigenvector;
  std::vector<Vec<T>> iterates;
  int iterations = 0;
  bool converged = false;
  bool fallback = false;  // value below the floor, replaced by the fallback
};

struct PowerIterationOptions {
  int max_iterations = 50;
  double tolerance = 1e-6;  // relative residual ||Lv - lv|| / l
  double floor = 1e-8;
  double fallback = 2.0;
};

/// (W + W^T) / 2.
template <typename T>
Mat<T> symmetrize(const Mat<T>& w);

/// L = D - W, D_ii = sum_j w_ij. Throws InvalidArgument on negative weights.
template <typename T>
Mat<T> laplacian(const Mat<T>& adjacency);

template <typename T>
LambdaMaxEstimate<T> estimate_lambda_max(const Mat<T>& lap, const PowerIterationOptions& opts = {});

/// d(value)/dL of the power-iteration estimate, scaled by `dvalue`: the
/// reverse pass through every normalised matrix-vector product. Equals
/// dvalue * v v^T only in the limit of an exact eigenpair. Zero when the
/// fallback engaged.
template <typename T>
Mat<T> lambda_max_backward(const Mat<T>& lap, const LambdaMaxEstimate<T>& est, T dvalue);

/// 2 L / lambda_max - I. Throws Numeric when lambda_max <= 0.
template <typename T>
Mat<T> rescale_laplacian(const Mat<T>& lap, T lambda_max);

template <typename T>
ChebyshevBasis<T> chebyshev_basis(const Mat<T>& scaled_lap, int order);

/// y = sum_k T_k(L~) x theta[k]; theta[k] is d_in x d_out.
template <typename T>
Mat<T> graph_conv(const Mat<T>& x, const ChebyshevBasis<T>& basis, std::span<const Mat<T>> theta);

/// Full eigensolve, for oracles and diagnostics only.
template <typename T>
SpectralDecomposition<T> eigendecompose(const Mat<T>& lap);

/// x^ = U^T x.
template <typename T>
Mat<T> gft(const Mat<T>& x, const Mat<T>& basis);

/// x = U x^.
template <typename T>
Mat<T> inverse_gft(const Mat<T>& x_hat, const Mat<T>& basis);

/// Spectral-domain convolution x * y = U[(U^T x) o (U^T y)].
template <typename T>
Mat<T> spectral_convolve(const Mat<T>& x, const Mat<T>& y, const Mat<T>& basis);

}  // namespace dgsd::graph

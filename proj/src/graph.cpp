#include "dgsd/graph.hpp"

#include "dgsd/error.hpp"

#include <cmath>
#include <sstream>

namespace dgsd::graph {

namespace {

template <typename T>
void require_square(const Mat<T>& m, const char* what) {
  if (m.rows() != m.cols()) {
    std::ostringstream msg;
    msg << what << " must be square, got " << m.rows() << "x" << m.cols();
    fail(ErrorKind::Dimension, msg.str());
  }
}

}  // namespace

template <typename T>
Mat<T> symmetrize(const Mat<T>& w) {
  require_square(w, "adjacency");
  return (w + w.transpose()) * T(0.5);
}

template <typename T>
Mat<T> laplacian(const Mat<T>& adjacency) {
  require_square(adjacency, "adjacency");
  require(adjacency.allFinite(), ErrorKind::Numeric, "adjacency has non-finite entries");
  require((adjacency.array() >= T(0)).all(), ErrorKind::InvalidArgument,
          "adjacency has negative weights; project before building the Laplacian");
  Mat<T> lap = -adjacency;
  lap.diagonal() += adjacency.rowwise().sum();
  return lap;
}

template <typename T>
LambdaMaxEstimate<T> estimate_lambda_max(const Mat<T>& lap, const PowerIterationOptions& opts) {
  require_square(lap, "Laplacian");
  const Eigen::Index n = lap.rows();
  LambdaMaxEstimate<T> est;

  // The Laplacian's null vector is constant and the top eigenvector is
  // orthogonal to it, so the start vector must not be constant.
  Vec<T> v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    v(i) = static_cast<T>(1.0 + 0.5 * std::sin(1.3 * static_cast<double>(i) + 0.7));
  }
  if (n == 1) v(0) = T(1);
  v.normalize();

  est.iterates.push_back(v);
  T lambda = T(0);
  for (int it = 1; it <= opts.max_iterations; ++it) {
    Vec<T> w = lap * v;
    lambda = v.dot(w);
    est.iterations = it;
    const T wnorm = w.norm();
    if (wnorm == T(0)) break;
    const T residual = (w - lambda * v).norm();
    if (residual <= static_cast<T>(opts.tolerance) * std::abs(lambda)) {
      est.converged = true;
      break;
    }
    v = w / wnorm;
    est.iterates.push_back(v);
  }
  if (!est.converged) lambda = v.dot(lap * v);

  est.eigenvector = v;
  if (!(lambda >= static_cast<T>(opts.floor))) {
    est.value = static_cast<T>(opts.fallback);
    est.fallback = true;
  } else {
    est.value = lambda;
  }
  return est;
}

template <typename T>
Mat<T> lambda_max_backward(const Mat<T>& lap, const LambdaMaxEstimate<T>& est, T dvalue) {
  require_square(lap, "Laplacian");
  const Eigen::Index n = lap.rows();
  Mat<T> dlap = Mat<T>::Zero(n, n);
  if (est.fallback || est.iterates.empty()) return dlap;

  // value = v_m^T L v_m, v_j = L v_{j-1} / ||L v_{j-1}||, v_0 fixed.
  const auto m = est.iterates.size() - 1;
  const Vec<T>& vm = est.iterates[m];
  dlap.noalias() += dvalue * vm * vm.transpose();
  Vec<T> dv = dvalue * (lap + lap.transpose()) * vm;
  for (std::size_t j = m; j >= 1; --j) {
    const Vec<T>& vj = est.iterates[j];
    const Vec<T>& prev = est.iterates[j - 1];
    const T wnorm = (lap * prev).norm();
    const Vec<T> dw = (dv - vj * vj.dot(dv)) / wnorm;
    dlap.noalias() += dw * prev.transpose();
    dv = lap.transpose() * dw;
  }
  return dlap;
}

template <typename T>
Mat<T> rescale_laplacian(const Mat<T>& lap, T lambda_max) {
  require_square(lap, "Laplacian");
  if (!(lambda_max > T(0))) {
    std::ostringstream msg;
    msg << "degenerate spectrum: lambda_max = " << lambda_max;
    fail(ErrorKind::Numeric, msg.str());
  }
  Mat<T> out = lap * (T(2) / lambda_max);
  out.diagonal().array() -= T(1);
  return out;
}

template <typename T>
ChebyshevBasis<T> chebyshev_basis(const Mat<T>& scaled_lap, int order) {
  require_square(scaled_lap, "rescaled Laplacian");
  if (order < 1) {
    std::ostringstream msg;
    msg << "Chebyshev order must be >= 1, got " << order;
    fail(ErrorKind::InvalidArgument, msg.str());
  }
  const Eigen::Index n = scaled_lap.rows();
  ChebyshevBasis<T> basis;
  basis.terms.reserve(static_cast<std::size_t>(order));
  basis.terms.push_back(Mat<T>::Identity(n, n));
  if (order > 1) basis.terms.push_back(scaled_lap);
  for (int k = 2; k < order; ++k) {
    const auto& prev = basis.terms[static_cast<std::size_t>(k - 1)];
    const auto& prev2 = basis.terms[static_cast<std::size_t>(k - 2)];
    Mat<T> next = T(2) * (scaled_lap * prev) - prev2;
    basis.terms.push_back(std::move(next));
  }
  return basis;
}

template <typename T>
Mat<T> graph_conv(const Mat<T>& x, const ChebyshevBasis<T>& basis, std::span<const Mat<T>> theta) {
  if (static_cast<int>(theta.size()) != basis.order() || theta.empty()) {
    fail(ErrorKind::Dimension, "theta must hold one matrix per Chebyshev term");
  }
  if (x.rows() != basis.nodes()) {
    std::ostringstream msg;
    msg << "signal has " << x.rows() << " nodes, basis has " << basis.nodes();
    fail(ErrorKind::Dimension, msg.str());
  }
  const Eigen::Index d_out = theta.front().cols();
  for (const auto& t : theta) {
    if (t.rows() != x.cols() || t.cols() != d_out) {
      fail(ErrorKind::Dimension, "theta shape does not match signal features");
    }
  }
  Mat<T> y = Mat<T>::Zero(x.rows(), d_out);
  for (std::size_t k = 0; k < theta.size(); ++k) {
    y.noalias() += basis.terms[k] * (x * theta[k]);
  }
  return y;
}

template <typename T>
SpectralDecomposition<T> eigendecompose(const Mat<T>& lap) {
  require_square(lap, "Laplacian");
  Eigen::SelfAdjointEigenSolver<Mat<T>> solver(lap);
  require(solver.info() == Eigen::Success, ErrorKind::Numeric, "eigensolve failed");
  SpectralDecomposition<T> out;
  out.eigenvectors = solver.eigenvectors();
  out.eigenvalues = solver.eigenvalues();
  out.lambda_max = out.eigenvalues.size() > 0 ? out.eigenvalues.maxCoeff() : T(0);
  return out;
}

template <typename T>
Mat<T> gft(const Mat<T>& x, const Mat<T>& basis) {
  require_square(basis, "Fourier basis");
  require(basis.rows() == x.rows(), ErrorKind::Dimension, "signal and basis disagree on N");
  return basis.transpose() * x;
}

template <typename T>
Mat<T> inverse_gft(const Mat<T>& x_hat, const Mat<T>& basis) {
  require_square(basis, "Fourier basis");
  require(basis.cols() == x_hat.rows(), ErrorKind::Dimension, "signal and basis disagree on N");
  return basis * x_hat;
}

template <typename T>
Mat<T> spectral_convolve(const Mat<T>& x, const Mat<T>& y, const Mat<T>& basis) {
  require(x.rows() == y.rows() && x.cols() == y.cols(), ErrorKind::Dimension,
          "convolved signals must share a shape");
  return inverse_gft<T>(gft(x, basis).cwiseProduct(gft(y, basis)), basis);
}

#define DGSD_INSTANTIATE(T)                                                                     \
  template Mat<T> symmetrize<T>(const Mat<T>&);                                                 \
  template Mat<T> laplacian<T>(const Mat<T>&);                                                  \
  template LambdaMaxEstimate<T> estimate_lambda_max<T>(const Mat<T>&,                           \
                                                       const PowerIterationOptions&);           \
  template Mat<T> rescale_laplacian<T>(const Mat<T>&, T);                                       \
  template Mat<T> lambda_max_backward<T>(const Mat<T>&, const LambdaMaxEstimate<T>&, T);        \
  template ChebyshevBasis<T> chebyshev_basis<T>(const Mat<T>&, int);                            \
  template Mat<T> graph_conv<T>(const Mat<T>&, const ChebyshevBasis<T>&, std::span<const Mat<T>>); \
  template SpectralDecomposition<T> eigendecompose<T>(const Mat<T>&);                           \
  template Mat<T> gft<T>(const Mat<T>&, const Mat<T>&);                                         \
  template Mat<T> inverse_gft<T>(const Mat<T>&, const Mat<T>&);                                 \
  template Mat<T> spectral_convolve<T>(const Mat<T>&, const Mat<T>&, const Mat<T>&);

DGSD_INSTANTIATE(float)
DGSD_INSTANTIATE(double)

#undef DGSD_INSTANTIATE

}  // namespace dgsd::graph

#pragma once

#include "dgsd/common.hpp"
#include "dgsd/graph.hpp"
#include "dgsd/signal.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dgsd::model {

struct DgsdConfig {
  int n_nodes = 64;
  int in_features = 5;
  int hidden = 32;
  int n_layers = 4;
  int cheb_order = 3;
  int n_classes = 2;
  int feature_head_dim = 32;
  /// Convolve the projected input x_0 in every layer instead of the running
  /// state x_{i-1}.
  bool reconv_input = false;

  void validate() const;
  bool operator==(const DgsdConfig&) const = default;
};

/// Exact number of trainable scalars, W included.
std::size_t parameter_count(const DgsdConfig& cfg);

/// A contiguous slice of the flat parameter vector.
struct ParamGroup {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

/// Groups in declaration order: adjacency, input projection, per-layer
/// Chebyshev coefficients, feature heads, classifiers.
std::vector<ParamGroup> parameter_groups(const DgsdConfig& cfg);

/// All parameters live in one flat vector so the optimizer, the checkpoint
/// writer and the gradient checker see the same layout.
template <typename T>
class DgsdModel {
 public:
  using MatMap = Eigen::Map<Mat<T>>;
  using ConstMatMap = Eigen::Map<const Mat<T>>;
  using VecMap = Eigen::Map<Vec<T>>;
  using ConstVecMap = Eigen::Map<const Vec<T>>;

  explicit DgsdModel(const DgsdConfig& cfg);

  /// Random initialisation: W ~ U[0.01, 0.5] symmetric, linear maps
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), classifier biases zero.
  static DgsdModel initialized(const DgsdConfig& cfg, std::uint64_t seed);

  const DgsdConfig& config() const { return cfg_; }
  std::span<T> parameters() { return params_; }
  std::span<const T> parameters() const { return params_; }

  MatMap adjacency() { return mat(adjacency_); }
  ConstMatMap adjacency() const { return mat(adjacency_); }
  MatMap input_weight() { return mat(input_weight_); }
  ConstMatMap input_weight() const { return mat(input_weight_); }
  VecMap input_bias() { return vec(input_bias_); }
  ConstVecMap input_bias() const { return vec(input_bias_); }
  MatMap theta(int layer, int k) { return mat(theta_index(layer, k)); }
  ConstMatMap theta(int layer, int k) const { return mat(theta_index(layer, k)); }
  MatMap head_weight(int layer) { return mat(head_index(layer)); }
  ConstMatMap head_weight(int layer) const { return mat(head_index(layer)); }
  VecMap head_bias(int layer) { return vec(head_index(layer) + 1); }
  ConstVecMap head_bias(int layer) const { return vec(head_index(layer) + 1); }
  MatMap classifier_weight(int layer) { return mat(classifier_index(layer)); }
  ConstMatMap classifier_weight(int layer) const { return mat(classifier_index(layer)); }
  VecMap classifier_bias(int layer) { return vec(classifier_index(layer) + 1); }
  ConstVecMap classifier_bias(int layer) const { return vec(classifier_index(layer) + 1); }

  const std::vector<ParamGroup>& groups() const { return groups_; }

  template <typename U>
  DgsdModel<U> cast() const {
    DgsdModel<U> out(cfg_);
    auto dst = out.parameters();
    for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
    return out;
  }

 private:
  std::size_t theta_index(int layer, int k) const;
  std::size_t head_index(int layer) const;
  std::size_t classifier_index(int layer) const;

  MatMap mat(std::size_t g) {
    const auto& pg = groups_[g];
    return MatMap(params_.data() + pg.offset, pg.rows, pg.cols);
  }
  ConstMatMap mat(std::size_t g) const {
    const auto& pg = groups_[g];
    return ConstMatMap(params_.data() + pg.offset, pg.rows, pg.cols);
  }
  VecMap vec(std::size_t g) {
    const auto& pg = groups_[g];
    return VecMap(params_.data() + pg.offset, static_cast<Eigen::Index>(pg.size));
  }
  ConstVecMap vec(std::size_t g) const {
    const auto& pg = groups_[g];
    return ConstVecMap(params_.data() + pg.offset, static_cast<Eigen::Index>(pg.size));
  }

  static constexpr std::size_t adjacency_ = 0;
  static constexpr std::size_t input_weight_ = 1;
  static constexpr std::size_t input_bias_ = 2;

  DgsdConfig cfg_;
  std::vector<ParamGroup> groups_;
  AlignedVector<T> params_;
};

/// Everything derived from W that a forward pass needs. Rebuilt whenever W
/// changes (once per training step).
template <typename T>
struct GraphContext {
  Mat<T> symmetric;  // (W + W^T) / 2
  Mat<T> laplacian;
  graph::LambdaMaxEstimate<T> lambda_max;
  Mat<T> scaled;  // 2 L / lambda_max - I
  graph::ChebyshevBasis<T> basis;
};

template <typename T>
GraphContext<T> prepare_graph(const DgsdModel<T>& model,
                              const graph::PowerIterationOptions& opts = {});

template <typename T>
struct ForwardTrace {
  std::vector<Mat<T>> layer_states;     // x_1..x_n, N x hidden
  std::vector<Vec<T>> pooled_features;  // F_1..F_n
  std::vector<Vec<T>> logits;
  std::vector<Vec<T>> distributions;    // p_1..p_n
};

/// Activations of a batch laid out side by side: window b of a N x (B*h)
/// matrix occupies columns [b*h, (b+1)*h).
template <typename T>
struct BatchCache {
  Eigen::Index batch = 0;
  Mat<T> inputs;                             // N x (B*d)
  Mat<T> x0;                                 // N x (B*hidden)
  std::vector<Mat<T>> states;                // x_i
  std::vector<std::vector<Mat<T>>> filtered; // [layer][k] T_k(L~) S_i
  std::vector<Mat<T>> preact;                // graph_conv output before the rectifier
  std::vector<Mat<T>> node_means;            // hidden x B
  std::vector<Mat<T>> features;              // head_dim x B
  std::vector<Mat<T>> logits;                // classes x B
  std::vector<Mat<T>> probs;                 // classes x B

  ForwardTrace<T> trace(Eigen::Index b) const;
};

/// Forward over the windows data[idx[0]], data[idx[1]], ... Throws Numeric
/// naming the layer when an activation is not finite.
template <typename T>
BatchCache<T> forward_batch(const DgsdModel<T>& model, const GraphContext<T>& graph,
                            std::span<const Mat<T>> data, std::span<const std::size_t> idx);

template <typename T>
ForwardTrace<T> forward(const DgsdModel<T>& model, const GraphContext<T>& graph, const Mat<T>& x);

template <typename T>
ForwardTrace<T> forward(const DgsdModel<T>& model, const Mat<T>& x);

template <typename T>
ForwardTrace<T> forward(const DgsdModel<T>& model, const signal::DeFeatureMatrix& x);

/// argmax of the deepest distribution; ties go to Left.
template <typename T>
Label predict_from(const Vec<T>& deepest);

template <typename T>
Label predict(const DgsdModel<T>& model, const signal::DeFeatureMatrix& x);

template <typename T>
std::vector<Label> predict_batch(const DgsdModel<T>& model, std::span<const Mat<T>> data,
                                 std::span<const std::size_t> idx);

/// Upstream gradients for backward(): d loss / d logits_i and the extra
/// d loss / d F_i coming from feature distillation. Both classes x B and
/// head_dim x B, one entry per layer.
template <typename T>
struct OutputGradients {
  std::vector<Mat<T>> logits;
  std::vector<Mat<T>> features;
};

/// Reverse pass. Returns d loss / d parameters in the flat layout, W
/// included (through the symmetrisation, Laplacian, lambda_max and the
/// Chebyshev recurrence).
template <typename T>
AlignedVector<T> backward(const DgsdModel<T>& model, const GraphContext<T>& graph,
                        const BatchCache<T>& cache, const OutputGradients<T>& upstream);

// Checkpoints: "DGSD1", eight u32 config fields, u64 parameter count,
// then float32 parameters, all little-endian.
std::vector<std::uint8_t> serialize(const DgsdModel<float>& model);
DgsdModel<float> deserialize(std::span<const std::uint8_t> bytes);
void save_checkpoint(const DgsdModel<float>& model, const std::filesystem::path& path);
DgsdModel<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace dgsd::model

#include "dgsd/model.hpp"

#include "dgsd/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

namespace dgsd::model {

void DgsdConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) {
      std::ostringstream msg;
      msg << name << " must be positive, got " << v;
      fail(ErrorKind::InvalidArgument, msg.str());
    }
  };
  positive(n_nodes, "n_nodes");
  positive(in_features, "in_features");
  positive(hidden, "hidden");
  positive(feature_head_dim, "feature_head_dim");
  require(n_layers >= 2, ErrorKind::InvalidArgument,
          "n_layers must be >= 2 (one shallow layer plus the deepest)");
  require(cheb_order >= 1 && cheb_order <= 8, ErrorKind::InvalidArgument,
          "cheb_order must lie in [1, 8]");
  require(n_classes == 2, ErrorKind::InvalidArgument, "left/right detection needs n_classes = 2");
}

std::vector<ParamGroup> parameter_groups(const DgsdConfig& cfg) {
  cfg.validate();
  std::vector<ParamGroup> groups;
  std::size_t offset = 0;
  auto add = [&](std::string name, Eigen::Index rows, Eigen::Index cols) {
    const auto size = static_cast<std::size_t>(rows * cols);
    groups.push_back(ParamGroup{std::move(name), offset, size, rows, cols});
    offset += size;
  };
  const Eigen::Index n = cfg.n_nodes, d = cfg.in_features, h = cfg.hidden,
                     f = cfg.feature_head_dim, c = cfg.n_classes;
  add("adjacency", n, n);
  add("input_proj.weight", d, h);
  add("input_proj.bias", h, 1);
  for (int i = 0; i < cfg.n_layers; ++i) {
    for (int k = 0; k < cfg.cheb_order; ++k) {
      add("layer" + std::to_string(i) + ".theta" + std::to_string(k), h, h);
    }
  }
  for (int i = 0; i < cfg.n_layers; ++i) {
    add("head" + std::to_string(i) + ".weight", h, f);
    add("head" + std::to_string(i) + ".bias", f, 1);
  }
  for (int i = 0; i < cfg.n_layers; ++i) {
    add("classifier" + std::to_string(i) + ".weight", f, c);
    add("classifier" + std::to_string(i) + ".bias", c, 1);
  }
  return groups;
}

std::size_t parameter_count(const DgsdConfig& cfg) {
  const auto groups = parameter_groups(cfg);
  return groups.back().offset + groups.back().size;
}

template <typename T>
DgsdModel<T>::DgsdModel(const DgsdConfig& cfg)
    : cfg_(cfg), groups_(parameter_groups(cfg)), params_(parameter_count(cfg), T(0)) {}

template <typename T>
std::size_t DgsdModel<T>::theta_index(int layer, int k) const {
  return 3 + static_cast<std::size_t>(layer * cfg_.cheb_order + k);
}

template <typename T>
std::size_t DgsdModel<T>::head_index(int layer) const {
  return 3 + static_cast<std::size_t>(cfg_.n_layers * cfg_.cheb_order + 2 * layer);
}

template <typename T>
std::size_t DgsdModel<T>::classifier_index(int layer) const {
  return 3 + static_cast<std::size_t>(cfg_.n_layers * cfg_.cheb_order + 2 * cfg_.n_layers +
                                      2 * layer);
}

template <typename T>
DgsdModel<T> DgsdModel<T>::initialized(const DgsdConfig& cfg, std::uint64_t seed) {
  DgsdModel model(cfg);
  std::mt19937_64 rng(seed);
  auto fill_uniform = [&rng](auto&& m, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<T>(dist(rng));
  };

  auto w = model.adjacency();
  std::uniform_real_distribution<double> wdist(0.01, 0.5);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = i; j < w.cols(); ++j) {
      w(i, j) = w(j, i) = static_cast<T>(wdist(rng));
    }
  }

  const double in_bound = 1.0 / std::sqrt(static_cast<double>(cfg.in_features));
  fill_uniform(model.input_weight(), in_bound);
  fill_uniform(model.input_bias(), in_bound);
  const double theta_bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden * cfg.cheb_order));
  for (int i = 0; i < cfg.n_layers; ++i)
    for (int k = 0; k < cfg.cheb_order; ++k) fill_uniform(model.theta(i, k), theta_bound);
  const double head_bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  for (int i = 0; i < cfg.n_layers; ++i) {
    fill_uniform(model.head_weight(i), head_bound);
    fill_uniform(model.head_bias(i), head_bound);
  }
  const double cls_bound = 1.0 / std::sqrt(static_cast<double>(cfg.feature_head_dim));
  for (int i = 0; i < cfg.n_layers; ++i) {
    fill_uniform(model.classifier_weight(i), cls_bound);
    model.classifier_bias(i).setZero();
  }
  return model;
}

template <typename T>
GraphContext<T> prepare_graph(const DgsdModel<T>& model, const graph::PowerIterationOptions& opts) {
  GraphContext<T> ctx;
  ctx.symmetric = graph::symmetrize<T>(Mat<T>(model.adjacency()));
  ctx.laplacian = graph::laplacian(ctx.symmetric);
  ctx.lambda_max = graph::estimate_lambda_max(ctx.laplacian, opts);
  ctx.scaled = graph::rescale_laplacian(ctx.laplacian, ctx.lambda_max.value);
  ctx.basis = graph::chebyshev_basis(ctx.scaled, model.config().cheb_order);
  return ctx;
}

namespace {

template <typename T>
void softmax_columns(const Mat<T>& logits, Mat<T>& probs) {
  probs.resize(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    const T top = logits.col(b).maxCoeff();
    probs.col(b) = (logits.col(b).array() - top).exp();
    probs.col(b) /= probs.col(b).sum();
  }
}

template <typename T>
void check_finite(const Mat<T>& m, int layer, const char* what) {
  if (!m.allFinite()) {
    std::ostringstream msg;
    msg << "non-finite " << what << " in layer " << layer + 1;
    fail(ErrorKind::Numeric, msg.str());
  }
}

}  // namespace

template <typename T>
ForwardTrace<T> BatchCache<T>::trace(Eigen::Index b) const {
  ForwardTrace<T> out;
  const Eigen::Index h = x0.cols() / batch;
  for (std::size_t i = 0; i < states.size(); ++i) {
    out.layer_states.push_back(states[i].middleCols(b * h, h));
    out.pooled_features.push_back(features[i].col(b));
    out.logits.push_back(logits[i].col(b));
    out.distributions.push_back(probs[i].col(b));
  }
  return out;
}

template <typename T>
BatchCache<T> forward_batch(const DgsdModel<T>& model, const GraphContext<T>& graph,
                            std::span<const Mat<T>> data, std::span<const std::size_t> idx) {
  const auto& cfg = model.config();
  const Eigen::Index n = cfg.n_nodes, d = cfg.in_features, h = cfg.hidden;
  const auto batch = static_cast<Eigen::Index>(idx.size());
  require(batch > 0, ErrorKind::InvalidArgument, "empty batch");
  require(graph.basis.nodes() == n, ErrorKind::Dimension, "graph context does not match model");

  BatchCache<T> cache;
  cache.batch = batch;
  cache.inputs.resize(n, batch * d);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto& x = data[idx[static_cast<std::size_t>(b)]];
    if (x.rows() != n || x.cols() != d) {
      std::ostringstream msg;
      msg << "input is " << x.rows() << "x" << x.cols() << ", model expects " << n << "x" << d;
      fail(ErrorKind::Dimension, msg.str());
    }
    cache.inputs.middleCols(b * d, d) = x;
  }

  cache.x0.resize(n, batch * h);
  const auto w_in = model.input_weight();
  const Eigen::Matrix<T, 1, Eigen::Dynamic> b_in = model.input_bias().transpose();
  for (Eigen::Index b = 0; b < batch; ++b) {
    cache.x0.middleCols(b * h, h).noalias() = cache.inputs.middleCols(b * d, d) * w_in;
    cache.x0.middleCols(b * h, h).rowwise() += b_in;
  }
  check_finite(cache.x0, -1, "input projection");

  const int layers = cfg.n_layers;
  const int order = cfg.cheb_order;
  cache.states.resize(static_cast<std::size_t>(layers));
  cache.filtered.resize(static_cast<std::size_t>(layers));
  cache.preact.resize(static_cast<std::size_t>(layers));
  cache.node_means.resize(static_cast<std::size_t>(layers));
  cache.features.resize(static_cast<std::size_t>(layers));
  cache.logits.resize(static_cast<std::size_t>(layers));
  cache.probs.resize(static_cast<std::size_t>(layers));

  for (int i = 0; i < layers; ++i) {
    const auto li = static_cast<std::size_t>(i);
    const Mat<T>& prev = i == 0 ? cache.x0 : cache.states[li - 1];
    const Mat<T>& source = cfg.reconv_input ? cache.x0 : prev;

    auto& filtered = cache.filtered[li];
    filtered.resize(static_cast<std::size_t>(order));
    filtered[0] = source;
    for (int k = 1; k < order; ++k) {
      filtered[static_cast<std::size_t>(k)].noalias() =
          graph.basis.terms[static_cast<std::size_t>(k)] * source;
    }

    Mat<T>& z = cache.preact[li];
    z.setZero(n, batch * h);
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (int k = 0; k < order; ++k) {
        z.middleCols(b * h, h).noalias() +=
            filtered[static_cast<std::size_t>(k)].middleCols(b * h, h) * model.theta(i, k);
      }
    }
    cache.states[li] = prev + z.cwiseMax(T(0));
    check_finite(cache.states[li], i, "graph convolution state");

    Mat<T>& means = cache.node_means[li];
    means.resize(h, batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
      means.col(b) = cache.states[li].middleCols(b * h, h).colwise().mean().transpose();
    }
    // mean over nodes commutes with the affine head
    cache.features[li].noalias() = model.head_weight(i).transpose() * means;
    cache.features[li].colwise() += model.head_bias(i);
    cache.logits[li].noalias() = model.classifier_weight(i).transpose() * cache.features[li];
    cache.logits[li].colwise() += model.classifier_bias(i);
    check_finite(cache.logits[li], i, "logits");
    softmax_columns(cache.logits[li], cache.probs[li]);
  }
  return cache;
}

template <typename T>
ForwardTrace<T> forward(const DgsdModel<T>& model, const GraphContext<T>& graph, const Mat<T>& x) {
  const std::size_t zero = 0;
  auto cache = forward_batch<T>(model, graph, std::span<const Mat<T>>(&x, 1),
                                std::span<const std::size_t>(&zero, 1));
  return cache.trace(0);
}

template <typename T>
ForwardTrace<T> forward(const DgsdModel<T>& model, const Mat<T>& x) {
  return forward(model, prepare_graph(model), x);
}

template <typename T>
ForwardTrace<T> forward(const DgsdModel<T>& model, const signal::DeFeatureMatrix& x) {
  const Mat<T> input = x.values.cast<T>();
  return forward(model, input);
}

template <typename T>
Label predict_from(const Vec<T>& deepest) {
  return deepest.size() > 1 && deepest(1) > deepest(0) ? Label::Right : Label::Left;
}

template <typename T>
Label predict(const DgsdModel<T>& model, const signal::DeFeatureMatrix& x) {
  return predict_from<T>(forward(model, x).distributions.back());
}

template <typename T>
std::vector<Label> predict_batch(const DgsdModel<T>& model, std::span<const Mat<T>> data,
                                 std::span<const std::size_t> idx) {
  std::vector<Label> out;
  out.reserve(idx.size());
  if (idx.empty()) return out;
  const auto graph = prepare_graph(model);
  constexpr std::size_t chunk = 64;
  for (std::size_t start = 0; start < idx.size(); start += chunk) {
    const auto part = idx.subspan(start, std::min(chunk, idx.size() - start));
    const auto cache = forward_batch(model, graph, data, part);
    const auto& probs = cache.probs.back();
    for (Eigen::Index b = 0; b < probs.cols(); ++b) {
      out.push_back(predict_from<T>(probs.col(b)));
    }
  }
  return out;
}

template <typename T>
AlignedVector<T> backward(const DgsdModel<T>& model, const GraphContext<T>& graph,
                          const BatchCache<T>& cache, const OutputGradients<T>& upstream) {
  const auto& cfg = model.config();
  const Eigen::Index n = cfg.n_nodes, d = cfg.in_features, h = cfg.hidden;
  const Eigen::Index batch = cache.batch;
  const int layers = cfg.n_layers;
  const int order = cfg.cheb_order;
  require(static_cast<int>(upstream.logits.size()) == layers &&
              static_cast<int>(upstream.features.size()) == layers,
          ErrorKind::Dimension, "upstream gradients must cover every layer");

  DgsdModel<T> grad(cfg);

  // d loss / d x_i for i = 0..n (index 0 is the projected input).
  std::vector<Mat<T>> dstate(static_cast<std::size_t>(layers + 1), Mat<T>::Zero(n, batch * h));

  const T inv_nodes = T(1) / static_cast<T>(n);
  for (int i = 0; i < layers; ++i) {
    const auto li = static_cast<std::size_t>(i);
    const Mat<T>& dlogits = upstream.logits[li];
    grad.classifier_weight(i).noalias() = cache.features[li] * dlogits.transpose();
    grad.classifier_bias(i) = dlogits.rowwise().sum();
    Mat<T> dfeat = model.classifier_weight(i) * dlogits;
    dfeat += upstream.features[li];
    grad.head_weight(i).noalias() = cache.node_means[li] * dfeat.transpose();
    grad.head_bias(i) = dfeat.rowwise().sum();
    const Mat<T> dmeans = model.head_weight(i) * dfeat;  // hidden x B
    for (Eigen::Index b = 0; b < batch; ++b) {
      dstate[li + 1].middleCols(b * h, h).rowwise() += inv_nodes * dmeans.col(b).transpose();
    }
  }

  std::vector<Mat<T>> dterms(static_cast<std::size_t>(order), Mat<T>::Zero(n, n));
  Mat<T> q(n, batch * h);
  for (int i = layers - 1; i >= 0; --i) {
    const auto li = static_cast<std::size_t>(i);
    const Mat<T>& g = dstate[li + 1];
    dstate[li] += g;
    const Mat<T> dz = g.cwiseProduct((cache.preact[li].array() > T(0)).template cast<T>().matrix());
    const auto& filtered = cache.filtered[li];
    const Mat<T>& source = filtered[0];
    Mat<T>& dsource = cfg.reconv_input ? dstate[0] : dstate[li];

    for (int k = 0; k < order; ++k) {
      const auto lk = static_cast<std::size_t>(k);
      auto dtheta = grad.theta(i, k);
      const auto theta = model.theta(i, k);
      for (Eigen::Index b = 0; b < batch; ++b) {
        dtheta.noalias() += filtered[lk].middleCols(b * h, h).transpose() * dz.middleCols(b * h, h);
        q.middleCols(b * h, h).noalias() = dz.middleCols(b * h, h) * theta.transpose();
      }
      if (k == 0) {
        dsource += q;
      } else {
        dsource.noalias() += graph.basis.terms[lk].transpose() * q;
        dterms[lk].noalias() += q * source.transpose();
      }
    }
  }

  const Mat<T>& dx0 = dstate[0];
  for (Eigen::Index b = 0; b < batch; ++b) {
    grad.input_weight().noalias() +=
        cache.inputs.middleCols(b * d, d).transpose() * dx0.middleCols(b * h, h);
    grad.input_bias() += dx0.middleCols(b * h, h).colwise().sum().transpose();
  }

  // Chebyshev recurrence T_k = 2 L~ T_{k-1} - T_{k-2}, reversed.
  Mat<T> dscaled = Mat<T>::Zero(n, n);
  for (int k = order - 1; k >= 2; --k) {
    const auto lk = static_cast<std::size_t>(k);
    dscaled.noalias() += T(2) * dterms[lk] * graph.basis.terms[lk - 1].transpose();
    dterms[lk - 1].noalias() += T(2) * graph.scaled.transpose() * dterms[lk];
    dterms[lk - 2] -= dterms[lk];
  }
  if (order >= 2) dscaled += dterms[1];

  const T lambda = graph.lambda_max.value;
  Mat<T> dlap = dscaled * (T(2) / lambda);
  if (!graph.lambda_max.fallback) {
    const T dlambda = -(T(2) / (lambda * lambda)) * dscaled.cwiseProduct(graph.laplacian).sum();
    dlap += graph::lambda_max_backward(graph.laplacian, graph.lambda_max, dlambda);
  }
  // L = diag(Ws 1) - Ws  =>  dWs_ij = dL_ii - dL_ij
  Mat<T> dsym = -dlap;
  dsym.colwise() += dlap.diagonal();
  grad.adjacency() = (dsym + dsym.transpose()) * T(0.5);

  auto flat = grad.parameters();
  return AlignedVector<T>(flat.begin(), flat.end());
}

template class DgsdModel<float>;
template class DgsdModel<double>;

#define DGSD_INSTANTIATE(T)                                                                     \
  template GraphContext<T> prepare_graph<T>(const DgsdModel<T>&,                                \
                                            const graph::PowerIterationOptions&);               \
  template struct BatchCache<T>;                                                                \
  template BatchCache<T> forward_batch<T>(const DgsdModel<T>&, const GraphContext<T>&,          \
                                          std::span<const Mat<T>>, std::span<const std::size_t>); \
  template ForwardTrace<T> forward<T>(const DgsdModel<T>&, const GraphContext<T>&, const Mat<T>&); \
  template ForwardTrace<T> forward<T>(const DgsdModel<T>&, const Mat<T>&);                     \
  template ForwardTrace<T> forward<T>(const DgsdModel<T>&, const signal::DeFeatureMatrix&);    \
  template Label predict_from<T>(const Vec<T>&);                                                \
  template Label predict<T>(const DgsdModel<T>&, const signal::DeFeatureMatrix&);              \
  template std::vector<Label> predict_batch<T>(const DgsdModel<T>&, std::span<const Mat<T>>,   \
                                               std::span<const std::size_t>);                   \
  template AlignedVector<T> backward<T>(const DgsdModel<T>&, const GraphContext<T>&,             \
                                      const BatchCache<T>&, const OutputGradients<T>&);

DGSD_INSTANTIATE(float)
DGSD_INSTANTIATE(double)

#undef DGSD_INSTANTIATE

// ---- checkpoints ----

namespace {

constexpr char kMagic[5] = {'D', 'G', 'S', 'D', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t take(int width) {
    if (pos_ + static_cast<std::size_t>(width) > bytes_.size()) {
      fail(ErrorKind::Truncated, "checkpoint ends early");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t{bytes_[pos_++]} << (8 * i);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const DgsdModel<float>& model) {
  const auto& cfg = model.config();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  for (int field : {cfg.n_nodes, cfg.in_features, cfg.hidden, cfg.n_layers, cfg.cheb_order,
                    cfg.n_classes, cfg.feature_head_dim, cfg.reconv_input ? 1 : 0}) {
    put_u32(out, static_cast<std::uint32_t>(field));
  }
  const auto params = model.parameters();
  put_u64(out, params.size());
  out.reserve(out.size() + 4 * params.size());
  for (float p : params) put_u32(out, std::bit_cast<std::uint32_t>(p));
  return out;
}

DgsdModel<float> deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    fail(ErrorKind::Format, "not a DGSD1 checkpoint");
  }
  ByteReader in(bytes.subspan(sizeof(kMagic)));
  DgsdConfig cfg;
  cfg.n_nodes = static_cast<int>(in.take(4));
  cfg.in_features = static_cast<int>(in.take(4));
  cfg.hidden = static_cast<int>(in.take(4));
  cfg.n_layers = static_cast<int>(in.take(4));
  cfg.cheb_order = static_cast<int>(in.take(4));
  cfg.n_classes = static_cast<int>(in.take(4));
  cfg.feature_head_dim = static_cast<int>(in.take(4));
  cfg.reconv_input = in.take(4) != 0;
  cfg.validate();
  const std::uint64_t count = in.take(8);
  if (count != parameter_count(cfg)) {
    fail(ErrorKind::Format, "checkpoint parameter count does not match its config");
  }
  if (in.remaining() != 4 * count) {
    fail(in.remaining() < 4 * count ? ErrorKind::Truncated : ErrorKind::Format,
         "checkpoint payload size mismatch");
  }
  DgsdModel<float> model(cfg);
  for (float& p : model.parameters()) p = std::bit_cast<float>(static_cast<std::uint32_t>(in.take(4)));
  return model;
}

void save_checkpoint(const DgsdModel<float>& model, const std::filesystem::path& path) {
  const auto bytes = serialize(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

DgsdModel<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace dgsd::model

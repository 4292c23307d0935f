#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "txcat/common.hpp"

// Minimal dense reverse-mode kernel: exactly the ops the dual-GRU classifier
// graph needs, templated on scalar (double in tests, float allowed in
// production builds).
namespace txcat::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <class S>
struct ParamSet {
  struct Item {
    std::string name;
    Mat<S> value;
    Mat<S> grad;
  };
  std::vector<Item> items;

  int add(const std::string& name, long rows, long cols) {
    Item item;
    item.name = name;
    item.value = Mat<S>::Zero(rows, cols);
    item.grad = Mat<S>::Zero(rows, cols);
    items.push_back(std::move(item));
    return static_cast<int>(items.size() - 1);
  }
  Mat<S>& value(int idx) { return items[static_cast<size_t>(idx)].value; }
  const Mat<S>& value(int idx) const { return items[static_cast<size_t>(idx)].value; }
  Mat<S>& grad(int idx) { return items[static_cast<size_t>(idx)].grad; }
  void zero_grads() {
    for (auto& item : items) item.grad.setZero();
  }
  void scale_grads(S factor) {
    for (auto& item : items) item.grad *= factor;
  }
  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& item : items) n += static_cast<size_t>(item.value.size());
    return n;
  }
  bool all_finite() const {
    for (const auto& item : items)
      if (!item.value.allFinite()) return false;
    return true;
  }
};

template <class S>
void init_uniform(ParamSet<S>& ps, int idx, S bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound),
                                              static_cast<double>(bound));
  Mat<S>& v = ps.value(idx);
  for (long c = 0; c < v.cols(); ++c)
    for (long r = 0; r < v.rows(); ++r) v(r, c) = static_cast<S>(dist(rng));
}

// Pointwise binary cross-entropy with the documented clamp.
template <class S>
S bce_loss(S p, S y) {
  const S lo = static_cast<S>(1e-7), hi = static_cast<S>(1) - static_cast<S>(1e-7);
  p = std::clamp(p, lo, hi);
  return -(y * std::log(p) + (static_cast<S>(1) - y) * std::log(static_cast<S>(1) - p));
}

enum class Op {
  kConstant,
  kParam,
  kAdd,
  kAddColVec,
  kMul,
  kMatMul,
  kSigmoid,
  kTanh,
  kRelu,
  kOneMinus,
  kScale,
  kConcatRows,
  kCol,
  kSum,
  kMean,
  kBceMean,
};

template <class S>
class Tape {
 public:
  struct Node {
    Op op;
    int a = -1, b = -1;
    Mat<S> value;
    Mat<S> grad;
    bool needs_grad = false;
    S aux{};
    int aux_i = 0;
    Mat<S> aux_m;  // constants attached to the op (bce targets)
    ParamSet<S>* ps = nullptr;
    int p_idx = -1;
  };

  void reset() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }
  const Mat<S>& value(int idx) const { return nodes_[static_cast<size_t>(idx)].value; }

  int constant(Mat<S> v) {
    Node n;
    n.op = Op::kConstant;
    n.value = std::move(v);
    return push(std::move(n));
  }

  int param(ParamSet<S>& ps, int idx) {
    Node n;
    n.op = Op::kParam;
    n.value = ps.value(idx);
    n.needs_grad = true;
    n.ps = &ps;
    n.p_idx = idx;
    return push(std::move(n));
  }

  int add(int a, int b) {
    require_same_shape(a, b, "add");
    return unary_or_binary(Op::kAdd, a, b, value(a) + value(b));
  }

  // bias (n x 1) broadcast across columns of a (n x B)
  int add_colvec(int a, int bias) {
    if (value(a).rows() != value(bias).rows() || value(bias).cols() != 1)
      throw DataError("nn: add_colvec shape mismatch");
    return unary_or_binary(Op::kAddColVec, a, bias,
                           value(a).colwise() + Eigen::Matrix<S, Eigen::Dynamic, 1>(value(bias)));
  }

  int mul(int a, int b) {
    require_same_shape(a, b, "mul");
    return unary_or_binary(Op::kMul, a, b, value(a).cwiseProduct(value(b)));
  }

  int matmul(int a, int b) {
    if (value(a).cols() != value(b).rows()) throw DataError("nn: matmul shape mismatch");
    return unary_or_binary(Op::kMatMul, a, b, value(a) * value(b));
  }

  int sigmoid(int a) {
    Mat<S> v = value(a).unaryExpr(
        [](S x) { return static_cast<S>(1) / (static_cast<S>(1) + std::exp(-x)); });
    return unary_or_binary(Op::kSigmoid, a, -1, std::move(v));
  }

  int tanh(int a) {
    Mat<S> v = value(a).unaryExpr([](S x) { return std::tanh(x); });
    return unary_or_binary(Op::kTanh, a, -1, std::move(v));
  }

  int relu(int a) {
    Mat<S> v = value(a).cwiseMax(static_cast<S>(0));
    return unary_or_binary(Op::kRelu, a, -1, std::move(v));
  }

  int one_minus(int a) {
    Mat<S> v = Mat<S>::Constant(value(a).rows(), value(a).cols(), static_cast<S>(1)) - value(a);
    return unary_or_binary(Op::kOneMinus, a, -1, std::move(v));
  }

  int scale(int a, S s) {
    const int idx = unary_or_binary(Op::kScale, a, -1, Mat<S>(value(a) * s));
    nodes_.back().aux = s;
    return idx;
  }

  int concat_rows(int a, int b) {
    if (value(a).cols() != value(b).cols()) throw DataError("nn: concat_rows shape mismatch");
    Mat<S> v(value(a).rows() + value(b).rows(), value(a).cols());
    v.topRows(value(a).rows()) = value(a);
    v.bottomRows(value(b).rows()) = value(b);
    return unary_or_binary(Op::kConcatRows, a, b, std::move(v));
  }

  int col(int a, int j) {
    if (j < 0 || j >= value(a).cols()) throw DataError("nn: col index out of range");
    const int idx = unary_or_binary(Op::kCol, a, -1, Mat<S>(value(a).col(j)));
    nodes_.back().aux_i = j;
    return idx;
  }

  int sum(int a) {
    Mat<S> v(1, 1);
    v(0, 0) = value(a).sum();
    return unary_or_binary(Op::kSum, a, -1, std::move(v));
  }

  int mean(int a) {
    Mat<S> v(1, 1);
    v(0, 0) = value(a).mean();
    return unary_or_binary(Op::kMean, a, -1, std::move(v));
  }

  // predictions (1 x B) against constant targets (1 x B); batch-mean loss
  int bce_mean(int p, Mat<S> targets) {
    if (value(p).rows() != 1 || targets.rows() != 1 || value(p).cols() != targets.cols())
      throw DataError("nn: bce_mean expects matching 1 x B rows");
    Mat<S> v(1, 1);
    S total = 0;
    for (long c = 0; c < targets.cols(); ++c) total += bce_loss(value(p)(0, c), targets(0, c));
    v(0, 0) = total / static_cast<S>(targets.cols());
    const int idx = unary_or_binary(Op::kBceMean, p, -1, std::move(v));
    nodes_.back().aux_m = std::move(targets);
    return idx;
  }

  // Reverse sweep from a scalar loss; parameter gradients accumulate into
  // the bound ParamSet.
  void backward(int loss) {
    Node& top = nodes_.at(static_cast<size_t>(loss));
    if (top.value.rows() != 1 || top.value.cols() != 1)
      throw DataError("nn: backward requires a scalar loss");
    for (auto& n : nodes_) {
      if (n.needs_grad)
        n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
      else
        n.grad.resize(0, 0);
    }
    if (!top.needs_grad) return;  // loss independent of all parameters
    top.grad(0, 0) = static_cast<S>(1);

    for (int i = loss; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      switch (n.op) {
        case Op::kConstant:
          break;
        case Op::kParam:
          n.ps->grad(n.p_idx) += n.grad;
          break;
        case Op::kAdd:
          accum(n.a, n.grad);
          accum(n.b, n.grad);
          break;
        case Op::kAddColVec:
          accum(n.a, n.grad);
          if (wants(n.b)) nodes_[static_cast<size_t>(n.b)].grad += n.grad.rowwise().sum();
          break;
        case Op::kMul:
          if (wants(n.a))
            nodes_[static_cast<size_t>(n.a)].grad += n.grad.cwiseProduct(value(n.b));
          if (wants(n.b))
            nodes_[static_cast<size_t>(n.b)].grad += n.grad.cwiseProduct(value(n.a));
          break;
        case Op::kMatMul:
          if (wants(n.a)) nodes_[static_cast<size_t>(n.a)].grad += n.grad * value(n.b).transpose();
          if (wants(n.b)) nodes_[static_cast<size_t>(n.b)].grad += value(n.a).transpose() * n.grad;
          break;
        case Op::kSigmoid:
          if (wants(n.a))
            nodes_[static_cast<size_t>(n.a)].grad +=
                n.grad.cwiseProduct(n.value.cwiseProduct(
                    Mat<S>::Constant(n.value.rows(), n.value.cols(), static_cast<S>(1)) -
                    n.value));
          break;
        case Op::kTanh:
          if (wants(n.a))
            nodes_[static_cast<size_t>(n.a)].grad += n.grad.cwiseProduct(
                Mat<S>::Constant(n.value.rows(), n.value.cols(), static_cast<S>(1)) -
                n.value.cwiseProduct(n.value));
          break;
        case Op::kRelu:
          if (wants(n.a))
            nodes_[static_cast<size_t>(n.a)].grad += n.grad.cwiseProduct(
                value(n.a).unaryExpr([](S x) { return x > 0 ? static_cast<S>(1) : static_cast<S>(0); }));
          break;
        case Op::kOneMinus:
          if (wants(n.a)) nodes_[static_cast<size_t>(n.a)].grad -= n.grad;
          break;
        case Op::kScale:
          if (wants(n.a)) nodes_[static_cast<size_t>(n.a)].grad += n.grad * n.aux;
          break;
        case Op::kConcatRows:
          if (wants(n.a))
            nodes_[static_cast<size_t>(n.a)].grad += n.grad.topRows(value(n.a).rows());
          if (wants(n.b))
            nodes_[static_cast<size_t>(n.b)].grad += n.grad.bottomRows(value(n.b).rows());
          break;
        case Op::kCol:
          if (wants(n.a))
            nodes_[static_cast<size_t>(n.a)].grad.col(n.aux_i) += n.grad;
          break;
        case Op::kSum:
          if (wants(n.a))
            nodes_[static_cast<size_t>(n.a)].grad.array() += n.grad(0, 0);
          break;
        case Op::kMean:
          if (wants(n.a))
            nodes_[static_cast<size_t>(n.a)].grad.array() +=
                n.grad(0, 0) / static_cast<S>(value(n.a).size());
          break;
        case Op::kBceMean:
          if (wants(n.a)) {
            const S lo = static_cast<S>(1e-7), hi = static_cast<S>(1) - static_cast<S>(1e-7);
            Mat<S>& pg = nodes_[static_cast<size_t>(n.a)].grad;
            const Mat<S>& pv = value(n.a);
            const S g0 = n.grad(0, 0) / static_cast<S>(pv.cols());
            for (long c = 0; c < pv.cols(); ++c) {
              const S p = pv(0, c);
              if (p <= lo || p >= hi) continue;  // flat in the clamp region
              const S y = n.aux_m(0, c);
              pg(0, c) += g0 * (p - y) / (p * (static_cast<S>(1) - p));
            }
          }
          break;
      }
    }
  }

 private:
  std::vector<Node> nodes_;

  bool wants(int idx) const {
    return idx >= 0 && nodes_[static_cast<size_t>(idx)].needs_grad;
  }

  void accum(int idx, const Mat<S>& g) {
    if (wants(idx)) nodes_[static_cast<size_t>(idx)].grad += g;
  }

  void require_same_shape(int a, int b, const char* what) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw DataError(std::string("nn: ") + what + " shape mismatch");
  }

  int unary_or_binary(Op op, int a, int b, Mat<S> v) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.needs_grad = (a >= 0 && nodes_[static_cast<size_t>(a)].needs_grad) ||
                   (b >= 0 && nodes_[static_cast<size_t>(b)].needs_grad);
    n.value = std::move(v);
    return push(std::move(n));
  }

  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size() - 1);
  }
};

// --- GRU ---------------------------------------------------------------------
// Convention pinned by the tests:
//   z_t = sig(Wz x + Uz h + bz); r_t likewise;
//   hc  = tanh(Wh x + Uh (r . h) + bh);
//   h_t = (1 - z) . h_{t-1} + z . hc

struct GruDirection {
  int wz = -1, wr = -1, wh = -1;
  int uz = -1, ur = -1, uh = -1;
  int bz = -1, br = -1, bh = -1;
};

struct GruParams {
  int input_size = 0;
  int hidden_size = 0;
  int layers = 1;
  bool bidirectional = false;
  std::vector<GruDirection> fwd;  // per layer
  std::vector<GruDirection> bwd;  // per layer, bidirectional only

  int output_size() const { return bidirectional ? 2 * hidden_size : hidden_size; }
};

template <class S>
GruDirection make_gru_direction(ParamSet<S>& ps, const std::string& prefix, int input_size,
                                int hidden_size, std::mt19937_64& rng) {
  GruDirection d;
  const S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hidden_size)));
  auto weight = [&](const char* name, long rows, long cols) {
    const int idx = ps.add(prefix + name, rows, cols);
    init_uniform(ps, idx, bound, rng);
    return idx;
  };
  d.wz = weight(".wz", hidden_size, input_size);
  d.wr = weight(".wr", hidden_size, input_size);
  d.wh = weight(".wh", hidden_size, input_size);
  d.uz = weight(".uz", hidden_size, hidden_size);
  d.ur = weight(".ur", hidden_size, hidden_size);
  d.uh = weight(".uh", hidden_size, hidden_size);
  d.bz = ps.add(prefix + ".bz", hidden_size, 1);
  d.br = ps.add(prefix + ".br", hidden_size, 1);
  d.bh = ps.add(prefix + ".bh", hidden_size, 1);
  return d;
}

template <class S>
GruParams make_gru(ParamSet<S>& ps, const std::string& prefix, int input_size, int hidden_size,
                   int layers, bool bidirectional, std::mt19937_64& rng) {
  if (input_size < 1 || hidden_size < 1 || layers < 1)
    throw ConfigError("nn: bad GRU dimensions");
  GruParams gru;
  gru.input_size = input_size;
  gru.hidden_size = hidden_size;
  gru.layers = layers;
  gru.bidirectional = bidirectional;
  int in = input_size;
  for (int layer = 0; layer < layers; ++layer) {
    const std::string base = prefix + ".l" + std::to_string(layer);
    gru.fwd.push_back(make_gru_direction(ps, base + ".f", in, hidden_size, rng));
    if (bidirectional) gru.bwd.push_back(make_gru_direction(ps, base + ".b", in, hidden_size, rng));
    in = bidirectional ? 2 * hidden_size : hidden_size;
  }
  return gru;
}

template <class S>
struct GruResult {
  std::vector<int> outputs;  // per step, aligned to input positions
  int final_state = -1;      // last layer; forward+backward concatenated
};

namespace detail {

template <class S>
std::vector<int> gru_direction_pass(Tape<S>& tape, ParamSet<S>& ps, const GruDirection& d,
                                    const std::vector<int>& xs, long batch, int hidden,
                                    bool reverse) {
  const int wz = tape.param(ps, d.wz), wr = tape.param(ps, d.wr), wh = tape.param(ps, d.wh);
  const int uz = tape.param(ps, d.uz), ur = tape.param(ps, d.ur), uh = tape.param(ps, d.uh);
  const int bz = tape.param(ps, d.bz), br = tape.param(ps, d.br), bh = tape.param(ps, d.bh);
  int h = tape.constant(Mat<S>::Zero(hidden, batch));
  std::vector<int> states(xs.size(), -1);
  const long n = static_cast<long>(xs.size());
  for (long step = 0; step < n; ++step) {
    const long t = reverse ? n - 1 - step : step;
    const int x = xs[static_cast<size_t>(t)];
    const int z = tape.sigmoid(tape.add_colvec(tape.add(tape.matmul(wz, x), tape.matmul(uz, h)), bz));
    const int r = tape.sigmoid(tape.add_colvec(tape.add(tape.matmul(wr, x), tape.matmul(ur, h)), br));
    const int hc = tape.tanh(
        tape.add_colvec(tape.add(tape.matmul(wh, x), tape.matmul(uh, tape.mul(r, h))), bh));
    h = tape.add(tape.mul(tape.one_minus(z), h), tape.mul(z, hc));
    states[static_cast<size_t>(t)] = h;
  }
  return states;
}

}  // namespace detail

// Forward over one sequence of (input_size x B) step nodes.
template <class S>
GruResult<S> gru_forward(Tape<S>& tape, ParamSet<S>& ps, const GruParams& gru,
                         const std::vector<int>& inputs) {
  if (inputs.empty()) throw DataError("nn: GRU requires a non-empty sequence");
  const long batch = tape.value(inputs.front()).cols();
  for (int x : inputs)
    if (tape.value(x).cols() != batch) throw DataError("nn: ragged GRU batch");
  if (tape.value(inputs.front()).rows() != gru.input_size)
    throw DataError("nn: GRU input size mismatch");

  std::vector<int> layer_in = inputs;
  GruResult<S> result;
  for (int layer = 0; layer < gru.layers; ++layer) {
    const auto fwd = detail::gru_direction_pass(tape, ps, gru.fwd[static_cast<size_t>(layer)],
                                                layer_in, batch, gru.hidden_size, false);
    std::vector<int> outs;
    int final_state;
    if (gru.bidirectional) {
      const auto bwd = detail::gru_direction_pass(tape, ps, gru.bwd[static_cast<size_t>(layer)],
                                                  layer_in, batch, gru.hidden_size, true);
      for (size_t t = 0; t < fwd.size(); ++t) outs.push_back(tape.concat_rows(fwd[t], bwd[t]));
      final_state = tape.concat_rows(fwd.back(), bwd.front());
    } else {
      outs = fwd;
      final_state = fwd.back();
    }
    result.outputs = outs;
    result.final_state = final_state;
    layer_in = std::move(outs);
  }
  return result;
}

// Variable-length batching: sequences of equal length run as one column
// batch, so no padded step ever exists. Returns one final-state node per
// sequence, aligned with the input order.
template <class S>
std::vector<int> gru_forward_bucketed(Tape<S>& tape, ParamSet<S>& ps, const GruParams& gru,
                                      const std::vector<std::vector<Mat<S>>>& sequences) {
  std::vector<int> finals(sequences.size(), -1);
  std::vector<std::pair<size_t, std::vector<size_t>>> buckets;  // length -> indices
  for (size_t i = 0; i < sequences.size(); ++i) {
    const size_t len = sequences[i].size();
    if (len == 0) throw DataError("nn: GRU requires a non-empty sequence");
    auto it = std::find_if(buckets.begin(), buckets.end(),
                           [&](const auto& b) { return b.first == len; });
    if (it == buckets.end()) {
      buckets.push_back({len, {i}});
    } else {
      it->second.push_back(i);
    }
  }
  for (const auto& [len, members] : buckets) {
    std::vector<int> xs;
    for (size_t t = 0; t < len; ++t) {
      Mat<S> step(gru.input_size, static_cast<long>(members.size()));
      for (size_t b = 0; b < members.size(); ++b) step.col(static_cast<long>(b)) = sequences[members[b]][t];
      xs.push_back(tape.constant(std::move(step)));
    }
    const GruResult<S> result = gru_forward(tape, ps, gru, xs);
    for (size_t b = 0; b < members.size(); ++b)
      finals[members[b]] = tape.col(result.final_state, static_cast<int>(b));
  }
  return finals;
}

// --- MLP ---------------------------------------------------------------------

struct MlpParams {
  std::vector<int> weights;
  std::vector<int> biases;
  std::string activation = "relu";  // hidden layers; final layer is linear
  int input_size = 0;
};

template <class S>
MlpParams make_mlp(ParamSet<S>& ps, const std::string& prefix, int input_size,
                   const std::vector<int>& hidden, std::mt19937_64& rng,
                   const std::string& activation = "relu") {
  if (activation != "relu" && activation != "tanh")
    throw ConfigError("nn: unknown MLP activation '" + activation + "'");
  MlpParams mlp;
  mlp.activation = activation;
  mlp.input_size = input_size;
  int in = input_size;
  std::vector<int> widths = hidden;
  widths.push_back(1);  // scalar head
  for (size_t layer = 0; layer < widths.size(); ++layer) {
    const int out = widths[layer];
    const int w = ps.add(prefix + ".w" + std::to_string(layer), out, in);
    init_uniform(ps, w, static_cast<S>(1.0 / std::sqrt(static_cast<double>(in))), rng);
    const int b = ps.add(prefix + ".b" + std::to_string(layer), out, 1);
    mlp.weights.push_back(w);
    mlp.biases.push_back(b);
    in = out;
  }
  return mlp;
}

// Optional inverted-dropout masks (already scaled by 1/(1-rate)), one per
// hidden layer.
template <class S>
int mlp_forward(Tape<S>& tape, ParamSet<S>& ps, const MlpParams& mlp, int x,
                const std::vector<Mat<S>>* dropout_masks = nullptr) {
  int h = x;
  for (size_t layer = 0; layer < mlp.weights.size(); ++layer) {
    const int w = tape.param(ps, mlp.weights[layer]);
    const int b = tape.param(ps, mlp.biases[layer]);
    h = tape.add_colvec(tape.matmul(w, h), b);
    if (layer + 1 < mlp.weights.size()) {
      h = mlp.activation == "relu" ? tape.relu(h) : tape.tanh(h);
      if (dropout_masks && layer < dropout_masks->size())
        h = tape.mul(h, tape.constant((*dropout_masks)[layer]));
    }
  }
  return h;  // logits, 1 x B
}

// --- optimizers ----------------------------------------------------------------

template <class S>
struct SgdConfig {
  S lr = static_cast<S>(0.01);
  S momentum = static_cast<S>(0);
};

template <class S>
struct SgdState {
  std::vector<Mat<S>> velocity;
};

template <class S>
void sgd_step(ParamSet<S>& ps, SgdState<S>& state, const SgdConfig<S>& cfg) {
  if (state.velocity.empty()) {
    for (const auto& item : ps.items)
      state.velocity.push_back(Mat<S>::Zero(item.value.rows(), item.value.cols()));
  }
  for (size_t i = 0; i < ps.items.size(); ++i) {
    auto& item = ps.items[i];
    if (cfg.momentum != static_cast<S>(0)) {
      state.velocity[i] = cfg.momentum * state.velocity[i] + item.grad;
      item.value -= cfg.lr * state.velocity[i];
    } else {
      item.value -= cfg.lr * item.grad;
    }
  }
}

template <class S>
struct AdamWConfig {
  S lr = static_cast<S>(1e-3);
  S beta1 = static_cast<S>(0.9);
  S beta2 = static_cast<S>(0.999);
  S eps = static_cast<S>(1e-8);
  S weight_decay = static_cast<S>(0);
};

template <class S>
struct AdamWState {
  std::vector<Mat<S>> m, v;
  int64_t step = 0;
};

template <class S>
void adamw_step(ParamSet<S>& ps, AdamWState<S>& state, const AdamWConfig<S>& cfg) {
  if (state.m.empty()) {
    for (const auto& item : ps.items) {
      state.m.push_back(Mat<S>::Zero(item.value.rows(), item.value.cols()));
      state.v.push_back(Mat<S>::Zero(item.value.rows(), item.value.cols()));
    }
  }
  ++state.step;
  const S bc1 = static_cast<S>(1) - static_cast<S>(std::pow(static_cast<double>(cfg.beta1),
                                                            static_cast<double>(state.step)));
  const S bc2 = static_cast<S>(1) - static_cast<S>(std::pow(static_cast<double>(cfg.beta2),
                                                            static_cast<double>(state.step)));
  for (size_t i = 0; i < ps.items.size(); ++i) {
    auto& item = ps.items[i];
    state.m[i] = cfg.beta1 * state.m[i] + (static_cast<S>(1) - cfg.beta1) * item.grad;
    state.v[i] = cfg.beta2 * state.v[i] +
                 (static_cast<S>(1) - cfg.beta2) * item.grad.cwiseProduct(item.grad);
    const Mat<S> m_hat = state.m[i] / bc1;
    const Mat<S> v_hat = state.v[i] / bc2;
    const Mat<S> denom = (v_hat.array().sqrt() + cfg.eps).matrix();
    item.value -= cfg.lr * m_hat.cwiseQuotient(denom);
    if (cfg.weight_decay != static_cast<S>(0))
      item.value -= cfg.lr * cfg.weight_decay * item.value;
  }
}

// --- checkpoints ----------------------------------------------------------------

inline constexpr uint32_t kCheckpointMagic = 0x544e4e31;  // "TNN1"

template <class S>
void save_params_stream(const ParamSet<S>& ps, std::ostream& out) {
  auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
  put(kCheckpointMagic);
  const uint32_t version = 1;
  put(version);
  const uint8_t scalar_size = sizeof(S);
  put(scalar_size);
  const uint64_t count = ps.items.size();
  put(count);
  for (const auto& item : ps.items) {
    const uint32_t name_len = static_cast<uint32_t>(item.name.size());
    put(name_len);
    out.write(item.name.data(), name_len);
    const uint64_t rows = static_cast<uint64_t>(item.value.rows());
    const uint64_t cols = static_cast<uint64_t>(item.value.cols());
    put(rows);
    put(cols);
    out.write(reinterpret_cast<const char*>(item.value.data()),
              static_cast<std::streamsize>(sizeof(S) * item.value.size()));
  }
  if (!out) throw DataError("checkpoint write failed");
}

// Loads into an already-constructed ParamSet; names and shapes must match.
template <class S>
void load_params_stream(ParamSet<S>& ps, std::istream& in) {
  auto get = [&](auto& v) { in.read(reinterpret_cast<char*>(&v), sizeof v); };
  uint32_t magic = 0, version = 0;
  get(magic);
  get(version);
  if (magic != kCheckpointMagic || version != 1) throw DataError("bad checkpoint header");
  uint8_t scalar_size = 0;
  get(scalar_size);
  if (scalar_size != sizeof(S)) throw DataError("checkpoint scalar width mismatch");
  uint64_t count = 0;
  get(count);
  if (count != ps.items.size()) throw DataError("checkpoint parameter count mismatch");
  for (auto& item : ps.items) {
    uint32_t name_len = 0;
    get(name_len);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint64_t rows = 0, cols = 0;
    get(rows);
    get(cols);
    if (name != item.name || rows != static_cast<uint64_t>(item.value.rows()) ||
        cols != static_cast<uint64_t>(item.value.cols()))
      throw DataError("checkpoint layout mismatch at '" + name + "'");
    in.read(reinterpret_cast<char*>(item.value.data()),
            static_cast<std::streamsize>(sizeof(S) * item.value.size()));
  }
  if (!in) throw DataError("truncated checkpoint");
}

}  // namespace txcat::nn

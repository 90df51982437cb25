#include <cmath>

#include "fedadapt/errors.hpp"
#include "layer_internal.hpp"

namespace fedadapt {
namespace {

// y = W x (W is rows x cols, x has cols entries)
void matvec(const Tensor& w, std::span<const double> x, std::vector<double>& y) {
  y.assign(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto row = w.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

// y += W^T g
void matvec_t_add(const Tensor& w, std::span<const double> g, std::vector<double>& y) {
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto row = w.row(r);
    const double gr = g[r];
    if (gr == 0.0) continue;
    for (std::size_t c = 0; c < row.size(); ++c) y[c] += row[c] * gr;
  }
}

// G += a b^T
void outer_add(Tensor& g, std::span<const double> a, std::span<const double> b) {
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const double ar = a[r];
    if (ar == 0.0) continue;
    auto row = g.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += ar * b[c];
  }
}

void check_shape(const Tensor* t, std::size_t rows, std::size_t cols, const char* what) {
  if (!t) throw ShapeError(std::string("missing ") + what);
  if (t->rows() != rows || t->cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", got " + std::to_string(t->rows()) + "x" +
                     std::to_string(t->cols()));
  }
}

}  // namespace

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double bce_loss(std::span<const double> predictions, std::span<const double> labels) {
  if (predictions.empty()) throw ValidationError("bce_loss on an empty batch");
  if (predictions.size() != labels.size()) throw ShapeError("bce_loss: length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = std::clamp(predictions[i], kBceEpsilon, 1.0 - kBceEpsilon);
    const double y = labels[i];
    sum += y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return -sum / static_cast<double>(predictions.size());
}

std::vector<double> layer_forward(std::span<const double> x, const LayerView& layer,
                                  LayerTrace* trace, std::span<const double> forced_weights) {
  const std::size_t d = x.size();
  check_shape(layer.weight, layer.weight ? layer.weight->rows() : 0, d, "layer weight");
  const std::size_t k = layer.weight->rows();
  check_shape(layer.bias, k, 1, "layer bias");
  const std::size_t n_branches = layer.branch_count();

  LayerTrace local;
  LayerTrace& t = trace ? *trace : local;
  t.input.assign(x.begin(), x.end());
  t.branches.resize(n_branches);
  t.adapter_mid.resize(layer.adapters.size());

  matvec(*layer.weight, x, t.branches[0]);
  for (std::size_t i = 0; i < k; ++i) t.branches[0][i] += (*layer.bias)[i];

  for (std::size_t a = 0; a < layer.adapters.size(); ++a) {
    const auto& ad = layer.adapters[a];
    const std::size_t r = ad.down ? ad.down->rows() : 0;
    check_shape(ad.down, r, d, "adapter W_b");
    check_shape(ad.up, k, r, "adapter W_a");
    matvec(*ad.down, x, t.adapter_mid[a]);
    matvec(*ad.up, t.adapter_mid[a], t.branches[a + 1]);
  }

  t.weights.assign(n_branches, 0.0);
  if (!forced_weights.empty()) {
    if (forced_weights.size() != n_branches) throw ShapeError("forced gate weights: wrong length");
    t.weights.assign(forced_weights.begin(), forced_weights.end());
  } else if (n_branches == 1) {
    t.weights[0] = 1.0;
  } else if (layer.gate == GateMode::kAdaptive) {
    const std::size_t h = layer.gate_in ? layer.gate_in->rows() : 0;
    check_shape(layer.gate_in, h, d, "gate W1");
    check_shape(layer.gate_out, n_branches, h, "gate W2");
    matvec(*layer.gate_in, x, t.gate_pre);
    t.gate_hidden.resize(h);
    for (std::size_t i = 0; i < h; ++i) t.gate_hidden[i] = std::max(0.0, t.gate_pre[i]);
    std::vector<double> z;
    matvec(*layer.gate_out, t.gate_hidden, z);
    const double zmax = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (std::size_t j = 0; j < n_branches; ++j) {
      t.weights[j] = std::exp(z[j] - zmax);
      total += t.weights[j];
    }
    for (auto& w : t.weights) w /= total;
  } else if (layer.gate == GateMode::kUniform) {
    t.weights.assign(n_branches, 1.0 / static_cast<double>(n_branches));
  } else {
    throw ShapeError("layer has adapter branches but no gate");
  }

  t.fused.assign(k, 0.0);
  for (std::size_t j = 0; j < n_branches; ++j) {
    const double w = t.weights[j];
    const auto& b = t.branches[j];
    for (std::size_t i = 0; i < k; ++i) t.fused[i] += w * b[i];
  }
  t.output.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    t.output[i] = layer.activation == Activation::kRelu ? std::max(0.0, t.fused[i])
                                                        : sigmoid(t.fused[i]);
  }
  return t.output;
}

namespace detail {

void layer_backward(const LayerView& layer, const LayerTrace& trace,
                    std::span<const double> d_fused, bool gate_is_fixed, LayerGrads& grads,
                    std::vector<double>* d_input) {
  const std::size_t n_branches = layer.branch_count();
  const std::size_t k = d_fused.size();
  std::span<const double> x = trace.input;
  if (d_input) d_input->assign(x.size(), 0.0);

  std::vector<double> d_branch(k);
  auto scaled = [&](std::size_t j) {
    for (std::size_t i = 0; i < k; ++i) d_branch[i] = trace.weights[j] * d_fused[i];
  };

  // Common branch: W x + b.
  scaled(0);
  if (grads.weight) outer_add(*grads.weight, d_branch, x);
  if (grads.bias) {
    for (std::size_t i = 0; i < k; ++i) (*grads.bias)[i] += d_branch[i];
  }
  if (d_input) matvec_t_add(*layer.weight, d_branch, *d_input);

  // Adapter branches: W_a (W_b x).
  std::vector<double> d_mid;
  for (std::size_t a = 0; a < layer.adapters.size(); ++a) {
    const auto& ad = layer.adapters[a];
    scaled(a + 1);
    if (grads.adapter_up.size() > a && grads.adapter_up[a]) {
      outer_add(*grads.adapter_up[a], d_branch, trace.adapter_mid[a]);
    }
    d_mid.assign(ad.up->cols(), 0.0);
    matvec_t_add(*ad.up, d_branch, d_mid);
    if (grads.adapter_down.size() > a && grads.adapter_down[a]) {
      outer_add(*grads.adapter_down[a], d_mid, x);
    }
    if (d_input) matvec_t_add(*ad.down, d_mid, *d_input);
  }

  if (gate_is_fixed || n_branches == 1 || layer.gate != GateMode::kAdaptive) return;

  // Softmax gate: w = softmax(W2 relu(W1 x)).
  std::vector<double> d_w(n_branches);
  double mean = 0.0;
  for (std::size_t j = 0; j < n_branches; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) acc += d_fused[i] * trace.branches[j][i];
    d_w[j] = acc;
    mean += trace.weights[j] * acc;
  }
  std::vector<double> d_z(n_branches);
  for (std::size_t j = 0; j < n_branches; ++j) d_z[j] = trace.weights[j] * (d_w[j] - mean);
  if (grads.gate_out) outer_add(*grads.gate_out, d_z, trace.gate_hidden);
  std::vector<double> d_h(trace.gate_hidden.size(), 0.0);
  matvec_t_add(*layer.gate_out, d_z, d_h);
  for (std::size_t i = 0; i < d_h.size(); ++i) {
    if (trace.gate_pre[i] <= 0.0) d_h[i] = 0.0;
  }
  if (grads.gate_in) outer_add(*grads.gate_in, d_h, x);
  if (d_input) matvec_t_add(*layer.gate_in, d_h, *d_input);
}

}  // namespace detail
}  // namespace fedadapt

#pragma once

#include <span>
#include <vector>

#include "fedadapt/model.hpp"

namespace fedadapt::detail {

// Gradient accumulators for one layer; null entries are not accumulated
// (frozen tensors), but gradients still flow through them to the input.
struct LayerGrads {
  Tensor* weight = nullptr;
  Tensor* bias = nullptr;
  std::vector<Tensor*> adapter_up;
  std::vector<Tensor*> adapter_down;
  Tensor* gate_in = nullptr;
  Tensor* gate_out = nullptr;
};

// Backpropagates d_fused (gradient w.r.t. the fused pre-activation) through
// one layer. When `d_input` is non-null it receives dL/dx.
void layer_backward(const LayerView& layer, const LayerTrace& trace,
                    std::span<const double> d_fused, bool gate_is_fixed, LayerGrads& grads,
                    std::vector<double>* d_input);

}  // namespace fedadapt::detail

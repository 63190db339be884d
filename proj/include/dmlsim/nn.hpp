#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dmlsim/error.hpp"

namespace dmlsim {

enum class Activation { relu, identity };

struct LayerSpec {
  uint32_t in = 0;
  uint32_t out = 0;
  Activation act = Activation::identity;

  bool operator==(const LayerSpec&) const = default;
};

// Dense multi-layer perceptron description. The loss attached to a complete
// model is always softmax-cross-entropy over the final identity layer.
struct ModelSpec {
  std::vector<LayerSpec> layers;
  uint32_t param_dtype_bytes = 4;  // bytes per scalar on the wire

  // require_logit_output: a complete trainable model must end with an
  // identity layer; partial networks produced by cutting do not.
  void validate(bool require_logit_output = true) const;

  uint32_t input_width() const { return layers.front().in; }
  uint32_t output_width() const { return layers.back().out; }
  uint64_t param_count() const;
  uint64_t param_bytes() const { return param_count() * param_dtype_bytes; }
  uint64_t fingerprint() const;

  bool operator==(const ModelSpec&) const = default;

  // widths = {in, h1, ..., out}; relu on hidden layers, identity on the last.
  static ModelSpec mlp(const std::vector<uint32_t>& widths,
                       uint32_t dtype_bytes = 4);
};

// Row-major matrix of doubles.
struct Matrix {
  size_t rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(size_t r, size_t c) { return data[r * cols + c]; }
  double at(size_t r, size_t c) const { return data[r * cols + c]; }

  bool operator==(const Matrix&) const = default;
};

struct Model {
  ModelSpec spec;
  std::vector<Matrix> weights;              // per layer, out x in
  std::vector<std::vector<double>> biases;  // per layer, out

  bool operator==(const Model&) const = default;
};

struct Batch {
  Matrix inputs;  // batch_size x input_width
  std::vector<uint32_t> labels;
  size_t size() const { return inputs.rows; }
};

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
};

// Activation cache produced by forward() and consumed by backward().
struct ForwardPass {
  uint64_t spec_fingerprint = 0;
  std::vector<Matrix> inputs;   // inputs[i] = input to layer i
  std::vector<Matrix> pre_act;  // pre_act[i] = W x + b at layer i
  Matrix logits;                // post-activation of the last layer
};

// Deterministic initialization: weights uniform in +-sqrt(6/(fan_in+fan_out)),
// biases zero. Identical (spec, seed) yields bit-identical models.
Model init_model(const ModelSpec& spec, uint64_t seed);

ForwardPass forward(const Model& model, const Matrix& inputs);

// Mean softmax-cross-entropy over the batch, log-sum-exp stabilized.
// Gradient w.r.t. logits is (softmax - one_hot) / batch_size.
std::pair<double, Matrix> loss_and_grad(const Matrix& logits,
                                        const std::vector<uint32_t>& labels);

// grad_output is the gradient w.r.t. the model's post-activation output.
// When input_grad is non-null it receives the gradient w.r.t. the model
// input (needed to continue backprop across a network cut).
Gradients backward(const Model& model, const ForwardPass& fwd,
                   const Matrix& grad_output, Matrix* input_grad = nullptr);

// w <- w - lr * g, elementwise. Throws on non-finite gradients.
Model sgd_step(Model model, const Gradients& grads, double lr);

struct GradCheckResult {
  double max_rel_error = 0.0;
  size_t layer = 0;
  size_t index = 0;  // flat index within the layer's weight block (or bias)
  bool is_bias = false;
  double analytic = 0.0;
  double numeric = 0.0;
  size_t checked = 0;
};

// Central finite differences over all parameters (a seeded subsample when the
// model has more than 10,000). Relative error is measured against the
// finite-difference value with an absolute floor of 1e-4.
GradCheckResult grad_check(const Model& model, const Batch& batch, double eps,
                           uint64_t subsample_seed = 0);

// Same check against externally supplied gradients (fault-injection hook for
// the oracle tests).
GradCheckResult grad_check_against(const Model& model, const Batch& batch,
                                   double eps, const Gradients& grads,
                                   uint64_t subsample_seed = 0);

// Forward FLOPs: 2 * in * out per dense layer per sample.
uint64_t forward_flops(const ModelSpec& spec, uint64_t samples);

// Training FLOPs: backward counted as twice the forward cost, so training is
// 3x the forward total.
uint64_t count_flops(const ModelSpec& spec, uint64_t samples);

}  // namespace dmlsim

#include "dmlsim/nn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dmlsim/rng.hpp"

namespace dmlsim {

void ModelSpec::validate(bool require_logit_output) const {
  if (layers.empty()) fail(ErrorKind::shape, "ModelSpec: no layers");
  if (param_dtype_bytes == 0)
    fail(ErrorKind::shape, "ModelSpec: param_dtype_bytes must be positive");
  for (size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].in == 0 || layers[i].out == 0)
      fail(ErrorKind::shape,
           "ModelSpec: zero width at layer " + std::to_string(i));
    if (i + 1 < layers.size() && layers[i].out != layers[i + 1].in) {
      std::ostringstream os;
      os << "ModelSpec: layer " << i << " output width " << layers[i].out
         << " does not match layer " << i + 1 << " input width "
         << layers[i + 1].in;
      fail(ErrorKind::shape, os.str());
    }
  }
  if (require_logit_output && layers.back().act != Activation::identity)
    fail(ErrorKind::shape, "ModelSpec: final layer must be identity (logits)");
}

uint64_t ModelSpec::param_count() const {
  uint64_t n = 0;
  for (const auto& l : layers) n += uint64_t(l.in) * l.out + l.out;
  return n;
}

uint64_t ModelSpec::fingerprint() const {
  // FNV-1a over the structural fields.
  uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  feed(layers.size());
  for (const auto& l : layers) {
    feed(l.in);
    feed(l.out);
    feed(uint64_t(l.act));
  }
  feed(param_dtype_bytes);
  return h;
}

ModelSpec ModelSpec::mlp(const std::vector<uint32_t>& widths,
                         uint32_t dtype_bytes) {
  if (widths.size() < 2)
    fail(ErrorKind::shape, "ModelSpec::mlp: need at least two widths");
  ModelSpec spec;
  spec.param_dtype_bytes = dtype_bytes;
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    bool last = i + 2 == widths.size();
    spec.layers.push_back(
        {widths[i], widths[i + 1], last ? Activation::identity : Activation::relu});
  }
  spec.validate();
  return spec;
}

Model init_model(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  Model m;
  m.spec = spec;
  Rng rng(mix64(seed, spec.fingerprint()));
  for (const auto& l : spec.layers) {
    Matrix w(l.out, l.in);
    double limit = std::sqrt(6.0 / (double(l.in) + double(l.out)));
    for (double& v : w.data) v = rng.uniform(-limit, limit);
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(l.out, 0.0);
  }
  return m;
}

ForwardPass forward(const Model& model, const Matrix& inputs) {
  const ModelSpec& spec = model.spec;
  if (inputs.cols != spec.input_width()) {
    std::ostringstream os;
    os << "forward: input width " << inputs.cols << " != model input width "
       << spec.input_width();
    fail(ErrorKind::shape, os.str());
  }
  ForwardPass fwd;
  fwd.spec_fingerprint = spec.fingerprint();
  Matrix x = inputs;
  for (size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& l = spec.layers[li];
    const Matrix& w = model.weights[li];
    const std::vector<double>& b = model.biases[li];
    Matrix pre(x.rows, l.out);
    for (size_t r = 0; r < x.rows; ++r) {
      const double* xr = &x.data[r * x.cols];
      for (uint32_t o = 0; o < l.out; ++o) {
        const double* wo = &w.data[size_t(o) * l.in];
        double acc = b[o];
        for (uint32_t i = 0; i < l.in; ++i) acc += wo[i] * xr[i];
        pre.at(r, o) = acc;
      }
    }
    fwd.inputs.push_back(std::move(x));
    Matrix post = pre;
    if (l.act == Activation::relu)
      for (double& v : post.data) v = v > 0.0 ? v : 0.0;
    fwd.pre_act.push_back(std::move(pre));
    x = std::move(post);
  }
  fwd.logits = std::move(x);
  return fwd;
}

std::pair<double, Matrix> loss_and_grad(const Matrix& logits,
                                        const std::vector<uint32_t>& labels) {
  if (logits.rows != labels.size())
    fail(ErrorKind::shape, "loss_and_grad: logits rows != labels size");
  if (logits.rows == 0) fail(ErrorKind::shape, "loss_and_grad: empty batch");
  size_t classes = logits.cols;
  double loss = 0.0;
  Matrix grad(logits.rows, classes);
  double inv_batch = 1.0 / double(logits.rows);
  for (size_t r = 0; r < logits.rows; ++r) {
    if (labels[r] >= classes)
      fail(ErrorKind::data, "loss_and_grad: label " + std::to_string(labels[r]) +
                                " out of range for " + std::to_string(classes) +
                                " classes");
    const double* row = &logits.data[r * classes];
    double mx = row[0];
    for (size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (size_t c = 0; c < classes; ++c) sum += std::exp(row[c] - mx);
    double lse = mx + std::log(sum);
    loss += (lse - row[labels[r]]) * inv_batch;
    for (size_t c = 0; c < classes; ++c) {
      double p = std::exp(row[c] - lse);
      grad.at(r, c) = (p - (c == labels[r] ? 1.0 : 0.0)) * inv_batch;
    }
  }
  return {loss, grad};
}

Gradients backward(const Model& model, const ForwardPass& fwd,
                   const Matrix& grad_output, Matrix* input_grad) {
  const ModelSpec& spec = model.spec;
  size_t nl = spec.layers.size();
  if (fwd.spec_fingerprint != spec.fingerprint() || fwd.inputs.size() != nl ||
      fwd.pre_act.size() != nl)
    fail(ErrorKind::state, "backward: activation cache does not match model");
  if (grad_output.rows != fwd.logits.rows || grad_output.cols != fwd.logits.cols)
    fail(ErrorKind::shape, "backward: grad_output shape mismatch");

  Gradients g;
  g.weights.resize(nl);
  g.biases.resize(nl);
  Matrix delta = grad_output;
  for (size_t li = nl; li-- > 0;) {
    const LayerSpec& l = spec.layers[li];
    const Matrix& x = fwd.inputs[li];
    if (x.rows != delta.rows)
      fail(ErrorKind::state, "backward: stale activation cache (batch mismatch)");
    if (l.act == Activation::relu) {
      const Matrix& pre = fwd.pre_act[li];
      for (size_t k = 0; k < delta.data.size(); ++k)
        if (pre.data[k] <= 0.0) delta.data[k] = 0.0;
    }
    Matrix gw(l.out, l.in);
    std::vector<double> gb(l.out, 0.0);
    for (size_t r = 0; r < delta.rows; ++r) {
      const double* dr = &delta.data[r * l.out];
      const double* xr = &x.data[r * l.in];
      for (uint32_t o = 0; o < l.out; ++o) {
        double d = dr[o];
        gb[o] += d;
        double* gwo = &gw.data[size_t(o) * l.in];
        for (uint32_t i = 0; i < l.in; ++i) gwo[i] += d * xr[i];
      }
    }
    if (li > 0 || input_grad != nullptr) {
      const Matrix& w = model.weights[li];
      Matrix prev(delta.rows, l.in);
      for (size_t r = 0; r < delta.rows; ++r) {
        const double* dr = &delta.data[r * l.out];
        double* pr = &prev.data[r * l.in];
        for (uint32_t o = 0; o < l.out; ++o) {
          double d = dr[o];
          const double* wo = &w.data[size_t(o) * l.in];
          for (uint32_t i = 0; i < l.in; ++i) pr[i] += d * wo[i];
        }
      }
      delta = std::move(prev);
    }
    g.weights[li] = std::move(gw);
    g.biases[li] = std::move(gb);
  }
  if (input_grad != nullptr) *input_grad = std::move(delta);
  return g;
}

Model sgd_step(Model model, const Gradients& grads, double lr) {
  if (!(lr > 0.0)) fail(ErrorKind::config, "sgd_step: lr must be positive");
  if (grads.weights.size() != model.weights.size())
    fail(ErrorKind::shape, "sgd_step: gradient layer count mismatch");
  for (size_t li = 0; li < model.weights.size(); ++li) {
    Matrix& w = model.weights[li];
    const Matrix& gw = grads.weights[li];
    if (gw.rows != w.rows || gw.cols != w.cols)
      fail(ErrorKind::shape, "sgd_step: gradient shape mismatch at layer " +
                                 std::to_string(li));
    for (size_t k = 0; k < w.data.size(); ++k) {
      if (!std::isfinite(gw.data[k]))
        fail(ErrorKind::numeric, "sgd_step: non-finite weight gradient");
      w.data[k] -= lr * gw.data[k];
    }
    std::vector<double>& b = model.biases[li];
    const std::vector<double>& gb = grads.biases[li];
    if (gb.size() != b.size())
      fail(ErrorKind::shape, "sgd_step: bias gradient size mismatch");
    for (size_t k = 0; k < b.size(); ++k) {
      if (!std::isfinite(gb[k]))
        fail(ErrorKind::numeric, "sgd_step: non-finite bias gradient");
      b[k] -= lr * gb[k];
    }
  }
  return model;
}

namespace {

double batch_loss(const Model& model, const Batch& batch) {
  ForwardPass fwd = forward(model, batch.inputs);
  return loss_and_grad(fwd.logits, batch.labels).first;
}

// Flat view over (layer, weight-or-bias, index) coordinates.
struct ParamCoord {
  size_t layer;
  bool is_bias;
  size_t index;
};

double* coord_ptr(Model& m, const ParamCoord& c) {
  return c.is_bias ? &m.biases[c.layer][c.index]
                   : &m.weights[c.layer].data[c.index];
}

}  // namespace

GradCheckResult grad_check_against(const Model& model, const Batch& batch,
                                   double eps, const Gradients& grads,
                                   uint64_t subsample_seed) {
  if (!(eps > 0.0) || eps > 1e-2)
    fail(ErrorKind::config, "grad_check: eps must be in (0, 1e-2]");

  std::vector<ParamCoord> coords;
  for (size_t li = 0; li < model.weights.size(); ++li) {
    for (size_t k = 0; k < model.weights[li].data.size(); ++k)
      coords.push_back({li, false, k});
    for (size_t k = 0; k < model.biases[li].size(); ++k)
      coords.push_back({li, true, k});
  }
  constexpr size_t kFullCheckLimit = 10000;
  constexpr size_t kSubsample = 1000;
  if (coords.size() > kFullCheckLimit) {
    Rng rng(mix64(subsample_seed, 0x67726164ULL));
    std::vector<ParamCoord> chosen;
    size_t want = std::max<size_t>(1, kSubsample);
    for (uint32_t idx : rng.sample_without_replacement(
             uint32_t(coords.size()), uint32_t(want)))
      chosen.push_back(coords[idx]);
    coords = std::move(chosen);
  }

  GradCheckResult result;
  Model probe = model;
  for (const ParamCoord& c : coords) {
    double* p = coord_ptr(probe, c);
    double saved = *p;
    *p = saved + eps;
    double lp = batch_loss(probe, batch);
    *p = saved - eps;
    double lm = batch_loss(probe, batch);
    *p = saved;
    double fd = (lp - lm) / (2.0 * eps);
    double analytic = c.is_bias ? grads.biases[c.layer][c.index]
                                : grads.weights[c.layer].data[c.index];
    // Relative to the finite-difference value with an absolute floor so that
    // near-zero coordinates do not dominate.
    double rel = std::abs(analytic - fd) / std::max(std::abs(fd), 1e-4);
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.layer = c.layer;
      result.index = c.index;
      result.is_bias = c.is_bias;
      result.analytic = analytic;
      result.numeric = fd;
    }
    ++result.checked;
  }
  return result;
}

GradCheckResult grad_check(const Model& model, const Batch& batch, double eps,
                           uint64_t subsample_seed) {
  ForwardPass fwd = forward(model, batch.inputs);
  auto [loss, grad_logits] = loss_and_grad(fwd.logits, batch.labels);
  (void)loss;
  Gradients grads = backward(model, fwd, grad_logits);
  return grad_check_against(model, batch, eps, grads, subsample_seed);
}

uint64_t forward_flops(const ModelSpec& spec, uint64_t samples) {
  uint64_t per_sample = 0;
  for (const auto& l : spec.layers) per_sample += 2ULL * l.in * l.out;
  return per_sample * samples;
}

uint64_t count_flops(const ModelSpec& spec, uint64_t samples) {
  return 3 * forward_flops(spec, samples);
}

}  // namespace dmlsim

#pragma once

#include <vector>

#include "irsnet/rng.hpp"

namespace irsnet {

// Affine map y = x W + b applied to row-major sample batches. Bias is kept
// as a 1 x out matrix so every trainable tensor shares one type.
struct DenseLayer {
  MatR weight;
  MatR bias;
};

// Variance-preserving fan-in initialization; `gain` is 2 for layers feeding
// a rectifier and 1 for linear outputs. Biases start at zero.
inline void init_dense(DenseLayer& layer, int in, int out, double gain, Rng& rng) {
  layer.weight.resize(in, out);
  const double sd = std::sqrt(gain / static_cast<double>(in));
  for (int c = 0; c < out; ++c)
    for (int r = 0; r < in; ++r) layer.weight(r, c) = sd * rng.normal();
  layer.bias = MatR::Zero(1, out);
}

inline MatR dense_forward(const DenseLayer& l, const MatR& x) {
  MatR y = x * l.weight;
  y.rowwise() += l.bias.row(0);
  return y;
}

// Accumulates parameter gradients; accumulates into *dx when given.
inline void dense_backward(const DenseLayer& l, const MatR& x, const MatR& dy, DenseLayer& grad,
                           MatR* dx) {
  grad.weight.noalias() += x.transpose() * dy;
  grad.bias.row(0) += dy.colwise().sum();
  if (dx) dx->noalias() += dy * l.weight.transpose();
}

/// Two-layer perceptron: rectified hidden layer, linear output.
struct Mlp {
  DenseLayer hidden;
  DenseLayer out;
};

inline void init_mlp(Mlp& m, int in, int hidden, int out, Rng& rng) {
  init_dense(m.hidden, in, hidden, 2.0, rng);
  init_dense(m.out, hidden, out, 1.0, rng);
}

struct MlpCache {
  MatR x;    // layer input
  MatR act;  // post-rectifier activation
};

inline MatR mlp_forward(const Mlp& m, MatR x, MlpCache& cache) {
  cache.x = std::move(x);
  cache.act = dense_forward(m.hidden, cache.x).cwiseMax(0.0);
  return dense_forward(m.out, cache.act);
}

inline void mlp_backward(const Mlp& m, const MlpCache& cache, const MatR& dy, Mlp& grad, MatR* dx) {
  MatR dact = MatR::Zero(cache.act.rows(), cache.act.cols());
  dense_backward(m.out, cache.act, dy, grad.out, &dact);
  dact.array() *= (cache.act.array() > 0.0).cast<double>();
  dense_backward(m.hidden, cache.x, dact, grad.hidden, dx);
}

template <class F>
void visit_dense(DenseLayer& l, const std::string& name, F&& f) {
  f(name + ".w", l.weight);
  f(name + ".b", l.bias);
}

template <class F>
void visit_mlp(Mlp& m, const std::string& name, F&& f) {
  visit_dense(m.hidden, name + ".hidden", f);
  visit_dense(m.out, name + ".out", f);
}

// Moment-based adaptive gradient optimizer with bias correction.
struct AdamState {
  std::vector<MatR> m;
  std::vector<MatR> v;
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

inline void adam_init(AdamState& state, const std::vector<MatR*>& params) {
  state.m.clear();
  state.v.clear();
  state.step = 0;
  for (const MatR* p : params) {
    state.m.push_back(MatR::Zero(p->rows(), p->cols()));
    state.v.push_back(MatR::Zero(p->rows(), p->cols()));
  }
}

inline void adam_step(AdamState& state, const std::vector<MatR*>& params,
                      const std::vector<const MatR*>& grads, double lr) {
  if (params.size() != state.m.size() || grads.size() != params.size())
    throw ConfigError("adam_step: parameter list does not match optimizer state");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const MatR& g = *grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.cwiseProduct(g);
    params[i]->array() -=
        lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + state.epsilon);
  }
}

}  // namespace irsnet

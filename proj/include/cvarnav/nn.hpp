#pragma once

// Minimal dense feedforward machinery: forward pass, reverse-mode gradients,
// Adam updates, Polyak target averaging and a self-describing text format.
// Everything is 64-bit; forward evaluation is pure and allocation-light so
// nets can be evaluated concurrently from many threads.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvarnav/rng.hpp"
#include "cvarnav/textio.hpp"

namespace cvarnav {

enum class Activation { Tanh, Identity, Relu };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
  }
  throw std::logic_error("bad activation tag");
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::Relu;
  throw std::runtime_error("unknown activation '" + s + "'");
}

struct Layer {
  int in = 0;
  int out = 0;
  std::vector<double> W;  // row-major, W[r*in + c]
  std::vector<double> b;
  Activation act = Activation::Identity;
};

struct DenseNet {
  std::vector<Layer> layers;

  int input_width() const { return layers.empty() ? 0 : layers.front().in; }
  int output_width() const { return layers.empty() ? 0 : layers.back().out; }

  void validate() const {
    for (size_t l = 0; l < layers.size(); ++l) {
      const Layer& L = layers[l];
      if (L.in <= 0 || L.out <= 0) throw std::runtime_error("layer with nonpositive width");
      if (L.W.size() != static_cast<size_t>(L.in) * L.out || L.b.size() != static_cast<size_t>(L.out))
        throw std::runtime_error("layer weight/bias size does not match declared widths");
      if (l > 0 && layers[l - 1].out != L.in)
        throw std::runtime_error("adjacent layer widths do not chain");
    }
  }
};

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
inline Layer make_layer(int in, int out, Activation act, Rng& rng) {
  Layer L;
  L.in = in;
  L.out = out;
  L.act = act;
  L.W.resize(static_cast<size_t>(in) * out);
  L.b.resize(out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& w : L.W) w = rng.uniform(-bound, bound);
  for (auto& b : L.b) b = rng.uniform(-bound, bound);
  return L;
}

inline double apply_activation(Activation a, double z) {
  switch (a) {
    case Activation::Tanh: return std::tanh(z);
    case Activation::Identity: return z;
    case Activation::Relu: return z > 0.0 ? z : 0.0;
  }
  return z;
}

// derivative expressed through the post-activation value
inline double activation_deriv_from_value(Activation a, double v) {
  switch (a) {
    case Activation::Tanh: return 1.0 - v * v;
    case Activation::Identity: return 1.0;
    case Activation::Relu: return v > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

inline void affine_forward(const Layer& L, const double* x, double* out) {
  for (int r = 0; r < L.out; ++r) {
    double acc = L.b[r];
    const double* w = &L.W[static_cast<size_t>(r) * L.in];
    for (int c = 0; c < L.in; ++c) acc += w[c] * x[c];
    out[r] = apply_activation(L.act, acc);
  }
}

inline void forward(const DenseNet& net, std::span<const double> input, std::vector<double>& out) {
  if (static_cast<int>(input.size()) != net.input_width())
    throw std::runtime_error("forward: input length " + std::to_string(input.size()) +
                             " does not match net input width " + std::to_string(net.input_width()));
  std::vector<double> cur(input.begin(), input.end());
  std::vector<double> nxt;
  for (const Layer& L : net.layers) {
    nxt.resize(L.out);
    affine_forward(L, cur.data(), nxt.data());
    cur.swap(nxt);
  }
  out = std::move(cur);
}

inline std::vector<double> forward(const DenseNet& net, std::span<const double> input) {
  std::vector<double> out;
  forward(net, input, out);
  return out;
}

// Per-layer activations kept for the backward pass. acts[0] is the input,
// acts[l+1] the output of layer l.
struct ForwardTrace {
  std::vector<std::vector<double>> acts;
};

inline void forward_trace(const DenseNet& net, std::span<const double> input, ForwardTrace& tr) {
  if (static_cast<int>(input.size()) != net.input_width())
    throw std::runtime_error("forward_trace: input width mismatch");
  tr.acts.resize(net.layers.size() + 1);
  tr.acts[0].assign(input.begin(), input.end());
  for (size_t l = 0; l < net.layers.size(); ++l) {
    const Layer& L = net.layers[l];
    tr.acts[l + 1].resize(L.out);
    affine_forward(L, tr.acts[l].data(), tr.acts[l + 1].data());
  }
}

struct GradBuffer {
  std::vector<std::vector<double>> dW;
  std::vector<std::vector<double>> db;

  void init(const DenseNet& net) {
    dW.resize(net.layers.size());
    db.resize(net.layers.size());
    for (size_t l = 0; l < net.layers.size(); ++l) {
      dW[l].assign(net.layers[l].W.size(), 0.0);
      db[l].assign(net.layers[l].b.size(), 0.0);
    }
  }
  void zero() {
    for (auto& v : dW) std::fill(v.begin(), v.end(), 0.0);
    for (auto& v : db) std::fill(v.begin(), v.end(), 0.0);
  }
  void scale(double s) {
    for (auto& v : dW)
      for (auto& x : v) x *= s;
    for (auto& v : db)
      for (auto& x : v) x *= s;
  }
};

// Accumulates parameter gradients for one sample; optionally returns the
// gradient w.r.t. the network input (needed when chaining critic -> actor).
inline void backward(const DenseNet& net, const ForwardTrace& tr, std::span<const double> dLdout,
                     GradBuffer& grads, std::vector<double>* dLdinput = nullptr) {
  const size_t nl = net.layers.size();
  if (tr.acts.size() != nl + 1) throw std::runtime_error("backward: trace does not match net");
  if (static_cast<int>(dLdout.size()) != net.output_width())
    throw std::runtime_error("backward: output gradient width mismatch");

  std::vector<double> delta(dLdout.begin(), dLdout.end());
  std::vector<double> prev;
  for (size_t li = nl; li-- > 0;) {
    const Layer& L = net.layers[li];
    const std::vector<double>& a_out = tr.acts[li + 1];
    const std::vector<double>& a_in = tr.acts[li];
    // delta currently holds dL/d(activation output); convert to pre-activation
    for (int r = 0; r < L.out; ++r) delta[r] *= activation_deriv_from_value(L.act, a_out[r]);
    double* dW = grads.dW[li].data();
    for (int r = 0; r < L.out; ++r) {
      const double dz = delta[r];
      grads.db[li][r] += dz;
      double* dWr = dW + static_cast<size_t>(r) * L.in;
      for (int c = 0; c < L.in; ++c) dWr[c] += dz * a_in[c];
    }
    if (li > 0 || dLdinput != nullptr) {
      prev.assign(L.in, 0.0);
      for (int r = 0; r < L.out; ++r) {
        const double dz = delta[r];
        const double* w = &L.W[static_cast<size_t>(r) * L.in];
        for (int c = 0; c < L.in; ++c) prev[c] += dz * w[c];
      }
      delta.swap(prev);
    }
  }
  if (dLdinput != nullptr) *dLdinput = std::move(delta);
}

// Gradient w.r.t. the input only; parameter gradients are not touched.
// Used when chaining a frozen critic into the actor objective.
inline void backward_input_only(const DenseNet& net, const ForwardTrace& tr,
                                std::span<const double> dLdout, std::vector<double>& dLdinput) {
  const size_t nl = net.layers.size();
  if (tr.acts.size() != nl + 1) throw std::runtime_error("backward_input_only: bad trace");
  std::vector<double> delta(dLdout.begin(), dLdout.end());
  std::vector<double> prev;
  for (size_t li = nl; li-- > 0;) {
    const Layer& L = net.layers[li];
    const std::vector<double>& a_out = tr.acts[li + 1];
    for (int r = 0; r < L.out; ++r) delta[r] *= activation_deriv_from_value(L.act, a_out[r]);
    prev.assign(L.in, 0.0);
    for (int r = 0; r < L.out; ++r) {
      const double dz = delta[r];
      const double* w = &L.W[static_cast<size_t>(r) * L.in];
      for (int c = 0; c < L.in; ++c) prev[c] += dz * w[c];
    }
    delta.swap(prev);
  }
  dLdinput = std::move(delta);
}

// Adaptive-moment optimizer state; accumulator shapes mirror the net.
struct OptimizerState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step = 0;
  std::vector<std::vector<double>> mW, vW, mB, vB;

  void init(const DenseNet& net, double learning_rate) {
    lr = learning_rate;
    step = 0;
    mW.resize(net.layers.size());
    vW.resize(net.layers.size());
    mB.resize(net.layers.size());
    vB.resize(net.layers.size());
    for (size_t l = 0; l < net.layers.size(); ++l) {
      mW[l].assign(net.layers[l].W.size(), 0.0);
      vW[l].assign(net.layers[l].W.size(), 0.0);
      mB[l].assign(net.layers[l].b.size(), 0.0);
      vB[l].assign(net.layers[l].b.size(), 0.0);
    }
  }
};

namespace detail {
inline void adam_apply(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                       std::vector<double>& v, const OptimizerState& o, double bc1, double bc2) {
  for (size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i];
    m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
    v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
  }
}
}  // namespace detail

// One optimizer step. Rejects non-finite gradients so a diverging run aborts
// with a diagnostic instead of silently poisoning the parameters.
inline void grad_step(DenseNet& net, const GradBuffer& grads, OptimizerState& opt) {
  if (grads.dW.size() != net.layers.size())
    throw std::runtime_error("grad_step: gradient buffer does not match net");
  for (size_t l = 0; l < net.layers.size(); ++l) {
    for (double g : grads.dW[l])
      if (!std::isfinite(g)) throw std::runtime_error("grad_step: non-finite weight gradient");
    for (double g : grads.db[l])
      if (!std::isfinite(g)) throw std::runtime_error("grad_step: non-finite bias gradient");
  }
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (size_t l = 0; l < net.layers.size(); ++l) {
    detail::adam_apply(net.layers[l].W, grads.dW[l], opt.mW[l], opt.vW[l], opt, bc1, bc2);
    detail::adam_apply(net.layers[l].b, grads.db[l], opt.mB[l], opt.vB[l], opt, bc1, bc2);
  }
}

inline bool same_architecture(const DenseNet& a, const DenseNet& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (size_t l = 0; l < a.layers.size(); ++l)
    if (a.layers[l].in != b.layers[l].in || a.layers[l].out != b.layers[l].out ||
        a.layers[l].act != b.layers[l].act)
      return false;
  return true;
}

// target <- rho*target + (1-rho)*online
inline void polyak_update(DenseNet& target, const DenseNet& online, double rho) {
  if (!same_architecture(target, online))
    throw std::runtime_error("polyak_update: architecture mismatch");
  for (size_t l = 0; l < target.layers.size(); ++l) {
    auto& tw = target.layers[l].W;
    auto& tb = target.layers[l].b;
    const auto& ow = online.layers[l].W;
    const auto& ob = online.layers[l].b;
    for (size_t i = 0; i < tw.size(); ++i) tw[i] = rho * tw[i] + (1.0 - rho) * ow[i];
    for (size_t i = 0; i < tb.size(); ++i) tb[i] = rho * tb[i] + (1.0 - rho) * ob[i];
  }
}

inline bool all_parameters_finite(const DenseNet& net) {
  for (const Layer& L : net.layers) {
    for (double w : L.W)
      if (!std::isfinite(w)) return false;
    for (double b : L.b)
      if (!std::isfinite(b)) return false;
  }
  return true;
}

// ---- serialization -------------------------------------------------------
//
//   densenet v1
//   layer <in> <out> <activation>
//   <out rows of the weight matrix, row-major, one line each>
//   <bias line>

inline void save_net(const DenseNet& net, const std::string& path) {
  net.validate();
  std::ostringstream out;
  out << "densenet v1\n";
  for (const Layer& L : net.layers) {
    out << "layer " << L.in << " " << L.out << " " << activation_name(L.act) << "\n";
    for (int r = 0; r < L.out; ++r) {
      for (int c = 0; c < L.in; ++c) {
        if (c) out << " ";
        out << fmt_double(L.W[static_cast<size_t>(r) * L.in + c]);
      }
      out << "\n";
    }
    for (int r = 0; r < L.out; ++r) {
      if (r) out << " ";
      out << fmt_double(L.b[r]);
    }
    out << "\n";
  }
  write_file(path, out.str());
}

inline DenseNet load_net(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  int lineno = 0;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line))
      throw std::runtime_error(path + ": unexpected end of file, expected " + std::string(what) +
                               " after line " + std::to_string(lineno));
    ++lineno;
    return line;
  };
  next_line("header");
  if (trim(line) != "densenet v1")
    throw std::runtime_error(path + ":1: bad header, expected 'densenet v1'");

  DenseNet net;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty()) continue;
    auto toks = split_ws(t);
    if (toks[0] != "layer" || toks.size() != 4)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 'layer <in> <out> <activation>'");
    Layer L;
    L.in = static_cast<int>(parse_int(toks[1], "layer input width"));
    L.out = static_cast<int>(parse_int(toks[2], "layer output width"));
    if (L.in <= 0 || L.out <= 0)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": nonpositive layer width");
    L.act = activation_from_name(toks[3]);
    L.W.resize(static_cast<size_t>(L.in) * L.out);
    L.b.resize(L.out);
    for (int r = 0; r < L.out; ++r) {
      auto vals = split_ws(next_line("weight row"));
      if (static_cast<int>(vals.size()) != L.in)
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": weight row " +
                                 std::to_string(r) + " has " + std::to_string(vals.size()) +
                                 " values, expected " + std::to_string(L.in));
      for (int c = 0; c < L.in; ++c)
        L.W[static_cast<size_t>(r) * L.in + c] = parse_double(vals[c], "weight");
    }
    auto bias = split_ws(next_line("bias line"));
    if (static_cast<int>(bias.size()) != L.out)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bias line has " +
                               std::to_string(bias.size()) + " values, expected " +
                               std::to_string(L.out));
    for (int r = 0; r < L.out; ++r) L.b[r] = parse_double(bias[r], "bias");
    net.layers.push_back(std::move(L));
  }
  if (net.layers.empty()) throw std::runtime_error(path + ": no layers");
  net.validate();
  return net;
}

}  // namespace cvarnav

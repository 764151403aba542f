#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ustrack/checkpoint.hpp"
#include "ustrack/rng.hpp"
#include "ustrack/tensor.hpp"

namespace ustrack {

struct GateParams {
  Tensor w_in;   // [hidden x input]
  Tensor w_rec;  // [hidden x hidden]
  Tensor b_in;   // [hidden]
  Tensor b_rec;  // [hidden]
};

struct LstmParams {
  int input_dim = 0;
  int hidden_dim = 0;
  GateParams in_gate, forget_gate, cell_gate, out_gate;

  static LstmParams init(int input_dim, int hidden_dim, Rng& rng) {
    LstmParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    auto make = [&](int rows, int cols, int fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::vector<double> v(static_cast<std::size_t>(rows) * cols);
      for (auto& x : v) x = rng.uniform(-bound, bound);
      return cols == 1 ? Tensor::from(std::move(v), {rows}, true)
                       : Tensor::from(std::move(v), {rows, cols}, true);
    };
    for (GateParams* g : {&p.in_gate, &p.forget_gate, &p.cell_gate, &p.out_gate}) {
      g->w_in = make(hidden_dim, input_dim, input_dim);
      g->w_rec = make(hidden_dim, hidden_dim, hidden_dim);
      g->b_in = make(hidden_dim, 1, input_dim);
      g->b_rec = make(hidden_dim, 1, hidden_dim);
    }
    return p;
  }

  static LstmParams zeros(int input_dim, int hidden_dim) {
    LstmParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    for (GateParams* g : {&p.in_gate, &p.forget_gate, &p.cell_gate, &p.out_gate}) {
      g->w_in = Tensor::zeros({hidden_dim, input_dim}, true);
      g->w_rec = Tensor::zeros({hidden_dim, hidden_dim}, true);
      g->b_in = Tensor::zeros({hidden_dim}, true);
      g->b_rec = Tensor::zeros({hidden_dim}, true);
    }
    return p;
  }

  NamedParams named(const std::string& prefix) const {
    NamedParams out;
    const char* gate_names[4] = {"in", "forget", "cell", "out"};
    const GateParams* gates[4] = {&in_gate, &forget_gate, &cell_gate, &out_gate};
    for (int i = 0; i < 4; ++i) {
      const std::string base = prefix + "." + gate_names[i];
      out.emplace_back(base + ".w_in", gates[i]->w_in);
      out.emplace_back(base + ".w_rec", gates[i]->w_rec);
      out.emplace_back(base + ".b_in", gates[i]->b_in);
      out.emplace_back(base + ".b_rec", gates[i]->b_rec);
    }
    return out;
  }

  std::vector<Tensor> all() const {
    std::vector<Tensor> out;
    for (const GateParams* g : {&in_gate, &forget_gate, &cell_gate, &out_gate}) {
      out.push_back(g->w_in);
      out.push_back(g->w_rec);
      out.push_back(g->b_in);
      out.push_back(g->b_rec);
    }
    return out;
  }
};

struct LstmState {
  Tensor h;
  Tensor c;

  static LstmState zero(int hidden_dim) {
    return LstmState{Tensor::zeros({hidden_dim}), Tensor::zeros({hidden_dim})};
  }
};

// One recurrence step:
//   i = sigmoid(Wii x + bii + Whi h + bhi)      input gate
//   f = sigmoid(Wif x + bif + Whf h + bhf)      forget gate
//   g = tanh  (Wig x + big + Whg h + bhg)       cell candidate
//   o = sigmoid(Wio x + bio + Who h + bho)      output gate
//   c' = f (.) c + i (.) g
//   h' = o (.) tanh(c')
inline std::pair<Tensor, LstmState> lstm_step(const LstmParams& p, const Tensor& x,
                                              const LstmState& s) {
  if (x.rank() != 1 || x.dim(0) != p.input_dim)
    throw std::invalid_argument("lstm_step: input shape " + shape_str(x.shape()) +
                                " does not match input_dim " + std::to_string(p.input_dim));
  if (s.h.dim(0) != p.hidden_dim || s.c.dim(0) != p.hidden_dim)
    throw std::invalid_argument("lstm_step: state size " + shape_str(s.h.shape()) +
                                " does not match hidden_dim " + std::to_string(p.hidden_dim));
  auto gate = [&](const GateParams& g, Act act) {
    return activation(add(affine(x, g.w_in, g.b_in), affine(s.h, g.w_rec, g.b_rec)), act);
  };
  Tensor i = gate(p.in_gate, Act::Sigmoid);
  Tensor f = gate(p.forget_gate, Act::Sigmoid);
  Tensor g = gate(p.cell_gate, Act::Tanh);
  Tensor o = gate(p.out_gate, Act::Sigmoid);
  Tensor c_next = add(mul(f, s.c), mul(i, g));
  Tensor h_next = mul(o, activation(c_next, Act::Tanh));
  return {h_next, LstmState{h_next, c_next}};
}

// Folds lstm_step over the window and returns the final hidden vector.
inline Tensor lstm_window(const LstmParams& p, const std::vector<Tensor>& xs,
                          const LstmState& s0) {
  if (xs.empty()) throw std::invalid_argument("lstm_window: empty window");
  LstmState s = s0;
  Tensor h;
  for (const auto& x : xs) std::tie(h, s) = lstm_step(p, x, s);
  return h;
}

// Assembles a fixed-length window ending at `current`, front-padded with
// zero vectors when the history is shorter than window_len - 1. history is
// ordered oldest-first and may hold more than needed.
inline std::vector<Tensor> make_window(const std::vector<std::vector<double>>& history,
                                       const Tensor& current, int window_len,
                                       int feature_dim) {
  if (window_len < 1) throw std::invalid_argument("make_window: window_len must be >= 1");
  std::vector<Tensor> xs;
  xs.reserve(static_cast<std::size_t>(window_len));
  const int need = window_len - 1;
  const int have = static_cast<int>(history.size());
  for (int i = 0; i < need; ++i) {
    const int idx = have - need + i;
    if (idx < 0)
      xs.push_back(Tensor::zeros({feature_dim}));
    else
      xs.push_back(Tensor::from(history[static_cast<std::size_t>(idx)], {feature_dim}));
  }
  xs.push_back(current);
  return xs;
}

}  // namespace ustrack

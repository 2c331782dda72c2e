/**
 * Copyright 2026 The fedmoe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "fedmoe/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace fedmoe {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap AsMat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}
MatMap AsMat(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

void RequireRank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw ContractViolation(std::string(what) + ": expected a matrix, got " +
                            ShapeToString(t.shape()));
  }
}

Node& In(Node& n, std::size_t i) { return *n.inputs[i]; }

}  // namespace

Var Affine(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  RequireRank2(xv, "Affine(x)");
  RequireRank2(wv, "Affine(w)");
  const std::size_t k = xv.rows(), din = xv.cols(), dout = wv.cols();
  if (wv.rows() != din) {
    throw ContractViolation("Affine: inner dimensions disagree, x " +
                            ShapeToString(xv.shape()) + " w " +
                            ShapeToString(wv.shape()));
  }
  if (bv.size() != dout) {
    throw ContractViolation("Affine: bias length " + std::to_string(bv.size()) +
                            " != " + std::to_string(dout));
  }
  Tensor out({k, dout});
  auto om = AsMat(out, k, dout);
  om.noalias() = AsMat(xv, k, din) * AsMat(wv, din, dout);
  om.rowwise() += AsMat(bv, 1, dout).row(0);

  return MakeNode(std::move(out), {x, w, b}, [k, din, dout](Node& n) {
    auto g = AsMat(n.grad, k, dout);
    Node& xn = In(n, 0);
    Node& wn = In(n, 1);
    Node& bn = In(n, 2);
    if (xn.requires_grad) {
      AsMat(xn.grad, k, din).noalias() += g * AsMat(wn.value, din, dout).transpose();
    }
    if (wn.requires_grad) {
      AsMat(wn.grad, din, dout).noalias() += AsMat(xn.value, k, din).transpose() * g;
    }
    if (bn.requires_grad) {
      AsMat(bn.grad, 1, dout).row(0) += g.colwise().sum();
    }
  });
}

Var Relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return MakeNode(std::move(out), {x}, [](Node& n) {
    Node& xn = In(n, 0);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (xn.value[i] > 0.0) xn.grad[i] += n.grad[i];
    }
  });
}

Var Sigmoid(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) {
    // Split on sign so exp never overflows.
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return MakeNode(std::move(out), {x}, [](Node& n) {
    Node& xn = In(n, 0);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double s = n.value[i];
      xn.grad[i] += n.grad[i] * s * (1.0 - s);
    }
  });
}

Var Activate(const Var& x, Activation kind) {
  return kind == Activation::kRelu ? Relu(x) : Sigmoid(x);
}

Var Mul(const Var& a, const Var& b) {
  RequireSameShape(a.value(), b.value(), "Mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return MakeNode(std::move(out), {a, b}, [](Node& n) {
    Node& an = In(n, 0);
    Node& bn = In(n, 1);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (an.requires_grad) an.grad[i] += n.grad[i] * bn.value[i];
      if (bn.requires_grad) bn.grad[i] += n.grad[i] * an.value[i];
    }
  });
}

Var Mul(const Var& a, const Var& b, const Var& c) {
  RequireSameShape(a.value(), b.value(), "Mul");
  RequireSameShape(a.value(), c.value(), "Mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i] * c.value()[i];
  return MakeNode(std::move(out), {a, b, c}, [](Node& n) {
    Node& an = In(n, 0);
    Node& bn = In(n, 1);
    Node& cn = In(n, 2);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double g = n.grad[i];
      if (an.requires_grad) an.grad[i] += g * bn.value[i] * cn.value[i];
      if (bn.requires_grad) bn.grad[i] += g * an.value[i] * cn.value[i];
      if (cn.requires_grad) cn.grad[i] += g * an.value[i] * bn.value[i];
    }
  });
}

Var Add(const Var& a, const Var& b) {
  RequireSameShape(a.value(), b.value(), "Add");
  Tensor out = a.value() + b.value();
  return MakeNode(std::move(out), {a, b}, [](Node& n) {
    for (std::size_t j = 0; j < 2; ++j) {
      Node& in = In(n, j);
      if (in.requires_grad) in.grad += n.grad;
    }
  });
}

Var Scale(const Var& a, double s) {
  Tensor out = a.value() * s;
  return MakeNode(std::move(out), {a}, [s](Node& n) {
    Node& an = In(n, 0);
    for (std::size_t i = 0; i < n.grad.size(); ++i) an.grad[i] += s * n.grad[i];
  });
}

Var Softmax(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  return MakeNode(std::move(out), {x}, [rows, cols](Node& n) {
    Node& xn = In(n, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* s = n.value.data() + r * cols;
      const double* g = n.grad.data() + r * cols;
      double inner = 0.0;
      for (std::size_t c = 0; c < cols; ++c) inner += g[c] * s[c];
      for (std::size_t c = 0; c < cols; ++c) {
        xn.grad[r * cols + c] += s[c] * (g[c] - inner);
      }
    }
  });
}

Var Reshape(const Var& x, Shape shape) {
  Tensor out = x.value().Reshaped(std::move(shape));
  return MakeNode(std::move(out), {x}, [](Node& n) {
    Node& xn = In(n, 0);
    for (std::size_t i = 0; i < n.grad.size(); ++i) xn.grad[i] += n.grad[i];
  });
}

Var SelectRow(const Var& x, std::size_t row) {
  const Tensor& xv = x.value();
  RequireRank2(xv, "SelectRow");
  if (row >= xv.rows()) throw ContractViolation("SelectRow: row out of range");
  const std::size_t cols = xv.cols();
  std::vector<double> vals(xv.data() + row * cols, xv.data() + (row + 1) * cols);
  return MakeNode(Tensor({1, cols}, std::move(vals)), {x}, [row, cols](Node& n) {
    Node& xn = In(n, 0);
    for (std::size_t c = 0; c < cols; ++c) xn.grad[row * cols + c] += n.grad[c];
  });
}

Var SelectColumn(const Var& x, std::size_t col) {
  const Tensor& xv = x.value();
  RequireRank2(xv, "SelectColumn");
  if (col >= xv.cols()) throw ContractViolation("SelectColumn: column out of range");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) out[r] = xv.at(r, col);
  return MakeNode(std::move(out), {x}, [rows, cols, col](Node& n) {
    Node& xn = In(n, 0);
    for (std::size_t r = 0; r < rows; ++r) xn.grad[r * cols + col] += n.grad[r];
  });
}

Var WeightedSum(const Var& weights, std::span<const Var> items) {
  const Tensor& wv = weights.value();
  RequireRank2(wv, "WeightedSum(weights)");
  if (items.size() != wv.cols()) {
    throw ContractViolation("WeightedSum: " + std::to_string(items.size()) +
                            " items for " + std::to_string(wv.cols()) + " weights");
  }
  const std::size_t k = wv.rows(), count = items.size();
  const Shape item_shape = items.front().shape();
  for (const auto& it : items) {
    if (it.shape() != item_shape || it.value().rows() != k) {
      throw ContractViolation("WeightedSum: item shape mismatch");
    }
  }
  const std::size_t d = items.front().value().cols();
  Tensor out({k, d});
  for (std::size_t n = 0; n < count; ++n) {
    const Tensor& h = items[n].value();
    for (std::size_t r = 0; r < k; ++r) {
      const double a = wv.at(r, n);
      for (std::size_t c = 0; c < d; ++c) out.at(r, c) += a * h.at(r, c);
    }
  }
  std::vector<Var> inputs{weights};
  inputs.insert(inputs.end(), items.begin(), items.end());
  return MakeNode(std::move(out), std::move(inputs), [k, d, count](Node& n) {
    Node& wn = In(n, 0);
    for (std::size_t i = 0; i < count; ++i) {
      Node& hn = In(n, i + 1);
      for (std::size_t r = 0; r < k; ++r) {
        const double a = wn.value.at(r, i);
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double g = n.grad.at(r, c);
          acc += g * hn.value.at(r, c);
          if (hn.requires_grad) hn.grad.at(r, c) += a * g;
        }
        if (wn.requires_grad) wn.grad.at(r, i) += acc;
      }
    }
  });
}

Var SquaredDistance(const Var& x, const Tensor& reference) {
  RequireSameShape(x.value(), reference, "SquaredDistance");
  double total = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double diff = x.value()[i] - reference[i];
    total += diff * diff;
  }
  return MakeNode(Tensor::Scalar(total), {x}, [reference](Node& n) {
    Node& xn = In(n, 0);
    const double g = n.grad[0];
    for (std::size_t i = 0; i < reference.size(); ++i) {
      xn.grad[i] += 2.0 * g * (xn.value[i] - reference[i]);
    }
  });
}

Var SumScalars(std::span<const Var> terms) {
  if (terms.empty()) return Var::Constant(Tensor::Scalar(0.0));
  double total = 0.0;
  for (const auto& t : terms) {
    if (t.value().size() != 1) throw ContractViolation("SumScalars: non-scalar term");
    total += t.value()[0];
  }
  return MakeNode(Tensor::Scalar(total), {terms.begin(), terms.end()}, [](Node& n) {
    for (auto& in : n.inputs) {
      if (in->requires_grad) in->grad[0] += n.grad[0];
    }
  });
}

BNState BNState::Create(const std::string& prefix, std::size_t features,
                        double eps, double momentum) {
  if (eps <= 0.0) throw ContractViolation("BatchNorm eps must be positive");
  if (momentum <= 0.0 || momentum >= 1.0) {
    throw ContractViolation("BatchNorm momentum must lie in (0,1)");
  }
  BNState s;
  s.gamma = Parameter(prefix + ".gamma", Tensor({features}, 1.0));
  s.beta = Parameter(prefix + ".beta", Tensor({features}, 0.0));
  s.eps = eps;
  s.momentum = momentum;
  s.running_mean = Tensor({features}, 0.0);
  s.running_var = Tensor({features}, 1.0);
  return s;
}

Var BatchNorm(const Var& x, BNState& state, Mode mode) {
  const Tensor& xv = x.value();
  RequireRank2(xv, "BatchNorm");
  const std::size_t k = xv.rows(), d = xv.cols();
  if (state.gamma.value().size() != d) {
    throw ContractViolation("BatchNorm: feature width " + std::to_string(d) +
                            " != state width " +
                            std::to_string(state.gamma.value().size()));
  }
  const Tensor& gamma = state.gamma.value();
  const Tensor& beta = state.beta.value();
  const double eps = state.eps;

  if (mode == Mode::kEval) {
    Tensor inv_std({d});
    for (std::size_t c = 0; c < d; ++c) inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
    const Tensor mean = state.running_mean;
    Tensor out({k, d});
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        out.at(r, c) = gamma[c] * (xv.at(r, c) - mean[c]) * inv_std[c] + beta[c];
      }
    }
    return MakeNode(std::move(out), {x, state.gamma.var(), state.beta.var()},
                    [k, d, inv_std, mean](Node& n) {
                      Node& xn = In(n, 0);
                      Node& gn = In(n, 1);
                      Node& bn = In(n, 2);
                      for (std::size_t r = 0; r < k; ++r) {
                        for (std::size_t c = 0; c < d; ++c) {
                          const double g = n.grad.at(r, c);
                          const double xhat = (xn.value.at(r, c) - mean[c]) * inv_std[c];
                          if (xn.requires_grad) xn.grad.at(r, c) += g * gn.value[c] * inv_std[c];
                          if (gn.requires_grad) gn.grad[c] += g * xhat;
                          if (bn.requires_grad) bn.grad[c] += g;
                        }
                      }
                    });
  }

  if (k < 2) {
    throw ContractViolation("BatchNorm: train mode needs at least 2 rows, got " +
                            std::to_string(k));
  }
  Tensor mean({d}, 0.0), var({d}, 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < d; ++c) mean[c] += xv.at(r, c);
  }
  for (std::size_t c = 0; c < d; ++c) mean[c] /= static_cast<double>(k);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = xv.at(r, c) - mean[c];
      var[c] += diff * diff;
    }
  }
  for (std::size_t c = 0; c < d; ++c) var[c] /= static_cast<double>(k);

  Tensor inv_std({d});
  for (std::size_t c = 0; c < d; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  Tensor xhat({k, d});
  Tensor out({k, d});
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      xhat.at(r, c) = (xv.at(r, c) - mean[c]) * inv_std[c];
      out.at(r, c) = gamma[c] * xhat.at(r, c) + beta[c];
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean[c];
    state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * var[c];
  }

  return MakeNode(std::move(out), {x, state.gamma.var(), state.beta.var()},
                  [k, d, xhat = std::move(xhat), inv_std](Node& n) {
                    Node& xn = In(n, 0);
                    Node& gn = In(n, 1);
                    Node& bn = In(n, 2);
                    const double kk = static_cast<double>(k);
                    for (std::size_t c = 0; c < d; ++c) {
                      double sum_g = 0.0, sum_gx = 0.0;
                      for (std::size_t r = 0; r < k; ++r) {
                        const double g = n.grad.at(r, c);
                        sum_g += g;
                        sum_gx += g * xhat.at(r, c);
                      }
                      if (gn.requires_grad) gn.grad[c] += sum_gx;
                      if (bn.requires_grad) bn.grad[c] += sum_g;
                      if (xn.requires_grad) {
                        const double scale = gn.value[c] * inv_std[c] / kk;
                        for (std::size_t r = 0; r < k; ++r) {
                          xn.grad.at(r, c) += scale * (kk * n.grad.at(r, c) - sum_g -
                                                       xhat.at(r, c) * sum_gx);
                        }
                      }
                    }
                  });
}

Var Dropout(const Var& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ContractViolation("Dropout: rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (mode == Mode::kEval || rate == 0.0) return x;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(x.shape());
  for (auto& m : mask.values()) m = unif(rng) < rate ? 0.0 : keep_scale;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return MakeNode(std::move(out), {x}, [mask = std::move(mask)](Node& n) {
    Node& xn = In(n, 0);
    for (std::size_t i = 0; i < n.grad.size(); ++i) xn.grad[i] += n.grad[i] * mask[i];
  });
}

Var Bce(const Var& p, const Tensor& labels) {
  const Tensor& pv = p.value();
  if (pv.size() != labels.size()) {
    throw ContractViolation("Bce: " + std::to_string(pv.size()) + " predictions vs " +
                            std::to_string(labels.size()) + " labels");
  }
  for (double y : labels.values()) {
    if (y != 0.0 && y != 1.0) throw ContractViolation("Bce: labels must be 0 or 1");
  }
  const double k = static_cast<double>(pv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double q = std::clamp(pv[i], kProbClamp, 1.0 - kProbClamp);
    total += labels[i] == 1.0 ? -std::log(q) : -std::log(1.0 - q);
  }
  return MakeNode(Tensor::Scalar(total / k), {p}, [labels, k](Node& n) {
    Node& pn = In(n, 0);
    const double g = n.grad[0];
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double q = pn.value[i];
      if (q < kProbClamp || q > 1.0 - kProbClamp) continue;  // flat region
      const double d = labels[i] == 1.0 ? -1.0 / q : 1.0 / (1.0 - q);
      pn.grad[i] += g * d / k;
    }
  });
}

}  // namespace fedmoe

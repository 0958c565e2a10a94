#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tract/array.hpp"
#include "tract/errors.hpp"

namespace tract::nn {

// One node of the expression graph. `grad` holds the accumulated adjoint and
// always matches `data`'s shape. `scratch` carries the adjoint of the current
// backward pass; it is merged into `grad` when the pass completes, so calling
// backward twice without a reset doubles the adjoints.
struct Node {
  Array data;
  Array grad;
  Array scratch;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // scatter this node's scratch into parents'
  std::string name;                     // set for parameters, used in diagnostics
};

// Cheap shared handle to a graph node. Building expressions from Values
// records everything needed to replay the backward pass.
class Value {
 public:
  Value() = default;

  static Value constant(Array data) { return Value(std::move(data), ""); }
  static Value param(Array data, std::string name) {
    return Value(std::move(data), std::move(name));
  }
  static Value make(Array data, std::vector<std::shared_ptr<Node>> parents,
                    std::function<void(Node&)> backprop) {
    Value v(std::move(data), "");
    v.node_->parents = std::move(parents);
    v.node_->backprop = std::move(backprop);
    return v;
  }

  bool valid() const { return node_ != nullptr; }
  const Array& data() const { return node_->data; }
  Array& data() { return node_->data; }  // mutated by the optimizer only
  const Array& grad() const { return node_->grad; }
  Array& grad() { return node_->grad; }
  const std::string& name() const { return node_->name; }
  int rows() const { return node_->data.rows(); }
  int cols() const { return node_->data.cols(); }

  double scalar() const {
    if (node_->data.size() != 1)
      throw ContractError("Value::scalar on non-scalar " + node_->data.shape_str());
    return node_->data[0];
  }

  Node* node() const { return node_.get(); }
  std::shared_ptr<Node> share() const { return node_; }

 private:
  Value(Array data, std::string name) : node_(std::make_shared<Node>()) {
    node_->grad = Array(data.rows(), data.cols());
    node_->data = std::move(data);
    node_->name = std::move(name);
  }
  std::shared_ptr<Node> node_;
};

namespace detail {

inline void require_same_shape(const Array& a, const Array& b, const char* op) {
  if (!a.same_shape(b))
    throw ConfigError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                      b.shape_str());
}

// Post-order collection: producers precede consumers in `order`.
inline void topo_collect(Node* root, std::vector<Node*>& order) {
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
}

inline void matmul_nn(const Array& a, const Array& b, Array& out) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
  for (int i = 0; i < m; ++i) {
    double* oi = out.row_ptr(i);
    const double* ai = a.row_ptr(i);
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b.row_ptr(p);
      for (int j = 0; j < n; ++j) oi[j] += aip * bp[j];
    }
  }
}

// out += a * b^T
inline void matmul_nt_acc(const Array& a, const Array& b, Array& out) {
  const int m = a.rows(), k = a.cols(), n = b.rows();
  for (int i = 0; i < m; ++i) {
    double* oi = out.row_ptr(i);
    const double* ai = a.row_ptr(i);
    for (int j = 0; j < n; ++j) {
      const double* bj = b.row_ptr(j);
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      oi[j] += acc;
    }
  }
}

// out += a^T * b
inline void matmul_tn_acc(const Array& a, const Array& b, Array& out) {
  const int m = a.cols(), k = a.rows(), n = b.cols();
  for (int p = 0; p < k; ++p) {
    const double* ap = a.row_ptr(p);
    const double* bp = b.row_ptr(p);
    for (int i = 0; i < m; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;
      double* oi = out.row_ptr(i);
      for (int j = 0; j < n; ++j) oi[j] += api * bp[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Backward pass

// Accumulates adjoints into every node reachable from `loss`. The pass runs
// on scratch buffers and merges into `grad` at the end, in a deterministic
// topological order, so replays are bitwise identical.
inline void backward(const Value& loss) {
  if (!loss.valid()) throw ContractError("backward: empty Value");
  if (loss.data().size() != 1)
    throw ContractError("backward requires a scalar loss, got " + loss.data().shape_str());
  std::vector<Node*> order;
  detail::topo_collect(loss.node(), order);
  for (Node* n : order) n->scratch = Array(n->data.rows(), n->data.cols());
  loss.node()->scratch[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
  for (Node* n : order) {
    double* g = n->grad.data();
    const double* s = n->scratch.data();
    for (std::size_t i = 0; i < n->grad.size(); ++i) g[i] += s[i];
    n->scratch = Array();
  }
}

// Zeroes the grad of every node reachable from `root`.
inline void zero_all_grads(const Value& root) {
  std::vector<Node*> order;
  detail::topo_collect(root.node(), order);
  for (Node* n : order) n->grad.fill(0.0);
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops

inline Value add(const Value& a, const Value& b) {
  detail::require_same_shape(a.data(), b.data(), "add");
  Array out = a.data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  return Value::make(std::move(out), {a.share(), b.share()}, [](Node& self) {
    for (int p = 0; p < 2; ++p) {
      Array& ps = self.parents[p]->scratch;
      const double* s = self.scratch.data();
      for (std::size_t i = 0; i < ps.size(); ++i) ps[i] += s[i];
    }
  });
}

inline Value sub(const Value& a, const Value& b) {
  detail::require_same_shape(a.data(), b.data(), "sub");
  Array out = a.data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  return Value::make(std::move(out), {a.share(), b.share()}, [](Node& self) {
    Array& pa = self.parents[0]->scratch;
    Array& pbv = self.parents[1]->scratch;
    const double* s = self.scratch.data();
    for (std::size_t i = 0; i < pa.size(); ++i) {
      pa[i] += s[i];
      pbv[i] -= s[i];
    }
  });
}

inline Value mul(const Value& a, const Value& b) {
  detail::require_same_shape(a.data(), b.data(), "mul");
  Array out = a.data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  return Value::make(std::move(out), {a.share(), b.share()}, [](Node& self) {
    const Array& da = self.parents[0]->data;
    const Array& db = self.parents[1]->data;
    Array& pa = self.parents[0]->scratch;
    Array& pbv = self.parents[1]->scratch;
    const double* s = self.scratch.data();
    for (std::size_t i = 0; i < pa.size(); ++i) {
      pa[i] += s[i] * db[i];
      pbv[i] += s[i] * da[i];
    }
  });
}

inline Value scale(const Value& a, double c) {
  Array out = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  return Value::make(std::move(out), {a.share()}, [c](Node& self) {
    Array& pa = self.parents[0]->scratch;
    const double* s = self.scratch.data();
    for (std::size_t i = 0; i < pa.size(); ++i) pa[i] += c * s[i];
  });
}

inline Value matmul(const Value& a, const Value& b) {
  if (a.cols() != b.rows())
    throw ConfigError("matmul: inner dimensions differ " + a.data().shape_str() + " vs " +
                      b.data().shape_str());
  Array out(a.rows(), b.cols());
  detail::matmul_nn(a.data(), b.data(), out);
  return Value::make(std::move(out), {a.share(), b.share()}, [](Node& self) {
    // dA += S * B^T, dB += A^T * S
    detail::matmul_nt_acc(self.scratch, self.parents[1]->data, self.parents[0]->scratch);
    detail::matmul_tn_acc(self.parents[0]->data, self.scratch, self.parents[1]->scratch);
  });
}

inline Value transpose(const Value& a) {
  Array out(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out.at(j, i) = a.data().at(i, j);
  return Value::make(std::move(out), {a.share()}, [](Node& self) {
    Array& pa = self.parents[0]->scratch;
    for (int i = 0; i < self.scratch.rows(); ++i)
      for (int j = 0; j < self.scratch.cols(); ++j) pa.at(j, i) += self.scratch.at(i, j);
  });
}

// Adds a 1 x n row vector to every row of an r x n matrix.
inline Value add_rowvec(const Value& m, const Value& b) {
  if (b.rows() != 1 || b.cols() != m.cols())
    throw ConfigError("add_rowvec: expected (1 x " + std::to_string(m.cols()) + "), got " +
                      b.data().shape_str());
  Array out = m.data();
  const double* pb = b.data().data();
  for (int i = 0; i < out.rows(); ++i) {
    double* oi = out.row_ptr(i);
    for (int j = 0; j < out.cols(); ++j) oi[j] += pb[j];
  }
  return Value::make(std::move(out), {m.share(), b.share()}, [](Node& self) {
    Array& pm = self.parents[0]->scratch;
    Array& pbv = self.parents[1]->scratch;
    for (int i = 0; i < self.scratch.rows(); ++i) {
      const double* s = self.scratch.row_ptr(i);
      double* qm = pm.row_ptr(i);
      for (int j = 0; j < self.scratch.cols(); ++j) {
        qm[j] += s[j];
        pbv[j] += s[j];
      }
    }
  });
}

// Multiplies row i of an r x n matrix by s[i], s being an r x 1 column.
inline Value rowwise_scale(const Value& m, const Value& s) {
  if (s.cols() != 1 || s.rows() != m.rows())
    throw ConfigError("rowwise_scale: expected (" + std::to_string(m.rows()) + " x 1), got " +
                      s.data().shape_str());
  Array out = m.data();
  for (int i = 0; i < out.rows(); ++i) {
    const double si = s.data().at(i, 0);
    double* oi = out.row_ptr(i);
    for (int j = 0; j < out.cols(); ++j) oi[j] *= si;
  }
  return Value::make(std::move(out), {m.share(), s.share()}, [](Node& self) {
    const Array& dm = self.parents[0]->data;
    const Array& ds = self.parents[1]->data;
    Array& pm = self.parents[0]->scratch;
    Array& ps = self.parents[1]->scratch;
    for (int i = 0; i < self.scratch.rows(); ++i) {
      const double* g = self.scratch.row_ptr(i);
      const double* mi = dm.row_ptr(i);
      double* qm = pm.row_ptr(i);
      const double si = ds.at(i, 0);
      double acc = 0.0;
      for (int j = 0; j < self.scratch.cols(); ++j) {
        qm[j] += g[j] * si;
        acc += g[j] * mi[j];
      }
      ps.at(i, 0) += acc;
    }
  });
}

namespace detail {
template <typename Fwd, typename Bwd>
Value unary_elementwise(const Value& a, Fwd fwd, Bwd bwd) {
  Array out = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(out[i]);
  return Value::make(std::move(out), {a.share()}, [bwd](Node& self) {
    const Array& x = self.parents[0]->data;
    const Array& y = self.data;
    Array& pa = self.parents[0]->scratch;
    const double* s = self.scratch.data();
    for (std::size_t i = 0; i < pa.size(); ++i) pa[i] += s[i] * bwd(x[i], y[i]);
  });
}
}  // namespace detail

inline Value tanh(const Value& a) {
  return detail::unary_elementwise(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Value relu(const Value& a) {
  return detail::unary_elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Value exp(const Value& a) {
  return detail::unary_elementwise(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Value log(const Value& a) {
  return detail::unary_elementwise(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// Derivative at exactly 0 is taken as 0 (subgradient convention, same as relu).
inline Value sqrt(const Value& a) {
  return detail::unary_elementwise(
      a, [](double x) { return std::sqrt(x); },
      [](double x, double y) { return x > 0.0 ? 0.5 / y : 0.0; });
}

inline Value recip(const Value& a) {
  return detail::unary_elementwise(
      a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

inline Value sum(const Value& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) acc += a.data()[i];
  return Value::make(Array::scalar(acc), {a.share()}, [](Node& self) {
    Array& pa = self.parents[0]->scratch;
    const double s = self.scratch[0];
    for (std::size_t i = 0; i < pa.size(); ++i) pa[i] += s;
  });
}

inline Value mean(const Value& a) {
  if (a.data().empty()) throw ContractError("mean of empty array");
  const double inv = 1.0 / static_cast<double>(a.data().size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) acc += a.data()[i];
  return Value::make(Array::scalar(acc * inv), {a.share()}, [inv](Node& self) {
    Array& pa = self.parents[0]->scratch;
    const double s = self.scratch[0] * inv;
    for (std::size_t i = 0; i < pa.size(); ++i) pa[i] += s;
  });
}

inline Value row_sum(const Value& a) {
  Array out(a.rows(), 1);
  for (int i = 0; i < a.rows(); ++i) {
    const double* ai = a.data().row_ptr(i);
    double acc = 0.0;
    for (int j = 0; j < a.cols(); ++j) acc += ai[j];
    out.at(i, 0) = acc;
  }
  return Value::make(std::move(out), {a.share()}, [](Node& self) {
    Array& pa = self.parents[0]->scratch;
    for (int i = 0; i < pa.rows(); ++i) {
      const double s = self.scratch.at(i, 0);
      double* qi = pa.row_ptr(i);
      for (int j = 0; j < pa.cols(); ++j) qi[j] += s;
    }
  });
}

// log(sum(exp(x))) over all entries, computed with max subtraction so inputs
// up to |x| ~ 1e4 cannot overflow.
inline Value logsumexp(const Value& a) {
  if (a.data().empty()) throw ContractError("logsumexp of empty array");
  double m = a.data()[0];
  for (std::size_t i = 1; i < a.data().size(); ++i) m = std::max(m, a.data()[i]);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) acc += std::exp(a.data()[i] - m);
  const double lse = m + std::log(acc);
  return Value::make(Array::scalar(lse), {a.share()}, [lse](Node& self) {
    const Array& x = self.parents[0]->data;
    Array& pa = self.parents[0]->scratch;
    const double s = self.scratch[0];
    for (std::size_t i = 0; i < pa.size(); ++i) pa[i] += s * std::exp(x[i] - lse);
  });
}

// Per-row logsumexp of an r x n matrix, returning r x 1.
inline Value row_logsumexp(const Value& a) {
  if (a.cols() < 1) throw ContractError("row_logsumexp of empty rows");
  Array out(a.rows(), 1);
  for (int i = 0; i < a.rows(); ++i) {
    const double* ai = a.data().row_ptr(i);
    double m = ai[0];
    for (int j = 1; j < a.cols(); ++j) m = std::max(m, ai[j]);
    double acc = 0.0;
    for (int j = 0; j < a.cols(); ++j) acc += std::exp(ai[j] - m);
    out.at(i, 0) = m + std::log(acc);
  }
  return Value::make(std::move(out), {a.share()}, [](Node& self) {
    const Array& x = self.parents[0]->data;
    Array& pa = self.parents[0]->scratch;
    for (int i = 0; i < pa.rows(); ++i) {
      const double s = self.scratch.at(i, 0);
      const double lse = self.data.at(i, 0);
      const double* xi = x.row_ptr(i);
      double* qi = pa.row_ptr(i);
      for (int j = 0; j < pa.cols(); ++j) qi[j] += s * std::exp(xi[j] - lse);
    }
  });
}

// Columns [c0, c1) of a matrix.
inline Value slice_cols(const Value& a, int c0, int c1) {
  if (c0 < 0 || c1 > a.cols() || c0 >= c1)
    throw ConfigError("slice_cols: invalid range [" + std::to_string(c0) + ", " +
                      std::to_string(c1) + ") for " + a.data().shape_str());
  Array out(a.rows(), c1 - c0);
  for (int i = 0; i < a.rows(); ++i) {
    const double* ai = a.data().row_ptr(i) + c0;
    double* oi = out.row_ptr(i);
    for (int j = 0; j < c1 - c0; ++j) oi[j] = ai[j];
  }
  return Value::make(std::move(out), {a.share()}, [c0](Node& self) {
    Array& pa = self.parents[0]->scratch;
    for (int i = 0; i < self.scratch.rows(); ++i) {
      const double* s = self.scratch.row_ptr(i);
      double* qi = pa.row_ptr(i) + c0;
      for (int j = 0; j < self.scratch.cols(); ++j) qi[j] += s[j];
    }
  });
}

inline Value concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of zero parts");
  const int rows = parts[0].rows();
  int cols = 0;
  std::vector<std::shared_ptr<Node>> parents;
  parents.reserve(parts.size());
  for (const Value& p : parts) {
    if (p.rows() != rows)
      throw ConfigError("concat_cols: row mismatch " + parts[0].data().shape_str() + " vs " +
                        p.data().shape_str());
    cols += p.cols();
    parents.push_back(p.share());
  }
  Array out(rows, cols);
  int off = 0;
  for (const Value& p : parts) {
    for (int i = 0; i < rows; ++i) {
      const double* src = p.data().row_ptr(i);
      double* dst = out.row_ptr(i) + off;
      for (int j = 0; j < p.cols(); ++j) dst[j] = src[j];
    }
    off += p.cols();
  }
  return Value::make(std::move(out), std::move(parents), [](Node& self) {
    int off2 = 0;
    for (auto& parent : self.parents) {
      Array& ps = parent->scratch;
      for (int i = 0; i < self.scratch.rows(); ++i) {
        const double* s = self.scratch.row_ptr(i) + off2;
        double* qi = ps.row_ptr(i);
        for (int j = 0; j < ps.cols(); ++j) qi[j] += s[j];
      }
      off2 += ps.cols();
    }
  });
}

// Mean of selected rows per group; groups may be empty (yielding a zero row).
// Used for validity-masked neighbor pooling.
inline Value group_mean_rows(const Value& m, std::vector<std::vector<int>> groups) {
  const int g = static_cast<int>(groups.size());
  for (const auto& grp : groups)
    for (int r : grp)
      if (r < 0 || r >= m.rows())
        throw ContractError("group_mean_rows: row index " + std::to_string(r) + " out of " +
                            m.data().shape_str());
  Array out(g, m.cols());
  for (int i = 0; i < g; ++i) {
    if (groups[i].empty()) continue;
    const double w = 1.0 / static_cast<double>(groups[i].size());
    double* oi = out.row_ptr(i);
    for (int r : groups[i]) {
      const double* src = m.data().row_ptr(r);
      for (int j = 0; j < m.cols(); ++j) oi[j] += w * src[j];
    }
  }
  auto shared = std::make_shared<const std::vector<std::vector<int>>>(std::move(groups));
  return Value::make(std::move(out), {m.share()}, [shared](Node& self) {
    Array& pm = self.parents[0]->scratch;
    for (std::size_t i = 0; i < shared->size(); ++i) {
      const auto& grp = (*shared)[i];
      if (grp.empty()) continue;
      const double w = 1.0 / static_cast<double>(grp.size());
      const double* s = self.scratch.row_ptr(static_cast<int>(i));
      for (int r : grp) {
        double* qi = pm.row_ptr(r);
        for (int j = 0; j < pm.cols(); ++j) qi[j] += w * s[j];
      }
    }
  });
}

// Cumulative sum over the time axis of per-hypothesis displacement layouts.
// Columns are laid out as [hypothesis][timestep][xy]; entry (k, t, c) of the
// output is the sum of entries (k, t' <= t, c) of the input.
inline Value time_cumsum(const Value& m, int num_hypotheses, int horizon) {
  const int expected = num_hypotheses * horizon * 2;
  if (m.cols() != expected)
    throw ConfigError("time_cumsum: expected " + std::to_string(expected) + " columns, got " +
                      m.data().shape_str());
  Array out = m.data();
  for (int i = 0; i < out.rows(); ++i) {
    double* oi = out.row_ptr(i);
    for (int k = 0; k < num_hypotheses; ++k) {
      double* block = oi + k * horizon * 2;
      for (int t = 1; t < horizon; ++t) {
        block[t * 2] += block[(t - 1) * 2];
        block[t * 2 + 1] += block[(t - 1) * 2 + 1];
      }
    }
  }
  return Value::make(std::move(out), {m.share()}, [num_hypotheses, horizon](Node& self) {
    Array& pm = self.parents[0]->scratch;
    for (int i = 0; i < self.scratch.rows(); ++i) {
      const double* s = self.scratch.row_ptr(i);
      double* qi = pm.row_ptr(i);
      for (int k = 0; k < num_hypotheses; ++k) {
        const double* sb = s + k * horizon * 2;
        double* qb = qi + k * horizon * 2;
        double accx = 0.0, accy = 0.0;
        for (int t = horizon - 1; t >= 0; --t) {
          accx += sb[t * 2];
          accy += sb[t * 2 + 1];
          qb[t * 2] += accx;
          qb[t * 2 + 1] += accy;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Compositions

inline Value dot(const Value& a, const Value& b) { return sum(mul(a, b)); }

inline Value l2norm(const Value& a) { return sqrt(sum(mul(a, a))); }

// Rows rescaled to unit L2 norm. A tiny epsilon under the square root keeps
// the composition differentiable; for nonzero rows the result has norm 1
// well within 1e-9.
inline Value unit_rows(const Value& m) {
  Value sq = row_sum(mul(m, m));
  Value eps = Value::constant(Array(m.rows(), 1, 1e-24));
  Value inv = recip(sqrt(add(sq, eps)));
  return rowwise_scale(m, inv);
}

// ---------------------------------------------------------------------------
// Parameter set

// Ordered, named collection of leaf Values. Iteration order is insertion
// order everywhere, which keeps optimizer updates deterministic.
class ParamSet {
 public:
  Value add(const std::string& name, Array init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
    index_[name] = params_.size();
    params_.push_back(Value::param(std::move(init), name));
    return params_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Value& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return params_[it->second];
  }

  const std::vector<Value>& all() const { return params_; }

  void zero_grad() {
    for (Value& p : params_) p.grad().fill(0.0);
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const Value& p : params_) n += p.data().size();
    return n;
  }

 private:
  std::vector<Value> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace tract::nn

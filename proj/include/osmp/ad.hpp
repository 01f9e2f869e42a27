#pragma once

// Reverse-mode automatic differentiation over Eigen matrices.
//
// A Tape records matrix-valued operations eagerly; backward() replays them in
// reverse to accumulate gradients into the leaves created with param().
// The op set is deliberately small: exactly what the coupling-flow encoder,
// the latent dynamics, and the loss terms need.

#include <Eigen/Dense>
#include <functional>
#include <initializer_list>
#include <vector>

#include "osmp/util.hpp"

namespace osmp::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat& val() const;
};

class Tape {
 public:
  struct Node {
    Mat value;
    Mat grad;  // allocated lazily on first accumulation
    bool requires_grad = false;
    std::function<void(Tape&)> backward;
  };

  Var constant(Mat v) { return make(std::move(v), false); }
  Var param(Mat v) { return make(std::move(v), true); }

  Var make(Mat v, bool requires_grad) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  void set_backward(int id, std::function<void(Tape&)> bw) {
    nodes_[static_cast<std::size_t>(id)].backward = std::move(bw);
  }

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Mat& value(Var v) const { return value(v.id); }

  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Accumulates g into the gradient of node id (no-op for non-grad nodes).
  void accum(int id, const Mat& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
  }

  /// Gradient of the output w.r.t. this node as accumulated so far.
  const Mat& grad_of(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  /// Gradient of a node; zero matrix if backward never reached it.
  Mat grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Runs reverse accumulation from a 1x1 output node.
  void backward(Var out) {
    require(out.valid() && value(out).rows() == 1 && value(out).cols() == 1,
            "backward: output must be a 1x1 node");
    accum(out.id, Mat::Ones(1, 1));
    for (int i = out.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backward && n.requires_grad && n.grad.size() != 0) n.backward(*this);
    }
  }

  void reset() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

inline const Mat& Var::val() const { return tape->value(id); }

namespace detail {

inline bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs)
    if (v.tape->requires_grad(v.id)) return true;
  return false;
}

inline bool any_grad(const std::vector<Var>& vs) {
  for (const Var& v : vs)
    if (v.tape->requires_grad(v.id)) return true;
  return false;
}

/// Creates an op node. `bw(tape, out_grad)` receives the accumulated output
/// gradient and must accumulate into the parents.
inline Var op(Tape& t, Mat value, std::initializer_list<Var> parents,
              std::function<void(Tape&, const Mat&)> bw) {
  Var out = t.make(std::move(value), any_grad(parents));
  if (t.requires_grad(out.id)) {
    int oid = out.id;
    t.set_backward(oid, [oid, bw = std::move(bw)](Tape& tp) { bw(tp, tp.grad_of(oid)); });
  }
  return out;
}

}  // namespace detail

// ---- arithmetic ----

inline Var add(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.id, ib = b.id;
  return detail::op(t, a.val() + b.val(), {a, b}, [ia, ib](Tape& tp, const Mat& g) {
    tp.accum(ia, g);
    tp.accum(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.id, ib = b.id;
  return detail::op(t, a.val() - b.val(), {a, b}, [ia, ib](Tape& tp, const Mat& g) {
    tp.accum(ia, g);
    tp.accum(ib, -g);
  });
}

inline Var neg(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  return detail::op(t, -a.val(), {a}, [ia](Tape& tp, const Mat& g) { tp.accum(ia, -g); });
}

/// Elementwise product of same-shape matrices.
inline Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.id, ib = b.id;
  return detail::op(t, a.val().cwiseProduct(b.val()), {a, b}, [ia, ib](Tape& tp, const Mat& g) {
    tp.accum(ia, g.cwiseProduct(tp.value(ib)));
    tp.accum(ib, g.cwiseProduct(tp.value(ia)));
  });
}

inline Var scal(double c, Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  return detail::op(t, c * a.val(), {a}, [ia, c](Tape& tp, const Mat& g) { tp.accum(ia, c * g); });
}

inline Var add_const(Var a, double c) {
  Tape& t = *a.tape;
  int ia = a.id;
  return detail::op(t, (a.val().array() + c).matrix(), {a},
                    [ia](Tape& tp, const Mat& g) { tp.accum(ia, g); });
}

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.id, ib = b.id;
  return detail::op(t, a.val() * b.val(), {a, b}, [ia, ib](Tape& tp, const Mat& g) {
    tp.accum(ia, g * tp.value(ib).transpose());
    tp.accum(ib, tp.value(ia).transpose() * g);
  });
}

/// a * b^T
inline Var matmul_t(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.id, ib = b.id;
  return detail::op(t, a.val() * b.val().transpose(), {a, b}, [ia, ib](Tape& tp, const Mat& g) {
    tp.accum(ia, g * tp.value(ib));
    tp.accum(ib, g.transpose() * tp.value(ia));
  });
}

// ---- elementwise nonlinearities ----

inline Var cos_(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  return detail::op(t, a.val().array().cos().matrix(), {a}, [ia](Tape& tp, const Mat& g) {
    tp.accum(ia, (-tp.value(ia).array().sin() * g.array()).matrix());
  });
}

inline Var sin_(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  return detail::op(t, a.val().array().sin().matrix(), {a}, [ia](Tape& tp, const Mat& g) {
    tp.accum(ia, (tp.value(ia).array().cos() * g.array()).matrix());
  });
}

inline Var exp_(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  Mat v = a.val().array().exp().matrix();
  return detail::op(t, v, {a}, [ia, v](Tape& tp, const Mat& g) {
    tp.accum(ia, g.cwiseProduct(v));
  });
}

inline Var sqrt_(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  Mat v = a.val().array().max(0.0).sqrt().matrix();
  return detail::op(t, v, {a}, [ia, v](Tape& tp, const Mat& g) {
    tp.accum(ia, (g.array() * 0.5 / v.array().max(1e-300)).matrix());
  });
}

inline Var softplus_(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  // numerically stable log(1 + e^x)
  Mat v = (a.val().array().max(0.0) + (-a.val().array().abs()).exp().log1p()).matrix();
  return detail::op(t, v, {a}, [ia](Tape& tp, const Mat& g) {
    const Mat& x = tp.value(ia);
    Mat sig = (1.0 / (1.0 + (-x.array()).exp())).matrix();
    tp.accum(ia, g.cwiseProduct(sig));
  });
}

inline Var clamp_(Var a, double lo, double hi) {
  Tape& t = *a.tape;
  int ia = a.id;
  Mat v = a.val().array().min(hi).max(lo).matrix();
  Mat mask = ((a.val().array() > lo) && (a.val().array() < hi)).cast<double>().matrix();
  return detail::op(t, v, {a}, [ia, mask](Tape& tp, const Mat& g) {
    tp.accum(ia, g.cwiseProduct(mask));
  });
}

inline Var abs_(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  return detail::op(t, a.val().array().abs().matrix(), {a}, [ia](Tape& tp, const Mat& g) {
    Mat s = tp.value(ia).array().sign().matrix();
    tp.accum(ia, g.cwiseProduct(s));
  });
}

/// max(a - m, 0)
inline Var hinge_(Var a, double m) {
  Tape& t = *a.tape;
  int ia = a.id;
  Mat v = (a.val().array() - m).max(0.0).matrix();
  Mat mask = (a.val().array() > m).cast<double>().matrix();
  return detail::op(t, v, {a}, [ia, mask](Tape& tp, const Mat& g) {
    tp.accum(ia, g.cwiseProduct(mask));
  });
}

/// Elementwise atan2(y, x) on same-shape matrices.
inline Var atan2_(Var y, Var x) {
  Tape& t = *y.tape;
  int iy = y.id, ix = x.id;
  Mat v(y.val().rows(), y.val().cols());
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v(i) = std::atan2(y.val()(i), x.val()(i));
  return detail::op(t, v, {y, x}, [iy, ix](Tape& tp, const Mat& g) {
    Eigen::ArrayXXd yv = tp.value(iy).array(), xv = tp.value(ix).array();
    Eigen::ArrayXXd r2 = (yv * yv + xv * xv).max(1e-300);
    tp.accum(iy, (g.array() * xv / r2).matrix());
    tp.accum(ix, (g.array() * (-yv) / r2).matrix());
  });
}

/// Wraps angles into [-pi, pi); derivative 1 almost everywhere.
inline Var wrap_pi_(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  Mat v(a.val().rows(), a.val().cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = wrap_angle(a.val()(i));
  return detail::op(t, v, {a}, [ia](Tape& tp, const Mat& g) { tp.accum(ia, g); });
}

// ---- shape ops ----

inline Var cols(Var a, Eigen::Index c0, Eigen::Index k) {
  Tape& t = *a.tape;
  int ia = a.id;
  Eigen::Index rows = a.val().rows(), ncols = a.val().cols();
  return detail::op(t, a.val().middleCols(c0, k), {a},
                    [ia, c0, k, rows, ncols](Tape& tp, const Mat& g) {
                      Mat full = Mat::Zero(rows, ncols);
                      full.middleCols(c0, k) = g;
                      tp.accum(ia, full);
                    });
}

inline Var rows(Var a, Eigen::Index r0, Eigen::Index k) {
  Tape& t = *a.tape;
  int ia = a.id;
  Eigen::Index nrows = a.val().rows(), ncols = a.val().cols();
  return detail::op(t, a.val().middleRows(r0, k), {a},
                    [ia, r0, k, nrows, ncols](Tape& tp, const Mat& g) {
                      Mat full = Mat::Zero(nrows, ncols);
                      full.middleRows(r0, k) = g;
                      tp.accum(ia, full);
                    });
}

inline Var hcat(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.id, ib = b.id;
  Eigen::Index ka = a.val().cols(), kb = b.val().cols();
  Mat v(a.val().rows(), ka + kb);
  v << a.val(), b.val();
  return detail::op(t, v, {a, b}, [ia, ib, ka, kb](Tape& tp, const Mat& g) {
    tp.accum(ia, g.leftCols(ka));
    tp.accum(ib, g.rightCols(kb));
  });
}

/// Adds a 1 x k row vector to every row of an N x k matrix.
inline Var add_rowvec(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.id, ib = b.id;
  Mat v = a.val().rowwise() + b.val().row(0);
  return detail::op(t, v, {a, b}, [ia, ib](Tape& tp, const Mat& g) {
    tp.accum(ia, g);
    tp.accum(ib, g.colwise().sum());
  });
}

/// N x k matrix times a broadcast N x 1 column, elementwise per row.
inline Var mul_bycol(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.id, ib = b.id;
  Mat v = a.val().array().colwise() * b.val().col(0).array();
  return detail::op(t, v, {a, b}, [ia, ib](Tape& tp, const Mat& g) {
    tp.accum(ia, (g.array().colwise() * tp.value(ib).col(0).array()).matrix());
    tp.accum(ib, g.cwiseProduct(tp.value(ia)).rowwise().sum());
  });
}

/// N x k matrix divided by a broadcast N x 1 column.
inline Var div_bycol(Var a, Var b) {
  Tape& t = *a.tape;
  int ia = a.id, ib = b.id;
  Mat v = a.val().array().colwise() / b.val().col(0).array();
  return detail::op(t, v, {a, b}, [ia, ib](Tape& tp, const Mat& g) {
    Eigen::ArrayXd binv = 1.0 / tp.value(ib).col(0).array();
    tp.accum(ia, (g.array().colwise() * binv).matrix());
    Mat num = g.cwiseProduct(tp.value(ia)).rowwise().sum();
    tp.accum(ib, (-num.col(0).array() * binv * binv).matrix());
  });
}

// ---- reductions ----

/// Row-wise squared Euclidean norm: N x k -> N x 1.
inline Var row_sq_norm(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  return detail::op(t, a.val().rowwise().squaredNorm(), {a}, [ia](Tape& tp, const Mat& g) {
    tp.accum(ia, ((2.0 * tp.value(ia).array()).colwise() * g.col(0).array()).matrix());
  });
}

/// Row-wise Euclidean norm with a zero-safe subgradient at 0.
inline Var row_norm(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  Mat v = a.val().rowwise().norm();
  return detail::op(t, v, {a}, [ia, v](Tape& tp, const Mat& g) {
    Eigen::ArrayXd inv = (v.col(0).array() > 1e-300).select(1.0 / v.col(0).array().max(1e-300), 0.0);
    tp.accum(ia, (tp.value(ia).array().colwise() * (g.col(0).array() * inv)).matrix());
  });
}

inline Var sum_(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  Mat v(1, 1);
  v(0, 0) = a.val().sum();
  Eigen::Index r = a.val().rows(), c = a.val().cols();
  return detail::op(t, v, {a}, [ia, r, c](Tape& tp, const Mat& g) {
    tp.accum(ia, Mat::Constant(r, c, g(0, 0)));
  });
}

inline Var mean_(Var a) {
  Tape& t = *a.tape;
  int ia = a.id;
  Mat v(1, 1);
  v(0, 0) = a.val().mean();
  Eigen::Index r = a.val().rows(), c = a.val().cols();
  return detail::op(t, v, {a}, [ia, r, c](Tape& tp, const Mat& g) {
    tp.accum(ia, Mat::Constant(r, c, g(0, 0) / static_cast<double>(r * c)));
  });
}

// ---- fused nodes ----

/// Smooth-l1 between prediction and a constant target, summed over columns
/// and averaged over rows.
inline Var smooth_l1_mean(Var pred, const Mat& target, double beta) {
  Tape& t = *pred.tape;
  int ip = pred.id;
  const Mat e = pred.val() - target;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    double ae = std::abs(e(i));
    acc += (ae < beta) ? e(i) * e(i) / (2.0 * beta) : ae - beta / 2.0;
  }
  Mat v(1, 1);
  double n_rows = static_cast<double>(e.rows());
  v(0, 0) = acc / n_rows;
  return detail::op(t, v, {pred}, [ip, e, beta, n_rows](Tape& tp, const Mat& g) {
    Mat d(e.rows(), e.cols());
    for (Eigen::Index i = 0; i < e.size(); ++i) {
      double ae = std::abs(e(i));
      d(i) = (ae < beta) ? e(i) / beta : (e(i) > 0 ? 1.0 : (e(i) < 0 ? -1.0 : 0.0));
    }
    tp.accum(ip, g(0, 0) / n_rows * d);
  });
}

/// Per-sample pullback through the regularized encoder Jacobian:
/// row s of the result solves (J_s + eps I) w = f_s, where column k of J_s is
/// row s of tangents[k]. Gradients flow into both the tangents and f.
inline Var pullback_solve(const std::vector<Var>& tangents, Var f, double eps) {
  Tape& t = *f.tape;
  const Eigen::Index n = f.val().cols();
  const Eigen::Index N = f.val().rows();
  require(static_cast<Eigen::Index>(tangents.size()) == n, "pullback_solve: need n tangents");
  std::vector<int> tid(tangents.size());
  std::vector<Var> parents;
  for (std::size_t k = 0; k < tangents.size(); ++k) {
    tid[k] = tangents[k].id;
    parents.push_back(tangents[k]);
  }
  parents.push_back(f);
  int fid = f.id;

  Mat out(N, n);
  std::vector<Eigen::PartialPivLU<Mat>> lus;
  lus.reserve(static_cast<std::size_t>(N));
  for (Eigen::Index s = 0; s < N; ++s) {
    Mat J(n, n);
    for (Eigen::Index k = 0; k < n; ++k)
      J.col(k) = tangents[static_cast<std::size_t>(k)].val().row(s).transpose();
    J.diagonal().array() += eps;
    lus.emplace_back(J);
    out.row(s) = lus.back().solve(f.val().row(s).transpose()).transpose();
  }

  bool rg = detail::any_grad(parents);
  Var node = t.make(out, rg);
  if (rg) {
    int oid = node.id;
    Mat w_all = out;
    t.set_backward(oid, [oid, tid, fid, w_all, lus, n, N](Tape& tp) {
      const Mat& G = tp.grad_of(oid);
      Mat fbar(N, n);
      for (Eigen::Index s = 0; s < N; ++s) {
        // solve A^T fbar = g
        Vec fb = lus[static_cast<std::size_t>(s)].transpose().solve(G.row(s).transpose());
        fbar.row(s) = fb.transpose();
        Mat Abar = -fb * w_all.row(s);  // n x n
        for (Eigen::Index k = 0; k < n; ++k) {
          Mat tg = Mat::Zero(N, n);
          tg.row(s) = Abar.col(k).transpose();
          tp.accum(tid[static_cast<std::size_t>(k)], tg);
        }
      }
      tp.accum(fid, fbar);
    });
  }
  return node;
}

/// Symmetric Hausdorff distance between the rows of Y and a constant point
/// set C; the gradient is routed to the row realizing the max-min pair.
inline Var hausdorff_to_set(Var y, const Mat& c) {
  Tape& t = *y.tape;
  int iy = y.id;
  const Mat& Y = y.val();
  auto directed = [](const Mat& A, const Mat& B, Eigen::Index& ai, Eigen::Index& bi) {
    double best = -1.0;
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      double dmin = std::numeric_limits<double>::infinity();
      Eigen::Index jmin = 0;
      for (Eigen::Index j = 0; j < B.rows(); ++j) {
        double d = (A.row(i) - B.row(j)).norm();
        if (d < dmin) {
          dmin = d;
          jmin = j;
        }
      }
      if (dmin > best) {
        best = dmin;
        ai = i;
        bi = jmin;
      }
    }
    return best;
  };
  Eigen::Index a1 = 0, b1 = 0, a2 = 0, b2 = 0;
  double d1 = directed(Y, c, a1, b1);  // demo -> cycle
  double d2 = directed(c, Y, a2, b2);  // cycle -> demo
  Mat v(1, 1);
  v(0, 0) = std::max(d1, d2);
  Eigen::Index yrow = (d1 >= d2) ? a1 : b2;
  Vec diff = (d1 >= d2) ? Vec(Y.row(a1) - c.row(b1)) : Vec(Y.row(b2) - c.row(a2));
  double dist = std::max(v(0, 0), 1e-300);
  Eigen::Index N = Y.rows(), n = Y.cols();
  return detail::op(t, v, {y}, [iy, yrow, diff, dist, N, n](Tape& tp, const Mat& g) {
    Mat full = Mat::Zero(N, n);
    full.row(yrow) = (g(0, 0) / dist) * diff.transpose();
    tp.accum(iy, full);
  });
}

}  // namespace osmp::ad

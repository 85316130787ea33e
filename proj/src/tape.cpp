#include "dsmcl/tape.hpp"

#include <cmath>

namespace dsmcl {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a,
                              const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              a.shape_str() + " vs " + b.shape_str());
}

Tape& same_tape(const char* op, Var a, Var b) {
  if (a.tape() != b.tape())
    throw std::invalid_argument(std::string(op) +
                                ": operands from different tapes");
  return *a.tape();
}

// Elementwise binaries: equal shapes, or a scalar on one side.
enum class Broadcast { none, left_scalar, right_scalar };

Broadcast binary_mode(const char* op, const Tensor& a, const Tensor& b) {
  if (a.same_shape(b)) return Broadcast::none;
  if (a.is_scalar()) return Broadcast::left_scalar;
  if (b.is_scalar()) return Broadcast::right_scalar;
  shape_error(op, a, b);
}

}  // namespace

Gradient backward(Tape& tape, Var root) {
  if (root.tape() != &tape)
    throw std::invalid_argument("backward: root from a different tape");
  if (!root.value().is_scalar())
    throw std::invalid_argument("backward: root must be scalar, got " +
                                root.value().shape_str());

  tape.adjoints_.assign(tape.nodes_.size(), Tensor());
  tape.adjoints_[root.id()] = Tensor::constant(root.value().shape(), 1.0);

  for (int id = root.id(); id >= 0; --id) {
    const Tensor& adj = tape.adjoints_[id];
    if (!adj.defined()) continue;
    const Tape::Node& node = tape.nodes_[id];
    if (node.back) node.back(tape, node.value, adj);
  }

  Gradient g;
  for (std::size_t id = 0; id < tape.nodes_.size(); ++id) {
    const Tape::Node& node = tape.nodes_[id];
    if (!node.trainable) continue;
    const Tensor& adj = tape.adjoints_[id];
    g.set(node.name,
          adj.defined() ? adj : Tensor::zeros(node.value.shape()));
  }
  return g;
}

Var add(Var a, Var b) {
  Tape& t = same_tape("add", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Broadcast mode = binary_mode("add", av, bv);
  Tensor out;
  switch (mode) {
    case Broadcast::none:
      out = Tensor(av.shape(), av.flat() + bv.flat());
      break;
    case Broadcast::left_scalar:
      out = Tensor(bv.shape(), (bv.flat().array() + av.value()).matrix());
      break;
    case Broadcast::right_scalar:
      out = Tensor(av.shape(), (av.flat().array() + bv.value()).matrix());
      break;
  }
  int ia = a.id(), ib = b.id();
  return t.record(std::move(out),
                  [ia, ib, mode](Tape& tp, const Tensor&, const Tensor& g) {
                    if (mode == Broadcast::left_scalar)
                      tp.add_grad(ia, Tensor::scalar(g.flat().sum()));
                    else
                      tp.add_grad(ia, g);
                    if (mode == Broadcast::right_scalar)
                      tp.add_grad(ib, Tensor::scalar(g.flat().sum()));
                    else
                      tp.add_grad(ib, g);
                  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape("sub", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Broadcast mode = binary_mode("sub", av, bv);
  Tensor out;
  switch (mode) {
    case Broadcast::none:
      out = Tensor(av.shape(), av.flat() - bv.flat());
      break;
    case Broadcast::left_scalar:
      out = Tensor(bv.shape(), (av.value() - bv.flat().array()).matrix());
      break;
    case Broadcast::right_scalar:
      out = Tensor(av.shape(), (av.flat().array() - bv.value()).matrix());
      break;
  }
  int ia = a.id(), ib = b.id();
  return t.record(std::move(out),
                  [ia, ib, mode](Tape& tp, const Tensor&, const Tensor& g) {
                    if (mode == Broadcast::left_scalar)
                      tp.add_grad(ia, Tensor::scalar(g.flat().sum()));
                    else
                      tp.add_grad(ia, g);
                    if (mode == Broadcast::right_scalar)
                      tp.add_grad(ib, Tensor::scalar(-g.flat().sum()));
                    else
                      tp.add_grad(ib, Tensor(g.shape(), -g.flat()));
                  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape("mul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Broadcast mode = binary_mode("mul", av, bv);
  Tensor out;
  switch (mode) {
    case Broadcast::none:
      out = Tensor(av.shape(),
                   (av.flat().array() * bv.flat().array()).matrix());
      break;
    case Broadcast::left_scalar:
      out = Tensor(bv.shape(), bv.flat() * av.value());
      break;
    case Broadcast::right_scalar:
      out = Tensor(av.shape(), av.flat() * bv.value());
      break;
  }
  int ia = a.id(), ib = b.id();
  return t.record(
      std::move(out),
      [ia, ib, mode](Tape& tp, const Tensor&, const Tensor& g) {
        const Tensor& av = tp.value(ia);
        const Tensor& bv = tp.value(ib);
        switch (mode) {
          case Broadcast::none:
            tp.add_grad(ia, Tensor(g.shape(), (g.flat().array() *
                                               bv.flat().array()).matrix()));
            tp.add_grad(ib, Tensor(g.shape(), (g.flat().array() *
                                               av.flat().array()).matrix()));
            break;
          case Broadcast::left_scalar:
            tp.add_grad(ia, Tensor::scalar(g.flat().dot(bv.flat())));
            tp.add_grad(ib, Tensor(g.shape(), g.flat() * av.value()));
            break;
          case Broadcast::right_scalar:
            tp.add_grad(ia, Tensor(g.shape(), g.flat() * bv.value()));
            tp.add_grad(ib, Tensor::scalar(g.flat().dot(av.flat())));
            break;
        }
      });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  int ia = a.id();
  Tensor out(a.value().shape(), a.value().flat() * s);
  return t.record(std::move(out),
                  [ia, s](Tape& tp, const Tensor&, const Tensor& g) {
                    tp.add_grad(ia, Tensor(g.shape(), g.flat() * s));
                  });
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
    shape_error("matmul", av, bv);
  Tensor out = Tensor::from_matrix(av.mat() * bv.mat());
  int ia = a.id(), ib = b.id();
  return t.record(std::move(out),
                  [ia, ib](Tape& tp, const Tensor&, const Tensor& g) {
                    const Tensor& av = tp.value(ia);
                    const Tensor& bv = tp.value(ib);
                    tp.add_grad(ia, Tensor::from_matrix(
                                        g.mat() * bv.mat().transpose()));
                    tp.add_grad(ib, Tensor::from_matrix(
                                        av.mat().transpose() * g.mat()));
                  });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape();
  const Eigen::VectorXd& x = a.value().flat();
  Eigen::VectorXd y(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    // branch on sign for numerical stability
    if (x[i] >= 0.0)
      y[i] = 1.0 / (1.0 + std::exp(-x[i]));
    else {
      double e = std::exp(x[i]);
      y[i] = e / (1.0 + e);
    }
  }
  int ia = a.id();
  return t.record(Tensor(a.value().shape(), std::move(y)),
                  [ia](Tape& tp, const Tensor& y, const Tensor& g) {
                    Eigen::ArrayXd ya = y.flat().array();
                    tp.add_grad(ia, Tensor(g.shape(), (g.flat().array() * ya *
                                                       (1.0 - ya)).matrix()));
                  });
}

Var tanh(Var a) {
  Tape& t = *a.tape();
  Tensor out(a.value().shape(), a.value().flat().array().tanh().matrix());
  int ia = a.id();
  return t.record(std::move(out),
                  [ia](Tape& tp, const Tensor& y, const Tensor& g) {
                    Eigen::ArrayXd ya = y.flat().array();
                    tp.add_grad(ia, Tensor(g.shape(), (g.flat().array() *
                                                       (1.0 - ya * ya))
                                                          .matrix()));
                  });
}

Var exp(Var a) {
  Tape& t = *a.tape();
  Tensor out(a.value().shape(), a.value().flat().array().exp().matrix());
  int ia = a.id();
  return t.record(std::move(out),
                  [ia](Tape& tp, const Tensor& y, const Tensor& g) {
                    tp.add_grad(ia, Tensor(g.shape(), (g.flat().array() *
                                                       y.flat().array())
                                                          .matrix()));
                  });
}

Var log(Var a) {
  Tape& t = *a.tape();
  const Eigen::VectorXd& x = a.value().flat();
  for (Index i = 0; i < x.size(); ++i)
    if (x[i] <= 0.0)
      throw std::domain_error("log: non-positive value " +
                              std::to_string(x[i]) + " at index " +
                              std::to_string(i));
  Tensor out(a.value().shape(), x.array().log().matrix());
  int ia = a.id();
  return t.record(std::move(out),
                  [ia](Tape& tp, const Tensor&, const Tensor& g) {
                    const Tensor& x = tp.value(ia);
                    tp.add_grad(ia, Tensor(g.shape(), (g.flat().array() /
                                                       x.flat().array())
                                                          .matrix()));
                  });
}

Var abs(Var a) {
  Tape& t = *a.tape();
  Tensor out(a.value().shape(), a.value().flat().array().abs().matrix());
  int ia = a.id();
  return t.record(std::move(out),
                  [ia](Tape& tp, const Tensor&, const Tensor& g) {
                    const Tensor& x = tp.value(ia);
                    Eigen::ArrayXd sign = x.flat().array().sign();
                    tp.add_grad(ia, Tensor(g.shape(), (g.flat().array() * sign)
                                                          .matrix()));
                  });
}

namespace {

// Row-wise softmax of the matrix view, max-subtracted per row.
Matrix softmax_rows(const Tensor& x) {
  Matrix y = x.mat();
  for (Index r = 0; r < y.rows(); ++r) {
    double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

}  // namespace

Var softmax(Var a) {
  Tape& t = *a.tape();
  Tensor out(a.value().shape(), Eigen::VectorXd());
  {
    Matrix y = softmax_rows(a.value());
    out = Tensor::from_matrix(y);
    out = Tensor(a.value().shape(), std::move(out.flat()));
  }
  int ia = a.id();
  return t.record(std::move(out),
                  [ia](Tape& tp, const Tensor& y, const Tensor& g) {
                    // dz_r = y_r * (g_r - <g_r, y_r>)
                    Matrix ym = y.mat();
                    Matrix gm = g.mat();
                    Matrix dz(ym.rows(), ym.cols());
                    for (Index r = 0; r < ym.rows(); ++r) {
                      double dot = gm.row(r).dot(ym.row(r));
                      dz.row(r) =
                          ym.row(r).array() * (gm.row(r).array() - dot);
                    }
                    Tensor dg = Tensor::from_matrix(dz);
                    tp.add_grad(ia, Tensor(g.shape(), std::move(dg.flat())));
                  });
}

Var log_softmax(Var a) {
  Tape& t = *a.tape();
  Matrix x = a.value().mat();
  Matrix y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double m = x.row(r).maxCoeff();
    double lse = m + std::log((x.row(r).array() - m).exp().sum());
    y.row(r) = x.row(r).array() - lse;
  }
  Tensor out = Tensor::from_matrix(y);
  out = Tensor(a.value().shape(), std::move(out.flat()));
  int ia = a.id();
  return t.record(std::move(out),
                  [ia](Tape& tp, const Tensor& y, const Tensor& g) {
                    // dz_r = g_r - softmax_r * sum(g_r)
                    Matrix sm = y.mat().array().exp();
                    Matrix gm = g.mat();
                    Matrix dz(sm.rows(), sm.cols());
                    for (Index r = 0; r < sm.rows(); ++r) {
                      double gs = gm.row(r).sum();
                      dz.row(r) = gm.row(r) - gs * sm.row(r);
                    }
                    Tensor dg = Tensor::from_matrix(dz);
                    tp.add_grad(ia, Tensor(g.shape(), std::move(dg.flat())));
                  });
}

namespace {

void check_concat_shapes(std::span<const Var> parts, int axis) {
  if (parts.empty())
    throw std::invalid_argument("concat: no operands");
  const Tensor& first = parts[0].value();
  Index rank = first.rank();
  if (rank > 2)
    throw std::invalid_argument("concat: rank > 2 not supported, got " +
                                first.shape_str());
  if (axis < 0 || axis >= rank)
    throw std::invalid_argument("concat: axis " + std::to_string(axis) +
                                " out of range for rank " +
                                std::to_string(rank));
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (v.rank() != rank) shape_error("concat", first, v);
    for (Index d = 0; d < rank; ++d)
      if (d != axis && v.shape()[d] != first.shape()[d])
        shape_error("concat", first, v);
  }
}

}  // namespace

Var concat(std::span<const Var> parts, int axis) {
  check_concat_shapes(parts, axis);
  Tape& t = *parts[0].tape();
  const Tensor& first = parts[0].value();
  Index rank = first.rank();

  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  for (const Var& p : parts) out_shape[axis] += p.value().shape()[axis];

  Tensor out = Tensor::zeros(out_shape);
  std::vector<int> ids;
  std::vector<Index> extents;
  ids.reserve(parts.size());
  extents.reserve(parts.size());
  bool along_rows = (rank == 2 && axis == 0);
  Index offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    Index extent = v.shape()[axis];
    if (rank == 1 || !along_rows)  // along the last axis
      out.mat().middleCols(offset, v.cols()) = v.mat();
    else
      out.mat().middleRows(offset, v.rows()) = v.mat();
    ids.push_back(p.id());
    extents.push_back(extent);
    offset += extent;
  }

  return t.record(
      std::move(out),
      [ids, extents, along_rows](Tape& tp, const Tensor&, const Tensor& g) {
        Index offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const Tensor& in = tp.value(ids[k]);
          Tensor piece = Tensor::zeros(in.shape());
          if (!along_rows)
            piece.mat() = g.mat().middleCols(offset, piece.cols());
          else
            piece.mat() = g.mat().middleRows(offset, piece.rows());
          tp.add_grad(ids[k], piece);
          offset += extents[k];
        }
      });
}

Var concat(std::initializer_list<Var> parts, int axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(Var a, int axis, Index start, Index count) {
  Tape& t = *a.tape();
  const Tensor& v = a.value();
  Index rank = v.rank();
  if (rank > 2)
    throw std::invalid_argument("slice: rank > 2 not supported, got " +
                                v.shape_str());
  if (axis < 0 || axis >= rank)
    throw std::invalid_argument("slice: axis " + std::to_string(axis) +
                                " out of range for rank " +
                                std::to_string(rank));
  if (start < 0 || count <= 0 || start + count > v.shape()[axis])
    throw std::invalid_argument(
        "slice: range [" + std::to_string(start) + ", " +
        std::to_string(start + count) + ") out of bounds for axis " +
        std::to_string(axis) + " of " + v.shape_str());

  bool along_rows = (rank == 2 && axis == 0);
  Shape out_shape = v.shape();
  out_shape[axis] = count;
  Tensor out = Tensor::zeros(out_shape);
  if (along_rows)
    out.mat() = v.mat().middleRows(start, count);
  else
    out.mat() = v.mat().middleCols(start, count);

  int ia = a.id();
  return t.record(std::move(out),
                  [ia, along_rows, start, count](Tape& tp, const Tensor&,
                                                 const Tensor& g) {
                    Tensor dg = Tensor::zeros(tp.value(ia).shape());
                    if (along_rows)
                      dg.mat().middleRows(start, count) = g.mat();
                    else
                      dg.mat().middleCols(start, count) = g.mat();
                    tp.add_grad(ia, dg);
                  });
}

Var reshape(Var a, Shape shape) {
  Tape& t = *a.tape();
  Tensor out(shape, a.value().flat());
  if (out.size() != a.value().size())
    throw std::invalid_argument("reshape: size mismatch " +
                                a.value().shape_str() + " -> " +
                                shape_to_string(shape));
  int ia = a.id();
  return t.record(std::move(out),
                  [ia](Tape& tp, const Tensor&, const Tensor& g) {
                    tp.add_grad(ia,
                                Tensor(tp.value(ia).shape(), g.flat()));
                  });
}

Var tile_rows(Var a, Index copies) {
  Tape& t = *a.tape();
  const Tensor& v = a.value();
  if (v.rows() != 1)
    throw std::invalid_argument("tile_rows: expected a single row, got " +
                                v.shape_str());
  if (copies <= 0)
    throw std::invalid_argument("tile_rows: copies must be positive");
  Tensor out = Tensor::zeros({copies, v.cols()});
  out.mat() = v.mat().replicate(copies, 1);
  int ia = a.id();
  return t.record(std::move(out),
                  [ia](Tape& tp, const Tensor&, const Tensor& g) {
                    const Tensor& in = tp.value(ia);
                    Tensor dg = Tensor::zeros(in.shape());
                    dg.mat() = g.mat().colwise().sum();
                    tp.add_grad(ia, dg);
                  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  int ia = a.id();
  return t.record(Tensor::scalar(a.value().flat().sum()),
                  [ia](Tape& tp, const Tensor&, const Tensor& g) {
                    tp.add_grad(ia, Tensor::constant(tp.value(ia).shape(),
                                                     g.value()));
                  });
}

Var mean(Var a) {
  Tape& t = *a.tape();
  Index n = a.value().size();
  int ia = a.id();
  return t.record(Tensor::scalar(a.value().flat().sum() / double(n)),
                  [ia, n](Tape& tp, const Tensor&, const Tensor& g) {
                    tp.add_grad(ia, Tensor::constant(tp.value(ia).shape(),
                                                     g.value() / double(n)));
                  });
}

Var norm_rows(Var a) {
  Tape& t = *a.tape();
  const Tensor& v = a.value();
  Eigen::VectorXd norms = v.mat().rowwise().norm();
  Shape out_shape;
  if (v.rank() <= 1)
    out_shape = {1};
  else {
    out_shape = v.shape();
    out_shape.pop_back();
  }
  int ia = a.id();
  return t.record(
      Tensor(std::move(out_shape), std::move(norms)),
      [ia](Tape& tp, const Tensor& y, const Tensor& g) {
        const Tensor& x = tp.value(ia);
        Tensor dg = Tensor::zeros(x.shape());
        auto xm = x.mat();
        auto dm = dg.mat();
        for (Index r = 0; r < xm.rows(); ++r) {
          double n = y.flat()[r];
          if (n > 0.0) dm.row(r) = (g.flat()[r] / n) * xm.row(r);
        }
        tp.add_grad(ia, dg);
      });
}

}  // namespace dsmcl

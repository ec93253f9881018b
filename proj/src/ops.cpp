#include "tumordet/ops.hpp"

#include <cmath>
#include <limits>

namespace tumordet {
namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

// Unfolds padded receptive fields into a (C*kh*kw) x (Ho*Wo) matrix.
RowMatrix im2col(const Tensor& in, Index kh, Index kw, Index stride, Index padding, Index ho, Index wo) {
  const Index channels = in.dim(0), h = in.dim(1), w = in.dim(2);
  RowMatrix cols = RowMatrix::Zero(channels * kh * kw, ho * wo);
  for (Index c = 0; c < channels; ++c) {
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj) {
        double* row = cols.row((c * kh + ki) * kw + kj).data();
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride - padding + ki;
          if (iy < 0 || iy >= h) continue;
          const double* src = in.data().data() + (c * h + iy) * w;
          double* dst = row + oy * wo;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * stride - padding + kj;
            if (ix >= 0 && ix < w) dst[ox] = src[ix];
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const RowMatrix& cols, const Shape& in_shape, Index kh, Index kw, Index stride, Index padding, Index ho,
                Index wo, Eigen::VectorXd& grad) {
  const Index channels = in_shape[0], h = in_shape[1], w = in_shape[2];
  for (Index c = 0; c < channels; ++c) {
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj) {
        const double* row = cols.row((c * kh + ki) * kw + kj).data();
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride - padding + ki;
          if (iy < 0 || iy >= h) continue;
          double* dst = grad.data() + (c * h + iy) * w;
          const double* src = row + oy * wo;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * stride - padding + kj;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& kernel, Index stride, Index padding) {
  const Tensor& in = x.value();
  const Tensor& k = kernel.value();
  require(in.rank() == 3, "conv2d: input must be [C,H,W], got " + to_string(in.shape()));
  require(k.rank() == 4, "conv2d: kernel must be [K,C,kh,kw], got " + to_string(k.shape()));
  require(k.dim(1) == in.dim(0), "conv2d: kernel expects " + std::to_string(k.dim(1)) + " input channels, input has " +
                                     std::to_string(in.dim(0)));
  const Index out_ch = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  require(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel extents must be odd");
  require(stride >= 1 && padding >= 0, "conv2d: stride must be >= 1 and padding >= 0");
  const Index span_h = in.dim(1) + 2 * padding - kh, span_w = in.dim(2) + 2 * padding - kw;
  require(span_h >= 0 && span_w >= 0, "conv2d: kernel larger than padded input " + to_string(in.shape()));
  const Index ho = span_h / stride + 1, wo = span_w / stride + 1;

  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;
  RowMatrix cols;
  if (!pointwise) cols = im2col(in, kh, kw, stride, padding, ho, wo);

  const ConstMatrixView kmat = k.matrix(out_ch, k.size() / out_ch);
  Tensor out({out_ch, ho, wo});
  if (pointwise) {
    out.channels().noalias() = kmat * in.channels();
  } else {
    out.channels().noalias() = kmat * cols;
  }

  const Index xid = x.id(), kid = kernel.id();
  const Shape in_shape = in.shape();
  return x.tape().record(std::move(out), {x, kernel},
                         [=, cols = std::move(cols)](Tape& tape, Index self) {
                           const Eigen::VectorXd& g = tape.grad(self);
                           const ConstMatrixView gy(g.data(), out_ch, ho * wo);
                           const Tensor& kt = tape.value(kid);
                           const ConstMatrixView km = kt.matrix(out_ch, kt.size() / out_ch);
                           if (tape.requires_grad(kid)) {
                             Eigen::VectorXd& gk = tape.grad_buffer(kid);
                             MatrixView gkm(gk.data(), out_ch, kt.size() / out_ch);
                             if (pointwise) {
                               gkm.noalias() += gy * tape.value(xid).channels().transpose();
                             } else {
                               gkm.noalias() += gy * cols.transpose();
                             }
                           }
                           if (tape.requires_grad(xid)) {
                             Eigen::VectorXd& gx = tape.grad_buffer(xid);
                             if (pointwise) {
                               MatrixView gxm(gx.data(), in_shape[0], in_shape[1] * in_shape[2]);
                               gxm.noalias() += km.transpose() * gy;
                             } else {
                               const RowMatrix dcols = km.transpose() * gy;
                               col2im_add(dcols, in_shape, kh, kw, stride, padding, ho, wo, gx);
                             }
                           }
                         });
}

Var add_bias(const Var& x, const Var& bias) {
  const Tensor& in = x.value();
  require(in.rank() >= 1 && bias.value().rank() == 1 && bias.value().size() == in.dim(0),
          "add_bias: bias " + to_string(bias.shape()) + " does not match channels of " + to_string(in.shape()));
  const Index channels = in.dim(0), per = in.size() / channels;
  Tensor out = in;
  out.matrix(channels, per).colwise() += bias.value().data();
  const Index xid = x.id(), bid = bias.id();
  return x.tape().record(std::move(out), {x, bias}, [=](Tape& tape, Index self) {
    const ConstMatrixView g(tape.grad(self).data(), channels, per);
    if (tape.requires_grad(xid)) tape.grad_buffer(xid) += tape.grad(self);
    if (tape.requires_grad(bid)) tape.grad_buffer(bid) += g.rowwise().sum();
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  out.data() = out.data().cwiseMax(0.0);
  const Index xid = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& tape, Index self) {
    const Eigen::VectorXd& in = tape.value(xid).data();
    tape.grad_buffer(xid).array() += (in.array() > 0.0).select(tape.grad(self).array(), 0.0);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape(), a.value().data() + b.value().data());
  const Index aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape& tape, Index self) {
    if (tape.requires_grad(aid)) tape.grad_buffer(aid) += tape.grad(self);
    if (tape.requires_grad(bid)) tape.grad_buffer(bid) += tape.grad(self);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape(), a.value().data().cwiseProduct(b.value().data()));
  const Index aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape& tape, Index self) {
    const Eigen::VectorXd& g = tape.grad(self);
    if (tape.requires_grad(aid)) tape.grad_buffer(aid) += g.cwiseProduct(tape.value(bid).data());
    if (tape.requires_grad(bid)) tape.grad_buffer(bid) += g.cwiseProduct(tape.value(aid).data());
  });
}

Var scale(const Var& x, double factor) {
  Tensor out(x.shape(), x.value().data() * factor);
  const Index xid = x.id();
  return x.tape().record(std::move(out), {x},
                         [=](Tape& tape, Index self) { tape.grad_buffer(xid) += factor * tape.grad(self); });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape(), (1.0 / (1.0 + (-x.value().data().array()).exp())).matrix());
  const Index xid = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& tape, Index self) {
    const Eigen::ArrayXd y = tape.value(self).data().array();
    tape.grad_buffer(xid).array() += tape.grad(self).array() * y * (1.0 - y);
  });
}

Var reshape(const Var& x, Shape shape) {
  require(element_count(shape) == x.value().size(),
          "reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  Tensor out(std::move(shape), x.value().data());
  const Index xid = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& tape, Index self) { tape.grad_buffer(xid) += tape.grad(self); });
}

Var concat_channels(std::span<const Var> xs) {
  require(!xs.empty(), "concat_channels: no inputs");
  const Shape& first = xs[0].shape();
  require(!first.empty(), "concat_channels: scalar input");
  Index channels = 0;
  for (const Var& v : xs) {
    const Shape& s = v.shape();
    require(s.size() == first.size() && std::equal(s.begin() + 1, s.end(), first.begin() + 1),
            "concat_channels: spatial mismatch " + to_string(s) + " vs " + to_string(first));
    channels += s[0];
  }
  Shape out_shape = first;
  out_shape[0] = channels;
  Tensor out(out_shape);
  std::vector<std::pair<Index, Index>> segments;  // (node id, offset)
  Index offset = 0;
  for (const Var& v : xs) {
    out.data().segment(offset, v.value().size()) = v.value().data();
    segments.emplace_back(v.id(), offset);
    offset += v.value().size();
  }
  return xs[0].tape().record(std::move(out), xs, [segments](Tape& tape, Index self) {
    const Eigen::VectorXd& g = tape.grad(self);
    for (auto [id, off] : segments) {
      if (tape.requires_grad(id)) tape.grad_buffer(id) += g.segment(off, tape.value(id).size());
    }
  });
}

Var concat_channels(std::initializer_list<Var> xs) {
  return concat_channels(std::span<const Var>(xs.begin(), xs.size()));
}

Var upsample2x(const Var& x) {
  const Tensor& in = x.value();
  require(in.rank() == 3, "upsample2x: input must be [C,H,W], got " + to_string(in.shape()));
  const Index c = in.dim(0), h = in.dim(1), w = in.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < 2 * h; ++y)
      for (Index xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = in.at(ch, y / 2, xx / 2);
  const Index xid = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& tape, Index self) {
    const Eigen::VectorXd& g = tape.grad(self);
    Eigen::VectorXd& gx = tape.grad_buffer(xid);
    for (Index ch = 0; ch < c; ++ch)
      for (Index y = 0; y < 2 * h; ++y)
        for (Index xx = 0; xx < 2 * w; ++xx) gx[(ch * h + y / 2) * w + xx / 2] += g[(ch * 2 * h + y) * 2 * w + xx];
  });
}

Var softmax_rows(const Var& logits) {
  const Tensor& in = logits.value();
  require(in.rank() == 2, "softmax_rows: expected a matrix, got " + to_string(in.shape()));
  const Index rows = in.dim(0), cols = in.dim(1);
  Tensor out(in.shape());
  const ConstMatrixView z = in.channels();
  MatrixView y = out.channels();
  y = (z.colwise() - z.rowwise().maxCoeff()).array().exp().matrix();
  y.array().colwise() /= y.rowwise().sum().array();
  const Index xid = logits.id();
  return logits.tape().record(std::move(out), {logits}, [=](Tape& tape, Index self) {
    const ConstMatrixView yv(tape.value(self).data().data(), rows, cols);
    const ConstMatrixView g(tape.grad(self).data(), rows, cols);
    const Eigen::VectorXd dot = (g.array() * yv.array()).rowwise().sum();
    MatrixView gx(tape.grad_buffer(xid).data(), rows, cols);
    gx.array() += yv.array() * (g.colwise() - dot).array();
  });
}

Var matmul(const Var& a, const Var& b, bool transpose_a, bool transpose_b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2, "matmul: operands must be matrices");
  const ConstMatrixView am = av.channels(), bm = bv.channels();
  const Index m = transpose_a ? am.cols() : am.rows();
  const Index ka = transpose_a ? am.rows() : am.cols();
  const Index kb = transpose_b ? bm.cols() : bm.rows();
  const Index n = transpose_b ? bm.rows() : bm.cols();
  require(ka == kb, "matmul: inner dimensions differ, " + to_string(av.shape()) + " and " + to_string(bv.shape()));
  Tensor out({m, n});
  MatrixView om = out.channels();
  if (!transpose_a && !transpose_b) om.noalias() = am * bm;
  if (transpose_a && !transpose_b) om.noalias() = am.transpose() * bm;
  if (!transpose_a && transpose_b) om.noalias() = am * bm.transpose();
  if (transpose_a && transpose_b) om.noalias() = am.transpose() * bm.transpose();

  const Index aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape& tape, Index self) {
    const ConstMatrixView g(tape.grad(self).data(), m, n);
    const Tensor& at = tape.value(aid);
    const Tensor& bt = tape.value(bid);
    const ConstMatrixView A = at.channels(), B = bt.channels();
    if (tape.requires_grad(aid)) {
      MatrixView ga(tape.grad_buffer(aid).data(), A.rows(), A.cols());
      // d op(A) = G op(B)^T
      if (!transpose_a && !transpose_b) ga.noalias() += g * B.transpose();
      if (!transpose_a && transpose_b) ga.noalias() += g * B;
      if (transpose_a && !transpose_b) ga.noalias() += B * g.transpose();
      if (transpose_a && transpose_b) ga.noalias() += B.transpose() * g.transpose();
    }
    if (tape.requires_grad(bid)) {
      MatrixView gb(tape.grad_buffer(bid).data(), B.rows(), B.cols());
      // d op(B) = op(A)^T G
      if (!transpose_a && !transpose_b) gb.noalias() += A.transpose() * g;
      if (transpose_a && !transpose_b) gb.noalias() += A * g;
      if (!transpose_a && transpose_b) gb.noalias() += g.transpose() * A;
      if (transpose_a && transpose_b) gb.noalias() += g.transpose() * A.transpose();
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require(xv.rank() == 2 && wv.rank() == 2 && wv.dim(1) == xv.dim(1),
          "linear: input " + to_string(xv.shape()) + " incompatible with weight " + to_string(wv.shape()));
  require(bias.value().rank() == 1 && bias.value().size() == wv.dim(0), "linear: bias does not match output width");
  const Index rows = xv.dim(0), outs = wv.dim(0), feats = wv.dim(1);
  Tensor out({rows, outs});
  out.channels().noalias() = xv.channels() * wv.channels().transpose();
  out.channels().rowwise() += bias.value().data().transpose();
  const Index xid = x.id(), wid = weight.id(), bid = bias.id();
  return x.tape().record(std::move(out), {x, weight, bias}, [=](Tape& tape, Index self) {
    const ConstMatrixView g(tape.grad(self).data(), rows, outs);
    if (tape.requires_grad(xid)) {
      MatrixView gx(tape.grad_buffer(xid).data(), rows, feats);
      gx.noalias() += g * tape.value(wid).channels();
    }
    if (tape.requires_grad(wid)) {
      MatrixView gw(tape.grad_buffer(wid).data(), outs, feats);
      gw.noalias() += g.transpose() * tape.value(xid).channels();
    }
    if (tape.requires_grad(bid)) tape.grad_buffer(bid) += g.colwise().sum().transpose();
  });
}

Var stack_rows(std::span<const Var> xs) {
  require(!xs.empty(), "stack_rows: no inputs");
  const Index width = xs[0].value().size();
  Tensor out({static_cast<Index>(xs.size()), width});
  std::vector<Index> ids;
  ids.reserve(xs.size());
  for (std::size_t r = 0; r < xs.size(); ++r) {
    require(xs[r].value().size() == width, "stack_rows: inputs differ in size");
    out.data().segment(static_cast<Index>(r) * width, width) = xs[r].value().data();
    ids.push_back(xs[r].id());
  }
  return xs[0].tape().record(std::move(out), xs, [ids, width](Tape& tape, Index self) {
    const Eigen::VectorXd& g = tape.grad(self);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (tape.requires_grad(ids[r])) tape.grad_buffer(ids[r]) += g.segment(static_cast<Index>(r) * width, width);
    }
  });
}

Var gather(const Var& x, std::span<const Index> indices) {
  const Index n = x.value().size();
  require(!indices.empty(), "gather: empty index list");
  Tensor out({static_cast<Index>(indices.size())});
  std::vector<Index> idx(indices.begin(), indices.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < n, "gather: index out of range");
    out[static_cast<Index>(i)] = x.value()[idx[i]];
  }
  const Index xid = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& tape, Index self) {
    const Eigen::VectorXd& g = tape.grad(self);
    Eigen::VectorXd& gx = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[static_cast<Index>(i)];
  });
}

Var sum(const Var& x) {
  Tensor out({1});
  out[0] = x.value().data().sum();
  const Index xid = x.id();
  return x.tape().record(std::move(out), {x},
                         [=](Tape& tape, Index self) { tape.grad_buffer(xid).array() += tape.grad(self)[0]; });
}

Var roi_pool(const Var& features, const Box& roi, double spatial_scale, Index out) {
  const Tensor& f = features.value();
  require(f.rank() == 3, "roi_pool: features must be [C,H,W], got " + to_string(f.shape()));
  if (!(roi.width() > 0 && roi.height() > 0)) throw std::invalid_argument("roi_pool: roi must have positive extent");
  require(out >= 1 && spatial_scale > 0, "roi_pool: invalid output size or scale");
  const Index channels = f.dim(0), h = f.dim(1), w = f.dim(2);

  const double x0 = roi.x1 * spatial_scale, y0 = roi.y1 * spatial_scale;
  const double bin_w = roi.width() * spatial_scale / static_cast<double>(out);
  const double bin_h = roi.height() * spatial_scale / static_cast<double>(out);

  // Per bin, the clamped [lo, hi) range of map cells touched by its extent.
  auto cell_range = [](double start, double end, Index limit) {
    Index lo = static_cast<Index>(std::floor(start));
    Index hi = static_cast<Index>(std::ceil(end));
    if (hi <= lo) hi = lo + 1;
    return std::pair<Index, Index>{std::clamp<Index>(lo, 0, limit), std::clamp<Index>(hi, 0, limit)};
  };
  std::vector<std::pair<Index, Index>> rows(static_cast<std::size_t>(out)), cols(static_cast<std::size_t>(out));
  for (Index b = 0; b < out; ++b) {
    rows[static_cast<std::size_t>(b)] = cell_range(y0 + b * bin_h, y0 + (b + 1) * bin_h, h);
    cols[static_cast<std::size_t>(b)] = cell_range(x0 + b * bin_w, x0 + (b + 1) * bin_w, w);
  }

  Tensor pooled({channels, out, out});
  std::vector<Index> argmax(static_cast<std::size_t>(channels * out * out), -1);
  for (Index c = 0; c < channels; ++c) {
    const double* plane = f.data().data() + c * h * w;
    for (Index by = 0; by < out; ++by) {
      const auto [ylo, yhi] = rows[static_cast<std::size_t>(by)];
      for (Index bx = 0; bx < out; ++bx) {
        const auto [xlo, xhi] = cols[static_cast<std::size_t>(bx)];
        double best = -std::numeric_limits<double>::infinity();
        Index best_at = -1;
        for (Index y = ylo; y < yhi; ++y)
          for (Index x = xlo; x < xhi; ++x) {
            const double v = plane[y * w + x];
            if (v > best) {
              best = v;
              best_at = c * h * w + y * w + x;
            }
          }
        const Index o = (c * out + by) * out + bx;
        pooled[o] = best_at >= 0 ? best : 0.0;
        argmax[static_cast<std::size_t>(o)] = best_at;
      }
    }
  }
  const Index fid = features.id();
  return features.tape().record(std::move(pooled), {features}, [fid, argmax = std::move(argmax)](Tape& tape, Index self) {
    const Eigen::VectorXd& g = tape.grad(self);
    Eigen::VectorXd& gf = tape.grad_buffer(fid);
    for (std::size_t o = 0; o < argmax.size(); ++o) {
      if (argmax[o] >= 0) gf[argmax[o]] += g[static_cast<Index>(o)];
    }
  });
}

Var bce_with_logits(const Var& logits, std::span<const double> labels) {
  const Eigen::VectorXd& z = logits.value().data();
  require(z.size() == static_cast<Index>(labels.size()), "bce_with_logits: label count differs from logit count");
  const Eigen::Map<const Eigen::VectorXd> y(labels.data(), static_cast<Index>(labels.size()));
  Tensor out({1});
  out[0] = (z.array().max(0.0) - z.array() * y.array() + (1.0 + (-z.array().abs()).exp()).log()).sum();
  const Index zid = logits.id();
  const Eigen::VectorXd target = y;
  return logits.tape().record(std::move(out), {logits}, [=](Tape& tape, Index self) {
    const Eigen::ArrayXd zz = tape.value(zid).data().array();
    const Eigen::ArrayXd p = 1.0 / (1.0 + (-zz).exp());
    tape.grad_buffer(zid).array() += tape.grad(self)[0] * (p - target.array());
  });
}

double smooth_l1_value(double residual) {
  const double a = std::abs(residual);
  return a < 1.0 ? 0.5 * a * a : a - 0.5;
}

Var smooth_l1(const Var& pred, std::span<const double> target) {
  const Eigen::VectorXd& p = pred.value().data();
  require(p.size() == static_cast<Index>(target.size()), "smooth_l1: target count differs from prediction count");
  const Eigen::VectorXd d = p - Eigen::Map<const Eigen::VectorXd>(target.data(), p.size());
  Tensor out({1});
  for (Index i = 0; i < d.size(); ++i) out[0] += smooth_l1_value(d[i]);
  const Index pid = pred.id();
  return pred.tape().record(std::move(out), {pred}, [=](Tape& tape, Index self) {
    const double g = tape.grad(self)[0];
    Eigen::VectorXd& gp = tape.grad_buffer(pid);
    for (Index i = 0; i < d.size(); ++i) gp[i] += g * (std::abs(d[i]) < 1.0 ? d[i] : (d[i] > 0 ? 1.0 : -1.0));
  });
}

}  // namespace tumordet

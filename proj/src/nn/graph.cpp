#include "timt/nn/graph.hpp"

#include <cmath>

namespace timt::nn {

namespace {
constexpr double kNegInf = -1e30;
}

int Graph::new_node(Mat value, bool needs_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = grad_enabled_ && needs_grad;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Graph::acc(int id, const Mat& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  }
  n.grad += g;
}

Mat& Graph::grad_buf(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

double Graph::scalar(Var v) const {
  const Mat& m = value(v);
  require(m.rows() == 1 && m.cols() == 1, "not a scalar node");
  return m(0, 0);
}

Var Graph::input(Mat v) { return Var{new_node(std::move(v), false)}; }

Var Graph::param(Param& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{it->second};
  int id = new_node(p.value, true);
  if (grad_enabled_) {
    nodes_[id].leaf = &p;
  } else {
    nodes_[id].needs_grad = false;
  }
  param_nodes_[&p] = id;
  return Var{id};
}

Var Graph::add(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
          "add: shape mismatch");
  int id = new_node(value(a) + value(b), needs(a) || needs(b));
  if (nodes_[id].needs_grad) {
    int pa = a.id, pb = b.id;
    nodes_[id].back = [pa, pb](Graph& g, int self) {
      g.acc(pa, g.nodes_[self].grad);
      g.acc(pb, g.nodes_[self].grad);
    };
  }
  return Var{id};
}

Var Graph::sub(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
          "sub: shape mismatch");
  int id = new_node(value(a) - value(b), needs(a) || needs(b));
  if (nodes_[id].needs_grad) {
    int pa = a.id, pb = b.id;
    nodes_[id].back = [pa, pb](Graph& g, int self) {
      g.acc(pa, g.nodes_[self].grad);
      g.acc(pb, -g.nodes_[self].grad);
    };
  }
  return Var{id};
}

Var Graph::mul(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
          "mul: shape mismatch");
  int id = new_node(value(a).cwiseProduct(value(b)), needs(a) || needs(b));
  if (nodes_[id].needs_grad) {
    int pa = a.id, pb = b.id;
    nodes_[id].back = [pa, pb](Graph& g, int self) {
      const Mat& dy = g.nodes_[self].grad;
      g.acc(pa, dy.cwiseProduct(g.nodes_[pb].value));
      g.acc(pb, dy.cwiseProduct(g.nodes_[pa].value));
    };
  }
  return Var{id};
}

Var Graph::scale(Var a, double s) {
  int id = new_node(value(a) * s, needs(a));
  if (nodes_[id].needs_grad) {
    int pa = a.id;
    nodes_[id].back = [pa, s](Graph& g, int self) {
      g.acc(pa, g.nodes_[self].grad * s);
    };
  }
  return Var{id};
}

Var Graph::matmul(Var a, Var b) {
  require(value(a).cols() == value(b).rows(), "matmul: inner dim mismatch");
  int id = new_node(value(a) * value(b), needs(a) || needs(b));
  if (nodes_[id].needs_grad) {
    int pa = a.id, pb = b.id;
    nodes_[id].back = [pa, pb](Graph& g, int self) {
      const Mat& dy = g.nodes_[self].grad;
      if (g.nodes_[pa].needs_grad) g.acc(pa, dy * g.nodes_[pb].value.transpose());
      if (g.nodes_[pb].needs_grad) g.acc(pb, g.nodes_[pa].value.transpose() * dy);
    };
  }
  return Var{id};
}

Var Graph::add_row(Var x, Var row) {
  require(value(row).rows() == 1 && value(row).cols() == value(x).cols(),
          "add_row: bias shape mismatch");
  Mat y = value(x);
  y.rowwise() += value(row).row(0);
  int id = new_node(std::move(y), needs(x) || needs(row));
  if (nodes_[id].needs_grad) {
    int px = x.id, pr = row.id;
    nodes_[id].back = [px, pr](Graph& g, int self) {
      const Mat& dy = g.nodes_[self].grad;
      g.acc(px, dy);
      if (g.nodes_[pr].needs_grad) {
        g.acc(pr, dy.colwise().sum());
      }
    };
  }
  return Var{id};
}

Var Graph::relu(Var x) {
  int id = new_node(value(x).cwiseMax(0.0), needs(x));
  if (nodes_[id].needs_grad) {
    int px = x.id;
    nodes_[id].back = [px](Graph& g, int self) {
      const Mat& dy = g.nodes_[self].grad;
      const Mat& xv = g.nodes_[px].value;
      g.acc(px, dy.cwiseProduct((xv.array() > 0.0).cast<double>().matrix()));
    };
  }
  return Var{id};
}

Var Graph::dropout(Var x, double rate, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout rate must be in [0,1)");
  if (rate == 0.0) return x;
  const Mat& xv = value(x);
  Mat mask(xv.rows(), xv.cols());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index c = 0; c < xv.cols(); ++c) {
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
      mask(r, c) = rng.uniform() < rate ? 0.0 : keep_scale;
    }
  }
  return mul(x, input(std::move(mask)));
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Mat& xv = value(x);
  const Eigen::Index d = xv.cols();
  require(value(gamma).rows() == 1 && value(gamma).cols() == d, "layer_norm: gamma shape");
  require(value(beta).rows() == 1 && value(beta).cols() == d, "layer_norm: beta shape");

  Mat xhat(xv.rows(), d);
  Vec inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std(r) = is;
    xhat.row(r) = (xv.row(r).array() - mean) * is;
  }
  Mat y = (xhat.array().rowwise() * value(gamma).row(0).array()).matrix();
  y.rowwise() += value(beta).row(0);

  int id = new_node(std::move(y), needs(x) || needs(gamma) || needs(beta));
  if (nodes_[id].needs_grad) {
    int px = x.id, pg = gamma.id, pb = beta.id;
    nodes_[id].back = [px, pg, pb, xhat = std::move(xhat),
                       inv_std = std::move(inv_std)](Graph& g, int self) {
      const Mat& dy = g.nodes_[self].grad;
      if (g.nodes_[pb].needs_grad) g.acc(pb, dy.colwise().sum());
      if (g.nodes_[pg].needs_grad) g.acc(pg, dy.cwiseProduct(xhat).colwise().sum());
      if (g.nodes_[px].needs_grad) {
        const Mat& gamma_v = g.nodes_[pg].value;
        Mat dx(dy.rows(), dy.cols());
        for (Eigen::Index r = 0; r < dy.rows(); ++r) {
          Eigen::RowVectorXd h = dy.row(r).cwiseProduct(gamma_v.row(0));
          const double mh = h.mean();
          const double mhx = h.cwiseProduct(xhat.row(r)).mean();
          dx.row(r) =
              ((h.array() - mh) - xhat.row(r).array() * mhx) * inv_std(r);
        }
        g.acc(px, dx);
      }
    };
  }
  return Var{id};
}

Var Graph::embed_rows(Var table, const std::vector<int>& ids) {
  const Mat& tv = value(table);
  Mat y(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < tv.rows(), "embed_rows: id out of range");
    y.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  int id = new_node(std::move(y), needs(table));
  if (nodes_[id].needs_grad) {
    int pt = table.id;
    nodes_[id].back = [pt, ids](Graph& g, int self) {
      const Mat& dy = g.nodes_[self].grad;
      Mat& dt = g.grad_buf(pt);
      for (size_t i = 0; i < ids.size(); ++i) {
        dt.row(ids[i]) += dy.row(static_cast<Eigen::Index>(i));
      }
    };
  }
  return Var{id};
}

Var Graph::zero_rows(Var x, const std::vector<uint8_t>& keep) {
  const Mat& xv = value(x);
  require(static_cast<Eigen::Index>(keep.size()) == xv.rows(), "zero_rows: mask size");
  Mat y = xv;
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    if (!keep[static_cast<size_t>(r)]) y.row(r).setZero();
  }
  int id = new_node(std::move(y), needs(x));
  if (nodes_[id].needs_grad) {
    int px = x.id;
    nodes_[id].back = [px, keep](Graph& g, int self) {
      Mat dy = g.nodes_[self].grad;
      for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        if (!keep[static_cast<size_t>(r)]) dy.row(r).setZero();
      }
      g.acc(px, dy);
    };
  }
  return Var{id};
}

Var Graph::group_mean_rows(Var x, const std::vector<int>& group, int n_groups) {
  const Mat& xv = value(x);
  require(static_cast<Eigen::Index>(group.size()) == xv.rows(),
          "group_mean_rows: group size mismatch");
  std::vector<double> count(n_groups, 0.0);
  for (int gidx : group) {
    if (gidx >= 0) {
      require(gidx < n_groups, "group_mean_rows: group out of range");
      count[gidx] += 1.0;
    }
  }
  Mat y = Mat::Zero(n_groups, xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const int gidx = group[static_cast<size_t>(r)];
    if (gidx >= 0) y.row(gidx) += xv.row(r) / count[gidx];
  }
  int id = new_node(std::move(y), needs(x));
  if (nodes_[id].needs_grad) {
    int px = x.id;
    nodes_[id].back = [px, group, count](Graph& g, int self) {
      const Mat& dy = g.nodes_[self].grad;
      Mat dx = Mat::Zero(g.nodes_[px].value.rows(), g.nodes_[px].value.cols());
      for (Eigen::Index r = 0; r < dx.rows(); ++r) {
        const int gidx = group[static_cast<size_t>(r)];
        if (gidx >= 0) dx.row(r) = dy.row(gidx) / count[gidx];
      }
      g.acc(px, dx);
    };
  }
  return Var{id};
}

Var Graph::attention(Var q, Var k, Var v, const AttentionSpec& spec) {
  const Mat& qv = value(q);
  const Mat& kv = value(k);
  const Mat& vv = value(v);
  const int B = spec.batch, Lq = spec.len_q, Lk = spec.len_k, H = spec.n_heads;
  require(qv.rows() == static_cast<Eigen::Index>(B) * Lq, "attention: q rows");
  require(kv.rows() == static_cast<Eigen::Index>(B) * Lk, "attention: k rows");
  require(vv.rows() == kv.rows(), "attention: v rows");
  require(qv.cols() == kv.cols() && kv.cols() == vv.cols(), "attention: dim mismatch");
  require(qv.cols() % H == 0, "attention: dim not divisible by heads");
  if (spec.key_mask) {
    require(static_cast<int>(spec.key_mask->size()) == B * Lk, "attention: key mask size");
  }
  const int dk = static_cast<int>(qv.cols()) / H;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dk));

  Mat y(qv.rows(), qv.cols());
  // softmax weights per (sample, head), kept for backward
  std::vector<Mat> attn(static_cast<size_t>(B) * H);

  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < H; ++h) {
      auto qb = qv.block(static_cast<Eigen::Index>(b) * Lq, h * dk, Lq, dk);
      auto kb = kv.block(static_cast<Eigen::Index>(b) * Lk, h * dk, Lk, dk);
      auto vb = vv.block(static_cast<Eigen::Index>(b) * Lk, h * dk, Lk, dk);
      Mat scores = qb * kb.transpose() * scl;
      for (int i = 0; i < Lq; ++i) {
        bool any = false;
        for (int j = 0; j < Lk; ++j) {
          bool ok = (!spec.causal || j <= i) &&
                    (!spec.key_mask || (*spec.key_mask)[static_cast<size_t>(b) * Lk + j]);
          if (!ok) scores(i, j) = kNegInf;
          any = any || ok;
        }
        if (!any) scores(i, std::min(i, Lk - 1)) = 0.0;  // discarded row; keep finite
        const double mx = scores.row(i).maxCoeff();
        Eigen::RowVectorXd ex = (scores.row(i).array() - mx).exp();
        scores.row(i) = ex / ex.sum();
      }
      Mat& a = attn[static_cast<size_t>(b) * H + h];
      a = std::move(scores);
      y.block(static_cast<Eigen::Index>(b) * Lq, h * dk, Lq, dk) = a * vb;
    }
  }

  int id = new_node(std::move(y), needs(q) || needs(k) || needs(v));
  if (nodes_[id].needs_grad) {
    int pq = q.id, pk = k.id, pv = v.id;
    nodes_[id].back = [pq, pk, pv, B, Lq, Lk, H, attn = std::move(attn), dk,
                       scl](Graph& g, int self) {
      const Mat& dy = g.nodes_[self].grad;
      const Mat& qv = g.nodes_[pq].value;
      const Mat& kv = g.nodes_[pk].value;
      const Mat& vv = g.nodes_[pv].value;
      Mat& dq = g.grad_buf(pq);
      Mat& dkm = g.grad_buf(pk);
      Mat& dvm = g.grad_buf(pv);
      for (int b = 0; b < B; ++b) {
        for (int h = 0; h < H; ++h) {
          const Mat& a = attn[static_cast<size_t>(b) * H + h];
          auto qb = qv.block(static_cast<Eigen::Index>(b) * Lq, h * dk, Lq, dk);
          auto kb = kv.block(static_cast<Eigen::Index>(b) * Lk, h * dk, Lk, dk);
          auto vb = vv.block(static_cast<Eigen::Index>(b) * Lk, h * dk, Lk, dk);
          auto dyb = dy.block(static_cast<Eigen::Index>(b) * Lq, h * dk, Lq, dk);
          Mat da = dyb * vb.transpose();                    // Lq x Lk
          Vec rowdot = (da.cwiseProduct(a)).rowwise().sum();
          Mat ds = a.cwiseProduct(da.colwise() - rowdot);   // softmax backward
          dq.block(static_cast<Eigen::Index>(b) * Lq, h * dk, Lq, dk) +=
              ds * kb * scl;
          dkm.block(static_cast<Eigen::Index>(b) * Lk, h * dk, Lk, dk) +=
              ds.transpose() * qb * scl;
          dvm.block(static_cast<Eigen::Index>(b) * Lk, h * dk, Lk, dk) +=
              a.transpose() * dyb;
        }
      }
    };
  }
  return Var{id};
}

Var Graph::conv2d(Var x, Var kernel, Var bias, const Conv2DSpec& spec) {
  const Mat& xv = value(x);
  const Mat& kvm = value(kernel);
  const int B = spec.batch, IH = spec.in_h, IW = spec.in_w, IC = spec.in_ch;
  const int OC = spec.out_ch, K = spec.kernel, S = spec.stride, P = spec.pad;
  const int OH = spec.out_h(), OW = spec.out_w();
  require(xv.rows() == static_cast<Eigen::Index>(B) * IH * IW, "conv2d: input rows");
  require(xv.cols() == IC, "conv2d: input channels");
  require(kvm.rows() == static_cast<Eigen::Index>(K) * K * IC && kvm.cols() == OC,
          "conv2d: kernel shape");
  require(value(bias).rows() == 1 && value(bias).cols() == OC, "conv2d: bias shape");

  // patch index map shared by every sample; -1 marks zero padding
  const int patch = K * K * IC;
  std::vector<int> src_of(static_cast<size_t>(OH) * OW * patch, -1);
  for (int oh = 0; oh < OH; ++oh) {
    for (int ow = 0; ow < OW; ++ow) {
      for (int kh = 0; kh < K; ++kh) {
        for (int kw = 0; kw < K; ++kw) {
          const int ir = oh * S - P + kh;
          const int ic = ow * S - P + kw;
          if (ir < 0 || ir >= IH || ic < 0 || ic >= IW) continue;
          for (int c = 0; c < IC; ++c) {
            src_of[(static_cast<size_t>(oh) * OW + ow) * patch +
                   (static_cast<size_t>(kh) * K + kw) * IC + c] =
                (ir * IW + ic) * IC + c;  // offset within sample, x is (pos, ch)
          }
        }
      }
    }
  }

  Mat y(static_cast<Eigen::Index>(B) * OH * OW, OC);
  std::vector<Mat> patches(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) {
    Mat pm = Mat::Zero(static_cast<Eigen::Index>(OH) * OW, patch);
    const Eigen::Index base = static_cast<Eigen::Index>(b) * IH * IW;
    for (Eigen::Index r = 0; r < pm.rows(); ++r) {
      for (int c = 0; c < patch; ++c) {
        const int s = src_of[static_cast<size_t>(r) * patch + c];
        if (s >= 0) pm(r, c) = xv(base + s / IC, s % IC);
      }
    }
    y.middleRows(static_cast<Eigen::Index>(b) * OH * OW, OH * OW).noalias() = pm * kvm;
    patches[static_cast<size_t>(b)] = std::move(pm);
  }
  y.rowwise() += value(bias).row(0);

  int id = new_node(std::move(y), needs(x) || needs(kernel) || needs(bias));
  if (nodes_[id].needs_grad) {
    int px = x.id, pk = kernel.id, pb = bias.id;
    nodes_[id].back = [px, pk, pb, B, IH, IW, IC, OH, OW,
                       src_of = std::move(src_of), patches = std::move(patches),
                       patch](Graph& g, int self) {
      const Mat& dy = g.nodes_[self].grad;
      if (g.nodes_[pb].needs_grad) g.acc(pb, dy.colwise().sum());
      if (g.nodes_[pk].needs_grad) {
        Mat& dkm = g.grad_buf(pk);
        for (int b = 0; b < B; ++b) {
          dkm.noalias() +=
              patches[static_cast<size_t>(b)].transpose() *
              dy.middleRows(static_cast<Eigen::Index>(b) * OH * OW, OH * OW);
        }
      }
      if (g.nodes_[px].needs_grad) {
        const Mat& kvm = g.nodes_[pk].value;
        Mat& dxm = g.grad_buf(px);
        for (int b = 0; b < B; ++b) {
          Mat dp = dy.middleRows(static_cast<Eigen::Index>(b) * OH * OW, OH * OW) *
                   kvm.transpose();  // (OH*OW) x patch
          const Eigen::Index base = static_cast<Eigen::Index>(b) * IH * IW;
          for (Eigen::Index r = 0; r < dp.rows(); ++r) {
            for (int c = 0; c < patch; ++c) {
              const int s = src_of[static_cast<size_t>(r) * patch + c];
              if (s >= 0) dxm(base + s / IC, s % IC) += dp(r, c);
            }
          }
        }
      }
    };
  }
  return Var{id};
}

Var Graph::log_softmax_rows(Var x) {
  const Mat& xv = value(x);
  Mat y(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mx = xv.row(r).maxCoeff();
    const double lse = mx + std::log((xv.row(r).array() - mx).exp().sum());
    y.row(r) = xv.row(r).array() - lse;
  }
  int id = new_node(std::move(y), needs(x));
  if (nodes_[id].needs_grad) {
    int px = x.id;
    nodes_[id].back = [px](Graph& g, int self) {
      const Mat& dy = g.nodes_[self].grad;
      const Mat& y = g.nodes_[self].value;
      Mat p = y.array().exp().matrix();
      Vec rowsum = dy.rowwise().sum();
      g.acc(px, dy - p.cwiseProduct(rowsum.replicate(1, dy.cols())));
    };
  }
  return Var{id};
}

Var Graph::gather_cols(Var x, const std::vector<int>& col) {
  const Mat& xv = value(x);
  require(static_cast<Eigen::Index>(col.size()) == xv.rows(), "gather_cols: size");
  Mat y(xv.rows(), 1);
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    require(col[static_cast<size_t>(r)] >= 0 && col[static_cast<size_t>(r)] < xv.cols(),
            "gather_cols: column out of range");
    y(r, 0) = xv(r, col[static_cast<size_t>(r)]);
  }
  int id = new_node(std::move(y), needs(x));
  if (nodes_[id].needs_grad) {
    int px = x.id;
    nodes_[id].back = [px, col](Graph& g, int self) {
      const Mat& dy = g.nodes_[self].grad;
      Mat& dx = g.grad_buf(px);
      for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        dx(r, col[static_cast<size_t>(r)]) += dy(r, 0);
      }
    };
  }
  return Var{id};
}

Var Graph::rows_norm2(Var x) {
  const Mat& xv = value(x);
  Mat y(xv.rows(), 1);
  for (Eigen::Index r = 0; r < xv.rows(); ++r) y(r, 0) = xv.row(r).norm();
  int id = new_node(std::move(y), needs(x));
  if (nodes_[id].needs_grad) {
    int px = x.id;
    nodes_[id].back = [px](Graph& g, int self) {
      const Mat& dy = g.nodes_[self].grad;
      const Mat& y = g.nodes_[self].value;
      const Mat& xv = g.nodes_[px].value;
      Mat dx(xv.rows(), xv.cols());
      for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        // subgradient 0 at the kink
        dx.row(r) = y(r, 0) > 1e-30 ? (xv.row(r) * (dy(r, 0) / y(r, 0))).eval()
                                    : Eigen::RowVectorXd::Zero(xv.cols()).eval();
      }
      g.acc(px, dx);
    };
  }
  return Var{id};
}

Var Graph::rows_sqnorm(Var x) {
  const Mat& xv = value(x);
  Mat y = xv.rowwise().squaredNorm();
  int id = new_node(std::move(y), needs(x));
  if (nodes_[id].needs_grad) {
    int px = x.id;
    nodes_[id].back = [px](Graph& g, int self) {
      const Mat& dy = g.nodes_[self].grad;
      const Mat& xv = g.nodes_[px].value;
      g.acc(px, 2.0 * xv.cwiseProduct(dy.replicate(1, xv.cols())));
    };
  }
  return Var{id};
}

Var Graph::weighted_sum(Var x, Vec w) {
  const Mat& xv = value(x);
  require(xv.cols() == 1, "weighted_sum: expects column");
  require(w.size() == xv.rows(), "weighted_sum: weight size");
  Mat y(1, 1);
  y(0, 0) = xv.col(0).dot(w);
  int id = new_node(std::move(y), needs(x));
  if (nodes_[id].needs_grad) {
    int px = x.id;
    nodes_[id].back = [px, w = std::move(w)](Graph& g, int self) {
      const double s = g.nodes_[self].grad(0, 0);
      g.acc(px, (w * s).matrix());
    };
  }
  return Var{id};
}

Var Graph::sum_all(Var x) {
  Mat y(1, 1);
  y(0, 0) = value(x).sum();
  int id = new_node(std::move(y), needs(x));
  if (nodes_[id].needs_grad) {
    int px = x.id;
    nodes_[id].back = [px](Graph& g, int self) {
      const double s = g.nodes_[self].grad(0, 0);
      const Mat& xv = g.nodes_[px].value;
      g.acc(px, Mat::Constant(xv.rows(), xv.cols(), s));
    };
  }
  return Var{id};
}

void Graph::backward(Var loss) {
  require(grad_enabled_, "backward on a grad-disabled graph");
  Node& ln = node(loss.id);
  require(ln.value.rows() == 1 && ln.value.cols() == 1, "backward: loss must be scalar");
  grad_buf(loss.id).setConstant(1.0);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.back) n.back(*this, id);
    if (n.leaf) {
      if (n.leaf->grad.size() == 0) {
        n.leaf->grad = Mat::Zero(n.leaf->value.rows(), n.leaf->value.cols());
      }
      n.leaf->grad += n.grad;
    }
  }
}

}  // namespace timt::nn

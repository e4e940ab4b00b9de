#include "uspine/ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace uspine {
namespace ops {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

void require_rank(const Var& v, int rank, const char* what) {
    if (v->value.rank() != rank)
        throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                    ", got " + shape_str(v->value.shape()));
}

// im2col for (Cin,H,W) -> (Cin*kh*kw, Ho*Wo)
void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int ho, int wo, double* cols) {
    const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int patch = ho * wo;
    for (int c = 0; c < cin; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                double* row = cols + (static_cast<std::int64_t>((c * kh + ki) * kw + kj)) * patch;
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < wo; ++ox) row[oy * wo + ox] = 0.0;
                        continue;
                    }
                    const double* src = x.data() + (static_cast<std::int64_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + kj - pad;
                        row[oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// scatter-add of column gradients back onto the input image
void col2im_accum(const double* cols, int cin, int h, int w, int kh, int kw, int stride, int pad,
                  int ho, int wo, Tensor& dx) {
    const int patch = ho * wo;
    for (int c = 0; c < cin; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const double* row = cols + (static_cast<std::int64_t>((c * kh + ki) * kw + kj)) * patch;
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= h) continue;
                    double* dst = dx.data() + (static_cast<std::int64_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + kj - pad;
                        if (ix >= 0 && ix < w) dst[ix] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Var add(Var a, Var b) {
    check_same_shape(a->value, b->value, "add");
    Tensor out = uspine::add(a->value, b->value);
    return make_node(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accum_grad(n.grad);
        if (n.parents[1]->requires_grad) n.parents[1]->accum_grad(n.grad);
    });
}

Var sub(Var a, Var b) {
    check_same_shape(a->value, b->value, "sub");
    Tensor out = uspine::sub(a->value, b->value);
    return make_node(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accum_grad(n.grad);
        if (n.parents[1]->requires_grad) n.parents[1]->accum_grad(uspine::scale(n.grad, -1.0));
    });
}

Var mul(Var a, Var b) {
    check_same_shape(a->value, b->value, "mul");
    Tensor out = uspine::mul(a->value, b->value);
    return make_node(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accum_grad(uspine::mul(n.grad, n.parents[1]->value));
        if (n.parents[1]->requires_grad) n.parents[1]->accum_grad(uspine::mul(n.grad, n.parents[0]->value));
    });
}

Var scale(Var a, double s) {
    Tensor out = uspine::scale(a->value, s);
    return make_node(std::move(out), {a}, [s](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accum_grad(uspine::scale(n.grad, s));
    });
}

Var add_channel_bias(Var x, Var bias) {
    require_rank(x, 3, "add_channel_bias");
    require_rank(bias, 1, "add_channel_bias bias");
    const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    if (bias->value.dim(0) != c)
        throw std::invalid_argument("add_channel_bias: bias length " + std::to_string(bias->value.dim(0)) +
                                    " vs channels " + std::to_string(c));
    Tensor out = x->value.clone();
    for (int ci = 0; ci < c; ++ci) {
        double b = bias->value[ci];
        double* p = out.data() + static_cast<std::int64_t>(ci) * h * w;
        for (int i = 0; i < h * w; ++i) p[i] += b;
    }
    return make_node(std::move(out), {x, bias}, [c, h, w](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accum_grad(n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor db({c});
            for (int ci = 0; ci < c; ++ci) {
                const double* g = n.grad.data() + static_cast<std::int64_t>(ci) * h * w;
                double s = 0.0;
                for (int i = 0; i < h * w; ++i) s += g[i];
                db[ci] = s;
            }
            n.parents[1]->accum_grad(db);
        }
    });
}

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    require_rank(x, 3, "conv2d input");
    require_rank(w, 4, "conv2d weight");
    require_rank(b, 1, "conv2d bias");
    const int cin = x->value.dim(0), h = x->value.dim(1), wd = x->value.dim(2);
    const int cout = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
    if (w->value.dim(1) != cin)
        throw std::invalid_argument("conv2d: weight expects " + std::to_string(w->value.dim(1)) +
                                    " input channels, input has " + std::to_string(cin));
    if (b->value.dim(0) != cout) throw std::invalid_argument("conv2d: bias/out-channel mismatch");
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");

    const int K = cin * kh * kw, P = ho * wo;
    std::vector<double> cols(static_cast<size_t>(K) * P);
    im2col(x->value, kh, kw, stride, pad, ho, wo, cols.data());

    Tensor out({cout, ho, wo});
    {
        CMapM wm(w->value.data(), cout, K);
        CMapM cm(cols.data(), K, P);
        MapM om(out.data(), cout, P);
        om.noalias() = wm * cm;
    }
    for (int o = 0; o < cout; ++o) {
        double bo = b->value[o];
        double* p = out.data() + static_cast<std::int64_t>(o) * P;
        for (int i = 0; i < P; ++i) p[i] += bo;
    }

    return make_node(std::move(out), {x, w, b},
                     [cin, h, wd, cout, kh, kw, stride, pad, ho, wo, K, P](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& wv = n.parents[1]->value;
        CMapM gm(n.grad.data(), cout, P);
        if (n.parents[1]->requires_grad || n.parents[0]->requires_grad) {
            // The column matrix is recomputed rather than kept alive.
            std::vector<double> cols(static_cast<size_t>(K) * P);
            im2col(xv, kh, kw, stride, pad, ho, wo, cols.data());
            if (n.parents[1]->requires_grad) {
                Tensor dw({cout, cin, kh, kw});
                CMapM cm(cols.data(), K, P);
                MapM dwm(dw.data(), cout, K);
                dwm.noalias() = gm * cm.transpose();
                n.parents[1]->accum_grad(dw);
            }
            if (n.parents[0]->requires_grad) {
                std::vector<double> dcols(static_cast<size_t>(K) * P);
                CMapM wm(wv.data(), cout, K);
                MapM dcm(dcols.data(), K, P);
                dcm.noalias() = wm.transpose() * gm;
                Tensor dx({cin, h, wd});
                col2im_accum(dcols.data(), cin, h, wd, kh, kw, stride, pad, ho, wo, dx);
                n.parents[0]->accum_grad(dx);
            }
        }
        if (n.parents[2]->requires_grad) {
            Tensor db({cout});
            for (int o = 0; o < cout; ++o) {
                const double* g = n.grad.data() + static_cast<std::int64_t>(o) * P;
                double s = 0.0;
                for (int i = 0; i < P; ++i) s += g[i];
                db[o] = s;
            }
            n.parents[2]->accum_grad(db);
        }
    });
}

Var group_norm(Var x, Var gamma, Var beta, int groups, double eps) {
    require_rank(x, 3, "group_norm");
    const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    if (groups < 1 || c % groups != 0)
        throw std::invalid_argument("group_norm: " + std::to_string(groups) + " groups do not divide " +
                                    std::to_string(c) + " channels");
    if (gamma->value.dim(0) != c || beta->value.dim(0) != c)
        throw std::invalid_argument("group_norm: affine parameter length mismatch");

    const int cpg = c / groups;
    const std::int64_t gsize = static_cast<std::int64_t>(cpg) * h * w;
    std::vector<double> mean(groups), istd(groups);
    Tensor out(x->value.shape());
    for (int g = 0; g < groups; ++g) {
        const double* p = x->value.data() + g * gsize;
        double m = 0.0;
        for (std::int64_t i = 0; i < gsize; ++i) m += p[i];
        m /= static_cast<double>(gsize);
        double v = 0.0;
        for (std::int64_t i = 0; i < gsize; ++i) {
            double d = p[i] - m;
            v += d * d;
        }
        v /= static_cast<double>(gsize);
        mean[g] = m;
        istd[g] = 1.0 / std::sqrt(v + eps);
    }
    for (int ci = 0; ci < c; ++ci) {
        int g = ci / cpg;
        double ga = gamma->value[ci], be = beta->value[ci];
        const double* p = x->value.data() + static_cast<std::int64_t>(ci) * h * w;
        double* q = out.data() + static_cast<std::int64_t>(ci) * h * w;
        for (int i = 0; i < h * w; ++i) q[i] = ga * (p[i] - mean[g]) * istd[g] + be;
    }

    return make_node(std::move(out), {x, gamma, beta},
                     [c, h, w, groups, cpg, gsize, mean, istd](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& ga = n.parents[1]->value;
        const int hw = h * w;
        if (n.parents[1]->requires_grad || n.parents[2]->requires_grad) {
            Tensor dg({c}), db({c});
            for (int ci = 0; ci < c; ++ci) {
                int g = ci / cpg;
                const double* xp = xv.data() + static_cast<std::int64_t>(ci) * hw;
                const double* gp = n.grad.data() + static_cast<std::int64_t>(ci) * hw;
                double sdg = 0.0, sdb = 0.0;
                for (int i = 0; i < hw; ++i) {
                    sdg += gp[i] * (xp[i] - mean[g]) * istd[g];
                    sdb += gp[i];
                }
                dg[ci] = sdg;
                db[ci] = sdb;
            }
            if (n.parents[1]->requires_grad) n.parents[1]->accum_grad(dg);
            if (n.parents[2]->requires_grad) n.parents[2]->accum_grad(db);
        }
        if (n.parents[0]->requires_grad) {
            Tensor dx({c, h, w});
            for (int g = 0; g < groups; ++g) {
                double sum1 = 0.0, sum2 = 0.0;
                for (int cc = 0; cc < cpg; ++cc) {
                    int ci = g * cpg + cc;
                    const double* xp = xv.data() + static_cast<std::int64_t>(ci) * hw;
                    const double* gp = n.grad.data() + static_cast<std::int64_t>(ci) * hw;
                    for (int i = 0; i < hw; ++i) {
                        double dyh = gp[i] * ga[ci];
                        sum1 += dyh;
                        sum2 += dyh * (xp[i] - mean[g]) * istd[g];
                    }
                }
                double m = static_cast<double>(gsize);
                for (int cc = 0; cc < cpg; ++cc) {
                    int ci = g * cpg + cc;
                    const double* xp = xv.data() + static_cast<std::int64_t>(ci) * hw;
                    const double* gp = n.grad.data() + static_cast<std::int64_t>(ci) * hw;
                    double* dp = dx.data() + static_cast<std::int64_t>(ci) * hw;
                    for (int i = 0; i < hw; ++i) {
                        double xh = (xp[i] - mean[g]) * istd[g];
                        double dyh = gp[i] * ga[ci];
                        dp[i] = istd[g] * (dyh - (sum1 + xh * sum2) / m);
                    }
                }
            }
            n.parents[0]->accum_grad(dx);
        }
    });
}

Var silu(Var x) {
    Tensor out(x->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) {
        double v = x->value[i];
        out[i] = v / (1.0 + std::exp(-v));
    }
    return make_node(std::move(out), {x}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const Tensor& xv = n.parents[0]->value;
        Tensor dx(xv.shape());
        for (std::int64_t i = 0; i < dx.size(); ++i) {
            double s = 1.0 / (1.0 + std::exp(-xv[i]));
            dx[i] = n.grad[i] * s * (1.0 + xv[i] * (1.0 - s));
        }
        n.parents[0]->accum_grad(dx);
    });
}

Var gelu(Var x) {
    Tensor out(x->value.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) {
        double v = x->value[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
    }
    return make_node(std::move(out), {x}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const Tensor& xv = n.parents[0]->value;
        Tensor dx(xv.shape());
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (std::int64_t i = 0; i < dx.size(); ++i) {
            double v = xv[i];
            double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
            double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            dx[i] = n.grad[i] * (cdf + v * pdf);
        }
        n.parents[0]->accum_grad(dx);
    });
}

Var upsample_nearest2x(Var x) {
    require_rank(x, 3, "upsample_nearest2x");
    const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    Tensor out({c, 2 * h, 2 * w});
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double v = x->value.at(ci, i, j);
                out.at(ci, 2 * i, 2 * j) = v;
                out.at(ci, 2 * i, 2 * j + 1) = v;
                out.at(ci, 2 * i + 1, 2 * j) = v;
                out.at(ci, 2 * i + 1, 2 * j + 1) = v;
            }
    return make_node(std::move(out), {x}, [c, h, w](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor dx({c, h, w});
        for (int ci = 0; ci < c; ++ci)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j)
                    dx.at(ci, i, j) = n.grad.at(ci, 2 * i, 2 * j) + n.grad.at(ci, 2 * i, 2 * j + 1) +
                                      n.grad.at(ci, 2 * i + 1, 2 * j) + n.grad.at(ci, 2 * i + 1, 2 * j + 1);
        n.parents[0]->accum_grad(dx);
    });
}

Var concat_channels(Var a, Var b) {
    require_rank(a, 3, "concat_channels");
    require_rank(b, 3, "concat_channels");
    const int ca = a->value.dim(0), cb = b->value.dim(0);
    const int h = a->value.dim(1), w = a->value.dim(2);
    if (b->value.dim(1) != h || b->value.dim(2) != w)
        throw std::invalid_argument("concat_channels: spatial mismatch " + shape_str(a->value.shape()) +
                                    " vs " + shape_str(b->value.shape()));
    Tensor out({ca + cb, h, w});
    const std::int64_t na = a->value.size(), nb = b->value.size();
    std::copy(a->value.data(), a->value.data() + na, out.data());
    std::copy(b->value.data(), b->value.data() + nb, out.data() + na);
    return make_node(std::move(out), {a, b}, [ca, cb, h, w, na, nb](Node& n) {
        if (n.parents[0]->requires_grad) {
            Tensor da({ca, h, w});
            std::copy(n.grad.data(), n.grad.data() + na, da.data());
            n.parents[0]->accum_grad(da);
        }
        if (n.parents[1]->requires_grad) {
            Tensor db({cb, h, w});
            std::copy(n.grad.data() + na, n.grad.data() + na + nb, db.data());
            n.parents[1]->accum_grad(db);
        }
    });
}

Var linear(Var x, Var w, Var b) {
    require_rank(x, 1, "linear input");
    require_rank(w, 2, "linear weight");
    require_rank(b, 1, "linear bias");
    const int in = x->value.dim(0), out_dim = w->value.dim(0);
    if (w->value.dim(1) != in || b->value.dim(0) != out_dim)
        throw std::invalid_argument("linear: shape mismatch");
    Tensor out({out_dim});
    for (int o = 0; o < out_dim; ++o) {
        const double* wr = w->value.data() + static_cast<std::int64_t>(o) * in;
        double s = b->value[o];
        for (int i = 0; i < in; ++i) s += wr[i] * x->value[i];
        out[o] = s;
    }
    return make_node(std::move(out), {x, w, b}, [in, out_dim](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& wv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            Tensor dx({in});
            for (int i = 0; i < in; ++i) {
                double s = 0.0;
                for (int o = 0; o < out_dim; ++o) s += wv[static_cast<std::int64_t>(o) * in + i] * n.grad[o];
                dx[i] = s;
            }
            n.parents[0]->accum_grad(dx);
        }
        if (n.parents[1]->requires_grad) {
            Tensor dw({out_dim, in});
            for (int o = 0; o < out_dim; ++o)
                for (int i = 0; i < in; ++i) dw[static_cast<std::int64_t>(o) * in + i] = n.grad[o] * xv[i];
            n.parents[1]->accum_grad(dw);
        }
        if (n.parents[2]->requires_grad) n.parents[2]->accum_grad(n.grad);
    });
}

Var matmul(Var a, Var b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const int m = a->value.dim(0), k = a->value.dim(1), n2 = b->value.dim(1);
    if (b->value.dim(0) != k) throw std::invalid_argument("matmul: inner dimension mismatch");
    Tensor out({m, n2});
    {
        CMapM am(a->value.data(), m, k);
        CMapM bm(b->value.data(), k, n2);
        MapM om(out.data(), m, n2);
        om.noalias() = am * bm;
    }
    return make_node(std::move(out), {a, b}, [m, k, n2](Node& n) {
        CMapM gm(n.grad.data(), m, n2);
        if (n.parents[0]->requires_grad) {
            Tensor da({m, k});
            CMapM bm(n.parents[1]->value.data(), k, n2);
            MapM dam(da.data(), m, k);
            dam.noalias() = gm * bm.transpose();
            n.parents[0]->accum_grad(da);
        }
        if (n.parents[1]->requires_grad) {
            Tensor db({k, n2});
            CMapM am(n.parents[0]->value.data(), m, k);
            MapM dbm(db.data(), k, n2);
            dbm.noalias() = am.transpose() * gm;
            n.parents[1]->accum_grad(db);
        }
    });
}

Var transpose2d(Var a) {
    require_rank(a, 2, "transpose2d");
    const int m = a->value.dim(0), n2 = a->value.dim(1);
    Tensor out({n2, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n2; ++j) out[static_cast<std::int64_t>(j) * m + i] = a->value[static_cast<std::int64_t>(i) * n2 + j];
    return make_node(std::move(out), {a}, [m, n2](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor da({m, n2});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n2; ++j) da[static_cast<std::int64_t>(i) * n2 + j] = n.grad[static_cast<std::int64_t>(j) * m + i];
        n.parents[0]->accum_grad(da);
    });
}

Var softmax_rows(Var a) {
    require_rank(a, 2, "softmax_rows");
    const int m = a->value.dim(0), n2 = a->value.dim(1);
    Tensor out({m, n2});
    for (int i = 0; i < m; ++i) {
        const double* row = a->value.data() + static_cast<std::int64_t>(i) * n2;
        double* orow = out.data() + static_cast<std::int64_t>(i) * n2;
        double mx = row[0];
        for (int j = 1; j < n2; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < n2; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < n2; ++j) orow[j] /= sum;
    }
    Tensor saved = out;
    return make_node(std::move(out), {a}, [m, n2, saved](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor da({m, n2});
        for (int i = 0; i < m; ++i) {
            const double* y = saved.data() + static_cast<std::int64_t>(i) * n2;
            const double* g = n.grad.data() + static_cast<std::int64_t>(i) * n2;
            double dot = 0.0;
            for (int j = 0; j < n2; ++j) dot += g[j] * y[j];
            double* d = da.data() + static_cast<std::int64_t>(i) * n2;
            for (int j = 0; j < n2; ++j) d[j] = y[j] * (g[j] - dot);
        }
        n.parents[0]->accum_grad(da);
    });
}

Var reshape(Var x, std::vector<int> shape) {
    Tensor out = x->value.reshaped(shape);
    auto parent_shape = x->value.shape();
    return make_node(std::move(out), {x}, [parent_shape](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        n.parents[0]->accum_grad(n.grad.reshaped(parent_shape));
    });
}

Var mse(Var a, Var b) {
    check_same_shape(a->value, b->value, "mse");
    const std::int64_t n = a->value.size();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double d = a->value[i] - b->value[i];
        acc += d * d;
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    return make_node(std::move(out), {a, b}, [n](Node& nd) {
        double g = nd.grad[0] * 2.0 / static_cast<double>(n);
        const Tensor& av = nd.parents[0]->value;
        const Tensor& bv = nd.parents[1]->value;
        if (nd.parents[0]->requires_grad) {
            Tensor da(av.shape());
            for (std::int64_t i = 0; i < n; ++i) da[i] = g * (av[i] - bv[i]);
            nd.parents[0]->accum_grad(da);
        }
        if (nd.parents[1]->requires_grad) {
            Tensor db(bv.shape());
            for (std::int64_t i = 0; i < n; ++i) db[i] = g * (bv[i] - av[i]);
            nd.parents[1]->accum_grad(db);
        }
    });
}

Var cross_entropy_mean(Var logits, const SegMask& labels) {
    require_rank(logits, 3, "cross_entropy_mean");
    const int k = logits->value.dim(0), h = logits->value.dim(1), w = logits->value.dim(2);
    if (labels.h != h || labels.w != w)
        throw std::invalid_argument("cross_entropy_mean: label grid " + std::to_string(labels.h) + "x" +
                                    std::to_string(labels.w) + " vs logits " + std::to_string(h) + "x" +
                                    std::to_string(w));
    const int hw = h * w;
    Tensor probs({k, h, w});
    double loss = 0.0;
    for (int p = 0; p < hw; ++p) {
        int y = labels.labels[static_cast<size_t>(p)];
        if (y >= k) throw std::invalid_argument("cross_entropy_mean: label " + std::to_string(y) + " out of range");
        double mx = logits->value[p];
        for (int c = 1; c < k; ++c) mx = std::max(mx, logits->value[static_cast<std::int64_t>(c) * hw + p]);
        double sum = 0.0;
        for (int c = 0; c < k; ++c) {
            double e = std::exp(logits->value[static_cast<std::int64_t>(c) * hw + p] - mx);
            probs[static_cast<std::int64_t>(c) * hw + p] = e;
            sum += e;
        }
        for (int c = 0; c < k; ++c) probs[static_cast<std::int64_t>(c) * hw + p] /= sum;
        loss -= std::log(probs[static_cast<std::int64_t>(y) * hw + p]);
    }
    Tensor out = Tensor::scalar(loss / hw);
    std::vector<std::uint8_t> ylab = labels.labels;
    return make_node(std::move(out), {logits}, [k, hw, probs, ylab](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        double g = n.grad[0] / static_cast<double>(hw);
        Tensor dl(n.parents[0]->value.shape());
        for (int p = 0; p < hw; ++p) {
            int y = ylab[static_cast<size_t>(p)];
            for (int c = 0; c < k; ++c) {
                double v = probs[static_cast<std::int64_t>(c) * hw + p];
                dl[static_cast<std::int64_t>(c) * hw + p] = g * (v - (c == y ? 1.0 : 0.0));
            }
        }
        n.parents[0]->accum_grad(dl);
    });
}

}  // namespace ops
}  // namespace uspine

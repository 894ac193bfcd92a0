#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ragme/mat.hpp"

namespace ragme::nn {

// Reverse-mode autodiff over 2-D row-major matrices. A Graph is a tape built
// per forward pass: every op appends a node holding its value and a backward
// closure. Batch and sequence dimensions are folded into rows; grouped ops
// (attention, group mean) take explicit row-offset tables.
//
// Ops only record backward closures when an input requires grad, so frozen
// subgraphs cost nothing at backward time.
template <typename S>
class Graph {
public:
    using Mat = MatX<S>;

    struct Node {
        Mat val;
        Mat grad;
        bool requires_grad = false;
        std::function<void()> backprop;  // empty for leaves / frozen paths
    };

    int leaf(Mat value, bool requires_grad = false) {
        Node n;
        n.val = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Mat& value(int id) const { return nodes_.at(id).val; }
    const Mat& grad(int id) const { return nodes_.at(id).grad; }
    bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }

    // ---- arithmetic -------------------------------------------------------

    int add(int a, int b) {
        check_same_shape("add", a, b);
        return unary_or_binary(val(a) + val(b), {a, b}, [this, a, b](const Mat& g) {
            accum(a, g);
            accum(b, g);
        });
    }

    int sub(int a, int b) {
        check_same_shape("sub", a, b);
        return unary_or_binary(val(a) - val(b), {a, b}, [this, a, b](const Mat& g) {
            accum(a, g);
            if (nodes_[b].requires_grad) nodes_[b].grad -= g;
        });
    }

    int scale(int a, S c) {
        return unary_or_binary(val(a) * c, {a}, [this, a, c](const Mat& g) { accum(a, Mat(g * c)); });
    }

    int hadamard(int a, int b) {
        check_same_shape("hadamard", a, b);
        return unary_or_binary(val(a).cwiseProduct(val(b)), {a, b}, [this, a, b](const Mat& g) {
            if (nodes_[a].requires_grad) nodes_[a].grad += g.cwiseProduct(val(b));
            if (nodes_[b].requires_grad) nodes_[b].grad += g.cwiseProduct(val(a));
        });
    }

    // y = x * w, x: n x k, w: k x m
    int matmul(int x, int w) {
        if (val(x).cols() != val(w).rows())
            throw std::invalid_argument("matmul: inner dims " + dims(x) + " vs " + dims(w));
        Mat y = val(x) * val(w);
        return unary_or_binary(std::move(y), {x, w}, [this, x, w](const Mat& g) {
            if (nodes_[x].requires_grad) nodes_[x].grad.noalias() += g * val(w).transpose();
            if (nodes_[w].requires_grad) nodes_[w].grad.noalias() += val(x).transpose() * g;
        });
    }

    // y = a * b^T, a: n x k, b: m x k
    int matmul_nt(int a, int b) {
        if (val(a).cols() != val(b).cols())
            throw std::invalid_argument("matmul_nt: inner dims " + dims(a) + " vs " + dims(b));
        Mat y = val(a) * val(b).transpose();
        return unary_or_binary(std::move(y), {a, b}, [this, a, b](const Mat& g) {
            if (nodes_[a].requires_grad) nodes_[a].grad.noalias() += g * val(b);
            if (nodes_[b].requires_grad) nodes_[b].grad.noalias() += g.transpose() * val(a);
        });
    }

    // x: n x m, bias: 1 x m broadcast over rows
    int add_row_broadcast(int x, int bias) {
        if (val(bias).rows() != 1 || val(bias).cols() != val(x).cols())
            throw std::invalid_argument("add_row_broadcast: " + dims(x) + " vs " + dims(bias));
        Mat y = val(x).rowwise() + val(bias).row(0);
        return unary_or_binary(std::move(y), {x, bias}, [this, x, bias](const Mat& g) {
            accum(x, g);
            if (nodes_[bias].requires_grad) nodes_[bias].grad += g.colwise().sum();
        });
    }

    int linear(int x, int w, int b) { return add_row_broadcast(matmul(x, w), b); }

    int transpose(int a) {
        Mat y = val(a).transpose();
        return unary_or_binary(std::move(y), {a}, [this, a](const Mat& g) {
            if (nodes_[a].requires_grad) nodes_[a].grad += g.transpose();
        });
    }

    // ---- nonlinearities ---------------------------------------------------

    int gelu(int x) {
        const Mat& xv = val(x);
        Mat y(xv.rows(), xv.cols());
        for (Eigen::Index i = 0; i < xv.size(); ++i) {
            S v = xv.data()[i];
            y.data()[i] = S(0.5) * v * (S(1) + S(std::erf(double(v) * M_SQRT1_2)));
        }
        return unary_or_binary(std::move(y), {x}, [this, x](const Mat& g) {
            if (!nodes_[x].requires_grad) return;
            const Mat& xv = val(x);
            Mat& gx = nodes_[x].grad;
            for (Eigen::Index i = 0; i < xv.size(); ++i) {
                double v = double(xv.data()[i]);
                double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
                double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
                gx.data()[i] += g.data()[i] * S(cdf + v * pdf);
            }
        });
    }

    // Row-wise layer norm with affine parameters gamma, beta (1 x m).
    int layer_norm(int x, int gamma, int beta, S eps = S(1e-5)) {
        const Mat& xv = val(x);
        Eigen::Index n = xv.rows(), m = xv.cols();
        if (val(gamma).cols() != m || val(beta).cols() != m)
            throw std::invalid_argument("layer_norm: param dims");
        auto xhat = std::make_shared<Mat>(n, m);
        auto inv = std::make_shared<VecX<S>>(n);
        Mat y(n, m);
        for (Eigen::Index i = 0; i < n; ++i) {
            S mu = xv.row(i).mean();
            S var = (xv.row(i).array() - mu).square().sum() / S(m);
            S istd = S(1) / std::sqrt(var + eps);
            (*inv)(i) = istd;
            xhat->row(i) = (xv.row(i).array() - mu) * istd;
            y.row(i) = xhat->row(i).cwiseProduct(val(gamma).row(0)) + val(beta).row(0);
        }
        return unary_or_binary(std::move(y), {x, gamma, beta},
                               [this, x, gamma, beta, xhat, inv, m](const Mat& g) {
            if (nodes_[gamma].requires_grad)
                nodes_[gamma].grad += (g.cwiseProduct(*xhat)).colwise().sum();
            if (nodes_[beta].requires_grad) nodes_[beta].grad += g.colwise().sum();
            if (!nodes_[x].requires_grad) return;
            Mat& gx = nodes_[x].grad;
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                Eigen::Array<S, 1, Eigen::Dynamic> dxh =
                    g.row(i).cwiseProduct(val(gamma).row(0)).array();
                S s1 = dxh.sum() / S(m);
                S s2 = (dxh * xhat->row(i).array()).sum() / S(m);
                gx.row(i) += ((dxh - s1 - xhat->row(i).array() * s2) * (*inv)(i)).matrix();
            }
        });
    }

    // Rows scaled to unit L2 norm. Norms below `floor` are clamped; callers
    // that must reject degenerate inputs check norms on the host side first.
    int l2_normalize_rows(int x, S floor = S(1e-12)) {
        const Mat& xv = val(x);
        auto norms = std::make_shared<VecX<S>>(xv.rows());
        Mat y(xv.rows(), xv.cols());
        for (Eigen::Index i = 0; i < xv.rows(); ++i) {
            S n = std::max(xv.row(i).norm(), floor);
            (*norms)(i) = n;
            y.row(i) = xv.row(i) / n;
        }
        int out = unary_or_binary(std::move(y), {x}, nullptr);
        if (nodes_[static_cast<size_t>(out)].requires_grad) {
            nodes_[static_cast<size_t>(out)].backprop = [this, x, out, norms]() {
                const Mat& g = nodes_[static_cast<size_t>(out)].grad;
                const Mat& yv = nodes_[static_cast<size_t>(out)].val;
                Mat& gx = nodes_[static_cast<size_t>(x)].grad;
                for (Eigen::Index i = 0; i < g.rows(); ++i) {
                    S d = yv.row(i).dot(g.row(i));
                    gx.row(i) += (g.row(i) - yv.row(i) * d) / (*norms)(i);
                }
            };
        }
        return out;
    }

    // y.row(i) = x.row(idx[i]). Covers embedding lookup, row permutation and
    // row selection; backward scatter-adds.
    int gather_rows(int x, std::vector<int> idx) {
        const Mat& xv = val(x);
        Mat y(static_cast<Eigen::Index>(idx.size()), xv.cols());
        for (size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] < 0 || idx[i] >= xv.rows())
                throw std::invalid_argument("gather_rows: index out of range");
            y.row(static_cast<Eigen::Index>(i)) = xv.row(idx[i]);
        }
        auto ids = std::make_shared<std::vector<int>>(std::move(idx));
        return unary_or_binary(std::move(y), {x}, [this, x, ids](const Mat& g) {
            if (!nodes_[x].requires_grad) return;
            Mat& gx = nodes_[x].grad;
            for (size_t i = 0; i < ids->size(); ++i)
                gx.row((*ids)[i]) += g.row(static_cast<Eigen::Index>(i));
        });
    }

    int concat_rows(const std::vector<int>& xs) {
        if (xs.empty()) throw std::invalid_argument("concat_rows: empty input");
        Eigen::Index cols = val(xs[0]).cols(), rows = 0;
        for (int id : xs) {
            if (val(id).cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
            rows += val(id).rows();
        }
        Mat y(rows, cols);
        Eigen::Index at = 0;
        std::vector<Eigen::Index> offs;
        for (int id : xs) {
            y.middleRows(at, val(id).rows()) = val(id);
            offs.push_back(at);
            at += val(id).rows();
        }
        auto inputs = std::make_shared<std::vector<int>>(xs);
        auto offsets = std::make_shared<std::vector<Eigen::Index>>(std::move(offs));
        return unary_or_binary(std::move(y), xs, [this, inputs, offsets](const Mat& g) {
            for (size_t i = 0; i < inputs->size(); ++i) {
                int id = (*inputs)[i];
                if (nodes_[id].requires_grad)
                    nodes_[id].grad += g.middleRows((*offsets)[i], val(id).rows());
            }
        });
    }

    int slice_rows(int x, Eigen::Index r0, Eigen::Index n) {
        if (r0 < 0 || r0 + n > val(x).rows()) throw std::invalid_argument("slice_rows: range");
        Mat y = val(x).middleRows(r0, n);
        return unary_or_binary(std::move(y), {x}, [this, x, r0, n](const Mat& g) {
            if (nodes_[x].requires_grad) nodes_[x].grad.middleRows(r0, n) += g;
        });
    }

    // Mean of row groups; offsets has G+1 entries, group g = rows [o_g, o_{g+1}).
    int row_group_mean(int x, std::vector<Eigen::Index> offsets) {
        const Mat& xv = val(x);
        if (offsets.size() < 2 || offsets.back() != xv.rows())
            throw std::invalid_argument("row_group_mean: bad offsets");
        Eigen::Index groups = static_cast<Eigen::Index>(offsets.size()) - 1;
        Mat y(groups, xv.cols());
        for (Eigen::Index g = 0; g < groups; ++g) {
            Eigen::Index cnt = offsets[g + 1] - offsets[g];
            if (cnt <= 0) throw std::invalid_argument("row_group_mean: empty group");
            y.row(g) = xv.middleRows(offsets[g], cnt).colwise().mean();
        }
        auto offs = std::make_shared<std::vector<Eigen::Index>>(std::move(offsets));
        return unary_or_binary(std::move(y), {x}, [this, x, offs](const Mat& g) {
            if (!nodes_[x].requires_grad) return;
            Mat& gx = nodes_[x].grad;
            for (Eigen::Index gi = 0; gi + 1 < static_cast<Eigen::Index>(offs->size()); ++gi) {
                Eigen::Index cnt = (*offs)[gi + 1] - (*offs)[gi];
                gx.middleRows((*offs)[gi], cnt).rowwise() += (g.row(gi) / S(cnt));
            }
        });
    }

    // y = x * exp(s), s a 1x1 node (learned log-temperature).
    int scale_by_exp_scalar(int x, int s) {
        if (val(s).rows() != 1 || val(s).cols() != 1)
            throw std::invalid_argument("scale_by_exp_scalar: s must be 1x1");
        S e = std::exp(val(s)(0, 0));
        Mat y = val(x) * e;
        return unary_or_binary(std::move(y), {x, s}, [this, x, s, e](const Mat& g) {
            if (nodes_[x].requires_grad) nodes_[x].grad += g * e;
            if (nodes_[s].requires_grad)
                nodes_[s].grad(0, 0) += e * (g.cwiseProduct(val(x))).sum();
        });
    }

    // ---- attention --------------------------------------------------------

    // Grouped multi-head attention. q: Nq x (heads*dh), k/v: Nk x (heads*dh).
    // Query group g spans q rows [q_offsets[g], q_offsets[g+1]) and attends to
    // k/v rows [k_starts[g], k_starts[g] + k_counts[g]). Key ranges may
    // overlap across groups (shared context tokens). key_valid, when
    // non-empty, masks individual key rows; a group whose keys are all masked
    // produces zero output rows.
    int attention(int q, int k, int v, int heads,
                  const std::vector<Eigen::Index>& q_offsets,
                  const std::vector<Eigen::Index>& k_starts,
                  const std::vector<Eigen::Index>& k_counts,
                  const std::vector<uint8_t>& key_valid = {}) {
        const Mat& qv = val(q);
        const Mat& kv = val(k);
        const Mat& vv = val(v);
        if (qv.cols() != kv.cols() || kv.cols() != vv.cols() || kv.rows() != vv.rows())
            throw std::invalid_argument("attention: shape mismatch");
        if (qv.cols() % heads != 0) throw std::invalid_argument("attention: cols % heads != 0");
        if (q_offsets.size() < 2 || k_starts.size() != q_offsets.size() - 1 ||
            k_counts.size() != k_starts.size() || q_offsets.back() != qv.rows())
            throw std::invalid_argument("attention: bad group tables");
        if (!key_valid.empty() && static_cast<Eigen::Index>(key_valid.size()) != kv.rows())
            throw std::invalid_argument("attention: key_valid size");

        const Eigen::Index dh = qv.cols() / heads;
        const S scale = S(1) / S(std::sqrt(double(dh)));
        const Eigen::Index groups = static_cast<Eigen::Index>(k_starts.size());
        auto probs = std::make_shared<std::vector<Mat>>();
        probs->resize(static_cast<size_t>(groups) * heads);

        Mat y = Mat::Zero(qv.rows(), qv.cols());
        for (Eigen::Index g = 0; g < groups; ++g) {
            Eigen::Index q0 = q_offsets[g], qn = q_offsets[g + 1] - q0;
            Eigen::Index k0 = k_starts[g], kn = k_counts[g];
            if (kn == 0) continue;
            bool any_valid = key_valid.empty();
            for (Eigen::Index j = 0; !any_valid && j < kn; ++j)
                any_valid = key_valid[static_cast<size_t>(k0 + j)] != 0;
            if (!any_valid) continue;  // all keys masked: zero output rows
            for (int h = 0; h < heads; ++h) {
                auto qb = qv.block(q0, h * dh, qn, dh);
                auto kb = kv.block(k0, h * dh, kn, dh);
                Mat scores = (qb * kb.transpose()) * scale;
                if (!key_valid.empty()) {
                    for (Eigen::Index j = 0; j < kn; ++j)
                        if (!key_valid[static_cast<size_t>(k0 + j)])
                            scores.col(j).setConstant(-std::numeric_limits<S>::infinity());
                }
                Mat p(qn, kn);
                for (Eigen::Index r = 0; r < qn; ++r) {
                    S mx = scores.row(r).maxCoeff();
                    p.row(r) = (scores.row(r).array() - mx).exp();
                    p.row(r) /= p.row(r).sum();
                }
                (*probs)[static_cast<size_t>(g) * heads + h] = p;
                y.block(q0, h * dh, qn, dh).noalias() = p * vv.block(k0, h * dh, kn, dh);
            }
        }

        auto qo = std::make_shared<std::vector<Eigen::Index>>(q_offsets);
        auto ks = std::make_shared<std::vector<Eigen::Index>>(k_starts);
        auto kc = std::make_shared<std::vector<Eigen::Index>>(k_counts);
        auto kvalid = std::make_shared<std::vector<uint8_t>>(key_valid);
        return unary_or_binary(std::move(y), {q, k, v},
                               [this, q, k, v, heads, dh, scale, probs, qo, ks, kc, kvalid](const Mat& g) {
            bool need_q = nodes_[q].requires_grad;
            bool need_k = nodes_[k].requires_grad;
            bool need_v = nodes_[v].requires_grad;
            if (!need_q && !need_k && !need_v) return;
            const Mat& qv = val(q);
            const Mat& kv = val(k);
            const Mat& vv = val(v);
            Eigen::Index groups = static_cast<Eigen::Index>(ks->size());
            for (Eigen::Index gi = 0; gi < groups; ++gi) {
                Eigen::Index q0 = (*qo)[gi], qn = (*qo)[gi + 1] - q0;
                Eigen::Index k0 = (*ks)[gi], kn = (*kc)[gi];
                if (kn == 0) continue;
                for (int h = 0; h < heads; ++h) {
                    const Mat& p = (*probs)[static_cast<size_t>(gi) * heads + h];
                    if (p.size() == 0) continue;  // fully masked group
                    auto gy = g.block(q0, h * dh, qn, dh);
                    auto qb = qv.block(q0, h * dh, qn, dh);
                    auto kb = kv.block(k0, h * dh, kn, dh);
                    auto vb = vv.block(k0, h * dh, kn, dh);
                    if (need_v)
                        nodes_[v].grad.block(k0, h * dh, kn, dh).noalias() += p.transpose() * gy;
                    if (!need_q && !need_k) continue;
                    Mat dp = gy * vb.transpose();              // qn x kn
                    VecX<S> rowdot = (dp.cwiseProduct(p)).rowwise().sum();
                    Mat ds = p.cwiseProduct(dp.colwise() - rowdot);
                    if (need_q)
                        nodes_[q].grad.block(q0, h * dh, qn, dh).noalias() += ds * kb * scale;
                    if (need_k)
                        nodes_[k].grad.block(k0, h * dh, kn, dh).noalias() +=
                            ds.transpose() * qb * scale;
                }
            }
        });
    }

    // ---- reductions / losses ----------------------------------------------

    int mean_all(int x) {
        Mat y(1, 1);
        y(0, 0) = val(x).mean();
        return unary_or_binary(std::move(y), {x}, [this, x](const Mat& g) {
            if (nodes_[x].requires_grad)
                nodes_[x].grad.array() += g(0, 0) / S(val(x).size());
        });
    }

    // Mean squared error against a constant target.
    int mse_loss(int pred, Mat target) {
        if (val(pred).rows() != target.rows() || val(pred).cols() != target.cols())
            throw std::invalid_argument("mse_loss: shape mismatch");
        auto tgt = std::make_shared<Mat>(std::move(target));
        Mat y(1, 1);
        y(0, 0) = (val(pred) - *tgt).squaredNorm() / S(tgt->size());
        return unary_or_binary(std::move(y), {pred}, [this, pred, tgt](const Mat& g) {
            if (nodes_[pred].requires_grad)
                nodes_[pred].grad += g(0, 0) * S(2) / S(tgt->size()) * (val(pred) - *tgt);
        });
    }

    // Mean cross-entropy of row-wise softmax against integer targets.
    int softmax_xent_rows(int logits, std::vector<int> targets) {
        const Mat& lv = val(logits);
        if (static_cast<Eigen::Index>(targets.size()) != lv.rows())
            throw std::invalid_argument("softmax_xent_rows: target count");
        auto p = std::make_shared<Mat>(lv.rows(), lv.cols());
        S loss = 0;
        for (Eigen::Index i = 0; i < lv.rows(); ++i) {
            S mx = lv.row(i).maxCoeff();
            p->row(i) = (lv.row(i).array() - mx).exp();
            S z = p->row(i).sum();
            p->row(i) /= z;
            loss -= std::log(std::max((*p)(i, targets[static_cast<size_t>(i)]),
                                      std::numeric_limits<S>::min()));
        }
        loss /= S(lv.rows());
        Mat y(1, 1);
        y(0, 0) = loss;
        auto tg = std::make_shared<std::vector<int>>(std::move(targets));
        return unary_or_binary(std::move(y), {logits}, [this, logits, p, tg](const Mat& g) {
            if (!nodes_[logits].requires_grad) return;
            Mat d = *p;
            for (Eigen::Index i = 0; i < d.rows(); ++i) d(i, (*tg)[static_cast<size_t>(i)]) -= S(1);
            nodes_[logits].grad += (g(0, 0) / S(d.rows())) * d;
        });
    }

    // ---- backward ---------------------------------------------------------

    void backward(int loss) {
        if (val(loss).rows() != 1 || val(loss).cols() != 1)
            throw std::invalid_argument("backward: loss must be 1x1");
        if (!nodes_[loss].requires_grad)
            throw std::invalid_argument("backward: loss does not require grad");
        nodes_[loss].grad(0, 0) = S(1);
        for (int id = loss; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (n.requires_grad && n.backprop) n.backprop();
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;

    const Mat& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }

    void accum(int id, const Mat& g) {
        if (nodes_[static_cast<size_t>(id)].requires_grad)
            nodes_[static_cast<size_t>(id)].grad += g;
    }

    std::string dims(int id) const {
        return std::to_string(val(id).rows()) + "x" + std::to_string(val(id).cols());
    }

    void check_same_shape(const char* op, int a, int b) const {
        if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
            throw std::invalid_argument(std::string(op) + ": shape " + dims(a) + " vs " + dims(b));
    }

    int unary_or_binary(Mat y, std::initializer_list<int> inputs,
                        std::function<void(const Mat&)> back) {
        return finish_node(std::move(y), inputs.begin(), inputs.end(), std::move(back));
    }

    int unary_or_binary(Mat y, const std::vector<int>& inputs,
                        std::function<void(const Mat&)> back) {
        return finish_node(std::move(y), inputs.begin(), inputs.end(), std::move(back));
    }

    template <typename It>
    int finish_node(Mat y, It first, It last, std::function<void(const Mat&)> back) {
        bool rg = false;
        for (It it = first; it != last; ++it) rg = rg || nodes_[static_cast<size_t>(*it)].requires_grad;
        Node n;
        n.val = std::move(y);
        n.requires_grad = rg;
        if (rg) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
        nodes_.push_back(std::move(n));
        int id = static_cast<int>(nodes_.size()) - 1;
        if (rg && back) {
            nodes_[static_cast<size_t>(id)].backprop = [this, id, back = std::move(back)]() {
                back(nodes_[static_cast<size_t>(id)].grad);
            };
        }
        return id;
    }
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace ragme::nn

#include "ithroat/tinynet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ithroat::tinynet {

namespace {

constexpr double kResidualScale = 0.70710678118654752440;  // 1/sqrt(2)
constexpr std::size_t kMicroBatch = 8;

struct ConvShape {
    std::size_t cin = 0, cout = 0, k = 0, stride = 1, pad = 0;
    std::size_t lin = 0, lout = 0;
    std::size_t w_idx = 0, b_idx = 0;  // indices into model.tensors
};

struct BlockPlan {
    ConvShape conv1, conv2;
    bool has_proj = false;
    ConvShape proj;
};

struct Plan {
    ConvShape stem;
    std::vector<BlockPlan> blocks;
    std::size_t feat_dim = 0;
    std::size_t classes = 0;
    std::size_t head_w = 0, head_b = 0;
    std::size_t tensor_count = 0;
    std::vector<std::pair<std::string, std::vector<std::size_t>>> tensor_shapes;
};

std::size_t conv_out_len(std::size_t lin, std::size_t k, std::size_t stride, std::size_t pad) {
    return (lin + 2 * pad - k) / stride + 1;
}

Plan make_plan(const ArchConfig& cfg) {
    validate_config(cfg);
    Plan plan;
    std::size_t next = 0;
    auto add_tensor = [&](const std::string& name, std::vector<std::size_t> shape) {
        plan.tensor_shapes.emplace_back(name, std::move(shape));
        return next++;
    };

    plan.stem.cin = cfg.in_channels;
    plan.stem.cout = cfg.stem_width;
    plan.stem.k = 7;
    plan.stem.stride = 1;
    plan.stem.pad = 3;
    plan.stem.lin = cfg.input_len;
    plan.stem.lout = conv_out_len(cfg.input_len, 7, 1, 3);
    plan.stem.w_idx = add_tensor("stem.w", {plan.stem.cout, plan.stem.cin, 7});
    plan.stem.b_idx = add_tensor("stem.b", {plan.stem.cout});

    std::size_t width = cfg.stem_width;
    std::size_t len = plan.stem.lout;
    for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
        const auto& spec = cfg.blocks[i];
        BlockPlan bp;
        bp.conv1.cin = width;
        bp.conv1.cout = spec.width;
        bp.conv1.k = 3;
        bp.conv1.stride = spec.stride;
        bp.conv1.pad = 1;
        bp.conv1.lin = len;
        bp.conv1.lout = conv_out_len(len, 3, spec.stride, 1);
        require(bp.conv1.lout >= 1, Errc::config_error, "block " + std::to_string(i) +
                                                            " reduces length below 1");
        const std::string prefix = "block" + std::to_string(i);
        bp.conv1.w_idx = add_tensor(prefix + ".conv1.w", {spec.width, width, 3});
        bp.conv1.b_idx = add_tensor(prefix + ".conv1.b", {spec.width});

        bp.conv2.cin = spec.width;
        bp.conv2.cout = spec.width;
        bp.conv2.k = 3;
        bp.conv2.stride = 1;
        bp.conv2.pad = 1;
        bp.conv2.lin = bp.conv1.lout;
        bp.conv2.lout = bp.conv1.lout;
        bp.conv2.w_idx = add_tensor(prefix + ".conv2.w", {spec.width, spec.width, 3});
        bp.conv2.b_idx = add_tensor(prefix + ".conv2.b", {spec.width});

        bp.has_proj = spec.stride != 1 || spec.width != width;
        if (bp.has_proj) {
            bp.proj.cin = width;
            bp.proj.cout = spec.width;
            bp.proj.k = 1;
            bp.proj.stride = spec.stride;
            bp.proj.pad = 0;
            bp.proj.lin = len;
            bp.proj.lout = conv_out_len(len, 1, spec.stride, 0);
            bp.proj.w_idx = add_tensor(prefix + ".proj.w", {spec.width, width, 1});
            bp.proj.b_idx = add_tensor(prefix + ".proj.b", {spec.width});
        }
        plan.blocks.push_back(bp);
        width = spec.width;
        len = bp.conv2.lout;
    }
    plan.feat_dim = width;
    plan.classes = cfg.classes;
    plan.head_w = add_tensor("head.w", {cfg.classes, width});
    plan.head_b = add_tensor("head.b", {cfg.classes});
    plan.tensor_count = next;
    return plan;
}

// --- conv kernels -----------------------------------------------------------

inline std::size_t low_index(std::size_t pad, std::size_t t, std::size_t stride) {
    // smallest l with l*stride + t - pad >= 0
    if (t >= pad) return 0;
    return (pad - t + stride - 1) / stride;
}

inline std::size_t high_index(std::size_t lin, std::size_t pad, std::size_t t,
                              std::size_t stride, std::size_t lout) {
    // one past the largest l with l*stride + t - pad < lin
    const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(lin + pad) -
                               static_cast<std::ptrdiff_t>(t);
    if (top <= 0) return 0;
    const std::size_t hi = (static_cast<std::size_t>(top) + stride - 1) / stride;
    return std::min(hi, lout);
}

void conv_forward_general(const double* __restrict__ in, std::size_t B, const ConvShape& s,
                          const double* __restrict__ w, const double* __restrict__ bias,
                          double* __restrict__ out) {
    const std::size_t cin = s.cin, cout = s.cout, k = s.k, lin = s.lin, lout = s.lout;
    const std::size_t stride = s.stride, pad = s.pad;
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (B * cout >= 8)
#endif
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            double* orow = out + (b * cout + co) * lout;
            const double bv = bias[co];
            for (std::size_t l = 0; l < lout; ++l) orow[l] = bv;
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* irow = in + (b * cin + ci) * lin;
                for (std::size_t t = 0; t < k; ++t) {
                    const double wv = w[(co * cin + ci) * k + t];
                    const std::ptrdiff_t off =
                        static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(pad);
                    const std::size_t lo = low_index(pad, t, stride);
                    const std::size_t hi = high_index(lin, pad, t, stride, lout);
                    if (stride == 1) {
                        const double* __restrict__ src = irow + off;
                        for (std::size_t l = lo; l < hi; ++l) orow[l] += wv * src[l];
                    } else {
                        for (std::size_t l = lo; l < hi; ++l)
                            orow[l] += wv * irow[static_cast<std::size_t>(
                                           static_cast<std::ptrdiff_t>(l * stride) + off)];
                    }
                }
            }
        }
    }
}

// Fused kernel for the hot k=3 / stride=1 / pad=1 convs: 3-tap stencil over
// the interior, channel-blocked by 4 so each output element gets 12 FMAs per
// load/store pair.
void conv_forward_k3(const double* __restrict__ in, std::size_t B, const ConvShape& s,
                     const double* __restrict__ w, const double* __restrict__ bias,
                     double* __restrict__ out) {
    const std::size_t cin = s.cin, cout = s.cout, lin = s.lin;
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (B * cout >= 8)
#endif
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            double* __restrict__ orow = out + (b * cout + co) * lin;
            const double bv = bias[co];
            for (std::size_t l = 0; l < lin; ++l) orow[l] = bv;
            std::size_t ci = 0;
            for (; ci + 4 <= cin; ci += 4) {
                const double* __restrict__ i0 = in + (b * cin + ci + 0) * lin;
                const double* __restrict__ i1 = in + (b * cin + ci + 1) * lin;
                const double* __restrict__ i2 = in + (b * cin + ci + 2) * lin;
                const double* __restrict__ i3 = in + (b * cin + ci + 3) * lin;
                const double* __restrict__ wp = w + (co * cin + ci) * 3;
                for (std::size_t l = 1; l + 1 < lin; ++l) {
                    double acc = orow[l];
                    acc += wp[0] * i0[l - 1] + wp[1] * i0[l] + wp[2] * i0[l + 1];
                    acc += wp[3] * i1[l - 1] + wp[4] * i1[l] + wp[5] * i1[l + 1];
                    acc += wp[6] * i2[l - 1] + wp[7] * i2[l] + wp[8] * i2[l + 1];
                    acc += wp[9] * i3[l - 1] + wp[10] * i3[l] + wp[11] * i3[l + 1];
                    orow[l] = acc;
                }
                const std::size_t last = lin - 1;
                orow[0] += wp[1] * i0[0] + wp[4] * i1[0] + wp[7] * i2[0] + wp[10] * i3[0];
                if (lin > 1)
                    orow[0] += wp[2] * i0[1] + wp[5] * i1[1] + wp[8] * i2[1] + wp[11] * i3[1];
                if (last > 0) {
                    orow[last] +=
                        wp[1] * i0[last] + wp[4] * i1[last] + wp[7] * i2[last] + wp[10] * i3[last];
                    orow[last] += wp[0] * i0[last - 1] + wp[3] * i1[last - 1] +
                                  wp[6] * i2[last - 1] + wp[9] * i3[last - 1];
                }
            }
            for (; ci < cin; ++ci) {
                const double* __restrict__ irow = in + (b * cin + ci) * lin;
                const double* __restrict__ wp = w + (co * cin + ci) * 3;
                for (std::size_t l = 1; l + 1 < lin; ++l)
                    orow[l] += wp[0] * irow[l - 1] + wp[1] * irow[l] + wp[2] * irow[l + 1];
                const std::size_t last = lin - 1;
                orow[0] += wp[1] * irow[0];
                if (lin > 1) orow[0] += wp[2] * irow[1];
                if (last > 0) orow[last] += wp[1] * irow[last] + wp[0] * irow[last - 1];
            }
        }
    }
}

// Stride-2 convs read in[2l + t - pad]; splitting the input into even/odd
// phases makes every tap a contiguous stream. Phase rows are laid out
// [E (nE) | O (nO)] per (b, ci).
struct PhaseSplit {
    std::vector<double> buf;
    std::size_t nE = 0, nO = 0, rowlen = 0;

    void build(const double* in, std::size_t rows, std::size_t lin) {
        nE = (lin + 1) / 2;
        nO = lin / 2;
        rowlen = nE + nO;
        buf.assign(rows * rowlen, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows >= 4)
#endif
        for (std::size_t r = 0; r < rows; ++r) {
            const double* src = in + r * lin;
            double* e = buf.data() + r * rowlen;
            double* o = e + nE;
            for (std::size_t j = 0; j < nE; ++j) e[j] = src[2 * j];
            for (std::size_t j = 0; j < nO; ++j) o[j] = src[2 * j + 1];
        }
    }
    const double* even(std::size_t r) const { return buf.data() + r * rowlen; }
    const double* odd(std::size_t r) const { return buf.data() + r * rowlen + nE; }
};

void conv_forward_k3s2(const double* __restrict__ in, std::size_t B, const ConvShape& s,
                       const double* __restrict__ w, const double* __restrict__ bias,
                       double* __restrict__ out) {
    const std::size_t cin = s.cin, cout = s.cout, lin = s.lin, lout = s.lout;
    PhaseSplit ph;
    ph.build(in, B * cin, lin);
    const std::size_t nO = ph.nO;
    const std::size_t mid = std::min(lout, nO);  // l values where all three taps exist
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (B * cout >= 8)
#endif
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            double* __restrict__ orow = out + (b * cout + co) * lout;
            const double bv = bias[co];
            for (std::size_t l = 0; l < lout; ++l) orow[l] = bv;
            std::size_t ci = 0;
            for (; ci + 2 <= cin; ci += 2) {
                const double* __restrict__ e0 = ph.even(b * cin + ci);
                const double* __restrict__ o0 = ph.odd(b * cin + ci);
                const double* __restrict__ e1 = ph.even(b * cin + ci + 1);
                const double* __restrict__ o1 = ph.odd(b * cin + ci + 1);
                const double* __restrict__ wp = w + (co * cin + ci) * 3;
                for (std::size_t l = 1; l < mid; ++l) {
                    orow[l] += wp[0] * o0[l - 1] + wp[1] * e0[l] + wp[2] * o0[l] +
                               wp[3] * o1[l - 1] + wp[4] * e1[l] + wp[5] * o1[l];
                }
                orow[0] += wp[1] * e0[0] + wp[4] * e1[0];
                if (nO > 0) orow[0] += wp[2] * o0[0] + wp[5] * o1[0];
                for (std::size_t l = std::max<std::size_t>(mid, 1); l < lout; ++l)
                    orow[l] += wp[0] * o0[l - 1] + wp[1] * e0[l] + wp[3] * o1[l - 1] +
                               wp[4] * e1[l];
            }
            for (; ci < cin; ++ci) {
                const double* __restrict__ e0 = ph.even(b * cin + ci);
                const double* __restrict__ o0 = ph.odd(b * cin + ci);
                const double* __restrict__ wp = w + (co * cin + ci) * 3;
                for (std::size_t l = 1; l < mid; ++l)
                    orow[l] += wp[0] * o0[l - 1] + wp[1] * e0[l] + wp[2] * o0[l];
                orow[0] += wp[1] * e0[0];
                if (nO > 0) orow[0] += wp[2] * o0[0];
                for (std::size_t l = std::max<std::size_t>(mid, 1); l < lout; ++l)
                    orow[l] += wp[0] * o0[l - 1] + wp[1] * e0[l];
            }
        }
    }
}

void conv_forward_k1s2(const double* __restrict__ in, std::size_t B, const ConvShape& s,
                       const double* __restrict__ w, const double* __restrict__ bias,
                       double* __restrict__ out) {
    const std::size_t cin = s.cin, cout = s.cout, lin = s.lin, lout = s.lout;
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (B * cout >= 8)
#endif
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            double* __restrict__ orow = out + (b * cout + co) * lout;
            const double bv = bias[co];
            for (std::size_t l = 0; l < lout; ++l) orow[l] = bv;
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* __restrict__ irow = in + (b * cin + ci) * lin;
                const double wv = w[co * cin + ci];
                for (std::size_t l = 0; l < lout; ++l) orow[l] += wv * irow[2 * l];
            }
        }
    }
}

void conv_forward(const double* in, std::size_t B, const ConvShape& s, const double* w,
                  const double* bias, double* out) {
    if (s.k == 3 && s.stride == 1 && s.pad == 1 && s.lin == s.lout && s.lin >= 2)
        conv_forward_k3(in, B, s, w, bias, out);
    else if (s.k == 3 && s.stride == 2 && s.pad == 1 && s.lin >= 2)
        conv_forward_k3s2(in, B, s, w, bias, out);
    else if (s.k == 1 && s.stride == 2 && s.pad == 0 && s.lin >= 2)
        conv_forward_k1s2(in, B, s, w, bias, out);
    else
        conv_forward_general(in, B, s, w, bias, out);
}

void conv_backward_input_general(const double* __restrict__ gout, std::size_t B,
                                 const ConvShape& s, const double* __restrict__ w,
                                 double* __restrict__ gin) {
    const std::size_t cin = s.cin, cout = s.cout, k = s.k, lin = s.lin, lout = s.lout;
    const std::size_t stride = s.stride, pad = s.pad;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (B >= 2)
#endif
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            const double* grow = gout + (b * cout + co) * lout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
                double* girow = gin + (b * cin + ci) * lin;
                for (std::size_t t = 0; t < k; ++t) {
                    const double wv = w[(co * cin + ci) * k + t];
                    const std::ptrdiff_t off =
                        static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(pad);
                    const std::size_t lo = low_index(pad, t, stride);
                    const std::size_t hi = high_index(lin, pad, t, stride, lout);
                    if (stride == 1) {
                        double* __restrict__ dst = girow + off;
                        for (std::size_t l = lo; l < hi; ++l) dst[l] += wv * grow[l];
                    } else {
                        for (std::size_t l = lo; l < hi; ++l)
                            girow[static_cast<std::size_t>(
                                static_cast<std::ptrdiff_t>(l * stride) + off)] +=
                                wv * grow[l];
                    }
                }
            }
        }
    }
}

// Input gradient of the k=3 same conv is the 3-tap correlation with the
// flipped kernel; co blocked by 4.
void conv_backward_input_k3(const double* __restrict__ gout, std::size_t B, const ConvShape& s,
                            const double* __restrict__ w, double* __restrict__ gin) {
    const std::size_t cin = s.cin, cout = s.cout, lin = s.lin;
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (B * cin >= 8)
#endif
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t ci = 0; ci < cin; ++ci) {
            double* __restrict__ girow = gin + (b * cin + ci) * lin;
            std::size_t co = 0;
            for (; co + 4 <= cout; co += 4) {
                const double* __restrict__ g0 = gout + (b * cout + co + 0) * lin;
                const double* __restrict__ g1 = gout + (b * cout + co + 1) * lin;
                const double* __restrict__ g2 = gout + (b * cout + co + 2) * lin;
                const double* __restrict__ g3 = gout + (b * cout + co + 3) * lin;
                const double* w0 = w + ((co + 0) * cin + ci) * 3;
                const double* w1 = w + ((co + 1) * cin + ci) * 3;
                const double* w2 = w + ((co + 2) * cin + ci) * 3;
                const double* w3 = w + ((co + 3) * cin + ci) * 3;
                for (std::size_t l = 1; l + 1 < lin; ++l) {
                    double acc = girow[l];
                    acc += w0[2] * g0[l - 1] + w0[1] * g0[l] + w0[0] * g0[l + 1];
                    acc += w1[2] * g1[l - 1] + w1[1] * g1[l] + w1[0] * g1[l + 1];
                    acc += w2[2] * g2[l - 1] + w2[1] * g2[l] + w2[0] * g2[l + 1];
                    acc += w3[2] * g3[l - 1] + w3[1] * g3[l] + w3[0] * g3[l + 1];
                    girow[l] = acc;
                }
                const std::size_t last = lin - 1;
                girow[0] += w0[1] * g0[0] + w1[1] * g1[0] + w2[1] * g2[0] + w3[1] * g3[0];
                if (lin > 1)
                    girow[0] += w0[0] * g0[1] + w1[0] * g1[1] + w2[0] * g2[1] + w3[0] * g3[1];
                if (last > 0) {
                    girow[last] +=
                        w0[1] * g0[last] + w1[1] * g1[last] + w2[1] * g2[last] + w3[1] * g3[last];
                    girow[last] += w0[2] * g0[last - 1] + w1[2] * g1[last - 1] +
                                   w2[2] * g2[last - 1] + w3[2] * g3[last - 1];
                }
            }
            for (; co < cout; ++co) {
                const double* __restrict__ grow = gout + (b * cout + co) * lin;
                const double* wp = w + (co * cin + ci) * 3;
                for (std::size_t l = 1; l + 1 < lin; ++l)
                    girow[l] += wp[2] * grow[l - 1] + wp[1] * grow[l] + wp[0] * grow[l + 1];
                const std::size_t last = lin - 1;
                girow[0] += wp[1] * grow[0];
                if (lin > 1) girow[0] += wp[0] * grow[1];
                if (last > 0) girow[last] += wp[1] * grow[last] + wp[2] * grow[last - 1];
            }
        }
    }
}

void conv_backward_input_k3s2(const double* __restrict__ gout, std::size_t B,
                              const ConvShape& s, const double* __restrict__ w,
                              double* __restrict__ gin) {
    const std::size_t cin = s.cin, cout = s.cout, lin = s.lin, lout = s.lout;
    const std::size_t nE = (lin + 1) / 2, nO = lin / 2;
    const std::size_t mid = std::min(lout, nO);
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (B * cin >= 8)
#endif
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t ci = 0; ci < cin; ++ci) {
            std::vector<double> ge(nE, 0.0), go(nO, 0.0);
            double* __restrict__ gE = ge.data();
            double* __restrict__ gO = go.data();
            for (std::size_t co = 0; co < cout; ++co) {
                const double* __restrict__ grow = gout + (b * cout + co) * lout;
                const double* wp = w + (co * cin + ci) * 3;
                const double w0 = wp[0], w1 = wp[1], w2 = wp[2];
                for (std::size_t j = 0; j + 1 < lout; ++j) gO[j] += w0 * grow[j + 1];
                for (std::size_t l = 0; l < lout; ++l) gE[l] += w1 * grow[l];
                for (std::size_t l = 0; l < mid; ++l) gO[l] += w2 * grow[l];
            }
            double* __restrict__ girow = gin + (b * cin + ci) * lin;
            for (std::size_t j = 0; j < nE; ++j) girow[2 * j] += gE[j];
            for (std::size_t j = 0; j < nO; ++j) girow[2 * j + 1] += gO[j];
        }
    }
}

void conv_backward_input_k1s2(const double* __restrict__ gout, std::size_t B,
                              const ConvShape& s, const double* __restrict__ w,
                              double* __restrict__ gin) {
    const std::size_t cin = s.cin, cout = s.cout, lin = s.lin, lout = s.lout;
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (B * cin >= 8)
#endif
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t ci = 0; ci < cin; ++ci) {
            std::vector<double> ge(lout, 0.0);
            double* __restrict__ gE = ge.data();
            for (std::size_t co = 0; co < cout; ++co) {
                const double* __restrict__ grow = gout + (b * cout + co) * lout;
                const double wv = w[co * cin + ci];
                for (std::size_t l = 0; l < lout; ++l) gE[l] += wv * grow[l];
            }
            double* __restrict__ girow = gin + (b * cin + ci) * lin;
            for (std::size_t l = 0; l < lout; ++l) girow[2 * l] += gE[l];
        }
    }
}

void conv_backward_input(const double* gout, std::size_t B, const ConvShape& s, const double* w,
                         double* gin) {
    if (s.k == 3 && s.stride == 1 && s.pad == 1 && s.lin == s.lout && s.lin >= 2)
        conv_backward_input_k3(gout, B, s, w, gin);
    else if (s.k == 3 && s.stride == 2 && s.pad == 1 && s.lin >= 2)
        conv_backward_input_k3s2(gout, B, s, w, gin);
    else if (s.k == 1 && s.stride == 2 && s.pad == 0 && s.lin >= 2)
        conv_backward_input_k1s2(gout, B, s, w, gin);
    else
        conv_backward_input_general(gout, B, s, w, gin);
}

void conv_backward_params_general(const double* __restrict__ gout, const double* __restrict__ in,
                                  std::size_t B, const ConvShape& s, double* __restrict__ gw,
                                  double* __restrict__ gb) {
    const std::size_t cin = s.cin, cout = s.cout, k = s.k, lin = s.lin, lout = s.lout;
    const std::size_t stride = s.stride, pad = s.pad;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (cout >= 2)
#endif
    for (std::size_t co = 0; co < cout; ++co) {
        double bias_acc = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const double* grow = gout + (b * cout + co) * lout;
            for (std::size_t l = 0; l < lout; ++l) bias_acc += grow[l];
        }
        gb[co] += bias_acc;
        for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t t = 0; t < k; ++t) {
                const std::ptrdiff_t off =
                    static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(pad);
                const std::size_t lo = low_index(pad, t, stride);
                const std::size_t hi = high_index(lin, pad, t, stride, lout);
                double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
                for (std::size_t b = 0; b < B; ++b) {
                    const double* grow = gout + (b * cout + co) * lout;
                    const double* irow = in + (b * cin + ci) * lin;
                    if (stride == 1) {
                        const double* __restrict__ src = irow + off;
                        std::size_t l = lo;
                        for (; l + 4 <= hi; l += 4) {
                            acc0 += grow[l] * src[l];
                            acc1 += grow[l + 1] * src[l + 1];
                            acc2 += grow[l + 2] * src[l + 2];
                            acc3 += grow[l + 3] * src[l + 3];
                        }
                        for (; l < hi; ++l) acc0 += grow[l] * src[l];
                    } else {
                        for (std::size_t l = lo; l < hi; ++l)
                            acc0 += grow[l] *
                                    irow[static_cast<std::size_t>(
                                        static_cast<std::ptrdiff_t>(l * stride) + off)];
                    }
                }
                gw[(co * cin + ci) * k + t] += (acc0 + acc1) + (acc2 + acc3);
            }
        }
    }
}

// Weight gradient of the k=3 same conv: one interior pass per (co, ci) feeding
// the three taps, 4-way unrolled so the partial sums vectorize; summation
// order is fixed so results are bit-stable for any thread count.
void conv_backward_params_k3(const double* __restrict__ gout, const double* __restrict__ in,
                             std::size_t B, const ConvShape& s, double* __restrict__ gw,
                             double* __restrict__ gb) {
    const std::size_t cin = s.cin, cout = s.cout, lin = s.lin;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (cout >= 2)
#endif
    for (std::size_t co = 0; co < cout; ++co) {
        double bias_acc = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const double* grow = gout + (b * cout + co) * lin;
            for (std::size_t l = 0; l < lin; ++l) bias_acc += grow[l];
        }
        gb[co] += bias_acc;
        for (std::size_t ci = 0; ci < cin; ++ci) {
            double t0[8] = {0}, t1[8] = {0}, t2[8] = {0};
            for (std::size_t b = 0; b < B; ++b) {
                const double* __restrict__ grow = gout + (b * cout + co) * lin;
                const double* __restrict__ irow = in + (b * cin + ci) * lin;
                std::size_t l = 1;
                for (; l + 8 < lin; l += 8) {
                    for (std::size_t j = 0; j < 8; ++j) {
                        const double g = grow[l + j];
                        t0[j] += g * irow[l + j - 1];
                        t1[j] += g * irow[l + j];
                        t2[j] += g * irow[l + j + 1];
                    }
                }
                for (; l + 1 < lin; ++l) {
                    t0[0] += grow[l] * irow[l - 1];
                    t1[0] += grow[l] * irow[l];
                    t2[0] += grow[l] * irow[l + 1];
                }
                // edge columns (l = 0 and l = lin-1)
                t1[0] += grow[0] * irow[0];
                if (lin > 1) {
                    t2[0] += grow[0] * irow[1];
                    const std::size_t last = lin - 1;
                    t0[0] += grow[last] * irow[last - 1];
                    t1[0] += grow[last] * irow[last];
                }
            }
            double* gwp = gw + (co * cin + ci) * 3;
            for (std::size_t j = 0; j < 8; ++j) {
                gwp[0] += t0[j];
                gwp[1] += t1[j];
                gwp[2] += t2[j];
            }
        }
    }
}

void conv_backward_params_k3s2(const double* __restrict__ gout, const double* __restrict__ in,
                               std::size_t B, const ConvShape& s, double* __restrict__ gw,
                               double* __restrict__ gb) {
    const std::size_t cin = s.cin, cout = s.cout, lin = s.lin, lout = s.lout;
    PhaseSplit ph;
    ph.build(in, B * cin, lin);
    const std::size_t mid = std::min(lout, ph.nO);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (cout >= 2)
#endif
    for (std::size_t co = 0; co < cout; ++co) {
        double bias_acc = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const double* grow = gout + (b * cout + co) * lout;
            for (std::size_t l = 0; l < lout; ++l) bias_acc += grow[l];
        }
        gb[co] += bias_acc;
        for (std::size_t ci = 0; ci < cin; ++ci) {
            double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
            double b0 = 0.0, b1 = 0.0, b2 = 0.0, b3 = 0.0;
            double c0 = 0.0, c1 = 0.0, c2 = 0.0, c3 = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* __restrict__ grow = gout + (b * cout + co) * lout;
                const double* __restrict__ E = ph.even(b * cin + ci);
                const double* __restrict__ O = ph.odd(b * cin + ci);
                std::size_t j = 0;
                for (; j + 4 < lout; j += 4) {
                    a0 += grow[j + 1] * O[j];
                    a1 += grow[j + 2] * O[j + 1];
                    a2 += grow[j + 3] * O[j + 2];
                    a3 += grow[j + 4] * O[j + 3];
                }
                for (; j + 1 < lout; ++j) a0 += grow[j + 1] * O[j];
                std::size_t l = 0;
                for (; l + 4 <= lout; l += 4) {
                    b0 += grow[l] * E[l];
                    b1 += grow[l + 1] * E[l + 1];
                    b2 += grow[l + 2] * E[l + 2];
                    b3 += grow[l + 3] * E[l + 3];
                }
                for (; l < lout; ++l) b0 += grow[l] * E[l];
                l = 0;
                for (; l + 4 <= mid; l += 4) {
                    c0 += grow[l] * O[l];
                    c1 += grow[l + 1] * O[l + 1];
                    c2 += grow[l + 2] * O[l + 2];
                    c3 += grow[l + 3] * O[l + 3];
                }
                for (; l < mid; ++l) c0 += grow[l] * O[l];
            }
            double* gwp = gw + (co * cin + ci) * 3;
            gwp[0] += (a0 + a1) + (a2 + a3);
            gwp[1] += (b0 + b1) + (b2 + b3);
            gwp[2] += (c0 + c1) + (c2 + c3);
        }
    }
}

void conv_backward_params_k1s2(const double* __restrict__ gout, const double* __restrict__ in,
                               std::size_t B, const ConvShape& s, double* __restrict__ gw,
                               double* __restrict__ gb) {
    const std::size_t cin = s.cin, cout = s.cout, lin = s.lin, lout = s.lout;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (cout >= 2)
#endif
    for (std::size_t co = 0; co < cout; ++co) {
        double bias_acc = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const double* grow = gout + (b * cout + co) * lout;
            for (std::size_t l = 0; l < lout; ++l) bias_acc += grow[l];
        }
        gb[co] += bias_acc;
        for (std::size_t ci = 0; ci < cin; ++ci) {
            double acc = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* __restrict__ grow = gout + (b * cout + co) * lout;
                const double* __restrict__ irow = in + (b * cin + ci) * lin;
                for (std::size_t l = 0; l < lout; ++l) acc += grow[l] * irow[2 * l];
            }
            gw[co * cin + ci] += acc;
        }
    }
}

void conv_backward_params(const double* gout, const double* in, std::size_t B,
                          const ConvShape& s, double* gw, double* gb) {
    if (s.k == 3 && s.stride == 1 && s.pad == 1 && s.lin == s.lout && s.lin >= 2)
        conv_backward_params_k3(gout, in, B, s, gw, gb);
    else if (s.k == 3 && s.stride == 2 && s.pad == 1 && s.lin >= 2)
        conv_backward_params_k3s2(gout, in, B, s, gw, gb);
    else if (s.k == 1 && s.stride == 2 && s.pad == 0 && s.lin >= 2)
        conv_backward_params_k1s2(gout, in, B, s, gw, gb);
    else
        conv_backward_params_general(gout, in, B, s, gw, gb);
}

// --- forward with optional caches -------------------------------------------

struct ChunkCaches {
    std::vector<double> x0;                // B x cin x L
    std::vector<double> y0;                // stem post-relu
    std::vector<std::vector<double>> r1;   // per block, post-relu inner activation
    std::vector<std::vector<double>> y;    // per block output (post-relu)
    std::vector<double> feat;              // B x feat_dim
    std::vector<double> logits;            // B x classes
};

void forward_chunk(const Model& model, const Plan& plan, const double* x, std::size_t B,
                   ChunkCaches& c) {
    c.x0.assign(x, x + B * plan.stem.cin * plan.stem.lin);
    c.y0.assign(B * plan.stem.cout * plan.stem.lout, 0.0);
    conv_forward(c.x0.data(), B, plan.stem, model.tensors[plan.stem.w_idx].second.data.data(),
                 model.tensors[plan.stem.b_idx].second.data.data(), c.y0.data());
    for (auto& v : c.y0) v = v > 0.0 ? v : 0.0;

    c.r1.assign(plan.blocks.size(), {});
    c.y.assign(plan.blocks.size(), {});
    const std::vector<double>* cur = &c.y0;
    for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
        const auto& bp = plan.blocks[i];
        auto& r1 = c.r1[i];
        r1.assign(B * bp.conv1.cout * bp.conv1.lout, 0.0);
        conv_forward(cur->data(), B, bp.conv1,
                     model.tensors[bp.conv1.w_idx].second.data.data(),
                     model.tensors[bp.conv1.b_idx].second.data.data(), r1.data());
        for (auto& v : r1) v = v > 0.0 ? v : 0.0;

        auto& y = c.y[i];
        y.assign(B * bp.conv2.cout * bp.conv2.lout, 0.0);
        conv_forward(r1.data(), B, bp.conv2, model.tensors[bp.conv2.w_idx].second.data.data(),
                     model.tensors[bp.conv2.b_idx].second.data.data(), y.data());

        if (bp.has_proj) {
            std::vector<double> sc(B * bp.proj.cout * bp.proj.lout, 0.0);
            conv_forward(cur->data(), B, bp.proj,
                         model.tensors[bp.proj.w_idx].second.data.data(),
                         model.tensors[bp.proj.b_idx].second.data.data(), sc.data());
            for (std::size_t j = 0; j < y.size(); ++j)
                y[j] = (y[j] + sc[j]) * kResidualScale;
        } else {
            const auto& xin = *cur;
            for (std::size_t j = 0; j < y.size(); ++j)
                y[j] = (y[j] + xin[j]) * kResidualScale;
        }
        for (auto& v : y) v = v > 0.0 ? v : 0.0;
        cur = &y;
    }

    const std::size_t C = plan.feat_dim;
    const std::size_t L = plan.blocks.empty() ? plan.stem.lout : plan.blocks.back().conv2.lout;
    c.feat.assign(B * C, 0.0);
    const auto& last = *cur;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t ch = 0; ch < C; ++ch) {
            const double* row = last.data() + (b * C + ch) * L;
            double acc = 0.0;
            for (std::size_t l = 0; l < L; ++l) acc += row[l];
            c.feat[b * C + ch] = acc / static_cast<double>(L);
        }

    const auto& W = model.tensors[plan.head_w].second.data;
    const auto& bias = model.tensors[plan.head_b].second.data;
    c.logits.assign(B * plan.classes, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < plan.classes; ++k) {
            double acc = bias[k];
            const double* wrow = W.data() + k * C;
            const double* frow = c.feat.data() + b * C;
            for (std::size_t ch = 0; ch < C; ++ch) acc += wrow[ch] * frow[ch];
            c.logits[b * plan.classes + k] = acc;
        }
}

// Backward through one chunk given d loss / d logits; accumulates parameter
// gradients and optionally produces the input gradient.
void backward_chunk(const Model& model, const Plan& plan, const ChunkCaches& c, std::size_t B,
                    const std::vector<double>& glogits, std::vector<Tensor>* grads,
                    std::vector<double>* ginput) {
    const std::size_t C = plan.feat_dim;
    const std::size_t L = plan.blocks.empty() ? plan.stem.lout : plan.blocks.back().conv2.lout;
    const auto& W = model.tensors[plan.head_w].second.data;

    std::vector<double> gfeat(B * C, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < plan.classes; ++k) {
            const double g = glogits[b * plan.classes + k];
            if (g == 0.0) continue;
            const double* wrow = W.data() + k * C;
            double* frow = gfeat.data() + b * C;
            for (std::size_t ch = 0; ch < C; ++ch) frow[ch] += g * wrow[ch];
        }
    if (grads) {
        auto& gW = (*grads)[plan.head_w].data;
        auto& gb = (*grads)[plan.head_b].data;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t k = 0; k < plan.classes; ++k) {
                const double g = glogits[b * plan.classes + k];
                gb[k] += g;
                if (g == 0.0) continue;
                double* grow = gW.data() + k * C;
                const double* frow = c.feat.data() + b * C;
                for (std::size_t ch = 0; ch < C; ++ch) grow[ch] += g * frow[ch];
            }
    }

    // GAP backward
    std::vector<double> g(B * C * L);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t ch = 0; ch < C; ++ch) {
            const double v = gfeat[b * C + ch] / static_cast<double>(L);
            double* row = g.data() + (b * C + ch) * L;
            for (std::size_t l = 0; l < L; ++l) row[l] = v;
        }

    for (std::size_t i = plan.blocks.size(); i-- > 0;) {
        const auto& bp = plan.blocks[i];
        const auto& y = c.y[i];
        const auto& r1 = c.r1[i];
        const std::vector<double>& xin = (i == 0) ? c.y0 : c.y[i - 1];

        // through the output ReLU and the residual scale
        for (std::size_t j = 0; j < g.size(); ++j)
            g[j] = y[j] > 0.0 ? g[j] * kResidualScale : 0.0;

        std::vector<double> gr1(r1.size(), 0.0);
        conv_backward_input(g.data(), B, bp.conv2,
                            model.tensors[bp.conv2.w_idx].second.data.data(), gr1.data());
        if (grads)
            conv_backward_params(g.data(), r1.data(), B, bp.conv2,
                                 (*grads)[bp.conv2.w_idx].data.data(),
                                 (*grads)[bp.conv2.b_idx].data.data());
        for (std::size_t j = 0; j < gr1.size(); ++j)
            if (r1[j] <= 0.0) gr1[j] = 0.0;

        std::vector<double> gx(xin.size(), 0.0);
        conv_backward_input(gr1.data(), B, bp.conv1,
                            model.tensors[bp.conv1.w_idx].second.data.data(), gx.data());
        if (grads)
            conv_backward_params(gr1.data(), xin.data(), B, bp.conv1,
                                 (*grads)[bp.conv1.w_idx].data.data(),
                                 (*grads)[bp.conv1.b_idx].data.data());

        if (bp.has_proj) {
            conv_backward_input(g.data(), B, bp.proj,
                                model.tensors[bp.proj.w_idx].second.data.data(), gx.data());
            if (grads)
                conv_backward_params(g.data(), xin.data(), B, bp.proj,
                                     (*grads)[bp.proj.w_idx].data.data(),
                                     (*grads)[bp.proj.b_idx].data.data());
        } else {
            for (std::size_t j = 0; j < gx.size(); ++j) gx[j] += g[j];
        }
        g = std::move(gx);
    }

    // stem ReLU
    for (std::size_t j = 0; j < g.size(); ++j)
        if (c.y0[j] <= 0.0) g[j] = 0.0;
    if (grads)
        conv_backward_params(g.data(), c.x0.data(), B, plan.stem,
                             (*grads)[plan.stem.w_idx].data.data(),
                             (*grads)[plan.stem.b_idx].data.data());
    if (ginput) {
        std::fill(ginput->begin(), ginput->end(), 0.0);
        conv_backward_input(g.data(), B, plan.stem,
                            model.tensors[plan.stem.w_idx].second.data.data(), ginput->data());
    }
}

void row_ce(const double* logits, std::size_t classes, int label, double* loss_out,
            double* grad_out) {
    double mx = logits[0];
    for (std::size_t k = 1; k < classes; ++k) mx = std::max(mx, logits[k]);
    double z = 0.0;
    for (std::size_t k = 0; k < classes; ++k) z += std::exp(logits[k] - mx);
    const double logz = std::log(z) + mx;
    *loss_out = logz - logits[static_cast<std::size_t>(label)];
    if (grad_out) {
        for (std::size_t k = 0; k < classes; ++k)
            grad_out[k] = std::exp(logits[k] - logz);
        grad_out[static_cast<std::size_t>(label)] -= 1.0;
    }
}

void row_distill(const double* s_logits, const double* t_logits, std::size_t classes, int label,
                 double temperature, double alpha, double* loss_out, double* grad_out) {
    double ce_loss = 0.0;
    std::vector<double> ce_grad(classes);
    row_ce(s_logits, classes, label, &ce_loss, ce_grad.data());
    if (alpha >= 1.0) {
        *loss_out = ce_loss;
        if (grad_out) std::copy(ce_grad.begin(), ce_grad.end(), grad_out);
        return;
    }
    auto soft = [&](const double* logits, std::vector<double>& out) {
        double mx = logits[0];
        for (std::size_t k = 1; k < classes; ++k) mx = std::max(mx, logits[k]);
        double z = 0.0;
        for (std::size_t k = 0; k < classes; ++k) {
            out[k] = std::exp((logits[k] - mx) / temperature);
            z += out[k];
        }
        for (auto& v : out) v /= z;
    };
    std::vector<double> p(classes), q(classes);
    soft(t_logits, p);
    soft(s_logits, q);
    double kl = 0.0;
    for (std::size_t k = 0; k < classes; ++k)
        if (p[k] > 0.0) kl += p[k] * (std::log(p[k]) - std::log(q[k]));
    *loss_out = alpha * ce_loss + (1.0 - alpha) * temperature * temperature * kl;
    if (grad_out) {
        for (std::size_t k = 0; k < classes; ++k)
            grad_out[k] = alpha * ce_grad[k] + (1.0 - alpha) * temperature * (q[k] - p[k]);
    }
}

void check_batch(const Model& model, const Batch& batch) {
    const std::size_t expect = model.config.input_len * model.config.in_channels;
    require(batch.cols == expect, Errc::shape_error,
            "batch row length " + std::to_string(batch.cols) + " != input_len " +
                std::to_string(expect));
    require(batch.x.size() == batch.rows * batch.cols, Errc::shape_error,
            "batch buffer size mismatch");
}

void check_labels(const std::vector<int>& labels, std::size_t rows, std::size_t classes) {
    require(labels.size() == rows, Errc::shape_error, "label count != rows");
    for (int l : labels)
        require(l >= 0 && static_cast<std::size_t>(l) < classes, Errc::invalid_label,
                "label " + std::to_string(l) + " out of range");
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    Tensor t;
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    t.shape = std::move(shape);
    t.data.assign(n, 0.0);
    return t;
}

Tensor& Model::tensor(const std::string& name) {
    for (auto& [n, t] : tensors)
        if (n == name) return t;
    fail(Errc::config_error, "no tensor named " + name);
}

const Tensor& Model::tensor(const std::string& name) const {
    return const_cast<Model*>(this)->tensor(name);
}

void validate_config(const ArchConfig& config) {
    require(config.input_len >= 1, Errc::config_error, "input_len must be >= 1");
    require(config.in_channels == 1, Errc::config_error, "only single-channel input supported");
    require(config.stem_width >= 1, Errc::config_error, "stem_width must be >= 1");
    require(!config.blocks.empty(), Errc::config_error, "at least one residual block required");
    require(config.classes >= 2, Errc::config_error, "need at least 2 classes");
    for (const auto& b : config.blocks) {
        require(b.width >= 1, Errc::config_error, "block width must be >= 1");
        require(b.stride == 1 || b.stride == 2, Errc::config_error, "stride must be 1 or 2");
    }
}

std::string arch_to_json(const ArchConfig& config) {
    nlohmann::json j;
    j["family"] = "conv";
    j["input_len"] = config.input_len;
    j["in_channels"] = config.in_channels;
    j["stem_width"] = config.stem_width;
    j["blocks"] = nlohmann::json::array();
    for (const auto& b : config.blocks) j["blocks"].push_back({b.width, b.stride});
    j["classes"] = config.classes;
    j["role"] = config.role;
    return j.dump();
}

ArchConfig arch_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::format_error, std::string("arch json: ") + e.what());
    }
    if (j.contains("family"))
        require(j["family"] == "conv", Errc::config_error,
                "checkpoint holds a '" + j["family"].get<std::string>() +
                    "' model, not a conv net");
    ArchConfig c;
    try {
        c.input_len = j.at("input_len").get<std::size_t>();
        c.in_channels = j.at("in_channels").get<std::size_t>();
        c.stem_width = j.at("stem_width").get<std::size_t>();
        for (const auto& b : j.at("blocks"))
            c.blocks.push_back({b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>()});
        c.classes = j.at("classes").get<std::size_t>();
        c.role = j.value("role", "");
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::format_error, std::string("arch json: ") + e.what());
    }
    return c;
}

Model build_model(const ArchConfig& config, std::uint64_t seed) {
    Plan plan = make_plan(config);
    Model model;
    model.config = config;
    Rng rng(mix_seed(seed, 0x4D4F4445));
    for (const auto& [name, shape] : plan.tensor_shapes) {
        Tensor t = Tensor::zeros(shape);
        const bool is_weight = name.size() >= 2 && name.substr(name.size() - 2) == ".w";
        if (is_weight) {
            // Kaiming-style fan-in scaled uniform
            std::size_t fan_in = shape.size() == 3 ? shape[1] * shape[2] : shape[1];
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (auto& v : t.data) v = rng.uniform(-bound, bound);
        }
        model.tensors.emplace_back(name, std::move(t));
    }
    return model;
}

std::vector<double> forward(const Model& model, const Batch& batch) {
    check_batch(model, batch);
    Plan plan = make_plan(model.config);
    std::vector<double> logits(batch.rows * plan.classes);
    ChunkCaches caches;
    for (std::size_t start = 0; start < batch.rows; start += kMicroBatch) {
        const std::size_t B = std::min(kMicroBatch, batch.rows - start);
        forward_chunk(model, plan, batch.x.data() + start * batch.cols, B, caches);
        std::copy(caches.logits.begin(), caches.logits.end(),
                  logits.begin() + static_cast<std::ptrdiff_t>(start * plan.classes));
    }
    return logits;
}

std::vector<double> forward_features(const Model& model, const Batch& batch) {
    check_batch(model, batch);
    Plan plan = make_plan(model.config);
    std::vector<double> feats(batch.rows * plan.feat_dim);
    ChunkCaches caches;
    for (std::size_t start = 0; start < batch.rows; start += kMicroBatch) {
        const std::size_t B = std::min(kMicroBatch, batch.rows - start);
        forward_chunk(model, plan, batch.x.data() + start * batch.cols, B, caches);
        std::copy(caches.feat.begin(), caches.feat.end(),
                  feats.begin() + static_cast<std::ptrdiff_t>(start * plan.feat_dim));
    }
    return feats;
}

std::vector<double> softmax(const std::vector<double>& logits, std::size_t rows,
                            std::size_t classes) {
    require(logits.size() == rows * classes, Errc::shape_error, "logits size mismatch");
    std::vector<double> out(logits.size());
    for (std::size_t b = 0; b < rows; ++b) {
        const double* row = logits.data() + b * classes;
        double mx = row[0];
        for (std::size_t k = 1; k < classes; ++k) mx = std::max(mx, row[k]);
        double z = 0.0;
        for (std::size_t k = 0; k < classes; ++k) z += std::exp(row[k] - mx);
        for (std::size_t k = 0; k < classes; ++k)
            out[b * classes + k] = std::exp(row[k] - mx) / z;
    }
    return out;
}

LossGrad loss_ce(const std::vector<double>& logits, std::size_t rows, std::size_t classes,
                 const std::vector<int>& labels) {
    require(logits.size() == rows * classes, Errc::shape_error, "logits size mismatch");
    require(rows > 0, Errc::empty_input, "empty batch");
    check_labels(labels, rows, classes);
    LossGrad out;
    out.grad.assign(rows * classes, 0.0);
    for (std::size_t b = 0; b < rows; ++b) {
        double loss = 0.0;
        row_ce(logits.data() + b * classes, classes, labels[b], &loss,
               out.grad.data() + b * classes);
        out.loss += loss;
    }
    out.loss /= static_cast<double>(rows);
    for (auto& g : out.grad) g /= static_cast<double>(rows);
    return out;
}

LossGrad loss_distill(const std::vector<double>& student_logits,
                      const std::vector<double>& teacher_logits, std::size_t rows,
                      std::size_t classes, const std::vector<int>& labels, double temperature,
                      double alpha) {
    require(temperature > 0.0, Errc::invalid_argument, "temperature must be > 0");
    require(alpha >= 0.0 && alpha <= 1.0, Errc::invalid_argument, "alpha must be in [0, 1]");
    require(student_logits.size() == teacher_logits.size(), Errc::shape_error,
            "student/teacher logits shape mismatch");
    require(student_logits.size() == rows * classes, Errc::shape_error, "logits size mismatch");
    require(rows > 0, Errc::empty_input, "empty batch");
    check_labels(labels, rows, classes);
    LossGrad out;
    out.grad.assign(rows * classes, 0.0);
    for (std::size_t b = 0; b < rows; ++b) {
        double loss = 0.0;
        row_distill(student_logits.data() + b * classes, teacher_logits.data() + b * classes,
                    classes, labels[b], temperature, alpha, &loss,
                    out.grad.data() + b * classes);
        out.loss += loss;
    }
    out.loss /= static_cast<double>(rows);
    for (auto& g : out.grad) g /= static_cast<double>(rows);
    return out;
}

BackpropResult backprop(const Model& model, const Batch& batch, const std::vector<int>& labels,
                        const TrainConfig& config, const std::vector<double>* teacher_logits,
                        bool want_input_grad) {
    check_batch(model, batch);
    require(batch.rows > 0, Errc::empty_input, "empty batch");
    Plan plan = make_plan(model.config);
    check_labels(labels, batch.rows, plan.classes);
    if (teacher_logits) {
        require(config.distill.has_value(), Errc::invalid_argument,
                "teacher logits given but no distillation parameters configured");
        require(teacher_logits->size() == batch.rows * plan.classes, Errc::shape_error,
                "teacher logits shape mismatch");
        require(config.distill->temperature > 0.0, Errc::invalid_argument,
                "temperature must be > 0");
    }

    BackpropResult result;
    result.grads.reserve(plan.tensor_count);
    for (const auto& [name, shape] : plan.tensor_shapes) result.grads.push_back(Tensor::zeros(shape));
    if (want_input_grad) result.input_grad.assign(batch.rows * batch.cols, 0.0);

    ChunkCaches caches;
    const double scale = 1.0 / static_cast<double>(batch.rows);
    std::vector<double> glogits;
    std::vector<double> gin_chunk;
    for (std::size_t start = 0; start < batch.rows; start += kMicroBatch) {
        const std::size_t B = std::min(kMicroBatch, batch.rows - start);
        forward_chunk(model, plan, batch.x.data() + start * batch.cols, B, caches);
        glogits.assign(B * plan.classes, 0.0);
        for (std::size_t b = 0; b < B; ++b) {
            double loss = 0.0;
            if (teacher_logits) {
                row_distill(caches.logits.data() + b * plan.classes,
                            teacher_logits->data() + (start + b) * plan.classes, plan.classes,
                            labels[start + b], config.distill->temperature,
                            config.distill->alpha, &loss, glogits.data() + b * plan.classes);
            } else {
                row_ce(caches.logits.data() + b * plan.classes, plan.classes, labels[start + b],
                       &loss, glogits.data() + b * plan.classes);
            }
            result.loss += loss * scale;
        }
        for (auto& g : glogits) g *= scale;
        if (want_input_grad) {
            gin_chunk.assign(B * batch.cols, 0.0);
            backward_chunk(model, plan, caches, B, glogits, &result.grads, &gin_chunk);
            std::copy(gin_chunk.begin(), gin_chunk.end(),
                      result.input_grad.begin() +
                          static_cast<std::ptrdiff_t>(start * batch.cols));
        } else {
            backward_chunk(model, plan, caches, B, glogits, &result.grads, nullptr);
        }
    }
    return result;
}

AdamState make_adam_state(const Model& model) {
    AdamState s;
    for (const auto& [name, t] : model.tensors) {
        s.m.push_back(Tensor::zeros(t.shape));
        s.v.push_back(Tensor::zeros(t.shape));
    }
    return s;
}

namespace {
template <class Store>
void adam_update(Store& tensors, const std::vector<Tensor>& grads, std::uint64_t step,
                 std::vector<Tensor>& m, std::vector<Tensor>& v, const TrainConfig& config) {
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        auto& w = tensors[i].second.data;
        const auto& g = grads[i].data;
        auto& mi = m[i].data;
        auto& vi = v[i].data;
        for (std::size_t j = 0; j < w.size(); ++j) {
            mi[j] = config.beta1 * mi[j] + (1.0 - config.beta1) * g[j];
            vi[j] = config.beta2 * vi[j] + (1.0 - config.beta2) * g[j] * g[j];
            const double mhat = mi[j] / bc1;
            const double vhat = vi[j] / bc2;
            w[j] -= config.lr * mhat / (std::sqrt(vhat) + config.adam_eps);
        }
    }
}
}  // namespace

double train_step(Model& model, const Batch& batch, const std::vector<int>& labels,
                  const TrainConfig& config, AdamState& state,
                  const std::vector<double>* teacher_logits) {
    require(config.lr >= 0.0, Errc::invalid_argument, "negative learning rate");
    auto result = backprop(model, batch, labels, config, teacher_logits, false);
    require(std::isfinite(result.loss), Errc::divergence_error,
            "non-finite training loss");
    state.step += 1;
    if (config.lr > 0.0) adam_update(model.tensors, result.grads, state.step, state.m, state.v, config);
    return result.loss;
}

namespace {
// batch CE loss plus a hash of every ReLU's activation sign; probes whose
// +/- epsilon evaluations disagree on the pattern straddle a kink and cannot
// be checked by central differences
double loss_with_pattern(const Model& model, const Plan& plan, const Batch& batch,
                         const std::vector<int>& labels, std::uint64_t* pattern) {
    ChunkCaches caches;
    double loss = 0.0;
    std::uint64_t hash = 1469598103934665603ULL;
    auto fold = [&hash](const std::vector<double>& v) {
        for (double x : v) {
            hash ^= x > 0.0 ? 0x9E3779B97F4A7C15ULL : 0x2545F4914F6CDD1DULL;
            hash *= 1099511628211ULL;
        }
    };
    for (std::size_t start = 0; start < batch.rows; start += kMicroBatch) {
        const std::size_t B = std::min(kMicroBatch, batch.rows - start);
        forward_chunk(model, plan, batch.x.data() + start * batch.cols, B, caches);
        for (std::size_t b = 0; b < B; ++b) {
            double row_loss = 0.0;
            row_ce(caches.logits.data() + b * plan.classes, plan.classes, labels[start + b],
                   &row_loss, nullptr);
            loss += row_loss;
        }
        if (pattern) {
            fold(caches.y0);
            for (const auto& r : caches.r1) fold(r);
            for (const auto& y : caches.y) fold(y);
        }
    }
    if (pattern) *pattern = hash;
    return loss / static_cast<double>(batch.rows);
}
}  // namespace

double grad_check(const Model& model, const Batch& batch, const std::vector<int>& labels,
                  double epsilon, std::size_t per_class, std::uint64_t seed) {
    require(epsilon >= 1e-6 && epsilon <= 1e-3, Errc::invalid_argument,
            "epsilon outside [1e-6, 1e-3]");
    Model work = model;
    Batch nudged = batch;
    // keep the check away from ReLU kinks at the input
    for (auto& v : nudged.x) {
        if (std::abs(v) < 1e-3) v = v < 0.0 ? -1e-3 : 1e-3;
    }
    TrainConfig cfg;
    auto analytic = backprop(work, nudged, labels, cfg, nullptr, false);

    // layer classes: 3d weights (conv), 2d weights (dense), biases
    struct Slot {
        std::size_t tensor, element;
    };
    std::vector<std::vector<Slot>> pools(3);
    for (std::size_t ti = 0; ti < work.tensors.size(); ++ti) {
        const auto& [name, t] = work.tensors[ti];
        std::size_t cls = name.ends_with(".b") ? 2 : (t.shape.size() == 3 ? 0 : 1);
        for (std::size_t e = 0; e < t.size(); ++e) pools[cls].push_back({ti, e});
    }

    Rng rng(mix_seed(seed, 0x47434B));
    Plan plan = make_plan(work.config);
    double max_rel = 0.0;
    for (auto& pool : pools) {
        if (pool.empty()) continue;
        rng.shuffle(pool);
        std::size_t checked = 0;
        for (std::size_t i = 0; i < pool.size() && checked < per_class; ++i) {
            auto [ti, e] = pool[i];
            double& w = work.tensors[ti].second.data[e];
            const double old = w;
            std::uint64_t pattern_plus = 0, pattern_minus = 0;
            w = old + epsilon;
            const double lp = loss_with_pattern(work, plan, nudged, labels, &pattern_plus);
            w = old - epsilon;
            const double lm = loss_with_pattern(work, plan, nudged, labels, &pattern_minus);
            w = old;
            if (pattern_plus != pattern_minus) continue;  // straddles a ReLU kink
            ++checked;
            const double numeric = (lp - lm) / (2.0 * epsilon);
            const double a = analytic.grads[ti].data[e];
            const double rel =
                std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

std::uint64_t conv_flops(std::size_t cin, std::size_t cout, std::size_t kernel,
                         std::size_t lout) {
    return 2ULL * cin * cout * kernel * lout;
}

std::uint64_t count_flops(const ArchConfig& config) {
    Plan plan = make_plan(config);
    std::uint64_t total = conv_flops(plan.stem.cin, plan.stem.cout, plan.stem.k, plan.stem.lout);
    for (const auto& bp : plan.blocks) {
        total += conv_flops(bp.conv1.cin, bp.conv1.cout, bp.conv1.k, bp.conv1.lout);
        total += conv_flops(bp.conv2.cin, bp.conv2.cout, bp.conv2.k, bp.conv2.lout);
        if (bp.has_proj) total += conv_flops(bp.proj.cin, bp.proj.cout, bp.proj.k, bp.proj.lout);
    }
    total += 2ULL * plan.feat_dim * plan.classes;
    return total;
}

std::uint64_t count_params(const ArchConfig& config) {
    Plan plan = make_plan(config);
    std::uint64_t total = 0;
    for (const auto& [name, shape] : plan.tensor_shapes) {
        std::uint64_t n = 1;
        for (auto d : shape) n *= d;
        total += n;
    }
    return total;
}

std::vector<double> input_gradient(const Model& model, const std::vector<double>& row) {
    Plan plan = make_plan(model.config);
    require(row.size() == model.config.input_len * model.config.in_channels, Errc::shape_error,
            "input row length mismatch");
    ChunkCaches caches;
    forward_chunk(model, plan, row.data(), 1, caches);
    std::size_t best = 0;
    for (std::size_t k = 1; k < plan.classes; ++k)
        if (caches.logits[k] > caches.logits[best]) best = k;
    std::vector<double> glogits(plan.classes, 0.0);
    glogits[best] = 1.0;
    std::vector<double> gin(row.size(), 0.0);
    backward_chunk(model, plan, caches, 1, glogits, nullptr, &gin);
    for (auto& v : gin) v = std::abs(v);
    return gin;
}

// ---------------------------------------------------------------------------

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file) {
    ByteWriter w;
    w.str("ITNN");
    w.u16(1);
    w.u32(static_cast<std::uint32_t>(file.header_json.size()));
    w.str(file.header_json);
    w.u32(static_cast<std::uint32_t>(file.tensors.size()));
    for (const auto& [name, t] : file.tensors) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.str(name);
        w.u8(static_cast<std::uint8_t>(t.shape.size()));
        for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
        for (double v : t.data) w.f32(static_cast<float>(v));
    }
    w.u32(crc32(w.buffer().data(), w.size()));
    write_file(path, w.buffer());
}

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
    ByteReader r(read_file(path));
    require(r.remaining() >= 4, Errc::format_error, "file too short for magic");
    require(r.str(4) == "ITNN", Errc::format_error, "bad magic, expected ITNN");
    require(r.u16() == 1, Errc::format_error, "unsupported ITNN version");
    require(r.remaining() >= 4, Errc::corrupt_file, "truncated file");
    require(crc32(r.buffer().data(), r.buffer().size() - 4) ==
                (static_cast<std::uint32_t>(r.buffer()[r.buffer().size() - 4]) |
                 (static_cast<std::uint32_t>(r.buffer()[r.buffer().size() - 3]) << 8) |
                 (static_cast<std::uint32_t>(r.buffer()[r.buffer().size() - 2]) << 16) |
                 (static_cast<std::uint32_t>(r.buffer()[r.buffer().size() - 1]) << 24)),
            Errc::corrupt_file, "CRC mismatch");
    CheckpointFile file;
    const std::uint32_t json_len = r.u32();
    file.header_json = r.str(json_len);
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = r.u16();
        std::string name = r.str(name_len);
        const std::uint8_t ndim = r.u8();
        std::vector<std::size_t> shape;
        std::size_t n = 1;
        for (std::uint8_t d = 0; d < ndim; ++d) {
            shape.push_back(r.u32());
            n *= shape.back();
        }
        Tensor t = Tensor::zeros(shape);
        for (std::size_t e = 0; e < n; ++e) t.data[e] = r.f32();
        file.tensors.emplace_back(std::move(name), std::move(t));
    }
    require(r.remaining() == 4, Errc::corrupt_file, "trailing bytes in checkpoint");
    return file;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
    CheckpointFile file;
    file.header_json = arch_to_json(model.config);
    file.tensors = model.tensors;
    write_checkpoint_file(path, file);
}

Model load_checkpoint(const std::filesystem::path& path) {
    CheckpointFile file = read_checkpoint_file(path);
    Model model;
    model.config = arch_from_json(file.header_json);
    Plan plan = make_plan(model.config);
    require(file.tensors.size() == plan.tensor_count, Errc::config_error,
            "checkpoint tensor count does not match architecture");
    for (std::size_t i = 0; i < plan.tensor_shapes.size(); ++i) {
        const auto& [name, shape] = plan.tensor_shapes[i];
        require(file.tensors[i].first == name, Errc::config_error,
                "unexpected tensor " + file.tensors[i].first + ", wanted " + name);
        require(file.tensors[i].second.shape == shape, Errc::config_error,
                "tensor " + name + " has wrong shape");
    }
    model.tensors = std::move(file.tensors);
    return model;
}

Model load_checkpoint_as(const std::filesystem::path& path, const ArchConfig& expected) {
    Model model = load_checkpoint(path);
    require(model.config == expected, Errc::config_error,
            "checkpoint architecture does not match the expected config (role '" +
                model.config.role + "' vs '" + expected.role + "')");
    return model;
}

ArchConfig teacher_arch(std::size_t input_len, std::size_t classes) {
    ArchConfig c;
    c.input_len = input_len;
    c.stem_width = 24;
    c.blocks = {{24, 1}, {48, 2}, {48, 1}, {96, 2}, {96, 1}, {192, 2}};
    c.classes = classes;
    c.role = "teacher";
    return c;
}

ArchConfig student_arch(std::size_t input_len, std::size_t classes) {
    ArchConfig c;
    c.input_len = input_len;
    c.stem_width = 12;
    c.blocks = {{12, 1}, {24, 2}, {48, 2}};
    c.classes = classes;
    c.role = "student";
    return c;
}

// ---------------------------------------------------------------------------
// MLP

namespace {
std::vector<std::pair<std::string, std::vector<std::size_t>>> mlp_shapes(const MlpConfig& cfg) {
    require(cfg.input >= 1, Errc::config_error, "mlp input must be >= 1");
    require(cfg.classes >= 2, Errc::config_error, "mlp needs at least 2 classes");
    std::vector<std::pair<std::string, std::vector<std::size_t>>> shapes;
    std::size_t in = cfg.input;
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
        require(cfg.hidden[i] >= 1, Errc::config_error, "mlp hidden width must be >= 1");
        shapes.emplace_back("fc" + std::to_string(i) + ".w",
                            std::vector<std::size_t>{cfg.hidden[i], in});
        shapes.emplace_back("fc" + std::to_string(i) + ".b",
                            std::vector<std::size_t>{cfg.hidden[i]});
        in = cfg.hidden[i];
    }
    shapes.emplace_back("head.w", std::vector<std::size_t>{cfg.classes, in});
    shapes.emplace_back("head.b", std::vector<std::size_t>{cfg.classes});
    return shapes;
}

void dense_forward(const double* in, std::size_t B, std::size_t nin, const double* w,
                   const double* bias, std::size_t nout, double* out) {
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < nout; ++o) {
            double acc = bias[o];
            const double* wrow = w + o * nin;
            const double* irow = in + b * nin;
            for (std::size_t i = 0; i < nin; ++i) acc += wrow[i] * irow[i];
            out[b * nout + o] = acc;
        }
}
}  // namespace

Mlp build_mlp(const MlpConfig& config, std::uint64_t seed) {
    Mlp mlp;
    mlp.config = config;
    Rng rng(mix_seed(seed, 0x4D4C50));
    for (const auto& [name, shape] : mlp_shapes(config)) {
        Tensor t = Tensor::zeros(shape);
        if (name.ends_with(".w")) {
            const double bound = std::sqrt(6.0 / static_cast<double>(shape[1]));
            for (auto& v : t.data) v = rng.uniform(-bound, bound);
        }
        mlp.tensors.emplace_back(name, std::move(t));
    }
    return mlp;
}

std::vector<double> mlp_forward(const Mlp& mlp, const Batch& batch) {
    require(batch.cols == mlp.config.input, Errc::shape_error, "mlp input length mismatch");
    require(batch.x.size() == batch.rows * batch.cols, Errc::shape_error,
            "batch buffer size mismatch");
    std::vector<double> cur = batch.x;
    std::size_t in = mlp.config.input;
    for (std::size_t i = 0; i < mlp.config.hidden.size(); ++i) {
        const auto& w = mlp.tensors[2 * i].second.data;
        const auto& b = mlp.tensors[2 * i + 1].second.data;
        std::vector<double> next(batch.rows * mlp.config.hidden[i]);
        dense_forward(cur.data(), batch.rows, in, w.data(), b.data(), mlp.config.hidden[i],
                      next.data());
        for (auto& v : next) v = v > 0.0 ? v : 0.0;
        cur = std::move(next);
        in = mlp.config.hidden[i];
    }
    const auto& w = mlp.tensors[mlp.tensors.size() - 2].second.data;
    const auto& b = mlp.tensors.back().second.data;
    std::vector<double> logits(batch.rows * mlp.config.classes);
    dense_forward(cur.data(), batch.rows, in, w.data(), b.data(), mlp.config.classes,
                  logits.data());
    return logits;
}

MlpBackpropResult mlp_backprop(const Mlp& mlp, const Batch& batch,
                               const std::vector<int>& labels, bool want_input_grad) {
    require(batch.cols == mlp.config.input, Errc::shape_error, "mlp input length mismatch");
    require(batch.rows > 0, Errc::empty_input, "empty batch");
    check_labels(labels, batch.rows, mlp.config.classes);

    const std::size_t B = batch.rows;
    std::vector<std::vector<double>> acts;  // post-relu activations, acts[0] = input
    acts.push_back(batch.x);
    std::size_t in = mlp.config.input;
    for (std::size_t i = 0; i < mlp.config.hidden.size(); ++i) {
        const auto& w = mlp.tensors[2 * i].second.data;
        const auto& b = mlp.tensors[2 * i + 1].second.data;
        std::vector<double> next(B * mlp.config.hidden[i]);
        dense_forward(acts.back().data(), B, in, w.data(), b.data(), mlp.config.hidden[i],
                      next.data());
        for (auto& v : next) v = v > 0.0 ? v : 0.0;
        acts.push_back(std::move(next));
        in = mlp.config.hidden[i];
    }
    const auto& hw = mlp.tensors[mlp.tensors.size() - 2].second.data;
    const auto& hb = mlp.tensors.back().second.data;
    std::vector<double> logits(B * mlp.config.classes);
    dense_forward(acts.back().data(), B, in, hw.data(), hb.data(), mlp.config.classes,
                  logits.data());

    MlpBackpropResult result;
    for (const auto& [name, t] : mlp.tensors) result.grads.push_back(Tensor::zeros(t.shape));

    std::vector<double> g(B * mlp.config.classes);
    const double scale = 1.0 / static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b) {
        double loss = 0.0;
        row_ce(logits.data() + b * mlp.config.classes, mlp.config.classes, labels[b], &loss,
               g.data() + b * mlp.config.classes);
        result.loss += loss * scale;
    }
    for (auto& v : g) v *= scale;

    // walk layers backwards; head first, then hidden
    std::size_t layer = mlp.config.hidden.size();
    std::size_t nout = mlp.config.classes;
    while (true) {
        const std::size_t wi = 2 * layer;
        const auto& w = mlp.tensors[wi].second.data;
        const std::size_t nin = mlp.tensors[wi].second.shape[1];
        const auto& input = acts[layer];
        auto& gw = result.grads[wi].data;
        auto& gb = result.grads[wi + 1].data;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < nout; ++o) {
                const double gv = g[b * nout + o];
                gb[o] += gv;
                if (gv == 0.0) continue;
                double* grow = gw.data() + o * nin;
                const double* irow = input.data() + b * nin;
                for (std::size_t i = 0; i < nin; ++i) grow[i] += gv * irow[i];
            }
        if (layer == 0 && !want_input_grad) break;
        std::vector<double> gin(B * nin, 0.0);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < nout; ++o) {
                const double gv = g[b * nout + o];
                if (gv == 0.0) continue;
                const double* wrow = w.data() + o * nin;
                double* girow = gin.data() + b * nin;
                for (std::size_t i = 0; i < nin; ++i) girow[i] += gv * wrow[i];
            }
        if (layer == 0) {
            result.input_grad = std::move(gin);
            break;
        }
        // through the ReLU of the previous hidden layer
        const auto& act = acts[layer];
        for (std::size_t j = 0; j < gin.size(); ++j)
            if (act[j] <= 0.0) gin[j] = 0.0;
        g = std::move(gin);
        nout = nin;
        --layer;
    }
    return result;
}

MlpAdamState make_adam_state(const Mlp& mlp) {
    MlpAdamState s;
    for (const auto& [name, t] : mlp.tensors) {
        s.m.push_back(Tensor::zeros(t.shape));
        s.v.push_back(Tensor::zeros(t.shape));
    }
    return s;
}

double mlp_train_step(Mlp& mlp, const Batch& batch, const std::vector<int>& labels,
                      const TrainConfig& config, MlpAdamState& state) {
    auto result = mlp_backprop(mlp, batch, labels, false);
    require(std::isfinite(result.loss), Errc::divergence_error, "non-finite training loss");
    state.step += 1;
    if (config.lr > 0.0)
        adam_update(mlp.tensors, result.grads, state.step, state.m, state.v, config);
    return result.loss;
}

std::vector<double> mlp_input_gradient(const Mlp& mlp, const std::vector<double>& row) {
    Batch b;
    b.rows = 1;
    b.cols = row.size();
    b.x = row;
    auto logits = mlp_forward(mlp, b);
    std::size_t best = 0;
    for (std::size_t k = 1; k < mlp.config.classes; ++k)
        if (logits[k] > logits[best]) best = k;
    // backprop of the single selected logit: reuse mlp_backprop pieces inline
    const std::size_t B = 1;
    std::vector<std::vector<double>> acts;
    acts.push_back(b.x);
    std::size_t in = mlp.config.input;
    for (std::size_t i = 0; i < mlp.config.hidden.size(); ++i) {
        const auto& w = mlp.tensors[2 * i].second.data;
        const auto& bias = mlp.tensors[2 * i + 1].second.data;
        std::vector<double> next(B * mlp.config.hidden[i]);
        dense_forward(acts.back().data(), B, in, w.data(), bias.data(), mlp.config.hidden[i],
                      next.data());
        for (auto& v : next) v = v > 0.0 ? v : 0.0;
        acts.push_back(std::move(next));
        in = mlp.config.hidden[i];
    }
    std::vector<double> g(mlp.config.classes, 0.0);
    g[best] = 1.0;
    std::size_t layer = mlp.config.hidden.size();
    std::size_t nout = mlp.config.classes;
    while (true) {
        const std::size_t wi = 2 * layer;
        const auto& w = mlp.tensors[wi].second.data;
        const std::size_t nin = mlp.tensors[wi].second.shape[1];
        std::vector<double> gin(nin, 0.0);
        for (std::size_t o = 0; o < nout; ++o) {
            const double gv = g[o];
            if (gv == 0.0) continue;
            const double* wrow = w.data() + o * nin;
            for (std::size_t i = 0; i < nin; ++i) gin[i] += gv * wrow[i];
        }
        if (layer == 0) {
            for (auto& v : gin) v = std::abs(v);
            return gin;
        }
        const auto& act = acts[layer];
        for (std::size_t j = 0; j < gin.size(); ++j)
            if (act[j] <= 0.0) gin[j] = 0.0;
        g = std::move(gin);
        nout = nin;
        --layer;
    }
}

std::string mlp_to_json(const MlpConfig& config) {
    nlohmann::json j;
    j["family"] = "mlp";
    j["input"] = config.input;
    j["hidden"] = config.hidden;
    j["classes"] = config.classes;
    return j.dump();
}

MlpConfig mlp_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::format_error, std::string("mlp json: ") + e.what());
    }
    require(j.value("family", "mlp") == "mlp", Errc::config_error, "not an mlp checkpoint");
    MlpConfig c;
    c.input = j.at("input").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.classes = j.at("classes").get<std::size_t>();
    return c;
}

}  // namespace ithroat::tinynet

#pragma once

// Test-side reference implementations, kept independent of the library code
// they check.

#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace oracles {

// O(n^2) DFT
inline std::vector<std::complex<double>> direct_dft(const std::vector<double>& x,
                                                    std::size_t nfft) {
    std::vector<std::complex<double>> out(nfft, {0.0, 0.0});
    for (std::size_t k = 0; k < nfft; ++k) {
        std::complex<double> acc{0.0, 0.0};
        for (std::size_t t = 0; t < x.size(); ++t) {
            const double ang = -2.0 * M_PI * double(k) * double(t) / double(nfft);
            acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    return out;
}

// energy of the DFT magnitude spectrum inside [lo_hz, hi_hz]
inline double band_energy(const std::vector<double>& x, double rate, double lo_hz,
                          double hi_hz) {
    std::size_t nfft = 1;
    while (nfft < x.size()) nfft <<= 1;
    auto bins = direct_dft(x, nfft);
    double total = 0.0;
    for (std::size_t k = 0; k <= nfft / 2; ++k) {
        const double f = double(k) * rate / double(nfft);
        if (f >= lo_hz && f <= hi_hz) total += std::norm(bins[k]);
    }
    return total;
}

// full-matrix word-level edit distance
inline std::size_t edit_distance(const std::vector<std::string>& a,
                                 const std::vector<std::string>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1));
    for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
    for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            d[i][j] = std::min({sub, d[i - 1][j] + 1, d[i][j - 1] + 1});
        }
    return d[n][m];
}

// per-sample overlap count: label of token i by the majority-overlap rule
inline std::vector<int> overlap_labels(std::size_t token_count, std::size_t token_len,
                                       const std::vector<std::int64_t>& word_begin,
                                       const std::vector<std::int64_t>& word_end,
                                       const std::vector<int>& word_id) {
    std::vector<int> labels(token_count, 0);
    for (std::size_t i = 0; i < token_count; ++i) {
        const std::int64_t t0 = std::int64_t(i * token_len);
        for (std::size_t w = 0; w < word_id.size(); ++w) {
            std::size_t covered = 0;
            for (std::int64_t s = t0; s < t0 + std::int64_t(token_len); ++s)
                if (s >= word_begin[w] && s < word_end[w]) ++covered;
            if (2 * covered > token_len) {
                labels[i] = word_id[w];
                break;
            }
        }
    }
    return labels;
}

// largest autocorrelation lag near the expected period
inline std::size_t autocorr_peak_lag(const std::vector<double>& x, std::size_t lag_lo,
                                     std::size_t lag_hi) {
    double best = -1e300;
    std::size_t best_lag = lag_lo;
    for (std::size_t lag = lag_lo; lag <= lag_hi && lag < x.size(); ++lag) {
        double acc = 0.0;
        for (std::size_t i = 0; i + lag < x.size(); ++i) acc += x[i] * x[i + lag];
        if (acc > best) {
            best = acc;
            best_lag = lag;
        }
    }
    return best_lag;
}

// naive 1D convolution with zero padding, any kernel/stride
inline void naive_conv(const std::vector<double>& in, std::size_t B, std::size_t cin,
                       std::size_t lin, const std::vector<double>& w,
                       const std::vector<double>& bias, std::size_t cout, std::size_t k,
                       std::size_t stride, std::size_t pad, std::vector<double>& out,
                       std::size_t lout) {
    out.assign(B * cout * lout, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t l = 0; l < lout; ++l) {
                double acc = bias[co];
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t t = 0; t < k; ++t) {
                        const std::int64_t src =
                            std::int64_t(l * stride) + std::int64_t(t) - std::int64_t(pad);
                        if (src < 0 || src >= std::int64_t(lin)) continue;
                        acc += w[(co * cin + ci) * k + t] *
                               in[(b * cin + ci) * lin + std::size_t(src)];
                    }
                out[(b * cout + co) * lout + l] = acc;
            }
}

}  // namespace oracles

#pragma once

#include <cmath>
#include <span>
#include <string>

#include "offsetlab/scene.hpp"
#include "offsetlab/tensor.hpp"
#include "offsetlab/trace.hpp"

namespace offsetlab {

inline constexpr double kPsnrCap = 99.0;  // stands in for +inf at zero error

namespace detail {

inline double mse_span(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("ShapeMismatch", "mse on different sizes");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

}  // namespace detail

inline double mse(const Tensor3& a, const Tensor3& b) {
    if (!a.same_shape(b)) throw Error("ShapeMismatch", "mse tensor shapes differ");
    return detail::mse_span(a.data, b.data);
}

inline double mse(const ImageGrid& a, const ImageGrid& b) {
    if (a.height != b.height || a.width != b.width) {
        throw Error("ShapeMismatch", "mse image shapes differ");
    }
    return detail::mse_span(a.pixels, b.pixels);
}

inline double psnr_from_mse(double mse_value, double peak) {
    if (mse_value == 0.0) return kPsnrCap;
    return 10.0 * std::log10(peak * peak / mse_value);
}

inline double psnr(const Tensor3& a, const Tensor3& b, double peak) {
    return psnr_from_mse(mse(a, b), peak);
}

inline double psnr(const ImageGrid& a, const ImageGrid& b, double peak) {
    return psnr_from_mse(mse(a, b), peak);
}

// Structural similarity over non-overlapping 8x8 windows, no gaussian
// weighting, averaged across windows. C1 = (0.01*peak)^2, C2 = (0.03*peak)^2.
inline double ssim(const ImageGrid& a, const ImageGrid& b, double peak) {
    if (a.height != b.height || a.width != b.width) {
        throw Error("ShapeMismatch", "ssim image shapes differ");
    }
    constexpr int kWin = 8;
    if (a.height < kWin || a.width < kWin) {
        throw Error("ImageTooSmall", "ssim needs at least " + std::to_string(kWin) + "x" +
                                         std::to_string(kWin));
    }
    double c1 = (0.01 * peak) * (0.01 * peak);
    double c2 = (0.03 * peak) * (0.03 * peak);
    int wy = a.height / kWin;
    int wx = a.width / kWin;
    double acc = 0.0;
    for (int by = 0; by < wy; ++by) {
        for (int bx = 0; bx < wx; ++bx) {
            double ma = 0.0, mb = 0.0;
            for (int r = 0; r < kWin; ++r) {
                for (int c = 0; c < kWin; ++c) {
                    ma += a.at(by * kWin + r, bx * kWin + c);
                    mb += b.at(by * kWin + r, bx * kWin + c);
                }
            }
            constexpr double n = kWin * kWin;
            ma /= n;
            mb /= n;
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (int r = 0; r < kWin; ++r) {
                for (int c = 0; c < kWin; ++c) {
                    double da = a.at(by * kWin + r, bx * kWin + c) - ma;
                    double db = b.at(by * kWin + r, bx * kWin + c) - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            va /= n;
            vb /= n;
            cov /= n;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    return acc / (static_cast<double>(wy) * static_cast<double>(wx));
}

// Block-evaluation accounting. mean_weight is the average correction weight
// over cache-eligible records; predicted_fraction reports the 1 - mean
// weight the complexity claim implies, next to the measured fraction, so the
// two can be compared directly.
struct CostSummary {
    long total_block_evals = 0;
    long max_possible = 0;
    double mean_weight = 0.0;
    double eval_fraction = 0.0;
    double predicted_fraction = 0.0;
    long eligible_records = 0;

    bool operator==(const CostSummary&) const = default;
};

inline CostSummary cost_summary(const RunTrace& trace) {
    if (trace.records.empty()) throw Error("BadConfig", "cost_summary on empty trace");
    CostSummary cs;
    double weight_sum = 0.0;
    for (const TraceRecord& r : trace.records) {
        cs.total_block_evals += r.block_evals;
        if (r.eligible) {
            weight_sum += r.weight;
            cs.eligible_records += 1;
        }
    }
    cs.max_possible = static_cast<long>(trace.records.size());
    cs.mean_weight = cs.eligible_records > 0
                         ? weight_sum / static_cast<double>(cs.eligible_records)
                         : 1.0;
    cs.eval_fraction =
        static_cast<double>(cs.total_block_evals) / static_cast<double>(cs.max_possible);
    cs.predicted_fraction = 1.0 - cs.mean_weight;
    return cs;
}

}  // namespace offsetlab

#pragma once
//
// Kullback-Leibler and Jensen-Shannon divergences (bits), JSD maps over
// slices of a likelihood grid, the local-curvature fit that recovers the
// CFIM, and the effective-range diagnostic along the acceleration axis.
//

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "olsense/bayes.hpp"
#include "olsense/errors.hpp"

namespace olsense {

/// -sum P log2(Q/P); +inf when Q vanishes where P does not.
inline double kl(const std::vector<double>& P, const std::vector<double>& Q) {
    if (P.size() != Q.size()) throw DomainError("kl: distributions differ in size");
    double s = 0;
    for (std::size_t n = 0; n < P.size(); ++n) {
        if (P[n] <= 0) continue;
        if (Q[n] <= 0) return std::numeric_limits<double>::infinity();
        s += P[n] * std::log2(P[n] / Q[n]);
    }
    return std::max(0.0, s);
}

namespace detail {
inline double jsd_raw(const double* P, const double* Q, int n) {
    double s = 0;
    for (int k = 0; k < n; ++k) {
        const double m = 0.5 * (P[k] + Q[k]);
        const double tp = P[k] > 0 ? P[k] * std::log2(P[k] / m) : 0.0;
        const double tq = Q[k] > 0 ? Q[k] * std::log2(Q[k] / m) : 0.0;
        s += tp + tq;  // commutative, so swapping P and Q is bit-exact
    }
    return std::clamp(0.5 * s, 0.0, 1.0);
}
}  // namespace detail

inline double jsd(const std::vector<double>& P, const std::vector<double>& Q) {
    if (P.size() != Q.size()) throw DomainError("jsd: distributions differ in size");
    return detail::jsd_raw(P.data(), Q.data(), static_cast<int>(P.size()));
}

enum class SliceKind {
    AccelPair,  // D(P(a, V) || P(a', V)) at fixed V
    DepthPair,  // D(P(a, V) || P(a, V')) at fixed a
    AccelDepth  // D(P(a, V) || P(a_ref, V_ref))
};

inline const char* slice_name(SliceKind k) {
    switch (k) {
        case SliceKind::AccelPair: return "a,a'";
        case SliceKind::DepthPair: return "V_L,V_L'";
        case SliceKind::AccelDepth: return "a,V_L";
    }
    return "?";
}

struct SliceSpec {
    SliceKind kind = SliceKind::AccelDepth;
    EstimationPoint fixed;  // fixed V (AccelPair), fixed a (DepthPair) or the reference (AccelDepth)
};

struct JsdMap {
    SliceSpec spec;
    Axis x_axis;
    Axis y_axis;
    std::vector<double> values;  // bits, row-major over (x, y)

    double at(int i, int j) const {
        return values[static_cast<std::size_t>(i) * static_cast<std::size_t>(y_axis.n) + static_cast<std::size_t>(j)];
    }
};

inline JsdMap jsd_map(const LikelihoodGrid& grid, const SliceSpec& spec) {
    JsdMap m{spec, {}, {}, {}};
    const int K = grid.n_outcomes;
    auto need = [](std::optional<int> v, const char* what) {
        if (!v) throw DomainError(std::string("jsd_map: slice outside grid (") + what + ")");
        return *v;
    };
    switch (spec.kind) {
        case SliceKind::AccelPair: {
            const int j = need(grid.V_axis.index_of(spec.fixed.V_L), "V_L");
            m.x_axis = m.y_axis = grid.a_axis;
            for (int i = 0; i < grid.a_axis.n; ++i)
                for (int k = 0; k < grid.a_axis.n; ++k)
                    m.values.push_back(detail::jsd_raw(grid.row(i, j), grid.row(k, j), K));
            break;
        }
        case SliceKind::DepthPair: {
            const int i = need(grid.a_axis.index_of(spec.fixed.a), "a");
            m.x_axis = m.y_axis = grid.V_axis;
            for (int j = 0; j < grid.V_axis.n; ++j)
                for (int k = 0; k < grid.V_axis.n; ++k)
                    m.values.push_back(detail::jsd_raw(grid.row(i, j), grid.row(i, k), K));
            break;
        }
        case SliceKind::AccelDepth: {
            const int i0 = need(grid.a_axis.index_of(spec.fixed.a), "a");
            const int j0 = need(grid.V_axis.index_of(spec.fixed.V_L), "V_L");
            m.x_axis = grid.a_axis;
            m.y_axis = grid.V_axis;
            for (int i = 0; i < grid.a_axis.n; ++i)
                for (int j = 0; j < grid.V_axis.n; ++j)
                    m.values.push_back(detail::jsd_raw(grid.row(i, j), grid.row(i0, j0), K));
            break;
        }
    }
    return m;
}

inline void write_jsd_csv(std::ostream& out, const JsdMap& m, const std::string& manifest_hash,
                          const std::string& protocol_hash) {
    out << "# manifest " << manifest_hash << "\n";
    out << "# slice " << slice_name(m.spec.kind) << " fixed_a=" << exact_decimal(m.spec.fixed.a)
        << " fixed_V_L=" << exact_decimal(m.spec.fixed.V_L) << " protocol " << protocol_hash << "\n";
    out << "x,y,jsd_bits\n";
    for (int i = 0; i < m.x_axis.n; ++i)
        for (int j = 0; j < m.y_axis.n; ++j)
            out << exact_decimal(m.x_axis.value(i)) << "," << exact_decimal(m.y_axis.value(j)) << ","
                << exact_decimal(m.at(i, j)) << "\n";
}

/// D(db) ~ c + g.db + db^T Q db fitted by least squares.
struct CurvatureFit {
    Eigen::Matrix2d cfim_estimate = Eigen::Matrix2d::Zero();  // 8 Q ln 2: comparable to the CFIM
    Eigen::Vector2d gradient = Eigen::Vector2d::Zero();       // bits per unit parameter
    double constant = 0;                                      // bits
    double residual = 0;                                      // rms misfit, bits
};

/// Quadratic fit to a 5x5 block of samples D(i, j) at offsets ((i-2) h_a, (j-2) h_V).
inline CurvatureFit fit_quadratic_5x5(const Eigen::Matrix<double, 5, 5>& D, double h_a, double h_V) {
    // Work in stencil units so the normal equations are well conditioned.
    Eigen::Matrix<double, 25, 6> A;
    Eigen::Matrix<double, 25, 1> y;
    int r = 0;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j, ++r) {
            const double x = i - 2, v = j - 2;
            A.row(r) << 1, x, v, x * x, 2 * x * v, v * v;
            y(r) = D(i, j);
        }
    const Eigen::Matrix<double, 6, 1> c = A.colPivHouseholderQr().solve(y);
    CurvatureFit f;
    f.constant = c(0);
    f.gradient << c(1) / h_a, c(2) / h_V;
    Eigen::Matrix2d Q;
    Q << c(3) / (h_a * h_a), c(4) / (h_a * h_V), c(4) / (h_a * h_V), c(5) / (h_V * h_V);
    f.cfim_estimate = 8.0 * std::numbers::ln2 * Q;
    f.residual = std::sqrt((A * c - y).squaredNorm() / 25.0);
    return f;
}

/// Fits the JSD against the reference over its 5x5 grid neighbourhood.
inline CurvatureFit curvature_check(const LikelihoodGrid& grid, const EstimationPoint& reference) {
    const auto i0 = grid.a_axis.index_of(reference.a);
    const auto j0 = grid.V_axis.index_of(reference.V_L);
    if (!i0 || !j0) throw DomainError("curvature_check: reference is not a grid point");
    if (*i0 < 2 || *j0 < 2 || *i0 > grid.a_axis.n - 3 || *j0 > grid.V_axis.n - 3)
        throw DomainError("curvature_check: reference too close to the grid boundary");
    Eigen::Matrix<double, 5, 5> D;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            D(i, j) = detail::jsd_raw(grid.row(*i0 + i - 2, *j0 + j - 2), grid.row(*i0, *j0), grid.n_outcomes);
    return fit_quadratic_5x5(D, grid.a_axis.step(), grid.V_axis.step());
}

struct EffectiveRangeOptions {
    double fraction = 0.5;  // envelope threshold relative to the reference value
    double window = 0.0;    // running-max width in g; 0 means a quarter of the wrap constant
};

struct EffectiveRange {
    std::vector<double> a;         // midpoints between adjacent grid points
    std::vector<double> local_info;  // 8 ln2 D(a_i, a_{i+1}) / da^2, 1/g^2
    std::vector<double> envelope;
    std::optional<double> lower;   // first a below the reference where the envelope drops under threshold
    std::optional<double> upper;
    double wrap_constant = 0;      // a0 in g
};

/// Local acceleration information along the a axis at fixed V_L, and where it fades.
inline EffectiveRange effective_range(const std::vector<std::vector<double>>& slice, const Axis& a_axis,
                                      double a_ref, double wrap_constant, const EffectiveRangeOptions& opt = {}) {
    if (a_axis.n < 3 || static_cast<int>(slice.size()) != a_axis.n)
        throw DomainError("effective_range: need at least three points along the axis");
    EffectiveRange r;
    r.wrap_constant = wrap_constant;
    const double h = a_axis.step();
    for (int i = 0; i + 1 < a_axis.n; ++i) {
        r.a.push_back(a_axis.value(i) + 0.5 * h);
        r.local_info.push_back(8.0 * std::numbers::ln2 * jsd(slice[static_cast<std::size_t>(i)],
                                                             slice[static_cast<std::size_t>(i) + 1]) / (h * h));
    }
    const double window = opt.window > 0 ? opt.window : 0.25 * wrap_constant;
    const int half = std::max(0, static_cast<int>(std::floor(0.5 * window / h)));
    const int m = static_cast<int>(r.a.size());
    for (int i = 0; i < m; ++i) {
        double best = 0;
        for (int k = std::max(0, i - half); k <= std::min(m - 1, i + half); ++k)
            best = std::max(best, r.local_info[static_cast<std::size_t>(k)]);
        r.envelope.push_back(best);
    }
    int iref = 0;
    for (int i = 1; i < m; ++i)
        if (std::abs(r.a[static_cast<std::size_t>(i)] - a_ref) < std::abs(r.a[static_cast<std::size_t>(iref)] - a_ref))
            iref = i;
    const double threshold = opt.fraction * r.envelope[static_cast<std::size_t>(iref)];
    for (int i = iref; i < m; ++i)
        if (r.envelope[static_cast<std::size_t>(i)] < threshold) {
            r.upper = r.a[static_cast<std::size_t>(i)];
            break;
        }
    for (int i = iref; i >= 0; --i)
        if (r.envelope[static_cast<std::size_t>(i)] < threshold) {
            r.lower = r.a[static_cast<std::size_t>(i)];
            break;
        }
    return r;
}

inline EffectiveRange effective_range(const LikelihoodGrid& grid, const EstimationPoint& reference,
                                      double wrap_constant, const EffectiveRangeOptions& opt = {}) {
    const auto j = grid.V_axis.index_of(reference.V_L);
    if (!j) throw DomainError("effective_range: reference depth is not on the grid");
    std::vector<std::vector<double>> slice;
    for (int i = 0; i < grid.a_axis.n; ++i) slice.push_back(grid.distribution(i, *j));
    return effective_range(slice, grid.a_axis, reference.a, wrap_constant, opt);
}

}  // namespace olsense

#pragma once
//
// Grid Bayesian inference over (a, V_L): tabulated likelihoods, simulated
// measurement records, log-space posterior updates, MLE and moments.
//
// Axes are in recoil units (a in g, V_L in E_R).  The likelihood table is
// laid out row-major as [i_a][j_V][outcome].
//

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "olsense/dynamics.hpp"
#include "olsense/errors.hpp"
#include "olsense/hashing.hpp"
#include "olsense/protocol_io.hpp"

namespace olsense {

class DegeneratePosterior : public EstimationError {
public:
    using EstimationError::EstimationError;
};

/// Uniform axis lo, lo + step, ..., hi with n points.
struct Axis {
    double lo = 0;
    double hi = 0;
    int n = 1;

    double step() const { return n > 1 ? (hi - lo) / (n - 1) : 0.0; }
    double value(int i) const { return n > 1 ? lo + (hi - lo) * i / (n - 1) : lo; }

    /// Index of the grid point at x, if x lies on the grid.
    std::optional<int> index_of(double x) const {
        if (n == 1) return std::abs(x - lo) <= 1e-12 * std::max(1.0, std::abs(lo)) ? std::optional<int>(0) : std::nullopt;
        const double f = (x - lo) / step();
        const long k = std::lround(f);
        if (k < 0 || k >= n || std::abs(f - static_cast<double>(k)) > 1e-6) return std::nullopt;
        return static_cast<int>(k);
    }

    friend bool operator==(const Axis&, const Axis&) = default;
};

inline Axis uniform_axis(double lo, double hi, int n) {
    if (n < 1) throw DomainError("axis: need at least one point");
    if (!std::isfinite(lo) || !std::isfinite(hi) || (n > 1 && !(hi > lo)))
        throw DomainError("axis: require finite lo < hi");
    if (n == 1 && hi != lo) throw DomainError("axis: a single-point axis needs lo == hi");
    return Axis{lo, hi, n};
}

/// Axis of n points centred on c with spacing h.
inline Axis centred_axis(double c, double h, int n) {
    if (n < 1 || n % 2 == 0) throw DomainError("centred_axis: n must be odd");
    const int half = n / 2;
    return n == 1 ? Axis{c, c, 1} : uniform_axis(c - half * h, c + half * h, n);
}

struct LikelihoodGrid {
    Axis a_axis;
    Axis V_axis;
    int n_outcomes = 0;
    std::vector<double> table;
    std::string key;            // content hash of (protocol, axes, solver config)
    std::string protocol_hash;

    std::size_t offset(int i, int j) const {
        return (static_cast<std::size_t>(i) * static_cast<std::size_t>(V_axis.n) + static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(n_outcomes);
    }
    const double* row(int i, int j) const { return table.data() + offset(i, j); }
    std::vector<double> distribution(int i, int j) const { return {row(i, j), row(i, j) + n_outcomes}; }
    EstimationPoint point(int i, int j) const { return {a_axis.value(i), V_axis.value(j)}; }
};

struct GridBuildOptions {
    int workers = 0;               // 0: OLSENSE_WORKERS, else hardware concurrency
    std::string cache_dir;         // empty: OLSENSE_CACHE_DIR, else no caching
    bool use_cache = true;
};

inline int resolve_workers(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("OLSENSE_WORKERS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

inline std::string resolve_cache_dir(const std::string& requested) {
    if (!requested.empty()) return requested;
    if (const char* env = std::getenv("OLSENSE_CACHE_DIR")) return env;
    return {};
}

/// Everything a grid depends on, as canonical JSON.
inline std::string grid_fingerprint(const ControlProtocol& protocol, const Axis& a, const Axis& V,
                                    const SimulationConfig& cfg) {
    nlohmann::ordered_json j;
    j["protocol"] = protocol_hash(make_protocol_file(protocol, cfg));
    j["a_axis"] = {exact_decimal(a.lo), exact_decimal(a.hi), a.n};
    j["V_axis"] = {exact_decimal(V.lo), exact_decimal(V.hi), V.n};
    j["mass"] = exact_decimal(cfg.scales.mass);
    j["wavelength"] = exact_decimal(cfg.scales.wavelength_L);
    j["g"] = exact_decimal(cfg.scales.g);
    j["prep_V_L"] = cfg.prep_V_L ? exact_decimal(*cfg.prep_V_L) : std::string("point");
    j["norm_tolerance"] = exact_decimal(cfg.norm_tolerance);
    j["boundary_abort"] = exact_decimal(cfg.boundary_abort);
    return j.dump();
}

namespace detail {

inline void write_grid_cache(const std::string& path, const LikelihoodGrid& g) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) return;
        out << "# olsense likelihood grid v1\n";
        out << "# key " << g.key << "\n";
        out << "# protocol " << g.protocol_hash << "\n";
        out << "# a_axis " << exact_decimal(g.a_axis.lo) << " " << exact_decimal(g.a_axis.hi) << " " << g.a_axis.n << "\n";
        out << "# V_axis " << exact_decimal(g.V_axis.lo) << " " << exact_decimal(g.V_axis.hi) << " " << g.V_axis.n << "\n";
        out << "# outcomes " << g.n_outcomes << "\n";
        for (int i = 0; i < g.a_axis.n; ++i)
            for (int j = 0; j < g.V_axis.n; ++j) {
                const double* r = g.row(i, j);
                for (int k = 0; k < g.n_outcomes; ++k) out << (k ? "," : "") << exact_decimal(r[k]);
                out << "\n";
            }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
}

inline std::optional<LikelihoodGrid> read_grid_cache(const std::string& path, const std::string& key) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    LikelihoodGrid g;
    std::string line, tag;
    auto header = [&](const char* name) -> std::istringstream {
        if (!std::getline(in, line) || line.rfind(std::string("# ") + name, 0) != 0) return std::istringstream{};
        return std::istringstream(line.substr(3 + std::string(name).size()));
    };
    if (!std::getline(in, line) || line != "# olsense likelihood grid v1") return std::nullopt;
    auto k = header("key");
    k >> g.key;
    if (g.key != key) return std::nullopt;
    auto p = header("protocol");
    p >> g.protocol_hash;
    std::string lo, hi;
    auto a = header("a_axis");
    a >> lo >> hi >> g.a_axis.n;
    if (!parse_decimal(lo, g.a_axis.lo) || !parse_decimal(hi, g.a_axis.hi)) return std::nullopt;
    auto v = header("V_axis");
    v >> lo >> hi >> g.V_axis.n;
    if (!parse_decimal(lo, g.V_axis.lo) || !parse_decimal(hi, g.V_axis.hi)) return std::nullopt;
    auto o = header("outcomes");
    o >> g.n_outcomes;
    const std::size_t rows = static_cast<std::size_t>(g.a_axis.n) * static_cast<std::size_t>(g.V_axis.n);
    if (g.n_outcomes <= 0 || rows == 0) return std::nullopt;
    g.table.reserve(rows * static_cast<std::size_t>(g.n_outcomes));
    while (std::getline(in, line)) {
        std::size_t start = 0;
        while (start <= line.size()) {
            const std::size_t end = std::min(line.find(',', start), line.size());
            double x;
            if (!parse_decimal(std::string_view(line).substr(start, end - start), x)) return std::nullopt;
            g.table.push_back(x);
            start = end + 1;
        }
    }
    if (g.table.size() != rows * static_cast<std::size_t>(g.n_outcomes)) return std::nullopt;
    return g;
}

}  // namespace detail

/// One propagation per grid point, parallel over points; rows are renormalized.
inline LikelihoodGrid build_likelihood_grid(const ControlProtocol& protocol, const Axis& a_axis, const Axis& V_axis,
                                            const SimulationConfig& cfg, const GridBuildOptions& opts = {}) {
    if (a_axis.n < 1 || V_axis.n < 1) throw DomainError("build_likelihood_grid: empty axis");
    const std::string key = content_hash(grid_fingerprint(protocol, a_axis, V_axis, cfg));
    const std::string cache_dir = opts.use_cache ? resolve_cache_dir(opts.cache_dir) : std::string();
    std::string cache_path;
    if (!cache_dir.empty()) {
        std::filesystem::create_directories(cache_dir);
        cache_path = (std::filesystem::path(cache_dir) / ("grid-" + key + ".csv")).string();
        if (auto cached = detail::read_grid_cache(cache_path, key)) return *cached;
    }

    LikelihoodGrid g;
    g.a_axis = a_axis;
    g.V_axis = V_axis;
    g.n_outcomes = static_cast<int>(2 * cfg.n_max + 1);
    g.key = key;
    g.protocol_hash = protocol_hash(make_protocol_file(protocol, cfg));
    const int total = a_axis.n * V_axis.n;
    g.table.assign(static_cast<std::size_t>(total) * static_cast<std::size_t>(g.n_outcomes), 0.0);

    // Failures are kept per point so the reported one does not depend on thread timing.
    std::vector<std::string> errors(static_cast<std::size_t>(total));
    std::atomic<int> next{0};
    auto work = [&] {
        for (int idx = next++; idx < total; idx = next++) {
            const int i = idx / V_axis.n;
            const int j = idx % V_axis.n;
            try {
                const auto P = ensemble_distribution(g.point(i, j), protocol, cfg);
                double sum = 0;
                for (double p : P) sum += p;
                double* dst = g.table.data() + g.offset(i, j);
                for (std::size_t k = 0; k < P.size(); ++k) dst[k] = P[k] / sum;
            } catch (const std::exception& e) {
                std::ostringstream w;
                w << "grid point (" << i << ", " << j << ") a=" << g.a_axis.value(i) << " g, V_L=" << g.V_axis.value(j)
                  << " E_R: " << e.what();
                errors[static_cast<std::size_t>(idx)] = w.str();
            }
        }
    };
    const int n_workers = std::min(resolve_workers(opts.workers), total);
    if (n_workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors)
        if (!e.empty()) throw IntegrationError(e);

    if (!cache_path.empty()) detail::write_grid_cache(cache_path, g);
    return g;
}

struct MeasurementRecord {
    std::vector<int> outcomes;  // comb storage indices
    EstimationPoint truth;
    std::uint64_t seed = 0;
};

inline std::pair<int, int> grid_index(const LikelihoodGrid& grid, const EstimationPoint& b) {
    const auto i = grid.a_axis.index_of(b.a);
    const auto j = grid.V_axis.index_of(b.V_L);
    if (!i || !j) throw DomainError("truth point is not on the likelihood grid");
    return {*i, *j};
}

/// N independent draws from P(. | truth); identical for identical seeds.
inline MeasurementRecord sample_record(const LikelihoodGrid& grid, const EstimationPoint& truth, int N,
                                       std::uint64_t seed) {
    if (N < 0) throw DomainError("sample_record: N must be non-negative");
    const auto [i, j] = grid_index(grid, truth);
    const double* p = grid.row(i, j);
    std::discrete_distribution<int> dist(p, p + grid.n_outcomes);
    std::mt19937_64 rng(seed);
    MeasurementRecord r{{}, grid.point(i, j), seed};
    r.outcomes.reserve(static_cast<std::size_t>(N));
    for (int n = 0; n < N; ++n) r.outcomes.push_back(dist(rng));
    return r;
}

struct PosteriorGrid {
    Axis a_axis;
    Axis V_axis;
    std::vector<double> log_density;  // normalized: sum of exp = 1

    double log_at(int i, int j) const {
        return log_density[static_cast<std::size_t>(i) * static_cast<std::size_t>(V_axis.n) + static_cast<std::size_t>(j)];
    }
    double at(int i, int j) const { return std::exp(log_at(i, j)); }
};

inline PosteriorGrid flat_prior(const LikelihoodGrid& grid) {
    const std::size_t n = static_cast<std::size_t>(grid.a_axis.n) * static_cast<std::size_t>(grid.V_axis.n);
    return PosteriorGrid{grid.a_axis, grid.V_axis, std::vector<double>(n, -std::log(static_cast<double>(n)))};
}

namespace detail {
inline void normalize_log(std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) throw DegeneratePosterior("record is impossible at every grid point");
    double s = 0;
    for (double x : v) s += std::exp(x - m);
    const double c = m + std::log(s);
    for (double& x : v) x -= c;
}
}  // namespace detail

/// Adds sum_m log P(m | b) for outcomes [begin, end) of the record and renormalizes.
inline PosteriorGrid update_posterior(const PosteriorGrid& prior, const MeasurementRecord& record,
                                      const LikelihoodGrid& grid, std::size_t begin = 0,
                                      std::size_t end = std::numeric_limits<std::size_t>::max()) {
    if (!(prior.a_axis == grid.a_axis) || !(prior.V_axis == grid.V_axis))
        throw DomainError("update_posterior: prior and grid shapes differ");
    end = std::min(end, record.outcomes.size());
    std::vector<long long> counts(static_cast<std::size_t>(grid.n_outcomes), 0);
    for (std::size_t m = begin; m < end; ++m) {
        const int k = record.outcomes[m];
        if (k < 0 || k >= grid.n_outcomes) throw DomainError("update_posterior: outcome index outside the comb");
        ++counts[static_cast<std::size_t>(k)];
    }
    PosteriorGrid post = prior;
    for (int i = 0; i < grid.a_axis.n; ++i)
        for (int j = 0; j < grid.V_axis.n; ++j) {
            const double* p = grid.row(i, j);
            double acc = 0;
            for (int k = 0; k < grid.n_outcomes; ++k) {
                const auto c = counts[static_cast<std::size_t>(k)];
                if (c == 0) continue;
                acc += p[k] > 0 ? static_cast<double>(c) * std::log(p[k]) : -std::numeric_limits<double>::infinity();
            }
            post.log_density[static_cast<std::size_t>(i) * static_cast<std::size_t>(grid.V_axis.n) +
                             static_cast<std::size_t>(j)] += acc;
        }
    detail::normalize_log(post.log_density);
    return post;
}

/// Grid argmax; ties go to the smallest (i, j) in lexicographic order.
inline EstimationPoint mle(const PosteriorGrid& post) {
    int bi = 0, bj = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < post.a_axis.n; ++i)
        for (int j = 0; j < post.V_axis.n; ++j)
            if (post.log_at(i, j) > best) {
                best = post.log_at(i, j);
                bi = i;
                bj = j;
            }
    return {post.a_axis.value(bi), post.V_axis.value(bj)};
}

struct PosteriorMoments {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();

    double correlation() const {
        const double d = std::sqrt(cov(0, 0) * cov(1, 1));
        return d > 0 ? cov(0, 1) / d : 0.0;
    }
};

inline PosteriorMoments posterior_moments(const PosteriorGrid& post) {
    PosteriorMoments m;
    for (int i = 0; i < post.a_axis.n; ++i)
        for (int j = 0; j < post.V_axis.n; ++j) {
            const double w = post.at(i, j);
            m.mean += w * Eigen::Vector2d(post.a_axis.value(i), post.V_axis.value(j));
        }
    for (int i = 0; i < post.a_axis.n; ++i)
        for (int j = 0; j < post.V_axis.n; ++j) {
            const double w = post.at(i, j);
            const Eigen::Vector2d d = Eigen::Vector2d(post.a_axis.value(i), post.V_axis.value(j)) - m.mean;
            m.cov += w * d * d.transpose();
        }
    return m;
}

inline void write_posterior_csv(std::ostream& out, const PosteriorGrid& post, const std::string& manifest_hash) {
    out << "# manifest " << manifest_hash << "\n";
    out << "a_over_g,V_L_over_E_R,density\n";
    for (int i = 0; i < post.a_axis.n; ++i)
        for (int j = 0; j < post.V_axis.n; ++j)
            out << exact_decimal(post.a_axis.value(i)) << "," << exact_decimal(post.V_axis.value(j)) << ","
                << exact_decimal(post.at(i, j)) << "\n";
}

}  // namespace olsense

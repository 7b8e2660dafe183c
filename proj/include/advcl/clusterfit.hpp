#ifndef ADVCL_CLUSTERFIT_HPP
#define ADVCL_CLUSTERFIT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "checkpoint.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace advcl {

struct FeatureMatrix {
    Tensor rows;  // [n, d]
    bool normalized = false;

    [[nodiscard]] std::size_t size() const { return rows.dim(0); }
    [[nodiscard]] std::size_t dim() const { return rows.dim(1); }

    void validate() const
    {
        if (rows.rank() != 2 || rows.dim(0) == 0 || rows.dim(1) == 0) {
            throw ValidationError("feature matrix must be a non-empty [n, d] array");
        }
        if (!rows.all_finite()) {
            throw ValidationError("feature matrix contains non-finite values");
        }
    }
};

[[nodiscard]] inline FeatureMatrix normalize_rows(Tensor rows)
{
    const std::size_t n = rows.dim(0), d = rows.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        Real* r = rows.data() + i * d;
        Real s = 0;
        for (std::size_t k = 0; k < d; ++k) {
            s += r[k] * r[k];
        }
        const Real inv = 1.0 / std::max(std::sqrt(s), Real{1e-12});
        for (std::size_t k = 0; k < d; ++k) {
            r[k] *= inv;
        }
    }
    return {std::move(rows), true};
}

// Eval-mode encoder features of un-augmented images, l2-normalized per row.
[[nodiscard]] inline FeatureMatrix extract_features(const RobustModel& model, const Tensor& images,
                                                    std::size_t batch_size = 256)
{
    validate_image_batch(images, "feature extraction input");
    model.check_input(images.slice_rows(0, 1));
    const std::size_t n = images.dim(0);
    std::vector<Tensor> parts;
    for (std::size_t b = 0; b < n; b += batch_size) {
        const Tensor x = images.slice_rows(b, std::min(n, b + batch_size));
        parts.push_back(model.forward_features(ag::Var::constant(x), ForwardOptions::eval()).value());
    }
    return normalize_rows(Tensor::concat_rows(parts));
}

[[nodiscard]] inline FeatureMatrix extract_features(const std::filesystem::path& encoder_ckpt, const Dataset& data,
                                                    std::size_t batch_size = 256)
{
    Checkpoint ck = load_checkpoint(encoder_ckpt);
    const auto& c = ck.model->config();
    if (c.input_channels != data.channels() || c.input_size != data.resolution()) {
        throw ConfigError("checkpoint " + encoder_ckpt.string() + " expects " + std::to_string(c.input_channels) + "x" +
                          std::to_string(c.input_size) + " inputs, dataset has " + std::to_string(data.channels()) +
                          "x" + std::to_string(data.resolution()));
    }
    return extract_features(*ck.model, data.images, batch_size);
}

struct KMeansOptions {
    std::size_t max_iterations = 300;
    Real tolerance = 1e-6;  // max centroid shift (l2) that counts as converged
};

struct KMeansResult {
    std::vector<int> assignments;
    Tensor centroids;  // [K, d]
    Real inertia = 0;
    std::vector<Real> inertia_history;  // after each assignment step
    std::size_t iterations = 0;
    bool converged = false;
};

namespace detail {

[[nodiscard]] inline Real sq_dist(const Real* a, const Real* b, std::size_t d)
{
    Real s = 0;
    for (std::size_t k = 0; k < d; ++k) {
        const Real t = a[k] - b[k];
        s += t * t;
    }
    return s;
}

// Uniform (0,1) draw keyed on the row's values, so seeding does not depend on
// row order.
[[nodiscard]] inline Real row_uniform(const Real* row, std::size_t d, std::uint64_t seed, std::uint64_t round)
{
    std::uint64_t h = derive_seed(seed, {0xC1u, round});
    for (std::size_t k = 0; k < d; ++k) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, row + k, sizeof bits);
        h = splitmix64(h ^ bits);
    }
    return (static_cast<Real>(h >> 11) + 0.5) * 0x1.0p-53;
}

// k-means++ with weighted sampling done by Efraimidis-Spirakis keys
// log(u)/w, maximized over rows.
[[nodiscard]] inline Tensor kmeanspp(const Tensor& X, std::size_t K, std::uint64_t seed)
{
    const std::size_t n = X.dim(0), d = X.dim(1);
    Tensor C(Shape{K, d});
    std::vector<Real> dist(n, std::numeric_limits<Real>::infinity());
    for (std::size_t c = 0; c < K; ++c) {
        std::size_t best = 0;
        Real best_key = -std::numeric_limits<Real>::infinity();
        bool any_positive = false;
        for (std::size_t i = 0; i < n; ++i) {
            any_positive = any_positive || (c == 0 || dist[i] > 0);
        }
        for (std::size_t i = 0; i < n; ++i) {
            const Real* row = X.data() + i * d;
            const Real u = row_uniform(row, d, seed, c);
            const Real w = (c == 0 || !any_positive) ? 1.0 : dist[i];
            const Real key = w > 0 ? std::log(u) / w : -std::numeric_limits<Real>::infinity();
            const bool better = key > best_key ||
                                (key == best_key && key > -std::numeric_limits<Real>::infinity() &&
                                 std::lexicographical_compare(row, row + d, X.data() + best * d,
                                                              X.data() + best * d + d));
            if (better) {
                best_key = key;
                best = i;
            }
        }
        std::copy_n(X.data() + best * d, d, C.data() + c * d);
        for (std::size_t i = 0; i < n; ++i) {
            dist[i] = std::min(dist[i], sq_dist(X.data() + i * d, C.data() + c * d, d));
        }
    }
    return C;
}

// Nearest-centroid assignment (lowest index wins ties). Returns the inertia.
inline Real assign(const Tensor& X, const Tensor& C, std::vector<int>& a, std::vector<Real>& dist)
{
    const std::size_t n = X.dim(0), d = X.dim(1), K = C.dim(0);
    a.assign(n, 0);
    dist.assign(n, 0);
    Real inertia = 0;
    for (std::size_t i = 0; i < n; ++i) {
        Real best = std::numeric_limits<Real>::infinity();
        for (std::size_t k = 0; k < K; ++k) {
            const Real s = sq_dist(X.data() + i * d, C.data() + k * d, d);
            if (s < best) {
                best = s;
                a[i] = static_cast<int>(k);
            }
        }
        dist[i] = best;
        inertia += best;
    }
    return inertia;
}

// Gives every empty cluster the point farthest from its current centroid,
// taken from a cluster that keeps at least one member. Returns the new inertia.
inline Real repair_empty(const Tensor& X, Tensor& C, std::vector<int>& a, std::vector<Real>& dist)
{
    const std::size_t n = X.dim(0), d = X.dim(1), K = C.dim(0);
    std::vector<std::size_t> count(K, 0);
    for (int k : a) {
        ++count[static_cast<std::size_t>(k)];
    }
    for (std::size_t k = 0; k < K; ++k) {
        if (count[k] > 0) {
            continue;
        }
        std::size_t far = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (count[static_cast<std::size_t>(a[i])] > 1 && (far == n || dist[i] > dist[far])) {
                far = i;
            }
        }
        if (far == n) {
            break;  // unreachable while K <= n
        }
        --count[static_cast<std::size_t>(a[far])];
        a[far] = static_cast<int>(k);
        ++count[k];
        dist[far] = 0;
        std::copy_n(X.data() + far * d, d, C.data() + k * d);
    }
    Real inertia = 0;
    for (Real v : dist) {
        inertia += v;
    }
    return inertia;
}

} // namespace detail

// Lloyd's algorithm with value-keyed k-means++ seeding.
[[nodiscard]] inline KMeansResult kmeans(const FeatureMatrix& features, std::size_t K, std::uint64_t seed,
                                         const KMeansOptions& opts = {})
{
    features.validate();
    const Tensor& X = features.rows;
    const std::size_t n = X.dim(0), d = X.dim(1);
    if (K == 0) {
        throw ValidationError("kmeans: K must be >= 1");
    }
    if (K > n) {
        throw ValidationError("kmeans: K = " + std::to_string(K) + " exceeds the number of points " +
                              std::to_string(n));
    }
    KMeansResult r;
    r.centroids = detail::kmeanspp(X, K, seed);
    std::vector<Real> dist;
    for (r.iterations = 0; r.iterations < opts.max_iterations; ++r.iterations) {
        detail::assign(X, r.centroids, r.assignments, dist);
        r.inertia = detail::repair_empty(X, r.centroids, r.assignments, dist);
        r.inertia_history.push_back(r.inertia);

        Tensor next(Shape{K, d}, 0.0);
        std::vector<std::size_t> count(K, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto k = static_cast<std::size_t>(r.assignments[i]);
            ++count[k];
            for (std::size_t j = 0; j < d; ++j) {
                next[k * d + j] += X[i * d + j];
            }
        }
        Real shift = 0;
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t j = 0; j < d; ++j) {
                next[k * d + j] /= static_cast<Real>(count[k]);
            }
            shift = std::max(shift, std::sqrt(detail::sq_dist(next.data() + k * d, r.centroids.data() + k * d, d)));
        }
        r.centroids = std::move(next);
        if (shift < opts.tolerance) {
            r.converged = true;
            ++r.iterations;
            break;
        }
    }
    detail::assign(X, r.centroids, r.assignments, dist);
    r.inertia = detail::repair_empty(X, r.centroids, r.assignments, dist);
    r.inertia_history.push_back(r.inertia);
    return r;
}

struct PseudoLabels {
    std::size_t k = 0;
    std::vector<int> assignments;
    Tensor centroids;
    Real inertia = 0;
};

struct PseudoLabelTable {
    std::string feature_fingerprint;
    std::uint64_t seed = 0;
    std::size_t num_samples = 0;
    std::vector<PseudoLabels> entries;  // one per K, in K_list order

    [[nodiscard]] std::vector<std::size_t> k_list() const
    {
        std::vector<std::size_t> out;
        for (const auto& e : entries) {
            out.push_back(e.k);
        }
        return out;
    }

    // Pseudo labels of every head for the given dataset positions.
    [[nodiscard]] std::vector<std::vector<int>> labels_for(std::span<const std::size_t> indices) const
    {
        std::vector<std::vector<int>> out(entries.size());
        for (std::size_t h = 0; h < entries.size(); ++h) {
            out[h].reserve(indices.size());
            for (auto i : indices) {
                if (i >= num_samples) {
                    throw ValidationError("pseudo label index " + std::to_string(i) + " out of range");
                }
                out[h].push_back(entries[h].assignments[i]);
            }
        }
        return out;
    }
};

[[nodiscard]] inline PseudoLabelTable build_pseudo_tables(const FeatureMatrix& features,
                                                          const std::vector<std::size_t>& k_list, std::uint64_t seed,
                                                          std::string fingerprint = "", const KMeansOptions& opts = {})
{
    if (k_list.empty()) {
        throw ValidationError("K list must not be empty");
    }
    PseudoLabelTable t;
    t.feature_fingerprint = std::move(fingerprint);
    t.seed = seed;
    t.num_samples = features.size();
    for (std::size_t i = 0; i < k_list.size(); ++i) {
        auto r = kmeans(features, k_list[i], derive_seed(seed, {0x4B4Du, k_list[i], i}), opts);
        t.entries.push_back({k_list[i], std::move(r.assignments), std::move(r.centroids), r.inertia});
    }
    return t;
}

// Text layout (JSON):
//   {"format": "advcl-pseudo-labels", "version": 1, "feature_fingerprint": str,
//    "seed": u64, "num_samples": n, "k_list": [..],
//    "tables": [{"k": K, "inertia": x, "assignments": [n ints], "centroids": [[d reals] x K]}]}
inline void save_pseudo_table(const std::filesystem::path& path, const PseudoLabelTable& t)
{
    nlohmann::json tables = nlohmann::json::array();
    for (const auto& e : t.entries) {
        nlohmann::json cents = nlohmann::json::array();
        const std::size_t d = e.centroids.dim(1);
        for (std::size_t k = 0; k < e.k; ++k) {
            cents.push_back(std::vector<Real>(e.centroids.data() + k * d, e.centroids.data() + (k + 1) * d));
        }
        tables.push_back({{"k", e.k}, {"inertia", e.inertia}, {"assignments", e.assignments}, {"centroids", cents}});
    }
    const nlohmann::json j = {{"format", "advcl-pseudo-labels"},
                              {"version", 1},
                              {"feature_fingerprint", t.feature_fingerprint},
                              {"seed", t.seed},
                              {"num_samples", t.num_samples},
                              {"k_list", t.k_list()},
                              {"tables", tables}};
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp);
        if (!out) {
            throw IoError("cannot write pseudo-label table " + tmp.string());
        }
        out << j.dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
}

[[nodiscard]] inline PseudoLabelTable load_pseudo_table(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open pseudo-label table " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("corrupt pseudo-label table " + path.string() + ": " + e.what());
    }
    if (j.value("format", "") != "advcl-pseudo-labels") {
        throw ConfigError(path.string() + " is not a pseudo-label table");
    }
    PseudoLabelTable t;
    t.feature_fingerprint = j.at("feature_fingerprint").get<std::string>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.num_samples = j.at("num_samples").get<std::size_t>();
    for (const auto& e : j.at("tables")) {
        PseudoLabels p;
        p.k = e.at("k").get<std::size_t>();
        p.inertia = e.at("inertia").get<Real>();
        p.assignments = e.at("assignments").get<std::vector<int>>();
        const auto cents = e.at("centroids").get<std::vector<std::vector<Real>>>();
        const std::size_t d = cents.empty() ? 0 : cents.front().size();
        p.centroids = Tensor(Shape{cents.size(), d});
        for (std::size_t k = 0; k < cents.size(); ++k) {
            std::copy(cents[k].begin(), cents[k].end(), p.centroids.data() + k * d);
        }
        if (p.assignments.size() != t.num_samples) {
            throw ConfigError("pseudo-label table: assignment count mismatch for K=" + std::to_string(p.k));
        }
        for (int a : p.assignments) {
            if (a < 0 || static_cast<std::size_t>(a) >= p.k) {
                throw ConfigError("pseudo-label table: assignment out of range for K=" + std::to_string(p.k));
            }
        }
        t.entries.push_back(std::move(p));
    }
    return t;
}

} // namespace advcl

#endif // ADVCL_CLUSTERFIT_HPP

#pragma once

// Seeded k-means: k-means++ style initialization, Lloyd iterations capped at
// max_iters, empty clusters repaired by moving the point farthest from its
// centroid. A handful of deterministic restarts keeps small instances near
// the optimal partition; the best run by SSE wins.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "agentsim/common.hpp"
#include "agentsim/rng.hpp"

namespace agentsim {

using Point = std::vector<double>;

inline double squared_distance(const Point& a, const Point& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline Point l2_normalized(const Point& p) {
    double n = 0;
    for (double x : p) n += x * x;
    n = std::sqrt(n);
    if (n <= 0) return p;
    Point out(p.size());
    for (size_t i = 0; i < p.size(); ++i) out[i] = p[i] / n;
    return out;
}

struct KmeansOptions {
    int max_iters = 100;
    int restarts = 4;
};

struct KmeansResult {
    std::vector<Point> centroids;
    std::vector<size_t> assignment;            // point index -> cluster index
    std::vector<std::vector<size_t>> members;  // cluster index -> point indices
    double sse = 0;
    int iterations = 0;
    // SSE after each Lloyd iteration, one history per restart (winner last
    // merged first); non-increasing within each history.
    std::vector<std::vector<double>> sse_histories;
};

namespace detail {

inline size_t count_distinct(const std::vector<Point>& points) {
    std::vector<Point> sorted = points;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    return sorted.size();
}

inline std::vector<Point> kmeanspp_init(const std::vector<Point>& points, size_t k, Rng& rng) {
    std::vector<Point> centroids;
    centroids.reserve(k);
    centroids.push_back(points[rng.index(points.size())]);
    std::vector<double> dist2(points.size());
    while (centroids.size() < k) {
        double total = 0;
        for (size_t i = 0; i < points.size(); ++i) {
            double best = std::numeric_limits<double>::max();
            for (const auto& c : centroids) best = std::min(best, squared_distance(points[i], c));
            dist2[i] = best;
            total += best;
        }
        size_t pick;
        if (total <= 0) {
            // all remaining points coincide with chosen centroids; take the
            // lowest-index point not already selected
            pick = 0;
            for (size_t i = 0; i < points.size(); ++i) {
                if (std::find(centroids.begin(), centroids.end(), points[i]) == centroids.end()) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.weighted_index(dist2);
        }
        centroids.push_back(points[pick]);
    }
    return centroids;
}

struct LloydRun {
    std::vector<Point> centroids;
    std::vector<size_t> assignment;
    double sse = 0;
    int iterations = 0;
    std::vector<double> history;
};

inline LloydRun lloyd(const std::vector<Point>& points, size_t k, std::uint64_t seed,
                      const KmeansOptions& opts) {
    Rng rng(seed);
    LloydRun run;
    run.centroids = kmeanspp_init(points, k, rng);
    run.assignment.assign(points.size(), 0);
    const size_t dim = points[0].size();

    for (int iter = 0; iter < opts.max_iters; ++iter) {
        // assignment step: nearest centroid, ties to the lowest cluster index
        bool changed = false;
        for (size_t i = 0; i < points.size(); ++i) {
            size_t best = 0;
            double best_d = squared_distance(points[i], run.centroids[0]);
            for (size_t c = 1; c < k; ++c) {
                double d = squared_distance(points[i], run.centroids[c]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (run.assignment[i] != best) {
                run.assignment[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;

        // repair empty clusters: hand each one the point currently farthest
        // from its assigned centroid
        std::vector<size_t> sizes(k, 0);
        for (size_t a : run.assignment) ++sizes[a];
        for (size_t c = 0; c < k; ++c) {
            if (sizes[c] > 0) continue;
            size_t worst = points.size();
            double worst_d = -1;
            for (size_t i = 0; i < points.size(); ++i) {
                if (sizes[run.assignment[i]] <= 1) continue;
                double d = squared_distance(points[i], run.centroids[run.assignment[i]]);
                if (d > worst_d) {
                    worst_d = d;
                    worst = i;
                }
            }
            if (worst == points.size()) break;
            --sizes[run.assignment[worst]];
            run.assignment[worst] = c;
            ++sizes[c];
            changed = true;
        }

        // update step: centroids become member means
        std::vector<Point> sums(k, Point(dim, 0.0));
        std::vector<size_t> counts(k, 0);
        for (size_t i = 0; i < points.size(); ++i) {
            for (size_t j = 0; j < dim; ++j) sums[run.assignment[i]][j] += points[i][j];
            ++counts[run.assignment[i]];
        }
        for (size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            for (size_t j = 0; j < dim; ++j) sums[c][j] /= static_cast<double>(counts[c]);
            run.centroids[c] = std::move(sums[c]);
        }

        double sse = 0;
        for (size_t i = 0; i < points.size(); ++i)
            sse += squared_distance(points[i], run.centroids[run.assignment[i]]);
        run.history.push_back(sse);
        run.iterations = iter + 1;
        if (!changed) break;
    }

    run.sse = run.history.empty() ? 0 : run.history.back();
    return run;
}

}  // namespace detail

inline KmeansResult kmeans(const std::vector<Point>& points, size_t k, std::uint64_t seed,
                           KmeansOptions opts = {}) {
    if (points.empty()) throw AgentError(ErrorCode::InvalidK, "kmeans: no points");
    size_t distinct = detail::count_distinct(points);
    if (k < 1 || k > distinct)
        throw AgentError(ErrorCode::InvalidK,
                         "k=" + std::to_string(k) + " outside [1, " + std::to_string(distinct) + "]");
    for (const auto& p : points) {
        if (p.size() != points[0].size())
            throw AgentError(ErrorCode::InvalidArgument, "kmeans: mixed point dimensions");
    }

    KmeansResult result;
    detail::LloydRun best;
    bool have_best = false;
    int restarts = std::max(1, opts.restarts);
    for (int r = 0; r < restarts; ++r) {
        auto run = detail::lloyd(points, k, derive_seed(seed, "kmeans-restart", r), opts);
        result.sse_histories.push_back(run.history);
        if (!have_best || run.sse < best.sse) {
            best = std::move(run);
            have_best = true;
        }
    }

    result.centroids = best.centroids;
    result.assignment = best.assignment;
    result.sse = best.sse;
    result.iterations = best.iterations;
    result.members.assign(k, {});
    for (size_t i = 0; i < best.assignment.size(); ++i)
        result.members[best.assignment[i]].push_back(i);
    // exact member means, so downstream consumers can rely on the invariant
    // even for clusters untouched by the final update step
    const size_t dim = points[0].size();
    for (size_t c = 0; c < k; ++c) {
        if (result.members[c].empty()) continue;
        Point mean(dim, 0.0);
        for (size_t i : result.members[c])
            for (size_t j = 0; j < dim; ++j) mean[j] += points[i][j];
        for (size_t j = 0; j < dim; ++j) mean[j] /= static_cast<double>(result.members[c].size());
        result.centroids[c] = std::move(mean);
    }
    return result;
}

}  // namespace agentsim

#pragma once

// Seeded randomness with portable output. mt19937_64 has a standardized
// stream, but the standard distributions do not, so every draw used by the
// framework goes through the explicit algorithms below. Run artifacts
// (snapshots, traces) must reproduce bit-for-bit across platforms.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "agentsim/common.hpp"
#include "agentsim/digest.hpp"

namespace agentsim {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform integer in [0, n) via rejection sampling.
    std::uint64_t index(std::uint64_t n) {
        if (n == 0) throw AgentError(ErrorCode::InvalidArgument, "Rng::index(0)");
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return x % n;
    }

    // Uniform double in [0, 1) with 53 bits of precision.
    double real01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices drawn uniformly from [0, n), in draw order.
    std::vector<size_t> sample_indices(size_t n, size_t k) {
        if (k > n) throw AgentError(ErrorCode::InvalidArgument, "sample_indices: k > n");
        std::vector<size_t> pool(n);
        for (size_t i = 0; i < n; ++i) pool[i] = i;
        std::vector<size_t> out;
        out.reserve(k);
        size_t remaining = n;
        for (size_t i = 0; i < k; ++i) {
            size_t j = static_cast<size_t>(index(remaining));
            out.push_back(pool[j]);
            pool[j] = pool[remaining - 1];
            --remaining;
        }
        return out;
    }

    // Index drawn with probability proportional to weights[i]. All-zero
    // weights fall back to a uniform draw.
    size_t weighted_index(const std::vector<double>& weights) {
        if (weights.empty()) throw AgentError(ErrorCode::InvalidArgument, "weighted_index: empty");
        double total = 0;
        for (double w : weights) total += w > 0 ? w : 0;
        if (total <= 0) return static_cast<size_t>(index(weights.size()));
        double r = real01() * total;
        double acc = 0;
        for (size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] <= 0) continue;
            acc += weights[i];
            if (r < acc) return i;
        }
        for (size_t i = weights.size(); i-- > 0;) {
            if (weights[i] > 0) return i;
        }
        return weights.size() - 1;
    }

private:
    std::mt19937_64 engine_;
};

// Stateless seed derivation: per-step randomness is keyed by (seed, labels)
// so a run resumed from a snapshot continues with identical draws.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::int64_t a = 0,
                                 std::int64_t b = 0) {
    std::string key = std::to_string(base);
    key += '\x1f';
    key += label;
    key += '\x1f';
    key += std::to_string(a);
    key += '\x1f';
    key += std::to_string(b);
    return sha256_u64(key);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::string_view a,
                                 std::int64_t b = 0) {
    std::string key = std::to_string(base);
    key += '\x1f';
    key += label;
    key += '\x1f';
    key += a;
    key += '\x1f';
    key += std::to_string(b);
    return sha256_u64(key);
}

}  // namespace agentsim

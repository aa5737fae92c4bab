#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Core>

namespace decil {

// All randomness in the project flows from a root seed through this splitter:
// child = mix(root, fnv1a(label)). Labels are short purpose strings such as
// "episode/3" or "fig2/0.1/seed1", so reruns with the same config reproduce
// every stream independently of evaluation order.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t split_seed(std::uint64_t root, std::string_view label) {
    std::uint64_t z = root ^ fnv1a(label);
    // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t root, std::string_view label) {
    return std::mt19937_64(split_seed(root, label));
}

inline Eigen::VectorXd gaussian_vector(int n, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = sigma * dist(rng);
    return v;
}

}  // namespace decil

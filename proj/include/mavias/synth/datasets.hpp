#pragma once

#include "mavias/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace mavias::synth {

/// A generated record with known bias structure.
struct BiasedSample {
    std::vector<double> features;
    std::size_t label = 0;
    std::vector<double> bias_embedding;
    /// True when the bias attribute takes the value that co-occurs with the label.
    bool aligned = true;
    /// Value of the bias attribute (0-based mode index).
    std::size_t bias_mode = 0;
    /// Ground-truth group: label * num_bias_modes + bias_mode.
    std::size_t group = 0;
};

/// Two interleaving half circles in (x1, x2) plus a shortcut coordinate x3.
struct TwoMoons3DConfig {
    std::size_t n = 4000;
    double noise = 0.1;
    /// x3 is +gap/2 or -gap/2.
    double bias_gap = 2.0;
    /// Fraction of samples whose x3 sign matches the label.
    double align_rate = 0.95;
    std::uint64_t seed = 0;
};

inline void validate(const TwoMoons3DConfig& c) {
    if (c.n < 2) throw ContractViolation("two-moons: n must be >= 2");
    if (!(c.align_rate > 0.0 && c.align_rate <= 1.0))
        throw ContractViolation("two-moons: align_rate must lie in (0, 1]");
    if (!(c.noise >= 0.0)) throw ContractViolation("two-moons: noise must be >= 0");
    if (!(c.bias_gap >= 0.0)) throw ContractViolation("two-moons: bias_gap must be >= 0");
}

/// Class 0 is the upper moon, class 1 the lower one. x3 = -gap/2 is the bias
/// value that co-occurs with class 0, +gap/2 the one for class 1. The bias
/// embedding is the raw one-dimensional (x3).
inline std::vector<BiasedSample> generate_two_moons_3d(const TwoMoons3DConfig& cfg) {
    validate(cfg);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    std::normal_distribution<double> jitter(0.0, 1.0);

    const std::size_t n_aligned =
        static_cast<std::size_t>(std::llround(cfg.align_rate * static_cast<double>(cfg.n)));
    std::vector<char> aligned(cfg.n, 0);
    std::fill(aligned.begin(), aligned.begin() + static_cast<std::ptrdiff_t>(n_aligned), 1);
    std::shuffle(aligned.begin(), aligned.end(), rng);

    std::vector<BiasedSample> out;
    out.reserve(cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        const std::size_t label = i % 2;
        const double t = angle(rng);
        double x1, x2;
        if (label == 0) {
            x1 = std::cos(t);
            x2 = std::sin(t);
        } else {
            x1 = 1.0 - std::cos(t);
            x2 = 0.5 - std::sin(t);
        }
        x1 += cfg.noise * jitter(rng);
        x2 += cfg.noise * jitter(rng);
        const bool is_aligned = aligned[i] != 0;
        const std::size_t mode = is_aligned ? label : 1 - label;
        const double x3 = (mode == 1 ? 0.5 : -0.5) * cfg.bias_gap;
        out.push_back({{x1, x2, x3}, label, {x3}, is_aligned, mode, label * 2 + mode});
    }
    return out;
}

/// Gaussian class clusters with a categorical bias attribute that leaks into
/// both the features and the bias embedding.
struct BiasedBlobsConfig {
    std::size_t num_classes = 3;
    std::size_t samples_per_class = 200;
    /// Number of bias values. Class c prefers mode c % num_bias_modes.
    std::size_t num_bias_modes = 0; // 0 means num_classes
    std::size_t relevant_dim = 2;
    std::size_t embed_dim = 8;
    double align_rate = 0.9;
    double cluster_std = 1.0;
    double class_separation = 3.0;
    /// Strength of the bias signal in the features.
    double bias_strength = 2.0;
    /// Stddev of the noise added to the bias embedding before normalising.
    double embed_noise = 0.1;
    std::uint64_t seed = 0;
};

inline std::size_t bias_modes(const BiasedBlobsConfig& c) {
    return c.num_bias_modes == 0 ? c.num_classes : c.num_bias_modes;
}

/// Features are [relevant coordinates..., one-hot bias mode * strength + noise].
inline std::vector<BiasedSample> generate_biased_blobs(const BiasedBlobsConfig& cfg) {
    if (cfg.num_classes < 2) throw ContractViolation("blobs: need at least 2 classes");
    if (cfg.embed_dim < 1) throw ContractViolation("blobs: embed_dim must be >= 1");
    if (cfg.relevant_dim < 1) throw ContractViolation("blobs: relevant_dim must be >= 1");
    if (cfg.samples_per_class < 1) throw ContractViolation("blobs: samples_per_class must be >= 1");
    if (!(cfg.align_rate > 0.0 && cfg.align_rate <= 1.0))
        throw ContractViolation("blobs: align_rate must lie in (0, 1]");
    const std::size_t modes = bias_modes(cfg);
    if (modes < 2) throw ContractViolation("blobs: need at least 2 bias modes");

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<std::vector<double>> centers(cfg.num_classes, std::vector<double>(cfg.relevant_dim));
    for (auto& c : centers)
        for (double& v : c) v = cfg.class_separation * gauss(rng);

    // Mode directions in embedding space: basis vectors when they fit, else
    // seeded random unit vectors.
    std::vector<std::vector<double>> mode_dir(modes, std::vector<double>(cfg.embed_dim, 0.0));
    for (std::size_t m = 0; m < modes; ++m) {
        if (modes <= cfg.embed_dim) {
            mode_dir[m][m] = 1.0;
        } else {
            double nrm = 0.0;
            for (double& v : mode_dir[m]) {
                v = gauss(rng);
                nrm += v * v;
            }
            for (double& v : mode_dir[m]) v /= std::sqrt(nrm);
        }
    }

    std::vector<BiasedSample> out;
    out.reserve(cfg.num_classes * cfg.samples_per_class);
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        const std::size_t preferred = c % modes;
        const std::size_t n_aligned =
            static_cast<std::size_t>(std::llround(cfg.align_rate * static_cast<double>(cfg.samples_per_class)));
        std::vector<char> aligned(cfg.samples_per_class, 0);
        std::fill(aligned.begin(), aligned.begin() + static_cast<std::ptrdiff_t>(n_aligned), 1);
        std::shuffle(aligned.begin(), aligned.end(), rng);
        for (std::size_t i = 0; i < cfg.samples_per_class; ++i) {
            std::size_t mode = preferred;
            if (!aligned[i]) {
                std::uniform_int_distribution<std::size_t> other(0, modes - 2);
                mode = other(rng);
                if (mode >= preferred) ++mode;
            }
            BiasedSample s;
            s.label = c;
            s.aligned = aligned[i] != 0;
            s.bias_mode = mode;
            s.group = c * modes + mode;
            for (std::size_t k = 0; k < cfg.relevant_dim; ++k)
                s.features.push_back(centers[c][k] + cfg.cluster_std * gauss(rng));
            for (std::size_t m = 0; m < modes; ++m)
                s.features.push_back((m == mode ? cfg.bias_strength : 0.0) + 0.1 * gauss(rng));
            s.bias_embedding = mode_dir[mode];
            double nrm = 0.0;
            for (double& v : s.bias_embedding) {
                v += cfg.embed_noise * gauss(rng);
                nrm += v * v;
            }
            nrm = std::sqrt(nrm);
            for (double& v : s.bias_embedding) v /= nrm;
            out.push_back(std::move(s));
        }
    }
    return out;
}

} // namespace mavias::synth

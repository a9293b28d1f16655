#pragma once

#include "mavias/autodiff/parameters.hpp"
#include "mavias/autodiff/tape.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace mavias::ad {

/// One dense layer: weight (out x in) and bias (1 x out) living in a ParameterStore.
struct DenseLayer {
    ParamRef weight;
    ParamRef bias;
};

inline DenseLayer add_dense_layer(ParameterStore& store, const std::string& name, Partition part,
                                  std::size_t in, std::size_t out, std::mt19937_64& rng) {
    DenseMatrix w(out, in);
    he_init(w, rng);
    auto wref = store.add(name + ".weight", part, std::move(w));
    auto bref = store.add(name + ".bias", part, DenseMatrix(1, out));
    return {wref, bref};
}

inline Var dense_forward(Tape& t, const DenseLayer& layer, Var x) {
    return linear(t, x, t.param(layer.weight), t.param(layer.bias));
}

/// Stack of dense layers with ReLU between consecutive layers and a linear output.
struct Mlp {
    std::vector<DenseLayer> layers;
    std::vector<std::size_t> widths; // widths[0] = input, widths.back() = output

    std::size_t input_dim() const { return widths.front(); }
    std::size_t output_dim() const { return widths.back(); }
};

inline Mlp build_mlp(ParameterStore& store, const std::string& prefix, Partition part,
                     const std::vector<std::size_t>& widths, std::mt19937_64& rng) {
    if (widths.size() < 2) throw ContractViolation("build_mlp: need at least input and output width");
    for (auto w : widths)
        if (w == 0) throw ContractViolation("build_mlp: zero layer width");
    Mlp m;
    m.widths = widths;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
        m.layers.push_back(
            add_dense_layer(store, prefix + "." + std::to_string(i), part, widths[i], widths[i + 1], rng));
    return m;
}

/// Records the MLP on the tape; x is B x input_dim.
inline Var mlp_forward(Tape& t, const Mlp& mlp, Var x) {
    const auto& X = t.value(x);
    Var h = x;
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        const auto& W = (*t.store())[mlp.layers[i].weight].value;
        const std::size_t width = (i == 0) ? X.cols() : t.value(h).cols();
        if (width != W.cols())
            throw ContractViolation("mlp_forward: layer " + std::to_string(i) + " expects width " +
                                    std::to_string(W.cols()) + ", got " + std::to_string(width));
        h = dense_forward(t, mlp.layers[i], h);
        if (i + 1 < mlp.layers.size()) h = relu(t, h);
    }
    return h;
}

/// Single-vector convenience wrapper.
inline std::vector<double> mlp_forward(ParameterStore& store, const Mlp& mlp, std::span<const double> x) {
    Tape t(&store);
    Var out = mlp_forward(t, mlp, t.constant(DenseMatrix::row(x)));
    auto v = t.value(out).values();
    return {v.begin(), v.end()};
}

} // namespace mavias::ad

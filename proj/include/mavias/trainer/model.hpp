#pragma once

#include "mavias/autodiff/checkpoint.hpp"
#include "mavias/autodiff/mlp.hpp"
#include "mavias/autodiff/parameters.hpp"
#include "mavias/autodiff/tape.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mavias::trainer {

using ad::DenseMatrix;
using ad::Partition;
using ad::Tape;
using ad::Var;

/// Layer widths of a bias-aware model.
struct ModelShape {
    std::size_t input_dim = 3;
    std::vector<std::size_t> hidden{32};
    std::size_t feature_dim = 16; // r: backbone output, projection output, head input
    std::size_t num_classes = 2;  // p
    std::size_t embed_dim = 1;    // d: bias embedding length

    friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

inline nlohmann::json to_json(const ModelShape& s) {
    return {{"input_dim", s.input_dim},
            {"hidden", s.hidden},
            {"feature_dim", s.feature_dim},
            {"num_classes", s.num_classes},
            {"embed_dim", s.embed_dim}};
}

inline ModelShape shape_from_json(const nlohmann::json& j) {
    ModelShape s;
    s.input_dim = j.at("input_dim").get<std::size_t>();
    s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    s.feature_dim = j.at("feature_dim").get<std::size_t>();
    s.num_classes = j.at("num_classes").get<std::size_t>();
    s.embed_dim = j.at("embed_dim").get<std::size_t>();
    return s;
}

/// Backbone MLP (input -> r), linear head (r -> p) shared by both branches, and
/// a linear projection (d -> r) that maps bias embeddings into feature space.
/// Only backbone + head take part in inference.
class BiasAwareModel {
public:
    /// `projection_init_scale` multiplies the projection's initial weights. A
    /// small value starts the bias branch near zero so it does not begin with a
    /// random preference the main branch then has to cancel.
    BiasAwareModel(const ModelShape& shape, std::uint64_t seed, double projection_init_scale = 1.0) : shape_(shape) {
        if (shape.input_dim == 0 || shape.feature_dim == 0 || shape.embed_dim == 0)
            throw ContractViolation("BiasAwareModel: zero-sized dimension");
        if (shape.num_classes < 2) throw ContractViolation("BiasAwareModel: need at least two classes");
        std::mt19937_64 rng(seed);
        std::vector<std::size_t> widths{shape.input_dim};
        widths.insert(widths.end(), shape.hidden.begin(), shape.hidden.end());
        widths.push_back(shape.feature_dim);
        backbone_ = ad::build_mlp(params_, "backbone", Partition::backbone, widths, rng);
        head_ = ad::add_dense_layer(params_, "head", Partition::head, shape.feature_dim, shape.num_classes, rng);
        projection_ = ad::add_dense_layer(params_, "projection", Partition::projection, shape.embed_dim,
                                          shape.feature_dim, rng);
        if (!(projection_init_scale >= 0.0) || !std::isfinite(projection_init_scale))
            throw ContractViolation("BiasAwareModel: projection_init_scale must be finite and >= 0");
        for (double& w : params_[projection_.weight].value.values()) w *= projection_init_scale;
    }

    /// Rebinds a model to parameters loaded from a checkpoint.
    BiasAwareModel(const ModelShape& shape, ad::ParameterStore params) : BiasAwareModel(shape, 0) {
        if (params.size() != params_.size())
            throw ConfigError("checkpoint parameter count does not match the model shape");
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& src = params[ad::ParamRef{i}];
            auto& dst = params_[ad::ParamRef{i}];
            if (src.name != dst.name || !src.value.same_shape(dst.value))
                throw ConfigError("checkpoint parameter '" + src.name + "' does not match '" + dst.name + "'");
            dst.value = src.value;
        }
    }

    const ModelShape& shape() const noexcept { return shape_; }
    ad::ParameterStore& params() noexcept { return params_; }
    const ad::ParameterStore& params() const noexcept { return params_; }
    const ad::Mlp& backbone() const noexcept { return backbone_; }
    const ad::DenseLayer& head() const noexcept { return head_; }
    const ad::DenseLayer& projection() const noexcept { return projection_; }

private:
    ModelShape shape_;
    ad::ParameterStore params_;
    ad::Mlp backbone_;
    ad::DenseLayer head_;
    ad::DenseLayer projection_;
};

/// Rows of inputs for one forward pass. An embedding row that is exactly zero
/// marks a sample without irrelevant tags; its bias logits are fixed at 0.
struct Batch {
    DenseMatrix features;   // B x input_dim
    DenseMatrix embeddings; // B x embed_dim
    std::vector<std::size_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

/// Logit nodes of one combined forward.
struct BranchLogits {
    Var z_main;
    Var z_tag;
    Var z;
};

inline bool is_zero_row(std::span<const double> row) {
    return std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; });
}

inline void check_batch(const BiasAwareModel& m, const Batch& b, bool need_embeddings) {
    if (b.features.rows() != b.size())
        throw ContractViolation("batch: " + std::to_string(b.features.rows()) + " feature rows for " +
                                std::to_string(b.size()) + " labels");
    if (b.features.cols() != m.shape().input_dim)
        throw ContractViolation("batch: feature width " + std::to_string(b.features.cols()) +
                                " != model input " + std::to_string(m.shape().input_dim));
    if (need_embeddings) {
        if (b.embeddings.rows() != b.size() || b.embeddings.cols() != m.shape().embed_dim)
            throw ContractViolation("batch: embeddings " + ad::shape_string(b.embeddings) + " expected " +
                                    std::to_string(b.size()) + "x" + std::to_string(m.shape().embed_dim));
    }
}

/// z_main = head(backbone(x)).
inline Var forward_main(Tape& t, const BiasAwareModel& m, const Batch& b) {
    check_batch(m, b, false);
    Var h = ad::mlp_forward(t, m.backbone(), t.constant(b.features));
    return ad::dense_forward(t, m.head(), h);
}

/// z_tag = head(projection(e)), with rows of zero-embedding samples held at 0.
inline Var forward_tag(Tape& t, const BiasAwareModel& m, const Batch& b) {
    check_batch(m, b, true);
    Var proj = ad::dense_forward(t, m.projection(), t.constant(b.embeddings));
    Var z_tag = ad::dense_forward(t, m.head(), proj);
    std::vector<double> keep(b.size(), 1.0);
    bool any_zero = false;
    for (std::size_t r = 0; r < b.size(); ++r)
        if (is_zero_row(b.embeddings.row_span(r))) {
            keep[r] = 0.0;
            any_zero = true;
        }
    return any_zero ? ad::scale_rows(t, z_tag, std::move(keep)) : z_tag;
}

/// Logit addition: z = z_main + z_tag. The head receives gradient from both paths.
inline BranchLogits forward_combined(Tape& t, const BiasAwareModel& m, const Batch& b) {
    Var z_main = forward_main(t, m, b);
    Var z_tag = forward_tag(t, m, b);
    return {z_main, z_tag, ad::add(t, z_main, z_tag)};
}

/// ½(‖z_main‖ − λ‖z_tag‖)² for one sample.
inline double alignment_loss(std::span<const double> z_main, std::span<const double> z_tag, double lambda) {
    if (z_main.size() != z_tag.size())
        throw ContractViolation("alignment_loss: logit lengths differ");
    const double d = ad::l2_norm(z_main) - lambda * ad::l2_norm(z_tag);
    return 0.5 * d * d;
}

/// Batch-mean alignment term recorded on the tape.
inline Var alignment_loss(Tape& t, Var z_main, Var z_tag, double lambda) {
    Var diff = ad::axpy(t, ad::row_norms(t, z_main), -lambda, ad::row_norms(t, z_tag));
    return ad::scale(t, ad::mean(t, ad::square(t, diff)), 0.5);
}

enum class TrainMode { vanilla, mavias };

inline std::string to_string(TrainMode m) { return m == TrainMode::vanilla ? "vanilla" : "mavias"; }

inline TrainMode train_mode_from_string(const std::string& s) {
    if (s == "vanilla") return TrainMode::vanilla;
    if (s == "mavias") return TrainMode::mavias;
    throw ConfigError("mode must be 'vanilla' or 'mavias', got '" + s + "'");
}

/// Loss nodes and the per-batch summaries the trainer logs.
struct LossParts {
    Var total;
    Var z_main;
    Var z_tag; // unset in vanilla mode
    double cls = 0.0;
    double align = 0.0;
};

/// Mean CE on combined logits plus alpha times the mean alignment term. In
/// vanilla mode the loss is CE on z_main alone and the alignment value is only
/// logged.
inline LossParts total_loss(Tape& t, const BiasAwareModel& m, const Batch& b, TrainMode mode, double alpha,
                            double lambda) {
    if (b.size() == 0) throw ContractViolation("total_loss on an empty batch");
    LossParts out;
    if (mode == TrainMode::vanilla) {
        out.z_main = forward_main(t, m, b);
        out.total = ad::softmax_cross_entropy(t, out.z_main, b.labels);
        out.cls = t.scalar(out.total);
        // Logged as if z_tag were 0, the value a mavias run with e = 0 reports.
        const auto& zm = t.value(out.z_main);
        const std::vector<double> zero(zm.cols(), 0.0);
        double s = 0.0;
        for (std::size_t r = 0; r < b.size(); ++r) s += alignment_loss(zm.row_span(r), zero, lambda);
        out.align = s / static_cast<double>(b.size());
        return out;
    }
    auto logits = forward_combined(t, m, b);
    out.z_main = logits.z_main;
    out.z_tag = logits.z_tag;
    Var cls = ad::softmax_cross_entropy(t, logits.z, b.labels);
    out.cls = t.scalar(cls);
    if (alpha == 0.0) {
        double s = 0.0;
        const auto& zm = t.value(logits.z_main);
        const auto& zt = t.value(logits.z_tag);
        for (std::size_t r = 0; r < b.size(); ++r) s += alignment_loss(zm.row_span(r), zt.row_span(r), lambda);
        out.align = s / static_cast<double>(b.size());
        out.total = cls;
        return out;
    }
    Var align = alignment_loss(t, logits.z_main, logits.z_tag, lambda);
    out.align = t.scalar(align);
    out.total = ad::axpy(t, cls, alpha, align);
    return out;
}

inline std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

struct Prediction {
    std::size_t label = 0;
    std::vector<double> z_main;
};

/// Inference path: argmax of z_main. The projection and embeddings are not used.
inline Prediction predict(const BiasAwareModel& m, std::span<const double> x) {
    if (x.size() != m.shape().input_dim)
        throw ContractViolation("predict: input length " + std::to_string(x.size()) + " != " +
                                std::to_string(m.shape().input_dim));
    auto params = m.params();
    Tape t(&params);
    Batch b{DenseMatrix::row(x), {}, {0}};
    Var z = forward_main(t, m, b);
    auto v = t.value(z).values();
    Prediction p{0, {v.begin(), v.end()}};
    p.label = argmax(p.z_main);
    return p;
}

/// z_main for every row of a feature matrix.
inline DenseMatrix main_logits(const BiasAwareModel& m, const DenseMatrix& features) {
    auto params = m.params();
    Tape t(&params);
    Batch b{features, {}, std::vector<std::size_t>(features.rows(), 0)};
    return t.value(forward_main(t, m, b));
}

/// z_tag for every row of an embedding matrix (zero rows give zero logits).
inline DenseMatrix tag_logits(const BiasAwareModel& m, const DenseMatrix& embeddings) {
    auto params = m.params();
    Tape t(&params);
    Batch b{DenseMatrix(embeddings.rows(), m.shape().input_dim), embeddings,
            std::vector<std::size_t>(embeddings.rows(), 0)};
    return t.value(forward_tag(t, m, b));
}

inline nlohmann::json model_meta(const BiasAwareModel& m, TrainMode mode) {
    return {{"shape", to_json(m.shape())}, {"mode", to_string(mode)}};
}

inline void save_model(const std::string& path, const BiasAwareModel& m, TrainMode mode,
                       const nlohmann::json& extra = {}) {
    auto meta = model_meta(m, mode);
    if (!extra.is_null()) meta["extra"] = extra;
    ad::save_checkpoint(path, m.params(), meta);
}

struct LoadedModel {
    BiasAwareModel model;
    TrainMode mode;
};

inline LoadedModel load_model(const std::string& path) {
    auto j = ad::read_checkpoint_json(path);
    const auto& meta = j.at("meta");
    auto shape = shape_from_json(meta.at("shape"));
    return {BiasAwareModel(shape, ad::checkpoint_from_json(j)),
            train_mode_from_string(meta.at("mode").get<std::string>())};
}

} // namespace mavias::trainer

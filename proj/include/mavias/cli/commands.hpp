#pragma once

#include "mavias/cli/run_config.hpp"
#include "mavias/discovery/http_clients.hpp"
#include "mavias/discovery/io.hpp"
#include "mavias/discovery/pipeline.hpp"
#include "mavias/eval/biased_tags.hpp"
#include "mavias/eval/metrics.hpp"
#include "mavias/synth/datasets.hpp"
#include "mavias/synth/export.hpp"
#include "mavias/trainer/diagnostics.hpp"
#include "mavias/trainer/train.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace mavias::cli {

namespace fs = std::filesystem;

inline fs::path output_path(const RunConfig& c, const std::string& file) { return fs::path(c.output_dir) / file; }

inline void ensure_output_dir(const RunConfig& c) {
    std::error_code ec;
    fs::create_directories(c.output_dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + c.output_dir + "': " + ec.message());
}

inline void write_json_file(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

/// Each command leaves `<command>_config.json` next to its outputs.
inline void write_resolved_config(const RunConfig& c, const std::string& command) {
    auto j = to_json(c);
    j["command"] = command;
    write_json_file(output_path(c, command + "_config.json"), j);
}

inline void require_file(const std::optional<std::string>& path, const std::string& key) {
    if (!path) throw ConfigError(key + " is required");
    if (!fs::exists(*path)) throw ConfigError(key + ": file not found: '" + *path + "'");
}

// ---------------------------------------------------------------------------
// synth

inline void cmd_synth(const RunConfig& c, std::ostream& log) {
    ensure_output_dir(c);
    const auto& s = c.synth;
    std::vector<synth::DataRecord> train, test;
    if (s.generator == "two_moons_3d") {
        auto scheme = synth::two_moons_tag_scheme();
        scheme.distractor_rate = s.distractor_rate;
        const auto names = synth::two_moons_class_names();
        train = synth::to_records(
            synth::generate_two_moons_3d({s.n, s.noise, s.bias_gap, s.align_rate, c.seed}), scheme, names, c.seed,
            "train-");
        test = synth::to_records(
            synth::generate_two_moons_3d({s.test_n, s.noise, s.bias_gap, s.test_align_rate, c.seed + 1}), scheme,
            names, c.seed + 1, "test-");
    } else if (s.generator == "biased_blobs") {
        synth::BiasedBlobsConfig bc;
        bc.num_classes = s.num_classes;
        bc.samples_per_class = s.samples_per_class;
        bc.embed_dim = s.embed_dim;
        bc.align_rate = s.align_rate;
        bc.seed = c.seed;
        synth::TagScheme scheme;
        std::vector<std::string> names;
        for (std::size_t k = 0; k < bc.num_classes; ++k) {
            names.push_back("class" + std::to_string(k));
            scheme.class_tags.push_back("class" + std::to_string(k) + " object");
        }
        for (std::size_t m = 0; m < synth::bias_modes(bc); ++m) scheme.bias_tags.push_back("mode " + std::to_string(m));
        scheme.distractors = {"grid", "noise", "shadow"};
        scheme.distractor_rate = s.distractor_rate;
        train = synth::to_records(synth::generate_biased_blobs(bc), scheme, names, c.seed, "train-");
        auto tc = bc;
        tc.align_rate = s.test_align_rate;
        tc.seed = c.seed + 1;
        test = synth::to_records(synth::generate_biased_blobs(tc), scheme, names, c.seed + 1, "test-");
    } else {
        throw ConfigError("synth.generator must be 'two_moons_3d' or 'biased_blobs', got '" + s.generator + "'");
    }
    synth::write_records(output_path(c, "train.jsonl").string(), train);
    synth::write_records(output_path(c, "test.jsonl").string(), test);
    write_resolved_config(c, "synth");
    auto aligned = [](const std::vector<synth::DataRecord>& v) {
        std::size_t a = 0;
        for (const auto& r : v) a += r.aligned.value_or(false);
        return a;
    };
    log << "synth: " << s.generator << " train=" << train.size() << " (aligned " << aligned(train)
        << ") test=" << test.size() << " (aligned " << aligned(test) << ") -> " << c.output_dir << "\n";
}

// ---------------------------------------------------------------------------
// discover

inline std::string api_key_from_env() {
    for (const char* name : {"MAVIAS_API_KEY", "OPENAI_API_KEY"})
        if (const char* v = std::getenv(name)) return v;
    return {};
}

/// Class names from the config, else from records' class_name, else the label.
inline std::vector<std::string> resolve_class_names(const std::vector<std::string>& configured,
                                                    const std::vector<nlohmann::json>& rows) {
    std::size_t p = 0;
    std::map<std::size_t, std::string> seen;
    for (const auto& r : rows) {
        const auto label = r.at("label").get<std::size_t>();
        p = std::max(p, label + 1);
        if (r.contains("class_name") && r["class_name"].is_string()) {
            auto [it, fresh] = seen.emplace(label, r["class_name"].get<std::string>());
            if (!fresh && it->second != r["class_name"].get<std::string>())
                throw ConfigError("label " + std::to_string(label) + " carries two class names");
        }
    }
    if (!configured.empty()) {
        if (configured.size() < p)
            throw ConfigError("discovery.class_names lists " + std::to_string(configured.size()) +
                              " names but labels go up to " + std::to_string(p - 1));
        return configured;
    }
    std::vector<std::string> names(p);
    for (std::size_t k = 0; k < p; ++k) names[k] = seen.contains(k) ? seen[k] : std::to_string(k);
    return names;
}

inline discovery::DiscoveryReport cmd_discover(const RunConfig& c, std::ostream& log) {
    const auto& d = c.discovery;
    require_file(d.input, "discovery.input");
    ensure_output_dir(c);
    const auto rows = discovery::read_jsonl(*d.input);
    std::vector<discovery::TaggedSample> samples;
    samples.reserve(rows.size());
    std::set<std::string> ids;
    for (const auto& r : rows) {
        samples.push_back(discovery::tagged_sample_from_json(r));
        if (!ids.insert(samples.back().id).second) throw ConfigError("duplicate record id '" + samples.back().id + "'");
    }
    std::vector<std::string> names;
    try {
        names = resolve_class_names(d.class_names, rows);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed input record: ") + e.what());
    }

    discovery::DiscoveryConfig dc;
    dc.mode = discovery::embedding_mode_from_string(d.mode);
    dc.retry = {d.max_attempts, d.backoff_ms};
    dc.max_in_flight = d.max_in_flight;

    std::unique_ptr<discovery::TaggerClient> tagger;
    std::unique_ptr<discovery::RelevanceClient> relevance;
    std::unique_ptr<discovery::EmbeddingClient> embedder;
    if (d.mock) {
        tagger = std::make_unique<discovery::MockTagger>(d.tagger_vocabulary, c.seed);
        std::map<std::string, std::set<std::string>> kw;
        for (const auto& [cls, tags] : d.keywords) {
            auto norm = discovery::normalize_tags(tags);
            kw[discovery::trim_lower(cls)] = std::set<std::string>(norm.begin(), norm.end());
        }
        relevance = std::make_unique<discovery::MockRelevance>(std::move(kw));
        embedder = std::make_unique<discovery::MockEmbedding>(d.embedding_dim, c.seed);
    } else {
        const auto key = api_key_from_env();
        if (d.tagger_url) tagger = std::make_unique<discovery::HttpTagger>(discovery::Endpoint{*d.tagger_url, key});
        relevance = std::make_unique<discovery::OpenAiChatClient>(discovery::Endpoint{d.chat_url, key}, d.chat_model,
                                                                  d.temperature);
        embedder = std::make_unique<discovery::OpenAiEmbeddingClient>(discovery::Endpoint{d.embedding_url, key},
                                                                      d.embedding_model, d.embedding_dim);
    }

    auto rep = discovery::run_discovery(samples, names, tagger.get(), *relevance, *embedder, dc);

    std::vector<nlohmann::json> tag_rows, emb_rows;
    for (const auto& s : samples) {
        tag_rows.push_back(discovery::tag_record(s));
        if (s.bias_embedding) emb_rows.push_back(discovery::embedding_record(s.id, *s.bias_embedding));
    }
    discovery::write_jsonl(output_path(c, "tags.jsonl").string(), tag_rows);
    discovery::write_jsonl(output_path(c, "embeddings.jsonl").string(), emb_rows);

    nlohmann::json classes = nlohmann::json::array();
    for (const auto& cs : rep.classes) {
        nlohmann::json failures = nlohmann::json::array();
        for (const auto& f : cs.failures)
            failures.push_back({{"batch_index", f.batch_index}, {"message", f.message}, {"raw", f.raw},
                                {"resolution", "tags of this batch kept as relevant"}});
        classes.push_back({{"label", cs.label}, {"class", cs.name}, {"samples", cs.samples},
                           {"unique_tags", cs.unique_tags}, {"relevant_tags", cs.relevant_tags},
                           {"irrelevant_tags", cs.irrelevant_tags}, {"llm_calls", cs.llm_calls},
                           {"failures", failures}});
    }
    write_json_file(output_path(c, "discovery_report.json"),
                    {{"backend", d.mock ? "mock" : "http"},
                     {"temperature", d.temperature},
                     {"embedding_mode", d.mode},
                     {"embedding_dim", rep.embedding_dim},
                     {"samples_with_bias", rep.samples_with_bias},
                     {"samples_without_bias", rep.samples_without_bias},
                     {"zero_bias_path", "samples without irrelevant tags get no embedding and train with e = 0"},
                     {"classes", classes}});
    write_resolved_config(c, "discover");

    for (const auto& cs : rep.classes)
        log << "class " << cs.label << " (" << cs.name << "): " << cs.samples << " samples, " << cs.unique_tags
            << " tags, " << cs.relevant_tags << " relevant, " << cs.irrelevant_tags << " irrelevant, "
            << cs.llm_calls << " LLM calls" << (cs.failures.empty() ? "" : ", FAILED BATCHES KEPT RELEVANT: ")
            << (cs.failures.empty() ? "" : std::to_string(cs.failures.size())) << "\n";
    log << "embeddings: " << rep.samples_with_bias << " samples, " << rep.samples_without_bias
        << " without irrelevant tags (zero-bias path)\n";
    return rep;
}

// ---------------------------------------------------------------------------
// Datasets for train / eval / diagnose

/// Where a model's bias embeddings come from; stored in the checkpoint.
struct EmbeddingSource {
    std::string kind = "none"; // "file", "feature" or "none"
    std::size_t feature_index = 0;
    std::size_t dim = 1;
};

inline nlohmann::json to_json(const EmbeddingSource& e) {
    return {{"kind", e.kind}, {"feature_index", e.feature_index}, {"dim", e.dim}};
}

inline EmbeddingSource embedding_source_from_json(const nlohmann::json& j) {
    EmbeddingSource e;
    e.kind = j.at("kind").get<std::string>();
    e.feature_index = j.at("feature_index").get<std::size_t>();
    e.dim = j.at("dim").get<std::size_t>();
    return e;
}

struct LoadedData {
    std::vector<synth::DataRecord> records;
    trainer::Dataset examples;
    EmbeddingSource source;
};

/// Attaches embeddings to records. Records missing from an embeddings file
/// keep e = 0.
inline LoadedData attach_embeddings(std::vector<synth::DataRecord> records, const EmbeddingSource& source,
                                    const std::map<std::string, std::vector<double>>* file_vectors) {
    LoadedData out;
    out.source = source;
    for (const auto& r : records) {
        trainer::Example ex{r.features, {}, r.label};
        if (source.kind == "feature") {
            if (source.feature_index >= r.features.size())
                throw ConfigError("record '" + r.id + "' has no feature " + std::to_string(source.feature_index));
            ex.embedding = {r.features[source.feature_index]};
        } else if (source.kind == "file") {
            auto it = file_vectors->find(r.id);
            if (it != file_vectors->end()) {
                if (it->second.size() != source.dim)
                    throw ConfigError("embedding of '" + r.id + "' has length " + std::to_string(it->second.size()) +
                                      ", expected " + std::to_string(source.dim));
                ex.embedding = it->second;
            }
        }
        if (!out.examples.empty() && ex.features.size() != out.examples.front().features.size())
            throw ConfigError("record '" + r.id + "' has a different feature length");
        out.examples.push_back(std::move(ex));
    }
    out.records = std::move(records);
    return out;
}

inline std::map<std::string, std::vector<double>> load_embedding_file(const std::string& path, std::size_t& dim) {
    auto vectors = discovery::read_embeddings(path);
    dim = 0;
    for (const auto& [id, v] : vectors) {
        if (dim == 0) dim = v.size();
        if (v.size() != dim) throw ConfigError("embeddings in '" + path + "' have mixed lengths");
    }
    if (dim == 0) dim = 1;
    return vectors;
}

inline LoadedData load_training_data(const RunConfig& c, std::ostream& log) {
    const auto& t = c.train;
    if (t.embeddings && t.bias_feature_index)
        throw ConfigError("train.embeddings and train.bias_feature_index are mutually exclusive");
    std::vector<synth::DataRecord> records;
    std::optional<std::size_t> feature_index = t.bias_feature_index;
    if (t.dataset) {
        require_file(t.dataset, "train.dataset");
        records = synth::read_records(*t.dataset);
    } else {
        if (c.synth.generator != "two_moons_3d")
            throw ConfigError("train.dataset is required unless synth.generator is two_moons_3d");
        const auto& s = c.synth;
        records = synth::to_records(synth::generate_two_moons_3d({s.n, s.noise, s.bias_gap, s.align_rate, c.seed}),
                                    synth::two_moons_tag_scheme(), synth::two_moons_class_names(), c.seed, "train-");
        // The projection sees the shortcut coordinate x3 directly.
        if (!feature_index && !t.embeddings) feature_index = 2;
        log << "train: sampled two_moons_3d (n=" << s.n << ", align_rate=" << s.align_rate << ")\n";
    }
    if (records.empty()) throw ConfigError("training dataset is empty");
    EmbeddingSource src;
    std::map<std::string, std::vector<double>> vectors;
    if (t.embeddings) {
        require_file(t.embeddings, "train.embeddings");
        src.kind = "file";
        vectors = load_embedding_file(*t.embeddings, src.dim);
    } else if (feature_index) {
        src.kind = "feature";
        src.feature_index = *feature_index;
    }
    return attach_embeddings(std::move(records), src, &vectors);
}

// ---------------------------------------------------------------------------
// train

inline trainer::TrainerConfig trainer_config(const RunConfig& c) {
    const auto& t = c.train;
    trainer::TrainerConfig tc;
    tc.mode = trainer::train_mode_from_string(t.mode);
    tc.alpha = t.alpha;
    tc.lambda = t.lambda;
    if (t.optimizer == "sgd")
        tc.optimizer = ad::SgdConfig{t.lr, t.momentum, t.weight_decay};
    else if (t.optimizer == "adam")
        tc.optimizer = ad::AdamConfig{t.lr, t.beta1, t.beta2, t.epsilon, t.weight_decay};
    else
        throw ConfigError("train.optimizer must be 'sgd' or 'adam', got '" + t.optimizer + "'");
    tc.epochs = t.epochs;
    tc.batch_size = t.batch_size;
    tc.seed = c.seed;
    if (t.schedule == "none")
        tc.schedule = trainer::LrSchedule::none;
    else if (t.schedule == "step_thirds")
        tc.schedule = trainer::LrSchedule::step_thirds;
    else
        throw ConfigError("train.schedule must be 'none' or 'step_thirds', got '" + t.schedule + "'");
    trainer::validate(tc, t.allow_zero_alpha);
    return tc;
}

struct TrainOutcome {
    trainer::TrainResult result;
    double seconds = 0.0;
};

inline TrainOutcome cmd_train(const RunConfig& c, std::ostream& log) {
    const auto tc = trainer_config(c);
    auto data = load_training_data(c, log);
    ensure_output_dir(c);

    trainer::ModelShape shape;
    shape.input_dim = data.examples.front().features.size();
    shape.hidden = c.train.hidden;
    shape.feature_dim = c.train.feature_dim;
    std::size_t max_label = 0;
    for (const auto& e : data.examples) max_label = std::max(max_label, e.label);
    shape.num_classes = std::max<std::size_t>(2, max_label + 1);
    shape.embed_dim = data.source.dim;
    if (tc.mode == trainer::TrainMode::mavias && data.source.kind == "none")
        log << "train: warning: no bias embeddings given, every sample takes the zero-bias path\n";

    trainer::BiasAwareModel model(shape, c.seed, c.train.projection_init_scale);
    const auto metrics_path = output_path(c, "metrics.csv");
    std::ofstream metrics(metrics_path);
    if (!metrics) throw ConfigError("cannot write '" + metrics_path.string() + "'");
    trainer::write_metrics_csv_header(metrics);

    const auto start = std::chrono::steady_clock::now();
    TrainOutcome out;
    out.result = trainer::train(model, data.examples, tc, [&](const trainer::EpochMetrics& m, const auto&) {
        trainer::write_metrics_csv_row(metrics, m);
        return true;
    });
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    trainer::save_model(output_path(c, "model.json").string(), model, tc.mode,
                        {{"embedding_source", to_json(data.source)},
                         {"alpha", tc.alpha},
                         {"lambda", tc.lambda},
                         {"seed", c.seed}});
    write_resolved_config(c, "train");
    const auto& last = out.result.epochs.back();
    log << "train: mode=" << c.train.mode << " epochs=" << out.result.epochs.size() << " cls_loss=" << last.cls_loss
        << " align_loss=" << last.align_loss << " train_acc=" << last.train_accuracy << " (" << out.seconds
        << " s) -> " << output_path(c, "model.json").string() << "\n";
    return out;
}

// ---------------------------------------------------------------------------
// eval

struct CheckpointBundle {
    trainer::BiasAwareModel model;
    trainer::TrainMode mode;
    EmbeddingSource source;
};

inline CheckpointBundle load_checkpoint(const std::string& path) {
    auto j = ad::read_checkpoint_json(path);
    try {
        const auto& meta = j.at("meta");
        auto loaded = trainer::load_model(path);
        EmbeddingSource src;
        if (meta.contains("extra") && meta["extra"].contains("embedding_source"))
            src = embedding_source_from_json(meta["extra"]["embedding_source"]);
        src.dim = loaded.model.shape().embed_dim;
        return {std::move(loaded.model), loaded.mode, src};
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint '" + path + "' is malformed: " + e.what());
    }
}

inline std::vector<std::size_t> predict_all(const trainer::BiasAwareModel& m, const trainer::Dataset& data,
                                            ad::DenseMatrix* logits = nullptr) {
    if (data.empty()) return {};
    auto batch = trainer::make_batch(data, m.shape());
    auto z = trainer::main_logits(m, batch.features);
    std::vector<std::size_t> pred(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) pred[i] = trainer::argmax(z.row_span(i));
    if (logits) *logits = std::move(z);
    return pred;
}

inline void check_input_dim(const trainer::BiasAwareModel& m, const trainer::Dataset& data, const std::string& what) {
    if (!data.empty() && data.front().features.size() != m.shape().input_dim)
        throw ConfigError(what + ": dataset has " + std::to_string(data.front().features.size()) +
                          " features, model expects " + std::to_string(m.shape().input_dim));
}

struct EvalOutcome {
    std::optional<eval::GroupMetrics> open_set;
    std::optional<eval::BiasedTagReport> biased_tags;
    std::optional<eval::ClosedSetMetrics> closed_set;
};

inline EvalOutcome cmd_eval(const RunConfig& c, std::ostream& log) {
    const auto& e = c.eval;
    require_file(e.checkpoint, "eval.checkpoint");
    require_file(e.dataset, "eval.dataset");
    if (e.protocol != "open" && e.protocol != "closed" && e.protocol != "both")
        throw ConfigError("eval.protocol must be 'open', 'closed' or 'both', got '" + e.protocol + "'");
    const bool want_open = e.protocol != "closed", want_closed = e.protocol != "open";
    if (e.protocol == "open") require_file(e.tags, "eval.tags");
    if (e.tags) require_file(e.tags, "eval.tags");
    if (e.reference_checkpoint) require_file(e.reference_checkpoint, "eval.reference_checkpoint");
    ensure_output_dir(c);

    auto ck = load_checkpoint(*e.checkpoint);
    auto records = synth::read_records(*e.dataset);
    if (records.empty()) throw ConfigError("eval.dataset is empty");
    auto data = attach_embeddings(records, EmbeddingSource{}, nullptr);
    check_input_dim(ck.model, data.examples, "eval");
    ad::DenseMatrix logits;
    const auto pred = predict_all(ck.model, data.examples, &logits);
    std::vector<std::size_t> labels;
    for (const auto& r : data.records) labels.push_back(r.label);
    const std::size_t p = ck.model.shape().num_classes;
    for (auto l : labels)
        if (l >= p) throw ConfigError("eval: label " + std::to_string(l) + " outside the model's classes");

    EvalOutcome out;
    nlohmann::json summary{{"checkpoint", *e.checkpoint}, {"dataset", *e.dataset}, {"protocol", e.protocol}};
    std::optional<eval::GroupAssignment> groups;

    if (want_open && e.tags) {
        std::map<std::string, std::vector<std::string>> irr;
        for (const auto& t : discovery::read_tag_records(*e.tags))
            irr[t.id] = t.irrelevant_tags.value_or(std::vector<std::string>{});
        std::vector<std::vector<std::string>> sample_tags;
        std::vector<std::vector<std::string>> candidates(p);
        std::vector<std::set<std::string>> cand_seen(p);
        for (const auto& r : data.records) {
            auto it = irr.find(r.id);
            sample_tags.push_back(it == irr.end() ? std::vector<std::string>{} : it->second);
            for (const auto& t : sample_tags.back())
                if (cand_seen[r.label].insert(t).second) candidates[r.label].push_back(t);
        }
        std::vector<std::size_t> ref_pred = pred;
        std::string reference = *e.checkpoint;
        if (e.reference_checkpoint) {
            auto ref = load_checkpoint(*e.reference_checkpoint);
            check_input_dim(ref.model, data.examples, "eval reference");
            ref_pred = predict_all(ref.model, data.examples);
            reference = *e.reference_checkpoint;
        }
        auto report = eval::identify_biased_tags(ref_pred, labels, sample_tags, p, e.min_support, &candidates);
        std::vector<std::string> names;
        for (std::size_t k = 0; k < p; ++k) {
            std::string n = std::to_string(k);
            for (const auto& r : data.records)
                if (r.label == k && r.class_name) {
                    n = *r.class_name;
                    break;
                }
            names.push_back(n);
        }
        groups = eval::form_open_set_groups(labels, sample_tags, report, names);
        auto gm = eval::group_metrics(pred, labels, *groups);
        {
            std::ofstream csv(output_path(c, "open_set_groups.csv"));
            if (!csv) throw ConfigError("cannot write open_set_groups.csv");
            eval::write_csv(csv, gm);
        }
        {
            std::ofstream csv(output_path(c, "top_biased_tags.csv"));
            if (!csv) throw ConfigError("cannot write top_biased_tags.csv");
            eval::write_top_tags_csv(csv, eval::rank_top_biased_tags(report, e.top_k), names);
        }
        write_json_file(output_path(c, "open_set.json"),
                        {{"reference_model", reference},
                         {"metrics", eval::to_json(gm)},
                         {"biased_tags", eval::to_json(report, names)}});
        summary["open_set"] = {{"worst_group_accuracy", gm.worst_group_accuracy},
                               {"average_accuracy", gm.average_accuracy},
                               {"weighted_accuracy", gm.weighted_accuracy}};
        log << "open-set: WG=" << eval::format_double(gm.worst_group_accuracy)
            << " Avg=" << eval::format_double(gm.average_accuracy) << " (" << gm.groups.size() << " groups)\n";
        for (const auto& w : gm.warnings) log << "open-set: warning: " << w << "\n";
        out.open_set = std::move(gm);
        out.biased_tags = std::move(report);
    } else if (want_open) {
        summary["open_set"] = "skipped: no eval.tags file";
        log << "open-set: skipped (no eval.tags file)\n";
    }

    const bool has_bias_info = std::all_of(data.records.begin(), data.records.end(),
                                           [](const auto& r) { return r.aligned && r.bias_mode; });
    if (want_closed && has_bias_info) {
        const std::size_t n = data.records.size();
        std::vector<std::size_t> bias;
        // std::vector<bool> has no contiguous storage to view as a span.
        auto aligned = std::make_unique<bool[]>(n);
        for (std::size_t i = 0; i < n; ++i) {
            bias.push_back(*data.records[i].bias_mode);
            aligned[i] = *data.records[i].aligned;
        }
        auto cm = eval::closed_set_metrics(pred, labels, bias, std::span<const bool>(aligned.get(), n));
        write_json_file(output_path(c, "closed_set.json"), eval::to_json(cm));
        summary["closed_set"] = eval::to_json(cm);
        log << "closed-set: bias-conflicting=" << eval::format_optional(cm.bias_conflict_accuracy)
            << " unbiased=" << eval::format_optional(cm.unbiased_accuracy) << "\n";
        out.closed_set = cm;
        if (!groups) {
            groups = eval::GroupAssignment{{"aligned", "conflicting"}, {}};
            for (const auto& r : data.records) groups->group_of.push_back(*r.aligned ? 0 : 1);
        }
    } else if (want_closed) {
        if (e.protocol == "closed") throw ConfigError("closed-set evaluation needs aligned and bias_mode on every record");
        summary["closed_set"] = "skipped: records lack aligned/bias_mode";
        log << "closed-set: skipped (records lack aligned/bias_mode)\n";
    }

    if (e.export_logits) {
        std::vector<nlohmann::json> rows;
        std::vector<double> max_logit;
        for (std::size_t i = 0; i < data.records.size(); ++i) {
            auto row = logits.row_span(i);
            std::vector<double> z(row.begin(), row.end());
            max_logit.push_back(*std::max_element(z.begin(), z.end()));
            nlohmann::json j{{"id", data.records[i].id}, {"label", labels[i]}, {"prediction", pred[i]}, {"z_main", z}};
            if (groups) j["group"] = groups->names[groups->group_of[i]];
            rows.push_back(std::move(j));
        }
        discovery::write_jsonl(output_path(c, "logits.jsonl").string(), rows);
        if (!groups) groups = eval::GroupAssignment{{"all"}, std::vector<std::size_t>(data.records.size(), 0)};
        write_json_file(output_path(c, "logit_distribution.json"),
                        eval::to_json(eval::logit_distribution_by_group(max_logit, *groups)));
    }
    write_json_file(output_path(c, "eval_summary.json"), summary);
    write_resolved_config(c, "eval");
    return out;
}

// ---------------------------------------------------------------------------
// diagnose

struct DiagnoseOutcome {
    std::optional<trainer::GradientDiagnostic> gradient;
    /// Empty for vanilla checkpoints.
    std::vector<trainer::BranchGroupAccuracy> bias_branch;
    bool bias_branch_applicable = false;
};

inline DiagnoseOutcome cmd_diagnose(const RunConfig& c, std::ostream& log) {
    const auto& g = c.diagnose;
    require_file(g.checkpoint, "diagnose.checkpoint");
    require_file(g.dataset, "diagnose.dataset");
    if (g.embeddings) require_file(g.embeddings, "diagnose.embeddings");
    ensure_output_dir(c);
    auto ck = load_checkpoint(*g.checkpoint);
    auto records = synth::read_records(*g.dataset);
    for (const auto& r : records)
        if (!r.aligned) throw ConfigError("diagnose: record '" + r.id + "' lacks the 'aligned' flag");

    EmbeddingSource src = ck.source;
    std::map<std::string, std::vector<double>> vectors;
    if (g.embeddings) {
        src.kind = "file";
        std::size_t dim = 0;
        vectors = load_embedding_file(*g.embeddings, dim);
        if (!vectors.empty() && dim != ck.model.shape().embed_dim)
            throw ConfigError("diagnose.embeddings have length " + std::to_string(dim) + ", model expects " +
                              std::to_string(ck.model.shape().embed_dim));
    } else if (src.kind == "file") {
        log << "diagnose: no embeddings file given, bias branch sees e = 0\n";
        src.kind = "none";
    }
    auto data = attach_embeddings(std::move(records), src, &vectors);
    check_input_dim(ck.model, data.examples, "diagnose");

    trainer::Dataset aligned, conflicting;
    std::vector<std::size_t> group_of;
    std::vector<std::string> names{"aligned", "conflicting"};
    const bool by_mode = std::all_of(data.records.begin(), data.records.end(), [](const auto& r) { return r.bias_mode.has_value(); });
    std::size_t modes = 0;
    if (by_mode)
        for (const auto& r : data.records) modes = std::max(modes, *r.bias_mode + 1);
    for (std::size_t i = 0; i < data.records.size(); ++i) {
        const bool a = *data.records[i].aligned;
        (a ? aligned : conflicting).push_back(data.examples[i]);
        group_of.push_back(a ? 0 : 1);
    }

    DiagnoseOutcome out;
    nlohmann::json report{{"checkpoint", *g.checkpoint}, {"mode", trainer::to_string(ck.mode)}};
    std::ofstream csv(output_path(c, "diagnostics.csv"));
    if (!csv) throw ConfigError("cannot write diagnostics.csv");
    csv << "section,group,count,value\n";

    if (!aligned.empty() && !conflicting.empty()) {
        out.gradient = trainer::gradient_diagnostic(ck.model, aligned, conflicting, ck.mode);
        report["gradient"] = trainer::to_json(*out.gradient);
        csv << "grad_norm,aligned," << aligned.size() << ',' << eval::format_double(out.gradient->mean_grad_norm_aligned)
            << "\ngrad_norm,conflicting," << conflicting.size() << ','
            << eval::format_double(out.gradient->mean_grad_norm_conflicting) << "\ngrad_norm,ratio,,"
            << eval::format_double(out.gradient->ratio) << '\n';
        log << "gradient: mean CE grad norm aligned=" << out.gradient->mean_grad_norm_aligned
            << " conflicting=" << out.gradient->mean_grad_norm_conflicting << " ratio=" << out.gradient->ratio << "\n";
    } else {
        const std::string missing = aligned.empty() ? "aligned" : "conflicting";
        report["gradient"] = {{"absent", "group '" + missing + "' is empty"}};
        csv << "grad_norm," << missing << ",0,\n";
        log << "gradient: absent (group '" << missing << "' is empty)\n";
    }

    if (ck.mode == trainer::TrainMode::vanilla) {
        report["bias_branch"] = "inapplicable: vanilla checkpoint has no trained bias branch";
        log << "bias branch: inapplicable (vanilla checkpoint)\n";
    } else {
        out.bias_branch_applicable = true;
        // Fine groups: label x bias mode, when the records carry bias modes.
        if (by_mode) {
            std::size_t p = ck.model.shape().num_classes;
            for (std::size_t k = 0; k < p; ++k)
                for (std::size_t m = 0; m < modes; ++m) names.push_back("class" + std::to_string(k) + "/mode" + std::to_string(m));
        }
        trainer::Dataset all = data.examples;
        std::vector<std::size_t> gof = group_of;
        if (by_mode) {
            // Evaluate twice: once for aligned/conflicting, once for the fine groups.
            for (std::size_t i = 0; i < data.records.size(); ++i) {
                all.push_back(data.examples[i]);
                gof.push_back(2 + data.records[i].label * modes + *data.records[i].bias_mode);
            }
        }
        out.bias_branch = trainer::bias_branch_group_accuracy(ck.model, all, gof, names);
        nlohmann::json rows = nlohmann::json::array();
        log << "bias branch accuracy (argmax z_tag):\n";
        for (const auto& b : out.bias_branch) {
            rows.push_back({{"group", b.group}, {"count", b.count}, {"accuracy", eval::optional_json(b.accuracy)}});
            csv << "bias_branch," << b.group << ',' << b.count << ',' << eval::format_optional(b.accuracy) << '\n';
            log << "  " << b.group << ": " << b.count << " samples, "
                << (b.accuracy ? eval::format_double(*b.accuracy) : std::string("absent")) << "\n";
        }
        report["bias_branch"] = rows;
    }
    write_json_file(output_path(c, "diagnostics.json"), report);
    write_resolved_config(c, "diagnose");
    return out;
}

} // namespace mavias::cli

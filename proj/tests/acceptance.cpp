// Acceptance harness: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "oracles.hpp"

#include "mavias/cli/commands.hpp"
#include "mavias/discovery/pipeline.hpp"
#include "mavias/trainer/diagnostics.hpp"
#include "mavias/trainer/presets.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace mavias;
using trainer::BiasAwareModel;
using trainer::Dataset;
using trainer::TrainMode;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeeds[] = {0, 1, 2, 3, 4};
constexpr std::uint64_t kTestSeedOffset = 7777;

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
    std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

std::string fmt(double v, int prec = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

std::string sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

Dataset to_dataset(const std::vector<synth::BiasedSample>& s) {
    Dataset d;
    for (const auto& x : s) d.push_back({x.features, x.bias_embedding, x.label});
    return d;
}

/// Everything the two-moons criteria need for one seed.
struct SeedRun {
    std::vector<synth::BiasedSample> train_samples, test_samples;
    Dataset train, test;
    std::unique_ptr<BiasAwareModel> vanilla, mavias, ablation;
    double seconds_vanilla_plus_mavias = 0.0;
};

SeedRun run_seed(std::uint64_t seed) {
    SeedRun r;
    synth::TwoMoons3DConfig tc;
    tc.seed = seed;
    r.train_samples = synth::generate_two_moons_3d(tc);
    tc.align_rate = 0.5;
    tc.seed = seed + kTestSeedOffset;
    r.test_samples = synth::generate_two_moons_3d(tc);
    r.train = to_dataset(r.train_samples);
    r.test = to_dataset(r.test_samples);

    const auto preset = trainer::two_moons_preset(seed);
    auto fit = [&](TrainMode mode, double alpha) {
        auto m = std::make_unique<BiasAwareModel>(preset.shape, seed, preset.projection_init_scale);
        auto cfg = preset.config;
        cfg.mode = mode;
        cfg.alpha = alpha;
        trainer::train(*m, r.train, cfg);
        return m;
    };
    const auto t0 = std::chrono::steady_clock::now();
    r.vanilla = fit(TrainMode::vanilla, preset.config.alpha);
    r.mavias = fit(TrainMode::mavias, preset.config.alpha);
    r.seconds_vanilla_plus_mavias = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.ablation = fit(TrainMode::mavias, 0.0);
    return r;
}

ad::DenseMatrix feature_matrix(const Dataset& d) {
    ad::DenseMatrix X(d.size(), d.at(0).features.size());
    for (std::size_t i = 0; i < d.size(); ++i)
        std::copy(d[i].features.begin(), d[i].features.end(), X.row_span(i).begin());
    return X;
}

std::vector<std::size_t> predictions(const BiasAwareModel& m, const Dataset& d) {
    auto Z = trainer::main_logits(m, feature_matrix(d));
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < d.size(); ++i) out.push_back(trainer::argmax(Z.row_span(i)));
    return out;
}

double conflicting_accuracy(const BiasAwareModel& m, const SeedRun& r) {
    auto pred = predictions(m, r.test);
    std::size_t n = 0, ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (r.test_samples[i].aligned) continue;
        ++n;
        ok += pred[i] == r.test[i].label;
    }
    return static_cast<double>(ok) / static_cast<double>(n);
}

/// |mean max main logit over aligned - mean over conflicting| on the training split.
double max_logit_gap(const BiasAwareModel& m, const SeedRun& r) {
    auto Z = trainer::main_logits(m, feature_matrix(r.train));
    double sa = 0.0, sc = 0.0;
    std::size_t na = 0, nc = 0;
    for (std::size_t i = 0; i < r.train.size(); ++i) {
        auto row = Z.row_span(i);
        const double mx = *std::max_element(row.begin(), row.end());
        if (r.train_samples[i].aligned) {
            sa += mx;
            ++na;
        } else {
            sc += mx;
            ++nc;
        }
    }
    return std::abs(sa / static_cast<double>(na) - sc / static_cast<double>(nc));
}

void split_by_alignment(const SeedRun& r, Dataset& aligned, Dataset& conflicting) {
    for (std::size_t i = 0; i < r.train.size(); ++i)
        (r.train_samples[i].aligned ? aligned : conflicting).push_back(r.train[i]);
}

void criteria_two_moons() {
    std::vector<SeedRun> runs;
    for (auto s : kSeeds) runs.push_back(run_seed(s));
    const double n = static_cast<double>(runs.size());

    // 1
    double sum_v = 0.0, sum_m = 0.0, worst_time = 0.0;
    std::string per_seed;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const double v = conflicting_accuracy(*runs[k].vanilla, runs[k]);
        const double m = conflicting_accuracy(*runs[k].mavias, runs[k]);
        sum_v += v;
        sum_m += m;
        worst_time = std::max(worst_time, runs[k].seconds_vanilla_plus_mavias);
        per_seed += " s" + std::to_string(kSeeds[k]) + "=" + fmt(v) + "/" + fmt(m);
    }
    const double mean_v = sum_v / n, mean_m = sum_m / n;
    report(1, mean_v < 0.6 && mean_m > 0.9 && worst_time <= 60.0,
           "bias-conflicting test accuracy over " + std::to_string(runs.size()) + " seeds: vanilla " + fmt(mean_v) +
               " (< 0.6), mavias " + fmt(mean_m) + " (> 0.9); per seed vanilla/mavias" + per_seed +
               "; slowest seed trained both models in " + fmt(worst_time, 1) + " s (<= 60 s)");

    // 2
    int wins = 0;
    std::string ratios;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        Dataset al, co;
        split_by_alignment(runs[k], al, co);
        const auto d = trainer::gradient_diagnostic(*runs[k].mavias, al, co, TrainMode::mavias);
        wins += d.ratio < 1.0;
        ratios += " " + fmt(d.ratio);
    }
    report(2, wins >= 4,
           "aligned/conflicting mean CE-gradient norm ratio < 1 in " + std::to_string(wins) + "/5 seeds (need 4):" +
               ratios);

    // 3
    wins = 0;
    std::string gaps;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const double gv = max_logit_gap(*runs[k].vanilla, runs[k]);
        const double gm = max_logit_gap(*runs[k].mavias, runs[k]);
        wins += gm < gv;
        gaps += " " + fmt(gv) + "->" + fmt(gm);
    }
    report(3, wins >= 4,
           "mavias max-logit gap below vanilla in " + std::to_string(wins) + "/5 seeds (need 4), vanilla->mavias:" +
               gaps);

    // 4
    double sum_diff = 0.0, min_diff = 1.0;
    std::string diffs;
    for (const auto& r : runs) {
        std::vector<std::size_t> group_of;
        for (const auto& s : r.train_samples) group_of.push_back(s.aligned ? 0 : 1);
        auto acc = trainer::bias_branch_group_accuracy(*r.mavias, r.train, group_of, {"aligned", "conflicting"});
        const double d = acc[0].accuracy.value() - acc[1].accuracy.value();
        sum_diff += d;
        min_diff = std::min(min_diff, d);
        diffs += " " + fmt(d);
    }
    report(4, min_diff >= 0.2,
           "bias-branch accuracy aligned minus conflicting >= 0.20 in every seed (min " + fmt(min_diff) + ", mean " +
               fmt(sum_diff / n) + "):" + diffs);

    // 5
    wins = 0;
    std::string wgs;
    const auto scheme = synth::two_moons_tag_scheme();
    for (const auto& r : runs) {
        std::vector<std::size_t> labels;
        std::vector<std::vector<std::string>> tags;
        for (const auto& s : r.test_samples) {
            labels.push_back(s.label);
            tags.push_back({scheme.bias_tags.at(s.bias_mode)});
        }
        auto rep = eval::identify_biased_tags(predictions(*r.vanilla, r.test), labels, tags, 2);
        auto groups = eval::form_open_set_groups(labels, tags, rep, synth::two_moons_class_names());
        const double full = eval::group_metrics(predictions(*r.mavias, r.test), labels, groups).worst_group_accuracy;
        const double abl = eval::group_metrics(predictions(*r.ablation, r.test), labels, groups).worst_group_accuracy;
        wins += full > abl;
        wgs += " " + fmt(abl) + "->" + fmt(full);
    }
    report(5, wins >= 4,
           "open-set worst-group accuracy higher with the alignment term in " + std::to_string(wins) +
               "/5 seeds (need 4), alpha=0 -> alpha=0.6:" + wgs);
}

void criterion_gradients() {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed + 1000);
        std::uniform_int_distribution<std::size_t> dim(1, 4), depth(0, 2);
        trainer::ModelShape s;
        s.input_dim = dim(rng);
        s.hidden.clear();
        for (std::size_t k = depth(rng); k > 0; --k) s.hidden.push_back(dim(rng) + 1);
        s.feature_dim = dim(rng) + 1;
        s.num_classes = dim(rng) + 1;
        s.embed_dim = dim(rng);
        BiasAwareModel m(s, seed);
        std::normal_distribution<double> g(0.0, 1.0);
        for (auto& p : m.params())
            for (double& v : p.value.values()) v += 0.1 * g(rng);
        const std::size_t n = 6;
        trainer::Batch b{ad::DenseMatrix(n, s.input_dim), ad::DenseMatrix(n, s.embed_dim), {}};
        for (double& v : b.features.values()) v = g(rng);
        for (double& v : b.embeddings.values()) v = g(rng);
        if (seed % 2 == 0) std::fill(b.embeddings.row_span(0).begin(), b.embeddings.row_span(0).end(), 0.0);
        std::uniform_int_distribution<std::size_t> lab(0, s.num_classes - 1);
        for (std::size_t i = 0; i < n; ++i) b.labels.push_back(lab(rng));
        std::uniform_real_distribution<double> u(0.05, 0.95);
        auto res = trainer::finite_difference_check(m, b, TrainMode::mavias, u(rng), u(rng), {.seed = seed});
        worst = std::max(worst, res.max_relative_error);
    }
    const double zm_a[] = {3.0, 4.0}, zt_a[] = {0.0, 2.0};
    const double zm_b[] = {0.0, 0.0}, zt_b[] = {2.0, 0.0};
    const double a = trainer::alignment_loss(zm_a, zt_a, 0.5);
    const double b = trainer::alignment_loss(zm_b, zt_b, 0.5);
    report(6, worst < 1e-4 && a == 8.0 && b == 0.5,
           "max relative gradient error over 20 random models " + sci(worst) + " (< 1e-4); alignment_loss hand cases " + fmt(a, 6) + " (8.0) and " + fmt(b, 6) + " (0.5)");
}

void criterion_oracles() {
    std::size_t checks = 0, mismatches = 0;
    std::string first_bad;
    auto note = [&](bool ok, const std::string& what) {
        ++checks;
        if (!ok && mismatches++ == 0) first_bad = what;
    };
    const std::size_t sizes[][3] = {{20, 5, 2}, {1000, 100, 3}, {10000, 1000, 4}};
    for (std::uint64_t seed = 0; seed < 3; ++seed)
        for (const auto& sz : sizes) {
            auto inst = oracle::random_tag_instance(sz[0], sz[1], sz[2], seed + 50);
            for (std::size_t min_support : {1u, 5u}) {
                auto rep = eval::identify_biased_tags(inst.predictions, inst.labels, inst.tags, inst.num_classes,
                                                      min_support);
                std::string why;
                note(oracle::same_report(rep, inst, min_support, &why), "identify_biased_tags: " + why);
            }
        }
    std::mt19937_64 rng(77);
    for (std::size_t n : {1u, 100u, 10000u}) {
        for (std::size_t G : {1u, 4u, 8u}) {
            std::uniform_int_distribution<std::size_t> g(0, G - 1), y(0, 3), b(0, 2);
            std::bernoulli_distribution al(0.7);
            std::vector<std::size_t> pred(n), labels(n), group_of(n), bias(n);
            std::vector<bool> aligned(n);
            auto flags = std::make_unique<bool[]>(n);
            for (std::size_t i = 0; i < n; ++i) {
                labels[i] = y(rng);
                pred[i] = y(rng);
                group_of[i] = g(rng);
                bias[i] = b(rng);
                aligned[i] = flags[i] = al(rng);
            }
            eval::GroupAssignment ga;
            for (std::size_t k = 0; k < G; ++k) ga.names.push_back("g" + std::to_string(k));
            ga.group_of = group_of;
            auto m = eval::group_metrics(pred, labels, ga);
            note(oracle::same_group_metrics(m, oracle::group_metrics(pred, labels, group_of, G)), "group_metrics");
            auto cs = eval::closed_set_metrics(pred, labels, bias, std::span<const bool>(flags.get(), n));
            auto o = oracle::closed_set(pred, labels, bias, aligned);
            note(cs.bias_conflict_accuracy == o.conflict && cs.unbiased_accuracy == o.unbiased, "closed_set_metrics");
        }
    }
    for (std::uint64_t seed = 0; seed < 3; ++seed)
        for (std::size_t vocab : {1u, 100u, 1000u}) {
            auto f = oracle::random_filter_instance(vocab, 10, seed);
            auto got = discovery::evaluate_filter(f.predicted, discovery::RelevanceGroundTruth{f.truth});
            note(oracle::same_filter_score(got, oracle::filter_score(f.predicted, f.truth, f.vocab, f.classes)),
                 "evaluate_filter");
        }
    report(7, mismatches == 0,
           std::to_string(checks - mismatches) + "/" + std::to_string(checks) +
               " randomized instances (up to 10000 samples, 1000 tags) match the brute-force oracles exactly" +
               (mismatches ? "; first mismatch: " + first_bad : ""));
}

class CountingRelevance final : public discovery::RelevanceClient {
public:
    std::string complete(const discovery::ChatRequest&) override {
        ++calls;
        return R"({"relevant_tags": []})";
    }
    std::atomic<std::size_t> calls{0};
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// synth -> discover -> train (mavias, vanilla) -> eval with mock clients; returns every output file's bytes.
std::map<std::string, std::string> mock_pipeline(const fs::path& root) {
    fs::remove_all(root);
    auto stage = [&](const std::string& dir, nlohmann::json j) {
        j["output_dir"] = (root / dir).string();
        j["seed"] = 11;
        return cli::parse_run_config(j);
    };
    auto p = [&](const std::string& rel) { return (root / rel).string(); };
    std::ostringstream log;
    nlohmann::json small = {{"n", 1000}, {"test_n", 1000}, {"distractor_rate", 0.3}};
    cli::cmd_synth(stage("data", {{"synth", small}}), log);
    cli::cmd_discover(stage("disc_train", {{"discovery", {{"input", p("data/train.jsonl")}}}}), log);
    cli::cmd_discover(stage("disc_test", {{"discovery", {{"input", p("data/test.jsonl")}}}}), log);
    nlohmann::json train = {{"dataset", p("data/train.jsonl")}, {"embeddings", p("disc_train/embeddings.jsonl")},
                            {"epochs", 4}};
    cli::cmd_train(stage("mavias", {{"train", train}}), log);
    train["mode"] = "vanilla";
    cli::cmd_train(stage("vanilla", {{"train", train}}), log);
    cli::cmd_eval(stage("eval", {{"eval",
                                  {{"checkpoint", p("mavias/model.json")},
                                   {"dataset", p("data/test.jsonl")},
                                   {"tags", p("disc_test/tags.jsonl")},
                                   {"reference_checkpoint", p("vanilla/model.json")}}}}),
                  log);
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
    return files;
}

void criterion_pipeline() {
    std::vector<std::string> tags;
    for (int i = 0; i < 250; ++i) tags.push_back("tag" + std::to_string(i));
    CountingRelevance client;
    auto out = discovery::filter_relevant_tags("dog", tags, client);
    const bool calls_ok = client.calls.load() == 3 && out.calls == 3;

    const std::string resource = slurp(fs::path(MAVIAS_RESOURCE_DIR) / "relevance_system_prompt_v1.txt");
    const bool prompt_ok = !resource.empty() && resource == std::string(discovery::kRelevanceSystemPrompt);

    const auto root = fs::temp_directory_path() / ("mavias_acceptance_" + std::to_string(::getpid()));
    bool repro_ok = false;
    std::string repro_detail;
    try {
        auto first = mock_pipeline(root / "run");
        auto second = mock_pipeline(root / "run");
        std::size_t differing = 0;
        for (const auto& [name, bytes] : first)
            if (!second.contains(name) || second.at(name) != bytes) ++differing;
        const bool has_eval = first.contains("eval/open_set_groups.csv") && first.contains("mavias/model.json");
        repro_ok = differing == 0 && first.size() == second.size() && has_eval;
        repro_detail = std::to_string(first.size()) + " output files, " + std::to_string(differing) + " differ";
    } catch (const std::exception& e) {
        repro_detail = std::string("pipeline threw: ") + e.what();
    }
    fs::remove_all(root);
    report(8, calls_ok && prompt_ok && repro_ok,
           std::to_string(client.calls.load()) + " relevance calls for 250 tags (3); stored prompt " +
               (prompt_ok ? "byte-identical to" : "DIFFERS from") +
               " resource; mock synth->discover->train->eval run twice: " + repro_detail);
}

void criterion_reduction() {
    const std::uint64_t seed = 0;
    synth::TwoMoons3DConfig tc;
    tc.seed = seed;
    auto data = to_dataset(synth::generate_two_moons_3d(tc));
    Dataset zeroed = data;
    for (auto& ex : zeroed) std::fill(ex.embedding.begin(), ex.embedding.end(), 0.0);
    const auto preset = trainer::two_moons_preset(seed);

    auto trajectory = [&](TrainMode mode, const Dataset& d, std::vector<ad::ParameterStore>& out) {
        BiasAwareModel m(preset.shape, seed, preset.projection_init_scale);
        out.push_back(m.params());
        auto cfg = preset.config;
        cfg.mode = mode;
        cfg.alpha = 0.0;
        trainer::train(m, d, cfg, [&](const trainer::EpochMetrics&, const BiasAwareModel& mm) {
            out.push_back(mm.params());
            return true;
        });
    };
    std::vector<ad::ParameterStore> tv, tm;
    trajectory(TrainMode::vanilla, data, tv);
    trajectory(TrainMode::mavias, zeroed, tm);
    std::size_t compared = 0, differing = 0;
    for (std::size_t e = 0; e < std::min(tv.size(), tm.size()); ++e)
        for (std::size_t i = 0; i < tv[e].size(); ++i) {
            ++compared;
            differing += !(tv[e][ad::ParamRef{i}].value == tm[e][ad::ParamRef{i}].value);
        }
    report(9, tv.size() == tm.size() && differing == 0,
           "alpha=0, e=0 mavias vs vanilla over " + std::to_string(tv.size() - 1) + " epochs: " +
               std::to_string(compared - differing) + "/" + std::to_string(compared) +
               " parameter tensors bit-identical");
}

} // namespace

int main() {
    criteria_two_moons();
    criterion_gradients();
    criterion_oracles();
    criterion_pipeline();
    criterion_reduction();
    std::printf("%s: %d criterion(s) failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rgsym/error.hpp"
#include "rgsym/experiments.hpp"

using namespace rgsym;

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ExperimentConfig small_gaussian() {
    ExperimentConfig c;
    c.task = TaskKind::gaussian;
    c.conditions = {Condition::parse("free/linear"), Condition::parse("symmetric/relu")};
    c.variances = {0.5, 2.0};
    c.n_samples = 5000;
    c.seeds = {0};
    return c;
}

ExperimentConfig small_uniform(int steps) {
    ExperimentConfig c;
    c.task = TaskKind::uniform;
    c.conditions = {Condition::parse("free/linear"), Condition::parse("symmetric/quadratic:0.5")};
    c.rg_steps = steps;
    c.n_samples = 5000;
    c.seeds = {3};
    return c;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("condition descriptors") {
    const auto c = Condition::parse("symmetric/quadratic:0.5");
    CHECK(c.weights == "symmetric");
    CHECK(c.activation.kind == ActivationKind::Kind::quadratic);
    CHECK(c.name() == "symmetric/quadratic:0.5");
    CHECK(Condition::parse(c.name()).name() == c.name());
    CHECK(Condition::parse("free/leaky:0.95").name() == "free/leaky:0.95");
    CHECK(Condition::parse("frozen/spline:12").name() == "frozen/spline:12");

    const auto spec = Condition::parse("frozen/spline:12").network(SplineConfig{});
    CHECK_FALSE(spec.train_weights);
    CHECK(spec.activation.spline.n_ctrl == 12);
    CHECK(Condition::parse("symmetric/linear").network(SplineConfig{}).symmetric_tying);

    CHECK_THROWS_AS(Condition::parse("frozen/relu"), DomainError);
    CHECK_THROWS_AS(Condition::parse("tied/relu"), DomainError);
    CHECK_THROWS_AS(Condition::parse("relu"), DomainError);
    CHECK_THROWS_AS(Condition::parse("free/leaky:1.5"), DomainError);
}

TEST_CASE("config validation and JSON round trip") {
    ExperimentConfig c = small_uniform(4);
    c.spline.n_ctrl = 12;
    c.gnn_train.sym_reg_weight = 0.01;
    c.kl_floor = 1e-10;
    const nlohmann::json j = c;
    ExperimentConfig back;
    from_json(j, back);
    CHECK(nlohmann::json(back) == j);

    ExperimentConfig partial;
    from_json(nlohmann::json{{"rg_steps", 3}}, partial);
    CHECK(partial.rg_steps == 3);
    CHECK(partial.n_samples == 1'000'000);
    CHECK(partial.seeds.size() == 5);

    auto bad = small_gaussian();
    bad.seeds.clear();
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad = small_gaussian();
    bad.n_samples = 999;
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad = small_gaussian();
    bad.variances = {1.0, -1.0};
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad = small_gaussian();
    bad.variances.clear();
    CHECK_THROWS_AS(bad.validate(), DomainError);
    CHECK_NOTHROW(small_gaussian().validate());
    CHECK_THROWS_AS(parse_task("nope"), DomainError);
    CHECK(parse_task("gnn_validate") == TaskKind::gnn_validate);
}

TEST_CASE("derive_seed is stable and separates purposes") {
    CHECK(derive_seed(3, "init", 1, 2) == derive_seed(3, "init", 1, 2));
    std::set<std::uint64_t> seen;
    for (std::uint64_t base = 0; base < 5; ++base)
        for (const char* p : {"init", "train", "test", "repair"})
            for (std::uint64_t a = 0; a < 5; ++a) seen.insert(derive_seed(base, p, a));
    CHECK(seen.size() == 5 * 4 * 5);
    CHECK(derive_seed(0, "x", 0, 1) != derive_seed(0, "x", 1, 0));
}

TEST_CASE("adding seeds leaves shared-seed rows unchanged") {
    auto one = small_gaussian();
    auto two = one;
    two.seeds = {0, 1};
    const auto a = lines(results_csv(run_experiment(one)));
    const auto b = lines(results_csv(run_experiment(two)));
    std::vector<std::string> b0;
    for (std::size_t i = 1; i < b.size(); ++i)
        if (split(b[i]).at(1) == "0") b0.push_back(b[i]);
    CHECK(std::vector<std::string>(a.begin() + 1, a.end()) == b0);
    CHECK(b.size() == 1 + 2 * (a.size() - 1));

    auto u1 = small_uniform(2);
    auto u2 = u1;
    u2.seeds = {3, 4};
    u2.conditions.push_back(Condition::parse("free/relu"));
    const auto ua = lines(results_csv(run_experiment(u1)));
    std::set<std::string> ub;
    for (const auto& l : lines(results_csv(run_experiment(u2)))) ub.insert(l);
    for (std::size_t i = 1; i < ua.size(); ++i) CHECK(ub.count(ua[i]) == 1);
}

TEST_CASE("emitted files are byte-identical on rerun") {
    const auto root = std::filesystem::temp_directory_path() / "rgsym_test_exp";
    std::filesystem::remove_all(root);
    const auto cfg = small_uniform(3);
    emit_results(run_experiment(cfg), root / "a");
    emit_results(run_experiment(cfg), root / "b");
    for (const char* f : {"results.csv", "manifest.json", "dkl_vs_variance.csv", "deviation_vs_step.csv"}) {
        CAPTURE(f);
        REQUIRE(std::filesystem::exists(root / "a" / f));
        CHECK(slurp(root / "a" / f) == slurp(root / "b" / f));
    }

    const auto m = nlohmann::json::parse(slurp(root / "a" / "manifest.json"));
    ExperimentConfig back;
    from_json(m.at("config"), back);
    CHECK(nlohmann::json(back) == nlohmann::json(cfg));
    CHECK(m.at("code_version") == code_version());
    CHECK(m.contains("aggregates"));
    std::filesystem::remove_all(root);
}

TEST_CASE("rows carry condition, seed and the design parameters") {
    auto cfg = small_uniform(2);
    cfg.spline.n_ctrl = 9;
    cfg.gnn_train.norm_floor = 0.2;
    const auto text = results_csv(run_experiment(cfg));
    const auto ls = lines(text);
    const auto header = split(ls.at(0));
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* k : {"condition", "seed", "rg_step", "d_kl", "entropy", "d_kl_norm", "dev_k2_pct", "dev_k3_pct",
                          "dev_k4_pct", "flags", "spline_knots", "spline_smooth_weight", "sym_reg_weight",
                          "norm_penalty_weight", "norm_floor", "kl_floor", "d_kl_norm_paired"})
        CHECK(col.count(k) == 1);
    REQUIRE(ls.size() == 1 + 2 * 2);
    for (std::size_t i = 1; i < ls.size(); ++i) {
        const auto r = split(ls[i]);
        REQUIRE(r.size() == header.size());
        CHECK(r[col["seed"]] == "3");
        CHECK(r[col["spline_knots"]] == "9");
        CHECK(r[col["norm_floor"]] == "0.2");
        CHECK(r[col["kl_floor"]] == "1e-12");
    }
}

TEST_CASE("zero RG steps give empty trajectories and valid files") {
    const auto dir = std::filesystem::temp_directory_path() / "rgsym_test_exp0";
    std::filesystem::remove_all(dir);
    const auto t = run_experiment(small_uniform(0));
    CHECK(t.rows.empty());
    REQUIRE(t.trajectories.size() == 2);
    for (const auto& tr : t.trajectories) CHECK(tr.steps.empty());
    emit_results(t, dir);
    CHECK(lines(slurp(dir / "results.csv")).size() == 1);
    CHECK_NOTHROW((void)nlohmann::json::parse(slurp(dir / "manifest.json")));
    std::filesystem::remove_all(dir);
}

TEST_CASE("an empty seed list fails before any file is written") {
    const auto dir = std::filesystem::temp_directory_path() / "rgsym_test_exp_empty";
    std::filesystem::remove_all(dir);
    auto cfg = small_gaussian();
    cfg.seeds.clear();
    CHECK_THROWS_AS(run_experiment(cfg), DomainError);
    ResultTable t;
    t.config = cfg;
    CHECK_THROWS_AS(emit_results(t, dir), DomainError);
    CHECK_FALSE(std::filesystem::exists(dir));
}

TEST_CASE("trajectory steps are contiguous from zero") {
    const auto t = run_experiment(small_uniform(4));
    for (const auto& tr : t.trajectories) {
        for (std::size_t i = 0; i < tr.steps.size(); ++i) CHECK(tr.steps[i].rg_step == static_cast<int>(i));
        if (!tr.truncated) CHECK(tr.steps.size() == 4);
    }
}

TEST_CASE("linear baseline never underperforms symmetric relu on the Gaussian task") {
    ExperimentConfig c;
    c.task = TaskKind::gaussian;
    c.conditions = {Condition::parse("free/linear"), Condition::parse("symmetric/relu")};
    c.n_samples = 100'000;
    c.seeds = {0, 1, 2};
    const auto t = run_experiment(c);
    std::map<std::pair<std::string, double>, std::vector<double>> dkl;
    for (const auto& r : t.rows)
        if (r.metrics.d_kl_normalised) dkl[{r.condition, *r.variance}].push_back(*r.metrics.d_kl_normalised);
    for (double v : c.variances) {
        CAPTURE(v);
        const auto& lin = dkl[{"free/linear", v}];
        const auto& relu = dkl[{"symmetric/relu", v}];
        REQUIRE(lin.size() == 3);
        REQUIRE_FALSE(relu.empty());
        CHECK(mean_of(lin) <= mean_of(relu));
    }
}

TEST_CASE("leaky 0.95 and spline conditions run to completion") {
    ExperimentConfig c;
    c.task = TaskKind::uniform;
    c.conditions = {Condition::parse("free/leaky:0.95"), Condition::parse("symmetric/leaky:0.95"),
                    Condition::parse("free/spline:16"), Condition::parse("frozen/spline:16")};
    c.rg_steps = 3;
    c.n_samples = 10'000;
    c.seeds = {0};
    const auto t = run_experiment(c);
    CHECK(t.trajectories.size() == 4);
    for (const auto& r : t.rows) {
        CAPTURE(r.condition);
        if (r.train.diverged) continue;
        CHECK(std::isfinite(r.metrics.d_kl));
        CHECK(r.output_cumulants.dim == 1);
        if (r.condition.find("spline") != std::string::npos) CHECK(r.train.spline_nonlinearity.has_value());
    }
}

TEST_CASE("gnn tasks emit sampled and propagated rows") {
    ExperimentConfig c;
    c.task = TaskKind::gnn_validate;
    c.rg_steps = 2;
    c.n_samples = 20'000;
    c.seeds = {1};
    const auto t = run_experiment(c);
    std::set<std::string> names;
    for (const auto& r : t.rows) names.insert(r.condition);
    CHECK(names.count("gnn/propagated") == 1);
    CHECK(names.count("gnn/sampled") == 1);
    CHECK(names.count("mlp/propagated") == 1);

    c.task = TaskKind::gnn_generalise;
    const auto g = run_experiment(c);
    std::set<std::string> gnames;
    for (const auto& r : g.rows) gnames.insert(r.condition);
    CHECK(gnames.count("gnn/sampled") == 1);
    CHECK(gnames.count("mlp/sampled") == 1);
}

TEST_CASE("all-trainable spline learns a linear map on the uniform task") {
    ExperimentConfig c;
    c.task = TaskKind::uniform;
    c.conditions = {Condition::parse("free/linear"), Condition::parse("free/spline:16")};
    c.n_samples = 1'000'000;
    c.seeds = {0, 1};
    const auto t = run_experiment(c);
    std::map<std::pair<std::string, int>, std::vector<double>> dkl, k2;
    for (const auto& r : t.rows) {
        REQUIRE_FALSE(r.train.diverged);
        REQUIRE(r.metrics.d_kl_normalised.has_value());
        dkl[{r.condition, r.rg_step}].push_back(*r.metrics.d_kl_normalised);
        k2[{r.condition, r.rg_step}].push_back(*r.metrics.cumulant_deviation_pct.at(2));
        if (r.condition == "free/spline:16") {
            CAPTURE(r.seed);
            CAPTURE(r.rg_step);
            CHECK(*r.train.spline_nonlinearity < 0.05);
        }
    }
    for (int step = 0; step < c.rg_steps; ++step) {
        CAPTURE(step);
        CHECK(mean_of(dkl[{"free/spline:16", step}]) < 10 * mean_of(dkl[{"free/linear", step}]));
        CHECK(std::abs(mean_of(k2[{"free/spline:16", step}])) < 1.0);
    }
}

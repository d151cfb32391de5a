// Batch driver for the RG experiments. Prints a JSON error report and exits
// non-zero on failure.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "rgsym/analytic_weights.hpp"
#include "rgsym/clt_rg.hpp"
#include "rgsym/error.hpp"
#include "rgsym/experiments.hpp"
#include "rgsym/mlp.hpp"
#include "rgsym/propagation.hpp"

namespace {

struct CommonFlags {
    int seeds = 5;
    std::size_t samples = 1'000'000;
    int steps = 10;
    std::string activation;
    double slope = 0.0;
    std::optional<double> alpha;
    bool symmetric = false;
    std::vector<std::string> conditions;
    std::vector<double> variances;
    std::string out = "results";
    std::string config;
};

void add_common(CLI::App* app, CommonFlags& f, bool with_variances, bool with_conditions) {
    app->add_option("--seeds", f.seeds, "Number of seeds (0..n-1)")->check(CLI::PositiveNumber);
    app->add_option("--samples", f.samples, "Samples per data set");
    app->add_option("--steps", f.steps, "RG steps");
    app->add_option("--out", f.out, "Output directory");
    app->add_option("--config", f.config, "JSON config; its keys override flags");
    if (with_conditions) {
        app->add_option("--activation", f.activation, "linear | relu | quadratic | leaky | spline[:n]");
        app->add_option("--slope", f.slope, "Leaky-ReLU slope for z <= 0");
        app->add_option("--alpha", f.alpha, "Quadratic coefficient");
        app->add_flag("--symmetric", f.symmetric, "Tie weights symmetrically");
        app->add_option("--condition", f.conditions, "Full condition, e.g. symmetric/quadratic:0.5 (repeatable)");
    }
    if (with_variances) app->add_option("--variances", f.variances, "Gaussian input variances")->delimiter(',');
}

rgsym::ExperimentConfig build_config(rgsym::TaskKind task, const CommonFlags& f) {
    rgsym::ExperimentConfig c;
    c.task = task;
    c.seeds.clear();
    for (int s = 0; s < f.seeds; ++s) c.seeds.push_back(static_cast<std::uint64_t>(s));
    c.n_samples = f.samples;
    c.rg_steps = f.steps;
    c.output = f.out;
    if (!f.variances.empty()) c.variances = f.variances;
    for (const auto& d : f.conditions) c.conditions.push_back(rgsym::Condition::parse(d));
    if (!f.activation.empty()) {
        std::string act = f.activation;
        if (act == "leaky") act += ":" + std::to_string(f.slope);
        if (act == "quadratic" && f.alpha) act += ":" + std::to_string(*f.alpha);
        c.conditions.push_back(rgsym::Condition::parse((f.symmetric ? "symmetric/" : "free/") + act));
    }
    if (!f.config.empty()) {
        std::ifstream in(f.config);
        if (!in) throw rgsym::IoError("cannot open config " + f.config);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw rgsym::IoError("malformed config " + f.config + ": " + e.what());
        }
        const auto task_name = rgsym::to_string(task);
        if (j.contains("task") && rgsym::parse_task(j.at("task").get<std::string>()) != task)
            throw rgsym::DomainError("config task does not match subcommand " + task_name);
        rgsym::from_json(j, c);
        c.task = task;
    }
    return c;
}

int run_task(rgsym::TaskKind task, const CommonFlags& f) {
    const auto cfg = build_config(task, f);
    cfg.validate();
    const auto table = rgsym::run_experiment(cfg);
    rgsym::emit_results(table, cfg.output);
    std::size_t diverged = 0;
    for (const auto& r : table.rows) diverged += r.train.diverged ? 1 : 0;
    nlohmann::json summary{{"task", rgsym::to_string(task)},
                           {"rows", table.rows.size()},
                           {"diverged_cells", diverged},
                           {"output", cfg.output}};
    std::cout << summary.dump() << '\n';
    return 0;
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw rgsym::IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw rgsym::IoError("malformed JSON in " + path + ": " + e.what());
    }
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Symmetry vs expressivity experiments on the CLT decimation map"};
    app.require_subcommand(1);

    CommonFlags gflags, uflags, vflags, eflags;
    auto* gaussian = app.add_subcommand("gaussian", "Gaussian task: one RG step at several input variances");
    add_common(gaussian, gflags, true, true);
    auto* uniform = app.add_subcommand("uniform", "Uniform task: composed RG steps from Uniform[0,1]");
    add_common(uniform, uflags, false, true);
    auto* gnn_validate = app.add_subcommand("gnn-validate", "GNN cumulant-propagation validation");
    add_common(gnn_validate, vflags, false, false);
    auto* gnn_generalise = app.add_subcommand("gnn-generalise", "GNN vs linear MLP generalisation");
    add_common(gnn_generalise, eflags, false, false);

    auto* solve = app.add_subcommand("solve-weights", "Analytic weights and the quadratic inconsistency certificate");
    double alpha = 0.5, w0 = 0.0, w1 = 0.0, w2 = 0.0;
    bool columns_same = false, grid = false, have_point = false;
    solve->add_option("--alpha", alpha, "Quadratic coefficient");
    solve->add_flag("--columns-same", columns_same, "Use W1 = [[w0,w0],[w1,w1]]");
    solve->add_flag("--grid", grid, "Search [-2,2]^3 at step 0.05 for a feasible point");
    auto* pw0 = solve->add_option("--w0", w0);
    solve->add_option("--w1", w1);
    solve->add_option("--w2", w2);

    auto* propagate = app.add_subcommand("propagate", "Push cumulants through a saved MLP checkpoint");
    std::string ckpt, cumulants_path, samples_path, prop_out;
    int required_order = 4;
    propagate->add_option("--checkpoint", ckpt, "Checkpoint JSON")->required();
    propagate->add_option("--cumulants", cumulants_path, "Input CumulantSet JSON")->required();
    propagate->add_option("--fallback-samples", samples_path, "Binary samples for Monte-Carlo orders 3..4");
    propagate->add_option("--order", required_order, "Highest order needed")->check(CLI::Range(1, 4));
    propagate->add_option("--out", prop_out, "Write the result here instead of stdout");

    auto* trainc = app.add_subcommand("train", "Train one [2,2,1] network and save checkpoint + loss curve");
    std::string t_condition = "free/linear", t_source = "uniform", t_out = "checkpoint";
    double t_variance = 1.0;
    std::size_t t_samples = 100'000;
    std::uint64_t t_seed = 0;
    trainc->add_option("--condition", t_condition);
    trainc->add_option("--source", t_source, "gaussian | uniform");
    trainc->add_option("--variance", t_variance);
    trainc->add_option("--samples", t_samples);
    trainc->add_option("--seed", t_seed);
    trainc->add_option("--out", t_out, "Output prefix");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*gaussian) return run_task(rgsym::TaskKind::gaussian, gflags);
        if (*uniform) return run_task(rgsym::TaskKind::uniform, uflags);
        if (*gnn_validate) return run_task(rgsym::TaskKind::gnn_validate, vflags);
        if (*gnn_generalise) return run_task(rgsym::TaskKind::gnn_generalise, eflags);

        if (*solve) {
            have_point = pw0->count() > 0;
            nlohmann::json out;
            const auto s0 = rgsym::solve_single_layer(false);
            const auto s1 = rgsym::solve_single_layer(true);
            out["single_layer"] = {{"w", s0.w}, {"b", s0.b}};
            out["single_layer_biased"] = {{"w", s1.w}, {"b", s1.b}};
            if (have_point) {
                rgsym::SymmetricMlpParams p{w0, w1, w2, 0.0, 0.0};
                out["certificate"] = rgsym::quadratic_inconsistency_certificate(p, alpha, columns_same);
                if (w2 != 0.0) out["linear_surface_w0"] = rgsym::linear_surface(w1, w2);
            }
            if (grid) out["grid_search"] = rgsym::certificate_grid_search(alpha, columns_same);
            std::cout << out.dump(2) << '\n';
            return 0;
        }

        if (*propagate) {
            const auto [spec, params] = rgsym::load_checkpoint(ckpt);
            const auto c = read_json(cumulants_path).get<rgsym::CumulantSet>();
            std::optional<rgsym::SampleMatrix> fallback;
            rgsym::PropagationOptions opts;
            opts.required_order = required_order;
            if (!samples_path.empty()) {
                fallback = rgsym::read_samples(samples_path);
                opts.fallback_samples = &*fallback;
            }
            const auto res = rgsym::propagate_mlp(c, params.model(spec), opts);
            const std::string text = nlohmann::json(res).dump(2);
            if (prop_out.empty()) {
                std::cout << text << '\n';
            } else {
                std::ofstream o(prop_out);
                if (!o) throw rgsym::IoError("cannot open " + prop_out);
                o << text << '\n';
            }
            return 0;
        }

        if (*trainc) {
            const auto cond = rgsym::Condition::parse(t_condition);
            const auto spec = cond.network(rgsym::SplineConfig{});
            const auto dist = t_source == "gaussian" ? rgsym::SourceDistribution::gaussian(t_variance)
                                                     : rgsym::SourceDistribution::uniform(0.0, 1.0);
            const auto data = rgsym::make_task_dataset(dist, {0, t_samples, t_seed});
            rgsym::TrainConfig tc;
            tc.seed = t_seed;
            const auto r = rgsym::train(spec, tc, data.inputs, data.targets);
            rgsym::save_checkpoint(t_out + ".json", spec, r.params);
            rgsym::write_loss_curve(t_out + "_loss.csv", r.loss_curve);
            std::cout << nlohmann::json{{"checkpoint", t_out + ".json"},
                                        {"steps", r.steps},
                                        {"final_loss", r.loss_curve.empty() ? 0.0 : r.loss_curve.back()}}
                             .dump()
                      << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        const char* kind = "error";
        if (dynamic_cast<const rgsym::ShapeError*>(&e)) kind = "shape_error";
        else if (dynamic_cast<const rgsym::DomainError*>(&e)) kind = "domain_error";
        else if (dynamic_cast<const rgsym::IoError*>(&e)) kind = "io_error";
        else if (dynamic_cast<const rgsym::TrainingDiverged*>(&e)) kind = "training_diverged";
        else if (dynamic_cast<const rgsym::NonFiniteError*>(&e)) kind = "non_finite";
        std::cerr << nlohmann::json{{"error", kind}, {"message", e.what()}}.dump() << '\n';
        return 1;
    }
    return 0;
}

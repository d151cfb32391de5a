#include "rgsym/experiments.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "rgsym/analytic_weights.hpp"
#include "rgsym/clt_rg.hpp"
#include "rgsym/error.hpp"
#include "rgsym/rng.hpp"

namespace rgsym {

std::string code_version() { return "0.1.0"; }

std::string to_string(TaskKind t) {
    switch (t) {
        case TaskKind::gaussian: return "gaussian";
        case TaskKind::uniform: return "uniform";
        case TaskKind::gnn_validate: return "gnn_validate";
        case TaskKind::gnn_generalise: return "gnn_generalise";
    }
    return "?";
}

TaskKind parse_task(const std::string& s) {
    if (s == "gaussian") return TaskKind::gaussian;
    if (s == "uniform") return TaskKind::uniform;
    if (s == "gnn_validate" || s == "gnn-validate") return TaskKind::gnn_validate;
    if (s == "gnn_generalise" || s == "gnn-generalise") return TaskKind::gnn_generalise;
    throw DomainError("unknown task '" + s + "'");
}

namespace {

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

std::string descriptor(const ActivationKind& a) {
    switch (a.kind) {
        case ActivationKind::Kind::identity: return "linear";
        case ActivationKind::Kind::quadratic: return "quadratic:" + num(a.alpha);
        case ActivationKind::Kind::relu: return "relu";
        case ActivationKind::Kind::leaky_relu: return "leaky:" + num(a.slope);
        case ActivationKind::Kind::spline: return "spline:" + std::to_string(a.spline.n_ctrl);
    }
    return "?";
}

}  // namespace

Condition Condition::parse(const std::string& d) {
    const auto slash = d.find('/');
    if (slash == std::string::npos) throw DomainError("condition '" + d + "' must look like <weights>/<activation>");
    Condition c;
    c.weights = d.substr(0, slash);
    if (c.weights != "symmetric" && c.weights != "free" && c.weights != "frozen")
        throw DomainError("condition weights must be symmetric, free or frozen (got '" + c.weights + "')");
    c.activation = ActivationKind::parse(d.substr(slash + 1));
    if (c.weights == "frozen" && c.activation.kind != ActivationKind::Kind::spline)
        throw DomainError("frozen weights only make sense with a spline activation");
    return c;
}

std::string Condition::name() const { return weights + "/" + descriptor(activation); }

NetworkSpec Condition::network(const SplineConfig& spline) const {
    NetworkSpec s;
    s.layer_widths = {2, 2, 1};
    s.activation = activation;
    if (activation.kind == ActivationKind::Kind::spline) {
        const int n = activation.spline.n_ctrl;
        s.activation.spline = spline;
        s.activation.spline.n_ctrl = n;
    }
    s.use_bias = true;
    s.symmetric_tying = weights == "symmetric";
    s.train_weights = weights != "frozen";
    return s;
}

std::vector<Condition> ExperimentConfig::default_conditions(TaskKind task, const std::vector<double>& leaky_slopes) {
    std::vector<std::string> d;
    switch (task) {
        case TaskKind::gaussian:
            d = {"free/linear", "free/relu", "free/quadratic:0.5",
                 "symmetric/linear", "symmetric/relu", "symmetric/quadratic:0.5"};
            break;
        case TaskKind::uniform:
            d = {"free/linear", "symmetric/linear", "free/quadratic:0.5", "symmetric/quadratic:0.5"};
            for (double s : leaky_slopes) d.push_back("free/leaky:" + num(s));
            for (double s : leaky_slopes) d.push_back("symmetric/leaky:" + num(s));
            d.push_back("free/spline:16");
            d.push_back("frozen/spline:16");
            break;
        case TaskKind::gnn_validate:
        case TaskKind::gnn_generalise: break;
    }
    std::vector<Condition> out;
    for (const auto& s : d) out.push_back(Condition::parse(s));
    return out;
}

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw DomainError("experiment needs at least one seed");
    if (n_samples < 1000) throw DomainError("n_samples must be >= 1000");
    if (rg_steps < 0) throw DomainError("rg_steps must be >= 0");
    if (task == TaskKind::gaussian) {
        if (variances.empty()) throw DomainError("gaussian task needs at least one variance");
        for (double v : variances)
            if (!(v > 0.0)) throw DomainError("variances must be positive");
    }
    if (!(uniform_lo < uniform_hi)) throw DomainError("uniform range needs lo < hi");
    train.validate();
    gnn.validate();
    gnn_train.validate();
    if (!(kl_floor > 0.0)) throw DomainError("kl_floor must be positive");
    for (const auto& c : conditions) c.network(spline).validate();
}

void to_json(nlohmann::json& j, const Condition& c) { j = c.name(); }
void from_json(const nlohmann::json& j, Condition& c) { c = Condition::parse(j.get<std::string>()); }

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = nlohmann::json{{"task", to_string(c.task)},
                       {"conditions", c.conditions},
                       {"variances", c.variances},
                       {"rg_steps", c.rg_steps},
                       {"n_samples", c.n_samples},
                       {"seeds", c.seeds},
                       {"uniform", {{"lo", c.uniform_lo}, {"hi", c.uniform_hi}}},
                       {"train", c.train},
                       {"spline",
                        {{"n_ctrl", c.spline.n_ctrl},
                         {"lo", c.spline.lo},
                         {"hi", c.spline.hi},
                         {"trainable", c.spline.trainable},
                         {"adaptive_range", c.spline.adaptive_range}}},
                       {"gnn", c.gnn},
                       {"gnn_train", c.gnn_train},
                       {"t_max", c.t_max},
                       {"n_freq", c.n_freq},
                       {"kl_floor", c.kl_floor},
                       {"output", c.output}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    if (j.contains("conditions")) c.conditions = j.at("conditions").get<std::vector<Condition>>();
    c.variances = j.value("variances", c.variances);
    c.rg_steps = j.value("rg_steps", c.rg_steps);
    c.n_samples = j.value("n_samples", c.n_samples);
    c.seeds = j.value("seeds", c.seeds);
    if (j.contains("uniform")) {
        c.uniform_lo = j.at("uniform").value("lo", c.uniform_lo);
        c.uniform_hi = j.at("uniform").value("hi", c.uniform_hi);
    }
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("spline")) {
        const auto& s = j.at("spline");
        c.spline.n_ctrl = s.value("n_ctrl", c.spline.n_ctrl);
        c.spline.lo = s.value("lo", c.spline.lo);
        c.spline.hi = s.value("hi", c.spline.hi);
        c.spline.trainable = s.value("trainable", c.spline.trainable);
        c.spline.adaptive_range = s.value("adaptive_range", c.spline.adaptive_range);
    }
    if (j.contains("gnn")) c.gnn = j.at("gnn").get<GnnSpec>();
    if (j.contains("gnn_train")) c.gnn_train = j.at("gnn_train").get<GnnTrainConfig>();
    c.t_max = j.value("t_max", c.t_max);
    c.n_freq = j.value("n_freq", c.n_freq);
    c.kl_floor = j.value("kl_floor", c.kl_floor);
    c.output = j.value("output", c.output);
}

std::uint64_t derive_seed(std::uint64_t base, const std::string& purpose, std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = base ^ stream_id(purpose, a, b);
    return splitmix64(s);
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t bits(double v) { return std::bit_cast<std::uint64_t>(v); }

CumulantSet source_truth(const SourceDistribution& dist, int steps) {
    const auto k = dist.exact_cumulants();
    const std::array<double, 4> k4{k[0], k[1], k[2], k[3]};
    return ground_truth_cumulants(CumulantSet::iid(2, k4), steps);
}

void fill_sample_metrics(ResultRow& row, const SampleMatrix& y, const SampleMatrix& g, const SampleMatrix& g_indep,
                         const CumulantSet& analytic, const ExperimentConfig& cfg) {
    const DensityGrid grid = make_grid(cfg.t_max, cfg.n_freq);
    const auto hy = histogram_on_grid(y.data(), grid);
    row.metrics = normalised_kl(hy, histogram_on_grid(g_indep.data(), grid), cfg.kl_floor);
    row.d_kl_norm_paired = normalised_kl(hy, histogram_on_grid(g.data(), grid), cfg.kl_floor).d_kl_normalised;
    row.output_cumulants = estimate_cumulants(y, 4);
    row.truth_cumulants = estimate_cumulants(g, 4);
    row.metrics.cumulant_deviation_pct = cumulant_deviation(row.output_cumulants, row.truth_cumulants);
    row.analytic_deviation_pct = cumulant_deviation(row.output_cumulants, analytic);
}

void fill_propagated_metrics(ResultRow& row, const CumulantSet& prop, const SampleMatrix& g,
                             const SampleMatrix& g_indep, const CumulantSet& analytic, const ExperimentConfig& cfg) {
    row.output_cumulants = prop;
    row.truth_cumulants = estimate_cumulants(g, 4);
    auto invalid = [&](const char* flag) {
        row.metrics = MetricReport{};
        row.metrics.d_kl = kNaN;
        row.metrics.entropy = kNaN;
        row.metrics.flags.push_back(flag);
    };
    try {
        const auto p_prop = reconstruct_density(prop, cfg.t_max, cfg.n_freq);
        row.metrics = normalised_kl(p_prop, histogram_on_grid(g_indep.data(), p_prop), cfg.kl_floor);
        row.d_kl_norm_paired = normalised_kl(p_prop, histogram_on_grid(g.data(), p_prop), cfg.kl_floor).d_kl_normalised;
    } catch (const CumulantExpansionInvalid&) {
        invalid("cumulant_expansion_invalid");
    } catch (const DomainError&) {
        invalid("non_positive_variance");
    }
    row.metrics.cumulant_deviation_pct = cumulant_deviation(prop, row.truth_cumulants);
    row.analytic_deviation_pct = cumulant_deviation(prop, analytic);
}

ResultRow diverged_row(const std::string& cond, std::uint64_t seed, int step, const TrainDiagnostics& d) {
    ResultRow r;
    r.condition = cond;
    r.seed = seed;
    r.rg_step = step;
    r.metrics.d_kl = kNaN;
    r.metrics.entropy = kNaN;
    r.metrics.flags.push_back("diverged");
    r.train = d;
    return r;
}

struct FittedMlp {
    std::optional<NetworkParams> params;
    TrainDiagnostics diag;
};

FittedMlp fit_mlp(const NetworkSpec& spec, TrainConfig tc, std::uint64_t init_seed, const SampleMatrix& x,
                  const SampleMatrix& t) {
    FittedMlp f;
    tc.seed = init_seed;
    try {
        auto r = train(spec, tc, x, t);
        f.diag.steps = r.steps;
        f.diag.final_loss = r.loss_curve.empty() ? kNaN : r.loss_curve.back();
        if (spec.symmetric_tying && spec.activation.kind == ActivationKind::Kind::identity) {
            const auto p = r.params.symmetric();
            if (p.w2 != 0.0) f.diag.symmetry_residual = check_symmetry_subspace(p, 1e-4).max_abs();
        }
        if (spec.activation.kind == ActivationKind::Kind::spline) f.diag.spline_nonlinearity = spline_nonlinearity(r.params);
        f.params = std::move(r.params);
    } catch (const TrainingDiverged& e) {
        f.diag.diverged = true;
        f.diag.message = e.what();
        f.diag.steps = e.step();
    }
    return f;
}

// Network outputs; a non-finite forward pass counts as divergence.
std::optional<SampleMatrix> safe_predict(const NetworkParams& p, const NetworkSpec& spec, const SampleMatrix& x,
                                         TrainDiagnostics& d) {
    try {
        return predict(p, spec, x);
    } catch (const NonFiniteError& e) {
        d.diverged = true;
        d.message = e.what();
        return std::nullopt;
    }
}

std::size_t condition_index(const std::vector<Condition>& cs, const std::string& name) {
    for (std::size_t i = 0; i < cs.size(); ++i)
        if (cs[i].name() == name) return i;
    return cs.size();
}

}  // namespace

ResultTable run_gaussian_task(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    if (cfg.conditions.empty()) cfg.conditions = ExperimentConfig::default_conditions(TaskKind::gaussian);
    cfg.validate();
    ResultTable table;
    table.config = cfg;
    for (double var : cfg.variances) {
        const auto dist = SourceDistribution::gaussian(var);
        const CumulantSet analytic = source_truth(dist, 1);
        for (std::uint64_t seed : cfg.seeds) {
            const auto train_set = make_task_dataset(dist, {0, cfg.n_samples, derive_seed(seed, "gaussian-train", bits(var))});
            const auto test_set = make_task_dataset(dist, {0, cfg.n_samples, derive_seed(seed, "gaussian-test", bits(var))});
            const SampleMatrix g_indep =
                make_task_dataset(dist, {0, cfg.n_samples, derive_seed(seed, "gaussian-gt", bits(var))}).targets;
            const CumulantSet in_c = estimate_cumulants(test_set.inputs, 4);
            for (const auto& cond : cfg.conditions) {
                const NetworkSpec spec = cond.network(cfg.spline);
                auto fit = fit_mlp(spec, cfg.train, derive_seed(seed, "init", bits(var)), train_set.inputs, train_set.targets);
                std::optional<SampleMatrix> y;
                if (fit.params) y = safe_predict(*fit.params, spec, test_set.inputs, fit.diag);
                ResultRow row;
                if (!y) {
                    row = diverged_row(cond.name(), seed, 0, fit.diag);
                } else {
                    row.condition = cond.name();
                    row.seed = seed;
                    row.rg_step = 0;
                    row.train = fit.diag;
                    fill_sample_metrics(row, *y, test_set.targets, g_indep, analytic, cfg);
                }
                row.variance = var;
                row.input_cumulants = in_c;
                table.rows.push_back(std::move(row));
            }
        }
    }
    std::stable_sort(table.rows.begin(), table.rows.end(), [&](const ResultRow& a, const ResultRow& b) {
        return condition_index(cfg.conditions, a.condition) < condition_index(cfg.conditions, b.condition);
    });
    return table;
}

ResultTable run_uniform_task(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    if (cfg.conditions.empty()) cfg.conditions = ExperimentConfig::default_conditions(TaskKind::uniform);
    cfg.validate();
    ResultTable table;
    table.config = cfg;
    const auto dist = SourceDistribution::uniform(cfg.uniform_lo, cfg.uniform_hi);
    for (const auto& cond : cfg.conditions) {
        const NetworkSpec spec = cond.network(cfg.spline);
        for (std::uint64_t seed : cfg.seeds) {
            RgTrajectory traj;
            traj.condition = cond.name();
            traj.seed = seed;
            SampleMatrix x_train = make_task_dataset(dist, {0, cfg.n_samples, derive_seed(seed, "uniform-train")}).inputs;
            SampleMatrix x_test = make_task_dataset(dist, {0, cfg.n_samples, derive_seed(seed, "uniform-test")}).inputs;
            SampleMatrix gt_in = x_test;
            SampleMatrix gi_in = make_task_dataset(dist, {0, cfg.n_samples, derive_seed(seed, "uniform-gt")}).inputs;
            for (int step = 0; step < cfg.rg_steps; ++step) {
                const SampleMatrix t_train = decimate(x_train);
                const SampleMatrix g = decimate(gt_in);
                const SampleMatrix gi = decimate(gi_in);
                auto fit = fit_mlp(spec, cfg.train, derive_seed(seed, "init", static_cast<std::uint64_t>(step)), x_train,
                                   t_train);
                std::optional<SampleMatrix> y_test, y_train;
                if (fit.params) y_test = safe_predict(*fit.params, spec, x_test, fit.diag);
                if (y_test) y_train = safe_predict(*fit.params, spec, x_train, fit.diag);
                if (!y_test || !y_train) {
                    ResultRow row = diverged_row(cond.name(), seed, step, fit.diag);
                    row.input_cumulants = estimate_cumulants(x_test, 4);
                    traj.steps.push_back(row);
                    table.rows.push_back(std::move(row));
                    traj.truncated = true;
                    break;
                }
                ResultRow row;
                row.condition = cond.name();
                row.seed = seed;
                row.rg_step = step;
                row.train = fit.diag;
                row.input_cumulants = estimate_cumulants(x_test, 4);
                fill_sample_metrics(row, *y_test, g, gi, source_truth(dist, step + 1), cfg);
                traj.steps.push_back(row);
                table.rows.push_back(std::move(row));

                const std::uint64_t s = static_cast<std::uint64_t>(step);
                x_train = next_step_inputs(*y_train, derive_seed(seed, "repair-train", s));
                x_test = next_step_inputs(*y_test, derive_seed(seed, "repair-test", s));
                gt_in = next_step_inputs(g, derive_seed(seed, "repair-test", s));
                gi_in = next_step_inputs(gi, derive_seed(seed, "repair-gt", s));
            }
            table.trajectories.push_back(std::move(traj));
        }
    }
    return table;
}

ResultTable run_gnn_task(const ExperimentConfig& cfg_in, bool propagate) {
    ExperimentConfig cfg = cfg_in;
    cfg.conditions.clear();
    cfg.validate();
    ResultTable table;
    table.config = cfg;
    const auto dist = SourceDistribution::uniform(cfg.uniform_lo, cfg.uniform_hi);
    const NeighborhoodSpec nbrs = TwoNodeGraph::neighborhood();
    const NetworkSpec mlp_spec = Condition::parse("free/linear").network(cfg.spline);

    for (std::uint64_t seed : cfg.seeds) {
        const SampleMatrix x_train0 = make_task_dataset(dist, {0, cfg.n_samples, derive_seed(seed, "uniform-train")}).inputs;
        const SampleMatrix x_test0 = make_task_dataset(dist, {0, cfg.n_samples, derive_seed(seed, "uniform-test")}).inputs;
        const SampleMatrix gi0 = make_task_dataset(dist, {0, cfg.n_samples, derive_seed(seed, "uniform-gt")}).inputs;
        const CumulantSet c0 = estimate_cumulants(x_test0, 4);

        // --- GNN chain ---
        {
            RgTrajectory sampled{"gnn/sampled", seed, {}, false};
            RgTrajectory propagated{"gnn/propagated", seed, {}, false};
            SampleMatrix x_train = x_train0, x_test = x_test0, gt_in = x_test0, gi_in = gi0;
            CumulantSet pu = c0.marginal(0), pv = c0.marginal(1);
            for (int step = 0; step < cfg.rg_steps; ++step) {
                const std::uint64_t s = static_cast<std::uint64_t>(step);
                const SampleMatrix t_train = decimate(x_train);
                const SampleMatrix g = decimate(gt_in);
                const SampleMatrix gi = decimate(gi_in);
                const CumulantSet analytic = source_truth(dist, step + 1);
                GnnTrainConfig gc = cfg.gnn_train;
                gc.base.seed = derive_seed(seed, "gnn-init", s);
                TrainDiagnostics diag;
                std::optional<GnnParams> params;
                std::optional<SampleMatrix> y_test, y_train;
                try {
                    auto r = gnn_train(cfg.gnn, gc, x_train, t_train);
                    diag.steps = r.steps;
                    diag.final_loss = r.loss_curve.empty() ? kNaN : r.loss_curve.back();
                    params = std::move(r.params);
                    y_test = gnn_forward(*params, x_test);
                    y_train = gnn_forward(*params, x_train);
                } catch (const TrainingDiverged& e) {
                    diag.diverged = true;
                    diag.message = e.what();
                } catch (const NonFiniteError& e) {
                    diag.diverged = true;
                    diag.message = e.what();
                }
                const CumulantSet in_c = estimate_cumulants(x_test, 4);
                if (!y_test || !y_train) {
                    for (auto* traj : {&sampled, &propagated}) {
                        if (traj == &propagated && !propagate) continue;
                        ResultRow row = diverged_row(traj->condition, seed, step, diag);
                        row.input_cumulants = in_c;
                        traj->steps.push_back(row);
                        traj->truncated = true;
                        table.rows.push_back(std::move(row));
                    }
                    break;
                }
                ResultRow row;
                row.condition = sampled.condition;
                row.seed = seed;
                row.rg_step = step;
                row.train = diag;
                row.input_cumulants = in_c;
                fill_sample_metrics(row, *y_test, g, gi, analytic, cfg);
                sampled.steps.push_back(row);
                table.rows.push_back(std::move(row));

                if (propagate) {
                    const auto out = propagate_gnn({{TwoNodeGraph::target, pu}, {TwoNodeGraph::source, pv}},
                                                   params->layers, nbrs);
                    const CumulantSet prop = out.at(TwoNodeGraph::target);
                    ResultRow prow;
                    prow.condition = propagated.condition;
                    prow.seed = seed;
                    prow.rg_step = step;
                    prow.train = diag;
                    prow.input_cumulants =
                        CumulantSet::iid(2, std::array<double, 4>{pu.kappa(1), pu.kappa(2), pu.kappa(3), pu.kappa(4)});
                    fill_propagated_metrics(prow, prop, g, gi, analytic, cfg);
                    propagated.steps.push_back(prow);
                    table.rows.push_back(std::move(prow));
                    // Both nodes of the next step see re-paired target outputs.
                    pu = prop;
                    pv = prop;
                }
                x_train = next_step_inputs(*y_train, derive_seed(seed, "repair-train", s));
                x_test = next_step_inputs(*y_test, derive_seed(seed, "repair-test", s));
                gt_in = next_step_inputs(g, derive_seed(seed, "repair-test", s));
                gi_in = next_step_inputs(gi, derive_seed(seed, "repair-gt", s));
            }
            table.trajectories.push_back(std::move(sampled));
            if (propagate) table.trajectories.push_back(std::move(propagated));
        }

        // --- linear MLP baseline ---
        {
            RgTrajectory sampled{"mlp/sampled", seed, {}, false};
            RgTrajectory propagated{"mlp/propagated", seed, {}, false};
            SampleMatrix x_train = x_train0, x_test = x_test0, gt_in = x_test0, gi_in = gi0;
            CumulantSet q = c0;
            for (int step = 0; step < cfg.rg_steps; ++step) {
                const std::uint64_t s = static_cast<std::uint64_t>(step);
                const SampleMatrix t_train = decimate(x_train);
                const SampleMatrix g = decimate(gt_in);
                const SampleMatrix gi = decimate(gi_in);
                const CumulantSet analytic = source_truth(dist, step + 1);
                auto fit = fit_mlp(mlp_spec, cfg.train, derive_seed(seed, "init", s), x_train, t_train);
                std::optional<SampleMatrix> y_test, y_train;
                if (fit.params) y_test = safe_predict(*fit.params, mlp_spec, x_test, fit.diag);
                if (y_test) y_train = safe_predict(*fit.params, mlp_spec, x_train, fit.diag);
                const CumulantSet in_c = estimate_cumulants(x_test, 4);
                if (!y_test || !y_train) {
                    for (auto* traj : {&sampled, &propagated}) {
                        if (traj == &propagated && !propagate) continue;
                        ResultRow row = diverged_row(traj->condition, seed, step, fit.diag);
                        row.input_cumulants = in_c;
                        traj->steps.push_back(row);
                        traj->truncated = true;
                        table.rows.push_back(std::move(row));
                    }
                    break;
                }
                ResultRow row;
                row.condition = sampled.condition;
                row.seed = seed;
                row.rg_step = step;
                row.train = fit.diag;
                row.input_cumulants = in_c;
                fill_sample_metrics(row, *y_test, g, gi, analytic, cfg);
                sampled.steps.push_back(row);
                table.rows.push_back(std::move(row));

                if (propagate) {
                    const auto res = propagate_mlp(q, fit.params->model(mlp_spec));
                    ResultRow prow;
                    prow.condition = propagated.condition;
                    prow.seed = seed;
                    prow.rg_step = step;
                    prow.train = fit.diag;
                    prow.input_cumulants = q;
                    fill_propagated_metrics(prow, res.output, g, gi, analytic, cfg);
                    propagated.steps.push_back(prow);
                    table.rows.push_back(std::move(prow));
                    const auto& o = res.output;
                    q = CumulantSet::iid(2, std::array<double, 4>{o.kappa(1), o.kappa(2), o.kappa(3), o.kappa(4)});
                }
                x_train = next_step_inputs(*y_train, derive_seed(seed, "repair-train", s));
                x_test = next_step_inputs(*y_test, derive_seed(seed, "repair-test", s));
                gt_in = next_step_inputs(g, derive_seed(seed, "repair-test", s));
                gi_in = next_step_inputs(gi, derive_seed(seed, "repair-gt", s));
            }
            table.trajectories.push_back(std::move(sampled));
            if (propagate) table.trajectories.push_back(std::move(propagated));
        }
    }
    std::stable_sort(table.rows.begin(), table.rows.end(),
                     [](const ResultRow& a, const ResultRow& b) { return a.condition < b.condition; });
    return table;
}

ResultTable run_gnn_validation(const ExperimentConfig& cfg) { return run_gnn_task(cfg, true); }

ResultTable run_experiment(const ExperimentConfig& cfg) {
    switch (cfg.task) {
        case TaskKind::gaussian: return run_gaussian_task(cfg);
        case TaskKind::uniform: return run_uniform_task(cfg);
        case TaskKind::gnn_validate: return run_gnn_task(cfg, true);
        case TaskKind::gnn_generalise: return run_gnn_task(cfg, false);
    }
    throw DomainError("unknown task");
}

namespace {

std::pair<double, double> mean_sd(const std::vector<double>& v) {
    if (v.empty()) return {kNaN, kNaN};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    if (v.size() < 2) return {m, 0.0};
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

}  // namespace

std::vector<Aggregate> aggregate(const ResultTable& table) {
    // Keyed by first appearance so the output order follows the rows.
    std::vector<Aggregate> out;
    std::vector<std::vector<const ResultRow*>> members;
    for (const auto& r : table.rows) {
        std::size_t k = 0;
        for (; k < out.size(); ++k)
            if (out[k].condition == r.condition && out[k].rg_step == r.rg_step && out[k].variance == r.variance) break;
        if (k == out.size()) {
            Aggregate a;
            a.condition = r.condition;
            a.variance = r.variance;
            a.rg_step = r.rg_step;
            out.push_back(a);
            members.emplace_back();
        }
        members[k].push_back(&r);
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
        auto& a = out[k];
        a.n = members[k].size();
        std::vector<double> dkl;
        std::map<int, std::vector<double>> dev;
        for (const auto* r : members[k]) {
            if (r->train.diverged) ++a.diverged;
            if (r->metrics.d_kl_normalised) dkl.push_back(*r->metrics.d_kl_normalised);
            for (const auto& [order, v] : r->metrics.cumulant_deviation_pct)
                if (v && order >= 2 && order <= 4) dev[order].push_back(*v);
        }
        std::tie(a.mean_d_kl_norm, a.sd_d_kl_norm) = mean_sd(dkl);
        for (int order = 2; order <= 4; ++order) a.deviation[order] = mean_sd(dev[order]);
    }
    return out;
}

std::string results_csv(const ResultTable& table) {
    const auto& c = table.config;
    std::ostringstream os;
    os << "condition,seed,rg_step,d_kl,entropy,d_kl_norm,dev_k2_pct,dev_k3_pct,dev_k4_pct,flags,"
          "task,variance,n_samples,spline_knots,spline_smooth_weight,sym_reg_weight,norm_penalty_weight,norm_floor,"
          "kl_floor,dev_k2_analytic_pct,dev_k3_analytic_pct,dev_k4_analytic_pct,final_loss,symmetry_residual,"
          "spline_nonlinearity,d_kl_norm_paired\n";
    auto dev = [](const std::map<int, std::optional<double>>& m, int order) {
        const auto it = m.find(order);
        return it == m.end() ? std::string() : num(it->second);
    };
    for (const auto& r : table.rows) {
        os << r.condition << ',' << r.seed << ',' << r.rg_step << ',' << num(r.metrics.d_kl) << ','
           << num(r.metrics.entropy) << ',' << num(r.metrics.d_kl_normalised) << ','
           << dev(r.metrics.cumulant_deviation_pct, 2) << ',' << dev(r.metrics.cumulant_deviation_pct, 3) << ','
           << dev(r.metrics.cumulant_deviation_pct, 4) << ',' << r.metrics.flag_string() << ',' << to_string(c.task)
           << ',' << num(r.variance) << ',' << c.n_samples << ',' << c.spline.n_ctrl << ','
           << num(c.train.spline_smooth_weight) << ',' << num(c.gnn_train.sym_reg_weight) << ','
           << num(c.gnn_train.norm_penalty_weight) << ',' << num(c.gnn_train.norm_floor) << ',' << num(c.kl_floor)
           << ',' << dev(r.analytic_deviation_pct, 2) << ',' << dev(r.analytic_deviation_pct, 3) << ','
           << dev(r.analytic_deviation_pct, 4) << ',' << num(r.train.final_loss) << ','
           << num(r.train.symmetry_residual) << ',' << num(r.train.spline_nonlinearity) << ','
           << num(r.d_kl_norm_paired) << '\n';
    }
    return os.str();
}

nlohmann::json manifest(const ResultTable& table) {
    const auto& c = table.config;
    nlohmann::json aggs = nlohmann::json::array();
    for (const auto& a : aggregate(table)) {
        nlohmann::json dev = nlohmann::json::object();
        for (const auto& [order, ms] : a.deviation)
            dev["k" + std::to_string(order)] = {{"mean", std::isnan(ms.first) ? nlohmann::json() : nlohmann::json(ms.first)},
                                                {"sd", std::isnan(ms.second) ? nlohmann::json() : nlohmann::json(ms.second)}};
        aggs.push_back({{"condition", a.condition},
                        {"variance", a.variance ? nlohmann::json(*a.variance) : nlohmann::json()},
                        {"rg_step", a.rg_step},
                        {"n", a.n},
                        {"diverged", a.diverged},
                        {"d_kl_norm",
                         {{"mean", std::isnan(a.mean_d_kl_norm) ? nlohmann::json() : nlohmann::json(a.mean_d_kl_norm)},
                          {"sd", std::isnan(a.sd_d_kl_norm) ? nlohmann::json() : nlohmann::json(a.sd_d_kl_norm)}}},
                        {"deviation_pct", dev}});
    }
    return {{"code_version", code_version()},
            {"config", c},
            {"aggregation", "mean and sample standard deviation over seeds"},
            {"kl_reference", "independent ground-truth sample; d_kl_norm_paired uses the decimated test inputs"},
            {"deviation_reference", "paired empirical ground truth; *_analytic_pct columns use scaled source cumulants"},
            {"truncated_trajectories",
             std::count_if(table.trajectories.begin(), table.trajectories.end(),
                           [](const RgTrajectory& t) { return t.truncated; })},
            {"aggregates", aggs}};
}

void emit_results(const ResultTable& table, const std::filesystem::path& dir) {
    table.config.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    auto write = [&](const std::string& name, const std::string& text) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw IoError("cannot open " + (dir / name).string() + " for writing");
        out << text;
        if (!out) throw IoError("write failed for " + (dir / name).string());
    };
    write("results.csv", results_csv(table));
    write("manifest.json", manifest(table).dump(2) + "\n");

    const auto aggs = aggregate(table);
    std::ostringstream var, step;
    var << "condition,variance,n,d_kl_norm_mean,d_kl_norm_sd,dev_k2_mean,dev_k2_sd\n";
    step << "condition,rg_step,n,d_kl_norm_mean,d_kl_norm_sd,dev_k2_mean,dev_k2_sd,dev_k3_mean,dev_k3_sd,dev_k4_mean,"
            "dev_k4_sd\n";
    for (const auto& a : aggs) {
        if (a.variance) {
            var << a.condition << ',' << num(*a.variance) << ',' << a.n << ',' << num(a.mean_d_kl_norm) << ','
                << num(a.sd_d_kl_norm) << ',' << num(a.deviation.at(2).first) << ',' << num(a.deviation.at(2).second)
                << '\n';
        } else {
            step << a.condition << ',' << a.rg_step << ',' << a.n << ',' << num(a.mean_d_kl_norm) << ','
                 << num(a.sd_d_kl_norm);
            for (int order = 2; order <= 4; ++order)
                step << ',' << num(a.deviation.at(order).first) << ',' << num(a.deviation.at(order).second);
            step << '\n';
        }
    }
    write("dkl_vs_variance.csv", var.str());
    write("deviation_vs_step.csv", step.str());
}

}  // namespace rgsym

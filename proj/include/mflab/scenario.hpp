#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mflab/particles.hpp"
#include "mflab/stability.hpp"

namespace mflab {

enum class Experiment {
    moments,
    gaussian_flow,
    linear_stability,
    mean_field_stability,
    particles,
    equilibration,
    sharpness,
    appendix_checks,
};

inline Experiment experiment_from_string(const std::string& s) {
    if (s == "moments") return Experiment::moments;
    if (s == "gaussian-flow") return Experiment::gaussian_flow;
    if (s == "linear-stability") return Experiment::linear_stability;
    if (s == "mean-field-stability") return Experiment::mean_field_stability;
    if (s == "particles") return Experiment::particles;
    if (s == "equilibration") return Experiment::equilibration;
    if (s == "sharpness") return Experiment::sharpness;
    if (s == "appendix-checks") return Experiment::appendix_checks;
    throw ValidationError("/experiment: unknown value '" + s + "'");
}

inline std::string experiment_name(Experiment e) {
    switch (e) {
        case Experiment::moments: return "moments";
        case Experiment::gaussian_flow: return "gaussian-flow";
        case Experiment::linear_stability: return "linear-stability";
        case Experiment::mean_field_stability: return "mean-field-stability";
        case Experiment::particles: return "particles";
        case Experiment::equilibration: return "equilibration";
        case Experiment::sharpness: return "sharpness";
        case Experiment::appendix_checks: return "appendix-checks";
    }
    return "?";
}

struct EnsembleSpec {
    std::size_t count = 0;
    std::uint64_t seed = 1;
    Vector init_mean;
    SymMatrix init_cov;
    std::string scheme = "eks";
    SymMatrix eki_noise;  // optional Sigma for the EKI schemes; empty = 0
};

struct NumericsSpec {
    double h = 0.0;  // 0 = module default
    double t_start = 0.0;
    double t_end = 1.0;
    std::size_t grid_points = 33;
    bool log_grid = false;
    std::size_t record_every = 1;
    std::size_t quadrature_panels = 0;  // 0 = module default
    double fit_window = 0.5;
    std::optional<double> w2_tol;  // optional pass threshold on the final W2
};

struct ChecksSpec {
    std::size_t trials = 1000;
    std::size_t dim = 3;
    std::uint64_t seed = 1;
};

struct Scenario {
    std::string name;
    Experiment experiment = Experiment::moments;
    std::optional<ProblemSpec> problem;
    double sigma = 0.0;
    std::optional<GaussianState> init;
    std::optional<GaussianState> init2;
    std::optional<SymMatrix> c0;  // prescribed covariance start, linear flows
    std::optional<EnsembleSpec> ensemble;
    std::optional<EnsembleSpec> ensemble2;
    NumericsSpec numerics;
    ChecksSpec checks;
    std::string output = "out";
};

// ---- JSON helpers (errors carry the JSON pointer of the offending key) ---------

namespace scenario_detail {

using nlohmann::json;

inline const json& require_key(const json& j, const std::string& key, const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + ": expected an object");
    auto it = j.find(key);
    if (it == j.end()) throw ValidationError(where + "/" + key + ": required key is missing");
    return *it;
}

inline double as_number(const json& j, const std::string& where) {
    if (!j.is_number()) throw ValidationError(where + ": expected a number");
    return j.get<double>();
}

inline std::size_t as_count(const json& j, const std::string& where) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0))
        throw ValidationError(where + ": expected a nonnegative integer");
    return j.get<std::size_t>();
}

inline std::string as_string(const json& j, const std::string& where) {
    if (!j.is_string()) throw ValidationError(where + ": expected a string");
    return j.get<std::string>();
}

inline Vector as_vector(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw ValidationError(where + ": expected a nonempty array");
    Vector v;
    v.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v.push_back(as_number(j[i], where + "/" + std::to_string(i)));
    return v;
}

inline Matrix as_matrix(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw ValidationError(where + ": expected an array of rows");
    std::vector<Vector> rows;
    rows.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) rows.push_back(as_vector(j[i], where + "/" + std::to_string(i)));
    for (const Vector& r : rows)
        if (r.size() != rows.front().size()) throw ValidationError(where + ": rows have unequal lengths");
    return Matrix::from_rows(rows);
}

inline SymMatrix as_sym_matrix(const json& j, const std::string& where) {
    const Matrix m = as_matrix(j, where);
    if (m.rows() != m.cols()) throw ValidationError(where + ": expected a square matrix");
    double scale = 0.0;
    for (double v : m.data()) scale = std::max(scale, std::fabs(v));
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t k = i + 1; k < m.cols(); ++k)
            if (std::fabs(m(i, k) - m(k, i)) > 1e-12 * std::max(1.0, scale))
                throw ValidationError(where + ": matrix is not symmetric");
    return SymMatrix::symmetrized(m);
}

inline GaussianState as_gaussian(const json& j, const std::string& where) {
    GaussianState g;
    g.mean = as_vector(require_key(j, "mean", where), where + "/mean");
    g.cov = as_sym_matrix(require_key(j, "cov", where), where + "/cov");
    if (g.mean.size() != g.cov.dim()) throw ValidationError(where + ": mean/cov dimensions differ");
    return g;
}

inline EnsembleSpec as_ensemble(const json& j, const std::string& where) {
    EnsembleSpec e;
    e.count = as_count(require_key(j, "J", where), where + "/J");
    if (e.count < 2) throw ValidationError(where + "/J: need at least 2 particles");
    if (j.contains("seed")) e.seed = j["seed"].get<std::uint64_t>();
    e.init_mean = as_vector(require_key(j, "init_mean", where), where + "/init_mean");
    e.init_cov = as_sym_matrix(require_key(j, "init_cov", where), where + "/init_cov");
    if (e.init_mean.size() != e.init_cov.dim())
        throw ValidationError(where + ": init_mean/init_cov dimensions differ");
    if (j.contains("scheme")) e.scheme = as_string(j["scheme"], where + "/scheme");
    scheme_from_string(e.scheme);  // validates
    if (j.contains("Sigma")) e.eki_noise = as_sym_matrix(j["Sigma"], where + "/Sigma");
    return e;
}

inline ProblemSpec as_problem(const json& j, const std::string& where) {
    ProblemSpec p;
    p.forward = as_matrix(require_key(j, "G", where), where + "/G");
    p.noise_cov = as_sym_matrix(require_key(j, "Gamma", where), where + "/Gamma");
    p.prior_cov = as_sym_matrix(require_key(j, "Gamma0", where), where + "/Gamma0");
    p.observation = as_vector(require_key(j, "y", where), where + "/y");
    if (p.noise_cov.dim() != p.obs_dim()) throw ValidationError(where + "/Gamma: must be K x K");
    if (p.prior_cov.dim() != p.state_dim()) throw ValidationError(where + "/Gamma0: must be d x d");
    if (p.observation.size() != p.obs_dim()) throw ValidationError(where + "/y: must have K entries");
    return p;
}

}  // namespace scenario_detail

inline Scenario parse_scenario(const nlohmann::json& j) {
    using namespace scenario_detail;
    Scenario sc;
    sc.name = as_string(require_key(j, "name", ""), "/name");
    sc.experiment = experiment_from_string(as_string(require_key(j, "experiment", ""), "/experiment"));

    if (j.contains("problem")) {
        sc.problem = as_problem(j["problem"], "/problem");
        if (j["problem"].contains("sigma")) sc.sigma = as_number(j["problem"]["sigma"], "/problem/sigma");
    }
    if (j.contains("sigma")) {
        const double top = as_number(j["sigma"], "/sigma");
        if (j.contains("problem") && j["problem"].contains("sigma") && top != sc.sigma)
            throw ValidationError("/sigma: conflicts with /problem/sigma");
        sc.sigma = top;
    }
    if (sc.sigma < 0.0) throw ValidationError("/sigma: must be >= 0");

    if (j.contains("init")) sc.init = as_gaussian(j["init"], "/init");
    if (j.contains("init2")) sc.init2 = as_gaussian(j["init2"], "/init2");
    if (j.contains("C0")) sc.c0 = as_sym_matrix(j["C0"], "/C0");
    if (j.contains("ensemble")) sc.ensemble = as_ensemble(j["ensemble"], "/ensemble");
    if (j.contains("ensemble2")) sc.ensemble2 = as_ensemble(j["ensemble2"], "/ensemble2");

    if (j.contains("numerics")) {
        const auto& n = j["numerics"];
        if (!n.is_object()) throw ValidationError("/numerics: expected an object");
        if (n.contains("h")) sc.numerics.h = as_number(n["h"], "/numerics/h");
        if (n.contains("t_start")) sc.numerics.t_start = as_number(n["t_start"], "/numerics/t_start");
        if (n.contains("t_end")) sc.numerics.t_end = as_number(n["t_end"], "/numerics/t_end");
        if (n.contains("grid_points"))
            sc.numerics.grid_points = as_count(n["grid_points"], "/numerics/grid_points");
        if (n.contains("log_grid")) {
            if (!n["log_grid"].is_boolean()) throw ValidationError("/numerics/log_grid: expected a boolean");
            sc.numerics.log_grid = n["log_grid"].get<bool>();
        }
        if (n.contains("record_every"))
            sc.numerics.record_every = as_count(n["record_every"], "/numerics/record_every");
        if (n.contains("quadrature_panels"))
            sc.numerics.quadrature_panels = as_count(n["quadrature_panels"], "/numerics/quadrature_panels");
        if (n.contains("fit_window"))
            sc.numerics.fit_window = as_number(n["fit_window"], "/numerics/fit_window");
        if (n.contains("w2_tol")) sc.numerics.w2_tol = as_number(n["w2_tol"], "/numerics/w2_tol");
    }
    if (j.contains("checks")) {
        const auto& c = j["checks"];
        if (!c.is_object()) throw ValidationError("/checks: expected an object");
        if (c.contains("trials")) sc.checks.trials = as_count(c["trials"], "/checks/trials");
        if (c.contains("dim")) sc.checks.dim = as_count(c["dim"], "/checks/dim");
        if (c.contains("seed")) sc.checks.seed = c["seed"].get<std::uint64_t>();
    }
    if (j.contains("output")) sc.output = as_string(j["output"], "/output");

    // experiment-specific block requirements
    const auto need = [&](bool ok, const std::string& msg) {
        if (!ok) throw ValidationError(msg);
    };
    const bool needs_problem = sc.experiment != Experiment::appendix_checks;
    need(!needs_problem || sc.problem.has_value(), "/problem: required for this experiment");
    switch (sc.experiment) {
        case Experiment::moments:
        case Experiment::gaussian_flow:
        case Experiment::equilibration:
        case Experiment::sharpness:
            need(sc.init.has_value(), "/init: required for this experiment");
            break;
        case Experiment::linear_stability:
        case Experiment::mean_field_stability:
            need(sc.init.has_value(), "/init: required for stability experiments");
            need(sc.init2.has_value(), "/init2: stability experiments need two initial states");
            break;
        case Experiment::particles:
            need(sc.ensemble.has_value(), "/ensemble: required for the particles experiment");
            if (sc.ensemble && sc.ensemble->scheme == "coupled")
                need(sc.ensemble2.has_value(), "/ensemble2: coupled scheme needs a second ensemble");
            break;
        case Experiment::appendix_checks:
            break;
    }
    if (sc.experiment == Experiment::equilibration || sc.experiment == Experiment::sharpness)
        need(sc.sigma > 0.0, "/sigma: must be > 0 for this experiment");
    return sc;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open scenario file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("scenario '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_scenario(j);
}

// ---- CSV / summary emission ------------------------------------------------------

namespace scenario_detail {

/// 17 significant digits: doubles round-trip exactly, so downstream plotting
/// re-reads the same values.
inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw ValidationError("cannot open output file '" + path + "'");
    }
    void header(const std::vector<std::string>& cols) {
        for (std::size_t i = 0; i < cols.size(); ++i) out_ << (i ? "," : "") << cols[i];
        out_ << "\n";
    }
    void row(const std::vector<double>& vals) {
        for (std::size_t i = 0; i < vals.size(); ++i) out_ << (i ? "," : "") << fmt(vals[i]);
        out_ << "\n";
    }
    void footer(const std::string& line) { out_ << line << "\n"; }

private:
    std::ofstream out_;
};

inline std::vector<std::string> upper_triangle_names(const std::string& base, std::size_t d) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = i; k < d; ++k)
            names.push_back(base + "_" + std::to_string(i + 1) + std::to_string(k + 1));
    return names;
}

inline void append_upper_triangle(std::vector<double>& row, const SymMatrix& m) {
    for (std::size_t i = 0; i < m.dim(); ++i)
        for (std::size_t k = i; k < m.dim(); ++k) row.push_back(m(i, k));
}

inline std::vector<double> make_grid(const NumericsSpec& n) {
    if (n.grid_points < 2) throw ValidationError("/numerics/grid_points: need at least 2");
    if (n.t_end <= n.t_start) throw ValidationError("/numerics/t_end: must exceed t_start");
    std::vector<double> grid(n.grid_points);
    if (n.log_grid) {
        if (n.t_start <= 0.0) throw ValidationError("/numerics/t_start: must be > 0 for a log grid");
        const double la = std::log(n.t_start), lb = std::log(n.t_end);
        for (std::size_t i = 0; i < n.grid_points; ++i)
            grid[i] = std::exp(la + (lb - la) * static_cast<double>(i) /
                                        static_cast<double>(n.grid_points - 1));
        grid.back() = n.t_end;
    } else {
        for (std::size_t i = 0; i < n.grid_points; ++i)
            grid[i] = n.t_start + (n.t_end - n.t_start) * static_cast<double>(i) /
                                      static_cast<double>(n.grid_points - 1);
        grid.back() = n.t_end;
    }
    return grid;
}

}  // namespace scenario_detail

struct RunResult {
    bool pass = false;
    int exit_code = 1;
    std::string csv_path;
    std::string summary_path;
    nlohmann::json summary;
};

namespace scenario_detail {

struct StabilityCsvOut {
    double final_w2 = 0.0;
    double max_ratio = 0.0;
    double fitted_rate = std::numeric_limits<double>::quiet_NaN();
};

inline StabilityCsvOut emit_stability_csv(const StabilityReport& rep, const std::string& path) {
    CsvWriter csv(path);
    csv.header({"t", "w2", "envelope", "ratio"});
    StabilityCsvOut out;
    for (std::size_t i = 0; i < rep.t_grid.size(); ++i) {
        csv.row({rep.t_grid[i], rep.w2[i], rep.envelope[i], rep.ratio[i]});
        out.max_ratio = std::max(out.max_ratio, rep.ratio[i]);
    }
    out.final_w2 = rep.w2.empty() ? 0.0 : rep.w2.back();
    out.fitted_rate = rep.fitted_rate;
    csv.footer("fitted_rate=" + fmt(rep.fitted_rate));
    return out;
}

}  // namespace scenario_detail

/// Execute one scenario; writes <out_dir>/<output>.csv and .summary.json.
/// Exit code 0: success, 1: validation/configuration/numerical error,
/// 2: a module-level invariant assertion failed during the run.
inline RunResult run_scenario(const Scenario& sc, const std::string& out_dir = ".",
                              std::optional<std::uint64_t> seed_override = {}) {
    using namespace scenario_detail;
    namespace fs = std::filesystem;

    RunResult result;
    const fs::path prefix = fs::path(out_dir) / sc.output;
    if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
    result.csv_path = prefix.string() + ".csv";
    result.summary_path = prefix.string() + ".summary.json";

    nlohmann::json summary;
    summary["name"] = sc.name;
    summary["experiment"] = experiment_name(sc.experiment);
    summary["pass"] = false;

    try {
        std::optional<Dynamics> dyn;
        if (sc.problem) dyn = make_dynamics(*sc.problem, sc.sigma);

        switch (sc.experiment) {
            case Experiment::moments: {
                const std::vector<double> grid = make_grid(sc.numerics);
                MomentState init;
                init.t = grid.front();
                init.delta = vec_sub(sc.init->mean, dyn->posterior.minimizer);
                init.cov = sc.init->cov;
                const double h = sc.numerics.h > 0.0 ? sc.numerics.h
                                                     : default_moment_step(*dyn, init.cov);
                const auto states = integrate_moments_record(*dyn, init, grid, h);
                CsvWriter csv(result.csv_path);
                std::vector<std::string> cols = {"t"};
                for (std::size_t i = 0; i < dyn->dim(); ++i) cols.push_back("delta_" + std::to_string(i + 1));
                for (const auto& nm : upper_triangle_names("C", dyn->dim())) cols.push_back(nm);
                csv.header(cols);
                for (const MomentState& st : states) {
                    std::vector<double> row = {st.t};
                    row.insert(row.end(), st.delta.begin(), st.delta.end());
                    append_upper_triangle(row, st.cov);
                    csv.row(row);
                }
                summary["final_delta_norm"] = norm2(states.back().delta);
                summary["final_cov_frobenius"] = frobenius_norm(states.back().cov);
                summary["records"] = states.size();
                break;
            }
            case Experiment::gaussian_flow: {
                const std::vector<double> grid = make_grid(sc.numerics);
                CsvWriter csv(result.csv_path);
                std::vector<std::string> cols = {"t"};
                for (std::size_t i = 0; i < dyn->dim(); ++i) cols.push_back("mu_" + std::to_string(i + 1));
                for (const auto& nm : upper_triangle_names("Sigma", dyn->dim())) cols.push_back(nm);
                csv.header(cols);
                GaussianState last = *sc.init;
                for (double t : grid) {
                    last = sc.c0 ? propagate_linear_fp(*dyn, *sc.c0, *sc.init, t,
                                                       sc.numerics.quadrature_panels, sc.numerics.h)
                                 : propagate_mean_field(*dyn, *sc.init, t, sc.numerics.h);
                    std::vector<double> row = {t};
                    row.insert(row.end(), last.mean.begin(), last.mean.end());
                    append_upper_triangle(row, last.cov);
                    csv.row(row);
                }
                summary["flow"] = sc.c0 ? "linear-fp" : "mean-field";
                summary["final_mean_offset"] =
                    norm2(vec_sub(last.mean, dyn->posterior.minimizer));
                summary["records"] = grid.size();
                break;
            }
            case Experiment::linear_stability: {
                const std::vector<double> grid = make_grid(sc.numerics);
                const SymMatrix c0 = sc.c0 ? *sc.c0 : sc.init->cov;
                StabilityReport rep = linear_fp_stability(*dyn, c0, *sc.init, *sc.init2, grid,
                                                          sc.numerics.quadrature_panels, sc.numerics.h);
                bool positive = grid.size() >= 4;
                for (double v : rep.w2) positive = positive && v > 1e-300;
                if (positive)
                    rep.fitted_rate = fit_rate(rep.t_grid, rep.w2, sc.numerics.fit_window, dyn->sigma).slope;
                const StabilityCsvOut out = emit_stability_csv(rep, result.csv_path);
                summary["final_w2"] = out.final_w2;
                summary["max_ratio"] = out.max_ratio;
                if (std::isfinite(out.fitted_rate)) summary["fitted_rate"] = out.fitted_rate;
                break;
            }
            case Experiment::mean_field_stability: {
                const std::vector<double> grid = make_grid(sc.numerics);
                const StabilityReport rep = mean_field_stability(*dyn, *sc.init, *sc.init2, grid,
                                                                 sc.numerics.fit_window, sc.numerics.h);
                const StabilityCsvOut out = emit_stability_csv(rep, result.csv_path);
                summary["final_w2"] = out.final_w2;
                summary["max_ratio"] = out.max_ratio;
                if (std::isfinite(out.fitted_rate)) summary["fitted_rate"] = out.fitted_rate;
                break;
            }
            case Experiment::equilibration: {
                const std::vector<double> grid = make_grid(sc.numerics);
                const GaussianState target = equilibrium(*dyn);
                StabilityReport rep;
                rep.t_grid = grid;
                const double w2_init = w2_gaussian(*sc.init, target).distance;
                const double h = sc.numerics.h > 0.0 ? sc.numerics.h
                                                     : default_moment_step(*dyn, sc.init->cov);
                const auto u_cp = propagator_checkpoints(*dyn, sc.init->cov, grid, h);
                for (std::size_t i = 0; i < grid.size(); ++i) {
                    GaussianState ft;
                    ft.mean = vec_add(dyn->posterior.minimizer,
                                      u_cp[i] * vec_sub(sc.init->mean, dyn->posterior.minimizer));
                    ft.cov = covariance_closed_form(*dyn, sc.init->cov, grid[i]);
                    rep.w2.push_back(w2_gaussian(ft, target).distance);
                    rep.envelope.push_back(w2_decay_rate(dyn->sigma, grid[i]) * w2_init);
                }
                detail::fill_ratio(rep);
                bool positive = grid.size() >= 4;
                for (double v : rep.w2) positive = positive && v > 1e-300;
                if (positive)
                    rep.fitted_rate = fit_rate(rep.t_grid, rep.w2, sc.numerics.fit_window, dyn->sigma).slope;
                const StabilityCsvOut out = emit_stability_csv(rep, result.csv_path);
                summary["final_w2"] = out.final_w2;
                if (std::isfinite(out.fitted_rate)) summary["fitted_rate"] = out.fitted_rate;
                if (sc.numerics.w2_tol && out.final_w2 > *sc.numerics.w2_tol)
                    throw InvariantViolation("equilibration: final W2 " + fmt(out.final_w2) +
                                             " above tolerance " + fmt(*sc.numerics.w2_tol));
                break;
            }
            case Experiment::sharpness: {
                const std::vector<double> grid = make_grid(sc.numerics);
                const SharpnessReport rep = sharpness_diagnostic(*dyn, *sc.init, grid, sc.numerics.h);
                CsvWriter csv(result.csv_path);
                csv.header({"t", "w2", "envelope", "ratio"});
                double max_ratio = 0.0;
                for (std::size_t i = 0; i < rep.t_grid.size(); ++i) {
                    const double ratio = rep.lower[i] > 0.0 ? rep.scaled_w2[i] / rep.lower[i] : 0.0;
                    csv.row({rep.t_grid[i], rep.scaled_w2[i], rep.lower[i], ratio});
                    max_ratio = std::max(max_ratio, ratio);
                }
                csv.footer("fitted_rate=" + fmt(std::numeric_limits<double>::quiet_NaN()));
                summary["scaled_w2_final"] = rep.scaled_w2.back();
                summary["max_ratio_to_lower"] = max_ratio;
                summary["violations"] = 0;
                break;
            }
            case Experiment::particles: {
                EnsembleSpec espec = *sc.ensemble;
                if (seed_override) espec.seed = *seed_override;
                NoiseStream rng(espec.seed);
                GaussianState law{espec.init_mean, espec.init_cov};
                Ensemble init = sample_ensemble(espec.count, law, rng, sc.numerics.t_start);

                SimOptions opt;
                opt.scheme = scheme_from_string(espec.scheme);
                opt.h = sc.numerics.h > 0.0 ? sc.numerics.h : 1e-3;
                opt.t_end = sc.numerics.t_end;
                opt.record_every = sc.numerics.record_every;
                opt.noise_cov = espec.eki_noise;

                std::optional<Ensemble> second;
                if (opt.scheme == Scheme::coupled) {
                    if (sc.ensemble2->count != espec.count)
                        throw ValidationError("/ensemble2/J: must match /ensemble/J for coupling");
                    GaussianState law2{sc.ensemble2->init_mean, sc.ensemble2->init_cov};
                    second = sample_ensemble(espec.count, law2, rng, sc.numerics.t_start);
                    opt.coupled_cov0 = sc.c0 ? *sc.c0 : espec.init_cov;
                }
                const auto records = run_simulation(std::move(init), *dyn, opt, rng, second);

                const std::size_t d = dyn->dim();
                CsvWriter csv(result.csv_path);
                std::vector<std::string> cols = {"t"};
                for (std::size_t i = 0; i < d; ++i) cols.push_back("ubar_" + std::to_string(i + 1));
                for (const auto& nm : upper_triangle_names("Cuu", d)) cols.push_back(nm);
                cols.push_back("spread");
                csv.header(cols);
                for (const TrajectoryRecord& r : records) {
                    std::vector<double> row = {r.t};
                    row.insert(row.end(), r.stats.u_bar.begin(), r.stats.u_bar.end());
                    append_upper_triangle(row, r.stats.cov_uu);
                    row.push_back(r.stats.spread());
                    csv.row(row);
                }
                summary["scheme"] = espec.scheme;
                summary["seed"] = espec.seed;
                summary["records"] = records.size();
                summary["final_spread"] = records.back().stats.spread();
                summary["final_mean_offset"] =
                    norm2(vec_sub(records.back().stats.u_bar, dyn->posterior.minimizer));
                break;
            }
            case Experiment::appendix_checks: {
                ChecksSpec cs = sc.checks;
                if (seed_override) cs.seed = *seed_override;
                NoiseStream rng(cs.seed);
                const SqrtInequalityReport rep = check_sqrt_inequalities(cs.trials, cs.dim, rng);
                CsvWriter csv(result.csv_path);
                csv.header({"dim", "trials", "violations_concavity", "violations_bridge",
                            "worst_frobenius_ratio"});
                csv.row({static_cast<double>(cs.dim), static_cast<double>(rep.trials),
                         static_cast<double>(rep.violations_concavity),
                         static_cast<double>(rep.violations_bridge), rep.worst_frobenius_ratio});
                summary["trials"] = rep.trials;
                summary["violations"] = rep.violations_concavity + rep.violations_bridge;
                summary["worst_frobenius_ratio"] = rep.worst_frobenius_ratio;
                if (rep.violations_concavity + rep.violations_bridge > 0)
                    throw InvariantViolation("appendix-checks: square-root inequalities violated");
                break;
            }
        }
        summary["pass"] = true;
        result.pass = true;
        result.exit_code = 0;
    } catch (const InvariantViolation& e) {
        summary["error"] = e.what();
        result.exit_code = 2;
    } catch (const std::exception& e) {
        summary["error"] = e.what();
        result.exit_code = 1;
    }

    std::ofstream sum(result.summary_path, std::ios::binary);
    sum << summary.dump(2) << "\n";
    result.summary = std::move(summary);
    return result;
}

}  // namespace mflab

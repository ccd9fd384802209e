#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "martnet/autodiff.hpp"
#include "martnet/oracles.hpp"
#include "martnet/report.hpp"
#include "martnet/rng.hpp"

namespace martnet {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

ordered_json summary_to_json(const TrainSummary& s, bool control) {
    ordered_json j;
    if (control) {
        j["j_estimate"] = s.j_estimate;
        j["j_se"] = s.j_se;
    } else {
        j["lambda_star"] = s.lambda_star;
    }
    if (!s.oracle_kind.empty()) {
        j["oracle"] = s.oracle_kind;
        j["oracle_value"] = s.oracle_value;
        j["relative_error"] = s.relative_error;
        if (control) {
            j["policy_mean_abs_error"] = s.policy_mean_abs_error;
            j["value_relative_error"] = s.value_relative_error;
        }
    }
    return j;
}

void write_report_json(const fs::path& dir, const std::string& mode, const TrainReport& report,
                       bool control, double wall_seconds, const ordered_json* error) {
    ordered_json j;
    j["mode"] = mode;
    j["epochs_completed"] = report.rows.size();
    j["wall_seconds"] = wall_seconds;
    if (report.summary)
        j["summary"] = summary_to_json(*report.summary, control);
    else
        j["summary"] = nullptr;
    if (error != nullptr) j["error"] = *error;
    std::ofstream out(dir / "report.json", std::ios::binary);
    out << j.dump(2) << '\n';
}

ordered_json abort_to_json(const TrainingAbort& abort) {
    ordered_json e;
    e["epoch"] = abort.epoch;
    e["message"] = abort.what();
    ordered_json terms;
    terms["total"] = abort.terms.total;
    terms["martingale"] = abort.terms.martingale;
    terms["reg"] = abort.terms.reg;
    terms["boundary"] = abort.terms.boundary;
    e["terms"] = std::move(terms);
    return e;
}

int run_eigen(const RunConfig& config, const fs::path& dir) {
    const auto tic = std::chrono::steady_clock::now();
    try {
        auto [state, report] = train_eigen(*config.eigen_problem, config.train);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
        write_metrics_csv(report, (dir / "metrics.csv").string());
        save_checkpoint(state, (dir / "checkpoint_eigen.json").string());
        write_report_json(dir, "eigen", report, false, secs, nullptr);
        if (report.summary) {
            std::cout << "lambda_star = " << format_double(report.summary->lambda_star);
            if (!report.summary->oracle_kind.empty())
                std::cout << "  (oracle " << report.summary->oracle_kind << " "
                          << format_double(report.summary->oracle_value) << ", rel err "
                          << format_double(report.summary->relative_error) << ")";
            std::cout << '\n';
        }
        return 0;
    } catch (const TrainingAbort& abort) {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
        write_metrics_csv(abort.partial, (dir / "metrics.csv").string());
        const ordered_json err = abort_to_json(abort);
        write_report_json(dir, "eigen", abort.partial, false, secs, &err);
        std::cerr << "numeric abort: " << abort.what() << '\n';
        return 2;
    }
}

int run_control(const RunConfig& config, const fs::path& dir) {
    const auto tic = std::chrono::steady_clock::now();
    try {
        auto [state, report] = train_control(*config.control_problem, config.train);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
        write_metrics_csv(report, (dir / "metrics.csv").string());
        save_checkpoint(state, (dir / "checkpoint_control.json").string());
        if (config.train.oracle == "riccati_lq") {
            const LqOracle oracle =
                riccati_lq(config.control_problem->dim, config.control_problem->horizon);
            write_lattice_csv(evaluate_lq_lattice(*config.control_problem, state, oracle),
                              (dir / "lattice.csv").string());
        }
        write_report_json(dir, "control", report, true, secs, nullptr);
        if (report.summary) {
            std::cout << "J(policy) = " << format_double(report.summary->j_estimate) << " +- "
                      << format_double(report.summary->j_se);
            if (!report.summary->oracle_kind.empty())
                std::cout << "  policy err " << format_double(report.summary->policy_mean_abs_error)
                          << ", value rel err "
                          << format_double(report.summary->value_relative_error);
            std::cout << '\n';
        }
        return 0;
    } catch (const TrainingAbort& abort) {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
        write_metrics_csv(abort.partial, (dir / "metrics.csv").string());
        const ordered_json err = abort_to_json(abort);
        write_report_json(dir, "control", abort.partial, true, secs, &err);
        std::cerr << "numeric abort: " << abort.what() << '\n';
        return 2;
    }
}

int run_sample(const RunConfig& config, const fs::path& dir) {
    const EigenProblem& pb = *config.eigen_problem;
    if (config.train.start_points.empty()) throw UsageError("sample mode needs a start point");
    const PathEnsemble ensemble =
        sample_problem_paths(pb, config.train.start_points[0], config.train.grid,
                             config.train.paths, config.train.seed);
    write_ensemble_csv(ensemble, (dir / "ensemble.csv").string());
    std::cout << "wrote " << (dir / "ensemble.csv").string() << " (" << ensemble.paths
              << " paths x " << ensemble.grid.steps << " steps)\n";
    return 0;
}

int run_oracle(const RunConfig& config, const fs::path& dir) {
    ordered_json j;
    if (config.train.oracle == "riccati_lq") {
        const int d = config.control_problem ? config.control_problem->dim
                      : config.eigen_problem ? config.eigen_problem->spec.dim
                                             : 1;
        const LqOracle oracle = riccati_lq(d, config.train.grid.horizon);
        j["kind"] = "riccati_lq";
        j["d"] = d;
        j["T"] = oracle.horizon;
        j["k"] = 1.0;
        j["m0"] = 0.5 * d * oracle.horizon;
        std::vector<double> x0(static_cast<std::size_t>(d), 1.0);
        j["value_at_t0_ones"] = oracle.value(0.0, x0);
    } else {
        if (!config.eigen_problem) throw UsageError("fd_eigen oracle needs an eigen problem");
        const EigenProblem& pb = *config.eigen_problem;
        const Box box = pb.spec.domain.quadrature_box();
        const int n = config.train.fd_intervals > 0 ? config.train.fd_intervals
                                                    : (pb.spec.dim == 1 ? 2000 : 128);
        const FdEigenResult fd = fd_eigen(pb.spec.potential, box, n, pb.spec.dim);
        j["kind"] = "fd_eigen";
        j["d"] = pb.spec.dim;
        j["n"] = fd.intervals;
        j["eigenvalues"] = fd.eigenvalues;
    }
    const std::string text = j.dump(2);
    std::cout << text << '\n';
    std::ofstream out(dir / "oracle.json", std::ios::binary);
    out << text << '\n';
    return 0;
}

int run_gradcheck(const RunConfig& config, const fs::path& dir) {
    // Small built-in battery: elementary ops, an MLP, and a mixed
    // second-order input-gradient check, all against central differences.
    const std::uint64_t seed = config.train.seed;
    ordered_json results;

    const ad::Program quadratic = [](ad::Tape& t, std::span<const ad::Var> x) {
        std::vector<ad::Var> sq;
        for (ad::Var v : x) sq.push_back(v * v);
        return ad::sum(t, sq);
    };
    const std::vector<double> pt{0.3, -1.2, 2.0};
    const double err_quad = ad::gradient_check(quadratic, pt, 1e-6);
    results["quadratic"] = err_quad;

    const std::vector<int> sizes{2, 8, 8, 1};
    const MlpParams net = mlp_init(sizes, seed);
    std::vector<double> point(net.params.begin(), net.params.end());
    const ad::Program mlp_prog = [&](ad::Tape& t, std::span<const ad::Var> theta) {
        std::vector<ad::Var> in{t.constant(0.4), t.constant(-0.7)};
        return mlp_forward_scalar<ad::Var>(sizes, theta, in);
    };
    const double err_mlp = ad::gradient_check(mlp_prog, point, 1e-6);
    results["mlp_forward"] = err_mlp;

    const ad::Program mlp_grad_prog = [&](ad::Tape& t, std::span<const ad::Var> theta) {
        std::vector<ad::Var> in{t.constant(0.4), t.constant(-0.7)};
        auto vg = mlp_forward_with_input_grad_span<ad::Var>(sizes, theta, in);
        return vg.grad[0] + vg.grad[1];
    };
    const double err_mixed = ad::gradient_check(mlp_grad_prog, point, 1e-6);
    results["mlp_input_grad_mixed"] = err_mixed;

    const double worst = std::max({err_quad, err_mlp, err_mixed});
    results["max"] = worst;
    const bool ok = worst <= 1e-4;
    results["pass"] = ok;
    const std::string text = results.dump(2);
    std::cout << text << '\n';
    std::ofstream out(dir / "gradcheck.json", std::ios::binary);
    out << text << '\n';
    return ok ? 0 : 2;
}

}  // namespace

int run(const RunConfig& config) {
    try {
        const fs::path dir(config.output_dir);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw UsageError("cannot create output directory " + dir.string());
        switch (config.mode) {
            case RunMode::kEigen: return run_eigen(config, dir);
            case RunMode::kControl: return run_control(config, dir);
            case RunMode::kSample: return run_sample(config, dir);
            case RunMode::kOracle: return run_oracle(config, dir);
            case RunMode::kGradCheck: return run_gradcheck(config, dir);
        }
        return 1;
    } catch (const TrainingAbort& e) {
        std::cerr << "numeric abort: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace martnet

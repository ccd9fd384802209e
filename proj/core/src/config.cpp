#include "martnet/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "martnet/rng.hpp"

namespace martnet {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
    throw ConfigError(path, msg);
}

std::string join(const std::string& a, const std::string& b) {
    return a.empty() ? b : a + "." + b;
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) {
                ok = true;
                break;
            }
        if (!ok) fail(join(path, key), "unknown configuration key");
    }
}

const json* find(const json& obj, const char* key) {
    const auto it = obj.find(key);
    return it == obj.end() || it->is_null() ? nullptr : &*it;
}

double get_number(const json& j, const std::string& path) {
    if (!j.is_number()) fail(path, "expected a number");
    return j.get<double>();
}

int get_int(const json& j, const std::string& path) {
    if (!j.is_number_integer()) fail(path, "expected an integer");
    return j.get<int>();
}

std::string get_string(const json& j, const std::string& path) {
    if (!j.is_string()) fail(path, "expected a string");
    return j.get<std::string>();
}

bool get_bool(const json& j, const std::string& path) {
    if (!j.is_boolean()) fail(path, "expected a boolean");
    return j.get<bool>();
}

std::vector<double> get_number_array(const json& j, const std::string& path) {
    if (!j.is_array()) fail(path, "expected an array of numbers");
    std::vector<double> out;
    out.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i)
        out.push_back(get_number(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

std::vector<int> get_int_array(const json& j, const std::string& path) {
    if (!j.is_array()) fail(path, "expected an array of integers");
    std::vector<int> out;
    out.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i)
        out.push_back(get_int(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

Expr parse_expr_field(const json& j, const std::string& path, int dim, int control_dim) {
    const std::string src = get_string(j, path);
    try {
        return Expr::parse(src, dim, control_dim);
    } catch (const ParseError& e) {
        fail(path, std::string("expression error: ") + e.what());
    }
}

std::vector<Expr> parse_expr_array(const json& j, const std::string& path, int dim,
                                   int control_dim, std::size_t want) {
    if (!j.is_array()) fail(path, "expected an array of expression strings");
    if (want != 0 && j.size() != want)
        fail(path, "expected " + std::to_string(want) + " expressions");
    std::vector<Expr> out;
    out.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i)
        out.push_back(
            parse_expr_field(j[i], path + "[" + std::to_string(i) + "]", dim, control_dim));
    return out;
}

SigmaSpec parse_sigma(const json* j, const std::string& path, int dim, int control_dim) {
    SigmaSpec sigma;
    if (j == nullptr) {  // default: unit scalar diffusion
        sigma.kind = SigmaSpec::Kind::kScalar;
        sigma.entries.push_back(Expr::parse("1", dim, control_dim));
        return sigma;
    }
    check_keys(*j, path, {"kind", "entries"});
    const json* kind = find(*j, "kind");
    if (kind == nullptr) fail(join(path, "kind"), "missing");
    const std::string k = get_string(*kind, join(path, "kind"));
    std::size_t want = 0;
    if (k == "scalar") {
        sigma.kind = SigmaSpec::Kind::kScalar;
        want = 1;
    } else if (k == "diagonal") {
        sigma.kind = SigmaSpec::Kind::kDiagonal;
        want = static_cast<std::size_t>(dim);
    } else if (k == "full") {
        sigma.kind = SigmaSpec::Kind::kFull;
        want = static_cast<std::size_t>(dim) * dim;
    } else {
        fail(join(path, "kind"), "expected scalar | diagonal | full");
    }
    const json* entries = find(*j, "entries");
    if (entries == nullptr) fail(join(path, "entries"), "missing");
    sigma.entries = parse_expr_array(*entries, join(path, "entries"), dim, control_dim, want);
    return sigma;
}

Domain parse_domain(const json& j, const std::string& path, int dim) {
    check_keys(j, path,
               {"kind", "lower", "upper", "center", "radius", "boundary", "robin_c",
                "truncation_lower", "truncation_upper"});
    Domain domain;
    const json* kind = find(j, "kind");
    if (kind == nullptr) fail(join(path, "kind"), "missing");
    const std::string k = get_string(*kind, join(path, "kind"));
    if (k == "box") {
        domain.kind = Domain::Kind::kBox;
        const json* lo = find(j, "lower");
        const json* hi = find(j, "upper");
        if (lo == nullptr || hi == nullptr)
            fail(path, "box domain needs lower and upper arrays");
        domain.box.lower = get_number_array(*lo, join(path, "lower"));
        domain.box.upper = get_number_array(*hi, join(path, "upper"));
    } else if (k == "ball") {
        domain.kind = Domain::Kind::kBall;
        const json* c = find(j, "center");
        const json* r = find(j, "radius");
        if (c == nullptr || r == nullptr) fail(path, "ball domain needs center and radius");
        domain.center = get_number_array(*c, join(path, "center"));
        domain.radius = get_number(*r, join(path, "radius"));
    } else if (k == "all_space") {
        domain.kind = Domain::Kind::kAllSpace;
        const json* lo = find(j, "truncation_lower");
        const json* hi = find(j, "truncation_upper");
        if ((lo == nullptr) != (hi == nullptr))
            fail(path, "truncation needs both truncation_lower and truncation_upper");
        if (lo != nullptr) {
            Box t;
            t.lower = get_number_array(*lo, join(path, "truncation_lower"));
            t.upper = get_number_array(*hi, join(path, "truncation_upper"));
            domain.truncation = std::move(t);
        }
    } else {
        fail(join(path, "kind"), "expected box | ball | all_space");
    }
    if (const json* b = find(j, "boundary")) {
        const std::string s = get_string(*b, join(path, "boundary"));
        if (s == "dirichlet") domain.boundary = BoundaryKind::kDirichlet;
        else if (s == "neumann") domain.boundary = BoundaryKind::kNeumann;
        else if (s == "robin") domain.boundary = BoundaryKind::kRobin;
        else fail(join(path, "boundary"), "expected dirichlet | neumann | robin");
    }
    if (const json* c = find(j, "robin_c"))
        domain.robin_c = get_number(*c, join(path, "robin_c"));
    try {
        domain.validate(dim);
    } catch (const UsageError& e) {
        fail(path, e.what());
    }
    return domain;
}

EigenProblem parse_eigen_problem(const json& j, const std::string& path) {
    check_keys(j, path,
               {"d", "V", "mu", "sigma", "domain", "generator_mode", "driftless_ack"});
    EigenProblem pb;
    const json* d = find(j, "d");
    if (d == nullptr) fail(join(path, "d"), "missing");
    pb.spec.dim = get_int(*d, join(path, "d"));
    if (pb.spec.dim < 1) fail(join(path, "d"), "dimension must be >= 1");

    if (const json* v = find(j, "V"))
        pb.spec.potential = parse_expr_field(*v, join(path, "V"), pb.spec.dim, 0);
    if (const json* mu = find(j, "mu"))
        pb.spec.mu = parse_expr_array(*mu, join(path, "mu"), pb.spec.dim, 0,
                                      static_cast<std::size_t>(pb.spec.dim));
    pb.spec.sigma = parse_sigma(find(j, "sigma"), join(path, "sigma"), pb.spec.dim, 0);

    const json* dom = find(j, "domain");
    if (dom == nullptr) fail(join(path, "domain"), "missing");
    pb.spec.domain = parse_domain(*dom, join(path, "domain"), pb.spec.dim);

    if (const json* g = find(j, "generator_mode")) {
        const std::string s = get_string(*g, join(path, "generator_mode"));
        if (s == "full") pb.mode = GeneratorMode::kFull;
        else if (s == "driftless") pb.mode = GeneratorMode::kDriftless;
        else fail(join(path, "generator_mode"), "expected full | driftless");
    }
    if (const json* a = find(j, "driftless_ack"))
        pb.driftless_ack = get_bool(*a, join(path, "driftless_ack"));
    return pb;
}

ControlProblem parse_control_problem(const json& j, const std::string& path) {
    check_keys(j, path,
               {"d", "m", "mu", "sigma", "running_cost", "terminal_cost", "control_lower",
                "control_upper", "u_min", "hamiltonian"});
    ControlProblem pb;
    const json* d = find(j, "d");
    if (d == nullptr) fail(join(path, "d"), "missing");
    pb.dim = get_int(*d, join(path, "d"));
    const json* m = find(j, "m");
    if (m == nullptr) fail(join(path, "m"), "missing");
    pb.control_dim = get_int(*m, join(path, "m"));
    if (pb.dim < 1 || pb.control_dim < 1)
        fail(path, "control problems need d >= 1 and m >= 1");

    const json* mu = find(j, "mu");
    if (mu == nullptr) fail(join(path, "mu"), "missing");
    pb.mu = parse_expr_array(*mu, join(path, "mu"), pb.dim, pb.control_dim,
                             static_cast<std::size_t>(pb.dim));
    pb.sigma = parse_sigma(find(j, "sigma"), join(path, "sigma"), pb.dim, pb.control_dim);

    const json* c = find(j, "running_cost");
    if (c == nullptr) fail(join(path, "running_cost"), "missing");
    pb.running_cost = parse_expr_field(*c, join(path, "running_cost"), pb.dim, pb.control_dim);
    const json* xi = find(j, "terminal_cost");
    if (xi == nullptr) fail(join(path, "terminal_cost"), "missing");
    pb.terminal_cost = parse_expr_field(*xi, join(path, "terminal_cost"), pb.dim, 0);

    if (const json* lo = find(j, "control_lower"))
        pb.control_lower = get_number_array(*lo, join(path, "control_lower"));
    if (const json* hi = find(j, "control_upper"))
        pb.control_upper = get_number_array(*hi, join(path, "control_upper"));
    // closed-form minimizer: z is bound through the u-slots, dimension d
    if (const json* um = find(j, "u_min"))
        pb.minimizer = parse_expr_array(*um, join(path, "u_min"), pb.dim, pb.dim,
                                        static_cast<std::size_t>(pb.control_dim));
    return pb;
}

HamiltonianMode parse_hamiltonian_mode(const json& j, const std::string& path) {
    const std::string s = get_string(j, path);
    if (s == "auto") return HamiltonianMode::kAuto;
    if (s == "closed_form") return HamiltonianMode::kClosedForm;
    if (s == "plug_in") return HamiltonianMode::kPolicyPlugIn;
    if (s == "grid_search") return HamiltonianMode::kGridSearch;
    fail(path, "expected auto | closed_form | plug_in | grid_search");
}

}  // namespace

RunConfig parse_config_text(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError("", std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("", "top-level JSON must be an object");
    check_keys(j, "",
               {"mode", "problem", "grid", "sampling", "training", "nets", "quadrature",
                "oracle", "output"});

    RunConfig cfg;
    const json* mode = find(j, "mode");
    if (mode == nullptr) fail("mode", "missing");
    const std::string mode_s = get_string(*mode, "mode");
    if (mode_s == "eigen") cfg.mode = RunMode::kEigen;
    else if (mode_s == "control") cfg.mode = RunMode::kControl;
    else if (mode_s == "sample") cfg.mode = RunMode::kSample;
    else if (mode_s == "oracle") cfg.mode = RunMode::kOracle;
    else if (mode_s == "gradcheck") cfg.mode = RunMode::kGradCheck;
    else fail("mode", "expected eigen | control | sample | oracle | gradcheck");

    const bool control_mode = cfg.mode == RunMode::kControl;
    const json* problem = find(j, "problem");
    if (problem == nullptr && cfg.mode != RunMode::kGradCheck)
        fail("problem", "missing");
    if (problem != nullptr) {
        if (control_mode)
            cfg.control_problem = parse_control_problem(*problem, "problem");
        else
            cfg.eigen_problem = parse_eigen_problem(*problem, "problem");
    }

    // grid
    if (const json* grid = find(j, "grid")) {
        check_keys(*grid, "grid", {"T", "N"});
        if (const json* t = find(*grid, "T")) cfg.train.grid.horizon = get_number(*t, "grid.T");
        if (const json* n = find(*grid, "N")) cfg.train.grid.steps = get_int(*n, "grid.N");
    }
    if (!(cfg.train.grid.horizon > 0.0)) fail("grid.T", "must be > 0");
    if (cfg.train.grid.steps < 1) fail("grid.N", "must be >= 1");
    if (cfg.control_problem) cfg.control_problem->horizon = cfg.train.grid.horizon;

    // sampling
    bool uniform_starts = true;
    if (const json* s = find(j, "sampling")) {
        check_keys(*s, "sampling", {"M", "K", "starts"});
        if (const json* m = find(*s, "M")) cfg.train.paths = get_int(*m, "sampling.M");
        if (const json* k = find(*s, "K")) cfg.train.starts = get_int(*k, "sampling.K");
        if (const json* st = find(*s, "starts")) {
            if (st->is_string()) {
                if (get_string(*st, "sampling.starts") != "uniform")
                    fail("sampling.starts", "expected \"uniform\" or an array of points");
            } else if (st->is_array()) {
                uniform_starts = false;
                const int dim = control_mode ? cfg.control_problem->dim
                                             : (cfg.eigen_problem ? cfg.eigen_problem->spec.dim : 0);
                for (std::size_t i = 0; i < st->size(); ++i) {
                    auto pt = get_number_array((*st)[i],
                                               "sampling.starts[" + std::to_string(i) + "]");
                    if (static_cast<int>(pt.size()) != dim)
                        fail("sampling.starts[" + std::to_string(i) + "]",
                             "point dimension mismatch");
                    cfg.train.start_points.push_back(std::move(pt));
                }
                if (cfg.train.start_points.empty())
                    fail("sampling.starts", "needs at least one point");
            } else {
                fail("sampling.starts", "expected \"uniform\" or an array of points");
            }
        }
    }
    if (cfg.train.paths < 1) fail("sampling.M", "must be >= 1");
    if (uniform_starts && cfg.train.starts < 1) fail("sampling.K", "must be >= 1");

    // training
    cfg.train.resample_interval = control_mode ? 5 : 10;
    if (const json* t = find(j, "training")) {
        check_keys(*t, "training",
                   {"epochs", "batch_size", "learning_rate", "optimizer", "beta", "gamma",
                    "beta_bc", "resample_interval", "seed", "differentiable_paths"});
        if (const json* e = find(*t, "epochs")) cfg.train.epochs = get_int(*e, "training.epochs");
        if (const json* b = find(*t, "batch_size"))
            cfg.train.batch = get_int(*b, "training.batch_size");
        else
            cfg.train.batch = std::min(64, cfg.train.paths);
        if (const json* lr = find(*t, "learning_rate"))
            cfg.train.optimizer.learning_rate = get_number(*lr, "training.learning_rate");
        if (const json* o = find(*t, "optimizer")) {
            const std::string s = get_string(*o, "training.optimizer");
            if (s == "adam") cfg.train.optimizer.kind = OptimizerConfig::Kind::kAdam;
            else if (s == "sgd") cfg.train.optimizer.kind = OptimizerConfig::Kind::kSgd;
            else fail("training.optimizer", "expected adam | sgd");
        }
        if (const json* b = find(*t, "beta")) cfg.train.beta = get_number(*b, "training.beta");
        if (const json* g = find(*t, "gamma")) cfg.train.gamma = get_number(*g, "training.gamma");
        if (const json* b = find(*t, "beta_bc"))
            cfg.train.beta_bc = get_number(*b, "training.beta_bc");
        if (const json* r = find(*t, "resample_interval"))
            cfg.train.resample_interval = get_int(*r, "training.resample_interval");
        if (const json* s = find(*t, "seed")) {
            if (!(*s).is_number_integer()) fail("training.seed", "expected an integer");
            cfg.train.seed = (*s).get<std::uint64_t>();
        }
        if (const json* dp = find(*t, "differentiable_paths"))
            cfg.train.differentiable_paths = get_bool(*dp, "training.differentiable_paths");
    } else {
        cfg.train.batch = std::min(64, cfg.train.paths);
    }
    if (cfg.train.epochs < 1) fail("training.epochs", "must be >= 1");
    if (cfg.train.batch < 1 || cfg.train.batch > cfg.train.paths)
        fail("training.batch_size", "must satisfy 1 <= batch_size <= M");
    if (!(cfg.train.optimizer.learning_rate > 0.0))
        fail("training.learning_rate", "must be > 0");
    if (cfg.train.resample_interval < 0) fail("training.resample_interval", "must be >= 0");
    if (cfg.train.gamma <= 0.0 && cfg.train.beta != 0.0 && !control_mode)
        fail("training.gamma", "must be > 0 when the regularizer is enabled (trivial-solution guard)");

    // nets
    if (const json* n = find(j, "nets")) {
        check_keys(*n, "nets", {"eigen", "control", "value"});
        if (const json* e = find(*n, "eigen"))
            cfg.train.eigen_layers = get_int_array(*e, "nets.eigen");
        if (const json* c = find(*n, "control"))
            cfg.train.control_layers = get_int_array(*c, "nets.control");
        if (const json* v = find(*n, "value"))
            cfg.train.value_layers = get_int_array(*v, "nets.value");
    }

    // quadrature
    if (const json* q = find(j, "quadrature")) {
        check_keys(*q, "quadrature", {"points_per_axis", "mc_points"});
        if (const json* p = find(*q, "points_per_axis"))
            cfg.train.quadrature.points_per_axis = get_int(*p, "quadrature.points_per_axis");
        if (const json* p = find(*q, "mc_points"))
            cfg.train.quadrature.mc_points = get_int(*p, "quadrature.mc_points");
        if (cfg.train.quadrature.points_per_axis < 1)
            fail("quadrature.points_per_axis", "must be >= 1");
        if (cfg.train.quadrature.mc_points < 1) fail("quadrature.mc_points", "must be >= 1");
    }
    cfg.train.quadrature.seed = mix64(cfg.train.seed, rng_stream::kQuad);

    // oracle attachment
    if (const json* o = find(j, "oracle")) {
        check_keys(*o, "oracle", {"kind", "n", "lambda_ref"});
        const json* kind = find(*o, "kind");
        if (kind == nullptr) fail("oracle.kind", "missing");
        const std::string s = get_string(*kind, "oracle.kind");
        if (s != "fd_eigen" && s != "riccati_lq" && s != "lambda_ref" && s != "none")
            fail("oracle.kind", "expected fd_eigen | riccati_lq | lambda_ref | none");
        cfg.train.oracle = s == "none" ? "" : s;
        if (const json* n = find(*o, "n")) cfg.train.fd_intervals = get_int(*n, "oracle.n");
        if (const json* l = find(*o, "lambda_ref"))
            cfg.train.lambda_ref = get_number(*l, "oracle.lambda_ref");
    }

    if (const json* h = problem != nullptr ? find(*problem, "hamiltonian") : nullptr)
        cfg.train.hamiltonian = parse_hamiltonian_mode(*h, "problem.hamiltonian");

    if (const json* out = find(j, "output")) cfg.output_dir = get_string(*out, "output");

    // materialize start points
    if (uniform_starts && cfg.train.start_points.empty()) {
        if (control_mode)
            fail("sampling.starts", "control runs need explicit start points");
        if (cfg.eigen_problem) {
            try {
                cfg.train.start_points = sample_uniform_starts(
                    cfg.eigen_problem->spec.domain, cfg.train.starts, cfg.train.seed);
            } catch (const UsageError& e) {
                fail("sampling.starts", e.what());
            }
        }
    }
    cfg.uniform_starts = uniform_starts;
    if (cfg.eigen_problem) cfg.eigen_problem->starts = cfg.train.start_points;

    // final structural validation
    try {
        if (cfg.eigen_problem) cfg.eigen_problem->validate();
        if (cfg.control_problem) cfg.control_problem->validate();
    } catch (const UsageError& e) {
        fail("problem", e.what());
    }
    return cfg;
}

void RunConfig::reseed(std::uint64_t seed) {
    train.seed = seed;
    train.quadrature.seed = mix64(seed, rng_stream::kQuad);
    if (uniform_starts && eigen_problem) {
        train.start_points = sample_uniform_starts(eigen_problem->spec.domain,
                                                   static_cast<int>(train.start_points.size()),
                                                   seed);
        eigen_problem->starts = train.start_points;
    }
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

}  // namespace martnet

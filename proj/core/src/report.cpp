#include "martnet/report.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace martnet {

using ordered_json = nlohmann::ordered_json;

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string format_double_17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_metrics_csv(const TrainReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << "epoch,loss,lambda_or_J,reg,boundary,seconds\n";
    for (const EpochRow& r : report.rows)
        out << r.epoch << ',' << format_double(r.loss) << ',' << format_double(r.lambda_or_j)
            << ',' << format_double(r.reg) << ',' << format_double(r.boundary) << ','
            << format_double(r.seconds) << '\n';
}

void write_ensemble_csv(const PathEnsemble& e, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << "m,i,t";
    for (int j = 0; j < e.dim; ++j) out << ",x" << j;
    for (int j = 0; j < e.dim; ++j) out << ",dB" << j;
    out << ",dL,tau\n";
    for (int m = 0; m < e.paths; ++m) {
        for (int i = 0; i <= e.grid.steps; ++i) {
            out << m << ',' << i << ',' << format_double(e.grid.time(i));
            for (double x : e.state(m, i)) out << ',' << format_double(x);
            if (i < e.grid.steps) {
                for (double b : e.increment(m, i)) out << ',' << format_double(b);
                out << ',' << format_double(e.local_time_increment(m, i));
            } else {
                for (int j = 0; j < e.dim; ++j) out << ",0";
                out << ",0";
            }
            out << ',' << e.exit_index[m] << '\n';
        }
    }
}

void write_lattice_csv(const LatticeEval& lattice, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    for (std::size_t c = 0; c < lattice.columns.size(); ++c)
        out << (c ? "," : "") << lattice.columns[c];
    out << '\n';
    for (const auto& row : lattice.rows) {
        for (std::size_t c = 0; c < row.size(); ++c)
            out << (c ? "," : "") << format_double(row[c]);
        out << '\n';
    }
}

namespace {

ordered_json net_to_json(const MlpParams& net) {
    ordered_json j;
    j["layer_sizes"] = net.layer_sizes;
    j["activation"] = "tanh";
    ordered_json params = ordered_json::array();
    for (double p : net.params) params.push_back(format_double_17(p));
    j["params"] = std::move(params);
    return j;
}

MlpParams net_from_json(const ordered_json& j) {
    if (!j.contains("layer_sizes") || !j.contains("params"))
        throw Error("corrupt checkpoint: missing layer_sizes/params");
    MlpParams net;
    net.layer_sizes = j["layer_sizes"].get<std::vector<int>>();
    if (j.contains("activation") && j["activation"].get<std::string>() != "tanh")
        throw Error("corrupt checkpoint: unsupported activation");
    const auto& params = j["params"];
    if (!params.is_array()) throw Error("corrupt checkpoint: params must be an array");
    net.params.reserve(params.size());
    for (const auto& p : params) {
        const std::string s = p.get<std::string>();
        net.params.push_back(std::strtod(s.c_str(), nullptr));
    }
    if (net.params.size() != MlpParams::param_count(net.layer_sizes))
        throw Error("corrupt checkpoint: parameter count mismatch");
    return net;
}

void dump_json(const ordered_json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(2) << '\n';
}

ordered_json load_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("corrupt checkpoint " + path + ": " + e.what());
    }
    return j;
}

}  // namespace

void save_checkpoint(const EigenState& state, const std::string& path) {
    ordered_json j;
    j["u"] = net_to_json(state.u);
    j["lambda"] = format_double_17(state.lambda);
    dump_json(j, path);
}

void save_checkpoint(const ControlState& state, const std::string& path) {
    ordered_json j;
    j["control"] = net_to_json(state.control);
    j["value"] = net_to_json(state.value);
    dump_json(j, path);
}

EigenState load_checkpoint_eigen(const std::string& path) {
    const ordered_json j = load_json(path);
    if (!j.contains("u") || !j.contains("lambda")) throw Error("corrupt checkpoint " + path);
    EigenState state;
    state.u = net_from_json(j["u"]);
    state.lambda = std::strtod(j["lambda"].get<std::string>().c_str(), nullptr);
    return state;
}

ControlState load_checkpoint_control(const std::string& path) {
    const ordered_json j = load_json(path);
    if (!j.contains("control") || !j.contains("value"))
        throw Error("corrupt checkpoint " + path);
    ControlState state;
    state.control = net_from_json(j["control"]);
    state.value = net_from_json(j["value"]);
    return state;
}

}  // namespace martnet

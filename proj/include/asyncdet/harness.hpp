#pragma once

#include "oracle.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <istream>
#include <thread>

namespace asyncdet {

// Declarative experiment description; round-trips through JSON unchanged.
struct ProblemConfig {
    enum class Kind { linear, affine, convdiff };
    Kind kind = Kind::linear;
    // linear
    std::size_t n = 32;
    double alpha = 0.5;
    std::uint64_t problem_seed = 7;
    // affine: explicit f(x) = Mx + c
    std::vector<std::vector<double>> matrix;
    Vector offset;
    // convdiff
    ConvDiffConfig convdiff;
    // shared
    std::size_t p = 4;
};

struct ExperimentConfig {
    ProblemConfig problem;
    DetectionConfig detection;
    EngineConfig engine;
    NormKind norm = NormKind::max;
    double norm_q = 2.0;
    bool algebraic_residual = true; // convdiff: measure block rows of |Ax-b|
    std::vector<std::uint64_t> seeds{1};
    std::uint64_t master_seed = 1;
    // sweep axes; empty -> the single configured value
    std::vector<ProtocolKind> protocols;
    std::vector<double> epsilons;
    std::vector<std::size_t> process_counts;
    std::string output_csv;
    std::string event_log_dir; // when set, per-run event logs land here
};

inline ProtocolKind protocol_from_string(const std::string& s) {
    if (s == "exs") return ProtocolKind::exs;
    if (s == "sbs") return ProtocolKind::sbs;
    if (s == "nfais") return ProtocolKind::nfais;
    if (s == "pfait") return ProtocolKind::pfait;
    throw config_error("unknown protocol: " + s);
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    auto& p = j["problem"];
    p["kind"] = cfg.problem.kind == ProblemConfig::Kind::linear
                    ? "linear"
                    : (cfg.problem.kind == ProblemConfig::Kind::affine ? "affine" : "convdiff");
    p["p"] = cfg.problem.p;
    if (cfg.problem.kind == ProblemConfig::Kind::linear) {
        p["n"] = cfg.problem.n;
        p["alpha"] = cfg.problem.alpha;
        p["problem_seed"] = cfg.problem.problem_seed;
    } else if (cfg.problem.kind == ProblemConfig::Kind::affine) {
        p["matrix"] = cfg.problem.matrix;
        p["c"] = cfg.problem.offset;
    } else {
        p["nx"] = cfg.problem.convdiff.nx;
        p["nu"] = cfg.problem.convdiff.nu;
        p["velocity"] = cfg.problem.convdiff.velocity;
        p["source"] = cfg.problem.convdiff.source;
        p["dt"] = cfg.problem.convdiff.dt;
    }
    auto& d = j["detection"];
    d["protocol"] = to_string(cfg.detection.protocol);
    d["epsilon"] = cfg.detection.epsilon;
    d["epsilon_tilde"] = cfg.detection.epsilon_tilde;
    d["m"] = cfg.detection.persistence_m;
    d["c"] = cfg.detection.c_of_pm;
    d["auto_threshold"] = cfg.detection.auto_threshold;
    d["reduction_period"] = cfg.detection.reduction_period;
    d["skip_unconverged_rounds"] = cfg.detection.skip_unconverged_rounds;
    auto& dl = j["delivery"];
    dl["mode"] = cfg.engine.delivery.mode == DeliveryModel::Mode::fifo ? "fifo" : "bounded";
    dl["degree"] = cfg.engine.delivery.degree;
    dl["cross_kind_rule"] = cfg.engine.delivery.cross_kind_rule;
    dl["computation_latency_max"] = cfg.engine.delivery.computation_latency_max;
    dl["control_latency_max"] = cfg.engine.delivery.control_latency_max;
    auto& e = j["engine"];
    e["mode"] = cfg.engine.synchronous ? "synchronous" : "asynchronous";
    e["max_events"] = cfg.engine.max_events;
    e["step_delay_max"] = cfg.engine.step_delay_max;
    e["fairness_bound"] = cfg.engine.fairness_bound;
    e["initial_value"] = cfg.engine.initial_value;
    j["residual"]["norm"] = cfg.norm == NormKind::max ? "max" : "lq";
    j["residual"]["q"] = cfg.norm_q;
    j["residual"]["algebraic"] = cfg.algebraic_residual;
    j["seeds"] = cfg.seeds;
    j["master_seed"] = cfg.master_seed;
    auto& s = j["sweep"];
    s["protocols"] = nlohmann::json::array();
    for (auto pk : cfg.protocols) {
        s["protocols"].push_back(to_string(pk));
    }
    s["epsilons"] = cfg.epsilons;
    s["process_counts"] = cfg.process_counts;
    j["output"]["csv"] = cfg.output_csv;
    j["output"]["event_log_dir"] = cfg.event_log_dir;
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    const auto& p = j.at("problem");
    const std::string kind = p.at("kind");
    if (kind == "linear") {
        cfg.problem.kind = ProblemConfig::Kind::linear;
        cfg.problem.n = p.at("n");
        cfg.problem.alpha = p.at("alpha");
        cfg.problem.problem_seed = p.value("problem_seed", 7ULL);
    } else if (kind == "affine") {
        cfg.problem.kind = ProblemConfig::Kind::affine;
        cfg.problem.matrix = p.at("matrix").get<std::vector<std::vector<double>>>();
        cfg.problem.offset = p.at("c").get<Vector>();
    } else if (kind == "convdiff") {
        cfg.problem.kind = ProblemConfig::Kind::convdiff;
        cfg.problem.convdiff.nx = p.at("nx");
        cfg.problem.convdiff.nu = p.value("nu", 1.0);
        if (p.contains("velocity")) {
            cfg.problem.convdiff.velocity = p.at("velocity");
        }
        cfg.problem.convdiff.source = p.value("source", 1.0);
        cfg.problem.convdiff.dt = p.value("dt", 0.1);
    } else {
        throw config_error("unknown problem kind: " + kind);
    }
    cfg.problem.p = p.at("p");
    const auto& d = j.at("detection");
    cfg.detection.protocol = protocol_from_string(d.at("protocol"));
    cfg.detection.epsilon = d.at("epsilon");
    cfg.detection.epsilon_tilde = d.value("epsilon_tilde", cfg.detection.epsilon);
    cfg.detection.persistence_m = d.value("m", std::size_t{2});
    cfg.detection.c_of_pm = d.value("c", 0.0);
    cfg.detection.auto_threshold = d.value("auto_threshold", false);
    cfg.detection.reduction_period = d.value("reduction_period", std::uint64_t{1});
    cfg.detection.skip_unconverged_rounds = d.value("skip_unconverged_rounds", false);
    if (j.contains("delivery")) {
        const auto& dl = j.at("delivery");
        const std::string mode = dl.value("mode", "fifo");
        if (mode == "fifo") {
            cfg.engine.delivery.mode = DeliveryModel::Mode::fifo;
        } else if (mode == "bounded") {
            cfg.engine.delivery.mode = DeliveryModel::Mode::bounded_out_of_order;
        } else {
            throw config_error("unknown delivery mode: " + mode);
        }
        cfg.engine.delivery.degree = dl.value("degree", std::size_t{0});
        cfg.engine.delivery.cross_kind_rule = dl.value("cross_kind_rule", true);
        cfg.engine.delivery.computation_latency_max = dl.value("computation_latency_max", Tick{8});
        cfg.engine.delivery.control_latency_max = dl.value("control_latency_max", Tick{4});
    }
    if (j.contains("engine")) {
        const auto& e = j.at("engine");
        cfg.engine.synchronous = e.value("mode", "asynchronous") == std::string("synchronous");
        cfg.engine.max_events = e.value("max_events", std::uint64_t{1'000'000});
        cfg.engine.step_delay_max = e.value("step_delay_max", Tick{6});
        cfg.engine.fairness_bound = e.value("fairness_bound", std::size_t{0});
        cfg.engine.initial_value = e.value("initial_value", 0.0);
    }
    if (j.contains("residual")) {
        const auto& r = j.at("residual");
        cfg.norm = r.value("norm", "max") == std::string("max") ? NormKind::max : NormKind::lq;
        cfg.norm_q = r.value("q", 2.0);
        cfg.algebraic_residual = r.value("algebraic", true);
    }
    cfg.seeds = j.value("seeds", std::vector<std::uint64_t>{1});
    cfg.master_seed = j.value("master_seed", std::uint64_t{1});
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        for (const auto& name : s.value("protocols", std::vector<std::string>{})) {
            cfg.protocols.push_back(protocol_from_string(name));
        }
        cfg.epsilons = s.value("epsilons", std::vector<double>{});
        cfg.process_counts = s.value("process_counts", std::vector<std::size_t>{});
    }
    if (j.contains("output")) {
        cfg.output_csv = j.at("output").value("csv", "");
        cfg.event_log_dir = j.at("output").value("event_log_dir", "");
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw config_error("cannot open config file: " + path);
    }
    nlohmann::json j;
    in >> j;
    return config_from_json(j);
}

// Materialize the problem and residual spec for one sweep point.
inline RunSetup build_setup(const ExperimentConfig& cfg, ProtocolKind protocol, double epsilon, std::size_t p) {
    RunSetup setup;
    if (cfg.problem.kind == ProblemConfig::Kind::linear) {
        LinearFixedPoint lin = build_linear(cfg.problem.n, p, cfg.problem.alpha, cfg.problem.problem_seed);
        setup.problem = lin.problem();
        setup.residual = make_map_residual(setup.problem, cfg.norm, cfg.norm_q);
    } else if (cfg.problem.kind == ProblemConfig::Kind::affine) {
        setup.problem = make_affine_problem(cfg.problem.matrix, cfg.problem.offset, p);
        setup.residual = make_map_residual(setup.problem, cfg.norm, cfg.norm_q);
    } else {
        ConvDiffConfig cd = cfg.problem.convdiff;
        cd.p = p;
        ConvDiffProblem prob = discretize_convdiff(cd);
        setup.problem = prob.problem();
        setup.residual = cfg.algebraic_residual ? prob.algebraic_residual_spec()
                                                : make_map_residual(setup.problem, cfg.norm, cfg.norm_q);
    }
    setup.engine = cfg.engine;
    setup.detection = cfg.detection;
    setup.detection.protocol = protocol;
    setup.detection.epsilon = epsilon;
    return setup;
}

struct RunReport {
    std::uint64_t run_id = 0;
    ProtocolKind protocol = ProtocolKind::pfait;
    std::uint64_t seed = 0;
    std::size_t p = 0;
    std::size_t n = 0;
    double epsilon = 0.0;
    double epsilon_tilde = 0.0;
    std::string verdict;
    double r_star = 0.0;
    double reported_residual = 0.0;
    std::uint64_t k_max = 0;
    std::uint64_t total_events = 0;
    std::uint64_t snapshot_rounds = 0;
    std::uint64_t confirmed = 0;
    std::uint64_t discarded = 0;
    std::uint64_t marker_count = 0;
    std::uint64_t confirm_count = 0;
    std::uint64_t fragment_count = 0;
    std::uint64_t snapshot_payload_bytes = 0;
    std::uint64_t computation_payload_bytes = 0;
    std::string snapshot_history; // round:status transitions, semicolon-joined
    std::string error;
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string csv_safe(std::string s) {
    for (char& c : s) {
        if (c == ',' || c == '\n') {
            c = ';';
        }
    }
    return s;
}

inline std::size_t worker_cap_from_env() {
    if (const char* env = std::getenv("ASYNCDET_WORKERS")) {
        const long v = std::atol(env);
        if (v > 0) {
            return static_cast<std::size_t>(v);
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

} // namespace detail

// One run at a fixed sweep point. The run's RNG stream depends only on
// (master_seed, seed), so edits to one axis never disturb another point.
inline RunReport execute_run(const ExperimentConfig& cfg, const RunSetup& setup, std::uint64_t run_id,
                             std::uint64_t seed) {
    RunReport report;
    report.run_id = run_id;
    report.protocol = setup.detection.protocol;
    report.seed = seed;
    report.p = setup.problem.block_count();
    report.n = setup.problem.dimension;
    report.epsilon = setup.detection.effective_epsilon();
    report.epsilon_tilde = setup.detection.epsilon_tilde;
    try {
        RunSetup local = setup;
        if (!cfg.event_log_dir.empty()) {
            local.engine.record_event_log = true;
        }
        RunOutput out = run_once(local, mix_seed(cfg.master_seed, seed));
        if (!cfg.event_log_dir.empty()) {
            std::ofstream log(cfg.event_log_dir + "/run_" + std::to_string(run_id) + ".log");
            log << out.result.event_log;
        }
        report.verdict = to_string(out.result.verdict);
        report.reported_residual = out.result.reported_residual;
        report.k_max = out.result.k_max;
        report.total_events = out.result.stats.total_events;
        if (cfg.problem.kind == ProblemConfig::Kind::convdiff) {
            ConvDiffConfig cd = cfg.problem.convdiff;
            cd.p = report.p;
            report.r_star = discretize_convdiff(cd).final_report_residual(out.result.final_solution);
        } else {
            report.r_star = oracle_residual_at_cut(cut_from_final_state(out.result, setup.problem),
                                                   setup.problem, setup.residual);
        }
        const auto& stats = out.result.stats;
        report.marker_count = stats.sent[static_cast<std::size_t>(EnvelopeKind::snapshot_marker)];
        report.confirm_count = stats.sent[static_cast<std::size_t>(EnvelopeKind::snapshot_confirm)];
        report.fragment_count = stats.sent[static_cast<std::size_t>(EnvelopeKind::reduction_fragment)];
        report.snapshot_payload_bytes =
            stats.payload_bytes[static_cast<std::size_t>(EnvelopeKind::snapshot_marker)] +
            stats.payload_bytes[static_cast<std::size_t>(EnvelopeKind::snapshot_confirm)];
        report.computation_payload_bytes = stats.payload_bytes[static_cast<std::size_t>(EnvelopeKind::computation)];
        if (const auto* snap = dynamic_cast<const SnapshotProtocolBase*>(out.protocol.get())) {
            report.snapshot_rounds = snap->outcomes().size();
            report.confirmed = snap->count_trace("finalized:confirmed");
            report.discarded = snap->count_trace("finalized:discarded");
            std::ostringstream history;
            for (const SnapshotOutcome& outcome : snap->outcomes()) {
                history << (history.tellp() > 0 ? ";" : "") << outcome.round << ':'
                        << (outcome.terminated ? "terminated" : (outcome.all_valid ? "resolved" : "discarded"));
            }
            report.snapshot_history = history.str();
        }
    } catch (const std::exception& e) {
        report.verdict = "failed";
        report.error = e.what();
    }
    return report;
}

// Every (protocol x epsilon x p x seed) combination, deterministically
// numbered; failures are recorded per run without aborting the sweep.
inline std::vector<RunReport> run_sweep(const ExperimentConfig& cfg, std::size_t worker_cap = 0) {
    const std::vector<ProtocolKind> protocols =
        cfg.protocols.empty() ? std::vector<ProtocolKind>{cfg.detection.protocol} : cfg.protocols;
    const std::vector<double> epsilons =
        cfg.epsilons.empty() ? std::vector<double>{cfg.detection.epsilon} : cfg.epsilons;
    const std::vector<std::size_t> ps =
        cfg.process_counts.empty() ? std::vector<std::size_t>{cfg.problem.p} : cfg.process_counts;

    struct Point {
        ProtocolKind protocol;
        double epsilon;
        std::size_t p;
        std::uint64_t seed;
    };
    std::vector<Point> points;
    for (ProtocolKind pk : protocols) {
        for (double eps : epsilons) {
            for (std::size_t p : ps) {
                for (std::uint64_t seed : cfg.seeds) {
                    points.push_back(Point{pk, eps, p, seed});
                }
            }
        }
    }
    std::vector<RunReport> reports(points.size());
    if (points.empty()) {
        return reports;
    }

    // Sweep points share nothing; setups are built per worker task.
    std::size_t workers = worker_cap != 0 ? worker_cap : detail::worker_cap_from_env();
    workers = std::min(workers, points.size());
    std::atomic<std::size_t> cursor{0};
    auto work = [&]() {
        while (true) {
            const std::size_t i = cursor.fetch_add(1);
            if (i >= points.size()) {
                return;
            }
            const Point& pt = points[i];
            try {
                RunSetup setup = build_setup(cfg, pt.protocol, pt.epsilon, pt.p);
                reports[i] = execute_run(cfg, setup, i, pt.seed);
            } catch (const std::exception& e) {
                reports[i].run_id = i;
                reports[i].protocol = pt.protocol;
                reports[i].seed = pt.seed;
                reports[i].p = pt.p;
                reports[i].epsilon = pt.epsilon;
                reports[i].verdict = "failed";
                reports[i].error = e.what();
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(work);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    return reports;
}

inline const char* csv_header() {
    return "run_id,protocol,seed,p,n,epsilon,epsilon_tilde,verdict,r_star,reported_residual,k_max,"
           "total_events,snapshot_rounds,confirmed,discarded,marker_count,confirm_count,fragment_count,"
           "snapshot_payload_bytes,computation_payload_bytes,snapshot_history,error";
}

inline std::string reports_to_csv(std::span<const RunReport> reports) {
    std::ostringstream os;
    os << csv_header() << '\n';
    for (const RunReport& r : reports) {
        os << r.run_id << ',' << to_string(r.protocol) << ',' << r.seed << ',' << r.p << ',' << r.n << ','
           << detail::format_double(r.epsilon) << ',' << detail::format_double(r.epsilon_tilde) << ','
           << r.verdict << ',' << detail::format_double(r.r_star) << ','
           << detail::format_double(r.reported_residual) << ',' << r.k_max << ',' << r.total_events << ','
           << r.snapshot_rounds << ',' << r.confirmed << ',' << r.discarded << ',' << r.marker_count << ','
           << r.confirm_count << ',' << r.fragment_count << ',' << r.snapshot_payload_bytes << ','
           << r.computation_payload_bytes << ',' << r.snapshot_history << ',' << detail::csv_safe(r.error)
           << '\n';
    }
    return os.str();
}

inline std::vector<RunReport> reports_from_csv(std::istream& in) {
    std::vector<RunReport> out;
    std::string line;
    if (!std::getline(in, line)) {
        return out;
    }
    if (line != csv_header()) {
        throw config_error("reports_from_csv: unexpected header");
    }
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                cells.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        }
        if (cells.size() != 22) {
            throw config_error("reports_from_csv: malformed row");
        }
        RunReport r;
        r.run_id = std::stoull(cells[0]);
        r.protocol = protocol_from_string(cells[1]);
        r.seed = std::stoull(cells[2]);
        r.p = std::stoull(cells[3]);
        r.n = std::stoull(cells[4]);
        r.epsilon = std::stod(cells[5]);
        r.epsilon_tilde = std::stod(cells[6]);
        r.verdict = cells[7];
        r.r_star = std::stod(cells[8]);
        r.reported_residual = std::stod(cells[9]);
        r.k_max = std::stoull(cells[10]);
        r.total_events = std::stoull(cells[11]);
        r.snapshot_rounds = std::stoull(cells[12]);
        r.confirmed = std::stoull(cells[13]);
        r.discarded = std::stoull(cells[14]);
        r.marker_count = std::stoull(cells[15]);
        r.confirm_count = std::stoull(cells[16]);
        r.fragment_count = std::stoull(cells[17]);
        r.snapshot_payload_bytes = std::stoull(cells[18]);
        r.computation_payload_bytes = std::stoull(cells[19]);
        r.snapshot_history = cells[20];
        r.error = cells[21];
        out.push_back(std::move(r));
    }
    return out;
}

struct TableOutput {
    std::string csv;
    std::string text;
};

// Grouped summary in the shape of the benchmark tables: one row per group,
// min/max/mean r*, mean event count, max k_max. Group keys ascend.
inline TableOutput emit_table(std::span<const RunReport> reports, const std::vector<std::string>& group_by,
                              const std::vector<std::string>& stats = {"min", "max", "mean"}) {
    if (reports.empty()) {
        throw contract_error("emit_table: no reports");
    }
    for (const auto& g : group_by) {
        if (g != "protocol" && g != "p" && g != "epsilon" && g != "n" && g != "seed") {
            throw config_error("emit_table: unknown group key: " + g);
        }
    }
    for (const auto& s : stats) {
        if (s != "min" && s != "max" && s != "mean") {
            throw config_error("emit_table: unknown stat: " + s);
        }
    }
    // Sort keys pair numeric axes with their value so rows ascend numerically.
    using GroupKey = std::vector<std::pair<double, std::string>>;
    auto key_of = [&](const RunReport& r) {
        GroupKey key;
        for (const auto& g : group_by) {
            if (g == "protocol") key.emplace_back(0.0, to_string(r.protocol));
            if (g == "p") key.emplace_back(static_cast<double>(r.p), std::to_string(r.p));
            if (g == "epsilon") key.emplace_back(r.epsilon, detail::format_double(r.epsilon));
            if (g == "n") key.emplace_back(static_cast<double>(r.n), std::to_string(r.n));
            if (g == "seed") key.emplace_back(static_cast<double>(r.seed), std::to_string(r.seed));
        }
        return key;
    };
    auto grouped_on = [&](const std::string& axis) {
        return std::find(group_by.begin(), group_by.end(), axis) != group_by.end();
    };
    std::map<GroupKey, std::vector<const RunReport*>> groups;
    for (const RunReport& r : reports) {
        groups[key_of(r)].push_back(&r);
    }
    // Groups must be homogeneous in the axes not grouped on.
    for (const auto& [key, rows] : groups) {
        for (const RunReport* r : rows) {
            if (!grouped_on("protocol") && r->protocol != rows.front()->protocol) {
                throw config_error("emit_table: group mixes values on axis protocol");
            }
            if (!grouped_on("p") && r->p != rows.front()->p) {
                throw config_error("emit_table: group mixes values on axis p");
            }
            if (!grouped_on("epsilon") && r->epsilon != rows.front()->epsilon) {
                throw config_error("emit_table: group mixes values on axis epsilon");
            }
            if (!grouped_on("n") && r->n != rows.front()->n) {
                throw config_error("emit_table: group mixes values on axis n");
            }
        }
    }

    std::vector<std::string> header;
    for (const auto& g : group_by) {
        header.push_back(g);
    }
    header.push_back("runs");
    for (const auto& s : stats) {
        header.push_back(s + "_r_star");
    }
    header.push_back("mean_events");
    header.push_back("max_k_max");

    std::vector<std::vector<std::string>> rows;
    for (const auto& [key, members] : groups) {
        double mn = std::numeric_limits<double>::infinity();
        double mx = -std::numeric_limits<double>::infinity();
        double sum = 0.0;
        double events = 0.0;
        std::uint64_t kmax = 0;
        for (const RunReport* r : members) {
            mn = std::min(mn, r->r_star);
            mx = std::max(mx, r->r_star);
            sum += r->r_star;
            events += static_cast<double>(r->total_events);
            kmax = std::max(kmax, r->k_max);
        }
        std::vector<std::string> row;
        for (const auto& part : key) {
            row.push_back(part.second);
        }
        row.push_back(std::to_string(members.size()));
        for (const auto& s : stats) {
            if (s == "min") row.push_back(detail::format_double(mn));
            if (s == "max") row.push_back(detail::format_double(mx));
            if (s == "mean") row.push_back(detail::format_double(sum / static_cast<double>(members.size())));
        }
        row.push_back(detail::format_double(events / static_cast<double>(members.size())));
        row.push_back(std::to_string(kmax));
        rows.push_back(std::move(row));
    }

    TableOutput out;
    std::ostringstream csv;
    for (std::size_t c = 0; c < header.size(); ++c) {
        csv << (c ? "," : "") << header[c];
    }
    csv << '\n';
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            csv << (c ? "," : "") << row[c];
        }
        csv << '\n';
    }
    out.csv = csv.str();

    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        width[c] = header[c].size();
        for (const auto& row : rows) {
            width[c] = std::max(width[c], row[c].size());
        }
    }
    std::ostringstream text;
    for (std::size_t c = 0; c < header.size(); ++c) {
        text << std::left << std::setw(static_cast<int>(width[c]) + 2) << header[c];
    }
    text << '\n';
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            text << std::left << std::setw(static_cast<int>(width[c]) + 2) << row[c];
        }
        text << '\n';
    }
    out.text = text.str();
    return out;
}

// Scripted replay: explicit step ticks, per-link delivery delays by sequence
// number, and per-process iterations at which local convergence holds.
struct TraceScript {
    ExperimentConfig base;
    std::vector<std::vector<Tick>> steps;
    std::map<std::pair<ProcessId, ProcessId>, std::vector<Tick>> link_delays;
    Tick default_delay = 1;
    std::vector<std::vector<std::uint64_t>> convergence_at; // empty -> threshold predicate
};

inline TraceScript script_from_json(const nlohmann::json& j) {
    TraceScript script;
    script.base = config_from_json(j);
    script.steps = j.at("steps").get<std::vector<std::vector<Tick>>>();
    script.default_delay = j.value("default_delay", Tick{1});
    if (j.contains("link_delays")) {
        for (const auto& entry : j.at("link_delays")) {
            const ProcessId from = entry.at("from");
            const ProcessId to = entry.at("to");
            script.link_delays[{from, to}] = entry.at("delays").get<std::vector<Tick>>();
        }
    }
    if (j.contains("convergence_at")) {
        script.convergence_at = j.at("convergence_at").get<std::vector<std::vector<std::uint64_t>>>();
    }
    return script;
}

inline RunSetup setup_from_script(const TraceScript& script) {
    RunSetup setup = build_setup(script.base, script.base.detection.protocol, script.base.detection.epsilon,
                                 script.base.problem.p);
    setup.engine.scripted_steps = script.steps;
    auto delays = script.link_delays;
    const Tick fallback = script.default_delay;
    setup.engine.delivery.scripted_latency = [delays, fallback](const Envelope& env) -> std::optional<Tick> {
        auto it = delays.find({env.from, env.to});
        if (it != delays.end() && env.seq < it->second.size()) {
            return it->second[env.seq];
        }
        return fallback;
    };
    if (!script.convergence_at.empty()) {
        auto at = script.convergence_at;
        setup.detection.convergence_predicate = [at](ProcessId pid, std::uint64_t iter, double) {
            if (pid >= at.size()) {
                return false;
            }
            return std::find(at[pid].begin(), at[pid].end(), iter) != at[pid].end();
        };
    }
    return setup;
}

} // namespace asyncdet

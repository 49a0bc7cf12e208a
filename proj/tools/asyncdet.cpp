// Experiment runner for asynchronous fixed-point iterations with pluggable
// convergence-detection protocols. See README.md for the config schema.

#include <asyncdet/harness.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>

namespace {

int cmd_run(const std::string& config_path, const std::string& csv_override, const std::string& log_dir,
            std::size_t workers) {
    const auto start = std::chrono::steady_clock::now();
    asyncdet::ExperimentConfig cfg = asyncdet::load_config(config_path);
    if (!csv_override.empty()) {
        cfg.output_csv = csv_override;
    }
    if (!log_dir.empty()) {
        cfg.event_log_dir = log_dir;
    }
    std::vector<asyncdet::RunReport> reports = asyncdet::run_sweep(cfg, workers);
    const std::string csv = asyncdet::reports_to_csv(reports);
    if (!cfg.output_csv.empty()) {
        std::ofstream out(cfg.output_csv);
        if (!out) {
            std::cerr << "cannot write " << cfg.output_csv << "\n";
            return 1;
        }
        out << csv;
    } else {
        std::cout << csv;
    }
    std::size_t failed = 0;
    for (const auto& r : reports) {
        if (r.verdict == "failed") {
            ++failed;
            std::cerr << "run " << r.run_id << " failed: " << r.error << "\n";
        }
    }
    if (!reports.empty()) {
        asyncdet::TableOutput table = asyncdet::emit_table(reports, {"protocol", "p"});
        std::cerr << table.text;
    }
    const auto seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cerr << "total wall time (non-normative; simulated ticks are the unit of record): " << seconds
              << " s\n";
    return failed == 0 ? 0 : 2;
}

int cmd_table(const std::string& reports_path, const std::vector<std::string>& group_by,
              const std::vector<std::string>& stats, const std::string& out_csv) {
    std::ifstream in(reports_path);
    if (!in) {
        std::cerr << "cannot open " << reports_path << "\n";
        return 1;
    }
    std::vector<asyncdet::RunReport> reports = asyncdet::reports_from_csv(in);
    asyncdet::TableOutput table = asyncdet::emit_table(reports, group_by, stats);
    std::cout << table.text;
    if (!out_csv.empty()) {
        std::ofstream out(out_csv);
        out << table.csv;
    }
    return 0;
}

int cmd_estimate_c(const std::string& config_path, std::size_t runs, std::uint64_t seed_base) {
    asyncdet::ExperimentConfig cfg = asyncdet::load_config(config_path);
    if (cfg.detection.protocol != asyncdet::ProtocolKind::nfais) {
        std::cerr << "estimate-c requires a config with detection.protocol = nfais\n";
        return 1;
    }
    asyncdet::RunSetup setup =
        asyncdet::build_setup(cfg, cfg.detection.protocol, cfg.detection.epsilon, cfg.problem.p);
    asyncdet::BoundEstimate est = asyncdet::estimate_c(setup, runs, seed_base);
    std::cout << "p " << est.p << "\n"
              << "m " << est.m << "\n"
              << "runs " << est.run_count << "\n"
              << "samples " << est.samples.size() << "\n"
              << "c_est " << asyncdet::detail::format_double(est.c_est) << "\n";
    return 0;
}

int cmd_replay(const std::string& trace_path) {
    std::ifstream in(trace_path);
    if (!in) {
        std::cerr << "cannot open " << trace_path << "\n";
        return 1;
    }
    nlohmann::json j;
    in >> j;
    asyncdet::TraceScript script = asyncdet::script_from_json(j);
    asyncdet::RunSetup setup = asyncdet::setup_from_script(script);
    asyncdet::RunOutput out = asyncdet::run_once(setup, setup.engine.seed);
    std::cout << "verdict " << asyncdet::to_string(out.result.verdict) << "\n";
    std::cout << "iterations";
    for (auto k : out.result.iterations) {
        std::cout << ' ' << k;
    }
    std::cout << "\n";
    if (const auto* snap = dynamic_cast<const asyncdet::SnapshotProtocolBase*>(out.protocol.get())) {
        std::cout.precision(17);
        auto print_records = [&](std::span<const asyncdet::SnapshotRecord> records) {
            for (const asyncdet::SnapshotRecord& rec : records) {
                std::cout << "process " << rec.owner << " round " << rec.round << " status "
                          << asyncdet::to_string(rec.status) << "\n";
                if (rec.own_record) {
                    std::cout << "  own(k=" << rec.own_stamp << "):";
                    for (double v : *rec.own_record) {
                        std::cout << ' ' << v;
                    }
                    std::cout << "\n";
                }
                for (std::size_t k = 0; k < rec.dep_blocks.size(); ++k) {
                    if (!rec.dep_records[k]) {
                        continue;
                    }
                    std::cout << "  dep " << rec.dep_blocks[k] << "(k=" << rec.dep_stamps[k] << "):";
                    for (double v : *rec.dep_records[k]) {
                        std::cout << ' ' << v;
                    }
                    std::cout << "\n";
                }
            }
        };
        for (const asyncdet::SnapshotOutcome& outcome : snap->outcomes()) {
            if (outcome.records.empty()) {
                std::cout << "snapshot round " << outcome.round << ": resolved without records\n";
                continue;
            }
            std::cout << "snapshot round " << outcome.round << " reported " << outcome.reported
                      << (outcome.terminated ? " (terminated)" : "") << "\n";
            print_records(outcome.records);
            asyncdet::ConsistencyReport consistency =
                asyncdet::check_snapshot_consistency(outcome.records, setup.problem);
            std::cout << "consistency " << (consistency.consistent ? "consistent" : "inconsistent") << "\n";
            if (!consistency.consistent) {
                std::cout << "  " << consistency.details << "\n";
            }
        }
        if (snap->outcomes().empty()) {
            print_records(snap->current_records());
        }
    }
    std::cout << "trace:\n" << out.protocol->trace_text();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"asynchronous fixed-point iterations with convergence detection"};
    app.require_subcommand(1);

    std::string config_path;
    std::string csv_override;
    std::string log_dir;
    std::size_t workers = 0;
    CLI::App* run = app.add_subcommand("run", "execute the sweep described by a config file");
    run->add_option("config", config_path, "experiment config (json)")->required();
    run->add_option("-o,--output", csv_override, "write the report csv here");
    run->add_option("--log-dir", log_dir, "also record event logs");
    run->add_option("--workers", workers, "cap parallel workers (default: ASYNCDET_WORKERS or hw)");

    std::string reports_path;
    std::vector<std::string> group_by{"protocol", "p"};
    std::vector<std::string> stats{"min", "max", "mean"};
    std::string table_csv;
    CLI::App* table = app.add_subcommand("table", "summarize a report csv");
    table->add_option("reports", reports_path, "report csv produced by run")->required();
    table->add_option("--group-by", group_by, "group keys (protocol, p, epsilon, n, seed)");
    table->add_option("--stats", stats, "r* statistics (min, max, mean)");
    table->add_option("-o,--output", table_csv, "write the grouped table as csv");

    std::string estimate_config;
    std::size_t estimate_runs = 100;
    std::uint64_t estimate_seed = 1;
    CLI::App* estimate = app.add_subcommand("estimate-c", "measure the residual-gap bound constant");
    estimate->add_option("config", estimate_config, "nfais experiment config (json)")->required();
    estimate->add_option("--runs", estimate_runs, "number of seeded runs");
    estimate->add_option("--seed", estimate_seed, "seed stream base");

    std::string trace_path;
    CLI::App* replay = app.add_subcommand("replay", "replay a scripted execution trace");
    replay->add_option("trace", trace_path, "trace script (json)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            return cmd_run(config_path, csv_override, log_dir, workers);
        }
        if (table->parsed()) {
            return cmd_table(reports_path, group_by, stats, table_csv);
        }
        if (estimate->parsed()) {
            return cmd_estimate_c(estimate_config, estimate_runs, estimate_seed);
        }
        if (replay->parsed()) {
            return cmd_replay(trace_path);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

#pragma once

#include "runner.hpp"

namespace asyncdet {

// God-view instrumentation. Nothing in here is reachable from the protocols:
// detection headers never include this one, so the dependency direction keeps
// simulator privileges out of protocol code paths.

enum class CutProvenance { live_state, snapshot, pfait_round };

struct CutView {
    GlobalView view;
    CutProvenance provenance = CutProvenance::live_state;
};

// Global candidate assembled from each process's own block at run end.
inline CutView cut_from_final_state(const RunResult& result, const FixedPointProblem& problem) {
    CutView cut;
    cut.provenance = CutProvenance::live_state;
    cut.view.values = result.final_solution;
    cut.view.version_stamps.resize(problem.block_count());
    for (std::size_t i = 0; i < problem.block_count(); ++i) {
        cut.view.version_stamps[i] = result.final_views[i].version_stamps[i];
    }
    return cut;
}

// The mixed cut [x_1^(1) ... x_p^(p)]: block i taken from record i's own data.
inline CutView cut_from_records(std::span<const SnapshotRecord> records, const FixedPointProblem& problem) {
    if (records.size() != problem.block_count()) {
        throw contract_error("cut_from_records: need one record per process");
    }
    CutView cut;
    cut.provenance = CutProvenance::snapshot;
    cut.view = GlobalView::constant(problem.dimension, problem.block_count(), 0.0);
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].owner != i || !records[i].own_record) {
            throw contract_error("cut_from_records: record " + std::to_string(i) + " has no own block");
        }
        std::copy(records[i].own_record->begin(), records[i].own_record->end(),
                  cut.view.values.begin() + static_cast<std::ptrdiff_t>(problem.blocks.begin(i)));
        cut.view.version_stamps[i] = records[i].own_stamp;
    }
    return cut;
}

// The cut implied by one reduction round's contributions. Requires the run to
// have kept contribution payloads (record_cut_payloads).
inline CutView cut_from_round(const ReductionRound& round, const FixedPointProblem& problem) {
    if (round.contributions.size() != problem.block_count()) {
        throw contract_error("cut_from_round: round is missing contributions");
    }
    CutView cut;
    cut.provenance = CutProvenance::pfait_round;
    cut.view = GlobalView::constant(problem.dimension, problem.block_count(), 0.0);
    for (const RoundContribution& c : round.contributions) {
        if (c.own_block.empty()) {
            throw contract_error("cut_from_round: contribution payloads were not recorded");
        }
        std::copy(c.own_block.begin(), c.own_block.end(),
                  cut.view.values.begin() + static_cast<std::ptrdiff_t>(problem.blocks.begin(c.process)));
        cut.view.version_stamps[c.process] = c.stamp;
    }
    return cut;
}

inline double oracle_residual_at_cut(const CutView& cut, const FixedPointProblem& problem,
                                     const ResidualSpec& spec) {
    return true_global_residual(problem, spec, cut.view);
}

struct ConsistencyReport {
    bool consistent = true;
    ProcessId owner = 0;  // process whose dependence record differs
    std::size_t block = 0; // block the record describes
    std::size_t index = 0; // offset within the block
    std::string details;
};

// A snapshot is consistent when every recorded dependence equals the value its
// owner recorded, i.e. all reconstructions agree wherever they overlap.
inline ConsistencyReport check_snapshot_consistency(std::span<const SnapshotRecord> records,
                                                    const FixedPointProblem& problem) {
    ConsistencyReport report;
    if (records.size() != problem.block_count()) {
        throw contract_error("check_snapshot_consistency: need one record per process");
    }
    for (const SnapshotRecord& rec : records) {
        if (!rec.complete()) {
            throw contract_error("check_snapshot_consistency: record " + std::to_string(rec.owner) +
                                 " is not complete");
        }
    }
    for (const SnapshotRecord& rec : records) {
        for (std::size_t k = 0; k < rec.dep_blocks.size(); ++k) {
            const std::size_t j = rec.dep_blocks[k];
            const Vector& seen = *rec.dep_records[k];
            const Vector& truth = *records[j].own_record;
            for (std::size_t e = 0; e < seen.size(); ++e) {
                if (seen[e] != truth[e]) {
                    report.consistent = false;
                    report.owner = rec.owner;
                    report.block = j;
                    report.index = e;
                    report.details = "process " + std::to_string(rec.owner) + " recorded block " +
                                     std::to_string(j) + "[" + std::to_string(e) + "] = " +
                                     std::to_string(seen[e]) + ", owner recorded " + std::to_string(truth[e]);
                    return report;
                }
            }
        }
    }
    return report;
}

class estimation_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Empirical bound constant: the observed worst |r(cut) - r_tilde| / epsilon
// over confirmed snapshots of seeded runs.
struct BoundEstimate {
    std::size_t p = 0;
    std::size_t m = 0;
    std::vector<double> samples;
    double c_est = 0.0;
    std::size_t run_count = 0;
};

inline BoundEstimate estimate_c(const RunSetup& scenario, std::size_t run_count, std::uint64_t seed_base,
                                double quantile = 1.0) {
    if (run_count < 1) {
        throw contract_error("estimate_c: run_count must be >= 1");
    }
    if (scenario.detection.protocol != ProtocolKind::nfais) {
        throw contract_error("estimate_c: scenario must use the nfais protocol");
    }
    BoundEstimate est;
    est.p = scenario.problem.block_count();
    est.m = scenario.detection.persistence_m;
    est.run_count = run_count;
    const double eps = scenario.detection.effective_epsilon();
    for (std::size_t r = 0; r < run_count; ++r) {
        RunOutput out = run_once(scenario, mix_seed(seed_base, r));
        const auto* nfais = dynamic_cast<const NfaisProtocol*>(out.protocol.get());
        for (const SnapshotOutcome& outcome : nfais->outcomes()) {
            if (!outcome.all_valid) {
                continue;
            }
            CutView cut = cut_from_records(outcome.records, scenario.problem);
            const double exact = oracle_residual_at_cut(cut, scenario.problem, scenario.residual);
            est.samples.push_back(std::abs(exact - outcome.reported) / eps);
        }
    }
    if (est.samples.empty()) {
        throw estimation_error("estimate_c: no run produced a confirmed snapshot");
    }
    std::vector<double> sorted = est.samples;
    std::sort(sorted.begin(), sorted.end());
    if (quantile >= 1.0) {
        est.c_est = sorted.back();
    } else {
        const auto idx = static_cast<std::size_t>(quantile * static_cast<double>(sorted.size() - 1));
        est.c_est = sorted[idx];
    }
    return est;
}

struct BoundViolation {
    std::uint64_t seed = 0;
    std::uint64_t round = 0;
    Tick tick = 0;
    double reported = 0.0;
    double oracle_r = 0.0;
    double c_used = 0.0;
    Vector cut_values; // the full offending cut
};

struct BoundValidation {
    std::size_t confirmed = 0;
    std::size_t passed_check = 0;  // confirmed snapshots passing the validated stop test
    std::size_t guaranteed = 0;    // of those, ones with oracle r < epsilon_tilde
    std::vector<BoundViolation> violations;

    // Line-delimited violation log: seed tick r_tilde oracle_r c.
    std::string log_text() const {
        std::ostringstream os;
        os.precision(17);
        for (const auto& v : violations) {
            os << v.seed << '\t' << v.tick << '\t' << v.reported << '\t' << v.oracle_r << '\t' << v.c_used
               << '\n';
        }
        return os.str();
    }
};

// Holdout validation of a bound constant: over fresh seeds, check that every
// confirmed snapshot satisfies r(cut) < r_tilde + c * epsilon, and that the
// validated stop test implies r(cut) < epsilon_tilde.
inline BoundValidation validate_bound(const RunSetup& scenario, double c_est, std::size_t run_count,
                                      std::uint64_t seed_base) {
    BoundValidation val;
    const double eps = scenario.detection.effective_epsilon();
    DetectionConfig check_cfg = scenario.detection;
    check_cfg.c_of_pm = c_est;
    for (std::size_t r = 0; r < run_count; ++r) {
        const std::uint64_t seed = mix_seed(seed_base, r);
        RunOutput out = run_once(scenario, seed);
        const auto* snap = dynamic_cast<const SnapshotProtocolBase*>(out.protocol.get());
        for (const SnapshotOutcome& outcome : snap->outcomes()) {
            if (!outcome.all_valid) {
                continue;
            }
            val.confirmed += 1;
            CutView cut = cut_from_records(outcome.records, scenario.problem);
            const double exact = oracle_residual_at_cut(cut, scenario.problem, scenario.residual);
            if (!(exact < outcome.reported + c_est * eps)) {
                val.violations.push_back(BoundViolation{seed, outcome.round, outcome.tick, outcome.reported,
                                                        exact, c_est, cut.view.values});
            }
            if (check_validated_termination(outcome.reported, check_cfg)) {
                val.passed_check += 1;
                if (exact < scenario.detection.epsilon_tilde) {
                    val.guaranteed += 1;
                }
            }
        }
    }
    return val;
}

struct GapSample {
    ProcessId owner = 0;
    std::size_t block = 0;
    std::uint64_t stamp_gap = 0;   // owner's recorded version minus the dependence version
    double value_distance = 0.0;   // max-norm gap between recorded dependence and owner's record
};

// Per-record staleness of recorded dependences against the blocks their owners
// recorded, with the version-stamp gap that displacement bounds must cover.
inline std::vector<GapSample> measure_record_gaps(std::span<const SnapshotRecord> records,
                                                  const FixedPointProblem& problem) {
    std::vector<GapSample> out;
    if (records.size() != problem.block_count()) {
        throw contract_error("measure_record_gaps: need one record per process");
    }
    for (const SnapshotRecord& rec : records) {
        for (std::size_t k = 0; k < rec.dep_blocks.size(); ++k) {
            const std::size_t j = rec.dep_blocks[k];
            GapSample g;
            g.owner = rec.owner;
            g.block = j;
            const std::uint64_t a = records[j].own_stamp;
            const std::uint64_t b = rec.dep_stamps[k];
            g.stamp_gap = a > b ? a - b : b - a;
            const Vector& seen = *rec.dep_records[k];
            const Vector& truth = *records[j].own_record;
            for (std::size_t e = 0; e < seen.size(); ++e) {
                g.value_distance = std::max(g.value_distance, std::abs(seen[e] - truth[e]));
            }
            out.push_back(g);
        }
    }
    return out;
}

} // namespace asyncdet

#pragma once

#include "engine.hpp"

#include <map>
#include <memory>
#include <string_view>

namespace asyncdet {

enum class ProtocolKind { exs, sbs, nfais, pfait };

inline const char* to_string(ProtocolKind k) {
    switch (k) {
    case ProtocolKind::exs: return "exs";
    case ProtocolKind::sbs: return "sbs";
    case ProtocolKind::nfais: return "nfais";
    case ProtocolKind::pfait: return "pfait";
    }
    return "?";
}

struct DetectionConfig {
    ProtocolKind protocol = ProtocolKind::pfait;
    double epsilon = 1e-7;       // local convergence threshold
    double epsilon_tilde = 1e-6; // desired final precision
    std::size_t persistence_m = 2;
    double c_of_pm = 0.0;
    bool auto_threshold = false; // nfais: epsilon := epsilon_tilde / (1 + c)
    std::uint64_t reduction_period = 1; // pfait: local steps between rounds
    bool skip_unconverged_rounds = false;
    bool record_cut_payloads = false; // retain contribution blocks for offline inspection
    // Local convergence is r_i < epsilon unless a test scripts it.
    std::function<bool(ProcessId, std::uint64_t, double)> convergence_predicate;

    double effective_epsilon() const {
        return auto_threshold ? epsilon_tilde / (1.0 + c_of_pm) : epsilon;
    }

    void validate() const {
        if (!(effective_epsilon() <= epsilon_tilde)) {
            throw config_error("DetectionConfig: epsilon must not exceed epsilon_tilde");
        }
        if (c_of_pm < 0.0) {
            throw config_error("DetectionConfig: c must be nonnegative");
        }
        if (protocol == ProtocolKind::nfais && persistence_m < 1) {
            throw config_error("DetectionConfig: persistence parameter m must be >= 1");
        }
        if (protocol == ProtocolKind::pfait && reduction_period < 1) {
            throw config_error("DetectionConfig: reduction_period must be >= 1");
        }
    }
};

// Validated stop test: the approximate residual passes only under the
// tightened threshold, which in turn guarantees r(cut) < epsilon_tilde when c
// bounds the snapshot inconsistency.
inline bool check_validated_termination(double r_tilde, const DetectionConfig& cfg) {
    return r_tilde < cfg.epsilon_tilde / (1.0 + cfg.c_of_pm);
}

enum class SnapshotStatus { open, complete, confirmed, discarded };

inline const char* to_string(SnapshotStatus s) {
    switch (s) {
    case SnapshotStatus::open: return "open";
    case SnapshotStatus::complete: return "complete";
    case SnapshotStatus::confirmed: return "confirmed";
    case SnapshotStatus::discarded: return "discarded";
    }
    return "?";
}

// One process's recorded cut: its own block plus the last dependence recorded
// on each incoming link.
struct SnapshotRecord {
    ProcessId owner = 0;
    std::uint64_t round = 0;
    std::optional<Vector> own_record;
    std::uint64_t own_stamp = 0;
    std::vector<std::size_t> dep_blocks; // in-neighbor ids, sorted
    std::vector<std::optional<Vector>> dep_records;
    std::vector<std::uint64_t> dep_stamps;
    SnapshotStatus status = SnapshotStatus::open;

    bool complete() const {
        if (!own_record) {
            return false;
        }
        for (const auto& d : dep_records) {
            if (!d) {
                return false;
            }
        }
        return true;
    }

    // The owner's candidate global vector x^(owner). Blocks it never hears
    // from are filled with `fill`; r_owner does not read them.
    GlobalView reconstruct(const FixedPointProblem& problem, double fill = 0.0) const {
        GlobalView view = GlobalView::constant(problem.dimension, problem.block_count(), fill);
        if (own_record) {
            std::copy(own_record->begin(), own_record->end(),
                      view.values.begin() + static_cast<std::ptrdiff_t>(problem.blocks.begin(owner)));
            view.version_stamps[owner] = own_stamp;
        }
        for (std::size_t k = 0; k < dep_blocks.size(); ++k) {
            if (!dep_records[k]) {
                continue;
            }
            const std::size_t j = dep_blocks[k];
            std::copy(dep_records[k]->begin(), dep_records[k]->end(),
                      view.values.begin() + static_cast<std::ptrdiff_t>(problem.blocks.begin(j)));
            view.version_stamps[j] = dep_stamps[k];
        }
        return view;
    }
};

// sigma over each process's own reconstruction; equals the exact residual when
// all reconstructions coincide.
inline double approximate_residual(std::span<const SnapshotRecord> records, const FixedPointProblem& problem,
                                   const ResidualSpec& spec, double fill = 0.0) {
    if (records.size() != problem.block_count()) {
        throw contract_error("approximate_residual: need one record per process");
    }
    Vector locals(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].status == SnapshotStatus::open || records[i].status == SnapshotStatus::discarded ||
            !records[i].complete()) {
            throw contract_error("approximate_residual: record " + std::to_string(i) + " is not complete");
        }
        GlobalView recon = records[i].reconstruct(problem, fill);
        locals[i] = evaluate_local_residual(problem, spec, records[i].owner, recon);
    }
    return spec.reduce(locals);
}

struct ProtocolTraceEntry {
    Tick tick = 0;
    ProcessId process = 0;
    std::uint64_t round = 0;
    std::string action;
    double value = 0.0;
};

// A fully combined snapshot attempt, assembled by the simulator for offline
// verification; not part of the message-passing protocol itself.
struct SnapshotOutcome {
    std::uint64_t round = 0;
    Tick tick = 0; // when the root combined the attempt
    double reported = 0.0;
    bool all_valid = true;
    bool terminated = false;
    std::vector<SnapshotRecord> records;
};

struct RoundContribution {
    ProcessId process = 0;
    double value = 0.0;
    std::uint64_t stamp = 0;
    Vector own_block; // kept only when record_cut_payloads is set
};

// One non-blocking reduction over per-process residual contributions.
struct ReductionRound {
    std::uint64_t round_id = 0;
    std::vector<RoundContribution> contributions;
    std::optional<double> combined;
    bool in_flight = true;
};

// Shared machinery: per-process protocol slots drive an asynchronous
// all-reduce over a binary tree rooted at process 0. Contributions flow up as
// reduction fragments; the combined value and verdict flow back down.
class DetectionBase : public DetectionProtocol {
public:
    DetectionBase(DetectionConfig cfg, FixedPointProblem problem, ResidualSpec spec)
        : cfg_(std::move(cfg)), problem_(std::move(problem)), spec_(std::move(spec)) {
        cfg_.validate();
    }

    const DetectionConfig& config() const { return cfg_; }
    bool decided() const override { return decided_; }
    double reported_residual() const override { return reported_; }
    const std::vector<ProtocolTraceEntry>& trace() const { return trace_; }

    std::string trace_text() const {
        std::ostringstream os;
        os.precision(17);
        for (const auto& e : trace_) {
            os << e.tick << '\t' << e.process << '\t' << e.round << '\t' << e.action << '\t' << e.value << '\n';
        }
        return os.str();
    }

    std::uint64_t count_trace(std::string_view action) const {
        std::uint64_t n = 0;
        for (const auto& e : trace_) {
            if (e.action == action) {
                ++n;
            }
        }
        return n;
    }

protected:
    // Binomial tree over process ids, rooted at 0: the parent drops the lowest
    // set bit. The fold is permutation-invariant, so the shape never affects
    // the combined value.
    static std::size_t tree_parent(std::size_t i) { return i & (i - 1); }

    static std::vector<std::size_t> tree_children(std::size_t i, std::size_t p) {
        std::vector<std::size_t> out;
        for (std::size_t bit = 1; (i | bit) < p; bit <<= 1) {
            if (i & bit) {
                break;
            }
            out.push_back(i | bit);
        }
        return out;
    }

    bool converged(ProcessHandle& h) const {
        if (cfg_.convergence_predicate) {
            return cfg_.convergence_predicate(h.id(), h.local_iter(), h.local_residual());
        }
        return h.local_residual() < cfg_.effective_epsilon();
    }

    void note(ProcessHandle& h, std::uint64_t round, std::string action, double value = 0.0) {
        trace_.push_back(ProtocolTraceEntry{h.now(), h.id(), round, std::move(action), value});
    }

    struct RoundAgg {
        double partial = 0.0;
        bool flag = true;
        std::size_t fragments = 0;
        bool own = false;
    };

    // Fold the local value into this process's aggregation for the round and
    // flush upward once its own contribution and all child partials are in.
    void contribute(ProcessHandle& h, std::uint64_t round, double value, bool flag) {
        auto& agg = agg_slot(h.id())[round];
        if (agg.own) {
            throw contract_error("duplicate contribution to reduction round");
        }
        agg.partial = agg.fragments == 0 && !agg.own ? value : spec_.combine(agg.partial, value);
        agg.own = true;
        agg.flag = agg.flag && flag;
        try_flush(h, round);
    }

    void on_fragment(ProcessHandle& h, const Envelope& env) {
        if (env.meta.downward) {
            // Result broadcast: forward to subtree, then apply locally.
            for (std::size_t c : tree_children(h.id(), h.process_count())) {
                h.send(c, EnvelopeKind::reduction_fragment, Vector(env.payload),
                       ProtocolMeta{env.meta.round, env.meta.flag, true});
            }
            on_verdict(h, env.meta.round, env.meta.flag, env.payload.empty() ? 0.0 : env.payload[0]);
            return;
        }
        if (env.payload.size() != 1) {
            throw contract_error("reduction fragment must carry exactly one scalar");
        }
        auto& agg = agg_slot(h.id())[env.meta.round];
        agg.partial = agg.fragments == 0 && !agg.own ? env.payload[0] : spec_.combine(agg.partial, env.payload[0]);
        agg.fragments += 1;
        agg.flag = agg.flag && env.meta.flag;
        try_flush(h, env.meta.round);
    }

    void try_flush(ProcessHandle& h, std::uint64_t round) {
        auto& slot = agg_slot(h.id());
        auto it = slot.find(round);
        if (it == slot.end()) {
            return;
        }
        RoundAgg& agg = it->second;
        const std::size_t need = tree_children(h.id(), h.process_count()).size();
        if (!agg.own || agg.fragments < need) {
            return;
        }
        if (h.id() == 0) {
            const double combined = spec_.finish(agg.partial);
            const bool all_valid = agg.flag;
            slot.erase(it);
            on_combined(h, round, combined, all_valid);
        } else {
            const double partial = agg.partial;
            const bool flag = agg.flag;
            slot.erase(it);
            h.send(tree_parent(h.id()), EnvelopeKind::reduction_fragment, Vector{partial},
                   ProtocolMeta{round, flag, false});
        }
    }

    // Root-side distribution of a round's result; the root applies the verdict
    // to itself immediately.
    void broadcast_result(ProcessHandle& root, std::uint64_t round, bool flag, double combined) {
        for (std::size_t c : tree_children(0, root.process_count())) {
            root.send(c, EnvelopeKind::reduction_fragment, Vector{combined}, ProtocolMeta{round, flag, true});
        }
        on_verdict(root, round, flag, combined);
    }

    virtual void on_combined(ProcessHandle& root, std::uint64_t round, double combined, bool all_valid) = 0;
    virtual void on_verdict(ProcessHandle& h, std::uint64_t round, bool terminate, double combined) = 0;

    std::map<std::uint64_t, RoundAgg>& agg_slot(ProcessId pid) {
        if (agg_.empty()) {
            throw contract_error("protocol used before attach");
        }
        return agg_[pid];
    }

    void init_slots(std::size_t p) { agg_.assign(p, {}); }

    DetectionConfig cfg_;
    FixedPointProblem problem_;
    ResidualSpec spec_;
    bool decided_ = false;
    double reported_ = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::map<std::uint64_t, RoundAgg>> agg_;
    std::vector<ProtocolTraceEntry> trace_;
};

// Common slot state for the three snapshot-based protocols.
class SnapshotProtocolBase : public DetectionBase {
public:
    using DetectionBase::DetectionBase;

    const std::vector<SnapshotOutcome>& outcomes() const { return outcomes_; }

    // Live records, one per process; exposed for scripted-scenario inspection.
    std::vector<SnapshotRecord> current_records() const {
        std::vector<SnapshotRecord> out;
        out.reserve(slots_.size());
        for (const auto& s : slots_) {
            out.push_back(s.record);
        }
        return out;
    }

protected:
    struct Slot {
        std::uint64_t round = 0; // highest round seen or started
        bool armed = false;
        bool awaiting_verdict = false;
        bool participating = false; // any record activity in `round`
        SnapshotRecord record;
        std::vector<char> dep_seen;
        // nfais only
        std::vector<std::optional<bool>> confirm_flags;
        std::uint64_t streak = 0;
        std::uint64_t confirm_due = 0;
        bool own_confirm_emitted = false;
        bool own_valid = true;
    };

    void attach(const Engine& engine) override {
        const std::size_t p = engine.process_count();
        init_slots(p);
        slots_.assign(p, Slot{});
        for (ProcessId i = 0; i < p; ++i) {
            reset_record(i, 0);
        }
    }

    void reset_record(ProcessId pid, std::uint64_t round) {
        Slot& s = slots_[pid];
        const auto& deps = problem_.in_neighbors[pid];
        s.record = SnapshotRecord{};
        s.record.owner = pid;
        s.record.round = round;
        s.record.dep_blocks = deps;
        s.record.dep_records.assign(deps.size(), std::nullopt);
        s.record.dep_stamps.assign(deps.size(), 0);
        s.dep_seen.assign(deps.size(), 0);
        s.confirm_flags.assign(deps.size(), std::nullopt);
        s.own_confirm_emitted = false;
        s.own_valid = true;
        s.participating = false;
        s.armed = false;
        s.awaiting_verdict = false;
        s.round = round;
    }

    std::size_t dep_index(const Slot& s, ProcessId from) const {
        auto it = std::lower_bound(s.record.dep_blocks.begin(), s.record.dep_blocks.end(), from);
        if (it == s.record.dep_blocks.end() || *it != from) {
            throw protocol_error("snapshot message from a non-neighbor process");
        }
        return static_cast<std::size_t>(it - s.record.dep_blocks.begin());
    }

    double record_residual(const Slot& s) const {
        GlobalView recon = s.record.reconstruct(problem_);
        return evaluate_local_residual(problem_, spec_, s.record.owner, recon);
    }

    // Assemble the attempt outcome across slots; simulator-side export.
    SnapshotOutcome assemble_outcome(Tick tick, std::uint64_t round, double combined, bool all_valid,
                                     bool terminated) const {
        SnapshotOutcome out;
        out.round = round;
        out.tick = tick;
        out.reported = combined;
        out.all_valid = all_valid;
        out.terminated = terminated;
        if (all_valid) {
            for (const auto& s : slots_) {
                out.records.push_back(s.record);
            }
        }
        return out;
    }

    std::vector<Slot> slots_;
    std::vector<SnapshotOutcome> outcomes_;
};

// Exact snapshot for FIFO links: an empty marker flushes each link, so the
// last dependence delivered before it is exactly the sender's recorded block.
class ExsProtocol final : public SnapshotProtocolBase {
public:
    using SnapshotProtocolBase::SnapshotProtocolBase;

    void attach(const Engine& engine) override {
        if (engine.config().delivery.mode != DeliveryModel::Mode::fifo) {
            throw config_error("exs requires fifo delivery; use sbs or nfais on non-fifo links");
        }
        SnapshotProtocolBase::attach(engine);
    }

    void on_step(ProcessHandle& h) override {
        Slot& s = slots_[h.id()];
        if (!s.armed && !s.awaiting_verdict && converged(h)) {
            trigger(h, s.round + 1, "trigger:local_convergence");
        }
    }

    void on_control(ProcessHandle& h, const Envelope& env) override {
        if (env.kind == EnvelopeKind::reduction_fragment) {
            on_fragment(h, env);
            return;
        }
        if (env.kind != EnvelopeKind::snapshot_marker) {
            throw protocol_error("exs received an unexpected envelope kind");
        }
        Slot& s = slots_[h.id()];
        const std::uint64_t r = env.meta.round;
        if (r < s.round) {
            return; // superseded attempt
        }
        if (r > s.round) {
            reset_record(h.id(), r);
        }
        if (!s.armed) {
            trigger(h, r, "trigger:first_marker");
        }
        const std::size_t idx = dep_index(s, env.from);
        if (s.dep_seen[idx]) {
            throw protocol_error("duplicate snapshot marker on link " + std::to_string(env.from) + "->" +
                                 std::to_string(h.id()));
        }
        s.dep_seen[idx] = 1;
        s.record.dep_records[idx] = h.block_copy(env.from);
        s.record.dep_stamps[idx] = h.block_stamp(env.from);
        note(h, r, "dep_recorded", static_cast<double>(env.from));
        maybe_complete(h);
    }

private:
    void trigger(ProcessHandle& h, std::uint64_t round, const char* cause) {
        Slot& s = slots_[h.id()];
        if (round != s.round) {
            reset_record(h.id(), round);
        }
        s.armed = true;
        s.participating = true;
        s.record.own_record = h.block_copy(h.id());
        s.record.own_stamp = h.local_iter();
        note(h, round, cause);
        for (ProcessId j : h.out_neighbors()) {
            h.send(j, EnvelopeKind::snapshot_marker, {}, ProtocolMeta{round, false, false});
        }
        maybe_complete(h);
    }

    void maybe_complete(ProcessHandle& h) {
        Slot& s = slots_[h.id()];
        if (s.awaiting_verdict || !s.armed || !s.record.complete()) {
            return;
        }
        s.record.status = SnapshotStatus::complete;
        s.awaiting_verdict = true;
        const double local = record_residual(s);
        note(h, s.round, "complete", local);
        contribute(h, s.round, local, true);
    }

    void on_combined(ProcessHandle& root, std::uint64_t round, double combined, bool all_valid) override {
        note(root, round, "combined", combined);
        const bool stop = all_valid && check_validated_termination(combined, cfg_);
        outcomes_.push_back(assemble_outcome(root.now(), round, combined, all_valid, stop));
        if (stop) {
            decided_ = true;
            reported_ = combined;
            note(root, round, "terminate", combined);
        } else {
            broadcast_result(root, round, false, combined);
        }
    }

    void on_verdict(ProcessHandle& h, std::uint64_t round, bool terminate, double) override {
        if (terminate) {
            return;
        }
        Slot& s = slots_[h.id()];
        if (round == s.round && s.awaiting_verdict) {
            reset_record(h.id(), round); // re-arm for the next attempt
        }
    }
};

// Payload snapshot: snapshot messages carry the sender's recorded interface
// data, so recording is ordering-independent and works on non-FIFO links.
class SbsProtocol final : public SnapshotProtocolBase {
public:
    using SnapshotProtocolBase::SnapshotProtocolBase;

    void on_step(ProcessHandle& h) override {
        Slot& s = slots_[h.id()];
        if (s.armed || s.awaiting_verdict || !converged(h)) {
            return;
        }
        const std::uint64_t round = (s.participating && !s.record.own_record) ? s.round : s.round + 1;
        trigger(h, round);
    }

    void on_control(ProcessHandle& h, const Envelope& env) override {
        if (env.kind == EnvelopeKind::reduction_fragment) {
            on_fragment(h, env);
            return;
        }
        if (env.kind != EnvelopeKind::snapshot_marker) {
            throw protocol_error("sbs received an unexpected envelope kind");
        }
        Slot& s = slots_[h.id()];
        const std::uint64_t r = env.meta.round;
        if (r < s.round) {
            return;
        }
        if (r > s.round) {
            reset_record(h.id(), r);
        }
        s.participating = true;
        const std::size_t idx = dep_index(s, env.from);
        if (s.dep_seen[idx]) {
            throw protocol_error("duplicate snapshot payload on link " + std::to_string(env.from) + "->" +
                                 std::to_string(h.id()));
        }
        s.dep_seen[idx] = 1;
        s.record.dep_records[idx] = env.payload; // recorded value travels in the message
        s.record.dep_stamps[idx] = env.sent_at_version;
        note(h, r, "dep_recorded", static_cast<double>(env.from));
        maybe_complete(h);
    }

private:
    void trigger(ProcessHandle& h, std::uint64_t round) {
        Slot& s = slots_[h.id()];
        if (round != s.round) {
            reset_record(h.id(), round);
        }
        s.armed = true;
        s.participating = true;
        s.record.own_record = h.block_copy(h.id());
        s.record.own_stamp = h.local_iter();
        note(h, round, "trigger:local_convergence");
        for (ProcessId j : h.out_neighbors()) {
            h.send(j, EnvelopeKind::snapshot_marker, Vector(*s.record.own_record),
                   ProtocolMeta{round, false, false});
        }
        maybe_complete(h);
    }

    void maybe_complete(ProcessHandle& h) {
        Slot& s = slots_[h.id()];
        if (s.awaiting_verdict || !s.record.complete()) {
            return;
        }
        s.record.status = SnapshotStatus::complete;
        s.awaiting_verdict = true;
        const double local = record_residual(s);
        note(h, s.round, "complete", local);
        contribute(h, s.round, local, true);
    }

    void on_combined(ProcessHandle& root, std::uint64_t round, double combined, bool all_valid) override {
        note(root, round, "combined", combined);
        const bool stop = all_valid && check_validated_termination(combined, cfg_);
        outcomes_.push_back(assemble_outcome(root.now(), round, combined, all_valid, stop));
        if (stop) {
            decided_ = true;
            reported_ = combined;
            note(root, round, "terminate", combined);
        } else {
            broadcast_result(root, round, false, combined);
        }
    }

    void on_verdict(ProcessHandle& h, std::uint64_t round, bool terminate, double) override {
        if (terminate) {
            return;
        }
        Slot& s = slots_[h.id()];
        if (round == s.round && s.awaiting_verdict) {
            reset_record(h.id(), round);
        }
    }
};

// Approximate snapshot for non-FIFO links: recording is triggered by
// m-persistent local convergence, markers stay empty, and a second confirm
// phase validates or discards the attempt if convergence did not persist.
class NfaisProtocol final : public SnapshotProtocolBase {
public:
    using SnapshotProtocolBase::SnapshotProtocolBase;

    void on_step(ProcessHandle& h) override {
        Slot& s = slots_[h.id()];
        const bool conv = converged(h);
        s.streak = conv ? s.streak + 1 : 0;
        if (s.armed && !s.own_confirm_emitted) {
            if (!conv) {
                s.own_valid = false;
            }
            if (h.local_iter() >= s.confirm_due) {
                s.own_confirm_emitted = true;
                note(h, s.round, s.own_valid ? "confirm_sent:valid" : "confirm_sent:broken");
                for (ProcessId j : h.out_neighbors()) {
                    h.send(j, EnvelopeKind::snapshot_confirm, {}, ProtocolMeta{s.round, s.own_valid, false});
                }
                maybe_finalize(h);
            }
        }
        if (!s.armed && !s.awaiting_verdict && s.streak >= cfg_.persistence_m) {
            const std::uint64_t round = (s.participating && !s.record.own_record) ? s.round : s.round + 1;
            trigger(h, round);
        }
    }

    void on_control(ProcessHandle& h, const Envelope& env) override {
        if (env.kind == EnvelopeKind::reduction_fragment) {
            on_fragment(h, env);
            return;
        }
        Slot& s = slots_[h.id()];
        const std::uint64_t r = env.meta.round;
        if (env.kind == EnvelopeKind::snapshot_marker) {
            if (r < s.round) {
                return;
            }
            if (r > s.round) {
                reset_record(h.id(), r);
            }
            s.participating = true;
            const std::size_t idx = dep_index(s, env.from);
            if (s.dep_seen[idx]) {
                throw protocol_error("duplicate snapshot marker on link " + std::to_string(env.from) + "->" +
                                     std::to_string(h.id()));
            }
            s.dep_seen[idx] = 1;
            s.record.dep_records[idx] = h.block_copy(env.from);
            s.record.dep_stamps[idx] = h.block_stamp(env.from);
            note(h, r, "dep_recorded", static_cast<double>(env.from));
            maybe_finalize(h);
            return;
        }
        if (env.kind != EnvelopeKind::snapshot_confirm) {
            throw protocol_error("nfais received an unexpected envelope kind");
        }
        if (r < s.round) {
            return;
        }
        if (r > s.round) {
            // Confirms follow their marker on each link.
            throw protocol_error("snapshot confirm before its marker on link " + std::to_string(env.from) +
                                 "->" + std::to_string(h.id()));
        }
        const std::size_t idx = dep_index(s, env.from);
        if (!s.dep_seen[idx]) {
            throw protocol_error("snapshot confirm before its marker on link " + std::to_string(env.from) +
                                 "->" + std::to_string(h.id()));
        }
        if (s.confirm_flags[idx]) {
            throw protocol_error("duplicate snapshot confirm on link " + std::to_string(env.from) + "->" +
                                 std::to_string(h.id()));
        }
        s.confirm_flags[idx] = env.meta.flag;
        note(h, r, env.meta.flag ? "confirm_received:valid" : "confirm_received:broken",
             static_cast<double>(env.from));
        maybe_finalize(h);
    }

private:
    void trigger(ProcessHandle& h, std::uint64_t round) {
        Slot& s = slots_[h.id()];
        if (round != s.round) {
            reset_record(h.id(), round);
        }
        s.armed = true;
        s.participating = true;
        s.own_valid = true;
        s.own_confirm_emitted = false;
        s.confirm_due = h.local_iter() + cfg_.persistence_m;
        s.record.own_record = h.block_copy(h.id());
        s.record.own_stamp = h.local_iter();
        note(h, round, "trigger:persistent_convergence");
        for (ProcessId j : h.out_neighbors()) {
            h.send(j, EnvelopeKind::snapshot_marker, {}, ProtocolMeta{round, false, false});
        }
        maybe_finalize(h);
    }

    void maybe_finalize(ProcessHandle& h) {
        Slot& s = slots_[h.id()];
        if (s.awaiting_verdict || !s.armed || !s.own_confirm_emitted || !s.record.complete()) {
            return;
        }
        for (const auto& f : s.confirm_flags) {
            if (!f) {
                return;
            }
        }
        bool valid = s.own_valid;
        for (const auto& f : s.confirm_flags) {
            valid = valid && *f;
        }
        s.record.status = valid ? SnapshotStatus::confirmed : SnapshotStatus::discarded;
        const double local = record_residual(s);
        note(h, s.round, valid ? "finalized:confirmed" : "finalized:discarded", local);
        const std::uint64_t round = s.round;
        if (valid) {
            s.awaiting_verdict = true;
            contribute(h, round, local, true);
        } else {
            // Contribute the discard so the attempt resolves at the root, then
            // re-arm immediately with the persistence counter reset.
            contribute(h, round, local, false);
            reset_record(h.id(), round);
            slots_[h.id()].streak = 0;
        }
    }

    void on_combined(ProcessHandle& root, std::uint64_t round, double combined, bool all_valid) override {
        note(root, round, "combined", combined);
        const bool stop = all_valid && check_validated_termination(combined, cfg_);
        outcomes_.push_back(assemble_outcome(root.now(), round, combined, all_valid, stop));
        if (stop) {
            decided_ = true;
            reported_ = combined;
            note(root, round, "terminate", combined);
        } else {
            broadcast_result(root, round, false, combined);
        }
    }

    void on_verdict(ProcessHandle& h, std::uint64_t round, bool terminate, double) override {
        if (terminate) {
            return;
        }
        Slot& s = slots_[h.id()];
        if (round == s.round && s.awaiting_verdict) {
            reset_record(h.id(), round);
        }
    }
};

// Protocol-free termination: no recording, no markers. Each process feeds its
// current local residual into successive non-blocking reductions; iteration
// never waits on a round.
class PfaitProtocol final : public DetectionBase {
public:
    using DetectionBase::DetectionBase;

    const std::vector<ReductionRound>& rounds() const { return rounds_; }

    void attach(const Engine& engine) override {
        const std::size_t p = engine.process_count();
        init_slots(p);
        slots_.assign(p, Slot{});
        rounds_.clear();
        rounds_.push_back(ReductionRound{0, {}, std::nullopt, true});
    }

    void on_step(ProcessHandle& h) override {
        Slot& s = slots_[h.id()];
        s.steps_since_open += 1;
        if (s.contributed || s.steps_since_open < cfg_.reduction_period) {
            return;
        }
        const double local = h.local_residual();
        if (cfg_.skip_unconverged_rounds && !(local < cfg_.effective_epsilon())) {
            return; // hold this round's contribution until locally converged
        }
        s.contributed = true;
        RoundContribution contribution;
        contribution.process = h.id();
        contribution.value = local;
        contribution.stamp = h.local_iter();
        if (cfg_.record_cut_payloads) {
            contribution.own_block = h.block_copy(h.id());
        }
        round_slot(s.round).contributions.push_back(std::move(contribution));
        note(h, s.round, "contributed", local);
        contribute(h, s.round, local, true);
    }

    void on_control(ProcessHandle& h, const Envelope& env) override {
        if (env.kind != EnvelopeKind::reduction_fragment) {
            throw protocol_error("pfait uses no snapshot messages");
        }
        on_fragment(h, env);
    }

private:
    struct Slot {
        std::uint64_t round = 0;
        bool contributed = false;
        std::uint64_t steps_since_open = 0;
    };

    ReductionRound& round_slot(std::uint64_t round) {
        while (rounds_.size() <= round) {
            rounds_.push_back(ReductionRound{rounds_.size(), {}, std::nullopt, true});
        }
        return rounds_[round];
    }

    void on_combined(ProcessHandle& root, std::uint64_t round, double combined, bool) override {
        ReductionRound& rr = round_slot(round);
        rr.combined = combined;
        rr.in_flight = false;
        note(root, round, "combined", combined);
        if (combined < cfg_.effective_epsilon()) {
            decided_ = true;
            reported_ = combined;
            note(root, round, "terminate", combined);
        } else {
            broadcast_result(root, round, false, combined);
        }
    }

    void on_verdict(ProcessHandle& h, std::uint64_t round, bool terminate, double) override {
        if (terminate) {
            return;
        }
        Slot& s = slots_[h.id()];
        if (round == s.round) {
            // Rounds are successive: the next one opens only after the previous
            // result reached this process.
            s.round = round + 1;
            s.contributed = false;
            s.steps_since_open = 0;
        }
    }

    std::vector<Slot> slots_;
    std::vector<ReductionRound> rounds_;
};

inline std::shared_ptr<DetectionBase> make_protocol(const DetectionConfig& cfg, const FixedPointProblem& problem,
                                                    const ResidualSpec& spec) {
    switch (cfg.protocol) {
    case ProtocolKind::exs: return std::make_shared<ExsProtocol>(cfg, problem, spec);
    case ProtocolKind::sbs: return std::make_shared<SbsProtocol>(cfg, problem, spec);
    case ProtocolKind::nfais: return std::make_shared<NfaisProtocol>(cfg, problem, spec);
    case ProtocolKind::pfait: return std::make_shared<PfaitProtocol>(cfg, problem, spec);
    }
    throw config_error("unknown protocol");
}

} // namespace asyncdet

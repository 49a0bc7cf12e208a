#pragma once

#include "fixedpoint.hpp"

#include <array>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <queue>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>

namespace asyncdet {

using Tick = std::uint64_t;
using ProcessId = std::size_t;

// Deterministic stream derivation: distinct (a, b) pairs give independent seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

enum class EnvelopeKind : std::uint8_t {
    computation = 0,
    snapshot_marker = 1,
    snapshot_confirm = 2,
    reduction_fragment = 3,
};

inline const char* to_string(EnvelopeKind k) {
    switch (k) {
    case EnvelopeKind::computation: return "computation";
    case EnvelopeKind::snapshot_marker: return "snapshot_marker";
    case EnvelopeKind::snapshot_confirm: return "snapshot_confirm";
    case EnvelopeKind::reduction_fragment: return "reduction_fragment";
    }
    return "?";
}

// Markers and confirms are the empty O(1) control class that may travel faster
// than payload-bearing traffic.
constexpr bool is_empty_control(EnvelopeKind k) {
    return k == EnvelopeKind::snapshot_marker || k == EnvelopeKind::snapshot_confirm;
}

// Protocol bookkeeping carried outside the payload; constant-size by design.
struct ProtocolMeta {
    std::uint64_t round = 0;
    bool flag = false;
    bool downward = false;
};

struct Envelope {
    EnvelopeKind kind = EnvelopeKind::computation;
    ProcessId from = 0;
    ProcessId to = 0;
    std::uint64_t seq = 0; // per-link emission number, consecutive from 0
    Vector payload;
    std::uint64_t sent_at_version = 0; // sender's local iteration at emission
    ProtocolMeta meta;
    Tick emitted_at = 0;
    Tick deliver_at = 0;
};

// Link delivery semantics. fifo preserves emission order exactly; under
// bounded_out_of_order(m) an envelope may overtake at most its m immediate
// predecessors: seq s is never delivered while any seq < s - m is pending.
struct DeliveryModel {
    enum class Mode { fifo, bounded_out_of_order };
    Mode mode = Mode::fifo;
    std::size_t degree = 0; // m
    // A computation envelope never overtakes an earlier empty control envelope.
    bool cross_kind_rule = true;
    Tick computation_latency_max = 8; // uniform in [1, max]
    Tick control_latency_max = 4;
    // Scripted override: return the exact delay for this envelope, or nullopt
    // to fall back to the random law.
    std::function<std::optional<Tick>(const Envelope&)> scripted_latency;
};

struct EngineConfig {
    DeliveryModel delivery;
    std::uint64_t seed = 1;
    std::uint64_t max_events = 1'000'000; // caps sweeps in synchronous mode
    Tick step_delay_max = 6;              // uniform in [1, max] between a process's steps
    std::size_t fairness_bound = 0;       // max event gap between a process's steps; 0 -> 16*p
    bool synchronous = false;
    double initial_value = 0.0;
    std::optional<Vector> initial_state;
    bool record_event_log = false;
    // Scripted mode: per-process explicit step ticks. Non-empty disables random
    // pacing and fairness forcing; the script is authoritative.
    std::vector<std::vector<Tick>> scripted_steps;
};

struct ProcessState {
    ProcessId id = 0;
    GlobalView view;              // this process's private copy of the global vector
    std::uint64_t local_iter = 0; // k^(i)
    double max_step_displacement = 0.0;
};

enum class Verdict { terminated, max_events, quiescent };

inline const char* to_string(Verdict v) {
    switch (v) {
    case Verdict::terminated: return "terminated";
    case Verdict::max_events: return "max_events";
    case Verdict::quiescent: return "quiescent";
    }
    return "?";
}

struct EngineStats {
    std::uint64_t total_events = 0;
    std::uint64_t forced_steps = 0;
    std::uint64_t sweeps = 0; // synchronous mode only
    std::array<std::uint64_t, 4> sent{};
    std::array<std::uint64_t, 4> delivered{};
    std::array<std::uint64_t, 4> payload_bytes{};
};

struct RunResult {
    Verdict verdict = Verdict::quiescent;
    double reported_residual = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::uint64_t> iterations; // k^(i) at stop
    std::uint64_t k_max = 0;
    EngineStats stats;
    std::vector<GlobalView> final_views;
    Vector final_solution; // block i taken from process i's own view
    std::vector<double> max_step_displacement;
    std::string event_log; // populated when record_event_log is set
};

class Engine;

// The window a protocol handler gets onto its own process: local state plus
// the ability to emit envelopes. Handlers never see other processes' state.
class ProcessHandle {
public:
    ProcessId id() const { return pid_; }
    std::size_t process_count() const;
    Tick now() const;
    std::uint64_t local_iter() const;
    const GlobalView& view() const;
    double local_residual() const; // r_i on the current local view
    std::span<const std::size_t> in_neighbors() const;
    std::span<const std::size_t> out_neighbors() const;
    Vector block_copy(std::size_t block) const; // last delivered value (own block: current)
    std::uint64_t block_stamp(std::size_t block) const;
    void send(ProcessId to, EnvelopeKind kind, Vector payload, ProtocolMeta meta = {});

private:
    friend class Engine;
    ProcessHandle(Engine& eng, ProcessId pid) : eng_(&eng), pid_(pid) {}
    Engine* eng_;
    ProcessId pid_;
};

// Event-handler contract every convergence-detection protocol implements.
// Handlers are invoked by the engine loop for one process at a time and must
// keep per-process state in per-process slots; envelopes are the sole channel.
class DetectionProtocol {
public:
    virtual ~DetectionProtocol() = default;
    virtual void attach(const Engine& engine) { (void)engine; }
    virtual void on_step(ProcessHandle& h) = 0;
    virtual void on_control(ProcessHandle& h, const Envelope& env) = 0;
    virtual bool decided() const = 0;
    virtual double reported_residual() const = 0;
};

// Deterministic discrete-event simulator of p processes running asynchronous
// block iterations over links with configurable delivery semantics, plus a
// synchronous lockstep mode reproducing the classical parallel iteration.
class Engine {
public:
    Engine(FixedPointProblem problem, ResidualSpec residual, EngineConfig config)
        : problem_(std::move(problem)), residual_(std::move(residual)), cfg_(std::move(config)),
          rng_(mix_seed(cfg_.seed, 0x656e67696eULL)) {
        problem_.validate();
        const std::size_t p = problem_.block_count();
        out_neighbors_ = problem_.out_neighbors();
        if (cfg_.fairness_bound == 0) {
            cfg_.fairness_bound = 16 * p;
        }
        if (!cfg_.scripted_steps.empty() && cfg_.scripted_steps.size() != p) {
            throw config_error("Engine: scripted_steps must list every process");
        }
        processes_.resize(p);
        Vector x0;
        if (cfg_.initial_state) {
            if (cfg_.initial_state->size() != problem_.dimension) {
                throw config_error("Engine: initial_state dimension mismatch");
            }
            x0 = *cfg_.initial_state;
        } else {
            x0.assign(problem_.dimension, cfg_.initial_value);
        }
        for (ProcessId i = 0; i < p; ++i) {
            processes_[i].id = i;
            processes_[i].view.values = x0;
            processes_[i].view.version_stamps.assign(p, 0);
        }
        links_.resize(p * p);
        events_since_step_.assign(p, 0);
        step_epoch_.assign(p, 0);
        next_script_index_.assign(p, 0);
        residual_cache_.assign(p, CachedResidual{});
        mutation_counter_.assign(p, 0);
    }

    const FixedPointProblem& problem() const { return problem_; }
    const ResidualSpec& residual_spec() const { return residual_; }
    const EngineConfig& config() const { return cfg_; }
    std::size_t process_count() const { return processes_.size(); }
    const ProcessState& process(ProcessId i) const { return processes_.at(i); }
    Tick now() const { return now_; }

    RunResult run(DetectionProtocol& protocol) {
        if (started_) {
            throw contract_error("Engine::run may only be called once");
        }
        started_ = true;
        protocol_ = &protocol;
        protocol.attach(*this);
        RunResult result;
        try {
            result.verdict = cfg_.synchronous ? run_synchronous() : run_asynchronous();
        } catch (...) {
            protocol_ = nullptr;
            throw;
        }
        protocol_ = nullptr;
        result.reported_residual = protocol.reported_residual();
        result.iterations.resize(process_count());
        for (ProcessId i = 0; i < process_count(); ++i) {
            result.iterations[i] = processes_[i].local_iter;
            result.k_max = std::max(result.k_max, processes_[i].local_iter);
        }
        result.stats = stats_;
        result.final_views.reserve(process_count());
        result.final_solution.resize(problem_.dimension);
        result.max_step_displacement.resize(process_count());
        for (ProcessId i = 0; i < process_count(); ++i) {
            result.final_views.push_back(processes_[i].view);
            const std::size_t b = problem_.blocks.begin(i);
            for (std::size_t k = 0; k < problem_.blocks.size(i); ++k) {
                result.final_solution[b + k] = processes_[i].view.values[b + k];
            }
            result.max_step_displacement[i] = processes_[i].max_step_displacement;
        }
        if (cfg_.record_event_log) {
            result.event_log = log_.str();
        }
        return result;
    }

private:
    friend class ProcessHandle;

    enum class EventKind { step, delivery };

    struct QueueEntry {
        Tick tick = 0;
        std::uint64_t order = 0;
        EventKind kind = EventKind::step;
        ProcessId pid = 0;
        std::uint64_t epoch = 0;
        std::size_t envelope = 0;

        bool operator>(const QueueEntry& o) const {
            return tick != o.tick ? tick > o.tick : order > o.order;
        }
    };

    struct LinkState {
        std::uint64_t next_seq = 0;
        std::vector<Tick> eff_prefix_max; // eff_prefix_max[s] = max effective tick over seqs 0..s
        Tick last_control_eff = 0;
        bool has_control = false;
    };

    struct CachedResidual {
        std::uint64_t at_mutation = std::numeric_limits<std::uint64_t>::max();
        double value = 0.0;
    };

    LinkState& link(ProcessId from, ProcessId to) { return links_[from * process_count() + to]; }

    Tick draw_latency(EnvelopeKind kind) {
        const Tick cap = is_empty_control(kind) || kind == EnvelopeKind::reduction_fragment
                             ? cfg_.delivery.control_latency_max
                             : cfg_.delivery.computation_latency_max;
        if (cap <= 1) {
            return 1;
        }
        std::uniform_int_distribution<Tick> law(1, cap);
        return law(rng_);
    }

    void emit(ProcessId from, ProcessId to, EnvelopeKind kind, Vector payload, ProtocolMeta meta) {
        if (to >= process_count() || to == from) {
            throw contract_error("emit: bad destination");
        }
        Envelope env;
        env.kind = kind;
        env.from = from;
        env.to = to;
        env.payload = std::move(payload);
        env.sent_at_version = processes_[from].local_iter;
        env.meta = meta;
        env.emitted_at = now_;

        LinkState& ls = link(from, to);
        env.seq = ls.next_seq++;

        if (cfg_.synchronous) {
            // Lockstep traffic resolves within the sweep; no latency law.
            env.deliver_at = now_;
            stats_.sent[static_cast<std::size_t>(kind)] += 1;
            stats_.payload_bytes[static_cast<std::size_t>(kind)] += env.payload.size() * sizeof(double);
            log_line("send:", env, processes_[to].local_iter);
            sync_queue_.push_back(std::move(env));
            return;
        }

        Tick delay;
        if (cfg_.delivery.scripted_latency) {
            auto scripted = cfg_.delivery.scripted_latency(env);
            delay = scripted ? *scripted : draw_latency(kind);
        } else {
            delay = draw_latency(kind);
        }
        Tick eff = now_ + delay;
        if (cfg_.delivery.mode == DeliveryModel::Mode::fifo) {
            if (env.seq > 0) {
                eff = std::max(eff, ls.eff_prefix_max[env.seq - 1]);
            }
        } else {
            const std::size_t m = cfg_.delivery.degree;
            if (env.seq > m) {
                eff = std::max(eff, ls.eff_prefix_max[env.seq - m - 1]);
            }
            if (is_empty_control(kind)) {
                // Empty control messages stay ordered among themselves.
                if (ls.has_control) {
                    eff = std::max(eff, ls.last_control_eff);
                }
            } else if (kind == EnvelopeKind::computation && cfg_.delivery.cross_kind_rule && ls.has_control) {
                eff = std::max(eff, ls.last_control_eff);
            }
        }
        if (is_empty_control(kind)) {
            ls.last_control_eff = eff;
            ls.has_control = true;
        }
        ls.eff_prefix_max.push_back(ls.eff_prefix_max.empty() ? eff : std::max(eff, ls.eff_prefix_max.back()));
        env.deliver_at = eff;

        stats_.sent[static_cast<std::size_t>(kind)] += 1;
        stats_.payload_bytes[static_cast<std::size_t>(kind)] += env.payload.size() * sizeof(double);
        log_line("send:", env, processes_[to].local_iter);

        if (cfg_.synchronous) {
            sync_queue_.push_back(std::move(env));
        } else {
            envelopes_.push_back(std::move(env));
            queue_.push(QueueEntry{eff, next_order_++, EventKind::delivery, to, 0, envelopes_.size() - 1});
        }
    }

    void log_line(std::string_view prefix, const Envelope& env, std::uint64_t receiver_iter) {
        if (!cfg_.record_event_log) {
            return;
        }
        log_ << now_ << '\t' << prefix << to_string(env.kind) << '\t' << env.from << '\t' << env.to << '\t'
             << env.seq << '\t' << env.sent_at_version << '\t' << receiver_iter << '\n';
    }

    void log_step(ProcessId pid, std::uint64_t iter) {
        if (!cfg_.record_event_log) {
            return;
        }
        log_ << now_ << '\t' << "step" << '\t' << pid << '\t' << pid << '\t' << iter << '\t' << iter << '\t'
             << iter << '\n';
    }

    double local_residual(ProcessId pid) {
        CachedResidual& cache = residual_cache_[pid];
        if (cache.at_mutation != mutation_counter_[pid]) {
            cache.value = evaluate_local_residual(problem_, residual_, pid, processes_[pid].view);
            cache.at_mutation = mutation_counter_[pid];
        }
        return cache.value;
    }

    void step_process(ProcessId pid) {
        ProcessState& st = processes_[pid];
        Vector next = problem_.apply_block(pid, st.view.values);
        double disp = 0.0;
        const std::size_t off = problem_.blocks.begin(pid);
        for (std::size_t k = 0; k < next.size(); ++k) {
            if (!std::isfinite(next[k])) {
                throw divergence_error("process " + std::to_string(pid) + " diverged at iteration " +
                                       std::to_string(st.local_iter + 1));
            }
            disp = std::max(disp, std::abs(next[k] - st.view.values[off + k]));
        }
        std::copy(next.begin(), next.end(), st.view.values.begin() + static_cast<std::ptrdiff_t>(off));
        st.local_iter += 1;
        st.view.version_stamps[pid] = st.local_iter;
        st.max_step_displacement = std::max(st.max_step_displacement, disp);
        mutation_counter_[pid] += 1;
        log_step(pid, st.local_iter);
        const auto& outs = out_neighbors_[pid];
        for (std::size_t t = 0; t < outs.size(); ++t) {
            Vector payload = (t + 1 == outs.size()) ? std::move(next) : next;
            emit(pid, outs[t], EnvelopeKind::computation, std::move(payload), ProtocolMeta{});
        }
        ProcessHandle h(*this, pid);
        protocol_->on_step(h);
    }

    void deliver(Envelope& env) {
        stats_.delivered[static_cast<std::size_t>(env.kind)] += 1;
        ProcessState& st = processes_[env.to];
        log_line("deliver:", env, st.local_iter);
        if (env.kind == EnvelopeKind::computation) {
            const std::size_t off = problem_.blocks.begin(env.from);
            std::copy(env.payload.begin(), env.payload.end(),
                      st.view.values.begin() + static_cast<std::ptrdiff_t>(off));
            st.view.version_stamps[env.from] = env.sent_at_version;
            mutation_counter_[env.to] += 1;
            env.payload.clear();
            env.payload.shrink_to_fit();
            return;
        }
        ProcessHandle h(*this, env.to);
        protocol_->on_control(h, env);
        env.payload.clear();
        env.payload.shrink_to_fit();
    }

    void schedule_step(ProcessId pid, Tick at) {
        queue_.push(QueueEntry{at, next_order_++, EventKind::step, pid, step_epoch_[pid], 0});
    }

    Tick next_step_delay() {
        if (cfg_.step_delay_max <= 1) {
            return 1;
        }
        std::uniform_int_distribution<Tick> law(1, cfg_.step_delay_max);
        return law(rng_);
    }

    bool scripted() const { return !cfg_.scripted_steps.empty(); }

    void schedule_initial_steps() {
        for (ProcessId i = 0; i < process_count(); ++i) {
            if (scripted()) {
                if (!cfg_.scripted_steps[i].empty()) {
                    schedule_step(i, cfg_.scripted_steps[i][0]);
                    next_script_index_[i] = 1;
                }
            } else {
                schedule_step(i, next_step_delay());
            }
        }
    }

    void after_step_reschedule(ProcessId pid) {
        if (scripted()) {
            auto& ticks = cfg_.scripted_steps[pid];
            if (next_script_index_[pid] < ticks.size()) {
                schedule_step(pid, ticks[next_script_index_[pid]++]);
            }
        } else {
            schedule_step(pid, now_ + next_step_delay());
        }
    }

    // Liveness enforcement: any process left unstepped for fairness_bound
    // events is stepped immediately, ids ascending.
    void enforce_fairness() {
        if (scripted()) {
            return;
        }
        bool again = true;
        while (again) {
            again = false;
            for (ProcessId i = 0; i < process_count(); ++i) {
                if (events_since_step_[i] >= cfg_.fairness_bound) {
                    step_epoch_[i] += 1; // invalidate the queued step
                    step_process(i);
                    stats_.forced_steps += 1;
                    note_event(i);
                    after_step_reschedule(i);
                    again = true;
                    if (protocol_->decided()) {
                        return;
                    }
                }
            }
        }
    }

    void note_event(ProcessId stepped) {
        stats_.total_events += 1;
        for (ProcessId i = 0; i < process_count(); ++i) {
            events_since_step_[i] += 1;
        }
        events_since_step_[stepped] = 0;
    }

    void note_event() {
        stats_.total_events += 1;
        for (ProcessId i = 0; i < process_count(); ++i) {
            events_since_step_[i] += 1;
        }
    }

    Verdict run_asynchronous() {
        schedule_initial_steps();
        while (true) {
            if (protocol_->decided()) {
                return Verdict::terminated;
            }
            if (stats_.total_events >= cfg_.max_events) {
                return Verdict::max_events;
            }
            if (queue_.empty()) {
                return Verdict::quiescent;
            }
            QueueEntry ev = queue_.top();
            queue_.pop();
            now_ = ev.tick;
            if (ev.kind == EventKind::step) {
                if (ev.epoch != step_epoch_[ev.pid]) {
                    continue; // superseded by a forced step
                }
                step_process(ev.pid);
                note_event(ev.pid);
                after_step_reschedule(ev.pid);
            } else {
                deliver(envelopes_[ev.envelope]);
                note_event();
            }
            if (!protocol_->decided()) {
                enforce_fairness();
            }
        }
    }

    // Lockstep mode: every sweep applies f to the previous iterate, then all
    // links deliver, so each view equals the classical iterate x^k.
    Verdict run_synchronous() {
        const std::size_t p = process_count();
        while (true) {
            if (protocol_->decided()) {
                return Verdict::terminated;
            }
            if (stats_.sweeps >= cfg_.max_events) {
                return Verdict::max_events;
            }
            now_ = stats_.sweeps + 1;
            std::vector<Vector> next(p);
            for (ProcessId i = 0; i < p; ++i) {
                next[i] = problem_.apply_block(i, processes_[i].view.values);
                for (double v : next[i]) {
                    if (!std::isfinite(v)) {
                        throw divergence_error("process " + std::to_string(i) + " diverged at sweep " +
                                               std::to_string(stats_.sweeps + 1));
                    }
                }
            }
            for (ProcessId i = 0; i < p; ++i) {
                ProcessState& st = processes_[i];
                const std::size_t off = problem_.blocks.begin(i);
                double disp = 0.0;
                for (std::size_t k = 0; k < next[i].size(); ++k) {
                    disp = std::max(disp, std::abs(next[i][k] - st.view.values[off + k]));
                }
                st.max_step_displacement = std::max(st.max_step_displacement, disp);
                std::copy(next[i].begin(), next[i].end(),
                          st.view.values.begin() + static_cast<std::ptrdiff_t>(off));
                st.local_iter += 1;
                st.view.version_stamps[i] = st.local_iter;
                mutation_counter_[i] += 1;
                log_step(i, st.local_iter);
            }
            for (ProcessId i = 0; i < p; ++i) {
                const std::size_t off = problem_.blocks.begin(i);
                const std::size_t len = problem_.blocks.size(i);
                for (ProcessId j : out_neighbors_[i]) {
                    Envelope env;
                    env.kind = EnvelopeKind::computation;
                    env.from = i;
                    env.to = j;
                    env.seq = link(i, j).next_seq++;
                    env.sent_at_version = processes_[i].local_iter;
                    env.emitted_at = now_;
                    env.deliver_at = now_;
                    stats_.sent[0] += 1;
                    stats_.payload_bytes[0] += len * sizeof(double);
                    log_line("send:", env, processes_[j].local_iter);
                    stats_.delivered[0] += 1;
                    std::copy(processes_[i].view.values.begin() + static_cast<std::ptrdiff_t>(off),
                              processes_[i].view.values.begin() + static_cast<std::ptrdiff_t>(off + len),
                              processes_[j].view.values.begin() + static_cast<std::ptrdiff_t>(off));
                    processes_[j].view.version_stamps[i] = processes_[i].local_iter;
                    mutation_counter_[j] += 1;
                    log_line("deliver:", env, processes_[j].local_iter);
                }
            }
            for (ProcessId i = 0; i < p; ++i) {
                ProcessHandle h(*this, i);
                protocol_->on_step(h);
            }
            // Protocol traffic resolves within the sweep, in emission order.
            while (!sync_queue_.empty()) {
                Envelope env = std::move(sync_queue_.front());
                sync_queue_.pop_front();
                deliver(env);
            }
            stats_.sweeps += 1;
            stats_.total_events += p;
        }
    }

    FixedPointProblem problem_;
    ResidualSpec residual_;
    EngineConfig cfg_;
    std::mt19937_64 rng_;
    std::vector<ProcessState> processes_;
    std::vector<std::vector<std::size_t>> out_neighbors_;
    std::vector<LinkState> links_;
    std::priority_queue<QueueEntry, std::vector<QueueEntry>, std::greater<>> queue_;
    std::deque<Envelope> envelopes_;
    std::deque<Envelope> sync_queue_;
    std::vector<std::uint64_t> events_since_step_;
    std::vector<std::uint64_t> step_epoch_;
    std::vector<std::size_t> next_script_index_;
    std::vector<CachedResidual> residual_cache_;
    std::vector<std::uint64_t> mutation_counter_;
    DetectionProtocol* protocol_ = nullptr;
    EngineStats stats_;
    Tick now_ = 0;
    std::uint64_t next_order_ = 0;
    bool started_ = false;
    std::ostringstream log_;
};

inline std::size_t ProcessHandle::process_count() const { return eng_->process_count(); }
inline Tick ProcessHandle::now() const { return eng_->now(); }
inline std::uint64_t ProcessHandle::local_iter() const { return eng_->processes_[pid_].local_iter; }
inline const GlobalView& ProcessHandle::view() const { return eng_->processes_[pid_].view; }
inline double ProcessHandle::local_residual() const { return eng_->local_residual(pid_); }
inline std::span<const std::size_t> ProcessHandle::in_neighbors() const {
    return eng_->problem_.in_neighbors[pid_];
}
inline std::span<const std::size_t> ProcessHandle::out_neighbors() const { return eng_->out_neighbors_[pid_]; }
inline Vector ProcessHandle::block_copy(std::size_t block) const {
    const auto& v = eng_->processes_[pid_].view.values;
    const std::size_t b = eng_->problem_.blocks.begin(block);
    return Vector(v.begin() + static_cast<std::ptrdiff_t>(b),
                  v.begin() + static_cast<std::ptrdiff_t>(b + eng_->problem_.blocks.size(block)));
}
inline std::uint64_t ProcessHandle::block_stamp(std::size_t block) const {
    return eng_->processes_[pid_].view.version_stamps[block];
}
inline void ProcessHandle::send(ProcessId to, EnvelopeKind kind, Vector payload, ProtocolMeta meta) {
    eng_->emit(pid_, to, kind, std::move(payload), meta);
}

// Post-hoc validator over an exported event log: re-checks that every delivery
// respected the delivery model, that control/computation ordering held, that
// sender stamps were never ahead of the sender, and (optionally) that every
// process stepped within each fairness window.
struct LogCheckResult {
    bool ok = true;
    std::vector<std::string> violations;

    void fail(std::string msg) {
        ok = false;
        violations.push_back(std::move(msg));
    }
};

inline LogCheckResult validate_event_log(const std::string& log, const DeliveryModel& model,
                                         std::size_t process_count, std::size_t fairness_bound = 0) {
    LogCheckResult result;
    struct SendInfo {
        EnvelopeKind kind;
        std::uint64_t version;
    };
    std::map<std::pair<ProcessId, ProcessId>, std::vector<SendInfo>> sends;
    std::map<std::pair<ProcessId, ProcessId>, std::vector<std::uint64_t>> delivered;
    std::vector<std::uint64_t> steps(process_count, 0);
    std::vector<std::uint64_t> since_step(process_count, 0);
    std::uint64_t events = 0;

    std::istringstream in(log);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        Tick tick;
        std::string kind;
        ProcessId from, to;
        std::uint64_t seq, k_sender, k_receiver;
        if (!(ls >> tick >> kind >> from >> to >> seq >> k_sender >> k_receiver)) {
            result.fail("line " + std::to_string(line_no) + ": unparseable");
            continue;
        }
        if (from >= process_count || to >= process_count) {
            result.fail("line " + std::to_string(line_no) + ": process id out of range");
            continue;
        }
        if (kind == "step") {
            if (k_sender != steps[from] + 1) {
                result.fail("line " + std::to_string(line_no) + ": non-monotone iteration count");
            }
            steps[from] = k_sender;
            ++events;
            for (auto& g : since_step) {
                ++g;
            }
            since_step[from] = 0;
            if (fairness_bound != 0) {
                for (ProcessId i = 0; i < process_count; ++i) {
                    if (since_step[i] > fairness_bound + process_count) {
                        result.fail("line " + std::to_string(line_no) + ": process " + std::to_string(i) +
                                    " exceeded the fairness window");
                    }
                }
            }
            continue;
        }
        const bool is_send = kind.rfind("send:", 0) == 0;
        const bool is_deliver = kind.rfind("deliver:", 0) == 0;
        if (!is_send && !is_deliver) {
            result.fail("line " + std::to_string(line_no) + ": unknown event kind " + kind);
            continue;
        }
        const std::string kind_name = kind.substr(kind.find(':') + 1);
        EnvelopeKind ek = EnvelopeKind::computation;
        if (kind_name == "snapshot_marker") {
            ek = EnvelopeKind::snapshot_marker;
        } else if (kind_name == "snapshot_confirm") {
            ek = EnvelopeKind::snapshot_confirm;
        } else if (kind_name == "reduction_fragment") {
            ek = EnvelopeKind::reduction_fragment;
        } else if (kind_name != "computation") {
            result.fail("line " + std::to_string(line_no) + ": unknown envelope kind " + kind_name);
            continue;
        }
        auto key = std::make_pair(from, to);
        if (is_send) {
            if (seq != sends[key].size()) {
                result.fail("line " + std::to_string(line_no) + ": non-consecutive sequence number");
            }
            if (k_sender > steps[from]) {
                result.fail("line " + std::to_string(line_no) + ": send stamped ahead of sender");
            }
            sends[key].push_back(SendInfo{ek, k_sender});
            continue;
        }
        ++events;
        for (auto& g : since_step) {
            ++g;
        }
        auto& dels = delivered[key];
        const auto& emitted = sends[key];
        if (seq >= emitted.size()) {
            result.fail("line " + std::to_string(line_no) + ": delivery of unknown envelope");
            continue;
        }
        if (model.mode == DeliveryModel::Mode::fifo) {
            if (seq != dels.size()) {
                result.fail("line " + std::to_string(line_no) + ": fifo order violated on link " +
                            std::to_string(from) + "->" + std::to_string(to));
            }
        } else {
            std::vector<char> seen(emitted.size(), 0);
            for (std::uint64_t s : dels) {
                seen[s] = 1;
            }
            for (std::uint64_t s = 0; s + model.degree < seq; ++s) {
                if (!seen[s]) {
                    result.fail("line " + std::to_string(line_no) + ": reordering beyond degree " +
                                std::to_string(model.degree) + " on link " + std::to_string(from) + "->" +
                                std::to_string(to));
                    break;
                }
            }
            if ((is_empty_control(ek) || (model.cross_kind_rule && ek == EnvelopeKind::computation))) {
                for (std::uint64_t s = 0; s < seq; ++s) {
                    if (is_empty_control(emitted[s].kind) && !seen[s]) {
                        result.fail("line " + std::to_string(line_no) + ": " + kind_name +
                                    " overtook an empty control envelope");
                        break;
                    }
                }
            }
        }
        if (emitted[seq].version != k_sender) {
            result.fail("line " + std::to_string(line_no) + ": delivered stamp differs from emission stamp");
        }
        dels.push_back(seq);
    }
    return result;
}

} // namespace asyncdet

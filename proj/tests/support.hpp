#pragma once

// Shared helpers for the test suites: tiny hand-built problems with known
// iterates, and scripted-run shorthand.

#include <asyncdet/harness.hpp>

#include <random>

namespace testutil {

using namespace asyncdet;

// f(x)_i = (b_i - sum_{j != i} A_ij x_j) / A_ii with one scalar per block.
inline FixedPointProblem jacobi_problem(std::vector<std::vector<double>> a, Vector b) {
    const std::size_t n = b.size();
    FixedPointProblem prob;
    prob.dimension = n;
    prob.blocks = BlockMap::even_blocks(n, n);
    prob.apply_block = [a, b](std::size_t i, std::span<const double> x) {
        double acc = b[i];
        for (std::size_t j = 0; j < x.size(); ++j) {
            if (j != i) {
                acc -= a[i][j] * x[j];
            }
        }
        return Vector{acc / a[i][i]};
    };
    prob.in_neighbors.assign(n, {});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i && a[i][j] != 0.0) {
                prob.in_neighbors[i].push_back(j);
            }
        }
    }
    return prob;
}

// Dense affine map f(x) = Mx + c, one scalar per block.
inline FixedPointProblem affine_problem(std::vector<std::vector<double>> m, Vector c) {
    const std::size_t n = c.size();
    FixedPointProblem prob;
    prob.dimension = n;
    prob.blocks = BlockMap::even_blocks(n, n);
    prob.apply_block = [m, c](std::size_t i, std::span<const double> x) {
        double acc = c[i];
        for (std::size_t j = 0; j < x.size(); ++j) {
            acc += m[i][j] * x[j];
        }
        return Vector{acc};
    };
    prob.in_neighbors.assign(n, {});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i && m[i][j] != 0.0) {
                prob.in_neighbors[i].push_back(j);
            }
        }
    }
    return prob;
}

inline GlobalView view_of(const FixedPointProblem& prob, Vector values) {
    GlobalView v;
    v.values = std::move(values);
    v.version_stamps.assign(prob.block_count(), 0);
    return v;
}

// Two communicating processes replaying a fixed interleaving: process 1 locally
// converges at its first iterate and opens the snapshot; the marker reaches
// process 0 after x2's first iterate but before its second, and the reverse
// marker reaches process 1 after x1's second iterate. Both reconstruct
// [x1_at_2, x2_at_1] = [1.4, 1.0].
struct TwoProcessTrace {
    RunSetup setup;
    // Iterates of the scalar recurrences, computed independently in the test.
    Vector x1_iterates; // index k-1 -> x1 after k updates
    Vector x2_iterates;
};

inline TwoProcessTrace two_process_trace(ProtocolKind protocol = ProtocolKind::exs) {
    const std::vector<std::vector<double>> m{{0.4, 0.2}, {0.3, 0.1}};
    const Vector c{1.0, 1.0};
    TwoProcessTrace trace;
    trace.setup.problem = make_affine_problem(m, c, 2);
    trace.setup.residual = make_map_residual(trace.setup.problem, NormKind::max);
    trace.setup.detection.protocol = protocol;
    trace.setup.detection.epsilon = 1e-30; // the scripted predicate replaces this
    trace.setup.detection.epsilon_tilde = 1e-30;
    trace.setup.detection.convergence_predicate = [](ProcessId pid, std::uint64_t iter, double) {
        return pid == 1 && iter == 1;
    };
    trace.setup.engine.scripted_steps = {{10, 20, 40, 50}, {10, 20, 30, 40, 50}};
    trace.setup.engine.delivery.mode = DeliveryModel::Mode::fifo;
    trace.setup.engine.delivery.scripted_latency = [](const Envelope& env) -> std::optional<Tick> {
        static const std::vector<Tick> to_1{12, 13, 10, 15, 10};     // link 0 -> 1 by seq
        static const std::vector<Tick> to_0{13, 15, 8, 15, 1, 25, 25}; // link 1 -> 0 by seq
        const auto& delays = env.from == 0 ? to_1 : to_0;
        if (env.seq < delays.size()) {
            return delays[env.seq];
        }
        return Tick{1};
    };

    // Independent scalar recurrences following the scripted delivery pattern:
    // each update reads the dependence version the schedule has delivered.
    auto f1 = [](double x1, double x2) { return 0.4 * x1 + 0.2 * x2 + 1.0; };
    auto f2 = [](double x1, double x2) { return 0.3 * x1 + 0.1 * x2 + 1.0; };
    Vector& x1 = trace.x1_iterates;
    Vector& x2 = trace.x2_iterates;
    x1.push_back(f1(0.0, 0.0));          // x1 after 1 update
    x2.push_back(f2(0.0, 0.0));          // x2 after 1 update
    x1.push_back(f1(x1[0], 0.0));        // x2's first value not delivered yet
    x2.push_back(f2(0.0, x2[0]));        // likewise for x1's
    x2.push_back(f2(x1[0], x2[1]));      // now sees x1 after 1 update
    x1.push_back(f1(x1[1], x2[1]));      // sees x2 after 2 updates
    x2.push_back(f2(x1[1], x2[2]));      // sees x1 after 2 updates
    x1.push_back(f1(x1[2], x2[2]));      // sees x2 after 3 updates
    x2.push_back(f2(x1[1], x2[3]));      // x1 still at its second update
    return trace;
}

inline RunSetup linear_setup(std::size_t n, std::size_t p, double alpha, std::uint64_t problem_seed,
                             ProtocolKind protocol, double epsilon, double epsilon_tilde) {
    RunSetup setup;
    LinearFixedPoint lin = build_linear(n, p, alpha, problem_seed);
    setup.problem = lin.problem();
    setup.residual = make_map_residual(setup.problem, NormKind::max);
    setup.detection.protocol = protocol;
    setup.detection.epsilon = epsilon;
    setup.detection.epsilon_tilde = epsilon_tilde;
    setup.engine.max_events = 2'000'000;
    return setup;
}

} // namespace testutil

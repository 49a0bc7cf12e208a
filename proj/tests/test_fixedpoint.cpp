// Residual decomposition, norms, and reductions on hand-checked problems.

#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace asyncdet;

namespace {

ResidualSpec max_spec(const FixedPointProblem& prob) { return make_map_residual(prob, NormKind::max); }

} // namespace

TEST_CASE("block map partitions the index range") {
    BlockMap map = BlockMap::even_blocks(10, 3);
    map.validate(10);
    REQUIRE(map.count() == 3);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        REQUIRE(map.size(i) > 0);
        covered += map.size(i);
    }
    REQUIRE(covered == 10);
    REQUIRE(map.block_of(0) == 0);
    REQUIRE(map.block_of(9) == 2);
    REQUIRE_THROWS_AS(BlockMap::even_blocks(2, 3), config_error);
}

TEST_CASE("local residual of the zero map at its fixed point is zero") {
    auto prob = testutil::affine_problem({{0.0, 0.0}, {0.0, 0.0}}, {0.0, 0.0});
    auto spec = max_spec(prob);
    auto view = testutil::view_of(prob, {0.0, 0.0});
    REQUIRE(evaluate_local_residual(prob, spec, 0, view) == 0.0);
    REQUIRE(evaluate_local_residual(prob, spec, 1, view) == 0.0);
}

TEST_CASE("local residual of the 2x2 relaxation at the origin") {
    // A = [[2,1],[1,2]], b = [3,3]: f_1([0,0]) = 3/2, so |0 - 1.5| = 1.5.
    auto prob = testutil::jacobi_problem({{2.0, 1.0}, {1.0, 2.0}}, {3.0, 3.0});
    auto spec = max_spec(prob);
    auto view = testutil::view_of(prob, {0.0, 0.0});
    REQUIRE(evaluate_local_residual(prob, spec, 0, view) == 1.5);

    // Cross-check with a dense evaluation of x - f(x).
    Vector fx = prob.apply_all(view.values);
    REQUIRE(std::abs(view.values[0] - fx[0]) == 1.5);
}

TEST_CASE("local residual vanishes at the solved system") {
    auto prob = testutil::jacobi_problem({{2.0, 1.0}, {1.0, 2.0}}, {3.0, 3.0});
    auto spec = max_spec(prob);
    // Direct solve of Ax = b gives [1, 1].
    auto view = testutil::view_of(prob, {1.0, 1.0});
    REQUIRE(evaluate_local_residual(prob, spec, 0, view) == 0.0);
    REQUIRE(evaluate_local_residual(prob, spec, 1, view) == 0.0);
}

TEST_CASE("residual evaluation rejects contract violations") {
    auto prob = testutil::jacobi_problem({{2.0, 1.0}, {1.0, 2.0}}, {3.0, 3.0});
    auto spec = max_spec(prob);
    GlobalView bad;
    bad.values = {0.0};
    bad.version_stamps = {0, 0};
    REQUIRE_THROWS_AS(evaluate_local_residual(prob, spec, 0, bad), contract_error);
    auto view = testutil::view_of(prob, {0.0, 0.0});
    REQUIRE_THROWS_AS(evaluate_local_residual(prob, spec, 5, view), contract_error);
}

TEST_CASE("reductions fold as the configured norm") {
    ResidualSpec l2;
    l2.kind = NormKind::lq;
    l2.q = 2.0;
    const double locals_l2[] = {9.0, 16.0};
    REQUIRE(reduce_residual(l2, locals_l2) == 5.0);

    ResidualSpec mx;
    mx.kind = NormKind::max;
    const double locals_max[] = {0.2, 0.7, 0.1};
    REQUIRE(reduce_residual(mx, locals_max) == 0.7);

    const double zeros[] = {0.0, 0.0, 0.0, 0.0};
    REQUIRE(reduce_residual(l2, zeros) == 0.0);

    const double negative[] = {1.0, -0.5};
    REQUIRE_THROWS_AS(reduce_residual(mx, negative), contract_error);
}

TEST_CASE("reduction is permutation-invariant and monotone") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> unit(0.0, 10.0);
    ResidualSpec l3;
    l3.kind = NormKind::lq;
    l3.q = 3.0;
    ResidualSpec mx;
    mx.kind = NormKind::max;
    for (int trial = 0; trial < 200; ++trial) {
        Vector locals(6);
        for (double& v : locals) {
            v = unit(rng);
        }
        Vector shuffled = locals;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        for (const ResidualSpec* spec : {&l3, &mx}) {
            const double base = spec->reduce(locals);
            REQUIRE(spec->reduce(shuffled) == Catch::Approx(base).epsilon(1e-15));
            Vector bumped = locals;
            bumped[static_cast<std::size_t>(trial) % bumped.size()] += unit(rng);
            REQUIRE(spec->reduce(bumped) >= base);
        }
    }
}

TEST_CASE("true global residual matches hand evaluation") {
    auto prob = testutil::jacobi_problem({{2.0, 1.0}, {1.0, 2.0}}, {3.0, 3.0});
    auto spec = max_spec(prob);
    REQUIRE(true_global_residual(prob, spec, testutil::view_of(prob, {0.0, 0.0})) == 1.5);
    // f([2,0]) = [1.5, 0.5]: both block residuals are 0.5.
    REQUIRE(true_global_residual(prob, spec, testutil::view_of(prob, {2.0, 0.0})) == 0.5);
}

TEST_CASE("residual decomposition agrees with the direct norm on random views") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unit(-5.0, 5.0);
    for (std::uint64_t pseed : {11ULL, 12ULL}) {
        LinearFixedPoint lin = build_linear(12, 4, 0.7, pseed);
        FixedPointProblem prob = lin.problem();
        ResidualSpec l2 = make_map_residual(prob, NormKind::lq, 2.0);
        ResidualSpec mx = make_map_residual(prob, NormKind::max);
        for (int trial = 0; trial < 1000; ++trial) {
            GlobalView view = testutil::view_of(prob, Vector(12));
            for (double& v : view.values) {
                v = unit(rng);
            }
            Vector fx = prob.apply_all(view.values);
            double direct_l2 = 0.0;
            double direct_max = 0.0;
            for (std::size_t k = 0; k < fx.size(); ++k) {
                const double d = view.values[k] - fx[k];
                direct_l2 += d * d;
                direct_max = std::max(direct_max, std::abs(d));
            }
            direct_l2 = std::sqrt(direct_l2);
            const double via_l2 = true_global_residual(prob, l2, view);
            const double via_max = true_global_residual(prob, mx, view);
            REQUIRE(std::abs(via_l2 - direct_l2) <= 1e-12 * (1.0 + direct_l2));
            REQUIRE(std::abs(via_max - direct_max) <= 1e-12 * (1.0 + direct_max));
        }
    }
}

TEST_CASE("generated problems certify their contraction factor") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> unit(-3.0, 3.0);
    LinearFixedPoint lin = build_linear(10, 2, 0.6, 5);
    FixedPointProblem prob = lin.problem();
    REQUIRE(prob.contraction_factor.has_value());
    const double alpha = *prob.contraction_factor;
    REQUIRE(std::abs(alpha - 0.6) <= 1e-12);
    for (int trial = 0; trial < 300; ++trial) {
        Vector x(10), y(10);
        double dist = 0.0;
        for (std::size_t k = 0; k < 10; ++k) {
            x[k] = unit(rng);
            y[k] = unit(rng);
            dist = std::max(dist, std::abs(x[k] - y[k]));
        }
        Vector fx = prob.apply_all(x);
        Vector fy = prob.apply_all(y);
        double fdist = 0.0;
        for (std::size_t k = 0; k < 10; ++k) {
            fdist = std::max(fdist, std::abs(fx[k] - fy[k]));
        }
        REQUIRE(fdist <= alpha * dist + 1e-12);
    }
}

TEST_CASE("exact solutions have zero residual") {
    for (std::uint64_t pseed : {1ULL, 2ULL, 3ULL}) {
        LinearFixedPoint lin = build_linear(16, 4, 0.8, pseed);
        FixedPointProblem prob = lin.problem();
        ResidualSpec mx = make_map_residual(prob, NormKind::max);
        REQUIRE(true_global_residual(prob, mx, testutil::view_of(prob, lin.exact)) <= 1e-12);
    }
}

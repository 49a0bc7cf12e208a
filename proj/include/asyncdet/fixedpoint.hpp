#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace asyncdet {

using Vector = std::vector<double>;

// Violated precondition or broken data contract (dimension mismatch, negative
// residual contribution, incomplete record, ...).
class contract_error : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Invalid configuration detected at setup, before any run starts.
class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A detection protocol observed a message sequence its delivery assumptions rule out.
class protocol_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A local update produced NaN/Inf; the run is aborted with a diagnostic.
class divergence_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Contiguous partition of the index range [0, n) into non-empty blocks.
struct BlockMap {
    // p+1 fenceposts: block i owns [offsets[i], offsets[i+1]).
    std::vector<std::size_t> offsets;

    static BlockMap even_blocks(std::size_t n, std::size_t p) {
        if (p == 0 || n < p) {
            throw config_error("BlockMap: need n >= p >= 1, got n=" + std::to_string(n) +
                               " p=" + std::to_string(p));
        }
        BlockMap map;
        map.offsets.resize(p + 1);
        for (std::size_t i = 0; i <= p; ++i) {
            map.offsets[i] = (n * i) / p;
        }
        return map;
    }

    std::size_t count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
    std::size_t begin(std::size_t i) const { return offsets[i]; }
    std::size_t end(std::size_t i) const { return offsets[i + 1]; }
    std::size_t size(std::size_t i) const { return end(i) - begin(i); }
    std::size_t total() const { return offsets.empty() ? 0 : offsets.back(); }

    std::size_t block_of(std::size_t g) const {
        auto it = std::upper_bound(offsets.begin(), offsets.end(), g);
        if (it == offsets.begin() || it == offsets.end()) {
            throw contract_error("BlockMap::block_of: index out of range");
        }
        return static_cast<std::size_t>(it - offsets.begin()) - 1;
    }

    void validate(std::size_t n) const {
        if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != n) {
            throw contract_error("BlockMap: offsets must cover [0, n)");
        }
        for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
            if (offsets[i] >= offsets[i + 1]) {
                throw contract_error("BlockMap: block " + std::to_string(i) + " is empty");
            }
        }
    }
};

// A full-length candidate vector together with the per-block version stamps it
// was assembled from.
struct GlobalView {
    Vector values;
    std::vector<std::uint64_t> version_stamps;

    static GlobalView constant(std::size_t n, std::size_t p, double v) {
        GlobalView view;
        view.values.assign(n, v);
        view.version_stamps.assign(p, 0);
        return view;
    }
};

// A fixed-point problem x = f(x) decomposed into block submappings f_i.
//
// apply_block(i, values) evaluates f_i on a full-length value vector; it may
// only read the entries of block i and of the blocks listed in in_neighbors[i].
struct FixedPointProblem {
    std::size_t dimension = 0;
    BlockMap blocks;
    std::function<Vector(std::size_t, std::span<const double>)> apply_block;
    // Per block: the other blocks whose values f_i reads (sorted, no self).
    std::vector<std::vector<std::size_t>> in_neighbors;
    std::optional<Vector> exact_solution;
    std::optional<double> contraction_factor;

    std::size_t block_count() const { return blocks.count(); }

    std::vector<std::vector<std::size_t>> out_neighbors() const {
        std::vector<std::vector<std::size_t>> out(block_count());
        for (std::size_t i = 0; i < in_neighbors.size(); ++i) {
            for (std::size_t j : in_neighbors[i]) {
                out[j].push_back(i);
            }
        }
        for (auto& v : out) {
            std::sort(v.begin(), v.end());
        }
        return out;
    }

    Vector apply_all(std::span<const double> values) const {
        if (values.size() != dimension) {
            throw contract_error("apply_all: dimension mismatch");
        }
        Vector out(dimension);
        for (std::size_t i = 0; i < block_count(); ++i) {
            Vector bi = apply_block(i, values);
            if (bi.size() != blocks.size(i)) {
                throw contract_error("apply_block returned wrong block size");
            }
            std::copy(bi.begin(), bi.end(), out.begin() + static_cast<std::ptrdiff_t>(blocks.begin(i)));
        }
        return out;
    }

    void validate() const {
        blocks.validate(dimension);
        if (!apply_block) {
            throw contract_error("FixedPointProblem: apply_block not set");
        }
        if (in_neighbors.size() != block_count()) {
            throw contract_error("FixedPointProblem: in_neighbors size mismatch");
        }
        for (std::size_t i = 0; i < in_neighbors.size(); ++i) {
            for (std::size_t j : in_neighbors[i]) {
                if (j >= block_count() || j == i) {
                    throw contract_error("FixedPointProblem: bad in-neighbor entry");
                }
            }
        }
        if (contraction_factor && !(*contraction_factor < 1.0)) {
            throw contract_error("FixedPointProblem: contraction factor must be < 1");
        }
        if (exact_solution) {
            if (exact_solution->size() != dimension) {
                throw contract_error("FixedPointProblem: exact_solution dimension mismatch");
            }
            // Fixed-point property: f_i(x*) must reproduce block i of x*.
            double scale = 0.0;
            for (double v : *exact_solution) {
                scale = std::max(scale, std::abs(v));
            }
            for (std::size_t i = 0; i < block_count(); ++i) {
                Vector bi = apply_block(i, *exact_solution);
                for (std::size_t k = 0; k < bi.size(); ++k) {
                    double want = (*exact_solution)[blocks.begin(i) + k];
                    if (std::abs(bi[k] - want) > 1e-12 * (1.0 + scale)) {
                        throw contract_error("FixedPointProblem: exact_solution is not a fixed point");
                    }
                }
            }
        }
    }
};

enum class NormKind { lq, max };

// How local residuals are computed and folded into the global residual.
//
// Convention for lq: local_fn returns the q-th power of the block residual and
// the root is taken once at reduction. The max spec exchanges raw values.
struct ResidualSpec {
    NormKind kind = NormKind::max;
    double q = 2.0;
    std::function<double(std::size_t, const GlobalView&)> local_fn;

    double reduce(std::span<const double> locals) const {
        if (locals.empty()) {
            throw contract_error("reduce: no local residuals");
        }
        for (double v : locals) {
            if (!(v >= 0.0)) {
                throw contract_error("reduce: negative local residual");
            }
        }
        if (kind == NormKind::max) {
            return *std::max_element(locals.begin(), locals.end());
        }
        double sum = 0.0;
        for (double v : locals) {
            sum += v;
        }
        return std::pow(sum, 1.0 / q);
    }

    // Fold of two partial values, as used by tree reductions.
    double combine(double a, double b) const { return kind == NormKind::max ? std::max(a, b) : a + b; }

    // Final step applied once to the fully combined value.
    double finish(double partial) const { return kind == NormKind::max ? partial : std::pow(partial, 1.0 / q); }
};

// Residual spec derived from the mapping itself: the block residual of x - f(x).
inline ResidualSpec make_map_residual(const FixedPointProblem& problem, NormKind kind, double q = 2.0) {
    if (kind == NormKind::lq && !(q >= 1.0)) {
        throw config_error("make_map_residual: need q >= 1");
    }
    ResidualSpec spec;
    spec.kind = kind;
    spec.q = q;
    spec.local_fn = [problem, kind, q](std::size_t i, const GlobalView& view) {
        Vector fi = problem.apply_block(i, view.values);
        const std::size_t off = problem.blocks.begin(i);
        double acc = 0.0;
        for (std::size_t k = 0; k < fi.size(); ++k) {
            const double d = std::abs(view.values[off + k] - fi[k]);
            if (kind == NormKind::max) {
                acc = std::max(acc, d);
            } else {
                acc += std::pow(d, q);
            }
        }
        return acc;
    };
    return spec;
}

inline double evaluate_local_residual(const FixedPointProblem& problem, const ResidualSpec& spec,
                                      std::size_t block, const GlobalView& view) {
    if (view.values.size() != problem.dimension) {
        throw contract_error("evaluate_local_residual: view dimension mismatch");
    }
    if (block >= problem.block_count()) {
        throw contract_error("evaluate_local_residual: block index out of range");
    }
    if (!spec.local_fn) {
        throw contract_error("evaluate_local_residual: residual spec has no local_fn");
    }
    return spec.local_fn(block, view);
}

inline double reduce_residual(const ResidualSpec& spec, std::span<const double> locals) {
    return spec.reduce(locals);
}

// Ground-truth residual of a fully assembled candidate vector. Simulator-side
// privilege: protocols never get a total view to call this on.
inline double true_global_residual(const FixedPointProblem& problem, const ResidualSpec& spec,
                                   const GlobalView& view) {
    Vector locals(problem.block_count());
    for (std::size_t i = 0; i < problem.block_count(); ++i) {
        locals[i] = evaluate_local_residual(problem, spec, i, view);
    }
    return spec.reduce(locals);
}

} // namespace asyncdet

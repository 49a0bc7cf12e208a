#pragma once

#include "fixedpoint.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <ostream>
#include <random>
#include <set>
#include <utility>

namespace asyncdet {

struct Triplet {
    std::size_t row = 0;
    std::size_t col = 0;
    double value = 0.0;
};

// Compressed sparse row matrix; column indices are sorted within each row.
class SparseMatrix {
public:
    SparseMatrix() = default;

    static SparseMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> entries) {
        std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
            return a.row != b.row ? a.row < b.row : a.col < b.col;
        });
        SparseMatrix m;
        m.rows_ = rows;
        m.cols_ = cols;
        m.row_ptr_.assign(rows + 1, 0);
        for (const Triplet& t : entries) {
            if (t.row >= rows || t.col >= cols) {
                throw contract_error("SparseMatrix: triplet out of range");
            }
        }
        // Merge duplicates by summation.
        std::size_t w = 0;
        for (std::size_t r = 0; r < entries.size();) {
            std::size_t s = r + 1;
            double v = entries[r].value;
            while (s < entries.size() && entries[s].row == entries[r].row && entries[s].col == entries[r].col) {
                v += entries[s].value;
                ++s;
            }
            entries[w] = Triplet{entries[r].row, entries[r].col, v};
            ++w;
            r = s;
        }
        entries.resize(w);
        for (const Triplet& t : entries) {
            ++m.row_ptr_[t.row + 1];
        }
        for (std::size_t r = 0; r < rows; ++r) {
            m.row_ptr_[r + 1] += m.row_ptr_[r];
        }
        m.col_.resize(entries.size());
        m.val_.resize(entries.size());
        for (std::size_t k = 0; k < entries.size(); ++k) {
            m.col_[k] = entries[k].col;
            m.val_[k] = entries[k].value;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t nonzeros() const { return val_.size(); }

    std::span<const std::size_t> row_cols(std::size_t r) const {
        return {col_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
    }
    std::span<const double> row_vals(std::size_t r) const {
        return {val_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
    }

    double row_apply(std::size_t r, std::span<const double> x) const {
        double acc = 0.0;
        for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
            acc += val_[k] * x[col_[k]];
        }
        return acc;
    }

    Vector apply(std::span<const double> x) const {
        if (x.size() != cols_) {
            throw contract_error("SparseMatrix::apply: dimension mismatch");
        }
        Vector y(rows_);
        for (std::size_t r = 0; r < rows_; ++r) {
            y[r] = row_apply(r, x);
        }
        return y;
    }

    // Induced max norm: largest absolute row sum.
    double infinity_norm() const {
        double best = 0.0;
        for (std::size_t r = 0; r < rows_; ++r) {
            double s = 0.0;
            for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
                s += std::abs(val_[k]);
            }
            best = std::max(best, s);
        }
        return best;
    }

    void scale(double factor) {
        for (double& v : val_) {
            v *= factor;
        }
    }

    std::vector<Triplet> triplets() const {
        std::vector<Triplet> out;
        out.reserve(val_.size());
        for (std::size_t r = 0; r < rows_; ++r) {
            for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
                out.push_back(Triplet{r, col_[k], val_[k]});
            }
        }
        return out;
    }

    // Coordinate text format: one "row col value" line per entry.
    void write_coordinate(std::ostream& os) const {
        os.precision(17);
        for (std::size_t r = 0; r < rows_; ++r) {
            for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
                os << r << ' ' << col_[k] << ' ' << val_[k] << '\n';
            }
        }
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::size_t> row_ptr_{0};
    std::vector<std::size_t> col_;
    std::vector<double> val_;
};

// Dense LU solve with partial pivoting, for the small systems that back
// generated test problems. a is row-major n x n and is consumed.
inline Vector solve_dense(std::vector<double> a, Vector b) {
    const std::size_t n = b.size();
    if (a.size() != n * n) {
        throw contract_error("solve_dense: matrix/vector size mismatch");
    }
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t pivot = k;
        for (std::size_t r = k + 1; r < n; ++r) {
            if (std::abs(a[r * n + k]) > std::abs(a[pivot * n + k])) {
                pivot = r;
            }
        }
        if (a[pivot * n + k] == 0.0) {
            throw contract_error("solve_dense: singular matrix");
        }
        if (pivot != k) {
            for (std::size_t c = 0; c < n; ++c) {
                std::swap(a[k * n + c], a[pivot * n + c]);
            }
            std::swap(b[k], b[pivot]);
        }
        for (std::size_t r = k + 1; r < n; ++r) {
            const double f = a[r * n + k] / a[k * n + k];
            if (f == 0.0) {
                continue;
            }
            for (std::size_t c = k; c < n; ++c) {
                a[r * n + c] -= f * a[k * n + c];
            }
            b[r] -= f * b[k];
        }
    }
    Vector x(n);
    for (std::size_t ri = n; ri-- > 0;) {
        double acc = b[ri];
        for (std::size_t c = ri + 1; c < n; ++c) {
            acc -= a[ri * n + c] * x[c];
        }
        x[ri] = acc / a[ri * n + ri];
    }
    return x;
}

// Affine fixed-point mapping f(x) = Mx + c with a known contraction factor and
// a directly solved exact solution.
struct LinearFixedPoint {
    std::shared_ptr<const SparseMatrix> m;
    Vector c;
    BlockMap blocks;
    double alpha = 0.0; // ||M||_inf at construction
    Vector exact;       // (I - M)^{-1} c

    FixedPointProblem problem() const {
        FixedPointProblem prob;
        prob.dimension = c.size();
        prob.blocks = blocks;
        auto mat = m;
        auto rhs = std::make_shared<const Vector>(c);
        auto map = blocks;
        prob.apply_block = [mat, rhs, map](std::size_t i, std::span<const double> x) {
            Vector out(map.size(i));
            for (std::size_t k = 0; k < out.size(); ++k) {
                const std::size_t row = map.begin(i) + k;
                out[k] = mat->row_apply(row, x) + (*rhs)[row];
            }
            return out;
        };
        const std::size_t p = blocks.count();
        prob.in_neighbors.assign(p, {});
        for (std::size_t i = 0; i < p; ++i) {
            std::set<std::size_t> nbr;
            for (std::size_t row = blocks.begin(i); row < blocks.end(i); ++row) {
                for (std::size_t col : mat->row_cols(row)) {
                    const std::size_t j = blocks.block_of(col);
                    if (j != i) {
                        nbr.insert(j);
                    }
                }
            }
            prob.in_neighbors[i].assign(nbr.begin(), nbr.end());
        }
        prob.exact_solution = exact;
        prob.contraction_factor = alpha;
        prob.validate();
        return prob;
    }
};

// Random sparse contraction with ||M||_inf scaled to alpha_target. Every pair
// of blocks is coupled so the communication graph is complete.
inline LinearFixedPoint build_linear(std::size_t n, std::size_t p, double alpha_target, std::uint64_t seed) {
    if (p < 1 || n < p) {
        throw config_error("build_linear: need n >= p >= 1");
    }
    if (!(alpha_target >= 0.0 && alpha_target < 1.0)) {
        throw config_error("build_linear: alpha_target must lie in [0, 1)");
    }

    LinearFixedPoint lin;
    lin.blocks = BlockMap::even_blocks(n, p);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    // Each row couples to every other block through one entry and to its own
    // block through a few heavier entries, the usual domain-decomposition
    // profile: strong interior coupling, weak interfaces.
    std::vector<Triplet> entries;
    if (alpha_target > 0.0) {
        for (std::size_t row = 0; row < n; ++row) {
            const std::size_t home = lin.blocks.block_of(row);
            std::set<std::size_t> cols;
            for (std::size_t b = 0; b < p; ++b) {
                std::uniform_int_distribution<std::size_t> pick(lin.blocks.begin(b), lin.blocks.end(b) - 1);
                const std::size_t draws = b == home ? std::min<std::size_t>(3, lin.blocks.size(b)) : 1;
                for (std::size_t d = 0; d < draws; ++d) {
                    cols.insert(pick(rng));
                }
            }
            cols.erase(row);
            for (std::size_t col : cols) {
                const double weight = lin.blocks.block_of(col) == home ? 3.0 : 1.0;
                entries.push_back(Triplet{row, col, weight * unit(rng)});
            }
        }
    }
    SparseMatrix m = SparseMatrix::from_triplets(n, n, std::move(entries));
    const double raw = m.infinity_norm();
    if (alpha_target > 0.0 && raw > 0.0) {
        m.scale(alpha_target / raw);
    }
    lin.alpha = m.infinity_norm();

    lin.c.resize(n);
    for (double& v : lin.c) {
        v = unit(rng);
    }

    // exact = (I - M)^{-1} c by dense elimination; I - M is nonsingular for alpha < 1.
    std::vector<double> dense(n * n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        dense[r * n + r] = 1.0;
        auto cols = m.row_cols(r);
        auto vals = m.row_vals(r);
        for (std::size_t k = 0; k < cols.size(); ++k) {
            dense[r * n + cols[k]] -= vals[k];
        }
    }
    lin.exact = solve_dense(std::move(dense), lin.c);
    lin.m = std::make_shared<const SparseMatrix>(std::move(m));
    return lin;
}

// Dense affine map f(x) = Mx + c given explicitly, split into p even blocks.
// The exact solution and contraction factor are attached when ||M||_inf < 1.
inline FixedPointProblem make_affine_problem(const std::vector<std::vector<double>>& m, Vector c,
                                             std::size_t p) {
    const std::size_t n = c.size();
    if (m.size() != n) {
        throw config_error("make_affine_problem: matrix/vector size mismatch");
    }
    std::vector<Triplet> entries;
    for (std::size_t r = 0; r < n; ++r) {
        if (m[r].size() != n) {
            throw config_error("make_affine_problem: matrix is not square");
        }
        for (std::size_t col = 0; col < n; ++col) {
            if (m[r][col] != 0.0) {
                entries.push_back(Triplet{r, col, m[r][col]});
            }
        }
    }
    LinearFixedPoint lin;
    lin.blocks = BlockMap::even_blocks(n, p);
    lin.c = std::move(c);
    SparseMatrix sparse = SparseMatrix::from_triplets(n, n, std::move(entries));
    lin.alpha = sparse.infinity_norm();
    lin.m = std::make_shared<const SparseMatrix>(std::move(sparse));
    if (lin.alpha < 1.0) {
        std::vector<double> dense(n * n, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            dense[r * n + r] = 1.0;
            for (std::size_t col = 0; col < n; ++col) {
                dense[r * n + col] -= m[r][col];
            }
        }
        lin.exact = solve_dense(std::move(dense), lin.c);
        return lin.problem();
    }
    // No contraction certificate; assemble without the fixed-point extras.
    FixedPointProblem prob;
    prob.dimension = n;
    prob.blocks = lin.blocks;
    auto mat = lin.m;
    auto rhs = std::make_shared<const Vector>(lin.c);
    auto map = lin.blocks;
    prob.apply_block = [mat, rhs, map](std::size_t i, std::span<const double> x) {
        Vector out(map.size(i));
        for (std::size_t k = 0; k < out.size(); ++k) {
            const std::size_t row = map.begin(i) + k;
            out[k] = mat->row_apply(row, x) + (*rhs)[row];
        }
        return out;
    };
    const std::size_t blocks = lin.blocks.count();
    prob.in_neighbors.assign(blocks, {});
    for (std::size_t i = 0; i < blocks; ++i) {
        std::set<std::size_t> nbr;
        for (std::size_t row = lin.blocks.begin(i); row < lin.blocks.end(i); ++row) {
            for (std::size_t col : mat->row_cols(row)) {
                const std::size_t j = lin.blocks.block_of(col);
                if (j != i) {
                    nbr.insert(j);
                }
            }
        }
        prob.in_neighbors[i].assign(nbr.begin(), nbr.end());
    }
    prob.validate();
    return prob;
}

// Convection-diffusion benchmark: backward Euler + centered differences on the
// unit cube with homogeneous Dirichlet boundary, one linear system per time
// step, partitioned into an (qx, qy) grid of subdomains spanning the full z
// extent. Unknowns are numbered subdomain-major so blocks are contiguous.
struct ConvDiffConfig {
    std::size_t nx = 24; // grid points per axis; n = nx^3
    std::size_t p = 8;   // subdomain count; qx * qy = p
    std::size_t qx = 0;  // 0 -> derived from p
    std::size_t qy = 0;
    double nu = 1.0;
    std::array<double, 3> velocity{1.0, 1.0, 1.0};
    double source = 1.0;
    double dt = 0.1;
};

class ConvDiffProblem {
public:
    explicit ConvDiffProblem(const ConvDiffConfig& cfg) : grid_(std::make_shared<Grid>(cfg)) {
        state_.u_prev.assign(grid_->n, 0.0);
        rebuild_rhs();
    }

    std::size_t dimension() const { return grid_->n; }
    std::size_t block_count() const { return grid_->blocks.count(); }
    const ConvDiffConfig& config() const { return grid_->cfg; }
    const SparseMatrix& matrix() const { return grid_->a; }
    const Vector& rhs() const { return state_.b; }
    const BlockMap& blocks() const { return grid_->blocks; }
    const std::vector<std::vector<std::size_t>>& in_neighbors() const { return grid_->in_neighbors; }

    // One hybrid sweep over block i: interface unknowns relax Jacobi-style from
    // the supplied view, interior unknowns relax Gauss-Seidel in lexicographic
    // order against already-updated in-block values. This is f_i.
    Vector hybrid_relaxation_block(std::size_t block, std::span<const double> view) const {
        if (view.size() != grid_->n) {
            throw contract_error("hybrid_relaxation_block: view dimension mismatch");
        }
        if (block >= block_count()) {
            throw contract_error("hybrid_relaxation_block: block out of range");
        }
        const std::size_t off = grid_->blocks.begin(block);
        const std::size_t len = grid_->blocks.size(block);
        Vector out(view.begin() + static_cast<std::ptrdiff_t>(off),
                   view.begin() + static_cast<std::ptrdiff_t>(off + len));
        const SparseMatrix& a = grid_->a;
        for (std::size_t g : grid_->interface_nodes[block]) {
            double acc = state_.b[g];
            double diag = 0.0;
            auto cols = a.row_cols(g);
            auto vals = a.row_vals(g);
            for (std::size_t k = 0; k < cols.size(); ++k) {
                if (cols[k] == g) {
                    diag = vals[k];
                } else {
                    acc -= vals[k] * view[cols[k]];
                }
            }
            out[g - off] = acc / diag;
        }
        for (std::size_t g : grid_->interior_nodes[block]) {
            double acc = state_.b[g];
            double diag = 0.0;
            auto cols = a.row_cols(g);
            auto vals = a.row_vals(g);
            for (std::size_t k = 0; k < cols.size(); ++k) {
                const std::size_t h = cols[k];
                if (h == g) {
                    diag = vals[k];
                } else {
                    // Interior rows only touch in-block columns.
                    acc -= vals[k] * out[h - off];
                }
            }
            out[g - off] = acc / diag;
        }
        return out;
    }

    FixedPointProblem problem() const {
        FixedPointProblem prob;
        prob.dimension = grid_->n;
        prob.blocks = grid_->blocks;
        prob.in_neighbors = grid_->in_neighbors;
        ConvDiffProblem self = *this;
        prob.apply_block = [self](std::size_t i, std::span<const double> view) {
            return self.hybrid_relaxation_block(i, view);
        };
        prob.validate();
        return prob;
    }

    // Block rows of |Ax - b| in the max norm; the protocols' residual for this
    // benchmark, on the same scale as the reported r*.
    ResidualSpec algebraic_residual_spec() const {
        ResidualSpec spec;
        spec.kind = NormKind::max;
        ConvDiffProblem self = *this;
        spec.local_fn = [self](std::size_t i, const GlobalView& view) {
            const SparseMatrix& a = self.grid_->a;
            double worst = 0.0;
            for (std::size_t g = self.grid_->blocks.begin(i); g < self.grid_->blocks.end(i); ++g) {
                worst = std::max(worst, std::abs(a.row_apply(g, view.values) - self.state_.b[g]));
            }
            return worst;
        };
        return spec;
    }

    // r* = ||A x - b||_inf of a delivered solution.
    double final_report_residual(std::span<const double> x) const {
        if (x.size() != grid_->n) {
            throw contract_error("final_report_residual: dimension mismatch");
        }
        double worst = 0.0;
        for (std::size_t r = 0; r < grid_->n; ++r) {
            worst = std::max(worst, std::abs(grid_->a.row_apply(r, x) - state_.b[r]));
        }
        return worst;
    }

    // Advance to the next time step: the delivered solution becomes u_prev.
    // Problems are immutable; this returns a new instance sharing the grid.
    ConvDiffProblem next_timestep(std::span<const double> u) const {
        if (u.size() != grid_->n) {
            throw contract_error("next_timestep: dimension mismatch");
        }
        ConvDiffProblem next = *this;
        next.state_.u_prev.assign(u.begin(), u.end());
        next.rebuild_rhs();
        return next;
    }

    void write_coordinate(std::ostream& os) const { grid_->a.write_coordinate(os); }

private:
    struct Grid {
        ConvDiffConfig cfg;
        std::size_t n = 0;
        std::size_t qx = 0, qy = 0;
        double h = 0.0;
        BlockMap blocks;
        SparseMatrix a;
        std::vector<std::vector<std::size_t>> in_neighbors;
        std::vector<std::vector<std::size_t>> interface_nodes; // global ids, lexicographic
        std::vector<std::vector<std::size_t>> interior_nodes;

        explicit Grid(const ConvDiffConfig& c) : cfg(c) {
            const std::size_t nx = cfg.nx;
            if (nx == 0) {
                throw config_error("ConvDiffProblem: nx must be positive");
            }
            n = nx * nx * nx;
            derive_partition();
            h = 1.0 / static_cast<double>(nx + 1);
            for (int d = 0; d < 3; ++d) {
                if (std::abs(cfg.velocity[static_cast<std::size_t>(d)]) * h > 2.0 * cfg.nu) {
                    throw config_error("ConvDiffProblem: centered convection needs |a|*h <= 2*nu on axis " +
                                       std::to_string(d));
                }
            }
            if (!(cfg.dt > 0.0) || !(cfg.nu > 0.0)) {
                throw config_error("ConvDiffProblem: dt and nu must be positive");
            }
            build_numbering();
            assemble();
            classify_nodes();
        }

        void derive_partition() {
            qx = cfg.qx;
            qy = cfg.qy;
            if (qx == 0 || qy == 0) {
                // Smallest divisor of p at or above sqrt(p); favors near-square grids.
                qx = cfg.p;
                for (std::size_t d = 1; d <= cfg.p; ++d) {
                    if (cfg.p % d == 0 && d * d >= cfg.p) {
                        qx = d;
                        break;
                    }
                }
                qy = cfg.p / qx;
            }
            if (qx * qy != cfg.p) {
                throw config_error("ConvDiffProblem: qx*qy must equal p");
            }
            if (qx > cfg.nx || qy > cfg.nx) {
                throw config_error("ConvDiffProblem: more subdomains than grid columns");
            }
        }

        static std::size_t chunk_begin(std::size_t extent, std::size_t parts, std::size_t idx) {
            return (extent * idx) / parts;
        }

        // global id of a grid node, subdomain-major with local (z, y, x) ordering, x fastest
        std::vector<std::size_t> node_id;
        std::vector<std::array<std::size_t, 3>> node_coord;

        std::size_t raw_index(std::size_t ix, std::size_t iy, std::size_t iz) const {
            return (iz * cfg.nx + iy) * cfg.nx + ix;
        }

        void build_numbering() {
            const std::size_t nx = cfg.nx;
            node_id.assign(n, 0);
            node_coord.assign(n, {});
            std::vector<std::size_t> offsets(cfg.p + 1, 0);
            std::size_t next = 0;
            for (std::size_t b = 0; b < cfg.p; ++b) {
                offsets[b] = next;
                const std::size_t sx = b % qx;
                const std::size_t sy = b / qx;
                const std::size_t x0 = chunk_begin(nx, qx, sx), x1 = chunk_begin(nx, qx, sx + 1);
                const std::size_t y0 = chunk_begin(nx, qy, sy), y1 = chunk_begin(nx, qy, sy + 1);
                if (x0 == x1 || y0 == y1) {
                    throw config_error("ConvDiffProblem: empty subdomain");
                }
                for (std::size_t iz = 0; iz < nx; ++iz) {
                    for (std::size_t iy = y0; iy < y1; ++iy) {
                        for (std::size_t ix = x0; ix < x1; ++ix) {
                            node_id[raw_index(ix, iy, iz)] = next;
                            node_coord[next] = {ix, iy, iz};
                            ++next;
                        }
                    }
                }
            }
            offsets[cfg.p] = next;
            blocks.offsets = std::move(offsets);
            blocks.validate(n);
        }

        void assemble() {
            const std::size_t nx = cfg.nx;
            const double inv_h2 = 1.0 / (h * h);
            const double diag = 1.0 / cfg.dt + 6.0 * cfg.nu * inv_h2;
            std::vector<Triplet> entries;
            entries.reserve(n * 7);
            for (std::size_t g = 0; g < n; ++g) {
                const auto [ix, iy, iz] = node_coord[g];
                entries.push_back(Triplet{g, g, diag});
                const std::array<std::array<long, 3>, 6> shifts{{
                    {-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1},
                }};
                for (const auto& s : shifts) {
                    const long jx = static_cast<long>(ix) + s[0];
                    const long jy = static_cast<long>(iy) + s[1];
                    const long jz = static_cast<long>(iz) + s[2];
                    if (jx < 0 || jy < 0 || jz < 0 || jx >= static_cast<long>(nx) || jy >= static_cast<long>(nx) ||
                        jz >= static_cast<long>(nx)) {
                        continue; // homogeneous Dirichlet
                    }
                    const int axis = s[0] != 0 ? 0 : (s[1] != 0 ? 1 : 2);
                    const int sign = (s[0] + s[1] + s[2]) > 0 ? 1 : -1;
                    const double conv = cfg.velocity[static_cast<std::size_t>(axis)] / (2.0 * h);
                    const double coeff = -cfg.nu * inv_h2 + (sign > 0 ? conv : -conv);
                    const std::size_t gj = node_id[raw_index(static_cast<std::size_t>(jx), static_cast<std::size_t>(jy),
                                                             static_cast<std::size_t>(jz))];
                    entries.push_back(Triplet{g, gj, coeff});
                }
            }
            a = SparseMatrix::from_triplets(n, n, std::move(entries));
            // Strict diagonal dominance guarantees convergence of both relaxations.
            for (std::size_t r = 0; r < n; ++r) {
                double d = 0.0, off = 0.0;
                auto cols = a.row_cols(r);
                auto vals = a.row_vals(r);
                for (std::size_t k = 0; k < cols.size(); ++k) {
                    if (cols[k] == r) {
                        d = std::abs(vals[k]);
                    } else {
                        off += std::abs(vals[k]);
                    }
                }
                if (!(off < d)) {
                    throw config_error("ConvDiffProblem: row " + std::to_string(r) +
                                       " is not strictly diagonally dominant");
                }
            }
        }

        void classify_nodes() {
            interface_nodes.assign(cfg.p, {});
            interior_nodes.assign(cfg.p, {});
            in_neighbors.assign(cfg.p, {});
            std::vector<std::set<std::size_t>> nbr(cfg.p);
            for (std::size_t b = 0; b < cfg.p; ++b) {
                for (std::size_t g = blocks.begin(b); g < blocks.end(b); ++g) {
                    bool interface = false;
                    for (std::size_t col : a.row_cols(g)) {
                        const std::size_t owner = blocks.block_of(col);
                        if (owner != b) {
                            interface = true;
                            nbr[b].insert(owner);
                        }
                    }
                    (interface ? interface_nodes[b] : interior_nodes[b]).push_back(g);
                }
            }
            for (std::size_t b = 0; b < cfg.p; ++b) {
                in_neighbors[b].assign(nbr[b].begin(), nbr[b].end());
            }
        }
    };

    struct State {
        Vector u_prev;
        Vector b;
    };

    void rebuild_rhs() {
        state_.b.resize(grid_->n);
        for (std::size_t g = 0; g < grid_->n; ++g) {
            state_.b[g] = state_.u_prev[g] / grid_->cfg.dt + grid_->cfg.source;
        }
    }

    std::shared_ptr<const Grid> grid_;
    State state_;
};

inline ConvDiffProblem discretize_convdiff(const ConvDiffConfig& cfg) { return ConvDiffProblem(cfg); }

} // namespace asyncdet

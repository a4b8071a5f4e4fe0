#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "core.hpp"
#include "operator.hpp"
#include "stats.hpp"

namespace fraclab {

struct SpectralBasis {
    int count = 0;
    Eigen::VectorXd eigenvalues;   // ascending
    Eigen::MatrixXd eigenvectors;  // n × count, B-orthonormal columns
    // Ratio of the discrete torsion solution to the exact torsion function
    // ((x-a)(b-x))^s / Γ(1+2s) at each node. It captures the boundary-layer
    // bias of P1 elements against the ρ^s singularity and is divided out
    // before traces are extrapolated.
    Eigen::VectorXd boundary_profile;
    double s = 0, a = 0, b = 0, h = 0;
    int n = 0;
};

struct EigenResidual {
    double max_relative = 0;  // max_j ‖Aφ_j − λ_j Bφ_j‖ / (λ_j ‖φ_j‖)
    double orthonormality = 0;
    double rayleigh = 0;  // max_j |φ_jᵀAφ_j − λ_j| / λ_j
};

inline EigenResidual check_basis(const OperatorPair& op, const SpectralBasis& basis) {
    EigenResidual r;
    const auto& V = basis.eigenvectors;
    for (int j = 0; j < basis.count; ++j) {
        const double lam = basis.eigenvalues(j);
        const Eigen::VectorXd v = V.col(j);
        const double res = (op.stiffness * v - lam * (op.mass * v)).norm() / (lam * v.norm());
        r.max_relative = std::max(r.max_relative, res);
        r.rayleigh = std::max(r.rayleigh, std::abs(v.dot(op.stiffness * v) - lam) / lam);
    }
    const Eigen::MatrixXd G = V.transpose() * op.mass * V;
    r.orthonormality = (G - Eigen::MatrixXd::Identity(basis.count, basis.count)).cwiseAbs().maxCoeff();
    return r;
}

inline SpectralBasis solve_eigens(const OperatorPair& op, int M) {
    if (M < 1 || M > op.n) throw domain_error("solve_eigens: need 1 <= M <= n");
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(op.stiffness, op.mass, Eigen::ComputeEigenvectors);
    if (es.info() != Eigen::Success)
        throw convergence_error("solve_eigens: generalized eigensolver failed (Eigen info " +
                                std::to_string(static_cast<int>(es.info())) + ", n=" + std::to_string(op.n) + ")");
    SpectralBasis basis;
    basis.count = M;
    basis.n = op.n;
    basis.s = op.s;
    basis.a = op.a;
    basis.b = op.b;
    basis.h = op.h;
    basis.eigenvalues = es.eigenvalues().head(M);
    basis.eigenvectors = es.eigenvectors().leftCols(M);
    for (int j = 0; j < M; ++j) {
        auto v = basis.eigenvectors.col(j);
        v /= std::sqrt(v.dot(op.mass * v));
        // Sign convention: the first node of each eigenvector is nonnegative.
        if (v(0) < 0) v = -v;
    }
    if (!(basis.eigenvalues(0) > 0.0)) throw convergence_error("solve_eigens: nonpositive eigenvalue, pencil not definite");

    const Eigen::VectorXd w = op.stiffness.llt().solve(op.mass * Eigen::VectorXd::Ones(op.n));
    basis.boundary_profile.resize(op.n);
    const double g = std::tgamma(1.0 + 2.0 * op.s);
    for (int i = 0; i < op.n; ++i) {
        const double x = op.a + (i + 1) * op.h;
        basis.boundary_profile(i) = w(i) * g / std::pow((x - op.a) * (op.b - x), op.s);
    }

    const auto res = check_basis(op, basis);
    if (!(res.max_relative <= 1e-9))
        throw convergence_error("solve_eigens: eigen residual " + std::to_string(res.max_relative) + " exceeds 1e-9");
    return basis;
}

struct TraceEntry {
    double value = 0;     // t_j(x) ≈ (φ_j/ρ^s)(x)
    double residual = 0;  // relative least-squares residual of the fit
};

struct TraceSet {
    std::vector<BoundaryPoint> points;            // boundary points in domain order
    std::vector<std::vector<TraceEntry>> entries;  // [point][mode]
    int K = 4;

    int modes() const { return entries.empty() ? 0 : static_cast<int>(entries.front().size()); }
    double weight(int p) const { return points[p].weight(); }
    Eigen::VectorXd values(int p) const {
        Eigen::VectorXd v(modes());
        for (int j = 0; j < modes(); ++j) v(j) = entries[p][j].value;
        return v;
    }
    int index_of(double x) const {
        for (size_t p = 0; p < points.size(); ++p)
            if (points[p].x == x) return static_cast<int>(p);
        return -1;
    }
};

struct TraceOptions {
    int K = 4;
    bool calibrate = true;
    double max_condition = 1e8;
};

// Fits φ(x_i)/profile_i ≈ t·ρ_i^s (1 + c·ρ_i) over the K nodes nearest each
// boundary point.
inline TraceSet boundary_traces(const SpectralBasis& basis, const Mesh& mesh, const IntervalDomain& dom,
                                const TraceOptions& opt = {}) {
    const int K = opt.K;
    if (K < 3 || K > mesh.n()) throw domain_error("boundary_traces: need 3 <= K <= n fit nodes");
    TraceSet out;
    out.K = K;
    out.points = dom.boundary();
    const double s = basis.s;
    for (const auto& bp : out.points) {
        std::vector<int> idx(K);
        for (int i = 0; i < K; ++i) idx[i] = bp.normal < 0 ? i : mesh.n() - 1 - i;
        Eigen::MatrixXd X(K, 2);
        for (int i = 0; i < K; ++i) {
            const double rho = std::abs(mesh.node(idx[i]) - bp.x);
            X(i, 0) = std::pow(rho, s);
            X(i, 1) = std::pow(rho, s + 1.0);
        }
        // Column scaling keeps the reported condition number meaningful.
        const Eigen::Vector2d colscale(X.col(0).norm(), X.col(1).norm());
        const Eigen::MatrixXd Xs = X * colscale.cwiseInverse().asDiagonal();
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(Xs, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto sv = svd.singularValues();
        const double cond = sv(0) / sv(sv.size() - 1);
        if (!(cond <= opt.max_condition))
            throw convergence_error("boundary_traces: trace fit condition " + std::to_string(cond) +
                                    " too large, refine the mesh or change K");
        std::vector<TraceEntry> row(basis.count);
        for (int j = 0; j < basis.count; ++j) {
            Eigen::VectorXd y(K);
            for (int i = 0; i < K; ++i) {
                const double prof = opt.calibrate ? basis.boundary_profile(idx[i]) : 1.0;
                y(i) = basis.eigenvectors(idx[i], j) / prof;
            }
            const Eigen::Vector2d c = svd.solve(y);
            const Eigen::VectorXd r = Xs * c - y;
            row[j].value = c(0) / colscale(0);
            row[j].residual = y.norm() > 0 ? r.norm() / y.norm() : 0.0;
        }
        out.entries.push_back(std::move(row));
    }
    return out;
}

struct WeylFit {
    double slope = 0, r2 = 0;
    double expected = 0;  // 2s/N with N = 1
    int j_lo = 0, j_hi = 0;
};

// Least-squares slope of log λ_j against log j over j ∈ [j_lo, j_hi] (1-based).
inline WeylFit weyl_fit(const SpectralBasis& basis, int j_lo = 10, int j_hi = 40) {
    j_hi = std::min(j_hi, basis.count);
    if (j_hi - j_lo < 1) throw domain_error("weyl_fit: not enough eigenvalues in the fit window");
    std::vector<double> x, y;
    for (int j = j_lo; j <= j_hi; ++j) {
        x.push_back(std::log(static_cast<double>(j)));
        y.push_back(std::log(basis.eigenvalues(j - 1)));
    }
    const auto f = fit_line(x, y);
    return {f.slope, f.r2, 2.0 * basis.s, j_lo, j_hi};
}

struct GrowthCheck {
    std::string quantity;
    double fitted_slope = 0;
    double bound = 0;
    bool within = false;  // fitted ≤ bound + margin
};

struct RegularityReport {
    std::vector<GrowthCheck> checks;
    std::vector<std::string> warnings;
};

// Growth of ‖∇φ_j‖²/λ_j, ‖φ_j‖_∞ and ‖∇φ_j‖_{L¹} against λ_j, compared with the
// exponents 2(1-s), 1/(4s) and 1/(4s)+1. The nodal field includes the zero
// exterior values at both endpoints; derivatives are central differences on
// interior nodes, one-sided at the first and last interior node.
inline RegularityReport regularity_diagnostics(const SpectralBasis& basis, const Mesh& mesh, double margin = 0.15) {
    if (basis.count < 20) throw domain_error("regularity_diagnostics: needs at least 20 modes");
    const int n = mesh.n();
    const double h = mesh.h();
    const double s = basis.s;
    std::vector<double> loglam, grad2, supn, grad1;
    for (int j = 0; j < basis.count; ++j) {
        const auto v = basis.eigenvectors.col(j);
        double g2 = 0, g1 = 0;
        for (int i = 0; i < n; ++i) {
            double d;
            if (i == 0)
                d = (v(1) - v(0)) / h;
            else if (i == n - 1)
                d = (v(n - 1) - v(n - 2)) / h;
            else
                d = (v(i + 1) - v(i - 1)) / (2 * h);
            g2 += d * d * h;
            g1 += std::abs(d) * h;
        }
        const double lam = basis.eigenvalues(j);
        loglam.push_back(std::log(lam));
        grad2.push_back(std::log(g2 / lam));
        supn.push_back(std::log(v.cwiseAbs().maxCoeff()));
        grad1.push_back(std::log(g1));
    }
    RegularityReport rep;
    auto add = [&](const char* name, const std::vector<double>& y, double bound) {
        const auto f = fit_line(loglam, y);
        GrowthCheck c{name, f.slope, bound, f.slope <= bound + margin};
        if (!c.within)
            rep.warnings.push_back(std::string(name) + " growth exponent " + std::to_string(f.slope) +
                                   " exceeds bound " + std::to_string(bound));
        rep.checks.push_back(c);
    };
    add("gradient_l2_sq_over_lambda", grad2, 2.0 * (1.0 - s));
    add("sup_norm", supn, 1.0 / (4.0 * s));
    add("gradient_l1", grad1, 1.0 / (4.0 * s) + 1.0);
    return rep;
}

// Everything downstream modules need from a discretized problem.
struct Discretization {
    IntervalDomain domain;
    Mesh mesh;
    OperatorPair op;
    SpectralBasis basis;
    TraceSet traces;
};

inline Discretization discretize(const IntervalDomain& dom, double s, int n, int M, const TraceOptions& topt = {}) {
    Mesh mesh(dom, n);
    auto op = assemble_operator(dom, mesh, FracOrder(s));
    auto basis = solve_eigens(op, M);
    auto tr = boundary_traces(basis, mesh, dom, topt);
    return {dom, mesh, std::move(op), std::move(basis), std::move(tr)};
}

} // namespace fraclab

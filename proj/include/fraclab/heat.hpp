#pragma once

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "control_signal.hpp"
#include "core.hpp"
#include "extended.hpp"
#include "special.hpp"
#include "spectral.hpp"
#include "stats.hpp"

namespace fraclab {

// u(t) = Σ_j u_j(t) φ_j, coefficients in extended precision.
struct ModalHeatState {
    ext_vector u;
    double time = 0;
    int M() const { return static_cast<int>(u.size()); }
    double norm() const { return to_double(sqrt(u.squaredNorm())); }
};

inline ModalHeatState make_heat_state(const Eigen::VectorXd& u, double time = 0) { return {to_ext(u), time}; }

inline ModalHeatState evolve_heat(const ModalHeatState& st, const Eigen::VectorXd& lambda, double dt) {
    if (dt < 0) throw domain_error("evolve_heat: negative time step");
    ModalHeatState out = st;
    out.time = st.time + dt;
    for (int j = 0; j < st.M(); ++j) out.u(j) = st.u(j) * exp(-ext_real(lambda(j)) * ext_real(dt));
    return out;
}

struct HeatGramian {
    ext_matrix G;
    double T = 0;
    bool weighted = false;
    bool with_constant = false;
    Eigen::MatrixXd as_double() const {
        Eigen::MatrixXd D(G.rows(), G.cols());
        for (Eigen::Index i = 0; i < G.rows(); ++i)
            for (Eigen::Index j = 0; j < G.cols(); ++j) D(i, j) = to_double(G(i, j));
        return D;
    }
};

// G_ij = c Σ_{x∈∂Ω⁺} w(x) t_i(x) t_j(x) (1 - e^{-(λ_i+λ_j)T}) / (λ_i+λ_j) over
// the given mode indices, with c = Γ(s)Γ(1+s) when with_constant is set.
inline HeatGramian heat_obs_gramian(const Eigen::VectorXd& lambda, const TraceSet& tr, const std::vector<int>& modes,
                                    double T, bool weighted, bool with_constant, double s) {
    if (!(T >= 0)) throw domain_error("heat_obs_gramian: negative horizon");
    const int J = static_cast<int>(modes.size());
    HeatGramian g;
    g.T = T;
    g.weighted = weighted;
    g.with_constant = with_constant;
    g.G = ext_matrix::Zero(J, J);
    const ext_real c = with_constant ? ext_real(duality_constant(s)) : ext_real(1);
    const ext_real Te(T);
    for (size_t p = 0; p < tr.points.size(); ++p) {
        if (!tr.points[p].plus()) continue;
        const ext_real w = weighted ? ext_real(tr.points[p].weight()) : ext_real(1);
        for (int i = 0; i < J; ++i)
            for (int j = 0; j <= i; ++j) {
                const ext_real S = ext_real(lambda(modes[i])) + ext_real(lambda(modes[j]));
                const ext_real v = w * ext_real(tr.entries[p][modes[i]].value) * ext_real(tr.entries[p][modes[j]].value) *
                                   Te * one_minus_exp_over(S * Te);
                g.G(i, j) += c * v;
                if (i != j) g.G(j, i) += c * v;
            }
    }
    return g;
}

inline std::vector<int> first_modes(int J) {
    std::vector<int> m(J);
    for (int j = 0; j < J; ++j) m[j] = j;
    return m;
}

inline HeatGramian heat_obs_gramian(const Eigen::VectorXd& lambda, const TraceSet& tr, int J, double T, bool weighted,
                                    bool with_constant, double s) {
    if (J < 1 || J > lambda.size() || J > tr.modes()) throw domain_error("heat_obs_gramian: J exceeds basis size");
    return heat_obs_gramian(lambda, tr, first_modes(J), T, weighted, with_constant, s);
}

struct HeatObsTable {
    int J = 0;
    std::vector<double> T;
    std::vector<double> log_inv_kappa;  // log(1/κ_heat(T)), kept in log form
    std::vector<bool> saturated;        // κ < 1e-300, beyond double range
    LineFit blowup;                     // log(1/κ) ≈ slope/T + intercept
};

// κ_heat(T) = λ_min(D⁻¹ G D⁻¹), D = diag(e^{-λ_j T}): the worst ratio of the
// weighted boundary observation to ‖v(T)‖² over final data in H_J.
inline ext_real kappa_heat(const Eigen::VectorXd& lambda, const TraceSet& tr, int J, double T, double s) {
    const auto g = heat_obs_gramian(lambda, tr, J, T, true, false, s);
    ext_matrix N = g.G;
    for (int i = 0; i < J; ++i)
        for (int j = 0; j < J; ++j)
            N(i, j) *= exp(ext_real(lambda(i)) * ext_real(T) + ext_real(lambda(j)) * ext_real(T));
    Eigen::SelfAdjointEigenSolver<ext_matrix> es(N, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw convergence_error("kappa_heat: eigenvalue solve failed");
    return es.eigenvalues()(0);
}

inline HeatObsTable obs_constant_heat(const Eigen::VectorXd& lambda, const TraceSet& tr, int J,
                                      const std::vector<double>& Tgrid, double s) {
    HeatObsTable tab;
    tab.J = J;
    tab.T = Tgrid;
    std::vector<double> x;
    for (double T : Tgrid) {
        const ext_real k = kappa_heat(lambda, tr, J, T, s);
        if (!(k > 0)) throw convergence_error("obs_constant_heat: nonpositive κ at T=" + std::to_string(T));
        tab.log_inv_kappa.push_back(to_double(-log(k)));
        tab.saturated.push_back(k < ext_real(1e-300));
        x.push_back(1.0 / T);
    }
    if (Tgrid.size() >= 2) tab.blowup = fit_line(x, tab.log_inv_kappa);
    return tab;
}

// Transposition propagator restricted to the first M modes:
//   u_j(t1) = e^{-λ_j(t1-t0)} u_j(t0) + 𝒜(s) Σ_{x∈∂Ω⁺} t_j(x) ∫_{t0}^{t1} f(x,t) e^{-λ_j(t1-t)} dt.
// Exponential-family controls are integrated in closed form; each control is
// treated as zero outside its own window.
inline ModalHeatState propagate_controlled(const Eigen::VectorXd& lambda, const TraceSet& tr, double s,
                                           const ModalHeatState& u0, const std::vector<ControlSignal>& controls,
                                           double t0, double t1) {
    if (t1 < t0) throw domain_error("propagate_controlled: reversed interval");
    const int M = u0.M();
    if (M > lambda.size() || M > tr.modes()) throw domain_error("propagate_controlled: M exceeds basis size");
    ModalHeatState out = evolve_heat(u0, lambda, t1 - t0);
    out.time = t1;
    const ext_real A(duality_constant(s));
    const ext_real end(t1);
    for (const auto& f : controls) {
        const double lo = std::max(t0, f.t0), hi = std::min(t1, f.t1);
        if (!(hi > lo)) continue;
        const ext_real elo(lo), ehi(hi), ec1(f.t1), len = ehi - elo;
        for (size_t q = 0; q < f.points.size(); ++q) {
            int p = tr.index_of(f.points[q].x);
            if (p < 0) throw domain_error("propagate_controlled: control acts at a point without traces");
            for (int k = 0; k < f.size(); ++k) {
                const ext_real li(f.eigenvalues(k));
                const ext_real ck = A * f.coefficients(k) * ext_real(f.traces[q](k));
                for (int j = 0; j < M; ++j) {
                    const ext_real lj(lambda(j));
                    // ∫_lo^hi e^{-λ_i(c1-t)} e^{-λ_j(t1-t)} dt
                    const ext_real I = exp(-li * (ec1 - ehi) - lj * (end - ehi)) * len * one_minus_exp_over((li + lj) * len);
                    out.u(j) += ck * ext_real(tr.entries[p][j].value) * I;
                }
            }
        }
    }
    return out;
}

inline ModalHeatState propagate_controlled(const Eigen::VectorXd& lambda, const TraceSet& tr, double s,
                                           const ModalHeatState& u0, const ControlSignal& f, double t0, double t1) {
    return propagate_controlled(lambda, tr, s, u0, std::vector<ControlSignal>{f}, t0, t1);
}

// General boundary data f(x_p, t) on ∂Ω⁺ (p indexes tr.points), integrated by
// adaptive Gauss–Kronrod per mode.
inline ModalHeatState propagate_controlled(const Eigen::VectorXd& lambda, const TraceSet& tr, double s,
                                           const ModalHeatState& u0,
                                           const std::function<double(int, double)>& f, double t0, double t1,
                                           double tol = 1e-12) {
    if (t1 < t0) throw domain_error("propagate_controlled: reversed interval");
    ModalHeatState out = evolve_heat(u0, lambda, t1 - t0);
    out.time = t1;
    const double A = duality_constant(s);
    for (size_t p = 0; p < tr.points.size(); ++p) {
        if (!tr.points[p].plus()) continue;
        for (int j = 0; j < u0.M(); ++j) {
            double err = 0;
            const double I = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
                [&](double t) { return f(static_cast<int>(p), t) * std::exp(-lambda(j) * (t1 - t)); }, t0, t1, 15, tol,
                &err);
            const double scale = std::max(std::abs(I), 1e-300);
            if (!(err <= std::max(1e3 * tol * scale, 1e-300)))
                throw convergence_error("propagate_controlled: quadrature did not converge for mode " +
                                        std::to_string(j + 1));
            out.u(j) += ext_real(A * tr.entries[p][j].value * I);
        }
    }
    return out;
}

} // namespace fraclab

#pragma once

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>
#include <cmath>
#include <optional>
#include <vector>

#include "core.hpp"
#include "spectral.hpp"
#include "special.hpp"
#include "stats.hpp"

namespace fraclab {

// p(t) = Σ_j (a_j cos ω_j t + b_j sin(ω_j t)/ω_j) φ_j with ω_j = √λ_j.
struct ModalWaveState {
    Eigen::VectorXd a, b;
    double time = 0;
    int J() const { return static_cast<int>(a.size()); }
};

struct WaveEnergy {
    double kinetic = 0, fractional = 0, total = 0;
};

inline ModalWaveState evolve_wave(const ModalWaveState& st, const Eigen::VectorXd& lambda, double t) {
    if (t < 0) throw domain_error("evolve_wave: negative time step");
    ModalWaveState out = st;
    out.time = st.time + t;
    for (int j = 0; j < st.J(); ++j) {
        const double w = std::sqrt(lambda(j));
        const double c = std::cos(w * t), sn = std::sin(w * t);
        out.a(j) = st.a(j) * c + st.b(j) * sn / w;
        out.b(j) = -st.a(j) * w * sn + st.b(j) * c;
    }
    return out;
}

inline WaveEnergy wave_energy(const ModalWaveState& st, const Eigen::VectorXd& lambda) {
    WaveEnergy e;
    for (int j = 0; j < st.J(); ++j) {
        e.kinetic += 0.5 * st.b(j) * st.b(j);
        e.fractional += 0.5 * lambda(j) * st.a(j) * st.a(j);
    }
    e.total = e.kinetic + e.fractional;
    return e;
}

namespace detail {

// ∫_0^T cos(νt) dt and ∫_0^T sin(νt) dt, with Taylor forms near ν = 0.
inline double int_cos(double nu, double T) {
    if (std::abs(nu) < 1e-8) return T - nu * nu * T * T * T / 6.0;
    return std::sin(nu * T) / nu;
}
inline double int_sin(double nu, double T) {
    if (std::abs(nu) < 1e-8) return nu * T * T / 2.0;
    const double h = std::sin(nu * T / 2.0);
    return 2.0 * h * h / nu;
}

} // namespace detail

// Modal evaluation of −∬|p_t|² + ∬|∇^s p|² + [∫ p_t p]_0^T, normalised by E(0)·T.
inline double equipartition_residual(const ModalWaveState& st, const Eigen::VectorXd& lambda, double T) {
    double kin = 0, pot = 0, bracket = 0;
    for (int j = 0; j < st.J(); ++j) {
        const double w = std::sqrt(lambda(j)), a = st.a(j), b = st.b(j);
        const double cc = 0.5 * (T + detail::int_cos(2 * w, T));  // ∫cos²
        const double ss = 0.5 * (T - detail::int_cos(2 * w, T));  // ∫sin²
        const double sc = 0.5 * detail::int_sin(2 * w, T);        // ∫sin·cos
        kin += a * a * w * w * ss + b * b * cc - 2 * a * b * w * sc;
        pot += lambda(j) * (a * a * cc + b * b / (w * w) * ss + 2 * a * b / w * sc);
        const double pT = a * std::cos(w * T) + b * std::sin(w * T) / w;
        const double vT = -a * w * std::sin(w * T) + b * std::cos(w * T);
        bracket += vT * pT - b * a;
    }
    const double E0 = wave_energy(st, lambda).total;
    if (E0 == 0.0) return 0.0;
    return std::abs(-kin + pot + bracket) / (E0 * T);
}

enum class BoundarySet { plus, all };

struct ObservabilityGramian {
    int J = 0;
    double T = 0;
    bool weighted = false;
    BoundarySet boundary = BoundarySet::plus;
    Eigen::MatrixXd matrixPos, matrixVel, matrixCross;  // (a,a), (b,b), (a,b) blocks
    Eigen::MatrixXd full() const {
        Eigen::MatrixXd Q(2 * J, 2 * J);
        Q << matrixPos, matrixCross, matrixCross.transpose(), matrixVel;
        return Q;
    }
    double quadratic(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
        return a.dot(matrixPos * a) + b.dot(matrixVel * b) + 2 * a.dot(matrixCross * b);
    }
};

// Σ_x w(x) t_i(x) t_j(x) over the selected boundary points.
inline Eigen::MatrixXd trace_products(const TraceSet& tr, int J, BoundarySet set, bool weighted) {
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(J, J);
    for (size_t p = 0; p < tr.points.size(); ++p) {
        const auto& bp = tr.points[p];
        if (set == BoundarySet::plus && !bp.plus()) continue;
        const double w = weighted ? bp.weight() : 1.0;
        const Eigen::VectorXd t = tr.values(static_cast<int>(p)).head(J);
        P += w * t * t.transpose();
    }
    return P;
}

inline ObservabilityGramian wave_obs_gramian(const Eigen::VectorXd& lambda, const TraceSet& tr, int J, double T,
                                             BoundarySet set = BoundarySet::plus, bool weighted = true) {
    if (J < 1 || J > lambda.size() || J > tr.modes()) throw domain_error("wave_obs_gramian: J exceeds basis size");
    if (T < 0) throw domain_error("wave_obs_gramian: negative horizon");
    ObservabilityGramian g;
    g.J = J;
    g.T = T;
    g.weighted = weighted;
    g.boundary = set;
    const Eigen::MatrixXd P = trace_products(tr, J, set, weighted);
    g.matrixPos.resize(J, J);
    g.matrixVel.resize(J, J);
    g.matrixCross.resize(J, J);
    for (int i = 0; i < J; ++i) {
        const double wi = std::sqrt(lambda(i));
        for (int j = 0; j < J; ++j) {
            const double wj = std::sqrt(lambda(j));
            const double dm = detail::int_cos(wi - wj, T), dp = detail::int_cos(wi + wj, T);
            g.matrixPos(i, j) = P(i, j) * 0.5 * (dm + dp);
            g.matrixVel(i, j) = P(i, j) * 0.5 * (dm - dp) / (wi * wj);
            // ∫cos(ω_i t) sin(ω_j t) dt = ½[∫sin((ω_j+ω_i)t) + ∫sin((ω_j−ω_i)t)]
            g.matrixCross(i, j) = P(i, j) * 0.5 * (detail::int_sin(wj + wi, T) + detail::int_sin(wj - wi, T)) / wj;
        }
    }
    return g;
}

// Σ_x w(x) ∫_0^T (Σ_j t_j(x) p_j(t))² dt by composite Gauss–Legendre in time;
// an evaluation path independent of the closed-form Gramian.
inline double wave_observation_quadrature(const Eigen::VectorXd& lambda, const TraceSet& tr, const Eigen::VectorXd& a,
                                          const Eigen::VectorXd& b, double T, BoundarySet set = BoundarySet::plus,
                                          bool weighted = true) {
    const int J = static_cast<int>(a.size());
    const double wmax = std::sqrt(lambda.head(J).maxCoeff());
    const int panels = 4 + static_cast<int>(std::ceil(wmax * T / 2.0));
    double total = 0;
    for (size_t p = 0; p < tr.points.size(); ++p) {
        const auto& bp = tr.points[p];
        if (set == BoundarySet::plus && !bp.plus()) continue;
        const double w = weighted ? bp.weight() : 1.0;
        const Eigen::VectorXd t = tr.values(static_cast<int>(p));
        auto signal = [&](double time) {
            double v = 0;
            for (int j = 0; j < J; ++j) {
                const double om = std::sqrt(lambda(j));
                v += t(j) * (a(j) * std::cos(om * time) + b(j) * std::sin(om * time) / om);
            }
            return v * v;
        };
        double acc = 0;
        for (int k = 0; k < panels; ++k)
            acc += boost::math::quadrature::gauss<double, 20>::integrate(signal, T * k / panels, T * (k + 1) / panels);
        total += w * acc;
    }
    return total;
}

// Smallest value of the observation form on the unit energy sphere
// E(0) = ½(Σλ_j a_j² + Σ b_j²) = 1.
inline double obs_constant_wave(const ObservabilityGramian& g, const Eigen::VectorXd& lambda) {
    const int J = g.J;
    Eigen::VectorXd S(2 * J);
    for (int j = 0; j < J; ++j) {
        S(j) = std::sqrt(2.0 / lambda(j));
        S(J + j) = std::sqrt(2.0);
    }
    const Eigen::MatrixXd N = S.asDiagonal() * g.full() * S.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(N, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw convergence_error("obs_constant_wave: eigenvalue solve failed");
    return std::max(0.0, es.eigenvalues()(0));
}

struct T0Estimate {
    std::vector<int> J;
    std::vector<std::optional<double>> T0;  // empty when the threshold is not crossed inside the grid
    std::vector<double> lambdaJ;
    std::optional<double> gamma_fit;  // slope of log T0 vs log λ_J
    double gamma_theory = 0;
    std::vector<std::vector<double>> kappa;  // [J index][T index]
    std::vector<double> Tgrid;
};

// T0emp(J) = min{T : κ(T,J)/T ≥ ε0 · max_T' κ(T',J)/T'} over the grid.
inline T0Estimate estimate_T0(const Eigen::VectorXd& lambda, const TraceSet& tr, double s, const std::vector<int>& Jlist,
                              const std::vector<double>& Tgrid, double eps0 = 1e-3) {
    if (!(eps0 > 0)) throw domain_error("estimate_T0: threshold must be positive");
    T0Estimate est;
    est.J = Jlist;
    est.Tgrid = Tgrid;
    est.gamma_theory = gamma_exponent(s);
    std::vector<double> lx, ly;
    for (int J : Jlist) {
        std::vector<double> k;
        double best = 0;
        for (double T : Tgrid) {
            k.push_back(obs_constant_wave(wave_obs_gramian(lambda, tr, J, T), lambda));
            best = std::max(best, k.back() / T);
        }
        std::optional<double> t0;
        for (size_t i = 0; i < Tgrid.size(); ++i)
            if (best > 0 && k[i] / Tgrid[i] >= eps0 * best) {
                t0 = Tgrid[i];
                break;
            }
        est.T0.push_back(t0);
        est.lambdaJ.push_back(lambda(J - 1));
        est.kappa.push_back(k);
        if (t0) {
            lx.push_back(std::log(lambda(J - 1)));
            ly.push_back(std::log(*t0));
        }
    }
    if (lx.size() >= 2) est.gamma_fit = fit_line(lx, ly).slope;
    return est;
}

struct PohozaevResult {
    double lhs = 0, rhs = 0, residual = 0;
};

// Both sides of the multiplier identity
//   Γ(1+s)²/2 Σ_{x∈∂Ω} (x·ν) ∫_0^T |p/ρ^s|² dt = sT E(0) + [∫ p_t (x p_x + (1-s)/2 p) dx]_0^T
// for the modal solution with data (a, b). The bracket uses the matrix
// X_ij = ∫ φ_i x φ_j' dx of the piecewise-linear reconstruction (boundary zeros
// included), evaluated exactly by 2-point Gauss per cell.
inline PohozaevResult pohozaev_residual(const SpectralBasis& basis, const Mesh& mesh, const TraceSet& tr,
                                        const ModalWaveState& st, double T) {
    const int J = st.J();
    if (J > basis.count || J > tr.modes()) throw domain_error("pohozaev_residual: J exceeds basis size");
    if (basis.n != mesh.n()) throw domain_error("pohozaev_residual: basis and mesh disagree");
    const double s = basis.s;
    const int n = mesh.n();
    const double h = mesh.h();

    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(J, J);
    const double g = 1.0 / std::sqrt(3.0);
    for (int e = 0; e <= n; ++e) {
        const double x0 = mesh.left() + e * h;
        Eigen::VectorXd v0 = e == 0 ? Eigen::VectorXd::Zero(J) : Eigen::VectorXd(basis.eigenvectors.row(e - 1).head(J).transpose());
        Eigen::VectorXd v1 = e == n ? Eigen::VectorXd::Zero(J) : Eigen::VectorXd(basis.eigenvectors.row(e).head(J).transpose());
        const Eigen::VectorXd d = (v1 - v0) / h;
        Eigen::VectorXd I = Eigen::VectorXd::Zero(J);
        for (double q : {-g, g}) {
            const double t = 0.5 * (1 + q);
            const double x = x0 + t * h;
            I += 0.5 * h * x * ((1 - t) * v0 + t * v1);
        }
        X += I * d.transpose();
    }
    const Eigen::MatrixXd Mb = X + 0.5 * (1.0 - s) * Eigen::MatrixXd::Identity(J, J);

    const auto gram = wave_obs_gramian(basis.eigenvalues, tr, J, T, BoundarySet::all, true);
    const double g1 = std::tgamma(1.0 + s);
    PohozaevResult r;
    r.lhs = 0.5 * g1 * g1 * gram.quadratic(st.a, st.b);
    const auto lam = basis.eigenvalues.head(J);
    const auto end = evolve_wave(st, lam, T);
    const double bracket = end.b.dot(Mb * end.a) - st.b.dot(Mb * st.a);
    r.rhs = s * T * wave_energy(st, lam).total + bracket;
    const double scale = std::max(std::abs(r.lhs), std::abs(r.rhs));
    r.residual = scale > 0 ? std::abs(r.lhs - r.rhs) / scale : 0.0;
    return r;
}

} // namespace fraclab

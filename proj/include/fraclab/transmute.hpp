#pragma once

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>
#include <cmath>
#include <string>
#include <vector>

#include "core.hpp"
#include "extended.hpp"
#include "heat.hpp"
#include "special.hpp"
#include "spectral.hpp"

namespace fraclab {

// Kernel k(ζ,t) on (-L,L)×(0,T) solving k_t + k_ζζ = 0 with k(0,t) = 0 and
// k_ζ(0,t) = g(t) = exp[-β(1/t + 1/(T-t))], realized as the odd series
//   k(ζ,t) = Σ_{m=0}^{Mser} (-1)^m g^{(m)}(t) ζ^{2m+1} / (2m+1)!.
struct KernelSpec {
    double T = 2.0;
    double L = 1.0;
    double beta = 3.0;
    int Mser = 24;
    int tail_horizon = 0;         // last series index used for tail bounds; 0 picks 2·Mser + 16
    double underflow_log = -700;  // below this value of log g(t) the kernel is set to zero

    void validate() const {
        if (!(T > 0 && L > 0)) throw domain_error("KernelSpec: T and L must be positive");
        if (!(beta > 2 * L * L)) throw domain_error("KernelSpec: beta must exceed 2L^2");
        if (Mser < 4) throw domain_error("KernelSpec: Mser must be at least 4");
    }
    int horizon() const { return tail_horizon > 0 ? std::max(tail_horizon, Mser + 2) : 2 * Mser + 16; }
};

struct KernelDerivatives {
    double t = 0;
    std::vector<ext_real> scaled;  // g^{(m)}(t) / m!
    bool underflow = false;        // g(t) below the underflow threshold; all entries zero
    double worst_relative_error = 0;
};

// Scaled Taylor coefficients G_m = g^{(m)}/m! from g' = h'g with
// h = -β(1/t + 1/(T-t)) and H_k = h^{(k)}/k! = -β((-1)^k / t^{k+1} + 1/(T-t)^{k+1}):
//   (m+1) G_{m+1} = Σ_{k=0}^{m} (k+1) H_{k+1} G_{m-k}.
// A running magnitude bound (the same recurrence on absolute values) estimates
// the rounding error of each coefficient; losing more than 1e-6 relative
// raises with the offending order.
inline KernelDerivatives kernel_derivatives(const KernelSpec& spec, double t, int order) {
    if (!(t > 0 && t < spec.T)) throw domain_error("kernel_derivatives: t must lie in (0,T)");
    KernelDerivatives out;
    out.t = t;
    out.scaled.assign(order + 1, ext_real(0));
    const ext_real te(t), ue = ext_real(spec.T) - te, be(spec.beta);
    const ext_real h = -be * (1 / te + 1 / ue);
    if (h < ext_real(spec.underflow_log)) {
        out.underflow = true;
        return out;
    }
    std::vector<ext_real> H(order + 2);
    ext_real it = 1 / te, iu = 1 / ue, pt = it, pu = iu;
    for (int k = 1; k <= order + 1; ++k) {
        pt *= it;
        pu *= iu;
        H[k] = -be * ((k % 2 == 0 ? pt : -pt) + pu);  // pt = t^{-(k+1)}, pu = (T-t)^{-(k+1)}
    }
    std::vector<ext_real> mag(order + 1);
    out.scaled[0] = exp(h);
    mag[0] = out.scaled[0];
    const ext_real eps = std::numeric_limits<ext_real>::epsilon();
    for (int m = 0; m < order; ++m) {
        ext_real acc = 0, am = 0;
        for (int k = 0; k <= m; ++k) {
            acc += (k + 1) * H[k + 1] * out.scaled[m - k];
            am += (k + 1) * abs(H[k + 1]) * mag[m - k];
        }
        out.scaled[m + 1] = acc / (m + 1);
        mag[m + 1] = am / (m + 1);
        // Exact symmetric zeros (odd orders at t = T/2) are not precision loss.
        const ext_real ref = std::max<ext_real>(abs(out.scaled[m + 1]), mag[m + 1] * ext_real(1e-30));
        const double rel = to_double(eps * (m + 2) * mag[m + 1] / ref);
        out.worst_relative_error = std::max(out.worst_relative_error, rel);
        if (rel > 1e-6)
            throw convergence_error("kernel_derivatives: precision loss at derivative order " + std::to_string(m + 1));
    }
    return out;
}

inline KernelDerivatives kernel_derivatives(const KernelSpec& spec, double t) {
    return kernel_derivatives(spec, t, spec.Mser);
}

struct KernelValue {
    ext_real exact;
    double value = 0;
    double tail_bound = 0;  // bound on the omitted part of the series
    bool warning = false;   // tail above 1e-8 |k|
    bool underflow = false;
};

namespace detail {

// Series terms (-1)^m G_m m! ζ^{2m+1}/(2m+1)! for m = 0..count-1.
inline std::vector<ext_real> kernel_terms(const std::vector<ext_real>& G, const ext_real& z, int count) {
    std::vector<ext_real> terms(count);
    ext_real c = z;  // m! ζ^{2m+1}/(2m+1)!
    const ext_real z2 = z * z;
    for (int m = 0; m < count; ++m) {
        terms[m] = (m % 2 == 0 ? c : -c) * G[m];
        c *= z2 * (m + 1) / ((2 * m + 2) * (2 * m + 3));
    }
    return terms;
}

// Sum of |terms| beyond index `from`, closed by a geometric majorant when the
// last ratio is below one; infinity when the ratio test fails.
inline double tail_estimate(const std::vector<ext_real>& terms, int from) {
    ext_real acc = 0;
    for (size_t m = from; m < terms.size(); ++m) acc += abs(terms[m]);
    const size_t n = terms.size();
    if (n >= 2 && terms[n - 2] != 0) {
        const ext_real r = abs(terms[n - 1] / terms[n - 2]);
        if (r >= 1) return std::numeric_limits<double>::infinity();
        acc += abs(terms[n - 1]) * r / (1 - r);
    }
    return to_double(acc);
}

} // namespace detail

inline KernelValue kernel_eval(const KernelSpec& spec, const KernelDerivatives& D, double zeta) {
    KernelValue kv;
    const ext_real z(zeta);
    if (D.underflow) {
        kv.underflow = true;
        // Outside the tabulated range the kernel estimate itself bounds |k|.
        const double tm = std::min(D.t, spec.T - D.t);
        kv.tail_bound = std::abs(zeta) * std::exp((zeta * zeta / 0.9 - spec.beta / 1.9) / tm);
        return kv;
    }
    const int H = static_cast<int>(D.scaled.size());
    const auto terms = detail::kernel_terms(D.scaled, z, H);
    for (int m = 0; m <= spec.Mser && m < H; ++m) kv.exact += terms[m];
    kv.value = to_double(kv.exact);
    kv.tail_bound = detail::tail_estimate(terms, spec.Mser + 1);
    kv.warning = kv.tail_bound > 1e-8 * std::abs(kv.value);
    return kv;
}

inline KernelValue kernel_eval(const KernelSpec& spec, double zeta, double t) {
    spec.validate();
    if (std::abs(zeta) > spec.L) throw domain_error("kernel_eval: |zeta| exceeds L");
    return kernel_eval(spec, kernel_derivatives(spec, t, spec.horizon()), zeta);
}

// The bound |k(ζ,t)| ≤ |ζ| exp[(ζ²/δ - β/(1+δ)) / min(t, T-t)].
inline double kernel_bound(const KernelSpec& spec, double zeta, double t, double delta) {
    const double tm = std::min(t, spec.T - t);
    return std::abs(zeta) * std::exp((zeta * zeta / delta - spec.beta / (1 + delta)) / tm);
}

struct PdeResidual {
    double analytic = 0;  // max |g^{(M+1)}| |ζ|^{2M+1}/(2M+1)!: exact residual of the truncated series
    double finite_difference = 0;
    double value() const { return std::max(analytic, finite_difference); }
};

// Residual of k_t + k_ζζ for the truncated series. The analytic value is the
// single leftover term of the term-by-term derivative; the finite-difference
// value differentiates the evaluated series numerically (steps 1e-12, in
// extended precision) as an independent confirmation.
inline PdeResidual kernel_pde_residual(const KernelSpec& spec, const std::vector<double>& zetas,
                                       const std::vector<double>& times) {
    spec.validate();
    const int M = spec.Mser;
    PdeResidual r;
    const ext_real dt = ext_real(1e-12) * ext_real(spec.T), dz = ext_real(1e-12);
    auto series = [&](const std::vector<ext_real>& G, const ext_real& z) {
        ext_real acc = 0;
        const auto terms = detail::kernel_terms(G, z, M + 1);
        for (const auto& v : terms) acc += v;
        return acc;
    };
    // Derivative tables at t ± dt are needed in extended precision, so they are
    // rebuilt directly rather than through the double-valued time argument.
    auto table_at = [&](const ext_real& te) {
        std::vector<ext_real> G(M + 2);
        const ext_real ue = ext_real(spec.T) - te, be(spec.beta);
        std::vector<ext_real> Hs(M + 2);
        ext_real it = 1 / te, iu = 1 / ue, pt = it, pu = iu;
        for (int k = 1; k <= M + 1; ++k) {
            pt *= it;
            pu *= iu;
            Hs[k] = -be * ((k % 2 == 0 ? pt : -pt) + pu);
        }
        G[0] = exp(-be * (1 / te + 1 / ue));
        for (int m = 0; m <= M; ++m) {
            ext_real acc = 0;
            for (int k = 0; k <= m; ++k) acc += (k + 1) * Hs[k + 1] * G[m - k];
            G[m + 1] = acc / (m + 1);
        }
        return G;
    };
    for (double t : times) {
        const auto D = kernel_derivatives(spec, t, M + 1);
        if (D.underflow) continue;
        ext_real fact = 1;  // (M+1)!
        for (int k = 2; k <= M + 1; ++k) fact *= k;
        ext_real odd = 1;  // (2M+1)!
        for (int k = 2; k <= 2 * M + 1; ++k) odd *= k;
        const ext_real te(t);
        const auto Gp = table_at(te + dt), Gm = table_at(te - dt), G0 = table_at(te);
        for (double zeta : zetas) {
            const ext_real z(zeta);
            const ext_real an = abs(D.scaled[M + 1]) * fact * pow(abs(z), 2 * M + 1) / odd;
            r.analytic = std::max(r.analytic, to_double(an));
            const ext_real kt = (series(Gp, z) - series(Gm, z)) / (2 * dt);
            const ext_real kzz = (series(G0, z + dz) - 2 * series(G0, z) + series(G0, z - dz)) / (dz * dz);
            r.finite_difference = std::max(r.finite_difference, to_double(abs(kt + kzz)));
        }
    }
    return r;
}

struct TransmutedSolution {
    std::vector<double> zeta;
    Eigen::MatrixXd psi;      // [mode][ζ]
    Eigen::MatrixXd psi_zz;   // analytically differentiated series
    Eigen::VectorXd initial_velocity;  // ψ_j'(0)
    Eigen::VectorXd relative_residual; // max_ζ |ψ'' + λψ| / max_ζ |ψ| per mode
    int panels = 0;
};

namespace detail {

// μ_m(λ) = ∫_0^T g^{(m)}(t) e^{-λt} dt for m = 0..order and every λ, by
// composite 20-point Gauss–Legendre in extended precision. The panel count
// doubles until every moment moves by less than tol relative to
// ∫|g^{(m)}| e^{-λt}; derivative tables are shared across all λ.
inline std::vector<std::vector<ext_real>> kernel_moments(const KernelSpec& spec, const std::vector<double>& lambdas,
                                                         int order, double tol, int& panels_used) {
    using Rule = boost::math::quadrature::gauss<double, 20>;
    const auto& x = Rule::abscissa();
    const auto& w = Rule::weights();
    const size_t L = lambdas.size();
    std::vector<std::vector<ext_real>> absval;
    auto run = [&](int panels) {
        std::vector<std::vector<ext_real>> mu(L, std::vector<ext_real>(order + 1, ext_real(0)));
        absval.assign(L, std::vector<ext_real>(order + 1, ext_real(0)));
        const double hp = spec.T / panels;
        for (int p = 0; p < panels; ++p) {
            const double mid = (p + 0.5) * hp;
            for (size_t q = 0; q < x.size(); ++q)
                for (int sgn : {-1, 1}) {
                    if (x[q] == 0 && sgn < 0) continue;
                    const double t = mid + sgn * x[q] * hp / 2;
                    const auto D = kernel_derivatives(spec, t, order);
                    if (D.underflow) continue;
                    std::vector<ext_real> deriv(order + 1);
                    ext_real fact = 1;
                    for (int m = 0; m <= order; ++m) {
                        if (m > 0) fact *= m;
                        deriv[m] = D.scaled[m] * fact;
                    }
                    for (size_t l = 0; l < L; ++l) {
                        const ext_real weight = ext_real(w[q] * hp / 2) * exp(-ext_real(lambdas[l]) * ext_real(t));
                        for (int m = 0; m <= order; ++m) {
                            const ext_real v = deriv[m] * weight;
                            mu[l][m] += v;
                            absval[l][m] += abs(v);
                        }
                    }
                }
        }
        return mu;
    };
    int panels = 8;
    auto prev = run(panels);
    for (int iter = 0; iter < 10; ++iter) {
        panels *= 2;
        auto cur = run(panels);
        bool ok = true;
        for (size_t l = 0; l < L; ++l)
            for (int m = 0; m <= order; ++m)
                if (abs(cur[l][m] - prev[l][m]) > ext_real(tol) * absval[l][m]) ok = false;
        prev = std::move(cur);
        if (ok) {
            panels_used = panels;
            return prev;
        }
    }
    throw convergence_error("kernel_moments: quadrature did not converge within 8192 panels");
}

} // namespace detail

// ψ_j(ζ) = q_j ∫_0^T k(ζ,t) e^{-λ_j t} dt for the modes carried by q0, with the
// per-mode check of ψ'' + λ_j ψ = 0.
inline TransmutedSolution transmuted_solution(const Eigen::VectorXd& lambda, const Eigen::VectorXd& q0,
                                              const KernelSpec& spec, const std::vector<double>& zetas,
                                              double tol = 1e-10) {
    spec.validate();
    const int J = static_cast<int>(q0.size());
    const int M = spec.Mser;
    TransmutedSolution out;
    out.zeta = zetas;
    out.psi.setZero(J, zetas.size());
    out.psi_zz.setZero(J, zetas.size());
    out.initial_velocity.setZero(J);
    out.relative_residual.setZero(J);
    std::vector<int> active;
    std::vector<double> lams;
    for (int j = 0; j < J; ++j)
        if (q0(j) != 0) {
            active.push_back(j);
            lams.push_back(lambda(j));
        }
    if (active.empty()) return out;
    const auto moments = detail::kernel_moments(spec, lams, M, tol, out.panels);
    for (size_t a = 0; a < active.size(); ++a) {
        const int j = active[a];
        const auto& mu = moments[a];
        const ext_real q(q0(j)), lam(lambda(j));
        out.initial_velocity(j) = to_double(q * mu[0]);
        double worst = 0, size = 0;
        for (size_t i = 0; i < zetas.size(); ++i) {
            const ext_real z(zetas[i]);
            ext_real psi = 0, pzz = 0;
            ext_real c = z;   // ζ^{2m+1}/(2m+1)!
            ext_real c2 = 0;  // ζ^{2m-1}/(2m-1)!, the previous value of c
            for (int m = 0; m <= M; ++m) {
                const ext_real sg = m % 2 == 0 ? ext_real(1) : ext_real(-1);
                psi += sg * mu[m] * c;
                if (m >= 1) pzz += sg * mu[m] * c2;
                c2 = c;
                c *= z * z / ((2 * m + 2) * (2 * m + 3));
            }
            psi *= q;
            pzz *= q;
            out.psi(j, i) = to_double(psi);
            out.psi_zz(j, i) = to_double(pzz);
            worst = std::max(worst, to_double(abs(pzz + lam * psi)));
            size = std::max(size, std::abs(out.psi(j, i)));
        }
        out.relative_residual(j) = size > 0 ? worst / size : 0.0;
    }
    return out;
}

struct ChainRecord {
    std::string name;
    double lhs = 0, rhs = 0;
    bool holds = false;
    double slack() const { return lhs > 0 ? rhs / lhs : std::numeric_limits<double>::infinity(); }
};

struct TransferReport {
    double L = 0, beta = 0, T = 0, T0 = 0, s = 0;
    double P = 0;   // ‖∫ k_ζ(0,t) q(t) dt‖²
    double Q0 = 0;  // ‖q(T)‖²
    double W = 0;   // ∫_{-L}^{L} ∫_{∂Ω⁺} ∫_0^T |k|² |q/ρ^s|² (x·ν) dt dσ dζ
    double H = 0;   // ∫_0^T ∫_{∂Ω⁺} (x·ν) |q/ρ^s|² dσ dt
    double final_constant = 0;  // Γ(1+s)² L³ e^{8β/T} / (3sT(2L-T0))
    std::vector<ChainRecord> chain;
    bool all_hold() const {
        for (const auto& c : chain)
            if (!c.holds) return false;
        return true;
    }
};

// Evaluates both sides of each step of the wave-to-heat transfer chain for a
// heat trajectory q(t) = Σ_j q_j e^{-λ_j t} φ_j, with the constants exactly as
// they appear in the chain: 4/T² and e^{8β/T} in the lower bound for the
// kernel moment, Γ(1+s)²/(2s(2L-T0)) from the wave observability estimate, and
// ∫_{-L}^{L} ζ² dζ = 2L³/3 after the kernel bound.
inline TransferReport transfer_demo(const Eigen::VectorXd& lambda, const TraceSet& tr, double s, const Eigen::VectorXd& q,
                                    double T, double L, double beta, double T0, int Mser = 96, int nt = 160, int nz = 48) {
    KernelSpec spec{T, L, beta, Mser};
    spec.validate();
    if (!(2 * L > T0)) throw domain_error("transfer_demo: requires L > T0/2");
    const int J = static_cast<int>(q.size());
    TransferReport rep;
    rep.L = L;
    rep.beta = beta;
    rep.T = T;
    rep.T0 = T0;
    rep.s = s;

    std::vector<double> tn, tw, zn, zw;
    {
        using Rule = boost::math::quadrature::gauss<double, 20>;
        const int panels = std::max(1, nt / 20);
        for (int p = 0; p < panels; ++p) {
            const double mid = (p + 0.5) * T / panels, hw = T / panels / 2;
            for (size_t k = 0; k < Rule::abscissa().size(); ++k)
                for (int sg : {-1, 1}) {
                    if (Rule::abscissa()[k] == 0 && sg < 0) continue;
                    tn.push_back(mid + sg * Rule::abscissa()[k] * hw);
                    tw.push_back(Rule::weights()[k] * hw);
                }
        }
        const int zp = std::max(1, nz / 20);
        for (int p = 0; p < zp; ++p) {
            const double mid = (p + 0.5) * L / zp, hw = L / zp / 2;
            for (size_t k = 0; k < Rule::abscissa().size(); ++k)
                for (int sg : {-1, 1}) {
                    if (Rule::abscissa()[k] == 0 && sg < 0) continue;
                    zn.push_back(mid + sg * Rule::abscissa()[k] * hw);
                    zw.push_back(2 * Rule::weights()[k] * hw);  // k² is even in ζ
                }
        }
    }

    // Weighted boundary signal (x·ν)|q/ρ^s|² summed over ∂Ω⁺ at each time node.
    std::vector<ext_real> signal(tn.size(), ext_real(0));
    for (size_t p = 0; p < tr.points.size(); ++p) {
        if (!tr.points[p].plus()) continue;
        for (size_t i = 0; i < tn.size(); ++i) {
            ext_real v = 0;
            for (int j = 0; j < J; ++j)
                v += ext_real(q(j)) * exp(-ext_real(lambda(j)) * ext_real(tn[i])) * ext_real(tr.entries[p][j].value);
            signal[i] += ext_real(tr.points[p].weight()) * v * v;
        }
    }
    ext_real P = 0, Q0 = 0, W = 0, Hs = 0;
    std::vector<KernelDerivatives> tabs;
    for (double t : tn) tabs.push_back(kernel_derivatives(spec, t, Mser));
    for (int j = 0; j < J; ++j) {
        ext_real m0 = 0;
        for (size_t i = 0; i < tn.size(); ++i)
            if (!tabs[i].underflow) m0 += ext_real(tw[i]) * tabs[i].scaled[0] * exp(-ext_real(lambda(j)) * ext_real(tn[i]));
        P += ext_real(q(j)) * ext_real(q(j)) * m0 * m0;
        Q0 += ext_real(q(j)) * ext_real(q(j)) * exp(-2 * ext_real(lambda(j)) * ext_real(T));
    }
    for (size_t i = 0; i < tn.size(); ++i) Hs += ext_real(tw[i]) * signal[i];
    for (size_t a = 0; a < zn.size(); ++a)
        for (size_t i = 0; i < tn.size(); ++i) {
            if (tabs[i].underflow) continue;
            const ext_real k = kernel_eval(spec, tabs[i], zn[a]).exact;
            W += ext_real(zw[a] * tw[i]) * k * k * signal[i];
        }
    rep.P = to_double(P);
    rep.Q0 = to_double(Q0);
    rep.W = to_double(W);
    rep.H = to_double(Hs);

    const double g2 = std::pow(std::tgamma(1 + s), 2);
    const double e8 = std::exp(8 * beta / T);
    const double gap = 2 * L - T0;
    auto add = [&](const char* name, double lhs, double rhs) { rep.chain.push_back({name, lhs, rhs, lhs <= rhs}); };
    add("wave_observability", rep.P, g2 / (2 * s * gap) * rep.W);
    add("kernel_moment_lower_bound", rep.Q0, 4 / (T * T) * e8 * rep.P);
    add("combined_heat_estimate", rep.Q0, g2 / (2 * s * T * T * gap) * e8 * rep.W);
    add("kernel_bound_integration", rep.W, T * (2 * L * L * L / 3) * rep.H);
    rep.final_constant = g2 * L * L * L * e8 / (3 * s * T * gap);
    add("heat_observability", rep.Q0, rep.final_constant * rep.H);
    return rep;
}

} // namespace fraclab

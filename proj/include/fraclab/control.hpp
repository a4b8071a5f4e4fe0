#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "control_signal.hpp"
#include "core.hpp"
#include "extended.hpp"
#include "heat.hpp"
#include "special.hpp"
#include "spectral.hpp"
#include "stats.hpp"

namespace fraclab {

struct HumDiagnostics {
    double condition = 0;       // λ_max/λ_min of the HUM Gramian
    int truncated = 0;          // spectral directions dropped by the rcond cutoff
    double predicted_cost = 0;  // ‖f‖ on ∂Ω⁺ × (t0, t1)
};

struct HumResult {
    ControlSignal control;
    HumDiagnostics diagnostics;
};

// Minimal-norm boundary control steering the projection of u0 onto the given
// modes to zero over [t0, t0 + T]. Solves G c = -d with
// G = 𝒜(s)·(unweighted ∂Ω⁺ heat Gramian) and d_k = e^{-λ_k T} u0_k, through a
// symmetric eigendecomposition in extended precision; eigenvalues below
// rcond·λ_max are dropped and counted.
inline HumResult hum_solve(const Eigen::VectorXd& lambda, const TraceSet& tr, double s, const std::vector<int>& modes,
                           double t0, double T, const ModalHeatState& u0, double rcond = 1e-12) {
    if (!(T > 0)) throw domain_error("hum_solve: horizon must be positive");
    const int K = static_cast<int>(modes.size());
    if (K == 0) throw domain_error("hum_solve: no modes to control");
    for (int m : modes)
        if (m < 0 || m >= u0.M() || m >= lambda.size() || m >= tr.modes())
            throw domain_error("hum_solve: controlled mode outside the tracked window");

    const auto gram = heat_obs_gramian(lambda, tr, modes, T, false, true, s);
    ext_vector d(K);
    for (int k = 0; k < K; ++k) d(k) = exp(-ext_real(lambda(modes[k])) * ext_real(T)) * u0.u(modes[k]);

    Eigen::SelfAdjointEigenSolver<ext_matrix> es(gram.G);
    if (es.info() != Eigen::Success) throw convergence_error("hum_solve: Gramian eigendecomposition failed");
    const auto& ev = es.eigenvalues();
    const ext_real top = ev(K - 1);
    if (!(top > 0)) throw convergence_error("hum_solve: unobservable at this precision (all directions truncated)");

    HumResult res;
    ext_vector c = ext_vector::Zero(K);
    ext_real smallest_kept = top;
    for (int r = 0; r < K; ++r) {
        if (ev(r) > ext_real(rcond) * top) {
            const auto q = es.eigenvectors().col(r);
            c -= q * (q.dot(d) / ev(r));
            smallest_kept = std::min<ext_real>(smallest_kept, ev(r));
        } else {
            ++res.diagnostics.truncated;
        }
    }
    res.diagnostics.condition = ev(0) > 0 ? to_double(top / ev(0)) : std::numeric_limits<double>::infinity();

    auto& f = res.control;
    f.coefficients = c;
    f.modes = modes;
    f.eigenvalues.resize(K);
    for (int k = 0; k < K; ++k) f.eigenvalues(k) = lambda(modes[k]);
    for (size_t p = 0; p < tr.points.size(); ++p) {
        if (!tr.points[p].plus()) continue;
        f.points.push_back(tr.points[p]);
        Eigen::VectorXd t(K);
        for (int k = 0; k < K; ++k) t(k) = tr.entries[p][modes[k]].value;
        f.traces.push_back(t);
    }
    f.t0 = t0;
    f.t1 = t0 + T;
    res.diagnostics.predicted_cost = to_double(sqrt(f.norm_squared()));
    return res;
}

inline HumResult hum_solve(const Eigen::VectorXd& lambda, const TraceSet& tr, double s, int J, double T,
                           const ModalHeatState& u0, double rcond = 1e-12) {
    return hum_solve(lambda, tr, s, first_modes(J), 0.0, T, u0, rcond);
}

struct ProjectionResiduals {
    double max_low = 0;           // max_{j≤J} |u_j(T)|
    double relative = 0;          // max_low / ‖u0‖
    Eigen::VectorXd spillover;    // u_j(T) for J < j ≤ M
    ModalHeatState final_state;
};

inline ProjectionResiduals verify_projection(const Eigen::VectorXd& lambda, const TraceSet& tr, double s,
                                             const ModalHeatState& u0, const std::vector<ControlSignal>& f, int J,
                                             double T) {
    if (J > u0.M()) throw domain_error("verify_projection: J exceeds tracked modes");
    ProjectionResiduals r;
    r.final_state = propagate_controlled(lambda, tr, s, u0, f, 0.0, T);
    for (int j = 0; j < J; ++j) r.max_low = std::max(r.max_low, to_double(abs(r.final_state.u(j))));
    const double n0 = u0.norm();
    r.relative = n0 > 0 ? r.max_low / n0 : r.max_low;
    r.spillover.resize(u0.M() - J);
    for (int j = J; j < u0.M(); ++j) r.spillover(j - J) = to_double(r.final_state.u(j));
    return r;
}

// Residual of 𝒜∫∫ f (v/ρ^s) + ∫u0 v(0) - ∫u(T) v_T for the adjoint solution
// v(t) = Σ_j v_j e^{-λ_j(T-t)} φ_j, scaled by the largest of the three terms.
// The boundary pairing is integrated in closed form independently of the
// propagator.
inline double duality_residual(const Eigen::VectorXd& lambda, const TraceSet& tr, double s, const ModalHeatState& u0,
                               const ControlSignal& f, const ModalHeatState& uT, const Eigen::VectorXd& vT, double T) {
    const int J = static_cast<int>(vT.size());
    const ext_real A(duality_constant(s)), Te(T);
    ext_real boundary = 0;
    for (size_t q = 0; q < f.points.size(); ++q) {
        const int p = tr.index_of(f.points[q].x);
        for (int k = 0; k < f.size(); ++k)
            for (int j = 0; j < J; ++j) {
                const ext_real li(f.eigenvalues(k)), lj(lambda(j));
                const ext_real lo(std::max(0.0, f.t0)), hi(std::min(T, f.t1));
                if (!(hi > lo)) continue;
                // ∫_lo^hi e^{-λ_i(t1_f - t)} e^{-λ_j(T - t)} dt
                const ext_real I = exp(-li * (ext_real(f.t1) - hi) - lj * (Te - hi)) * (hi - lo) *
                                   one_minus_exp_over((li + lj) * (hi - lo));
                boundary += f.coefficients(k) * ext_real(f.traces[q](k)) * ext_real(vT(j)) *
                            ext_real(tr.entries[p][j].value) * I;
            }
    }
    boundary *= A;
    ext_real initial = 0, final = 0;
    for (int j = 0; j < J; ++j) {
        initial += u0.u(j) * ext_real(vT(j)) * exp(-ext_real(lambda(j)) * Te);
        final += uT.u(j) * ext_real(vT(j));
    }
    const ext_real scale = std::max({abs(boundary), abs(initial), abs(final)});
    if (scale == 0) return 0.0;
    return to_double(abs(boundary + initial - final) / scale);
}

// Worst-case squared HUM cost per unit initial norm on the given modes and
// horizon: sup_{‖u0‖=1} ‖f‖² = λ_max(D G⁺ D) / 𝒜 with D = diag(e^{-λ_k T}) and
// G⁺ the pseudo-inverse of the HUM Gramian keeping eigenvalues above
// rcond·λ_max. This is the best constant in ‖f‖² ≤ K(T) ‖u0‖². Working with
// G⁺ rather than D⁻¹GD⁻¹ keeps every matrix entry bounded.
inline double worst_case_cost_squared(const Eigen::VectorXd& lambda, const TraceSet& tr, double s,
                                      const std::vector<int>& modes, double T, double rcond = 1e-40) {
    const auto g = heat_obs_gramian(lambda, tr, modes, T, false, true, s);
    const int K = static_cast<int>(modes.size());
    Eigen::SelfAdjointEigenSolver<ext_matrix> es(g.G);
    if (es.info() != Eigen::Success) throw convergence_error("worst_case_cost: Gramian eigendecomposition failed");
    const auto& ev = es.eigenvalues();
    const ext_real top = ev(K - 1);
    ext_vector dexp(K);
    for (int k = 0; k < K; ++k) dexp(k) = exp(-ext_real(lambda(modes[k])) * ext_real(T));
    ext_matrix N = ext_matrix::Zero(K, K);
    for (int r = 0; r < K; ++r) {
        if (!(ev(r) > ext_real(rcond) * top)) continue;
        const ext_vector q = es.eigenvectors().col(r).cwiseProduct(dexp);
        N += q * q.transpose() / ev(r);
    }
    Eigen::SelfAdjointEigenSolver<ext_matrix> en(N, Eigen::EigenvaluesOnly);
    return to_double(en.eigenvalues()(K - 1) / ext_real(duality_constant(s)));
}

struct MinimalNormCheck {
    std::vector<double> relative_gap;  // (‖f+g‖² - ‖f‖²) / ‖f‖² per perturbation
    double constraint_residual = 0;    // max |Π_J effect of g at t1| relative to its size
    bool holds = false;
};

// Perturbs a HUM control by g in the span of e^{-λ_k(t1-t)} t_k(x), k < span,
// projected so that g leaves the controlled modes unchanged at t1. The HUM
// control is orthogonal to every such g, so ‖f+g‖ ≥ ‖f‖ must hold.
inline MinimalNormCheck minimal_norm_check(const Eigen::VectorXd& lambda, const TraceSet& tr, double s,
                                           const ControlSignal& f, int span,
                                           const std::vector<Eigen::VectorXd>& directions) {
    const int K = f.size();
    if (span < K || span > lambda.size() || span > tr.modes())
        throw domain_error("minimal_norm_check: perturbation span outside the tracked window");
    std::vector<int> all = first_modes(span);
    for (int k = 0; k < K; ++k)
        if (f.modes[k] != k) throw domain_error("minimal_norm_check: expects a control on the first J modes");
    const ext_real len(f.t1 - f.t0);
    // E(j,k) = 𝒜 Σ_x t_j t_k ∫ e^{-(λ_j+λ_k)(t1-t)} dt: effect of direction k on mode j at t1.
    ext_matrix E = ext_matrix::Zero(K, span);
    for (const auto& bp : f.points) {
        const int p = tr.index_of(bp.x);
        for (int j = 0; j < K; ++j)
            for (int k = 0; k < span; ++k)
                E(j, k) += ext_real(tr.entries[p][j].value) * ext_real(tr.entries[p][k].value) * len *
                           one_minus_exp_over((ext_real(lambda(j)) + ext_real(lambda(k))) * len);
    }
    E *= ext_real(duality_constant(s));
    const ext_matrix EEt = E * E.transpose();
    Eigen::LDLT<ext_matrix> ldlt(EEt);
    auto signal = [&](const ext_vector& c) {
        ControlSignal g;
        g.coefficients = c;
        g.modes = all;
        g.eigenvalues = lambda.head(span);
        g.points = f.points;
        for (const auto& bp : f.points) {
            const int p = tr.index_of(bp.x);
            Eigen::VectorXd t(span);
            for (int k = 0; k < span; ++k) t(k) = tr.entries[p][k].value;
            g.traces.push_back(t);
        }
        g.t0 = f.t0;
        g.t1 = f.t1;
        return g;
    };
    ext_vector cf = ext_vector::Zero(span);
    cf.head(K) = f.coefficients;
    const ext_real base = f.norm_squared();
    MinimalNormCheck out;
    out.holds = true;
    for (const auto& dir : directions) {
        if (dir.size() != span) throw domain_error("minimal_norm_check: direction length must equal span");
        ext_vector r = to_ext(dir);
        r -= E.transpose() * ldlt.solve(E * r);
        const ext_real scale = E.norm() * r.norm();
        if (scale > 0) out.constraint_residual = std::max(out.constraint_residual, to_double((E * r).norm() / scale));
        // Scale g to 1e-3 of f: a nonzero cross term ⟨f,g⟩ would then dominate ‖g‖².
        const ext_real gn = signal(r).norm_squared();
        if (gn > 0) r *= sqrt(base / gn) * ext_real(1e-3);
        const ext_real total = signal(ext_vector(cf + r)).norm_squared();
        const double gap = base > 0 ? to_double((total - base) / base) : to_double(total);
        out.relative_gap.push_back(gap);
        if (!(gap >= -1e-12)) out.holds = false;
    }
    return out;
}

struct CostFitRow {
    int J = 0;
    std::vector<double> T;
    std::vector<double> measured;    // ‖f‖²·T/‖u0‖² for the supplied datum
    std::vector<double> worst_case;  // sup over unit data of ‖f‖²·T
    LineFit measured_fit;            // log(measured) against 1/T
    LineFit worst_fit;
    bool measured_decreasing = false;
    bool worst_decreasing = false;
    double lambdaJ = 0;
};

struct CostReport {
    double s = 0;
    std::vector<CostFitRow> rows;
    bool slope_monotone_in_J = false;  // fitted exponential rate grows with J (worst case)
    std::optional<double> slope_growth_exponent;  // d log(rate) / d log λ_J
    double gamma_theory = 0;                      // γ(s); T0(J)² ~ λ_J^{2γ}
};

// Fits ‖f‖² T / ‖u0‖² ≈ C exp(a/T) for each J, both for the HUM control of the
// datum u0 (restricted to the first J modes) and for the worst-case datum.
inline CostReport cost_check(const Eigen::VectorXd& lambda, const TraceSet& tr, double s, const std::vector<int>& Jlist,
                             const std::vector<double>& Tlist, const std::function<Eigen::VectorXd(int)>& datum,
                             double rcond = 1e-12) {
    CostReport rep;
    rep.s = s;
    rep.gamma_theory = gamma_exponent(s);
    std::vector<double> lx, ly;
    bool mono = true;
    double prev_slope = -std::numeric_limits<double>::infinity();
    for (int J : Jlist) {
        CostFitRow row;
        row.J = J;
        row.T = Tlist;
        row.lambdaJ = lambda(J - 1);
        const auto u0 = make_heat_state(datum(J));
        const double n2 = std::pow(u0.norm(), 2);
        std::vector<double> x, ym, yw;
        for (double T : Tlist) {
            const auto h = hum_solve(lambda, tr, s, J, T, u0, rcond);
            row.measured.push_back(std::pow(h.diagnostics.predicted_cost, 2) * T / n2);
            row.worst_case.push_back(worst_case_cost_squared(lambda, tr, s, first_modes(J), T) * T);
            x.push_back(1.0 / T);
            ym.push_back(std::log(row.measured.back()));
            yw.push_back(std::log(row.worst_case.back()));
        }
        row.measured_fit = fit_line(x, ym);
        row.worst_fit = fit_line(x, yw);
        row.measured_decreasing = row.worst_decreasing = true;
        for (size_t i = 1; i < Tlist.size(); ++i) {
            // Cost itself (not cost·T) must fall as the horizon grows.
            if (!(row.measured[i] / Tlist[i] < row.measured[i - 1] / Tlist[i - 1])) row.measured_decreasing = false;
            if (!(row.worst_case[i] / Tlist[i] < row.worst_case[i - 1] / Tlist[i - 1])) row.worst_decreasing = false;
        }
        if (!(row.worst_fit.slope > prev_slope)) mono = false;
        prev_slope = row.worst_fit.slope;
        if (row.worst_fit.slope > 0) {
            lx.push_back(std::log(row.lambdaJ));
            ly.push_back(std::log(row.worst_fit.slope));
        }
        rep.rows.push_back(row);
    }
    rep.slope_monotone_in_J = mono;
    if (lx.size() >= 2) rep.slope_growth_exponent = fit_line(lx, ly).slope;
    return rep;
}

struct LRStage {
    int index = 0;
    double start = 0;      // a_j
    double control = 0;    // τ_j
    double threshold = 0;  // 2^{2j}
    std::vector<int> active;  // K_j = {modes with λ ≤ 2^{2j}}, filled by lr_control
};

struct LRSchedule {
    std::vector<LRStage> stages;
    double T = 0;
    double gammaLR = 0;
    double tail = 0;  // T - 2Σ τ_j: terminal free-decay segment
};

// τ_j = γLR 2^{-2j/3}, a_{j+1} = a_j + 2τ_j, with γLR = T(1 - 2^{-2/3})/2 so the
// infinite schedule fills [0, T] exactly.
inline LRSchedule lr_schedule(double T, int stageCount) {
    if (!(T > 0)) throw domain_error("lr_schedule: T must be positive");
    if (stageCount < 1) throw domain_error("lr_schedule: need at least one stage");
    LRSchedule sch;
    sch.T = T;
    sch.gammaLR = T * (1.0 - std::exp2(-2.0 / 3.0)) / 2.0;
    double a = 0;
    for (int j = 0; j < stageCount; ++j) {
        LRStage st;
        st.index = j;
        st.start = a;
        st.control = sch.gammaLR * std::exp2(-2.0 * j / 3.0);
        st.threshold = std::ldexp(1.0, 2 * j);
        a += 2 * st.control;
        sch.stages.push_back(st);
    }
    sch.tail = T - a;
    return sch;
}

struct StageRecord {
    int index = 0;
    int active_modes = 0;
    int truncated = 0;
    double condition = 0;
    double cost = 0;
    double worst_case_cost = 0;  // operator norm of the stage HUM map, rcond 1e-40
    double norm_start = 0, norm_mid = 0, norm_end = 0;
    double projection_residual = 0;  // max_{k∈K_j} |u_k(a_j+τ_j)| / ‖u(a_j)‖
    double decay_factor = 0;         // exp(-2^{2j} τ_j), the free-decay bound on modes above threshold
    bool skipped = false;            // no active modes, or singular Gramian: pure decay
    std::string note;
    Eigen::VectorXd mid_state;       // u(a_j + τ_j), double copy for audit
};

struct CostLedger {
    std::vector<StageRecord> stages;
    double total_cost = 0;  // sqrt(Σ cost²)
    double norm_initial = 0, norm_terminal = 0;
    double tail = 0;
    bool all_modes_controlled = false;
};

struct LRResult {
    LRSchedule schedule;
    std::vector<ControlSignal> controls;
    CostLedger ledger;
    ModalHeatState terminal;
};

// Frequency-wise iteration: on [a_j, a_j+τ_j] a HUM control kills the
// projection of the current state onto K_j, then the system decays freely on
// [a_j+τ_j, a_{j+1}]. A stage without active modes (or with a singular
// Gramian) is pure decay and flagged in the ledger.
inline LRResult lr_control(const Eigen::VectorXd& lambda, const TraceSet& tr, double s, const ModalHeatState& u0,
                           double T, int stageCount, double rcond = 1e-12) {
    const int M = u0.M();
    LRResult res;
    res.schedule = lr_schedule(T, stageCount);
    res.ledger.norm_initial = u0.norm();
    ModalHeatState u = u0;
    double cost2 = 0;
    for (auto& st : res.schedule.stages) {
        for (int m = 0; m < M; ++m)
            if (lambda(m) <= st.threshold) st.active.push_back(m);
        StageRecord rec;
        rec.index = st.index;
        rec.active_modes = static_cast<int>(st.active.size());
        rec.norm_start = u.norm();
        rec.decay_factor = std::exp(-st.threshold * st.control);
        ModalHeatState mid;
        if (st.active.empty()) {
            rec.skipped = true;
            rec.note = "no modes below threshold";
            mid = evolve_heat(u, lambda, st.control);
        } else {
            try {
                auto h = hum_solve(lambda, tr, s, st.active, st.start, st.control, u, rcond);
                rec.truncated = h.diagnostics.truncated;
                rec.condition = h.diagnostics.condition;
                rec.cost = h.diagnostics.predicted_cost;
                rec.worst_case_cost = std::sqrt(worst_case_cost_squared(lambda, tr, s, st.active, st.control));
                mid = propagate_controlled(lambda, tr, s, u, h.control, st.start, st.start + st.control);
                res.controls.push_back(std::move(h.control));
            } catch (const convergence_error& e) {
                rec.skipped = true;
                rec.note = std::string("singular stage Gramian, pure decay substituted: ") + e.what();
                mid = evolve_heat(u, lambda, st.control);
            }
            for (int m : st.active)
                rec.projection_residual = std::max(rec.projection_residual, to_double(abs(mid.u(m))));
            if (rec.norm_start > 0) rec.projection_residual /= rec.norm_start;
        }
        rec.norm_mid = mid.norm();
        rec.mid_state = to_double(mid.u);
        u = evolve_heat(mid, lambda, st.control);
        rec.norm_end = u.norm();
        cost2 += rec.cost * rec.cost;
        if (static_cast<int>(st.active.size()) == M) res.ledger.all_modes_controlled = true;
        res.ledger.stages.push_back(rec);
    }
    res.ledger.tail = res.schedule.tail;
    res.terminal = evolve_heat(u, lambda, std::max(0.0, res.schedule.tail));
    res.terminal.time = T;
    res.ledger.norm_terminal = res.terminal.norm();
    res.ledger.total_cost = std::sqrt(cost2);
    return res;
}

} // namespace fraclab

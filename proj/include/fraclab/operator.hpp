#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "core.hpp"
#include "extended.hpp"
#include "special.hpp"

namespace fraclab {

inline constexpr std::uint32_t operator_scheme_version = 1;

struct OperatorPair {
    Eigen::MatrixXd stiffness;
    Eigen::MatrixXd mass;
    int n = 0;
    double h = 0, a = 0, b = 0, s = 0;
    std::uint32_t scheme_version = operator_scheme_version;
};

// Entries a_k = A_{i,i+k} of the piecewise-linear Galerkin stiffness on a
// uniform grid. The energy (C/2)∬(u(x)-u(y))(v(x)-v(y))|x-y|^{-1-2s} of two
// hats k cells apart equals
//     h^{1-2s}/π · Γ(2s-3) cos(π(2s-3)/2) · Δ⁴|m|^{3-2s} at m = k,
// where Δ⁴ is the centred fourth difference (1,-4,6,-4,1). At s = 1/2 the
// Γ pole and the vanishing cosine combine into 1/2 · Δ⁴(m² log|m|).
// The fourth difference cancels about 4 log10(k) digits, so it is evaluated in
// extended precision.
inline std::vector<double> stiffness_coefficients(double s, double h, int n) {
    if (!(s > 0.0 && s < 1.0)) throw domain_error("stiffness_coefficients: s must lie in (0,1)");
    const ext_real se(s);
    const bool half = (s == 0.5);
    const ext_real p = ext_real(3) - 2 * se;
    auto F = [&](long m) -> ext_real {
        if (m == 0) return ext_real(0);
        const ext_real am(std::labs(m));
        return half ? am * am * log(am) : pow(am, p);
    };
    ext_real pref;
    if (half) {
        pref = ext_real(0.5);
    } else {
        const ext_real pi = boost::math::constants::pi<ext_real>();
        pref = boost::math::tgamma(2 * se - 3) * cos(pi * (2 * se - 3) / 2);
    }
    pref *= pow(ext_real(h), 1 - 2 * se) / boost::math::constants::pi<ext_real>();
    std::vector<double> a(n);
    for (int k = 0; k < n; ++k) {
        const ext_real d4 = F(k - 2) - 4 * F(k - 1) + 6 * F(k) - 4 * F(k + 1) + F(k + 2);
        a[k] = to_double(pref * d4);
    }
    return a;
}

inline OperatorPair assemble_operator(const IntervalDomain& dom, const Mesh& mesh, const FracOrder& s) {
    const int n = mesh.n();
    if (n < 8) throw domain_error("assemble_operator: at least 8 interior nodes required");
    const double h = mesh.h();
    const auto a = stiffness_coefficients(s, h, n);

    OperatorPair op;
    op.n = n;
    op.h = h;
    op.a = dom.left();
    op.b = dom.right();
    op.s = s;
    op.stiffness.resize(n, n);
    op.mass.setZero(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) op.stiffness(i, j) = a[std::abs(i - j)];
    for (int i = 0; i < n; ++i) {
        op.mass(i, i) = 4.0 * h / 6.0;
        if (i + 1 < n) op.mass(i, i + 1) = op.mass(i + 1, i) = h / 6.0;
    }

    const double scale = op.stiffness.cwiseAbs().maxCoeff();
    const double asym = (op.stiffness - op.stiffness.transpose()).cwiseAbs().maxCoeff();
    if (!(asym <= 1e-10 * scale)) throw assembly_error("stiffness symmetry self-check failed");
    return op;
}

// Solves B x = r for the tridiagonal P1 mass matrix (Thomas algorithm).
inline Eigen::VectorXd mass_solve(const OperatorPair& op, const Eigen::VectorXd& r) {
    const int n = op.n;
    Eigen::VectorXd c(n), d(n);
    const double diag = op.mass(0, 0), off = n > 1 ? op.mass(0, 1) : 0.0;
    c(0) = off / diag;
    d(0) = r(0) / diag;
    for (int i = 1; i < n; ++i) {
        const double m = diag - off * c(i - 1);
        c(i) = off / m;
        d(i) = (r(i) - off * d(i - 1)) / m;
    }
    Eigen::VectorXd x(n);
    x(n - 1) = d(n - 1);
    for (int i = n - 2; i >= 0; --i) x(i) = d(i) - c(i) * x(i + 1);
    return x;
}

// Nodal values of B^{-1} A u, the discrete fractional Laplacian of a nodal field.
inline Eigen::VectorXd apply_discrete_fraclap(const OperatorPair& op, const Eigen::VectorXd& u) {
    return mass_solve(op, op.stiffness * u);
}

struct PointwiseOptions {
    double support_lo = -1.0;  // u vanishes outside [support_lo, support_hi]
    double support_hi = 1.0;
    std::vector<double> kinks;  // interior points where u is not smooth
    double tol = 1e-6;
    int max_halvings = 30;
};

// (-Δ)^s u(x) = C_{1,s} ∫_0^∞ (2u(x) - u(x+r) - u(x-r)) r^{-1-2s} dr.
// The near field r < ε is replaced by its second-order Taylor model
// D(ε) ε^{-2s} / (2-2s), the far field beyond the support by its closed form, and
// the remaining part is integrated segment by segment between kinks.
// ε is halved until two successive values agree to tol.
inline double pointwise_fraclap(const std::function<double(double)>& u, double x, const FracOrder& order,
                                const PointwiseOptions& opt = {}) {
    const double s = order;
    const double C = normalization_constant(s, 1);
    const double ux = u(x);
    auto D = [&](double r) { return 2.0 * ux - u(x + r) - u(x - r); };

    std::vector<double> breaks{std::abs(x - opt.support_lo), std::abs(x - opt.support_hi)};
    for (double k : opt.kinks) breaks.push_back(std::abs(x - k));
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::remove_if(breaks.begin(), breaks.end(), [](double r) { return !(r > 0.0); }), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
    const double R = std::max(std::abs(x - opt.support_lo), std::abs(x - opt.support_hi));

    boost::math::quadrature::tanh_sinh<double> ts;
    auto segment = [&](double lo, double hi) {
        if (!(hi > lo)) return 0.0;
        return ts.integrate([&](double r) { return D(r) * std::pow(r, -1.0 - 2.0 * s); }, lo, hi, 1e-13);
    };

    const double first = breaks.empty() ? R : breaks.front();
    // [eps0, first] is split geometrically so every piece sees a mild kernel.
    const double eps0 = 0.25 * std::min(first, 1.0);
    double far = 0.0;
    for (size_t i = 0; i + 1 < breaks.size(); ++i) far += segment(breaks[i], breaks[i + 1]);
    far += 2.0 * ux * std::pow(R, -2.0 * s) / (2.0 * s);
    far += segment(eps0, first);

    double eps = eps0, band = 0.0, prev = 0.0;
    for (int k = 0; k <= opt.max_halvings; ++k) {
        const double near = D(eps) * std::pow(eps, -2.0 * s) / (2.0 - 2.0 * s);
        const double value = C * (near + band + far);
        if (k > 0 && std::abs(value - prev) <= opt.tol * std::max(std::abs(value), 1e-300)) return value;
        if (k > 0 && value == prev) return value;
        prev = value;
        band += segment(eps / 2.0, eps);
        eps /= 2.0;
    }
    throw convergence_error("pointwise_fraclap: principal value did not stabilise under excision halving at x=" +
                            std::to_string(x));
}

// Binary container: 8-byte magic "FRACLOP1", uint32 scheme version, int64 n,
// doubles h a b s, then stiffness and mass as n·n little-endian doubles in
// column-major order.
inline void save_operator(const OperatorPair& op, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    const char magic[8] = {'F', 'R', 'A', 'C', 'L', 'O', 'P', '1'};
    out.write(magic, 8);
    out.write(reinterpret_cast<const char*>(&op.scheme_version), sizeof(std::uint32_t));
    const std::int64_t n = op.n;
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    for (double v : {op.h, op.a, op.b, op.s}) out.write(reinterpret_cast<const char*>(&v), sizeof v);
    out.write(reinterpret_cast<const char*>(op.stiffness.data()), sizeof(double) * n * n);
    out.write(reinterpret_cast<const char*>(op.mass.data()), sizeof(double) * n * n);
    if (!out) throw std::runtime_error("write failed for " + path);
}

inline OperatorPair load_operator(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "FRACLOP1", 8) != 0) throw std::runtime_error(path + " is not an operator container");
    OperatorPair op;
    in.read(reinterpret_cast<char*>(&op.scheme_version), sizeof(std::uint32_t));
    if (op.scheme_version != operator_scheme_version)
        throw std::runtime_error("unsupported operator scheme version " + std::to_string(op.scheme_version));
    std::int64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!in || n < 1 || n > (1 << 16)) throw std::runtime_error("corrupt operator header in " + path);
    op.n = static_cast<int>(n);
    for (double* v : {&op.h, &op.a, &op.b, &op.s}) in.read(reinterpret_cast<char*>(v), sizeof(double));
    op.stiffness.resize(n, n);
    op.mass.resize(n, n);
    in.read(reinterpret_cast<char*>(op.stiffness.data()), sizeof(double) * n * n);
    in.read(reinterpret_cast<char*>(op.mass.data()), sizeof(double) * n * n);
    if (!in) throw std::runtime_error("truncated operator container " + path);
    return op;
}

} // namespace fraclab

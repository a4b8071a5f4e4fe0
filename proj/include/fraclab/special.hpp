#pragma once

#include <boost/math/constants/constants.hpp>
#include <cmath>

#include "core.hpp"

namespace fraclab {

// C_{N,s} = s 2^{2s} Γ((2s+N)/2) / (π^{N/2} Γ(1-s)), the constant making the
// singular integral have Fourier symbol |ξ|^{2s}.
inline double normalization_constant(double s, int N = 1) {
    if (!(s > 0.0 && s < 1.0)) throw domain_error("normalization_constant: s must lie in (0,1)");
    if (N < 1) throw domain_error("normalization_constant: dimension must be positive");
    const double pi = boost::math::constants::pi<double>();
    return s * std::exp2(2.0 * s) * std::tgamma((2.0 * s + N) / 2.0) /
           (std::pow(pi, N / 2.0) * std::tgamma(1.0 - s));
}

// Γ(s)Γ(1+s), the constant in the integration-by-parts formula pairing the
// trace u/ρ^s with the singular trace v/ρ^{s-1}.
inline double duality_constant(double s) {
    if (!(s > 0.0 && s < 1.0)) throw domain_error("duality_constant: s must lie in (0,1)");
    return std::tgamma(s) * std::tgamma(1.0 + s);
}

// Interpolation exponent used by the minimal-time law for s in [1/4, 1/2).
inline double alpha_exponent(double s) {
    if (s >= 0.25 && s < 1.0 / 3.0) return 1.0 / s - 3.0;
    if (s >= 1.0 / 3.0 && s < 0.5) return 1.0 - 1.0 / (3.0 * s);
    throw domain_error("alpha_exponent: defined only for s in [1/4, 1/2)");
}

// Exponent γ in T0(J) = C λ_J^γ for the wave observability time.
inline double gamma_exponent(double s, int N = 1) {
    if (!(s > 0.0 && s < 1.0)) throw domain_error("gamma_exponent: s must lie in (0,1)");
    if (s > 0.5) return 1.0 - s;
    if (s == 0.5) return 1.0;
    if (s >= 0.25) return 1.0 + alpha_exponent(s) / 2.0;
    return N / s + 1.0;
}

} // namespace fraclab

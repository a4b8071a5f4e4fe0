#pragma once

#include <Eigen/Dense>
#include <vector>

#include "core.hpp"
#include "extended.hpp"

namespace fraclab {

// Boundary control f(x_p, t) = Σ_j c_j t_j(x_p) e^{-λ_j(t1 - t)} on [t0, t1],
// zero outside that window. Coefficients are kept in extended precision
// because HUM Gramians are far too ill-conditioned for a double round trip.
struct ControlSignal {
    ext_vector coefficients;
    Eigen::VectorXd eigenvalues;          // λ_j of the controlled modes
    std::vector<int> modes;               // 0-based mode index of each coefficient
    std::vector<BoundaryPoint> points;    // where the control acts (∂Ω⁺)
    std::vector<Eigen::VectorXd> traces;  // traces[p](k) = t_{modes[k]}(x_p)
    double t0 = 0, t1 = 0;

    int size() const { return static_cast<int>(coefficients.size()); }

    ext_real value(int p, double t) const {
        if (t < t0 || t > t1) return ext_real(0);
        ext_real v = 0;
        for (int k = 0; k < size(); ++k)
            v += coefficients(k) * ext_real(traces[p](k)) * exp(-ext_real(eigenvalues(k)) * ext_real(t1 - t));
        return v;
    }

    // ‖f‖²_{L²(∂Ω⁺×(t0,t1))} in closed form.
    ext_real norm_squared() const {
        ext_real acc = 0;
        const ext_real len(t1 - t0);
        for (size_t p = 0; p < points.size(); ++p)
            for (int i = 0; i < size(); ++i)
                for (int j = 0; j < size(); ++j) {
                    const ext_real S = ext_real(eigenvalues(i)) + ext_real(eigenvalues(j));
                    acc += coefficients(i) * coefficients(j) * ext_real(traces[p](i)) * ext_real(traces[p](j)) * len *
                           one_minus_exp_over(S * len);
                }
        return acc;
    }
};

} // namespace fraclab

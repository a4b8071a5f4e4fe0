#pragma once

// 50-digit binary floating point used wherever Gramians with condition numbers
// far beyond 1/eps have to be solved, plus the Eigen glue to use it in dense
// linear algebra.

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <limits>

namespace fraclab {

using ext_real = boost::multiprecision::number<boost::multiprecision::cpp_bin_float<50>,
                                               boost::multiprecision::et_off>;

} // namespace fraclab

namespace Eigen {

template <>
struct NumTraits<fraclab::ext_real> : GenericNumTraits<fraclab::ext_real> {
    using Real = fraclab::ext_real;
    using NonInteger = fraclab::ext_real;
    using Literal = fraclab::ext_real;
    using Nested = fraclab::ext_real;
    enum {
        IsComplex = 0,
        IsInteger = 0,
        IsSigned = 1,
        RequireInitialization = 1,
        ReadCost = 10,
        AddCost = 10,
        MulCost = 40
    };
    static Real epsilon() { return std::numeric_limits<Real>::epsilon(); }
    static Real dummy_precision() { return Real(1e-45); }
    static Real highest() { return (std::numeric_limits<Real>::max)(); }
    static Real lowest() { return std::numeric_limits<Real>::lowest(); }
    static int digits10() { return std::numeric_limits<Real>::digits10; }
    static int digits() { return std::numeric_limits<Real>::digits; }
    static Real infinity() { return std::numeric_limits<Real>::infinity(); }
    static Real quiet_NaN() { return std::numeric_limits<Real>::quiet_NaN(); }
};

} // namespace Eigen

namespace fraclab {

using ext_vector = Eigen::Matrix<ext_real, Eigen::Dynamic, 1>;
using ext_matrix = Eigen::Matrix<ext_real, Eigen::Dynamic, Eigen::Dynamic>;

inline double to_double(const ext_real& x) { return x.convert_to<double>(); }
inline double to_double(double x) { return x; }

inline Eigen::VectorXd to_double(const ext_vector& v) {
    Eigen::VectorXd out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = to_double(v(i));
    return out;
}

inline ext_vector to_ext(const Eigen::VectorXd& v) {
    ext_vector out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = ext_real(v(i));
    return out;
}

// (1 - e^{-x}) / x without cancellation, valid for x >= 0.
template <class Real>
Real one_minus_exp_over(const Real& x) {
    using std::expm1;
    using boost::multiprecision::expm1;
    if (x == Real(0)) return Real(1);
    return -expm1(-x) / x;
}

} // namespace fraclab

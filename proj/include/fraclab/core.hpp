#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace fraclab {

struct domain_error : std::domain_error {
    using std::domain_error::domain_error;
};

// Raised when an iterative numerical procedure fails to reach its tolerance.
struct convergence_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct assembly_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
    config_error(const std::string& field, const std::string& reason)
        : std::runtime_error(field + ": " + reason), field(field) {}
    std::string field;
};

enum class Regime { sub_half, half, super_half };

class FracOrder {
public:
    explicit FracOrder(double s) : s_(s) {
        if (!(s > 0.0 && s < 1.0)) throw domain_error("fractional order s must lie in (0,1), got " + std::to_string(s));
    }
    double value() const { return s_; }
    operator double() const { return s_; }
    Regime regime() const {
        if (s_ == 0.5) return Regime::half;
        return s_ < 0.5 ? Regime::sub_half : Regime::super_half;
    }

private:
    double s_;
};

inline const char* to_string(Regime r) {
    switch (r) {
    case Regime::sub_half: return "sub-half";
    case Regime::half: return "half";
    default: return "super-half";
    }
}

// One endpoint of the interval together with its multiplier weight x·ν.
struct BoundaryPoint {
    double x;
    double normal;  // outward normal, -1 at the left end and +1 at the right end
    double weight() const { return x * normal; }
    bool plus() const { return weight() > 0.0; }
};

class IntervalDomain {
public:
    IntervalDomain(double a, double b) : a_(a), b_(b) {
        if (!(a < b)) throw domain_error("interval requires left < right");
    }
    double left() const { return a_; }
    double right() const { return b_; }
    double length() const { return b_ - a_; }

    // Index 0 is the left end, index 1 the right end.
    std::vector<BoundaryPoint> boundary() const { return {{a_, -1.0}, {b_, 1.0}}; }
    std::vector<BoundaryPoint> plus_boundary() const {
        std::vector<BoundaryPoint> out;
        for (const auto& p : boundary())
            if (p.plus()) out.push_back(p);
        return out;
    }
    std::vector<BoundaryPoint> minus_boundary() const {
        std::vector<BoundaryPoint> out;
        for (const auto& p : boundary())
            if (!p.plus()) out.push_back(p);
        return out;
    }
    double distance_to_boundary(double x) const { return std::min(x - a_, b_ - x); }

private:
    double a_, b_;
};

class Mesh {
public:
    Mesh(const IntervalDomain& dom, int n) : a_(dom.left()), b_(dom.right()), n_(n) {
        if (n < 1) throw domain_error("mesh needs at least one interior node");
        h_ = (b_ - a_) / (n + 1);
        nodes_.resize(n);
        for (int i = 0; i < n; ++i) nodes_[i] = a_ + (i + 1) * h_;
    }
    int n() const { return n_; }
    double h() const { return h_; }
    double left() const { return a_; }
    double right() const { return b_; }
    const std::vector<double>& nodes() const { return nodes_; }
    double node(int i) const { return nodes_[i]; }

private:
    double a_, b_;
    int n_;
    double h_;
    std::vector<double> nodes_;
};

} // namespace fraclab

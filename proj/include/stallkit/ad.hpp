#pragma once

// Minimal reverse-mode differentiation. A Var either refers to a node on the
// thread's active tape or is a constant (index -1).

#include <cmath>
#include <vector>

namespace stallkit::ad {

struct Node {
    int a, b;
    double da, db;
};

class Tape {
public:
    std::vector<Node> nodes;

    int push(int a, double da, int b, double db)
    {
        nodes.push_back({a, b, da, db});
        return static_cast<int>(nodes.size()) - 1;
    }

    // adjoints of every node for output node `out`
    std::vector<double> adjoints(int out) const;

    static Tape*& active();
};

// Installs a fresh tape on this thread for the lifetime of the scope.
class TapeScope {
public:
    TapeScope();
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
    Tape& tape() { return tape_; }

private:
    Tape tape_;
    Tape* prev_;
};

struct Var {
    double v = 0.0;
    int i = -1;

    Var() = default;
    Var(double x) : v(x) {}
    Var(double x, int idx) : v(x), i(idx) {}

    static Var independent(double x)
    {
        return Var(x, Tape::active()->push(-1, 0.0, -1, 0.0));
    }
    Var& operator+=(const Var& o);
    Var& operator-=(const Var& o);
    Var& operator*=(const Var& o);
    Var& operator/=(const Var& o);
};

inline Var unary(double v, const Var& x, double dx)
{
    if (x.i < 0)
        return Var(v);
    return Var(v, Tape::active()->push(x.i, dx, -1, 0.0));
}

inline Var binary(double v, const Var& x, double dx, const Var& y, double dy)
{
    if (x.i < 0 && y.i < 0)
        return Var(v);
    if (x.i < 0)
        return Var(v, Tape::active()->push(y.i, dy, -1, 0.0));
    if (y.i < 0)
        return Var(v, Tape::active()->push(x.i, dx, -1, 0.0));
    return Var(v, Tape::active()->push(x.i, dx, y.i, dy));
}

inline Var operator+(const Var& x, const Var& y) { return binary(x.v + y.v, x, 1.0, y, 1.0); }
inline Var operator-(const Var& x, const Var& y) { return binary(x.v - y.v, x, 1.0, y, -1.0); }
inline Var operator*(const Var& x, const Var& y) { return binary(x.v * y.v, x, y.v, y, x.v); }
inline Var operator/(const Var& x, const Var& y)
{
    const double q = x.v / y.v;
    return binary(q, x, 1.0 / y.v, y, -q / y.v);
}
inline Var operator-(const Var& x) { return unary(-x.v, x, -1.0); }

inline Var& Var::operator+=(const Var& o) { return *this = *this + o; }
inline Var& Var::operator-=(const Var& o) { return *this = *this - o; }
inline Var& Var::operator*=(const Var& o) { return *this = *this * o; }
inline Var& Var::operator/=(const Var& o) { return *this = *this / o; }

inline Var exp(const Var& x)
{
    const double e = std::exp(x.v);
    return unary(e, x, e);
}
inline Var expm1(const Var& x) { return unary(std::expm1(x.v), x, std::exp(x.v)); }
inline Var log(const Var& x) { return unary(std::log(x.v), x, 1.0 / x.v); }
inline Var log1p(const Var& x) { return unary(std::log1p(x.v), x, 1.0 / (1.0 + x.v)); }
inline Var sqrt(const Var& x)
{
    const double s = std::sqrt(x.v);
    return unary(s, x, 0.5 / s);
}
inline Var erfc(const Var& x)
{
    return unary(std::erfc(x.v), x, -2.0 / std::sqrt(M_PI) * std::exp(-x.v * x.v));
}

inline double value(const Var& x) { return x.v; }

}  // namespace stallkit::ad

namespace stallkit {

inline double value(double x) { return x; }
using ad::value;

}  // namespace stallkit

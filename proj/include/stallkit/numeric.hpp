#pragma once

#include <cmath>
#include <type_traits>

#include "stallkit/ad.hpp"

namespace stallkit {

// Neumaier-compensated accumulator; plain sum for tape variables.
template <class T>
class Accum {
public:
    void add(const T& x)
    {
        if constexpr (std::is_same_v<T, double>) {
            const double t = sum_ + x;
            if (std::fabs(sum_) >= std::fabs(x))
                comp_ += (sum_ - t) + x;
            else
                comp_ += (x - t) + sum_;
            sum_ = t;
        } else {
            sum_ += x;
        }
    }
    T get() const
    {
        if constexpr (std::is_same_v<T, double>)
            return sum_ + comp_;
        else
            return sum_;
    }

private:
    T sum_ = T(0.0);
    double comp_ = 0.0;
};

// standard normal upper tail
inline double normal_q(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace stallkit

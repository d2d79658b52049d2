#pragma once

#include <boost/math/distributions/normal.hpp>

#include <cmath>

namespace segpower {

/// Standard Normal CDF via erfc, accurate far into both tails.
template <typename Scalar>
Scalar normal_cdf(Scalar x) {
    using std::erfc;
    using std::sqrt;
    return Scalar(0.5) * erfc(-x / sqrt(Scalar(2)));
}

template <typename Scalar>
Scalar normal_quantile(Scalar p) {
    return boost::math::quantile(boost::math::normal_distribution<Scalar>(), p);
}

}  // namespace segpower

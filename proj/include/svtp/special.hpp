/*
 * Copyright 2026 The svtp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */
#pragma once

#include <cmath>
#include <string>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "svtp/error.hpp"

// Special functions restricted to the positive half-line. Boost.Math does the
// numerical work; this layer owns the domain checks and the error type.

namespace svtp {

namespace detail {
inline void require_positive(double x, const char* fn) {
    if (!(x > 0.0) || !std::isfinite(x)) {
        throw DomainError(std::string(fn) + ": argument must be positive and finite, got " +
                          std::to_string(x));
    }
}
} // namespace detail

/// log Gamma(x) for x > 0.
inline double log_gamma(double x) {
    detail::require_positive(x, "log_gamma");
    return boost::math::lgamma(x);
}

/// Psi(x) = d/dx log Gamma(x) for x > 0.
inline double digamma(double x) {
    detail::require_positive(x, "digamma");
    return boost::math::digamma(x);
}

/// Psi'(x), needed for gradients with respect to degrees of freedom.
inline double trigamma(double x) {
    detail::require_positive(x, "trigamma");
    return boost::math::trigamma(x);
}

/**
 * Gamma(a, 1) quantile at the CDF level of x0 under Gamma(a0, 1). The tail
 * with the smaller probability is used so the level keeps full precision.
 */
inline double gamma_same_level(double a0, double x0, double a) {
    detail::require_positive(a0, "gamma_same_level");
    detail::require_positive(x0, "gamma_same_level");
    detail::require_positive(a, "gamma_same_level");
    if (a == a0) return x0;
    const double p = boost::math::gamma_p(a0, x0);
    return p < 0.5 ? boost::math::gamma_p_inv(a, p) : boost::math::gamma_q_inv(a, boost::math::gamma_q(a0, x0));
}

namespace detail {

inline double gamma_shape_derivative_stencil(double a, double x) {
    const bool lower = boost::math::gamma_p(a, x) < 0.5;
    const auto cdf = [&](double shape) {
        return lower ? boost::math::gamma_p(shape, x) : -boost::math::gamma_q(shape, x);
    };
    const double h = std::min(2e-3 * std::sqrt(a), 0.2 * a);
    const double dP = (8.0 * (cdf(a + h) - cdf(a - h)) - (cdf(a + 2.0 * h) - cdf(a - 2.0 * h))) / (12.0 * h);
    const double density = boost::math::gamma_p_derivative(a, x);
    if (!(density > 0.0)) return 0.0;
    return -dP / density;
}

} // namespace detail

/**
 * dx/da for x = P^{-1}(a, level) with the level held fixed, i.e.
 * -(dP/da)(a, x) / p(a, x). Uses the series
 * -sum_n x^{n+1} / (a)_{n+1} (log x - Psi(a + n + 1)); deep in the upper
 * tail, where that series cancels, a fourth-order stencil on the CDF.
 */
inline double gamma_quantile_shape_derivative(double a, double x) {
    detail::require_positive(a, "gamma_quantile_shape_derivative");
    detail::require_positive(x, "gamma_quantile_shape_derivative");
    if (x > a + 5.0 * std::sqrt(a) + 5.0) return detail::gamma_shape_derivative_stencil(a, x);
    const double lx = std::log(x);
    double w = x / a;
    double psi = boost::math::digamma(a + 1.0);
    double sum = w * (lx - psi);
    double sum_abs = std::abs(sum);
    for (int n = 1; n < 1000000; ++n) {
        const double an = a + n;
        w *= x / an;
        psi += 1.0 / an;
        const double term = w * (lx - psi);
        sum += term;
        sum_abs += std::abs(term);
        if (an > x && w * (1.0 + std::abs(lx - psi)) < 1e-17 * sum_abs) break;
    }
    return -sum;
}

} // namespace svtp

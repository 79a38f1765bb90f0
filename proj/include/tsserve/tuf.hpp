#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>

#include "tsserve/errors.hpp"

namespace tsserve {

/// Piecewise-linear time-utility function: flat at `beta` until the expected
/// response time `ert_s`, then declining with slope `alpha` (utility per second).
struct TimeUtilityFunction {
    double beta = 1.0;
    double alpha = -2.0;
    double ert_s = 1.0;

    constexpr TimeUtilityFunction() = default;
    constexpr TimeUtilityFunction(double beta_, double alpha_, double ert_)
        : beta(beta_), alpha(alpha_), ert_s(ert_) {}

    bool valid() const { return std::isfinite(beta) && alpha <= 0.0 && std::isfinite(alpha) && ert_s >= 0.0; }

    /// Time at which utility crosses zero (infinite for a flat function).
    double cutoff_s() const { return alpha == 0.0 ? INFINITY : ert_s - beta / alpha; }

    friend bool operator==(const TimeUtilityFunction&, const TimeUtilityFunction&) = default;
};

inline TimeUtilityFunction checked_tuf(double beta, double alpha, double ert_s) {
    TimeUtilityFunction f{beta, alpha, ert_s};
    if (!f.valid()) {
        throw ConfigError("invalid time-utility function: require finite beta, alpha <= 0, ert >= 0");
    }
    return f;
}

/// Utility of a response delivered `t` seconds after the request arrived.
inline double eval_tuf(const TimeUtilityFunction& f, double t) {
    return std::min(f.beta, f.alpha * (t - f.ert_s) + f.beta);
}

/// Variant used for suspended generations: deadline at zero waiting, negative
/// waiting (next segment ready before the previous action ends) clipped to zero.
inline double eval_tuf_suspended(const TimeUtilityFunction& f, double t) {
    return std::min(f.beta, f.alpha * std::max(t, 0.0) + f.beta);
}

enum class UrgencyKind { Normal, Urgent };

struct UrgencyClass {
    UrgencyKind kind = UrgencyKind::Normal;
    TimeUtilityFunction tuf{};

    static constexpr TimeUtilityFunction normal_default() { return {1.0, -2.0, 1.0}; }
    static constexpr TimeUtilityFunction urgent_default() { return {2.0, -6.67, 0.2}; }

    static UrgencyClass normal() { return {UrgencyKind::Normal, normal_default()}; }
    static UrgencyClass urgent() { return {UrgencyKind::Urgent, urgent_default()}; }
};

inline std::string_view to_string(UrgencyKind k) { return k == UrgencyKind::Urgent ? "urgent" : "normal"; }

inline UrgencyKind parse_urgency_kind(std::string_view s) {
    if (s == "urgent" || s == "Urgent") return UrgencyKind::Urgent;
    if (s == "normal" || s == "Normal") return UrgencyKind::Normal;
    throw ConfigError("unknown urgency kind '" + std::string(s) + "'");
}

}  // namespace tsserve

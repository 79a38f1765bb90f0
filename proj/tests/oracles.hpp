#pragma once

// Reference computations for tests. Written from the definitions, without
// calling into the library code they check.

#include <algorithm>
#include <cmath>
#include <vector>

namespace testoracle {

inline double tuf_piecewise(double beta, double alpha, double ert, double t) {
    if (t <= ert) return beta;
    return beta + alpha * (t - ert);
}

inline double tuf_suspended_piecewise(double beta, double alpha, double t) {
    if (t <= 0.0) return beta;
    return beta + alpha * t;
}

/// Priority of a queued segment from its raw inputs.
inline double priority(bool first, double beta, double alpha, double ert, double waited, double slack_s, double gen_s) {
    const double num = first ? tuf_piecewise(beta, alpha, ert, waited) : tuf_suspended_piecewise(beta, alpha, waited);
    return num / (gen_s * slack_s);
}

struct Action {
    double start;
    double end;
};

/// Response, waiting and completion time of one request from its action spans.
struct Latencies {
    double response;
    double waiting;
    double completion;
};

inline Latencies latencies(double arrival, const std::vector<Action>& actions) {
    Latencies l{actions.front().start - arrival, 0.0, actions.back().end - arrival};
    double prev = arrival;
    for (std::size_t k = 0; k < actions.size(); ++k) {
        const double gap = actions[k].start - prev;
        l.waiting += k == 0 ? gap : std::max(0.0, gap);
        prev = actions[k].end;
    }
    return l;
}

}  // namespace testoracle

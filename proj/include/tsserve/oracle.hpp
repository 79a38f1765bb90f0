#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsserve/errors.hpp"
#include "tsserve/metrics.hpp"
#include "tsserve/simcore.hpp"
#include "tsserve/tuf.hpp"
#include "tsserve/workload.hpp"

namespace tsserve::oracle {

inline constexpr int kMaxRequests = 3;
inline constexpr int kMaxSegments = 3;
inline constexpr int kMaxHorizon = 64;

struct TinySegment {
    int gen = 1;   // generation ticks
    int exec = 1;  // action ticks
};

struct TinyRequest {
    int arrival = 0;
    TimeUtilityFunction tuf{};
    std::vector<TinySegment> segments;
};

/// Single-server instance on an integer tick grid.
struct TinyInstance {
    double tick_s = 0.01;
    int horizon = 0;
    bool allow_idle = true;
    std::vector<TinyRequest> requests;
    std::string name;

    /// True when every TUF is non-increasing in lateness.
    bool monotone() const {
        return std::all_of(requests.begin(), requests.end(), [](const auto& r) { return r.tuf.alpha <= 0.0; });
    }

    void check_bounds() const {
        if (requests.size() > kMaxRequests)
            throw InstanceTooLarge(std::to_string(requests.size()) + " requests (max " + std::to_string(kMaxRequests) + ")");
        if (horizon > kMaxHorizon || horizon < 0)
            throw InstanceTooLarge("horizon " + std::to_string(horizon) + " ticks (max " + std::to_string(kMaxHorizon) + ")");
        for (const auto& r : requests) {
            if (r.segments.empty() || r.segments.size() > kMaxSegments)
                throw InstanceTooLarge("request with " + std::to_string(r.segments.size()) + " segments");
            if (r.arrival < 0) throw ConfigError("negative arrival tick");
            for (const auto& s : r.segments)
                if (s.gen < 1 || s.exec < 0) throw ConfigError("segment ticks must be gen >= 1, exec >= 0");
        }
    }
};

inline TinyInstance instance_from_json(const nlohmann::json& j) {
    TinyInstance inst;
    inst.tick_s = j.value("tick_ms", 10.0) / 1000.0;
    inst.horizon = j.at("horizon").get<int>();
    inst.allow_idle = j.value("allow_idle", true);
    inst.name = j.value("name", std::string{});
    for (const auto& rj : j.at("requests")) {
        TinyRequest r;
        r.arrival = rj.value("arrival", 0);
        const auto& t = rj.at("tuf");
        r.tuf = {t.at("beta").get<double>(), t.at("alpha").get<double>(), t.at("ert_s").get<double>()};
        for (const auto& sj : rj.at("segments")) r.segments.push_back({sj.at("gen").get<int>(), sj.at("exec").get<int>()});
        inst.requests.push_back(std::move(r));
    }
    return inst;
}

inline nlohmann::json instance_to_json(const TinyInstance& inst) {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : inst.requests) {
        nlohmann::json segs = nlohmann::json::array();
        for (const auto& s : r.segments) segs.push_back({{"gen", s.gen}, {"exec", s.exec}});
        rs.push_back({{"arrival", r.arrival},
                      {"tuf", {{"beta", r.tuf.beta}, {"alpha", r.tuf.alpha}, {"ert_s", r.tuf.ert_s}}},
                      {"segments", segs}});
    }
    nlohmann::json j = {{"tick_ms", inst.tick_s * 1000.0},
                        {"horizon", inst.horizon},
                        {"allow_idle", inst.allow_idle},
                        {"requests", rs}};
    if (!inst.name.empty()) j["name"] = inst.name;
    return j;
}

/// Generation start tick of every segment, indexed [request][segment].
struct Schedule {
    std::vector<std::vector<int>> start;
    friend bool operator==(const Schedule&, const Schedule&) = default;
};

inline nlohmann::json schedule_to_json(const Schedule& s) { return s.start; }

struct RequestOutcome {
    std::vector<int> action_start;
    std::vector<int> action_end;
    std::vector<int> waits;
    int completion = 0;
    double first_utility = 0.0;
    double objective = 0.0;
};

inline void check_feasible(const TinyInstance& inst, const Schedule& s) {
    if (s.start.size() != inst.requests.size()) throw InfeasibleSchedule("schedule covers the wrong number of requests");
    std::vector<std::pair<int, int>> busy;
    for (std::size_t i = 0; i < inst.requests.size(); ++i) {
        const auto& r = inst.requests[i];
        if (s.start[i].size() != r.segments.size()) throw InfeasibleSchedule("request " + std::to_string(i) + " segment count");
        int ready = r.arrival;
        for (std::size_t k = 0; k < r.segments.size(); ++k) {
            const int st = s.start[i][k];
            if (st < ready) throw InfeasibleSchedule("segment starts before it is ready");
            const int end = st + r.segments[k].gen;
            if (end > inst.horizon) throw InfeasibleSchedule("segment runs past the horizon");
            busy.emplace_back(st, end);
            ready = end;
        }
    }
    std::sort(busy.begin(), busy.end());
    for (std::size_t i = 1; i < busy.size(); ++i)
        if (busy[i].first < busy[i - 1].second) throw InfeasibleSchedule("segments overlap on the server");
}

/// Action timing: an action starts once its segment is generated and the
/// previous action of the same request has ended.
inline std::vector<RequestOutcome> evaluate(const TinyInstance& inst, const Schedule& s) {
    std::vector<RequestOutcome> out(inst.requests.size());
    for (std::size_t i = 0; i < inst.requests.size(); ++i) {
        const auto& r = inst.requests[i];
        auto& o = out[i];
        int prev_end = r.arrival;
        for (std::size_t k = 0; k < r.segments.size(); ++k) {
            const int g_end = s.start[i][k] + r.segments[k].gen;
            const int a = k == 0 ? g_end : std::max(g_end, prev_end);
            const int w = a - prev_end;
            const double wt = w * inst.tick_s;
            o.objective += k == 0 ? eval_tuf(r.tuf, wt) : eval_tuf_suspended(r.tuf, wt);
            if (k == 0) o.first_utility = eval_tuf(r.tuf, wt);
            o.action_start.push_back(a);
            o.waits.push_back(w);
            prev_end = a + r.segments[k].exec;
            o.action_end.push_back(prev_end);
        }
        o.completion = prev_end - r.arrival;
    }
    return out;
}

inline double schedule_objective(const TinyInstance& inst, const Schedule& s) {
    check_feasible(inst, s);
    double total = 0.0;
    for (const auto& o : evaluate(inst, s)) total += o.objective;
    return total;
}

/// Depth-first enumeration of every feasible schedule, in a fixed order.
inline void for_each_schedule(const TinyInstance& inst, const std::function<void(const Schedule&)>& visit) {
    inst.check_bounds();
    const std::size_t n = inst.requests.size();
    Schedule cur;
    cur.start.resize(n);
    std::vector<std::size_t> next(n, 0);
    int remaining = 0;
    for (const auto& r : inst.requests)
        for (const auto& sg : r.segments) remaining += sg.gen;

    std::function<void(int, int)> dfs = [&](int t, int left) {
        if (left == 0) {
            visit(cur);
            return;
        }
        if (t + left > inst.horizon) return;
        bool any_ready = false;
        int next_arrival = inst.horizon + 1;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& r = inst.requests[i];
            if (next[i] >= r.segments.size()) continue;
            if (r.arrival > t) {
                next_arrival = std::min(next_arrival, r.arrival);
                continue;
            }
            any_ready = true;
            const int g = r.segments[next[i]].gen;
            cur.start[i].push_back(t);
            ++next[i];
            dfs(t + g, left - g);
            --next[i];
            cur.start[i].pop_back();
        }
        if (inst.allow_idle)
            dfs(t + 1, left);
        else if (!any_ready && next_arrival <= inst.horizon)
            dfs(next_arrival, left);
    };
    dfs(0, remaining);
}

inline std::vector<Schedule> enumerate_schedules(const TinyInstance& inst) {
    std::vector<Schedule> all;
    for_each_schedule(inst, [&](const Schedule& s) { all.push_back(s); });
    return all;
}

struct Counterexample {
    Schedule argmax;
    Schedule dominating;
    std::vector<int> argmax_completion;
    std::vector<int> dominating_completion;
    std::vector<double> argmax_first_utility;
    std::vector<double> dominating_first_utility;
};

struct ParetoReport {
    std::string name;
    long schedules = 0;
    double best_objective = 0.0;
    int argmax_count = 0;
    int argmax_vectors = 0;  // distinct (completion, utility) vectors among the argmax
    bool hypothesis_violated = false;
    std::vector<Counterexample> counterexamples;

    bool ok() const { return counterexamples.empty(); }
    /// True when no objective-maximizing schedule escapes domination.
    bool every_argmax_dominated() const {
        return argmax_vectors > 0 && static_cast<int>(counterexamples.size()) == argmax_vectors;
    }
};

namespace detail {
struct Vec {
    std::vector<int> completion;
    std::vector<double> utility;
    auto operator<=>(const Vec&) const = default;
};

/// True when `b` is at least as good as `a` for every request and strictly better for one.
inline bool dominates(const Vec& b, const Vec& a, double tol) {
    bool strict = false;
    for (std::size_t i = 0; i < a.completion.size(); ++i) {
        if (b.completion[i] > a.completion[i] || b.utility[i] < a.utility[i] - tol) return false;
        if (b.completion[i] < a.completion[i] || b.utility[i] > a.utility[i] + tol) strict = true;
    }
    return strict;
}
}  // namespace detail

/// Checks every objective-maximizing schedule against all feasible schedules
/// for Pareto dominance in (completion time, first-segment utility).
inline ParetoReport pareto_check(const TinyInstance& inst, double tol = 1e-9) {
    ParetoReport rep;
    rep.name = inst.name;
    rep.hypothesis_violated = !inst.monotone();
    std::map<detail::Vec, Schedule> vectors;
    std::vector<std::pair<double, detail::Vec>> best;
    double best_obj = -std::numeric_limits<double>::infinity();
    std::map<detail::Vec, Schedule> argmax_examples;

    for_each_schedule(inst, [&](const Schedule& s) {
        ++rep.schedules;
        const auto outs = evaluate(inst, s);
        detail::Vec v;
        double obj = 0.0;
        for (const auto& o : outs) {
            v.completion.push_back(o.completion);
            v.utility.push_back(o.first_utility);
            obj += o.objective;
        }
        vectors.try_emplace(v, s);
        if (obj > best_obj + tol) {
            best_obj = obj;
            argmax_examples.clear();
            rep.argmax_count = 0;
        }
        if (obj >= best_obj - tol) {
            ++rep.argmax_count;
            argmax_examples.try_emplace(v, s);
        }
    });
    if (rep.schedules == 0) return rep;
    rep.best_objective = best_obj;
    rep.argmax_vectors = static_cast<int>(argmax_examples.size());
    for (const auto& [av, as] : argmax_examples) {
        for (const auto& [v, s] : vectors) {
            if (!detail::dominates(v, av, tol)) continue;
            rep.counterexamples.push_back({as, s, av.completion, v.completion, av.utility, v.utility});
            break;
        }
    }
    return rep;
}

inline nlohmann::json report_to_json(const ParetoReport& r) {
    nlohmann::json ce = nlohmann::json::array();
    for (const auto& c : r.counterexamples)
        ce.push_back({{"argmax", schedule_to_json(c.argmax)},
                      {"dominating", schedule_to_json(c.dominating)},
                      {"argmax_completion", c.argmax_completion},
                      {"dominating_completion", c.dominating_completion},
                      {"argmax_first_utility", c.argmax_first_utility},
                      {"dominating_first_utility", c.dominating_first_utility}});
    return {{"name", r.name},
            {"schedules", r.schedules},
            {"best_objective", r.best_objective},
            {"argmax_count", r.argmax_count},
            {"hypothesis_violated", r.hypothesis_violated},
            {"counterexamples", ce}};
}

struct RandomInstanceParams {
    int max_requests = 3;
    int max_segments = 3;
    int max_gen = 3;
    int max_exec = 4;
    int max_arrival = 3;
    int max_slack = 3;
};

/// Random valid instance with strictly decreasing post-deadline utility.
inline TinyInstance random_instance(std::mt19937_64& rng, const RandomInstanceParams& p = {}) {
    auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    auto real = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    TinyInstance inst;
    inst.allow_idle = true;
    const int n = uni(1, p.max_requests);
    int total_gen = 0;
    int max_arr = 0;
    for (int i = 0; i < n; ++i) {
        TinyRequest r;
        r.arrival = uni(0, p.max_arrival);
        max_arr = std::max(max_arr, r.arrival);
        r.tuf = {real(0.5, 2.0), -real(0.5, 10.0), uni(0, 8) * inst.tick_s};
        const int k = uni(1, p.max_segments);
        for (int j = 0; j < k; ++j) {
            r.segments.push_back({uni(1, p.max_gen), uni(1, p.max_exec)});
            total_gen += r.segments.back().gen;
        }
        inst.requests.push_back(std::move(r));
    }
    inst.horizon = std::min(kMaxHorizon, total_gen + max_arr + uni(0, p.max_slack));
    return inst;
}

/// Builds a trace library, arrival list and replay config that reproduce the
/// schedule in the simulator: one decode iteration per tick, no overheads.
struct ReplaySetup {
    TraceLibrary library;
    std::vector<ArrivalEvent> arrivals;
    SimConfig config;
};

inline ReplaySetup make_replay(const TinyInstance& inst, const Schedule& s) {
    check_feasible(inst, s);
    ReplaySetup rs;
    auto& e = rs.config.engine;
    e.decode_ms_per_token = inst.tick_s * 1000.0;
    e.prefill_ms_per_prompt_token = 0.0;
    e.batch_slowdown_gamma = 0.0;
    e.swap_restore_ms = 0.0;
    e.reprefill_ms = 0.0;
    e.detok_ms_per_token = 0.0;
    e.stop_check_ms_per_token = 0.0;
    e.network_latency_ms = 0.0;
    rs.config.scheduler.policy = PolicyKind::Replay;
    rs.config.scheduler.max_segment_tokens = kMaxHorizon;
    rs.config.scheduler.adaptive = false;
    rs.config.scheduler.max_batch_size = 1;
    rs.config.drain_s = 10.0;
    for (std::size_t i = 0; i < inst.requests.size(); ++i) {
        const auto& r = inst.requests[i];
        TaskTrace t;
        t.trace_id = static_cast<int>(i) + 1;
        t.category = TaskCategory::DroneNormal;
        t.prompt_tokens = 1;
        t.urgency = {UrgencyKind::Normal, r.tuf};
        for (std::size_t k = 0; k < r.segments.size(); ++k) {
            SkillCall c;
            c.name = "r" + std::to_string(i) + "s" + std::to_string(k) + std::string(static_cast<std::size_t>(r.segments[k].gen), '_');
            c.token_count = r.segments[k].gen;
            t.plan.push_back(c);
            rs.library.exec_model[c.name] = ExecProfile::constant(r.segments[k].exec * inst.tick_s);
        }
        rs.library.traces.push_back(std::move(t));
    }
    std::vector<std::size_t> order(inst.requests.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return inst.requests[a].arrival < inst.requests[b].arrival; });
    // Simulator request ids follow arrival order.
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const std::size_t i = order[rank];
        rs.arrivals.push_back({inst.requests[i].arrival * inst.tick_s, static_cast<int>(i), static_cast<int>(i) + 1,
                               static_cast<int>(rank)});
        for (std::size_t k = 0; k < inst.requests[i].segments.size(); ++k)
            rs.config.replay_starts[{static_cast<int>(rank), static_cast<int>(k)}] = s.start[i][k] * inst.tick_s;
    }
    return rs;
}

/// Replays the schedule through the simulator and returns the realized
/// segment-utility sum computed from the event log.
inline double replay_objective(const TinyInstance& inst, const Schedule& s, SimResult* out = nullptr) {
    if (inst.requests.empty()) return 0.0;
    ReplaySetup rs = make_replay(inst, s);
    SimResult r = run(rs.config, rs.library, rs.arrivals);
    if (!r.quiescent) throw Error("replay did not finish");
    const double total = segment_objective(compute_all_metrics(r.log));
    if (out) *out = std::move(r);
    return total;
}

}  // namespace tsserve::oracle

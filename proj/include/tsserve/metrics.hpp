#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tsserve/errors.hpp"
#include "tsserve/event_log.hpp"
#include "tsserve/tuf.hpp"

namespace tsserve {

struct SegmentTiming {
    double action_start_s = 0.0;
    double action_end_s = 0.0;
    double waiting_s = 0.0;
    double exec_s = 0.0;
};

struct RequestMetrics {
    int request_id = -1;
    int agent_id = -1;
    int trace_id = -1;
    std::string task_type;
    UrgencyKind urgency = UrgencyKind::Normal;
    TimeUtilityFunction tuf{};
    double arrival_s = 0.0;
    double response_time_s = 0.0;
    double waiting_time_s = 0.0;
    double completion_time_s = 0.0;
    double realized_utility = 0.0;
    /// TUF0 at the first wait plus TUF1 at every later wait.
    double segment_utility = 0.0;
    std::vector<SegmentTiming> segments;
};

namespace detail {
struct RequestEvents {
    const SimEvent* arrival = nullptr;
    const SimEvent* complete = nullptr;
    std::map<int, const SimEvent*> starts;
    std::map<int, const SimEvent*> ends;
};

inline std::map<int, RequestEvents> index_requests(const EventLog& log) {
    std::map<int, RequestEvents> idx;
    for (const auto& e : log.events) {
        if (e.request_id < 0) continue;
        auto& r = idx[e.request_id];
        switch (e.kind) {
            case EventKind::Arrival: r.arrival = &e; break;
            case EventKind::RequestComplete: r.complete = &e; break;
            case EventKind::ActionStart: r.starts[e.payload.at("segment").get<int>()] = &e; break;
            case EventKind::ActionEnd: r.ends[e.payload.at("segment").get<int>()] = &e; break;
            default: break;
        }
    }
    return idx;
}

inline RequestMetrics build_metrics(int id, const RequestEvents& ev) {
    if (!ev.arrival) throw IncompleteRequest("request " + std::to_string(id) + " has no Arrival event");
    if (!ev.complete || ev.complete->payload.value("status", std::string("ok")) != "ok")
        throw IncompleteRequest("request " + std::to_string(id) + " did not complete");
    const auto& ap = ev.arrival->payload;
    RequestMetrics m;
    m.request_id = id;
    m.agent_id = ev.arrival->agent_id;
    m.trace_id = ap.at("trace_id").get<int>();
    m.task_type = std::to_string(m.trace_id);
    m.urgency = parse_urgency_kind(ap.at("urgency").get<std::string>());
    m.tuf = {ap.at("beta").get<double>(), ap.at("alpha").get<double>(), ap.at("ert_s").get<double>()};
    m.arrival_s = ev.arrival->time;
    if (ev.starts.empty() || ev.starts.size() != ev.ends.size())
        throw IncompleteRequest("request " + std::to_string(id) + " has unmatched action events");
    double prev_end = m.arrival_s;
    int k = 0;
    for (const auto& [seg, start] : ev.starts) {
        const auto end = ev.ends.find(seg);
        if (seg != k || end == ev.ends.end())
            throw IncompleteRequest("request " + std::to_string(id) + " has a gap in its segments");
        SegmentTiming s;
        s.action_start_s = start->time;
        s.action_end_s = end->second->time;
        s.waiting_s = k == 0 ? s.action_start_s - m.arrival_s : std::max(0.0, s.action_start_s - prev_end);
        s.exec_s = s.action_end_s - s.action_start_s;
        m.segment_utility += k == 0 ? eval_tuf(m.tuf, s.waiting_s) : eval_tuf_suspended(m.tuf, s.waiting_s);
        m.waiting_time_s += s.waiting_s;
        prev_end = s.action_end_s;
        m.segments.push_back(s);
        ++k;
    }
    m.response_time_s = m.segments.front().waiting_s;
    m.completion_time_s = m.segments.back().action_end_s - m.arrival_s;
    m.realized_utility = eval_tuf(m.tuf, m.response_time_s);
    return m;
}
}  // namespace detail

inline RequestMetrics compute_request_metrics(const EventLog& log, int request_id) {
    const auto idx = detail::index_requests(log);
    const auto it = idx.find(request_id);
    if (it == idx.end()) throw IncompleteRequest("request " + std::to_string(request_id) + " not in log");
    return detail::build_metrics(request_id, it->second);
}

struct IncompleteRecord {
    int request_id = -1;
    std::string task_type;
    UrgencyKind urgency = UrgencyKind::Normal;
};

struct LogMetrics {
    std::vector<RequestMetrics> completed;
    std::vector<IncompleteRecord> incomplete;
};

/// Metrics for every request in the log; unfinished or aborted ones are listed separately.
inline LogMetrics compute_all_metrics(const EventLog& log) {
    LogMetrics out;
    for (const auto& [id, ev] : detail::index_requests(log)) {
        if (!ev.arrival) continue;
        try {
            out.completed.push_back(detail::build_metrics(id, ev));
        } catch (const IncompleteRequest&) {
            const auto& ap = ev.arrival->payload;
            out.incomplete.push_back({id, std::to_string(ap.at("trace_id").get<int>()),
                                      parse_urgency_kind(ap.at("urgency").get<std::string>())});
        }
    }
    return out;
}

struct GroupStats {
    std::string group;
    int n = 0;
    int dropped = 0;
    double mean_utility = 0.0;
    double var_utility = 0.0;
    double total_utility = 0.0;
    double mean_segment_utility = 0.0;
    double mean_response_s = 0.0;
    double mean_waiting_s = 0.0;
    double mean_completion_s = 0.0;
};

enum class GroupBy { TaskType, Urgency, All };

inline std::string group_key(const RequestMetrics& m, GroupBy g) {
    switch (g) {
        case GroupBy::TaskType: return m.task_type;
        case GroupBy::Urgency: return std::string(to_string(m.urgency));
        case GroupBy::All: return "all";
    }
    return "all";
}

namespace detail {
inline bool numeric_less(const std::string& a, const std::string& b) {
    const bool da = !a.empty() && std::all_of(a.begin(), a.end(), ::isdigit);
    const bool db = !b.empty() && std::all_of(b.begin(), b.end(), ::isdigit);
    if (da && db) return a.size() != b.size() ? a.size() < b.size() : a < b;
    if (da != db) return da;
    return a < b;
}
}  // namespace detail

/// Per-group means. Groups are ordered numerically when the keys are trace ids.
inline std::vector<GroupStats> aggregate(const LogMetrics& lm, GroupBy by) {
    std::map<std::string, GroupStats, decltype(&detail::numeric_less)> groups(&detail::numeric_less);
    std::map<std::string, std::vector<double>> utils;
    for (const auto& m : lm.completed) {
        const auto key = group_key(m, by);
        auto& g = groups[key];
        g.group = key;
        ++g.n;
        g.total_utility += m.realized_utility;
        g.mean_segment_utility += m.segment_utility;
        g.mean_response_s += m.response_time_s;
        g.mean_waiting_s += m.waiting_time_s;
        g.mean_completion_s += m.completion_time_s;
        utils[key].push_back(m.realized_utility);
    }
    for (const auto& r : lm.incomplete) {
        RequestMetrics probe;
        probe.task_type = r.task_type;
        probe.urgency = r.urgency;
        const auto key = group_key(probe, by);
        auto& g = groups[key];
        g.group = key;
        ++g.dropped;
    }
    std::vector<GroupStats> out;
    for (auto& [key, g] : groups) {
        if (g.n > 0) {
            const double n = g.n;
            g.mean_utility = g.total_utility / n;
            g.mean_segment_utility /= n;
            g.mean_response_s /= n;
            g.mean_waiting_s /= n;
            g.mean_completion_s /= n;
            double ss = 0.0;
            for (double u : utils[key]) ss += (u - g.mean_utility) * (u - g.mean_utility);
            g.var_utility = ss / n;
        }
        out.push_back(g);
    }
    return out;
}

inline std::vector<GroupStats> aggregate(const std::vector<RequestMetrics>& ms, GroupBy by) {
    return aggregate(LogMetrics{ms, {}}, by);
}

inline std::optional<GroupStats> find_group(const std::vector<GroupStats>& gs, const std::string& key) {
    for (const auto& g : gs)
        if (g.group == key) return g;
    return std::nullopt;
}

/// Sum of TUF0 at the first wait and TUF1 at later waits, over all completed requests.
inline double segment_objective(const LogMetrics& lm) {
    double s = 0.0;
    for (const auto& m : lm.completed) s += m.segment_utility;
    return s;
}

inline constexpr std::string_view kMetricsHeader =
    "policy,wid,task_type,n,mean_utility,mean_response_s,mean_waiting_s,dropped";

inline void write_metrics_rows(std::ostream& os, const std::string& policy, const std::string& wid,
                               const std::vector<GroupStats>& groups) {
    for (const auto& g : groups) {
        detail::write_csv_field(os, policy);
        os << ',';
        detail::write_csv_field(os, wid);
        os << ',';
        detail::write_csv_field(os, g.group);
        os << ',' << g.n << ',' << format_double(g.mean_utility) << ',' << format_double(g.mean_response_s) << ','
           << format_double(g.mean_waiting_s) << ',' << g.dropped << '\n';
    }
}

/// Full metrics table: one row per trace type, then the urgency groups and the overall row.
inline std::string metrics_csv(const std::string& policy, const std::string& wid, const LogMetrics& lm) {
    std::ostringstream os;
    os << kMetricsHeader << '\n';
    write_metrics_rows(os, policy, wid, aggregate(lm, GroupBy::TaskType));
    write_metrics_rows(os, policy, wid, aggregate(lm, GroupBy::Urgency));
    write_metrics_rows(os, policy, wid, aggregate(lm, GroupBy::All));
    return os.str();
}

}  // namespace tsserve

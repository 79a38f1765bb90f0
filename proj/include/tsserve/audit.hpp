#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tsserve/engine.hpp"
#include "tsserve/event_log.hpp"
#include "tsserve/scheduler.hpp"
#include "tsserve/simcore.hpp"
#include "tsserve/workload.hpp"

namespace tsserve {

struct AuditReport {
    std::map<std::string, std::vector<std::string>> violations;
    long events = 0;
    int requests = 0;

    bool ok() const {
        return std::all_of(violations.begin(), violations.end(), [](const auto& kv) { return kv.second.empty(); });
    }
    bool ok(const std::string& check) const {
        auto it = violations.find(check);
        return it == violations.end() || it->second.empty();
    }
    std::string summary() const {
        std::string s;
        for (const auto& [k, v] : violations) {
            if (v.empty()) continue;
            s += k + ": " + std::to_string(v.size()) + " (first: " + v.front() + ")\n";
        }
        return s.empty() ? "ok" : s;
    }
};

namespace detail {
struct AuditRequest {
    int agent = -1;
    int trace_id = -1;
    double arrival = 0.0;
    bool complete = false;
    bool ok_status = false;
    std::map<int, double> dispatch;
    std::map<int, std::string> text;
    std::map<int, double> start;
    std::map<int, double> end;
    double first_admit = -1.0;
};
}  // namespace detail

/// Replays a finished simulation log against the invariants every policy must hold.
inline AuditReport audit_log(const EventLog& log, const SimMeta& meta, const TraceLibrary& library,
                             double tol = 1e-9) {
    AuditReport rep;
    for (const char* c : {"clock", "agent_overlap", "action_order", "completion", "memory", "token_fidelity",
                          "single_active", "fcfs_order"})
        rep.violations[c];
    auto flag = [&](const char* check, std::string msg) { rep.violations[check].push_back(std::move(msg)); };

    std::map<int, detail::AuditRequest> reqs;
    std::map<int, std::vector<std::pair<double, double>>> agent_spans;
    std::map<int, double> open_action;
    std::map<int, int> active;  // request -> 1 while resident in the running batch
    std::map<int, std::shared_ptr<const TokenScript>> scripts;
    double last_t = -std::numeric_limits<double>::infinity();

    for (const auto& e : log.events) {
        ++rep.events;
        if (e.time < last_t) flag("clock", "event at " + format_double(e.time) + " after " + format_double(last_t));
        last_t = std::max(last_t, e.time);
        const auto& p = e.payload;
        auto rid = std::to_string(e.request_id);
        switch (e.kind) {
            case EventKind::Arrival: {
                auto& r = reqs[e.request_id];
                r.agent = e.agent_id;
                r.trace_id = p.at("trace_id").get<int>();
                r.arrival = e.time;
                break;
            }
            case EventKind::Resume: {
                auto& r = reqs[e.request_id];
                if (r.first_admit < 0) r.first_admit = e.time;
                if (active[e.request_id]++ != 0) flag("single_active", "request " + rid + " resumed while running");
                break;
            }
            case EventKind::Suspend: {
                if (--active[e.request_id] != 0) flag("single_active", "request " + rid + " suspended while not running");
                auto& r = reqs[e.request_id];
                const TaskTrace* t = library.find(r.trace_id);
                if (!t) break;
                auto& sc = scripts[r.trace_id];
                if (!sc) sc = std::make_shared<const TokenScript>(TokenScript::from_trace(*t));
                const auto n = p.at("snapshot_tokens").get<std::size_t>();
                std::vector<std::int32_t> ids;
                for (std::size_t i = 0; i < n && i < sc->tokens.size(); ++i) ids.push_back(sc->tokens[i].id);
                if (n > sc->tokens.size() || std::to_string(fnv1a_ids(ids)) != p.at("snapshot_hash").get<std::string>())
                    flag("token_fidelity", "request " + rid + " snapshot does not match the scripted prefix");
                break;
            }
            case EventKind::SegmentDispatched: {
                auto& r = reqs[e.request_id];
                const int k = p.at("segment").get<int>();
                if (r.dispatch.count(k)) flag("single_active", "request " + rid + " dispatched segment twice");
                if (!r.dispatch.empty() && r.dispatch.rbegin()->first != k - 1)
                    flag("single_active", "request " + rid + " skipped a segment index");
                r.dispatch[k] = e.time;
                r.text[k] = p.at("text").get<std::string>();
                if (p.value("last", false) && --active[e.request_id] != 0)
                    flag("single_active", "request " + rid + " finished generating while not running");
                break;
            }
            case EventKind::ActionStart: {
                auto& r = reqs[e.request_id];
                const int k = p.at("segment").get<int>();
                r.start[k] = e.time;
                if (open_action.count(e.agent_id)) flag("agent_overlap", "agent " + std::to_string(e.agent_id) + " started two actions");
                open_action[e.agent_id] = e.time;
                auto d = r.dispatch.find(k);
                if (d == r.dispatch.end() || e.time + tol < d->second + meta.network_latency_s)
                    flag("action_order", "request " + rid + " segment " + std::to_string(k) + " started before dispatch + network");
                if (k > 0) {
                    auto prev = r.end.find(k - 1);
                    if (prev == r.end.end() || e.time + tol < prev->second)
                        flag("action_order", "request " + rid + " segment " + std::to_string(k) + " started before its predecessor ended");
                }
                break;
            }
            case EventKind::ActionEnd: {
                auto& r = reqs[e.request_id];
                r.end[p.at("segment").get<int>()] = e.time;
                auto it = open_action.find(e.agent_id);
                if (it == open_action.end()) {
                    flag("agent_overlap", "agent " + std::to_string(e.agent_id) + " ended an action it never started");
                } else {
                    agent_spans[e.agent_id].push_back({it->second, e.time});
                    open_action.erase(it);
                }
                break;
            }
            case EventKind::RequestComplete: {
                auto& r = reqs[e.request_id];
                r.complete = true;
                r.ok_status = p.value("status", std::string("ok")) == "ok";
                if (active[e.request_id] != 0 && r.ok_status)
                    flag("single_active", "request " + rid + " completed while still running");
                break;
            }
            case EventKind::IterationDone: {
                const double cap = p.at("capacity_mb").get<double>();
                const double res = p.at("resident_mb").get<double>();
                const double free = p.at("free_mb").get<double>();
                if (res > cap + 1e-6 || free < -1e-6 || std::abs(res + free - cap) > 1e-6)
                    flag("memory", "resident " + format_double(res) + " free " + format_double(free) + " cap " + format_double(cap));
                break;
            }
            case EventKind::AdmissionRefused: break;
        }
    }

    for (auto& [id, r] : reqs) {
        ++rep.requests;
        if (!r.complete || !r.ok_status) continue;
        const std::string rid = std::to_string(id);
        if (const TaskTrace* t = library.find(r.trace_id)) {
            std::string joined;
            for (const auto& [k, s] : r.text) joined += s;
            if (joined != t->plan_text()) flag("token_fidelity", "request " + rid + " dispatched text differs from the plan");
        }
        if (r.start.size() != r.dispatch.size() || r.end.size() != r.dispatch.size()) {
            flag("completion", "request " + rid + " has unmatched action events");
            continue;
        }
        double sum = 0.0;
        double prev_end = r.arrival;
        for (const auto& [k, st] : r.start) {
            const double w = k == 0 ? st - r.arrival : std::max(0.0, st - prev_end);
            sum += w + (r.end.at(k) - st);
            prev_end = r.end.at(k);
        }
        const double completion = prev_end - r.arrival;
        if (std::abs(completion - sum) > tol * std::max(1.0, completion))
            flag("completion", "request " + rid + " C=" + format_double(completion) + " sum=" + format_double(sum));
    }

    for (auto& [agent, spans] : agent_spans) {
        std::sort(spans.begin(), spans.end());
        for (std::size_t i = 1; i < spans.size(); ++i)
            if (spans[i].first + tol < spans[i - 1].second)
                flag("agent_overlap", "agent " + std::to_string(agent) + " actions overlap at " + format_double(spans[i].first));
    }

    if (is_fcfs_order(meta.policy)) {
        std::vector<std::pair<double, int>> by_arrival;
        std::vector<std::pair<double, int>> by_admit;
        for (const auto& [id, r] : reqs) {
            if (r.first_admit < 0) continue;
            by_arrival.push_back({r.arrival, id});
            by_admit.push_back({r.first_admit, id});
        }
        std::sort(by_arrival.begin(), by_arrival.end());
        std::stable_sort(by_admit.begin(), by_admit.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        for (std::size_t i = 0; i < by_admit.size(); ++i)
            if (by_admit[i].second != by_arrival[i].second) {
                flag("fcfs_order", "admission #" + std::to_string(i) + " is request " + std::to_string(by_admit[i].second) +
                                       ", expected " + std::to_string(by_arrival[i].second));
                break;
            }
    }
    return rep;
}

inline AuditReport audit(const SimResult& r, const TraceLibrary& library) { return audit_log(r.log, r.meta, library); }

}  // namespace tsserve

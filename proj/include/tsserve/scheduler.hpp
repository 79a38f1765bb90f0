#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsserve/engine.hpp"
#include "tsserve/errors.hpp"
#include "tsserve/tuf.hpp"

namespace tsserve {

enum class PolicyKind { SegPUD, SegFCFS, SegEDF, FCFSBatch, StreamFCFS, Replay };

inline std::string_view to_string(PolicyKind p) {
    switch (p) {
        case PolicyKind::SegPUD: return "SegPUD";
        case PolicyKind::SegFCFS: return "SegFCFS";
        case PolicyKind::SegEDF: return "SegEDF";
        case PolicyKind::FCFSBatch: return "FCFSBatch";
        case PolicyKind::StreamFCFS: return "StreamFCFS";
        case PolicyKind::Replay: return "Replay";
    }
    return "?";
}

inline PolicyKind parse_policy(std::string_view s) {
    for (PolicyKind p : {PolicyKind::SegPUD, PolicyKind::SegFCFS, PolicyKind::SegEDF, PolicyKind::FCFSBatch,
                         PolicyKind::StreamFCFS}) {
        const auto name = to_string(p);
        if (s.size() == name.size() &&
            std::equal(s.begin(), s.end(), name.begin(), [](char a, char b) { return std::tolower(a) == std::tolower(b); }))
            return p;
    }
    throw UnknownPolicy(std::string(s));
}

/// Policies that suspend a generation at every segment boundary.
inline bool suspends_at_boundaries(PolicyKind p) {
    return p == PolicyKind::SegPUD || p == PolicyKind::SegFCFS || p == PolicyKind::SegEDF || p == PolicyKind::Replay;
}

/// Policies that look for segment boundaries at all (for suspension or streaming dispatch).
inline bool uses_stop_checker(PolicyKind p) { return p != PolicyKind::FCFSBatch; }

inline bool is_fcfs_order(PolicyKind p) {
    return p == PolicyKind::SegFCFS || p == PolicyKind::FCFSBatch || p == PolicyKind::StreamFCFS;
}

struct SchedulerConfig {
    PolicyKind policy = PolicyKind::SegPUD;
    double gen_estimate_s = 0.09;
    std::map<int, double> gen_estimate_overrides;  // by trace id
    double slack_floor_s = 0.001;
    double denom_floor_s2 = 1e-6;
    int speed_window = 5;
    int max_segment_tokens = 10;
    int max_batch_size = 16;
    /// Segmented policies: WCET/memory admission when true, fixed batch cap otherwise.
    bool adaptive = true;

    double gen_estimate_for(int trace_id) const {
        auto it = gen_estimate_overrides.find(trace_id);
        return it == gen_estimate_overrides.end() ? gen_estimate_s : it->second;
    }

    void validate() const {
        if (!(gen_estimate_s > 0.0)) throw ConfigError("gen_estimate_s must be > 0");
        for (const auto& [id, g] : gen_estimate_overrides)
            if (!(g > 0.0)) throw ConfigError("gen_estimate override for trace " + std::to_string(id) + " must be > 0");
        if (!(slack_floor_s > 0.0)) throw ConfigError("slack_floor_s must be > 0");
        if (!(denom_floor_s2 > 0.0)) throw ConfigError("denom_floor_s2 must be > 0");
        if (speed_window < 1) throw ConfigError("speed_window must be >= 1");
        if (max_segment_tokens < 1) throw ConfigError("max_segment_tokens must be >= 1");
        if (max_batch_size < 1) throw ConfigError("max_batch_size must be >= 1");
    }
};

inline SchedulerConfig scheduler_config_from_json(const nlohmann::json& j, SchedulerConfig c = {}) {
    try {
        if (j.contains("policy")) c.policy = parse_policy(j.at("policy").get<std::string>());
        c.gen_estimate_s = j.value("gen_estimate_s", c.gen_estimate_s);
        if (j.contains("gen_estimate_overrides"))
            for (const auto& [k, v] : j.at("gen_estimate_overrides").items()) c.gen_estimate_overrides[std::stoi(k)] = v.get<double>();
        c.slack_floor_s = j.value("slack_floor_s", c.slack_floor_s);
        c.denom_floor_s2 = j.value("denom_floor_s2", c.denom_floor_s2);
        c.speed_window = j.value("speed_window", c.speed_window);
        c.max_segment_tokens = j.value("max_segment_tokens", c.max_segment_tokens);
        c.max_batch_size = j.value("max_batch_size", c.max_batch_size);
        c.adaptive = j.value("adaptive", c.adaptive);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scheduler config: ") + e.what());
    }
    c.validate();
    return c;
}

/// One schedulable generation step: the next segment of a request.
struct QueuedTask {
    int request_id = 0;
    int agent_id = 0;
    int trace_id = 0;
    int segment_index = 0;
    double arrival_time = 0.0;
    double deadline = 0.0;
    TimeUtilityFunction tuf{};
    double gen_estimate_s = 0.09;
    double prev_action_end_estimate = 0.0;  // k > 0 only
    double priority = 0.0;
    double replay_start = 0.0;  // Replay policy only
};

inline QueuedTask make_initial_task(int request_id, int agent_id, int trace_id, double arrival,
                                    const TimeUtilityFunction& tuf, double gen_estimate_s) {
    QueuedTask t;
    t.request_id = request_id;
    t.agent_id = agent_id;
    t.trace_id = trace_id;
    t.segment_index = 0;
    t.arrival_time = arrival;
    t.deadline = arrival + tuf.ert_s;
    t.tuf = tuf;
    t.gen_estimate_s = gen_estimate_s;
    return t;
}

/// Task for segment k+1, due when the robot is expected to finish the work
/// already dispatched to it.
inline QueuedTask make_followup_task(const QueuedTask& prev, double prev_action_end_estimate) {
    QueuedTask t = prev;
    ++t.segment_index;
    t.prev_action_end_estimate = prev_action_end_estimate;
    t.deadline = prev_action_end_estimate;
    t.priority = 0.0;
    return t;
}

struct PriorityParams {
    double network_latency_s = 0.008;
    double slack_floor_s = 0.001;
    double denom_floor_s2 = 1e-6;
};

/// Waiting time the segment would see if its generation started at `t`.
inline double estimated_waiting(const QueuedTask& task, double t, double network_latency_s) {
    const double action_start = t + task.gen_estimate_s + network_latency_s;
    return task.segment_index == 0 ? action_start - task.arrival_time : action_start - task.prev_action_end_estimate;
}

/// Time left until the deadline once the segment is generated, floored.
inline double slack(const QueuedTask& task, double t, double floor_s = 0.001) {
    return std::max(floor_s, task.deadline - t - task.gen_estimate_s);
}

/// Potential utility density scaled by slack.
inline double priority(const QueuedTask& task, double t, const PriorityParams& p = {}) {
    const double w = estimated_waiting(task, t, p.network_latency_s);
    const double gain = task.segment_index == 0 ? eval_tuf(task.tuf, w) : eval_tuf_suspended(task.tuf, w);
    const double denom = std::max(p.denom_floor_s2, task.gen_estimate_s * slack(task, t, p.slack_floor_s));
    return gain / denom;
}

/// Larger is served first. The FCFS and EDF baselines keep the key of the
/// request's first segment for every later segment.
inline double policy_rank(PolicyKind policy, const QueuedTask& task, double t, const PriorityParams& p) {
    switch (policy) {
        case PolicyKind::SegPUD: return priority(task, t, p);
        case PolicyKind::SegEDF: return -(task.arrival_time + task.tuf.ert_s);
        case PolicyKind::SegFCFS:
        case PolicyKind::FCFSBatch:
        case PolicyKind::StreamFCFS: return -task.arrival_time;
        case PolicyKind::Replay: return -task.replay_start;
    }
    return 0.0;
}

/// Max-heap of queued tasks keyed by the cached policy rank; ties go to the
/// earlier arrival, then the lower request id.
class TaskQueue {
public:
    TaskQueue(PolicyKind policy, PriorityParams params) : policy_(policy), params_(params) {}

    bool empty() const { return heap_.empty(); }
    std::size_t size() const { return heap_.size(); }
    const std::vector<QueuedTask>& tasks() const { return heap_; }

    void push(QueuedTask task, double now) {
        task.priority = policy_rank(policy_, task, now, params_);
        heap_.push_back(task);
        std::push_heap(heap_.begin(), heap_.end(), worse);
    }

    void update_all_priorities(double now) {
        if (heap_.empty()) return;
        for (auto& t : heap_) t.priority = policy_rank(policy_, t, now, params_);
        std::make_heap(heap_.begin(), heap_.end(), worse);
    }

    const QueuedTask& top() const { return heap_.front(); }

    QueuedTask pop() {
        std::pop_heap(heap_.begin(), heap_.end(), worse);
        QueuedTask t = heap_.back();
        heap_.pop_back();
        return t;
    }

    bool contains(int request_id) const {
        return std::any_of(heap_.begin(), heap_.end(), [&](const QueuedTask& t) { return t.request_id == request_id; });
    }

    static bool worse(const QueuedTask& a, const QueuedTask& b) {
        if (a.priority != b.priority) return a.priority < b.priority;
        if (a.arrival_time != b.arrival_time) return a.arrival_time > b.arrival_time;
        return a.request_id > b.request_id;
    }

private:
    PolicyKind policy_;
    PriorityParams params_;
    std::vector<QueuedTask> heap_;
};

// ---------------------------------------------------------------------------
// Admission control
// ---------------------------------------------------------------------------

struct AdmissionVerdict {
    bool admit = false;
    std::string reason;
    int protected_request = -1;
    double wcet_ms = 0.0;
    double budget_ms = 0.0;
    double memory_needed_mb = 0.0;
};

/// Per-token latency a running generation should expect once the batch grows
/// to `next_batch`, from its most recent measured tokens.
inline double expected_token_latency_ms(const EngineCostModel& m, const GenerationState& g, int next_batch,
                                        int next_checked, int window) {
    const double target = m.steady_iteration_ms(next_batch, next_checked);
    if (g.recent_tokens.empty()) return target;
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(window), g.recent_tokens.size());
    double sum = 0.0;
    for (std::size_t i = g.recent_tokens.size() - n; i < g.recent_tokens.size(); ++i) {
        const TokenTiming& s = g.recent_tokens[i];
        const double base = m.steady_iteration_ms(s.batch, s.stop_checked);
        sum += base > 0.0 ? s.steady_ms * target / base : target;
    }
    return sum / static_cast<double>(n);
}

/// One-off cost the candidate adds to the next iteration (prefill or context restore).
inline double admission_lump_ms(const Engine& engine, const QueuedTask& candidate, int prompt_tokens) {
    const EngineCostModel& m = engine.model();
    if (!engine.contains(candidate.request_id)) return m.prefill_ms_per_prompt_token * prompt_tokens;
    const GenerationState& g = engine.at(candidate.request_id);
    if (m.kv_cache_disabled || g.kv_location == KvLocation::None) return m.reprefill_ms;
    if (g.kv_location == KvLocation::Host) return m.swap_restore_ms;
    return 0.0;
}

/// Latency-guided admission: the candidate joins only if every running
/// generation that can still meet its deadline keeps doing so in the worst
/// case (a full segment at the enlarged batch's speed), and its KV cache fits.
/// The protected generation reported is the one with the least margin.
inline AdmissionVerdict admit_decision(const SchedulerConfig& cfg, const Engine& engine, const QueuedTask& candidate,
                                       double now, const std::map<int, double>& running_deadlines,
                                       int candidate_prompt_tokens) {
    AdmissionVerdict v;
    v.memory_needed_mb = engine.kv_requirement(candidate.request_id);
    const bool memory_ok =
        engine.free_gpu_memory() + engine.evictable_mb(candidate.request_id) + 1e-9 >= v.memory_needed_mb;
    const int batch = static_cast<int>(engine.running().size());

    const bool fixed_cap = cfg.policy == PolicyKind::FCFSBatch || cfg.policy == PolicyKind::StreamFCFS || !cfg.adaptive;
    if (cfg.policy == PolicyKind::Replay) {
        v.admit = batch == 0 && memory_ok && now + 1e-9 >= candidate.replay_start;
        v.reason = v.admit ? "replay" : "replay-wait";
        return v;
    }
    if (fixed_cap) {
        v.admit = batch < cfg.max_batch_size && memory_ok;
        v.reason = !memory_ok ? "memory" : (v.admit ? "ok" : "batch-cap");
        return v;
    }

    const EngineCostModel& m = engine.model();
    const double lump = admission_lump_ms(engine, candidate, candidate_prompt_tokens);
    int checked = 0;
    for (const GenerationState* g : engine.running_states()) checked += g->stop_checked ? 1 : 0;
    double worst_margin = std::numeric_limits<double>::infinity();
    for (const GenerationState* g : engine.running_states()) {
        auto it = running_deadlines.find(g->request_id);
        if (it == running_deadlines.end()) continue;
        const double budget_ms = (it->second - now) * 1000.0;
        if (budget_ms <= 0.0) continue;  // already late; nothing left to protect
        const int cap = g->segment_token_cap > 0 ? g->segment_token_cap : cfg.max_segment_tokens;
        const int remaining = std::max(0, cap - g->tokens_in_current_segment);
        const double per_token = expected_token_latency_ms(m, *g, batch + 1, checked + 1, cfg.speed_window);
        const double wcet = remaining * per_token + lump;
        if (budget_ms - wcet < worst_margin) {
            worst_margin = budget_ms - wcet;
            v.protected_request = g->request_id;
            v.wcet_ms = wcet;
            v.budget_ms = budget_ms;
        }
    }
    const bool timing_ok = worst_margin >= 0.0;
    v.admit = timing_ok && memory_ok;
    v.reason = !memory_ok ? "memory" : (timing_ok ? "ok" : "wcet");
    return v;
}

}  // namespace tsserve

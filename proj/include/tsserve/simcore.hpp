#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsserve/engine.hpp"
#include "tsserve/event_log.hpp"
#include "tsserve/scheduler.hpp"
#include "tsserve/workload.hpp"

namespace tsserve {

struct SimConfig {
    EngineCostModel engine{};
    SchedulerConfig scheduler{};
    std::vector<std::string> skill_patterns{std::string(StopRule::kDefaultSkillPattern)};
    StopRule::Kind chatbot_rule = StopRule::Kind::Sentence;
    int chatbot_max_segment_tokens = 128;
    /// Arrival-generation window; the run is capped at window + drain.
    double horizon_s = 0.0;
    double drain_s = 120.0;
    std::uint64_t seed = 1;
    /// Replay policy: generation start time of (request, segment).
    std::map<std::pair<int, int>, double> replay_starts;
    bool log_refusals = true;

    void validate() const {
        engine.validate();
        scheduler.validate();
        if (drain_s < 0.0 || horizon_s < 0.0) throw ConfigError("horizon_s and drain_s must be >= 0");
        if (chatbot_max_segment_tokens < 1) throw ConfigError("chatbot_max_segment_tokens must be >= 1");
        if (scheduler.policy == PolicyKind::Replay && replay_starts.empty())
            throw ConfigError("replay policy needs replay_starts");
    }
};

struct SimMeta {
    PolicyKind policy = PolicyKind::SegPUD;
    double capacity_mb = 0.0;
    double network_latency_s = 0.0;
    std::uint64_t seed = 0;
};

struct SimResult {
    EventLog log;
    SimMeta meta;
    bool quiescent = true;
    double end_time_s = 0.0;
    double engine_busy_ms = 0.0;
    double engine_restore_ms = 0.0;
    long iterations = 0;
    int aborted = 0;
    int agent_conflicts = 0;
    std::vector<std::string> warnings;
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
}  // namespace detail

/// Discrete-event simulation of the serving system and its robot agents.
class Simulation {
public:
    Simulation(SimConfig cfg, const TraceLibrary& library, std::vector<ArrivalEvent> arrivals)
        : cfg_(std::move(cfg)),
          lib_(library),
          arrivals_(std::move(arrivals)),
          engine_(cfg_.engine),
          queue_(cfg_.scheduler.policy,
                 {cfg_.engine.network_latency_ms / 1000.0, cfg_.scheduler.slack_floor_s, cfg_.scheduler.denom_floor_s2}) {
        cfg_.validate();
        net_s_ = cfg_.engine.network_latency_ms / 1000.0;
        const PolicyKind p = cfg_.scheduler.policy;
        const int robot_cap = suspends_at_boundaries(p) ? cfg_.scheduler.max_segment_tokens : 0;
        const int chat_cap = suspends_at_boundaries(p) ? cfg_.chatbot_max_segment_tokens : 0;
        if (p == PolicyKind::FCFSBatch) {
            robot_rule_ = chat_rule_ = StopRule::none();
        } else {
            robot_rule_ = StopRule::skill_pattern(cfg_.skill_patterns, robot_cap);
            chat_rule_ = cfg_.chatbot_rule == StopRule::Kind::Paragraph ? StopRule::paragraph(chat_cap)
                         : cfg_.chatbot_rule == StopRule::Kind::None    ? StopRule::none()
                                                                        : StopRule::sentence(chat_cap);
        }
        std::set<int> seen;
        for (const auto& a : arrivals_) {
            if (!seen.insert(a.trace_id).second) continue;
            const TaskTrace& t = lib_.at(a.trace_id);
            const StopRule& rule = rule_for(t);
            for (const auto& s : t.plan)
                if (rule.segment_token_cap > 0 && s.token_count > rule.segment_token_cap)
                    throw ConfigError("trace " + std::to_string(t.trace_id) + " skill '" + s.name + "' has " +
                                      std::to_string(s.token_count) + " tokens, above the segment cap");
            scripts_.emplace(t.trace_id, std::make_shared<const TokenScript>(TokenScript::from_trace(t)));
        }
        double last = 0.0;
        for (const auto& a : arrivals_) last = std::max(last, a.time_s);
        cap_s_ = std::max(cfg_.horizon_s, last) + cfg_.drain_s;
    }

    SimResult run() {
        result_.meta = {cfg_.scheduler.policy, cfg_.engine.gpu_memory_mb, net_s_, cfg_.seed};
        for (std::size_t i = 0; i < arrivals_.size(); ++i)
            push(arrivals_[i].time_s, Prec::Arrival, static_cast<int>(i), -1, static_cast<int>(i));
        while (!events_.empty()) {
            const QEvent ev = events_.top();
            if (ev.time > cap_s_) {
                result_.quiescent = false;
                result_.warnings.push_back("wall-clock cap reached with work pending");
                break;
            }
            events_.pop();
            now_ = ev.time;
            switch (ev.prec) {
                case Prec::ActionEnd: on_action_end(ev.agent); break;
                case Prec::ActionStart: on_action_start(ev.agent); break;
                case Prec::IterationDone: on_iteration_done(); break;
                case Prec::Arrival: on_arrival(ev.index); break;
                case Prec::Wakeup:
                    wakeups_.erase(now_);
                    if (!iteration_in_flight_) schedule_step();
                    break;
            }
        }
        if (result_.quiescent) {
            for (const auto& r : requests_)
                if (!r.done) {
                    result_.quiescent = false;
                    result_.warnings.push_back("simulation ended with unfinished requests");
                    break;
                }
        }
        result_.end_time_s = now_;
        result_.engine_busy_ms = engine_.busy_ms();
        result_.engine_restore_ms = engine_.restore_ms();
        result_.iterations = engine_.iterations();
        return std::move(result_);
    }

    const Engine& engine() const { return engine_; }

private:
    enum class Prec { ActionEnd = 0, ActionStart = 1, IterationDone = 2, Arrival = 3, Wakeup = 4 };

    struct QEvent {
        double time;
        Prec prec;
        int request_id;
        long seq;
        int agent;
        int index;
    };
    struct QEventLater {
        bool operator()(const QEvent& a, const QEvent& b) const {
            if (a.time != b.time) return a.time > b.time;
            if (a.prec != b.prec) return a.prec > b.prec;
            if (a.request_id != b.request_id) return a.request_id > b.request_id;
            return a.seq > b.seq;
        }
    };

    struct PendingSegment {
        int request_id;
        int segment;
        std::vector<SkillCall> skills;
        int first_item;
        double dispatch_time;
        double min_exec_s;
    };

    struct AgentState {
        std::deque<PendingSegment> pending;
        bool executing = false;
        bool start_scheduled = false;
        double current_start = 0.0;
        double current_min_end = 0.0;
        std::optional<PendingSegment> current;
        int active_request = -1;
    };

    struct RequestState {
        int id = 0;
        int agent = 0;
        const TaskTrace* trace = nullptr;
        double arrival = 0.0;
        QueuedTask task;
        int dispatched = 0;
        int finished_actions = 0;
        bool generation_done = false;
        bool done = false;
        bool aborted = false;
        bool admitted_once = false;
    };

    const StopRule& rule_for(const TaskTrace& t) const {
        return t.category == TaskCategory::Chatbot ? chat_rule_ : robot_rule_;
    }

    void push(double t, Prec p, int request, int agent, int index = -1) {
        events_.push({t, p, request, seq_++, agent, index});
    }

    void on_arrival(int idx) {
        const ArrivalEvent& a = arrivals_[static_cast<std::size_t>(idx)];
        const TaskTrace& t = lib_.at(a.trace_id);
        RequestState r;
        r.id = static_cast<int>(requests_.size());
        r.agent = a.agent_id;
        r.trace = &t;
        r.arrival = a.time_s;
        r.task = make_initial_task(r.id, a.agent_id, t.trace_id, a.time_s, t.urgency.tuf,
                                   cfg_.scheduler.gen_estimate_for(t.trace_id));
        if (auto it = cfg_.replay_starts.find({r.id, 0}); it != cfg_.replay_starts.end()) r.task.replay_start = it->second;
        AgentState& ag = agents_[a.agent_id];
        if (ag.active_request >= 0 && !requests_[static_cast<std::size_t>(ag.active_request)].done) {
            ++result_.agent_conflicts;
            result_.warnings.push_back("agent " + std::to_string(a.agent_id) + " received request " +
                                       std::to_string(r.id) + " while still serving another");
        }
        ag.active_request = r.id;
        result_.log.add(now_, EventKind::Arrival, r.id, r.agent,
                        {{"trace_id", t.trace_id},
                         {"category", std::string(to_string(t.category))},
                         {"urgency", std::string(to_string(t.urgency.kind))},
                         {"beta", t.urgency.tuf.beta},
                         {"alpha", t.urgency.tuf.alpha},
                         {"ert_s", t.urgency.tuf.ert_s}});
        queue_.push(r.task, now_);
        requests_.push_back(r);
        if (!iteration_in_flight_) schedule_step();
    }

    // Admission and iteration start; runs whenever the engine is between iterations.
    void schedule_step() {
        queue_.update_all_priorities(now_);
        while (!queue_.empty()) {
            const QueuedTask cand = queue_.top();
            RequestState& r = requests_[static_cast<std::size_t>(cand.request_id)];
            const AdmissionVerdict v =
                admit_decision(cfg_.scheduler, engine_, cand, now_, running_deadlines_, r.trace->prompt_tokens);
            if (!v.admit) {
                if (v.reason == "replay-wait") {
                    const double at = std::max(now_, cand.replay_start);
                    if (engine_.idle() && wakeups_.insert(at).second) push(at, Prec::Wakeup, -1, -1);
                } else if (cfg_.log_refusals) {
                    result_.log.add(now_, EventKind::AdmissionRefused, cand.request_id, cand.agent_id,
                                    {{"segment", cand.segment_index},
                                     {"reason", v.reason},
                                     {"protected", v.protected_request},
                                     {"wcet_ms", v.wcet_ms},
                                     {"budget_ms", v.budget_ms},
                                     {"batch", engine_.running().size()}});
                }
                break;
            }
            queue_.pop();
            admit(cand, r);
        }
        if (!engine_.idle() && !iteration_in_flight_) {
            StepResult step = engine_.step_iteration(now_);
            inflight_ = std::move(step);
            iteration_in_flight_ = true;
            push(inflight_.end_time_s, Prec::IterationDone, -1, -1);
        }
    }

    void admit(const QueuedTask& task, RequestState& r) {
        const double need = engine_.kv_requirement(r.id);
        std::vector<int> evicted;
        if (engine_.free_gpu_memory() < need) evicted = engine_.evict_for(need, r.id);
        double restore_ms = 0.0;
        std::string kv_before = "new";
        if (engine_.contains(r.id)) {
            kv_before = std::string(to_string(engine_.at(r.id).kv_location));
            restore_ms = engine_.resume(r.id, now_);
        } else {
            const bool checked = uses_stop_checker(cfg_.scheduler.policy);
            GenerationState& g =
                engine_.admit_new(r.id, r.agent, *r.trace, scripts_.at(r.trace->trace_id), checked, now_);
            g.segment_index = task.segment_index;
            g.segment_token_cap = rule_for(*r.trace).segment_token_cap;
        }
        r.task = task;
        r.admitted_once = true;
        running_deadlines_[r.id] = task.deadline;
        result_.log.add(now_, EventKind::Resume, r.id, r.agent,
                        {{"segment", task.segment_index},
                         {"first", task.segment_index == 0 && kv_before == "new"},
                         {"kv_before", kv_before},
                         {"restore_ms", restore_ms},
                         {"evicted", evicted},
                         {"priority", task.priority},
                         {"deadline", task.deadline}});
    }

    void on_iteration_done() {
        iteration_in_flight_ = false;
        StepResult step = std::move(inflight_);
        result_.log.add(now_, EventKind::IterationDone, -1, -1,
                        {{"batch", step.emissions.size()},
                         {"latency_ms", step.latency_ms},
                         {"free_mb", engine_.free_gpu_memory()},
                         {"resident_mb", engine_.resident_mb()},
                         {"capacity_mb", cfg_.engine.gpu_memory_mb}});
        for (const TokenEmission& e : step.emissions) handle_emission(e);
        schedule_step();
    }

    void handle_emission(const TokenEmission& e) {
        RequestState& r = requests_[static_cast<std::size_t>(e.request_id)];
        if (r.aborted) return;
        GenerationState& g = engine_.at(e.request_id);
        const auto boundary = check_segment_boundary(rule_for(*r.trace), g, e.text_fragment);
        if (!boundary) return;

        double min_exec = 0.0;
        try {
            min_exec = estimate_segment_execution(lib_.exec_model, boundary->skills);
        } catch (const UnknownSkill& ex) {
            abort_request(r, ex.what());
            return;
        }
        const int seg = g.segment_index;
        dispatch(r, seg, *boundary, min_exec);

        if (boundary->end_of_plan) {
            r.generation_done = true;
            running_deadlines_.erase(r.id);
            engine_.release(r.id);
            maybe_complete(r);
            return;
        }
        if (suspends_at_boundaries(cfg_.scheduler.policy)) {
            const SuspendReceipt rec = engine_.suspend(r.id, now_);
            running_deadlines_.erase(r.id);
            result_.log.add(now_, EventKind::Suspend, r.id, r.agent,
                            {{"segment", seg},
                             {"kv_mb", rec.kv_size_mb},
                             {"snapshot_tokens", rec.token_snapshot.size()},
                             {"snapshot_bytes", rec.snapshot_bytes()},
                             {"snapshot_hash", std::to_string(fnv1a_ids(rec.token_snapshot))},
                             {"forced", boundary->forced}});
            engine_.begin_next_segment(r.id, *boundary);
            QueuedTask next = make_followup_task(r.task, action_end_estimate(r.agent));
            if (auto it = cfg_.replay_starts.find({r.id, next.segment_index}); it != cfg_.replay_starts.end())
                next.replay_start = it->second;
            queue_.push(next, now_);
        } else {
            engine_.begin_next_segment(r.id, *boundary);
        }
    }

    // Earliest time the agent can be done with everything dispatched to it,
    // using minimum execution times.
    double action_end_estimate(int agent) const {
        const AgentState& ag = agents_.at(agent);
        double t = now_ + net_s_;
        if (ag.executing) t = std::max(t, ag.current_min_end);
        for (const auto& p : ag.pending) t = std::max(t, p.dispatch_time + net_s_) + p.min_exec_s;
        return t;
    }

    void dispatch(RequestState& r, int seg, const SegmentBoundary& b, double min_exec) {
        std::vector<std::string> names;
        std::string text;
        for (const auto& s : b.skills) {
            names.push_back(s.name);
            text += render_skill(s);
        }
        ++r.dispatched;
        result_.log.add(now_, EventKind::SegmentDispatched, r.id, r.agent,
                        {{"segment", seg},
                         {"skills", names},
                         {"text", text},
                         {"first_item", b.first_item},
                         {"last", b.end_of_plan},
                         {"min_exec_s", min_exec}});
        AgentState& ag = agents_[r.agent];
        ag.pending.push_back({r.id, seg, b.skills, b.first_item, now_, min_exec});
        if (!ag.executing && !ag.start_scheduled) {
            ag.start_scheduled = true;
            push(now_ + net_s_, Prec::ActionStart, r.id, r.agent);
        }
    }

    double sampled_exec(int request_id, int item, const SkillCall& s) const {
        std::mt19937_64 rng(detail::splitmix64(cfg_.seed ^ detail::splitmix64(
                                                              (static_cast<std::uint64_t>(request_id) << 20) ^
                                                              static_cast<std::uint64_t>(item))));
        return sample_execution_time(lib_.exec_model, s, ExecMode::Sample, rng);
    }

    void on_action_start(int agent) {
        AgentState& ag = agents_[agent];
        ag.start_scheduled = false;
        PendingSegment seg = std::move(ag.pending.front());
        ag.pending.pop_front();
        double exec = 0.0;
        for (std::size_t i = 0; i < seg.skills.size(); ++i)
            exec += sampled_exec(seg.request_id, seg.first_item + static_cast<int>(i), seg.skills[i]);
        ag.executing = true;
        ag.current_start = now_;
        ag.current_min_end = now_ + seg.min_exec_s;
        result_.log.add(now_, EventKind::ActionStart, seg.request_id, agent,
                        {{"segment", seg.segment}, {"dispatched_at", seg.dispatch_time}});
        push(now_ + exec, Prec::ActionEnd, seg.request_id, agent);
        ag.current = std::move(seg);
    }

    void on_action_end(int agent) {
        AgentState& ag = agents_[agent];
        PendingSegment seg = std::move(*ag.current);
        ag.current.reset();
        ag.executing = false;
        result_.log.add(now_, EventKind::ActionEnd, seg.request_id, agent,
                        {{"segment", seg.segment}, {"exec_s", now_ - ag.current_start}});
        RequestState& r = requests_[static_cast<std::size_t>(seg.request_id)];
        ++r.finished_actions;
        maybe_complete(r);
        if (!ag.pending.empty()) {
            ag.start_scheduled = true;
            push(std::max(now_, ag.pending.front().dispatch_time + net_s_), Prec::ActionStart,
                 ag.pending.front().request_id, agent);
        }
    }

    void maybe_complete(RequestState& r) {
        if (r.done || !r.generation_done || r.finished_actions < r.dispatched) return;
        r.done = true;
        result_.log.add(now_, EventKind::RequestComplete, r.id, r.agent,
                        {{"status", "ok"}, {"segments", r.dispatched}});
    }

    void abort_request(RequestState& r, const std::string& why) {
        r.aborted = true;
        r.done = true;
        ++result_.aborted;
        running_deadlines_.erase(r.id);
        engine_.release(r.id);
        result_.log.add(now_, EventKind::RequestComplete, r.id, r.agent,
                        {{"status", "aborted"}, {"error", why}, {"segments", r.dispatched}});
    }

    SimConfig cfg_;
    const TraceLibrary& lib_;
    std::vector<ArrivalEvent> arrivals_;
    Engine engine_;
    TaskQueue queue_;
    StopRule robot_rule_;
    StopRule chat_rule_;
    std::map<int, std::shared_ptr<const TokenScript>> scripts_;
    std::priority_queue<QEvent, std::vector<QEvent>, QEventLater> events_;
    std::map<int, AgentState> agents_;
    std::vector<RequestState> requests_;
    std::map<int, double> running_deadlines_;
    StepResult inflight_;
    bool iteration_in_flight_ = false;
    std::set<double> wakeups_;
    double now_ = 0.0;
    double net_s_ = 0.0;
    double cap_s_ = 0.0;
    long seq_ = 0;
    SimResult result_;
};

inline SimResult run(const SimConfig& cfg, const TraceLibrary& library, std::vector<ArrivalEvent> arrivals) {
    return Simulation(cfg, library, std::move(arrivals)).run();
}

}  // namespace tsserve

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsserve/errors.hpp"
#include "tsserve/tuf.hpp"

namespace tsserve {

// ---------------------------------------------------------------------------
// Execution-time model
// ---------------------------------------------------------------------------

/// Profiled execution time of one robot skill.
///
/// Constant skills use a measured mean, Sampled skills keep the raw per-scenario
/// measurements, and Parametric skills are linear in the absolute value of the
/// call parameters (e.g. seconds per centimetre moved).
struct ExecProfile {
    enum class Kind { Constant, Sampled, Parametric };

    Kind kind = Kind::Constant;
    double mean_s = 0.0;
    std::vector<double> samples_s;
    std::vector<std::string> labels;
    double intercept_s = 0.0;
    std::vector<double> coefficients;

    static ExecProfile constant(double s) { return {Kind::Constant, s, {}, {}, 0.0, {}}; }
    static ExecProfile sampled(std::vector<double> s, std::vector<std::string> l = {}) {
        return {Kind::Sampled, 0.0, std::move(s), std::move(l), 0.0, {}};
    }
    static ExecProfile parametric(double intercept, std::vector<double> coef) {
        return {Kind::Parametric, 0.0, {}, {}, intercept, std::move(coef)};
    }

    friend bool operator==(const ExecProfile&, const ExecProfile&) = default;
};

enum class ExecMode { Sample, Mean, Min, Max };

struct SkillCall {
    std::string name;
    std::vector<double> params;
    int token_count = 1;
    /// Literal text the model emits for this call; rendered from name/params when empty.
    std::string text;
    std::optional<ExecProfile> exec_profile;

    friend bool operator==(const SkillCall&, const SkillCall&) = default;
};

inline std::string format_param(double v) {
    std::ostringstream os;
    if (v == std::floor(v) && std::abs(v) < 1e15) {
        os << static_cast<long long>(v);
    } else {
        os << v;
    }
    return os.str();
}

inline std::string render_skill(const SkillCall& s) {
    if (!s.text.empty()) return s.text;
    std::string out = s.name + "(";
    for (std::size_t i = 0; i < s.params.size(); ++i) {
        if (i) out += ",";
        out += format_param(s.params[i]);
    }
    return out + ");";
}

using ExecutionTimeModel = std::map<std::string, ExecProfile, std::less<>>;

namespace detail {
inline double parametric_value(const ExecProfile& p, const SkillCall& s) {
    double v = p.intercept_s;
    const std::size_t n = std::min(p.coefficients.size(), s.params.size());
    for (std::size_t i = 0; i < n; ++i) v += p.coefficients[i] * std::abs(s.params[i]);
    return v;
}
}  // namespace detail

template <class Rng>
double sample_execution_time(const ExecutionTimeModel& model, const SkillCall& skill, ExecMode mode, Rng& rng) {
    auto it = model.find(skill.name);
    if (it == model.end()) throw UnknownSkill(skill.name);
    const ExecProfile& p = it->second;
    switch (p.kind) {
        case ExecProfile::Kind::Constant:
            return p.mean_s;
        case ExecProfile::Kind::Parametric:
            return detail::parametric_value(p, skill);
        case ExecProfile::Kind::Sampled: {
            const auto& xs = p.samples_s;
            switch (mode) {
                case ExecMode::Min: return *std::min_element(xs.begin(), xs.end());
                case ExecMode::Max: return *std::max_element(xs.begin(), xs.end());
                case ExecMode::Mean: return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
                case ExecMode::Sample: {
                    std::uniform_int_distribution<std::size_t> pick(0, xs.size() - 1);
                    return xs[pick(rng)];
                }
            }
        }
    }
    return 0.0;
}

/// Deterministic modes never touch the generator.
inline double execution_time(const ExecutionTimeModel& model, const SkillCall& skill, ExecMode mode) {
    std::mt19937_64 unused{0};
    return sample_execution_time(model, skill, mode == ExecMode::Sample ? ExecMode::Mean : mode, unused);
}

/// Lower bound on how long the robot needs for a segment.
template <class Range>
double estimate_segment_execution(const ExecutionTimeModel& model, const Range& segment) {
    double total = 0.0;
    for (const SkillCall& s : segment) total += execution_time(model, s, ExecMode::Min);
    return total;
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

enum class TaskCategory { DroneNormal, DroneUrgent, ArmComplex, Chatbot };

inline std::string_view to_string(TaskCategory c) {
    switch (c) {
        case TaskCategory::DroneNormal: return "drone_normal";
        case TaskCategory::DroneUrgent: return "drone_urgent";
        case TaskCategory::ArmComplex: return "arm_complex";
        case TaskCategory::Chatbot: return "chatbot";
    }
    return "?";
}

inline std::optional<TaskCategory> parse_category(std::string_view s) {
    if (s == "drone_normal") return TaskCategory::DroneNormal;
    if (s == "drone_urgent") return TaskCategory::DroneUrgent;
    if (s == "arm_complex") return TaskCategory::ArmComplex;
    if (s == "chatbot") return TaskCategory::Chatbot;
    return std::nullopt;
}

struct TaskTrace {
    int trace_id = 0;
    TaskCategory category = TaskCategory::DroneNormal;
    int prompt_tokens = 1;
    std::vector<SkillCall> plan;
    UrgencyClass urgency{};
    std::string description;

    std::string plan_text() const {
        std::string out;
        for (const auto& s : plan) out += render_skill(s);
        return out;
    }
    int plan_tokens() const {
        int n = 0;
        for (const auto& s : plan) n += s.token_count;
        return n;
    }
};

struct TraceLibrary {
    std::vector<TaskTrace> traces;
    ExecutionTimeModel exec_model;

    const TaskTrace* find(int trace_id) const {
        for (const auto& t : traces)
            if (t.trace_id == trace_id) return &t;
        return nullptr;
    }
    const TaskTrace& at(int trace_id) const {
        if (const auto* t = find(trace_id)) return *t;
        throw ConfigError("trace " + std::to_string(trace_id) + " is not in the library");
    }
};

// ---------------------------------------------------------------------------
// JSON-lines trace format
// ---------------------------------------------------------------------------

namespace detail {

using nlohmann::json;

inline ExecProfile profile_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "constant") {
        return ExecProfile::constant(j.at("mean_s").get<double>());
    }
    if (kind == "sampled") {
        auto xs = j.at("samples_s").get<std::vector<double>>();
        std::vector<std::string> labels;
        if (j.contains("labels")) labels = j.at("labels").get<std::vector<std::string>>();
        if (xs.empty()) throw std::invalid_argument("sampled profile has no samples");
        if (!labels.empty() && labels.size() != xs.size())
            throw std::invalid_argument("sampled profile labels/samples length mismatch");
        return ExecProfile::sampled(std::move(xs), std::move(labels));
    }
    if (kind == "parametric") {
        return ExecProfile::parametric(j.value("intercept_s", 0.0), j.at("coefficients").get<std::vector<double>>());
    }
    throw std::invalid_argument("unknown exec_profile kind '" + kind + "'");
}

inline json profile_to_json(const ExecProfile& p) {
    switch (p.kind) {
        case ExecProfile::Kind::Constant: return {{"kind", "constant"}, {"mean_s", p.mean_s}};
        case ExecProfile::Kind::Sampled: {
            json j{{"kind", "sampled"}, {"samples_s", p.samples_s}};
            if (!p.labels.empty()) j["labels"] = p.labels;
            return j;
        }
        case ExecProfile::Kind::Parametric:
            return {{"kind", "parametric"}, {"intercept_s", p.intercept_s}, {"coefficients", p.coefficients}};
    }
    return {};
}

inline void check_profile(const ExecProfile& p, const std::string& skill) {
    auto positive = [&](double v) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw std::invalid_argument("skill '" + skill + "' has a non-positive execution time");
    };
    switch (p.kind) {
        case ExecProfile::Kind::Constant: positive(p.mean_s); break;
        case ExecProfile::Kind::Sampled:
            for (double x : p.samples_s) positive(x);
            break;
        case ExecProfile::Kind::Parametric:
            positive(p.intercept_s + 1e-12);
            for (double c : p.coefficients)
                if (c < 0.0) throw std::invalid_argument("skill '" + skill + "' has a negative coefficient");
            break;
    }
}

inline UrgencyClass urgency_from_json(const json& j) {
    if (j.is_string()) {
        return parse_urgency_kind(j.get<std::string>()) == UrgencyKind::Urgent ? UrgencyClass::urgent()
                                                                               : UrgencyClass::normal();
    }
    UrgencyClass u;
    u.kind = parse_urgency_kind(j.at("kind").get<std::string>());
    const TimeUtilityFunction base =
        u.kind == UrgencyKind::Urgent ? UrgencyClass::urgent_default() : UrgencyClass::normal_default();
    u.tuf = checked_tuf(j.value("beta", base.beta), j.value("alpha", base.alpha), j.value("ert_s", base.ert_s));
    return u;
}

inline json urgency_to_json(const UrgencyClass& u) {
    return {{"kind", std::string(to_string(u.kind))},
            {"beta", u.tuf.beta},
            {"alpha", u.tuf.alpha},
            {"ert_s", u.tuf.ert_s}};
}

}  // namespace detail

/// Parses one trace line; `model` accumulates the skill profiles it declares.
inline TaskTrace parse_trace_line(std::string_view line, ExecutionTimeModel& model, const std::string& source,
                                  std::size_t line_no) {
    using nlohmann::json;
    auto fail = [&](const std::string& what) -> ParseError { return ParseError(source, line_no, what); };
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw fail(std::string("invalid JSON: ") + e.what());
    }
    TaskTrace t;
    std::string field;
    try {
        field = "trace_id";
        t.trace_id = j.at("trace_id").get<int>();
        field = "category";
        const auto cat = parse_category(j.at("category").get<std::string>());
        if (!cat) throw std::invalid_argument("unknown category");
        t.category = *cat;
        field = "prompt_tokens";
        t.prompt_tokens = j.at("prompt_tokens").get<int>();
        if (t.prompt_tokens <= 0) throw std::invalid_argument("must be > 0");
        field = "urgency";
        t.urgency = detail::urgency_from_json(j.at("urgency"));
        t.description = j.value("description", "");
        field = "plan";
        const json& plan = j.at("plan");
        if (!plan.is_array() || plan.empty()) throw std::invalid_argument("plan must be a nonempty array");
        for (std::size_t i = 0; i < plan.size(); ++i) {
            field = "plan[" + std::to_string(i) + "]";
            const json& item = plan[i];
            SkillCall s;
            s.name = item.at("name").get<std::string>();
            if (s.name.empty()) throw std::invalid_argument("empty skill name");
            if (item.contains("params")) s.params = item.at("params").get<std::vector<double>>();
            s.token_count = item.at("token_count").get<int>();
            if (s.token_count < 1) throw std::invalid_argument("token_count must be >= 1");
            s.text = item.value("text", "");
            if (static_cast<int>(render_skill(s).size()) < s.token_count)
                throw std::invalid_argument("text shorter than its token count");
            if (item.contains("exec_profile")) {
                ExecProfile p = detail::profile_from_json(item.at("exec_profile"));
                detail::check_profile(p, s.name);
                auto [it, inserted] = model.emplace(s.name, p);
                if (!inserted && !(it->second == p))
                    throw std::invalid_argument("conflicting exec_profile for skill '" + s.name + "'");
                s.exec_profile = std::move(p);
            }
            t.plan.push_back(std::move(s));
        }
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw fail("field '" + field + "': " + e.what());
    }
    const bool urgent_cat = t.category == TaskCategory::DroneUrgent;
    if (urgent_cat != (t.urgency.kind == UrgencyKind::Urgent))
        throw fail("urgency must be urgent exactly for drone_urgent traces");
    return t;
}

inline TraceLibrary parse_trace_library(std::istream& in, const std::string& source = "<stream>") {
    TraceLibrary lib;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        TaskTrace t = parse_trace_line(line, lib.exec_model, source, line_no);
        if (lib.find(t.trace_id)) throw ParseError(source, line_no, "duplicate trace_id " + std::to_string(t.trace_id));
        lib.traces.push_back(std::move(t));
    }
    if (lib.traces.empty()) throw ParseError(source, line_no, "trace library is empty");
    return lib;
}

inline TraceLibrary load_trace_library(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open trace library '" + path + "'");
    return parse_trace_library(in, path);
}

inline std::string trace_to_json_line(const TaskTrace& t) {
    using nlohmann::json;
    json plan = json::array();
    for (const auto& s : t.plan) {
        json item{{"name", s.name}, {"params", s.params}, {"token_count", s.token_count}};
        if (!s.text.empty()) item["text"] = s.text;
        if (s.exec_profile) item["exec_profile"] = detail::profile_to_json(*s.exec_profile);
        plan.push_back(std::move(item));
    }
    json j{{"trace_id", t.trace_id},
           {"category", std::string(to_string(t.category))},
           {"prompt_tokens", t.prompt_tokens},
           {"urgency", detail::urgency_to_json(t.urgency)},
           {"plan", std::move(plan)}};
    if (!t.description.empty()) j["description"] = t.description;
    return j.dump();
}

// ---------------------------------------------------------------------------
// Workload composition
// ---------------------------------------------------------------------------

struct WorkloadSpec {
    std::string name = "custom";
    double events_per_second = 0.25;
    int max_tasks_per_event = 8;
    std::vector<int> trace_pool;
    int agent_count = 25;
    double duration_s = 260.0;
    std::uint64_t seed = 1;
    /// Planning allowance added to an agent's worst-case execution span when
    /// deciding whether it is idle for a new event.
    double agent_reserve_s = 10.0;

    void validate() const {
        if (!(events_per_second > 0.0)) throw ConfigError("events_per_second must be > 0");
        if (max_tasks_per_event < 1 || max_tasks_per_event > agent_count)
            throw ConfigError("max_tasks_per_event must be in [1, agent_count]");
        if (!(duration_s > 0.0)) throw ConfigError("duration_s must be > 0");
        if (agent_reserve_s < 0.0) throw ConfigError("agent_reserve_s must be >= 0");
    }
};

inline WorkloadSpec workload_spec_from_json(const nlohmann::json& j) {
    WorkloadSpec s;
    try {
        s.name = j.value("name", s.name);
        s.events_per_second = j.at("events_per_second").get<double>();
        s.max_tasks_per_event = j.at("max_tasks_per_event").get<int>();
        s.trace_pool = j.at("trace_pool").get<std::vector<int>>();
        s.agent_count = j.at("agent_count").get<int>();
        s.duration_s = j.at("duration_s").get<double>();
        s.seed = j.value("seed", s.seed);
        s.agent_reserve_s = j.value("agent_reserve_s", s.agent_reserve_s);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("workload spec: ") + e.what());
    }
    s.validate();
    return s;
}

inline nlohmann::json workload_spec_to_json(const WorkloadSpec& s) {
    return {{"name", s.name},
            {"events_per_second", s.events_per_second},
            {"max_tasks_per_event", s.max_tasks_per_event},
            {"trace_pool", s.trace_pool},
            {"agent_count", s.agent_count},
            {"duration_s", s.duration_s},
            {"seed", s.seed},
            {"agent_reserve_s", s.agent_reserve_s}};
}

/// The three evaluation workloads (event rate, max tasks per event, trace
/// pool, agents, generation window).
inline WorkloadSpec wid1() { return {"WID1", 0.25, 8, {1, 2, 3, 4, 5, 6, 7, 8}, 25, 260.0, 1, 10.0}; }
inline WorkloadSpec wid2() { return {"WID2", 0.25, 16, {1, 2, 3, 4, 5, 6, 7, 8}, 42, 300.0, 1, 10.0}; }
inline WorkloadSpec wid3() { return {"WID3", 0.1, 8, {9, 10, 11}, 40, 900.0, 1, 10.0}; }

struct ArrivalEvent {
    double time_s = 0.0;
    int agent_id = 0;
    int trace_id = 0;
    int event_index = 0;

    friend bool operator==(const ArrivalEvent&, const ArrivalEvent&) = default;
};

struct Workload {
    std::vector<ArrivalEvent> arrivals;
    int event_count = 0;
    int dropped_tasks = 0;
    std::vector<std::string> warnings;
};

/// Poisson event arrivals; each event spawns 1..max_tasks_per_event tasks,
/// each on a distinct idle agent (round-robin) with a uniformly drawn trace.
inline Workload compose_workload(const WorkloadSpec& spec, const TraceLibrary& library) {
    spec.validate();
    if (spec.trace_pool.empty()) throw EmptyTracePool();
    std::vector<double> span(spec.trace_pool.size());
    for (std::size_t i = 0; i < spec.trace_pool.size(); ++i) {
        const TaskTrace& t = library.at(spec.trace_pool[i]);
        double worst = 0.0;
        for (const auto& s : t.plan) {
            auto it = library.exec_model.find(s.name);
            if (it != library.exec_model.end()) worst += execution_time(library.exec_model, s, ExecMode::Max);
        }
        span[i] = worst + spec.agent_reserve_s;
    }

    std::mt19937_64 rng(spec.seed);
    std::exponential_distribution<double> gap(spec.events_per_second);
    std::uniform_int_distribution<int> tasks(1, spec.max_tasks_per_event);
    std::uniform_int_distribution<std::size_t> pick(0, spec.trace_pool.size() - 1);

    Workload w;
    std::vector<double> busy_until(static_cast<std::size_t>(spec.agent_count), -1.0);
    int cursor = 0;
    double t = 0.0;
    for (;;) {
        t += gap(rng);
        if (t >= spec.duration_s) break;
        const int event = w.event_count++;
        const int n = tasks(rng);
        std::vector<bool> taken(static_cast<std::size_t>(spec.agent_count), false);
        for (int k = 0; k < n; ++k) {
            const std::size_t trace_idx = pick(rng);
            int agent = -1;
            for (int step = 0; step < spec.agent_count; ++step) {
                const int a = (cursor + step) % spec.agent_count;
                if (!taken[a] && busy_until[a] <= t) {
                    agent = a;
                    break;
                }
            }
            if (agent < 0) {
                ++w.dropped_tasks;
                w.warnings.push_back("event " + std::to_string(event) + " at t=" + format_param(t) +
                                     "s: no idle agent, task dropped");
                continue;
            }
            taken[agent] = true;
            busy_until[agent] = t + span[trace_idx];
            cursor = (agent + 1) % spec.agent_count;
            w.arrivals.push_back({t, agent, spec.trace_pool[trace_idx], event});
        }
    }
    return w;
}

}  // namespace tsserve

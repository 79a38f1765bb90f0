#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "tsserve/builtin_traces.hpp"
#include "tsserve/workload.hpp"

using namespace tsserve;

namespace {

ExecutionTimeModel toy_model() {
    ExecutionTimeModel m;
    m["p"] = ExecProfile::constant(0.001);
    m["s"] = ExecProfile::sampled({2.0, 3.0, 4.0});
    m["mf"] = ExecProfile::parametric(0.9, {0.02});
    return m;
}

SkillCall call(std::string name, std::vector<double> params = {}) {
    SkillCall c;
    c.name = std::move(name);
    c.params = std::move(params);
    return c;
}

const char* kMinimalTrace =
    R"({"trace_id":7,"category":"drone_normal","prompt_tokens":10,"urgency":{"kind":"normal","beta":1,"alpha":-2,"ert_s":1},)"
    R"("plan":[{"name":"p","token_count":2,"text":"p('x');","exec_profile":{"kind":"constant","mean_s":0.001}}]})";

}  // namespace

TEST(ExecutionTime, PrintIsOneMillisecondInEveryMode) {
    const auto m = toy_model();
    std::mt19937_64 rng(1);
    for (auto mode : {ExecMode::Sample, ExecMode::Mean, ExecMode::Min, ExecMode::Max})
        EXPECT_DOUBLE_EQ(sample_execution_time(m, call("p"), mode, rng), 0.001);
}

TEST(ExecutionTime, SampledMinMeanAndDraws) {
    const auto m = toy_model();
    EXPECT_DOUBLE_EQ(execution_time(m, call("s"), ExecMode::Min), 2.0);
    EXPECT_DOUBLE_EQ(execution_time(m, call("s"), ExecMode::Mean), 3.0);
    std::mt19937_64 rng(3);
    std::set<double> seen;
    for (int i = 0; i < 200; ++i) seen.insert(sample_execution_time(m, call("s"), ExecMode::Sample, rng));
    EXPECT_EQ(seen, (std::set<double>{2.0, 3.0, 4.0}));
}

TEST(ExecutionTime, ParametricUsesAbsoluteParameters) {
    const auto m = toy_model();
    EXPECT_NEAR(execution_time(m, call("mf", {100}), ExecMode::Min), 2.9, 1e-12);
    EXPECT_NEAR(execution_time(m, call("mf", {-100}), ExecMode::Mean), 2.9, 1e-12);
}

TEST(ExecutionTime, UnknownSkillThrows) {
    EXPECT_THROW(execution_time(toy_model(), call("fly"), ExecMode::Min), UnknownSkill);
    const std::vector<SkillCall> seg{call("p"), call("fly")};
    EXPECT_THROW(estimate_segment_execution(toy_model(), seg), UnknownSkill);
}

TEST(ExecutionTime, SegmentEstimateSumsMinimums) {
    const auto m = toy_model();
    EXPECT_DOUBLE_EQ(estimate_segment_execution(m, std::vector<SkillCall>{call("p")}), 0.001);
    EXPECT_NEAR(estimate_segment_execution(m, std::vector<SkillCall>{call("s"), call("p"), call("mf", {10})}),
                2.0 + 0.001 + 1.1, 1e-12);
}

TEST(TraceLibrary, BuiltinHasElevenRobotTraces) {
    const auto& lib = builtin_library();
    std::vector<int> robot;
    for (const auto& t : lib.traces)
        if (t.category != TaskCategory::Chatbot) robot.push_back(t.trace_id);
    EXPECT_EQ(robot, (std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}));
    for (const auto& t : lib.traces) {
        EXPECT_FALSE(t.plan.empty());
        EXPECT_GT(t.prompt_tokens, 0);
        EXPECT_EQ(t.category == TaskCategory::DroneUrgent, t.urgency.kind == UrgencyKind::Urgent) << t.trace_id;
        for (const auto& s : t.plan) EXPECT_TRUE(lib.exec_model.count(s.name)) << s.name;
    }
}

TEST(TraceLibrary, DataFileMatchesBuiltin) {
    const auto lib = load_trace_library(std::string(TSSERVE_DATA_DIR) + "/traces.jsonl");
    const auto& builtin = builtin_library();
    ASSERT_EQ(lib.traces.size(), builtin.traces.size());
    for (std::size_t i = 0; i < lib.traces.size(); ++i) {
        EXPECT_EQ(lib.traces[i].trace_id, builtin.traces[i].trace_id);
        EXPECT_EQ(lib.traces[i].plan, builtin.traces[i].plan);
    }
    EXPECT_EQ(lib.exec_model, builtin.exec_model);
}

TEST(TraceLibrary, ExportReparsesIdentically) {
    std::string text;
    for (const auto& t : builtin_library().traces) text += trace_to_json_line(t) + "\n";
    std::istringstream in(text);
    const auto lib = parse_trace_library(in);
    ASSERT_EQ(lib.traces.size(), builtin_library().traces.size());
    for (std::size_t i = 0; i < lib.traces.size(); ++i) {
        EXPECT_EQ(lib.traces[i].plan_text(), builtin_library().traces[i].plan_text());
        EXPECT_EQ(lib.traces[i].urgency.tuf, builtin_library().traces[i].urgency.tuf);
    }
}

TEST(TraceLibrary, EmptyFileIsAParseError) {
    std::istringstream in("\n\n");
    EXPECT_THROW(parse_trace_library(in, "empty.jsonl"), ParseError);
}

TEST(TraceLibrary, ZeroLengthPlanIsAParseError) {
    std::string line = kMinimalTrace;
    const auto pos = line.find("\"plan\":[");
    line = line.substr(0, pos) + "\"plan\":[]}";
    std::istringstream in(line);
    EXPECT_THROW(parse_trace_library(in), ParseError);
}

TEST(TraceLibrary, ParseErrorsCarryTheLineNumber) {
    std::istringstream in(std::string(kMinimalTrace) + "\n{\"trace_id\":8,\n");
    try {
        parse_trace_library(in, "bad.jsonl");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
        EXPECT_EQ(e.source(), "bad.jsonl");
    }
}

TEST(TraceLibrary, RejectsDuplicateIdsAndUrgencyMismatch) {
    std::istringstream dup(std::string(kMinimalTrace) + "\n" + kMinimalTrace + "\n");
    EXPECT_THROW(parse_trace_library(dup), ParseError);
    std::string urgent = kMinimalTrace;
    urgent.replace(urgent.find("drone_normal"), 12, "drone_urgent");
    std::istringstream mismatch(urgent);
    EXPECT_THROW(parse_trace_library(mismatch), ParseError);
}

TEST(TraceLibrary, MissingFileNamesThePath) {
    try {
        load_trace_library("/nonexistent/traces.jsonl");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/traces.jsonl"), std::string::npos);
    }
}

TEST(Workload, Wid1EventRate) {
    // Poisson events at 0.25/s over 260 s: about 65 events, 4 s apart on average.
    // Plenty of agents, so no event loses all of its tasks.
    const auto& lib = builtin_library();
    double events = 0.0, gaps = 0.0;
    int gap_n = 0;
    const int runs = 200;
    for (int seed = 1; seed <= runs; ++seed) {
        WorkloadSpec spec = wid1();
        spec.seed = static_cast<std::uint64_t>(seed);
        spec.agent_count = 1000;
        const auto w = compose_workload(spec, lib);
        events += w.event_count;
        double prev = 0.0;
        int last_event = -1;
        for (const auto& a : w.arrivals) {
            if (a.event_index == last_event) continue;
            gaps += a.time_s - prev;
            prev = a.time_s;
            last_event = a.event_index;
            ++gap_n;
        }
    }
    EXPECT_NEAR(events / runs, 65.0, 2.0);
    EXPECT_NEAR(gaps / gap_n, 4.0, 0.2);
}

TEST(Workload, DeterministicForASeed) {
    const auto& lib = builtin_library();
    const auto a = compose_workload(wid1(), lib);
    const auto b = compose_workload(wid1(), lib);
    EXPECT_EQ(a.arrivals, b.arrivals);
    WorkloadSpec other = wid1();
    other.seed = 2;
    EXPECT_NE(compose_workload(other, lib).arrivals, a.arrivals);
}

TEST(Workload, SingleTaskEvents) {
    WorkloadSpec spec = wid2();
    spec.max_tasks_per_event = 1;
    const auto w = compose_workload(spec, builtin_library());
    EXPECT_EQ(static_cast<int>(w.arrivals.size()), w.event_count);
}

TEST(Workload, EventsUseDistinctAgentsAndPoolTraces) {
    const auto spec = wid2();
    const auto w = compose_workload(spec, builtin_library());
    std::map<int, std::set<int>> agents;
    std::map<int, int> sizes;
    for (const auto& a : w.arrivals) {
        agents[a.event_index].insert(a.agent_id);
        ++sizes[a.event_index];
        EXPECT_NE(std::find(spec.trace_pool.begin(), spec.trace_pool.end(), a.trace_id), spec.trace_pool.end());
        EXPECT_GE(a.agent_id, 0);
        EXPECT_LT(a.agent_id, spec.agent_count);
        EXPECT_LT(a.time_s, spec.duration_s);
    }
    for (const auto& [e, set] : agents) EXPECT_EQ(static_cast<int>(set.size()), sizes[e]);
}

TEST(Workload, ExhaustedAgentsDropTasksWithWarning) {
    WorkloadSpec spec = wid1();
    spec.agent_count = 2;
    spec.max_tasks_per_event = 2;
    spec.events_per_second = 2.0;
    const auto w = compose_workload(spec, builtin_library());
    EXPECT_GT(w.dropped_tasks, 0);
    EXPECT_EQ(w.warnings.size(), static_cast<std::size_t>(w.dropped_tasks));
}

TEST(Workload, EmptyPoolAndInvalidSpecs) {
    WorkloadSpec spec = wid1();
    spec.trace_pool.clear();
    EXPECT_THROW(compose_workload(spec, builtin_library()), EmptyTracePool);
    spec = wid1();
    spec.max_tasks_per_event = 30;
    EXPECT_THROW(spec.validate(), ConfigError);
    spec = wid1();
    spec.events_per_second = 0.0;
    EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(Workload, SpecJsonRoundTrip) {
    const auto spec = wid3();
    const auto back = workload_spec_from_json(workload_spec_to_json(spec));
    EXPECT_EQ(back.name, spec.name);
    EXPECT_EQ(back.trace_pool, spec.trace_pool);
    EXPECT_EQ(back.agent_count, spec.agent_count);
    EXPECT_DOUBLE_EQ(back.events_per_second, spec.events_per_second);
    EXPECT_THROW(workload_spec_from_json(nlohmann::json{{"events_per_second", 1.0}}), ConfigError);
}

TEST(Workload, ShippedWorkloadFilesMatchPresets) {
    for (const auto& [file, preset] : {std::pair{"wid1.json", wid1()}, {"wid2.json", wid2()}, {"wid3.json", wid3()}}) {
        std::ifstream in(std::string(TSSERVE_DATA_DIR) + "/workloads/" + file);
        ASSERT_TRUE(in) << file;
        const auto spec = workload_spec_from_json(nlohmann::json::parse(in));
        EXPECT_EQ(spec.trace_pool, preset.trace_pool) << file;
        EXPECT_EQ(spec.agent_count, preset.agent_count) << file;
        EXPECT_EQ(spec.max_tasks_per_event, preset.max_tasks_per_event) << file;
        EXPECT_DOUBLE_EQ(spec.duration_s, preset.duration_s) << file;
        EXPECT_DOUBLE_EQ(spec.events_per_second, preset.events_per_second) << file;
    }
}

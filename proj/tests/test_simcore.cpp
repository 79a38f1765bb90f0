#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "tsserve/audit.hpp"
#include "tsserve/builtin_traces.hpp"
#include "tsserve/metrics.hpp"
#include "tsserve/simcore.hpp"

using namespace tsserve;

namespace {

SimConfig config(PolicyKind p) {
    SimConfig c;
    c.scheduler.policy = p;
    return c;
}

std::map<EventKind, int> kind_counts(const EventLog& log, int request) {
    std::map<EventKind, int> n;
    for (const auto& e : log.events)
        if (e.request_id == request) ++n[e.kind];
    return n;
}

std::vector<const SimEvent*> of_kind(const EventLog& log, EventKind k, int request = -2) {
    std::vector<const SimEvent*> out;
    for (const auto& e : log.events)
        if (e.kind == k && (request == -2 || e.request_id == request)) out.push_back(&e);
    return out;
}

TraceLibrary parse(const std::string& text) {
    std::istringstream in(text);
    return parse_trace_library(in);
}

}  // namespace

TEST(Simulation, SingleUnsegmentedRequestLogsEachEventOnce) {
    const auto r = run(config(PolicyKind::FCFSBatch), builtin_library(), {{1.0, 0, 6, 0}});
    const auto n = kind_counts(r.log, 0);
    for (auto k : {EventKind::Arrival, EventKind::Resume, EventKind::SegmentDispatched, EventKind::ActionStart,
                   EventKind::ActionEnd, EventKind::RequestComplete})
        EXPECT_EQ(n.count(k) ? n.at(k) : 0, 1) << to_string(k);
    EXPECT_EQ(n.count(EventKind::Suspend), 0u);
    EXPECT_TRUE(r.quiescent);
    EXPECT_TRUE(audit(r, builtin_library()).ok()) << audit(r, builtin_library()).summary();
}

TEST(Simulation, SegmentedRequestSuspendsAtEachSkill) {
    const auto r = run(config(PolicyKind::SegPUD), builtin_library(), {{0.5, 3, 1, 0}});
    const auto dispatches = of_kind(r.log, EventKind::SegmentDispatched, 0);
    ASSERT_EQ(dispatches.size(), 4u);
    EXPECT_EQ(of_kind(r.log, EventKind::Suspend, 0).size(), 3u);
    EXPECT_EQ(of_kind(r.log, EventKind::Resume, 0).size(), 4u);
    EXPECT_TRUE(dispatches.back()->payload.at("last").get<bool>());
    std::string text;
    for (const auto* d : dispatches) text += d->payload.at("text").get<std::string>();
    EXPECT_EQ(text, builtin_library().at(1).plan_text());
    const auto starts = of_kind(r.log, EventKind::ActionStart, 0);
    ASSERT_FALSE(starts.empty());
    EXPECT_NEAR(starts.front()->time, dispatches.front()->time + 0.008, 1e-12);
    for (const auto* s : starts) EXPECT_EQ(s->agent_id, 3);
}

TEST(Simulation, StreamingNeverSuspends) {
    const auto r = run(config(PolicyKind::StreamFCFS), builtin_library(), {{0.0, 0, 7, 0}, {0.1, 1, 1, 0}});
    EXPECT_TRUE(of_kind(r.log, EventKind::Suspend).empty());
    EXPECT_EQ(of_kind(r.log, EventKind::SegmentDispatched, 0).size(), 3u);
    EXPECT_EQ(of_kind(r.log, EventKind::Resume).size(), 2u);
}

TEST(Simulation, ActionsOfOneAgentRunInOrder) {
    const auto r = run(config(PolicyKind::SegPUD), builtin_library(), {{0.0, 0, 9, 0}});
    const auto starts = of_kind(r.log, EventKind::ActionStart, 0);
    const auto ends = of_kind(r.log, EventKind::ActionEnd, 0);
    ASSERT_EQ(starts.size(), ends.size());
    for (std::size_t k = 0; k < starts.size(); ++k) {
        EXPECT_EQ(starts[k]->payload.at("segment").get<int>(), static_cast<int>(k));
        EXPECT_LE(starts[k]->time, ends[k]->time);
        if (k > 0) {
            EXPECT_GE(starts[k]->time, ends[k - 1]->time);
        }
    }
}

TEST(Simulation, DeterministicLogs) {
    const auto w = compose_workload(wid1(), builtin_library());
    const auto a = run(config(PolicyKind::SegPUD), builtin_library(), w.arrivals);
    const auto b = run(config(PolicyKind::SegPUD), builtin_library(), w.arrivals);
    EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
}

TEST(Simulation, Wid2AgentsNeverOverlap) {
    const auto w = compose_workload(wid2(), builtin_library());
    std::set<int> used;
    for (const auto& a : w.arrivals) used.insert(a.agent_id);
    EXPECT_LE(used.size(), 42u);
    EXPECT_GT(used.size(), 30u);
    for (auto p : {PolicyKind::SegPUD, PolicyKind::FCFSBatch}) {
        const auto r = run(config(p), builtin_library(), w.arrivals);
        EXPECT_EQ(r.agent_conflicts, 0);
        const auto rep = audit(r, builtin_library());
        EXPECT_TRUE(rep.ok()) << to_string(p) << "\n" << rep.summary();
        EXPECT_TRUE(r.quiescent);
    }
}

TEST(Simulation, ChatbotTracesSegmentAtSentences) {
    const auto r = run(config(PolicyKind::SegPUD), builtin_library(), {{0.0, 0, 101, 0}});
    EXPECT_EQ(of_kind(r.log, EventKind::SegmentDispatched, 0).size(), builtin_library().at(101).plan.size());
    EXPECT_TRUE(audit(r, builtin_library()).ok());
}

TEST(Simulation, UnknownSkillAbortsTheRequest) {
    const auto lib = parse(
        R"({"trace_id":1,"category":"drone_normal","prompt_tokens":10,"urgency":"normal","plan":[{"name":"zz","token_count":2,"text":"zz();"}]})");
    const auto r = run(config(PolicyKind::SegPUD), lib, {{0.0, 0, 1, 0}});
    EXPECT_EQ(r.aborted, 1);
    const auto done = of_kind(r.log, EventKind::RequestComplete, 0);
    ASSERT_EQ(done.size(), 1u);
    EXPECT_EQ(done.front()->payload.at("status"), "aborted");
    EXPECT_THROW(compute_request_metrics(r.log, 0), IncompleteRequest);
    EXPECT_EQ(compute_all_metrics(r.log).incomplete.size(), 1u);
}

TEST(Simulation, SkillLongerThanTheCapIsRejected) {
    const auto lib = parse(
        R"({"trace_id":1,"category":"drone_normal","prompt_tokens":10,"urgency":"normal","plan":[{"name":"p","token_count":12,"text":"p('a long message');","exec_profile":{"kind":"constant","mean_s":0.001}}]})");
    EXPECT_THROW(run(config(PolicyKind::SegPUD), lib, {{0.0, 0, 1, 0}}), ConfigError);
    EXPECT_NO_THROW(run(config(PolicyKind::FCFSBatch), lib, {{0.0, 0, 1, 0}}));
}

TEST(Simulation, UnknownTraceIsAConfigError) {
    EXPECT_THROW(run(config(PolicyKind::SegPUD), builtin_library(), {{0.0, 0, 999, 0}}), ConfigError);
}

TEST(Simulation, ReplayNeedsStartTimes) {
    EXPECT_THROW(run(config(PolicyKind::Replay), builtin_library(), {{0.0, 0, 1, 0}}), ConfigError);
}

TEST(Simulation, DisabledKvCacheRePrefillsOnResume) {
    SimConfig c = config(PolicyKind::SegPUD);
    c.engine.kv_cache_disabled = true;
    const auto r = run(c, builtin_library(), {{0.0, 0, 1, 0}});
    EXPECT_NEAR(r.engine_restore_ms, 3 * c.engine.reprefill_ms, 1e-6);
    const auto warm = run(config(PolicyKind::SegPUD), builtin_library(), {{0.0, 0, 1, 0}});
    EXPECT_DOUBLE_EQ(warm.engine_restore_ms, 0.0);
}

TEST(Simulation, UrgentArrivalOvertakesQueuedNormalWork) {
    // Eight normal requests arrive together; an urgent one lands right after.
    std::vector<ArrivalEvent> arr;
    for (int i = 0; i < 8; ++i) arr.push_back({0.0, i, 9, 0});
    arr.push_back({0.05, 8, 6, 1});
    SimConfig c = config(PolicyKind::SegPUD);
    const auto pud = compute_all_metrics(run(c, builtin_library(), arr).log);
    c.scheduler.policy = PolicyKind::SegFCFS;
    const auto fcfs = compute_all_metrics(run(c, builtin_library(), arr).log);
    auto urgent_response = [](const LogMetrics& m) {
        for (const auto& r : m.completed)
            if (r.request_id == 8) return r.response_time_s;
        return -1.0;
    };
    EXPECT_GT(urgent_response(pud), 0.0);
    EXPECT_LT(urgent_response(pud), urgent_response(fcfs));
}

TEST(EventLogCsv, RoundTripsThroughText) {
    const auto r = run(config(PolicyKind::SegPUD), builtin_library(), {{0.0, 0, 1, 0}, {0.3, 1, 101, 0}});
    std::istringstream in(r.log.to_csv());
    const auto back = EventLog::read_csv(in);
    EXPECT_EQ(back.to_csv(), r.log.to_csv());
    std::istringstream bad("nope\n");
    EXPECT_THROW(EventLog::read_csv(bad), ParseError);
}

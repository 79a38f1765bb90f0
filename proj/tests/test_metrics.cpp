#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tsserve/metrics.hpp"

using namespace tsserve;

namespace {

nlohmann::json arrival_payload(int trace, const char* urgency, double beta, double alpha, double ert) {
    return {{"trace_id", trace}, {"category", "drone_normal"}, {"urgency", urgency},
            {"beta", beta},      {"alpha", alpha},             {"ert_s", ert}};
}

/// Log of one request whose actions occupy the given spans.
EventLog request_log(int id, double arrival, const std::vector<testoracle::Action>& spans, int trace = 1,
                     const char* urgency = "normal", double beta = 1.0, double alpha = -2.0, double ert = 1.0) {
    EventLog log;
    log.add(arrival, EventKind::Arrival, id, 0, arrival_payload(trace, urgency, beta, alpha, ert));
    for (std::size_t k = 0; k < spans.size(); ++k) {
        log.add(spans[k].start, EventKind::ActionStart, id, 0, {{"segment", k}});
        log.add(spans[k].end, EventKind::ActionEnd, id, 0, {{"segment", k}});
    }
    log.add(spans.back().end, EventKind::RequestComplete, id, 0, {{"status", "ok"}});
    return log;
}

}  // namespace

TEST(RequestMetrics, SingleSegment) {
    const auto m = compute_request_metrics(request_log(0, 0.0, {{0.5, 2.5}}), 0);
    EXPECT_DOUBLE_EQ(m.response_time_s, 0.5);
    EXPECT_DOUBLE_EQ(m.waiting_time_s, 0.5);
    EXPECT_DOUBLE_EQ(m.completion_time_s, 2.5);
    EXPECT_DOUBLE_EQ(m.realized_utility, 1.0);
    EXPECT_EQ(m.task_type, "1");
}

TEST(RequestMetrics, ResponseAtTheCutoffIsWorthZero) {
    const auto m = compute_request_metrics(request_log(0, 10.0, {{11.5, 12.0}}), 0);
    EXPECT_NEAR(m.response_time_s, 1.5, 1e-12);
    EXPECT_NEAR(m.realized_utility, 0.0, 1e-12);
}

TEST(RequestMetrics, MultiSegmentAgreesWithOracle) {
    const std::vector<testoracle::Action> spans{{0.4, 1.0}, {1.3, 2.0}, {1.9, 2.5}, {3.0, 3.1}};
    // Third span starts before the second ends in this synthetic log, so its gap clips to zero.
    const auto m = compute_request_metrics(request_log(4, 0.1, spans, 6, "urgent", 2.0, -6.67, 0.2), 4);
    const auto l = testoracle::latencies(0.1, spans);
    EXPECT_NEAR(m.response_time_s, l.response, 1e-12);
    EXPECT_NEAR(m.waiting_time_s, l.waiting, 1e-12);
    EXPECT_NEAR(m.completion_time_s, l.completion, 1e-12);
    EXPECT_EQ(m.urgency, UrgencyKind::Urgent);
    const double expected = testoracle::tuf_piecewise(2.0, -6.67, 0.2, 0.3) +
                            testoracle::tuf_suspended_piecewise(2.0, -6.67, 0.3) +
                            testoracle::tuf_suspended_piecewise(2.0, -6.67, 0.0) +
                            testoracle::tuf_suspended_piecewise(2.0, -6.67, 0.5);
    EXPECT_NEAR(m.segment_utility, expected, 1e-12);
    EXPECT_NEAR(m.realized_utility, testoracle::tuf_piecewise(2.0, -6.67, 0.2, 0.3), 1e-12);
}

TEST(RequestMetrics, IncompleteRequestsThrow) {
    EventLog log;
    log.add(0.0, EventKind::Arrival, 0, 0, arrival_payload(1, "normal", 1, -2, 1));
    log.add(0.5, EventKind::ActionStart, 0, 0, {{"segment", 0}});
    EXPECT_THROW(compute_request_metrics(log, 0), IncompleteRequest);
    EXPECT_THROW(compute_request_metrics(log, 7), IncompleteRequest);
    const auto all = compute_all_metrics(log);
    EXPECT_TRUE(all.completed.empty());
    ASSERT_EQ(all.incomplete.size(), 1u);
    EXPECT_EQ(all.incomplete.front().task_type, "1");
}

TEST(RequestMetrics, SegmentGapThrows) {
    EventLog log = request_log(0, 0.0, {{0.5, 1.0}});
    log.events.insert(log.events.end() - 1, {1.2, EventKind::ActionStart, 0, 0, {{"segment", 2}}});
    log.events.insert(log.events.end() - 1, {1.4, EventKind::ActionEnd, 0, 0, {{"segment", 2}}});
    EXPECT_THROW(compute_request_metrics(log, 0), IncompleteRequest);
}

TEST(Aggregate, GroupsAndMoments) {
    EventLog log;
    auto append = [&](const EventLog& l) { log.events.insert(log.events.end(), l.events.begin(), l.events.end()); };
    append(request_log(0, 0.0, {{0.5, 1.0}}, 2));
    append(request_log(1, 0.0, {{1.25, 2.0}}, 2));
    append(request_log(2, 0.0, {{0.1, 0.5}}, 10));
    append(request_log(3, 0.0, {{0.1, 0.2}}, 6, "urgent", 2.0, -6.67, 0.2));
    log.add(0.0, EventKind::Arrival, 4, 0, arrival_payload(6, "urgent", 2.0, -6.67, 0.2));
    const auto lm = compute_all_metrics(log);
    ASSERT_EQ(lm.completed.size(), 4u);

    const auto types = aggregate(lm, GroupBy::TaskType);
    ASSERT_EQ(types.size(), 3u);
    EXPECT_EQ(types[0].group, "2");
    EXPECT_EQ(types[1].group, "6");
    EXPECT_EQ(types[2].group, "10");
    EXPECT_EQ(types[0].n, 2);
    EXPECT_NEAR(types[0].mean_utility, (1.0 + 0.5) / 2.0, 1e-12);
    EXPECT_NEAR(types[0].var_utility, 0.0625, 1e-12);
    EXPECT_NEAR(types[0].mean_response_s, 0.875, 1e-12);
    EXPECT_EQ(types[1].dropped, 1);

    const auto urg = aggregate(lm, GroupBy::Urgency);
    const auto u = find_group(urg, "urgent");
    ASSERT_TRUE(u);
    EXPECT_EQ(u->n, 1);
    EXPECT_DOUBLE_EQ(u->mean_utility, 2.0);
    EXPECT_FALSE(find_group(urg, "critical"));

    const auto all = aggregate(lm, GroupBy::All);
    ASSERT_EQ(all.size(), 1u);
    EXPECT_NEAR(all[0].total_utility, 1.0 + 0.5 + 1.0 + 2.0, 1e-12);
    EXPECT_NEAR(segment_objective(lm), 4.5, 1e-12);
}

TEST(Aggregate, CsvLayout) {
    const auto lm = compute_all_metrics(request_log(0, 0.0, {{0.5, 1.0}}, 3));
    const auto csv = metrics_csv("SegPUD", "WID1", lm);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, kMetricsHeader);
    std::getline(in, line);
    EXPECT_EQ(line.rfind("SegPUD,WID1,3,1,1,0.5,0.5,0", 0), 0u) << line;
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_NE(rows[0].find(",normal,"), std::string::npos);
    EXPECT_NE(rows[1].find(",all,"), std::string::npos);
}

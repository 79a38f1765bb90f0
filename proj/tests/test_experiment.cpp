#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "tsserve/experiment.hpp"

using namespace tsserve;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("tsserve_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

ExperimentConfig small_config(const fs::path& out) {
    ExperimentConfig c;
    c.workload = wid1();
    c.workload.duration_s = 60.0;
    c.out_dir = out;
    return c;
}

struct CliResult {
    int code;
    std::string output;
};

CliResult cli(const std::string& args, const fs::path& dir) {
    const fs::path log = dir / "cli.txt";
    const std::string cmd = std::string(TSSERVE_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

}  // namespace

TEST(Run, WritesEventLogAndMetrics) {
    const auto dir = scratch("run");
    const auto out = cmd_run(small_config(dir));
    EXPECT_TRUE(fs::exists(dir / "eventlog.csv"));
    const auto rows = lines(slurp(dir / "metrics.csv"));
    ASSERT_FALSE(rows.empty());
    EXPECT_EQ(rows[0], kMetricsHeader);
    EXPECT_EQ(rows.back().find("SegPUD,WID1,all,"), 0u);
    EXPECT_FALSE(fs::exists(dir / "eventlog.csv.tmp"));
    EXPECT_EQ(slurp(dir / "eventlog.csv"), out.sim.log.to_csv());
}

TEST(Run, Wid1HasEightTaskTypeRows) {
    const auto dir = scratch("run8");
    auto cfg = small_config(dir);
    cfg.workload = wid1();
    cmd_run(cfg);
    int types = 0;
    for (const auto& row : lines(slurp(dir / "metrics.csv"))) {
        const auto f = detail::split_csv_record(row);
        if (f.size() > 2 && !f[2].empty() && std::isdigit(static_cast<unsigned char>(f[2][0]))) ++types;
    }
    EXPECT_EQ(types, 8);
}

TEST(Compare, SinglePolicyRatiosAreOne) {
    const auto dir = scratch("cmp1");
    cmd_compare(small_config(dir));
    const auto rows = lines(slurp(dir / "comparison.csv"));
    ASSERT_GT(rows.size(), 1u);
    const auto header = detail::split_csv_record(rows[0]);
    const auto ratio_col = std::find(header.begin(), header.end(), "util_ratio_SegPUD") - header.begin();
    const auto red_col = std::find(header.begin(), header.end(), "waiting_reduction_SegPUD") - header.begin();
    ASSERT_LT(static_cast<std::size_t>(ratio_col), header.size());
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto f = detail::split_csv_record(rows[i]);
        if (f[static_cast<std::size_t>(ratio_col)].empty()) continue;
        EXPECT_DOUBLE_EQ(std::stod(f[static_cast<std::size_t>(ratio_col)]), 1.0) << rows[i];
        if (!f[static_cast<std::size_t>(red_col)].empty()) {
            EXPECT_DOUBLE_EQ(std::stod(f[static_cast<std::size_t>(red_col)]), 0.0) << rows[i];
        }
    }
}

TEST(Compare, RatioColumnsForTwoPolicies) {
    const auto dir = scratch("cmp2");
    auto cfg = small_config(dir);
    cfg.policies = {PolicyKind::SegPUD, PolicyKind::FCFSBatch};
    const auto runs = cmd_compare(cfg);
    ASSERT_EQ(runs.size(), 2u);
    EXPECT_TRUE(fs::exists(dir / "eventlog_SegPUD.csv"));
    EXPECT_TRUE(fs::exists(dir / "eventlog_FCFSBatch.csv"));
    const auto rows = lines(slurp(dir / "comparison.csv"));
    const auto header = detail::split_csv_record(rows[0]);
    const auto col = std::find(header.begin(), header.end(), "util_ratio_FCFSBatch") - header.begin();
    const auto pud = find_group(aggregate(runs[0].metrics, GroupBy::All), "all");
    const auto fcfs = find_group(aggregate(runs[1].metrics, GroupBy::All), "all");
    ASSERT_TRUE(pud && fcfs);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto f = detail::split_csv_record(rows[i]);
        if (f[1] != "all") continue;
        EXPECT_NEAR(std::stod(f[static_cast<std::size_t>(col)]), pud->mean_utility / fcfs->mean_utility, 1e-12);
    }
}

TEST(Sweep, OneRowPerPolicyAndSize) {
    const auto dir = scratch("sweep");
    auto cfg = small_config(dir);
    cfg.policies = {PolicyKind::SegPUD, PolicyKind::FCFSBatch};
    cfg.batch_sizes = {1, 2, 4, 6, 8};
    cmd_sweep(cfg);
    const auto rows = lines(slurp(dir / "sweep.csv"));
    ASSERT_EQ(rows.size(), 11u);
    EXPECT_EQ(rows[0], kSweepHeader);
    EXPECT_EQ(rows[1].rfind("SegPUD,1,false,", 0), 0u);
    EXPECT_EQ(rows[10].rfind("FCFSBatch,8,false,", 0), 0u);
    cfg.batch_sizes = {0};
    EXPECT_THROW(cmd_sweep(cfg, false), ConfigError);
    cfg.batch_sizes.clear();
    EXPECT_THROW(cmd_sweep(cfg, false), ConfigError);
}

TEST(Sweep, ParallelRunsAreDeterministic) {
    auto cfg = small_config(scratch("det"));
    cfg.policies = {PolicyKind::SegPUD, PolicyKind::FCFSBatch, PolicyKind::SegEDF};
    cfg.batch_sizes = {2, 8};
    const auto a = cmd_sweep(cfg, false);
    const auto b = cmd_sweep(cfg, false);
    EXPECT_EQ(sweep_csv(a), sweep_csv(b));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].sim.log.to_csv(), b[i].sim.log.to_csv());
}

TEST(Config, SchedulerFileOptions) {
    const auto c = sim_config_from_json(nlohmann::json{{"max_segment_tokens", 12}, {"chatbot_rule", "paragraph"}});
    EXPECT_EQ(c.scheduler.max_segment_tokens, 12);
    EXPECT_EQ(c.chatbot_rule, StopRule::Kind::Paragraph);
    EXPECT_THROW(sim_config_from_json(nlohmann::json{{"chatbot_rule", "word"}}), ConfigError);
    EXPECT_THROW(load_json_file("/nonexistent/x.json"), ConfigError);
}

TEST(Cli, MissingWorkloadExitsTwoAndNamesThePath) {
    const auto dir = scratch("cli_missing");
    const auto r = cli("run --workload /nonexistent/workload.json --out " + dir.string(), dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("/nonexistent/workload.json"), std::string::npos) << r.output;
}

TEST(Cli, UnknownPolicyExitsTwo) {
    const auto dir = scratch("cli_policy");
    EXPECT_EQ(cli("run --policy LIFO --out " + dir.string(), dir).code, 2);
}

TEST(Cli, DryRunEchoesConfigWithoutSimulating) {
    const auto dir = scratch("cli_dry");
    const auto out = dir / "out";
    const auto r = cli("compare --workload " + std::string(TSSERVE_DATA_DIR) + "/workloads/wid2.json --policy SegPUD,SegEDF --dry-run --out " +
                           out.string(),
                       dir);
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("\"SegEDF\""), std::string::npos);
    EXPECT_NE(r.output.find("\"WID2\""), std::string::npos);
    EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, RunProducesFiles) {
    const auto dir = scratch("cli_run");
    const auto r = cli("run --workload wid1 --policy FCFSBatch --seed 3 --out " + dir.string(), dir);
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(dir / "metrics.csv"));
    EXPECT_TRUE(fs::exists(dir / "eventlog.csv"));
}

TEST(Cli, OracleFixturesAndCounterexample) {
    const auto dir = scratch("cli_oracle");
    auto r = cli("oracle " + std::string(TSSERVE_DATA_DIR) + "/oracle/fixtures.json --out " + (dir / "rep.json").string(), dir);
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("skipped 1"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("flagged 1"), std::string::npos) << r.output;
    EXPECT_TRUE(fs::exists(dir / "rep.json"));
    r = cli("oracle " + std::string(TSSERVE_DATA_DIR) + "/oracle/counterexample.json", dir);
    EXPECT_EQ(r.code, 1) << r.output;
}

TEST(Cli, TracesExportMatchesShippedFile) {
    const auto dir = scratch("cli_traces");
    const auto r = cli("traces --export " + (dir / "t.jsonl").string(), dir);
    EXPECT_EQ(r.code, 0) << r.output;
    const auto exported = lines(slurp(dir / "t.jsonl"));
    const auto shipped = lines(slurp(std::string(TSSERVE_DATA_DIR) + "/traces.jsonl"));
    ASSERT_EQ(exported.size(), shipped.size());
    for (std::size_t i = 0; i < shipped.size(); ++i)
        EXPECT_EQ(nlohmann::json::parse(exported[i]), nlohmann::json::parse(shipped[i])) << i;
}

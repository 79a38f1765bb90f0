#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsserve/audit.hpp"
#include "tsserve/builtin_traces.hpp"
#include "tsserve/engine.hpp"
#include "tsserve/errors.hpp"
#include "tsserve/metrics.hpp"
#include "tsserve/scheduler.hpp"
#include "tsserve/simcore.hpp"
#include "tsserve/workload.hpp"

namespace tsserve {

namespace fs = std::filesystem;

inline nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("'" + path + "': " + e.what());
    }
}

/// Writes through a temporary sibling and renames it into place.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write '" + tmp.string() + "'");
        out << content;
        if (!out.flush()) throw ConfigError("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

/// Simulation options beyond the scheduler core, read from the scheduler file.
inline SimConfig sim_config_from_json(const nlohmann::json& j, SimConfig c = {}) {
    c.scheduler = scheduler_config_from_json(j, c.scheduler);
    try {
        if (j.contains("skill_patterns")) c.skill_patterns = j.at("skill_patterns").get<std::vector<std::string>>();
        if (j.contains("chatbot_rule")) c.chatbot_rule = parse_stop_rule_kind(j.at("chatbot_rule").get<std::string>());
        c.chatbot_max_segment_tokens = j.value("chatbot_max_segment_tokens", c.chatbot_max_segment_tokens);
        c.drain_s = j.value("drain_s", c.drain_s);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scheduler config: ") + e.what());
    }
    return c;
}

struct ExperimentConfig {
    WorkloadSpec workload = wid1();
    EngineCostModel engine{};
    SimConfig sim{};
    std::vector<PolicyKind> policies{PolicyKind::SegPUD};
    std::vector<int> batch_sizes;
    bool adaptive = false;
    std::uint64_t seed = 1;
    fs::path out_dir = "out";
    std::string workload_path;
    std::string engine_path;
    std::string scheduler_path;
    std::string traces_path;

    nlohmann::json to_json() const {
        std::vector<std::string> ps;
        for (auto p : policies) ps.emplace_back(to_string(p));
        return {{"workload", workload_spec_to_json(workload)},
                {"engine", engine_model_to_json(engine)},
                {"policies", ps},
                {"batch_sizes", batch_sizes},
                {"adaptive", adaptive},
                {"seed", seed},
                {"out_dir", out_dir.string()},
                {"traces", traces_path.empty() ? "builtin" : traces_path},
                {"max_segment_tokens", sim.scheduler.max_segment_tokens},
                {"max_batch_size", sim.scheduler.max_batch_size},
                {"gen_estimate_s", sim.scheduler.gen_estimate_s}};
    }
};

struct RunOutput {
    PolicyKind policy = PolicyKind::SegPUD;
    int batch_size = 0;
    bool adaptive = true;
    SimResult sim;
    LogMetrics metrics;
    Workload workload;
};

inline TraceLibrary experiment_library(const ExperimentConfig& cfg) {
    return cfg.traces_path.empty() ? builtin_library() : load_trace_library(cfg.traces_path);
}

inline SimConfig make_sim_config(const ExperimentConfig& cfg, PolicyKind policy) {
    SimConfig c = cfg.sim;
    c.engine = cfg.engine;
    c.scheduler.policy = policy;
    c.seed = cfg.seed;
    c.horizon_s = cfg.workload.duration_s;
    return c;
}

inline RunOutput run_one(const SimConfig& sc, const WorkloadSpec& spec, const TraceLibrary& lib) {
    RunOutput out;
    out.policy = sc.scheduler.policy;
    out.batch_size = sc.scheduler.max_batch_size;
    out.adaptive = sc.scheduler.adaptive;
    out.workload = compose_workload(spec, lib);
    out.sim = run(sc, lib, out.workload.arrivals);
    out.metrics = compute_all_metrics(out.sim.log);
    return out;
}

/// Runs independent jobs on a small thread pool; results keep job order.
template <class Job>
auto run_parallel(const std::vector<Job>& jobs, unsigned threads = 0) {
    using R = decltype(jobs.front()());
    std::vector<R> results(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(jobs.size()));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
            try {
                results[i] = jobs[i]();
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return results;
}

inline std::string comparison_csv(const std::string& wid, const std::vector<RunOutput>& runs) {
    std::vector<std::vector<GroupStats>> per;
    std::vector<std::string> keys;
    for (const auto& r : runs) {
        auto g = aggregate(r.metrics, GroupBy::TaskType);
        for (auto& x : aggregate(r.metrics, GroupBy::Urgency)) g.push_back(x);
        for (auto& x : aggregate(r.metrics, GroupBy::All)) g.push_back(x);
        for (const auto& x : g)
            if (std::find(keys.begin(), keys.end(), x.group) == keys.end()) keys.push_back(x.group);
        per.push_back(std::move(g));
    }
    std::ostringstream os;
    os << "wid,task_type";
    for (const auto& r : runs) {
        const std::string p(to_string(r.policy));
        os << ",n_" << p << ",mean_utility_" << p << ",mean_response_s_" << p << ",mean_waiting_s_" << p << ",dropped_" << p;
    }
    for (const auto& r : runs) os << ",util_ratio_" << to_string(r.policy);
    for (const auto& r : runs) os << ",waiting_reduction_" << to_string(r.policy);
    os << '\n';
    for (const auto& key : keys) {
        detail::write_csv_field(os, wid);
        os << ',';
        detail::write_csv_field(os, key);
        std::vector<std::optional<GroupStats>> row;
        for (const auto& g : per) row.push_back(find_group(g, key));
        for (const auto& g : row) {
            if (g)
                os << ',' << g->n << ',' << format_double(g->mean_utility) << ',' << format_double(g->mean_response_s) << ','
                   << format_double(g->mean_waiting_s) << ',' << g->dropped;
            else
                os << ",0,,,,0";
        }
        auto ratio = [](double a, double b) { return b == 0.0 ? std::string() : format_double(a / b); };
        for (const auto& g : row)
            os << ',' << (row[0] && g && g->n && row[0]->n ? ratio(row[0]->mean_utility, g->mean_utility) : "");
        for (const auto& g : row)
            os << ','
               << (row[0] && g && g->n && row[0]->n && g->mean_waiting_s != 0.0
                       ? format_double(1.0 - row[0]->mean_waiting_s / g->mean_waiting_s)
                       : "");
        os << '\n';
    }
    return os.str();
}

inline constexpr std::string_view kSweepHeader =
    "policy,batch_size,adaptive,n,mean_utility,total_utility,urgent_mean_utility,normal_mean_utility,"
    "mean_response_s,mean_waiting_s,dropped";

inline std::string sweep_csv(const std::vector<RunOutput>& runs) {
    std::ostringstream os;
    os << kSweepHeader << '\n';
    for (const auto& r : runs) {
        const auto all = aggregate(r.metrics, GroupBy::All);
        const auto urg = aggregate(r.metrics, GroupBy::Urgency);
        const GroupStats a = all.empty() ? GroupStats{} : all.front();
        auto mean_of = [&](const char* k) {
            auto g = find_group(urg, k);
            return g && g->n ? format_double(g->mean_utility) : std::string();
        };
        os << to_string(r.policy) << ',' << r.batch_size << ',' << (r.adaptive ? "true" : "false") << ',' << a.n << ','
           << format_double(a.mean_utility) << ',' << format_double(a.total_utility) << ',' << mean_of("urgent") << ','
           << mean_of("normal") << ',' << format_double(a.mean_response_s) << ',' << format_double(a.mean_waiting_s) << ','
           << a.dropped << '\n';
    }
    return os.str();
}

/// Single run: returns the output and writes eventlog.csv and metrics.csv when `write` is set.
inline RunOutput cmd_run(const ExperimentConfig& cfg, bool write = true) {
    const TraceLibrary lib = experiment_library(cfg);
    WorkloadSpec spec = cfg.workload;
    spec.seed = cfg.seed;
    RunOutput out = run_one(make_sim_config(cfg, cfg.policies.front()), spec, lib);
    if (write) {
        write_file_atomic(cfg.out_dir / "eventlog.csv", out.sim.log.to_csv());
        write_file_atomic(cfg.out_dir / "metrics.csv",
                          metrics_csv(std::string(to_string(out.policy)), spec.name, out.metrics));
    }
    return out;
}

inline std::vector<RunOutput> cmd_compare(const ExperimentConfig& cfg, bool write = true) {
    const TraceLibrary lib = experiment_library(cfg);
    WorkloadSpec spec = cfg.workload;
    spec.seed = cfg.seed;
    std::vector<std::function<RunOutput()>> jobs;
    for (auto p : cfg.policies) {
        const SimConfig sc = make_sim_config(cfg, p);
        jobs.push_back([sc, spec, &lib] { return run_one(sc, spec, lib); });
    }
    auto runs = run_parallel(jobs);
    if (write) {
        write_file_atomic(cfg.out_dir / "comparison.csv", comparison_csv(spec.name, runs));
        std::string metrics;
        metrics += kMetricsHeader;
        metrics += '\n';
        for (const auto& r : runs) {
            std::ostringstream os;
            const std::string pn(to_string(r.policy));
            write_metrics_rows(os, pn, spec.name, aggregate(r.metrics, GroupBy::TaskType));
            write_metrics_rows(os, pn, spec.name, aggregate(r.metrics, GroupBy::Urgency));
            write_metrics_rows(os, pn, spec.name, aggregate(r.metrics, GroupBy::All));
            metrics += os.str();
            write_file_atomic(cfg.out_dir / ("eventlog_" + pn + ".csv"), r.sim.log.to_csv());
        }
        write_file_atomic(cfg.out_dir / "metrics.csv", metrics);
    }
    return runs;
}

inline std::vector<RunOutput> cmd_sweep(const ExperimentConfig& cfg, bool write = true) {
    if (cfg.batch_sizes.empty()) throw ConfigError("sweep needs at least one batch size");
    for (int b : cfg.batch_sizes)
        if (b < 1) throw ConfigError("batch sizes must be >= 1");
    const TraceLibrary lib = experiment_library(cfg);
    WorkloadSpec spec = cfg.workload;
    spec.seed = cfg.seed;
    std::vector<std::function<RunOutput()>> jobs;
    for (auto p : cfg.policies)
        for (int b : cfg.batch_sizes) {
            SimConfig sc = make_sim_config(cfg, p);
            sc.scheduler.max_batch_size = b;
            sc.scheduler.adaptive = cfg.adaptive;
            jobs.push_back([sc, spec, &lib] { return run_one(sc, spec, lib); });
        }
    auto runs = run_parallel(jobs);
    if (write) write_file_atomic(cfg.out_dir / "sweep.csv", sweep_csv(runs));
    return runs;
}

}  // namespace tsserve

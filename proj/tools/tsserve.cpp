#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "tsserve/experiment.hpp"
#include "tsserve/oracle.hpp"

namespace {

using namespace tsserve;

constexpr int kExitOk = 0;
constexpr int kExitSim = 1;
constexpr int kExitConfig = 2;

struct CommonFlags {
    std::string workload = "wid1";
    std::string engine;
    std::string scheduler;
    std::string traces;
    std::string policies = "SegPUD";
    std::uint64_t seed = 1;
    std::string out = "out";
    std::string batch_sizes = "2,4,6,8,12,16";
    bool adaptive = false;
    bool dry_run = false;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

WorkloadSpec resolve_workload(const std::string& arg) {
    if (!std::filesystem::exists(arg)) {
        std::string lower = arg;
        for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (lower == "wid1") return wid1();
        if (lower == "wid2") return wid2();
        if (lower == "wid3") return wid3();
    }
    return workload_spec_from_json(load_json_file(arg));
}

ExperimentConfig build_config(const CommonFlags& f) {
    ExperimentConfig cfg;
    cfg.workload = resolve_workload(f.workload);
    cfg.workload_path = f.workload;
    if (!f.engine.empty()) {
        cfg.engine = engine_model_from_json(load_json_file(f.engine));
        cfg.engine_path = f.engine;
    }
    if (!f.scheduler.empty()) {
        cfg.sim = sim_config_from_json(load_json_file(f.scheduler));
        cfg.scheduler_path = f.scheduler;
    }
    if (!f.traces.empty()) {
        if (!std::filesystem::exists(f.traces)) throw ConfigError("cannot open '" + f.traces + "'");
        cfg.traces_path = f.traces;
    }
    cfg.policies.clear();
    for (const auto& p : split_list(f.policies)) cfg.policies.push_back(parse_policy(p));
    if (cfg.policies.empty()) throw ConfigError("no policy given");
    for (const auto& b : split_list(f.batch_sizes)) {
        try {
            cfg.batch_sizes.push_back(std::stoi(b));
        } catch (const std::exception&) {
            throw ConfigError("bad batch size '" + b + "'");
        }
    }
    cfg.adaptive = f.adaptive;
    cfg.seed = f.seed;
    cfg.out_dir = f.out;
    cfg.engine.validate();
    cfg.sim.scheduler.validate();
    return cfg;
}

void report_warnings(const RunOutput& r) {
    for (const auto& w : r.workload.warnings) spdlog::warn("{}", w);
    for (const auto& w : r.sim.warnings) spdlog::warn("{}: {}", to_string(r.policy), w);
    if (!r.sim.quiescent) spdlog::warn("{}: run hit the wall-clock cap; the log is partial", to_string(r.policy));
}

void add_common(CLI::App* sub, CommonFlags& f, bool sweep) {
    sub->add_option("--workload", f.workload, "Workload spec JSON, or wid1/wid2/wid3");
    sub->add_option("--engine", f.engine, "Engine cost model JSON");
    sub->add_option("--scheduler", f.scheduler, "Scheduler options JSON");
    sub->add_option("--traces", f.traces, "Trace library (JSON lines); builtin when omitted");
    sub->add_option("--policy", f.policies, "Policy name or comma-separated list");
    sub->add_option("--seed", f.seed, "Random seed");
    sub->add_option("--out", f.out, "Output directory");
    if (sweep) {
        sub->add_option("--batch-sizes", f.batch_sizes, "Comma-separated max batch sizes");
        sub->add_flag("--adaptive", f.adaptive, "Use admission control instead of the fixed cap");
    }
    sub->add_flag("--dry-run", f.dry_run, "Print the resolved configuration and exit");
}

int cmd_oracle_main(const std::string& instances, int random_count, std::uint64_t seed, const std::string& out) {
    std::vector<nlohmann::json> docs;
    if (!instances.empty()) {
        const auto j = load_json_file(instances);
        if (j.is_array())
            for (const auto& x : j) docs.push_back(x);
        else
            docs.push_back(j);
    }
    std::vector<oracle::TinyInstance> insts;
    for (const auto& d : docs) insts.push_back(oracle::instance_from_json(d));
    std::mt19937_64 rng(seed);
    for (int i = 0; i < random_count; ++i) {
        auto inst = oracle::random_instance(rng);
        inst.name = "random-" + std::to_string(i);
        insts.push_back(std::move(inst));
    }
    nlohmann::json reports = nlohmann::json::array();
    int failures = 0;
    int skipped = 0;
    int flagged = 0;
    for (std::size_t i = 0; i < insts.size(); ++i) {
        const auto& inst = insts[i];
        const std::string label = inst.name.empty() ? "#" + std::to_string(i) : inst.name;
        try {
            const auto rep = oracle::pareto_check(inst);
            auto rj = oracle::report_to_json(rep);
            rj["name"] = label;
            reports.push_back(rj);
            if (rep.hypothesis_violated) {
                ++flagged;
                spdlog::warn("{}: TUF increases with lateness; {} counterexample(s), not counted", label,
                             rep.counterexamples.size());
            } else if (rep.every_argmax_dominated()) {
                ++failures;
                spdlog::error("{}: every utility-maximizing schedule is Pareto-dominated", label);
            } else if (!rep.ok()) {
                spdlog::warn("{}: {} of {} utility-maximizing outcome(s) are Pareto-dominated", label,
                             rep.counterexamples.size(), rep.argmax_vectors);
            }
        } catch (const InstanceTooLarge& e) {
            ++skipped;
            reports.push_back({{"name", label}, {"skipped", e.what()}});
            spdlog::info("{}: skipped, instance too large ({})", label, e.what());
        }
    }
    nlohmann::json summary = {{"instances", insts.size()},
                              {"counterexample_instances", failures},
                              {"hypothesis_violations", flagged},
                              {"skipped", skipped},
                              {"reports", reports}};
    if (!out.empty())
        write_file_atomic(out, summary.dump(2) + "\n");
    std::cout << "instances " << insts.size() << ", counterexamples " << failures << ", flagged " << flagged
              << ", skipped " << skipped << "\n";
    return failures == 0 ? kExitOk : kExitSim;
}

}  // namespace

int main(int argc, char** argv) {
    auto logger = spdlog::stderr_color_mt("tsserve");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    if (const char* lvl = std::getenv("TSSERVE_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(lvl));

    CLI::App app{"Time-sensitive LLM serving simulator"};
    app.require_subcommand(1);

    CommonFlags run_f, cmp_f, sweep_f;
    cmp_f.policies = "SegPUD,FCFSBatch";
    sweep_f.policies = "SegPUD,FCFSBatch";
    sweep_f.workload = "wid2";
    auto* run_cmd = app.add_subcommand("run", "Run one simulation; writes eventlog.csv and metrics.csv");
    add_common(run_cmd, run_f, false);
    auto* cmp_cmd = app.add_subcommand("compare", "Run several policies on the same workload; writes comparison.csv");
    add_common(cmp_cmd, cmp_f, false);
    auto* sweep_cmd = app.add_subcommand("sweep", "Batch-size sweep; writes sweep.csv");
    add_common(sweep_cmd, sweep_f, true);

    std::string oracle_instances, oracle_out;
    int oracle_random = 0;
    std::uint64_t oracle_seed = 1;
    auto* oracle_cmd = app.add_subcommand("oracle", "Brute-force Pareto check of tiny instances");
    oracle_cmd->add_option("instances", oracle_instances, "Instance JSON (object or array)");
    oracle_cmd->add_option("--random", oracle_random, "Also check N seeded random instances");
    oracle_cmd->add_option("--seed", oracle_seed, "Seed for random instances");
    oracle_cmd->add_option("--out", oracle_out, "Write the JSON report here");

    std::string export_path;
    auto* traces_cmd = app.add_subcommand("traces", "List or export the builtin trace library");
    traces_cmd->add_option("--export", export_path, "Write the builtin library as JSON lines");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*oracle_cmd) {
            if (oracle_instances.empty() && oracle_random == 0) throw ConfigError("oracle needs an instance file or --random N");
            return cmd_oracle_main(oracle_instances, oracle_random, oracle_seed, oracle_out);
        }
        if (*traces_cmd) {
            const auto& lib = builtin_library();
            if (!export_path.empty()) {
                std::string text;
                for (const auto& t : lib.traces) text += trace_to_json_line(t) + "\n";
                write_file_atomic(export_path, text);
            }
            for (const auto& t : lib.traces)
                std::cout << t.trace_id << '\t' << to_string(t.category) << '\t' << t.plan.size() << " skills\t"
                          << t.plan_tokens() << " tokens\t" << t.description << '\n';
            return kExitOk;
        }

        CLI::App* sub = *run_cmd ? run_cmd : *cmp_cmd ? cmp_cmd : sweep_cmd;
        const CommonFlags& f = *run_cmd ? run_f : *cmp_cmd ? cmp_f : sweep_f;
        ExperimentConfig cfg = build_config(f);
        if (f.dry_run) {
            auto j = cfg.to_json();
            j["command"] = sub->get_name();
            std::cout << j.dump(2) << '\n';
            return kExitOk;
        }
        if (*run_cmd) {
            if (cfg.policies.size() > 1) throw ConfigError("run takes a single policy; use compare for several");
            auto r = cmd_run(cfg);
            report_warnings(r);
            spdlog::info("{} on {}: {} requests completed, {} dropped", to_string(r.policy), cfg.workload.name,
                         r.metrics.completed.size(), r.metrics.incomplete.size());
        } else if (*cmp_cmd) {
            for (const auto& r : cmd_compare(cfg)) report_warnings(r);
            spdlog::info("wrote {}", (cfg.out_dir / "comparison.csv").string());
        } else {
            for (const auto& r : cmd_sweep(cfg)) report_warnings(r);
            spdlog::info("wrote {}", (cfg.out_dir / "sweep.csv").string());
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return kExitConfig;
    } catch (const ParseError& e) {
        spdlog::error("{}", e.what());
        return kExitConfig;
    } catch (const UnknownPolicy& e) {
        spdlog::error("{}", e.what());
        return kExitConfig;
    } catch (const EmptyTracePool& e) {
        spdlog::error("{}", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitSim;
    }
}

// Runs the builtin WID1 workload under a few policies and prints per-urgency means.
#include <cstdio>

#include "tsserve/builtin_traces.hpp"
#include "tsserve/metrics.hpp"
#include "tsserve/simcore.hpp"

int main() {
    using namespace tsserve;
    const TraceLibrary& lib = builtin_library();
    const WorkloadSpec spec = wid1();
    const Workload wl = compose_workload(spec, lib);
    std::printf("%zu requests over %.0f s\n", wl.arrivals.size(), spec.duration_s);
    std::printf("%-12s %10s %10s %12s\n", "policy", "urgent", "normal", "wait (s)");
    for (PolicyKind p : {PolicyKind::SegPUD, PolicyKind::SegEDF, PolicyKind::StreamFCFS, PolicyKind::FCFSBatch}) {
        SimConfig cfg;
        cfg.scheduler.policy = p;
        cfg.horizon_s = spec.duration_s;
        const SimResult r = run(cfg, lib, wl.arrivals);
        const LogMetrics lm = compute_all_metrics(r.log);
        const auto by_urgency = aggregate(lm, GroupBy::Urgency);
        const auto all = aggregate(lm, GroupBy::All);
        const double urgent = find_group(by_urgency, "urgent").value_or(GroupStats{}).mean_utility;
        const double normal = find_group(by_urgency, "normal").value_or(GroupStats{}).mean_utility;
        std::printf("%-12s %10.3f %10.3f %12.3f\n", std::string(to_string(p)).c_str(), urgent, normal,
                    all.empty() ? 0.0 : all.front().mean_waiting_s);
    }
}

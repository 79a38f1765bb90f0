#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <regex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsserve/errors.hpp"
#include "tsserve/workload.hpp"

namespace tsserve {

/// Cost model of the simulated inference engine. Times in milliseconds,
/// memory in megabytes.
struct EngineCostModel {
    double decode_ms_per_token = 21.77;
    double prefill_ms_per_prompt_token = 328.45 / 2884.0;
    double batch_slowdown_gamma = 0.05;
    double kv_mb_per_request = 170.35;
    double gpu_memory_mb = 5600.0;
    double swap_restore_ms = 9.50;
    double reprefill_ms = 133.31;
    double detok_ms_per_token = 0.052 / 15.0;
    /// Incremental detokenize + pattern match per emitted token; only charged
    /// to generations that run a stop checker.
    double stop_check_ms_per_token = 0.7;
    double network_latency_ms = 8.0;
    /// Drop KV caches at suspension and re-prefill on resume.
    bool kv_cache_disabled = false;

    void validate() const {
        const double fields[] = {decode_ms_per_token, prefill_ms_per_prompt_token, batch_slowdown_gamma,
                                 kv_mb_per_request,   gpu_memory_mb,               swap_restore_ms,
                                 reprefill_ms,        detok_ms_per_token,          stop_check_ms_per_token,
                                 network_latency_ms};
        for (double f : fields)
            if (!(f >= 0.0)) throw ConfigError("engine cost model fields must be >= 0");
        if (!(swap_restore_ms < reprefill_ms) && !(swap_restore_ms == 0.0 && reprefill_ms == 0.0))
            throw ConfigError("swap_restore_ms must be smaller than reprefill_ms");
    }

    /// Per-iteration latency of `n` steady-state (no prefill, no restore)
    /// generations, including per-token detokenization and stop checks.
    double steady_iteration_ms(int n, int stop_checked) const {
        return decode_ms_per_token * (1.0 + batch_slowdown_gamma * (n - 1)) + n * detok_ms_per_token +
               stop_checked * stop_check_ms_per_token;
    }
};

inline EngineCostModel engine_model_from_json(const nlohmann::json& j) {
    EngineCostModel m;
    try {
        m.decode_ms_per_token = j.value("decode_ms_per_token", m.decode_ms_per_token);
        m.prefill_ms_per_prompt_token = j.value("prefill_ms_per_prompt_token", m.prefill_ms_per_prompt_token);
        m.batch_slowdown_gamma = j.value("batch_slowdown_gamma", m.batch_slowdown_gamma);
        m.kv_mb_per_request = j.value("kv_mb_per_request", m.kv_mb_per_request);
        m.gpu_memory_mb = j.value("gpu_memory_mb", m.gpu_memory_mb);
        m.swap_restore_ms = j.value("swap_restore_ms", m.swap_restore_ms);
        m.reprefill_ms = j.value("reprefill_ms", m.reprefill_ms);
        m.detok_ms_per_token = j.value("detok_ms_per_token", m.detok_ms_per_token);
        m.stop_check_ms_per_token = j.value("stop_check_ms_per_token", m.stop_check_ms_per_token);
        m.network_latency_ms = j.value("network_latency_ms", m.network_latency_ms);
        m.kv_cache_disabled = j.value("kv_cache_disabled", m.kv_cache_disabled);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("engine cost model: ") + e.what());
    }
    m.validate();
    return m;
}

inline nlohmann::json engine_model_to_json(const EngineCostModel& m) {
    return {{"decode_ms_per_token", m.decode_ms_per_token},
            {"prefill_ms_per_prompt_token", m.prefill_ms_per_prompt_token},
            {"batch_slowdown_gamma", m.batch_slowdown_gamma},
            {"kv_mb_per_request", m.kv_mb_per_request},
            {"gpu_memory_mb", m.gpu_memory_mb},
            {"swap_restore_ms", m.swap_restore_ms},
            {"reprefill_ms", m.reprefill_ms},
            {"detok_ms_per_token", m.detok_ms_per_token},
            {"stop_check_ms_per_token", m.stop_check_ms_per_token},
            {"network_latency_ms", m.network_latency_ms},
            {"kv_cache_disabled", m.kv_cache_disabled}};
}

// ---------------------------------------------------------------------------
// Token scripts
// ---------------------------------------------------------------------------

struct ScriptToken {
    std::int32_t id = 0;
    std::string text;
    int item = 0;           // index of the plan item this token belongs to
    bool item_end = false;  // last token of that item
};

/// Token stream of a scripted plan. Each plan item's text is split into
/// `token_count` contiguous fragments, so item boundaries are token boundaries.
struct TokenScript {
    std::vector<ScriptToken> tokens;
    std::vector<int> item_end_token;  // exclusive end token index per item

    static constexpr std::int32_t kVocabSize = 128256;

    static std::int32_t token_id(std::string_view fragment) {
        std::uint32_t h = 2166136261u;
        for (unsigned char c : fragment) {
            h ^= c;
            h *= 16777619u;
        }
        return static_cast<std::int32_t>(h % kVocabSize);
    }

    static TokenScript from_trace(const TaskTrace& trace) {
        TokenScript s;
        for (std::size_t i = 0; i < trace.plan.size(); ++i) {
            const std::string text = render_skill(trace.plan[i]);
            const int n = trace.plan[i].token_count;
            const std::size_t base = text.size() / static_cast<std::size_t>(n);
            const std::size_t extra = text.size() % static_cast<std::size_t>(n);
            std::size_t pos = 0;
            for (int k = 0; k < n; ++k) {
                const std::size_t len = base + (static_cast<std::size_t>(k) < extra ? 1 : 0);
                std::string frag = text.substr(pos, len);
                pos += len;
                s.tokens.push_back({token_id(frag), std::move(frag), static_cast<int>(i), k == n - 1});
            }
            s.item_end_token.push_back(static_cast<int>(s.tokens.size()));
        }
        return s;
    }

    std::size_t size() const { return tokens.size(); }
};

inline std::uint64_t fnv1a_ids(std::span<const std::int32_t> ids) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::int32_t id : ids) {
        for (int b = 0; b < 4; ++b) {
            h ^= static_cast<std::uint64_t>((static_cast<std::uint32_t>(id) >> (8 * b)) & 0xffu);
            h *= 1099511628211ull;
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// Stop rules
// ---------------------------------------------------------------------------

struct StopRule {
    enum class Kind { SkillPattern, Sentence, Paragraph, None };

    Kind kind = Kind::None;
    std::vector<std::string> patterns;
    /// Forced boundary once a segment reaches this many tokens (0 = no cap).
    int segment_token_cap = 0;

    static constexpr std::string_view kDefaultSkillPattern = R"([A-Za-z_][A-Za-z0-9_]*\([^()]*\);)";

    static StopRule skill_pattern(std::vector<std::string> pats = {std::string(kDefaultSkillPattern)}, int cap = 10) {
        if (pats.empty()) throw ConfigError("skill-pattern stop rule needs at least one pattern");
        StopRule r;
        r.kind = Kind::SkillPattern;
        r.patterns = std::move(pats);
        r.segment_token_cap = cap;
        r.compile();
        return r;
    }
    static StopRule sentence(int cap = 0) { return {Kind::Sentence, {}, cap, {}}; }
    static StopRule paragraph(int cap = 0) { return {Kind::Paragraph, {}, cap, {}}; }
    static StopRule none() { return {}; }

    bool matches(std::string_view segment_text) const {
        switch (kind) {
            case Kind::None: return false;
            case Kind::SkillPattern: {
                for (const auto& re : *compiled)
                    if (std::regex_search(segment_text.begin(), segment_text.end(), re)) return true;
                return false;
            }
            case Kind::Sentence: {
                std::size_t end = segment_text.find_last_not_of(" \t\r\n");
                if (end == std::string_view::npos) return false;
                while (end > 0 && (segment_text[end] == '"' || segment_text[end] == '\'' || segment_text[end] == ')'))
                    --end;
                const char c = segment_text[end];
                return c == '.' || c == '!' || c == '?';
            }
            case Kind::Paragraph:
                return segment_text.size() >= 2 && segment_text.substr(segment_text.size() - 2) == "\n\n";
        }
        return false;
    }

    std::shared_ptr<const std::vector<std::regex>> compiled;

private:
    void compile() {
        auto res = std::make_shared<std::vector<std::regex>>();
        for (const auto& p : patterns) {
            try {
                // Anchored at the end: the newest fragment must close a call.
                res->emplace_back("(?:" + p + ")\\s*$", std::regex::ECMAScript | std::regex::optimize);
            } catch (const std::regex_error& e) {
                throw ConfigError("invalid stop pattern '" + p + "': " + e.what());
            }
        }
        compiled = std::move(res);
    }
};

inline StopRule::Kind parse_stop_rule_kind(std::string_view s) {
    if (s == "skill_pattern") return StopRule::Kind::SkillPattern;
    if (s == "sentence") return StopRule::Kind::Sentence;
    if (s == "paragraph") return StopRule::Kind::Paragraph;
    if (s == "none") return StopRule::Kind::None;
    throw ConfigError("unknown stop rule '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Generation state
// ---------------------------------------------------------------------------

enum class KvLocation { GPU, Host, None };
enum class GenStatus { Queued, Running, Suspended, Finished };

inline std::string_view to_string(KvLocation l) {
    switch (l) {
        case KvLocation::GPU: return "gpu";
        case KvLocation::Host: return "host";
        case KvLocation::None: return "none";
    }
    return "?";
}

struct TokenTiming {
    double time_s = 0.0;
    double steady_ms = 0.0;  // iteration latency minus one-off prefill/restore lumps
    int batch = 1;
    int stop_checked = 0;
};

struct GenerationState {
    int request_id = 0;
    int agent_id = 0;
    const TaskTrace* trace = nullptr;
    std::shared_ptr<const TokenScript> script;

    int segment_index = 0;
    int tokens_emitted_total = 0;
    int tokens_in_current_segment = 0;
    int plan_cursor = 0;          // next token to emit
    int segment_first_item = 0;   // first plan item of the current segment
    std::string segment_text;

    KvLocation kv_location = KvLocation::None;
    double kv_size_mb = 0.0;
    GenStatus status = GenStatus::Queued;
    std::deque<TokenTiming> recent_tokens;
    static constexpr std::size_t kRecentCapacity = 16;

    bool prefilled = false;
    bool stop_checked = true;
    int segment_token_cap = 0;  // 0 = scheduler default
    double suspended_at_s = 0.0;
    double pending_restore_ms = 0.0;
    std::vector<std::int32_t> emitted_ids;

    bool plan_done() const { return static_cast<std::size_t>(plan_cursor) >= script->size(); }

    /// Number of plan items fully emitted so far.
    int items_completed() const {
        if (plan_cursor == 0) return 0;
        const ScriptToken& last = script->tokens[static_cast<std::size_t>(plan_cursor - 1)];
        return last.item_end ? last.item + 1 : last.item;
    }
};

struct SegmentBoundary {
    int first_item = 0;
    int end_item = 0;  // exclusive
    std::vector<SkillCall> skills;
    bool end_of_plan = false;
    bool forced = false;
};

/// Decides whether the newest fragment closes a segment. `gen` already
/// contains the fragment in its segment text.
inline std::optional<SegmentBoundary> check_segment_boundary(const StopRule& rule, const GenerationState& gen,
                                                             std::string_view /*new_fragment*/) {
    const int completed = gen.items_completed();
    auto make = [&](bool eop, bool forced) {
        SegmentBoundary b;
        b.first_item = gen.segment_first_item;
        b.end_item = completed;
        b.end_of_plan = eop;
        b.forced = forced;
        for (int i = b.first_item; i < b.end_item; ++i)
            b.skills.push_back(gen.trace->plan[static_cast<std::size_t>(i)]);
        return b;
    };
    if (gen.plan_done()) return make(true, false);
    if (rule.kind == StopRule::Kind::None) return std::nullopt;
    if (completed <= gen.segment_first_item) return std::nullopt;
    if (rule.matches(gen.segment_text)) return make(false, false);
    if (rule.segment_token_cap > 0 && gen.tokens_in_current_segment >= rule.segment_token_cap) return make(false, true);
    return std::nullopt;
}

struct TokenEmission {
    int request_id = 0;
    int token_index = 0;
    std::int32_t token_id = 0;
    std::string text_fragment;
    bool end_of_plan = false;
};

struct SuspendReceipt {
    double kv_size_mb = 0.0;
    std::vector<std::int32_t> token_snapshot;

    static constexpr std::size_t kSnapshotHeaderBytes = 40;
    static constexpr std::size_t kBytesPerTokenId = 8;

    std::size_t snapshot_bytes() const { return kSnapshotHeaderBytes + kBytesPerTokenId * token_snapshot.size(); }
};

template <class Range>
double iteration_latency(const EngineCostModel& model, const Range& batch) {
    std::size_t n = 0;
    double prefill = 0.0;
    for (const GenerationState* g : batch) {
        ++n;
        if (!g->prefilled) prefill += model.prefill_ms_per_prompt_token * g->trace->prompt_tokens;
    }
    if (n == 0) throw std::invalid_argument("iteration_latency: empty batch");
    return model.decode_ms_per_token * (1.0 + model.batch_slowdown_gamma * static_cast<double>(n - 1)) + prefill;
}

struct StepResult {
    double latency_ms = 0.0;
    double end_time_s = 0.0;
    std::vector<TokenEmission> emissions;
};

/// Token-granular continuous-batching engine. Owns every generation that has
/// been admitted at least once and not yet released.
class Engine {
public:
    explicit Engine(EngineCostModel model) : model_(model) { model_.validate(); }

    const EngineCostModel& model() const { return model_; }
    double clock_s() const { return clock_s_; }

    double resident_mb() const { return resident_mb_; }
    double free_gpu_memory() const { return model_.gpu_memory_mb - resident_mb_; }

    const std::vector<int>& running() const { return running_; }
    bool idle() const { return running_.empty(); }

    bool contains(int id) const { return contexts_.count(id) != 0; }
    const GenerationState& at(int id) const { return contexts_.at(id); }
    GenerationState& at(int id) { return contexts_.at(id); }
    const std::map<int, GenerationState>& contexts() const { return contexts_; }

    std::vector<const GenerationState*> running_states() const {
        std::vector<const GenerationState*> out;
        out.reserve(running_.size());
        for (int id : running_) out.push_back(&contexts_.at(id));
        return out;
    }

    /// Memory that could be made free by evicting suspended GPU-resident contexts.
    double evictable_mb(int except_id = -1) const {
        double mb = 0.0;
        for (const auto& [id, g] : contexts_)
            if (id != except_id && g.status == GenStatus::Suspended && g.kv_location == KvLocation::GPU)
                mb += g.kv_size_mb;
        return mb;
    }

    /// KV footprint a generation needs on GPU before it can run.
    double kv_requirement(int id) const {
        auto it = contexts_.find(id);
        if (it == contexts_.end()) return model_.kv_mb_per_request;
        return it->second.kv_location == KvLocation::GPU ? 0.0 : it->second.kv_size_mb;
    }

    /// Evicts suspended contexts to host memory, oldest suspension first, until
    /// `needed_mb` is free. Returns the evicted request ids.
    std::vector<int> evict_for(double needed_mb, int except_id = -1) {
        std::vector<GenerationState*> cands;
        for (auto& [id, g] : contexts_)
            if (id != except_id && g.status == GenStatus::Suspended && g.kv_location == KvLocation::GPU)
                cands.push_back(&g);
        std::stable_sort(cands.begin(), cands.end(), [](const GenerationState* a, const GenerationState* b) {
            return a->suspended_at_s < b->suspended_at_s;
        });
        std::vector<int> evicted;
        for (GenerationState* g : cands) {
            if (free_gpu_memory() >= needed_mb) break;
            g->kv_location = KvLocation::Host;
            resident_mb_ -= g->kv_size_mb;
            evicted.push_back(g->request_id);
        }
        return evicted;
    }

    GenerationState& admit_new(int request_id, int agent_id, const TaskTrace& trace,
                               std::shared_ptr<const TokenScript> script, bool stop_checked, double now) {
        if (contexts_.count(request_id)) throw std::logic_error("generation already admitted");
        if (free_gpu_memory() < model_.kv_mb_per_request)
            throw OutOfMemory("no GPU memory for request " + std::to_string(request_id));
        GenerationState g;
        g.request_id = request_id;
        g.agent_id = agent_id;
        g.trace = &trace;
        g.script = std::move(script);
        g.kv_location = KvLocation::GPU;
        g.kv_size_mb = model_.kv_mb_per_request;
        g.status = GenStatus::Running;
        g.stop_checked = stop_checked;
        resident_mb_ += g.kv_size_mb;
        running_.push_back(request_id);
        clock_s_ = std::max(clock_s_, now);
        return contexts_.emplace(request_id, std::move(g)).first->second;
    }

    SuspendReceipt suspend(int id, double now) {
        GenerationState& g = contexts_.at(id);
        if (g.status != GenStatus::Running) throw std::logic_error("suspend: generation not running");
        g.status = GenStatus::Suspended;
        g.suspended_at_s = now;
        std::erase(running_, id);
        if (model_.kv_cache_disabled) {
            resident_mb_ -= g.kv_size_mb;
            g.kv_location = KvLocation::None;
        }
        return {g.kv_size_mb, g.emitted_ids};
    }

    /// Restores a suspended context; returns the latency charged to the next iteration.
    double resume(int id, double now) {
        GenerationState& g = contexts_.at(id);
        if (g.status != GenStatus::Suspended) throw std::logic_error("resume: generation not suspended");
        double latency = 0.0;
        if (model_.kv_cache_disabled || g.kv_location == KvLocation::None) {
            if (free_gpu_memory() < g.kv_size_mb) throw OutOfMemory("no GPU memory to re-prefill");
            latency = model_.reprefill_ms;
            resident_mb_ += g.kv_size_mb;
        } else if (g.kv_location == KvLocation::Host) {
            if (free_gpu_memory() < g.kv_size_mb) throw OutOfMemory("no GPU memory to restore context");
            latency = model_.swap_restore_ms;
            resident_mb_ += g.kv_size_mb;
        }
        g.kv_location = KvLocation::GPU;
        g.status = GenStatus::Running;
        g.pending_restore_ms += latency;
        running_.push_back(id);
        clock_s_ = std::max(clock_s_, now);
        return latency;
    }

    /// Starts a new segment after a boundary: tokens past the boundary's last
    /// completed item carry over into the next segment.
    void begin_next_segment(int id, const SegmentBoundary& b) {
        GenerationState& g = contexts_.at(id);
        const int carried_from = g.script->item_end_token.empty() || b.end_item == 0
                                     ? 0
                                     : g.script->item_end_token[static_cast<std::size_t>(b.end_item - 1)];
        g.segment_text.clear();
        for (int t = carried_from; t < g.plan_cursor; ++t) g.segment_text += g.script->tokens[static_cast<std::size_t>(t)].text;
        g.tokens_in_current_segment = g.plan_cursor - carried_from;
        g.segment_first_item = b.end_item;
        ++g.segment_index;
    }

    /// Frees a finished (or aborted) generation.
    void release(int id) {
        auto it = contexts_.find(id);
        if (it == contexts_.end()) return;
        if (it->second.kv_location == KvLocation::GPU) resident_mb_ -= it->second.kv_size_mb;
        std::erase(running_, id);
        contexts_.erase(it);
    }

    /// Advances every running generation by one token.
    StepResult step_iteration(double now) {
        if (running_.empty()) throw std::logic_error("step_iteration: empty running batch");
        const auto batch = running_states();
        double lump = 0.0;
        int checked = 0;
        for (const GenerationState* g : batch) {
            if (!g->prefilled) lump += model_.prefill_ms_per_prompt_token * g->trace->prompt_tokens;
            lump += g->pending_restore_ms;
            checked += g->stop_checked ? 1 : 0;
        }
        const int n = static_cast<int>(batch.size());
        const double base = iteration_latency(model_, batch);
        const double restores = [&] {
            double r = 0.0;
            for (const GenerationState* g : batch) r += g->pending_restore_ms;
            return r;
        }();
        StepResult res;
        res.latency_ms = base + restores + n * model_.detok_ms_per_token + checked * model_.stop_check_ms_per_token;
        const double steady = res.latency_ms - lump;
        clock_s_ = std::max(clock_s_, now) + res.latency_ms / 1000.0;
        res.end_time_s = clock_s_;
        busy_ms_ += res.latency_ms;
        restore_ms_ += restores;
        ++iterations_;
        for (int id : running_) {
            GenerationState& g = contexts_.at(id);
            const ScriptToken& tok = g.script->tokens[static_cast<std::size_t>(g.plan_cursor)];
            TokenEmission e;
            e.request_id = id;
            e.token_index = g.plan_cursor;
            e.token_id = tok.id;
            e.text_fragment = tok.text;
            ++g.plan_cursor;
            ++g.tokens_emitted_total;
            ++g.tokens_in_current_segment;
            g.segment_text += tok.text;
            g.emitted_ids.push_back(tok.id);
            g.prefilled = true;
            g.pending_restore_ms = 0.0;
            g.recent_tokens.push_back({res.end_time_s, steady, n, checked});
            if (g.recent_tokens.size() > GenerationState::kRecentCapacity) g.recent_tokens.pop_front();
            e.end_of_plan = g.plan_done();
            if (e.end_of_plan) g.status = GenStatus::Finished;
            res.emissions.push_back(std::move(e));
        }
        return res;
    }

    double busy_ms() const { return busy_ms_; }
    double restore_ms() const { return restore_ms_; }
    long iterations() const { return iterations_; }

private:
    EngineCostModel model_;
    std::map<int, GenerationState> contexts_;
    std::vector<int> running_;
    double resident_mb_ = 0.0;
    double clock_s_ = 0.0;
    double busy_ms_ = 0.0;
    double restore_ms_ = 0.0;
    long iterations_ = 0;
};

}  // namespace tsserve

#pragma once

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsserve/errors.hpp"

namespace tsserve {

enum class EventKind {
    Arrival,
    IterationDone,
    SegmentDispatched,
    ActionStart,
    ActionEnd,
    RequestComplete,
    Suspend,
    Resume,
    AdmissionRefused,
};

inline std::string_view to_string(EventKind k) {
    switch (k) {
        case EventKind::Arrival: return "Arrival";
        case EventKind::IterationDone: return "IterationDone";
        case EventKind::SegmentDispatched: return "SegmentDispatched";
        case EventKind::ActionStart: return "ActionStart";
        case EventKind::ActionEnd: return "ActionEnd";
        case EventKind::RequestComplete: return "RequestComplete";
        case EventKind::Suspend: return "Suspend";
        case EventKind::Resume: return "Resume";
        case EventKind::AdmissionRefused: return "AdmissionRefused";
    }
    return "?";
}

inline EventKind parse_event_kind(std::string_view s) {
    for (int i = 0; i <= static_cast<int>(EventKind::AdmissionRefused); ++i) {
        const auto k = static_cast<EventKind>(i);
        if (to_string(k) == s) return k;
    }
    throw ParseError("<eventlog>", 0, "unknown event kind '" + std::string(s) + "'");
}

struct SimEvent {
    double time = 0.0;
    EventKind kind = EventKind::Arrival;
    int request_id = -1;
    int agent_id = -1;
    nlohmann::json payload = nlohmann::json::object();
};

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return ec == std::errc{} ? std::string(buf, end) : std::to_string(v);
}

namespace detail {
inline void write_csv_field(std::ostream& os, std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) {
        os << s;
        return;
    }
    os << '"';
    for (char c : s) {
        if (c == '"') os << '"';
        os << c;
    }
    os << '"';
}

/// Splits one CSV record; handles quoted fields with doubled quotes.
inline std::vector<std::string> split_csv_record(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}
}  // namespace detail

struct EventLog {
    std::vector<SimEvent> events;

    static constexpr std::string_view kHeader = "time_s,kind,request_id,agent_id,payload";

    void add(double t, EventKind k, int request, int agent, nlohmann::json payload = nlohmann::json::object()) {
        events.push_back({t, k, request, agent, std::move(payload)});
    }

    void write_csv(std::ostream& os) const {
        os << kHeader << '\n';
        for (const auto& e : events) {
            os << format_double(e.time) << ',' << to_string(e.kind) << ',' << e.request_id << ',' << e.agent_id << ',';
            detail::write_csv_field(os, e.payload.dump());
            os << '\n';
        }
    }

    std::string to_csv() const {
        std::ostringstream os;
        write_csv(os);
        return os.str();
    }

    static EventLog read_csv(std::istream& in, const std::string& source = "<eventlog>") {
        EventLog log;
        std::string line;
        std::size_t line_no = 0;
        if (!std::getline(in, line) || line != kHeader) throw ParseError(source, 1, "missing event log header");
        ++line_no;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const auto f = detail::split_csv_record(line);
            if (f.size() != 5) throw ParseError(source, line_no, "expected 5 fields");
            try {
                SimEvent e;
                e.time = std::stod(f[0]);
                e.kind = parse_event_kind(f[1]);
                e.request_id = std::stoi(f[2]);
                e.agent_id = std::stoi(f[3]);
                e.payload = nlohmann::json::parse(f[4]);
                log.events.push_back(std::move(e));
            } catch (const ParseError& pe) {
                throw ParseError(source, line_no, pe.what());
            } catch (const std::exception& ex) {
                throw ParseError(source, line_no, ex.what());
            }
        }
        return log;
    }
};

}  // namespace tsserve

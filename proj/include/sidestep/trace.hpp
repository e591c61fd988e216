#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sidestep/common.hpp"

namespace sidestep {

// Captured pointer payload: what the recorder read from the traced process
// at event time. Index is the argument slot holding the pointer.
struct DerefValue {
    enum class Kind { Str, Bytes };
    Kind kind = Kind::Str;
    std::string str;
    std::vector<std::uint8_t> bytes;

    bool operator==(const DerefValue&) const = default;
};

struct SyscallEvent {
    std::uint64_t seq = 0;
    Phase phase = Phase::Enter;
    std::int32_t pid = 0;
    std::int32_t tid = 0;
    std::string comm;
    std::string tname;
    std::string syscall;
    std::array<std::uint64_t, 6> args{};
    std::int64_t retval = 0; // exit events only
    std::uint64_t pc = 0;
    std::vector<std::uint64_t> stack; // stack[0], when present, repeats pc
    std::map<int, DerefValue> deref;
    std::uint64_t ts = 0;

    bool operator==(const SyscallEvent&) const = default;
};

namespace detail {

inline std::uint64_t trace_hex(const nlohmann::json& v, const std::string& where) {
    if (!v.is_string()) throw ParseError(where + ": expected a hex string");
    auto parsed = parse_hex_u64(v.get<std::string>());
    if (!parsed) throw ParseError(where + ": bad hex value \"" + v.get<std::string>() + "\"");
    return *parsed;
}

inline SyscallEvent parse_trace_line(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object()) throw ParseError(where + ": expected an object");
    static const char* known[] = {"seq",  "phase",  "pid",   "tid",  "comm", "tname",
                                  "syscall", "args", "retval", "pc",   "stack", "deref", "ts"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw ParseError(where + ": unknown field \"" + it.key() + "\"");
    }
    for (const char* k : {"seq", "phase", "pid", "tid", "comm", "tname", "syscall", "args",
                          "pc", "ts"}) {
        if (!j.contains(k)) throw ParseError(where + ": missing field \"" + k + "\"");
    }

    SyscallEvent ev;
    if (!j["seq"].is_number_unsigned()) throw ParseError(where + ".seq: expected an unsigned number");
    ev.seq = j["seq"].get<std::uint64_t>();
    if (!j["phase"].is_string()) throw ParseError(where + ".phase: expected a string");
    auto phase = phase_from(j["phase"].get<std::string>());
    if (!phase) throw ParseError(where + ".phase: expected \"enter\" or \"exit\"");
    ev.phase = *phase;
    if (!j["pid"].is_number_integer()) throw ParseError(where + ".pid: expected a number");
    ev.pid = j["pid"].get<std::int32_t>();
    if (!j["tid"].is_number_integer()) throw ParseError(where + ".tid: expected a number");
    ev.tid = j["tid"].get<std::int32_t>();
    if (!j["comm"].is_string()) throw ParseError(where + ".comm: expected a string");
    ev.comm = j["comm"].get<std::string>();
    if (ev.comm.size() > 15) throw ParseError(where + ".comm: longer than 15 bytes");
    if (!j["tname"].is_string()) throw ParseError(where + ".tname: expected a string");
    ev.tname = j["tname"].get<std::string>();
    if (!j["syscall"].is_string() || j["syscall"].get<std::string>().empty()) {
        throw ParseError(where + ".syscall: expected a non-empty string");
    }
    ev.syscall = j["syscall"].get<std::string>();

    const auto& args = j["args"];
    if (!args.is_array() || args.size() != 6) {
        throw ParseError(where + ".args: expected an array of 6 hex strings");
    }
    for (std::size_t i = 0; i < 6; ++i) {
        ev.args[i] = trace_hex(args[i], where + ".args[" + std::to_string(i) + "]");
    }

    if (j.contains("retval")) {
        if (ev.phase != Phase::Exit) throw ParseError(where + ".retval: only valid on exit events");
        if (!j["retval"].is_number_integer()) {
            throw ParseError(where + ".retval: expected an integer");
        }
        ev.retval = j["retval"].get<std::int64_t>();
    } else if (ev.phase == Phase::Exit) {
        throw ParseError(where + ": exit event without retval");
    }

    ev.pc = trace_hex(j["pc"], where + ".pc");
    if (j.contains("stack")) {
        const auto& stack = j["stack"];
        if (!stack.is_array()) throw ParseError(where + ".stack: expected an array");
        for (std::size_t i = 0; i < stack.size(); ++i) {
            ev.stack.push_back(trace_hex(stack[i], where + ".stack[" + std::to_string(i) + "]"));
        }
        if (!ev.stack.empty() && ev.stack[0] != ev.pc) {
            throw ParseError(where + ".stack: first frame does not match pc");
        }
    }

    if (j.contains("deref")) {
        const auto& deref = j["deref"];
        if (!deref.is_object()) throw ParseError(where + ".deref: expected an object");
        for (auto it = deref.begin(); it != deref.end(); ++it) {
            const std::string& key = it.key();
            if (key.size() != 1 || key[0] < '0' || key[0] > '5') {
                throw ParseError(where + ".deref: bad key \"" + key + "\"");
            }
            int index = key[0] - '0';
            const auto& entry = *it;
            if (!entry.is_object() || !entry.contains("kind") || !entry.contains("value") ||
                !entry["kind"].is_string() || !entry["value"].is_string()) {
                throw ParseError(where + ".deref." + key +
                                 ": expected {\"kind\": ..., \"value\": ...}");
            }
            DerefValue v;
            std::string kind = entry["kind"].get<std::string>();
            if (kind == "str") {
                v.kind = DerefValue::Kind::Str;
                v.str = entry["value"].get<std::string>();
            } else if (kind == "bytes") {
                v.kind = DerefValue::Kind::Bytes;
                try {
                    v.bytes = decode_byte_string(entry["value"].get<std::string>());
                } catch (const ParseError& e) {
                    throw ParseError(where + ".deref." + key + ": " + e.what());
                }
            } else {
                throw ParseError(where + ".deref." + key + ".kind: expected \"str\" or \"bytes\"");
            }
            ev.deref[index] = std::move(v);
        }
    }

    if (!j["ts"].is_number_unsigned()) throw ParseError(where + ".ts: expected an unsigned number");
    ev.ts = j["ts"].get<std::uint64_t>();
    return ev;
}

} // namespace detail

// One JSON object per line. Cross-event checks: seq strictly increasing, and
// every exit pairs with the latest still-open enter of the same thread, with
// the same syscall name and identical argument registers. Enter events may
// stay unclosed (a call that never returned).
inline std::vector<SyscallEvent> parse_trace(std::string_view source) {
    std::vector<SyscallEvent> events;
    std::map<std::int32_t, std::vector<std::size_t>> open; // tid -> indices of open enters

    std::size_t pos = 0;
    int line_no = 0;
    std::uint64_t last_seq = 0;
    while (pos < source.size()) {
        std::size_t eol = source.find('\n', pos);
        if (eol == std::string_view::npos) eol = source.size();
        std::string_view line = source.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

        std::string where = "line " + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(where + ": " + e.what());
        }
        SyscallEvent ev = detail::parse_trace_line(j, where);

        if (!events.empty() && ev.seq <= last_seq) {
            throw ParseError(where + ": seq " + std::to_string(ev.seq) +
                             " not greater than previous " + std::to_string(last_seq));
        }
        last_seq = ev.seq;

        if (ev.phase == Phase::Enter) {
            open[ev.tid].push_back(events.size());
        } else {
            auto& stack = open[ev.tid];
            if (stack.empty()) {
                throw ParseError(where + ": exit without an open enter on tid " +
                                 std::to_string(ev.tid));
            }
            const SyscallEvent& enter = events[stack.back()];
            if (enter.syscall != ev.syscall) {
                throw ParseError(where + ": exit syscall \"" + ev.syscall +
                                 "\" does not match open enter \"" + enter.syscall + "\"");
            }
            if (enter.args != ev.args) {
                throw ParseError(where + ": exit args differ from the paired enter");
            }
            stack.pop_back();
        }
        events.push_back(std::move(ev));
    }
    return events;
}

// Emits the canonical line form; parse_trace(emit_trace(events)) is lossless.
inline std::string emit_trace(std::span<const SyscallEvent> events) {
    std::string out;
    for (const SyscallEvent& ev : events) {
        nlohmann::ordered_json j;
        j["seq"] = ev.seq;
        j["phase"] = phase_name(ev.phase);
        j["pid"] = ev.pid;
        j["tid"] = ev.tid;
        j["comm"] = ev.comm;
        j["tname"] = ev.tname;
        j["syscall"] = ev.syscall;
        nlohmann::ordered_json args = nlohmann::ordered_json::array();
        for (std::uint64_t a : ev.args) args.push_back(to_hex(a));
        j["args"] = std::move(args);
        if (ev.phase == Phase::Exit) j["retval"] = ev.retval;
        j["pc"] = to_hex(ev.pc);
        if (!ev.stack.empty()) {
            nlohmann::ordered_json stack = nlohmann::ordered_json::array();
            for (std::uint64_t f : ev.stack) stack.push_back(to_hex(f));
            j["stack"] = std::move(stack);
        }
        if (!ev.deref.empty()) {
            nlohmann::ordered_json deref = nlohmann::ordered_json::object();
            for (const auto& [index, v] : ev.deref) {
                nlohmann::ordered_json entry;
                if (v.kind == DerefValue::Kind::Str) {
                    entry["kind"] = "str";
                    entry["value"] = v.str;
                } else {
                    entry["kind"] = "bytes";
                    entry["value"] = encode_byte_string(v.bytes);
                }
                deref[std::to_string(index)] = std::move(entry);
            }
            j["deref"] = std::move(deref);
        }
        j["ts"] = ev.ts;
        out += j.dump();
        out += '\n';
    }
    return out;
}

} // namespace sidestep

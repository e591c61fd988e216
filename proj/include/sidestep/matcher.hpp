#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sidestep/address_space.hpp"
#include "sidestep/der.hpp"
#include "sidestep/trace.hpp"

namespace sidestep {

struct MatchResult {
    bool matched = false;
    std::string rule_id;
    // Addresses the checks dereferenced, e.g. where the data probe read.
    std::map<std::string, std::uint64_t> bindings;
    struct Reason {
        std::string field;
        bool passed = false;
        std::string note;
    };
    std::vector<Reason> reasons;
};

namespace detail {

// Task comms are truncated to 15 bytes by the kernel, so rule comms longer
// than that can still match their truncated form.
inline std::string_view comm_key(std::string_view s) {
    return s.substr(0, std::min<std::size_t>(s.size(), 15));
}

// Reads memory for a condition check. Live memory wins; when it is not
// available (replaying a trace with unmapped buffers) the recorder's deref
// payload at the anchoring argument substitutes for it.
inline std::optional<std::string> checked_c_string(const AddressSpace& space,
                                                   const SyscallEvent& event, int arg_index) {
    std::uint64_t ptr = event.args[static_cast<std::size_t>(arg_index)];
    auto live = space.read_c_string(ptr);
    if (live.ok()) return live.value;
    auto it = event.deref.find(arg_index);
    if (it != event.deref.end() && it->second.kind == DerefValue::Kind::Str) {
        return it->second.str;
    }
    return std::nullopt;
}

inline std::optional<std::vector<std::uint8_t>> checked_bytes(const AddressSpace& space,
                                                              const SyscallEvent& event,
                                                              std::uint64_t addr,
                                                              std::size_t len) {
    auto live = space.read_bytes(addr, len);
    if (live.ok()) return live.value;
    for (const auto& [index, v] : event.deref) {
        std::uint64_t base = event.args[static_cast<std::size_t>(index)];
        std::vector<std::uint8_t> payload;
        if (v.kind == DerefValue::Kind::Str) {
            payload.assign(v.str.begin(), v.str.end());
            payload.push_back(0);
        } else {
            payload = v.bytes;
        }
        if (addr >= base && addr + len <= base + payload.size()) {
            auto off = static_cast<std::size_t>(addr - base);
            return std::vector<std::uint8_t>(payload.begin() + off, payload.begin() + off + len);
        }
    }
    return std::nullopt;
}

} // namespace detail

// Decides whether one rule fires on one event. Total and side-effect free:
// every mismatch, including an unreadable probe address, reports a reason
// instead of failing.
inline MatchResult match_rule(const DerRule& rule, const SyscallEvent& event,
                              const AddressSpace& space) {
    MatchResult result;
    result.rule_id = rule.id;
    auto reject = [&](std::string field, std::string note) {
        result.reasons.push_back({std::move(field), false, std::move(note)});
        result.matched = false;
        return result;
    };
    auto pass = [&](std::string field, std::string note) {
        result.reasons.push_back({std::move(field), true, std::move(note)});
    };
    const DerCondition& cond = rule.condition;

    if (cond.phase != event.phase) {
        return reject("phase", std::string("rule wants ") + phase_name(cond.phase));
    }
    pass("phase", phase_name(event.phase));

    if (detail::comm_key(cond.comm) != detail::comm_key(event.comm)) {
        return reject("comm", "\"" + event.comm + "\" != \"" + cond.comm + "\"");
    }
    pass("comm", event.comm);

    if (cond.tname != "*" && cond.tname != event.tname) {
        return reject("tname", "\"" + event.tname + "\" != \"" + cond.tname + "\"");
    }
    pass("tname", event.tname);

    if (cond.syscall != event.syscall) {
        return reject("syscall", "\"" + event.syscall + "\" != \"" + cond.syscall + "\"");
    }
    pass("syscall", event.syscall);

    for (const auto& [index, spec] : cond.args) {
        std::string field = "args" + std::to_string(index);
        std::uint64_t reg = event.args[static_cast<std::size_t>(index)];
        switch (spec.kind) {
        case ArgSpec::Kind::Wildcard:
            pass(field, "wildcard");
            break;
        case ArgSpec::Kind::RawValue:
            if (reg != spec.raw) {
                return reject(field, to_hex(reg) + " != " + to_hex(spec.raw));
            }
            pass(field, to_hex(reg));
            break;
        case ArgSpec::Kind::PathPrefix: {
            auto str = detail::checked_c_string(space, event, index);
            if (!str) {
                return reject(field, "deref failed at " + to_hex(reg));
            }
            if (str->compare(0, spec.prefix.size(), spec.prefix) != 0) {
                return reject(field, "\"" + *str + "\" does not start with \"" + spec.prefix +
                                          "\"");
            }
            result.bindings[field] = reg;
            pass(field, *str);
            break;
        }
        }
    }

    if (cond.data) {
        std::uint64_t probe = cond.data_where.eval(event.args);
        result.bindings["data_where"] = probe;
        auto bytes = detail::checked_bytes(space, event, probe, cond.data->size());
        if (!bytes) {
            return reject("data", "deref failed at " + to_hex(probe));
        }
        if (*bytes != *cond.data) {
            return reject("data", "bytes at " + to_hex(probe) + " differ");
        }
        pass("data", std::to_string(cond.data->size()) + " bytes at " + to_hex(probe));
    }

    result.matched = true;
    return result;
}

} // namespace sidestep

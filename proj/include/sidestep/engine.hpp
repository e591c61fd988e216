#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sidestep/address_space.hpp"
#include "sidestep/der.hpp"
#include "sidestep/matcher.hpp"
#include "sidestep/trace.hpp"

namespace sidestep {

enum class ActionKind { ArgBufferRewrite, MemoryPatch, RetvalOverride, Revert };
enum class ActionOutcome { Ok, Denied };

inline const char* action_kind_name(ActionKind k) {
    switch (k) {
    case ActionKind::ArgBufferRewrite: return "arg-buffer-rewrite";
    case ActionKind::MemoryPatch: return "memory-patch";
    case ActionKind::RetvalOverride: return "retval-override";
    case ActionKind::Revert: return "revert";
    }
    return "?";
}

struct ActionEntry {
    std::uint64_t event_seq = 0;
    std::string rule_id;
    ActionKind action = ActionKind::MemoryPatch;
    std::uint64_t address = 0;
    std::uint64_t byte_len = 0;
    ActionOutcome outcome = ActionOutcome::Ok;

    bool operator==(const ActionEntry&) const = default;
};

using ActionLog = std::vector<ActionEntry>;

inline std::string export_action_log(const ActionLog& log) {
    std::string out;
    for (const ActionEntry& e : log) {
        nlohmann::ordered_json j;
        j["event_seq"] = e.event_seq;
        j["rule_id"] = e.rule_id;
        j["action"] = action_kind_name(e.action);
        j["address"] = to_hex(e.address);
        j["byte_len"] = e.byte_len;
        j["outcome"] = e.outcome == ActionOutcome::Ok ? "ok" : "denied";
        out += j.dump();
        out += '\n';
    }
    return out;
}

// Applies rules to a stream of syscall events against one address space.
// Rules fire in file order; a denied write is logged and processing moves
// on. Patches marked revert_on_exit are undone when the same call exits,
// newest first, after any exit-phase rules have run.
class Engine {
public:
    Engine(std::vector<DerRule> rules, AddressSpace* space)
        : rules_(std::move(rules)), space_(space) {}

    std::vector<ActionEntry> on_syscall_enter(const SyscallEvent& event) {
        ++depth_[event.tid];
        return apply_rules(event, nullptr);
    }

    std::vector<ActionEntry> on_syscall_exit(SyscallEvent& event) {
        int depth = depth_[event.tid];
        if (depth == 0) depth = 1; // tolerate a trace that opens mid-call
        std::vector<ActionEntry> entries = apply_rules(event, &event);

        // Undo patches belonging to the call now exiting, newest first.
        for (auto it = pending_.rbegin(); it != pending_.rend();) {
            if (it->tid != event.tid || it->depth != depth) {
                ++it;
                continue;
            }
            MemError err = space_->revert_patch(it->record);
            ActionEntry entry{event.seq,
                              it->record.rule_id,
                              ActionKind::Revert,
                              it->record.address,
                              it->record.original_bytes.size(),
                              err == MemError::Ok ? ActionOutcome::Ok : ActionOutcome::Denied};
            log_.push_back(entry);
            entries.push_back(entry);
            it = decltype(it)(pending_.erase(std::next(it).base()));
        }
        if (depth_[event.tid] > 0) --depth_[event.tid];
        return entries;
    }

    const ActionLog& log() const { return log_; }
    const std::vector<DerRule>& rules() const { return rules_; }

private:
    std::vector<ActionEntry> apply_rules(const SyscallEvent& event, SyscallEvent* mutable_event) {
        std::vector<ActionEntry> entries;
        for (const DerRule& rule : rules_) {
            if (rule.condition.phase != event.phase) continue;
            MatchResult m = match_rule(rule, event, *space_);
            if (!m.matched) continue;

            ActionEntry entry;
            entry.event_seq = event.seq;
            entry.rule_id = rule.id;
            if (rule.evasion.where.kind == WhereTarget::Kind::Retval) {
                entry.action = ActionKind::RetvalOverride;
                if (mutable_event) mutable_event->retval = rule.evasion.data.integer;
            } else {
                std::uint64_t addr = rule.evasion.where.address.eval(event.args);
                std::vector<std::uint8_t> image = rule.evasion.data.memory_image();
                entry.action = rule.evasion.where.address.is_single_arg()
                                   ? ActionKind::ArgBufferRewrite
                                   : ActionKind::MemoryPatch;
                entry.address = addr;
                entry.byte_len = image.size();
                auto written = space_->write_bytes(addr, image, rule.id, event.seq);
                entry.outcome = written.ok() ? ActionOutcome::Ok : ActionOutcome::Denied;
                if (written.ok() && rule.evasion.revert_on_exit) {
                    int depth = depth_[event.tid];
                    pending_.push_back({std::move(written.value), event.tid, depth > 0 ? depth : 1});
                }
            }
            log_.push_back(entry);
            entries.push_back(entry);
        }
        return entries;
    }

    struct PendingRevert {
        PatchRecord record;
        std::int32_t tid = 0;
        int depth = 0;
    };

    std::vector<DerRule> rules_;
    AddressSpace* space_;
    ActionLog log_;
    std::vector<PendingRevert> pending_;
    std::map<std::int32_t, int> depth_;
};

// Feeds events into the engine one at a time, exposing the address space the
// events execute against.
class EventSource {
public:
    virtual ~EventSource() = default;
    virtual std::optional<SyscallEvent> next() = 0;
    virtual AddressSpace& space() = 0;
};

// Replays a recorded trace. The address space is reconstructed as the trace
// plays: mmap/mprotect exits reshape the layout, and recorded deref payloads
// are materialized at their argument addresses so conditions and patches can
// see the bytes the recorder saw.
class TraceEventSource : public EventSource {
public:
    explicit TraceEventSource(std::vector<SyscallEvent> events) : events_(std::move(events)) {}

    std::optional<SyscallEvent> next() override {
        if (index_ >= events_.size()) return std::nullopt;
        SyscallEvent ev = events_[index_++];
        if (ev.phase == Phase::Exit) apply_mapping_effect(ev);
        materialize_deref(ev);
        return ev;
    }

    AddressSpace& space() override { return space_; }

private:
    void apply_mapping_effect(const SyscallEvent& ev) {
        if (ev.syscall == "mmap") {
            if (ev.retval < 0) return; // failed mapping
            auto base = static_cast<std::uint64_t>(ev.retval);
            if (base == 0) base = ev.args[0];
            space_.map(base, ev.args[1], static_cast<std::uint32_t>(ev.args[2]), "trace");
        } else if (ev.syscall == "mprotect") {
            space_.protect(ev.args[0], ev.args[1], static_cast<std::uint32_t>(ev.args[2]));
        }
    }

    void materialize_deref(const SyscallEvent& ev) {
        for (const auto& [index, v] : ev.deref) {
            std::uint64_t base = ev.args[static_cast<std::size_t>(index)];
            std::vector<std::uint8_t> payload;
            if (v.kind == DerefValue::Kind::Str) {
                payload.assign(v.str.begin(), v.str.end());
                payload.push_back(0);
            } else {
                payload = v.bytes;
            }
            space_.poke(base, payload, false); // best effort; unmapped targets stay virtual
        }
    }

    std::vector<SyscallEvent> events_;
    std::size_t index_ = 0;
    AddressSpace space_;
};

struct RunResult {
    ActionLog log;
    AddressSpace final_space;
};

// Drains the source through a fresh engine. Exit events see any retval
// override in the log rather than in the returned trace.
inline RunResult run(const std::vector<DerRule>& rules, EventSource& source) {
    Engine engine(rules, &source.space());
    while (auto ev = source.next()) {
        if (ev->phase == Phase::Enter) {
            engine.on_syscall_enter(*ev);
        } else {
            engine.on_syscall_exit(*ev);
        }
    }
    return {engine.log(), source.space()};
}

} // namespace sidestep

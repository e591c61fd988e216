#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sidestep/address_space.hpp"
#include "sidestep/trace.hpp"

namespace sidestep {

// A mapping as the traced process requested it: bounds are kept verbatim
// (mmap length, not rounded to pages) because analysts reason about the
// requested object, and regions carry their lifetime so a recycled address
// range attributes to the mapping that was alive at the time.
struct MapperRegion {
    std::uint64_t start = 0;
    std::uint64_t end = 0;
    std::uint32_t perms = 0; // latest protection seen
    std::uint64_t born_seq = 0;
    std::optional<std::uint64_t> died_seq;
    std::vector<SyscallEvent> events; // attributed enters, trace order
};

struct RegionSyscallMap {
    std::vector<MapperRegion> regions; // creation order
    std::vector<SyscallEvent> unattributed;
    std::vector<SyscallEvent> mapping_events; // mmap/mprotect enters
};

namespace detail {

inline bool is_mapping_syscall(std::string_view name) {
    return name == "mmap" || name == "mprotect";
}

} // namespace detail

// Attributes every non-mapping enter event to the region its code address
// fell into at that moment. frame selects the stack slot used as the code
// address; slots beyond the recorded stack fall back to pc.
inline RegionSyscallMap build_map(std::span<const SyscallEvent> events, std::size_t frame = 0) {
    RegionSyscallMap map;
    std::map<std::uint64_t, std::size_t> alive; // start -> index into map.regions

    auto retire_overlaps = [&](std::uint64_t start, std::uint64_t end, std::uint64_t seq) {
        for (auto it = alive.begin(); it != alive.end();) {
            MapperRegion& r = map.regions[it->second];
            if (r.start < end && r.end > start) {
                r.died_seq = seq;
                it = alive.erase(it);
            } else {
                ++it;
            }
        }
    };

    for (const SyscallEvent& ev : events) {
        if (detail::is_mapping_syscall(ev.syscall)) {
            if (ev.phase == Phase::Enter) {
                map.mapping_events.push_back(ev);
                continue;
            }
            if (ev.syscall == "mmap") {
                if (ev.retval < 0) continue;
                auto base = static_cast<std::uint64_t>(ev.retval);
                if (base == 0) base = ev.args[0];
                std::uint64_t len = ev.args[1];
                if (base == 0 || len == 0) continue;
                retire_overlaps(base, base + len, ev.seq);
                MapperRegion r;
                r.start = base;
                r.end = base + len;
                r.perms = static_cast<std::uint32_t>(ev.args[2]) & 7;
                r.born_seq = ev.seq;
                alive[base] = map.regions.size();
                map.regions.push_back(std::move(r));
            } else {
                std::uint64_t start = ev.args[0];
                std::uint64_t end = start + ev.args[1];
                for (auto& [base, index] : alive) {
                    MapperRegion& r = map.regions[index];
                    if (r.start < end && r.end > start) {
                        r.perms = static_cast<std::uint32_t>(ev.args[2]) & 7;
                    }
                }
            }
            continue;
        }
        if (ev.phase != Phase::Enter) continue;

        std::uint64_t code = frame < ev.stack.size() ? ev.stack[frame] : ev.pc;
        auto it = alive.upper_bound(code);
        bool placed = false;
        if (it != alive.begin()) {
            --it;
            MapperRegion& r = map.regions[it->second];
            if (code >= r.start && code < r.end) {
                r.events.push_back(ev);
                placed = true;
            }
        }
        if (!placed) map.unattributed.push_back(ev);
    }
    return map;
}

namespace detail {

// Syscalls whose Nth argument is a pathname; rendered with the dereferenced
// string when the trace captured one.
inline std::optional<int> pathname_arg(std::string_view syscall) {
    static const std::map<std::string_view, int> table = {
        {"open", 0},   {"openat", 1},    {"creat", 0},   {"stat", 0},
        {"lstat", 0},  {"access", 0},    {"faccessat", 1}, {"statx", 1},
        {"readlink", 0}, {"readlinkat", 1}, {"execve", 0}, {"unlinkat", 1},
        {"chdir", 0},
    };
    auto it = table.find(syscall);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

inline std::string render_event_line(const SyscallEvent& ev) {
    if (auto arg = pathname_arg(ev.syscall)) {
        auto d = ev.deref.find(*arg);
        if (d != ev.deref.end() && d->second.kind == DerefValue::Kind::Str) {
            return ev.syscall + "(*pathname=" + to_hex(ev.args[static_cast<std::size_t>(*arg)]) +
                   "(" + d->second.str + "))";
        }
    }
    std::string line = ev.syscall + "(";
    for (int i = 0; i < 6; ++i) {
        if (i) line += ", ";
        line += "arg" + std::to_string(i) + "=" + to_hex(ev.args[static_cast<std::size_t>(i)]);
    }
    line += ")";
    return line;
}

} // namespace detail

// Regions sorted by (start, born_seq); events in trace order underneath.
inline std::string render_report(const RegionSyscallMap& map) {
    std::vector<std::size_t> order(map.regions.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const MapperRegion& ra = map.regions[a];
        const MapperRegion& rb = map.regions[b];
        if (ra.start != rb.start) return ra.start < rb.start;
        return ra.born_seq < rb.born_seq;
    });

    std::string out;
    int index = 0;
    for (std::size_t i : order) {
        const MapperRegion& r = map.regions[i];
        out += "[region " + std::to_string(index++) + "] " + to_hex(r.start) + " - " +
               to_hex(r.end) + " (" + perms_to_string(r.perms) + ")\n";
        for (const SyscallEvent& ev : r.events) {
            out += detail::render_event_line(ev);
            out += '\n';
        }
    }
    if (!map.unattributed.empty()) {
        out += "[unattributed]\n";
        for (const SyscallEvent& ev : map.unattributed) {
            out += detail::render_event_line(ev);
            out += '\n';
        }
    }
    return out;
}

// One probe the analyst should look at: which event tripped which catalog
// entry.
struct SuspicionFlag {
    std::uint64_t event_seq = 0;
    std::string syscall;
    std::string principle;
    std::string artifact; // the catalog pattern that hit
    std::string note;     // what matched it
};

struct CatalogEntry {
    std::string principle;
    std::string kind; // path | path-suffix | port | syscall | mprotect-exec
    std::string pattern;
};

// Tab-separated: principle, kind, pattern. '#' starts a comment line.
inline std::vector<CatalogEntry> parse_catalog(std::string_view text) {
    std::vector<CatalogEntry> entries;
    std::size_t pos = 0;
    int line_no = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line[0] == '#') continue;
        std::size_t t1 = line.find('\t');
        std::size_t t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
        if (t1 == std::string_view::npos || t2 == std::string_view::npos) {
            throw ParseError("catalog line " + std::to_string(line_no) +
                             ": expected principle<TAB>kind<TAB>pattern");
        }
        CatalogEntry e;
        e.principle = std::string(line.substr(0, t1));
        e.kind = std::string(line.substr(t1 + 1, t2 - t1 - 1));
        e.pattern = std::string(line.substr(t2 + 1));
        if (e.principle.empty() || e.pattern.empty()) {
            throw ParseError("catalog line " + std::to_string(line_no) + ": empty field");
        }
        static const char* kinds[] = {"path", "path-suffix", "port", "syscall", "mprotect-exec"};
        bool known = false;
        for (const char* k : kinds) known = known || e.kind == k;
        if (!known) {
            throw ParseError("catalog line " + std::to_string(line_no) + ": unknown kind \"" +
                             e.kind + "\"");
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

// Built-in catalog of analysis-tool artifacts an app might probe for. The
// shipped data file mirrors this list; a test keeps the two in sync.
inline const std::vector<CatalogEntry>& default_catalog() {
    static const std::vector<CatalogEntry> catalog = {
        {"file-based", "path", "/data/local/tmp/frida-server"},
        {"file-based", "path", "/sbin/.magisk"},
        {"file-based", "path", "/system/xbin/su"},
        {"file-based", "path", "/proc/self/status"},
        {"file-based", "path", "/proc/self/wchan"},
        {"activity-based", "path-suffix", "/cmdline"},
        {"memory-based", "path", "/proc/self/maps"},
        {"memory-based", "mprotect-exec", "mprotect"},
        {"timer-based", "syscall", "clock_gettime"},
        {"timer-based", "syscall", "gettimeofday"},
        {"network-based", "port", "27049"},
        {"network-based", "port", "23946"},
        {"Java/framework", "path-suffix", "/frida-agent-64.so"},
        {"misc/native-level", "syscall", "ptrace"},
    };
    return catalog;
}

namespace detail {

inline std::optional<std::string> match_catalog_entry(const CatalogEntry& entry,
                                                      const SyscallEvent& ev) {
    if (entry.kind == "syscall") {
        if (ev.syscall == entry.pattern) return ev.syscall;
        return std::nullopt;
    }
    if (entry.kind == "mprotect-exec") {
        if (ev.syscall == "mprotect" && (ev.args[2] & kProtExec)) {
            return perms_to_string(static_cast<std::uint32_t>(ev.args[2]) & 7) + " at " +
                   to_hex(ev.args[0]);
        }
        return std::nullopt;
    }
    for (const auto& [index, v] : ev.deref) {
        if (v.kind != DerefValue::Kind::Str) continue;
        const std::string& s = v.str;
        std::string_view sv = s;
        if (entry.kind == "path" && sv.starts_with(entry.pattern)) return s;
        if (entry.kind == "path-suffix" && sv.ends_with(entry.pattern)) return s;
        if (entry.kind == "port" && sv.ends_with(":" + entry.pattern)) return s;
    }
    return std::nullopt;
}

} // namespace detail

// Scans every enter event the map saw (attributed, unattributed and mapping
// calls) against the catalog. At most one flag per event/entry pair.
inline std::vector<SuspicionFlag> flag_suspicious(const RegionSyscallMap& map,
                                                  std::span<const CatalogEntry> catalog) {
    std::vector<SuspicionFlag> flags;
    auto scan = [&](const SyscallEvent& ev) {
        for (const CatalogEntry& entry : catalog) {
            if (auto note = detail::match_catalog_entry(entry, ev)) {
                flags.push_back({ev.seq, ev.syscall, entry.principle, entry.pattern, *note});
            }
        }
    };
    for (const MapperRegion& r : map.regions) {
        for (const SyscallEvent& ev : r.events) scan(ev);
    }
    for (const SyscallEvent& ev : map.unattributed) scan(ev);
    for (const SyscallEvent& ev : map.mapping_events) scan(ev);
    return flags;
}

} // namespace sidestep

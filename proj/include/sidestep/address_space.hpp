#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sidestep/common.hpp"

namespace sidestep {

inline constexpr std::uint64_t kPageSize = 4096;
inline constexpr std::uint32_t kProtRead = 1;
inline constexpr std::uint32_t kProtWrite = 2;
inline constexpr std::uint32_t kProtExec = 4;

inline std::string perms_to_string(std::uint32_t perms) {
    std::string s = "---";
    if (perms & kProtRead) s[0] = 'r';
    if (perms & kProtWrite) s[1] = 'w';
    if (perms & kProtExec) s[2] = 'x';
    return s;
}

inline std::optional<std::uint32_t> perms_from_string(std::string_view s) {
    if (s.size() != 3) return std::nullopt;
    std::uint32_t perms = 0;
    if (s[0] == 'r') perms |= kProtRead;
    else if (s[0] != '-') return std::nullopt;
    if (s[1] == 'w') perms |= kProtWrite;
    else if (s[1] != '-') return std::nullopt;
    if (s[2] == 'x') perms |= kProtExec;
    else if (s[2] != '-') return std::nullopt;
    return perms;
}

// Page-aligned mapping with uniform permissions and its own backing bytes.
struct MemoryRegion {
    std::uint64_t start = 0;
    std::uint64_t end = 0; // exclusive
    std::uint32_t perms = 0;
    std::string origin;
    std::vector<std::uint8_t> content; // end - start bytes

    bool operator==(const MemoryRegion&) const = default;
};

// Journal entry for a permission-checked write; carries enough to undo it.
struct PatchRecord {
    std::uint64_t address = 0;
    std::vector<std::uint8_t> original_bytes;
    std::vector<std::uint8_t> new_bytes;
    std::string rule_id;
    std::uint64_t event_seq = 0;

    bool operator==(const PatchRecord&) const = default;
};

enum class MemError {
    Ok,
    Unmapped,
    NotReadable,
    NotWritable,
    Unterminated,
    BadLength,
    BadAlignment,
};

inline const char* mem_error_name(MemError e) {
    switch (e) {
    case MemError::Ok: return "ok";
    case MemError::Unmapped: return "unmapped";
    case MemError::NotReadable: return "not-readable";
    case MemError::NotWritable: return "not-writable";
    case MemError::Unterminated: return "unterminated";
    case MemError::BadLength: return "bad-length";
    case MemError::BadAlignment: return "bad-alignment";
    }
    return "?";
}

template <class T>
struct MemResult {
    T value{};
    MemError error = MemError::Ok;

    bool ok() const { return error == MemError::Ok; }
};

// Sparse 64-bit address space. Reads and writes succeed only if every touched
// page is mapped with the needed permission; failed operations change nothing.
class AddressSpace {
public:
    MemResult<std::uint64_t> map(std::uint64_t addr, std::uint64_t length, std::uint32_t perms,
                                 std::string origin) {
        if (length == 0) return {0, MemError::BadLength};
        if (addr % kPageSize != 0) return {0, MemError::BadAlignment};
        std::uint64_t size = round_up(length);
        if (addr == 0) {
            addr = find_gap(size);
            if (addr == 0) return {0, MemError::BadLength};
        } else {
            carve(addr, addr + size); // fixed mappings replace what they overlap
        }
        MemoryRegion region;
        region.start = addr;
        region.end = addr + size;
        region.perms = perms & 7;
        region.origin = std::move(origin);
        region.content.assign(size, 0);
        regions_[addr] = std::move(region);
        return {addr, MemError::Ok};
    }

    MemError protect(std::uint64_t addr, std::uint64_t length, std::uint32_t perms) {
        if (length == 0) return MemError::BadLength;
        if (addr % kPageSize != 0) return MemError::BadAlignment;
        std::uint64_t end = addr + round_up(length);
        perms &= 7;

        // The whole range must be mapped before anything is touched.
        std::uint64_t p = addr;
        while (p < end) {
            const MemoryRegion* r = region_at(p);
            if (!r) return MemError::Unmapped;
            p = r->end;
        }

        // Split only where permissions actually change, so re-protecting a
        // range to its current permissions leaves the layout untouched.
        while (true) {
            MemoryRegion* found = nullptr;
            for (auto& [start, region] : regions_) {
                if (start >= end) break;
                if (region.end > addr && region.perms != perms) {
                    found = &region;
                    break;
                }
            }
            if (!found) break;
            std::uint64_t lo = std::max(found->start, addr);
            std::uint64_t hi = std::min(found->end, end);
            split_at(lo);
            split_at(hi);
            regions_.at(lo).perms = perms;
        }
        return MemError::Ok;
    }

    MemResult<std::vector<std::uint8_t>> read_bytes(std::uint64_t addr, std::uint64_t len) const {
        std::vector<std::uint8_t> out;
        if (len == 0) return {out, MemError::Ok};
        MemError err = walk(addr, len, kProtRead, [&](const MemoryRegion& r, std::uint64_t at,
                                                      std::uint64_t n) {
            auto off = static_cast<std::size_t>(at - r.start);
            out.insert(out.end(), r.content.begin() + off, r.content.begin() + off + n);
        });
        if (err != MemError::Ok) return {{}, err};
        return {std::move(out), MemError::Ok};
    }

    MemResult<std::string> read_c_string(std::uint64_t addr, std::uint64_t max = 4096) const {
        std::string out;
        std::uint64_t p = addr;
        const MemoryRegion* r = nullptr;
        for (std::uint64_t i = 0; i < max; ++i, ++p) {
            if (!r || p >= r->end) {
                r = region_at(p);
                if (!r) return {{}, MemError::Unmapped};
                if (!(r->perms & kProtRead)) return {{}, MemError::NotReadable};
            }
            std::uint8_t b = r->content[static_cast<std::size_t>(p - r->start)];
            if (b == 0) return {std::move(out), MemError::Ok};
            out.push_back(static_cast<char>(b));
        }
        return {{}, MemError::Unterminated};
    }

    // Raw store used for reconstruction and by privileged callers; bypasses
    // write permissions unless asked to enforce them. Never journaled.
    MemError poke(std::uint64_t addr, std::span<const std::uint8_t> bytes,
                  bool enforce_write_perm) {
        if (bytes.empty()) return MemError::Ok;
        std::uint32_t need = enforce_write_perm ? kProtWrite : 0;
        MemError err = validate(addr, bytes.size(), need);
        if (err != MemError::Ok) return err;
        std::size_t copied = 0;
        walk(addr, bytes.size(), need, [&](const MemoryRegion& r, std::uint64_t at,
                                           std::uint64_t n) {
            auto& region = regions_.at(r.start);
            auto off = static_cast<std::size_t>(at - region.start);
            std::copy(bytes.begin() + copied, bytes.begin() + copied + n,
                      region.content.begin() + off);
            copied += n;
        });
        return MemError::Ok;
    }

    // Permission-checked write that journals the bytes it replaces.
    MemResult<PatchRecord> write_bytes(std::uint64_t addr, std::span<const std::uint8_t> bytes,
                                       std::string rule_id, std::uint64_t event_seq) {
        if (bytes.empty()) return {{}, MemError::BadLength};
        MemError err = validate(addr, bytes.size(), kProtWrite);
        if (err != MemError::Ok) return {{}, err};

        PatchRecord record;
        record.address = addr;
        record.rule_id = std::move(rule_id);
        record.event_seq = event_seq;
        record.original_bytes = peek(addr, bytes.size());
        record.new_bytes.assign(bytes.begin(), bytes.end());
        poke(addr, bytes, true);
        journal_.push_back(record);
        return {std::move(record), MemError::Ok};
    }

    // Puts the journaled original bytes back, regardless of current
    // permissions. Restoring is absolute, so replaying a revert is harmless.
    MemError revert_patch(const PatchRecord& record) {
        return poke(record.address, record.original_bytes, false);
    }

    const MemoryRegion* region_at(std::uint64_t addr) const {
        auto it = regions_.upper_bound(addr);
        if (it == regions_.begin()) return nullptr;
        --it;
        if (addr >= it->second.end) return nullptr;
        return &it->second;
    }

    const std::map<std::uint64_t, MemoryRegion>& regions() const { return regions_; }
    const std::vector<PatchRecord>& patch_journal() const { return journal_; }

    // Region layout and contents only; the journal is history, not state.
    bool same_memory(const AddressSpace& other) const { return regions_ == other.regions_; }

    std::string dump() const {
        std::string out;
        int index = 0;
        for (const auto& [start, region] : regions_) {
            out += "[region " + std::to_string(index++) + "] " + to_hex(region.start) + " - " +
                   to_hex(region.end) + " (" + perms_to_string(region.perms) + ")\n";
        }
        return out;
    }

private:
    static std::uint64_t round_up(std::uint64_t length) {
        return (length + kPageSize - 1) / kPageSize * kPageSize;
    }

    std::uint64_t find_gap(std::uint64_t size) const {
        std::uint64_t candidate = 0x700000000000;
        for (const auto& [start, region] : regions_) {
            if (region.end <= candidate) continue;
            if (region.start >= candidate + size) break;
            candidate = region.end;
        }
        if (candidate + size < candidate) return 0; // wrapped
        return candidate;
    }

    // Removes all pages in [start, end), splitting boundary regions.
    void carve(std::uint64_t start, std::uint64_t end) {
        split_at(start);
        split_at(end);
        auto it = regions_.lower_bound(start);
        while (it != regions_.end() && it->second.start < end) {
            it = regions_.erase(it);
        }
    }

    // Splits the region spanning addr so addr becomes a region boundary.
    void split_at(std::uint64_t addr) {
        const MemoryRegion* r = region_at(addr);
        if (!r || r->start == addr) return;
        MemoryRegion& head = regions_.at(r->start);
        MemoryRegion tail;
        tail.start = addr;
        tail.end = head.end;
        tail.perms = head.perms;
        tail.origin = head.origin;
        auto cut = static_cast<std::size_t>(addr - head.start);
        tail.content.assign(head.content.begin() + cut, head.content.end());
        head.content.resize(cut);
        head.end = addr;
        regions_[addr] = std::move(tail);
    }

    MemError validate(std::uint64_t addr, std::uint64_t len, std::uint32_t need) const {
        std::uint64_t p = addr;
        std::uint64_t remaining = len;
        while (remaining > 0) {
            const MemoryRegion* r = region_at(p);
            if (!r) return MemError::Unmapped;
            if ((r->perms & need) != need) {
                return need == kProtWrite ? MemError::NotWritable : MemError::NotReadable;
            }
            std::uint64_t n = std::min(remaining, r->end - p);
            p += n;
            remaining -= n;
        }
        return MemError::Ok;
    }

    template <class Fn>
    MemError walk(std::uint64_t addr, std::uint64_t len, std::uint32_t need, Fn&& fn) const {
        MemError err = validate(addr, len, need);
        if (err != MemError::Ok) return err;
        std::uint64_t p = addr;
        std::uint64_t remaining = len;
        while (remaining > 0) {
            const MemoryRegion* r = region_at(p);
            std::uint64_t n = std::min(remaining, r->end - p);
            fn(*r, p, n);
            p += n;
            remaining -= n;
        }
        return MemError::Ok;
    }

    // Unchecked read of mapped bytes; caller has validated the range.
    std::vector<std::uint8_t> peek(std::uint64_t addr, std::uint64_t len) const {
        std::vector<std::uint8_t> out;
        walk(addr, len, 0, [&](const MemoryRegion& r, std::uint64_t at, std::uint64_t n) {
            auto off = static_cast<std::size_t>(at - r.start);
            out.insert(out.end(), r.content.begin() + off, r.content.begin() + off + n);
        });
        return out;
    }

    std::map<std::uint64_t, MemoryRegion> regions_;
    std::vector<PatchRecord> journal_;
};

} // namespace sidestep

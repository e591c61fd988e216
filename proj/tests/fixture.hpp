#pragma once

// Builder for the committed reference trace in data/region_fixture.trace: a
// process that mapped 94 small regions, then a 0xde5c0-byte image it made
// executable and probed /proc from, then one inaccessible guard page. Tests
// regenerate the events and compare against both the committed file and the
// expected report text.

#include <cstdint>
#include <string>
#include <vector>

#include <sidestep/trace.hpp>

namespace testsupport {

inline sidestep::SyscallEvent fixture_event(std::uint64_t seq, sidestep::Phase phase,
                                            const std::string& syscall) {
    sidestep::SyscallEvent ev;
    ev.seq = seq;
    ev.phase = phase;
    ev.pid = 12001;
    ev.tid = 12001;
    ev.comm = "com.example.tes";
    ev.tname = "main";
    ev.syscall = syscall;
    ev.ts = 1000000 + seq * 1000;
    return ev;
}

inline std::vector<sidestep::SyscallEvent> appendix_fixture_events() {
    using sidestep::Phase;
    using sidestep::SyscallEvent;

    std::vector<SyscallEvent> events;
    std::uint64_t seq = 0;

    auto mmap_pair = [&](std::uint64_t base, std::uint64_t len, std::uint64_t prot) {
        SyscallEvent enter = fixture_event(++seq, Phase::Enter, "mmap");
        enter.args = {base, len, prot, 0x22, 0xffffffffffffffffULL, 0};
        enter.pc = 0x5000000000;
        SyscallEvent exit = enter;
        exit.seq = ++seq;
        exit.phase = Phase::Exit;
        exit.retval = static_cast<std::int64_t>(base);
        exit.ts = 1000000 + exit.seq * 1000;
        events.push_back(enter);
        events.push_back(exit);
    };

    // 94 small mappings below the image keep its report index at 94.
    for (std::uint64_t i = 0; i < 94; ++i) {
        mmap_pair(0x7a3c000000 + i * 0x10000, 0x1000, 1);
    }

    const std::uint64_t image = 0x7a41c45000;
    const std::uint64_t image_len = 0xde5c0;
    mmap_pair(image, image_len, 3);

    SyscallEvent p_enter = fixture_event(++seq, Phase::Enter, "mprotect");
    p_enter.args = {image, image_len, 5, 0, 0, 0};
    p_enter.pc = 0x5000000000;
    SyscallEvent p_exit = p_enter;
    p_exit.seq = ++seq;
    p_exit.phase = Phase::Exit;
    p_exit.retval = 0;
    p_exit.ts = 1000000 + p_exit.seq * 1000;
    events.push_back(p_enter);
    events.push_back(p_exit);

    struct Probe {
        std::uint64_t ptr;
        const char* path;
    };
    const Probe probes[] = {
        {0x7a41d2d030, "/proc/self/status"},
        {0x7a41d2d090, "/proc/self/wchan"},
        {0x7a41d2a588, "/proc/self/maps"},
        {0x7fdc6f19e0, "/apex/com.android.art/lib64/libart.so"},
        {0x7fdc6f1a10, "/apex/com.android.art/lib64/libart.so"},
        {0x7fdc6f1a10, "/system/lib64/liblog.so"},
        {0x7a3d701090, "/apex/com.android.art/lib64/libart.so"},
        {0x7a3d505080, "/apex/com.android.runtime/bin/linker64"},
        {0x7a41d2d0e4, "/proc/self/maps"},
        {0x7fdc6f17b0, "/apex/com.android.art/lib64/libart.so"},
        {0x7fdc6f17b0, "/apex/com.android.art/lib64/libart.so"},
        {0x7fdc6f1ba0, "/apex/com.android.art/lib64/libart.so"},
        {0x7a41d2d030, "/proc/self/status"},
    };

    int site = 0;
    for (const Probe& probe : probes) {
        SyscallEvent enter = fixture_event(++seq, Phase::Enter, "openat");
        enter.args = {0xffffffffffffff9cULL, probe.ptr, 0, 0, 0, 0};
        enter.pc = 0x7a41c46000 + static_cast<std::uint64_t>(site++) * 0x20;
        enter.stack = {enter.pc, 0x7a41c45100};
        enter.deref[1] = sidestep::DerefValue{sidestep::DerefValue::Kind::Str, probe.path, {}};
        SyscallEvent exit = enter;
        exit.seq = ++seq;
        exit.phase = Phase::Exit;
        exit.retval = 3;
        exit.ts = 1000000 + exit.seq * 1000;
        events.push_back(enter);
        events.push_back(exit);
    }

    mmap_pair(0x7d79b34000, 0x1000, 0);
    return events;
}

// The report text build_map + render_report must produce for the image and
// guard regions.
inline std::string appendix_expected_tail() {
    return "[region 94] 0x7a41c45000 - 0x7a41d235c0 (r-x)\n"
           "openat(*pathname=0x7a41d2d030(/proc/self/status))\n"
           "openat(*pathname=0x7a41d2d090(/proc/self/wchan))\n"
           "openat(*pathname=0x7a41d2a588(/proc/self/maps))\n"
           "openat(*pathname=0x7fdc6f19e0(/apex/com.android.art/lib64/libart.so))\n"
           "openat(*pathname=0x7fdc6f1a10(/apex/com.android.art/lib64/libart.so))\n"
           "openat(*pathname=0x7fdc6f1a10(/system/lib64/liblog.so))\n"
           "openat(*pathname=0x7a3d701090(/apex/com.android.art/lib64/libart.so))\n"
           "openat(*pathname=0x7a3d505080(/apex/com.android.runtime/bin/linker64))\n"
           "openat(*pathname=0x7a41d2d0e4(/proc/self/maps))\n"
           "openat(*pathname=0x7fdc6f17b0(/apex/com.android.art/lib64/libart.so))\n"
           "openat(*pathname=0x7fdc6f17b0(/apex/com.android.art/lib64/libart.so))\n"
           "openat(*pathname=0x7fdc6f1ba0(/apex/com.android.art/lib64/libart.so))\n"
           "openat(*pathname=0x7a41d2d030(/proc/self/status))\n"
           "[region 95] 0x7d79b34000 - 0x7d79b35000 (---)\n";
}

} // namespace testsupport

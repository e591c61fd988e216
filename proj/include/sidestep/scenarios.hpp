#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sidestep/address_space.hpp"
#include "sidestep/common.hpp"
#include "sidestep/der.hpp"
#include "sidestep/engine.hpp"
#include "sidestep/trace.hpp"

namespace sidestep {

class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// What the simulated device looks like to the app. Defaults model a device
// that is under instrumentation: every probe has something to find.
struct SimEnvironment {
    int tracer_pid = 1234;
    bool frida_server_present = true;
    bool magisk_present = true;
    bool frida_agent_mapped = true;
    bool port_27049_open = true;
    bool already_traced = true;
    std::uint64_t syscall_cost_ns = 600000;
    std::vector<std::pair<int, std::string>> processes = {
        {1, "init"}, {912, "zygote64"}, {4242, "frida-server"}, {777, "com.android.phone"}};

    static SimEnvironment from_overrides(std::span<const std::string> kvs);
    std::map<std::string, std::vector<std::uint8_t>> files() const;
};

// /proc/self/maps content served to the app. Kept as fixed constants so the
// byte offset of the agent name is stable for patch rules.
inline std::string maps_text(bool frida_agent_mapped) {
    static const std::string head =
        "12c00000-12d00000 rw-p 00000000 00:00 0    [anon:dalvik-main space]\n"
        "7a41c45000-7a41d24000 r-xp 00000000 fd:05 9021   "
        "/data/app/com.example.test/lib/arm64/libapp.so\n";
    static const std::string agent =
        "7a3d400000-7a3d600000 r-xp 00000000 fd:05 7777   "
        "/data/local/tmp/re.frida.server/frida-agent-64.so\n";
    static const std::string tail =
        "7fdc6f0000-7fdc6f2000 r--p 00000000 fd:05 1542   /system/lib64/liblog.so\n";
    return frida_agent_mapped ? head + agent + tail : head + tail;
}

// Offset of the telltale "frida-agent" substring within the maps content.
inline std::size_t maps_frida_agent_offset() {
    return maps_text(true).find("frida-agent");
}

inline SimEnvironment SimEnvironment::from_overrides(std::span<const std::string> kvs) {
    SimEnvironment env;
    auto parse_bool = [](const std::string& key, const std::string& v) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ScenarioError("override " + key + ": expected a boolean, got \"" + v + "\"");
    };
    for (const std::string& kv : kvs) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ScenarioError("override \"" + kv + "\": expected key=value");
        }
        std::string key = kv.substr(0, eq);
        std::string value = kv.substr(eq + 1);
        if (key == "tracer_pid") {
            try {
                env.tracer_pid = std::stoi(value);
            } catch (const std::exception&) {
                throw ScenarioError("override tracer_pid: expected an integer");
            }
        } else if (key == "frida_server_present") {
            env.frida_server_present = parse_bool(key, value);
        } else if (key == "magisk_present") {
            env.magisk_present = parse_bool(key, value);
        } else if (key == "frida_agent_mapped") {
            env.frida_agent_mapped = parse_bool(key, value);
        } else if (key == "port_27049_open") {
            env.port_27049_open = parse_bool(key, value);
        } else if (key == "already_traced") {
            env.already_traced = parse_bool(key, value);
        } else if (key == "syscall_cost_ns") {
            auto v = parse_u64_literal(value);
            if (!v) throw ScenarioError("override syscall_cost_ns: expected a number");
            env.syscall_cost_ns = v->first;
        } else {
            throw ScenarioError("unknown environment override \"" + key + "\"");
        }
    }
    return env;
}

inline std::map<std::string, std::vector<std::uint8_t>> SimEnvironment::files() const {
    std::map<std::string, std::vector<std::uint8_t>> fs;
    auto put = [&](const std::string& path, const std::string& text) {
        fs[path] = std::vector<std::uint8_t>(text.begin(), text.end());
    };

    put("/proc/self/status", "Name:\tcom.example.test\n"
                             "State:\tS (sleeping)\n"
                             "Tgid:\t12001\n"
                             "Pid:\t12001\n"
                             "PPid:\t912\n"
                             "TracerPid:\t" + std::to_string(tracer_pid) + "\n"
                             "Uid:\t10185\t10185\t10185\t10185\n"
                             "Gid:\t10185\t10185\t10185\t10185\n");
    put("/proc/self/wchan", already_traced ? "ptrace_stop" : "ep_poll");
    put("/proc/self/maps", maps_text(frida_agent_mapped));
    if (frida_server_present) {
        put("/data/local/tmp/frida-server", std::string("\x7f", 1) + "ELF frida-server stub");
    }
    if (magisk_present) put("/sbin/.magisk", "MAGISKTMP=/sbin/.magisk\n");
    for (const auto& [pid, name] : processes) {
        put("/proc/" + std::to_string(pid) + "/cmdline", name + std::string(1, '\0'));
    }

    // Benign twins that redirect rules can point at, plus an ordinary file.
    put("/data/local/tmp/fake", "fake\n");
    put("/data/local/tmp/fake_status", "Name:\tcom.example.test\n"
                                       "State:\tS (sleeping)\n"
                                       "Tgid:\t12001\n"
                                       "Pid:\t12001\n"
                                       "PPid:\t912\n"
                                       "TracerPid:\t0\n"
                                       "Uid:\t10185\t10185\t10185\t10185\n"
                                       "Gid:\t10185\t10185\t10185\t10185\n");
    put("/data/local/tmp/fake_wchan", "ep_poll");
    put("/data/local/tmp/fake_cmdline", "com.benign.app" + std::string(1, '\0'));
    put("/data/app/base.apk", "PK\x03\x04 benign application package");
    return fs;
}

// One simulated app thread issuing syscalls against an in-memory device.
// Every call produces an enter and (except exit_group) an exit event; the
// attached engine sees each event exactly when a kernel probe would, so
// enter rules run before the kernel consumes arguments and exit rules run
// after results land but before the app looks at them.
class SimProcess {
public:
    static constexpr std::int32_t kPid = 12001;
    static constexpr std::uint64_t kTextBase = 0x5500000000;
    static constexpr std::uint64_t kTextSize = 0x40000;
    static constexpr std::uint64_t kHeapBase = 0x7b00000000;
    static constexpr std::uint64_t kHeapSize = 0x100000;
    static constexpr std::uint64_t kAtFdcwd = 0xffffffffffffff9cULL; // AT_FDCWD as a register

    explicit SimProcess(SimEnvironment env) : env_(std::move(env)), files_(env_.files()) {}

    void attach(Engine* engine) { engine_ = engine; }

    // Maps the code and heap regions through the normal mmap path so the
    // layout shows up in the trace.
    void boot() {
        if (booted_) return;
        booted_ = true;
        sys_mmap(kTextBase, kTextSize, kProtRead | kProtExec, "app code");
        sys_mmap(kHeapBase, kHeapSize, kProtRead | kProtWrite, "heap");
        brk_ = kHeapBase;
    }

    const SimEnvironment& env() const { return env_; }
    AddressSpace& space() { return space_; }
    const std::vector<SyscallEvent>& trace() const { return trace_; }
    bool exited() const { return exited_; }

    // Plain in-process memory work: no events, app permissions enforced on
    // writes (the app cannot scribble over its own text segment).
    std::uint64_t alloc(std::uint64_t n) {
        std::uint64_t addr = brk_;
        brk_ += (n + 15) / 16 * 16 + 16;
        return addr;
    }

    std::uint64_t push_cstring(std::string_view s) {
        std::uint64_t addr = alloc(s.size() + 1);
        std::vector<std::uint8_t> bytes(s.begin(), s.end());
        bytes.push_back(0);
        space_.poke(addr, bytes, false);
        return addr;
    }

    bool app_write(std::uint64_t addr, std::span<const std::uint8_t> bytes) {
        return space_.poke(addr, bytes, true) == MemError::Ok;
    }

    std::optional<std::vector<std::uint8_t>> app_read(std::uint64_t addr, std::uint64_t n) {
        auto r = space_.read_bytes(addr, n);
        if (!r.ok()) return std::nullopt;
        return std::move(r.value);
    }

    std::int64_t sys_openat(std::uint64_t path_ptr, std::uint64_t flags = 0) {
        std::map<int, DerefValue> deref;
        if (auto s = space_.read_c_string(path_ptr); s.ok()) {
            deref[1] = str_value(s.value);
        }
        SyscallEvent enter = begin("openat", {kAtFdcwd, path_ptr, flags, 0, 0, 0},
                                   std::move(deref));

        std::int64_t ret;
        auto path = space_.read_c_string(path_ptr); // rules may have redirected it
        if (!path.ok()) {
            ret = -kEfault;
        } else if (files_.count(path.value)) {
            ret = next_fd_++;
            open_files_[ret] = {path.value, 0};
        } else {
            ret = -kEnoent;
        }

        std::map<int, DerefValue> exit_deref;
        if (auto s = space_.read_c_string(path_ptr); s.ok()) {
            exit_deref[1] = str_value(s.value);
        }
        return finish(enter, ret, std::move(exit_deref));
    }

    std::int64_t sys_read(std::int64_t fd, std::uint64_t buf, std::uint64_t count) {
        SyscallEvent enter = begin("read", {static_cast<std::uint64_t>(fd), buf, count, 0, 0, 0},
                                   {});

        std::int64_t ret;
        auto it = open_files_.find(fd);
        if (it == open_files_.end()) {
            ret = -kEbadf;
        } else {
            const auto& content = files_.at(it->second.path);
            std::uint64_t offset = std::min<std::uint64_t>(it->second.offset, content.size());
            std::uint64_t n = std::min<std::uint64_t>(count, content.size() - offset);
            if (n == 0) {
                ret = 0;
            } else if (space_.poke(buf, std::span(content.data() + offset, n), true) !=
                       MemError::Ok) {
                ret = -kEfault;
            } else {
                it->second.offset = offset + n;
                ret = static_cast<std::int64_t>(n);
            }
        }

        std::map<int, DerefValue> exit_deref;
        if (ret > 0) {
            auto got = space_.read_bytes(buf, std::min<std::uint64_t>(
                                                  static_cast<std::uint64_t>(ret), 4096));
            if (got.ok()) exit_deref[1] = bytes_value(std::move(got.value));
        }
        return finish(enter, ret, std::move(exit_deref));
    }

    std::int64_t sys_close(std::int64_t fd) {
        SyscallEvent enter = begin("close", {static_cast<std::uint64_t>(fd), 0, 0, 0, 0, 0}, {});
        std::int64_t ret = 0;
        if (open_files_.erase(fd) == 0 && sockets_.erase(fd) == 0) ret = -kEbadf;
        return finish(enter, ret, {});
    }

    std::int64_t sys_socket() {
        SyscallEvent enter = begin("socket", {2 /*AF_INET*/, 1 /*SOCK_STREAM*/, 6, 0, 0, 0}, {});
        std::int64_t fd = next_fd_++;
        sockets_.insert(fd);
        return finish(enter, fd, {});
    }

    std::int64_t sys_connect(std::int64_t fd, std::uint64_t addr_ptr, std::uint64_t addr_len) {
        std::map<int, DerefValue> deref;
        if (auto s = render_sockaddr(addr_ptr)) deref[1] = str_value(*s);
        SyscallEvent enter = begin(
            "connect", {static_cast<std::uint64_t>(fd), addr_ptr, addr_len, 0, 0, 0},
            std::move(deref));

        std::int64_t ret = -kEconnrefused;
        if (!sockets_.count(fd)) {
            ret = -kEbadf;
        } else if (auto target = render_sockaddr(addr_ptr)) { // post-rule memory decides
            if (*target == "127.0.0.1:27049" && env_.port_27049_open) ret = 0;
        } else {
            ret = -kEfault;
        }

        std::map<int, DerefValue> exit_deref;
        if (auto s = render_sockaddr(addr_ptr)) exit_deref[1] = str_value(*s);
        return finish(enter, ret, std::move(exit_deref));
    }

    std::int64_t sys_mmap(std::uint64_t addr, std::uint64_t len, std::uint32_t prot,
                          std::string origin = "app mmap") {
        SyscallEvent enter = begin(
            "mmap", {addr, len, prot, 0x22 /*MAP_PRIVATE|MAP_ANONYMOUS*/,
                     0xffffffffffffffffULL, 0},
            {});
        auto mapped = space_.map(addr, len, prot, std::move(origin));
        std::int64_t ret = mapped.ok() ? static_cast<std::int64_t>(mapped.value) : -kEinval;
        return finish(enter, ret, {});
    }

    std::int64_t sys_mprotect(std::uint64_t addr, std::uint64_t len, std::uint32_t prot) {
        std::map<int, DerefValue> deref;
        if (auto w = window(addr, len)) deref[0] = bytes_value(std::move(*w));
        SyscallEvent enter = begin("mprotect", {addr, len, prot, 0, 0, 0}, std::move(deref));

        MemError err = space_.protect(addr, len, prot);
        std::int64_t ret = 0;
        if (err == MemError::Unmapped) ret = -kEnomem;
        else if (err != MemError::Ok) ret = -kEinval;

        std::map<int, DerefValue> exit_deref;
        if (auto w = window(addr, len)) exit_deref[0] = bytes_value(std::move(*w));
        return finish(enter, ret, std::move(exit_deref));
    }

    std::int64_t sys_clock_gettime(std::uint64_t clock_id, std::uint64_t ts_ptr) {
        SyscallEvent enter = begin("clock_gettime", {clock_id, ts_ptr, 0, 0, 0, 0}, {});

        std::array<std::uint8_t, 16> ts{};
        std::uint64_t sec = clock_ / 1000000000;
        std::uint64_t nsec = clock_ % 1000000000;
        for (int i = 0; i < 8; ++i) ts[static_cast<std::size_t>(i)] = (sec >> (8 * i)) & 0xff;
        for (int i = 0; i < 8; ++i) ts[static_cast<std::size_t>(8 + i)] = (nsec >> (8 * i)) & 0xff;
        std::int64_t ret = space_.poke(ts_ptr, ts, true) == MemError::Ok ? 0 : -kEfault;

        std::map<int, DerefValue> exit_deref;
        if (ret == 0) {
            if (auto got = space_.read_bytes(ts_ptr, 16); got.ok()) {
                exit_deref[1] = bytes_value(std::move(got.value));
            }
        }
        return finish(enter, ret, std::move(exit_deref));
    }

    std::int64_t sys_ptrace(std::uint64_t request) {
        SyscallEvent enter = begin("ptrace", {request, 0, 0, 0, 0, 0}, {});
        std::int64_t ret;
        if (request != 0) ret = -kEinval;                   // only PTRACE_TRACEME is modeled
        else ret = env_.already_traced ? -kEperm : 0;
        return finish(enter, ret, {});
    }

    // Termination never returns to the caller on real hardware; here the
    // enter event is recorded and the process is marked dead.
    void sys_exit_group(std::int64_t code) {
        begin("exit_group", {static_cast<std::uint64_t>(code), 0, 0, 0, 0, 0}, {});
        exited_ = true;
    }

private:
    static constexpr std::int64_t kEperm = 1;
    static constexpr std::int64_t kEnoent = 2;
    static constexpr std::int64_t kEbadf = 9;
    static constexpr std::int64_t kEnomem = 12;
    static constexpr std::int64_t kEfault = 14;
    static constexpr std::int64_t kEinval = 22;
    static constexpr std::int64_t kEconnrefused = 111;

    static DerefValue str_value(std::string s) {
        DerefValue v;
        v.kind = DerefValue::Kind::Str;
        v.str = std::move(s);
        return v;
    }

    static DerefValue bytes_value(std::vector<std::uint8_t> b) {
        DerefValue v;
        v.kind = DerefValue::Kind::Bytes;
        v.bytes = std::move(b);
        return v;
    }

    std::optional<std::vector<std::uint8_t>> window(std::uint64_t addr, std::uint64_t len) {
        auto got = space_.read_bytes(addr, std::min<std::uint64_t>(len, 64));
        if (!got.ok()) return std::nullopt;
        return std::move(got.value);
    }

    std::optional<std::string> render_sockaddr(std::uint64_t addr_ptr) {
        auto got = space_.read_bytes(addr_ptr, 8);
        if (!got.ok()) return std::nullopt;
        const auto& b = got.value;
        int family = b[0] | (b[1] << 8);
        if (family != 2) return std::nullopt;
        int port = (b[2] << 8) | b[3]; // network byte order
        return std::to_string(b[4]) + "." + std::to_string(b[5]) + "." + std::to_string(b[6]) +
               "." + std::to_string(b[7]) + ":" + std::to_string(port);
    }

    SyscallEvent begin(std::string syscall, std::array<std::uint64_t, 6> args,
                       std::map<int, DerefValue> deref) {
        SyscallEvent ev;
        ev.seq = ++seq_;
        ev.phase = Phase::Enter;
        ev.pid = kPid;
        ev.tid = kPid;
        ev.comm = "com.example.tes"; // kernel-truncated com.example.test
        ev.tname = "main";
        ev.syscall = std::move(syscall);
        ev.args = args;
        ev.pc = kTextBase + 0x1000 + (site_++) * 0x10;
        ev.stack = {ev.pc, kTextBase + 0x400};
        ev.deref = std::move(deref);
        clock_ += env_.syscall_cost_ns;
        ev.ts = clock_;
        if (engine_) engine_->on_syscall_enter(ev);
        trace_.push_back(ev);
        return ev;
    }

    std::int64_t finish(const SyscallEvent& enter, std::int64_t retval,
                        std::map<int, DerefValue> deref) {
        SyscallEvent ev = enter;
        ev.seq = ++seq_;
        ev.phase = Phase::Exit;
        ev.retval = retval;
        ev.deref = std::move(deref);
        clock_ += 200;
        ev.ts = clock_;
        if (engine_) engine_->on_syscall_exit(ev); // may override retval
        trace_.push_back(ev);
        return ev.retval;
    }

    struct OpenFile {
        std::string path;
        std::uint64_t offset = 0;
    };

    SimEnvironment env_;
    std::map<std::string, std::vector<std::uint8_t>> files_;
    Engine* engine_ = nullptr;
    AddressSpace space_;
    std::vector<SyscallEvent> trace_;
    std::map<std::int64_t, OpenFile> open_files_;
    std::set<std::int64_t> sockets_;
    std::uint64_t seq_ = 0;
    std::uint64_t site_ = 0;
    std::uint64_t clock_ = 1000000000;
    std::uint64_t brk_ = kHeapBase;
    std::int64_t next_fd_ = 3;
    bool booted_ = false;
    bool exited_ = false;
};

struct Detection {
    std::string check;
    std::string evidence;
};

struct ScenarioOutcome {
    std::string scenario;
    bool survived = true;
    std::string reaction = "none"; // what the app did on detection
    std::vector<Detection> detections;
    std::vector<SyscallEvent> events;
    ActionLog actions;
    std::uint64_t patches_observed = 0;
};

struct ScenarioDef {
    std::string name;
    std::string principle;
    std::string description;
    bool supported = true;
    std::string reaction = "terminate";
    void (*script)(SimProcess&, std::vector<Detection>&) = nullptr;
};

namespace scripts {

// Reads a whole file through the syscall surface; nullopt when it cannot be
// opened or read.
inline std::optional<std::string> slurp(SimProcess& p, const std::string& path,
                                        std::uint64_t cap = 4096) {
    std::uint64_t path_ptr = p.push_cstring(path);
    std::int64_t fd = p.sys_openat(path_ptr);
    if (fd < 0) return std::nullopt;
    std::uint64_t buf = p.alloc(cap);
    std::int64_t n = p.sys_read(fd, buf, cap);
    p.sys_close(fd);
    if (n < 0) return std::nullopt;
    auto bytes = p.app_read(buf, static_cast<std::uint64_t>(n));
    if (!bytes) return std::nullopt;
    return std::string(bytes->begin(), bytes->end());
}

inline void tracerpid(SimProcess& p, std::vector<Detection>& out) {
    auto text = slurp(p, "/proc/self/status", 512);
    if (!text) return;
    auto pos = text->find("TracerPid:\t");
    if (pos == std::string::npos) return;
    pos += 11;
    auto end = text->find('\n', pos);
    std::string value = text->substr(pos, end == std::string::npos ? end : end - pos);
    if (value != "0") out.push_back({"TracerPid nonzero", "TracerPid=" + value});
}

inline void wchan_probe(SimProcess& p, std::vector<Detection>& out) {
    auto text = slurp(p, "/proc/self/wchan", 64);
    if (text && text->find("ptrace") != std::string::npos) {
        out.push_back({"blocked in ptrace stop", *text});
    }
}

inline void frida_artifact(SimProcess& p, std::vector<Detection>& out) {
    std::uint64_t path = p.push_cstring("/data/local/tmp/frida-server");
    std::int64_t fd = p.sys_openat(path);
    if (fd >= 0) {
        p.sys_close(fd);
        out.push_back({"frida-server binary present", "/data/local/tmp/frida-server"});
    }
}

inline void magisk_path(SimProcess& p, std::vector<Detection>& out) {
    std::uint64_t path = p.push_cstring("/sbin/.magisk");
    std::int64_t fd = p.sys_openat(path);
    if (fd >= 0) {
        p.sys_close(fd);
        out.push_back({"magisk mount point present", "/sbin/.magisk"});
    }
}

inline void proc_scan(SimProcess& p, std::vector<Detection>& out) {
    for (const auto& [pid, name] : p.env().processes) {
        (void)name; // the app only sees what the files say
        auto text = slurp(p, "/proc/" + std::to_string(pid) + "/cmdline", 128);
        if (!text) continue;
        std::string cmd = text->substr(0, text->find('\0'));
        if (cmd.find("frida") != std::string::npos || cmd.find("magisk") != std::string::npos) {
            out.push_back({"analysis process visible", cmd});
            return;
        }
    }
}

inline void maps_scan(SimProcess& p, std::vector<Detection>& out) {
    auto text = slurp(p, "/proc/self/maps");
    if (!text) return;
    auto pos = text->find("frida-agent");
    if (pos == std::string::npos) return;
    auto line_start = text->rfind('\n', pos);
    line_start = line_start == std::string::npos ? 0 : line_start + 1;
    auto line_end = text->find('\n', pos);
    out.push_back({"injected agent in maps",
                   text->substr(line_start, line_end - line_start)});
}

inline void suicide_stub(SimProcess& p, std::vector<Detection>& out) {
    // aarch64 "mov x8, #0x81; svc #0": a raw kill(2) left armed inside the
    // decoded image by stage one of the unpacker.
    static constexpr std::array<std::uint8_t, 8> kStub = {0x28, 0x10, 0x80, 0xd2,
                                                          0x01, 0x00, 0x00, 0xd4};
    constexpr std::uint64_t kBase = 0x7a41c45000;
    constexpr std::uint64_t kLen = 0xde5c0;
    constexpr std::uint64_t kStubOff = 0x6aae4;

    std::int64_t r = p.sys_mmap(kBase, kLen, kProtRead | kProtWrite);
    if (r < 0) return;
    auto base = static_cast<std::uint64_t>(r);
    p.app_write(base, kStub);            // image header carries the same signature
    p.app_write(base + kStubOff, kStub); // the armed stub itself
    p.sys_mprotect(base, kLen, kProtRead | kProtExec);

    auto code = p.app_read(base + kStubOff, kStub.size());
    if (code && std::equal(code->begin(), code->end(), kStub.begin())) {
        out.push_back({"suicide stub still armed", "code at " + to_hex(base + kStubOff)});
        p.sys_exit_group(137);
    }
}

inline void timing_delta(SimProcess& p, std::vector<Detection>& out) {
    auto read_ns = [&](std::uint64_t ts_ptr) -> std::optional<std::int64_t> {
        auto bytes = p.app_read(ts_ptr, 16);
        if (!bytes) return std::nullopt;
        std::uint64_t sec = 0, nsec = 0;
        for (int i = 7; i >= 0; --i) sec = (sec << 8) | (*bytes)[static_cast<std::size_t>(i)];
        for (int i = 7; i >= 0; --i) nsec = (nsec << 8) | (*bytes)[static_cast<std::size_t>(8 + i)];
        return static_cast<std::int64_t>(sec * 1000000000 + nsec);
    };

    std::uint64_t t0 = p.alloc(16);
    std::uint64_t t1 = p.alloc(16);
    p.sys_clock_gettime(1, t0);
    std::uint64_t path = p.push_cstring("/data/app/base.apk");
    std::int64_t fd = p.sys_openat(path);
    if (fd >= 0) {
        std::uint64_t buf = p.alloc(64);
        p.sys_read(fd, buf, 64);
        p.sys_close(fd);
    }
    p.sys_clock_gettime(1, t1);

    auto a = read_ns(t0);
    auto b = read_ns(t1);
    if (!a || !b) return;
    std::int64_t delta = *b - *a;
    if (delta > 1000000) { // tracing inflates per-syscall cost well past 1ms
        out.push_back({"syscall timing anomaly", "delta=" + std::to_string(delta) + "ns"});
    }
}

inline void frida_port_scan(SimProcess& p, std::vector<Detection>& out) {
    std::int64_t sock = p.sys_socket();
    std::uint64_t sa = p.alloc(16);
    // sockaddr_in for 127.0.0.1:27049 (0x69a9 big endian)
    std::array<std::uint8_t, 16> addr = {2, 0, 0x69, 0xa9, 127, 0, 0, 1,
                                         0, 0, 0,    0,    0,   0, 0, 0};
    p.app_write(sa, addr);
    std::int64_t r = p.sys_connect(sock, sa, 16);
    p.sys_close(sock);
    if (r == 0) out.push_back({"frida control port open", "127.0.0.1:27049"});
}

inline void ptrace_traceme(SimProcess& p, std::vector<Detection>& out) {
    std::int64_t r = p.sys_ptrace(0);
    if (r != 0) {
        out.push_back({"ptrace(PTRACE_TRACEME) rejected", "retval=" + std::to_string(r)});
    }
}

} // namespace scripts

inline const std::vector<ScenarioDef>& scenario_catalog() {
    static const std::vector<ScenarioDef> catalog = {
        {"tracerpid", "file-based",
         "parses TracerPid out of /proc/self/status", true, "terminate", scripts::tracerpid},
        {"wchan_probe", "file-based",
         "reads /proc/self/wchan looking for a ptrace stop", true, "terminate",
         scripts::wchan_probe},
        {"frida_artifact", "file-based",
         "opens /data/local/tmp/frida-server to see if it exists", true, "terminate",
         scripts::frida_artifact},
        {"magisk_path", "file-based",
         "opens /sbin/.magisk to spot a rooted device", true, "terminate",
         scripts::magisk_path},
        {"proc_scan", "activity-based",
         "walks /proc/<pid>/cmdline for analysis tool names", true, "terminate",
         scripts::proc_scan},
        {"maps_scan", "memory-based",
         "greps /proc/self/maps for an injected agent", true, "crash", scripts::maps_scan},
        {"suicide_stub", "memory-based",
         "unpacks code carrying an armed exit stub and runs it unless stage two was patched",
         true, "crash", scripts::suicide_stub},
        {"timing_delta", "timer-based",
         "times a file read between two clock_gettime calls", true, "terminate",
         scripts::timing_delta},
        {"frida_port_scan", "network-based",
         "connects to 127.0.0.1:27049", true, "terminate", scripts::frida_port_scan},
        {"ptrace_traceme", "misc/native-level",
         "calls ptrace(PTRACE_TRACEME) and expects it to succeed", true, "crash",
         scripts::ptrace_traceme},
        {"java_api_stub", "Java/framework",
         "framework-level checks (Debug.isDebuggerConnected and friends) happen above the "
         "syscall layer and are out of scope here",
         false, "none", nullptr},
    };
    return catalog;
}

inline const ScenarioDef* find_scenario(std::string_view name) {
    for (const ScenarioDef& def : scenario_catalog()) {
        if (def.name == name) return &def;
    }
    return nullptr;
}

// Runs one scenario. rules == nullptr runs without an engine attached;
// passing an empty rule set attaches an engine that never fires, which is
// useful for checking the engine itself changes nothing.
inline ScenarioOutcome run_scenario(std::string_view name, const std::vector<DerRule>* rules,
                                    const SimEnvironment& env = {}) {
    const ScenarioDef* def = find_scenario(name);
    if (!def) throw ScenarioError("unknown scenario \"" + std::string(name) + "\"");
    if (!def->supported) {
        throw ScenarioError("scenario \"" + std::string(name) + "\" is not supported: " +
                            def->description);
    }

    SimProcess proc(env);
    std::optional<Engine> engine;
    if (rules) {
        engine.emplace(*rules, &proc.space());
        proc.attach(&*engine);
    }
    proc.boot();

    ScenarioOutcome outcome;
    outcome.scenario = def->name;
    def->script(proc, outcome.detections);

    outcome.events = proc.trace();
    outcome.survived = outcome.detections.empty();
    outcome.reaction = outcome.survived ? "none" : def->reaction;
    if (engine) {
        outcome.actions = engine->log();
        for (const ActionEntry& e : outcome.actions) {
            if (e.outcome == ActionOutcome::Ok && (e.action == ActionKind::ArgBufferRewrite ||
                                                   e.action == ActionKind::MemoryPatch)) {
                ++outcome.patches_observed;
            }
        }
    }
    return outcome;
}

} // namespace sidestep

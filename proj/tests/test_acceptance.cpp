#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include <sidestep/sidestep.hpp>

#include "fixture.hpp"
#include "generators.hpp"

using namespace sidestep;

namespace {

// Collects expectations for one acceptance criterion and always prints a
// single PASS/FAIL line, even when the body bails out with an exception.
struct Criterion {
    Criterion(int n, const char* what) : number(n), name(what) {}

    int number;
    const char* name;
    bool ok = true;
    std::vector<std::string> failures;
    int entry_exceptions = std::uncaught_exceptions();

    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            failures.push_back(what);
        }
    }

    ~Criterion() {
        bool threw = std::uncaught_exceptions() > entry_exceptions;
        std::printf("[acceptance] C%d %s: %s\n", number, name,
                    ok && !threw ? "PASS" : "FAIL");
        for (const auto& f : failures) std::printf("[acceptance]   C%d: %s\n", number, f.c_str());
        if (threw) std::printf("[acceptance]   C%d: aborted by exception\n", number);
        std::fflush(stdout);
    }
};

std::string slurp_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const std::string kRoot = SIDESTEP_SOURCE_ROOT;

std::vector<std::uint8_t> bytes(std::initializer_list<int> xs) {
    std::vector<std::uint8_t> out;
    for (int x : xs) out.push_back(static_cast<std::uint8_t>(x));
    return out;
}

// Trace for the rollback runs: a few fixed rw mappings, then probe calls
// whose args0 mostly points into them and sometimes at unmapped memory.
std::vector<SyscallEvent> gen_revert_trace(std::mt19937_64& rng) {
    std::vector<SyscallEvent> events;
    std::uint64_t seq = 0;
    std::uniform_int_distribution<int> pick(0, 99);
    std::uniform_int_distribution<std::uint64_t> off_pick(0, 0x1f00);

    std::vector<std::uint64_t> bases;
    for (int i = 0; i < 4; ++i) {
        std::uint64_t base = 0x7a5000000000 + static_cast<std::uint64_t>(i) * 0x10000;
        auto enter = testsupport::base_event(++seq, Phase::Enter, "mmap");
        enter.args = {base, 0x2000, 3, 0x22, 0xffffffffffffffffULL, 0};
        enter.pc = 0x5000000000;
        auto exit = enter;
        exit.seq = ++seq;
        exit.phase = Phase::Exit;
        exit.retval = static_cast<std::int64_t>(base);
        exit.ts = enter.ts + 10;
        events.push_back(enter);
        events.push_back(exit);
        bases.push_back(base);
    }

    int n = 10 + pick(rng) % 20;
    for (int i = 0; i < n; ++i) {
        std::uint64_t target =
            pick(rng) < 80 ? bases[static_cast<std::size_t>(pick(rng)) % bases.size()] +
                                 off_pick(rng)
                           : 0x10000; // unmapped: the patch must be refused
        auto enter = testsupport::base_event(++seq, Phase::Enter, "probe");
        enter.args = {target, 0, 0, 0, 0, 0};
        enter.pc = 0x5000000100;
        auto exit = enter;
        exit.seq = ++seq;
        exit.phase = Phase::Exit;
        exit.retval = 0;
        exit.ts = enter.ts + 10;
        events.push_back(enter);
        events.push_back(exit);
    }
    return events;
}

std::vector<DerRule> gen_revert_rules(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> rule_count(1, 3);
    std::uniform_int_distribution<int> len_pick(1, 8);
    std::uniform_int_distribution<int> byte_pick(0, 255);
    std::uniform_int_distribution<int> delta_pick(0, 64);

    std::vector<DerRule> rules;
    int n = rule_count(rng);
    for (int i = 0; i < n; ++i) {
        DerRule r;
        r.id = std::to_string(i);
        r.condition.comm = "gen.app";
        r.condition.syscall = "probe";
        int delta = delta_pick(rng);
        r.evasion.where.kind = WhereTarget::Kind::Address;
        r.evasion.where.address =
            parse_where_expr(delta == 0 ? "args0" : "args0 + " + std::to_string(delta));
        r.evasion.data.kind = EvasionPayload::Kind::Bytes;
        int len = len_pick(rng);
        for (int b = 0; b < len; ++b) {
            r.evasion.data.bytes.push_back(static_cast<std::uint8_t>(byte_pick(rng)));
        }
        r.evasion.revert_on_exit = true;
        rules.push_back(std::move(r));
    }
    return rules;
}

} // namespace

TEST_CASE("C1 bundled example rules parse to the documented shape and round trip") {
    Criterion c{1, "bundled example rules"};

    std::string text = slurp_file(kRoot + "/rules/examples.der.json");
    auto rules = parse_der_file(text);
    REQUIRE(rules.size() == 2);

    const DerRule& r0 = rules[0];
    c.expect(r0.id == "0", "first rule id");
    c.expect(r0.condition.comm == "com.example.test", "first rule comm");
    c.expect(r0.condition.tname == "*", "first rule tname");
    c.expect(r0.condition.syscall == "openat", "first rule syscall");
    c.expect(r0.condition.phase == Phase::Enter, "first rule phase defaults to enter");
    c.expect(r0.condition.args.size() == 1, "first rule arg checks");
    c.expect(r0.condition.args.count(1) == 1 &&
                 r0.condition.args.at(1).kind == ArgSpec::Kind::PathPrefix &&
                 r0.condition.args.at(1).prefix == "/proc/self/task/",
             "first rule path prefix");
    c.expect(!r0.condition.data, "first rule has no data check");
    c.expect(r0.evasion.where.kind == WhereTarget::Kind::Address &&
                 r0.evasion.where.address.is_single_arg() &&
                 r0.evasion.where.address.to_string() == "args1",
             "first rule targets args1");
    c.expect(r0.evasion.data.kind == EvasionPayload::Kind::Text &&
                 r0.evasion.data.text == "/data/local/tmp/fake" &&
                 r0.evasion.data.memory_image().size() == 21,
             "first rule text payload with terminator");
    c.expect(!r0.evasion.revert_on_exit, "first rule does not revert");

    const DerRule& r1 = rules[1];
    c.expect(r1.id == "1", "second rule id");
    c.expect(r1.condition.syscall == "mprotect", "second rule syscall");
    c.expect(r1.condition.args.size() == 3, "second rule arg checks");
    c.expect(r1.condition.args.at(0).kind == ArgSpec::Kind::Wildcard,
             "second rule arg0 placeholder");
    c.expect(r1.condition.args.at(1).kind == ArgSpec::Kind::RawValue &&
                 r1.condition.args.at(1).raw == 0xde5c0,
             "second rule arg1 raw value");
    c.expect(r1.condition.args.at(2).kind == ArgSpec::Kind::RawValue &&
                 r1.condition.args.at(2).raw == 5,
             "second rule arg2 raw value");
    c.expect(r1.condition.data.has_value() &&
                 *r1.condition.data == bytes({0x28, 0x10, 0x80, 0xd2, 0x01, 0x00, 0x00, 0xd4}),
             "second rule data pattern");
    c.expect(!r1.condition.data_where_explicit &&
                 r1.condition.data_where.to_string() == "args0",
             "second rule data checked at args0 by default");
    c.expect(r1.evasion.where.kind == WhereTarget::Kind::Address &&
                 !r1.evasion.where.address.is_single_arg() &&
                 r1.evasion.where.address.to_string() == "args0 + 0x6aae4",
             "second rule patch target");
    c.expect(r1.evasion.where.address.eval({0x7a41c45000, 0, 0, 0, 0, 0}) == 0x7a41cafae4,
             "second rule patch address arithmetic");
    c.expect(r1.evasion.data.kind == EvasionPayload::Kind::Bytes &&
                 r1.evasion.data.bytes ==
                     bytes({0x00, 0x00, 0x80, 0xd2, 0x1f, 0x20, 0x03, 0xd5}),
             "second rule byte payload");

    std::string serialized = serialize_der(rules);
    auto reparsed = parse_der_file(serialized);
    c.expect(reparsed == rules, "reparse reproduces the rules");

    std::istringstream objects(strip_der_comments(text));
    nlohmann::json a, b;
    objects >> a >> b;
    c.expect(nlohmann::json::parse(serialized) == nlohmann::json::array({a, b}),
             "serialized form is JSON-equal to the source objects");

    REQUIRE(c.ok);
}

TEST_CASE("C2 shipped rules flip every supported scenario") {
    Criterion c{2, "scenario flip suite"};

    int flipped = 0;
    std::set<std::string> principles;
    for (const ScenarioDef& def : scenario_catalog()) {
        if (!def.supported) continue;
        ScenarioOutcome bare = run_scenario(def.name, nullptr);
        c.expect(!bare.survived, def.name + " detects when unevaded");
        c.expect(!bare.detections.empty(), def.name + " reports evidence");

        auto rules = parse_der_file(slurp_file(kRoot + "/rules/" + def.name + ".der.json"));
        ScenarioOutcome evaded = run_scenario(def.name, &rules);
        c.expect(evaded.survived, def.name + " survives with its shipped rules");
        if (!bare.survived && evaded.survived) {
            ++flipped;
            principles.insert(def.principle);
        }
    }
    c.expect(flipped == 10, "all ten supported scenarios flip (got " +
                                std::to_string(flipped) + ")");
    c.expect(principles.size() >= 6, "flipped scenarios span at least six principles (got " +
                                         std::to_string(principles.size()) + ")");

    REQUIRE(c.ok);
}

TEST_CASE("C3 patches only land while the target is still writable") {
    Criterion c{3, "protection window"};

    auto rules = parse_der_file(slurp_file(kRoot + "/rules/suicide_stub.der.json"));
    constexpr std::uint64_t kStubAddr = 0x7a41c45000 + 0x6aae4;

    {
        SimProcess proc{SimEnvironment{}};
        Engine engine(rules, &proc.space());
        proc.attach(&engine);
        proc.boot();
        std::vector<Detection> found;
        scripts::suicide_stub(proc, found);
        c.expect(found.empty(), "patched stub goes unnoticed");

        int ok_patches = 0;
        for (const ActionEntry& e : engine.log()) {
            if (e.action == ActionKind::MemoryPatch && e.outcome == ActionOutcome::Ok) {
                ++ok_patches;
            }
        }
        c.expect(ok_patches == 1, "exactly one patch landed");

        const MemoryRegion* region = proc.space().region_at(kStubAddr);
        c.expect(region && region->perms == (kProtRead | kProtExec),
                 "the image is sealed read-execute afterwards");
        auto direct = proc.space().write_bytes(kStubAddr, bytes({0x90}), "late", 9999);
        c.expect(direct.error == MemError::NotWritable,
                 "a direct write after sealing is refused");
    }

    {
        // The same rule deferred to the exit arrives after the permission
        // flip and must be refused, leaving the stub armed.
        auto late = rules;
        late[0].condition.phase = Phase::Exit;
        late[0].condition.phase_explicit = true;

        SimProcess proc{SimEnvironment{}};
        Engine engine(late, &proc.space());
        proc.attach(&engine);
        proc.boot();
        std::vector<Detection> found;
        scripts::suicide_stub(proc, found);
        c.expect(!found.empty(), "the late patch cannot stop the detection");

        bool denied = false;
        for (const ActionEntry& e : engine.log()) {
            if (e.action == ActionKind::MemoryPatch && e.outcome == ActionOutcome::Denied) {
                denied = true;
            }
        }
        c.expect(denied, "the late attempt is logged as denied");
    }

    REQUIRE(c.ok);
}

TEST_CASE("C4 reverting runs leave memory byte-identical to untouched runs") {
    Criterion c{4, "rollback integrity"};

    int bad_memory = 0;
    int bad_accounting = 0;
    long total_patches = 0;
    for (int round = 0; round < 60; ++round) {
        std::mt19937_64 rng(0xacce5504u + static_cast<unsigned>(round));
        auto events = gen_revert_trace(rng);
        auto rules = gen_revert_rules(rng);

        TraceEventSource traced(events);
        RunResult with = run(rules, traced);

        TraceEventSource untouched(events);
        while (untouched.next()) {
        }

        if (!with.final_space.same_memory(untouched.space())) ++bad_memory;

        long ok_writes = 0;
        long reverts = 0;
        for (const ActionEntry& e : with.log) {
            if (e.outcome != ActionOutcome::Ok) continue;
            if (e.action == ActionKind::Revert) ++reverts;
            if (e.action == ActionKind::MemoryPatch || e.action == ActionKind::ArgBufferRewrite) {
                ++ok_writes;
            }
        }
        total_patches += ok_writes;
        if (ok_writes != reverts) ++bad_accounting;
    }
    c.expect(bad_memory == 0, std::to_string(bad_memory) + " of 60 runs diverged");
    c.expect(bad_accounting == 0,
             std::to_string(bad_accounting) + " runs reverted a different count than they wrote");
    c.expect(total_patches > 100, "the runs exercised patches (got " +
                                      std::to_string(total_patches) + ")");

    REQUIRE(c.ok);
}

TEST_CASE("C5 implementations agree with independent reference models") {
    Criterion c{5, "reference model agreement"};

    {
        std::mt19937_64 rng(0xacce5505);
        std::uniform_int_distribution<std::uint64_t> reg_pick;
        int bad = 0;
        for (int i = 0; i < 1000; ++i) {
            auto sample = testsupport::gen_where(rng);
            WhereExpr expr = parse_where_expr(sample.noisy);
            std::array<std::uint64_t, 6> regs{};
            for (auto& r : regs) r = reg_pick(rng);
            if (expr.to_string() != sample.canonical) ++bad;
            if (expr.eval(regs) != testsupport::ref_eval_where(sample.canonical, regs)) ++bad;
        }
        c.expect(bad == 0, std::to_string(bad) + " address expression disagreements in 1000");
    }

    {
        int bad = 0;
        for (int i = 0; i < 200; ++i) {
            std::mt19937_64 rng(0xacce5515u + static_cast<unsigned>(i));
            if (!testsupport::memory_sequence_agrees(rng, 150)) ++bad;
        }
        c.expect(bad == 0, std::to_string(bad) + " memory model disagreements in 200");
    }

    {
        std::mt19937_64 rng(0xacce5525);
        int bad = 0;
        for (int i = 0; i < 100; ++i) {
            auto t = testsupport::gen_region_trace(rng);
            std::size_t frame = static_cast<std::size_t>(i % 2);
            auto got = testsupport::flatten_map(build_map(t.events, frame));
            auto want = testsupport::ref_attribution(t.events, frame);
            if (got != want) ++bad;
        }
        c.expect(bad == 0, std::to_string(bad) + " attribution disagreements in 100");
    }

    REQUIRE(c.ok);
}

TEST_CASE("C6 the committed fixture trace renders the expected report") {
    Criterion c{6, "fixture report"};

    std::string text = slurp_file(kRoot + "/data/region_fixture.trace");
    c.expect(text == emit_trace(testsupport::appendix_fixture_events()),
             "the committed trace matches its builder byte for byte");

    auto events = parse_trace(text);
    c.expect(events.size() == 220, "event count");

    RegionSyscallMap map = build_map(events);
    c.expect(map.regions.size() == 96, "region count");
    c.expect(map.unattributed.empty(), "every probe attributes to a region");

    std::string report = render_report(map);
    std::string tail = testsupport::appendix_expected_tail();
    c.expect(report.size() > tail.size() &&
                 report.compare(report.size() - tail.size(), tail.size(), tail) == 0,
             "report ends with the expected region listing");

    REQUIRE(c.ok);
}

TEST_CASE("C7 an idle engine is invisible") {
    Criterion c{7, "idle engine neutrality"};

    std::vector<DerRule> none;
    for (const ScenarioDef& def : scenario_catalog()) {
        if (!def.supported) continue;
        ScenarioOutcome bare = run_scenario(def.name, nullptr);
        ScenarioOutcome idle = run_scenario(def.name, &none);
        c.expect(idle.survived == bare.survived, def.name + ": outcome unchanged");
        c.expect(idle.actions.empty(), def.name + ": nothing logged");
        c.expect(emit_trace(idle.events) == emit_trace(bare.events),
                 def.name + ": trace unchanged");
    }

    auto events = parse_trace(slurp_file(kRoot + "/data/region_fixture.trace"));
    TraceEventSource traced(events);
    RunResult idle = run(none, traced);
    c.expect(idle.log.empty(), "replay logged nothing");

    TraceEventSource plain(events);
    while (plain.next()) {
    }
    c.expect(idle.final_space.same_memory(plain.space()), "replay memory unchanged");

    REQUIRE(c.ok);
}

TEST_CASE("C8 the catalog flags every scenario's artifact") {
    Criterion c{8, "catalog coverage"};

    const auto& catalog = default_catalog();
    for (const ScenarioDef& def : scenario_catalog()) {
        if (!def.supported) continue;
        ScenarioOutcome bare = run_scenario(def.name, nullptr);
        auto flags = flag_suspicious(build_map(bare.events), catalog);

        bool principle_hit = false;
        bool benign_hit = false;
        for (const SuspicionFlag& f : flags) {
            if (f.principle == def.principle) principle_hit = true;
            if (f.note.find("base.apk") != std::string::npos) benign_hit = true;
        }
        c.expect(principle_hit, def.name + " raises a " + def.principle + " flag");
        c.expect(!benign_hit, def.name + " never flags the ordinary app file");
    }

    REQUIRE(c.ok);
}

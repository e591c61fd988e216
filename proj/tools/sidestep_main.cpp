// Command line front end: rule validation, trace replay, scenario runs and
// region/syscall mapping over recorded traces.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <sidestep/sidestep.hpp>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDetected = 1; // also: replay with denied actions
constexpr int kExitUsage = 2;    // bad usage, parse errors, unknown names

std::optional<std::string> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) return false;
    out << content;
    return static_cast<bool>(out);
}

int fail_usage(const std::string& message) {
    std::cerr << "error: " << message << "\n";
    return kExitUsage;
}

const char* payload_kind_name(sidestep::EvasionPayload::Kind k) {
    switch (k) {
    case sidestep::EvasionPayload::Kind::Text: return "text";
    case sidestep::EvasionPayload::Kind::Bytes: return "bytes";
    case sidestep::EvasionPayload::Kind::Integer: return "integer";
    }
    return "?";
}

int cmd_validate(const std::string& der_path, bool json_out) {
    auto source = read_file(der_path);
    if (!source) return fail_usage("cannot read " + der_path);
    std::vector<sidestep::DerRule> rules;
    try {
        rules = sidestep::parse_der_file(*source);
    } catch (const sidestep::ParseError& e) {
        return fail_usage(der_path + ": " + e.what());
    }

    if (json_out) {
        nlohmann::ordered_json doc = nlohmann::ordered_json::array();
        for (const auto& rule : rules) {
            nlohmann::ordered_json j;
            j["id"] = rule.id;
            j["syscall"] = rule.condition.syscall;
            j["phase"] = sidestep::phase_name(rule.condition.phase);
            j["arg_checks"] = rule.condition.args.size();
            j["has_data_check"] = rule.condition.data.has_value();
            j["target"] = rule.evasion.where.kind == sidestep::WhereTarget::Kind::Retval
                              ? "retval"
                              : rule.evasion.where.address.to_string();
            j["payload"] = payload_kind_name(rule.evasion.data.kind);
            j["revert_on_exit"] = rule.evasion.revert_on_exit;
            doc.push_back(std::move(j));
        }
        std::cout << doc.dump(2) << "\n";
    } else {
        for (const auto& rule : rules) {
            std::cout << "rule " << rule.id << ": " << rule.condition.syscall << "@"
                      << sidestep::phase_name(rule.condition.phase) << " comm=\""
                      << rule.condition.comm << "\" checks=" << rule.condition.args.size()
                      << (rule.condition.data ? "+data" : "") << " -> "
                      << (rule.evasion.where.kind == sidestep::WhereTarget::Kind::Retval
                              ? std::string("retval")
                              : rule.evasion.where.address.to_string())
                      << " (" << payload_kind_name(rule.evasion.data.kind) << ")"
                      << (rule.evasion.revert_on_exit ? " revert-on-exit" : "") << "\n";
        }
        std::cout << der_path << ": " << rules.size() << " rule(s) ok\n";
    }
    return kExitOk;
}

int cmd_replay(const std::string& trace_path, const std::string& der_path,
               const std::string& log_path, bool json_out) {
    auto trace_text = read_file(trace_path);
    if (!trace_text) return fail_usage("cannot read " + trace_path);
    auto der_text = read_file(der_path);
    if (!der_text) return fail_usage("cannot read " + der_path);

    std::vector<sidestep::DerRule> rules;
    std::vector<sidestep::SyscallEvent> events;
    try {
        rules = sidestep::parse_der_file(*der_text);
    } catch (const sidestep::ParseError& e) {
        return fail_usage(der_path + ": " + e.what());
    }
    try {
        events = sidestep::parse_trace(*trace_text);
    } catch (const sidestep::ParseError& e) {
        return fail_usage(trace_path + ": " + e.what());
    }

    std::size_t n_events = events.size();
    sidestep::TraceEventSource source(std::move(events));
    sidestep::RunResult result = sidestep::run(rules, source);

    std::size_t denied = 0;
    for (const auto& e : result.log) {
        if (e.outcome == sidestep::ActionOutcome::Denied) ++denied;
    }

    std::string log_text = sidestep::export_action_log(result.log);
    if (!log_path.empty()) {
        if (!write_file(log_path, log_text)) return fail_usage("cannot write " + log_path);
    }

    if (json_out) {
        nlohmann::ordered_json j;
        j["events"] = n_events;
        j["actions"] = result.log.size();
        j["denied"] = denied;
        j["final_regions"] = result.final_space.regions().size();
        nlohmann::ordered_json log = nlohmann::ordered_json::array();
        for (const auto& e : result.log) {
            nlohmann::ordered_json entry;
            entry["event_seq"] = e.event_seq;
            entry["rule_id"] = e.rule_id;
            entry["action"] = sidestep::action_kind_name(e.action);
            entry["address"] = sidestep::to_hex(e.address);
            entry["byte_len"] = e.byte_len;
            entry["outcome"] = e.outcome == sidestep::ActionOutcome::Ok ? "ok" : "denied";
            log.push_back(std::move(entry));
        }
        j["log"] = std::move(log);
        std::cout << j.dump(2) << "\n";
    } else {
        if (log_path.empty()) std::cout << log_text;
        std::cerr << "events=" << n_events << " actions=" << result.log.size()
                  << " denied=" << denied << "\n";
    }
    return denied > 0 ? kExitDetected : kExitOk;
}

int cmd_scenario_list(bool json_out) {
    if (json_out) {
        nlohmann::ordered_json doc = nlohmann::ordered_json::array();
        for (const auto& def : sidestep::scenario_catalog()) {
            nlohmann::ordered_json j;
            j["name"] = def.name;
            j["principle"] = def.principle;
            j["supported"] = def.supported;
            j["reaction"] = def.reaction;
            j["description"] = def.description;
            doc.push_back(std::move(j));
        }
        std::cout << doc.dump(2) << "\n";
    } else {
        for (const auto& def : sidestep::scenario_catalog()) {
            std::printf("%-16s %-18s %-11s %s\n", def.name.c_str(), def.principle.c_str(),
                        def.supported ? "supported" : "unsupported", def.description.c_str());
        }
    }
    return kExitOk;
}

int cmd_scenario_run(const std::string& name, const std::string& der_path,
                     const std::vector<std::string>& overrides, const std::string& trace_out,
                     bool json_out) {
    std::vector<sidestep::DerRule> rules;
    bool have_rules = false;
    if (!der_path.empty()) {
        auto der_text = read_file(der_path);
        if (!der_text) return fail_usage("cannot read " + der_path);
        try {
            rules = sidestep::parse_der_file(*der_text);
        } catch (const sidestep::ParseError& e) {
            return fail_usage(der_path + ": " + e.what());
        }
        have_rules = true;
    }

    sidestep::ScenarioOutcome outcome;
    try {
        sidestep::SimEnvironment env = sidestep::SimEnvironment::from_overrides(overrides);
        outcome = sidestep::run_scenario(name, have_rules ? &rules : nullptr, env);
    } catch (const sidestep::ScenarioError& e) {
        return fail_usage(e.what());
    }

    if (!trace_out.empty()) {
        if (!write_file(trace_out, sidestep::emit_trace(outcome.events))) {
            return fail_usage("cannot write " + trace_out);
        }
    }

    if (json_out) {
        nlohmann::ordered_json j;
        j["scenario"] = outcome.scenario;
        j["survived"] = outcome.survived;
        j["reaction"] = outcome.reaction;
        nlohmann::ordered_json detections = nlohmann::ordered_json::array();
        for (const auto& d : outcome.detections) {
            detections.push_back({{"check", d.check}, {"evidence", d.evidence}});
        }
        j["detections"] = std::move(detections);
        j["patches_observed"] = outcome.patches_observed;
        j["events"] = outcome.events.size();
        j["actions"] = outcome.actions.size();
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "scenario: " << outcome.scenario << "\n"
                  << "survived: " << (outcome.survived ? "yes" : "no") << "\n"
                  << "reaction: " << outcome.reaction << "\n";
        for (const auto& d : outcome.detections) {
            std::cout << "detection: " << d.check << " (" << d.evidence << ")\n";
        }
        std::cout << "patches: " << outcome.patches_observed << "\n"
                  << "events: " << outcome.events.size() << "\n";
    }
    return outcome.survived ? kExitOk : kExitDetected;
}

int cmd_map(const std::string& trace_path, const std::string& out_path,
            const std::string& catalog_path, std::size_t frame, bool json_out) {
    auto trace_text = read_file(trace_path);
    if (!trace_text) return fail_usage("cannot read " + trace_path);

    std::vector<sidestep::SyscallEvent> events;
    try {
        events = sidestep::parse_trace(*trace_text);
    } catch (const sidestep::ParseError& e) {
        return fail_usage(trace_path + ": " + e.what());
    }

    std::vector<sidestep::CatalogEntry> catalog;
    if (!catalog_path.empty()) {
        auto catalog_text = read_file(catalog_path);
        if (!catalog_text) return fail_usage("cannot read " + catalog_path);
        try {
            catalog = sidestep::parse_catalog(*catalog_text);
        } catch (const sidestep::ParseError& e) {
            return fail_usage(catalog_path + ": " + e.what());
        }
    } else {
        catalog = sidestep::default_catalog();
    }

    sidestep::RegionSyscallMap map = sidestep::build_map(events, frame);
    if (!write_file(out_path, sidestep::render_report(map))) {
        return fail_usage("cannot write " + out_path);
    }
    std::vector<sidestep::SuspicionFlag> flags = sidestep::flag_suspicious(map, catalog);

    if (json_out) {
        nlohmann::ordered_json j;
        j["regions"] = map.regions.size();
        j["unattributed"] = map.unattributed.size();
        j["report"] = out_path;
        nlohmann::ordered_json fs = nlohmann::ordered_json::array();
        for (const auto& f : flags) {
            nlohmann::ordered_json entry;
            entry["seq"] = f.event_seq;
            entry["syscall"] = f.syscall;
            entry["principle"] = f.principle;
            entry["artifact"] = f.artifact;
            entry["note"] = f.note;
            fs.push_back(std::move(entry));
        }
        j["flags"] = std::move(fs);
        std::cout << j.dump(2) << "\n";
    } else {
        for (const auto& f : flags) {
            std::cout << "flag: " << f.principle << " [" << f.artifact << "] seq=" << f.event_seq
                      << " " << f.syscall << " (" << f.note << ")\n";
        }
        std::cerr << "regions=" << map.regions.size()
                  << " unattributed=" << map.unattributed.size() << " flags=" << flags.size()
                  << " report=" << out_path << "\n";
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"syscall-level evasion rule engine and trace analysis"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::simple);

    bool json_out = false;
    auto add_json_flag = [&json_out](CLI::App* cmd) {
        cmd->add_flag("--json", json_out, "structured output on stdout");
    };

    auto* validate = app.add_subcommand("validate", "parse and summarize a rule file");
    std::string validate_der;
    validate->add_option("rules", validate_der, "rule file")->required();
    add_json_flag(validate);

    auto* replay = app.add_subcommand("replay", "apply rules to a recorded trace");
    std::string replay_trace, replay_der, replay_log;
    replay->add_option("--trace", replay_trace, "trace file (jsonl)")->required();
    replay->add_option("--der", replay_der, "rule file")->required();
    replay->add_option("--log", replay_log, "write the action log here instead of stdout");
    add_json_flag(replay);

    auto* scenario = app.add_subcommand("scenario", "run or list detection scenarios");
    scenario->require_subcommand(1);
    auto* sc_run = scenario->add_subcommand("run", "run one scenario");
    std::string sc_name, sc_der, sc_trace_out;
    std::vector<std::string> sc_overrides;
    sc_run->add_option("name", sc_name, "scenario name")->required();
    sc_run->add_option("--der", sc_der, "rule file to counter the scenario");
    sc_run->add_option("--set", sc_overrides, "environment override key=value");
    sc_run->add_option("--trace-out", sc_trace_out, "write the scenario's event trace here");
    add_json_flag(sc_run);
    auto* sc_list = scenario->add_subcommand("list", "list scenarios");
    add_json_flag(sc_list);

    auto* map = app.add_subcommand("map", "build a region/syscall report from a trace");
    std::string map_trace, map_out, map_catalog;
    std::size_t map_frame = 0;
    map->add_option("--trace", map_trace, "trace file (jsonl)")->required();
    map->add_option("--out", map_out, "report output path")->required();
    map->add_option("--catalog", map_catalog, "suspicion catalog (tsv); default built in");
    map->add_option("--frame", map_frame, "stack frame used for attribution (default 0)");
    add_json_flag(map);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    if (validate->parsed()) return cmd_validate(validate_der, json_out);
    if (replay->parsed()) return cmd_replay(replay_trace, replay_der, replay_log, json_out);
    if (scenario->parsed()) {
        if (sc_list->parsed()) return cmd_scenario_list(json_out);
        if (sc_run->parsed()) {
            return cmd_scenario_run(sc_name, sc_der, sc_overrides, sc_trace_out, json_out);
        }
    }
    if (map->parsed()) return cmd_map(map_trace, map_out, map_catalog, map_frame, json_out);
    return fail_usage("no command");
}

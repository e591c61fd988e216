#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sidestep/common.hpp"
#include "sidestep/where_expr.hpp"

namespace sidestep {

// One entry of a condition's "args" map. The surface form of the JSON value
// decides the kind:
//   "argN"            placeholder, matches anything (index must equal the key)
//   "0x5" / "17"      raw value compared against the register
//   anything else     pathname prefix, checked against the dereferenced string
struct ArgSpec {
    enum class Kind { Wildcard, RawValue, PathPrefix };
    Kind kind = Kind::Wildcard;
    std::uint64_t raw = 0;
    bool hex = false;
    std::string prefix;

    bool operator==(const ArgSpec&) const = default;
};

struct DerCondition {
    std::string comm;
    std::string tname = "*";
    std::string syscall;
    std::map<int, ArgSpec> args;
    std::optional<std::vector<std::uint8_t>> data;
    WhereExpr data_where = WhereExpr::single_arg(0);
    Phase phase = Phase::Enter;
    // Surface-form bookkeeping so serialization can mirror the source; not
    // part of a condition's meaning.
    bool data_where_explicit = false;
    bool phase_explicit = false;

    bool operator==(const DerCondition& o) const {
        return comm == o.comm && tname == o.tname && syscall == o.syscall && args == o.args &&
               data == o.data && data_where == o.data_where && phase == o.phase;
    }
};

struct EvasionPayload {
    enum class Kind { Text, Bytes, Integer };
    Kind kind = Kind::Text;
    std::string text;
    std::vector<std::uint8_t> bytes;
    std::int64_t integer = 0;

    bool operator==(const EvasionPayload&) const = default;

    // The bytes actually placed in memory: text payloads carry their NUL
    // terminator so a rewritten pathname stays a valid C string.
    std::vector<std::uint8_t> memory_image() const {
        if (kind == Kind::Bytes) return bytes;
        std::vector<std::uint8_t> out(text.begin(), text.end());
        out.push_back(0);
        return out;
    }
};

struct WhereTarget {
    enum class Kind { Address, Retval };
    Kind kind = Kind::Address;
    WhereExpr address;

    bool operator==(const WhereTarget&) const = default;
};

struct DerEvasion {
    WhereTarget where;
    EvasionPayload data;
    bool revert_on_exit = false;

    bool operator==(const DerEvasion&) const = default;
};

struct DerRule {
    std::string id; // decimal position in the rule file
    DerCondition condition;
    DerEvasion evasion;

    bool operator==(const DerRule&) const = default;
};

namespace detail {

inline std::pair<int, int> line_col_of(std::string_view source, std::size_t offset) {
    int line = 1, col = 1;
    for (std::size_t i = 0; i < offset && i < source.size(); ++i) {
        if (source[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

} // namespace detail

// Replaces /* ... */ comments with spaces so byte offsets and line numbers
// keep pointing at the original text. Comment markers inside JSON strings
// are left alone.
inline std::string strip_der_comments(std::string source) {
    bool in_string = false;
    bool escaped = false;
    std::size_t i = 0;
    while (i < source.size()) {
        char c = source[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            ++i;
            continue;
        }
        if (c == '"') {
            in_string = true;
            ++i;
            continue;
        }
        if (c == '/' && i + 1 < source.size() && source[i + 1] == '*') {
            std::size_t start = i;
            std::size_t end = source.find("*/", i + 2);
            if (end == std::string::npos) {
                auto [line, col] = detail::line_col_of(source, start);
                throw ParseError("line " + std::to_string(line) + ", col " + std::to_string(col) +
                                 ": unterminated /* comment");
            }
            for (std::size_t j = start; j < end + 2; ++j) {
                if (source[j] != '\n') source[j] = ' ';
            }
            i = end + 2;
            continue;
        }
        ++i;
    }
    return source;
}

namespace detail {

using ojson = nlohmann::ordered_json;

inline void require_keys(const ojson& obj, const std::string& where,
                         std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                ok = true;
                break;
            }
        }
        if (!ok) throw ParseError(where + ": unknown key \"" + it.key() + "\"");
    }
}

inline std::string need_string(const ojson& obj, const std::string& where, const char* key,
                               bool required, const std::string& fallback = "") {
    auto it = obj.find(key);
    if (it == obj.end()) {
        if (required) throw ParseError(where + ": missing required key \"" + key + "\"");
        return fallback;
    }
    if (!it->is_string()) throw ParseError(where + "." + key + ": expected a string");
    return it->get<std::string>();
}

inline ArgSpec parse_arg_spec(const std::string& value, int index, const std::string& where) {
    if (value.empty()) throw ParseError(where + ": empty argument spec");
    ArgSpec spec;
    if (value.size() == 4 && value.compare(0, 3, "arg") == 0 && value[3] >= '0' && value[3] <= '9') {
        int placeholder = value[3] - '0';
        if (placeholder != index) {
            throw ParseError(where + ": placeholder \"" + value + "\" under key \"" +
                             std::to_string(index) + "\"");
        }
        spec.kind = ArgSpec::Kind::Wildcard;
        return spec;
    }
    if (auto lit = parse_u64_literal(value)) {
        spec.kind = ArgSpec::Kind::RawValue;
        spec.raw = lit->first;
        spec.hex = lit->second;
        return spec;
    }
    spec.kind = ArgSpec::Kind::PathPrefix;
    spec.prefix = value;
    return spec;
}

inline DerCondition parse_condition(const ojson& obj, const std::string& where) {
    if (!obj.is_object()) throw ParseError(where + ": expected an object");
    require_keys(obj, where,
                 {"comm", "tname", "syscall", "args", "data", "data_where", "phase"});
    DerCondition cond;
    cond.comm = need_string(obj, where, "comm", true);
    if (cond.comm.empty()) throw ParseError(where + ".comm: must not be empty");
    cond.tname = need_string(obj, where, "tname", false, "*");
    if (cond.tname.empty()) throw ParseError(where + ".tname: must not be empty");
    cond.syscall = need_string(obj, where, "syscall", true);
    if (cond.syscall.empty()) throw ParseError(where + ".syscall: must not be empty");

    if (auto it = obj.find("args"); it != obj.end()) {
        if (!it->is_object()) throw ParseError(where + ".args: expected an object");
        for (auto a = it->begin(); a != it->end(); ++a) {
            const std::string& key = a.key();
            bool digits = !key.empty();
            for (char c : key) digits = digits && c >= '0' && c <= '9';
            if (!digits) throw ParseError(where + ".args: bad key \"" + key + "\"");
            auto keynum = parse_u64_literal(key);
            if (!keynum || keynum->first > 5) {
                throw ParseError(where + ".args: key \"" + key + "\" out of range (0..5)");
            }
            int index = static_cast<int>(keynum->first);
            if (cond.args.count(index)) {
                throw ParseError(where + ".args: duplicate index " + std::to_string(index));
            }
            if (!a->is_string()) {
                throw ParseError(where + ".args." + key + ": expected a string");
            }
            cond.args[index] =
                parse_arg_spec(a->get<std::string>(), index, where + ".args." + key);
        }
    }

    if (auto it = obj.find("data"); it != obj.end()) {
        if (!it->is_string()) throw ParseError(where + ".data: expected a string");
        try {
            cond.data = decode_byte_string(it->get<std::string>());
        } catch (const ParseError& e) {
            throw ParseError(where + ".data: " + e.what());
        }
        if (cond.data->empty()) throw ParseError(where + ".data: must not be empty");
    }

    if (auto it = obj.find("data_where"); it != obj.end()) {
        if (!cond.data) {
            throw ParseError(where + ".data_where: present without \"data\"");
        }
        if (!it->is_string()) throw ParseError(where + ".data_where: expected a string");
        try {
            cond.data_where = parse_where_expr(it->get<std::string>());
        } catch (const ParseError& e) {
            throw ParseError(where + ".data_where: " + e.what());
        }
        cond.data_where_explicit = true;
    }

    if (auto it = obj.find("phase"); it != obj.end()) {
        if (!it->is_string()) throw ParseError(where + ".phase: expected a string");
        auto p = phase_from(it->get<std::string>());
        if (!p) {
            throw ParseError(where + ".phase: expected \"enter\" or \"exit\"");
        }
        cond.phase = *p;
        cond.phase_explicit = true;
    }
    return cond;
}

inline DerEvasion parse_evasion(const ojson& obj, const std::string& where, Phase phase) {
    if (!obj.is_object()) throw ParseError(where + ": expected an object");
    require_keys(obj, where, {"where", "data", "revert_on_exit"});
    DerEvasion ev;

    std::string target = need_string(obj, where, "where", true);
    if (target == "retval") {
        ev.where.kind = WhereTarget::Kind::Retval;
    } else {
        ev.where.kind = WhereTarget::Kind::Address;
        try {
            ev.where.address = parse_where_expr(target);
        } catch (const ParseError& e) {
            throw ParseError(where + ".where: " + e.what());
        }
    }

    auto it = obj.find("data");
    if (it == obj.end()) throw ParseError(where + ": missing required key \"data\"");
    if (it->is_number_integer()) {
        ev.data.kind = EvasionPayload::Kind::Integer;
        ev.data.integer = it->get<std::int64_t>();
    } else if (it->is_string()) {
        std::string literal = it->get<std::string>();
        if (has_byte_escape(literal)) {
            ev.data.kind = EvasionPayload::Kind::Bytes;
            try {
                ev.data.bytes = decode_byte_string(literal);
            } catch (const ParseError& e) {
                throw ParseError(where + ".data: " + e.what());
            }
            if (ev.data.bytes.empty()) throw ParseError(where + ".data: must not be empty");
        } else {
            ev.data.kind = EvasionPayload::Kind::Text;
            ev.data.text = literal;
        }
    } else {
        throw ParseError(where + ".data: expected a string or an integer");
    }

    if (auto r = obj.find("revert_on_exit"); r != obj.end()) {
        if (!r->is_boolean()) throw ParseError(where + ".revert_on_exit: expected a boolean");
        ev.revert_on_exit = r->get<bool>();
    }

    if (ev.where.kind == WhereTarget::Kind::Retval) {
        if (phase != Phase::Exit) {
            throw ParseError(where + ".where: \"retval\" requires condition.phase \"exit\"");
        }
        if (ev.data.kind != EvasionPayload::Kind::Integer) {
            throw ParseError(where + ".data: \"retval\" target requires an integer payload");
        }
        if (ev.revert_on_exit) {
            throw ParseError(where + ".revert_on_exit: meaningless for a \"retval\" target");
        }
    } else if (ev.data.kind == EvasionPayload::Kind::Integer) {
        throw ParseError(where + ".data: integer payload requires the \"retval\" target");
    }
    return ev;
}

inline DerRule parse_rule(const ojson& obj, std::size_t index) {
    std::string where = "rule " + std::to_string(index);
    if (!obj.is_object()) throw ParseError(where + ": expected an object");
    require_keys(obj, where, {"condition", "evasion"});
    auto c = obj.find("condition");
    if (c == obj.end()) throw ParseError(where + ": missing required key \"condition\"");
    auto e = obj.find("evasion");
    if (e == obj.end()) throw ParseError(where + ": missing required key \"evasion\"");

    DerRule rule;
    rule.id = std::to_string(index);
    rule.condition = parse_condition(*c, where + ": condition");
    rule.evasion = parse_evasion(*e, where + ": evasion", rule.condition.phase);
    return rule;
}

} // namespace detail

// Rule files hold either a JSON array of rule objects or a bare sequence of
// concatenated rule objects. /* ... */ comments are allowed anywhere outside
// strings. Rules get decimal ids in file order.
inline std::vector<DerRule> parse_der_file(std::string_view source) {
    std::string stripped = strip_der_comments(std::string(source));

    std::size_t first = stripped.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) throw ParseError("rule file holds no JSON value");

    std::vector<detail::ojson> objects;
    if (stripped[first] == '[') {
        detail::ojson doc;
        try {
            doc = detail::ojson::parse(stripped);
        } catch (const nlohmann::json::parse_error& e) {
            auto [line, col] = detail::line_col_of(stripped, e.byte ? e.byte - 1 : 0);
            throw ParseError("line " + std::to_string(line) + ", col " + std::to_string(col) +
                             ": " + e.what());
        }
        for (auto& item : doc) objects.push_back(std::move(item));
    } else {
        std::istringstream in(stripped);
        std::size_t consumed = 0;
        while (true) {
            detail::ojson doc;
            try {
                in >> doc;
            } catch (const nlohmann::json::parse_error& e) {
                std::size_t offset = consumed + (e.byte ? e.byte - 1 : 0);
                auto [line, col] = detail::line_col_of(stripped, offset);
                throw ParseError("line " + std::to_string(line) + ", col " + std::to_string(col) +
                                 ": " + e.what());
            }
            objects.push_back(std::move(doc));
            consumed = static_cast<std::size_t>(in.tellg());
            while (in.peek() != std::char_traits<char>::eof() &&
                   std::isspace(in.peek())) {
                in.get();
                ++consumed;
            }
            if (in.peek() == std::char_traits<char>::eof()) break;
        }
    }

    std::vector<DerRule> rules;
    rules.reserve(objects.size());
    for (std::size_t i = 0; i < objects.size(); ++i) {
        rules.push_back(detail::parse_rule(objects[i], i));
    }
    return rules;
}

// Always emits a JSON array, even for a single rule. Optional fields that
// were absent in the source stay absent so a parse/serialize round trip of a
// comment-free file is JSON-equal to its input.
inline std::string serialize_der(const std::vector<DerRule>& rules) {
    detail::ojson doc = detail::ojson::array();
    for (const DerRule& rule : rules) {
        detail::ojson cond;
        cond["comm"] = rule.condition.comm;
        cond["tname"] = rule.condition.tname;
        cond["syscall"] = rule.condition.syscall;
        detail::ojson args = detail::ojson::object();
        for (const auto& [index, spec] : rule.condition.args) {
            std::string key = std::to_string(index);
            switch (spec.kind) {
            case ArgSpec::Kind::Wildcard:
                args[key] = "arg" + key;
                break;
            case ArgSpec::Kind::RawValue:
                args[key] = spec.hex ? to_hex(spec.raw) : std::to_string(spec.raw);
                break;
            case ArgSpec::Kind::PathPrefix:
                args[key] = spec.prefix;
                break;
            }
        }
        if (!args.empty()) cond["args"] = std::move(args);
        if (rule.condition.data) {
            cond["data"] = encode_byte_string(*rule.condition.data);
        }
        bool default_data_where = rule.condition.data_where == WhereExpr::single_arg(0);
        if (rule.condition.data_where_explicit ||
            (rule.condition.data && !default_data_where)) {
            cond["data_where"] = rule.condition.data_where.to_string();
        }
        if (rule.condition.phase_explicit || rule.condition.phase != Phase::Enter) {
            cond["phase"] = phase_name(rule.condition.phase);
        }

        detail::ojson ev;
        ev["where"] = rule.evasion.where.kind == WhereTarget::Kind::Retval
                          ? std::string("retval")
                          : rule.evasion.where.address.to_string();
        switch (rule.evasion.data.kind) {
        case EvasionPayload::Kind::Text:
            ev["data"] = rule.evasion.data.text;
            break;
        case EvasionPayload::Kind::Bytes:
            ev["data"] = encode_byte_string(rule.evasion.data.bytes);
            break;
        case EvasionPayload::Kind::Integer:
            ev["data"] = rule.evasion.data.integer;
            break;
        }
        if (rule.evasion.revert_on_exit) ev["revert_on_exit"] = true;

        detail::ojson obj;
        obj["condition"] = std::move(cond);
        obj["evasion"] = std::move(ev);
        doc.push_back(std::move(obj));
    }
    return doc.dump(2) + "\n";
}

} // namespace sidestep

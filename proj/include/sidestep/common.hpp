#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sidestep {

// Raised on any malformed input: rule files, trace files, expressions,
// byte-string literals. The message carries position/field context.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Phase { Enter, Exit };

inline const char* phase_name(Phase p) {
    return p == Phase::Enter ? "enter" : "exit";
}

inline std::optional<Phase> phase_from(std::string_view s) {
    if (s == "enter") return Phase::Enter;
    if (s == "exit") return Phase::Exit;
    return std::nullopt;
}

// Lowercase 0x-prefixed hex, no padding. This is the canonical form used in
// trace files, reports and dumps.
inline std::string to_hex(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "0x%llx", static_cast<unsigned long long>(v));
    return buf;
}

// Strict "0x..." parse used by the trace reader.
inline std::optional<std::uint64_t> parse_hex_u64(std::string_view s) {
    if (s.size() < 3 || s.size() > 18 || s[0] != '0' || s[1] != 'x') return std::nullopt;
    std::uint64_t v = 0;
    for (char c : s.substr(2)) {
        int d;
        if (c >= '0' && c <= '9') d = c - '0';
        else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
        else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
        else return std::nullopt;
        v = (v << 4) | static_cast<std::uint64_t>(d);
    }
    return v;
}

// Hex-or-decimal literal as allowed in where expressions and raw arg specs.
// Returns the value and whether it was written in hex.
inline std::optional<std::pair<std::uint64_t, bool>> parse_u64_literal(std::string_view s) {
    if (s.empty()) return std::nullopt;
    if (s.size() >= 2 && s[0] == '0' && s[1] == 'x') {
        auto v = parse_hex_u64(s);
        if (!v) return std::nullopt;
        return std::make_pair(*v, true);
    }
    std::uint64_t v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') return std::nullopt;
        std::uint64_t d = static_cast<std::uint64_t>(c - '0');
        if (v > (UINT64_MAX - d) / 10) return std::nullopt;
        v = v * 10 + d;
    }
    return std::make_pair(v, false);
}

inline bool has_byte_escape(std::string_view s) {
    return s.find("\\x") != std::string_view::npos;
}

// Decodes a payload/pattern literal. Two forms are accepted:
//   - escape-free text: the UTF-8 bytes of the string, verbatim;
//   - all-escapes: a sequence of \xHH units, one byte each.
// Mixing the two forms would make the byte length ambiguous, so it is an error.
inline std::vector<std::uint8_t> decode_byte_string(std::string_view literal) {
    std::vector<std::uint8_t> out;
    if (!has_byte_escape(literal)) {
        out.assign(literal.begin(), literal.end());
        return out;
    }
    auto hex_digit = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    std::size_t i = 0;
    while (i < literal.size()) {
        if (literal[i] != '\\' || i + 1 >= literal.size() || literal[i + 1] != 'x') {
            throw ParseError("byte string mixes \\xHH escapes with literal characters at offset " +
                             std::to_string(i));
        }
        if (i + 3 >= literal.size()) {
            throw ParseError("truncated \\x escape at offset " + std::to_string(i));
        }
        int hi = hex_digit(literal[i + 2]);
        int lo = hex_digit(literal[i + 3]);
        if (hi < 0 || lo < 0) {
            throw ParseError("malformed \\x escape at offset " + std::to_string(i));
        }
        out.push_back(static_cast<std::uint8_t>(hi * 16 + lo));
        i += 4;
    }
    return out;
}

// Inverse of decode_byte_string for the escaped form; always emits \xHH units.
inline std::string encode_byte_string(std::span<const std::uint8_t> bytes) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 4);
    for (std::uint8_t b : bytes) {
        out += "\\x";
        out += digits[b >> 4];
        out += digits[b & 0xf];
    }
    return out;
}

} // namespace sidestep

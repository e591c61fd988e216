#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sidestep/common.hpp"

namespace sidestep {

// Address arithmetic over syscall arguments, e.g. "args0 + 0x6aae4" or
// "args1 - 16 + args2". Evaluation folds terms left to right with wrapping
// 64-bit arithmetic; there is no precedence because there is no multiplication.
struct WhereExpr {
    struct Term {
        enum class Kind { Arg, Literal };
        Kind kind = Kind::Literal;
        int arg_index = 0;          // Kind::Arg
        std::uint64_t value = 0;    // Kind::Literal
        bool hex = false;           // literal was written as 0x...
        bool subtract = false;      // preceded by '-'

        bool operator==(const Term&) const = default;
    };

    std::vector<Term> terms;

    bool operator==(const WhereExpr&) const = default;

    static WhereExpr single_arg(int index) {
        WhereExpr e;
        e.terms.push_back(Term{Term::Kind::Arg, index, 0, false, false});
        return e;
    }

    // True when the expression is exactly one bare argsN term. The engine
    // uses this to classify a write as an argument-buffer rewrite rather
    // than a general memory patch.
    bool is_single_arg() const {
        return terms.size() == 1 && terms[0].kind == Term::Kind::Arg && !terms[0].subtract;
    }

    std::uint64_t eval(const std::array<std::uint64_t, 6>& args) const {
        std::uint64_t acc = 0;
        for (const Term& t : terms) {
            std::uint64_t v = t.kind == Term::Kind::Arg
                                  ? args[static_cast<std::size_t>(t.arg_index)]
                                  : t.value;
            acc = t.subtract ? acc - v : acc + v;
        }
        return acc;
    }

    // Canonical text: single spaces around +/-, literals keep the base they
    // were written in, hex lowercase.
    std::string to_string() const {
        std::string out;
        for (std::size_t i = 0; i < terms.size(); ++i) {
            const Term& t = terms[i];
            if (i == 0) {
                if (t.subtract) out += "-";
            } else {
                out += t.subtract ? " - " : " + ";
            }
            if (t.kind == Term::Kind::Arg) {
                out += "args" + std::to_string(t.arg_index);
            } else if (t.hex) {
                out += to_hex(t.value);
            } else {
                out += std::to_string(t.value);
            }
        }
        return out;
    }
};

// Accepts arbitrary whitespace between tokens. A leading '-' negates the
// first term; empty input and dangling operators are errors.
inline WhereExpr parse_where_expr(std::string_view text) {
    WhereExpr expr;
    std::size_t i = 0;
    auto skip_ws = [&] {
        while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
    };
    auto fail = [&](const std::string& what) -> ParseError {
        return ParseError("where expression \"" + std::string(text) + "\": " + what);
    };

    bool expect_term = true;
    bool subtract = false;
    skip_ws();
    if (i >= text.size()) throw fail("empty");
    while (i < text.size()) {
        if (expect_term) {
            if (text[i] == '-' && expr.terms.empty()) {
                subtract = true;
                ++i;
                skip_ws();
                continue;
            }
            std::size_t start = i;
            while (i < text.size() && text[i] != ' ' && text[i] != '\t' &&
                   !(i > start && (text[i] == '+' || text[i] == '-'))) {
                ++i;
            }
            std::string_view tok = text.substr(start, i - start);
            if (tok.empty()) throw fail("expected a term");
            WhereExpr::Term term;
            term.subtract = subtract;
            if (tok.size() > 4 && tok.substr(0, 4) == "args") {
                std::string_view idx = tok.substr(4);
                if (idx.size() != 1 || idx[0] < '0' || idx[0] > '5') {
                    throw fail("bad argument reference \"" + std::string(tok) + "\"");
                }
                term.kind = WhereExpr::Term::Kind::Arg;
                term.arg_index = idx[0] - '0';
            } else {
                auto lit = parse_u64_literal(tok);
                if (!lit) throw fail("bad term \"" + std::string(tok) + "\"");
                term.kind = WhereExpr::Term::Kind::Literal;
                term.value = lit->first;
                term.hex = lit->second;
            }
            expr.terms.push_back(term);
            subtract = false;
            expect_term = false;
        } else {
            if (text[i] == '+') {
                subtract = false;
            } else if (text[i] == '-') {
                subtract = true;
            } else {
                throw fail(std::string("expected + or - before \"") + text[i] + "\"");
            }
            ++i;
            expect_term = true;
        }
        skip_ws();
    }
    if (expect_term) throw fail("dangling operator");
    return expr;
}

} // namespace sidestep

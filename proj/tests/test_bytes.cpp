#include <catch2/catch_amalgamated.hpp>

#include <random>

#include <sidestep/common.hpp>

using namespace sidestep;

TEST_CASE("escape-free literals decode to their raw bytes") {
    CHECK(decode_byte_string("frida") == std::vector<std::uint8_t>{'f', 'r', 'i', 'd', 'a'});
    CHECK(decode_byte_string("").empty());
    CHECK(decode_byte_string("/proc/self/maps").size() == 15);
    // backslashes that do not form \x stay literal bytes
    CHECK(decode_byte_string("a\\nb") == std::vector<std::uint8_t>{'a', '\\', 'n', 'b'});
}

TEST_CASE("all-escape literals decode one byte per \\xHH unit") {
    auto bytes = decode_byte_string("\\x28\\x10\\x80\\xd2\\x01\\x00\\x00\\xd4");
    CHECK(bytes == std::vector<std::uint8_t>{0x28, 0x10, 0x80, 0xd2, 0x01, 0x00, 0x00, 0xd4});
    CHECK(decode_byte_string("\\x00") == std::vector<std::uint8_t>{0});
    CHECK(decode_byte_string("\\xFF\\xff") == std::vector<std::uint8_t>{0xff, 0xff});
}

TEST_CASE("mixed or malformed escape forms are rejected") {
    CHECK_THROWS_AS(decode_byte_string("\\x41B"), ParseError);
    CHECK_THROWS_AS(decode_byte_string("A\\x41"), ParseError);
    CHECK_THROWS_AS(decode_byte_string("\\x4"), ParseError);
    CHECK_THROWS_AS(decode_byte_string("\\x4g"), ParseError);
    CHECK_THROWS_AS(decode_byte_string("\\x"), ParseError);
    CHECK_THROWS_MATCHES(decode_byte_string("\\x41\\x4"), ParseError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("offset 4")));
}

TEST_CASE("encode always emits lowercase \\xHH and round-trips") {
    CHECK(encode_byte_string(std::vector<std::uint8_t>{0xde, 0xad, 0x00}) == "\\xde\\xad\\x00");
    CHECK(encode_byte_string({}).empty());

    std::mt19937_64 rng(0x5eed0001);
    std::uniform_int_distribution<int> byte(0, 255);
    std::uniform_int_distribution<int> len(0, 64);
    for (int round = 0; round < 200; ++round) {
        std::vector<std::uint8_t> bytes;
        int n = len(rng);
        for (int i = 0; i < n; ++i) bytes.push_back(static_cast<std::uint8_t>(byte(rng)));
        if (bytes.empty()) continue;
        CHECK(decode_byte_string(encode_byte_string(bytes)) == bytes);
    }
}

TEST_CASE("hex formatting is lowercase 0x with no padding") {
    CHECK(to_hex(0) == "0x0");
    CHECK(to_hex(0x7a41c45000ULL) == "0x7a41c45000");
    CHECK(to_hex(UINT64_MAX) == "0xffffffffffffffff");
}

TEST_CASE("strict hex parse accepts only 0x-prefixed digits") {
    CHECK(parse_hex_u64("0x7a41c45000") == 0x7a41c45000ULL);
    CHECK(parse_hex_u64("0xDEad") == 0xdeadULL);
    CHECK(parse_hex_u64("0x0") == 0ULL);
    CHECK(parse_hex_u64("0xffffffffffffffff") == UINT64_MAX);
    CHECK_FALSE(parse_hex_u64("7a"));
    CHECK_FALSE(parse_hex_u64("0x"));
    CHECK_FALSE(parse_hex_u64("0xg1"));
    CHECK_FALSE(parse_hex_u64(""));
    CHECK_FALSE(parse_hex_u64("0x10000000000000000")); // 17 digits
}

TEST_CASE("numeric literals accept hex or decimal and flag the base") {
    auto hex = parse_u64_literal("0xde5c0");
    REQUIRE(hex);
    CHECK(hex->first == 0xde5c0ULL);
    CHECK(hex->second);

    auto dec = parse_u64_literal("17");
    REQUIRE(dec);
    CHECK(dec->first == 17ULL);
    CHECK_FALSE(dec->second);

    CHECK(parse_u64_literal("18446744073709551615")->first == UINT64_MAX);
    CHECK_FALSE(parse_u64_literal("18446744073709551616")); // overflow
    CHECK_FALSE(parse_u64_literal("de5c0"));
    CHECK_FALSE(parse_u64_literal(""));
    CHECK_FALSE(parse_u64_literal("1 2"));
}

TEST_CASE("phase names map both directions") {
    CHECK(std::string(phase_name(Phase::Enter)) == "enter");
    CHECK(std::string(phase_name(Phase::Exit)) == "exit");
    CHECK(phase_from("enter") == Phase::Enter);
    CHECK(phase_from("exit") == Phase::Exit);
    CHECK_FALSE(phase_from("Enter"));
    CHECK_FALSE(phase_from(""));
}

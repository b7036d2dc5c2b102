#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include "mdiff/rng.hpp"
#include "mdiff/vocab.hpp"

using namespace mdiff;

TEST_CASE("build_vocab appends specials after the characters") {
    Vocab v = build_vocab("ab");
    CHECK(v.size() == 4);
    CHECK(v.mask_id == 2);
    CHECK(v.pad_id == 3);

    std::string printable;
    for (int c = 33; c < 127; ++c) printable += char(c);  // 94 symbols
    CHECK(build_vocab(printable).size() == 96);
}

TEST_CASE("build_vocab rejects bad charsets") {
    CHECK_THROWS_WITH_AS(build_vocab(""), "charset must not be empty", std::invalid_argument);
    CHECK_THROWS_WITH_AS(build_vocab("aba"), "duplicate symbol in charset: 'a'",
                         std::invalid_argument);
}

TEST_CASE("encode pads the suffix") {
    Vocab v = build_vocab("abcdefghijklmnopqrstuvwxyz");
    TokenSeq s = encode("cat", 6, v);
    CHECK(s == TokenSeq{2, 0, 19, v.pad_id, v.pad_id, v.pad_id});
    CHECK(encode("", 3, v) == TokenSeq{v.pad_id, v.pad_id, v.pad_id});
    CHECK_THROWS_AS(encode("abcd", 3, v), std::invalid_argument);
    CHECK_THROWS_WITH_AS(encode("x@z", 5, v), "unknown symbol: '@'", std::invalid_argument);
}

TEST_CASE("decode truncates at pad and renders masks") {
    Vocab v = build_vocab("abcdefghijklmnopqrstuvwxyz");
    CHECK(decode(encode("cat", 6, v), v) == "cat");
    CHECK(decode(TokenSeq{v.pad_id, v.pad_id}, v) == "");
    CHECK(decode(TokenSeq{2, v.mask_id, 19}, v) == "c␣Mt");
    // non-canonical model output: truncation wins even with tokens after pad
    CHECK(decode(TokenSeq{2, v.pad_id, 19}, v) == "c");
}

TEST_CASE("encode/decode round trip on random words") {
    Vocab v = build_vocab("abcdefghijklmnopqrstuvwxyz");
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const int len = rng.uniform_int(0, 12);
        std::string word;
        for (int i = 0; i < len; ++i) word += v.characters[size_t(rng.uniform_int(0, 25))];
        CHECK(decode(encode(word, 12, v), v) == word);
    }
}

#pragma once

#include <string>
#include <vector>

namespace mdiff {

// Token ids over a sequence of fixed length; suffix positions beyond the
// text carry pad_id.
using TokenSeq = std::vector<int>;

// Character symbols plus two appended specials ([MASK], [PAD]).
struct Vocab {
    std::string characters;  // id of characters[i] is i
    int mask_id = -1;
    int pad_id = -1;

    int size() const { return int(characters.size()) + 2; }
    bool is_char(int id) const { return id >= 0 && id < int(characters.size()); }
};

// Throws std::invalid_argument on an empty charset or a duplicate symbol
// (the message names the offender).
Vocab build_vocab(const std::string& charset);

// Fixed-length encoding: character ids followed by pad_id up to max_len.
TokenSeq encode(const std::string& text, int max_len, const Vocab& vocab);

// Characters up to the first pad_id; mask_id renders as "␣M".
std::string decode(const TokenSeq& seq, const Vocab& vocab);

}  // namespace mdiff

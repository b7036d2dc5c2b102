#include "mdiff/vocab.hpp"

#include <stdexcept>
#include <unordered_set>

namespace mdiff {

Vocab build_vocab(const std::string& charset) {
    if (charset.empty()) {
        throw std::invalid_argument("charset must not be empty");
    }
    std::unordered_set<char> seen;
    for (char c : charset) {
        if (!seen.insert(c).second) {
            throw std::invalid_argument(std::string("duplicate symbol in charset: '") + c + "'");
        }
    }
    Vocab v;
    v.characters = charset;
    v.mask_id = int(charset.size());
    v.pad_id = int(charset.size()) + 1;
    return v;
}

TokenSeq encode(const std::string& text, int max_len, const Vocab& vocab) {
    if (int(text.size()) > max_len) {
        throw std::invalid_argument("text too long: \"" + text + "\" exceeds max length " +
                                    std::to_string(max_len));
    }
    TokenSeq ids(max_len, vocab.pad_id);
    for (size_t i = 0; i < text.size(); ++i) {
        size_t pos = vocab.characters.find(text[i]);
        if (pos == std::string::npos) {
            throw std::invalid_argument(std::string("unknown symbol: '") + text[i] + "'");
        }
        ids[i] = int(pos);
    }
    return ids;
}

std::string decode(const TokenSeq& seq, const Vocab& vocab) {
    std::string out;
    for (int id : seq) {
        if (id == vocab.pad_id) break;
        if (id == vocab.mask_id) {
            out += "␣M";
        } else if (vocab.is_char(id)) {
            out += vocab.characters[size_t(id)];
        } else {
            out += '?';
        }
    }
    return out;
}

}  // namespace mdiff

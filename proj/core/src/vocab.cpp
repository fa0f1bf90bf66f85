#include "abclab/vocab.hpp"

#include <stdexcept>

#include "abclab/errors.hpp"

namespace abclab {

Vocab::Vocab(int base) : base_(base) {
    if (base < 2 || base > 10) {
        throw std::invalid_argument("vocab base must be in [2,10]");
    }
}

char Vocab::token_char(int token) {
    if (is_digit(token)) return static_cast<char>('0' + token);
    switch (token) {
        case kPlus: return '+';
        case kTimes: return '*';
        case kSos: return '$';
        case kEos: return '&';
        case kPad: return '@';
        default: throw std::invalid_argument("unknown token id " + std::to_string(token));
    }
}

int Vocab::char_token(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    switch (c) {
        case '+': return kPlus;
        case '*': return kTimes;
        case '$': return kSos;
        case '&': return kEos;
        case '@': return kPad;
        default: throw std::invalid_argument(std::string("unknown vocab character '") + c + "'");
    }
}

std::string Vocab::to_string(const std::vector<int>& tokens) const {
    std::string out;
    out.reserve(tokens.size());
    for (int t : tokens) out.push_back(token_char(t));
    return out;
}

std::vector<int> Vocab::to_tokens(const std::string& text) const {
    std::vector<int> out;
    out.reserve(text.size());
    for (char c : text) out.push_back(char_token(c));
    return out;
}

}  // namespace abclab

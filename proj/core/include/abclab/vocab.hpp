#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace abclab {

// Character-level vocabulary: digits 0-9 (token id == digit value), the two
// operators, and SOS/EOS/PAD rendered as '$', '&', '@'.
class Vocab {
public:
    static constexpr int kSize = 15;
    static constexpr int kPlus = 10;
    static constexpr int kTimes = 11;
    static constexpr int kSos = 12;
    static constexpr int kEos = 13;
    static constexpr int kPad = 14;

    explicit Vocab(int base = 10);

    int base() const { return base_; }

    static bool is_digit(int token) { return token >= 0 && token <= 9; }

    static char token_char(int token);
    static int char_token(char c);

    std::string to_string(const std::vector<int>& tokens) const;
    std::vector<int> to_tokens(const std::string& text) const;

private:
    int base_;
};

}  // namespace abclab

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace phonodist::utf8 {

// Decodes UTF-8 into codepoints. Throws std::invalid_argument on malformed
// input (truncated sequence, overlong encoding, surrogate, out of range).
std::vector<char32_t> decode(std::string_view s);

std::string encode(const std::vector<char32_t>& cps);
void append(std::string& out, char32_t cp);
std::string encode_one(char32_t cp);

}  // namespace phonodist::utf8

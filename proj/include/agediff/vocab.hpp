#pragma once

#include <string>
#include <vector>

#include "agediff/error.hpp"

namespace agediff {

// Token layout: 0 PAD, 1 BOS, 2..21 description words, 22 "years", 23 "old",
// 24..108 the age words "1".."85".
inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kYearsToken = 22;
inline constexpr int kOldToken = 23;
inline constexpr int kAgeTokenBase = 24;
inline constexpr int kMinAge = 1;
inline constexpr int kMaxAge = 85;
inline constexpr int kVocabSize = kAgeTokenBase + kMaxAge;
inline constexpr int kCaptionLen = 8;

const std::vector<std::string>& vocabulary();
int token_id(const std::string& word);

// Fixed-length caption: BOS, then word ids, padded. Throws if a word is
// unknown or the caption does not fit.
std::vector<int> encode_caption(const std::vector<std::string>& words);

// "<age> years old" as three token ids.
std::vector<int> age_phrase_tokens(int age);

}  // namespace agediff

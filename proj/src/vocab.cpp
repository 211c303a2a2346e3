#include "agediff/vocab.hpp"

#include <unordered_map>

namespace agediff {

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> v = {
        "<pad>", "<bos>",
        "round", "oval", "narrow", "wide", "face",
        "pale", "fair", "tan", "deep", "skin",
        "plain", "mottled", "background",
        "gray", "dark", "light", "silver", "hair",
        "glasses", "earrings",
        "years", "old",
    };
    for (int a = kMinAge; a <= kMaxAge; ++a) v.push_back(std::to_string(a));
    return v;
  }();
  return words;
}

int token_id(const std::string& word) {
  static const std::unordered_map<std::string, int> index = [] {
    std::unordered_map<std::string, int> m;
    const auto& words = vocabulary();
    for (size_t i = 0; i < words.size(); ++i) m[words[i]] = static_cast<int>(i);
    return m;
  }();
  auto it = index.find(word);
  if (it == index.end()) throw ValueError("vocab: unknown word '" + word + "'");
  return it->second;
}

std::vector<int> encode_caption(const std::vector<std::string>& words) {
  if (static_cast<int>(words.size()) > kCaptionLen - 1)
    throw ValueError("vocab: caption of " + std::to_string(words.size()) +
                     " words exceeds " + std::to_string(kCaptionLen - 1));
  std::vector<int> ids(kCaptionLen, kPadToken);
  ids[0] = kBosToken;
  for (size_t i = 0; i < words.size(); ++i) ids[i + 1] = token_id(words[i]);
  return ids;
}

std::vector<int> age_phrase_tokens(int age) {
  if (age < kMinAge || age > kMaxAge)
    throw ValueError("vocab: age " + std::to_string(age) + " outside [" +
                     std::to_string(kMinAge) + ", " + std::to_string(kMaxAge) + "]");
  return {kAgeTokenBase + (age - kMinAge), kYearsToken, kOldToken};
}

}  // namespace agediff

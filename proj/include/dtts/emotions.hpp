#pragma once

#include <array>
#include <stdexcept>
#include <string>

namespace dtts {

// Fixed ordered set of the seven basic emotion classes. The index is the
// canonical identity used across corpora, banks, and distributions.
inline constexpr int kNumEmotions = 7;
inline constexpr std::array<const char*, kNumEmotions> kEmotionNames = {
    "Anger", "Happiness", "Fear", "Disgust", "Sadness", "Surprise", "Neutral"};

inline const char* emotion_name(int index) {
  if (index < 0 || index >= kNumEmotions) throw std::out_of_range("emotion index out of range");
  return kEmotionNames[size_t(index)];
}

inline int emotion_index(const std::string& name) {
  for (int i = 0; i < kNumEmotions; ++i)
    if (name == kEmotionNames[size_t(i)]) return i;
  throw std::runtime_error("unknown emotion label: '" + name + "'");
}

}  // namespace dtts

#pragma once

// Univariate series plus the sampling-frequency registry.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fincast {

// Registry of supported sampling resolutions. The embedding table is sized
// f_max >= kFreqCount so unseen indices can be configured in.
inline constexpr int kFreqCount = 6;

inline int freq_index_from_name(const std::string& name) {
  static const char* names[kFreqCount] = {"second", "minute", "hourly", "daily", "weekly", "monthly"};
  for (int i = 0; i < kFreqCount; ++i)
    if (name == names[i]) return i;
  throw std::invalid_argument("unknown frequency '" + name +
                              "' (expected second|minute|hourly|daily|weekly|monthly)");
}

inline std::string freq_name(int index) {
  static const char* names[kFreqCount] = {"second", "minute", "hourly", "daily", "weekly", "monthly"};
  if (index >= 0 && index < kFreqCount) return names[index];
  return "freq" + std::to_string(index);
}

struct Series {
  std::string name;
  std::vector<double> values;
  std::vector<int64_t> timestamps;  // optional; strictly increasing when present
  int freq_index = 3;               // daily

  size_t length() const { return values.size(); }

  void validate() const {
    if (values.empty()) throw std::invalid_argument("series '" + name + "': empty");
    if (freq_index < 0) throw std::invalid_argument("series '" + name + "': negative freq_index");
    for (double v : values)
      if (!std::isfinite(v)) throw std::invalid_argument("series '" + name + "': non-finite value");
    if (!timestamps.empty()) {
      if (timestamps.size() != values.size())
        throw std::invalid_argument("series '" + name + "': timestamp/value length mismatch");
      for (size_t i = 1; i < timestamps.size(); ++i)
        if (timestamps[i] <= timestamps[i - 1])
          throw std::invalid_argument("series '" + name + "': timestamps not strictly increasing at row " +
                                      std::to_string(i));
    }
  }
};

}  // namespace fincast

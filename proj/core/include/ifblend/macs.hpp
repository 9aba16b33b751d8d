#pragma once

#include <cstdint>

namespace ifblend {

/// Multiply-accumulates of a 2-D convolution producing an out_h x out_w map.
constexpr std::int64_t conv_macs(std::int64_t in_channels, std::int64_t out_channels,
                                 std::int64_t kernel, std::int64_t out_h, std::int64_t out_w,
                                 std::int64_t groups = 1) {
  return (in_channels / groups) * out_channels * kernel * kernel * out_h * out_w;
}

/// Scoped tally of MACs executed by forward passes on the current thread.
///
/// Blocks report their work through MacCounter::add(); the tally is only
/// recorded while a counter is alive. Counts are per sample (batch size 1
/// equivalent) so they compare directly with count_macs().
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  [[nodiscard]] std::int64_t total() const { return total_; }

  static void add(std::int64_t macs);

 private:
  std::int64_t total_ = 0;
  MacCounter* previous_;
};

}  // namespace ifblend

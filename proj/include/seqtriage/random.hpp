#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace seqtriage {

// Philox4x32-10 block function (Salmon et al., Random123): a keyed bijection
// of a 128-bit counter. Independent streams come from distinct keys or
// counter ranges, with no state to share between threads.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

// splitmix64 finaliser: a bijection that scatters nearby inputs.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Uniform random bit generator over one Philox substream. The 64-bit key
// selects the replication, the 64-bit stream id selects a substream within
// it (e.g. one patient at one stage), and draws walk the remaining counter
// words.
class CounterRng {
 public:
  using result_type = std::uint32_t;

  CounterRng(std::uint64_t key, std::uint64_t stream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  // Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform();

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
};

}  // namespace seqtriage

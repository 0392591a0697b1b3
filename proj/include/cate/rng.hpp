#pragma once

#include <array>
#include <cstdint>

namespace cate {

//! Philox4x32-10 counter-based generator (Salmon et al., Random123). The
//! 64-bit seed is the key; the counter holds a 64-bit stream id and a
//! 64-bit block index, so independent streams need no shared state.
class Philox {
 public:
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Block bijection(Block counter, Key key);

  Philox(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  //! Uniform on the open interval (0, 1) with 53 random bits.
  double uniform();
  //! Standard normal by the Box-Muller transform.
  double normal();
  //! Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  void refill();

  Key key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Block buf_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cate

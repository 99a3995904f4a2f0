#pragma once

// Counter-based random numbers (Philox4x32-10). Every draw is a pure function
// of (seed, stream id, position), so sub-streams keyed by (purpose, shape,
// sweep) give the same numbers regardless of thread scheduling.

#include <array>
#include <cstdint>

namespace bridgemark {

using Philox4x32Counter = std::array<std::uint32_t, 4>;
using Philox4x32Key = std::array<std::uint32_t, 2>;

/// One Philox4x32 block with 10 rounds.
Philox4x32Counter philox4x32(Philox4x32Counter ctr, Philox4x32Key key);

enum class StreamPurpose : std::uint32_t {
  InitialWiener = 1,
  BridgeUpdate = 2,
  MomentumUpdate = 3,
  ThetaUpdate = 4,
  TemplateUpdate = 5,
  ForwardSimulation = 6,
  ObservationNoise = 7,
  Test = 99,
};

std::uint64_t stream_id(StreamPurpose purpose, std::uint64_t shape, std::uint64_t sweep);

class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream);
  RandomStream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t shape, std::uint64_t sweep)
      : RandomStream(seed, stream_id(purpose, shape, sweep)) {}

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Standard normal via Box-Muller.
  double normal();

 private:
  void refill();

  Philox4x32Key key_{};
  std::uint64_t stream_ = 0;
  std::uint64_t block_ = 0;
  Philox4x32Counter buffer_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace bridgemark

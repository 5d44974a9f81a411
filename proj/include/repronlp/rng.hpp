#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace repronlp {

/// Frozen, serializable state of one named stream.
///
/// `state_words` is fixed length: the four xoshiro256** words, the
/// derivation key used by split(), a has-spare flag and the bit pattern of
/// the cached Box-Muller spare.
struct RngSnapshot {
  static constexpr std::size_t kStateWords = 7;

  std::string algorithm_id;
  std::vector<std::string> stream_path;
  std::vector<std::uint64_t> state_words;
  std::uint64_t draws_consumed = 0;

  friend bool operator==(const RngSnapshot&, const RngSnapshot&) = default;
};

/// Deterministic splittable stream: splitmix64 derivation, xoshiro256** output.
/// Single owner; hand each worker its own child from split().
class RngStream {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64+xoshiro256**/v1";

  static RngStream seed_root(std::uint64_t seed);
  static RngStream restore(const RngSnapshot& snap);

  /// Child stream keyed by (this stream's derivation key, label). Does not
  /// draw from this stream, so sibling creation order is irrelevant.
  RngStream split(std::string_view label) const;

  std::uint64_t next_u64();
  /// 53-bit construction, always in [0, 1).
  double next_f64_unit();
  /// Box-Muller; consumes two unit draws per pair and caches the spare.
  double next_f64_normal();
  /// Uniform integer in [0, bound), bound > 0.
  std::uint64_t next_below(std::uint64_t bound);

  RngSnapshot snapshot() const;
  const std::vector<std::string>& path() const { return path_; }
  std::uint64_t draws_consumed() const { return draws_; }

 private:
  RngStream(std::uint64_t key, std::vector<std::string> path);

  std::array<std::uint64_t, 4> s_{};
  std::uint64_t key_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
  std::uint64_t draws_ = 0;
  std::vector<std::string> path_;
};

// Reference primitives, exposed for tests and for label hashing elsewhere.
std::uint64_t splitmix64_next(std::uint64_t& state);
std::uint64_t splitmix64_mix(std::uint64_t z);
std::uint64_t fnv1a64(std::string_view bytes);

void to_json(nlohmann::json& j, const RngSnapshot& snap);
void from_json(const nlohmann::json& j, RngSnapshot& snap);

}  // namespace repronlp

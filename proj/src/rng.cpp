#include "repronlp/rng.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "repronlp/error.hpp"

namespace repronlp {

std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  return splitmix64_mix(state);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RngStream::RngStream(std::uint64_t key, std::vector<std::string> path)
    : key_(key), path_(std::move(path)) {
  std::uint64_t sm = key;
  for (auto& w : s_) w = splitmix64_next(sm);
}

RngStream RngStream::seed_root(std::uint64_t seed) { return RngStream(seed, {"root"}); }

RngStream RngStream::split(std::string_view label) const {
  if (label.empty()) throw std::invalid_argument("rng split: label must be non-empty");
  auto path = path_;
  path.emplace_back(label);
  std::uint64_t child_key = splitmix64_mix(key_ ^ splitmix64_mix(fnv1a64(label)));
  return RngStream(child_key, std::move(path));
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = std::rotl(s_[3], 45);
  ++draws_;
  return result;
}

double RngStream::next_f64_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::next_f64_normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = next_f64_unit();
  const double u2 = next_f64_unit();
  const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t RngStream::next_below(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("rng next_below: bound must be positive");
  // Lemire multiply-shift with rejection; unbiased.
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * bound;
    if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
  }
}

RngSnapshot RngStream::snapshot() const {
  RngSnapshot snap;
  snap.algorithm_id = std::string(kAlgorithm);
  snap.stream_path = path_;
  snap.state_words = {s_[0], s_[1], s_[2], s_[3], key_, has_spare_ ? 1ULL : 0ULL,
                      std::bit_cast<std::uint64_t>(spare_)};
  snap.draws_consumed = draws_;
  return snap;
}

RngStream RngStream::restore(const RngSnapshot& snap) {
  if (snap.algorithm_id != kAlgorithm) {
    throw DataError("rng restore: algorithm mismatch: '" + snap.algorithm_id + "'");
  }
  if (snap.state_words.size() != RngSnapshot::kStateWords) {
    throw DataError("rng restore: expected " + std::to_string(RngSnapshot::kStateWords) +
                    " state words, got " + std::to_string(snap.state_words.size()));
  }
  if (snap.stream_path.empty()) throw DataError("rng restore: empty stream path");
  if (snap.state_words[5] > 1) throw DataError("rng restore: malformed spare flag");
  RngStream r(snap.state_words[4], snap.stream_path);
  for (std::size_t i = 0; i < 4; ++i) r.s_[i] = snap.state_words[i];
  r.has_spare_ = snap.state_words[5] == 1;
  r.spare_ = std::bit_cast<double>(snap.state_words[6]);
  r.draws_ = snap.draws_consumed;
  return r;
}

namespace {

std::string to_hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t from_hex16(const std::string& s) {
  if (s.size() != 16) throw DataError("rng snapshot: state word '" + s + "' is not 16 hex digits");
  std::uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw DataError("rng snapshot: bad hex digit in '" + s + "'");
  }
  return v;
}

}  // namespace

void to_json(nlohmann::json& j, const RngSnapshot& snap) {
  auto state = nlohmann::json::array();
  for (auto w : snap.state_words) state.push_back(to_hex16(w));
  j = nlohmann::json{{"algorithm", snap.algorithm_id},
                     {"path", snap.stream_path},
                     {"state", std::move(state)},
                     {"draws", snap.draws_consumed}};
}

void from_json(const nlohmann::json& j, RngSnapshot& snap) {
  try {
    snap.algorithm_id = j.at("algorithm").get<std::string>();
    snap.stream_path = j.at("path").get<std::vector<std::string>>();
    snap.state_words.clear();
    for (const auto& w : j.at("state")) snap.state_words.push_back(from_hex16(w.get<std::string>()));
    snap.draws_consumed = j.at("draws").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("rng snapshot: ") + e.what());
  }
}

}  // namespace repronlp

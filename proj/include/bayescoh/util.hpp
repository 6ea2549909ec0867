#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace bayescoh {

// Hex-encoded SHA-256 digest of `data` (lowercase, 64 chars).
std::string sha256_hex(std::string_view data);

// Shortest decimal string that round-trips `v` through a double exactly
// (std::to_chars). Non-finite values render as "nan", "inf", "-inf".
std::string format_double(double v);

// Splits `text` into whitespace-prefixed tokens: each token is an optional
// run of whitespace followed by a run of non-whitespace. " Jane Austen."
// tokenizes as {" Jane", " Austen."}. Trailing whitespace with no word after
// it forms a final token of its own. Empty input yields no tokens.
std::vector<std::string> whitespace_tokens(std::string_view text);

// Number of tokens whitespace_tokens() would produce.
std::size_t whitespace_token_count(std::string_view text);

// Reads a whole file into a string. Throws SinkError if unreadable.
std::string read_file(const std::filesystem::path& path);

// Writes `content` to `path` atomically: the bytes land in a sibling
// temporary file first and are renamed over the target, so readers never
// observe a half-written file. Throws SinkError on failure.
void atomic_write_file(const std::filesystem::path& path, std::string_view content);

// Deterministic 64-bit splittable PRNG (SplitMix64). Used where tests and
// fixtures must reproduce the exact same stream across platforms.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

// FNV-1a 64-bit hash; cheap deterministic mixing for seed derivation.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xCBF29CE484222325ULL);

// Current UTC time formatted as ISO 8601 with seconds ("2024-05-01T12:34:56Z").
std::string utc_timestamp();

}  // namespace bayescoh

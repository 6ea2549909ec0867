#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "bayescoh/backend.hpp"

namespace bayescoh {

// What uniquely identifies a scored request for caching purposes. The
// temperature is keyed by its shortest round-trip decimal rendering so that
// equal doubles always collide and nearly-equal ones never do.
struct CacheKey {
  std::string backend_id;
  std::string context_sha256;
  std::string continuation_sha256;
  std::string temperature;
};

CacheKey make_cache_key(const std::string& backend_id, const ScoreRequest& request);

// Append-only score log backed by a single file.
//
// Layout: an 8-byte magic header ("BCOHCSH1"), then records. Each record is
// a little-endian u32 payload length followed by the payload: seven
// length-prefixed (LE u32) byte strings — backend id, context hash,
// continuation hash, temperature, full context, full continuation, and the
// response JSON. Storing the full request lets a reader detect hash
// collisions and corruption instead of silently returning a wrong score.
//
// Opening scans the whole file. Records that fail to parse, disagree with
// their own hashes, or carry an invalid response are skipped and reported
// via warnings(); a truncated tail is discarded so appends stay well-formed.
// put() is a no-op when the key already holds the same request, keeping
// replays byte-stable; a stored request that does not match (hash collision
// or tampering) is superseded by appending, latest record winning. All
// operations are safe under concurrent use from one process; the file
// itself assumes a single writing process.
class CacheStore {
 public:
  explicit CacheStore(std::filesystem::path path);

  // Returns the stored response when `key` is present AND the stored request
  // texts match `request` exactly. A mismatch (hash collision or tampering)
  // reports a warning and misses.
  std::optional<ScoreResult> get(const CacheKey& key, const ScoreRequest& request);

  void put(const CacheKey& key, const ScoreRequest& request, const ScoreResult& result);

  std::size_t size() const;
  const std::filesystem::path& path() const { return path_; }
  std::vector<std::string> warnings() const;

 private:
  struct Entry {
    std::string context;
    std::string continuation;
    std::string response_json;
  };

  void load();
  void append_record(const CacheKey& key, const ScoreRequest& request,
                     const std::string& response_json);

  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;  // guards entries_ and out_
  std::unordered_map<std::string, Entry> entries_;  // keyed by joined CacheKey
  std::ofstream out_;
  mutable std::mutex warn_mutex_;  // guards warnings_
  std::vector<std::string> warnings_;
};

// Wraps `inner` so repeated identical requests are answered from `store`
// without touching the backend. The wrapper reports the inner backend's id
// and capabilities.
BackendPtr cached(BackendPtr inner, std::shared_ptr<CacheStore> store);

}  // namespace bayescoh

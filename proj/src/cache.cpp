#include "bayescoh/cache.hpp"

#include <cstring>

#include "bayescoh/errors.hpp"
#include "bayescoh/util.hpp"

namespace bayescoh {

namespace {

constexpr char kMagic[8] = {'B', 'C', 'O', 'H', 'C', 'S', 'H', '1'};

std::string join_key(const CacheKey& key) {
  std::string joined;
  joined.reserve(key.backend_id.size() + key.context_sha256.size() +
                 key.continuation_sha256.size() + key.temperature.size() + 3);
  joined += key.backend_id;
  joined += '\n';
  joined += key.context_sha256;
  joined += '\n';
  joined += key.continuation_sha256;
  joined += '\n';
  joined += key.temperature;
  return joined;
}

void append_u32(std::string& out, std::uint32_t value) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

void append_field(std::string& out, std::string_view field) {
  append_u32(out, static_cast<std::uint32_t>(field.size()));
  out.append(field);
}

// Reads one length-prefixed field out of `payload` starting at `offset`.
// Returns false when the framing inside the payload is inconsistent.
bool read_field(const std::string& payload, std::size_t& offset, std::string& out) {
  if (offset + 4 > payload.size()) return false;
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) {
    len |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[offset + i])) << (8 * i);
  }
  offset += 4;
  if (offset + len > payload.size()) return false;
  out.assign(payload, offset, len);
  offset += len;
  return true;
}

}  // namespace

CacheKey make_cache_key(const std::string& backend_id, const ScoreRequest& request) {
  CacheKey key;
  key.backend_id = backend_id;
  key.context_sha256 = sha256_hex(request.context);
  key.continuation_sha256 = sha256_hex(request.continuation);
  key.temperature = format_double(request.temperature);
  return key;
}

CacheStore::CacheStore(std::filesystem::path path) : path_(std::move(path)) {
  load();
}

void CacheStore::load() {
  std::uintmax_t valid_end = sizeof(kMagic);
  bool existed = std::filesystem::exists(path_);
  if (existed) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw StoreError("cannot open cache file: " + path_.string());
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
      throw StoreError("not a score cache (bad magic): " + path_.string());
    }
    std::size_t record_index = 0;
    for (;;) {
      char len_bytes[4];
      if (!in.read(len_bytes, 4)) break;  // clean end of file
      std::uint32_t payload_len = 0;
      for (int i = 0; i < 4; ++i) {
        payload_len |= static_cast<std::uint32_t>(static_cast<unsigned char>(len_bytes[i]))
                       << (8 * i);
      }
      std::string payload(payload_len, '\0');
      if (payload_len > 0 && !in.read(payload.data(), payload_len)) {
        warnings_.push_back("cache " + path_.string() + ": discarding truncated record #" +
                            std::to_string(record_index) + " at end of file");
        break;
      }
      valid_end += 4 + payload_len;
      ++record_index;

      std::size_t offset = 0;
      CacheKey key;
      Entry entry;
      bool ok = read_field(payload, offset, key.backend_id) &&
                read_field(payload, offset, key.context_sha256) &&
                read_field(payload, offset, key.continuation_sha256) &&
                read_field(payload, offset, key.temperature) &&
                read_field(payload, offset, entry.context) &&
                read_field(payload, offset, entry.continuation) &&
                read_field(payload, offset, entry.response_json) &&
                offset == payload.size();
      if (ok) {
        // Cross-check the indexed hashes against the stored texts, and make
        // sure the response still parses; otherwise treat as corrupt.
        ok = key.context_sha256 == sha256_hex(entry.context) &&
             key.continuation_sha256 == sha256_hex(entry.continuation);
      }
      if (ok) {
        try {
          score_result_from_json(nlohmann::json::parse(entry.response_json));
        } catch (const std::exception&) {
          ok = false;
        }
      }
      if (!ok) {
        warnings_.push_back("cache " + path_.string() + ": evicting corrupt record #" +
                            std::to_string(record_index - 1) + "; it will be recomputed");
        continue;
      }
      entries_[join_key(key)] = std::move(entry);
    }
    // Drop a torn tail so future appends produce a well-formed file.
    std::error_code ec;
    if (std::filesystem::file_size(path_, ec) != valid_end && !ec) {
      std::filesystem::resize_file(path_, valid_end, ec);
      if (ec) throw StoreError("cannot truncate damaged cache tail: " + path_.string());
    }
  }

  auto parent = path_.parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
    if (ec) throw StoreError("cannot create cache directory " + parent.string());
  }
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw StoreError("cannot open cache file for append: " + path_.string());
  if (!existed) {
    out_.write(kMagic, sizeof(kMagic));
    out_.flush();
    if (!out_) throw StoreError("cannot initialize cache file: " + path_.string());
  }
}

std::optional<ScoreResult> CacheStore::get(const CacheKey& key, const ScoreRequest& request) {
  std::string joined = join_key(key);
  std::shared_lock lock(mutex_);
  auto it = entries_.find(joined);
  if (it == entries_.end()) return std::nullopt;
  if (it->second.context != request.context || it->second.continuation != request.continuation) {
    // Astronomically unlikely hash collision, or a tampered file. Either
    // way the stored answer is not an answer to this request.
    std::lock_guard warn_lock(warn_mutex_);
    warnings_.push_back("cache " + path_.string() + ": stored request differs from lookup for " +
                        key.context_sha256.substr(0, 12) + "...; treating as a miss");
    return std::nullopt;
  }
  return score_result_from_json(nlohmann::json::parse(it->second.response_json));
}

void CacheStore::put(const CacheKey& key, const ScoreRequest& request,
                     const ScoreResult& result) {
  std::string joined = join_key(key);
  std::string response = score_result_to_json(result).dump();
  std::unique_lock lock(mutex_);
  auto it = entries_.find(joined);
  if (it != entries_.end() && it->second.context == request.context &&
      it->second.continuation == request.continuation) {
    return;  // already stored for this exact request; replays stay byte-stable
  }
  // New key, or a stored request that does not match (collision/tampering):
  // append, with the latest record winning in the index, as it does on load.
  append_record(key, request, response);
  entries_[joined] = Entry{request.context, request.continuation, std::move(response)};
}

void CacheStore::append_record(const CacheKey& key, const ScoreRequest& request,
                               const std::string& response_json) {
  std::string payload;
  append_field(payload, key.backend_id);
  append_field(payload, key.context_sha256);
  append_field(payload, key.continuation_sha256);
  append_field(payload, key.temperature);
  append_field(payload, request.context);
  append_field(payload, request.continuation);
  append_field(payload, response_json);

  std::string record;
  append_u32(record, static_cast<std::uint32_t>(payload.size()));
  record += payload;
  out_.write(record.data(), static_cast<std::streamsize>(record.size()));
  out_.flush();
  if (!out_) throw StoreError("cannot append to cache file: " + path_.string());
}

std::size_t CacheStore::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::vector<std::string> CacheStore::warnings() const {
  std::lock_guard lock(warn_mutex_);
  return warnings_;
}

namespace {

class CachedBackend : public ModelBackend {
 public:
  CachedBackend(BackendPtr inner, std::shared_ptr<CacheStore> store)
      : inner_(std::move(inner)), store_(std::move(store)) {}

  std::string id() const override { return inner_->id(); }
  bool supports_temperature_scaling() const override {
    return inner_->supports_temperature_scaling();
  }

  ScoreResult score(const ScoreRequest& request) const override {
    CacheKey key = make_cache_key(inner_->id(), request);
    if (auto hit = store_->get(key, request)) return *hit;
    ScoreResult result = inner_->score(request);
    store_->put(key, request, result);
    return result;
  }

 private:
  BackendPtr inner_;
  std::shared_ptr<CacheStore> store_;
};

}  // namespace

BackendPtr cached(BackendPtr inner, std::shared_ptr<CacheStore> store) {
  if (!inner) throw ConstructionError("cached(): inner backend must not be null");
  if (!store) throw ConstructionError("cached(): cache store must not be null");
  return std::make_shared<CachedBackend>(std::move(inner), std::move(store));
}

}  // namespace bayescoh

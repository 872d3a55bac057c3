#include "dedupacq/store.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "dedupacq/error.hpp"
#include "fsutil.hpp"

namespace dedupacq {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kFuzzyMinSize = 4096;

bool is_hex(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

std::optional<Digest> digest_from_line(std::string_view line) {
  if (line.size() != 64 || !is_hex(line)) return std::nullopt;
  return Digest::from_hex(line);
}

std::string occurrence_where(const Artifact& a) {
  if (a.path) return *a.path;
  if (!a.label.empty()) return a.label;
  return std::string(to_string(a.kind));
}

std::atomic<std::uint64_t> g_temp_counter{0};

}  // namespace

EvidenceStore::EvidenceStore(fs::path root) : EvidenceStore(std::move(root), Options{}) {}

EvidenceStore::EvidenceStore(fs::path root, Options options) : root_(std::move(root)), options_(std::move(options)) {
  if (options_.max_check_batch == 0) throw Error(ErrorCode::StorageError, "max_check_batch must be positive");
  open();
}

void EvidenceStore::open() {
  std::error_code ec;
  for (const char* sub : {"blobs", "manifests", "tmp"}) {
    fs::create_directories(root_ / sub, ec);
    if (ec) throw Error(ErrorCode::StorageError, "cannot create '" + (root_ / sub).string() + "': " + ec.message());
  }
  // Anything in tmp/ belongs to writes that never reached their rename.
  for (const auto& entry : fs::directory_iterator(root_ / "tmp")) fs::remove(entry.path(), ec);
  replay_index();
  load_manifests();
  load_fuzzy();
}

void EvidenceStore::replay_index() {
  const fs::path log = root_ / "index.log";
  if (!fs::exists(log)) return;
  std::ifstream in(log);
  std::string line;
  while (std::getline(in, line)) {
    const auto d = digest_from_line(line);
    if (!d || blobs_.count(*d)) continue;  // torn tail or repeated entry
    std::error_code ec;
    const auto size = fs::file_size(blob_path(*d), ec);
    if (ec) continue;
    blobs_.emplace(*d, size);
    physical_bytes_ += size;
  }
}

void EvidenceStore::load_manifests() {
  for (const auto& entry : fs::directory_iterator(root_ / "manifests")) {
    const auto name = entry.path().filename().string();
    if (entry.path().extension() != ".json" || name.size() != 69) continue;
    const Manifest m = parse_manifest(fsutil::read_text(entry.path()));
    index_manifest(m.manifest_id, m);
  }
}

void EvidenceStore::load_fuzzy() {
  const fs::path path = root_ / "fuzzy.idx";
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    const auto d = digest_from_line(std::string_view(line).substr(0, tab));
    if (!d) continue;
    try {
      fuzzy_.insert(*d, FuzzyDigest::parse(std::string_view(line).substr(tab + 1)));
    } catch (const Error&) {
      continue;
    }
  }
}

fs::path EvidenceStore::blob_path(const Digest& d) const {
  const std::string hex = d.hex();
  return root_ / "blobs" / hex.substr(0, 2) / hex.substr(2);
}

fs::path EvidenceStore::temp_path(std::string_view hint) const {
  return root_ / "tmp" /
         (std::string(hint) + "." + std::to_string(::getpid()) + "." + std::to_string(g_temp_counter.fetch_add(1)));
}

std::mutex& EvidenceStore::stripe(const Digest& d) const { return stripes_[d.bytes()[0] % stripes_.size()]; }

std::vector<bool> EvidenceStore::has_digests(std::span<const Digest> batch) const {
  if (batch.size() > options_.max_check_batch) {
    throw Error(ErrorCode::BatchTooLarge, "batch of " + std::to_string(batch.size()) + " exceeds limit " +
                                              std::to_string(options_.max_check_batch));
  }
  std::shared_lock lock(blobs_mutex_);
  std::vector<bool> out;
  out.reserve(batch.size());
  for (const Digest& d : batch) out.push_back(blobs_.count(d) != 0);
  return out;
}

bool EvidenceStore::contains(const Digest& d) const {
  std::shared_lock lock(blobs_mutex_);
  return blobs_.count(d) != 0;
}

void EvidenceStore::append_index(const Digest& d) {
  std::lock_guard lock(log_mutex_);
  fsutil::append_line(root_ / "index.log", d.hex(), options_.durable);
}

PutStatus EvidenceStore::put_artifact(const Digest& claimed, std::span<const std::uint8_t> payload) {
  const Digest actual = content_hash(payload);
  if (actual != claimed) {
    throw Error(ErrorCode::DigestMismatch, "claimed " + claimed.hex() + ", payload hashes to " + actual.hex());
  }
  if (contains(claimed)) return PutStatus::AlreadyPresent;

  std::lock_guard writer(stripe(claimed));
  if (contains(claimed)) return PutStatus::AlreadyPresent;

  const fs::path target = blob_path(claimed);
  std::error_code ec;
  fs::create_directories(target.parent_path(), ec);
  if (ec) throw Error(ErrorCode::StorageError, "cannot create '" + target.parent_path().string() + "': " + ec.message());

  const fs::path temp = temp_path(claimed.hex());
  if (options_.fault_hook) {
    // Split the write so tests can interrupt between temp data and rename.
    fsutil::write_atomic(temp, temp, payload, options_.durable);
    options_.fault_hook("temp_written");
    if (::rename(temp.c_str(), target.c_str()) != 0) {
      ::unlink(temp.c_str());
      throw Error(ErrorCode::StorageError, "rename failed for " + target.string());
    }
    options_.fault_hook("renamed");
  } else {
    fsutil::write_atomic(temp, target, payload, options_.durable);
  }
  append_index(claimed);
  std::unique_lock lock(blobs_mutex_);
  blobs_.emplace(claimed, payload.size());
  physical_bytes_ += payload.size();
  return PutStatus::Stored;
}

Bytes EvidenceStore::get_artifact(const Digest& d) const {
  if (!contains(d)) throw Error(ErrorCode::NotFound, "no blob " + d.hex());
  return fsutil::read_file(blob_path(d));
}

std::uint64_t EvidenceStore::blob_size(const Digest& d) const {
  std::shared_lock lock(blobs_mutex_);
  auto it = blobs_.find(d);
  if (it == blobs_.end()) throw Error(ErrorCode::NotFound, "no blob " + d.hex());
  return it->second;
}

void EvidenceStore::index_manifest(const std::string& id, const Manifest& m) {
  std::unique_lock lock(manifests_mutex_);
  if (manifests_.count(id)) return;
  std::uint64_t logical = 0;
  for (const Artifact& a : m.artifacts) {
    logical += a.logical_size();
    occurrences_[a.digest].push_back({a.digest, id, occurrence_where(a), a.extents.first_offset()});
  }
  manifests_.emplace(id, logical);
  logical_bytes_ += logical;
}

std::string EvidenceStore::commit_manifest(const Manifest& m) {
  return commit_manifest_bytes(manifest_canonical_bytes(m));
}

std::string EvidenceStore::commit_manifest_bytes(std::string_view json_text) {
  const Manifest m = parse_manifest(json_text);
  const std::string canonical = manifest_canonical_bytes(m);
  const std::string& id = m.manifest_id;

  std::vector<std::string> missing;
  {
    std::shared_lock lock(blobs_mutex_);
    std::set<std::string> seen;
    for (const Artifact& a : m.artifacts) {
      if (!blobs_.count(a.digest) && seen.insert(a.digest.hex()).second) missing.push_back(a.digest.hex());
    }
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::DanglingDigest,
                std::to_string(missing.size()) + " digest(s) not in store, first " + missing.front(), missing);
  }

  std::lock_guard commit(commit_mutex_);
  {
    std::shared_lock lock(manifests_mutex_);
    if (manifests_.count(id)) return id;
  }
  fsutil::write_atomic(temp_path("manifest"), root_ / "manifests" / (id + ".json"),
                       std::span(reinterpret_cast<const std::uint8_t*>(canonical.data()), canonical.size()),
                       options_.durable);
  index_manifest(id, m);
  return id;
}

std::string EvidenceStore::get_manifest_bytes(const std::string& manifest_id) const {
  if (manifest_id.size() != 64 || !is_hex(manifest_id)) throw Error(ErrorCode::NotFound, "no manifest " + manifest_id);
  {
    std::shared_lock lock(manifests_mutex_);
    if (!manifests_.count(manifest_id)) throw Error(ErrorCode::NotFound, "no manifest " + manifest_id);
  }
  return fsutil::read_text(root_ / "manifests" / (manifest_id + ".json"));
}

Manifest EvidenceStore::get_manifest(const std::string& manifest_id) const {
  return parse_manifest(get_manifest_bytes(manifest_id));
}

std::vector<std::string> EvidenceStore::manifest_ids() const {
  std::shared_lock lock(manifests_mutex_);
  std::vector<std::string> out;
  for (const auto& [id, bytes] : manifests_) out.push_back(id);
  return out;
}

std::vector<OccurrenceRecord> EvidenceStore::query_duplicates(const Digest& d) const {
  std::shared_lock lock(manifests_mutex_);
  auto it = occurrences_.find(d);
  if (it == occurrences_.end()) return {};
  std::vector<OccurrenceRecord> out = it->second;
  std::sort(out.begin(), out.end(), [](const OccurrenceRecord& a, const OccurrenceRecord& b) {
    return std::tie(a.manifest_id, a.offset) < std::tie(b.manifest_id, b.offset);
  });
  return out;
}

StoreStats EvidenceStore::stats() const {
  StoreStats s;
  {
    std::shared_lock lock(blobs_mutex_);
    s.unique_artifacts = blobs_.size();
    s.physical_bytes = physical_bytes_;
  }
  std::shared_lock lock(manifests_mutex_);
  s.logical_bytes = logical_bytes_;
  s.manifest_count = manifests_.size();
  return s;
}

AuditReport EvidenceStore::audit() const {
  AuditReport r;
  std::unordered_map<Digest, std::uint64_t> indexed;
  {
    std::shared_lock lock(blobs_mutex_);
    indexed = blobs_;
  }

  std::unordered_set<Digest> on_disk;
  for (const auto& fan : fs::directory_iterator(root_ / "blobs")) {
    const std::string dir = fan.path().filename().string();
    if (!fan.is_directory() || dir.size() != 2 || !is_hex(dir)) {
      r.violations.push_back("stray entry in blobs/: " + dir);
      continue;
    }
    for (const auto& entry : fs::directory_iterator(fan.path())) {
      const std::string name = entry.path().filename().string();
      const std::string hex = dir + name;
      if (!entry.is_regular_file() || name.size() != 62 || !is_hex(name)) {
        r.violations.push_back("stray entry in blobs/" + dir + "/: " + name);
        continue;
      }
      ++r.blobs_checked;
      const Digest expected = Digest::from_hex(hex);
      const Digest actual = content_hash(FileSource(entry.path()));
      if (actual != expected) {
        r.violations.push_back("blob " + hex + " content hashes to " + actual.hex());
      }
      on_disk.insert(expected);
      if (!indexed.count(expected)) ++r.unindexed_blobs;
    }
  }
  for (const auto& [d, size] : indexed) {
    if (!on_disk.count(d)) r.violations.push_back("indexed blob " + d.hex() + " missing from disk");
  }

  std::unordered_set<Digest> referenced;
  for (const auto& entry : fs::directory_iterator(root_ / "manifests")) {
    const std::string name = entry.path().filename().string();
    ++r.manifests_checked;
    const std::string text = fsutil::read_text(entry.path());
    if (name.size() != 69 || entry.path().extension() != ".json" || content_hash(text).hex() + ".json" != name) {
      r.violations.push_back("manifest file " + name + " does not match its content digest");
      continue;
    }
    Manifest m;
    try {
      m = parse_manifest(text);
    } catch (const Error& e) {
      r.violations.push_back("manifest " + name + " unreadable: " + e.what());
      continue;
    }
    std::set<std::string> reported;
    for (const Artifact& a : m.artifacts) {
      referenced.insert(a.digest);
      if (!on_disk.count(a.digest) && reported.insert(a.digest.hex()).second) {
        r.violations.push_back("manifest " + m.manifest_id + " references missing blob " + a.digest.hex());
      }
    }
  }
  for (const Digest& d : on_disk) r.orphan_blobs += referenced.count(d) == 0;
  for ([[maybe_unused]] const auto& entry : fs::directory_iterator(root_ / "tmp")) ++r.temp_files;
  return r;
}

std::size_t EvidenceStore::rebuild_fuzzy_index() {
  FuzzyIndex fresh;
  for (const std::string& id : manifest_ids()) {
    const Manifest m = get_manifest(id);
    for (const Artifact& a : m.artifacts) {
      if (a.kind != ArtifactKind::FileData || a.logical_size() < kFuzzyMinSize) continue;
      if (fresh.find(a.digest)) continue;
      // Recomputed from the stored bytes; client-supplied values are not trusted.
      const auto known = fuzzy_.find(a.digest);
      if (known) {
        fresh.insert(a.digest, *known);
        continue;
      }
      const FileSource blob(blob_path(a.digest));
      fresh.insert(a.digest, fuzzy_hash(blob, 0, blob.size()));
    }
  }
  std::string text;
  for (const auto& [d, f] : fresh.entries()) text += d.hex() + "\t" + f.text() + "\n";
  fsutil::write_atomic(temp_path("fuzzy"), root_ / "fuzzy.idx",
                       std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), options_.durable);
  fuzzy_.clear();
  for (const auto& [d, f] : fresh.entries()) fuzzy_.insert(d, f);
  return fuzzy_.size();
}

}  // namespace dedupacq

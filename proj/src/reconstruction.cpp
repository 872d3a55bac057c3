#include "dedupacq/reconstruction.hpp"

#include <stdlib.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>
#include <random>
#include <thread>

#include "fsutil.hpp"
#include "pipeline.hpp"

namespace dedupacq {

namespace fs = std::filesystem;

namespace {

Bytes fetch_verified(Repository& repo, const Digest& d) {
  Bytes data = repo.get(d);
  const Digest got = content_hash(data);
  if (got != d) {
    throw Error(ErrorCode::VerificationFailed, "blob " + d.hex() + " hashes to " + got.hex(), {d.hex(), got.hex()});
  }
  return data;
}

void require_present(Repository& repo, const std::vector<Digest>& digests) {
  std::vector<std::string> missing;
  const std::size_t batch = std::max<std::size_t>(1, repo.max_check_batch());
  for (std::size_t i = 0; i < digests.size(); i += batch) {
    const std::size_t n = std::min(batch, digests.size() - i);
    std::span<const Digest> part(digests.data() + i, n);
    const auto flags = repo.has_digests(part);
    for (std::size_t j = 0; j < n; ++j) {
      if (!flags[j]) missing.push_back(part[j].hex());
    }
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::DanglingDigest, std::to_string(missing.size()) + " referenced blob(s) missing from the store",
                missing);
  }
}

fs::path staging_path(const fs::path& out) {
  const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  std::string tmpl = (dir / ("." + out.filename().string() + ".partial-XXXXXX")).string();
  const int fd = ::mkstemp(tmpl.data());
  if (fd < 0) throw Error(ErrorCode::IoError, "cannot create a staging file next to " + out.string());
  ::close(fd);
  return tmpl;
}

class StagingFile {
 public:
  explicit StagingFile(fs::path p) : path_(std::move(p)) {}
  ~StagingFile() {
    if (!kept_) {
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  const fs::path& path() const { return path_; }
  void keep() { kept_ = true; }

 private:
  fs::path path_;
  bool kept_ = false;
};

}  // namespace

ReconstructionReport reconstruct(Repository& repo, const std::string& manifest_id, const fs::path& out,
                                 const ReconstructOptions& options) {
  return reconstruct(repo, repo.get_manifest(manifest_id), out, options);
}

ReconstructionReport reconstruct(Repository& repo, const Manifest& manifest, const fs::path& out,
                                 const ReconstructOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  ReconstructionReport report;
  report.manifest_id = manifest.manifest_id.empty() ? manifest_id_of(manifest) : manifest.manifest_id;
  report.output = out;
  report.expected = manifest.image_digest;

  // Placements grouped by content, in canonical order of first use.
  std::vector<Digest> order;
  std::map<Digest, std::vector<std::size_t>> placements;
  for (std::size_t i = 0; i < manifest.artifacts.size(); ++i) {
    auto [it, fresh] = placements.try_emplace(manifest.artifacts[i].digest);
    if (fresh) order.push_back(it->first);
    it->second.push_back(i);
  }
  if (options.shuffle_seed) {
    std::mt19937_64 rng(*options.shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
    for (auto& [d, idx] : placements) std::shuffle(idx.begin(), idx.end(), rng);
  }
  require_present(repo, order);

  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  StagingFile staging(staging_path(out));
  {
    FileImage image(staging.path(), manifest.image_size);
    if (!options.sparse) {
      const Bytes zeros(1 << 20, 0);
      for (std::uint64_t off = 0; off < manifest.image_size; off += zeros.size()) {
        const std::uint64_t n = std::min<std::uint64_t>(zeros.size(), manifest.image_size - off);
        image.write_at(off, std::span(zeros.data(), n));
      }
    }

    struct Fetched {
      std::size_t slot;
      Bytes data;
    };
    const std::size_t workers = std::max<std::size_t>(1, options.fetch_workers);
    pipeline::BoundedQueue<Fetched> ready(workers * 2);
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> left{workers};
    std::exception_ptr fetch_error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&] {
        try {
          for (std::size_t k; (k = next++) < order.size();) {
            if (!ready.push(Fetched{k, fetch_verified(repo, order[k])})) break;
          }
        } catch (...) {
          {
            std::lock_guard lock(error_mutex);
            if (!fetch_error) fetch_error = std::current_exception();
          }
          ready.abort();
        }
        if (--left == 0) ready.close();
      });
    }

    std::exception_ptr write_error;
    try {
      while (auto f = ready.pop()) {
        ++report.blobs_fetched;
        for (std::size_t idx : placements[order[f->slot]]) {
          const Artifact& a = manifest.artifacts[idx];
          if (a.logical_size() != f->data.size()) {
            throw Error(ErrorCode::InvalidManifest, "artifact at offset " + std::to_string(a.extents.first_offset()) +
                                                        " expects " + std::to_string(a.logical_size()) +
                                                        " bytes, blob has " + std::to_string(f->data.size()));
          }
          std::uint64_t pos = 0;
          for (const Extent& e : a.extents.extents()) {
            image.write_at(e.offset, std::span(f->data.data() + pos, e.length));
            pos += e.length;
            report.bytes_written += e.length;
          }
          ++report.artifacts_placed;
        }
      }
    } catch (...) {
      write_error = std::current_exception();
      ready.abort();
    }
    for (auto& t : threads) t.join();
    if (fetch_error) std::rethrow_exception(fetch_error);
    if (write_error) std::rethrow_exception(write_error);
    image.sync();

    report.computed = content_hash(image);
  }

  const std::uint64_t size = fs::file_size(staging.path());
  if (report.computed != report.expected || size != manifest.image_size) {
    throw Error(ErrorCode::VerificationFailed,
                "reconstructed image hashes to " + report.computed.hex() + ", manifest expects " + report.expected.hex(),
                {report.expected.hex(), report.computed.hex()});
  }
  fs::rename(staging.path(), out);
  staging.keep();
  fsutil::fsync_dir(out.has_parent_path() ? out.parent_path() : fs::path("."));
  report.verified = true;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

bool VerifyResult::spot_ok() const noexcept {
  return std::all_of(sampled.begin(), sampled.end(), [](const SampledArtifact& s) { return s.ok; });
}

std::vector<std::size_t> VerifyResult::failed_artifacts() const {
  std::vector<std::size_t> out;
  for (const auto& s : sampled) {
    if (!s.ok) out.push_back(s.index);
  }
  return out;
}

VerifyResult verify_image(const ByteSource& image, const Manifest& manifest, std::size_t spot_check,
                          std::uint64_t seed) {
  VerifyResult r;
  r.expected_size = manifest.image_size;
  r.actual_size = image.size();
  r.size_ok = r.actual_size == r.expected_size;
  r.expected = manifest.image_digest;
  r.computed = content_hash(image);
  r.digest_ok = r.computed == r.expected;

  const std::size_t n = manifest.artifacts.size();
  if (spot_check > 0 && n > 0) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(spot_check, n));
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx) {
      const Artifact& a = manifest.artifacts[i];
      bool ok = a.extents.max_end() <= r.actual_size;
      if (ok) {
        Sha256 h;
        stream_extents(image, a.extents, [&](std::span<const std::uint8_t> c) { h.update(c); });
        ok = h.finish() == a.digest;
      }
      r.sampled.push_back({i, ok});
    }
  }
  return r;
}

VerifyResult verify_image(const fs::path& image, const Manifest& manifest, std::size_t spot_check,
                          std::uint64_t seed) {
  FileSource src(image);
  return verify_image(src, manifest, spot_check, seed);
}

namespace {

std::string where_of(const Artifact& a) {
  std::string w = a.path ? *a.path : a.label;
  if (a.partition) w = "p" + std::to_string(*a.partition) + ":" + w;
  return w;
}

}  // namespace

ExtractReport extract_artifact(Repository& repo, const Manifest& manifest, const ArtifactSelector& selector,
                               const fs::path& out) {
  if (selector.path.has_value() == selector.digest.has_value()) {
    throw std::invalid_argument("exactly one of path or digest must be given");
  }
  ExtractReport report;
  std::vector<const Artifact*> chosen;

  if (selector.digest) {
    for (const Artifact& a : manifest.artifacts) {
      if (a.digest == *selector.digest) chosen.push_back(&a);
    }
    if (chosen.empty()) throw Error(ErrorCode::NotFound, "no artifact with digest " + selector.digest->hex());
    report.pieces.push_back(*selector.digest);
  } else {
    std::string path = *selector.path;
    std::optional<std::uint32_t> partition;
    if (path.size() > 1 && path[0] == 'p') {
      const auto colon = path.find(':');
      if (colon != std::string::npos && colon > 1 &&
          std::all_of(path.begin() + 1, path.begin() + static_cast<std::ptrdiff_t>(colon), ::isdigit)) {
        partition = static_cast<std::uint32_t>(std::stoul(path.substr(1, colon - 1)));
        path = path.substr(colon + 1);
      }
    }
    std::map<std::optional<std::uint32_t>, std::vector<const Artifact*>> by_partition;
    for (const Artifact& a : manifest.artifacts) {
      if (a.kind != ArtifactKind::FileData || !a.path || *a.path != path) continue;
      if (partition && a.partition != partition) continue;
      by_partition[a.partition].push_back(&a);
    }
    if (by_partition.empty()) throw Error(ErrorCode::NotFound, "no file " + *selector.path + " in manifest");
    if (by_partition.size() > 1) {
      std::vector<std::string> candidates;
      for (auto& [p, list] : by_partition) candidates.push_back(where_of(*list.front()));
      throw Error(ErrorCode::Ambiguous, *selector.path + " matches files in " + std::to_string(candidates.size()) +
                                            " partitions", candidates);
    }
    chosen = by_partition.begin()->second;
    std::stable_sort(chosen.begin(), chosen.end(), [](const Artifact* a, const Artifact* b) {
      return (a->piece ? a->piece->index : 0) < (b->piece ? b->piece->index : 0);
    });
    for (const Artifact* a : chosen) report.pieces.push_back(a->digest);
  }
  for (const Artifact* a : chosen) report.placements.push_back({where_of(*a), a->partition, a->extents.first_offset()});

  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  StagingFile staging(staging_path(out));
  {
    std::uint64_t total = 0;
    Bytes all;
    for (const Digest& d : report.pieces) {
      Bytes part = fetch_verified(repo, d);
      total += part.size();
      all.insert(all.end(), part.begin(), part.end());
    }
    fsutil::write_atomic(staging.path(), out, all, true);
    staging.keep();
    report.bytes_written = total;
  }
  return report;
}

}  // namespace dedupacq

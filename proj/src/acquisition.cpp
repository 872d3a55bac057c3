#include "dedupacq/acquisition.hpp"

#include <stdlib.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <ctime>
#include <exception>
#include <map>
#include <stdexcept>
#include <unordered_set>

#include "pipeline.hpp"

namespace dedupacq {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

class BusyTime {
 public:
  void add(Clock::time_point t0) {
    ns_.fetch_add(std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count(),
                  std::memory_order_relaxed);
  }
  double seconds() const { return static_cast<double>(ns_.load()) / 1e9; }

 private:
  std::atomic<std::int64_t> ns_{0};
};

// First failure wins; recording one tears the pipeline down.
class Failure {
 public:
  template <class F>
  void on_abort(F f) {
    aborts_.push_back(std::move(f));
  }
  void set(std::exception_ptr e) {
    {
      std::lock_guard lock(mutex_);
      if (error_) return;
      error_ = e;
    }
    for (auto& f : aborts_) f();
  }
  bool failed() const {
    std::lock_guard lock(mutex_);
    return error_ != nullptr;
  }
  std::exception_ptr error() const {
    std::lock_guard lock(mutex_);
    return error_;
  }

 private:
  mutable std::mutex mutex_;
  std::exception_ptr error_;
  std::vector<std::function<void()>> aborts_;
};

struct Work {
  std::size_t index = 0;
  Bytes data;
  Digest digest;
  std::optional<FuzzyDigest> fuzzy;
};

struct Segment {
  std::uint64_t offset;
  std::uint64_t length;
  std::size_t artifact;
  std::uint64_t position;  // within the artifact's content
};

struct PipelineResult {
  fat::ArtifactInventory inventory;
  Digest image_digest;
  std::uint64_t bytes_read = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t uploaded = 0;
  std::uint64_t payload_bytes = 0;
  std::vector<char> was_uploaded;
  PhaseTimings timings;
};

// Enumerates, reads once, hashes, and (with a repository) checks and uploads.
PipelineResult run_pipeline(const ByteSource& raw, Repository* repo, const AcquisitionConfig& cfg) {
  const auto t_start = Clock::now();
  PipelineResult out;
  CountingSource device(raw);
  ReadOnceCache cache(device);

  auto t0 = Clock::now();
  out.inventory = fat::enumerate_artifacts(cache, fat::EnumerationOptions{cfg.max_artifact_size});
  out.timings.enumerate = seconds_since(t0);

  auto& artifacts = out.inventory.artifacts;
  const std::size_t n = artifacts.size();
  std::vector<Digest> digests(n);
  std::vector<std::optional<FuzzyDigest>> fuzzies(n);
  out.was_uploaded.assign(n, 0);

  std::vector<Segment> segments;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t pos = 0;
    for (const Extent& e : artifacts[i].extents.extents()) {
      segments.push_back({e.offset, e.length, i, pos});
      pos += e.length;
    }
  }
  std::sort(segments.begin(), segments.end(), [](const Segment& a, const Segment& b) { return a.offset < b.offset; });

  const std::size_t batch_limit =
      std::min(cfg.check_batch, repo ? std::max<std::size_t>(1, repo->max_check_batch()) : cfg.check_batch);
  pipeline::BoundedQueue<Work> hash_q(cfg.queue_capacity);
  pipeline::BoundedQueue<Work> check_q(cfg.queue_capacity);
  pipeline::BoundedQueue<Work> upload_q(cfg.queue_capacity);
  pipeline::ByteBudget budget(cfg.memory_budget);
  Failure failure;
  failure.on_abort([&] {
    hash_q.abort();
    check_q.abort();
    upload_q.abort();
    budget.abort();
  });

  BusyTime hash_time, check_time, upload_time;
  std::atomic<std::uint64_t> duplicates{0}, uploaded{0}, payload{0};

  std::atomic<std::size_t> hashers_left{cfg.hash_workers};
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < cfg.hash_workers; ++w) {
    threads.emplace_back([&] {
      try {
        while (auto item = hash_q.pop()) {
          const auto t = Clock::now();
          item->digest = content_hash(item->data);
          const Artifact& a = artifacts[item->index];
          if (cfg.compute_fuzzy && a.kind == ArtifactKind::FileData && item->data.size() >= cfg.fuzzy_min_size) {
            item->fuzzy = fuzzy_hash(item->data);
          }
          hash_time.add(t);
          if (!check_q.push(std::move(*item))) break;
        }
      } catch (...) {
        failure.set(std::current_exception());
      }
      if (--hashers_left == 0) check_q.close();
    });
  }

  threads.emplace_back([&] {
    try {
      std::unordered_set<Digest> seen;
      std::vector<Work> batch;
      while (auto first = check_q.pop()) {
        batch.clear();
        batch.push_back(std::move(*first));
        while (batch.size() < batch_limit) {
          auto more = check_q.try_pop();
          if (!more) break;
          batch.push_back(std::move(*more));
        }
        std::vector<Work> candidates;
        for (Work& w : batch) {
          digests[w.index] = w.digest;
          fuzzies[w.index] = w.fuzzy;
          if (!seen.insert(w.digest).second) {
            ++duplicates;
            budget.release(w.data.size());
          } else {
            candidates.push_back(std::move(w));
          }
        }
        if (candidates.empty()) continue;
        if (!repo) {
          for (Work& w : candidates) budget.release(w.data.size());
          continue;
        }
        std::vector<Digest> query;
        for (const Work& w : candidates) query.push_back(w.digest);
        const auto t = Clock::now();
        const std::vector<bool> present = repo->has_digests(query);
        check_time.add(t);
        for (std::size_t i = 0; i < candidates.size(); ++i) {
          if (present[i]) {
            ++duplicates;
            budget.release(candidates[i].data.size());
          } else {
            out.was_uploaded[candidates[i].index] = 1;
            if (!upload_q.push(std::move(candidates[i]))) return;
          }
        }
      }
    } catch (...) {
      failure.set(std::current_exception());
    }
    upload_q.close();
  });

  const std::size_t uploaders = repo ? cfg.upload_workers : 0;
  for (std::size_t u = 0; u < uploaders; ++u) {
    threads.emplace_back([&] {
      try {
        while (auto item = upload_q.pop()) {
          const auto t = Clock::now();
          repo->put(item->digest, item->data);
          upload_time.add(t);
          ++uploaded;
          payload += item->data.size();
          budget.release(item->data.size());
        }
      } catch (...) {
        failure.set(std::current_exception());
      }
    });
  }

  // The single sequential pass over the device, in this thread.
  t0 = Clock::now();
  try {
    Sha256 image_hash;
    std::vector<Bytes> buffers(n);
    std::vector<std::uint64_t> remaining(n);
    for (std::size_t i = 0; i < n; ++i) remaining[i] = artifacts[i].logical_size();
    std::uint64_t reader_held = 0;
    constexpr std::uint64_t kChunk = 4 << 20;
    for (const Segment& s : segments) {
      if (failure.failed()) break;
      Bytes& buf = buffers[s.artifact];
      if (buf.empty()) {
        const std::uint64_t size = remaining[s.artifact];
        if (!budget.reserve(size, reader_held)) break;
        reader_held += size;
        buf.resize(size);
      }
      for (std::uint64_t done = 0; done < s.length;) {
        const std::uint64_t take = std::min(kChunk, s.length - done);
        std::span<std::uint8_t> dst(buf.data() + s.position + done, take);
        cache.stream_at(s.offset + done, dst);
        image_hash.update(dst);
        done += take;
      }
      remaining[s.artifact] -= s.length;
      if (remaining[s.artifact] == 0) {
        const std::uint64_t size = buf.size();
        reader_held -= size;
        budget.hand_off(size);
        if (!hash_q.push(Work{s.artifact, std::move(buf), {}, {}})) break;
        buffers[s.artifact] = Bytes();
      }
    }
    out.image_digest = image_hash.finish();
  } catch (...) {
    failure.set(std::current_exception());
  }
  hash_q.close();
  out.timings.read = seconds_since(t0);

  for (auto& t : threads) t.join();
  if (auto e = failure.error()) std::rethrow_exception(e);

  for (std::size_t i = 0; i < n; ++i) {
    artifacts[i].digest = digests[i];
    artifacts[i].fuzzy = fuzzies[i];
  }
  out.bytes_read = device.bytes_read();
  out.duplicates = duplicates;
  out.uploaded = uploaded;
  out.payload_bytes = payload;
  out.timings.hash = hash_time.seconds();
  out.timings.check = check_time.seconds();
  out.timings.upload = upload_time.seconds();
  out.timings.total = seconds_since(t_start);
  return out;
}

[[noreturn]] void resumable(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const Error& err) {
    if (err.code() == ErrorCode::ResumableFailure) throw;
    throw Error(ErrorCode::ResumableFailure,
                std::string("acquisition incomplete, no manifest committed; rerun to resume (") + err.what() + ")",
                {std::string(to_string(err.code()))});
  } catch (const std::exception& ex) {
    throw Error(ErrorCode::ResumableFailure,
                std::string("acquisition incomplete, no manifest committed; rerun to resume (") + ex.what() + ")");
  }
}

}  // namespace

void AcquisitionConfig::validate() const {
  if (check_batch < 1 || check_batch > 512) throw std::invalid_argument("check_batch must be in [1, 512]");
  if (hash_workers < 1) throw std::invalid_argument("hash_workers must be >= 1");
  if (upload_workers < 1) throw std::invalid_argument("upload_workers must be >= 1");
  if (queue_capacity < 1) throw std::invalid_argument("queue_capacity must be >= 1");
  if (max_artifact_size < 1) throw std::invalid_argument("max_artifact_size must be >= 1");
}

std::vector<DuplicateGroup> duplicate_histogram(const std::vector<Artifact>& artifacts) {
  std::map<Digest, DuplicateGroup> groups;
  for (const Artifact& a : artifacts) {
    auto [it, fresh] = groups.try_emplace(a.digest);
    DuplicateGroup& g = it->second;
    if (fresh) {
      g.digest = a.digest;
      g.size = a.logical_size();
      g.kind = a.kind;
      g.where = a.path ? *a.path : a.label;
    }
    ++g.count;
  }
  std::vector<DuplicateGroup> out;
  for (auto& [d, g] : groups) {
    if (g.count >= 2) out.push_back(std::move(g));
  }
  // Digest ordering is byte-wise, which matches hex ordering.
  std::stable_sort(out.begin(), out.end(), [](const DuplicateGroup& a, const DuplicateGroup& b) {
    return a.count > b.count;
  });
  return out;
}

AcquisitionReport acquire(const ByteSource& device, Repository& repo, const AcquisitionConfig& config) {
  config.validate();
  const auto t_start = Clock::now();
  const std::int64_t acquired_at = config.acquired_at.value_or(static_cast<std::int64_t>(std::time(nullptr)));

  PipelineResult r;
  try {
    r = run_pipeline(device, &repo, config);
  } catch (const Error& e) {
    // Parse errors surface during enumeration, before anything is sent.
    static constexpr ErrorCode kParse[] = {
        ErrorCode::OutOfBounds,       ErrorCode::NotAnMbr,      ErrorCode::CorruptPartitionTable,
        ErrorCode::CorruptBootSector, ErrorCode::CorruptVolume, ErrorCode::CorruptChain,
        ErrorCode::TruncatedFile,     ErrorCode::UnsupportedVariant};
    if (std::find(std::begin(kParse), std::end(kParse), e.code()) != std::end(kParse)) throw;
    resumable(std::current_exception());
  } catch (...) {
    resumable(std::current_exception());
  }

  Manifest m;
  m.case_id = config.case_id;
  m.investigator_id = config.investigator_id;
  m.disk_id = config.disk_id;
  m.acquired_at = acquired_at;
  m.image_size = r.inventory.image_size;
  m.image_digest = r.image_digest;
  m.artifacts = r.inventory.artifacts;

  AcquisitionReport rep;
  const auto t0 = Clock::now();
  try {
    rep.manifest_id = repo.commit_manifest(m);
  } catch (...) {
    resumable(std::current_exception());
  }
  rep.image_size = m.image_size;
  rep.image_digest = m.image_digest;
  rep.artifact_count = m.artifacts.size();
  rep.duplicate_count = r.duplicates;
  rep.unique_uploaded_count = r.uploaded;
  rep.bytes_read = r.bytes_read;
  rep.payload_bytes_transferred = r.payload_bytes;
  for (std::size_t i = 0; i < m.artifacts.size(); ++i) {
    if (m.artifacts[i].kind != ArtifactKind::FileData) continue;
    ++rep.file_count;
    if (!r.was_uploaded[i]) ++rep.file_duplicate_count;
  }
  rep.timings = r.timings;
  rep.timings.commit = seconds_since(t0);
  rep.timings.total = seconds_since(t_start);
  rep.histogram = duplicate_histogram(m.artifacts);
  return rep;
}

AcquisitionReport acquire(const std::filesystem::path& image, Repository& repo, const AcquisitionConfig& config) {
  FileSource device(image);
  return acquire(device, repo, config);
}

InspectReport inspect(const ByteSource& device, const AcquisitionConfig& config) {
  config.validate();
  PipelineResult r = run_pipeline(device, nullptr, config);
  InspectReport rep;
  rep.image_size = r.inventory.image_size;
  rep.image_digest = r.image_digest;
  rep.bytes_read = r.bytes_read;
  rep.partitions = std::move(r.inventory.partitions);
  rep.volumes = std::move(r.inventory.volumes);
  rep.artifacts = std::move(r.inventory.artifacts);
  rep.histogram = duplicate_histogram(rep.artifacts);
  rep.timings = r.timings;
  return rep;
}

InspectReport inspect(const std::filesystem::path& image, const AcquisitionConfig& config) {
  FileSource device(image);
  return inspect(device, config);
}

std::size_t BenchmarkReport::reacquisition_faster() const {
  return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const BenchmarkRun& r) {
    return r.reacquisition_wall < r.initial_wall;
  }));
}

BenchmarkReport benchmark(const std::filesystem::path& image, const AcquisitionConfig& config,
                          const BenchmarkOptions& options) {
  if (options.repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
  config.validate();
  namespace fs = std::filesystem;
  const fs::path base = options.work_dir.empty() ? fs::temp_directory_path() : options.work_dir;
  fs::create_directories(base);

  BenchmarkReport report;
  report.image_size = fs::file_size(image);
  for (int rep = 0; rep < options.repetitions; ++rep) {
    std::string tmpl = (base / "dedupacq-bench-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw Error(ErrorCode::StorageError, "cannot create a work directory in " + base.string());
    const fs::path root = tmpl;
    struct Cleanup {
      fs::path p;
      ~Cleanup() {
        std::error_code ec;
        fs::remove_all(p, ec);
      }
    } cleanup{root};

    EvidenceStore store(root / "store");
    std::unique_ptr<net::Server> server;
    std::unique_ptr<Repository> repo;
    if (options.via_network || options.throttle_bytes_per_sec > 0) {
      server = std::make_unique<net::Server>(store, net::Endpoint{"127.0.0.1", 0});
      server->start();
      net::ClientOptions co;
      if (options.throttle_bytes_per_sec > 0) co.limiter = std::make_shared<net::RateLimiter>(options.throttle_bytes_per_sec);
      repo = std::make_unique<RemoteRepository>(net::Endpoint{"127.0.0.1", server->port()}, co, config.upload_workers);
    } else {
      repo = std::make_unique<LocalRepository>(store);
    }

    BenchmarkRun run;
    auto t0 = Clock::now();
    run.initial = acquire(image, *repo, config);
    run.initial_wall = seconds_since(t0);
    t0 = Clock::now();
    run.reacquisition = acquire(image, *repo, config);
    run.reacquisition_wall = seconds_since(t0);
    report.runs.push_back(std::move(run));

    repo.reset();
    if (server) server->stop();
  }
  return report;
}

}  // namespace dedupacq

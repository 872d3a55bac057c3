#include "dedupacq/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dedupacq::report {

using json = nlohmann::ordered_json;

namespace {

bool numeric(const std::string& s) {
  return !s.empty() && s.find_first_not_of("0123456789.-") == std::string::npos;
}

// Numbers right-aligned, everything else left-aligned.
class Table {
 public:
  explicit Table(std::vector<std::string> header) : rows_{std::move(header)} {}
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string str() const {
    std::vector<std::size_t> width;
    for (const auto& r : rows_) {
      if (width.size() < r.size()) width.resize(r.size(), 0);
      for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    }
    std::ostringstream out;
    for (std::size_t k = 0; k < rows_.size(); ++k) {
      const auto& r = rows_[k];
      std::string line;
      for (std::size_t i = 0; i < r.size(); ++i) {
        const std::string pad(width[i] - r[i].size(), ' ');
        if (i) line += "  ";
        line += k > 0 && numeric(r[i]) ? pad + r[i] : r[i] + pad;
      }
      while (!line.empty() && line.back() == ' ') line.pop_back();
      out << line << '\n';
      if (k == 0) {
        std::size_t total = 0;
        for (auto w : width) total += w;
        out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
      }
    }
    return out.str();
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string num(std::uint64_t v) { return std::to_string(v); }

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json timings_json(const PhaseTimings& t) {
  return json{{"enumerate", t.enumerate}, {"read", t.read},     {"hash", t.hash},  {"check", t.check},
              {"upload", t.upload},       {"commit", t.commit}, {"total", t.total}};
}

json histogram_json(const std::vector<DuplicateGroup>& h) {
  json out = json::array();
  for (const auto& g : h) {
    out.push_back({{"digest", g.digest.hex()},
                   {"count", g.count},
                   {"size", g.size},
                   {"kind", std::string(to_string(g.kind))},
                   {"where", g.where}});
  }
  return out;
}

std::string histogram_table(const std::vector<DuplicateGroup>& h, std::size_t limit) {
  Table t({"count", "size", "kind", "digest", "first seen"});
  for (std::size_t i = 0; i < h.size() && i < limit; ++i) {
    const auto& g = h[i];
    t.add({num(g.count), num(g.size), std::string(to_string(g.kind)), g.digest.hex().substr(0, 16), g.where});
  }
  std::string s = t.str();
  if (h.size() > limit) s += "... " + std::to_string(h.size() - limit) + " more groups\n";
  return s;
}

json acquisition_json(const AcquisitionReport& r) {
  return json{{"manifest_id", r.manifest_id},
              {"image_size", r.image_size},
              {"image_digest", r.image_digest.hex()},
              {"artifact_count", r.artifact_count},
              {"duplicate_count", r.duplicate_count},
              {"unique_uploaded_count", r.unique_uploaded_count},
              {"duplicate_ratio", r.duplicate_ratio()},
              {"file_count", r.file_count},
              {"file_duplicate_count", r.file_duplicate_count},
              {"file_duplicate_ratio", r.file_duplicate_ratio()},
              {"bytes_read", r.bytes_read},
              {"payload_bytes_transferred", r.payload_bytes_transferred},
              {"timings", timings_json(r.timings)},
              {"histogram", histogram_json(r.histogram)}};
}

json artifact_json(const Artifact& a) {
  json ext = json::array();
  for (const auto& e : a.extents.extents()) ext.push_back({e.offset, e.length});
  json j{{"kind", std::string(to_string(a.kind))},
         {"label", a.label},
         {"size", a.logical_size()},
         {"digest", a.digest.hex()},
         {"extents", ext}};
  if (a.path) j["path"] = *a.path;
  if (a.partition) j["partition"] = *a.partition;
  if (a.fuzzy) j["fuzzy"] = a.fuzzy->text();
  return j;
}

}  // namespace

Format parse_format(std::string_view text) {
  if (text == "table") return Format::Table;
  if (text == "json") return Format::Json;
  throw std::invalid_argument("unknown format '" + std::string(text) + "' (table or json)");
}

std::string human_bytes(std::uint64_t n) {
  static const char* units[] = {"B", "KiB", "MiB", "GiB", "TiB"};
  double v = static_cast<double>(n);
  int u = 0;
  while (v >= 1024 && u < 4) {
    v /= 1024;
    ++u;
  }
  return u == 0 ? std::to_string(n) + " B" : fixed(v, 1) + " " + units[u];
}

std::string render(const AcquisitionReport& r, Format f) {
  if (f == Format::Json) {
    json j{{"schema", "dedupacq.acquisition/1"}};
    j.update(acquisition_json(r));
    return dump(j);
  }
  Table t({"field", "value"});
  t.add({"manifest_id", r.manifest_id});
  t.add({"image_size", num(r.image_size) + " (" + human_bytes(r.image_size) + ")"});
  t.add({"image_digest", r.image_digest.hex()});
  t.add({"artifacts", num(r.artifact_count)});
  t.add({"duplicates", num(r.duplicate_count)});
  t.add({"uploaded", num(r.unique_uploaded_count)});
  t.add({"duplicate_ratio", fixed(r.duplicate_ratio(), 4)});
  t.add({"file_duplicate_ratio", fixed(r.file_duplicate_ratio(), 4) + " (" + num(r.file_duplicate_count) + "/" +
                                     num(r.file_count) + ")"});
  t.add({"bytes_read", num(r.bytes_read)});
  t.add({"payload_bytes", num(r.payload_bytes_transferred) + " (" + human_bytes(r.payload_bytes_transferred) + ")"});
  std::string s = t.str() + "\n";
  Table p({"phase", "seconds"});
  p.add({"enumerate", fixed(r.timings.enumerate)});
  p.add({"read", fixed(r.timings.read)});
  p.add({"hash", fixed(r.timings.hash)});
  p.add({"check", fixed(r.timings.check)});
  p.add({"upload", fixed(r.timings.upload)});
  p.add({"commit", fixed(r.timings.commit)});
  p.add({"total (wall)", fixed(r.timings.total)});
  s += p.str();
  if (!r.histogram.empty()) s += "\nduplicate histogram\n" + histogram_table(r.histogram, 20);
  return s;
}

std::string render(const InspectReport& r, Format f, bool list_artifacts) {
  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> kinds;  // count, bytes
  for (const auto& a : r.artifacts) {
    auto& k = kinds[std::string(to_string(a.kind))];
    ++k.first;
    k.second += a.logical_size();
  }
  if (f == Format::Json) {
    json parts = json::array();
    for (const auto& p : r.partitions) {
      parts.push_back({{"slot", p.index},
                       {"type_code", p.type_code},
                       {"start_lba", p.start_lba},
                       {"sectors", p.sector_count},
                       {"bootable", p.bootable}});
    }
    json vols = json::array();
    for (const auto& v : r.volumes) {
      vols.push_back({{"slot", v.partition.index},
                      {"variant", std::string(fat::to_string(v.layout.variant))},
                      {"cluster_size", v.layout.cluster_size},
                      {"clusters", v.layout.cluster_count},
                      {"free_clusters", v.free_clusters},
                      {"files", v.file_count},
                      {"directories", v.directory_count}});
    }
    json kj = json::object();
    for (const auto& [k, v] : kinds) kj[k] = {{"count", v.first}, {"bytes", v.second}};
    json j{{"schema", "dedupacq.inspect/1"},
           {"image_size", r.image_size},
           {"image_digest", r.image_digest.hex()},
           {"bytes_read", r.bytes_read},
           {"artifact_count", r.artifacts.size()},
           {"partitions", parts},
           {"volumes", vols},
           {"kinds", kj},
           {"histogram", histogram_json(r.histogram)},
           {"timings", timings_json(r.timings)}};
    if (list_artifacts) {
      json arts = json::array();
      for (const auto& a : r.artifacts) arts.push_back(artifact_json(a));
      j["artifacts"] = arts;
    }
    return dump(j);
  }
  std::string s = "image " + human_bytes(r.image_size) + "  sha256 " + r.image_digest.hex() + "\n\n";
  Table v({"slot", "type", "variant", "cluster", "clusters", "free", "files", "dirs"});
  for (const auto& vol : r.volumes) {
    char type[8];
    std::snprintf(type, sizeof type, "0x%02X", vol.partition.type_code);
    v.add({num(vol.partition.index), type, std::string(fat::to_string(vol.layout.variant)),
           num(vol.layout.cluster_size), num(vol.layout.cluster_count), num(vol.free_clusters), num(vol.file_count),
           num(vol.directory_count)});
  }
  s += v.str() + "\n";
  Table k({"kind", "artifacts", "bytes"});
  for (const auto& [name, c] : kinds) k.add({name, num(c.first), num(c.second)});
  s += k.str();
  if (!r.histogram.empty()) s += "\nduplicate histogram\n" + histogram_table(r.histogram, 20);
  if (list_artifacts) {
    Table a({"offset", "size", "kind", "digest", "where"});
    for (const auto& art : r.artifacts) {
      a.add({num(art.extents.first_offset()), num(art.logical_size()), std::string(to_string(art.kind)),
             art.digest.hex().substr(0, 16), art.path ? *art.path : art.label});
    }
    s += "\n" + a.str();
  }
  return s;
}

std::string render(const BenchmarkReport& r, Format f) {
  if (f == Format::Json) {
    json runs = json::array();
    for (const auto& run : r.runs) {
      json i = acquisition_json(run.initial), q = acquisition_json(run.reacquisition);
      i.erase("histogram");
      q.erase("histogram");
      runs.push_back({{"initial", i},
                      {"reacquisition", q},
                      {"initial_wall", run.initial_wall},
                      {"reacquisition_wall", run.reacquisition_wall}});
    }
    return dump(json{{"schema", "dedupacq.benchmark/1"},
                     {"image_size", r.image_size},
                     {"repetitions", r.runs.size()},
                     {"reacquisition_faster", r.reacquisition_faster()},
                     {"runs", runs}});
  }
  auto mean = [&](auto get) {
    double s = 0;
    for (const auto& run : r.runs) s += get(run);
    return r.runs.empty() ? 0.0 : s / static_cast<double>(r.runs.size());
  };
  Table t({"metric (mean of " + num(r.runs.size()) + ")", "initial", "re-acquisition"});
  auto phase = [&](const std::string& name, double PhaseTimings::*m) {
    t.add({name + " s", fixed(mean([&](const BenchmarkRun& x) { return x.initial.timings.*m; })),
           fixed(mean([&](const BenchmarkRun& x) { return x.reacquisition.timings.*m; }))});
  };
  phase("enumerate", &PhaseTimings::enumerate);
  phase("read", &PhaseTimings::read);
  phase("hash", &PhaseTimings::hash);
  phase("check", &PhaseTimings::check);
  phase("upload", &PhaseTimings::upload);
  phase("commit", &PhaseTimings::commit);
  t.add({"wall s", fixed(mean([](const BenchmarkRun& x) { return x.initial_wall; })),
         fixed(mean([](const BenchmarkRun& x) { return x.reacquisition_wall; }))});
  t.add({"payload bytes",
         num(static_cast<std::uint64_t>(mean([](const BenchmarkRun& x) {
           return static_cast<double>(x.initial.payload_bytes_transferred);
         }))),
         num(static_cast<std::uint64_t>(mean([](const BenchmarkRun& x) {
           return static_cast<double>(x.reacquisition.payload_bytes_transferred);
         })))});
  t.add({"duplicate ratio", fixed(mean([](const BenchmarkRun& x) { return x.initial.duplicate_ratio(); }), 4),
         fixed(mean([](const BenchmarkRun& x) { return x.reacquisition.duplicate_ratio(); }), 4)});
  std::string s = "image " + human_bytes(r.image_size) + "\n\n" + t.str();
  s += "\nre-acquisition faster in " + num(r.reacquisition_faster()) + " of " + num(r.runs.size()) + " runs\n";
  return s;
}

std::string render(const StoreStats& st, Format f) {
  if (f == Format::Json) {
    return dump(json{{"schema", "dedupacq.stats/1"},
                     {"unique_artifacts", st.unique_artifacts},
                     {"logical_bytes", st.logical_bytes},
                     {"physical_bytes", st.physical_bytes},
                     {"manifest_count", st.manifest_count},
                     {"dedup_ratio", st.dedup_ratio()}});
  }
  Table t({"field", "value"});
  t.add({"unique_artifacts", num(st.unique_artifacts)});
  t.add({"logical_bytes", num(st.logical_bytes) + " (" + human_bytes(st.logical_bytes) + ")"});
  t.add({"physical_bytes", num(st.physical_bytes) + " (" + human_bytes(st.physical_bytes) + ")"});
  t.add({"manifests", num(st.manifest_count)});
  t.add({"dedup_ratio", fixed(st.dedup_ratio(), 4)});
  return t.str();
}

std::string render(const AuditReport& a, Format f) {
  if (f == Format::Json) {
    return dump(json{{"schema", "dedupacq.audit/1"},
                     {"ok", a.ok()},
                     {"blobs_checked", a.blobs_checked},
                     {"manifests_checked", a.manifests_checked},
                     {"unindexed_blobs", a.unindexed_blobs},
                     {"orphan_blobs", a.orphan_blobs},
                     {"temp_files", a.temp_files},
                     {"violations", a.violations}});
  }
  Table t({"field", "value"});
  t.add({"result", a.ok() ? "ok" : "VIOLATIONS"});
  t.add({"blobs_checked", num(a.blobs_checked)});
  t.add({"manifests_checked", num(a.manifests_checked)});
  t.add({"unindexed_blobs", num(a.unindexed_blobs)});
  t.add({"orphan_blobs", num(a.orphan_blobs)});
  t.add({"temp_files", num(a.temp_files)});
  std::string s = t.str();
  for (const auto& v : a.violations) s += "violation: " + v + "\n";
  return s;
}

std::string render(const ReconstructionReport& r, Format f) {
  if (f == Format::Json) {
    return dump(json{{"schema", "dedupacq.reconstruction/1"},
                     {"manifest_id", r.manifest_id},
                     {"output", r.output.string()},
                     {"bytes_written", r.bytes_written},
                     {"artifacts_placed", r.artifacts_placed},
                     {"blobs_fetched", r.blobs_fetched},
                     {"verified", r.verified},
                     {"expected_digest", r.expected.hex()},
                     {"computed_digest", r.computed.hex()},
                     {"seconds", r.seconds}});
  }
  Table t({"field", "value"});
  t.add({"manifest_id", r.manifest_id});
  t.add({"output", r.output.string()});
  t.add({"bytes_written", num(r.bytes_written)});
  t.add({"artifacts_placed", num(r.artifacts_placed)});
  t.add({"blobs_fetched", num(r.blobs_fetched)});
  t.add({"verification", r.verified ? "pass" : "FAIL"});
  t.add({"image_digest", r.computed.hex()});
  return t.str();
}

std::string render(const VerifyResult& v, const Manifest& m, Format f) {
  if (f == Format::Json) {
    json sampled = json::array();
    for (const auto& s : v.sampled) {
      const Artifact& a = m.artifacts[s.index];
      sampled.push_back({{"index", s.index},
                         {"offset", a.extents.first_offset()},
                         {"where", a.path ? *a.path : a.label},
                         {"ok", s.ok}});
    }
    return dump(json{{"schema", "dedupacq.verify/1"},
                     {"manifest_id", m.manifest_id},
                     {"passed", v.passed()},
                     {"size_ok", v.size_ok},
                     {"digest_ok", v.digest_ok},
                     {"expected_size", v.expected_size},
                     {"actual_size", v.actual_size},
                     {"expected_digest", v.expected.hex()},
                     {"computed_digest", v.computed.hex()},
                     {"sampled", sampled}});
  }
  Table t({"check", "result", "detail"});
  t.add({"size", v.size_ok ? "pass" : "FAIL", num(v.actual_size) + " / " + num(v.expected_size)});
  t.add({"image digest", v.digest_ok ? "pass" : "FAIL", v.computed.hex()});
  if (!v.sampled.empty()) {
    t.add({"spot check", v.spot_ok() ? "pass" : "FAIL",
           num(v.sampled.size() - v.failed_artifacts().size()) + "/" + num(v.sampled.size()) + " artifacts"});
  }
  std::string s = t.str();
  for (std::size_t i : v.failed_artifacts()) {
    const Artifact& a = m.artifacts[i];
    s += "mismatch: artifact " + num(i) + " at offset " + num(a.extents.first_offset()) + " (" +
         (a.path ? *a.path : a.label) + ")\n";
  }
  s += v.passed() ? "verified\n" : "NOT verified\n";
  return s;
}

std::string render(const ExtractReport& r, Format f) {
  if (f == Format::Json) {
    json pieces = json::array();
    for (const auto& d : r.pieces) pieces.push_back(d.hex());
    json places = json::array();
    for (const auto& p : r.placements) {
      json j{{"where", p.where}, {"offset", p.offset}};
      if (p.partition) j["partition"] = *p.partition;
      places.push_back(j);
    }
    return dump(json{{"schema", "dedupacq.extract/1"},
                     {"bytes_written", r.bytes_written},
                     {"pieces", pieces},
                     {"placements", places}});
  }
  std::string s = "wrote " + num(r.bytes_written) + " bytes from " + num(r.pieces.size()) + " piece(s)\n";
  Table t({"offset", "where"});
  for (const auto& p : r.placements) t.add({num(p.offset), p.where});
  return s + t.str();
}

std::string render_dupes(const Digest& d, const std::vector<OccurrenceRecord>& occ, Format f) {
  if (f == Format::Json) {
    json list = json::array();
    for (const auto& o : occ) list.push_back({{"manifest_id", o.manifest_id}, {"where", o.where}, {"offset", o.offset}});
    return dump(json{{"schema", "dedupacq.dupes/1"}, {"digest", d.hex()}, {"count", occ.size()}, {"occurrences", list}});
  }
  std::string s = d.hex() + " occurs " + num(occ.size()) + " time(s)\n";
  if (occ.empty()) return s;
  Table t({"manifest", "offset", "where"});
  for (const auto& o : occ) t.add({o.manifest_id.substr(0, 16), num(o.offset), o.where});
  return s + t.str();
}

std::string render_mkimage(const fixture::GroundTruth& truth, const std::string& out, Format f) {
  if (f == Format::Json) {
    json files = json::array();
    for (const auto& file : truth.files) {
      files.push_back({{"partition", file.partition},
                       {"path", file.path},
                       {"size", file.size},
                       {"sha256", file.digest.hex()},
                       {"created", format_utc(file.created)},
                       {"modified", format_utc(file.modified)}});
    }
    return dump(json{{"schema", "dedupacq.mkimage/1"},
                     {"output", out},
                     {"image_size", truth.image_size},
                     {"files", files},
                     {"deleted", truth.deleted},
                     {"modified", truth.modified},
                     {"modified_bytes", truth.modified_bytes}});
  }
  return "wrote " + out + " (" + human_bytes(truth.image_size) + ", " + num(truth.files.size()) + " files, " +
         num(truth.deleted.size()) + " deleted, " + num(truth.modified.size()) + " modified)\n";
}

}  // namespace dedupacq::report

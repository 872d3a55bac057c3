#include "dedupacq/fixture.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "dedupacq/error.hpp"
#include "fat_format.hpp"
#include "json.hpp"

namespace dedupacq::fixture {

using namespace fat::detail;
using json = nlohmann::json;
using fat::Variant;

namespace {

[[noreturn]] void bad_spec(const std::string& what) { throw Error(ErrorCode::InvalidFixture, what); }

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) bad_spec(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      bad_spec("unknown key '" + key + "' in " + where);
    }
  }
}

FileSpec parse_file(const json& j) {
  check_keys(j, {"path", "content", "size", "seed", "fragmented", "clusters", "created", "modified"}, "file");
  FileSpec f;
  f.path = j.at("path").get<std::string>();
  if (j.contains("content")) {
    f.content = j["content"].get<std::string>();
    f.size = f.content->size();
  } else {
    f.size = j.value("size", std::uint64_t{0});
  }
  f.seed = j.value("seed", std::uint64_t{0});
  f.fragmented = j.value("fragmented", false);
  if (j.contains("clusters")) f.clusters = j["clusters"].get<std::vector<std::uint32_t>>();
  if (j.contains("created")) f.created = j["created"].get<std::int64_t>();
  if (j.contains("modified")) f.modified = j["modified"].get<std::int64_t>();
  return f;
}

PartitionSpec parse_partition(const json& j) {
  check_keys(j, {"variant", "start_lba", "size", "bytes_per_sector", "sectors_per_cluster", "fat_count",
                 "root_entries", "reserved_sectors", "type_code", "bootable", "label", "fill_seed", "files",
                 "delete", "modify", "modify_fraction"},
             "partition");
  PartitionSpec p;
  const std::string variant = j.value("variant", std::string("fat16"));
  if (variant == "fat16") {
    p.variant = Variant::Fat16;
  } else if (variant == "fat32") {
    p.variant = Variant::Fat32;
  } else {
    bad_spec("variant must be fat16 or fat32, got '" + variant + "'");
  }
  p.start_lba = j.value("start_lba", p.start_lba);
  p.size = j.at("size").get<std::uint64_t>();
  p.bytes_per_sector = j.value("bytes_per_sector", p.bytes_per_sector);
  p.sectors_per_cluster = j.value("sectors_per_cluster", p.sectors_per_cluster);
  p.fat_count = j.value("fat_count", p.fat_count);
  p.root_entries = j.value("root_entries", p.root_entries);
  p.reserved_sectors = j.value("reserved_sectors", p.reserved_sectors);
  if (j.contains("type_code")) p.type_code = j["type_code"].get<std::uint8_t>();
  p.bootable = j.value("bootable", false);
  p.label = j.value("label", p.label);
  p.fill_seed = j.value("fill_seed", std::uint64_t{0});
  if (j.contains("files")) {
    for (const json& f : j["files"]) p.files.push_back(parse_file(f));
  }
  if (j.contains("delete")) p.deletes = j["delete"].get<std::vector<std::string>>();
  if (j.contains("modify")) {
    for (const json& m : j["modify"]) {
      check_keys(m, {"path", "seed", "size"}, "modify");
      ModifySpec ms;
      ms.path = m.at("path").get<std::string>();
      ms.seed = m.value("seed", std::uint64_t{0});
      if (m.contains("size")) ms.size = m["size"].get<std::uint64_t>();
      p.modifies.push_back(std::move(ms));
    }
  }
  if (j.contains("modify_fraction")) {
    const json& m = j["modify_fraction"];
    check_keys(m, {"fraction", "seed"}, "modify_fraction");
    p.modify_fraction = ModifyFraction{m.at("fraction").get<double>(), m.value("seed", std::uint64_t{0})};
  }
  return p;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull ^ (b + 0x632BE59BD9B4E019ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) parts.push_back(std::move(cur));
  if (parts.empty()) bad_spec("empty path '" + path + "'");
  for (const auto& p : parts) {
    if (p == "." || p == "..") bad_spec("relative component in '" + path + "'");
  }
  return parts;
}

std::vector<std::uint16_t> utf8_to_utf16(const std::string& s) {
  std::vector<std::uint16_t> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<std::uint8_t>(s[i]);
    std::uint32_t cp;
    std::size_t n;
    if (c < 0x80) { cp = c; n = 1; }
    else if ((c >> 5) == 0x6) { cp = c & 0x1F; n = 2; }
    else if ((c >> 4) == 0xE) { cp = c & 0x0F; n = 3; }
    else if ((c >> 3) == 0x1E) { cp = c & 0x07; n = 4; }
    else bad_spec("invalid UTF-8 in name '" + s + "'");
    if (i + n > s.size()) bad_spec("truncated UTF-8 in name '" + s + "'");
    for (std::size_t k = 1; k < n; ++k) cp = cp << 6 | (static_cast<std::uint8_t>(s[i + k]) & 0x3F);
    i += n;
    if (cp >= 0x10000) {
      cp -= 0x10000;
      out.push_back(static_cast<std::uint16_t>(0xD800 + (cp >> 10)));
      out.push_back(static_cast<std::uint16_t>(0xDC00 + (cp & 0x3FF)));
    } else {
      out.push_back(static_cast<std::uint16_t>(cp));
    }
  }
  return out;
}

bool short_char_ok(char c) {
  if (c >= 'A' && c <= 'Z') return true;
  if (c >= '0' && c <= '9') return true;
  return std::string_view("!#$%&'()-@^_`{}~").find(c) != std::string_view::npos;
}

// Returns the 11-byte short name if `name` is already a valid upper-case 8.3 name.
std::optional<std::array<std::uint8_t, 11>> exact_short_name(const std::string& name) {
  const auto dot = name.find('.');
  const std::string base = name.substr(0, dot);
  const std::string ext = dot == std::string::npos ? "" : name.substr(dot + 1);
  if (base.empty() || base.size() > 8 || ext.size() > 3) return std::nullopt;
  if (dot != std::string::npos && ext.empty()) return std::nullopt;
  if (!std::all_of(base.begin(), base.end(), short_char_ok) || !std::all_of(ext.begin(), ext.end(), short_char_ok)) {
    return std::nullopt;
  }
  std::array<std::uint8_t, 11> n{};
  n.fill(' ');
  std::copy(base.begin(), base.end(), n.begin());
  std::copy(ext.begin(), ext.end(), n.begin() + 8);
  if (n[0] == 0xE5) n[0] = 0x05;
  return n;
}

struct Layout {
  std::uint32_t bps = 0, spc = 0, reserved = 0, fat_count = 0, spf = 0, root_entries = 0;
  std::uint64_t total_sectors = 0, root_dir_sectors = 0;
  std::uint32_t cluster_count = 0;
  std::uint64_t volume_offset = 0;
  std::uint32_t cluster_size() const { return bps * spc; }
  std::uint64_t fat_offset(std::uint32_t i) const { return volume_offset + (std::uint64_t{reserved} + std::uint64_t{i} * spf) * bps; }
  std::uint64_t root_dir_offset() const { return fat_offset(fat_count); }
  std::uint64_t data_start() const { return root_dir_offset() + root_dir_sectors * bps; }
  std::uint64_t cluster_offset(std::uint32_t c) const { return data_start() + std::uint64_t{c - 2} * cluster_size(); }
};

class VolumeWriter {
 public:
  VolumeWriter(const PartitionSpec& spec, std::uint32_t slot, const FixtureSpec& fixture, WritableImage& out)
      : spec_(spec), slot_(slot), fixture_(fixture), out_(out) {
    compute_layout();
    fat_.assign(std::size_t{layout_.cluster_count} + 2, 0);
    fat_[0] = variant32() ? 0x0FFFFF00u | 0xF8 : 0xFFF8;
    fat_[1] = variant32() ? 0x0FFFFFFF : 0xFFFF;
    Dir root;
    root.path = "/";
    dirs_.push_back(std::move(root));
    if (variant32()) {
      dirs_[0].clusters = allocate(1, false, {}, "/");
      zero_clusters(dirs_[0].clusters);
    }
  }

  void run(GroundTruth& truth, std::size_t& file_counter) {
    if (spec_.fill_seed != 0) fill_noise();
    if (!spec_.label.empty()) add_label();
    for (const FileSpec& f : spec_.files) {
      const std::int64_t t = fixture_.base_time + 2 * static_cast<std::int64_t>(file_counter++);
      create_file(f, f.created.value_or(t), f.modified.value_or(t));
    }
    for (const std::string& path : spec_.deletes) {
      delete_file(path);
      truth.deleted.push_back(path);
    }
    std::vector<ModifySpec> modifies = spec_.modifies;
    if (spec_.modify_fraction) {
      std::vector<std::string> live;
      for (const auto& [path, idx] : by_path_) live.push_back(path);
      const double frac = spec_.modify_fraction->fraction;
      if (frac < 0.0 || frac > 1.0) bad_spec("modify_fraction outside [0, 1]");
      const auto k = static_cast<std::size_t>(std::llround(frac * static_cast<double>(live.size())));
      std::mt19937_64 rng(spec_.modify_fraction->seed);
      std::shuffle(live.begin(), live.end(), rng);
      for (std::size_t i = 0; i < k; ++i) modifies.push_back({live[i], mix(spec_.modify_fraction->seed, i + 1), std::nullopt});
    }
    std::set<std::string> modified;
    for (std::size_t i = 0; i < modifies.size(); ++i) {
      modify_file(modifies[i], fixture_.base_time + 1'000'000 + 2 * static_cast<std::int64_t>(i));
      modified.insert(modifies[i].path);
    }
    flush_metadata();

    for (const auto& [path, idx] : by_path_) {
      const FileRec& f = files_[idx];
      TruthFile t;
      t.partition = slot_;
      t.path = path;
      t.size = f.size;
      t.digest = f.digest;
      t.chain = f.chain;
      t.created = round_trip(f.created, true);
      t.modified = round_trip(f.modified, false);
      truth.files.push_back(std::move(t));
      if (modified.count(path)) truth.modified_bytes += f.size;
    }
    truth.modified.insert(truth.modified.end(), modified.begin(), modified.end());
  }

 private:
  struct Dir {
    std::string path;
    std::vector<std::array<std::uint8_t, 32>> entries;
    std::vector<std::uint32_t> clusters;  // empty for the FAT16 root
    std::set<std::string> short_names;
    std::map<std::string, std::size_t> subdirs;
    std::uint32_t parent_cluster = 0;
  };

  struct FileRec {
    std::size_t dir = 0;
    std::size_t entry = 0;      // index of the short entry
    std::size_t lfn_count = 0;  // long-name entries directly before it
    std::vector<std::uint32_t> chain;
    std::uint64_t size = 0;
    std::int64_t created = 0;
    std::int64_t modified = 0;
    Digest digest;
  };

  bool variant32() const { return spec_.variant == Variant::Fat32; }

  static std::int64_t round_trip(std::int64_t t, bool with_tenths) {
    const DosTime d = unix_to_dos(t);
    return dos_to_unix(d.date, d.time, with_tenths ? d.tenths : 0);
  }

  void compute_layout() {
    Layout& l = layout_;
    l.bps = spec_.bytes_per_sector;
    l.spc = spec_.sectors_per_cluster;
    if (l.bps != 512 && l.bps != 1024 && l.bps != 2048 && l.bps != 4096) bad_spec("bad bytes_per_sector");
    if (l.spc == 0 || (l.spc & (l.spc - 1)) != 0 || l.spc > 128) bad_spec("bad sectors_per_cluster");
    if (spec_.fat_count == 0 || spec_.fat_count > 4) bad_spec("fat_count must be 1..4");
    if (spec_.size % fat::kMbrSectorSize != 0) bad_spec("partition size must be a multiple of 512");
    l.reserved = spec_.reserved_sectors != 0 ? spec_.reserved_sectors : (variant32() ? 32 : 4);
    if (variant32() && l.reserved < 7) bad_spec("FAT32 needs at least 7 reserved sectors");
    l.fat_count = spec_.fat_count;
    l.root_entries = variant32() ? 0 : spec_.root_entries;
    if (!variant32() && l.root_entries == 0) bad_spec("FAT16 needs root_entries > 0");
    l.total_sectors = spec_.size / l.bps;
    if (l.total_sectors > 0xFFFFFFFFull) bad_spec("volume too large");
    l.root_dir_sectors = (std::uint64_t{l.root_entries} * 32 + l.bps - 1) / l.bps;
    l.volume_offset = spec_.start_lba * fat::kMbrSectorSize;
    const std::uint64_t entry_bytes = variant32() ? 4 : 2;

    std::uint64_t spf = 1;
    std::uint64_t clusters = 0;
    for (int iter = 0; iter < 64; ++iter) {
      const std::uint64_t meta = l.reserved + l.fat_count * spf + l.root_dir_sectors;
      if (meta >= l.total_sectors) bad_spec("partition too small for its metadata");
      clusters = (l.total_sectors - meta) / l.spc;
      const std::uint64_t needed = ((clusters + 2) * entry_bytes + l.bps - 1) / l.bps;
      if (needed <= spf) break;
      spf = needed;
    }
    l.spf = static_cast<std::uint32_t>(spf);
    if (variant32()) {
      if (clusters < kMinFat32Clusters) {
        bad_spec("FAT32 volume has " + std::to_string(clusters) + " clusters; needs >= 65525 (grow size or shrink clusters)");
      }
    } else if (clusters < kMinFat16Clusters || clusters >= kMinFat32Clusters) {
      bad_spec("FAT16 volume has " + std::to_string(clusters) + " clusters; needs 4085..65524");
    }
    l.cluster_count = static_cast<std::uint32_t>(clusters);
  }

  std::uint32_t eoc() const { return variant32() ? 0x0FFFFFFF : 0xFFFF; }

  std::vector<std::uint32_t> allocate(std::uint64_t n, bool fragmented, const std::vector<std::uint32_t>& explicit_chain,
                                      const std::string& path) {
    std::vector<std::uint32_t> out;
    const std::uint32_t max_c = layout_.cluster_count + 1;
    if (!explicit_chain.empty()) {
      if (explicit_chain.size() != n) {
        bad_spec(path + ": explicit chain has " + std::to_string(explicit_chain.size()) + " clusters, size needs " +
                 std::to_string(n));
      }
      std::set<std::uint32_t> seen;
      for (std::uint32_t c : explicit_chain) {
        if (c < 2 || c > max_c || fat_[c] != 0 || !seen.insert(c).second) {
          bad_spec(path + ": explicit cluster " + std::to_string(c) + " unavailable");
        }
      }
      out = explicit_chain;
    } else {
      std::uint32_t c = cursor_;
      std::uint64_t scanned = 0;
      bool skip = false;
      while (out.size() < n && scanned < layout_.cluster_count) {
        if (fat_[c] == 0 && std::find(out.begin(), out.end(), c) == out.end()) {
          if (!(fragmented && skip)) out.push_back(c);
          skip = !skip;
        }
        c = c == max_c ? 2 : c + 1;
        ++scanned;
      }
      if (out.size() < n && fragmented) {
        // Not enough room for a strided layout; fall back to any free cluster.
        for (std::uint32_t k = 2; k <= max_c && out.size() < n; ++k) {
          if (fat_[k] == 0 && std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
        }
      }
      if (out.size() < n) {
        throw Error(ErrorCode::CapacityError, path + ": needs " + std::to_string(n) + " clusters, volume is full");
      }
      cursor_ = c;
    }
    for (std::size_t i = 0; i < out.size(); ++i) fat_[out[i]] = i + 1 < out.size() ? out[i + 1] : eoc();
    return out;
  }

  void free_chain(const std::vector<std::uint32_t>& chain) {
    for (std::uint32_t c : chain) fat_[c] = 0;
  }

  void zero_clusters(const std::vector<std::uint32_t>& chain) {
    const Bytes zeros(layout_.cluster_size(), 0);
    for (std::uint32_t c : chain) out_.write_at(layout_.cluster_offset(c), zeros);
  }

  void write_content(const std::vector<std::uint32_t>& chain, const Bytes& content) {
    const std::uint64_t cs = layout_.cluster_size();
    for (std::size_t i = 0; i < chain.size(); ++i) {
      const std::uint64_t from = i * cs;
      if (from >= content.size()) break;
      const std::uint64_t n = std::min<std::uint64_t>(cs, content.size() - from);
      out_.write_at(layout_.cluster_offset(chain[i]), std::span(content.data() + from, n));
    }
  }

  void fill_noise() {
    std::mt19937_64 rng(spec_.fill_seed);
    Bytes buf(layout_.cluster_size());
    for (std::uint32_t c = 2; c <= layout_.cluster_count + 1; ++c) {
      for (std::size_t i = 0; i < buf.size(); i += 8) {
        const std::uint64_t v = rng();
        std::memcpy(buf.data() + i, &v, std::min<std::size_t>(8, buf.size() - i));
      }
      if (fat_[c] == 0) out_.write_at(layout_.cluster_offset(c), buf);
    }
  }

  std::size_t add_entry(std::size_t dir_idx, const std::array<std::uint8_t, 32>& e) {
    Dir& d = dirs_[dir_idx];
    const std::size_t per_cluster = layout_.cluster_size() / 32;
    if (dir_idx == 0 && !variant32()) {
      if (d.entries.size() >= layout_.root_entries) {
        throw Error(ErrorCode::CapacityError, "root directory full (" + std::to_string(layout_.root_entries) + " entries)");
      }
    } else if (d.entries.size() >= d.clusters.size() * per_cluster) {
      auto more = allocate(1, false, {}, d.path);
      zero_clusters(more);
      fat_[d.clusters.back()] = more[0];
      d.clusters.push_back(more[0]);
    }
    d.entries.push_back(e);
    return d.entries.size() - 1;
  }

  std::array<std::uint8_t, 32> make_entry(const std::array<std::uint8_t, 11>& name, std::uint8_t attr,
                                          std::uint32_t cluster, std::uint32_t size, std::int64_t created,
                                          std::int64_t modified) const {
    std::array<std::uint8_t, 32> e{};
    std::copy(name.begin(), name.end(), e.begin());
    e[11] = attr;
    const DosTime c = unix_to_dos(created);
    const DosTime m = unix_to_dos(modified);
    e[13] = c.tenths;
    put16(e, 14, c.time);
    put16(e, 16, c.date);
    put16(e, 18, m.date);
    put16(e, 20, variant32() ? cluster >> 16 : 0);
    put16(e, 22, m.time);
    put16(e, 24, m.date);
    put16(e, 26, cluster & 0xFFFF);
    put32(e, 28, size);
    return e;
  }

  // Adds the long-name entries (if needed) for `name` and returns the short
  // name to use for the final entry plus the count of long entries written.
  std::pair<std::array<std::uint8_t, 11>, std::size_t> add_name(std::size_t dir_idx, const std::string& name) {
    Dir& d = dirs_[dir_idx];
    if (auto exact = exact_short_name(name)) {
      const std::string key(exact->begin(), exact->end());
      if (!d.short_names.insert(key).second) bad_spec("duplicate name '" + name + "' in " + d.path);
      return {*exact, 0};
    }
    std::string upper;
    for (char ch : name) upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
    const auto dot = upper.rfind('.');
    std::string base, ext;
    for (char ch : upper.substr(0, dot)) if (short_char_ok(ch)) base.push_back(ch);
    if (dot != std::string::npos) for (char ch : upper.substr(dot + 1)) if (short_char_ok(ch) && ext.size() < 3) ext.push_back(ch);
    if (base.empty()) base = "FILE";
    std::array<std::uint8_t, 11> sn{};
    for (int n = 1;; ++n) {
      const std::string tail = "~" + std::to_string(n);
      const std::string b = base.substr(0, 8 - tail.size()) + tail;
      sn.fill(' ');
      std::copy(b.begin(), b.end(), sn.begin());
      std::copy(ext.begin(), ext.end(), sn.begin() + 8);
      if (d.short_names.insert(std::string(sn.begin(), sn.end())).second) break;
    }
    const std::vector<std::uint16_t> units = utf8_to_utf16(name);
    if (units.size() > 255) bad_spec("name too long: '" + name + "'");
    const std::size_t count = (units.size() + 12) / 13;
    const std::uint8_t checksum = short_name_checksum(sn);
    for (std::size_t k = count; k >= 1; --k) {
      std::array<std::uint8_t, 32> e{};
      e[0] = static_cast<std::uint8_t>(k | (k == count ? 0x40 : 0));
      e[11] = kAttrLongName;
      e[13] = checksum;
      for (std::size_t i = 0; i < 13; ++i) {
        const std::size_t pos = (k - 1) * 13 + i;
        std::uint16_t u = pos < units.size() ? units[pos] : (pos == units.size() ? 0x0000 : 0xFFFF);
        put16(e, kLfnCharOffsets[i], u);
      }
      add_entry(dir_idx, e);
    }
    return {sn, count};
  }

  std::size_t ensure_dir(const std::vector<std::string>& parts, std::size_t depth) {
    std::size_t cur = 0;
    for (std::size_t i = 0; i < depth; ++i) {
      auto it = dirs_[cur].subdirs.find(parts[i]);
      if (it != dirs_[cur].subdirs.end()) {
        cur = it->second;
        continue;
      }
      const std::string path = (dirs_[cur].path == "/" ? "" : dirs_[cur].path) + "/" + parts[i];
      if (by_path_.count(path)) bad_spec("'" + path + "' is a file, not a directory");
      auto [sn, lfn] = add_name(cur, parts[i]);
      Dir d;
      d.path = path;
      d.clusters = allocate(1, false, {}, path);
      zero_clusters(d.clusters);
      d.parent_cluster = cur == 0 ? 0 : dirs_[cur].clusters.front();
      if (variant32() && cur == 0) d.parent_cluster = 0;
      add_entry(cur, make_entry(sn, kAttrDirectory, d.clusters.front(), 0, fixture_.base_time, fixture_.base_time));
      const std::size_t idx = dirs_.size();
      dirs_[cur].subdirs.emplace(parts[i], idx);
      std::array<std::uint8_t, 11> dot{}, dotdot{};
      dot.fill(' ');
      dotdot.fill(' ');
      dot[0] = '.';
      dotdot[0] = dotdot[1] = '.';
      dirs_.push_back(std::move(d));
      add_entry(idx, make_entry(dot, kAttrDirectory, dirs_[idx].clusters.front(), 0, fixture_.base_time, fixture_.base_time));
      add_entry(idx, make_entry(dotdot, kAttrDirectory, dirs_[idx].parent_cluster, 0, fixture_.base_time, fixture_.base_time));
      cur = idx;
    }
    return cur;
  }

  void add_label() {
    std::array<std::uint8_t, 11> n{};
    n.fill(' ');
    for (std::size_t i = 0; i < spec_.label.size() && i < 11; ++i) {
      n[i] = static_cast<std::uint8_t>(std::toupper(static_cast<unsigned char>(spec_.label[i])));
    }
    add_entry(0, make_entry(n, kAttrVolumeId, 0, 0, fixture_.base_time, fixture_.base_time));
  }

  std::string normalize(const std::string& path) const {
    std::string out;
    for (const auto& part : split_path(path)) out += "/" + part;
    return out;
  }

  void create_file(const FileSpec& f, std::int64_t created, std::int64_t modified) {
    const std::string path = normalize(f.path);
    if (by_path_.count(path)) bad_spec("duplicate file path '" + path + "'");
    if (f.size > 0xFFFFFFFFull) bad_spec(path + ": files are limited to 4 GiB - 1");
    const auto parts = split_path(path);
    const std::size_t dir = ensure_dir(parts, parts.size() - 1);
    if (dirs_[dir].subdirs.count(parts.back())) bad_spec("'" + path + "' is a directory");

    const Bytes content = f.content ? Bytes(f.content->begin(), f.content->end()) : generate_content(f.size, f.seed);
    FileRec rec;
    rec.dir = dir;
    rec.size = content.size();
    rec.created = created;
    rec.modified = modified;
    rec.digest = content_hash(content);
    const std::uint64_t cs = layout_.cluster_size();
    const std::uint64_t n = (rec.size + cs - 1) / cs;
    if (n > 0) rec.chain = allocate(n, f.fragmented, f.clusters, path);
    write_content(rec.chain, content);

    auto [sn, lfn] = add_name(dir, parts.back());
    rec.lfn_count = lfn;
    rec.entry = add_entry(dir, make_entry(sn, kAttrArchive, rec.chain.empty() ? 0 : rec.chain.front(),
                                          static_cast<std::uint32_t>(rec.size), created, modified));
    by_path_[path] = files_.size();
    files_.push_back(std::move(rec));
  }

  void delete_file(const std::string& raw_path) {
    const std::string path = normalize(raw_path);
    auto it = by_path_.find(path);
    if (it == by_path_.end()) bad_spec("delete of unknown file '" + path + "'");
    FileRec& rec = files_[it->second];
    Dir& d = dirs_[rec.dir];
    for (std::size_t k = rec.entry - rec.lfn_count; k <= rec.entry; ++k) d.entries[k][0] = kDeletedMarker;
    free_chain(rec.chain);
    by_path_.erase(it);
  }

  void modify_file(const ModifySpec& m, std::int64_t when) {
    const std::string path = normalize(m.path);
    auto it = by_path_.find(path);
    if (it == by_path_.end()) bad_spec("modify of unknown file '" + path + "'");
    FileRec& rec = files_[it->second];
    const std::uint64_t size = m.size.value_or(rec.size);
    Bytes content = generate_content(size, m.seed);
    if (content == generate_content(rec.size, 0) && m.seed == 0) content.assign(content.size(), 0xA5);
    const std::uint64_t cs = layout_.cluster_size();
    const std::uint64_t n = (size + cs - 1) / cs;
    if (n != rec.chain.size()) {
      free_chain(rec.chain);
      rec.chain = n > 0 ? allocate(n, false, {}, path) : std::vector<std::uint32_t>{};
    }
    write_content(rec.chain, content);
    rec.size = size;
    rec.modified = when;
    rec.digest = content_hash(content);
    auto& e = dirs_[rec.dir].entries[rec.entry];
    const std::uint32_t first = rec.chain.empty() ? 0 : rec.chain.front();
    const DosTime t = unix_to_dos(when);
    put16(e, 20, variant32() ? first >> 16 : 0);
    put16(e, 22, t.time);
    put16(e, 24, t.date);
    put16(e, 18, t.date);
    put16(e, 26, first & 0xFFFF);
    put32(e, 28, static_cast<std::uint32_t>(size));
  }

  void flush_metadata() {
    const Layout& l = layout_;
    // Boot sector.
    Bytes boot(l.bps, 0);
    boot[0] = 0xEB;
    boot[1] = variant32() ? 0x58 : 0x3C;
    boot[2] = 0x90;
    std::memcpy(boot.data() + 3, "DEDUPACQ", 8);
    put16(boot, 11, l.bps);
    boot[13] = static_cast<std::uint8_t>(l.spc);
    put16(boot, 14, l.reserved);
    boot[16] = static_cast<std::uint8_t>(l.fat_count);
    put16(boot, 17, l.root_entries);
    if (l.total_sectors < 0x10000 && !variant32()) {
      put16(boot, 19, static_cast<std::uint32_t>(l.total_sectors));
    } else {
      put32(boot, 32, static_cast<std::uint32_t>(l.total_sectors));
    }
    boot[21] = 0xF8;
    put16(boot, 24, 63);
    put16(boot, 26, 255);
    put32(boot, 28, static_cast<std::uint32_t>(spec_.start_lba));
    const std::uint32_t volume_id = static_cast<std::uint32_t>(mix(fixture_.seed, slot_));
    std::array<std::uint8_t, 11> label{};
    label.fill(' ');
    for (std::size_t i = 0; i < spec_.label.size() && i < 11; ++i) {
      label[i] = static_cast<std::uint8_t>(std::toupper(static_cast<unsigned char>(spec_.label[i])));
    }
    if (variant32()) {
      put32(boot, 36, l.spf);
      put32(boot, 44, dirs_[0].clusters.front());
      put16(boot, 48, 1);
      put16(boot, 50, 6);
      boot[64] = 0x80;
      boot[66] = 0x29;
      put32(boot, 67, volume_id);
      std::copy(label.begin(), label.end(), boot.begin() + 71);
      std::memcpy(boot.data() + 82, "FAT32   ", 8);
    } else {
      put16(boot, 22, l.spf);
      boot[36] = 0x80;
      boot[38] = 0x29;
      put32(boot, 39, volume_id);
      std::copy(label.begin(), label.end(), boot.begin() + 43);
      std::memcpy(boot.data() + 54, "FAT16   ", 8);
    }
    boot[510] = 0x55;
    boot[511] = 0xAA;
    out_.write_at(l.volume_offset, boot);

    if (variant32()) {
      Bytes info(l.bps, 0);
      put32(info, 0, 0x41615252);
      put32(info, 484, 0x61417272);
      std::uint32_t free_count = 0;
      for (std::size_t c = 2; c < fat_.size(); ++c) free_count += fat_[c] == 0;
      put32(info, 488, free_count);
      put32(info, 492, cursor_);
      put32(info, 508, 0xAA550000);
      out_.write_at(l.volume_offset + l.bps, info);
      out_.write_at(l.volume_offset + 6ull * l.bps, boot);
      out_.write_at(l.volume_offset + 7ull * l.bps, info);
    }

    const std::uint64_t entry_bytes = variant32() ? 4 : 2;
    Bytes table(static_cast<std::size_t>(std::uint64_t{l.spf} * l.bps), 0);
    for (std::size_t c = 0; c < fat_.size(); ++c) {
      if (variant32()) {
        put32(table, c * entry_bytes, fat_[c]);
      } else {
        put16(table, c * entry_bytes, fat_[c]);
      }
    }
    for (std::uint32_t i = 0; i < l.fat_count; ++i) out_.write_at(l.fat_offset(i), table);

    for (std::size_t di = 0; di < dirs_.size(); ++di) {
      const Dir& d = dirs_[di];
      Bytes raw(d.entries.size() * 32);
      for (std::size_t k = 0; k < d.entries.size(); ++k) std::copy(d.entries[k].begin(), d.entries[k].end(), raw.begin() + k * 32);
      if (di == 0 && !variant32()) {
        if (!raw.empty()) out_.write_at(l.root_dir_offset(), raw);
      } else {
        write_content(d.clusters, raw);
      }
    }
  }

  const PartitionSpec& spec_;
  std::uint32_t slot_;
  const FixtureSpec& fixture_;
  WritableImage& out_;
  Layout layout_;
  std::vector<std::uint32_t> fat_;
  std::uint32_t cursor_ = 2;
  std::vector<Dir> dirs_;
  std::vector<FileRec> files_;
  std::map<std::string, std::size_t> by_path_;
};

}  // namespace

FixtureSpec parse_spec(std::string_view json_text) {
  try {
    const json j = json::parse(json_text);
    check_keys(j, {"image_size", "seed", "base_time", "partitions"}, "fixture");
    FixtureSpec s;
    s.image_size = j.value("image_size", std::uint64_t{0});
    s.seed = j.value("seed", std::uint64_t{1});
    s.base_time = j.value("base_time", s.base_time);
    for (const json& p : j.at("partitions")) s.partitions.push_back(parse_partition(p));
    if (s.partitions.empty() || s.partitions.size() > 4) bad_spec("fixture needs 1..4 partitions");
    return s;
  } catch (const json::exception& e) {
    bad_spec(std::string("fixture JSON: ") + e.what());
  }
}

FixtureSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open fixture spec '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_spec(buf.str());
}

std::uint64_t image_size_of(const FixtureSpec& spec) {
  std::uint64_t end = 0;
  for (const auto& p : spec.partitions) end = std::max(end, p.start_lba * fat::kMbrSectorSize + p.size);
  return spec.image_size != 0 ? spec.image_size : end;
}

Bytes generate_content(std::uint64_t size, std::uint64_t seed) {
  Bytes out(static_cast<std::size_t>(size));
  std::mt19937_64 rng(mix(seed, size));
  std::size_t i = 0;
  for (; i + 8 <= out.size(); i += 8) {
    const std::uint64_t v = rng();
    std::memcpy(out.data() + i, &v, 8);
  }
  if (i < out.size()) {
    const std::uint64_t v = rng();
    std::memcpy(out.data() + i, &v, out.size() - i);
  }
  return out;
}

GroundTruth build_image(const FixtureSpec& spec, WritableImage& out) {
  const std::uint64_t size = image_size_of(spec);
  if (out.size() != size) bad_spec("output image size does not match spec");
  if (spec.partitions.empty() || spec.partitions.size() > 4) bad_spec("fixture needs 1..4 partitions");

  GroundTruth truth;
  truth.image_size = size;
  Bytes mbr(512, 0);
  put32(mbr, 440, static_cast<std::uint32_t>(mix(spec.seed, 0xD15C)));
  for (std::size_t i = 0; i < spec.partitions.size(); ++i) {
    const PartitionSpec& p = spec.partitions[i];
    if (p.start_lba == 0) bad_spec("partition start_lba must be > 0");
    if (p.start_lba * fat::kMbrSectorSize + p.size > size) bad_spec("partition extends past image end");
    for (std::size_t k = 0; k < i; ++k) {
      const auto& q = spec.partitions[k];
      const std::uint64_t a0 = p.start_lba * 512, a1 = a0 + p.size, b0 = q.start_lba * 512, b1 = b0 + q.size;
      if (a0 < b1 && b0 < a1) bad_spec("partitions overlap");
    }
    fat::PartitionEntry e;
    e.index = static_cast<std::uint32_t>(i);
    e.type_code = p.type_code.value_or(p.variant == Variant::Fat32 ? 0x0C : 0x0E);
    e.start_lba = p.start_lba;
    e.sector_count = p.size / fat::kMbrSectorSize;
    e.bootable = p.bootable;
    const std::size_t at = 446 + 16 * i;
    mbr[at] = p.bootable ? 0x80 : 0x00;
    mbr[at + 1] = 0xFE;
    mbr[at + 2] = 0xFF;
    mbr[at + 3] = 0xFF;
    mbr[at + 4] = e.type_code;
    mbr[at + 5] = 0xFE;
    mbr[at + 6] = 0xFF;
    mbr[at + 7] = 0xFF;
    put32(mbr, at + 8, static_cast<std::uint32_t>(e.start_lba));
    put32(mbr, at + 12, static_cast<std::uint32_t>(e.sector_count));
    truth.partitions.push_back(e);
  }
  mbr[510] = 0x55;
  mbr[511] = 0xAA;
  out.write_at(0, mbr);

  std::size_t counter = 0;
  for (std::size_t i = 0; i < spec.partitions.size(); ++i) {
    VolumeWriter(spec.partitions[i], static_cast<std::uint32_t>(i), spec, out).run(truth, counter);
  }
  return truth;
}

BuiltImage build_in_memory(const FixtureSpec& spec) {
  BuiltImage b;
  b.image = std::make_unique<SparseImage>(image_size_of(spec));
  b.truth = build_image(spec, *b.image);
  return b;
}

GroundTruth build_file(const FixtureSpec& spec, const std::filesystem::path& path) {
  FileImage out(path, image_size_of(spec));
  return build_image(spec, out);
}

}  // namespace dedupacq::fixture

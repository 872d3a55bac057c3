// dedupacq: acquisition client, evidence-store server and operator tools.

#include <signal.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dedupacq/acquisition.hpp"
#include "dedupacq/fixture.hpp"
#include "dedupacq/net.hpp"
#include "dedupacq/reconstruction.hpp"
#include "dedupacq/report.hpp"
#include "dedupacq/repository.hpp"
#include "dedupacq/store.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace dedupacq;

namespace {

constexpr int kOk = 0;
constexpr int kOperational = 1;
constexpr int kUsage = 2;
constexpr int kVerification = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised after the report has already gone to stderr.
struct VerificationFailure {
  std::string text;
};

struct Location {
  std::optional<fs::path> root;
  std::optional<std::string> server;
  std::string source;
};

struct Globals {
  std::string root;
  std::string server;
  std::string format = "table";
  std::string config;
  int verbose = 0;
};

Globals g;
Location config_location;

void log(int level, const std::string& msg) {
  if (g.verbose >= level) std::cerr << msg << '\n';
}

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

Location pick(std::optional<std::string> root, std::optional<std::string> server, const std::string& source) {
  if (root && server) throw UsageError("both a store root and a server endpoint given (" + source + ")");
  Location l;
  if (root) l.root = fs::path(*root);
  l.server = server;
  l.source = source;
  return l;
}

// Flags, then DEDUPACQ_ROOT / DEDUPACQ_SERVER, then the config file; the
// first layer naming a location wins.
Location resolve_location() {
  auto nonempty = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<std::string>(s); };
  if (!g.root.empty() || !g.server.empty()) return pick(nonempty(g.root), nonempty(g.server), "flags");
  if (env("DEDUPACQ_ROOT") || env("DEDUPACQ_SERVER"))
    return pick(env("DEDUPACQ_ROOT"), env("DEDUPACQ_SERVER"), "environment");
  if (config_location.root || config_location.server) return config_location;
  throw UsageError("no evidence store given: use --root DIR or --server ADDR");
}

fs::path require_root(const char* command) {
  const Location l = resolve_location();
  if (!l.root) throw UsageError(std::string(command) + " needs direct store access (--root DIR)");
  return *l.root;
}

struct Target {
  std::unique_ptr<EvidenceStore> store;
  std::unique_ptr<Repository> repo;
};

Target open_target(std::size_t connections = 4) {
  const Location l = resolve_location();
  Target t;
  if (l.root) {
    t.store = std::make_unique<EvidenceStore>(*l.root);
    t.repo = std::make_unique<LocalRepository>(*t.store);
  } else {
    t.repo = std::make_unique<RemoteRepository>(net::Endpoint::parse(*l.server), net::ClientOptions{}, connections);
  }
  log(1, "store: " + t.repo->describe());
  return t;
}

report::Format fmt() { return report::parse_format(g.format); }

// Pulls "--config FILE" out of argv ahead of the real parse so its values
// can become option defaults.
std::optional<std::string> prescan_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return std::nullopt;
}

std::string scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return v.dump();
  throw UsageError("config values must be strings, numbers or booleans");
}

// Keys are long flag names without dashes; "root" and "server" feed the
// location resolver instead of the flags.
void apply_config(CLI::App& app, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw UsageError("config file must hold a JSON object");
  std::optional<std::string> root, server;
  for (const auto& [key, value] : doc.items()) {
    if (key == "root") {
      root = scalar_text(value);
      continue;
    }
    if (key == "server") {
      server = scalar_text(value);
      continue;
    }
    if (key == "config") continue;
    const std::string text = scalar_text(value);
    bool known = false;
    std::vector<CLI::App*> apps{&app};
    for (CLI::App* sub : app.get_subcommands([](CLI::App*) { return true; })) apps.push_back(sub);
    for (CLI::App* a : apps) {
      CLI::Option* opt = a->get_option_no_throw("--" + key);
      if (!opt) continue;
      known = true;
      try {
        opt->default_val(text);
      } catch (const CLI::Error& e) {
        throw UsageError("config key '" + key + "': " + e.what());
      }
    }
    if (!known) throw UsageError("unknown config key '" + key + "'");
  }
  config_location = pick(root, server, "config file");
}

void emit(const std::string& text) {
  std::cout << text;
  std::cout.flush();
}

// ---- subcommands ----

struct AcquireArgs {
  std::string image, case_id, investigator_id, disk_id;
  bool no_fuzzy = false;
  std::size_t hash_workers = 0, upload_workers = 4, check_batch = 512, connections = 4;
  std::uint64_t max_artifact_size = fat::kDefaultMaxArtifactSize, memory_budget = 512ull << 20;
  std::int64_t acquired_at = -1;
};

AcquisitionConfig make_config(const AcquireArgs& a) {
  AcquisitionConfig c;
  c.case_id = a.case_id;
  c.investigator_id = a.investigator_id;
  c.disk_id = a.disk_id;
  c.compute_fuzzy = !a.no_fuzzy;
  if (a.hash_workers) c.hash_workers = a.hash_workers;
  c.upload_workers = a.upload_workers;
  c.check_batch = a.check_batch;
  c.max_artifact_size = a.max_artifact_size;
  c.memory_budget = a.memory_budget;
  if (a.acquired_at >= 0) c.acquired_at = a.acquired_at;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

int cmd_acquire(const AcquireArgs& a) {
  for (const auto& [name, v] : {std::pair{"--case-id", &a.case_id}, std::pair{"--investigator-id", &a.investigator_id},
                                std::pair{"--disk-id", &a.disk_id}}) {
    if (v->empty()) throw UsageError(std::string(name) + " is required");
  }
  const AcquisitionConfig cfg = make_config(a);
  Target t = open_target(a.connections);
  const AcquisitionReport r = acquire(fs::path(a.image), *t.repo, cfg);
  emit(report::render(r, fmt()));
  return kOk;
}

struct ReconstructArgs {
  std::string manifest_id, out;
  bool no_sparse = false;
  std::size_t fetch_workers = 4;
};

int cmd_reconstruct(const ReconstructArgs& a) {
  Target t = open_target(a.fetch_workers);
  ReconstructOptions o;
  o.sparse = !a.no_sparse;
  o.fetch_workers = a.fetch_workers;
  const ReconstructionReport r = reconstruct(*t.repo, a.manifest_id, fs::path(a.out), o);
  emit(report::render(r, fmt()));
  return kOk;
}

struct VerifyArgs {
  std::string image, manifest_id;
  std::size_t spot_check = 0;
  std::uint64_t seed = 0;
};

int cmd_verify(const VerifyArgs& a) {
  Target t = open_target();
  const Manifest m = t.repo->get_manifest(a.manifest_id);
  const VerifyResult v = verify_image(fs::path(a.image), m, a.spot_check, a.seed);
  const std::string text = report::render(v, m, fmt());
  if (!v.passed()) throw VerificationFailure{text};
  emit(text);
  return kOk;
}

struct ExtractArgs {
  std::string manifest_id, path, digest, out;
};

int cmd_extract(const ExtractArgs& a) {
  if (a.path.empty() == a.digest.empty()) throw UsageError("give exactly one of --path or --digest");
  ArtifactSelector sel;
  if (!a.path.empty()) sel.path = a.path;
  if (!a.digest.empty()) {
    try {
      sel.digest = Digest::from_hex(a.digest);
    } catch (const std::exception&) {
      throw UsageError("--digest must be 64 hex characters");
    }
  }
  Target t = open_target();
  const Manifest m = t.repo->get_manifest(a.manifest_id);
  const ExtractReport r = extract_artifact(*t.repo, m, sel, fs::path(a.out));
  emit(report::render(r, fmt()));
  return kOk;
}

struct InspectArgs {
  std::string image;
  bool artifacts = false, no_fuzzy = false;
};

int cmd_inspect(const InspectArgs& a) {
  AcquisitionConfig cfg;
  cfg.compute_fuzzy = !a.no_fuzzy;
  const InspectReport r = inspect(fs::path(a.image), cfg);
  emit(report::render(r, fmt(), a.artifacts));
  return kOk;
}

int cmd_stats() {
  Target t = open_target(1);
  emit(report::render(t.repo->stats(), fmt()));
  return kOk;
}

int cmd_dupes(const std::string& hex) {
  Digest d;
  try {
    d = Digest::from_hex(hex);
  } catch (const std::exception&) {
    throw UsageError("DIGEST must be 64 hex characters");
  }
  EvidenceStore store(require_root("dupes"));
  emit(report::render_dupes(d, store.query_duplicates(d), fmt()));
  return kOk;
}

int cmd_audit() {
  EvidenceStore store(require_root("audit"));
  const AuditReport r = store.audit();
  const std::string text = report::render(r, fmt());
  if (!r.ok()) throw VerificationFailure{text};
  emit(text);
  return kOk;
}

struct MkimageArgs {
  std::string spec, out, truth;
};

int cmd_mkimage(const MkimageArgs& a) {
  const fixture::FixtureSpec spec = fixture::load_spec(fs::path(a.spec));
  const fixture::GroundTruth truth = fixture::build_file(spec, fs::path(a.out));
  if (!a.truth.empty()) {
    const std::string doc = report::render_mkimage(truth, a.out, report::Format::Json);
    std::ofstream f(a.truth, std::ios::binary | std::ios::trunc);
    f << doc;
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + a.truth);
  }
  emit(report::render_mkimage(truth, a.out, fmt()));
  return kOk;
}

struct BenchArgs {
  std::string image, work_dir;
  int reps = 1;
  double throttle_mbps = 0;
  bool local = false, no_fuzzy = false;
};

int cmd_bench(const BenchArgs& a) {
  if (a.reps < 1) throw UsageError("--reps must be at least 1");
  if (a.throttle_mbps < 0) throw UsageError("--throttle-mbps must be non-negative");
  AcquisitionConfig cfg;
  cfg.case_id = "bench";
  cfg.investigator_id = "bench";
  cfg.disk_id = fs::path(a.image).filename().string();
  cfg.compute_fuzzy = !a.no_fuzzy;
  BenchmarkOptions o;
  o.repetitions = a.reps;
  o.via_network = !a.local;
  o.throttle_bytes_per_sec = a.throttle_mbps * 1e6 / 8;
  if (!a.work_dir.empty()) o.work_dir = a.work_dir;
  const BenchmarkReport r = benchmark(fs::path(a.image), cfg, o);
  emit(report::render(r, fmt()));
  return kOk;
}

int cmd_serve(const std::string& listen) {
  const fs::path root = require_root("serve");
  const net::Endpoint ep = net::Endpoint::parse(listen);
  // Block the stop signals before any thread starts so only sigwait sees them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  signal(SIGPIPE, SIG_IGN);

  EvidenceStore store(root);
  net::Server server(store, ep);
  server.start();
  if (fmt() == report::Format::Json) {
    emit(nlohmann::ordered_json{{"schema", "dedupacq.serve/1"},
                                {"root", root.string()},
                                {"host", ep.host},
                                {"port", server.port()}}
             .dump() +
         "\n");
  } else {
    emit("listening on " + ep.host + ":" + std::to_string(server.port()) + " root " + root.string() + "\n");
  }
  int sig = 0;
  sigwait(&set, &sig);
  log(1, "signal " + std::to_string(sig) + ", shutting down");
  server.stop();
  log(1, "served " + std::to_string(server.sessions()) + " session(s)");
  return kOk;
}

void print_error(const Error& e) {
  std::cerr << "dedupacq: " << e.what() << '\n';
  for (const auto& d : e.details()) std::cerr << "  " << d << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deduplicated forensic disk acquisition"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");
  app.add_option("--root", g.root, "Evidence store directory (env DEDUPACQ_ROOT)");
  app.add_option("--server", g.server, "Evidence store server HOST:PORT (env DEDUPACQ_SERVER)");
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"table", "json"}));
  app.add_option("--config", g.config, "JSON config file; keys are long flag names");
  app.add_flag("-v,--verbose", g.verbose, "Progress on stderr (repeat for more)");
  // Global options are accepted after the subcommand name too.
  app.fallthrough();

  std::string listen = "0.0.0.0:7311";
  auto* serve = app.add_subcommand("serve", "Run the evidence store server");
  serve->add_option("--listen", listen, "HOST:PORT to listen on");

  AcquireArgs acq;
  auto* acquire_cmd = app.add_subcommand("acquire", "Acquire a raw image into the store");
  acquire_cmd->add_option("IMAGE", acq.image)->required()->check(CLI::ExistingFile);
  acquire_cmd->add_option("--case-id", acq.case_id);
  acquire_cmd->add_option("--investigator-id", acq.investigator_id);
  acquire_cmd->add_option("--disk-id", acq.disk_id);
  acquire_cmd->add_flag("--no-fuzzy", acq.no_fuzzy, "Skip fuzzy hashes");
  acquire_cmd->add_option("--hash-workers", acq.hash_workers, "Hash threads (default: all cores)");
  acquire_cmd->add_option("--upload-workers", acq.upload_workers);
  acquire_cmd->add_option("--check-batch", acq.check_batch, "Digests per CHECK (1..512)");
  acquire_cmd->add_option("--connections", acq.connections, "Parallel server connections");
  acquire_cmd->add_option("--max-artifact-size", acq.max_artifact_size);
  acquire_cmd->add_option("--memory-budget", acq.memory_budget, "Bytes of artifact data in flight");
  acquire_cmd->add_option("--acquired-at", acq.acquired_at, "Unix time recorded in the manifest");

  ReconstructArgs rec;
  auto* reconstruct_cmd = app.add_subcommand("reconstruct", "Rebuild an image from a manifest");
  reconstruct_cmd->add_option("MANIFEST_ID", rec.manifest_id)->required();
  reconstruct_cmd->add_option("--out", rec.out)->required();
  reconstruct_cmd->add_flag("--no-sparse", rec.no_sparse, "Zero-fill instead of leaving holes");
  reconstruct_cmd->add_option("--fetch-workers", rec.fetch_workers)->check(CLI::PositiveNumber);

  VerifyArgs ver;
  auto* verify_cmd = app.add_subcommand("verify", "Check an image against a manifest");
  verify_cmd->add_option("IMAGE", ver.image)->required();
  verify_cmd->add_option("--manifest-id", ver.manifest_id)->required();
  verify_cmd->add_option("--spot-check", ver.spot_check, "Also re-hash N random artifacts");
  verify_cmd->add_option("--seed", ver.seed);

  ExtractArgs ext;
  auto* extract_cmd = app.add_subcommand("extract", "Write one artifact out of the store");
  extract_cmd->add_option("MANIFEST_ID", ext.manifest_id)->required();
  extract_cmd->add_option("--path", ext.path, "/PATH or pN:/PATH");
  extract_cmd->add_option("--digest", ext.digest);
  extract_cmd->add_option("--out", ext.out)->required();

  InspectArgs ins;
  auto* inspect_cmd = app.add_subcommand("inspect", "Parse an image without storing anything");
  inspect_cmd->add_option("IMAGE", ins.image)->required()->check(CLI::ExistingFile);
  inspect_cmd->add_flag("--artifacts", ins.artifacts, "List every artifact");
  inspect_cmd->add_flag("--no-fuzzy", ins.no_fuzzy);

  auto* stats_cmd = app.add_subcommand("stats", "Store totals");

  std::string dupes_digest;
  auto* dupes_cmd = app.add_subcommand("dupes", "Where a digest occurs across manifests");
  dupes_cmd->add_option("DIGEST", dupes_digest)->required();

  auto* audit_cmd = app.add_subcommand("audit", "Re-hash every blob and check every manifest");

  MkimageArgs mk;
  auto* mkimage_cmd = app.add_subcommand("mkimage", "Build a test image from a fixture spec");
  mkimage_cmd->add_option("SPEC", mk.spec)->required()->check(CLI::ExistingFile);
  mkimage_cmd->add_option("--out", mk.out)->required();
  mkimage_cmd->add_option("--truth", mk.truth, "Also write the ground truth as JSON");

  BenchArgs bn;
  auto* bench_cmd = app.add_subcommand("bench", "Initial vs re-acquisition timing");
  bench_cmd->add_option("IMAGE", bn.image)->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--reps", bn.reps);
  bench_cmd->add_option("--throttle-mbps", bn.throttle_mbps, "Client link rate in Mbit/s");
  bench_cmd->add_flag("--local", bn.local, "Direct store instead of loopback server");
  bench_cmd->add_flag("--no-fuzzy", bn.no_fuzzy);
  bench_cmd->add_option("--work-dir", bn.work_dir, "Where scratch stores are created");

  try {
    if (auto cfg = prescan_config(argc, argv)) apply_config(app, *cfg);
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    std::cerr << app.help();
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "dedupacq: " << e.what() << '\n' << app.help();
    return kUsage;
  }

  try {
    if (*serve) return cmd_serve(listen);
    if (*acquire_cmd) return cmd_acquire(acq);
    if (*reconstruct_cmd) return cmd_reconstruct(rec);
    if (*verify_cmd) return cmd_verify(ver);
    if (*extract_cmd) return cmd_extract(ext);
    if (*inspect_cmd) return cmd_inspect(ins);
    if (*stats_cmd) return cmd_stats();
    if (*dupes_cmd) return cmd_dupes(dupes_digest);
    if (*audit_cmd) return cmd_audit();
    if (*mkimage_cmd) return cmd_mkimage(mk);
    if (*bench_cmd) return cmd_bench(bn);
  } catch (const UsageError& e) {
    std::cerr << "dedupacq: " << e.what() << '\n' << app.help();
    return kUsage;
  } catch (const VerificationFailure& f) {
    std::cerr << f.text;
    return kVerification;
  } catch (const Error& e) {
    print_error(e);
    return e.code() == ErrorCode::VerificationFailed ? kVerification : kOperational;
  } catch (const std::exception& e) {
    std::cerr << "dedupacq: " << e.what() << '\n';
    return kOperational;
  }
  return kUsage;
}

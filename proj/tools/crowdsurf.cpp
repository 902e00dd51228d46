/*
Copyright (C) 2026 The crowdsurf authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

// crowdsurf: trace-driven HTTP auditing toolkit.
//
// Subcommands: validate, apply, detect, estimate, simulate, serve, report.
// Exit codes: 0 success, 1 domain/validation error, 2 I/O error, 3 usage.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "crowdsurf/anonymize.hpp"
#include "crowdsurf/collector.hpp"
#include "crowdsurf/collector_http.hpp"
#include "crowdsurf/detector.hpp"
#include "crowdsurf/feasibility.hpp"
#include "crowdsurf/reporter.hpp"
#include "crowdsurf/rules.hpp"
#include "crowdsurf/trace.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitIo = 2;
constexpr int kExitUsage = 3;

struct GlobalOpts {
  std::string format = "tsv";
  std::optional<std::uint64_t> seed;
  bool quiet = false;

  bool json() const { return format == "json"; }

  std::uint64_t seed_or_random() const {
    if (seed) return *seed;
    return std::random_device{}();
  }
};

bool test_mode() {
  const char* v = std::getenv("CROWDSURF_TEST");
  return v && std::string_view(v) == "1";
}

void note(const GlobalOpts& g, const std::string& msg) {
  if (!g.quiet) std::cerr << msg << '\n';
}

crowdsurf::CollectorService* g_service = nullptr;

void handle_signal(int) {
  if (g_service) g_service->stop();
}

int run_validate(const GlobalOpts& g, const std::string& trace_path) {
  auto v = crowdsurf::validate_trace(trace_path);
  if (g.json()) {
    nlohmann::json errors = nlohmann::json::array();
    for (const auto& [line, msg] : v.errors)
      errors.push_back({{"line", line}, {"message", msg}});
    std::cout << nlohmann::json{{"records", v.records}, {"errors", errors}}.dump() << '\n';
  } else {
    for (const auto& [line, msg] : v.errors) std::cerr << msg << '\n';
    std::cout << v.records << " records\n";
  }
  return v.errors.empty() ? kExitOk : kExitDomain;
}

int run_apply(const GlobalOpts& g, const std::string& profile_name,
              const std::string& rules_path, const std::string& lists_dir,
              const std::string& trace_path, const std::string& output_path) {
  crowdsurf::RuleSet rs;
  std::optional<crowdsurf::ListBundle> bundle;
  if (!lists_dir.empty()) bundle = crowdsurf::ListBundle::load_dir(lists_dir);
  if (!profile_name.empty()) {
    auto profile = crowdsurf::profile_from_name(profile_name);
    if (!profile) {
      std::cerr << "unknown profile '" << profile_name << "'\n";
      return kExitUsage;
    }
    if (!bundle) {
      std::cerr << "--profile requires --lists DIR\n";
      return kExitUsage;
    }
    rs = crowdsurf::load_profile(*profile, *bundle);
  } else {
    rs = crowdsurf::compile_ruleset_file(rules_path, bundle ? &*bundle : nullptr);
  }

  auto trace = crowdsurf::read_trace(trace_path);
  auto result = crowdsurf::apply_to_trace(rs, trace);

  if (!output_path.empty()) {
    std::ofstream out(output_path, std::ios::binary);
    if (!out) throw crowdsurf::IoError("cannot write " + output_path);
    for (const auto& o : result.outcomes) {
      std::string ids;
      for (const auto& id : o.matched_rule_ids) {
        if (!ids.empty()) ids += ',';
        ids += id;
      }
      out << fmt::format("{}\t{}\t{}\t{}\n", crowdsurf::disposition_name(o.disposition),
                         o.reported ? 1 : 0, ids,
                         crowdsurf::serialize_record(o.effective_record));
    }
  }

  const auto& c = result.counts;
  if (g.json()) {
    std::cout << nlohmann::json{{"allowed", c.allowed},     {"blocked", c.blocked},
                                {"redirected", c.redirected}, {"modified", c.modified},
                                {"reported", c.reported},   {"total", c.total}}
                     .dump()
              << '\n';
  } else {
    std::cout << fmt::format(
        "allowed={} blocked={} redirected={} modified={} reported={} total={}\n", c.allowed,
        c.blocked, c.redirected, c.modified, c.reported, c.total);
  }
  return kExitOk;
}

int run_detect(const GlobalOpts& g, const std::string& trace_path, const std::string& target,
               std::size_t min_support, const std::string& mode_name,
               const std::string& output_path, const std::string& prevalence_list) {
  auto trace = crowdsurf::read_trace(trace_path);

  if (!prevalence_list.empty()) {
    std::ifstream in(prevalence_list);
    if (!in) throw crowdsurf::IoError("cannot open " + prevalence_list);
    std::vector<std::string> trackers;
    std::string line;
    while (std::getline(in, line)) {
      auto t = crowdsurf::trim(line);
      if (t.empty() || t.front() == '#') continue;
      trackers.push_back(crowdsurf::to_lower(t));
    }
    auto entries = crowdsurf::prevalence(trace, trackers);
    if (g.json()) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& e : entries)
        arr.push_back({{"hostname", e.hostname}, {"users", e.users}, {"fraction", e.fraction}});
      std::cout << arr.dump() << '\n';
    } else {
      for (const auto& e : entries)
        std::cout << fmt::format("{}\t{}\t{:.6f}\n", e.hostname, e.users, e.fraction);
    }
    return kExitOk;
  }

  if (target.empty()) {
    std::cerr << "detect requires --target (or --prevalence)\n";
    return kExitUsage;
  }
  crowdsurf::DetectMode mode = crowdsurf::DetectMode::Strict;
  if (mode_name == "literal") mode = crowdsurf::DetectMode::Literal;
  else if (mode_name != "strict") {
    std::cerr << "unknown mode '" << mode_name << "'\n";
    return kExitUsage;
  }
  auto findings = crowdsurf::detect_from_trace(trace, crowdsurf::to_lower(target), min_support,
                                               mode);
  std::string body = g.json() ? crowdsurf::findings_to_json(findings).dump() + "\n"
                              : crowdsurf::findings_to_tsv(findings);
  if (!output_path.empty()) {
    std::ofstream out(output_path, std::ios::binary);
    if (!out) throw crowdsurf::IoError("cannot write " + output_path);
    out << body;
  } else {
    std::cout << body;
  }
  note(g, fmt::format("{} findings", findings.size()));
  return kExitOk;
}

int run_estimate(const GlobalOpts& g, std::uint64_t n, std::uint64_t k) {
  double ev = crowdsurf::expected_visits({n, k});
  if (g.json()) {
    std::cout << nlohmann::json{{"n", n}, {"k", k}, {"expected_visits", ev}}.dump() << '\n';
  } else {
    std::cout << fmt::format("{:.17g}\n", ev);
  }
  note(g, "asymptotic expectation (O(N) remainder dropped), not an exact count");
  return kExitOk;
}

struct SimulateOpts {
  std::string spec_path;
  std::string out_path;
  std::uint64_t hosts = 1000;
  std::uint64_t users = 100;
  double rate = 10.0;
  double duration = 3600.0;
  double zipf_s = 1.0343;  // top-10k of 50k hostnames draw 88.13% of visits
  bool collect = false;
  std::string trace_path;
  std::size_t top_n = 100;
  std::uint64_t k = 100;
  double ratio = 0.1;
  std::uint32_t runs = 12;
  std::string collect_output;
};

// key=value spec file for simulate; flags given on the command line win.
void apply_spec_file(SimulateOpts& o, const CLI::App& cmd) {
  std::ifstream in(o.spec_path);
  if (!in) throw crowdsurf::IoError("cannot open " + o.spec_path);
  auto given = [&](const std::string& flag) { return cmd.count(flag) > 0; };
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    std::string_view t = crowdsurf::trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string_view::npos)
      throw crowdsurf::DomainError(fmt::format("{}:{}: expected key=value", o.spec_path,
                                               line_number));
    std::string key(crowdsurf::trim(t.substr(0, eq)));
    std::string value(crowdsurf::trim(t.substr(eq + 1)));
    try {
      if (key == "out") {
        if (!given("--out")) o.out_path = value;
      } else if (key == "hosts") {
        if (!given("--hosts")) o.hosts = std::stoull(value);
      } else if (key == "users") {
        if (!given("--users")) o.users = std::stoull(value);
      } else if (key == "rate") {
        if (!given("--rate")) o.rate = std::stod(value);
      } else if (key == "duration") {
        if (!given("--duration")) o.duration = std::stod(value);
      } else if (key == "zipf-s" || key == "zipf_s") {
        if (!given("--zipf-s")) o.zipf_s = std::stod(value);
      } else if (key == "collect") {
        if (!given("--collect")) o.collect = (value == "1" || value == "true");
      } else if (key == "trace") {
        if (!given("--trace")) o.trace_path = value;
      } else if (key == "top-n" || key == "top_n") {
        if (!given("--top-n")) o.top_n = std::stoull(value);
      } else if (key == "k") {
        if (!given("--k")) o.k = std::stoull(value);
      } else if (key == "ratio") {
        if (!given("--ratio")) o.ratio = std::stod(value);
      } else if (key == "runs") {
        if (!given("--runs")) o.runs = static_cast<std::uint32_t>(std::stoul(value));
      } else if (key == "collect-output" || key == "collect_output") {
        if (!given("--collect-output")) o.collect_output = value;
      } else {
        throw crowdsurf::DomainError(fmt::format("{}:{}: unknown key '{}'", o.spec_path,
                                                 line_number, key));
      }
    } catch (const std::invalid_argument&) {
      throw crowdsurf::DomainError(fmt::format("{}:{}: bad value for '{}'", o.spec_path,
                                               line_number, key));
    }
  }
}

int run_simulate(const GlobalOpts& g, const SimulateOpts& o) {
  std::uint64_t seed = g.seed_or_random();
  std::string trace_path = o.trace_path;

  if (!o.out_path.empty()) {
    crowdsurf::ZipfTraceSpec spec{o.hosts, o.zipf_s, o.users, o.rate, o.duration, seed};
    std::size_t n = crowdsurf::generate_zipf_trace(spec, o.out_path);
    note(g, fmt::format("generated {} records -> {}", n, o.out_path));
    if (trace_path.empty()) trace_path = o.out_path;
  }

  if (!o.collect) {
    if (o.out_path.empty()) {
      std::cerr << "simulate needs --out (generate) and/or --collect\n";
      return kExitUsage;
    }
    return kExitOk;
  }

  if (trace_path.empty()) {
    std::cerr << "--collect requires --trace or --out\n";
    return kExitUsage;
  }
  auto trace = crowdsurf::read_trace(trace_path);
  auto result =
      crowdsurf::collection_time(trace, o.top_n, o.k, o.ratio, o.runs, crowdsurf::mix64(seed));
  std::string body = g.json() ? crowdsurf::collection_to_json(result).dump() + "\n"
                              : crowdsurf::collection_to_tsv(result);
  if (!o.collect_output.empty()) {
    std::ofstream out(o.collect_output, std::ios::binary);
    if (!out) throw crowdsurf::IoError("cannot write " + o.collect_output);
    out << body;
    if (!g.json())
      std::cout << fmt::format("mean_tc_s={:.3f} hostnames={} not_reached={}\n", result.mean_tc,
                               result.hostnames.size(), result.not_reached);
  } else {
    std::cout << body;
  }
  return kExitOk;
}

int run_serve(const GlobalOpts& g, const std::string& listen, double retention_days,
              std::size_t max_batch, const std::string& data_dir,
              const std::string& admin_token, double epoch_length_s) {
  auto colon = listen.rfind(':');
  if (colon == std::string::npos) {
    std::cerr << "--listen must be host:port\n";
    return kExitUsage;
  }
  std::string host = listen.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(listen.substr(colon + 1));
  } catch (...) {
    std::cerr << "bad port in --listen\n";
    return kExitUsage;
  }

  crowdsurf::CollectorConfig cfg;
  cfg.retention_seconds = retention_days * 86400.0;
  cfg.max_batch_records = max_batch;
  cfg.data_dir = data_dir;
  cfg.epoch_length = epoch_length_s;
  crowdsurf::CollectorStore store(cfg, g.seed_or_random());
  crowdsurf::CollectorService service(store, admin_token);

  g_service = &service;
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);

  note(g, fmt::format("collector listening on {}:{} (retention {:.3f} days)", host, port,
                      retention_days));
  if (!service.listen(host, port)) {
    std::cerr << "cannot listen on " << listen << '\n';
    return kExitIo;
  }
  return kExitOk;
}

int run_report(const GlobalOpts& g, const std::string& trace_path, const std::string& url,
               double ratio, std::size_t batch, const std::string& anon_rules_path,
               const std::string& via) {
  if (ratio <= 0 || ratio > 1)
    throw crowdsurf::DomainError("--ratio must be in (0, 1]");
  crowdsurf::ReportOptions opts;
  opts.ratio = ratio;
  opts.seed = g.seed_or_random();
  opts.batch_threshold = batch;
  opts.forward_via = via;
  if (!anon_rules_path.empty())
    opts.anon_rules = crowdsurf::parse_anon_rules_file(anon_rules_path);

  auto trace = crowdsurf::read_trace(trace_path);
  crowdsurf::ReportingClient client(url, opts);
  auto s = client.replay(trace);
  if (g.json()) {
    std::cout << nlohmann::json{{"records", s.records_read},   {"sampled", s.sampled},
                                {"suppressed", s.suppressed},  {"submitted", s.submitted},
                                {"batches", s.batches},        {"registrations", s.registrations}}
                     .dump()
              << '\n';
  } else {
    std::cout << fmt::format("records={} sampled={} suppressed={} submitted={} batches={} registrations={}\n",
                             s.records_read, s.sampled, s.suppressed, s.submitted, s.batches,
                             s.registrations);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crowdsurf: trace-driven HTTP auditing toolkit"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"tsv", "json"}));
  app.add_option("--seed", g.seed, "Seed for randomized commands");
  app.add_flag("--quiet", g.quiet, "Suppress informational messages");
  app.set_config("--config", "", "Optional key=value config file");

  auto* validate = app.add_subcommand("validate", "Parse a trace and report malformed lines");
  std::string trace_path;
  validate->add_option("trace", trace_path, "Trace file (.tsv or .tsv.gz)")->required();

  auto* apply = app.add_subcommand("apply", "Run a rule-set or profile over a trace");
  std::string profile_name, rules_path, lists_dir, apply_trace, apply_output;
  apply->add_option("--profile", profile_name, "Profile: paranoid, kid or corporate");
  apply->add_option("--rules", rules_path, "Rule file");
  apply->add_option("--lists", lists_dir, "Profile bundle directory with *.list files");
  apply->add_option("trace", apply_trace, "Trace file")->required();
  apply->add_option("--output,-o", apply_output, "Write per-record outcomes here");

  auto* detect = app.add_subcommand("detect", "Identify third-party tracker keys");
  std::string detect_trace, target, mode_name = "strict", detect_output, prevalence_list;
  std::size_t min_support = 25;
  detect->add_option("trace", detect_trace, "Trace file")->required();
  detect->add_option("--target", target, "Target website suffix (e.g. youtube.com)");
  detect->add_option("--min-support", min_support, "Minimum distinct users per finding");
  detect->add_option("--mode", mode_name, "strict (default) or literal");
  detect->add_option("--output,-o", detect_output, "Write findings here");
  detect->add_option("--prevalence", prevalence_list,
                     "Report per-tracker user prevalence for hostnames in this list file");

  auto* estimate = app.add_subcommand("estimate", "Coupon-collector visit expectation");
  std::uint64_t est_n = 0, est_k = 1;
  estimate->add_option("--n", est_n, "Hostname count (N >= 3)")->required();
  estimate->add_option("--k", est_k, "Required samples per hostname")->required();

  auto* simulate = app.add_subcommand("simulate", "Generate Zipf traces and measure T_c");
  SimulateOpts sim;
  simulate->add_option("--out", sim.out_path, "Write a generated trace here");
  simulate->add_option("--hosts", sim.hosts, "Hostname count");
  simulate->add_option("--users", sim.users, "User pool size");
  simulate->add_option("--rate", sim.rate, "Mean requests/second (Poisson)");
  simulate->add_option("--duration", sim.duration, "Trace duration in seconds");
  simulate->add_option("--zipf-s", sim.zipf_s, "Zipf exponent");
  simulate->add_flag("--collect", sim.collect, "Run the time-to-K-samples simulation");
  simulate->add_option("--trace", sim.trace_path, "Existing trace for --collect");
  simulate->add_option("--top-n", sim.top_n, "Track the N most visited hostnames");
  simulate->add_option("--k", sim.k, "Samples needed per hostname");
  simulate->add_option("--ratio", sim.ratio, "Client sampling ratio in (0,1]");
  simulate->add_option("--runs", sim.runs, "Independent runs to average over");
  simulate->add_option("--collect-output", sim.collect_output, "Write per-hostname results here");
  simulate->add_option("--spec", sim.spec_path, "key=value file with the options above");

  auto* serve = app.add_subcommand("serve", "Run the collector service");
  std::string listen = "127.0.0.1:8080", data_dir, admin_token;
  double retention_days = 7.0, epoch_length_s = 86400.0;
  std::size_t max_batch = 1000;
  serve->add_option("--listen", listen, "host:port")->envname("CROWDSURF_LISTEN");
  serve->add_option("--retention-days", retention_days, "Report retention window")
      ->envname("CROWDSURF_RETENTION_DAYS");
  serve->add_option("--max-batch", max_batch, "Max records per batch")
      ->envname("CROWDSURF_MAX_BATCH");
  serve->add_option("--data-dir", data_dir, "Append-only day files live here (default: memory)")
      ->envname("CROWDSURF_DATA_DIR");
  serve->add_option("--admin-token", admin_token, "Require this bearer token on query/purge")
      ->envname("CROWDSURF_ADMIN_TOKEN");
  serve->add_option("--epoch-length-s", epoch_length_s, "Identity epoch length in seconds");

  auto* report = app.add_subcommand("report", "Replay a trace through the reporting pipeline");
  std::string report_trace, collector_url, anon_rules_path, via;
  double ratio = 1.0;
  std::size_t batch = 100;
  report->add_option("trace", report_trace, "Trace file")->required();
  report->add_option("--collector-url", collector_url, "e.g. http://127.0.0.1:8080")->required();
  report->add_option("--ratio", ratio, "Sampling ratio in (0,1]");
  report->add_option("--batch", batch, "Batch threshold");
  report->add_option("--anon-rules", anon_rules_path, "Anonymization rule file");
  report->add_option("--via", via, "Relay base URL (one-hop forwarder)");

  // Global flags (--seed, --format, --quiet) may follow the subcommand.
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  // Fixture stability: randomized commands must be seeded in test mode.
  if (test_mode() && !g.seed &&
      (app.got_subcommand(simulate) || app.got_subcommand(report))) {
    std::cerr << "--seed is required when CROWDSURF_TEST=1\n";
    return kExitUsage;
  }

  try {
    if (app.got_subcommand(validate)) return run_validate(g, trace_path);
    if (app.got_subcommand(apply)) {
      if (profile_name.empty() == rules_path.empty()) {
        std::cerr << "apply needs exactly one of --profile or --rules\n";
        return kExitUsage;
      }
      return run_apply(g, profile_name, rules_path, lists_dir, apply_trace, apply_output);
    }
    if (app.got_subcommand(detect))
      return run_detect(g, detect_trace, target, min_support, mode_name, detect_output,
                        prevalence_list);
    if (app.got_subcommand(estimate)) return run_estimate(g, est_n, est_k);
    if (app.got_subcommand(simulate)) {
      if (!sim.spec_path.empty()) apply_spec_file(sim, *simulate);
      return run_simulate(g, sim);
    }
    if (app.got_subcommand(serve))
      return run_serve(g, listen, retention_days, max_batch, data_dir, admin_token,
                       epoch_length_s);
    if (app.got_subcommand(report))
      return run_report(g, report_trace, collector_url, ratio, batch, anon_rules_path, via);
  } catch (const crowdsurf::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDomain;
  }
  return kExitUsage;
}

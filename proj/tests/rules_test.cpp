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

#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "crowdsurf/rules.hpp"

using namespace crowdsurf;

namespace {

RuleSet compile(const std::string& doc, const ListBundle* lists = nullptr) {
  std::istringstream in(doc);
  return compile_ruleset(in, "test", lists);
}

HttpRequestRecord record(std::string hostname, std::string path = "/",
                         std::string referer = {}) {
  HttpRequestRecord r;
  r.ts = 1000;
  r.user = "u1";
  r.method = "GET";
  r.hostname = std::move(hostname);
  r.path = std::move(path);
  r.referer = std::move(referer);
  return r;
}

ListBundle profile_lists() { return ListBundle::load_dir(CROWDSURF_PROFILES_DIR); }

}  // namespace

TEST_CASE("compile_ruleset compiles a single block rule") {
  auto rs = compile("10\tfb\thostname\t(^|\\.)facebook\\.com$\tblock\n");
  REQUIRE(rs.rules.size() == 1);
  CHECK(rs.rules[0].id == "fb");
  CHECK(evaluate(rs, record("www.facebook.com")).disposition == Disposition::Blocked);
}

TEST_CASE("compile_ruleset on an empty document yields default-allow") {
  auto rs = compile("");
  CHECK(rs.rules.empty());
  auto out = evaluate(rs, record("anything.example"));
  CHECK(out.disposition == Disposition::Allowed);
  CHECK_FALSE(out.reported);
  CHECK(out.matched_rule_ids.empty());
}

TEST_CASE("compile_ruleset rejects bad documents naming the rule") {
  CHECK_THROWS_MATCHES(compile("10\tbroken\thostname\t(\tblock\n"), RuleError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("broken")));
  CHECK_THROWS_AS(compile("10\ta\thostname\tx\tblock\n10\ta\thostname\ty\tblock\n"),
                  RuleError);  // duplicate id
  CHECK_THROWS_AS(compile("10\ta\thostname\tx\texplode\n"), RuleError);  // unknown action
  CHECK_THROWS_AS(compile("10\ta\thostname\tx\tredirect\n"), RuleError);  // no target
  CHECK_THROWS_AS(compile("10\ta\tbody\tx\tblock\n"), RuleError);         // unknown field
  CHECK_THROWS_AS(compile("ten\ta\thostname\tx\tblock\n"), RuleError);    // bad priority
  CHECK_THROWS_AS(compile("10\ta\thostname\tx\tmodify\tnot-a-subst\n"), RuleError);
  CHECK_THROWS_MATCHES(compile("10\ta\thostname\t@list:nope\tblock\n"), RuleError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("nope")));
}

TEST_CASE("rules are ordered by priority then id") {
  auto rs = compile(
      "20\tzz\thostname\tx\tblock\n"
      "10\tbb\thostname\tx\tblock\n"
      "10\taa\thostname\tx\tblock\n");
  REQUIRE(rs.rules.size() == 3);
  CHECK(rs.rules[0].id == "aa");
  CHECK(rs.rules[1].id == "bb");
  CHECK(rs.rules[2].id == "zz");
}

TEST_CASE("corporate profile redirects google search to bing") {
  auto rs = load_profile(Profile::Corporate, profile_lists());
  auto out = evaluate(rs, record("www.google.com", "/search?q=x"));
  CHECK(out.disposition == Disposition::Redirected);
  CHECK(out.effective_record.hostname == "www.bing.com");
  CHECK(out.effective_record.path == "/search?q=x");
  // non-search google services are untouched
  CHECK(evaluate(rs, record("docs.google.com", "/document/d/1")).disposition ==
        Disposition::Allowed);
}

TEST_CASE("corporate profile reports dropbox without blocking") {
  auto rs = load_profile(Profile::Corporate, profile_lists());
  auto out = evaluate(rs, record("www.dropbox.com"));
  CHECK(out.disposition == Disposition::Allowed);
  CHECK(out.reported);
  CHECK(out.matched_rule_ids == std::vector<std::string>{"corp-report-dropbox-twitter"});
}

TEST_CASE("profile behaviors from the rule table") {
  auto lists = profile_lists();
  auto kid = load_profile(Profile::Kid, lists);
  auto corporate = load_profile(Profile::Corporate, lists);
  auto paranoid = load_profile(Profile::Paranoid, lists);

  CHECK(evaluate(kid, record("ad.doubleclick.net")).reported);
  CHECK(evaluate(kid, record("www.pornhub.com")).disposition == Disposition::Blocked);
  CHECK(evaluate(corporate, record("www.youtube.com")).disposition == Disposition::Blocked);
  CHECK(evaluate(paranoid, record("cdn.example.com", "/app.js")).disposition ==
        Disposition::Blocked);
  CHECK(evaluate(paranoid, record("cdn.example.com", "/app.js?v=1")).disposition ==
        Disposition::Blocked);
  CHECK(evaluate(paranoid, record("cdn.example.com", "/app.json")).disposition ==
        Disposition::Allowed);
  CHECK(evaluate(paranoid, record("ad.doubleclick.net")).disposition == Disposition::Blocked);
}

TEST_CASE("load_profile reports the missing list by name") {
  ListBundle empty;
  CHECK_THROWS_MATCHES(load_profile(Profile::Kid, empty), RuleError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("adult")));
}

TEST_CASE("profile rule files match the programmatic profiles") {
  auto lists = profile_lists();
  for (auto [profile, file] :
       {std::pair{Profile::Corporate, "/corporate.rules"},
        std::pair{Profile::Kid, "/kid.rules"}, std::pair{Profile::Paranoid, "/paranoid.rules"}}) {
    auto programmatic = load_profile(profile, lists);
    auto from_file =
        compile_ruleset_file(std::string(CROWDSURF_PROFILES_DIR) + file, &lists);
    auto trace = read_trace(std::string(CROWDSURF_FIXTURES_DIR) + "/profile20.tsv");
    for (const auto& r : trace) {
      auto a = evaluate(programmatic, r);
      auto b = evaluate(from_file, r);
      REQUIRE(a.disposition == b.disposition);
      REQUIRE(a.reported == b.reported);
      REQUIRE(a.effective_record == b.effective_record);
    }
  }
}

TEST_CASE("apply_to_trace over the 4-record fixture") {
  auto rs = load_profile(Profile::Corporate, profile_lists());
  auto trace = read_trace(std::string(CROWDSURF_FIXTURES_DIR) + "/4rec.tsv");
  REQUIRE(trace.size() == 4);
  auto result = apply_to_trace(rs, trace);
  CHECK(result.counts.redirected == 1);
  CHECK(result.counts.blocked == 1);
  CHECK(result.counts.allowed == 2);
  CHECK(result.counts.modified == 0);
  CHECK(result.counts.reported == 1);
  CHECK(result.counts.total == 4);
  CHECK(result.outcomes.size() == 4);
}

TEST_CASE("apply_to_trace on an empty trace") {
  auto rs = load_profile(Profile::Corporate, profile_lists());
  auto result = apply_to_trace(rs, {});
  CHECK(result.outcomes.empty());
  CHECK(result.counts.total == 0);
}

TEST_CASE("all-allow ruleset counts every record as allowed") {
  RuleSet empty;
  std::vector<HttpRequestRecord> trace;
  for (int i = 0; i < 40; ++i) trace.push_back(record("h" + std::to_string(i) + ".example"));
  auto result = apply_to_trace(empty, trace);
  CHECK(result.counts.allowed == 40);
  CHECK(result.counts.total == 40);
}

TEST_CASE("evaluate is deterministic") {
  auto rs = load_profile(Profile::Corporate, profile_lists());
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    auto r = record("h" + std::to_string(rng() % 30) + ".example",
                    rng() % 2 ? "/a.js" : "/x?k=v");
    auto a = evaluate(rs, r);
    auto b = evaluate(rs, r);
    REQUIRE(a.disposition == b.disposition);
    REQUIRE(a.reported == b.reported);
    REQUIRE(a.matched_rule_ids == b.matched_rule_ids);
    REQUIRE(a.effective_record == b.effective_record);
  }
}

TEST_CASE("first matching block wins and later rules leave no trace") {
  auto rs = compile(
      "10\tfirst\thostname\t(^|\\.)dual\\.example$\tblock\n"
      "20\tsecond\thostname\t(^|\\.)dual\\.example$\tblock\n"
      "30\treport\thostname\t(^|\\.)dual\\.example$\tlogreport\n");
  auto out = evaluate(rs, record("dual.example"));
  CHECK(out.disposition == Disposition::Blocked);
  CHECK(out.matched_rule_ids == std::vector<std::string>{"first"});
  CHECK_FALSE(out.reported);  // the logreport after the terminal block never ran
}

TEST_CASE("blocked outcome keeps the input record") {
  auto rs = compile(
      "10\tmod\thostname\ta\\.example\tmodify\ts/a\\.example/b.example/\n"
      "20\tblock-b\thostname\t(^|\\.)b\\.example$\tblock\n");
  auto input = record("a.example");
  auto out = evaluate(rs, input);
  CHECK(out.disposition == Disposition::Blocked);
  CHECK(out.effective_record == input);
}

TEST_CASE("modify rewrites the field and later rules match the rewritten record") {
  auto rs = compile(
      "10\tmod\thostname\t^a\\.example$\tmodify\ts/^a\\.example$/b.example/\n"
      "20\tblock-b\thostname\t(^|\\.)b\\.example$\tblock\n"
      "30\tblock-a\thostname\t(^|\\.)a\\.example$\tblock\n");
  auto out = evaluate(rs, record("a.example"));
  CHECK(out.disposition == Disposition::Blocked);
  CHECK(out.matched_rule_ids == std::vector<std::string>{"mod", "block-b"});

  // with no terminal rule afterwards the disposition is Modified
  auto rs2 = compile("10\tmod\thostname\t^a\\.example$\tmodify\ts/^a\\.example$/b.example/\n");
  auto out2 = evaluate(rs2, record("a.example"));
  CHECK(out2.disposition == Disposition::Modified);
  CHECK(out2.effective_record.hostname == "b.example");
}

TEST_CASE("modify on the url field can rewrite hostname and path together") {
  auto rs = compile(
      "10\tmove\turl\t^old\\.example/v1/\tmodify\ts/^old\\.example\\/v1\\//new.example\\/v2\\//\n");
  auto out = evaluate(rs, record("old.example", "/v1/data?x=1"));
  CHECK(out.disposition == Disposition::Modified);
  CHECK(out.effective_record.hostname == "new.example");
  CHECK(out.effective_record.path == "/v2/data?x=1");
}

TEST_CASE("explicit allow is terminal") {
  auto rs = compile(
      "10\twhitelist\thostname\t^good\\.partner\\.example$\tallow\n"
      "20\tblock-all\thostname\t\\.example$\tblock\n");
  auto out = evaluate(rs, record("good.partner.example"));
  CHECK(out.disposition == Disposition::Allowed);
  CHECK(out.matched_rule_ids == std::vector<std::string>{"whitelist"});
  CHECK(evaluate(rs, record("other.example")).disposition == Disposition::Blocked);
}

TEST_CASE("logreport continues evaluation") {
  auto rs = compile(
      "10\treport\thostname\ttracked\\.example\tlogreport\n"
      "20\tblock\thostname\ttracked\\.example\tblock\n");
  auto out = evaluate(rs, record("tracked.example"));
  CHECK(out.disposition == Disposition::Blocked);
  CHECK(out.reported);
  CHECK(out.matched_rule_ids == std::vector<std::string>{"report", "block"});
}

TEST_CASE("referer field rules match the referer") {
  auto rs = compile("10\tref\treferer\tyoutube\\.com\tlogreport\n");
  CHECK(evaluate(rs, record("x.example", "/", "http://www.youtube.com/watch")).reported);
  CHECK_FALSE(evaluate(rs, record("x.example", "/", "")).reported);
}

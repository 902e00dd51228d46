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

// Pattern-matching/action layer: rule-set compilation and evaluation.
//
// Rule files are TSV, one rule per line:
//   priority <TAB> id <TAB> field <TAB> pattern <TAB> action [<TAB> arg]
// with field in {url, hostname, path, referer} and action in
// {allow, block, redirect, modify, logreport}. The pattern is an ECMAScript
// regular expression applied with unanchored search; "@list:NAME" inside a
// pattern expands to an alternation of anchored hostname-suffix patterns
// taken from NAME.list in the profile bundle.
//
// Evaluation walks rules in (priority, id) order. LogReport and Modify are
// non-terminal; Block, Redirect and an explicit Allow stop evaluation.
// Unmatched records are allowed by default.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "crowdsurf/trace.hpp"
#include "crowdsurf/util.hpp"

namespace crowdsurf {

enum class ActionKind { Allow, Block, Redirect, Modify, LogReport };

enum class FieldSelector { Url, Hostname, Path, Referer };

struct Substitution {
  std::string pattern_src;
  std::regex pattern;
  std::string replacement;
};

struct Action {
  ActionKind kind = ActionKind::Allow;
  std::string redirect_target;            // Redirect only
  std::optional<Substitution> substitution;  // Modify only
};

struct Rule {
  std::string id;
  FieldSelector field = FieldSelector::Hostname;
  std::string pattern_src;
  std::regex pattern;
  std::vector<Action> actions;
  int priority = 0;
};

struct RuleSet {
  std::string name;
  std::vector<Rule> rules;  // sorted by (priority, id)
};

enum class Disposition { Allowed, Blocked, Redirected, Modified };

struct ActionOutcome {
  Disposition disposition = Disposition::Allowed;
  HttpRequestRecord effective_record;
  bool reported = false;
  std::vector<std::string> matched_rule_ids;
};

inline std::string_view disposition_name(Disposition d) {
  switch (d) {
    case Disposition::Allowed: return "Allowed";
    case Disposition::Blocked: return "Blocked";
    case Disposition::Redirected: return "Redirected";
    case Disposition::Modified: return "Modified";
  }
  return "?";
}

// Named hostname lists (trackers.list, ads.list, adult.list, ...) loaded
// from a profile bundle directory.
struct ListBundle {
  std::map<std::string, std::vector<std::string>> lists;

  static ListBundle load_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    ListBundle b;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".list") continue;
      std::ifstream in(entry.path());
      if (!in) throw IoError("cannot open " + entry.path().string());
      std::vector<std::string> hosts;
      std::string line;
      while (std::getline(in, line)) {
        std::string_view t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        hosts.push_back(to_lower(t));
      }
      b.lists.emplace(entry.path().stem().string(), std::move(hosts));
    }
    return b;
  }
};

inline std::string regex_escape(std::string_view s) {
  static const std::string special = R"(\.^$|()[]{}*+?/)";
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (special.find(c) != std::string::npos) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

// "(^|\.)(h1|h2|...)$" — matches any of the hostnames or their subdomains.
inline std::string suffix_alternation(std::span<const std::string> hostnames) {
  std::string alt;
  for (const auto& h : hostnames) {
    if (!alt.empty()) alt.push_back('|');
    alt += regex_escape(h);
  }
  return "(^|\\.)(" + alt + ")$";
}

namespace detail {

inline std::string expand_lists(std::string_view pattern, const ListBundle* lists,
                                const std::string& rule_id) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    std::size_t at = pattern.find("@list:", pos);
    if (at == std::string_view::npos) {
      out += pattern.substr(pos);
      return out;
    }
    out += pattern.substr(pos, at - pos);
    std::size_t name_start = at + 6;
    std::size_t name_end = name_start;
    while (name_end < pattern.size() &&
           (std::isalnum(static_cast<unsigned char>(pattern[name_end])) ||
            pattern[name_end] == '_' || pattern[name_end] == '-'))
      ++name_end;
    std::string name(pattern.substr(name_start, name_end - name_start));
    if (name.empty())
      throw RuleError("rule '" + rule_id + "': empty @list reference");
    if (!lists)
      throw RuleError("rule '" + rule_id + "': @list:" + name +
                      " used but no list bundle provided");
    auto it = lists->lists.find(name);
    if (it == lists->lists.end())
      throw RuleError("rule '" + rule_id + "': unknown list '" + name + "'");
    out += "(" + suffix_alternation(it->second) + ")";
    pos = name_end;
  }
}

inline std::regex compile_pattern(const std::string& src, const std::string& rule_id) {
  try {
    return std::regex(src, std::regex::ECMAScript | std::regex::optimize);
  } catch (const std::regex_error& e) {
    throw RuleError("rule '" + rule_id + "': invalid regex: " + e.what());
  }
}

// Parses "s/regex/replacement/" with "\/" escaping the delimiter.
inline Substitution parse_substitution(std::string_view arg, const std::string& rule_id) {
  if (arg.size() < 4 || arg[0] != 's' || arg[1] != '/')
    throw RuleError("rule '" + rule_id + "': modify arg must look like s/regex/replacement/");
  std::vector<std::string> parts;
  std::string cur;
  for (std::size_t i = 2; i < arg.size(); ++i) {
    if (arg[i] == '\\' && i + 1 < arg.size() && arg[i + 1] == '/') {
      cur.push_back('/');
      ++i;
    } else if (arg[i] == '/') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(arg[i]);
    }
  }
  if (parts.size() != 2 || !cur.empty())
    throw RuleError("rule '" + rule_id + "': modify arg must look like s/regex/replacement/");
  Substitution sub;
  sub.pattern_src = parts[0];
  sub.pattern = compile_pattern(parts[0], rule_id);
  sub.replacement = parts[1];
  return sub;
}

inline FieldSelector parse_field(std::string_view s, const std::string& rule_id) {
  if (s == "url") return FieldSelector::Url;
  if (s == "hostname") return FieldSelector::Hostname;
  if (s == "path") return FieldSelector::Path;
  if (s == "referer") return FieldSelector::Referer;
  throw RuleError("rule '" + rule_id + "': unknown field '" + std::string(s) + "'");
}

}  // namespace detail

inline void sort_rules(std::vector<Rule>& rules) {
  std::sort(rules.begin(), rules.end(), [](const Rule& a, const Rule& b) {
    if (a.priority != b.priority) return a.priority < b.priority;
    return a.id < b.id;
  });
}

inline void validate_rule(const Rule& r) {
  if (r.actions.empty()) throw RuleError("rule '" + r.id + "': no actions");
  int terminal = 0;
  for (const auto& a : r.actions) {
    if (a.kind == ActionKind::Block || a.kind == ActionKind::Redirect) ++terminal;
    if (a.kind == ActionKind::Redirect && a.redirect_target.empty())
      throw RuleError("rule '" + r.id + "': redirect requires a target hostname");
    if (a.kind == ActionKind::Modify && !a.substitution)
      throw RuleError("rule '" + r.id + "': modify requires a substitution");
  }
  if (terminal > 1)
    throw RuleError("rule '" + r.id + "': at most one of block/redirect per rule");
}

inline RuleSet compile_ruleset(std::istream& in, const std::string& name,
                               const ListBundle* lists = nullptr) {
  RuleSet rs;
  rs.name = name;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_comment_or_blank(trim(line))) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 5 && cols.size() != 6)
      throw RuleError("rule file line " + std::to_string(line_number) +
                      ": expected 5 or 6 columns");
    Rule r;
    {
      std::string_view pr = cols[0];
      auto res = std::from_chars(pr.data(), pr.data() + pr.size(), r.priority);
      if (res.ec != std::errc() || res.ptr != pr.data() + pr.size())
        throw RuleError("rule file line " + std::to_string(line_number) +
                        ": bad priority '" + std::string(pr) + "'");
    }
    r.id = std::string(cols[1]);
    if (r.id.empty())
      throw RuleError("rule file line " + std::to_string(line_number) + ": empty rule id");
    if (!ids.insert(r.id).second) throw RuleError("duplicate rule id '" + r.id + "'");
    r.field = detail::parse_field(cols[2], r.id);
    r.pattern_src = detail::expand_lists(cols[3], lists, r.id);
    r.pattern = detail::compile_pattern(r.pattern_src, r.id);

    std::string action(cols[4]);
    std::string_view arg = cols.size() == 6 ? cols[5] : std::string_view{};
    Action a;
    if (action == "allow") {
      a.kind = ActionKind::Allow;
    } else if (action == "block") {
      a.kind = ActionKind::Block;
    } else if (action == "redirect") {
      a.kind = ActionKind::Redirect;
      a.redirect_target = to_lower(arg);
    } else if (action == "modify") {
      a.kind = ActionKind::Modify;
      a.substitution = detail::parse_substitution(arg, r.id);
    } else if (action == "logreport") {
      a.kind = ActionKind::LogReport;
    } else {
      throw RuleError("rule '" + r.id + "': unknown action '" + action + "'");
    }
    r.actions.push_back(std::move(a));
    validate_rule(r);
    rs.rules.push_back(std::move(r));
  }
  sort_rules(rs.rules);
  return rs;
}

inline RuleSet compile_ruleset_file(const std::string& path, const ListBundle* lists = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return compile_ruleset(in, std::filesystem::path(path).stem().string(), lists);
}

namespace detail {

inline std::string select_field(const HttpRequestRecord& r, FieldSelector f) {
  switch (f) {
    case FieldSelector::Url: return r.hostname + r.path;
    case FieldSelector::Hostname: return r.hostname;
    case FieldSelector::Path: return r.path;
    case FieldSelector::Referer: return r.referer;
  }
  return {};
}

inline void assign_field(HttpRequestRecord& r, FieldSelector f, std::string value) {
  switch (f) {
    case FieldSelector::Url: {
      std::size_t slash = value.find('/');
      if (slash == std::string::npos) {
        if (!value.empty()) r.hostname = to_lower(value);
        r.path = "/";
      } else {
        std::string host = value.substr(0, slash);
        if (!host.empty()) r.hostname = to_lower(host);
        r.path = value.substr(slash);
      }
      return;
    }
    case FieldSelector::Hostname:
      if (!value.empty()) r.hostname = to_lower(value);
      return;
    case FieldSelector::Path:
      if (value.empty() || value[0] != '/') value.insert(value.begin(), '/');
      r.path = std::move(value);
      return;
    case FieldSelector::Referer:
      r.referer = std::move(value);
      return;
  }
}

}  // namespace detail

// Pure function of (ruleset, record). Rules run in priority order against
// the current (possibly already modified) record; Block restores the input
// record as the effective one since nothing is forwarded.
inline ActionOutcome evaluate(const RuleSet& rs, const HttpRequestRecord& input) {
  ActionOutcome out;
  out.effective_record = input;
  HttpRequestRecord cur = input;
  bool modified = false;
  for (const Rule& rule : rs.rules) {
    if (!std::regex_search(detail::select_field(cur, rule.field), rule.pattern)) continue;
    out.matched_rule_ids.push_back(rule.id);
    for (const Action& a : rule.actions) {
      switch (a.kind) {
        case ActionKind::LogReport:
          out.reported = true;
          break;
        case ActionKind::Modify: {
          std::string value = detail::select_field(cur, rule.field);
          detail::assign_field(cur, rule.field,
                               std::regex_replace(value, a.substitution->pattern,
                                                  a.substitution->replacement));
          modified = true;
          break;
        }
        case ActionKind::Block:
          out.disposition = Disposition::Blocked;
          out.effective_record = input;
          return out;
        case ActionKind::Redirect:
          cur.hostname = a.redirect_target;
          out.disposition = Disposition::Redirected;
          out.effective_record = cur;
          return out;
        case ActionKind::Allow:
          out.disposition = modified ? Disposition::Modified : Disposition::Allowed;
          out.effective_record = cur;
          return out;
      }
    }
  }
  out.disposition = modified ? Disposition::Modified : Disposition::Allowed;
  out.effective_record = cur;
  return out;
}

enum class Profile { Paranoid, Kid, Corporate };

inline std::optional<Profile> profile_from_name(std::string_view name) {
  if (name == "paranoid") return Profile::Paranoid;
  if (name == "kid") return Profile::Kid;
  if (name == "corporate") return Profile::Corporate;
  return std::nullopt;
}

namespace detail {

inline const std::vector<std::string>& require_list(const ListBundle& lists,
                                                    const std::string& name,
                                                    const std::string& profile) {
  auto it = lists.lists.find(name);
  if (it == lists.lists.end())
    throw RuleError("profile '" + profile + "' requires list '" + name + "'");
  return it->second;
}

inline Rule make_rule(int priority, std::string id, FieldSelector field, std::string pattern,
                      Action action) {
  Rule r;
  r.priority = priority;
  r.id = std::move(id);
  r.field = field;
  r.pattern_src = std::move(pattern);
  r.pattern = compile_pattern(r.pattern_src, r.id);
  r.actions.push_back(std::move(action));
  validate_rule(r);
  return r;
}

inline Action block() { return Action{ActionKind::Block, {}, {}}; }
inline Action logreport() { return Action{ActionKind::LogReport, {}, {}}; }
inline Action redirect(std::string target) {
  return Action{ActionKind::Redirect, std::move(target), {}};
}

}  // namespace detail

// The three canned profiles. Paranoid blocks trackers, ads and script
// resources; Kid blocks the adult list and reports the three most popular
// trackers; Corporate blocks social/shopping/adult services, redirects
// Google search to Bing and reports Dropbox and Twitter traffic.
inline RuleSet load_profile(Profile profile, const ListBundle& lists) {
  using namespace detail;
  RuleSet rs;
  switch (profile) {
    case Profile::Paranoid: {
      rs.name = "paranoid";
      rs.rules.push_back(make_rule(
          10, "par-block-trackers", FieldSelector::Hostname,
          suffix_alternation(require_list(lists, "trackers", rs.name)), block()));
      rs.rules.push_back(make_rule(20, "par-block-ads", FieldSelector::Hostname,
                                   suffix_alternation(require_list(lists, "ads", rs.name)),
                                   block()));
      rs.rules.push_back(
          make_rule(30, "par-block-scripts", FieldSelector::Path, R"(\.js($|\?))", block()));
      break;
    }
    case Profile::Kid: {
      rs.name = "kid";
      static const std::vector<std::string> kKidTrackers = {
          "doubleclick.net", "scorecardresearch.com", "yieldmanager.com"};
      rs.rules.push_back(make_rule(10, "kid-block-adult", FieldSelector::Hostname,
                                   suffix_alternation(require_list(lists, "adult", rs.name)),
                                   block()));
      rs.rules.push_back(make_rule(20, "kid-report-trackers", FieldSelector::Hostname,
                                   suffix_alternation(kKidTrackers), logreport()));
      break;
    }
    case Profile::Corporate: {
      rs.name = "corporate";
      static const std::vector<std::string> kFacebook = {"facebook.com"};
      static const std::vector<std::string> kYouTube = {"youtube.com"};
      static const std::vector<std::string> kShopping = {"ebay.com", "amazon.com"};
      static const std::vector<std::string> kReported = {"dropbox.com", "twitter.com"};
      rs.rules.push_back(make_rule(10, "corp-block-facebook", FieldSelector::Hostname,
                                   suffix_alternation(kFacebook), block()));
      // Google search only, not every google.com service.
      rs.rules.push_back(make_rule(20, "corp-redirect-google", FieldSelector::Url,
                                   R"((^|\.)google\.com/search($|[/?]))",
                                   redirect("www.bing.com")));
      rs.rules.push_back(make_rule(30, "corp-block-youtube", FieldSelector::Hostname,
                                   suffix_alternation(kYouTube), block()));
      rs.rules.push_back(make_rule(40, "corp-block-shopping", FieldSelector::Hostname,
                                   suffix_alternation(kShopping), block()));
      rs.rules.push_back(make_rule(50, "corp-block-adult", FieldSelector::Hostname,
                                   suffix_alternation(require_list(lists, "adult", rs.name)),
                                   block()));
      rs.rules.push_back(make_rule(60, "corp-report-dropbox-twitter", FieldSelector::Hostname,
                                   suffix_alternation(kReported), logreport()));
      break;
    }
  }
  sort_rules(rs.rules);
  return rs;
}

struct DispositionCounts {
  std::size_t allowed = 0;
  std::size_t blocked = 0;
  std::size_t redirected = 0;
  std::size_t modified = 0;
  std::size_t reported = 0;
  std::size_t total = 0;
};

struct ApplyResult {
  std::vector<ActionOutcome> outcomes;
  DispositionCounts counts;
};

inline ApplyResult apply_to_trace(const RuleSet& rs, std::span<const HttpRequestRecord> trace) {
  ApplyResult result;
  result.outcomes.reserve(trace.size());
  for (const auto& r : trace) {
    ActionOutcome o = evaluate(rs, r);
    switch (o.disposition) {
      case Disposition::Allowed: ++result.counts.allowed; break;
      case Disposition::Blocked: ++result.counts.blocked; break;
      case Disposition::Redirected: ++result.counts.redirected; break;
      case Disposition::Modified: ++result.counts.modified; break;
    }
    if (o.reported) ++result.counts.reported;
    ++result.counts.total;
    result.outcomes.push_back(std::move(o));
  }
  return result;
}

}  // namespace crowdsurf

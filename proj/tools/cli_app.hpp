#pragma once

// panelkit command-line application. Every subcommand reads a flat set of
// config keys from an optional JSON file (--config) and from --key flags;
// flags win. Unknown keys are errors.

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "panelkit/panelkit.hpp"

namespace panelkit::cli {

enum class ExitCode : int { ok = 0, config = 2, data = 3, estimation = 4, internal = 5 };

inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return static_cast<int>(ExitCode::config);
    case ErrorCategory::data: return static_cast<int>(ExitCode::data);
    case ErrorCategory::estimation: return static_cast<int>(ExitCode::estimation);
    case ErrorCategory::internal: return static_cast<int>(ExitCode::internal);
  }
  return static_cast<int>(ExitCode::internal);
}

inline const char* remedy(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "check the config keys; --help lists every key";
    case ErrorCategory::data: return "check the input files named above";
    case ErrorCategory::estimation: return "check the model specification and the estimation sample";
    case ErrorCategory::internal: return "this is a bug; please report it with the config used";
  }
  return "";
}

// ---------------------------------------------------------------------------
// Config keys

enum class KeyType { string, path, integer, number, boolean, list, transforms };

inline const char* type_name(KeyType t) {
  switch (t) {
    case KeyType::string: return "TEXT";
    case KeyType::path: return "PATH";
    case KeyType::integer: return "INT";
    case KeyType::number: return "FLOAT";
    case KeyType::boolean: return "BOOL";
    case KeyType::list: return "LIST";
    case KeyType::transforms: return "LIST";
  }
  return "";
}

struct Key {
  std::string name;
  KeyType type;
  std::string help;
  json fallback = nullptr;  // null: unset unless given
};

/// Resolved key values; null means unset.
class Settings {
 public:
  explicit Settings(std::map<std::string, json> v) : values_(std::move(v)) {}

  bool has(const std::string& k) const { return !values_.at(k).is_null(); }
  const json& raw(const std::string& k) const { return values_.at(k); }

  std::string str(const std::string& k) const {
    if (!has(k)) throw ConfigError("missing required key '" + k + "'");
    return values_.at(k).get<std::string>();
  }
  std::optional<std::string> opt_str(const std::string& k) const {
    if (!has(k)) return std::nullopt;
    return values_.at(k).get<std::string>();
  }
  long long integer(const std::string& k) const {
    if (!has(k)) throw ConfigError("missing required key '" + k + "'");
    return values_.at(k).get<long long>();
  }
  std::optional<int> opt_int(const std::string& k) const {
    if (!has(k)) return std::nullopt;
    return static_cast<int>(values_.at(k).get<long long>());
  }
  double number(const std::string& k) const {
    if (!has(k)) throw ConfigError("missing required key '" + k + "'");
    return values_.at(k).get<double>();
  }
  bool boolean(const std::string& k) const { return has(k) && values_.at(k).get<bool>(); }
  std::vector<std::string> list(const std::string& k) const {
    if (!has(k)) return {};
    return values_.at(k).get<std::vector<std::string>>();
  }
  std::vector<double> numbers(const std::string& k) const {
    std::vector<double> out;
    for (const auto& s : list(k)) {
      double v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size())
        throw ConfigError("key '" + k + "': '" + s + "' is not a number");
      out.push_back(v);
    }
    return out;
  }

 private:
  std::map<std::string, json> values_;
};

namespace detail {

inline std::string trim_copy(std::string_view s) { return std::string(csv::trim(s)); }

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim_copy(s).empty()) return out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim_copy(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim_copy(cur));
  for (const auto& v : out)
    if (v.empty()) throw ConfigError("empty element in list '" + s + "'");
  return out;
}

/// Flag text -> typed JSON value.
inline json from_flag(const Key& key, const std::string& text) {
  const std::string t = trim_copy(text);
  auto bad = [&](const char* what) {
    return ConfigError("--" + key.name + ": '" + text + "' is not " + what);
  };
  switch (key.type) {
    case KeyType::string:
    case KeyType::path:
      return t;
    case KeyType::integer: {
      if (!t.empty() && t[0] != '-') {
        unsigned long long u = 0;
        auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), u);
        if (ec == std::errc() && p == t.data() + t.size()) return u;
      }
      long long v = 0;
      auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      if (ec != std::errc() || p != t.data() + t.size()) throw bad("an integer");
      return v;
    }
    case KeyType::number: {
      double v = 0;
      auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      if (ec != std::errc() || p != t.data() + t.size()) throw bad("a number");
      return v;
    }
    case KeyType::boolean: {
      std::string l = t;
      std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
      if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
      if (l == "false" || l == "0" || l == "no" || l == "off") return false;
      throw bad("a boolean");
    }
    case KeyType::list:
    case KeyType::transforms: {
      json arr = json::array();
      for (const auto& v : split_list(t)) arr.push_back(v);
      return arr;
    }
  }
  return nullptr;
}

/// Validates a JSON config value against the key type.
inline json from_config(const Key& key, const json& v) {
  auto bad = [&](const char* what) {
    return ConfigError("config key '" + key.name + "' must be " + what);
  };
  if (v.is_null()) return v;
  switch (key.type) {
    case KeyType::string:
    case KeyType::path:
      if (!v.is_string()) throw bad("a string");
      return v;
    case KeyType::integer:
      if (!v.is_number_integer()) throw bad("an integer");
      return v;
    case KeyType::number:
      if (!v.is_number()) throw bad("a number");
      return v.get<double>();
    case KeyType::boolean:
      if (!v.is_boolean()) throw bad("true or false");
      return v;
    case KeyType::list: {
      json arr = json::array();
      if (v.is_string()) return from_flag(key, v.get<std::string>());
      if (!v.is_array()) throw bad("a list");
      for (const auto& e : v) {
        if (e.is_string()) arr.push_back(e);
        else if (e.is_number()) arr.push_back(csv::format_double(e.get<double>()));
        else throw bad("a list of strings or numbers");
      }
      return arr;
    }
    case KeyType::transforms: {
      if (!v.is_array()) throw bad("a list");
      json arr = json::array();
      for (const auto& e : v) {
        if (e.is_string()) {
          arr.push_back(e);
        } else if (e.is_object()) {
          // {"kind": "lag", "sources": ["x"], "output": "x_l1", "lag": 1}
          for (const auto& [k, _] : e.items())
            if (k != "kind" && k != "sources" && k != "output" && k != "lag")
              throw ConfigError("transform key '" + k + "' is not recognized");
          std::string text;
          try {
            text = e.at("kind").get<std::string>() + ":";
            const auto& src = e.at("sources");
            std::vector<std::string> names =
                src.is_string() ? std::vector<std::string>{src.get<std::string>()}
                                : src.get<std::vector<std::string>>();
            for (std::size_t i = 0; i < names.size(); ++i) text += (i ? "+" : "") + names[i];
            text += ":" + e.at("output").get<std::string>();
            if (e.contains("lag")) text += ":" + std::to_string(e.at("lag").get<int>());
          } catch (const nlohmann::json::exception&) {
            throw ConfigError("transform objects need kind, sources, and output");
          }
          arr.push_back(text);
        } else {
          throw bad("a list of transforms");
        }
      }
      return arr;
    }
  }
  return nullptr;
}

/// "kind:src[+src2]:output[:lag]"
inline Transform parse_transform(const std::string& text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == ':') {
      parts.push_back(trim_copy(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(trim_copy(cur));
  if (parts.size() < 3 || parts.size() > 4)
    throw ConfigError("transform '" + text + "' must look like kind:source[+source]:output[:lag]");
  auto kind = parse_transform_kind(parts[0]);
  if (!kind)
    throw ConfigError("unknown transform kind '" + parts[0] +
                      "' (expected log, lag, square, interaction, or diff)");
  Transform t{*kind, {}, parts[2], 1};
  std::string src;
  for (char c : parts[1]) {
    if (c == '+') {
      t.sources.push_back(trim_copy(src));
      src.clear();
    } else {
      src.push_back(c);
    }
  }
  t.sources.push_back(trim_copy(src));
  if (parts.size() == 4) {
    auto [p, ec] = std::from_chars(parts[3].data(), parts[3].data() + parts[3].size(), t.lag);
    if (ec != std::errc() || p != parts[3].data() + parts[3].size() || t.lag < 1)
      throw ConfigError("transform '" + text + "': lag order must be a positive integer");
  }
  return t;
}

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCategory::internal, "SHA-256 digest failed");
  std::ostringstream o;
  for (unsigned int i = 0; i < len; ++i)
    o << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return o.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void require_file(const Settings& s, const std::string& key) {
  const std::string p = s.str(key);
  if (!std::filesystem::is_regular_file(p))
    throw ConfigError("key '" + key + "': file '" + p + "' does not exist");
}

}  // namespace detail

/// Collects output files as temporaries and renames them into place only
/// when every output has been produced.
class OutputSet {
 public:
  OutputSet() = default;
  OutputSet(const OutputSet&) = delete;
  OutputSet& operator=(const OutputSet&) = delete;
  ~OutputSet() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& [final_path, tmp] : files_) std::filesystem::remove(tmp, ec);
  }

  void add(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << content;
    out.close();
    if (!out) throw DataError("failed writing '" + tmp.string() + "'");
    files_.emplace_back(path, tmp);
  }

  void commit() {
    for (const auto& [final_path, tmp] : files_) std::filesystem::rename(tmp, final_path);
    committed_ = true;
  }

  std::vector<std::string> paths() const {
    std::vector<std::string> out;
    for (const auto& f : files_) out.push_back(f.first.string());
    return out;
  }

 private:
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> files_;
  bool committed_ = false;
};

// ---------------------------------------------------------------------------
// Subcommands

struct Command {
  std::string name;
  std::string description;
  std::vector<Key> keys;
  std::function<int(const Settings&, std::ostream&, std::ostream&)> run;
};

namespace keys {

inline std::vector<Key> panel_input() {
  return {{"panel", KeyType::path, "panel CSV in long format"},
          {"entity_col", KeyType::string, "entity identifier column", "entity"},
          {"time_col", KeyType::string, "time (year) column", "year"}};
}

inline std::vector<Key> sample() {
  return {{"first_period", KeyType::integer, "first period kept (inclusive)"},
          {"last_period", KeyType::integer, "last period kept (inclusive)"},
          {"entities", KeyType::list, "entity allowlist"},
          {"groups", KeyType::path, "CSV with columns entity,group assigning entities to groups"},
          {"subsample", KeyType::string, "keep only entities of this group (needs groups)"}};
}

}  // namespace keys

namespace detail {

inline std::map<std::string, std::string> read_groups(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  if (!csv::next_line(in, line, line_no)) throw ParseError(1, path + ": missing header row");
  auto header = csv::split_record(line, line_no);
  std::optional<std::size_t> e_pos, g_pos;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto h = csv::trim(header[i]);
    if (h == "entity") e_pos = i;
    if (h == "group") g_pos = i;
  }
  if (!e_pos || !g_pos) throw ParseError(line_no, path + ": group file needs columns entity,group");
  std::map<std::string, std::string> out;
  while (csv::next_line(in, line, line_no)) {
    auto f = csv::split_record(line, line_no);
    if (f.size() != header.size())
      throw ParseError(line_no, path + ": expected " + std::to_string(header.size()) + " fields");
    const std::string e = trim_copy(f[*e_pos]);
    if (!out.emplace(e, trim_copy(f[*g_pos])).second)
      throw DuplicateObservationError(path + ": entity '" + e + "' listed twice (line " +
                                      std::to_string(line_no) + ")");
  }
  return out;
}

/// Sample filter from config; file checks happen here, reading later.
inline SampleFilter sample_filter(const Settings& s) {
  SampleFilter f;
  f.first_period = s.opt_int("first_period");
  f.last_period = s.opt_int("last_period");
  if (f.first_period && f.last_period && *f.first_period > *f.last_period)
    throw ConfigError("first_period is after last_period");
  if (s.has("entities")) f.entities = s.list("entities");
  if (s.has("subsample")) {
    if (!s.has("groups")) throw ConfigError("subsample needs a groups file");
    f.group = s.str("subsample");
  }
  if (s.has("groups")) require_file(s, "groups");
  return f;
}

inline CovarianceKind covariance_kind(const Settings& s) {
  auto kind = parse_covariance_kind(s.str("covariance"));
  if (!kind)
    throw ConfigError("unknown covariance '" + s.str("covariance") +
                      "' (expected classical, robust, hc1, or cluster)");
  return *kind;
}

inline ModelSpec model_spec(const Settings& s) {
  ModelSpec spec;
  spec.dependent = s.str("dependent");
  const auto endog = s.list("endogenous");
  if (endog.size() > 1)
    throw ConfigError("unsupported configuration: " + std::to_string(endog.size()) +
                      " endogenous regressors given; only one is supported");
  if (!endog.empty()) spec.endogenous = endog.front();
  spec.exogenous = s.list("exogenous");
  spec.instruments = s.list("instruments");
  spec.fixed_effects.entity = s.boolean("entity_effects");
  spec.fixed_effects.time = s.boolean("time_effects");
  spec.covariance.kind = covariance_kind(s);
  spec.filter = sample_filter(s);
  spec.validate();
  return spec;
}

inline PanelDataset load_with_transforms(const Settings& s) {
  std::vector<Transform> transforms;
  for (const auto& t : s.list("transforms")) transforms.push_back(parse_transform(t));
  PanelDataset ds = load_panel_csv(s.str("panel"), s.str("entity_col"), s.str("time_col"));
  for (const auto& t : transforms) ds = apply_transform(ds, t);
  return ds;
}

}  // namespace detail

inline Command estimate_command() {
  Command c;
  c.name = "estimate";
  c.description = "Fixed-effects OLS and 2SLS with IV diagnostics; prints the results table";
  c.keys = keys::panel_input();
  auto add = [&](std::vector<Key> more) { c.keys.insert(c.keys.end(), more.begin(), more.end()); };
  add({{"dependent", KeyType::string, "dependent variable"},
       {"endogenous", KeyType::list, "endogenous regressor (exactly one)"},
       {"exogenous", KeyType::list, "exogenous controls"},
       {"instruments", KeyType::list, "excluded instruments"},
       {"transforms", KeyType::transforms,
        "derived columns, each kind:source[+source]:output[:lag] with kind log, lag, square, "
        "interaction, or diff"},
       {"entity_effects", KeyType::boolean, "absorb entity fixed effects", true},
       {"time_effects", KeyType::boolean, "include period dummies", true},
       {"covariance", KeyType::string, "classical, robust (HC1), or cluster", "robust"}});
  add(keys::sample());
  add({{"decimals", KeyType::integer, "decimal places in tables", 3},
       {"style", KeyType::string, "table printed to stdout: text, csv, or latex", "text"},
       {"output_dir", KeyType::path, "directory for table.txt/.csv/.tex and results.json"},
       {"ar_level", KeyType::number, "AR confidence level", 0.95},
       {"ar_nulls", KeyType::list, "beta values tested by the AR test", json::array({"0"})},
       {"ar_set", KeyType::boolean, "compute the AR confidence set", true},
       {"grid_steps", KeyType::integer, "AR grid points (odd)", 2001},
       {"grid_half_width_se", KeyType::number, "initial AR grid half-width in standard errors", 10.0},
       {"grid_max_expansions", KeyType::integer, "AR grid widenings before reporting unbounded", 6}});

  c.run = [](const Settings& s, std::ostream& out, std::ostream& err) {
    // validation before any data is read
    ModelSpec spec = detail::model_spec(s);
    detail::require_file(s, "panel");
    const TableStyle style = parse_table_style(s.str("style"));
    const auto decimals = s.integer("decimals");
    if (decimals < 0 || decimals > 12) throw ConfigError("decimals must be in [0, 12]");
    DiagnosticsOptions dopt;
    dopt.ar_level = s.number("ar_level");
    dopt.ar_nulls = s.numbers("ar_nulls");
    dopt.confidence_set = s.boolean("ar_set");
    if (s.integer("grid_steps") < 3 || s.integer("grid_max_expansions") < 0)
      throw ConfigError("grid_steps must be >= 3 and grid_max_expansions >= 0");
    dopt.grid.steps = static_cast<std::size_t>(s.integer("grid_steps"));
    dopt.grid.half_width_se = s.number("grid_half_width_se");
    dopt.grid.max_expansions = static_cast<std::size_t>(s.integer("grid_max_expansions"));
    dopt.grid.validate();
    if (!(dopt.ar_level > 0.0 && dopt.ar_level < 1.0)) throw ConfigError("ar_level must lie in (0, 1)");

    PanelDataset ds = detail::load_with_transforms(s);
    if (s.has("groups")) spec.filter.entity_groups = detail::read_groups(s.str("groups"));

    ModelSpec fe_spec = spec;
    if (spec.endogenous) {
      fe_spec.exogenous.insert(fe_spec.exogenous.begin(), *spec.endogenous);
      fe_spec.endogenous.reset();
      fe_spec.instruments.clear();
    }
    TableLayout layout;
    layout.decimals = static_cast<int>(decimals);
    EstimationResult fe = fe_ols(fe_spec, ds);
    layout.columns.push_back({"FE", fe});
    json results = {{"dependent", spec.dependent}, {"fe_ols", to_json(fe)}};
    if (spec.endogenous) {
      PreparedModel m = prepare_model(spec, ds);
      TslsResult fit = tsls_fit(m, spec.covariance);
      fit.second_stage.diagnostics = iv_diagnostics(m, fit, spec.covariance, dopt);
      layout.columns.push_back({"IV", fit.second_stage});
      layout.columns.push_back({"First stage", fit.first_stage});
      results["fe_2sls"] = to_json(fit.second_stage);
      results["first_stage"] = to_json(fit.first_stage);
    }
    layout.footer = {FooterStat::n_obs, FooterStat::n_entities, FooterStat::r_squared_within};
    if (spec.endogenous)
      layout.footer.insert(layout.footer.end(), {FooterStat::first_stage_f, FooterStat::underid_lm,
                                                 FooterStat::ar_test, FooterStat::ar_set});
    if (!fe.dropped_singletons.empty())
      layout.note = std::to_string(fe.dropped_singletons.size()) +
                    " singleton entities dropped from the FE sample.";

    const std::string text = format_table(layout, TableStyle::text);
    const std::string csv_text = format_table(layout, TableStyle::csv);
    const std::string tex = format_table(layout, TableStyle::latex);
    if (s.has("output_dir")) {
      const std::filesystem::path dir = s.str("output_dir");
      OutputSet files;
      files.add(dir / "table.txt", text);
      files.add(dir / "table.csv", csv_text);
      files.add(dir / "table.tex", tex);
      files.add(dir / "results.json", results.dump(2) + "\n");
      files.commit();
      err << "wrote " << (dir / "table.txt").string() << ", table.csv, table.tex, results.json\n";
    }
    out << (style == TableStyle::text ? text : style == TableStyle::csv ? csv_text : tex);
    return 0;
  };
  return c;
}

inline Command build_instrument_command() {
  Command c;
  c.name = "build-instrument";
  c.description = "Builds the distance-weighted exposure instrument and merges it into a panel";
  c.keys = {
      {"distances", KeyType::path, "CSV with entity_a,entity_b,distance_km"},
      {"openness", KeyType::path, "openness panel CSV (entity and time columns as below)"},
      {"openness_col", KeyType::string, "openness column in the openness panel", "kopen"},
      {"rates", KeyType::path, "global rate CSV"},
      {"rate_time_col", KeyType::string, "time column in the rate CSV", "year"},
      {"rate_col", KeyType::string, "rate column in the rate CSV", "rate"},
      {"panel", KeyType::path, "panel CSV to merge into (default: instrument only)"},
      {"entity_col", KeyType::string, "entity identifier column", "entity"},
      {"time_col", KeyType::string, "time (year) column", "year"},
      {"window_first", KeyType::integer, "first year of the averaging window", 1991},
      {"window_last", KeyType::integer, "last year of the averaging window", 2015},
      {"include_self", KeyType::boolean, "weight the entity's own openness too", false},
      {"self_distance_km", KeyType::number, "distance used for the own entity when included"},
      {"instrument_name", KeyType::string, "name of the instrument column", "z"},
      {"output", KeyType::path, "merged panel CSV to write"},
      {"provenance", KeyType::path, "provenance JSON (default: <output>.provenance.json)"}};

  c.run = [](const Settings& s, std::ostream& out, std::ostream& err) {
    for (const char* k : {"distances", "openness", "rates"}) detail::require_file(s, k);
    if (s.has("panel")) detail::require_file(s, "panel");
    const std::string output = s.str("output");
    BuildOptions opt;
    opt.first_period = static_cast<int>(s.integer("window_first"));
    opt.last_period = static_cast<int>(s.integer("window_last"));
    if (opt.first_period > opt.last_period) throw ConfigError("window_first is after window_last");
    opt.weights.include_self = s.boolean("include_self");
    if (s.has("self_distance_km")) opt.weights.self_distance_km = s.number("self_distance_km");
    if (opt.weights.include_self && !(opt.weights.self_distance_km > 0.0))
      throw ConfigError("include_self needs a positive self_distance_km");
    const std::string name = s.str("instrument_name");

    const std::string ent = s.str("entity_col"), tim = s.str("time_col");
    json inputs = json::object();
    auto digest = [&](const char* key) {
      const std::string path = s.str(key);
      inputs[key] = {{"path", path}, {"sha256", detail::sha256_hex(detail::read_file(path))}};
      opt.provenance[std::string(key) + "_sha256"] = inputs[key]["sha256"];
    };
    digest("distances");
    digest("openness");
    digest("rates");
    if (s.has("panel")) digest("panel");

    const DistanceMatrix D = load_distance_csv(s.str("distances"));
    const PanelDataset K = load_panel_csv(s.str("openness"), ent, tim);
    if (!K.has_column(s.str("openness_col")))
      throw DataError("openness file has no column '" + s.str("openness_col") + "'");
    const GlobalRateSeries rate = load_rate_csv(s.str("rates"), s.str("rate_time_col"), s.str("rate_col"));

    std::optional<PanelDataset> panel;
    if (s.has("panel")) {
      panel = load_panel_csv(s.str("panel"), ent, tim);
      opt.output_periods = panel->periods();
    }
    const InstrumentSeries series = build_instrument(D, K, s.str("openness_col"), rate, opt);
    const PanelDataset merged =
        series.merge_into(panel ? *panel : PanelDataset(series.entities, series.periods), name);
    std::ostringstream csv_out;
    write_panel_csv(csv_out, merged, ent, tim);

    json prov = to_json(series);
    prov["inputs"] = inputs;
    prov["window"] = {opt.first_period, opt.last_period};
    prov["include_self"] = opt.weights.include_self;
    prov["instrument_name"] = name;
    prov["output_sha256"] = detail::sha256_hex(csv_out.str());

    const std::string prov_path = s.opt_str("provenance").value_or(output + ".provenance.json");
    OutputSet files;
    files.add(output, csv_out.str());
    files.add(prov_path, prov.dump(2) + "\n");
    files.commit();
    if (!series.renormalized_cells.empty())
      warn(std::to_string(series.renormalized_cells.size()) +
           " entity-years had missing neighbor openness; weights renormalized (listed in provenance)");
    out << "instrument '" << name << "' built for " << series.entities.size() << " entities, "
        << series.periods.size() << " periods; window " << opt.first_period << "-"
        << opt.last_period << '\n';
    err << "wrote " << output << " and " << prov_path << '\n';
    return 0;
  };
  return c;
}

inline Command simulate_command() {
  Command c;
  c.name = "simulate";
  c.description = "Monte Carlo experiment on the confounded panel DGP";
  const DgpConfig d;
  c.keys = {
      {"n_entities", KeyType::integer, "entities per panel", d.n_entities},
      {"n_periods", KeyType::integer, "periods per panel", d.n_periods},
      {"first_period", KeyType::integer, "first year label", d.first_period},
      {"beta_true", KeyType::number, "true effect of the endogenous regressor", d.beta_true},
      {"pi_first_stage", KeyType::number, "first-stage coefficient on the instrument", d.pi_first_stage},
      {"rho_confound", KeyType::number, "confounder covariance between the two equations", d.rho_confound},
      {"entity_effect_sd", KeyType::number, "entity effect s.d.", d.entity_effect_sd},
      {"time_effect_sd", KeyType::number, "time effect s.d.", d.time_effect_sd},
      {"outcome_noise_sd", KeyType::number, "outcome noise s.d.", d.outcome_noise_sd},
      {"endogenous_noise_sd", KeyType::number, "endogenous regressor noise s.d.", d.endogenous_noise_sd},
      {"confounder_sd", KeyType::number, "confounder s.d.", d.confounder_sd},
      {"control_coef_outcome", KeyType::number, "control coefficient in the outcome", d.control_coef_outcome},
      {"control_coef_endogenous", KeyType::number, "control coefficient in the endogenous regressor",
       d.control_coef_endogenous},
      {"rate_mean", KeyType::number, "mean of the global rate", d.rate_mean},
      {"rate_sd", KeyType::number, "s.d. of the global rate", d.rate_sd},
      {"instrument_noise_sd", KeyType::number, "idiosyncratic instrument noise s.d.", d.instrument_noise_sd},
      {"seed", KeyType::integer, "master seed", d.seed},
      {"reps", KeyType::integer, "replications", 500},
      {"threads", KeyType::integer, "worker threads (0: all cores)", 0},
      {"covariance", KeyType::string, "classical, robust (HC1), or cluster", "robust"},
      {"ar_level", KeyType::number, "AR confidence level", 0.95},
      {"confidence_sets", KeyType::boolean, "invert the AR test in each replication", true},
      {"output_dir", KeyType::path, "directory for report.json and report.txt"},
      {"write_panel", KeyType::path, "write one simulated panel (master seed) as CSV and stop"}};

  c.run = [](const Settings& s, std::ostream& out, std::ostream& err) {
    json dj = json::object();
    for (const char* k :
         {"n_entities", "n_periods", "first_period", "beta_true", "pi_first_stage", "rho_confound",
          "entity_effect_sd", "time_effect_sd", "outcome_noise_sd", "endogenous_noise_sd",
          "confounder_sd", "control_coef_outcome", "control_coef_endogenous", "rate_mean",
          "rate_sd", "instrument_noise_sd", "seed"})
      dj[k] = s.raw(k);
    for (const char* k : {"n_entities", "n_periods", "seed"})
      if (s.integer(k) < 0) throw ConfigError(std::string(k) + " must be non-negative");
    const DgpConfig cfg = dgp_from_json(dj);
    cfg.validate();
    if (s.integer("reps") < 1) throw ConfigError("reps must be >= 1");
    if (s.integer("threads") < 0) throw ConfigError("threads must be >= 0");
    ExperimentOptions opt;
    opt.reps = static_cast<std::size_t>(s.integer("reps"));
    opt.threads = static_cast<std::size_t>(s.integer("threads"));
    opt.covariance.kind = detail::covariance_kind(s);
    opt.ar_level = s.number("ar_level");
    if (!(opt.ar_level > 0.0 && opt.ar_level < 1.0)) throw ConfigError("ar_level must lie in (0, 1)");
    opt.confidence_sets = s.boolean("confidence_sets");

    if (s.has("write_panel")) {
      std::ostringstream panel;
      write_panel_csv(panel, simulate_dgp(cfg));
      OutputSet files;
      files.add(s.str("write_panel"), panel.str());
      files.commit();
      out << "wrote simulated panel to " << s.str("write_panel") << '\n';
      return 0;
    }

    const ExperimentReport rep = run_experiment(cfg, opt);
    const std::string text = format_report_text(rep);
    out << text;
    err << "wall clock: " << std::fixed << std::setprecision(2) << rep.wall_clock_seconds << " s\n";
    if (rep.failure_threshold_exceeded)
      throw EstimationError(std::to_string(rep.failures) + " of " + std::to_string(rep.reps) +
                            " replications failed (first: " +
                            (rep.failure_messages.empty() ? std::string("?") : rep.failure_messages.front()) +
                            ")");
    if (s.has("output_dir")) {
      const std::filesystem::path dir = s.str("output_dir");
      OutputSet files;
      files.add(dir / "report.json", to_json(rep).dump(2) + "\n");
      files.add(dir / "report.txt", text);
      files.commit();
      err << "wrote " << (dir / "report.json").string() << " and report.txt\n";
    }
    return 0;
  };
  return c;
}

inline Command describe_command() {
  Command c;
  c.name = "describe";
  c.description = "Summary statistics of a panel CSV";
  c.keys = keys::panel_input();
  c.keys.push_back({"variables", KeyType::list, "columns to summarize (default: all)"});
  c.keys.push_back({"transforms", KeyType::transforms, "derived columns, as for estimate"});
  c.keys.push_back({"first_period", KeyType::integer, "first period kept (inclusive)"});
  c.keys.push_back({"last_period", KeyType::integer, "last period kept (inclusive)"});
  c.keys.push_back({"decimals", KeyType::integer, "decimal places", 3});

  c.run = [](const Settings& s, std::ostream& out, std::ostream&) {
    detail::require_file(s, "panel");
    const auto decimals = s.integer("decimals");
    if (decimals < 0 || decimals > 12) throw ConfigError("decimals must be in [0, 12]");
    const PanelDataset ds = detail::load_with_transforms(s);
    auto names = s.has("variables") ? s.list("variables") : ds.column_names();
    for (const auto& n : names)
      if (!ds.has_column(n)) throw ConfigError("unknown column '" + n + "'");
    const auto first = s.opt_int("first_period"), last = s.opt_int("last_period");
    auto in_window = [&](int year) { return (!first || year >= *first) && (!last || year <= *last); };

    std::vector<std::vector<std::string>> rows{{"variable", "N", "entities", "mean", "sd", "min", "max"}};
    for (const auto& n : names) {
      const auto& v = ds.values(n);
      double sum = 0, sq = 0, lo = INFINITY, hi = -INFINITY;
      std::size_t count = 0, ents = 0;
      for (std::size_t e = 0; e < ds.n_entities(); ++e) {
        bool seen = false;
        for (std::size_t t = 0; t < ds.n_periods(); ++t) {
          const double x = v[ds.cell(e, t)];
          if (is_missing(x) || !in_window(ds.periods()[t])) continue;
          seen = true;
          ++count;
          sum += x;
          lo = std::min(lo, x);
          hi = std::max(hi, x);
        }
        if (seen) ++ents;
      }
      const double mean = count ? sum / static_cast<double>(count) : NAN;
      for (std::size_t e = 0; e < ds.n_entities(); ++e)
        for (std::size_t t = 0; t < ds.n_periods(); ++t) {
          const double x = v[ds.cell(e, t)];
          if (!is_missing(x) && in_window(ds.periods()[t])) sq += (x - mean) * (x - mean);
        }
      const double sd = count > 1 ? std::sqrt(sq / static_cast<double>(count - 1)) : NAN;
      const int dp = static_cast<int>(decimals);
      rows.push_back({n, std::to_string(count), std::to_string(ents), fixed(mean, dp), fixed(sd, dp),
                      count ? fixed(lo, dp) : ".", count ? fixed(hi, dp) : "."});
    }
    std::vector<std::size_t> width(rows[0].size(), 0);
    for (const auto& r : rows)
      for (std::size_t j = 0; j < r.size(); ++j) width[j] = std::max(width[j], r[j].size());
    out << ds.n_entities() << " entities, " << ds.n_periods() << " periods";
    if (ds.n_periods()) out << " (" << ds.periods().front() << "-" << ds.periods().back() << ")";
    out << '\n';
    for (const auto& r : rows) {
      std::string line;
      for (std::size_t j = 0; j < r.size(); ++j) {
        const std::string pad(width[j] - r[j].size(), ' ');
        line += (j == 0 ? r[j] + pad : pad + r[j]) + "  ";
      }
      while (!line.empty() && line.back() == ' ') line.pop_back();
      out << line << '\n';
    }
    return 0;
  };
  return c;
}

inline std::vector<Command> commands() {
  return {estimate_command(), build_instrument_command(), simulate_command(), describe_command()};
}

// ---------------------------------------------------------------------------

namespace detail {

inline Settings resolve(const Command& cmd, const std::optional<std::string>& config_path,
                        const std::map<std::string, std::string>& flags) {
  std::map<std::string, json> values;
  std::map<std::string, const Key*> by_name;
  for (const auto& k : cmd.keys) {
    values[k.name] = k.fallback;
    by_name[k.name] = &k;
  }
  if (config_path) {
    if (!std::filesystem::is_regular_file(*config_path))
      throw ConfigError("config file '" + *config_path + "' does not exist");
    json j;
    try {
      j = json::parse(read_file(*config_path));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file '" + *config_path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [k, v] : j.items()) {
      auto it = by_name.find(k);
      if (it == by_name.end())
        throw ConfigError("unknown config key '" + k + "' for " + cmd.name);
      values[k] = from_config(*it->second, v);
    }
  }
  for (const auto& [k, text] : flags) values[k] = from_flag(*by_name.at(k), text);
  return Settings(std::move(values));
}

inline std::string key_help(const Key& k) {
  std::string h = k.help;
  if (!k.fallback.is_null()) {
    std::string def;
    if (k.fallback.is_array()) {
      for (const auto& e : k.fallback) def += (def.empty() ? "" : ",") + e.get<std::string>();
    } else if (k.fallback.is_string()) {
      def = k.fallback.get<std::string>();
    } else {
      def = k.fallback.dump();
    }
    h += " [default: " + def + "]";
  }
  return h;
}

}  // namespace detail

/// Runs the application on `args` (without the program name).
inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  const auto cmds = commands();
  CLI::App app{"panelkit: panel fixed-effects IV estimation, instrument construction, and Monte Carlo"};
  app.name("panelkit");
  app.require_subcommand(1);
  app.fallthrough(false);

  struct Bound {
    const Command* cmd;
    CLI::App* sub;
    std::string config;
    std::map<std::string, std::string> storage;
  };
  std::vector<Bound> bound(cmds.size());
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    auto& b = bound[i];
    b.cmd = &cmds[i];
    b.sub = app.add_subcommand(cmds[i].name, cmds[i].description);
    b.sub->add_option("--config", b.config, "JSON file with any of the keys below; flags override it");
    for (const auto& k : cmds[i].keys)
      b.sub->add_option("--" + k.name, b.storage[k.name], detail::key_help(k))->type_name(type_name(k.type));
  }

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    // help requests print the selected subcommand's help and exit 0
    const int code = app.exit(e, out, err);
    if (code == 0) return 0;
    err << "hint: run with --help for usage\n";
    return static_cast<int>(ExitCode::config);
  }

  auto& sink = warning_sink();
  const auto previous = sink;
  sink = [&err](std::string_view m) { err << "warning: " << m << '\n'; };
  struct Restore {
    WarningSink& s;
    WarningSink prev;
    ~Restore() { s = prev; }
  } restore{sink, previous};

  for (auto& b : bound) {
    if (!b.sub->parsed()) continue;
    const std::string name = b.cmd->name;
    try {
      std::map<std::string, std::string> flags;
      for (const auto& k : b.cmd->keys)
        if (b.sub->count("--" + k.name)) flags[k.name] = b.storage[k.name];
      std::optional<std::string> config;
      if (b.sub->count("--config")) config = b.config;
      const Settings settings = detail::resolve(*b.cmd, config, flags);
      return b.cmd->run(settings, out, err);
    } catch (const Error& e) {
      err << "error [" << to_string(e.category()) << "] " << name << ": " << e.what()
          << "\nhint: " << remedy(e.category()) << '\n';
      return exit_code(e.category());
    } catch (const nlohmann::json::exception& e) {
      err << "error [config] " << name << ": " << e.what() << "\nhint: " << remedy(ErrorCategory::config) << '\n';
      return static_cast<int>(ExitCode::config);
    } catch (const std::filesystem::filesystem_error& e) {
      err << "error [data] " << name << ": " << e.what() << "\nhint: " << remedy(ErrorCategory::data) << '\n';
      return static_cast<int>(ExitCode::data);
    } catch (const std::exception& e) {
      err << "error [internal] " << name << ": " << e.what() << "\nhint: "
          << remedy(ErrorCategory::internal) << '\n';
      return static_cast<int>(ExitCode::internal);
    }
  }
  return static_cast<int>(ExitCode::internal);
}

}  // namespace panelkit::cli

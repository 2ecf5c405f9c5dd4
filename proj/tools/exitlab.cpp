// exitlab command-line front end.
//
// Every subcommand resolves its settings as flag > config file > default
// (the seed additionally falls back to EXITLAB_SEED before its default),
// writes its outputs plus manifest.json into --out, and exits nonzero with a
// JSON error object on stderr when anything fails.

#include <cstdlib>
#include <deque>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "exitlab/config.hpp"
#include "exitlab/exitlab.hpp"
#include "exitlab/selftest.hpp"

namespace el = exitlab;
using el::ErrorKind;
using el::Json;

namespace {

enum class Kind { Real, Int, UInt, Bool, Text, Point, IntList };

struct Setting {
  std::string section;  // "run", "model", "experiment" or "numerics"
  std::string key;
  Kind kind;
  std::string def;
  std::string help;
  std::set<std::string> choices;
  std::optional<std::string> flag;
};

const std::vector<std::string>& param_names() {
  static const std::vector<std::string> names{"lambda", "gamma", "rho", "mu", "R", "beta",
                                              "chi",    "eta",   "theta", "alpha", "r"};
  return names;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& raw, const std::string& expect) {
  throw el::Error(ErrorKind::ConfigError, "invalid value '" + raw + "' for key '" + key + "' (expected " + expect + ")");
}

double parse_real(const std::string& key, const std::string& s) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (...) {
    bad_value(key, s, "a real number");
  }
  if (pos != s.size() || !std::isfinite(v)) bad_value(key, s, "a real number");
  return v;
}

long long parse_int(const std::string& key, const std::string& s) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (...) {
    bad_value(key, s, "an integer");
  }
  if (pos != s.size()) bad_value(key, s, "an integer");
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(el::detail::trim(item));
  return out;
}

Json parse_value(const Setting& st, const std::string& raw) {
  const std::string key = st.section == "run" ? st.key : st.section + "." + st.key;
  switch (st.kind) {
    case Kind::Real: return parse_real(key, raw);
    case Kind::Int: return parse_int(key, raw);
    case Kind::UInt: {
      if (raw.empty() || raw.find_first_not_of("0123456789") != std::string::npos)
        bad_value(key, raw, "a nonnegative integer");
      try {
        return static_cast<std::uint64_t>(std::stoull(raw));
      } catch (...) {
        bad_value(key, raw, "a 64-bit unsigned integer");
      }
    }
    case Kind::Bool:
      if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
      if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
      bad_value(key, raw, "true or false");
    case Kind::Text:
      if (!st.choices.empty() && !st.choices.count(raw)) {
        std::string all;
        for (const auto& c : st.choices) all += (all.empty() ? "" : "|") + c;
        bad_value(key, raw, all);
      }
      return raw;
    case Kind::Point: {
      if (raw.empty() || raw == "endemic" || raw == "zbar") return raw;
      const auto parts = split(raw, ',');
      if (parts.size() != 2) bad_value(key, raw, "endemic, zbar or x,y");
      return Json::array({parse_real(key, parts[0]), parse_real(key, parts[1])});
    }
    case Kind::IntList: {
      Json a = Json::array();
      for (const auto& p : split(raw, ',')) a.push_back(parse_int(key, p));
      if (a.empty()) bad_value(key, raw, "a comma-separated list of integers");
      return a;
    }
  }
  return raw;
}

/// Settings of one subcommand plus the shared run/model block.
class RunConfig {
 public:
  std::string command;
  std::optional<std::string> config_path;
  std::optional<std::string> model_flag;
  std::map<std::string, std::optional<double>> param_flags;

  Setting& add(std::string section, std::string key, Kind kind, std::string def, std::string help,
               std::set<std::string> choices = {}) {
    settings_.push_back({std::move(section), std::move(key), kind, std::move(def), std::move(help), std::move(choices), {}});
    return settings_.back();
  }

  void bind(CLI::App* app) {
    app->add_option("--config", config_path, "Sectioned config file; flags override its values");
    app->add_option("--model", model_flag, "Built-in model: sirs, sir_demography, siv, s0is1 (default sirs)");
    for (const auto& p : param_names()) app->add_option("--" + p, param_flags[p], "Model parameter " + p);
    for (auto& st : settings_) app->add_option("--" + flag_name(st), st.flag, st.help + " (default " + (st.def.empty() ? "none" : st.def) + ")");
  }

  /// Schema accepted in config files: the union over all subcommands, so one
  /// file can drive several commands.
  static el::ConfigSchema schema(const std::vector<RunConfig*>& all) {
    el::ConfigSchema s{{"run", {}}, {"model", {"name"}}, {"experiment", {}}, {"numerics", {}}};
    for (const auto& p : param_names()) s["model"].insert(p);
    for (const auto* rc : all)
      for (const auto& st : rc->settings_) s[st.section].insert(st.key);
    return s;
  }

  /// Effective configuration with every default resolved.
  Json resolve(const el::ConfigSchema& schema) const {
    el::ConfigFile file;
    if (config_path) file = el::load_config(*config_path, schema);
    Json eff;
    eff["command"] = command;
    if (config_path) eff["config_file"] = *config_path;

    std::string name = "sirs";
    if (const auto* v = file.find("model", "name")) name = *v;
    if (model_flag) name = *model_flag;
    const auto& names = el::builtin_model_names();
    if (std::find(names.begin(), names.end(), name) == names.end())
      throw el::Error(ErrorKind::ConfigError, "unknown value '" + name + "' for key 'model'");
    auto params = el::default_params(name);
    for (const auto& p : param_names()) {
      std::optional<double> v;
      if (const auto* raw = file.find("model", p)) v = parse_real("model." + p, *raw);
      if (param_flags.at(p)) v = *param_flags.at(p);
      if (!v) continue;
      if (!params.count(p))
        throw el::Error(ErrorKind::ConfigError, "unknown key 'model." + p + "' for model " + name);
      params[p] = *v;
    }
    eff["model"] = {{"name", name}, {"params", params}};
    eff["experiment"] = Json::object();
    eff["numerics"] = Json::object();

    for (const auto& st : settings_) {
      std::optional<std::string> raw;
      if (const auto* v = file.find(st.section, st.key)) raw = *v;
      if (st.section == "run" && st.key == "seed" && !raw && !st.flag)
        if (const char* env = std::getenv("EXITLAB_SEED")) raw = std::string(env);
      if (st.flag) raw = *st.flag;
      const std::string text = raw ? *raw : st.def;
      Json v = parse_value(st, text);
      if (st.section == "run") eff[st.key] = v;
      else eff[st.section][st.key] = v;
    }
    if (eff.contains("jobs") && eff["jobs"].get<long long>() <= 0)
      eff["jobs"] = std::max(1u, std::thread::hardware_concurrency());
    return eff;
  }

 private:
  static std::string flag_name(const Setting& st) {
    if (st.key == "output") return "out,--output";
    std::string f = st.key;
    std::replace(f.begin(), f.end(), '_', '-');
    return f;
  }

  std::deque<Setting> settings_;
};

// ---------------------------------------------------------------------------
// Helpers shared by the subcommands

struct Context {
  Json eff;
  el::ModelSpec model;
  std::optional<el::BoundaryTrace> trace;

  const Json& ex(const char* k) const { return eff["experiment"].at(k); }
  const Json& num(const char* k) const { return eff["numerics"].at(k); }
  std::uint64_t seed() const { return eff["seed"].get<std::uint64_t>(); }
  unsigned jobs() const { return eff["jobs"].get<unsigned>(); }
  std::string out() const { return eff["output"].get<std::string>(); }

  const el::BoundaryTrace& boundary() {
    if (!trace) trace = el::trace_boundary(model, num("resolution").get<double>());
    return *trace;
  }
  el::BasinIndicator basin() {
    return model.is_bistable() ? el::BasinIndicator(model, boundary()) : el::BasinIndicator(model);
  }
  el::Vec point(const Json& p) const {
    if (p.is_array()) return el::vec2(p[0].get<double>(), p[1].get<double>());
    if (p == "zbar") return model.boundary_attractor;
    return model.endemic;
  }
};

std::map<std::string, double> to_params(const Json& j) {
  std::map<std::string, double> p;
  for (auto it = j.begin(); it != j.end(); ++it) p[it.key()] = it.value().get<double>();
  return p;
}

Context make_context(const Json& eff, bool with_model = true) {
  Context c;
  c.eff = eff;
  if (with_model) c.model = el::build_model(eff["model"]["name"], to_params(eff["model"]["params"]));
  return c;
}

Json result_json(const el::QuasipotentialResult& r) {
  std::ostringstream os;
  r.write_json(os);
  return Json::parse(os.str());
}

std::string path_csv(const el::QuasipotentialResult& r) {
  std::ostringstream os;
  r.write_path_csv(os);
  return os.str();
}

el::MinimizerOptions minimizer_options(const Context& c) {
  el::MinimizerOptions mo;
  mo.nodes = c.num("nodes").get<int>();
  return mo;
}

Json profile_summary(const el::BoundaryProfile& prof) {
  std::size_t failed = 0;
  for (const auto& p : prof.points) failed += !p.error.empty();
  const auto& a = prof.points[prof.argmin];
  return {{"minimum", prof.minimum},     {"argmin", el::to_json(a.y)},
          {"argmin_s", a.s},             {"distance_to_zbar", prof.distance_to_zbar},
          {"spacing", prof.spacing},     {"resolution", prof.resolution},
          {"points", prof.points.size()}, {"failed", failed}};
}

void print_summary(const std::string& out, const Json& summary) {
  std::cout << summary.dump(2) << "\nwrote " << out << "\n";
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_simulate(Context& c) {
  const int N = c.ex("N").get<int>();
  const double T = c.ex("T").get<double>();
  const auto basin = c.basin();
  const el::Vec start = el::project_initial(basin, N, c.point(c.ex("z0")));
  el::SimulateOptions so;
  so.reflect = c.ex("reflect").get<bool>();
  so.stop = c.ex("stop") == "exit" ? el::StopRule::AtExit : el::StopRule::AtHorizon;
  const auto path = el::simulate(basin, N, start, T, so, c.seed());

  std::ostringstream csv;
  path.write_csv(csv);
  Json s = {{"N", N},
            {"start", el::to_json(start)},
            {"events", path.event_count},
            {"final_time", path.final_time},
            {"final_state", el::to_json(path.final_state)},
            {"absorbed", path.absorbed}};
  if (path.exit)
    s["exit"] = {{"tau", path.exit->tau},
                 {"location", el::to_json(path.exit->location)},
                 {"mode", std::string(el::to_string(path.exit->mode))},
                 {"other_boundary", path.exit->other_boundary}};
  el::OutputSet out(c.out());
  out.add("path.csv", csv.str());
  out.add("summary.json", s.dump(2) + "\n");
  out.write(c.eff);
  print_summary(c.out(), s);
  return 0;
}

int cmd_lln(Context& c) {
  const int N = c.ex("N").get<int>();
  const double T = c.ex("T").get<double>();
  const double threshold = c.ex("threshold").get<double>();
  const auto reps = c.ex("replicas").get<std::size_t>();
  const auto basin = c.basin();
  const auto res = el::lln_experiment(basin, N, c.point(c.ex("z0")), T, reps, c.seed(), c.jobs());

  std::ostringstream csv;
  csv.precision(17);
  csv << "replica,seed,sup_distance,worst_time,events\n";
  std::vector<double> d;
  std::size_t below = 0;
  for (std::size_t r = 0; r < res.size(); ++r) {
    csv << r << ',' << res[r].seed << ',' << res[r].sup_distance << ',' << res[r].worst_time << ',' << res[r].events
        << '\n';
    d.push_back(res[r].sup_distance);
    below += res[r].sup_distance < threshold;
  }
  Json s = {{"replicas", reps},
            {"threshold", threshold},
            {"below_threshold", below},
            {"fraction_below", reps ? static_cast<double>(below) / reps : 0.0},
            {"max_sup_distance", d.empty() ? 0.0 : *std::max_element(d.begin(), d.end())},
            {"median_sup_distance", d.empty() ? 0.0 : el::detail::percentile(d, 0.5)}};
  el::OutputSet out(c.out());
  out.add("lln.csv", csv.str());
  out.add("summary.json", s.dump(2) + "\n");
  out.write(c.eff);
  print_summary(c.out(), s);
  return 0;
}

int cmd_basin(Context& c) {
  const auto& tr = c.boundary();
  std::ostringstream csv;
  tr.write_csv(csv);
  Json eq = Json::array();
  for (const auto& e : el::equilibria(c.model))
    eq.push_back({{"point", el::to_json(e.point)}, {"stability", std::string(el::to_string(e.stability))}});
  Json s = {{"kind", c.model.is_bistable() ? "separatrix" : "axis"},
            {"points", tr.size()},
            {"length", tr.arclength.back()},
            {"resolution", tr.resolution},
            {"tolerance", tr.tolerance},
            {"characteristic_check", el::characteristic_check(c.model, tr)},
            {"endemic", el::to_json(c.model.endemic)},
            {"zbar", el::to_json(c.model.boundary_attractor)},
            {"zbar_s", tr.arclength_of(c.model.boundary_attractor)},
            {"equilibria", eq}};
  el::OutputSet out(c.out());
  out.add("trace.csv", csv.str());
  out.add("summary.json", s.dump(2) + "\n");
  out.write(c.eff);
  print_summary(c.out(), s);
  return 0;
}

int cmd_minpath(Context& c) {
  const std::string method = c.ex("method");
  const el::Vec target = c.point(c.ex("target"));
  Json s = {{"target", el::to_json(target)}};
  el::OutputSet out(c.out());
  std::optional<double> vs, vd;
  if (method != "discrete") {
    el::ShootingOptions so;
    so.epsilon = c.num("epsilon").get<double>();
    const auto r = el::shoot_heteroclinic(c.model, target, so);
    vs = r.value;
    s["shooting"] = result_json(r);
    out.add("path_shooting.csv", path_csv(r));
  }
  if (method != "shooting") {
    const auto r = el::minimize_discrete_action(c.model, c.model.endemic, target, minimizer_options(c));
    vd = r.value;
    s["discrete"] = result_json(r);
    out.add("path_discrete.csv", path_csv(r));
  }
  if (vs && vd) s["relative_difference"] = std::abs(*vd - *vs) / std::abs(*vs);
  out.add("result.json", s.dump(2) + "\n");
  out.write(c.eff);
  Json brief = {{"target", s["target"]}};
  if (vs) brief["shooting"] = *vs;
  if (vd) brief["discrete"] = *vd;
  if (s.contains("relative_difference")) brief["relative_difference"] = s["relative_difference"];
  print_summary(c.out(), brief);
  return 0;
}

int cmd_profile(Context& c) {
  const auto prof = el::boundary_profile(c.model, c.boundary(), c.num("stride").get<std::size_t>(),
                                         minimizer_options(c), c.jobs());
  std::ostringstream csv;
  prof.write_csv(csv);
  const Json s = profile_summary(prof);
  el::OutputSet out(c.out());
  out.add("profile.csv", csv.str());
  out.add("profile.json", s.dump(2) + "\n");
  out.write(c.eff);
  print_summary(c.out(), s);
  return 0;
}

Json fit_json(const el::ScalingFit& f) {
  return {{"slope", f.slope},       {"intercept", f.intercept}, {"ci_low", f.ci_low},
          {"ci_high", f.ci_high},   {"slope_se", f.slope_se},   {"N", f.N},
          {"probability", f.probability}, {"dropped", f.dropped}, {"resamples", f.resamples}};
}

int cmd_exit_measure(Context& c) {
  el::ExitMeasureOptions o;
  o.N_list = c.ex("N_list").get<std::vector<int>>();
  o.replicas = c.ex("replicas").get<std::size_t>();
  o.delta = c.ex("delta").get<double>();
  o.bin_width = c.ex("bin_width").get<double>();
  o.horizon = c.ex("horizon").get<double>();
  o.reflect = c.ex("reflect").get<bool>();
  o.bootstrap = c.ex("bootstrap").get<std::size_t>();
  o.with_profile = c.ex("with_profile").get<bool>();
  o.profile_stride = c.num("stride").get<std::size_t>();
  o.minimizer = minimizer_options(c);
  o.seed = c.seed();
  o.jobs = c.jobs();
  const auto& tr = c.boundary();
  const auto rep = el::run_exit_measure(c.model, tr, c.point(c.ex("z0")), o);

  Json s = Json::array();
  for (const auto& cell : rep.cells)
    s.push_back({{"N", cell.N},
                 {"fraction_near", cell.fraction_near},
                 {"fraction_se", cell.fraction_se},
                 {"mode_s", cell.mode_s},
                 {"censored", cell.censored}});
  Json brief = {{"zbar_s", rep.zbar_s}, {"cells", s}};
  if (rep.has_theory) brief["argmin_s"] = rep.argmin_s;

  // Optional rate comparison: exits near zbar versus near a chosen boundary point.
  std::vector<std::pair<std::string, std::string>> extra;
  const Json& sp = c.ex("scaling_point");
  if (!(sp.is_string() && sp.get<std::string>().empty())) {
    const double sd = c.ex("scaling_delta").get<double>();
    Json sc;
    auto fit = [&](const char* label, const el::Vec& y) {
      try {
        sc[label] = fit_json(el::scaling_estimate(rep, el::exit_near(tr, y, sd), o.bootstrap,
                                                  el::derive_seed(c.seed(), 0x51)));
      } catch (const el::Error& e) {
        sc[label] = {{"error", e.what()}};
      }
      sc[label]["point"] = el::to_json(y);
    };
    fit("zbar", c.model.boundary_attractor);
    fit("point", c.point(sp));
    sc["delta"] = sd;
    extra.emplace_back("scaling.json", sc.dump(2) + "\n");
    brief["scaling"] = sc;
  }
  el::write_report(rep, c.out(), c.eff, extra);
  print_summary(c.out(), brief);
  return 0;
}

int cmd_selftest(Context& c) {
  el::SelftestOptions so;
  so.seed = c.seed();
  so.resolution = c.num("resolution").get<double>();
  const auto checks = el::run_selftest(so);
  Json a = Json::array();
  std::size_t failed = 0;
  for (const auto& k : checks) {
    a.push_back({{"name", k.name}, {"passed", k.passed}, {"value", k.value}, {"threshold", k.threshold},
                 {"detail", k.detail}});
    failed += !k.passed;
    std::cout << (k.passed ? "PASS " : "FAIL ") << k.name << " value=" << k.value << " threshold=" << k.threshold
              << '\n';
  }
  Json s = {{"checks", a}, {"failed", failed}};
  el::OutputSet out(c.out());
  out.add("selftest.json", s.dump(2) + "\n");
  out.write(c.eff);
  if (failed)
    throw el::Error(ErrorKind::NonConvergence, std::to_string(failed) + " selftest check(s) failed");
  return 0;
}

void print_error(ErrorKind kind, const std::string& message) {
  Json e = {{"error", {{"kind", std::string(el::to_string(kind))}, {"message", message}}}};
  std::cerr << e.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exitlab: jump-process simulation, quasipotentials and exit-measure experiments"};
  app.set_version_flag("--version", std::string(el::kVersion));
  app.require_subcommand(1);

  struct Command {
    RunConfig rc;
    CLI::App* app = nullptr;
    int (*run)(Context&) = nullptr;
  };
  std::deque<Command> cmds;
  auto make = [&](const std::string& name, const std::string& help, int (*run)(Context&)) -> RunConfig& {
    auto& c = cmds.emplace_back();
    c.rc.command = name;
    c.app = app.add_subcommand(name, help);
    c.run = run;
    c.rc.add("run", "seed", Kind::UInt, "1", "Master seed (falls back to EXITLAB_SEED)");
    c.rc.add("run", "output", Kind::Text, "exitlab-out", "Output directory");
    c.rc.add("run", "jobs", Kind::Int, "0", "Worker threads; 0 means machine parallelism");
    return c.rc;
  };

  {
    auto& r = make("simulate", "One trajectory of the jump process to CSV", cmd_simulate);
    r.add("experiment", "N", Kind::Int, "1000", "Population scale");
    r.add("experiment", "T", Kind::Real, "10", "Time horizon");
    r.add("experiment", "z0", Kind::Point, "endemic", "Start: endemic, zbar or x,y");
    r.add("experiment", "reflect", Kind::Bool, "false", "Suppress jumps leaving the closed basin");
    r.add("experiment", "stop", Kind::Text, "horizon", "Stop rule", {"horizon", "exit"});
    r.add("numerics", "resolution", Kind::Real, "0.01", "Boundary trace resolution");
  }
  {
    auto& r = make("lln-check", "Sup-distance between jump paths and the drift ODE", cmd_lln);
    r.add("experiment", "N", Kind::Int, "10000", "Population scale");
    r.add("experiment", "T", Kind::Real, "10", "Time horizon");
    r.add("experiment", "z0", Kind::Point, "endemic", "Start: endemic, zbar or x,y");
    r.add("experiment", "replicas", Kind::Int, "100", "Independent runs");
    r.add("experiment", "threshold", Kind::Real, "0.05", "Sup-distance threshold for the summary");
    r.add("numerics", "resolution", Kind::Real, "0.01", "Boundary trace resolution");
  }
  {
    auto& r = make("basin", "Trace the characteristic boundary and check it", cmd_basin);
    r.add("numerics", "resolution", Kind::Real, "0.01", "Boundary trace resolution");
  }
  {
    auto& r = make("minpath", "Quasipotential from the endemic equilibrium", cmd_minpath);
    r.add("experiment", "method", Kind::Text, "both", "Solver", {"shooting", "discrete", "both"});
    r.add("experiment", "target", Kind::Point, "zbar", "Target: zbar, endemic or x,y");
    r.add("numerics", "epsilon", Kind::Real, "1e-4", "Shooting offset from the endemic equilibrium");
    r.add("numerics", "nodes", Kind::Int, "127", "Discrete minimizer interior nodes");
  }
  {
    auto& r = make("profile", "V along the characteristic boundary", cmd_profile);
    r.add("numerics", "resolution", Kind::Real, "0.01", "Boundary trace resolution");
    r.add("numerics", "stride", Kind::Int, "8", "Profile every stride-th trace vertex");
    r.add("numerics", "nodes", Kind::Int, "63", "Discrete minimizer interior nodes");
  }
  {
    auto& r = make("exit-measure", "Monte Carlo exit-location experiment", cmd_exit_measure);
    r.add("experiment", "N_list", Kind::IntList, "100,200,400", "Ascending population scales");
    r.add("experiment", "replicas", Kind::Int, "1000", "Replicas per N");
    r.add("experiment", "delta", Kind::Real, "0.1", "Concentration radius around zbar (arclength)");
    r.add("experiment", "bin_width", Kind::Real, "0.02", "Histogram bin width (arclength)");
    r.add("experiment", "horizon", Kind::Real, "1e4", "Censoring horizon");
    r.add("experiment", "reflect", Kind::Bool, "false", "Reflected process");
    r.add("experiment", "bootstrap", Kind::Int, "200", "Bootstrap resamples");
    r.add("experiment", "with_profile", Kind::Bool, "true", "Compute the boundary profile");
    r.add("experiment", "z0", Kind::Point, "endemic", "Start: endemic or x,y");
    r.add("experiment", "scaling_point", Kind::Point, "", "Boundary point for the rate comparison (x,y); empty skips it");
    r.add("experiment", "scaling_delta", Kind::Real, "0.1", "Event radius for the rate comparison");
    r.add("numerics", "resolution", Kind::Real, "0.01", "Boundary trace resolution");
    r.add("numerics", "stride", Kind::Int, "8", "Profile stride");
    r.add("numerics", "nodes", Kind::Int, "63", "Discrete minimizer interior nodes");
  }
  {
    auto& r = make("selftest", "Run the invariant suite on all built-in models", cmd_selftest);
    r.add("numerics", "resolution", Kind::Real, "0.02", "Boundary trace resolution");
  }

  std::vector<RunConfig*> all;
  for (auto& c : cmds) {
    c.rc.bind(c.app);
    all.push_back(&c.rc);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(ErrorKind::ConfigError, e.what());
    return 2;
  }

  for (auto& c : cmds) {
    if (!c.app->parsed()) continue;
    try {
      const Json eff = c.rc.resolve(RunConfig::schema(all));
      Context ctx = make_context(eff, c.rc.command != "selftest");
      return c.run(ctx);
    } catch (const el::Error& e) {
      print_error(e.kind(), e.what());
      return e.kind() == ErrorKind::ConfigError ? 2 : 1;
    } catch (const std::exception& e) {
      print_error(ErrorKind::InvalidArgument, e.what());
      return 1;
    }
  }
  return 0;
}

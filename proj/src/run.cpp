#include "pointillist/run.hpp"

#include "pointillist/parallel.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace pointillist {

using nlohmann::json;

ScanFailure::ScanFailure(int scan, const std::string& what)
    : std::runtime_error("scan " + std::to_string(scan) + ": " + what), scan_(scan) {}

namespace {

// ---------------------------------------------------------------------------
// Config reading. Every getter writes its default back so the document ends
// up normalized.

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
std::string index(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

[[noreturn]] void fail(const std::string& path, const std::string& msg) { throw ConfigError(path + ": " + msg); }

/// Runs f, prefixing library validation errors with the config path.
template <class F>
auto at(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    fail(path, e.what());
  }
}

json& object(json& parent, const std::string& key, const std::string& path) {
  if (!parent.contains(key) || parent[key].is_null()) parent[key] = json::object();
  if (!parent[key].is_object()) fail(join(path, key), "expected an object");
  return parent[key];
}

double number(json& obj, const std::string& key, const std::string& path, std::optional<double> def = std::nullopt) {
  if (!obj.contains(key) || obj[key].is_null()) {
    if (!def) fail(join(path, key), "required");
    obj[key] = *def;
    return *def;
  }
  if (!obj[key].is_number()) fail(join(path, key), "expected a number");
  const double v = obj[key].get<double>();
  if (!std::isfinite(v)) fail(join(path, key), "must be finite");
  return v;
}

std::int64_t integer(json& obj, const std::string& key, const std::string& path,
                     std::optional<std::int64_t> def = std::nullopt) {
  if (!obj.contains(key) || obj[key].is_null()) {
    if (!def) fail(join(path, key), "required");
    obj[key] = *def;
    return *def;
  }
  if (!obj[key].is_number_integer()) fail(join(path, key), "expected an integer");
  return obj[key].get<std::int64_t>();
}

std::string text(json& obj, const std::string& key, const std::string& path,
                 std::optional<std::string> def = std::nullopt) {
  if (!obj.contains(key) || obj[key].is_null()) {
    if (!def) fail(join(path, key), "required");
    obj[key] = *def;
    return *def;
  }
  if (!obj[key].is_string()) fail(join(path, key), "expected a string");
  return obj[key].get<std::string>();
}

std::vector<double> numbers(const json& v, const std::string& path) {
  if (!v.is_array()) fail(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) fail(index(path, i), "expected a number");
    out.push_back(v[i].get<double>());
  }
  return out;
}

Vec vec(const json& v, const std::string& path) {
  const auto xs = numbers(v, path);
  if (xs.empty()) fail(path, "empty vector");
  return Eigen::Map<const Vec>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

/// Rows as nested arrays, or {"diag": [...]}.
Mat mat(const json& v, const std::string& path) {
  if (v.is_object()) {
    if (!v.contains("diag")) fail(path, "expected rows or {\"diag\": [...]}");
    return vec(v["diag"], join(path, "diag")).asDiagonal();
  }
  if (!v.is_array() || v.empty()) fail(path, "expected a non-empty array of rows");
  const std::size_t cols = v[0].is_array() ? v[0].size() : 0;
  if (cols == 0) fail(index(path, 0), "expected a non-empty row");
  Mat m(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto row = numbers(v[i], index(path, i));
    if (row.size() != cols) fail(index(path, i), "ragged matrix");
    for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
  }
  return m;
}

const json& member(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.contains(key) || obj[key].is_null()) fail(join(path, key), "required");
  return obj[key];
}

GaussianDensity gaussian(const json& obj, const std::string& path) {
  if (!obj.is_object()) fail(path, "expected an object with mean and cov");
  const Vec m = vec(member(obj, "mean", path), join(path, "mean"));
  const Mat c = mat(member(obj, "cov", path), join(path, "cov"));
  return at(path, [&] { return GaussianDensity(m, c); });
}

GaussianMixture mixture(const json& v, const std::string& path) {
  if (!v.is_array()) fail(path, "expected an array of weighted components");
  GaussianMixture out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    json c = v[i];
    if (!c.is_object()) fail(index(path, i), "expected an object");
    const double w = number(c, "weight", index(path, i));
    if (!(w >= 0.0)) fail(join(index(path, i), "weight"), "must be non-negative");
    out.weights.push_back(w);
    out.components.push_back(gaussian(c, index(path, i)));
  }
  return out;
}

std::vector<double> probability_list(const json& v, const std::string& path) {
  auto xs = numbers(v, path);
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (!(xs[i] >= 0.0 && xs[i] <= 1.0)) fail(index(path, i), "probability out of range");
  return xs;
}

// ---------------------------------------------------------------------------

bool is_cv(const json& motion) { return !motion.contains("F"); }

Scenario parse_scenario(json& sc, const std::string& p) {
  Scenario s;
  s.duration = static_cast<int>(integer(sc, "duration", p));
  if (s.duration < 0) fail(join(p, "duration"), "must be non-negative");
  const std::int64_t seed = integer(sc, "seed", p, 0);
  if (seed < 0) fail(join(p, "seed"), "must be non-negative");
  s.seed = static_cast<std::uint64_t>(seed);

  json& mo = object(sc, "motion", p);
  const std::string mp = join(p, "motion");
  int spatial_dim = 0;
  if (is_cv(mo)) {
    const std::string model = text(mo, "model", mp, "constant_velocity");
    if (model != "constant_velocity") fail(join(mp, "model"), "unknown motion model '" + model + "'");
    spatial_dim = static_cast<int>(integer(mo, "spatial_dim", mp, 2));
    if (spatial_dim < 1) fail(join(mp, "spatial_dim"), "must be positive");
    const double dt = number(mo, "dt", mp, 1.0);
    const double q = number(mo, "q", mp, 0.01);
    if (!(dt > 0.0)) fail(join(mp, "dt"), "must be positive");
    if (!(q >= 0.0)) fail(join(mp, "q"), "must be non-negative");
    s.motion = MotionModel::constant_velocity(spatial_dim, dt, q);
  } else {
    const Mat F = mat(mo["F"], join(mp, "F"));
    const Mat Q = mat(member(mo, "Q", mp), join(mp, "Q"));
    s.motion = at(mp, [&] { return MotionModel(F, Q); });
  }

  json& me = object(sc, "measurement", p);
  const std::string mep = join(p, "measurement");
  if (me.contains("H")) {
    const Mat H = mat(me["H"], join(mep, "H"));
    const Mat R = mat(member(me, "R", mep), join(mep, "R"));
    s.mm = at(mep, [&] { return MeasurementModel(H, R); });
  } else {
    if (spatial_dim == 0) fail(join(mep, "H"), "required unless the motion model is constant_velocity");
    const std::string model = text(me, "model", mep, "position");
    if (model != "position") fail(join(mep, "model"), "unknown measurement model '" + model + "'");
    const double r = number(me, "r", mep, 1.0);
    if (!(r > 0.0)) fail(join(mep, "r"), "must be positive");
    Mat H = Mat::Zero(spatial_dim, 2 * spatial_dim);
    H.leftCols(spatial_dim).setIdentity();
    s.mm = at(mep, [&] { return MeasurementModel(H, r * Mat::Identity(spatial_dim, spatial_dim)); });
  }
  if (s.mm.H.cols() != s.motion.F.rows()) fail(join(mep, "H"), "column count differs from the state dimension");

  const double pd = number(sc, "pd", p, 1.0);
  if (!(pd >= 0.0 && pd <= 1.0)) fail(join(p, "pd"), "detection probability out of range");
  s.pd = DetectionModel(pd);

  json& cl = object(sc, "clutter", p);
  const std::string cp = join(p, "clutter");
  const std::string type = text(cl, "type", cp, "poisson");
  json& bx = object(cl, "box", cp);
  const std::string bp = join(cp, "box");
  const Box box = at(bp, [&] { return Box(vec(member(bx, "low", bp), join(bp, "low")), vec(member(bx, "high", bp), join(bp, "high"))); });
  if (box.dim() != s.mm.H.rows()) fail(bp, "dimension differs from the measurement dimension");
  SpatialDensity spatial = SpatialDensity::uniform(box);
  if (cl.contains("spatial") && !cl["spatial"].is_null()) {
    if (cl["spatial"].is_string()) {
      if (cl["spatial"].get<std::string>() != "uniform") fail(join(cp, "spatial"), "expected \"uniform\" or a Gaussian");
    } else {
      const GaussianDensity g = gaussian(cl["spatial"], join(cp, "spatial"));
      spatial = at(join(cp, "spatial"), [&] { return SpatialDensity::truncated_gaussian(g, box); });
    }
  } else {
    cl["spatial"] = "uniform";
  }
  if (type == "poisson") {
    const double rate = number(cl, "rate", cp);
    if (!(rate >= 0.0)) fail(join(cp, "rate"), "must be non-negative");
    s.clutter = PoissonClutter(rate, spatial);
  } else if (type == "cluster") {
    const auto card = numbers(member(cl, "card", cp), join(cp, "card"));
    s.clutter = at(join(cp, "card"), [&] { return ClusterClutter(card, spatial); });
  } else {
    fail(join(cp, "type"), "unknown clutter type '" + type + "'");
  }

  if (sc.contains("gate") && !sc["gate"].is_null()) {
    const double g = number(sc, "gate", p);
    if (!(g > 0.0)) fail(join(p, "gate"), "must be positive");
    s.gate = g;
  }

  if (!sc.contains("targets")) sc["targets"] = json::array();
  if (!sc["targets"].is_array()) fail(join(p, "targets"), "expected an array");
  for (std::size_t i = 0; i < sc["targets"].size(); ++i) {
    json& t = sc["targets"][i];
    const std::string tp = index(join(p, "targets"), i);
    if (!t.is_object()) fail(tp, "expected an object");
    TargetSpec spec;
    spec.birth_scan = static_cast<int>(integer(t, "birth", tp, 0));
    spec.death_scan = static_cast<int>(integer(t, "death", tp, s.duration));
    spec.initial = gaussian(t, tp);
    s.targets.push_back(std::move(spec));
  }
  at(p, [&] {
    validate_scenario(s);
    return 0;
  });
  return s;
}

DiffOptions parse_method(json& doc, const ConfigOverrides& ov, bool& reference) {
  if (!doc.contains("method") || doc["method"].is_null()) doc["method"] = json::object();
  if (doc["method"].is_string()) doc["method"] = json{{"name", doc["method"]}};
  json& m = object(doc, "method", "");
  if (!ov.method.empty()) m["name"] = ov.method;
  const std::string name = text(m, "name", "method", "ad");
  DiffOptions o;
  reference = name == "oracle";
  if (!reference) o.method = at("method.name", [&] { return parse_diff_method(name); });
  o.radius = number(m, "radius", "method", o.radius);
  o.nodes = static_cast<int>(integer(m, "nodes", "method", o.nodes));
  o.step = number(m, "step", "method", o.step);
  o.threads = static_cast<int>(integer(m, "threads", "method", 0));
  if (!(o.radius > 0.0)) fail("method.radius", "must be positive");
  if (o.nodes < 1) fail("method.nodes", "must be positive");
  if (!(o.step > 0.0 && o.step <= 0.5)) fail("method.step", "must be in (0, 0.5]");
  if (o.threads < 0) fail("method.threads", "must be non-negative");
  return o;
}

void parse_filter(json& f, const Scenario& sc, RunConfig& cfg) {
  const std::string p = "filter";
  FilterConfig& fc = cfg.filter;
  fc.kind = at(join(p, "kind"), [&] { return parse_filter_kind(text(f, "kind", p)); });
  f["kind"] = std::string(to_string(fc.kind));
  fc.motion = sc.motion;
  fc.mm = sc.mm;
  fc.clutter = sc.clutter;
  const double pd = number(f, "pd", p, sc.pd.pd);
  if (!(pd >= 0.0 && pd <= 1.0)) fail(join(p, "pd"), "detection probability out of range");
  fc.det = DetectionModel(pd);
  fc.survival = number(f, "survival", p, 1.0);
  if (!(fc.survival >= 0.0 && fc.survival <= 1.0)) fail(join(p, "survival"), "survival probability out of range");
  if (f.contains("gate") || sc.gate) {
    if (!f.contains("gate")) f["gate"] = *sc.gate;
    if (!f["gate"].is_null()) {
      const double g = number(f, "gate", p);
      if (!(g > 0.0)) fail(join(p, "gate"), "must be positive");
      if (supports_gating(fc.kind)) fc.gate_threshold = g;
    }
  }
  fc.n_max = static_cast<int>(integer(f, "n_max", p, 64));
  if (fc.n_max < 1) fail(join(p, "n_max"), "must be positive");
  fc.confirm_threshold = number(f, "confirm", p, 0.5);
  fc.track_prune = number(f, "track_prune", p, 1e-3);
  fc.cubature_order = static_cast<int>(integer(f, "cubature_order", p, 6));
  if (fc.cubature_order < 1) fail(join(p, "cubature_order"), "must be positive");

  json& red = object(f, "reduce", p);
  fc.reduce.prune_threshold = number(red, "prune", join(p, "reduce"), 1e-5);
  fc.reduce.merge_distance = number(red, "merge", join(p, "reduce"), 4.0);
  const std::int64_t max_comp = integer(red, "max", join(p, "reduce"), 100);
  if (!(fc.reduce.prune_threshold >= 0.0)) fail("filter.reduce.prune", "must be non-negative");
  if (!(fc.reduce.merge_distance >= 0.0)) fail("filter.reduce.merge", "must be non-negative");
  if (max_comp < 1) fail("filter.reduce.max", "must be positive");
  fc.reduce.max_components = static_cast<std::size_t>(max_comp);

  if (f.contains("extended") && !f["extended"].is_null()) {
    json& e = object(f, "extended", p);
    const double epd = number(e, "pd", join(p, "extended"), pd);
    const auto dm = numbers(member(e, "dm", join(p, "extended")), "filter.extended.dm");
    fc.ext = at("filter.extended", [&] { return ExtendedTargetPgf(epd, dm); });
  }

  json& birth = object(f, "birth", p);
  if (birth.contains("intensity")) fc.birth.intensity = mixture(birth["intensity"], "filter.birth.intensity");
  if (birth.contains("bernoulli")) {
    if (!birth["bernoulli"].is_array()) fail("filter.birth.bernoulli", "expected an array");
    for (std::size_t i = 0; i < birth["bernoulli"].size(); ++i) {
      json& b = birth["bernoulli"][i];
      const std::string bp = index("filter.birth.bernoulli", i);
      const double chi = number(b, "existence", bp);
      if (!(chi >= 0.0 && chi <= 1.0)) fail(join(bp, "existence"), "existence probability out of range");
      fc.birth.bernoulli.push_back({chi, gaussian(b, bp), 0});
    }
  }

  if (f.contains("data_birth") && !f["data_birth"].is_null()) {
    json& d = object(f, "data_birth", p);
    DataBirth db;
    db.rate = number(d, "rate", "filter.data_birth");
    if (!(db.rate >= 0.0)) fail("filter.data_birth.rate", "must be non-negative");
    db.cov = mat(member(d, "cov", "filter.data_birth"), "filter.data_birth.cov");
    if (db.cov.rows() != sc.motion.F.rows() || db.cov.cols() != db.cov.rows())
      fail("filter.data_birth.cov", "dimension differs from the state dimension");
    if (d.contains("gamma") && !d["gamma"].is_null()) {
      db.gamma = number(d, "gamma", "filter.data_birth");
      if (!(*db.gamma >= 0.0 && *db.gamma <= 1.0)) fail("filter.data_birth.gamma", "probability out of range");
    }
    fc.data_birth = db;
  } else if (fc.kind == FilterKind::MHT || fc.kind == FilterKind::MB) {
    fail("filter.data_birth", "required for filter '" + std::string(to_string(fc.kind)) + "'");
  }

  if (f.contains("resolution") && !f["resolution"].is_null()) {
    json& r = object(f, "resolution", p);
    const Mat sigma = mat(member(r, "sigma", "filter.resolution"), "filter.resolution.sigma");
    const double p1 = number(r, "pd1", "filter.resolution", pd);
    const double p2 = number(r, "pd2", "filter.resolution", pd);
    ResolutionModel rm = at("filter.resolution", [&] { return ResolutionModel(sc.mm.H, sc.mm.H, sigma, p1, p2); });
    if (r.contains("fixed_f") && !r["fixed_f"].is_null()) {
      const double ff = number(r, "fixed_f", "filter.resolution");
      if (!(ff >= 0.0 && ff <= 1.0)) fail("filter.resolution.fixed_f", "must be in [0, 1]");
      rm.fixed_f = ff;
    }
    fc.resolution = rm;
  } else if (fc.kind == FilterKind::ResJPDA) {
    fail("filter.resolution", "required for filter 'resjpda'");
  }

  // Initial state; defaults come from the targets present at scan 0.
  InitialState& init = cfg.initial;
  json& in = object(f, "initial", p);
  if (in.contains("targets")) {
    if (!in["targets"].is_array()) fail("filter.initial.targets", "expected an array");
    for (std::size_t i = 0; i < in["targets"].size(); ++i)
      init.targets.push_back(gaussian(in["targets"][i], index("filter.initial.targets", i)));
  } else {
    json arr = json::array();
    for (const auto& t : sc.targets)
      if (t.birth_scan == 0) {
        init.targets.push_back(t.initial);
        const Vec dg = t.initial.cov.diagonal();
        arr.push_back({{"mean", std::vector<double>(t.initial.mean.data(), t.initial.mean.data() + t.initial.mean.size())},
                       {"cov", {{"diag", std::vector<double>(dg.data(), dg.data() + dg.size())}}}});
      }
    // Echo only when the covariances are diagonal; otherwise leave implicit.
    bool diagonal = true;
    for (const auto& g : init.targets) diagonal = diagonal && g.cov.isDiagonal();
    if (diagonal) in["targets"] = arr;
  }
  for (std::size_t i = 0; i < init.targets.size(); ++i)
    if (init.targets[i].dim() != sc.motion.F.rows())
      fail(index("filter.initial.targets", i), "dimension differs from the state dimension");

  if (f.contains("existence")) {
    init.existence = numbers(f["existence"], "filter.existence");
    for (std::size_t i = 0; i < init.existence.size(); ++i)
      if (!(init.existence[i] >= 0.0 && init.existence[i] <= 1.0))
        fail(index("filter.existence", i), "existence probability out of range");
    if (state_shape(fc.kind) == StateShape::Tracks && init.existence.size() != init.targets.size())
      fail("filter.existence", "one existence probability per initial target is required");
  } else if (state_shape(fc.kind) == StateShape::Tracks) {
    init.existence.assign(init.targets.size(), 1.0);
    f["existence"] = init.existence;
  }

  if (in.contains("intensity")) {
    init.intensity = mixture(in["intensity"], "filter.initial.intensity");
  } else {
    init.intensity = GaussianMixture(std::vector<double>(init.targets.size(), 1.0), init.targets);
  }
  if (fc.kind == FilterKind::CPHD) {
    if (in.contains("cardinality")) {
      init.cardinality = probability_list(in["cardinality"], "filter.initial.cardinality");
      double sum = 0.0;
      for (double v : init.cardinality) sum += v;
      if (std::abs(sum - 1.0) > kPmfTolerance) fail("filter.initial.cardinality", "probabilities must sum to 1");
    } else {
      init.cardinality = poisson_pmf(init.intensity.mass(), fc.n_max);
    }
  }
  if (in.contains("groups")) {
    if (!in["groups"].is_array()) fail("filter.initial.groups", "expected an array");
    for (std::size_t g = 0; g < in["groups"].size(); ++g)
      init.groups.push_back(mixture(in["groups"][g], index("filter.initial.groups", g)));
  } else {
    for (const auto& t : init.targets) init.groups.emplace_back(t);
  }

  if (fc.kind == FilterKind::PMHT || fc.kind == FilterKind::PMHTS) {
    if (f.contains("pmht_rates")) {
      fc.pmht_rates = numbers(f["pmht_rates"], "filter.pmht_rates");
    } else {
      fc.pmht_rates.assign(init.targets.size(), pd);
      f["pmht_rates"] = fc.pmht_rates;
    }
    for (std::size_t i = 0; i < fc.pmht_rates.size(); ++i)
      if (!(fc.pmht_rates[i] >= 0.0)) fail(index("filter.pmht_rates", i), "must be non-negative");
  }
}

}  // namespace

RunConfig parse_config(json doc, const std::string& base_dir, const ConfigOverrides& ov) {
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  RunConfig cfg;
  if (doc.contains("scenario") && doc["scenario"].is_string()) {
    const std::filesystem::path sp = std::filesystem::path(base_dir) / doc["scenario"].get<std::string>();
    std::ifstream in(sp);
    if (!in) fail("scenario", "cannot open '" + sp.string() + "'");
    try {
      doc["scenario"] = json::parse(in);
    } catch (const json::exception& e) {
      fail("scenario", std::string("invalid JSON: ") + e.what());
    }
  }
  json& sc = object(doc, "scenario", "");
  if (ov.seed) sc["seed"] = *ov.seed;
  if (doc.contains("scans_file") && !doc["scans_file"].is_null()) {
    const std::string f = text(doc, "scans_file", "");
    cfg.scans_file = (std::filesystem::path(base_dir) / f).string();
  }
  cfg.scenario = parse_scenario(sc, "scenario");

  json& f = object(doc, "filter", "");
  if (!ov.filter.empty()) f["kind"] = ov.filter;
  cfg.filter.diff = parse_method(doc, ov, cfg.reference);
  parse_filter(f, cfg.scenario, cfg);
  if (cfg.reference && !has_reference_update(cfg.filter.kind))
    fail("method.name", "the enumeration reference does not support filter '" + std::string(to_string(cfg.filter.kind)) + "'");

  json& mt = object(doc, "metrics", "");
  cfg.metrics.cutoff = number(mt, "cutoff", "metrics", 10.0);
  cfg.metrics.order = number(mt, "order", "metrics", 1.0);
  cfg.metrics.compare_dims = static_cast<int>(integer(mt, "compare_dims", "metrics", cfg.scenario.mm.H.rows()));
  if (!(cfg.metrics.cutoff > 0.0)) fail("metrics.cutoff", "must be positive");
  if (!(cfg.metrics.order >= 1.0)) fail("metrics.order", "must be at least 1");
  if (cfg.metrics.compare_dims < 0 || cfg.metrics.compare_dims > cfg.scenario.motion.F.rows())
    fail("metrics.compare_dims", "out of range");

  if (!ov.out_dir.empty()) doc["output"] = ov.out_dir;
  cfg.out_dir = text(doc, "output", "", "out");

  // Build the initial state once so state-level errors surface here.
  at("filter", [&] { return initial_state(cfg); });
  cfg.normalized = std::move(doc);
  return cfg;
}

RunConfig load_config(const std::string& path, const ConfigOverrides& ov) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_config(std::move(doc), std::filesystem::path(path).parent_path().string(), ov);
}

FilterState initial_state(const RunConfig& cfg) {
  const InitialState& in = cfg.initial;
  return make_state(cfg.filter.kind, in.targets, in.existence, in.intensity, in.cardinality, in.groups);
}

ScanData read_measurements_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("scans_file: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("scans_file: empty file");
  ScanData d;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) throw ConfigError("scans_file: line " + std::to_string(lineno) + ": too few columns");
    try {
      const int scan = std::stoi(cells[0]);
      if (scan < 0) throw std::invalid_argument("negative scan");
      if (static_cast<std::size_t>(scan) >= d.scans.size()) d.scans.resize(static_cast<std::size_t>(scan) + 1);
      Vec y(static_cast<Eigen::Index>(cells.size() - 2));
      for (std::size_t i = 1; i + 1 < cells.size(); ++i) y[static_cast<Eigen::Index>(i - 1)] = std::stod(cells[i]);
      const std::string& o = cells.back();
      d.scans[static_cast<std::size_t>(scan)].measurements.push_back(y);
      d.scans[static_cast<std::size_t>(scan)].origins.push_back(o == "clutter" || o.empty() ? kClutterOrigin : std::stoll(o));
    } catch (const std::logic_error&) {
      throw ConfigError("scans_file: line " + std::to_string(lineno) + ": malformed row");
    }
  }
  return d;
}

namespace {

json method_agreement(const FilterState& s, const FilterConfig& fc, std::span<const Vec> ys) {
  // A short measurement prefix keeps the contour and stencil grids small.
  json out;
  try {
    std::vector<Vec> sub(ys.begin(), ys.end());
    const FilterParams full = scan_params(s, fc, ys);
    if (full.gate_threshold && supports_gating(full.kind)) sub = gate_measurements(full, ys);
    sub.resize(std::min<std::size_t>(sub.size(), 4));
    out["measurements"] = sub.size();
    FilterParams p = scan_params(s, fc, sub);
    const PgflExpr e = build_filter(p);
    std::map<std::string, double> vals;
    for (DiffMethod dm : {DiffMethod::AD, DiffMethod::Cauchy, DiffMethod::FD}) {
      DiffOptions o = fc.diff;
      o.method = dm;
      vals[std::string(to_string(dm))] = mixed_derivative(e, sub, {}, o).real();
    }
    const double ad = vals["ad"];
    for (const auto& [k, v] : vals) out[k] = v;
    const double scale = std::max(std::abs(ad), std::numeric_limits<double>::min());
    out["cauchy_rel_diff"] = std::abs(vals["cauchy"] - ad) / scale;
    out["fd_rel_diff"] = std::abs(vals["fd"] - ad) / scale;
  } catch (const std::exception& e) {
    out["error"] = e.what();
  }
  return out;
}

std::vector<std::vector<Vec>> estimate_points(const RunResult& r) {
  std::vector<std::vector<Vec>> out;
  for (const auto& scan : r.estimates) {
    std::vector<Vec> pts;
    for (const auto& e : scan) pts.push_back(e.state);
    out.push_back(std::move(pts));
  }
  return out;
}

}  // namespace

RunResult run_filter(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult r;
  r.data = cfg.scans_file.empty() ? simulate(cfg.scenario) : read_measurements_csv(cfg.scans_file);
  FilterState state = initial_state(cfg);
  const FilterConfig& fc = cfg.filter;
  for (std::size_t k = 0; k < r.data.scans.size(); ++k) {
    const int scan = static_cast<int>(k);
    const std::vector<Vec>& ys = r.data.scans[k].measurements;
    try {
      if (k > 0) state = predict(state, fc.motion, fc.survival, &fc.birth);
      if (k == 0) {
        r.psi_residual = normalization_residual(build_filter(scan_params(state, fc, ys)));
        r.diagnostics = method_agreement(state, fc, ys);
      }
      UpdateResult u = cfg.reference ? reference_update(state, fc, ys) : update(state, fc, ys);
      state = std::move(u.state);
      r.stats.push_back(std::move(u.stats));
      r.estimates.push_back(estimate(state, fc.confirm_threshold));
    } catch (const NumericalError& e) {
      throw ScanFailure(scan, e.what());
    } catch (const std::domain_error& e) {
      throw ScanFailure(scan, e.what());
    } catch (const std::overflow_error& e) {
      throw ScanFailure(scan, e.what());
    }
  }
  r.metrics = run_metrics(r.data, estimate_points(r), cfg.metrics);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string tracks_csv(const RunResult& r) {
  Eigen::Index d = 0;
  for (const auto& scan : r.estimates)
    for (const auto& e : scan) d = std::max(d, e.state.size());
  std::ostringstream os;
  os << "scan,track_id";
  for (Eigen::Index i = 0; i < d; ++i) os << ",x" << i;
  os << ",weight\n";
  for (std::size_t k = 0; k < r.estimates.size(); ++k)
    for (const auto& e : r.estimates[k]) {
      os << k << ',';
      if (e.id) os << *e.id;
      for (Eigen::Index i = 0; i < d; ++i) os << ',' << (i < e.state.size() ? format_double(e.state[i]) : "");
      os << ',';
      if (e.weight) os << format_double(*e.weight);
      os << '\n';
    }
  return os.str();
}

std::string measurements_csv(const ScanData& data) {
  Eigen::Index d = 0;
  for (const auto& scan : data.scans)
    for (const auto& y : scan.measurements) d = std::max(d, y.size());
  std::ostringstream os;
  os << "scan";
  for (Eigen::Index i = 0; i < d; ++i) os << ",y" << i;
  os << ",origin\n";
  for (std::size_t k = 0; k < data.scans.size(); ++k) {
    const Scan& s = data.scans[k];
    for (std::size_t j = 0; j < s.measurements.size(); ++j) {
      os << k;
      for (Eigen::Index i = 0; i < d; ++i) os << ',' << format_double(s.measurements[j][i]);
      const std::int64_t o = j < s.origins.size() ? s.origins[j] : kClutterOrigin;
      os << ',';
      if (o == kClutterOrigin) {
        os << "clutter";
      } else {
        os << o;
      }
      os << '\n';
    }
  }
  return os.str();
}

std::string metrics_csv(const MetricTable& m) {
  std::ostringstream os;
  os << "scan,ospa,card_err,rmse\n";
  for (std::size_t k = 0; k < m.rows.size(); ++k)
    os << k << ',' << format_double(m.rows[k].ospa) << ',' << format_double(m.rows[k].card_err) << ','
       << format_double(m.rows[k].rmse) << '\n';
  return os.str();
}

std::string plot_svg(const RunResult& r) {
  constexpr double kSize = 600.0;
  constexpr double kPad = 20.0;
  std::map<std::int64_t, std::vector<Vec>> tracks;
  std::vector<Vec> marks;
  for (const auto& scan : r.data.scans)
    for (const auto& t : scan.truth)
      if (t.x.size() >= 2) tracks[t.id].push_back(t.x.head(2));
  for (const auto& scan : r.estimates)
    for (const auto& e : scan)
      if (e.state.size() >= 2) marks.push_back(e.state.head(2));
  Vec lo = Vec::Constant(2, std::numeric_limits<double>::infinity());
  Vec hi = -lo;
  auto grow = [&](const Vec& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  };
  for (const auto& [id, pts] : tracks)
    for (const auto& p : pts) grow(p);
  for (const auto& p : marks) grow(p);
  if (!std::isfinite(lo[0])) {
    lo.setZero();
    hi.setOnes();
  }
  const double span = std::max({hi[0] - lo[0], hi[1] - lo[1], 1e-9});
  auto px = [&](const Vec& p) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f,%.2f", kPad + (p[0] - lo[0]) / span * (kSize - 2 * kPad),
                  kSize - kPad - (p[1] - lo[1]) / span * (kSize - 2 * kPad));
    return std::string(buf);
  };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& [id, pts] : tracks) {
    os << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) os << (i ? " " : "") << px(pts[i]);
    os << "\"/>\n";
  }
  for (const auto& p : marks) {
    const std::string xy = px(p);
    const auto comma = xy.find(',');
    os << "<circle cx=\"" << xy.substr(0, comma) << "\" cy=\"" << xy.substr(comma + 1)
       << "\" r=\"2\" fill=\"none\" stroke=\"red\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

namespace {

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << content;
}

json metrics_json(const ScanMetrics& m) { return {{"ospa", m.ospa}, {"card_err", m.card_err}, {"rmse", m.rmse}}; }

}  // namespace

void write_outputs(const RunConfig& cfg, const RunResult& r, const std::string& dir) {
  const std::filesystem::path out(dir);
  std::filesystem::create_directories(out);
  write_file(out / "tracks.csv", tracks_csv(r));
  write_file(out / "measurements.csv", measurements_csv(r.data));
  write_file(out / "metrics.csv", metrics_csv(r.metrics));
  json summary;
  summary["config"] = cfg.normalized;
  summary["filter"] = std::string(to_string(cfg.filter.kind));
  summary["method"] = cfg.reference ? std::string("oracle") : std::string(to_string(cfg.filter.diff.method));
  summary["scans"] = r.data.scans.size();
  summary["metrics"] = {{"mean", metrics_json(r.metrics.mean)}, {"max", metrics_json(r.metrics.max)}};
  summary["psi_residual"] = r.psi_residual;
  summary["method_agreement"] = r.diagnostics;
  const double n = std::max<double>(1.0, static_cast<double>(r.data.scans.size()));
  summary["timings"] = {{"total_seconds", r.seconds}, {"per_scan_seconds", r.seconds / n}};
  write_file(out / "summary.json", summary.dump(2) + "\n");
  if (cfg.scenario.motion.F.rows() >= 2) write_file(out / "plot.svg", plot_svg(r));
}

int check_normalization(const PgflExpr& e, std::ostream& err) {
  const double res = normalization_residual(e);
  if (res <= kNormalizationTolerance && std::isfinite(res)) return kExitOk;
  err << "normalization check failed: |Psi(1,1) - 1| = " << format_double(res) << " exceeds "
      << format_double(kNormalizationTolerance) << "\n";
  return kExitNumerical;
}

// ---------------------------------------------------------------------------
// Bundled demo configurations

namespace {

json diag(std::initializer_list<double> d) { return {{"diag", std::vector<double>(d)}}; }

json target(std::initializer_list<double> mean) {
  return {{"birth", 0}, {"death", 50}, {"mean", std::vector<double>(mean)}, {"cov", diag({4.0, 4.0, 0.04, 0.04})}};
}

json base_scenario() {
  return {{"duration", 50},
          {"seed", 1},
          {"motion", {{"model", "constant_velocity"}, {"spatial_dim", 2}, {"dt", 1.0}, {"q", 0.01}}},
          {"measurement", {{"model", "position"}, {"r", 1.0}}},
          {"pd", 0.9},
          {"clutter", {{"type", "poisson"}, {"rate", 2.0}, {"box", {{"low", {0.0, 0.0}}, {"high", {200.0, 200.0}}}}}},
          {"gate", 16.0},
          {"targets", json::array({target({50.0, 50.0, 1.0, 0.5}), target({150.0, 60.0, -1.0, 0.8}),
                                   target({100.0, 160.0, 0.2, -0.6})})}};
}

}  // namespace

const std::vector<std::string>& demo_names() {
  static const std::vector<std::string> names = {"pda", "jpda", "jipda", "mht", "phd", "cphd", "mb", "unresolved_pair"};
  return names;
}

json demo_config(const std::string& name) {
  json doc;
  doc["scenario"] = base_scenario();
  doc["method"] = {{"name", "ad"}};
  doc["metrics"] = {{"cutoff", 10.0}, {"order", 1.0}};
  doc["output"] = "out/" + name;
  const json data_birth = {{"rate", 0.0}, {"gamma", 1e-4}, {"cov", diag({4.0, 4.0, 1.0, 1.0})}};
  const json birth_intensity = json::array(
      {{{"weight", 0.01}, {"mean", {100.0, 100.0, 0.0, 0.0}}, {"cov", diag({2500.0, 2500.0, 1.0, 1.0})}}});
  if (name == "pda") {
    doc["scenario"]["targets"] = json::array({target({50.0, 50.0, 1.0, 0.5})});
    doc["filter"] = {{"kind", "pda"}};
  } else if (name == "jpda") {
    doc["filter"] = {{"kind", "jpda"}};
  } else if (name == "jipda") {
    doc["filter"] = {{"kind", "jipda"}, {"survival", 0.99}};
  } else if (name == "mht" || name == "mb") {
    doc["filter"] = {{"kind", name}, {"survival", 0.99}, {"data_birth", data_birth}};
  } else if (name == "phd" || name == "cphd") {
    doc["filter"] = {{"kind", name}, {"survival", 0.99}, {"birth", {{"intensity", birth_intensity}}}};
  } else if (name == "unresolved_pair") {
    doc["scenario"]["duration"] = 20;
    doc["scenario"]["targets"] = json::array({
        {{"birth", 0}, {"death", 20}, {"mean", {100.0, 100.0, 0.5, 0.0}}, {"cov", diag({1.0, 1.0, 0.01, 0.01})}},
        {{"birth", 0}, {"death", 20}, {"mean", {100.0, 104.0, 0.5, 0.0}}, {"cov", diag({1.0, 1.0, 0.01, 0.01})}},
    });
    doc["filter"] = {{"kind", "resjpda"}, {"resolution", {{"sigma", diag({4.0, 4.0})}}}};
  } else {
    throw ConfigError("demo: unknown example '" + name + "'");
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Command line

namespace {

std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& s) {
  const auto dots = s.find("..");
  if (dots == std::string::npos) throw ConfigError("--seeds: expected A..B");
  try {
    std::size_t used = 0;
    const std::uint64_t a = std::stoull(s.substr(0, dots), &used);
    if (used != dots) throw std::invalid_argument("trailing characters");
    const std::string rest = s.substr(dots + 2);
    const std::uint64_t b = std::stoull(rest, &used);
    if (used != rest.size()) throw std::invalid_argument("trailing characters");
    if (b < a) throw ConfigError("--seeds: empty range");
    return {a, b};
  } catch (const ConfigError&) {
    throw;
  } catch (const std::logic_error&) {
    throw ConfigError("--seeds: expected A..B with non-negative integers");
  }
}

int report(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ScanFailure& e) {
    std::cerr << "numerical failure at " << e.what() << "\n";
    return kExitNumerical;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_run(const std::string& config, const ConfigOverrides& ov, const std::string& seeds) {
  const RunConfig base = load_config(config, ov);
  if (seeds.empty()) {
    const RunResult r = run_filter(base);
    write_outputs(base, r, base.out_dir);
    std::cout << "mean ospa " << format_double(r.metrics.mean.ospa) << " over " << r.data.scans.size()
              << " scans; outputs in " << base.out_dir << "\n";
    return kExitOk;
  }
  const auto [a, b] = parse_seed_range(seeds);
  const std::size_t n = static_cast<std::size_t>(b - a + 1);
  std::vector<RunConfig> cfgs;
  for (std::uint64_t s = a; s <= b; ++s) {
    ConfigOverrides o = ov;
    o.seed = s;
    cfgs.push_back(load_config(config, o));
  }
  std::vector<double> means(n, 0.0);
  parallel_for(n, worker_count(), [&](std::size_t i) {
    const RunResult r = run_filter(cfgs[i]);
    write_outputs(cfgs[i], r, (std::filesystem::path(base.out_dir) / ("seed_" + std::to_string(a + i))).string());
    means[i] = r.metrics.mean.ospa;
  });
  for (std::size_t i = 0; i < n; ++i) std::cout << "seed " << a + i << " mean ospa " << format_double(means[i]) << "\n";
  return kExitOk;
}

int cmd_validate(const std::string& config, const ConfigOverrides& ov) {
  const RunConfig cfg = load_config(config, ov);
  std::cout << cfg.normalized.dump(2) << "\n";
  const FilterState s = initial_state(cfg);
  const PgflExpr e = build_filter(scan_params(s, cfg.filter, {}));
  const int rc = check_normalization(e, std::cerr);
  if (rc == kExitOk) std::cerr << "ok: |Psi(1,1) - 1| = " << format_double(normalization_residual(e)) << "\n";
  return rc;
}

int cmd_demo(const std::string& out_dir, const std::string& only) {
  std::filesystem::create_directories(out_dir);
  for (const auto& name : demo_names()) {
    if (!only.empty() && only != name) continue;
    const std::filesystem::path p = std::filesystem::path(out_dir) / (name + ".json");
    write_file(p, demo_config(name).dump(2) + "\n");
    std::cout << p.string() << "\n";
  }
  if (!only.empty() && std::find(demo_names().begin(), demo_names().end(), only) == demo_names().end())
    throw ConfigError("demo: unknown example '" + only + "'");
  return kExitOk;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"pointillist: multitarget filters from generating functionals"};
  app.require_subcommand(1);
  std::string config, filter, method, seeds, out;
  std::optional<std::uint64_t> seed;

  auto* run = app.add_subcommand("run", "Run a filter over simulated or recorded scans");
  run->add_option("--config", config, "Config file (JSON)")->required();
  run->add_option("--filter", filter, "Filter kind override");
  run->add_option("--method", method, "ad, cauchy, fd or oracle");
  run->add_option("--seed", seed, "Scenario seed override");
  run->add_option("--seeds", seeds, "Seed range A..B, one output directory per seed");
  run->add_option("--out", out, "Output directory");

  auto* validate = app.add_subcommand("validate", "Check a config and the normalization of its expression");
  validate->add_option("--config", config, "Config file (JSON)")->required();
  validate->add_option("--filter", filter, "Filter kind override");
  validate->add_option("--method", method, "ad, cauchy, fd or oracle");

  auto* demo = app.add_subcommand("demo", "Write the bundled example configs");
  std::string demo_out = "demo";
  demo->add_option("--out", demo_out, "Directory for the configs");
  demo->add_option("--filter", filter, "Only this example");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  try {
    ConfigOverrides ov{filter, method, seed, out};
    if (*run) {
      if (seed && !seeds.empty()) throw ConfigError("--seed and --seeds are mutually exclusive");
      return cmd_run(config, ov, seeds);
    }
    if (*validate) return cmd_validate(config, ov);
    return cmd_demo(demo_out, filter);
  } catch (...) {
    return report(std::current_exception());
  }
}

}  // namespace pointillist

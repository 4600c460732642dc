#include "anderson/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "anderson/common.hpp"
#include "anderson/config.hpp"
#include "anderson/experiments.hpp"
#include "anderson/feynman_kac.hpp"
#include "anderson/io.hpp"
#include "anderson/noise.hpp"
#include "anderson/operator.hpp"
#include "anderson/stats.hpp"
#include "anderson/variational.hpp"

namespace anderson {

namespace fs = std::filesystem;

namespace {

const std::map<std::string, std::string> kModuleVersions = {
    {"noise", "1"}, {"operator", "1"}, {"feynman_kac", "1"}, {"variational", "1"}, {"experiments", "1"}, {"cli", "1"},
};

std::string fmt(double v) { return format_double(v); }

std::string fmt_fixed(double v, int digits = 6) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

struct Run {
    Config cfg;
    std::string command;
    std::string config_path;
    fs::path out_dir;
    std::uint64_t seed = 1;
    int workers = 1;
    std::string run_id;
    RunManifest manifest;
    std::ostream* out = nullptr;

    std::vector<std::string> prefix() const { return {run_id, std::to_string(kSchemaVersion)}; }

    fs::path output(const std::string& name) {
        manifest.outputs.push_back(name);
        return out_dir / name;
    }

    std::string name(const std::string& stem, const std::string& ext) const { return stem + "_" + run_id + ext; }
};

std::vector<std::string> with_prefix(std::vector<std::string> cols) {
    cols.insert(cols.begin(), {"run_id", "schema_version"});
    return cols;
}

std::vector<std::string> row(const Run& run, std::vector<std::string> values) {
    auto r = run.prefix();
    r.insert(r.end(), values.begin(), values.end());
    return r;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream o(tmp);
        if (!o) throw std::runtime_error("cannot write " + tmp.string());
        o << text;
    }
    fs::rename(tmp, path);
}

CovarianceSpec read_kernel(const Config& c) {
    CovarianceSpec s;
    s.family = kernel_family_from_string(c.get_string("noise.family", to_string(s.family)));
    s.support_radius = c.get_double("noise.support_radius", s.support_radius);
    s.holder_h = c.get_double("noise.holder_h", s.holder_h);
    s.dim = static_cast<int>(c.get_int("noise.dim", 1));
    s.validate();
    return s;
}

std::size_t megabytes(const Config& c, const std::string& key, double fallback) {
    const double mb = c.get_double(key, fallback);
    require(mb > 0.0, key + " must be positive");
    return static_cast<std::size_t>(mb * 1024.0 * 1024.0);
}

/// R(0) of the unscaled kernel, from a fine table.
double kernel_r0(const CovarianceSpec& spec) { return build_kernel(spec, spec.support_radius / 64.0).cov0(); }

// ---------------------------------------------------------------- sample

void cmd_sample(Run& run) {
    const Config& c = run.cfg;
    const CovarianceSpec spec = read_kernel(c);
    const double eps = c.get_double("noise.eps", 1.0);
    const double r = c.get_double("noise.halfwidth");
    const double dx = c.get_double("noise.spacing");
    const bool dump = c.get_bool("noise.dump", true);
    SampleOptions so;
    so.memory_cap_bytes = megabytes(c, "noise.memory_cap_mb", 2048);

    const FieldSample f = sample_field(spec, r, eps, dx, run.seed, so);
    const double r0 = build_kernel(spec.scaled(eps), dx).cov0();
    const double mean = stats::mean(f.values);
    const double var = f.values.size() > 1 ? stats::variance(f.values) : 0.0;
    double max_v = *std::max_element(f.values.begin(), f.values.end());
    double normalized = std::nan("");
    if (r >= std::exp(1.0)) {
        const MaxStatistic m = max_field_statistic(f);
        max_v = m.max_value;
        normalized = m.normalized;
    }

    CsvTable t(with_prefix({"dim", "family", "support_radius", "holder_h", "eps", "halfwidth", "spacing", "points",
                            "seed", "mean", "variance", "r0", "max", "normalized_max"}));
    t.add_row(row(run, {std::to_string(spec.dim), to_string(spec.family), fmt(spec.support_radius), fmt(spec.holder_h),
                        fmt(eps), fmt(r), fmt(dx), std::to_string(f.size()), std::to_string(run.seed), fmt(mean),
                        fmt(var), fmt(r0), fmt(max_v), fmt(normalized)}));
    t.write(run.output(run.name("sample", ".csv")));
    if (dump) write_field_binary(run.output(run.name("field", ".bin")), f);

    *run.out << "sample: " << f.size() << " points, mean " << fmt_fixed(mean) << ", variance " << fmt_fixed(var)
             << " (R_eps(0) = " << fmt_fixed(r0) << ")\n";
}

// ---------------------------------------------------------------- eigs

/// Zero-potential Dirichlet eigenvalues -π²Σk_i²/(8r²) of ½Δ on (-r, r)^d, largest first.
std::vector<double> analytic_levels(int d, double r, int k) {
    const int kmax = k + 1;
    std::vector<double> v;
    Index idx{1, 1, 1};
    while (true) {
        double s = 0.0;
        for (int i = 0; i < d; ++i) s += static_cast<double>(idx[i] * idx[i]);
        v.push_back(-M_PI * M_PI * s / (8.0 * r * r));
        int a = 0;
        while (a < d && ++idx[a] > kmax) idx[a++] = 1;
        if (a == d) break;
    }
    std::sort(v.begin(), v.end(), std::greater<>());
    v.resize(static_cast<std::size_t>(k));
    return v;
}

void cmd_eigs(Run& run) {
    const Config& c = run.cfg;
    const CovarianceSpec spec = read_kernel(c);
    const double eps = c.get_double("noise.eps", 1.0);
    const double dx = c.get_double("noise.spacing");
    const double r = c.get_double("operator.halfwidth", c.get_double("noise.halfwidth", 1.0));
    const double sigma = c.get_double("operator.sigma", 1.0);
    const bool zero = c.get_bool("operator.zero_potential", false);
    const int k = static_cast<int>(c.get_int("solver.k", 4));
    const std::string method = c.get_string("solver.method", "lanczos");
    require(k >= 1, "solver.k must be positive");
    require(method == "lanczos" || method == "dense", "solver.method must be lanczos or dense");
    EigenOptions eo;
    eo.tol = c.get_double("solver.tol", eo.tol);
    eo.max_iterations = static_cast<int>(c.get_int("solver.max_iterations", 0));
    eo.seed = run.seed;

    std::shared_ptr<const FieldSample> field;
    if (zero) {
        field = std::make_shared<const FieldSample>(FieldSample::constant(spec.dim, r, dx, 0.0, eps));
    } else {
        SampleOptions so;
        so.memory_cap_bytes = megabytes(c, "noise.memory_cap_mb", 2048);
        field = std::make_shared<const FieldSample>(sample_field(spec, r, eps, dx, run.seed, so));
    }
    const DiscreteOperator op = assemble(field, Box{Point{}, r}, sigma);
    const SpectralResult s = method == "dense" ? dense_eigenpairs(op, k) : top_eigenpairs(op, k, eo);
    std::vector<double> analytic(s.values.size(), std::nan(""));
    if (zero) {
        const auto a = analytic_levels(spec.dim, r, static_cast<int>(s.values.size()));
        std::copy(a.begin(), a.end(), analytic.begin());
    }

    std::vector<std::string> cols = {"index", "lambda", "residual", "participation"};
    for (int i = 0; i < spec.dim; ++i) cols.push_back("peak_x" + std::to_string(i));
    cols.push_back("analytic");
    CsvTable t(with_prefix(cols));
    for (std::size_t i = 0; i < s.values.size(); ++i) {
        std::vector<std::string> v = {std::to_string(i + 1), fmt(s.values[i]), fmt(s.residuals[i]),
                                      fmt(s.participation[i])};
        for (int a = 0; a < spec.dim; ++a) v.push_back(fmt(s.peaks[i][a]));
        v.push_back(fmt(analytic[i]));
        t.add_row(row(run, v));
    }
    t.write(run.output(run.name("eigs", ".csv")));
    for (const auto& w : s.warnings) *run.out << "warning: " << w << "\n";
    *run.out << "eigs: " << op.size() << " unknowns, Lambda_1 = " << fmt(s.values.front());
    if (zero) *run.out << " (analytic " << fmt(analytic.front()) << ")";
    *run.out << "\n";
}

// ---------------------------------------------------------------- fk

void cmd_fk(Run& run) {
    const Config& c = run.cfg;
    const CovarianceSpec spec = read_kernel(c);
    const double eps = c.get_double("noise.eps", 1.0);
    const double dx = c.get_double("noise.spacing");
    const double r = c.get_double("noise.halfwidth");
    PathConfig pc;
    pc.t = c.get_double("fk.t");
    pc.dt = c.get_double("fk.dt", pc.dt);
    pc.paths = c.get_int("fk.paths", pc.paths);
    pc.interpolation = interpolation_from_string(c.get_string("fk.interpolation", "multilinear"));
    pc.seed = run.seed;
    pc.workers = run.workers;
    const double sigma = c.get_double("fk.sigma", 1.0);
    const double box_r = c.get_double("fk.box_halfwidth", 0.0);

    FieldSample field;
    if (c.has("fk.constant_potential")) {
        field = FieldSample::constant(spec.dim, r, dx, c.get_double("fk.constant_potential"), eps);
    } else {
        SampleOptions so;
        so.memory_cap_bytes = megabytes(c, "noise.memory_cap_mb", 2048);
        field = sample_field(spec, r, eps, dx, run.seed, so);
    }
    const FKEstimate e = box_r > 0.0 ? dirichlet_total_mass(field, sigma, Box{Point{}, box_r}, pc)
                                     : total_mass(field, sigma, pc);

    CsvTable t(with_prefix({"t", "dt", "paths", "interpolation", "box_halfwidth", "log_mean", "std_error",
                            "exit_fraction", "ess"}));
    t.add_row(row(run, {fmt(pc.t), fmt(pc.dt), std::to_string(e.M), to_string(pc.interpolation), fmt(box_r),
                        fmt(e.log_mean), fmt(e.std_error), fmt(e.exit_fraction), fmt(e.ess)}));
    t.write(run.output(run.name("fk", ".csv")));
    *run.out << "fk: log U(" << fmt(pc.t) << ") = " << fmt_fixed(e.log_mean) << " +- " << fmt_fixed(e.std_error)
             << "\n";
}

// ---------------------------------------------------------------- gns

std::string registry_name(int d) { return "constants_d" + std::to_string(d) + ".txt"; }

void cmd_gns(Run& run) {
    const Config& c = run.cfg;
    const int d = static_cast<int>(c.get_int("variational.dim", 1));
    GridSpec grid = default_grid(d);
    grid.points_per_width = static_cast<int>(c.get_int("variational.points_per_width", grid.points_per_width));
    grid.halfwidth = c.get_double("variational.halfwidth", grid.halfwidth);
    grid.richardson = c.get_bool("variational.richardson", grid.richardson);
    FlowOptions fo;
    fo.tol = c.get_double("variational.tol", fo.tol);
    fo.max_iterations = static_cast<int>(c.get_int("variational.max_iterations", fo.max_iterations));
    fo.starts = static_cast<int>(c.get_int("variational.starts", fo.starts));
    fo.seed = run.seed;
    fo.workers = run.workers;
    const std::string routes = c.get_string("variational.routes", "gns,sphere,w");

    std::set<std::string> wanted;
    {
        std::stringstream ss(routes);
        std::string item;
        while (std::getline(ss, item, ',')) {
            require(item == "gns" || item == "sphere" || item == "w",
                    "variational.routes: unknown route '" + item + "' (gns, sphere, w)");
            wanted.insert(item);
        }
    }
    require(!wanted.empty(), "variational.routes must name at least one route");

    CsvTable t(with_prefix({"dim", "route", "value", "g_d", "l_d", "s_sup", "iterations", "residual",
                            "boundary_mass", "expansions"}));
    std::map<std::string, std::string> registry;
    const VariationalResult* primary = nullptr;
    std::vector<std::pair<std::string, VariationalResult>> results;
    for (const char* route : {"gns", "sphere", "w"}) {
        if (!wanted.count(route)) continue;
        VariationalResult v = std::string(route) == "gns"      ? gns_constant(grid, fo)
                              : std::string(route) == "sphere" ? s_variational_sup(1.0, grid, fo)
                                                               : w_space_sup(grid, fo);
        results.emplace_back(route, std::move(v));
    }
    for (const auto& [route, v] : results) {
        t.add_row(row(run, {std::to_string(d), route, fmt(v.value), fmt(v.g_d), fmt(v.l_d), fmt(v.s_sup),
                            std::to_string(v.flow.iterations), fmt(v.flow.residual), fmt(v.flow.boundary_mass),
                            std::to_string(v.flow.expansions)}));
        registry["l_d." + route] = fmt(v.l_d);
        if (!primary) primary = &v;
    }
    t.write(run.output(run.name("gns", ".csv")));

    registry["dim"] = std::to_string(d);
    registry["g_d"] = fmt(primary->g_d);
    registry["l_d"] = fmt(primary->l_d);
    registry["s_sup"] = fmt(primary->s_sup);
    registry["route"] = results.front().first;
    const std::map<std::string, std::string> prov = {
        {"run_id", run.run_id},
        {"config_hash", run.manifest.config_hash},
        {"seed", std::to_string(run.seed)},
        {"points_per_width", std::to_string(grid.points_per_width)},
        {"halfwidth", fmt(grid.halfwidth)},
        {"richardson", grid.richardson ? "true" : "false"},
    };
    write_registry(run.output(registry_name(d)), registry, prov);

    // Profile of the extremal function along the first axis through its peak.
    const LatticeFunction& f = primary->extremal;
    const auto peak = static_cast<std::size_t>(
        std::max_element(f.values.begin(), f.values.end(), [](double a, double b) { return std::abs(a) < std::abs(b); }) -
        f.values.begin());
    std::size_t stride = 1;
    for (int a = 1; a < f.dim; ++a) stride *= static_cast<std::size_t>(f.n);
    const std::size_t base = peak % stride;
    CsvTable prof(with_prefix({"x", "value"}));
    for (long i = 0; i < f.n; ++i) {
        const std::size_t flat = base + static_cast<std::size_t>(i) * stride;
        prof.add_row(row(run, {fmt(f.position(flat)[0]), fmt(f.values[flat])}));
    }
    prof.write(run.output(run.name("extremal", ".csv")));

    *run.out << "gns: d=" << d;
    for (const auto& [route, v] : results) *run.out << ", " << route << " L_d=" << fmt(v.l_d);
    *run.out << " (G_d=" << fmt(primary->g_d) << ")\n";
}

// ---------------------------------------------------------------- sweep

std::vector<double> read_t_grid(const Config& c) {
    if (c.has("grid.log_t")) {
        std::vector<double> t;
        for (double l : c.get_list("grid.log_t")) t.push_back(std::exp(l));
        return t;
    }
    return c.get_list("grid.t");
}

SweepOptions read_sweep_options(const Run& run) {
    const Config& c = run.cfg;
    SweepOptions o;
    o.t_grid = read_t_grid(c);
    o.replicas = static_cast<int>(c.get_int("mc.replicas", o.replicas));
    o.k = static_cast<int>(c.get_int("solver.k", o.k));
    o.sigma = c.get_double("noise.sigma", o.sigma);
    o.seed = run.seed;
    o.common_random_numbers = c.get_bool("mc.common_random_numbers", false);
    o.direct_mc = c.get_bool("mc.direct_mc", false);
    o.paths.paths = c.get_int("mc.paths", o.paths.paths);
    o.paths.dt = c.get_double("mc.dt", o.paths.dt);
    o.paths.interpolation = interpolation_from_string(c.get_string("mc.interpolation", "multilinear"));
    o.mesh.points_per_eps = c.get_double("grid.points_per_eps", o.mesh.points_per_eps);
    o.mesh.points_per_rho = c.get_double("grid.points_per_rho", o.mesh.points_per_rho);
    o.mesh.points_per_scale = c.get_double("grid.points_per_scale", o.mesh.points_per_scale);
    o.eig.tol = c.get_double("solver.tol", o.eig.tol);
    o.eig.max_iterations = static_cast<int>(c.get_int("solver.max_iterations", 0));
    o.memory_cap_bytes = megabytes(c, "solver.memory_cap_mb", 1024);
    o.workers = run.workers;
    return o;
}

EpsSchedule make_schedule(const CovarianceSpec& spec, ScheduleKind kind, double gamma, bool allow_unsupported) {
    EpsSchedule s;
    s.kind = kind;
    s.gamma = gamma;
    s.dim = spec.dim;
    s.holder_h = spec.holder_h;
    s.allow_unsupported = allow_unsupported;
    return s;
}

const std::vector<std::string> kSweepColumns = {
    "arm",          "kind",         "gamma",       "eps0",          "allow_unsupported", "family",
    "support_radius", "holder_h",   "dim",         "t",             "log_t",             "eps",
    "replica",      "seed",         "spacing",     "k",             "lambdas",           "regular_normalizer",
    "singular_normalizer", "regular_stat", "singular_stat", "spread_stat", "log_u",      "log_u_se",
    "proxy",        "tm_regular_stat", "tm_singular_stat", "big_l", "small_l",           "ratio",
    "predicted",    "localization_length"};

void add_sweep_rows(CsvTable& t, const Run& run, const std::string& arm, const SweepResult& r) {
    for (const auto& rec : r.records) {
        std::string lambdas;
        for (std::size_t i = 0; i < rec.lambdas.size(); ++i) lambdas += (i ? ";" : "") + fmt(rec.lambdas[i]);
        t.add_row(row(run, {arm,
                            to_string(r.schedule.kind),
                            fmt(r.schedule.gamma),
                            fmt(r.schedule.eps0),
                            r.schedule.allow_unsupported ? "1" : "0",
                            to_string(r.kernel.family),
                            fmt(r.kernel.support_radius),
                            fmt(r.kernel.holder_h),
                            std::to_string(rec.dim),
                            fmt(rec.t),
                            fmt(std::log(rec.t)),
                            fmt(rec.eps),
                            std::to_string(rec.replica),
                            std::to_string(rec.seed),
                            fmt(rec.spacing),
                            std::to_string(rec.lambdas.size()),
                            lambdas,
                            fmt(rec.regular_normalizer),
                            fmt(rec.singular_normalizer),
                            fmt(rec.regular_stat),
                            fmt(rec.singular_stat),
                            fmt(rec.spread_stat),
                            fmt(rec.log_u),
                            fmt(rec.log_u_se),
                            rec.proxy ? "1" : "0",
                            fmt(rec.tm_regular_stat),
                            fmt(rec.tm_singular_stat),
                            fmt(rec.scales.big_l),
                            fmt(rec.scales.small_l),
                            fmt(rec.scales.ratio),
                            to_string(rec.scales.predicted),
                            fmt(rec.localization_length)}));
    }
}

double parse_number(const std::string& s) {
    if (s == "nan") return std::nan("");
    if (s == "inf") return HUGE_VAL;
    if (s == "-inf") return -HUGE_VAL;
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("csv: '" + s + "' is not a number");
    }
}

/// Sweep arms rebuilt from a sweep CSV, keyed by the arm column.
std::map<std::string, SweepResult> read_sweep_csv(const fs::path& path) {
    const CsvTable t = CsvTable::read(path);
    auto col = [&](const std::string& n) { return t.column(n); };
    const std::size_t c_arm = col("arm"), c_kind = col("kind"), c_gamma = col("gamma"), c_eps0 = col("eps0"),
                      c_unsup = col("allow_unsupported"), c_family = col("family"), c_rho = col("support_radius"),
                      c_h = col("holder_h"), c_dim = col("dim"), c_t = col("t"), c_eps = col("eps"),
                      c_rep = col("replica"), c_seed = col("seed"), c_dx = col("spacing"), c_lam = col("lambdas"),
                      c_rn = col("regular_normalizer"), c_sn = col("singular_normalizer"),
                      c_rs = col("regular_stat"), c_ss = col("singular_stat"), c_sp = col("spread_stat"),
                      c_lu = col("log_u"), c_lse = col("log_u_se"), c_proxy = col("proxy"),
                      c_tmr = col("tm_regular_stat"), c_tms = col("tm_singular_stat"),
                      c_schema = col("schema_version");
    std::map<std::string, SweepResult> arms;
    for (const auto& r : t.rows()) {
        if (r[c_schema] != std::to_string(kSchemaVersion))
            throw ConfigError("report: schema version " + r[c_schema] + " is not supported");
        SweepResult& s = arms[r[c_arm]];
        s.schedule.kind = schedule_kind_from_string(r[c_kind]);
        s.schedule.gamma = parse_number(r[c_gamma]);
        s.schedule.eps0 = parse_number(r[c_eps0]);
        s.schedule.allow_unsupported = r[c_unsup] == "1";
        s.kernel.family = kernel_family_from_string(r[c_family]);
        s.kernel.support_radius = parse_number(r[c_rho]);
        s.kernel.holder_h = parse_number(r[c_h]);
        s.kernel.dim = std::stoi(r[c_dim]);
        s.schedule.dim = s.kernel.dim;
        s.schedule.holder_h = s.kernel.holder_h;
        SweepRecord rec;
        rec.t = parse_number(r[c_t]);
        rec.eps = parse_number(r[c_eps]);
        rec.dim = s.kernel.dim;
        rec.replica = std::stoi(r[c_rep]);
        rec.seed = std::stoull(r[c_seed]);
        rec.spacing = parse_number(r[c_dx]);
        std::stringstream ls(r[c_lam]);
        std::string item;
        while (std::getline(ls, item, ';')) rec.lambdas.push_back(parse_number(item));
        rec.regular_normalizer = parse_number(r[c_rn]);
        rec.singular_normalizer = parse_number(r[c_sn]);
        rec.regular_stat = parse_number(r[c_rs]);
        rec.singular_stat = parse_number(r[c_ss]);
        rec.spread_stat = parse_number(r[c_sp]);
        rec.log_u = parse_number(r[c_lu]);
        rec.log_u_se = parse_number(r[c_lse]);
        rec.proxy = r[c_proxy] == "1";
        rec.tm_regular_stat = parse_number(r[c_tmr]);
        rec.tm_singular_stat = parse_number(r[c_tms]);
        s.records.push_back(std::move(rec));
    }
    return arms;
}

std::optional<double> registry_l_d(const fs::path& dir, int d) {
    const fs::path p = dir / registry_name(d);
    if (!fs::exists(p)) return std::nullopt;
    const auto reg = read_registry(p);
    const auto it = reg.find("l_d");
    if (it == reg.end()) return std::nullopt;
    return parse_number(it->second);
}

std::string pass_fail(bool ok) { return ok ? "PASS" : "FAIL"; }

void trend_table(std::ostream& os, const SweepResult& r) {
    const TrendSummary reg = summarize(r.records, SweepStatistic::Regular);
    const TrendSummary sing = summarize(r.records, SweepStatistic::Singular);
    const TrendSummary spread = summarize(r.records, SweepStatistic::Spread);
    os << "  log_t      eps        median_reg  iqr_reg     median_sing iqr_sing    median_spread iqr_spread\n";
    for (std::size_t i = 0; i < reg.t.size(); ++i) {
        const double eps = r.schedule.eps(reg.t[i]);
        os << "  " << fmt_fixed(std::log(reg.t[i]), 4) << "  " << fmt_fixed(eps, 6) << "  "
           << fmt_fixed(reg.median[i]) << "  " << fmt_fixed(reg.iqr[i]) << "  " << fmt_fixed(sing.median[i]) << "  "
           << fmt_fixed(sing.iqr[i]) << "  " << fmt_fixed(spread.median[i]) << "  " << fmt_fixed(spread.iqr[i])
           << "\n";
    }
}

void fit_lines(std::ostream& os, const SweepResult& r, int bootstrap, std::uint64_t seed) {
    const auto pts = scaling_points(r.records);
    for (ScalingModel m : {ScalingModel::Regular, ScalingModel::Singular}) {
        try {
            const ScalingFit f = fit_scaling(pts, m, bootstrap, seed);
            os << "  fit " << to_string(m) << ": prefactor " << fmt_fixed(f.prefactor) << " ["
               << fmt_fixed(f.prefactor_lo) << ", " << fmt_fixed(f.prefactor_hi) << "], exponent on log t "
               << fmt_fixed(f.exponent) << " [" << fmt_fixed(f.exponent_lo) << ", " << fmt_fixed(f.exponent_hi)
               << "]\n";
        } catch (const ConfigError& e) {
            os << "  fit " << to_string(m) << ": skipped (" << e.what() << ")\n";
        }
    }
}

void arm_header(std::ostream& os, const std::string& arm, const SweepResult& r) {
    os << "[" << arm << "] kind=" << to_string(r.schedule.kind) << " gamma=" << fmt(r.schedule.gamma)
       << " d=" << r.kernel.dim << " records=" << r.records.size() << "\n";
    if (!r.note.empty()) os << "  note: " << r.note << "\n";
    if (r.truncated) os << "  truncated: grid stopped at t=" << fmt(r.truncated_at) << " (memory cap)\n";
}

std::string discrimination_text(const DiscriminationReport& rep, const CovarianceSpec& kernel,
                                std::optional<double> l_d, int bootstrap, std::uint64_t seed) {
    std::ostringstream os;
    const int d = kernel.dim;
    const double r0 = kernel_r0(kernel);
    const double reg_limit = std::sqrt(2.0 * d * r0);
    os << "phase discrimination report\n";
    os << "Finite-t values are not expected to reach the asymptotic limits; convergence is in powers of log t.\n";
    os << "Acceptance uses the discrimination matrix and trends across the grid.\n\n";
    os << "kernel: " << to_string(kernel.family) << " rho=" << fmt(kernel.support_radius)
       << " h=" << fmt(kernel.holder_h) << " d=" << d << " R(0)=" << fmt_fixed(r0) << "\n";
    os << "regular limit sqrt(2 d R(0)) = " << fmt_fixed(reg_limit) << "\n";
    if (l_d)
        os << "singular limit L_d (registry) = " << fmt_fixed(*l_d) << "\n";
    else
        os << "singular limit L_d: no constants registry found; run gns first\n";
    os << "\n";

    const SweepResult* arms[2] = {&rep.regular, &rep.singular};
    const char* names[2] = {"regular", "singular"};
    for (int s = 0; s < 2; ++s) {
        arm_header(os, names[s], *arms[s]);
        trend_table(os, *arms[s]);
        fit_lines(os, *arms[s], bootstrap, seed);
        os << "\n";
    }

    os << "discrimination matrix: slope of log median(Lambda_1 / normalizer) on log log t\n";
    os << "  schedule \\ normalizer   regular                          singular\n";
    for (int s = 0; s < 2; ++s) {
        os << "  " << names[s] << (s == 0 ? "  " : " ") << "               ";
        for (int n = 0; n < 2; ++n)
            os << fmt_fixed(rep.slope[s][n], 4) << " [" << fmt_fixed(rep.slope_lo[s][n], 4) << ", "
               << fmt_fixed(rep.slope_hi[s][n], 4) << "]   ";
        os << "own flattest: " << (rep.correct_flattest[s] ? "yes" : "no") << ", p = " << fmt_fixed(rep.p_value[s], 4)
           << "\n";
    }
    os << "\n";

    const TrendSummary reg = summarize(rep.regular.records, SweepStatistic::Regular);
    const TrendSummary sing = summarize(rep.singular.records, SweepStatistic::Singular);
    const bool reg_mono = monotone_toward(reg, reg_limit);
    const bool spread_reg = strictly_shrinking(summarize(rep.regular.records, SweepStatistic::Spread));
    const bool spread_sing = strictly_shrinking(summarize(rep.singular.records, SweepStatistic::Spread));
    os << "criterion discrimination_sign_pattern: " << pass_fail(rep.pass) << " (p = " << fmt_fixed(rep.p_value[0], 4)
       << ", " << fmt_fixed(rep.p_value[1], 4) << ")\n";
    os << "criterion regular_median_monotone_toward_limit: " << pass_fail(reg_mono) << "\n";
    os << "criterion spread_shrinks: " << pass_fail(spread_reg && spread_sing) << "\n";
    if (l_d)
        os << "info singular_median_monotone_toward_L_d: " << (monotone_toward(sing, *l_d) ? "yes" : "no") << "\n";
    return os.str();
}

std::string single_text(const SweepResult& r, std::optional<double> l_d, int bootstrap, std::uint64_t seed) {
    std::ostringstream os;
    const double r0 = kernel_r0(r.kernel);
    const double reg_limit = std::sqrt(2.0 * r.kernel.dim * r0);
    os << "sweep report\n";
    os << "regular limit sqrt(2 d R(0)) = " << fmt_fixed(reg_limit) << "\n";
    if (l_d) os << "singular limit L_d (registry) = " << fmt_fixed(*l_d) << "\n";
    os << "\n";
    arm_header(os, "sweep", r);
    trend_table(os, r);
    fit_lines(os, r, bootstrap, seed);
    const TrendSummary spread = summarize(r.records, SweepStatistic::Spread);
    os << "\ncriterion spread_shrinks: " << pass_fail(strictly_shrinking(spread)) << "\n";
    if (r.schedule.kind == ScheduleKind::Regular || r.schedule.kind == ScheduleKind::Constant)
        os << "criterion regular_median_monotone_toward_limit: "
           << pass_fail(monotone_toward(summarize(r.records, SweepStatistic::Regular), reg_limit)) << "\n";
    else if (l_d && r.schedule.kind == ScheduleKind::Singular)
        os << "criterion singular_median_monotone_toward_limit: "
           << pass_fail(monotone_toward(summarize(r.records, SweepStatistic::Singular), *l_d)) << "\n";
    return os.str();
}

const std::vector<std::string> kAnnealedColumns = {"schedule", "a",     "beta",      "t",         "eps",
                                                   "p",        "log_moment", "std_error", "ess",   "paths",
                                                   "r0",       "normalized", "bound"};

void add_annealed_rows(CsvTable& t, const Run& run, const std::string& name, const PowerSchedule& s,
                       const std::vector<AnnealedPoint>& pts) {
    for (const auto& p : pts)
        t.add_row(row(run, {name, fmt(s.a), fmt(s.beta), fmt(p.t), fmt(p.eps), std::to_string(p.p),
                            fmt(p.estimate.log_mean), fmt(p.estimate.std_error), fmt(p.estimate.ess),
                            std::to_string(p.estimate.M), fmt(p.r0), fmt(p.normalized), fmt(p.bound)}));
}

/// Slope of log(log-moment) on log p at the largest t.
double p_exponent(const std::vector<AnnealedPoint>& pts) {
    double tmax = 0.0;
    for (const auto& p : pts) tmax = std::max(tmax, p.t);
    std::vector<double> x, y;
    for (const auto& p : pts)
        if (p.t == tmax && p.estimate.log_mean > 0.0) {
            x.push_back(std::log(static_cast<double>(p.p)));
            y.push_back(std::log(p.estimate.log_mean));
        }
    if (x.size() < 2) return std::nan("");
    return stats::fit_line(x, y).slope;
}

std::string annealed_text(const AnnealedReport& rep, double slack) {
    std::ostringstream os;
    os << "annealed moment report (d=1)\n\n";
    for (int s = 0; s < 2; ++s) {
        const auto& pts = s == 0 ? rep.slow : rep.fast;
        os << "[" << (s == 0 ? "slow" : "fast") << "]\n";
        os << "  t         eps        p  log_moment   se          normalized  bound\n";
        for (const auto& p : pts)
            os << "  " << fmt_fixed(p.t, 4) << "  " << fmt_fixed(p.eps) << "  " << p.p << "  "
               << fmt_fixed(p.estimate.log_mean) << "  " << fmt_fixed(p.estimate.std_error) << "  "
               << fmt_fixed(p.normalized) << "  " << fmt_fixed(p.bound) << "\n";
        const ModelSelection& m = s == 0 ? rep.slow_selection : rep.fast_selection;
        os << "  model selection: AIC(eps^-1 t^2) = " << fmt_fixed(m.aic_t2, 3) << ", AIC(t^3) = "
           << fmt_fixed(m.aic_t3, 3) << ", margin = " << fmt_fixed(m.margin, 3) << " ("
           << (m.margin > 0 ? "t^3" : "eps^-1 t^2") << " preferred)\n";
        os << "  p exponent at largest t: " << fmt_fixed(s == 0 ? rep.slow_p_exponent : rep.fast_p_exponent, 4)
           << "\n\n";
    }
    os << "criterion annealed_bound_respected: " << pass_fail(rep.bound_respected) << " (slack " << fmt(slack)
       << ")\n";
    os << "criterion annealed_slow_trend_toward_bound: " << pass_fail(trends_toward_bound(rep.slow)) << "\n";
    os << "criterion annealed_fast_prefers_t3: " << pass_fail(rep.fast_selection.margin > 0.0)
       << " (margin " << fmt_fixed(rep.fast_selection.margin, 3) << ")\n";
    return os.str();
}

AnnealedReport read_annealed_csv(const fs::path& path, double slack) {
    const CsvTable t = CsvTable::read(path);
    const std::size_t c_s = t.column("schedule"), c_t = t.column("t"), c_eps = t.column("eps"), c_p = t.column("p"),
                      c_lm = t.column("log_moment"), c_se = t.column("std_error"), c_ess = t.column("ess"),
                      c_m = t.column("paths"), c_r0 = t.column("r0"), c_n = t.column("normalized"),
                      c_b = t.column("bound");
    AnnealedReport rep;
    for (const auto& r : t.rows()) {
        AnnealedPoint p;
        p.t = parse_number(r[c_t]);
        p.eps = parse_number(r[c_eps]);
        p.p = std::stoi(r[c_p]);
        p.estimate.log_mean = parse_number(r[c_lm]);
        p.estimate.std_error = parse_number(r[c_se]);
        p.estimate.ess = parse_number(r[c_ess]);
        p.estimate.M = std::stol(r[c_m]);
        p.r0 = parse_number(r[c_r0]);
        p.normalized = parse_number(r[c_n]);
        p.bound = parse_number(r[c_b]);
        if (p.normalized > p.bound * (1.0 + slack)) rep.bound_respected = false;
        (r[c_s] == "slow" ? rep.slow : rep.fast).push_back(p);
    }
    rep.slow_selection = select_growth_model(rep.slow);
    rep.fast_selection = select_growth_model(rep.fast);
    rep.slow_p_exponent = p_exponent(rep.slow);
    rep.fast_p_exponent = p_exponent(rep.fast);
    return rep;
}

void cmd_sweep(Run& run) {
    const Config& c = run.cfg;
    const std::string mode = c.get_string("schedule.mode", "single");
    const CovarianceSpec spec = read_kernel(c);

    if (mode == "annealed") {
        AnnealedSweepOptions o;
        o.t_grid = c.get_list("annealed.t", o.t_grid);
        if (c.has("annealed.p")) {
            o.p_values.clear();
            for (double p : c.get_list("annealed.p")) {
                require(p >= 1.0 && std::floor(p) == p, "annealed.p must list positive integers");
                o.p_values.push_back(static_cast<int>(p));
            }
        }
        o.slow.a = c.get_double("annealed.slow_a", o.slow.a);
        o.slow.beta = c.get_double("annealed.slow_beta", o.slow.beta);
        o.fast.a = c.get_double("annealed.fast_a", o.fast.a);
        o.fast.beta = c.get_double("annealed.fast_beta", o.fast.beta);
        o.paths = c.get_int("annealed.paths", o.paths);
        o.dt_fraction = c.get_double("annealed.dt_fraction", o.dt_fraction);
        o.max_dt = c.get_double("annealed.max_dt", o.max_dt);
        o.bound_slack = c.get_double("annealed.bound_slack", o.bound_slack);
        o.seed = run.seed;
        o.workers = run.workers;
        const AnnealedReport rep = annealed_sweep(spec, o);

        CsvTable t(with_prefix(kAnnealedColumns));
        add_annealed_rows(t, run, "slow", o.slow, rep.slow);
        add_annealed_rows(t, run, "fast", o.fast, rep.fast);
        t.write(run.output(run.name("annealed", ".csv")));
        const std::string text = "run_id=" + run.run_id + "\n" + annealed_text(rep, o.bound_slack);
        write_text(run.output(run.name("annealed_report", ".txt")), text);
        *run.out << text;
        return;
    }

    const SweepOptions so = read_sweep_options(run);
    const int bootstrap = static_cast<int>(c.get_int("mc.bootstrap", 2000));
    const std::optional<double> l_d = registry_l_d(run.out_dir, spec.dim);
    CsvTable t(with_prefix(kSweepColumns));
    std::string text;

    if (mode == "discrimination") {
        const bool unsup = c.get_bool("schedule.allow_unsupported", false);
        DiscriminationOptions o;
        o.sweep = so;
        o.bootstrap = bootstrap;
        o.alpha = c.get_double("mc.alpha", o.alpha);
        const EpsSchedule reg =
            make_schedule(spec, ScheduleKind::Regular, c.get_double("schedule.regular_gamma", 0.2), false);
        const EpsSchedule sing =
            make_schedule(spec, ScheduleKind::Singular, c.get_double("schedule.singular_gamma", 0.4), unsup);
        const DiscriminationReport rep = phase_discrimination(spec, reg, sing, o);
        add_sweep_rows(t, run, "regular", rep.regular);
        add_sweep_rows(t, run, "singular", rep.singular);
        text = discrimination_text(rep, spec, l_d, bootstrap, run.seed);
    } else if (mode == "single") {
        const ScheduleKind kind = schedule_kind_from_string(c.get_string("schedule.kind"));
        EpsSchedule s = make_schedule(spec, kind, c.get_double("schedule.gamma", 0.0),
                                      c.get_bool("schedule.allow_unsupported", false));
        s.eps0 = c.get_double("schedule.eps0", 1.0);
        if (kind == ScheduleKind::Critical && !c.has("schedule.gamma")) s.gamma = s.critical_gamma();
        const SweepResult r = run_sweep(spec, s, so);
        add_sweep_rows(t, run, "sweep", r);
        text = single_text(r, l_d, bootstrap, run.seed);
    } else {
        throw ConfigError("schedule.mode must be single, discrimination or annealed, got '" + mode + "'");
    }
    t.write(run.output(run.name("sweep", ".csv")));
    text = "run_id=" + run.run_id + "\n" + text;
    write_text(run.output(run.name("sweep_report", ".txt")), text);
    *run.out << text;
}

// ---------------------------------------------------------------- report

void cmd_report(Run& run) {
    const Config& c = run.cfg;
    fs::path input = c.get_string("report.input");
    if (input.is_relative() && !fs::exists(input)) input = run.out_dir / input;
    const int bootstrap = static_cast<int>(c.get_int("report.bootstrap", 2000));
    const double alpha = c.get_double("report.alpha", 0.05);

    const CsvTable head = CsvTable::read(input);
    const auto& cols = head.header();
    std::string text;
    if (std::find(cols.begin(), cols.end(), "log_moment") != cols.end()) {
        const double slack = c.get_double("report.bound_slack", 1e-9);
        text = annealed_text(read_annealed_csv(input, slack), slack);
    } else {
        auto arms = read_sweep_csv(input);
        require(!arms.empty(), "report: " + input.string() + " has no rows");
        const CovarianceSpec kernel = arms.begin()->second.kernel;
        const std::optional<double> l_d = registry_l_d(run.out_dir, kernel.dim);
        if (arms.count("regular") && arms.count("singular")) {
            DiscriminationReport rep =
                discrimination_matrix(arms["regular"], arms["singular"], bootstrap, alpha, run.seed);
            rep.regular = arms["regular"];
            rep.singular = arms["singular"];
            text = discrimination_text(rep, kernel, l_d, bootstrap, run.seed);
        } else {
            for (const auto& [name, r] : arms) text += single_text(r, l_d, bootstrap, run.seed);
        }
    }
    text = "run_id=" + run.run_id + "\nsource=" + input.filename().string() + "\n" + text;
    write_text(run.output(run.name("report", ".txt")), text);
    *run.out << text;
}

using Command = void (*)(Run&);

const std::map<std::string, Command>& commands() {
    static const std::map<std::string, Command> m = {
        {"sample", cmd_sample}, {"eigs", cmd_eigs},   {"fk", cmd_fk},
        {"gns", cmd_gns},       {"sweep", cmd_sweep}, {"report", cmd_report},
    };
    return m;
}

const std::map<std::string, std::string>& descriptions() {
    static const std::map<std::string, std::string> m = {
        {"sample", "sample the mollified noise field and write summary statistics"},
        {"eigs", "top eigenpairs of the Anderson Hamiltonian on a box"},
        {"fk", "Feynman-Kac Monte Carlo estimate of the total mass"},
        {"gns", "variational constants and the constants registry"},
        {"sweep", "scaling sweeps, phase discrimination and annealed moments"},
        {"report", "rebuild a report from an existing sweep or annealed CSV"},
    };
    return m;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Numerical laboratory for the Anderson Hamiltonian and the parabolic Anderson model",
                 "anderson_lab"};
    app.require_subcommand(1);
    std::string config_path;
    std::optional<std::uint64_t> seed;
    int workers = 1;
    std::string out_dir = "results";
    for (const auto& [name, fn] : commands()) {
        CLI::App* sub = app.add_subcommand(name, descriptions().at(name));
        sub->add_option("--config", config_path, "experiment config (INI)")->required();
        sub->add_option("--seed", seed, "master seed; overrides [run] seed");
        sub->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--out", out_dir, "output directory (ANDERSON_LAB_OUT overrides)");
    }

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    if (const char* env = std::getenv("ANDERSON_LAB_OUT"); env && *env) out_dir = env;

    Run run;
    run.command = command;
    run.config_path = config_path;
    run.out_dir = out_dir;
    run.workers = workers;
    run.out = &out;
    try {
        run.cfg = Config::load(config_path);
        run.seed = seed ? *seed : run.cfg.get_u64("run.seed", 1);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    run.run_id = make_run_id(command, run.cfg.hash_hex(), run.seed);
    run.manifest.run_id = run.run_id;
    run.manifest.command = command;
    run.manifest.config_path = config_path;
    run.manifest.config_hash = run.cfg.hash_hex();
    run.manifest.schema_version = kSchemaVersion;
    run.manifest.seeds["master"] = std::to_string(run.seed);
    run.manifest.module_versions = kModuleVersions;
    run.manifest.start_time = utc_timestamp();

    int code = 0;
    try {
        commands().at(command)(run);
        for (const auto& k : run.cfg.unused_keys()) err << "warning: unused config key " << k << "\n";
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        run.manifest.message = e.what();
        code = 2;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        if (!e.diagnostics().empty()) err << "diagnostics: " << e.diagnostics() << "\n";
        run.manifest.message = std::string(e.what()) + " | " + e.diagnostics();
        code = 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        run.manifest.message = e.what();
        code = 1;
    }
    run.manifest.exit_code = code;
    run.manifest.end_time = utc_timestamp();
    try {
        append_manifest(run.out_dir, run.manifest);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        if (code == 0) code = 1;
    }
    out << "run_id=" << run.run_id << " exit=" << code << "\n";
    return code;
}

}  // namespace anderson

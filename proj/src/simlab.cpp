#include "segpower/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "segpower/errors.hpp"
#include "segpower/format.hpp"
#include "segpower/pscore.hpp"
#include "segpower/rng.hpp"

namespace segpower {

namespace {

constexpr std::uint64_t kBinaryKey = std::uint64_t{1} << 40;

// Cells with the same n share replicate streams, so cells that differ only in
// delta are paired draws.
std::uint64_t cell_seed(const Scenario& s, std::uint64_t seed) {
    if (const auto* ns = std::get_if<NormalScenario>(&s)) return stream_seed(seed, static_cast<std::uint64_t>(ns->n));
    return stream_seed(seed, kBinaryKey + static_cast<std::uint64_t>(std::get<BinaryScenario>(s).n));
}

Index scenario_n(const Scenario& s) {
    return std::visit([](const auto& x) { return x.n; }, s);
}

double scenario_delta(const Scenario& s) {
    return std::visit([](const auto& x) { return x.delta; }, s);
}

void check_family(const Scenario& s, TestName t) {
    const bool binary = std::holds_alternative<BinaryScenario>(s);
    if (binary && t == TestName::w) {
        throw Error(ErrorCode::configuration, "W applies to Gaussian sequences only; use L for binary scenarios");
    }
    if (!binary && t == TestName::l) {
        throw Error(ErrorCode::configuration, "L applies to binary sequences only; use W for Gaussian scenarios");
    }
}

// Per-scenario state that does not depend on the replicate.
struct CellContext {
    SegmentedTermSpec<double> spec;
    DesignMatrix<double> design;
};

CellContext make_context(const Scenario& s) {
    const Index n = scenario_n(s);
    CellContext c;
    const Eigen::VectorXd z = std::holds_alternative<NormalScenario>(s)
                                  ? Eigen::VectorXd(Eigen::VectorXd::LinSpaced(n, 1.0, double(n)) / double(n))
                                  : Eigen::VectorXd(Eigen::VectorXd::LinSpaced(n, 1.0, double(n)));
    c.spec = make_term_spec(z, TermKind::jump);
    c.design = build_design<double>(n, {}, true);
    return c;
}

bool reject_normal(const Series<double>& series, const CellContext& c, TestName t, double alpha) {
    if (t == TestName::w) return w_max_test(series, alpha).decision->reject;
    return pscore_statistic(series.y, c.design, c.spec).p_value < alpha;
}

bool reject_binary(const RaschDraw& d, const CellContext& c, TestName t, const SimulationOptions& o) {
    if (t == TestName::l) return l_max_binary<double>(d.y, d.b, o.lmax).reject;
    PScoreOptions<double> po;
    po.family = Family::binomial_logit;
    po.offset = -d.b;
    try {
        return pscore_statistic(d.y, c.design, c.spec, po).p_value < o.alpha;
    } catch (const Error& e) {
        // All-0/all-1 patterns and separated fits carry no evidence of a change.
        if (e.code() == ErrorCode::boundary || e.code() == ErrorCode::convergence) return false;
        throw;
    }
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

}  // namespace

void NormalScenario::validate() const {
    if (n < 4) throw Error(ErrorCode::configuration, "normal scenario needs n >= 4");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw Error(ErrorCode::configuration, "sigma must be >= 0");
    if (!std::isfinite(beta) || !std::isfinite(delta) || !std::isfinite(psi)) {
        throw Error(ErrorCode::configuration, "scenario parameters must be finite");
    }
}

Index BinaryScenario::changepoint() const {
    if (changepoint_item) return *changepoint_item;
    switch (n) {
        case 20: return 11;
        case 30: return 15;
        case 40: return 21;
        case 50: return 25;
        default: return (n + 1) / 2 + 1;
    }
}

void BinaryScenario::validate() const {
    if (n < 7) throw Error(ErrorCode::configuration, "binary scenario needs n >= 7");
    const Index c = changepoint();
    if (c < 1 || c > n) throw Error(ErrorCode::configuration, "changepoint item must lie in 1..n");
    if (!std::isfinite(delta)) throw Error(ErrorCode::configuration, "delta must be finite");
}

std::string_view to_string(TestName t) {
    switch (t) {
        case TestName::pscore: return "pscore";
        case TestName::w: return "w";
        case TestName::l: return "l";
    }
    return "?";
}

TestName parse_test_name(std::string_view s) {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (lower == "pscore" || lower == "p.score") return TestName::pscore;
    if (lower == "w") return TestName::w;
    if (lower == "l") return TestName::l;
    throw Error(ErrorCode::configuration, "unknown test '" + std::string(s) + "' (pscore, w, l)");
}

std::string scenario_id(const Scenario& s) {
    const char* family = std::holds_alternative<NormalScenario>(s) ? "normal" : "binary";
    return std::string(family) + "-n" + std::to_string(scenario_n(s)) + "-d" + shortest(scenario_delta(s));
}

Series<double> simulate_normal_jump(const NormalScenario& s, std::uint64_t seed, std::uint64_t replicate) {
    s.validate();
    Stream rng(seed, replicate);
    Eigen::VectorXd y(s.n);
    Eigen::VectorXd z(s.n);
    for (Index i = 0; i < s.n; ++i) {
        z(i) = double(i + 1) / double(s.n);
        y(i) = s.beta + (z(i) > s.psi ? s.delta : 0.0) + s.sigma * rng.normal();
    }
    auto series = Series<double>::from_values(std::move(y));
    series.z = z;
    return series;
}

RaschDraw simulate_rasch(const BinaryScenario& s, std::uint64_t seed, std::uint64_t replicate) {
    s.validate();
    Stream rng(seed, replicate);
    RaschDraw d;
    d.b.resize(s.n);
    for (Index i = 0; i < s.n; ++i) d.b(i) = rng.normal();
    d.theta1 = rng.normal();
    d.theta2 = d.theta1 + s.delta;
    const Index change = s.changepoint();
    d.y.resize(s.n);
    for (Index i = 0; i < s.n; ++i) {
        const double theta = i + 1 >= change ? d.theta2 : d.theta1;
        d.y(i) = rng.bernoulli(detail::logistic(theta - d.b(i))) ? 1.0 : 0.0;
    }
    return d;
}

std::string RejectionTable::to_csv() const {
    std::string out = "scenario,test,n,delta,rate,reps,seed,alpha\n";
    for (const auto& r : rows) {
        out += r.scenario_id + ',' + std::string(to_string(r.test)) + ',' + std::to_string(r.n) + ',' +
               shortest(r.delta) + ',' + shortest(r.rate) + ',' + std::to_string(r.reps) + ',' +
               std::to_string(r.seed) + ',' + shortest(alpha) + '\n';
    }
    return out;
}

RejectionTable rejection_rates(const std::vector<Scenario>& scenarios, const std::vector<TestName>& tests,
                               const SimulationOptions& opts) {
    if (opts.reps < 1) throw Error(ErrorCode::configuration, "reps must be >= 1");
    if (!(opts.alpha > 0.0 && opts.alpha < 1.0)) throw Error(ErrorCode::configuration, "alpha must lie in (0, 1)");
    if (tests.empty()) throw Error(ErrorCode::configuration, "no tests selected");
    for (const auto& s : scenarios) {
        std::visit([](const auto& x) { x.validate(); }, s);
        for (const TestName t : tests) check_family(s, t);
    }
    const bool uses_l = std::find(tests.begin(), tests.end(), TestName::l) != tests.end();
    if (uses_l && std::abs(opts.alpha - 0.05) > 1e-12 && !opts.lmax_critical_overridden) {
        throw Error(ErrorCode::unsupported_alpha, "the default L critical value 8.85 is for alpha = 0.05; supply l_critical");
    }
    const bool uses_w = std::find(tests.begin(), tests.end(), TestName::w) != tests.end();
    if (uses_w) worsley_critical(20, opts.alpha);  // rejects unsupported alpha up front

    unsigned workers = opts.workers ? opts.workers : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min<unsigned>(workers, static_cast<unsigned>(opts.reps));

    RejectionTable table;
    table.alpha = opts.alpha;
    const std::size_t nt = tests.size();
    for (const auto& s : scenarios) {
        const CellContext ctx = make_context(s);
        const std::uint64_t seed = cell_seed(s, opts.seed);
        std::vector<unsigned char> hits(static_cast<std::size_t>(opts.reps) * nt, 0);

        auto run_range = [&](int begin, int end) {
            for (int r = begin; r < end; ++r) {
                const auto rep = static_cast<std::uint64_t>(r);
                unsigned char* out = hits.data() + static_cast<std::size_t>(r) * nt;
                if (const auto* ns = std::get_if<NormalScenario>(&s)) {
                    const auto series = simulate_normal_jump(*ns, seed, rep);
                    for (std::size_t k = 0; k < nt; ++k) out[k] = reject_normal(series, ctx, tests[k], opts.alpha);
                } else {
                    const auto draw = simulate_rasch(std::get<BinaryScenario>(s), seed, rep);
                    for (std::size_t k = 0; k < nt; ++k) out[k] = reject_binary(draw, ctx, tests[k], opts);
                }
            }
        };

        if (workers <= 1) {
            run_range(0, opts.reps);
        } else {
            std::vector<std::thread> pool;
            std::vector<std::exception_ptr> errors(workers);
            const int chunk = (opts.reps + static_cast<int>(workers) - 1) / static_cast<int>(workers);
            for (unsigned w = 0; w < workers; ++w) {
                const int begin = static_cast<int>(w) * chunk;
                const int end = std::min(opts.reps, begin + chunk);
                if (begin >= end) break;
                pool.emplace_back([&, begin, end, w] {
                    try {
                        run_range(begin, end);
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                });
            }
            for (auto& t : pool) t.join();
            for (auto& e : errors) {
                if (e) std::rethrow_exception(e);
            }
        }

        for (std::size_t k = 0; k < nt; ++k) {
            int count = 0;
            for (int r = 0; r < opts.reps; ++r) count += hits[static_cast<std::size_t>(r) * nt + k];
            RejectionRow row;
            row.scenario_id = scenario_id(s);
            row.test = tests[k];
            row.n = scenario_n(s);
            row.delta = scenario_delta(s);
            row.rate = double(count) / double(opts.reps);
            row.reps = opts.reps;
            row.seed = opts.seed;
            table.rows.push_back(row);
        }
    }
    return table;
}

SimulationConfig parse_simulation_config(std::string_view text) {
    std::map<std::string, std::string> kv;
    std::map<std::string, int> line_of;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::configuration, "line " + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(std::string_view(t).substr(0, eq));
        std::transform(key.begin(), key.end(), key.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (kv.count(key)) throw Error(ErrorCode::configuration, "line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        kv[key] = trim(std::string_view(t).substr(eq + 1));
        line_of[key] = lineno;
    }

    auto where = [&](const std::string& key) { return "line " + std::to_string(line_of[key]) + ": "; };
    auto number = [&](const std::string& key, const std::string& v) {
        std::size_t used = 0;
        double d = 0;
        try {
            d = std::stod(v, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != v.size() || !std::isfinite(d)) {
            throw Error(ErrorCode::configuration, where(key) + "'" + v + "' is not a number");
        }
        return d;
    };
    auto integer = [&](const std::string& key, const std::string& v) {
        const double d = number(key, v);
        if (d != std::floor(d)) throw Error(ErrorCode::configuration, where(key) + "'" + v + "' is not an integer");
        return static_cast<long long>(d);
    };
    auto integers = [&](const std::string& key) {
        std::vector<Index> out;
        for (const auto& item : split_list(kv.at(key))) out.push_back(static_cast<Index>(integer(key, item)));
        return out;
    };
    auto numbers = [&](const std::string& key) {
        std::vector<double> out;
        for (const auto& item : split_list(kv.at(key))) out.push_back(number(key, item));
        return out;
    };
    auto take = [&](const std::string& key) -> std::optional<std::string> {
        const auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        return it->second;
    };

    static const char* known[] = {"family", "n", "delta", "sigma", "beta", "psi", "changepoint", "tests",
                                  "reps", "alpha", "seed", "workers", "l_critical"};
    for (const auto& [key, value] : kv) {
        if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) == std::end(known)) {
            throw Error(ErrorCode::configuration, where(key) + "unknown key '" + key + "'");
        }
    }

    SimulationConfig cfg;
    const std::string family = take("family").value_or("normal");
    if (family != "normal" && family != "binary") {
        throw Error(ErrorCode::configuration, where("family") + "family must be normal or binary");
    }
    if (!kv.count("n")) throw Error(ErrorCode::configuration, "missing key 'n'");
    const std::vector<Index> ns = integers("n");
    const std::vector<double> deltas = kv.count("delta") ? numbers("delta") : std::vector<double>{0.0};

    if (family == "normal") {
        for (const char* k : {"changepoint", "l_critical"}) {
            if (kv.count(k)) throw Error(ErrorCode::configuration, where(k) + "'" + k + "' applies to binary scenarios");
        }
        NormalScenario base;
        if (auto v = take("sigma")) base.sigma = number("sigma", *v);
        if (auto v = take("beta")) base.beta = number("beta", *v);
        if (auto v = take("psi")) base.psi = number("psi", *v);
        for (const Index n : ns) {
            for (const double d : deltas) {
                NormalScenario s = base;
                s.n = n;
                s.delta = d;
                cfg.scenarios.emplace_back(s);
            }
        }
        cfg.tests = {TestName::pscore, TestName::w};
    } else {
        for (const char* k : {"sigma", "beta", "psi"}) {
            if (kv.count(k)) throw Error(ErrorCode::configuration, where(k) + "'" + k + "' applies to normal scenarios");
        }
        std::vector<Index> changes;
        if (kv.count("changepoint")) {
            changes = integers("changepoint");
            if (changes.size() != ns.size()) {
                throw Error(ErrorCode::configuration, where("changepoint") + "need one changepoint per n");
            }
        }
        for (std::size_t i = 0; i < ns.size(); ++i) {
            for (const double d : deltas) {
                BinaryScenario s;
                s.n = ns[i];
                s.delta = d;
                if (!changes.empty()) s.changepoint_item = changes[i];
                cfg.scenarios.emplace_back(s);
            }
        }
        cfg.tests = {TestName::pscore, TestName::l};
    }

    if (auto v = take("tests")) {
        cfg.tests.clear();
        for (const auto& item : split_list(*v)) cfg.tests.push_back(parse_test_name(item));
    }
    auto& o = cfg.options;
    if (auto v = take("reps")) o.reps = static_cast<int>(integer("reps", *v));
    if (auto v = take("alpha")) o.alpha = number("alpha", *v);
    if (auto v = take("seed")) {
        const auto sd = integer("seed", *v);
        if (sd < 0) throw Error(ErrorCode::configuration, where("seed") + "seed must be >= 0");
        o.seed = static_cast<std::uint64_t>(sd);
        cfg.seed_in_file = true;
    }
    if (auto v = take("workers")) {
        const auto w = integer("workers", *v);
        if (w < 0) throw Error(ErrorCode::configuration, where("workers") + "workers must be >= 0");
        o.workers = static_cast<unsigned>(w);
    }
    if (auto v = take("l_critical")) {
        o.lmax.critical_value = number("l_critical", *v);
        o.lmax_critical_overridden = true;
    }
    for (const auto& s : cfg.scenarios) {
        std::visit([](const auto& x) { x.validate(); }, s);
        for (const TestName t : cfg.tests) check_family(s, t);
    }
    return cfg;
}

SimulationConfig load_simulation_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorCode::configuration, "cannot open scenario file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_simulation_config(ss.str());
}

}  // namespace segpower

// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "chargenet/chargenet.hpp"

using namespace chargenet;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances.
constexpr double kQueueSeconds = 300.0;
constexpr double kSweepSeconds = 600.0;
constexpr int kSweepWorkers = 8;
constexpr double kUtilizationRelative = 0.01;
constexpr double kManyChargers = 1e3;
constexpr double kMaxGapPercent = 6.0;
constexpr double kChargingUtilizationCap = 0.857 + 1e-3;
constexpr double kStationary = 1e-10;
constexpr double kMassSum = 1e-10;
constexpr double kEnergy = 1e-8;
constexpr double kRowSum = 1e-12;
constexpr double kFleetRelative = 1e-12;
constexpr double kSeparable = 1e-8;
constexpr int kSeparablePoints = 100;
constexpr double kOracleAttained = 1e-9;
constexpr std::uint64_t kSeed = 20240917;
const std::vector<double> kBudgets{40, 60, 80, 100, 120};
const std::vector<int> kChargers{1, 5, 10};

int failures = 0;

void line(int criterion, bool pass, const std::string& detail) {
	std::printf("criterion %d: %s  %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
	std::fflush(stdout);
	if (!pass) ++failures;
}

void check(const char* name, bool pass, const std::string& detail) {
	std::printf("check %s: %s  %s\n", name, pass ? "PASS" : "FAIL", detail.c_str());
	std::fflush(stdout);
	if (!pass) ++failures;
}

std::string fmt(const char* f, double a) {
	char buf[128];
	std::snprintf(buf, sizeof buf, f, a);
	return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

json read_json(const std::string& path) {
	std::ifstream in(path);
	return json::parse(in);
}

std::string data(const std::string& name) { return std::string(CHARGENET_DATA_DIR) + "/" + name; }

std::string slurp(const fs::path& p) {
	std::ifstream in(p, std::ios::binary);
	return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void queues_against_simulation(const json& spec) {
	const auto t0 = Clock::now();
	const ChargeStationSpec base = parse_charge_spec(spec.at("charge_station"));
	const SwapStationSpec swap = parse_swap_spec(spec.at("swap_station"), base.charge_hours);
	bool ok = true;
	std::string detail;
	for (int v : kChargers) {
		ChargeStationSpec c = base;
		c.chargers = v;
		for (const auto& r : queuecheck::erlang_rows(c)) {
			ok = ok && r.pass;
			if (!r.pass) detail += "erlang V=" + std::to_string(v) + fmt(" rho=%.1f", r.utilization) + fmt(" rel=%.4f; ", r.relative_error);
		}
	}
	for (const auto& r : queuecheck::swap_rows(swap)) {
		ok = ok && r.wait_pass && r.block_pass;
		if (!r.wait_pass)
			detail += fmt("swap lambda=%g", r.arrival) + fmt(" wait chain %.5f", r.chain_wait * 60) + fmt(" sim %.5f min; ", r.sim_wait * 60);
		if (!r.block_pass)
			detail += fmt("swap lambda=%g", r.arrival) + fmt(" block chain %.4f", r.chain_block) + fmt(" sim %.4f; ", r.sim_block);
	}
	const double secs = seconds_since(t0);
	ok = ok && secs <= kQueueSeconds;
	line(1, ok, detail + fmt("runtime %.1f s", secs));
}

void convexity(const json& spec) {
	const ChargeStationSpec c = parse_charge_spec(spec.at("charge_station"));
	const SwapStationSpec s = parse_swap_spec(spec.at("swap_station"), c.charge_hours);
	const auto x = queuecheck::probe_stations();
	const auto pc = queues::convexity_probe(queues::QueueKind::charging, queuecheck::kProbeDemand, x, c, s);
	const auto ps = queues::convexity_probe(queues::QueueKind::swapping, queuecheck::kProbeDemand, x, c, s);
	double worst2 = INFINITY, worst1 = -INFINITY;
	for (const auto* p : {&pc, &ps})
		for (const auto& r : p->rows) {
			if (!std::isnan(r.second_difference)) worst2 = std::min(worst2, r.second_difference);
			if (!std::isnan(r.first_difference)) worst1 = std::max(worst1, r.first_difference);
		}
	line(3, pc.convex && pc.decreasing && ps.convex && ps.decreasing,
	     fmt("min second difference %.3e h", worst2) + fmt(", max first difference %.3e h", worst1) +
	         ", unstable charging points " + std::to_string(pc.unstable_points));
}

const report::BudgetRun& find(const std::vector<report::BudgetRun>& runs, double budget, optimizer::Mode mode) {
	for (const auto& r : runs)
		if (r.budget == budget && r.mode == mode) return r;
	throw std::runtime_error("missing run");
}

void many_chargers(const Scenario& s, const std::vector<report::BudgetRun>& runs) {
	const auto& run = find(runs, kBudgets.back(), optimizer::Mode::charging_only);
	const int t = s.stages - 1;
	const OperationalDecision& ops = run.solution.ops[static_cast<std::size_t>(t)];
	const Vector charge = Vector::Constant(s.zones, kManyChargers), swap = Vector::Zero(s.zones);
	const MarketState st = economics::evaluate_state(s, charge, swap, ops);
	const double target = 6.0 / 7.0;
	line(2, std::abs(st.ev_utilization - target) <= kUtilizationRelative * target,
	     fmt("utilization %.6f", st.ev_utilization) + fmt(" vs %.6f", target));
}

void gaps(const std::vector<report::BudgetRun>& runs, double secs) {
	bool ok = secs <= kSweepSeconds;
	double worst = -INFINITY;
	for (const auto& r : runs) {
		ok = ok && r.certificate.report.valid && r.certificate.report.gap_percent <= kMaxGapPercent;
		worst = std::max(worst, r.certificate.report.gap_percent);
		std::printf("  %-13s budget %5.0f  LB %.1f  UB %.1f  gap %.3f%%%s\n", optimizer::to_string(r.mode).c_str(),
		            r.budget, r.certificate.report.lower, r.certificate.report.upper, r.certificate.report.gap_percent,
		            r.certificate.report.valid ? "" : "  UB < LB");
	}
	line(4, ok, fmt("largest gap %.3f%%", worst) + fmt(", sweep %.1f s", secs) + " with " + std::to_string(kSweepWorkers) + " workers");
}

void joint_value(const Scenario& s, const std::vector<report::BudgetRun>& runs) {
	bool ok = true;
	for (double b : kBudgets) {
		const double c = find(runs, b, optimizer::Mode::charging_only).solution.lower_bound;
		const double j = find(runs, b, optimizer::Mode::joint).solution.lower_bound;
		ok = ok && j >= c;
	}
	const auto& c = find(runs, kBudgets.back(), optimizer::Mode::charging_only).solution;
	const auto& j = find(runs, kBudgets.back(), optimizer::Mode::joint).solution;
	const double lc = c.stage_profit[static_cast<std::size_t>(s.stages - 1)];
	const double lj = j.stage_profit[static_cast<std::size_t>(s.stages - 1)];
	ok = ok && lj > lc;
	line(5, ok, fmt("last-stage profit gain at budget %.0f: ", kBudgets.back()) + fmt("%.3f%%", 100.0 * (lj - lc) / std::abs(lc)) +
	                fmt(", total gain %.3f%%", 100.0 * (j.lower_bound - c.lower_bound) / std::abs(c.lower_bound)));
}

void extra_sweep_checks(const std::vector<report::BudgetRun>& runs) {
	for (auto mode : {optimizer::Mode::charging_only, optimizer::Mode::joint}) {
		bool ok = true;
		double last = -INFINITY;
		for (double b : kBudgets) {
			const double lb = find(runs, b, mode).solution.lower_bound;
			ok = ok && lb >= last;
			last = lb;
		}
		check(("lower bound nondecreasing in budget (" + optimizer::to_string(mode) + ")").c_str(), ok, "");
	}
	double worst = 0.0;
	for (const auto& r : runs)
		if (r.mode == optimizer::Mode::charging_only)
			for (const auto& st : r.solution.states) worst = std::max(worst, st.ev_utilization);
	check("charging-only utilization cap", worst <= kChargingUtilizationCap, fmt("max %.6f", worst));
}

void identities(const Scenario& base, const std::vector<report::BudgetRun>& runs) {
	double stat = 0.0, mass = 0.0, energy = 0.0, rows = 0.0, fleet = 0.0;
	bool exact = true;
	for (const auto& r : runs) {
		const Scenario s = with_total_budget(base, r.budget);
		for (std::size_t t = 0; t < r.solution.states.size(); ++t) {
			const MarketState& st = r.solution.states[t];
			const OperationalDecision& ops = r.solution.ops[t];
			stat = std::max(stat, (st.stationary.transpose() * st.transition - st.stationary.transpose()).cwiseAbs().maxCoeff());
			mass = std::max(mass, std::abs(st.stationary.sum() - 1.0));
			energy = std::max(energy, economics::energy_balance_residual(st, ops, s));
			for (Eigen::Index i = 0; i < st.transition.rows(); ++i)
				rows = std::max(rows, std::abs(st.transition.row(i).sum() - 1.0));
			exact = exact && st.fleet_ev == st.ev_operating + st.ev_downtime;
			const economics::FleetSizes f = economics::fleet_sizes(ops, st.demand, st.pickup, st.charge_demand, st.access_c,
			                                                       st.wait_c, st.access_s, st.wait_s, s);
			fleet = std::max({fleet, std::abs(f.ev - st.fleet_ev) / st.fleet_ev, std::abs(f.gas - st.fleet_gas) / st.fleet_gas});
		}
	}
	const bool ok = stat <= kStationary && mass <= kMassSum && energy <= kEnergy && rows <= kRowSum && exact &&
	                fleet <= kFleetRelative;
	line(6, ok, fmt("|nP-n| %.2e", stat) + fmt(", |sum n - 1| %.2e", mass) + fmt(", energy %.2e", energy) +
	                fmt(", row sums %.2e", rows) + fmt(", fleet recomposition %.2e", fleet));
}

void separability(const Scenario& base, const optimizer::SolverConfig& config, const std::vector<report::BudgetRun>& runs) {
	const auto& run = find(runs, kBudgets.back(), optimizer::Mode::joint);
	const Scenario s = with_total_budget(base, run.budget);
	optimizer::SolverConfig c = config;
	c.mode = optimizer::Mode::joint;
	const bound::Multipliers& m = run.certificate.relaxed.multipliers;
	const optimizer::Layout L{s.zones, s.stages, true};
	const Vector center = bound::relaxed_point(s, run.solution);
	std::mt19937_64 rng(kSeed);
	std::uniform_real_distribution<double> u(0.8, 1.2);
	double worst = 0.0;
	int done = 0, tries = 0;
	while (done < kSeparablePoints && tries < 20 * kSeparablePoints) {
		++tries;
		Vector x = center;
		for (Eigen::Index v = 0; v < x.size(); ++v) x(v) *= u(rng);
		for (int t = 0; t < s.stages; ++t)
			for (int i = 0; i < s.zones; ++i) x(L.share(t, i)) = std::clamp(x(L.share(t, i)), 0.0, 1.0);
		try {
			const double whole = bound::partial_lagrangian(s, c, x, m);
			double parts = bound::lagrangian_constant(s, m);
			for (int t = 0; t < s.stages; ++t) {
				const optimizer::StageDecision d = optimizer::decode(L, x, t);
				for (int i = 0; i < s.zones; ++i)
					parts += bound::zone_lagrangian(s, i, t, bound::zone_of(d, d.k, i), m, c.stage_weight(t));
			}
			worst = std::max(worst, std::abs(parts - whole) / std::abs(whole));
			++done;
		} catch (const Error&) {
		}
	}

	// Same subproblems in reverse order.
	std::unique_ptr<queues::SwapWaitTable> table = std::make_unique<queues::SwapWaitTable>(s.swap_spec, c.swap_table_step);
	const economics::SwapSource source{table.get()};
	const Vector lb_x = bound::relaxed_point(s, run.solution);
	std::vector<bound::GridSpec> grids;
	std::vector<std::vector<bound::ZoneDecision>> exact;
	for (int t = 0; t < s.stages; ++t) {
		const optimizer::StageDecision a = optimizer::decode(L, lb_x, t);
		const optimizer::StageDecision b = optimizer::decode(L, run.certificate.relaxed.x, t);
		for (int i = 0; i < s.zones; ++i) {
			const bound::ZoneDecision za = bound::zone_of(a, a.k, i), zb = bound::zone_of(b, b.k, i);
			grids.push_back(bound::make_grid(s, c, i, {za, zb}));
			exact.push_back({za, zb});
		}
	}
	bound::BoundOptions fwd, rev;
	fwd.seed = rev.seed = c.seed;
	for (int q = s.zones * s.stages - 1; q >= 0; --q) rev.order.push_back(q);
	const double a = bound::upper_bound(s, c, m, grids, source, fwd, exact).value;
	const double b = bound::upper_bound(s, c, m, grids, source, rev, exact).value;
	line(7, done == kSeparablePoints && worst <= kSeparable && a == b,
	     fmt("max relative mismatch %.2e", worst) + " over " + std::to_string(done) + " points, permuted UB " +
	         (a == b ? "identical" : "differs") + fmt(" (%.17g)", a));
}

// One zone, one stage, with swapping.
Scenario toy() {
	Scenario s = validate_scenario(read_json(data("smoke2.json")));
	s.zones = 1;
	s.stages = 1;
	s.base_demand = Matrix::Constant(1, 1, 300.0);
	s.trip_time = Matrix::Constant(1, 1, 0.25);
	s.budgets = {8.0};
	s.cap_c = Vector::Constant(1, 30.0);
	s.cap_s = Vector::Constant(1, 6.0);
	return s;
}

void brute_force() {
	const Scenario s = toy();
	optimizer::SolverConfig c;
	c.mode = optimizer::Mode::joint;
	const queues::SwapWaitTable table(s.swap_spec, c.swap_table_step);
	const economics::SwapSource source{&table};
	bound::Multipliers m = bound::Multipliers::zeros(1, 1);
	m.mu(0) = 40.0;
	m.eta_c(0, 0) = 2.0;
	m.theta(0, 0) = 3.0;
	bound::ZoneDecision anchor;
	anchor.price = 60.0;
	anchor.idle_ev = 15.0;
	anchor.idle_gas = 10.0;
	anchor.share = 0.5;
	anchor.k = 8.0;
	anchor.rebalance = Vector::Constant(1, 4.0);
	bound::GridResolution res;
	res.price = 3;
	res.idle_ev = 2;
	res.idle_gas = 2;
	res.share = 3;
	res.k = 3;
	res.rebalance_time = 2;
	const bound::GridSpec grid = bound::make_grid(s, c, 0, {anchor}, res);
	const auto solved = bound::solve_subproblem(bound::make_instance(s, c, m, 0, 0, grid, source));
	const auto finer = bound::solve_subproblem(bound::make_instance(s, c, m, 0, 0, bound::refine(grid), source));
	const double margin = std::abs(finer.value - solved.value);
	const double attained = bound::zone_lagrangian(s, 0, 0, solved.argmax, m, 1.0, source);

	// Exhaustive search over the refined grid and dense station ladders.
	const bound::GridSpec g = bound::refine(grid);
	std::vector<double> cx{0.0}, sx{0.0};
	for (int q = 0; q <= 48; ++q) {
		cx.push_back(s.cap_c(0) * std::pow(1e-3, 1.0 - q / 48.0));
		sx.push_back(s.cap_s(0) * std::pow(1e-3, 1.0 - q / 48.0));
	}
	double oracle = -INFINITY;
	long long evaluated = 0;
	bound::ZoneDecision z;
	z.rebalance = Vector::Zero(1);
	for (double p : g.price)
		for (double ne : g.idle_ev)
			for (double ng : g.idle_gas)
				for (double r : g.share)
					for (double k : g.k)
						for (double ft : g.rebalance_time)
							for (double xc : cx)
								for (double xs : sx) {
									z.price = p;
									z.idle_ev = ne;
									z.idle_gas = ng;
									z.share = r;
									z.k = k;
									z.rebalance(0) = ft / s.trip_time(0, 0);
									z.charge = xc;
									z.swap = xs;
									try {
										oracle = std::max(oracle, bound::zone_lagrangian(s, 0, 0, z, m, 1.0, source));
										++evaluated;
									} catch (const Error&) {
									}
								}
	const double tol = kOracleAttained * std::abs(solved.value);
	const bool ok = std::abs(attained - solved.value) <= tol && oracle <= solved.value + margin + tol;
	line(8, ok, fmt("solver %.6f", solved.value) + fmt(", exhaustive %.6f", oracle) + fmt(", margin %.3e", margin) +
	                " over " + std::to_string(evaluated) + " points");
}

void reproducible(const Scenario& s, const optimizer::SolverConfig& c) {
	const fs::path root = fs::temp_directory_path() / "chargenet_acceptance";
	fs::remove_all(root);
	for (const char* d : {"a", "b"}) {
		std::vector<report::BudgetRun> runs{planner::solve_budget(s, c, std::nullopt, c.mode)};
		report::write_all(root / d, s, c, runs, {report::scenario_hash(s), c.seed, "solve"});
	}
	const bool same = slurp(root / "a" / "solution.json") == slurp(root / "b" / "solution.json") &&
	                  slurp(root / "a" / "bounds.csv") == slurp(root / "b" / "bounds.csv") &&
	                  !slurp(root / "a" / "bounds.csv").empty();
	line(9, same, "solution.json and bounds.csv compared byte for byte");
}

} // namespace

int main() {
	const json spec = read_json(data("queue_spec.json"));
	const Scenario manhattan = validate_scenario(read_json(data("manhattan6.json")));
	optimizer::SolverConfig config;
	config.seed = kSeed;
	config.workers = kSweepWorkers;

	queues_against_simulation(spec);

	const auto t0 = Clock::now();
	const auto runs = planner::sweep(manhattan, config, kBudgets, {optimizer::Mode::charging_only, optimizer::Mode::joint});
	const double sweep_secs = seconds_since(t0);

	many_chargers(manhattan, runs);
	convexity(spec);
	gaps(runs, sweep_secs);
	joint_value(manhattan, runs);
	identities(manhattan, runs);
	separability(manhattan, config, runs);
	brute_force();
	reproducible(validate_scenario(read_json(data("smoke2.json"))), config);
	extra_sweep_checks(runs);

	std::printf("%s\n", failures == 0 ? "ALL PASS" : (std::to_string(failures) + " FAILED").c_str());
	return failures == 0 ? 0 : 1;
}

// chargenet: deployment planning, bound certification, trip ingestion and
// queue validation from the command line.
//
// Exit codes: 0 success, 1 input error, 2 infeasible instance, 3 a queue
// validation check failed.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "chargenet/chargenet.hpp"

namespace fs = std::filesystem;
using namespace chargenet;

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 1;
constexpr int kInfeasible = 2;
constexpr int kCheckFailed = 3;

json read_json(const std::string& path, const char* what) {
	std::ifstream in(path);
	if (!in) throw ValidationError(std::string("cannot open ") + what + " file '" + path + "'");
	try {
		return json::parse(in);
	} catch (const json::parse_error& e) {
		throw ValidationError(std::string("malformed JSON in ") + what + " file '" + path + "': " + e.what());
	}
}

struct Common {
	std::string scenario;
	std::string config;
	std::string out = ".";
	std::string mode;
	std::optional<std::uint64_t> seed;
	std::optional<int> workers;
};

void add_common(CLI::App* cmd, Common& o, bool sweep) {
	cmd->add_option("--scenario", o.scenario, "scenario JSON")->required();
	cmd->add_option("--config", o.config, "solver config JSON");
	cmd->add_option("--out", o.out, "output directory");
	cmd->add_option("--mode", o.mode, sweep ? "joint, charging_only or both (default both)" : "joint or charging_only");
	cmd->add_option("--seed", o.seed, "random seed");
	cmd->add_option("--workers", o.workers, "worker threads (fallback: CHARGENET_WORKERS)");
}

optimizer::SolverConfig load_config(const Common& o) {
	optimizer::SolverConfig c = o.config.empty() ? optimizer::SolverConfig{} : optimizer::parse_config(read_json(o.config, "config"));
	if (o.seed) c.seed = *o.seed;
	if (o.workers) {
		c.workers = *o.workers;
	} else if (const char* env = std::getenv("CHARGENET_WORKERS")) {
		try {
			c.workers = std::stoi(env);
		} catch (const std::exception&) {
			throw ValidationError(std::string("CHARGENET_WORKERS is not an integer: '") + env + "'");
		}
	}
	if (c.workers < 1) throw ValidationError("workers must be >= 1");
	return c;
}

Scenario load_scenario(const std::string& path) {
	std::vector<std::string> warnings;
	Scenario s = validate_scenario(read_json(path, "scenario"), &warnings);
	for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
	return s;
}

void print_runs(const std::vector<report::BudgetRun>& runs) {
	for (const auto& r : runs)
		std::cout << optimizer::to_string(r.mode) << " budget " << report::num(r.budget) << ": LB "
		          << report::num(r.certificate.report.lower) << "  UB " << report::num(r.certificate.report.upper)
		          << "  gap " << report::num(r.certificate.report.gap_percent) << "%"
		          << (r.certificate.report.valid ? "" : "  (UB < LB)") << "\n";
}

int cmd_solve(const Common& o) {
	const Scenario s = load_scenario(o.scenario);
	optimizer::SolverConfig c = load_config(o);
	if (!o.mode.empty()) c.mode = optimizer::parse_mode(o.mode);
	std::vector<report::BudgetRun> runs{planner::solve_budget(s, c, std::nullopt, c.mode)};
	report::write_all(o.out, s, c, runs, {report::scenario_hash(s), c.seed, "solve"});
	print_runs(runs);
	return kOk;
}

std::vector<double> parse_budgets(const std::string& text) {
	std::vector<double> out;
	std::stringstream ss(text);
	std::string item;
	while (std::getline(ss, item, ',')) {
		try {
			std::size_t used = 0;
			out.push_back(std::stod(item, &used));
			if (used != item.size()) throw std::invalid_argument(item);
		} catch (const std::exception&) {
			throw ValidationError("--budgets: '" + item + "' is not a number");
		}
	}
	return out;
}

int cmd_sweep(const Common& o, const std::string& budgets) {
	const Scenario s = load_scenario(o.scenario);
	const optimizer::SolverConfig c = load_config(o);
	std::vector<optimizer::Mode> modes;
	if (o.mode.empty() || o.mode == "both")
		modes = {optimizer::Mode::charging_only, optimizer::Mode::joint};
	else
		modes = {optimizer::parse_mode(o.mode)};
	const auto runs = planner::sweep(s, c, parse_budgets(budgets), modes);
	report::write_all(o.out, s, c, runs, {report::scenario_hash(s), c.seed, "sweep"});
	print_runs(runs);
	return kOk;
}

int cmd_ingest(const std::string& trips_path, const std::string& map_path, double span_hours, const std::string& out) {
	const trips::ZoneMap zones = trips::parse_zone_map(read_json(map_path, "zone map"));
	std::ifstream in(trips_path);
	if (!in) throw ValidationError("cannot open trip file '" + trips_path + "'");
	const trips::Ingest d = trips::ingest(in, zones, span_hours);
	for (const auto& w : d.warnings) std::cerr << "warning: " << w << "\n";
	report::atomic_write(out, trips::to_fragment(d, span_hours).dump(2) + "\n");
	std::cout << d.trips << " trips over " << zones.zones << " zones written to " << out << "\n";
	return kOk;
}

int cmd_validate_queues(const std::string& spec_path, const std::string& out, std::int64_t arrivals, std::uint64_t seed) {
	const json doc = read_json(spec_path, "queue spec");
	if (!doc.is_object()) throw ValidationError("queue spec must be a JSON object");
	const ChargeStationSpec charge = parse_charge_spec(detail::require(doc, "charge_station"));
	std::vector<std::string> warnings;
	const SwapStationSpec swap = parse_swap_spec(detail::require(doc, "swap_station"), charge.charge_hours, &warnings);
	for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
	const report::Metadata meta{report::fnv1a_hex(doc.dump()), seed, "validate-queues"};
	using report::num;
	bool ok = true;

	const std::vector<std::string> probe_columns{"stations", "wait_hours", "block", "stable", "first_difference",
	                                             "second_difference"};
	auto probe_rows = [&](const queues::ProbeResult& p) {
		std::vector<std::vector<std::string>> rows;
		for (const auto& r : p.rows)
			rows.push_back({num(r.stations), r.stable ? num(r.wait) : "", num(r.block), r.stable ? "1" : "0",
			                std::isnan(r.first_difference) ? "" : num(r.first_difference),
			                std::isnan(r.second_difference) ? "" : num(r.second_difference)});
		return rows;
	};
	const auto stations = queuecheck::probe_stations();
	const auto pc = queues::convexity_probe(queues::QueueKind::charging, queuecheck::kProbeDemand, stations, charge, swap);
	const auto ps = queues::convexity_probe(queues::QueueKind::swapping, queuecheck::kProbeDemand, stations, charge, swap);
	report::write_csv(out, "convexity_charging.csv", probe_columns, probe_rows(pc), meta);
	report::write_csv(out, "convexity_swap.csv", probe_columns, probe_rows(ps), meta);
	for (const auto* p : {&pc, &ps}) {
		const char* name = p == &pc ? "charging" : "swap";
		if (p->unstable_points > 0) std::cout << name << " probe: " << p->unstable_points << " unstable points\n";
		if (!p->convex || !p->decreasing) {
			ok = false;
			std::cout << name << " probe: " << (p->convex ? "" : "not convex ") << (p->decreasing ? "" : "not decreasing")
			          << "\n";
		}
	}

	std::vector<std::vector<std::string>> er;
	for (const auto& r : queuecheck::erlang_rows(charge, arrivals, seed)) {
		er.push_back({std::to_string(r.chargers), num(r.utilization), num(r.arrival), num(r.analytic), num(r.simulated),
		              num(r.ci), num(r.relative_error), r.pass ? "1" : "0"});
		if (!r.pass) {
			ok = false;
			std::cout << "erlang-c vs simulation: rho " << r.utilization << " relative error " << r.relative_error << "\n";
		}
	}
	report::write_csv(out, "des_charging.csv",
	                  {"chargers", "utilization", "arrival", "analytic_wait", "sim_wait", "sim_ci", "relative_error", "pass"},
	                  er, meta);

	std::vector<std::vector<std::string>> sr;
	for (const auto& r : queuecheck::swap_rows(swap, arrivals, seed)) {
		sr.push_back({num(r.arrival), num(r.chain_wait), num(r.sim_wait), num(r.sim_ci), num(r.chain_block),
		              num(r.sim_block), r.wait_pass ? "1" : "0", r.block_pass ? "1" : "0"});
		if (!r.wait_pass || !r.block_pass) {
			ok = false;
			std::cout << "swap chain vs simulation at " << r.arrival << "/h: wait " << r.chain_wait << " vs "
			          << r.sim_wait << " h, block " << r.chain_block << " vs " << r.sim_block << "\n";
		}
	}
	report::write_csv(out, "des_swap.csv",
	                  {"arrival", "chain_wait", "sim_wait", "sim_ci", "chain_block", "sim_block", "wait_pass", "block_pass"},
	                  sr, meta);
	std::cout << (ok ? "queue validation passed" : "queue validation failed") << "\n";
	return ok ? kOk : kCheckFailed;
}

} // namespace

int main(int argc, char** argv) {
	CLI::App app{"Charging and battery-swap station deployment planner"};
	app.require_subcommand(1);

	Common solve_opts;
	auto* solve = app.add_subcommand("solve", "solve the scenario at its own budgets and certify the bound");
	add_common(solve, solve_opts, false);

	Common sweep_opts;
	std::string budgets;
	auto* sweep = app.add_subcommand("sweep", "solve and certify at several total budgets");
	add_common(sweep, sweep_opts, true);
	sweep->add_option("--budgets", budgets, "comma-separated ascending total budgets")->required();

	std::string trips_path, map_path, fragment = "scenario_fragment.json";
	double span_hours = 0.0;
	auto* ingest = app.add_subcommand("ingest-trips", "build demand and travel-time matrices from trip records");
	ingest->add_option("--trips", trips_path, "CSV with pickup_zone, dropoff_zone, duration_minutes")->required();
	ingest->add_option("--zone-map", map_path, "JSON object mapping raw zone ids to zones 1..M")->required();
	ingest->add_option("--span-hours", span_hours, "hours covered by the trip file")->required();
	ingest->add_option("--out", fragment, "scenario fragment to write");

	std::string spec_path, queue_out = ".";
	std::int64_t arrivals = queuecheck::kArrivals;
	std::uint64_t queue_seed = queuecheck::kSeed;
	auto* validate = app.add_subcommand("validate-queues", "convexity probes and simulation cross-checks");
	validate->add_option("--spec", spec_path, "JSON with charge_station and swap_station")->required();
	validate->add_option("--out", queue_out, "output directory");
	validate->add_option("--arrivals", arrivals, "simulated arrivals per check");
	validate->add_option("--seed", queue_seed, "simulation seed");

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError& e) {
		const int code = app.exit(e);
		return code == 0 ? kOk : kInputError;
	}

	try {
		if (*solve) return cmd_solve(solve_opts);
		if (*sweep) return cmd_sweep(sweep_opts, budgets);
		if (*ingest) return cmd_ingest(trips_path, map_path, span_hours, fragment);
		if (*validate) return cmd_validate_queues(spec_path, queue_out, arrivals, queue_seed);
	} catch (const InfeasibleError& e) {
		std::cerr << "infeasible: " << e.what() << "\n";
		return kInfeasible;
	} catch (const std::exception& e) {
		std::cerr << "error: " << e.what() << "\n";
		return kInputError;
	}
	return kInputError;
}

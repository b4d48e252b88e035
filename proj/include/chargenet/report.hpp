#pragma once

// Output artifacts: solution.json, bounds.csv, deployment.csv, traces.csv,
// each CSV with a metadata sidecar. Every file is written to a temporary
// name in the target directory and renamed into place.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "chargenet/bound.hpp"
#include "chargenet/error.hpp"
#include "chargenet/model.hpp"
#include "chargenet/optimizer.hpp"

namespace chargenet::report {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kFormatVersion = 1;

/// One solved budget level in one mode.
struct BudgetRun {
	double budget = 0.0; // total over all stages
	optimizer::Mode mode = optimizer::Mode::joint;
	optimizer::Solution solution;
	bound::Certificate certificate;
};

/// FNV-1a 64-bit digest, hex encoded.
inline std::string fnv1a_hex(const std::string& bytes) {
	std::uint64_t h = 0xcbf29ce484222325ULL;
	for (unsigned char ch : bytes) {
		h ^= ch;
		h *= 0x100000001b3ULL;
	}
	char buf[17];
	std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
	return buf;
}

inline std::string scenario_hash(const Scenario& s) { return fnv1a_hex(to_json(s).dump()); }

/// Shortest text that reads back to the same double.
inline std::string num(double v) {
	char buf[32];
	for (int digits = 15; digits <= 17; ++digits) {
		std::snprintf(buf, sizeof buf, "%.*g", digits, v);
		if (std::strtod(buf, nullptr) == v) break;
	}
	return buf;
}

inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
	namespace fs = std::filesystem;
	if (path.has_parent_path()) fs::create_directories(path.parent_path());
	const fs::path tmp = path.string() + ".tmp";
	{
		std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
		if (!out) throw Error("cannot open " + tmp.string() + " for writing");
		out << content;
		out.flush();
		if (!out) throw Error("write failed: " + tmp.string());
	}
	std::error_code ec;
	fs::rename(tmp, path, ec);
	if (ec) {
		fs::remove(tmp);
		throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
	}
}

struct Metadata {
	std::string scenario_hash;
	std::uint64_t seed = 0;
	std::string command;
};

inline json sidecar(const Metadata& m, const std::string& file, const std::vector<std::string>& columns) {
	return {{"file", file},
	        {"columns", columns},
	        {"scenario_hash", m.scenario_hash},
	        {"seed", m.seed},
	        {"command", m.command},
	        {"versions", {{"chargenet", kVersion}, {"format", kFormatVersion}}}};
}

/// Header plus rows; a `<name>.meta.json` sidecar lands next to it.
inline void write_csv(const std::filesystem::path& dir, const std::string& name, const std::vector<std::string>& columns,
                      const std::vector<std::vector<std::string>>& rows, const Metadata& meta) {
	std::string text;
	for (std::size_t c = 0; c < columns.size(); ++c) text += (c ? "," : "") + columns[c];
	text += '\n';
	for (const auto& row : rows) {
		for (std::size_t c = 0; c < row.size(); ++c) text += (c ? "," : "") + row[c];
		text += '\n';
	}
	atomic_write(dir / name, text);
	atomic_write(dir / (name + ".meta.json"), sidecar(meta, name, columns).dump(2) + "\n");
}

inline double total_profit(const optimizer::Solution& sol) {
	double total = 0.0;
	for (double p : sol.stage_profit) total += p;
	return total;
}

inline json to_json(const BudgetRun& r) {
	const optimizer::Solution& sol = r.solution;
	json stages = json::array();
	for (std::size_t t = 0; t < sol.states.size(); ++t) {
		const int ti = static_cast<int>(t);
		stages.push_back({{"stage", ti},
		                  {"charge_stations", chargenet::detail::to_list(sol.cumulative.charge_at(ti))},
		                  {"swap_stations", chargenet::detail::to_list(sol.cumulative.swap_at(ti))},
		                  {"new_charge_stations", chargenet::detail::to_list(sol.plan.new_charge.row(ti).transpose())},
		                  {"new_swap_stations", chargenet::detail::to_list(sol.plan.new_swap.row(ti).transpose())},
		                  {"operations", chargenet::to_json(sol.ops[t])},
		                  {"state", chargenet::to_json(sol.states[t])},
		                  {"profit", sol.stage_profit[t]}});
	}
	const bound::Certificate& c = r.certificate;
	json rows = json::array();
	for (const auto& row : c.bound.rows)
		rows.push_back({{"stage", row.stage}, {"zone", row.zone}, {"value", row.value}});
	return {{"budget", r.budget},
	        {"mode", optimizer::to_string(r.mode)},
	        {"lower_bound", sol.lower_bound},
	        {"upper_bound", c.bound.value},
	        {"gap_percent", c.report.gap_percent},
	        {"bound_valid", c.report.valid},
	        {"grid_margin", c.bound.margin},
	        {"grid_refined", c.bound.refined},
	        {"relaxed_value", c.relaxed.value},
	        {"lagrangian_constant", c.bound.constant},
	        {"multipliers", bound::to_json(c.relaxed.multipliers)},
	        {"subproblems", rows},
	        {"best_start", sol.best_start},
	        {"start_values", sol.start_values},
	        {"stages", stages}};
}

inline json solution_document(const Scenario& s, const optimizer::SolverConfig& c, const std::vector<BudgetRun>& runs,
                              const Metadata& meta) {
	json out = {{"scenario_hash", meta.scenario_hash},
	            {"seed", meta.seed},
	            {"command", meta.command},
	            {"versions", {{"chargenet", kVersion}, {"format", kFormatVersion}}},
	            {"zones", s.zones},
	            {"stages", s.stages},
	            {"config", optimizer::to_json(c)},
	            {"runs", json::array()}};
	for (const BudgetRun& r : runs) out["runs"].push_back(to_json(r));
	return out;
}

inline void write_all(const std::filesystem::path& dir, const Scenario& s, const optimizer::SolverConfig& c,
                      const std::vector<BudgetRun>& runs, const Metadata& meta) {
	atomic_write(dir / "solution.json", solution_document(s, c, runs, meta).dump(2) + "\n");

	std::vector<std::vector<std::string>> bounds, deployment, traces;
	for (const BudgetRun& r : runs) {
		const std::string mode = optimizer::to_string(r.mode);
		const auto& rep = r.certificate.report;
		bounds.push_back({num(r.budget), mode, num(rep.lower), num(rep.upper), num(rep.gap_percent)});
		const optimizer::Solution& sol = r.solution;
		for (int t = 0; t < s.stages; ++t) {
			const auto& st = sol.states[static_cast<std::size_t>(t)];
			const auto& ops = sol.ops[static_cast<std::size_t>(t)];
			for (int i = 0; i < s.zones; ++i)
				deployment.push_back({num(r.budget), mode, std::to_string(t), std::to_string(i),
				                      num(sol.cumulative.charge(t, i)), num(sol.cumulative.swap(t, i)),
				                      num(sol.plan.new_charge(t, i)), num(sol.plan.new_swap(t, i)),
				                      num(ops.charge_share(i))});
			traces.push_back({num(r.budget), mode, std::to_string(t), num(st.profit), num(st.revenue),
			                  num(st.fleet_ev), num(st.fleet_gas), num(st.ev_utilization), num(st.total_charge_rate)});
		}
	}
	write_csv(dir, "bounds.csv", {"budget", "mode", "lb", "ub", "gap_percent"}, bounds, meta);
	write_csv(dir, "deployment.csv",
	          {"budget", "mode", "stage", "zone", "charge_stations", "swap_stations", "new_charge_stations",
	           "new_swap_stations", "charge_share"},
	          deployment, meta);
	write_csv(dir, "traces.csv",
	          {"budget", "mode", "stage", "profit", "revenue", "fleet_ev", "fleet_gas", "ev_utilization",
	           "total_charge_rate"},
	          traces, meta);
}

} // namespace chargenet::report

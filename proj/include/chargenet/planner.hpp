#pragma once

// Budget sweeps: lower bound, certificate and gap for each (budget, mode).

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "chargenet/bound.hpp"
#include "chargenet/error.hpp"
#include "chargenet/model.hpp"
#include "chargenet/optimizer.hpp"
#include "chargenet/queues.hpp"
#include "chargenet/report.hpp"

namespace chargenet::planner {

using optimizer::Mode;

/// Solves and certifies one budget level. `total_budget` replaces the
/// scenario's budgets with an even split across stages; pass nullopt to keep
/// them as given.
inline report::BudgetRun solve_budget(const Scenario& base, const optimizer::SolverConfig& config,
                                      std::optional<double> total_budget, Mode mode,
                                      const std::vector<optimizer::Solution>& warm_starts = {}) {
	const Scenario s = total_budget ? with_total_budget(base, *total_budget) : base;
	optimizer::SolverConfig c = config;
	c.mode = mode;
	std::unique_ptr<queues::SwapWaitTable> table;
	if (mode == Mode::joint) table = std::make_unique<queues::SwapWaitTable>(s.swap_spec, c.swap_table_step);
	report::BudgetRun run;
	run.budget = s.cumulative_budget(s.stages - 1);
	run.mode = mode;
	run.solution = optimizer::solve_original(s, c, table.get(), warm_starts);
	if (run.solution.gas_only) {
		run.certificate.report = bound::optimality_report(run.solution.lower_bound, run.solution.lower_bound);
		run.certificate.bound.value = run.solution.lower_bound;
		return run;
	}
	bound::BoundOptions opt;
	opt.workers = c.workers;
	run.certificate = bound::certify(s, c, run.solution, opt);
	return run;
}

/// Budgets must be positive and strictly ascending. For each budget the
/// charging-only plan (when requested) is solved first and handed to the joint
/// solve as a candidate, and each mode's plan at the previous budget seeds the
/// next one; both stay feasible as the budget grows.
inline std::vector<report::BudgetRun> sweep(const Scenario& s, const optimizer::SolverConfig& c,
                                            const std::vector<double>& budgets, const std::vector<Mode>& modes) {
	if (budgets.empty()) throw ValidationError("sweep: no budgets given");
	for (std::size_t k = 0; k < budgets.size(); ++k) {
		if (!(budgets[k] > 0.0)) throw ValidationError("sweep: budgets must be positive");
		if (k > 0 && !(budgets[k] > budgets[k - 1])) throw ValidationError("sweep: budgets must be ascending");
	}
	if (modes.empty()) throw ValidationError("sweep: no modes given");
	std::vector<Mode> order = modes;
	std::sort(order.begin(), order.end(), [](Mode a, Mode b) { return a == Mode::charging_only && b != a; });
	order.erase(std::unique(order.begin(), order.end()), order.end());

	std::vector<report::BudgetRun> out;
	std::map<Mode, optimizer::Solution> previous;
	for (double budget : budgets) {
		std::optional<optimizer::Solution> charging;
		for (Mode mode : order) {
			std::vector<optimizer::Solution> warm;
			if (auto it = previous.find(mode); it != previous.end()) warm.push_back(it->second);
			if (mode == Mode::joint && charging) warm.push_back(*charging);
			report::BudgetRun run = solve_budget(s, c, budget, mode, warm);
			if (mode == Mode::charging_only) charging = run.solution;
			previous[mode] = run.solution;
			out.push_back(std::move(run));
		}
	}
	return out;
}

} // namespace chargenet::planner

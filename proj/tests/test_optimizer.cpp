#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace chargenet;
using namespace chargenet::optimizer;

namespace {

SolverConfig quick(Mode mode = Mode::joint) {
	SolverConfig c;
	c.mode = mode;
	c.multistarts = 2;
	return c;
}

// Gas-only profit of one zone with no rebalancing.
double gas_zone_profit(const Scenario& s, int i, double price, double idle) {
	const double pickup = s.phi / std::sqrt(idle);
	double out = -s.gamma_g * idle;
	for (int j = 0; j < s.zones; ++j) {
		const double c = price * s.trip_time(i, j) + s.alpha * pickup;
		const double c0 = s.outside_price * s.trip_time(i, j);
		const double e = s.logit_sensitivity;
		const double lam = s.base_demand(i, j) / (1.0 + std::exp(-e * (c0 - c)));
		out += price * lam * s.trip_time(i, j) - s.gamma_g * lam * (pickup + s.trip_time(i, j));
	}
	return out;
}

// Compass search in (price, log idle) from a coarse grid optimum.
double gas_zone_optimum(const Scenario& s, int i) {
	double bp = 0.0, bn = 0.0, best = -INFINITY;
	for (double p = 10.0; p <= 200.0; p += 2.0)
		for (double ln = 0.0; ln <= 8.0; ln += 0.1) {
			const double v = gas_zone_profit(s, i, p, std::exp(ln));
			if (v > best) {
				best = v;
				bp = p;
				bn = ln;
			}
		}
	for (double step = 1.0; step > 1e-10; step *= 0.5) {
		bool moved = true;
		while (moved) {
			moved = false;
			for (auto [dp, dn] : {std::pair{step, 0.0}, {-step, 0.0}, {0.0, 0.05 * step}, {0.0, -0.05 * step}}) {
				const double v = gas_zone_profit(s, i, bp + dp, std::exp(bn + dn));
				if (v > best) {
					best = v;
					bp += dp;
					bn += dn;
					moved = true;
				}
			}
		}
	}
	return best;
}

} // namespace

TEST(Solve, TwoZoneAuditPasses) {
	const Scenario s = support::scenario("smoke2.json");
	const SolverConfig c = quick();
	const Solution sol = solve_original(s, c);
	const AuditReport rep = audit(s, sol, c);
	EXPECT_TRUE(rep.ok) << (rep.failures.empty() ? "" : rep.failures.front());
	EXPECT_TRUE(std::isfinite(sol.lower_bound));
	EXPECT_EQ(static_cast<int>(sol.ops.size()), s.stages);
	for (int t = 0; t < s.stages; ++t) {
		EXPECT_LE(s.cost_c * sol.cumulative.charge_at(t).sum() + s.cost_s * sol.cumulative.swap_at(t).sum(),
		          s.cumulative_budget(t) + 1e-9);
		if (t > 0) {
			EXPECT_TRUE((sol.plan.new_charge.row(t).array() >= 0.0).all());
			EXPECT_TRUE((sol.plan.new_swap.row(t).array() >= 0.0).all());
		}
		const MarketState& st = sol.states[static_cast<std::size_t>(t)];
		EXPECT_LE(economics::energy_balance_residual(st, sol.ops[static_cast<std::size_t>(t)], s), 1e-8);
		EXPECT_LE(market::flow_residual(st.demand, sol.ops[static_cast<std::size_t>(t)].rebalance).cwiseAbs().sum(),
		          c.flow_tolerance * st.demand.sum() * 2.0);
	}
	double total = 0.0;
	for (double p : sol.stage_profit) total += p;
	EXPECT_NEAR(total, sol.lower_bound, 1e-9 * std::abs(total));
}

TEST(Solve, DeterministicForSeed) {
	const Scenario s = support::scenario("smoke2.json");
	const Solution a = solve_original(s, quick());
	const Solution b = solve_original(s, quick());
	EXPECT_EQ(a.lower_bound, b.lower_bound);
	EXPECT_EQ(a.cumulative.charge, b.cumulative.charge);
	EXPECT_EQ(a.cumulative.swap, b.cumulative.swap);
}

TEST(Solve, JointAtLeastChargingOnly) {
	const Scenario s = support::scenario("smoke2.json");
	const Solution charging = solve_original(s, quick(Mode::charging_only));
	EXPECT_TRUE(charging.cumulative.swap.isZero());
	for (const auto& o : charging.ops) EXPECT_EQ(o.charge_share, Vector::Ones(2));
	const Solution joint = solve_original(s, quick(), nullptr, {charging});
	EXPECT_GE(joint.lower_bound, charging.lower_bound);
}

TEST(Solve, ZeroBudgetWithMandatoryEvsIsInfeasible) {
	const Scenario s = with_total_budget(support::scenario("smoke2.json"), 0.0);
	EXPECT_THROW(solve_original(s, quick()), InfeasibleError);
}

TEST(Solve, ZeroBudgetGasOnlyMatchesZoneOracle) {
	const Scenario s = with_total_budget(support::scenario("smoke2.json"), 0.0);
	SolverConfig c = quick();
	c.ev_mandatory = false;
	const Solution sol = solve_original(s, c);
	EXPECT_TRUE(sol.gas_only);
	const double oracle = s.stages * (gas_zone_optimum(s, 0) + gas_zone_optimum(s, 1));
	EXPECT_NEAR(sol.lower_bound, oracle, 1e-6 * std::abs(oracle));
	for (const auto& o : sol.ops) EXPECT_EQ(o.idle_ev, Vector::Zero(2));
}

TEST(Solve, MoreBudgetNeverHurts) {
	const Scenario base = support::scenario("smoke2.json");
	const Solution small = solve_original(with_total_budget(base, 2.0), quick());
	const Solution large = solve_original(with_total_budget(base, 6.0), quick(), nullptr, {small});
	EXPECT_GE(large.lower_bound, small.lower_bound);
}

TEST(Config, ParsesAndRejects) {
	const SolverConfig c = parse_config(json{{"mode", "charging_only"}, {"multistarts", 3}, {"seed", 11}});
	EXPECT_EQ(c.mode, Mode::charging_only);
	EXPECT_EQ(c.multistarts, 3);
	EXPECT_EQ(c.seed, 11u);
	EXPECT_THROW(parse_config(json{{"multistarts", 0}}), ValidationError);
	EXPECT_THROW(parse_config(json{{"discount", 1.5}}), ValidationError);
	EXPECT_THROW(parse_config(json{{"mode", "hybrid"}}), ValidationError);
	EXPECT_THROW(parse_config(json::array()), ValidationError);
	const SolverConfig back = parse_config(to_json(c));
	EXPECT_EQ(back.multistarts, c.multistarts);
	EXPECT_EQ(back.mode, c.mode);
}

TEST(Rebalance, RepairClosesFlowBalance) {
	Matrix lam(3, 3), tau = Matrix::Constant(3, 3, 0.2);
	lam << 0, 10, 2, 1, 0, 7, 4, 3, 0;
	Matrix f = Matrix::Zero(3, 3);
	repair_flow_balance(lam, f, tau);
	EXPECT_LE(market::flow_residual(lam, f).cwiseAbs().maxCoeff(), 1e-12);
	EXPECT_TRUE((f.array() >= 0.0).all());
}

TEST(Sweep, RejectsUnorderedBudgets) {
	const Scenario s = support::scenario("smoke2.json");
	EXPECT_THROW(planner::sweep(s, quick(), {4.0, 2.0}, {Mode::joint}), ValidationError);
	EXPECT_THROW(planner::sweep(s, quick(), {0.0, 2.0}, {Mode::joint}), ValidationError);
	EXPECT_THROW(planner::sweep(s, quick(), {}, {Mode::joint}), ValidationError);
}

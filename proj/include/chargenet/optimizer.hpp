#pragma once

// Lower bound: a feasible local solution of the multi-stage deployment
// program found by multistart augmented-Lagrangian search. Charging demand is
// eliminated through the energy-balance fixed point, so the search runs over
// station counts, prices, idle fleets, rebalancing flows and charging-mode
// splits only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "chargenet/economics.hpp"
#include "chargenet/error.hpp"
#include "chargenet/market.hpp"
#include "chargenet/model.hpp"
#include "chargenet/nlp.hpp"
#include "chargenet/queues.hpp"

namespace chargenet::optimizer {

enum class Mode { joint, charging_only };

inline std::string to_string(Mode m) { return m == Mode::joint ? "joint" : "charging_only"; }

inline Mode parse_mode(const std::string& text) {
	if (text == "joint") return Mode::joint;
	if (text == "charging_only" || text == "charging-only") return Mode::charging_only;
	throw ValidationError("unknown mode '" + text + "' (expected joint or charging_only)");
}

struct SolverConfig {
	Mode mode = Mode::joint;
	int multistarts = 8;
	std::uint64_t seed = 20240917;
	int workers = 1;
	int max_outer = 12;
	int max_inner = 250;
	double tolerance = 1e-6;          // projected-gradient norm in box-normalized units
	double feasibility = 1e-7;        // scaled constraint violation before exact repair
	double penalty = 10.0;
	double penalty_growth = 5.0;
	double flow_tolerance = 1e-6;     // flow residual relative to total flow
	double discount = 1.0;            // stage t profit weighted by discount^t
	bool ev_mandatory = true;
	double swap_table_step = 0.1;
	double start_blend = 0.5;         // Latin-hypercube starts move this far from the heuristic start
	// Decision boxes, relative to scenario quantities.
	double price_low = 0.25;          // times outside_price
	double price_high = 3.0;
	double idle_high = 1.0;           // times the zone's potential busy vehicles
	double rebalance_high = 0.5;      // times max(base_demand(i,j), base_demand(j,i))

	double stage_weight(int t) const { return std::pow(discount, t); }
};

inline SolverConfig parse_config(const json& doc) {
	SolverConfig c;
	if (doc.is_null()) return c;
	if (!doc.is_object()) throw ValidationError("config must be a JSON object");
	auto num = [&](const char* key, double& out) {
		if (doc.contains(key)) out = detail::number(doc, key);
	};
	auto integer = [&](const char* key, int& out) {
		if (doc.contains(key)) out = detail::integer(doc, key);
	};
	if (doc.contains("mode")) c.mode = parse_mode(doc.at("mode").get<std::string>());
	integer("multistarts", c.multistarts);
	if (doc.contains("seed")) c.seed = doc.at("seed").get<std::uint64_t>();
	integer("workers", c.workers);
	integer("max_outer", c.max_outer);
	integer("max_inner", c.max_inner);
	num("tolerance", c.tolerance);
	num("feasibility", c.feasibility);
	num("penalty", c.penalty);
	num("penalty_growth", c.penalty_growth);
	num("flow_tolerance", c.flow_tolerance);
	num("discount", c.discount);
	if (doc.contains("ev_mandatory")) c.ev_mandatory = doc.at("ev_mandatory").get<bool>();
	num("swap_table_step", c.swap_table_step);
	num("start_blend", c.start_blend);
	num("price_low", c.price_low);
	num("price_high", c.price_high);
	num("idle_high", c.idle_high);
	num("rebalance_high", c.rebalance_high);
	if (c.multistarts < 1) throw ValidationError("multistarts must be >= 1");
	if (c.workers < 1) throw ValidationError("workers must be >= 1");
	if (!(c.tolerance > 0.0) || !(c.feasibility > 0.0) || !(c.flow_tolerance > 0.0))
		throw ValidationError("tolerances must be positive");
	if (!(c.penalty > 0.0) || !(c.penalty_growth > 1.0)) throw ValidationError("penalty must be positive and grow");
	if (!(c.discount > 0.0 && c.discount <= 1.0)) throw ValidationError("discount must lie in (0, 1]");
	if (!(c.price_low >= 0.0 && c.price_high > c.price_low)) throw ValidationError("price box is empty");
	return c;
}

inline json to_json(const SolverConfig& c) {
	return {{"mode", to_string(c.mode)},        {"multistarts", c.multistarts},
	        {"seed", c.seed},                   {"max_outer", c.max_outer},
	        {"max_inner", c.max_inner},         {"tolerance", c.tolerance},
	        {"feasibility", c.feasibility},     {"penalty", c.penalty},
	        {"penalty_growth", c.penalty_growth}, {"flow_tolerance", c.flow_tolerance},
	        {"discount", c.discount},           {"ev_mandatory", c.ev_mandatory},
	        {"swap_table_step", c.swap_table_step}, {"start_blend", c.start_blend},
	        {"price_low", c.price_low},         {"price_high", c.price_high},
	        {"idle_high", c.idle_high},         {"rebalance_high", c.rebalance_high}};
}

/// Position of every decision in the flat variable vector. Stage blocks are
/// contiguous: cumulative charging and swap stations, price, idle EVs, idle
/// gasoline vehicles, charging share, rebalancing flows, and optionally
/// charging demand.
struct Layout {
	int M = 0;
	int T = 0;
	bool with_k = false;

	int stage_size() const { return 6 * M + M * M + (with_k ? M : 0); }
	int size() const { return T * stage_size(); }
	int xc(int t, int i) const { return t * stage_size() + i; }
	int xs(int t, int i) const { return t * stage_size() + M + i; }
	int price(int t, int i) const { return t * stage_size() + 2 * M + i; }
	int idle_ev(int t, int i) const { return t * stage_size() + 3 * M + i; }
	int idle_gas(int t, int i) const { return t * stage_size() + 4 * M + i; }
	int share(int t, int i) const { return t * stage_size() + 5 * M + i; }
	int flow(int t, int i, int j) const { return t * stage_size() + 6 * M + i * M + j; }
	int k(int t, int i) const { return t * stage_size() + 6 * M + M * M + i; }

	std::vector<int> block(int t) const {
		std::vector<int> out(static_cast<std::size_t>(stage_size()));
		std::iota(out.begin(), out.end(), t * stage_size());
		return out;
	}
};

struct StageDecision {
	Vector charge;
	Vector swap;
	OperationalDecision ops;
	Vector k; // only with Layout::with_k
};

inline StageDecision decode(const Layout& L, const Vector& x, int t) {
	StageDecision d;
	const int M = L.M;
	d.charge.resize(M);
	d.swap.resize(M);
	d.ops.price.resize(M);
	d.ops.idle_ev.resize(M);
	d.ops.idle_gas.resize(M);
	d.ops.charge_share.resize(M);
	d.ops.rebalance.resize(M, M);
	for (int i = 0; i < M; ++i) {
		d.charge(i) = x(L.xc(t, i));
		d.swap(i) = x(L.xs(t, i));
		d.ops.price(i) = x(L.price(t, i));
		d.ops.idle_ev(i) = x(L.idle_ev(t, i));
		d.ops.idle_gas(i) = x(L.idle_gas(t, i));
		d.ops.charge_share(i) = x(L.share(t, i));
		for (int j = 0; j < M; ++j) d.ops.rebalance(i, j) = x(L.flow(t, i, j));
	}
	if (L.with_k) {
		d.k.resize(M);
		for (int i = 0; i < M; ++i) d.k(i) = x(L.k(t, i));
	}
	return d;
}

inline void encode(const Layout& L, const StageDecision& d, int t, Vector& x) {
	for (int i = 0; i < L.M; ++i) {
		x(L.xc(t, i)) = d.charge(i);
		x(L.xs(t, i)) = d.swap(i);
		x(L.price(t, i)) = d.ops.price(i);
		x(L.idle_ev(t, i)) = d.ops.idle_ev(i);
		x(L.idle_gas(t, i)) = d.ops.idle_gas(i);
		x(L.share(t, i)) = d.ops.charge_share(i);
		for (int j = 0; j < L.M; ++j) x(L.flow(t, i, j)) = d.ops.rebalance(i, j);
		if (L.with_k) x(L.k(t, i)) = d.k(i);
	}
}

/// Potential busy vehicles per zone if every potential trip were served.
inline Vector potential_busy(const Scenario& s) {
	return s.base_demand.cwiseProduct(s.trip_time).rowwise().sum();
}

/// Variable boxes for the original (with_k = false) or relaxed layout.
inline std::pair<Vector, Vector> boxes(const Scenario& s, const SolverConfig& c, const Layout& L,
                                       bool gas_only = false) {
	Vector lo = Vector::Zero(L.size()), hi = Vector::Zero(L.size());
	const Vector busy = potential_busy(s);
	for (int t = 0; t < L.T; ++t)
		for (int i = 0; i < L.M; ++i) {
			hi(L.xc(t, i)) = gas_only ? 0.0 : s.cap_c(i);
			hi(L.xs(t, i)) = (gas_only || c.mode == Mode::charging_only) ? 0.0 : s.cap_s(i);
			lo(L.price(t, i)) = c.price_low * s.outside_price;
			hi(L.price(t, i)) = c.price_high * s.outside_price;
			const double idle = std::max(10.0, c.idle_high * busy(i));
			lo(L.idle_ev(t, i)) = gas_only ? 0.0 : kPositiveFloor;
			hi(L.idle_ev(t, i)) = gas_only ? 0.0 : idle;
			hi(L.idle_gas(t, i)) = idle;
			lo(L.share(t, i)) = (gas_only || c.mode == Mode::charging_only) ? 1.0 : 0.0;
			hi(L.share(t, i)) = 1.0;
			for (int j = 0; j < L.M; ++j)
				hi(L.flow(t, i, j)) = std::max(1.0, c.rebalance_high * std::max(s.base_demand(i, j), s.base_demand(j, i)));
			if (L.with_k) {
				lo(L.k(t, i)) = kPositiveFloor;
				hi(L.k(t, i)) = std::max(10.0, 2.0 * busy(i));
			}
		}
	return {lo, hi};
}

/// Pairwise rebalancing that exactly offsets each pair's net passenger flow.
inline Matrix pairwise_rebalance(const Matrix& demand) {
	const Eigen::Index m = demand.rows();
	Matrix f = Matrix::Zero(m, m);
	for (Eigen::Index i = 0; i < m; ++i)
		for (Eigen::Index j = 0; j < m; ++j)
			if (i != j) f(i, j) = std::max(0.0, demand(j, i) - demand(i, j));
	return f;
}

/// Adds the least travel-time rebalancing, greedily, that zeroes every zone's
/// flow residual. Zones receiving more than they send get extra outflows.
inline void repair_flow_balance(const Matrix& demand, Matrix& f, const Matrix& trip_time) {
	const Eigen::Index m = demand.rows();
	Vector r = market::flow_residual(demand, f);
	struct Pair {
		double time;
		Eigen::Index i, j;
	};
	std::vector<Pair> pairs;
	for (Eigen::Index i = 0; i < m; ++i)
		for (Eigen::Index j = 0; j < m; ++j)
			if (i != j) pairs.push_back({trip_time(i, j), i, j});
	std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.time < b.time; });
	for (const Pair& pr : pairs) {
		if (r(pr.i) < 0.0 && r(pr.j) > 0.0) {
			const double amount = std::min(-r(pr.i), r(pr.j));
			f(pr.i, pr.j) += amount;
			r(pr.i) += amount;
			r(pr.j) -= amount;
		}
	}
}

/// Cumulative plan made nondecreasing, capped, and within each stage's budget
/// (stage increments scaled down where a stage overspends).
inline void repair_plan(const Scenario& s, const Layout& L, Vector& x, bool cumulative_budget) {
	const int M = L.M;
	Vector prev_c = Vector::Zero(M), prev_s = Vector::Zero(M);
	for (int t = 0; t < L.T; ++t) {
		Vector inc_c(M), inc_s(M);
		for (int i = 0; i < M; ++i) {
			inc_c(i) = std::max(0.0, std::min(x(L.xc(t, i)), s.cap_c(i)) - prev_c(i));
			inc_s(i) = std::max(0.0, std::min(x(L.xs(t, i)), s.cap_s(i)) - prev_s(i));
		}
		const double spent = s.cost_c * inc_c.sum() + s.cost_s * inc_s.sum();
		const double already = s.cost_c * prev_c.sum() + s.cost_s * prev_s.sum();
		const double allowed = cumulative_budget ? std::max(0.0, s.cumulative_budget(t) - already) : s.budgets[static_cast<std::size_t>(t)];
		if (spent > allowed) {
			const double scale = spent > 0.0 ? allowed / spent * (1.0 - 1e-12) : 0.0;
			inc_c *= scale;
			inc_s *= scale;
		}
		for (int i = 0; i < M; ++i) {
			x(L.xc(t, i)) = prev_c(i) + inc_c(i);
			x(L.xs(t, i)) = prev_s(i) + inc_s(i);
		}
		prev_c = (prev_c + inc_c).eval();
		prev_s = (prev_s + inc_s).eval();
	}
}

/// Linear inequalities: per-stage budget (on increments, or cumulative for the
/// relaxed program) and nondecreasing cumulative plans.
inline void linear_constraints(const Scenario& s, const Layout& L, bool cumulative_budget, Matrix& A, Vector& b,
                               Vector& scale) {
	const int M = L.M, T = L.T;
	const int rows = T + 2 * M * (T - 1);
	A = Matrix::Zero(rows, L.size());
	b = Vector::Zero(rows);
	scale = Vector::Ones(rows);
	int r = 0;
	for (int t = 0; t < T; ++t, ++r) {
		for (int i = 0; i < M; ++i) {
			A(r, L.xc(t, i)) = s.cost_c;
			A(r, L.xs(t, i)) = s.cost_s;
			if (!cumulative_budget && t > 0) {
				A(r, L.xc(t - 1, i)) = -s.cost_c;
				A(r, L.xs(t - 1, i)) = -s.cost_s;
			}
		}
		b(r) = cumulative_budget ? s.cumulative_budget(t) : s.budgets[static_cast<std::size_t>(t)];
		scale(r) = std::max(1.0, s.cumulative_budget(L.T - 1) / T);
	}
	for (int t = 1; t < T; ++t)
		for (int i = 0; i < M; ++i) {
			A(r, L.xc(t - 1, i)) = 1.0;
			A(r, L.xc(t, i)) = -1.0;
			scale(r) = std::max(1.0, s.cap_c(i));
			++r;
			A(r, L.xs(t - 1, i)) = 1.0;
			A(r, L.xs(t, i)) = -1.0;
			scale(r) = std::max(1.0, s.cap_s(i));
			++r;
		}
}

struct Solution {
	Mode mode = Mode::joint;
	PlanningDecision plan;
	CumulativePlan cumulative;
	std::vector<OperationalDecision> ops;
	std::vector<MarketState> states;
	double lower_bound = -std::numeric_limits<double>::infinity();
	std::vector<double> stage_profit;
	std::vector<double> start_values;  // audited value of every start, -inf if it failed
	int best_start = -1;
	bool gas_only = false;
};

struct AuditReport {
	bool ok = true;
	std::vector<std::string> failures;
	double max_flow_residual = 0.0;    // relative to total flow
	double max_energy_residual = 0.0;
	double max_blocking = 0.0;
	double profit = 0.0;

	void fail(std::string what) {
		ok = false;
		failures.push_back(std::move(what));
	}
};

/// Independent feasibility check of a solution: every constraint of the
/// original program is re-derived from the raw decisions, and the stage states
/// are recomputed from scratch with direct queue evaluation.
inline AuditReport audit(const Scenario& s, const Solution& sol, const SolverConfig& c) {
	AuditReport rep;
	const int T = s.stages, M = s.zones;
	const double tiny = 1e-9;
	if (sol.plan.new_charge.rows() != T || sol.plan.new_charge.cols() != M || static_cast<int>(sol.ops.size()) != T) {
		rep.fail("solution dimensions do not match the scenario");
		return rep;
	}
	const CumulativePlan cum = accumulate(sol.plan);
	for (int t = 0; t < T; ++t) {
		double spend = 0.0;
		for (int i = 0; i < M; ++i) {
			const double xc = sol.plan.new_charge(t, i), xs = sol.plan.new_swap(t, i);
			if (xc < 0.0 || xs < 0.0) rep.fail("negative deployment at stage " + std::to_string(t));
			if (c.mode == Mode::charging_only && xs != 0.0) rep.fail("swap station built in charging-only mode");
			spend += s.cost_c * xc + s.cost_s * xs;
			if (cum.charge(t, i) > s.cap_c(i) * (1.0 + tiny) || cum.swap(t, i) > s.cap_s(i) * (1.0 + tiny))
				rep.fail("cap exceeded in zone " + std::to_string(i) + " at stage " + std::to_string(t));
		}
		if (spend > s.budgets[static_cast<std::size_t>(t)] * (1.0 + tiny) + tiny)
			rep.fail("budget exceeded at stage " + std::to_string(t));
	}
	double total = 0.0;
	for (int t = 0; t < T; ++t) {
		const OperationalDecision& o = sol.ops[static_cast<std::size_t>(t)];
		for (int i = 0; i < M; ++i) {
			if (!sol.gas_only && !(o.idle_ev(i) >= kPositiveFloor)) rep.fail("idle EVs below the positivity floor");
			if (o.idle_gas(i) < 0.0 || o.price(i) < 0.0) rep.fail("negative idle fleet or price");
			if (o.charge_share(i) < 0.0 || o.charge_share(i) > 1.0) rep.fail("charge share outside [0, 1]");
			if (c.mode == Mode::charging_only && !sol.gas_only && o.charge_share(i) != 1.0)
				rep.fail("charging-only mode with swap share");
		}
		if ((o.rebalance.array() < 0.0).any()) rep.fail("negative rebalancing flow");
		try {
			MarketState st = sol.gas_only ? economics::evaluate_gas_only(s, o)
			                              : economics::evaluate_state(s, cum.charge_at(t), cum.swap_at(t), o);
			const Vector res = market::flow_residual(st.demand, o.rebalance);
			const double scale = std::max(1.0, st.demand.sum() + o.rebalance.sum());
			rep.max_flow_residual = std::max(rep.max_flow_residual, res.cwiseAbs().maxCoeff() / scale);
			if (!sol.gas_only) {
				rep.max_energy_residual =
				    std::max(rep.max_energy_residual, economics::energy_balance_residual(st, o, s));
				if (!(st.feasibility_margin >= kPositiveFloor)) rep.fail("feasibility margin not positive");
				rep.max_blocking = std::max(rep.max_blocking, st.block_s.maxCoeff());
				for (int i = 0; i < M; ++i)
					if (o.charge_share(i) > 0.0) {
						const double rho = o.charge_share(i) * st.charge_demand(i) * s.charge_spec.charge_hours /
						                   (cum.charge(t, i) * s.charge_spec.chargers);
						if (!(rho < 1.0)) rep.fail("charging queue unstable in zone " + std::to_string(i));
					}
			}
			total += c.stage_weight(t) * st.profit;
		} catch (const Error& e) {
			rep.fail(std::string("stage ") + std::to_string(t) + ": " + e.what());
		}
	}
	if (rep.max_flow_residual > c.flow_tolerance) rep.fail("flow balance residual above tolerance");
	if (rep.max_energy_residual > 1e-8) rep.fail("energy balance residual above tolerance");
	rep.profit = total;
	if (std::isfinite(sol.lower_bound) && std::abs(total - sol.lower_bound) > 1e-9 * std::max(1.0, std::abs(total)))
		rep.fail("reported lower bound differs from the re-evaluated profit");
	return rep;
}

namespace detail {

struct Context {
	const Scenario& s;
	const SolverConfig& c;
	Layout L;
	economics::SwapSource source;
	bool gas_only = false;
	Vector lo, hi;
	bool relaxed = false; // flow balance dropped, cumulative budgets
};

inline std::optional<MarketState> stage_state(const Context& ctx, const StageDecision& d) {
	try {
		if (ctx.gas_only) return economics::evaluate_gas_only(ctx.s, d.ops);
		return economics::evaluate_state(ctx.s, d.charge, d.swap, d.ops, ctx.source);
	} catch (const Error&) {
		return std::nullopt;
	}
}

inline bool stages_feasible(const Context& ctx, const Vector& x) {
	for (int t = 0; t < ctx.L.T; ++t)
		if (!stage_state(ctx, decode(ctx.L, x, t))) return false;
	return true;
}

// Heuristic start: outside-option prices, idle fleets proportional to
// potential trips, each stage budget split between facility types, and the
// EV share sized to the installed capacity.
inline Vector heuristic_start(const Context& ctx) {
	const Scenario& s = ctx.s;
	const Layout& L = ctx.L;
	const int M = L.M;
	Vector x = ctx.lo;
	const Vector busy_potential = potential_busy(s);
	Vector weight = busy_potential / busy_potential.sum();
	const bool joint = ctx.c.mode == Mode::joint && !ctx.gas_only;
	Vector prev_c = Vector::Zero(M), prev_s = Vector::Zero(M);
	for (int t = 0; t < L.T; ++t) {
		const double b = ctx.gas_only ? 0.0 : s.budgets[static_cast<std::size_t>(t)];
		const double to_charge = joint ? 0.8 * b : b;
		for (int i = 0; i < M; ++i) {
			prev_c(i) = std::min(s.cap_c(i), prev_c(i) + weight(i) * to_charge / s.cost_c);
			if (joint) prev_s(i) = std::min(s.cap_s(i), prev_s(i) + weight(i) * (b - to_charge) / s.cost_s);
			x(L.xc(t, i)) = prev_c(i);
			x(L.xs(t, i)) = prev_s(i);
			x(L.price(t, i)) = std::clamp(s.outside_price, ctx.lo(L.price(t, i)), ctx.hi(L.price(t, i)));
			const double cc = prev_c(i) * s.charge_spec.chargers / s.charge_spec.charge_hours;
			const double cs = prev_s(i) * 0.8 * s.swap_spec.bays / s.swap_spec.swap_hours;
			x(L.share(t, i)) = ctx.gas_only || ctx.c.mode == Mode::charging_only ? 1.0
			                   : cc + cs > 0.0                                   ? cc / (cc + cs)
			                                                                     : 1.0;
		}
	}
	// Idle fleets, EV share and rebalancing per stage.
	for (int t = 0; t < L.T; ++t) {
		StageDecision d = decode(L, x, t);
		Vector idle(M);
		for (int i = 0; i < M; ++i) idle(i) = std::max(5.0, 0.15 * busy_potential(i));
		double capacity = 0.0;
		for (int i = 0; i < M; ++i) {
			const double r = d.ops.charge_share(i);
			if (r > 0.0) capacity += d.charge(i) * s.charge_spec.chargers / s.charge_spec.charge_hours;
			if (r < 1.0) capacity += d.swap(i) * 0.8 * s.swap_spec.bays / s.swap_spec.swap_hours;
		}
		const double fleet = idle.sum() + 0.5 * busy_potential.sum();
		double share = ctx.gas_only ? 0.0 : std::clamp(0.5 * capacity * s.battery_range_hours / fleet, 1e-4, 0.95);
		for (int attempt = 0; attempt < 40; ++attempt) {
			for (int i = 0; i < M; ++i) {
				d.ops.idle_ev(i) = ctx.gas_only ? 0.0 : std::max(kPositiveFloor, share * idle(i));
				d.ops.idle_gas(i) = (1.0 - share) * idle(i);
			}
			d.ops.rebalance.setZero();
			Vector pickup(M);
			for (int i = 0; i < M; ++i) pickup(i) = market::pickup_time(d.ops.idle_ev(i), d.ops.idle_gas(i), s.phi);
			d.ops.rebalance = pairwise_rebalance(market::demand_matrix(s, d.ops.price, pickup));
			if (stage_state(ctx, d)) break;
			share *= 0.7;
		}
		encode(L, d, t, x);
	}
	return x;
}

// Latin-hypercube sample of the unit cube: one stratum per start per coordinate.
inline std::vector<Vector> latin_hypercube(int dims, int count, std::mt19937_64& rng) {
	std::vector<Vector> out(static_cast<std::size_t>(count), Vector(dims));
	std::uniform_real_distribution<double> unit(0.0, 1.0);
	std::vector<int> perm(static_cast<std::size_t>(count));
	for (int d = 0; d < dims; ++d) {
		std::iota(perm.begin(), perm.end(), 0);
		std::shuffle(perm.begin(), perm.end(), rng);
		for (int k = 0; k < count; ++k)
			out[static_cast<std::size_t>(k)](d) = (perm[static_cast<std::size_t>(k)] + unit(rng)) / count;
	}
	return out;
}

// Moves a sampled point into the feasible region: plan repaired, modes made
// consistent with installed facilities, flows rebalanced, and the sample pulled
// back toward the heuristic start until every stage evaluates.
inline std::optional<Vector> prepare_start(const Context& ctx, const Vector& sample, const Vector& anchor) {
	const Layout& L = ctx.L;
	for (int attempt = 0; attempt < 12; ++attempt) {
		const double w = std::ldexp(1.0, -attempt);
		Vector x = anchor + w * (sample - anchor);
		repair_plan(ctx.s, L, x, L.with_k);
		for (int t = 0; t < L.T; ++t) {
			StageDecision d = decode(L, x, t);
			for (int i = 0; i < L.M; ++i) {
				if (d.swap(i) <= 0.0) d.ops.charge_share(i) = 1.0;
				if (d.charge(i) <= 0.0 && d.swap(i) > 0.0) d.ops.charge_share(i) = 0.0;
			}
			Vector pickup(L.M);
			for (int i = 0; i < L.M; ++i)
				pickup(i) = market::pickup_time(d.ops.idle_ev(i), d.ops.idle_gas(i), ctx.s.phi);
			const Matrix demand = market::demand_matrix(ctx.s, d.ops.price, pickup);
			// Keep the sampled symmetric part of the flows; add what balance requires.
			Matrix f = 0.5 * (d.ops.rebalance + d.ops.rebalance.transpose()) * w;
			f.diagonal() = d.ops.rebalance.diagonal() * w;
			f += pairwise_rebalance(demand);
			d.ops.rebalance = f.cwiseMin(Matrix(ctx.hi.segment(L.flow(t, 0, 0), L.M * L.M).reshaped(L.M, L.M).transpose()));
			repair_flow_balance(demand, d.ops.rebalance, ctx.s.trip_time);
			encode(L, d, t, x);
		}
		x = x.cwiseMax(ctx.lo).cwiseMin(ctx.hi);
		if (stages_feasible(ctx, x)) return x;
	}
	return std::nullopt;
}

// Turns a solver iterate into an exactly feasible solution evaluated with the
// direct swap-station chain.
inline std::optional<Solution> finalize(const Context& ctx, Vector x) {
	const Layout& L = ctx.L;
	const Scenario& s = ctx.s;
	repair_plan(s, L, x, false);
	Solution sol;
	sol.mode = ctx.c.mode;
	sol.gas_only = ctx.gas_only;
	CumulativePlan cum{Matrix(L.T, L.M), Matrix(L.T, L.M)};
	double total = 0.0;
	for (int t = 0; t < L.T; ++t) {
		StageDecision d = decode(L, x, t);
		for (int i = 0; i < L.M; ++i) {
			if (d.swap(i) <= 0.0) d.ops.charge_share(i) = 1.0;
			if (ctx.c.mode == Mode::charging_only) d.ops.charge_share(i) = 1.0;
		}
		Vector pickup(L.M);
		for (int i = 0; i < L.M; ++i) pickup(i) = market::pickup_time(d.ops.idle_ev(i), d.ops.idle_gas(i), s.phi);
		repair_flow_balance(market::demand_matrix(s, d.ops.price, pickup), d.ops.rebalance, s.trip_time);
		cum.charge.row(t) = d.charge.transpose();
		cum.swap.row(t) = d.swap.transpose();
		try {
			MarketState st = ctx.gas_only ? economics::evaluate_gas_only(s, d.ops)
			                              : economics::evaluate_state(s, d.charge, d.swap, d.ops);
			total += ctx.c.stage_weight(t) * st.profit;
			sol.stage_profit.push_back(st.profit);
			sol.states.push_back(std::move(st));
		} catch (const Error&) {
			return std::nullopt;
		}
		sol.ops.push_back(d.ops);
	}
	sol.cumulative = cum;
	sol.plan = increments(cum);
	sol.plan.new_charge = sol.plan.new_charge.cwiseMax(0.0);
	sol.plan.new_swap = sol.plan.new_swap.cwiseMax(0.0);
	sol.lower_bound = total;
	return sol;
}

inline bool lexicographically_smaller(const CumulativePlan& a, const CumulativePlan& b) {
	for (Eigen::Index t = 0; t < a.charge.rows(); ++t)
		for (Eigen::Index i = 0; i < a.charge.cols(); ++i) {
			if (a.charge(t, i) != b.charge(t, i)) return a.charge(t, i) < b.charge(t, i);
			if (a.swap(t, i) != b.swap(t, i)) return a.swap(t, i) < b.swap(t, i);
		}
	return false;
}

inline nlp::Problem make_problem(const Context& ctx) {
	const Layout& L = ctx.L;
	nlp::Problem p;
	p.lo = ctx.lo;
	p.hi = ctx.hi;
	for (int t = 0; t < L.T; ++t) p.blocks.push_back(L.block(t));
	p.evaluate = [&ctx](int t, const Vector& x) -> std::optional<nlp::BlockValue> {
		const StageDecision d = decode(ctx.L, x, t);
		auto st = stage_state(ctx, d);
		if (!st) return std::nullopt;
		if (ctx.relaxed) return nlp::BlockValue{ctx.c.stage_weight(t) * st->profit, Vector()};
		return nlp::BlockValue{ctx.c.stage_weight(t) * st->profit, market::flow_residual(st->demand, d.ops.rebalance)};
	};
	const double flow_scale = std::max(1.0, ctx.s.base_demand.sum() / L.M);
	p.equality_scale = ctx.relaxed ? Vector() : Vector::Constant(L.T * L.M, flow_scale);
	linear_constraints(ctx.s, L, ctx.relaxed, p.A, p.b, p.inequality_scale);
	return p;
}

} // namespace detail

/// Solution of one start: the raw iterate was repaired and audited.
struct StartOutcome {
	std::optional<Solution> solution;
	double value = -std::numeric_limits<double>::infinity();
};

/// Runs `task(k)` for k in [0, count) on up to `workers` threads.
inline void parallel_for(int count, int workers, const std::function<void(int)>& task) {
	workers = std::max(1, std::min(workers, count));
	if (workers == 1) {
		for (int k = 0; k < count; ++k) task(k);
		return;
	}
	std::atomic<int> next{0};
	std::vector<std::thread> pool;
	std::exception_ptr error;
	std::mutex error_mutex;
	for (int w = 0; w < workers; ++w)
		pool.emplace_back([&]() {
			for (int k = next++; k < count; k = next++) {
				try {
					task(k);
				} catch (...) {
					std::lock_guard<std::mutex> lock(error_mutex);
					if (!error) error = std::current_exception();
				}
			}
		});
	for (auto& th : pool) th.join();
	if (error) std::rethrow_exception(error);
}

/// Finds a feasible local solution of the original program; its profit is the
/// lower bound. `warm_starts` (e.g. the solution at a smaller budget) are
/// evaluated as candidates and also used as extra starting points. Throws
/// InfeasibleError when no start yields a feasible point.
inline Solution solve_original(const Scenario& s, const SolverConfig& c,
                               const queues::SwapWaitTable* table = nullptr,
                               const std::vector<Solution>& warm_starts = {}) {
	std::unique_ptr<queues::SwapWaitTable> own;
	if (!table && c.mode == Mode::joint) {
		own = std::make_unique<queues::SwapWaitTable>(s.swap_spec, c.swap_table_step);
		table = own.get();
	}
	bool gas_only = false;
	if (s.cumulative_budget(s.stages - 1) <= 0.0) {
		if (c.ev_mandatory)
			throw InfeasibleError("no budget for any charging facility, but EV deployment is mandatory in every zone");
		gas_only = true;
	} else if (s.budgets.front() <= 0.0) {
		throw InfeasibleError("first-stage budget is zero, but EV deployment is mandatory in every zone");
	}
	detail::Context ctx{s, c, Layout{s.zones, s.stages, false}, economics::SwapSource{table}, gas_only, {}, {}};
	std::tie(ctx.lo, ctx.hi) = boxes(s, c, ctx.L, gas_only);
	const nlp::Problem problem = detail::make_problem(ctx);

	const Vector anchor = detail::heuristic_start(ctx);
	std::mt19937_64 rng(c.seed);
	const int n = ctx.L.size();
	const auto samples = detail::latin_hypercube(n, std::max(1, c.multistarts - 1), rng);
	std::vector<Vector> starts;
	std::vector<std::optional<Vector>> prepared;
	starts.push_back(anchor);
	for (int k = 0; k + 1 < c.multistarts; ++k)
		starts.push_back(ctx.lo + (ctx.hi - ctx.lo).cwiseProduct(samples[static_cast<std::size_t>(k)]));
	std::vector<Vector> warm;
	for (const Solution& w : warm_starts) {
		if (w.ops.size() != static_cast<std::size_t>(s.stages)) continue;
		Vector x(n);
		for (int t = 0; t < s.stages; ++t)
			encode(ctx.L, StageDecision{w.cumulative.charge_at(t), w.cumulative.swap_at(t), w.ops[static_cast<std::size_t>(t)], {}}, t, x);
		warm.push_back(x.cwiseMax(ctx.lo).cwiseMin(ctx.hi));
	}
	const int total = static_cast<int>(starts.size() + warm.size());
	std::vector<StartOutcome> outcomes(static_cast<std::size_t>(total + warm.size()));

	nlp::Options opt;
	opt.max_outer = c.max_outer;
	opt.max_inner = c.max_inner;
	opt.tolerance = c.tolerance;
	opt.feasibility = c.feasibility;
	opt.penalty = c.penalty;
	opt.penalty_growth = c.penalty_growth;

	parallel_for(total + static_cast<int>(warm.size()), c.workers, [&](int k) {
		const std::size_t ks = static_cast<std::size_t>(k);
		StartOutcome& out = outcomes[ks];
		std::optional<Vector> x0;
		bool solve = true;
		if (k == 0) {
			x0 = detail::prepare_start(ctx, starts[0], starts[0]);
		} else if (k < static_cast<int>(starts.size())) {
			const Vector blended = anchor + c.start_blend * (starts[ks] - anchor);
			x0 = detail::prepare_start(ctx, blended, anchor);
		} else {
			const std::size_t w = (ks - starts.size()) % warm.size();
			x0 = detail::prepare_start(ctx, warm[w], warm[w]);
			solve = k < total; // the second copy is kept as-is
		}
		if (!x0) return;
		nlp::Problem local = problem;
		local.objective_scale = 1.0;
		double start_value = 0.0;
		for (int t = 0; t < ctx.L.T; ++t) start_value += local.evaluate(t, *x0)->objective;
		local.objective_scale = std::max(1.0, std::abs(start_value));
		const Vector x = solve ? nlp::solve(local, *x0, opt).x : *x0;
		auto sol = detail::finalize(ctx, x);
		if (!sol) return;
		const AuditReport rep = audit(s, *sol, c);
		if (!rep.ok) return;
		out.value = sol->lower_bound;
		out.solution = std::move(sol);
	});

	Solution best;
	for (std::size_t k = 0; k < outcomes.size(); ++k) {
		best.start_values.push_back(outcomes[k].value);
		if (!outcomes[k].solution) continue;
		const Solution& cand = *outcomes[k].solution;
		const bool better = cand.lower_bound > best.lower_bound ||
		                    (cand.lower_bound == best.lower_bound &&
		                     detail::lexicographically_smaller(cand.cumulative, best.cumulative));
		if (best.best_start < 0 || better) {
			std::vector<double> values = best.start_values;
			best = cand;
			best.start_values = values;
			best.best_start = static_cast<int>(k);
		}
	}
	if (best.best_start < 0) throw InfeasibleError("no feasible point found after all multistarts");
	while (best.start_values.size() < outcomes.size()) best.start_values.push_back(outcomes[best.start_values.size()].value);
	return best;
}

} // namespace chargenet::optimizer

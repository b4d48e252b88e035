#pragma once

// Upper bound: relaxed reformulation (flow balance dropped, charging demand a
// decision), multipliers recovered from its stationarity conditions, and a
// partial Lagrangian that splits into one subproblem per (zone, stage). Each
// subproblem is solved by grid search over the six coupling decisions with
// the station counts and rebalancing flows optimized exactly for each point.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "chargenet/economics.hpp"
#include "chargenet/error.hpp"
#include "chargenet/market.hpp"
#include "chargenet/model.hpp"
#include "chargenet/nlp.hpp"
#include "chargenet/optimizer.hpp"
#include "chargenet/queues.hpp"

namespace chargenet::bound {

using optimizer::Layout;
using optimizer::SolverConfig;
using optimizer::StageDecision;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Multipliers of the partial Lagrangian. Rows are stages. theta has M columns:
/// the first M-1 belong to the chain equations of zones 1..M-1, the last to
/// the energy balance.
struct Multipliers {
	Vector mu;     // T, budget
	Matrix eta_c;  // T x M, monotone charging expansion (stage 1 against zero)
	Matrix eta_s;  // T x M, monotone swap expansion
	Matrix theta;  // T x M

	bool ill_conditioned = false;
	double condition = 0.0;
	double kkt_residual = 0.0;      // relative stationarity residual before projection
	double complementarity = 0.0;   // max_t |mu_t * slack_t| / b_t at the relaxed solution

	static Multipliers zeros(int stages, int zones) {
		Multipliers m;
		m.mu = Vector::Zero(stages);
		m.eta_c = Matrix::Zero(stages, zones);
		m.eta_s = Matrix::Zero(stages, zones);
		m.theta = Matrix::Zero(stages, zones);
		return m;
	}

	bool sign_feasible() const {
		return (mu.array() >= 0.0).all() && (eta_c.array() >= 0.0).all() && (eta_s.array() >= 0.0).all() &&
		       (theta.col(theta.cols() - 1).array() >= 0.0).all();
	}

	void project() {
		mu = mu.cwiseMax(0.0);
		eta_c = eta_c.cwiseMax(0.0);
		eta_s = eta_s.cwiseMax(0.0);
		theta.col(theta.cols() - 1) = theta.col(theta.cols() - 1).cwiseMax(0.0);
	}
};

inline json to_json(const Multipliers& m) {
	return {{"mu", chargenet::detail::to_list(m.mu)},
	        {"eta_charge", chargenet::detail::to_rows(m.eta_c)},
	        {"eta_swap", chargenet::detail::to_rows(m.eta_s)},
	        {"theta", chargenet::detail::to_rows(m.theta)},
	        {"ill_conditioned", m.ill_conditioned},
	        {"condition", m.condition},
	        {"kkt_residual", m.kkt_residual},
	        {"complementarity", m.complementarity}};
}

/// Every decision of one zone at one stage, with charging demand as a decision.
struct ZoneDecision {
	double charge = 0.0;
	double swap = 0.0;
	double price = 0.0;
	double idle_ev = 0.0;
	double idle_gas = 0.0;
	double share = 1.0;
	double k = 0.0;
	Vector rebalance; // row i of f
};

inline ZoneDecision zone_of(const StageDecision& d, const Vector& k, int i) {
	return {d.charge(i), d.swap(i), d.ops.price(i), d.ops.idle_ev(i), d.ops.idle_gas(i), d.ops.charge_share(i), k(i),
	        d.ops.rebalance.row(i).transpose()};
}

/// Zone-i contributions, computed from zone-i decisions alone.
struct ZoneTerms {
	double revenue = 0.0;
	double ev_busy = 0.0;
	double gas_busy = 0.0;
	double downtime = 0.0;
	double profit = 0.0;  // revenue - gamma_g N^g_i - gamma_e N^e_i
	Vector h;             // M entries: chain rows m < M-1, energy row last
};

/// Throws the model's errors (no facility for a used mode, unstable queue).
inline ZoneTerms zone_terms(const Scenario& s, int i, const ZoneDecision& z,
                            const economics::SwapSource& source = {}) {
	const int M = s.zones;
	if (!(z.idle_ev > 0.0)) throw DomainError("zone decision: idle EVs must be positive");
	const double pickup = market::pickup_time(z.idle_ev, z.idle_gas, s.phi);
	const double R = z.idle_ev / (z.idle_ev + z.idle_gas);
	const market::LogitDemand curve(s);
	Vector lambda(M), D(M);
	double busy = 0.0, revenue = 0.0;
	for (int j = 0; j < M; ++j) {
		lambda(j) = curve(s.base_demand(i, j), z.price, s.trip_time(i, j), pickup);
		busy += lambda(j) * pickup + (lambda(j) + z.rebalance(j)) * s.trip_time(i, j);
		revenue += z.price * lambda(j) * s.trip_time(i, j);
		D(j) = R * (lambda(j) + z.rebalance(j)) * s.trip_time(i, j);
	}
	D(i) += z.idle_ev + R * lambda.sum() * pickup;
	const double rowsum = D.sum();

	double access = 0.0, down = 0.0;
	if (z.share > 0.0) {
		if (!(z.charge > 0.0)) throw DomainError("zone decision routes charging to a zone without charging stations");
		const double l = queues::access_time(z.charge, s.psi);
		const double w = queues::erlang_c_wait(z.share * z.k / z.charge, s.charge_spec).wait;
		access += z.share * l;
		down += z.share * z.k * (l + w + s.charge_spec.charge_hours);
	}
	if (z.share < 1.0) {
		if (!(z.swap > 0.0)) throw DomainError("zone decision routes charging to a zone without swap stations");
		const double l = queues::access_time(z.swap, s.psi);
		const double w = source((1.0 - z.share) * z.k / z.swap, s.swap_spec).wait;
		access += (1.0 - z.share) * l;
		down += (1.0 - z.share) * z.k * (l + w + s.swap_spec.swap_hours);
	}
	ZoneTerms out;
	out.revenue = revenue;
	out.ev_busy = R * busy;
	out.gas_busy = (1.0 - R) * busy;
	out.downtime = down;
	out.profit = revenue - s.gamma_g * (z.idle_gas + out.gas_busy) - s.gamma_e * (z.idle_ev + out.ev_busy + down);
	out.h.resize(M);
	for (int m = 0; m + 1 < M; ++m) out.h(m) = z.k * (D(m) / rowsum - (m == i ? 1.0 : 0.0));
	out.h(M - 1) = z.k * (s.battery_range_hours - access) - z.idle_ev - out.ev_busy;
	return out;
}

/// Zone i's share of the equality functions h (M entries).
inline Vector h_residuals(const Scenario& s, int i, const ZoneDecision& z) { return zone_terms(s, i, z).h; }

/// L_{i,t}: zone i's stage-t profit plus its multiplier terms.
inline double zone_lagrangian(const Scenario& s, int i, int t, const ZoneDecision& z, const Multipliers& mult,
                              double weight = 1.0, const economics::SwapSource& source = {}) {
	const ZoneTerms terms = zone_terms(s, i, z, source);
	const bool last = t + 1 == s.stages;
	const double eta_c = mult.eta_c(t, i) - (last ? 0.0 : mult.eta_c(t + 1, i));
	const double eta_s = mult.eta_s(t, i) - (last ? 0.0 : mult.eta_s(t + 1, i));
	return weight * terms.profit - mult.mu(t) * (s.cost_c * z.charge + s.cost_s * z.swap) + eta_c * z.charge +
	       eta_s * z.swap + mult.theta.row(t).dot(terms.h.transpose());
}

/// Stage equality functions from a whole-stage evaluation with given charging demand.
inline Vector stage_h(const Scenario& s, const MarketState& st, const OperationalDecision& ops) {
	const int M = s.zones;
	Vector h(M);
	const Eigen::RowVectorXd flow = st.charge_demand.transpose() * st.transition;
	for (int m = 0; m + 1 < M; ++m) h(m) = flow(m) - st.charge_demand(m);
	double supplied = 0.0;
	for (int i = 0; i < M; ++i) {
		double range = s.battery_range_hours;
		if (ops.charge_share(i) > 0.0) range -= ops.charge_share(i) * st.access_c(i);
		if (ops.charge_share(i) < 1.0) range -= (1.0 - ops.charge_share(i)) * st.access_s(i);
		supplied += st.charge_demand(i) * range;
	}
	h(M - 1) = supplied - st.ev_operating;
	return h;
}

/// Full partial Lagrangian of the relaxed program at x (relaxed layout).
inline double partial_lagrangian(const Scenario& s, const SolverConfig& c, const Vector& x, const Multipliers& mult,
                                 const economics::SwapSource& source = {}) {
	const Layout L{s.zones, s.stages, true};
	double total = 0.0;
	for (int t = 0; t < s.stages; ++t) {
		const StageDecision d = optimizer::decode(L, x, t);
		const MarketState st = economics::evaluate_augmented(s, d.charge, d.swap, d.ops, d.k, source).state;
		total += c.stage_weight(t) * st.profit;
		total += mult.mu(t) * (s.cumulative_budget(t) - s.cost_c * d.charge.sum() - s.cost_s * d.swap.sum());
		for (int i = 0; i < s.zones; ++i) {
			const double pc = t > 0 ? x(L.xc(t - 1, i)) : 0.0;
			const double ps = t > 0 ? x(L.xs(t - 1, i)) : 0.0;
			total += mult.eta_c(t, i) * (d.charge(i) - pc) + mult.eta_s(t, i) * (d.swap(i) - ps);
		}
		total += mult.theta.row(t).dot(stage_h(s, st, d.ops).transpose());
	}
	return total;
}

inline double lagrangian_constant(const Scenario& s, const Multipliers& mult) {
	double out = 0.0;
	for (int t = 0; t < s.stages; ++t) out += mult.mu(t) * s.cumulative_budget(t);
	return out;
}

// ---------------------------------------------------------------------------
// Relaxed reformulation

struct RelaxedSolution {
	Vector x;                 // relaxed layout
	double value = kNegInf;   // weighted profit
	Multipliers multipliers;
	bool from_lower_bound = false; // the solver did not improve on the lower-bound point
};

/// Relaxed-layout vector holding a feasible solution of the original program.
inline Vector relaxed_point(const Scenario& s, const optimizer::Solution& sol) {
	const Layout L{s.zones, s.stages, true};
	Vector x(L.size());
	for (int t = 0; t < s.stages; ++t) {
		const std::size_t ts = static_cast<std::size_t>(t);
		optimizer::encode(L,
		                  StageDecision{sol.cumulative.charge_at(t), sol.cumulative.swap_at(t), sol.ops[ts],
		                                sol.states[ts].charge_demand},
		                  t, x);
	}
	return x;
}

namespace detail {

struct RelaxedContext {
	const Scenario& s;
	const SolverConfig& c;
	Layout L;
	economics::SwapSource source;
	Vector lo, hi;
};

inline nlp::Problem relaxed_problem(const RelaxedContext& ctx, const Vector& anchor) {
	nlp::Problem p;
	p.lo = ctx.lo;
	p.hi = ctx.hi;
	const Layout& L = ctx.L;
	for (int t = 0; t < L.T; ++t) p.blocks.push_back(L.block(t));
	p.evaluate = [&ctx](int t, const Vector& x) -> std::optional<nlp::BlockValue> {
		const StageDecision d = optimizer::decode(ctx.L, x, t);
		try {
			const MarketState st = economics::evaluate_augmented(ctx.s, d.charge, d.swap, d.ops, d.k, ctx.source).state;
			return nlp::BlockValue{ctx.c.stage_weight(t) * st.profit, stage_h(ctx.s, st, d.ops)};
		} catch (const Error&) {
			return std::nullopt;
		}
	};
	// Chain rows are in charging events per hour, the energy row in vehicles.
	p.equality_scale.resize(L.T * L.M);
	for (int t = 0; t < L.T; ++t) {
		double k_total = 0.0;
		for (int i = 0; i < L.M; ++i) k_total += anchor(L.k(t, i));
		const double operating = k_total * ctx.s.battery_range_hours;
		for (int m = 0; m + 1 < L.M; ++m) p.equality_scale(t * L.M + m) = std::max(1.0, k_total / L.M);
		p.equality_scale(t * L.M + L.M - 1) = std::max(1.0, operating / L.M);
	}
	optimizer::linear_constraints(ctx.s, L, true, p.A, p.b, p.inequality_scale);
	return p;
}

inline double objective(const nlp::Problem& p, const Vector& x) {
	double total = 0.0;
	for (std::size_t b = 0; b < p.blocks.size(); ++b) {
		auto v = p.evaluate(static_cast<int>(b), x);
		if (!v) return kNegInf;
		total += v->objective;
	}
	return total;
}

} // namespace detail

/// Least-squares fit of the relaxed program's stationarity conditions at x:
/// grad f - mu grad(A x) + eta grad(x_t - x_{t-1}) + theta grad h = 0 over the
/// coordinates strictly inside their boxes, with mu and eta restricted to
/// active constraints. Station counts at zero are left to the subproblem box,
/// so eta vanishes where nothing is built.
inline Multipliers recover_multipliers(const Scenario& s, const nlp::Problem& p, const Layout& L, const Vector& x) {
	const int M = L.M, T = L.T;
	Multipliers out = Multipliers::zeros(T, M);
	const nlp::Derivatives d = nlp::differentiate(p, x);
	const double tiny = 1e-7;
	auto near = [&](double a, double b, double range) { return std::abs(a - b) <= tiny * std::max(1.0, range); };

	std::vector<int> rows;
	for (int v = 0; v < L.size(); ++v) {
		const double range = p.hi(v) - p.lo(v);
		if (!(range > 0.0)) continue;
		if (near(x(v), p.hi(v), range) || near(x(v), p.lo(v), range)) continue;
		rows.push_back(v);
	}
	struct Column {
		char kind; // 'm' mu, 'c' eta charge, 's' eta swap, 'h' theta
		int t, i;
	};
	std::vector<Column> cols;
	for (int t = 0; t < T; ++t) {
		double spend = 0.0;
		for (int i = 0; i < M; ++i) spend += s.cost_c * x(L.xc(t, i)) + s.cost_s * x(L.xs(t, i));
		if (s.cumulative_budget(t) - spend <= 1e-6 * std::max(1.0, s.cumulative_budget(t))) cols.push_back({'m', t, 0});
	}
	for (int t = 0; t < T; ++t)
		for (int i = 0; i < M; ++i) {
			const double dc = x(L.xc(t, i)) - (t > 0 ? x(L.xc(t - 1, i)) : 0.0);
			const double ds = x(L.xs(t, i)) - (t > 0 ? x(L.xs(t - 1, i)) : 0.0);
			if (dc <= tiny * std::max(1.0, s.cap_c(i)) && p.hi(L.xc(t, i)) > 0.0) cols.push_back({'c', t, i});
			if (ds <= tiny * std::max(1.0, s.cap_s(i)) && p.hi(L.xs(t, i)) > 0.0) cols.push_back({'s', t, i});
		}
	for (int t = 0; t < T; ++t)
		for (int m = 0; m < M; ++m) cols.push_back({'h', t, m});

	const int nr = static_cast<int>(rows.size());
	std::vector<int> where(static_cast<std::size_t>(L.size()), -1);
	for (int r = 0; r < nr; ++r) where[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])] = r;
	std::erase_if(cols, [&](const Column& cl) {
		if (cl.kind == 'h') return false;
		auto live = [&](int var) { return where[static_cast<std::size_t>(var)] >= 0; };
		if (cl.kind == 'm') {
			for (int i = 0; i < M; ++i)
				if (live(L.xc(cl.t, i)) || live(L.xs(cl.t, i))) return false;
			return true;
		}
		auto at = [&](int t) { return cl.kind == 'c' ? L.xc(t, cl.i) : L.xs(t, cl.i); };
		return !live(at(cl.t)) && !(cl.t > 0 && live(at(cl.t - 1)));
	});
	const int nc = static_cast<int>(cols.size());
	Matrix J = Matrix::Zero(nr, nc);
	Vector g(nr);
	for (int r = 0; r < nr; ++r) g(r) = d.objective(rows[static_cast<std::size_t>(r)]);
	auto put = [&](int var, int col, double value) {
		const int r = where[static_cast<std::size_t>(var)];
		if (r >= 0) J(r, col) += value;
	};
	for (int k = 0; k < nc; ++k) {
		const Column& cl = cols[static_cast<std::size_t>(k)];
		if (cl.kind == 'm') {
			for (int i = 0; i < M; ++i) {
				put(L.xc(cl.t, i), k, -s.cost_c);
				put(L.xs(cl.t, i), k, -s.cost_s);
			}
		} else if (cl.kind == 'c' || cl.kind == 's') {
			const int here = cl.kind == 'c' ? L.xc(cl.t, cl.i) : L.xs(cl.t, cl.i);
			put(here, k, 1.0);
			if (cl.t > 0) put(cl.kind == 'c' ? L.xc(cl.t - 1, cl.i) : L.xs(cl.t - 1, cl.i), k, -1.0);
		} else {
			for (int r = 0; r < nr; ++r) J(r, k) = d.equality(cl.t * M + cl.i, rows[static_cast<std::size_t>(r)]);
		}
	}
	Vector norms = J.colwise().norm().transpose();
	for (int k = 0; k < nc; ++k) norms(k) = norms(k) > 0.0 ? norms(k) : 1.0;
	const Matrix Js = J * norms.cwiseInverse().asDiagonal();
	Eigen::JacobiSVD<Matrix> svd(Js, Eigen::ComputeThinU | Eigen::ComputeThinV);
	const Vector sv = svd.singularValues();
	out.condition = sv.size() > 0 && sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1)
	                                                           : std::numeric_limits<double>::infinity();
	out.ill_conditioned = !(out.condition <= 1e10);
	svd.setThreshold(1e-12);
	const Vector lambda = norms.cwiseInverse().asDiagonal() * svd.solve(-g);
	out.kkt_residual = (g + J * lambda).norm() / std::max(1e-300, g.norm());
	for (int k = 0; k < nc; ++k) {
		const Column& cl = cols[static_cast<std::size_t>(k)];
		switch (cl.kind) {
		case 'm': out.mu(cl.t) = lambda(k); break;
		case 'c': out.eta_c(cl.t, cl.i) = lambda(k); break;
		case 's': out.eta_s(cl.t, cl.i) = lambda(k); break;
		default: out.theta(cl.t, cl.i) = lambda(k); break;
		}
	}
	double cs = 0.0;
	for (int t = 0; t < T; ++t) {
		double spend = 0.0;
		for (int i = 0; i < M; ++i) spend += s.cost_c * x(L.xc(t, i)) + s.cost_s * x(L.xs(t, i));
		cs = std::max(cs, std::abs(out.mu(t) * (s.cumulative_budget(t) - spend)) /
		                      std::max(1.0, s.cumulative_budget(t)));
	}
	out.project();
	out.complementarity = cs;
	return out;
}

/// Local solution of the relaxed program started from the lower-bound
/// solution, and multipliers recovered at it. The search runs over the
/// original decisions with charging demand at its energy-balance fixed point,
/// which satisfies every equality of the relaxed program; only the flow
/// balance is dropped and budgets become cumulative.
inline RelaxedSolution solve_relaxed(const Scenario& s, const SolverConfig& c, const optimizer::Solution& lb,
                                     const queues::SwapWaitTable* table = nullptr) {
	if (lb.gas_only) throw DomainError("solve_relaxed: no EV deployment to bound");
	std::unique_ptr<queues::SwapWaitTable> own;
	if (!table && c.mode == optimizer::Mode::joint) {
		own = std::make_unique<queues::SwapWaitTable>(s.swap_spec, c.swap_table_step);
		table = own.get();
	}
	const economics::SwapSource source{table};
	optimizer::detail::Context reduced{s, c, Layout{s.zones, s.stages, false}, source, false, {}, {}, true};
	std::tie(reduced.lo, reduced.hi) = optimizer::boxes(s, c, reduced.L);
	Vector y0(reduced.L.size());
	for (int t = 0; t < s.stages; ++t)
		optimizer::encode(reduced.L,
		                  StageDecision{lb.cumulative.charge_at(t), lb.cumulative.swap_at(t),
		                                lb.ops[static_cast<std::size_t>(t)], {}},
		                  t, y0);
	for (int v = 0; v < y0.size(); ++v) {
		reduced.lo(v) = std::min(reduced.lo(v), y0(v));
		reduced.hi(v) = std::max(reduced.hi(v), y0(v));
	}
	nlp::Problem rp = optimizer::detail::make_problem(reduced);
	const double start = detail::objective(rp, y0);
	rp.objective_scale = std::max(1.0, std::abs(start));
	nlp::Options opt;
	opt.max_outer = c.max_outer;
	opt.max_inner = c.max_inner;
	opt.tolerance = c.tolerance;
	opt.feasibility = c.feasibility;
	opt.penalty = c.penalty;
	opt.penalty_growth = c.penalty_growth;
	const nlp::Result res = nlp::solve(rp, y0, opt);
	Vector y = res.x;
	// Exactly within the cumulative budgets and nondecreasing.
	optimizer::repair_plan(s, reduced.L, y, true);
	double value = detail::objective(rp, y);
	RelaxedSolution out;
	if (!(value >= start)) {
		y = y0;
		value = start;
		out.from_lower_bound = true;
	}
	out.value = value;

	// Relaxed-layout point with the fixed-point charging demand.
	detail::RelaxedContext ctx{s, c, Layout{s.zones, s.stages, true}, source, {}, {}};
	std::tie(ctx.lo, ctx.hi) = optimizer::boxes(s, c, ctx.L);
	out.x = Vector(ctx.L.size());
	for (int t = 0; t < s.stages; ++t) {
		StageDecision d = optimizer::decode(reduced.L, y, t);
		d.k = economics::evaluate_state(s, d.charge, d.swap, d.ops, source).charge_demand;
		optimizer::encode(ctx.L, d, t, out.x);
	}
	for (int v = 0; v < out.x.size(); ++v) {
		ctx.lo(v) = std::min(ctx.lo(v), out.x(v));
		ctx.hi(v) = std::max(ctx.hi(v), out.x(v));
	}
	const nlp::Problem p = detail::relaxed_problem(ctx, out.x);
	out.multipliers = recover_multipliers(s, p, ctx.L, out.x);
	return out;
}

// ---------------------------------------------------------------------------
// Subproblems

/// Grid over the coupling decisions of one subproblem.
struct GridSpec {
	std::vector<double> price, idle_ev, idle_gas, share, k, rebalance_time;

	std::size_t points() const {
		return price.size() * idle_ev.size() * idle_gas.size() * share.size() * k.size() * rebalance_time.size();
	}
};

struct GridResolution {
	int price = 12, idle_ev = 8, idle_gas = 8, share = 11, k = 10, rebalance_time = 6;
	double low = 0.25, high = 4.0;
};

namespace detail {

inline std::vector<double> sorted_unique(std::vector<double> v) {
	std::sort(v.begin(), v.end());
	v.erase(std::unique(v.begin(), v.end()), v.end());
	return v;
}

// n points geometric over [low*a, high*a]; a <= 0 uses [0] plus [low*ref, high*ref].
inline std::vector<double> geometric_axis(double anchor, double ref, int n, double low, double high) {
	std::vector<double> out;
	double base = anchor;
	if (!(anchor > 0.0)) {
		out.push_back(0.0);
		base = ref;
		--n;
	}
	for (int q = 0; q < n; ++q) {
		const double u = n > 1 ? static_cast<double>(q) / (n - 1) : 0.5;
		out.push_back(base * low * std::pow(high / low, u));
	}
	return out;
}

inline std::vector<double> midpoints(const std::vector<double>& axis) {
	std::vector<double> out;
	for (std::size_t q = 0; q < axis.size(); ++q) {
		out.push_back(axis[q]);
		if (q + 1 < axis.size()) out.push_back(0.5 * (axis[q] + axis[q + 1]));
	}
	return out;
}

} // namespace detail

inline double rebalance_time(const Scenario& s, int i, const Vector& row) { return row.dot(s.trip_time.row(i)); }

/// Grid anchored at the first decision (typically the lower-bound solution);
/// every anchor's own coordinates are added so each anchor is a grid point.
inline GridSpec make_grid(const Scenario& s, const SolverConfig& c, int i, const std::vector<ZoneDecision>& anchors,
                          const GridResolution& res = {}) {
	if (anchors.empty()) throw ValidationError("make_grid: at least one anchor is required");
	const ZoneDecision& a = anchors.front();
	const double busy = optimizer::potential_busy(s)(i);
	GridSpec g;
	g.price = detail::geometric_axis(a.price, s.outside_price, res.price, res.low, res.high);
	g.idle_ev = detail::geometric_axis(a.idle_ev, std::max(1.0, 0.1 * busy), res.idle_ev, res.low, res.high);
	g.idle_gas = detail::geometric_axis(a.idle_gas, std::max(1.0, 0.25 * a.idle_ev), res.idle_gas, res.low, res.high);
	g.k = detail::geometric_axis(a.k, std::max(1.0, 0.01 * busy), res.k, res.low, res.high);
	g.rebalance_time = detail::geometric_axis(rebalance_time(s, i, a.rebalance), std::max(1.0, 0.05 * busy),
	                                          res.rebalance_time, res.low, res.high);
	const bool charge_possible = s.cap_c(i) > 0.0;
	const bool swap_possible = s.cap_s(i) > 0.0 && c.mode == optimizer::Mode::joint;
	for (int q = 0; q < res.share; ++q) {
		const double r = res.share > 1 ? static_cast<double>(q) / (res.share - 1) : 1.0;
		if ((r > 0.0 && !charge_possible) || (r < 1.0 && !swap_possible)) continue;
		g.share.push_back(r);
	}
	for (const ZoneDecision& z : anchors) {
		g.price.push_back(z.price);
		g.idle_ev.push_back(z.idle_ev);
		g.idle_gas.push_back(z.idle_gas);
		g.k.push_back(z.k);
		g.rebalance_time.push_back(rebalance_time(s, i, z.rebalance));
		if (!((z.share > 0.0 && !charge_possible) || (z.share < 1.0 && !swap_possible))) g.share.push_back(z.share);
	}
	for (auto* axis : {&g.price, &g.idle_ev, &g.idle_gas, &g.share, &g.k, &g.rebalance_time})
		*axis = detail::sorted_unique(*axis);
	return g;
}

/// Twice the resolution: a midpoint between each pair of neighbours.
inline GridSpec refine(const GridSpec& g) {
	return {detail::midpoints(g.price), detail::midpoints(g.idle_ev),  detail::midpoints(g.idle_gas),
	        detail::midpoints(g.share), detail::midpoints(g.k), detail::midpoints(g.rebalance_time)};
}

struct SubproblemInstance {
	const Scenario* scenario = nullptr;
	int zone = 0;
	int stage = 0;
	double weight = 1.0;    // stage weight of the profit
	double mu = 0.0;
	double eta_c = 0.0;     // eta_{i,t}
	double eta_s = 0.0;
	std::optional<double> eta_c_next; // eta_{i,t+1}; absent at the last stage
	std::optional<double> eta_s_next;
	Vector theta;           // M
	GridSpec grid;
	double cap_c = 0.0;
	double cap_s = 0.0;
	economics::SwapSource source;
	std::vector<ZoneDecision> exact_points; // also evaluated exactly (direct queues)
};

inline SubproblemInstance make_instance(const Scenario& s, const SolverConfig& c, const Multipliers& mult, int i,
                                        int t, GridSpec grid, const economics::SwapSource& source) {
	SubproblemInstance inst;
	inst.scenario = &s;
	inst.zone = i;
	inst.stage = t;
	inst.weight = c.stage_weight(t);
	inst.mu = mult.mu(t);
	inst.eta_c = mult.eta_c(t, i);
	inst.eta_s = mult.eta_s(t, i);
	if (t + 1 < s.stages) {
		inst.eta_c_next = mult.eta_c(t + 1, i);
		inst.eta_s_next = mult.eta_s(t + 1, i);
	}
	inst.theta = mult.theta.row(t).transpose();
	inst.grid = std::move(grid);
	inst.cap_c = s.cap_c(i);
	inst.cap_s = c.mode == optimizer::Mode::joint ? s.cap_s(i) : 0.0;
	inst.source = source;
	return inst;
}

inline Multipliers instance_multipliers(const SubproblemInstance& inst) {
	const Scenario& s = *inst.scenario;
	Multipliers m = Multipliers::zeros(s.stages, s.zones);
	m.mu(inst.stage) = inst.mu;
	m.eta_c(inst.stage, inst.zone) = inst.eta_c;
	m.eta_s(inst.stage, inst.zone) = inst.eta_s;
	if (inst.eta_c_next) m.eta_c(inst.stage + 1, inst.zone) = *inst.eta_c_next;
	if (inst.eta_s_next) m.eta_s(inst.stage + 1, inst.zone) = *inst.eta_s_next;
	m.theta.row(inst.stage) = inst.theta.transpose();
	return m;
}

struct SubproblemResult {
	double value = kNegInf;
	ZoneDecision argmax;
	std::size_t grid_points = 0;
	int inner_solves = 0;
};

namespace detail {

struct Inner {
	double value = kNegInf;
	double x = 0.0;
};

// Maximizes a concave function on [lo, hi]: log-spaced scan for a start, then
// projected gradient ascent with backtracking.
template <typename F>
Inner concave_max(const F& f, double lo, double hi, double anchor) {
	Inner best;
	auto consider = [&](double x) {
		const double v = f(x);
		if (v > best.value || (v == best.value && x < best.x)) best = {v, x};
	};
	const int scan = 24;
	for (int q = 0; q <= scan; ++q) {
		const double u = static_cast<double>(q) / scan;
		consider(lo > 0.0 ? lo * std::pow(hi / lo, u) : lo + (hi - lo) * u * u);
	}
	if (anchor >= lo && anchor <= hi) consider(anchor);
	if (!std::isfinite(best.value)) return best;
	double x = best.x, v = best.value;
	double step = 0.1 * (hi - lo);
	for (int it = 0; it < 200; ++it) {
		const double h = 1e-6 * std::max(std::abs(x), 1e-3 * (hi - lo));
		const double up = std::min(hi, x + h), down = std::max(lo, x - h);
		const double fu = f(up), fd = f(down);
		if (!std::isfinite(fu) || !std::isfinite(fd) || up == down) break;
		const double g = (fu - fd) / (up - down);
		const double pg = std::clamp(x + g, lo, hi) - x;
		if (std::abs(pg) <= 1e-7 * (1.0 + std::abs(v))) break;
		bool moved = false;
		step *= 2.0;
		for (int bt = 0; bt < 60; ++bt, step *= 0.5) {
			const double trial = std::clamp(x + step * (g > 0.0 ? 1.0 : -1.0), lo, hi);
			const double fv = f(trial);
			if (std::isfinite(fv) && fv >= v + 1e-4 * std::abs(g) * std::abs(trial - x) && trial != x) {
				x = trial;
				v = fv;
				moved = true;
				break;
			}
		}
		if (!moved) break;
	}
	if (v > best.value) best = {v, x};
	return best;
}

struct ZoneFixed {
	double rate_coef = 0.0;   // multiplies k, excluding the chain part
	double service_c = 0.0, service_s = 0.0;
};

} // namespace detail

/// Globally maximizes L_{i,t} over the grid of coupling decisions. For a grid
/// point, the rebalancing row enters only through a linear term on the
/// simplex sum_j f_ij tau_ij = f~ and is set in closed form; the station counts
/// separate into one-dimensional concave problems in the charging and
/// swapping arrival rates, which are solved once per distinct rate.
inline SubproblemResult solve_subproblem(const SubproblemInstance& inst) {
	const Scenario& s = *inst.scenario;
	const int M = s.zones, i = inst.zone;
	const GridSpec& g = inst.grid;
	const double w = inst.weight;
	const double theta_energy = inst.theta(M - 1);
	const double coef_c = inst.eta_c - inst.eta_c_next.value_or(0.0) - inst.mu * s.cost_c;
	const double coef_s = inst.eta_s - inst.eta_s_next.value_or(0.0) - inst.mu * s.cost_s;
	double theta_hat = 0.0; // best chain multiplier for rebalancing (zone M row counts as zero)
	int best_dest = M - 1;
	for (int m = 0; m + 1 < M; ++m)
		if (inst.theta(m) > theta_hat) {
			theta_hat = inst.theta(m);
			best_dest = m;
		}
	const double theta_self = i + 1 < M ? inst.theta(i) : 0.0;

	SubproblemResult out;
	out.grid_points = g.points();

	// Station part for an arrival rate a: charging side and swapping side.
	std::map<double, detail::Inner> cache_c, cache_s;
	auto station_c = [&](double a) -> detail::Inner {
		auto it = cache_c.find(a);
		if (it != cache_c.end()) return it->second;
		++out.inner_solves;
		detail::Inner r;
		if (a <= 0.0) {
			r = coef_c > 0.0 ? detail::Inner{coef_c * inst.cap_c, inst.cap_c} : detail::Inner{0.0, 0.0};
		} else {
			const double lo = a * s.charge_spec.charge_hours / s.charge_spec.chargers;
			if (lo < inst.cap_c) {
				auto f = [&](double x) {
					if (!(x > lo)) return kNegInf;
					const double l = queues::access_time(x, s.psi);
					double wait = 0.0;
					try {
						wait = queues::erlang_c_wait(a / x, s.charge_spec).wait;
					} catch (const UnstableQueueError&) {
						return kNegInf;
					}
					return -w * s.gamma_e * a * (l + wait) - theta_energy * a * l + coef_c * x;
				};
				r = detail::concave_max(f, std::nextafter(lo, inst.cap_c), inst.cap_c, inst.cap_c);
			}
		}
		cache_c.emplace(a, r);
		return r;
	};
	auto station_s = [&](double a) -> detail::Inner {
		auto it = cache_s.find(a);
		if (it != cache_s.end()) return it->second;
		++out.inner_solves;
		detail::Inner r;
		if (a <= 0.0) {
			r = coef_s > 0.0 ? detail::Inner{coef_s * inst.cap_s, inst.cap_s} : detail::Inner{0.0, 0.0};
		} else if (inst.cap_s > 0.0) {
			auto f = [&](double x) {
				if (!(x > 0.0)) return kNegInf;
				const double l = queues::access_time(x, s.psi);
				const double wait = inst.source(a / x, s.swap_spec).wait;
				return -w * s.gamma_e * a * (l + wait) - theta_energy * a * l + coef_s * x;
			};
			r = detail::concave_max(f, 1e-6 * inst.cap_s, inst.cap_s, inst.cap_s);
		}
		cache_s.emplace(a, r);
		return r;
	};

	// Everything depending on (r, k) only.
	const std::size_t nr = g.share.size(), nk = g.k.size();
	std::vector<double> rk(nr * nk, kNegInf);
	for (std::size_t a = 0; a < nr; ++a)
		for (std::size_t b = 0; b < nk; ++b) {
			const double r = g.share[a], k = g.k[b];
			const detail::Inner c = station_c(r * k), sw = station_s((1.0 - r) * k);
			if (!std::isfinite(c.value) || !std::isfinite(sw.value)) continue;
			const double service = r * s.charge_spec.charge_hours + (1.0 - r) * s.swap_spec.swap_hours;
			rk[a * nk + b] = c.value + sw.value + k * (theta_energy * s.battery_range_hours - theta_self - w * s.gamma_e * service);
		}

	const market::LogitDemand curve(s);
	Vector lambda(M);
	struct Arg {
		std::size_t p, ne, ng, f, r, k;
	} arg{};
	bool found = false;
	for (std::size_t ip = 0; ip < g.price.size(); ++ip)
		for (std::size_t ine = 0; ine < g.idle_ev.size(); ++ine) {
			const double ne = g.idle_ev[ine];
			if (!(ne > 0.0)) continue;
			for (std::size_t ing = 0; ing < g.idle_gas.size(); ++ing) {
				const double ng = g.idle_gas[ing];
				const double pickup = s.phi / std::sqrt(ne + ng);
				const double R = ne / (ne + ng);
				const double price = g.price[ip];
				double busy0 = 0.0, revenue = 0.0, chain = 0.0, lam_sum = 0.0;
				for (int j = 0; j < M; ++j) {
					lambda(j) = curve(s.base_demand(i, j), price, s.trip_time(i, j), pickup);
					busy0 += lambda(j) * (pickup + s.trip_time(i, j));
					revenue += price * lambda(j) * s.trip_time(i, j);
					lam_sum += lambda(j);
					if (j + 1 < M) chain += inst.theta(j) * R * lambda(j) * s.trip_time(i, j);
				}
				chain += theta_self * (ne + R * lam_sum * pickup);
				for (std::size_t jf = 0; jf < g.rebalance_time.size(); ++jf) {
					const double ft = g.rebalance_time[jf];
					const double busy = busy0 + ft;
					const double rowsum = ne + R * busy;
					const double base = w * (revenue - s.gamma_g * (ng + (1.0 - R) * busy) - s.gamma_e * (ne + R * busy)) -
					                    theta_energy * (ne + R * busy);
					const double per_k = (chain + R * ft * theta_hat) / rowsum;
					for (std::size_t a = 0; a < nr; ++a)
						for (std::size_t b = 0; b < nk; ++b) {
							const double extra = rk[a * nk + b];
							if (!std::isfinite(extra)) continue;
							const double v = base + g.k[b] * per_k + extra;
							if (v > out.value) {
								out.value = v;
								arg = {ip, ine, ing, jf, a, b};
								found = true;
							}
						}
				}
			}
		}
	if (found) {
		ZoneDecision& z = out.argmax;
		z.price = g.price[arg.p];
		z.idle_ev = g.idle_ev[arg.ne];
		z.idle_gas = g.idle_gas[arg.ng];
		z.share = g.share[arg.r];
		z.k = g.k[arg.k];
		z.charge = station_c(z.share * z.k).x;
		z.swap = station_s((1.0 - z.share) * z.k).x;
		z.rebalance = Vector::Zero(M);
		z.rebalance(best_dest) = g.rebalance_time[arg.f] / s.trip_time(i, best_dest);
	}
	// Exactly evaluated points (direct queue models) are feasible too.
	const Multipliers local = instance_multipliers(inst);
	for (const ZoneDecision& z : inst.exact_points) {
		try {
			const double v = zone_lagrangian(s, i, inst.stage, z, local, w);
			if (v > out.value) {
				out.value = v;
				out.argmax = z;
			}
		} catch (const Error&) {
		}
	}
	return out;
}

// ---------------------------------------------------------------------------
// Upper bound assembly

struct SubproblemRow {
	int zone = 0;
	int stage = 0;
	double value = 0.0;
	double refined_value = std::numeric_limits<double>::quiet_NaN(); // when sampled
	ZoneDecision argmax;
	std::size_t grid_points = 0;
};

struct UpperBound {
	double value = std::numeric_limits<double>::infinity();
	double constant = 0.0;
	double margin = 0.0;        // largest value shift of the sampled subproblems at twice the resolution
	bool refined = false;       // full grid refined once because the shift was too large
	std::vector<SubproblemRow> rows;
};

struct BoundOptions {
	GridResolution resolution;
	double sample_fraction = 0.1;
	double refine_threshold = 1e-3; // of |UB|
	int workers = 1;
	std::uint64_t seed = 20240917;
	std::vector<int> order;         // subproblem solve order (default natural)
};

/// UB = sum_t mu_t b~_t + sum_{i,t} max L_{i,t}. `grids` is indexed t*M + i.
inline UpperBound upper_bound(const Scenario& s, const SolverConfig& c, const Multipliers& mult,
                              const std::vector<GridSpec>& grids, const economics::SwapSource& source,
                              const BoundOptions& opt = {},
                              const std::vector<std::vector<ZoneDecision>>& exact_points = {}) {
	if (!mult.sign_feasible()) throw DomainError("upper_bound: multipliers violate their sign constraints");
	const int M = s.zones, T = s.stages, n = M * T;
	if (static_cast<int>(grids.size()) != n) throw ValidationError("upper_bound: one grid per (zone, stage) is required");
	auto instance = [&](int q, const GridSpec& g) {
		SubproblemInstance inst = make_instance(s, c, mult, q % M, q / M, g, source);
		if (!exact_points.empty()) inst.exact_points = exact_points[static_cast<std::size_t>(q)];
		return inst;
	};
	std::vector<int> order = opt.order;
	if (order.empty()) {
		order.resize(static_cast<std::size_t>(n));
		std::iota(order.begin(), order.end(), 0);
	}
	UpperBound out;
	out.rows.resize(static_cast<std::size_t>(n));
	auto solve_all = [&](bool fine) {
		optimizer::parallel_for(n, c.workers > 1 ? c.workers : opt.workers, [&](int k) {
			const int q = order[static_cast<std::size_t>(k)];
			const GridSpec& base = grids[static_cast<std::size_t>(q)];
			const SubproblemResult r = solve_subproblem(instance(q, fine ? refine(base) : base));
			SubproblemRow& row = out.rows[static_cast<std::size_t>(q)];
			row.zone = q % M;
			row.stage = q / M;
			row.value = r.value;
			row.argmax = r.argmax;
			row.grid_points = r.grid_points;
		});
	};
	auto assemble = [&]() {
		out.constant = lagrangian_constant(s, mult);
		double total = out.constant;
		for (const SubproblemRow& row : out.rows) total += row.value;
		out.value = total;
	};
	solve_all(false);
	assemble();

	std::mt19937_64 rng(opt.seed);
	std::vector<int> all(static_cast<std::size_t>(n));
	std::iota(all.begin(), all.end(), 0);
	std::shuffle(all.begin(), all.end(), rng);
	const int sample = std::max(1, static_cast<int>(std::ceil(opt.sample_fraction * n)));
	std::vector<int> picked(all.begin(), all.begin() + sample);
	std::sort(picked.begin(), picked.end());
	std::vector<double> shifted(picked.size());
	optimizer::parallel_for(sample, c.workers > 1 ? c.workers : opt.workers, [&](int k) {
		const int q = picked[static_cast<std::size_t>(k)];
		shifted[static_cast<std::size_t>(k)] = solve_subproblem(instance(q, refine(grids[static_cast<std::size_t>(q)]))).value;
	});
	double margin = 0.0;
	for (std::size_t k = 0; k < picked.size(); ++k) {
		SubproblemRow& row = out.rows[static_cast<std::size_t>(picked[k])];
		row.refined_value = shifted[k];
		margin = std::max(margin, std::abs(shifted[k] - row.value));
	}
	out.margin = margin;
	if (margin > opt.refine_threshold * std::abs(out.value)) {
		solve_all(true);
		assemble();
		out.refined = true;
	}
	return out;
}

struct OptimalityReport {
	double lower = 0.0;
	double upper = 0.0;
	double gap = 0.0;          // (UB - LB) / LB
	double gap_percent = 0.0;
	double margin = 0.0;
	bool valid = true;         // UB >= LB
};

inline OptimalityReport optimality_report(double lower, double upper, double margin = 0.0) {
	OptimalityReport r;
	r.lower = lower;
	r.upper = upper;
	r.margin = margin;
	r.gap = (upper - lower) / std::abs(lower);
	r.gap_percent = 100.0 * r.gap;
	r.valid = upper >= lower;
	return r;
}

/// Full certificate for a lower-bound solution: relaxed solve, multipliers,
/// anchored grids and the assembled bound.
struct Certificate {
	RelaxedSolution relaxed;
	UpperBound bound;
	OptimalityReport report;
};

inline Certificate certify(const Scenario& s, const SolverConfig& c, const optimizer::Solution& lb,
                           BoundOptions opt = {}) {
	std::unique_ptr<queues::SwapWaitTable> table;
	if (c.mode == optimizer::Mode::joint) table = std::make_unique<queues::SwapWaitTable>(s.swap_spec, c.swap_table_step);
	const economics::SwapSource source{table.get()};
	Certificate out;
	out.relaxed = solve_relaxed(s, c, lb, table.get());
	const Layout L{s.zones, s.stages, true};
	const Vector lb_x = relaxed_point(s, lb);
	std::vector<GridSpec> grids;
	std::vector<std::vector<ZoneDecision>> exact;
	for (int t = 0; t < s.stages; ++t) {
		const StageDecision a = optimizer::decode(L, lb_x, t);
		const StageDecision b = optimizer::decode(L, out.relaxed.x, t);
		for (int i = 0; i < s.zones; ++i) {
			const ZoneDecision za = zone_of(a, a.k, i), zb = zone_of(b, b.k, i);
			grids.push_back(make_grid(s, c, i, {za, zb}, opt.resolution));
			exact.push_back({za, zb});
		}
	}
	opt.seed = c.seed;
	out.bound = upper_bound(s, c, out.relaxed.multipliers, grids, source, opt, exact);
	out.report = optimality_report(lb.lower_bound, out.bound.value, out.bound.margin);
	return out;
}

} // namespace chargenet::bound

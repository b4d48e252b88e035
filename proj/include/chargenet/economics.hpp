#pragma once

// Time conservation, fleet sizing, profit and utilization: composes the
// market, EV chain and queue models into a MarketState for one stage.

#include <cmath>
#include <optional>
#include <string>

#include "chargenet/chargeflow.hpp"
#include "chargenet/error.hpp"
#include "chargenet/market.hpp"
#include "chargenet/model.hpp"
#include "chargenet/queues.hpp"

namespace chargenet::economics {

struct FleetSizes {
	double ev = 0.0;  // N^e
	double gas = 0.0; // N^g
};

/// Hours each charging event takes out of service, by zone and mode.
inline double charge_downtime(double share, double demand, double access, double wait, double service) {
	return share > 0.0 ? share * demand * (access + wait + service) : 0.0;
}

inline FleetSizes fleet_sizes(const OperationalDecision& ops, const Matrix& demand, const Vector& pickup,
                              const Vector& charge_demand, const Vector& access_c, const Vector& wait_c,
                              const Vector& access_s, const Vector& wait_s, const Scenario& s) {
	FleetSizes out;
	for (int i = 0; i < s.zones; ++i) {
		const double share = ops.idle_ev(i) / (ops.idle_ev(i) + ops.idle_gas(i));
		double busy = 0.0;
		for (int j = 0; j < s.zones; ++j)
			busy += demand(i, j) * pickup(i) + (demand(i, j) + ops.rebalance(i, j)) * s.trip_time(i, j);
		out.gas += ops.idle_gas(i) + (1.0 - share) * busy;
		out.ev += ops.idle_ev(i) + share * busy;
		out.ev += charge_downtime(ops.charge_share(i), charge_demand(i), access_c(i), wait_c(i),
		                          s.charge_spec.charge_hours);
		out.ev += charge_downtime(1.0 - ops.charge_share(i), charge_demand(i), access_s(i), wait_s(i),
		                          s.swap_spec.swap_hours);
	}
	return out;
}

inline double revenue(const Vector& price, const Matrix& demand, const Matrix& trip_time) {
	double total = 0.0;
	for (Eigen::Index i = 0; i < demand.rows(); ++i)
		total += price(i) * demand.row(i).dot(trip_time.row(i));
	return total;
}

inline double profit(const Vector& price, const Matrix& demand, const Matrix& trip_time, double fleet_ev,
                     double fleet_gas, const Scenario& s) {
	return revenue(price, demand, trip_time) - s.gamma_g * fleet_gas - s.gamma_e * fleet_ev;
}

inline double ev_utilization(const Vector& charge_demand, const Vector& share, const Vector& access_c,
                             const Vector& wait_c, const Vector& access_s, const Vector& wait_s,
                             double fleet_ev, const ChargeStationSpec& charge,
                             const SwapStationSpec& swap) {
	if (!(fleet_ev > 0.0)) throw DomainError("ev_utilization: EV fleet size must be positive");
	double down = 0.0;
	for (Eigen::Index i = 0; i < charge_demand.size(); ++i) {
		down += charge_downtime(share(i), charge_demand(i), access_c(i), wait_c(i), charge.charge_hours);
		down += charge_downtime(1.0 - share(i), charge_demand(i), access_s(i), wait_s(i), swap.swap_hours);
	}
	return 1.0 - down / fleet_ev;
}

/// Where swap-station waits come from: the cached interpolation table inside
/// optimization loops, or the full chain for reporting.
struct SwapSource {
	const queues::SwapWaitTable* table = nullptr;

	queues::QueueMetrics operator()(double arrival, const SwapStationSpec& spec) const {
		if (table) {
			queues::QueueMetrics m;
			m.wait = table->wait(arrival);
			m.block = table->block(arrival);
			m.utilization = arrival * (1.0 - m.block) * spec.swap_hours / spec.bays;
			return m;
		}
		return queues::swap_wait(arrival, spec);
	}
};

/// Per-zone pieces of a stage's profit, in the accounting used by the
/// Lagrangian decomposition. Summing over zones recovers the MarketState totals.
struct ZoneAccounts {
	Vector revenue;
	Vector ev_busy;   // R_i * sum_j (lambda w^p + lambda tau + f tau)
	Vector gas_busy;  // (1 - R_i) * same
	Vector downtime;  // charging and swapping hours per hour
};

struct Evaluation {
	MarketState state;
	ZoneAccounts zones;
};

namespace detail {

inline void check_ops(const Scenario& s, const Vector& charge, const Vector& swap, const OperationalDecision& ops) {
	const int m = s.zones;
	if (charge.size() != m || swap.size() != m || ops.price.size() != m || ops.idle_ev.size() != m ||
	    ops.idle_gas.size() != m || ops.charge_share.size() != m || ops.rebalance.rows() != m ||
	    ops.rebalance.cols() != m)
		throw ValidationError("decision dimensions do not match the scenario's zone count");
	for (int i = 0; i < m; ++i) {
		if (!(ops.price(i) >= 0.0)) throw DomainError("price must be nonnegative");
		if (!(ops.idle_gas(i) >= 0.0)) throw DomainError("idle gasoline vehicles must be nonnegative");
		if (!(ops.charge_share(i) >= 0.0 && ops.charge_share(i) <= 1.0))
			throw DomainError("charge share must lie in [0, 1]");
		if (!(charge(i) >= 0.0) || !(swap(i) >= 0.0)) throw DomainError("station counts must be nonnegative");
	}
	if (!(ops.rebalance.array() >= 0.0).all()) throw DomainError("rebalancing flows must be nonnegative");
}

// Queue waits for zone i given its charging demand. Facility presence is
// checked by the caller.
inline void zone_queues(const Scenario& s, const Vector& charge, const Vector& swap, const OperationalDecision& ops,
                        const SwapSource& source, int i, double demand, MarketState& st) {
	const double r = ops.charge_share(i);
	st.wait_c(i) = 0.0;
	st.wait_s(i) = 0.0;
	st.block_s(i) = 0.0;
	if (r > 0.0) st.wait_c(i) = queues::erlang_c_wait(r * demand / charge(i), s.charge_spec).wait;
	if (r < 1.0) {
		const queues::QueueMetrics m = source((1.0 - r) * demand / swap(i), s.swap_spec);
		st.wait_s(i) = m.wait;
		st.block_s(i) = m.block;
	}
}

// Shared composition. With `given_k` the charging demand is taken as a decision
// (the relaxed reformulation); otherwise it is the energy-balance fixed point.
inline Evaluation compose(const Scenario& s, const Vector& charge, const Vector& swap, const OperationalDecision& ops,
                          const SwapSource& source, const Vector* given_k) {
	check_ops(s, charge, swap, ops);
	const int m = s.zones;
	Evaluation out;
	MarketState& st = out.state;
	st.pickup.resize(m);
	for (int i = 0; i < m; ++i) st.pickup(i) = market::pickup_time(ops.idle_ev(i), ops.idle_gas(i), s.phi);
	st.demand = market::demand_matrix(s, ops.price, st.pickup);

	const chargeflow::EvFlow flow =
	    chargeflow::demand_matrix(ops.idle_ev, ops.idle_gas, st.demand, ops.rebalance, st.pickup, s.trip_time);
	st.ev_share = flow.R;
	st.ev_flow = flow.D;
	st.transition = chargeflow::transition_matrix(flow.D);
	st.stationary = chargeflow::stationary_distribution(st.transition);

	ZoneAccounts& z = out.zones;
	z.revenue.resize(m);
	z.ev_busy.resize(m);
	z.gas_busy.resize(m);
	z.downtime.resize(m);
	for (int i = 0; i < m; ++i) {
		double busy = 0.0;
		for (int j = 0; j < m; ++j)
			busy += st.demand(i, j) * st.pickup(i) + (st.demand(i, j) + ops.rebalance(i, j)) * s.trip_time(i, j);
		z.ev_busy(i) = flow.R(i) * busy;
		z.gas_busy(i) = (1.0 - flow.R(i)) * busy;
		z.revenue(i) = ops.price(i) * st.demand.row(i).dot(s.trip_time.row(i));
	}
	st.ev_operating = ops.idle_ev.sum() + z.ev_busy.sum();

	st.access_c.resize(m);
	st.access_s.resize(m);
	for (int i = 0; i < m; ++i) {
		st.access_c(i) = charge(i) > 0.0 ? queues::access_time(charge(i), s.psi) : 0.0;
		st.access_s(i) = swap(i) > 0.0 ? queues::access_time(swap(i), s.psi) : 0.0;
		const double r = ops.charge_share(i);
		if (r > 0.0 && !(charge(i) > 0.0))
			throw DomainError("zone " + std::to_string(i) + " routes charging demand to plug-in charging but has no charging station");
		if (r < 1.0 && !(swap(i) > 0.0))
			throw DomainError("zone " + std::to_string(i) + " routes charging demand to swapping but has no swap station");
	}
	st.feasibility_margin = chargeflow::feasibility_margin(st.stationary, ops.charge_share, st.access_c,
	                                                       st.access_s, s.battery_range_hours);
	if (given_k) {
		st.charge_demand = *given_k;
		st.total_charge_rate = given_k->sum();
	} else {
		const chargeflow::ChargingRate rate =
		    chargeflow::total_charging_rate(st.stationary, ops.charge_share, st.access_c, st.access_s,
		                                    s.battery_range_hours, st.ev_operating);
		st.charge_demand = rate.k;
		st.total_charge_rate = rate.K;
	}

	st.wait_c.resize(m);
	st.wait_s.resize(m);
	st.block_s.resize(m);
	for (int i = 0; i < m; ++i) {
		zone_queues(s, charge, swap, ops, source, i, st.charge_demand(i), st);
		const double r = ops.charge_share(i);
		const double k = st.charge_demand(i);
		z.downtime(i) = charge_downtime(r, k, st.access_c(i), st.wait_c(i), s.charge_spec.charge_hours) +
		                charge_downtime(1.0 - r, k, st.access_s(i), st.wait_s(i), s.swap_spec.swap_hours);
	}

	st.ev_downtime = z.downtime.sum();
	st.fleet_gas = ops.idle_gas.sum() + z.gas_busy.sum();
	st.fleet_ev = st.ev_operating + st.ev_downtime;
	st.revenue = z.revenue.sum();
	st.profit = st.revenue - s.gamma_g * st.fleet_gas - s.gamma_e * st.fleet_ev;
	st.ev_utilization = st.fleet_ev > 0.0 ? 1.0 - st.ev_downtime / st.fleet_ev : 1.0;
	return out;
}

} // namespace detail

/// Single-pass evaluation of one stage: demand, EV chain, charging rates,
/// queues, fleet sizes and profit. Throws InfeasibleError when the feasibility
/// margin is not positive and UnstableQueueError when a charging queue is
/// overloaded.
inline Evaluation evaluate(const Scenario& s, const Vector& charge, const Vector& swap,
                           const OperationalDecision& ops, const SwapSource& source = {}) {
	return detail::compose(s, charge, swap, ops, source, nullptr);
}

inline MarketState evaluate_state(const Scenario& s, const Vector& charge, const Vector& swap,
                                  const OperationalDecision& ops, const SwapSource& source = {}) {
	return evaluate(s, charge, swap, ops, source).state;
}

/// Evaluation with charging demand supplied as a decision. The energy balance
/// and the chain equations then need not hold; see bound::h_residuals.
inline Evaluation evaluate_augmented(const Scenario& s, const Vector& charge, const Vector& swap,
                                     const OperationalDecision& ops, const Vector& charge_demand,
                                     const SwapSource& source = {}) {
	if (charge_demand.size() != s.zones) throw ValidationError("charging demand has the wrong dimension");
	if (!(charge_demand.array() >= 0.0).all()) throw DomainError("charging demand must be nonnegative");
	return detail::compose(s, charge, swap, ops, source, &charge_demand);
}

/// Gasoline-only stage (no EVs anywhere): no chain and no charging.
inline MarketState evaluate_gas_only(const Scenario& s, const OperationalDecision& ops) {
	const int m = s.zones;
	MarketState st;
	st.pickup.resize(m);
	for (int i = 0; i < m; ++i) st.pickup(i) = market::pickup_time(0.0, ops.idle_gas(i), s.phi);
	st.demand = market::demand_matrix(s, ops.price, st.pickup);
	st.ev_share = Vector::Zero(m);
	st.ev_flow = Matrix::Zero(m, m);
	st.transition = Matrix::Identity(m, m);
	st.stationary = Vector::Constant(m, 1.0 / m);
	st.charge_demand = Vector::Zero(m);
	st.access_c = st.access_s = st.wait_c = st.wait_s = st.block_s = Vector::Zero(m);
	st.feasibility_margin = s.battery_range_hours;
	double busy = 0.0;
	for (int i = 0; i < m; ++i)
		for (int j = 0; j < m; ++j)
			busy += st.demand(i, j) * st.pickup(i) + (st.demand(i, j) + ops.rebalance(i, j)) * s.trip_time(i, j);
	st.fleet_gas = ops.idle_gas.sum() + busy;
	st.revenue = revenue(ops.price, st.demand, s.trip_time);
	st.profit = st.revenue - s.gamma_g * st.fleet_gas;
	st.ev_utilization = 1.0;
	return st;
}

/// Relative residual of the fleet-wide energy balance: charging events times
/// usable range per event against EV hours in operation.
inline double energy_balance_residual(const MarketState& st, const OperationalDecision& ops,
                                      const Scenario& s) {
	double supplied = 0.0;
	for (int i = 0; i < s.zones; ++i) {
		const double r = ops.charge_share(i);
		double range = s.battery_range_hours;
		if (r > 0.0) range -= r * st.access_c(i);
		if (r < 1.0) range -= (1.0 - r) * st.access_s(i);
		supplied += st.charge_demand(i) * range;
	}
	return std::abs(supplied - st.ev_operating) / std::max(std::abs(st.ev_operating), 1e-300);
}

} // namespace chargenet::economics

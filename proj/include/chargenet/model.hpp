#pragma once

// Domain types shared by every module: the immutable scenario, planning and
// operational decisions, and the endogenous market state. The JSON schema for
// scenarios is documented in docs/scenario_schema.md.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "chargenet/error.hpp"

namespace chargenet {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using json = nlohmann::json;

/// Strict inequalities of the model (N^ve > 0, k > 0, feasibility margin > 0)
/// are enforced as >= kPositiveFloor.
inline constexpr double kPositiveFloor = 1e-6;

struct ChargeStationSpec {
	int chargers = 10;         // V
	double charge_hours = 1.0; // mean charge duration

	bool operator==(const ChargeStationSpec&) const = default;
};

struct SwapStationSpec {
	int bays = 1;               // S
	int chargers = 10;          // C
	int batteries = 10;         // B
	int capacity = 100;         // W, EVs in station including those being swapped
	double swap_hours = 1.0 / 12.0;
	double charge_hours = 1.0;  // battery recharge time, shared with charging stations

	bool operator==(const SwapStationSpec&) const = default;
};

struct Scenario {
	int zones = 0;
	int stages = 0;
	Matrix base_demand; // potential trips/hour, zones x zones
	Matrix trip_time;   // hours, strictly positive including the diagonal

	double phi = 0.0;   // pickup-time constant, h * veh^1/2
	double psi = 0.0;   // facility-access constant, h * station^1/2
	double alpha = 0.0; // passenger value of time, $/h
	double logit_sensitivity = 0.0;
	double outside_price = 0.0; // $/h of trip time for the outside option
	double gamma_e = 0.0;       // EV operating cost, $/h
	double gamma_g = 0.0;       // gasoline-vehicle operating cost, $/h
	double battery_range_hours = 0.0;
	double cost_c = 0.0; // per charging station, swap-station numeraire
	double cost_s = 0.0; // per swap station

	std::vector<double> budgets; // per stage
	Vector cap_c;                // per-zone cap on cumulative charging stations
	Vector cap_s;                // per-zone cap on cumulative swap stations

	ChargeStationSpec charge_spec;
	SwapStationSpec swap_spec;

	double cumulative_budget(int stage) const {
		double total = 0.0;
		for (int t = 0; t <= stage; ++t) total += budgets[static_cast<std::size_t>(t)];
		return total;
	}

	bool operator==(const Scenario& other) const {
		return zones == other.zones && stages == other.stages && base_demand == other.base_demand &&
		       trip_time == other.trip_time && phi == other.phi && psi == other.psi &&
		       alpha == other.alpha && logit_sensitivity == other.logit_sensitivity &&
		       outside_price == other.outside_price && gamma_e == other.gamma_e &&
		       gamma_g == other.gamma_g && battery_range_hours == other.battery_range_hours &&
		       cost_c == other.cost_c && cost_s == other.cost_s && budgets == other.budgets &&
		       cap_c == other.cap_c && cap_s == other.cap_s && charge_spec == other.charge_spec &&
		       swap_spec == other.swap_spec;
	}
};

/// Station counts built at each stage (rows are stages, columns zones).
struct PlanningDecision {
	Matrix new_charge;
	Matrix new_swap;
};

/// Station counts in place at each stage.
struct CumulativePlan {
	Matrix charge;
	Matrix swap;

	Vector charge_at(int t) const { return charge.row(t).transpose(); }
	Vector swap_at(int t) const { return swap.row(t).transpose(); }
};

inline CumulativePlan accumulate(const PlanningDecision& plan) {
	CumulativePlan out{plan.new_charge, plan.new_swap};
	for (Eigen::Index t = 1; t < out.charge.rows(); ++t) {
		out.charge.row(t) += out.charge.row(t - 1);
		out.swap.row(t) += out.swap.row(t - 1);
	}
	return out;
}

inline PlanningDecision increments(const CumulativePlan& plan) {
	PlanningDecision out{plan.charge, plan.swap};
	for (Eigen::Index t = plan.charge.rows() - 1; t >= 1; --t) {
		out.new_charge.row(t) -= plan.charge.row(t - 1);
		out.new_swap.row(t) -= plan.swap.row(t - 1);
	}
	return out;
}

/// Operational decision for one stage.
struct OperationalDecision {
	Vector price;        // $/h of trip time, by origin zone
	Vector idle_ev;      // N^ve
	Vector idle_gas;     // N^vg
	Matrix rebalance;    // f, veh/h
	Vector charge_share; // r, fraction of charging demand sent to plug-in charging
};

/// Operational decision with charging demand promoted to a decision variable.
struct AugmentedDecision {
	OperationalDecision ops;
	Vector charge_demand;    // k, veh/h
	Vector rebalance_time;   // f~_i = sum_j f_ij tau_ij
};

struct MarketState {
	Matrix demand;         // lambda
	Vector pickup;         // w^p
	Vector ev_share;       // R
	Matrix ev_flow;        // D
	Matrix transition;     // P
	Vector stationary;     // n
	Vector charge_demand;  // k
	double total_charge_rate = 0.0; // K
	Vector access_c;       // l^c
	Vector access_s;       // l^s
	Vector wait_c;         // w^c
	Vector wait_s;         // w^s
	Vector block_s;
	double ev_operating = 0.0;  // EVs idle or serving trips
	double ev_downtime = 0.0;   // EVs travelling to, waiting at, or served by facilities
	double fleet_ev = 0.0;      // N^e
	double fleet_gas = 0.0;     // N^g
	double revenue = 0.0;
	double profit = 0.0;
	double ev_utilization = 0.0;
	double feasibility_margin = 0.0; // phi_E
};

namespace detail {

inline const json& require(const json& doc, const char* key) {
	if (!doc.is_object() || !doc.contains(key))
		throw ValidationError(std::string("missing field '") + key + "'");
	return doc.at(key);
}

inline double number(const json& doc, const char* key) {
	const json& v = require(doc, key);
	if (!v.is_number()) throw ValidationError(std::string("field '") + key + "' must be a number");
	return v.get<double>();
}

inline int integer(const json& doc, const char* key) {
	const json& v = require(doc, key);
	if (!v.is_number_integer())
		throw ValidationError(std::string("field '") + key + "' must be an integer");
	return v.get<int>();
}

inline Matrix matrix(const json& doc, const char* key, int n) {
	const json& v = require(doc, key);
	if (!v.is_array() || static_cast<int>(v.size()) != n)
		throw ValidationError(std::string("dimension mismatch: '") + key + "' must have " +
		                      std::to_string(n) + " rows");
	Matrix out(n, n);
	for (int i = 0; i < n; ++i) {
		const json& row = v[static_cast<std::size_t>(i)];
		if (!row.is_array() || static_cast<int>(row.size()) != n)
			throw ValidationError(std::string("dimension mismatch: '") + key + "' row " +
			                      std::to_string(i) + " must have " + std::to_string(n) + " entries");
		for (int j = 0; j < n; ++j) {
			const json& e = row[static_cast<std::size_t>(j)];
			if (!e.is_number())
				throw ValidationError(std::string("field '") + key + "' entries must be numbers");
			out(i, j) = e.get<double>();
		}
	}
	return out;
}

// A cap is either a scalar shared by all zones or a per-zone array.
inline Vector per_zone(const json& v, const char* key, int n) {
	if (v.is_number()) return Vector::Constant(n, v.get<double>());
	if (!v.is_array() || static_cast<int>(v.size()) != n)
		throw ValidationError(std::string("dimension mismatch: '") + key + "' must be a number or " +
		                      std::to_string(n) + " numbers");
	Vector out(n);
	for (int i = 0; i < n; ++i) out(i) = v[static_cast<std::size_t>(i)].get<double>();
	return out;
}

inline void positive(double value, const char* name) {
	if (!(value > 0.0) || !std::isfinite(value))
		throw ValidationError(std::string(name) + " must be positive and finite");
}

inline json to_rows(const Matrix& m) {
	json rows = json::array();
	for (Eigen::Index i = 0; i < m.rows(); ++i) {
		json row = json::array();
		for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
		rows.push_back(std::move(row));
	}
	return rows;
}

inline json to_list(const Vector& v) {
	json out = json::array();
	for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
	return out;
}

} // namespace detail

inline ChargeStationSpec parse_charge_spec(const json& doc) {
	ChargeStationSpec spec;
	spec.chargers = detail::integer(doc, "chargers");
	spec.charge_hours = detail::number(doc, "charge_hours");
	if (spec.chargers < 1) throw ValidationError("charge_station.chargers must be >= 1");
	detail::positive(spec.charge_hours, "charge_station.charge_hours");
	return spec;
}

/// Parses a swap-station spec. `charge_hours` defaults to `default_charge_hours`
/// when absent so a scenario only states the battery charge time once.
inline SwapStationSpec parse_swap_spec(const json& doc, std::optional<double> default_charge_hours,
                                       std::vector<std::string>* warnings = nullptr) {
	SwapStationSpec spec;
	spec.bays = detail::integer(doc, "bays");
	spec.chargers = detail::integer(doc, "chargers");
	spec.batteries = detail::integer(doc, "batteries");
	spec.capacity = detail::integer(doc, "capacity");
	spec.swap_hours = detail::number(doc, "swap_hours");
	if (doc.contains("charge_hours"))
		spec.charge_hours = detail::number(doc, "charge_hours");
	else if (default_charge_hours)
		spec.charge_hours = *default_charge_hours;
	else
		throw ValidationError("missing field 'charge_hours'");
	if (spec.bays < 1) throw ValidationError("swap_station.bays must be >= 1");
	if (spec.chargers < 1) throw ValidationError("swap_station.chargers must be >= 1");
	if (spec.batteries < 1) throw ValidationError("swap_station.batteries must be >= 1");
	if (spec.capacity < spec.bays) throw ValidationError("swap_station.capacity must be >= bays");
	detail::positive(spec.swap_hours, "swap_station.swap_hours");
	detail::positive(spec.charge_hours, "swap_station.charge_hours");
	if (warnings && spec.batteries > spec.chargers)
		warnings->push_back("swap_station: batteries exceed chargers; at most chargers batteries "
		                    "recharge at once");
	return spec;
}

/// Validates a scenario document and returns the immutable Scenario. Throws
/// ValidationError naming the first violated constraint.
inline Scenario validate_scenario(const json& doc, std::vector<std::string>* warnings = nullptr) {
	if (!doc.is_object()) throw ValidationError("scenario document must be a JSON object");
	Scenario s;
	s.zones = detail::integer(doc, "zones");
	s.stages = detail::integer(doc, "stages");
	if (s.zones < 2) throw ValidationError("zones must be >= 2");
	if (s.stages < 1) throw ValidationError("stages must be >= 1");

	s.base_demand = detail::matrix(doc, "base_demand", s.zones);
	s.trip_time = detail::matrix(doc, "trip_time", s.zones);
	for (int i = 0; i < s.zones; ++i)
		for (int j = 0; j < s.zones; ++j) {
			if (!(s.base_demand(i, j) >= 0.0) || !std::isfinite(s.base_demand(i, j)))
				throw ValidationError("base_demand must be nonnegative (entry " + std::to_string(i) +
				                      "," + std::to_string(j) + ")");
			if (!(s.trip_time(i, j) > 0.0) || !std::isfinite(s.trip_time(i, j)))
				throw ValidationError("trip_time must be strictly positive (entry " +
				                      std::to_string(i) + "," + std::to_string(j) + ")");
		}

	s.phi = detail::number(doc, "phi");
	s.psi = detail::number(doc, "psi");
	s.alpha = detail::number(doc, "alpha");
	s.logit_sensitivity = detail::number(doc, "logit_sensitivity");
	s.outside_price = detail::number(doc, "outside_price");
	s.gamma_e = detail::number(doc, "gamma_e");
	s.gamma_g = detail::number(doc, "gamma_g");
	s.battery_range_hours = detail::number(doc, "battery_range_hours");
	s.cost_c = detail::number(doc, "cost_c");
	s.cost_s = detail::number(doc, "cost_s");
	detail::positive(s.phi, "phi");
	detail::positive(s.psi, "psi");
	detail::positive(s.alpha, "alpha");
	detail::positive(s.logit_sensitivity, "logit_sensitivity");
	detail::positive(s.outside_price, "outside_price");
	detail::positive(s.gamma_e, "gamma_e");
	detail::positive(s.gamma_g, "gamma_g");
	detail::positive(s.battery_range_hours, "battery_range_hours");
	detail::positive(s.cost_c, "cost_c");
	detail::positive(s.cost_s, "cost_s");
	if (warnings && s.gamma_e >= s.gamma_g)
		warnings->push_back("gamma_e >= gamma_g: EVs are not cheaper to operate than gasoline vehicles");

	const json& budgets = detail::require(doc, "budgets");
	if (!budgets.is_array() || static_cast<int>(budgets.size()) != s.stages)
		throw ValidationError("dimension mismatch: 'budgets' must have one entry per stage");
	for (const json& b : budgets) {
		if (!b.is_number() || !(b.get<double>() >= 0.0))
			throw ValidationError("budgets must be nonnegative numbers");
		s.budgets.push_back(b.get<double>());
	}

	const json& cap = detail::require(doc, "cap");
	s.cap_c = detail::per_zone(detail::require(cap, "charge"), "cap.charge", s.zones);
	s.cap_s = detail::per_zone(detail::require(cap, "swap"), "cap.swap", s.zones);
	if ((s.cap_c.array() < 0.0).any() || (s.cap_s.array() < 0.0).any())
		throw ValidationError("cap must be nonnegative");

	s.charge_spec = parse_charge_spec(detail::require(doc, "charge_station"));
	s.swap_spec = parse_swap_spec(detail::require(doc, "swap_station"), s.charge_spec.charge_hours,
	                              warnings);
	return s;
}

inline json to_json(const ChargeStationSpec& spec) {
	return {{"chargers", spec.chargers}, {"charge_hours", spec.charge_hours}};
}

inline json to_json(const SwapStationSpec& spec) {
	return {{"bays", spec.bays},         {"chargers", spec.chargers},
	        {"batteries", spec.batteries}, {"capacity", spec.capacity},
	        {"swap_hours", spec.swap_hours}, {"charge_hours", spec.charge_hours}};
}

inline json to_json(const Scenario& s) {
	json doc;
	doc["zones"] = s.zones;
	doc["stages"] = s.stages;
	doc["base_demand"] = detail::to_rows(s.base_demand);
	doc["trip_time"] = detail::to_rows(s.trip_time);
	doc["phi"] = s.phi;
	doc["psi"] = s.psi;
	doc["alpha"] = s.alpha;
	doc["logit_sensitivity"] = s.logit_sensitivity;
	doc["outside_price"] = s.outside_price;
	doc["gamma_e"] = s.gamma_e;
	doc["gamma_g"] = s.gamma_g;
	doc["battery_range_hours"] = s.battery_range_hours;
	doc["cost_c"] = s.cost_c;
	doc["cost_s"] = s.cost_s;
	doc["budgets"] = s.budgets;
	doc["cap"] = {{"charge", detail::to_list(s.cap_c)}, {"swap", detail::to_list(s.cap_s)}};
	doc["charge_station"] = to_json(s.charge_spec);
	doc["swap_station"] = to_json(s.swap_spec);
	return doc;
}

/// Re-validates an in-memory scenario; returns an equal copy when valid.
inline Scenario validate_scenario(const Scenario& s) { return validate_scenario(to_json(s)); }

/// Copy of `s` with the per-stage budgets replaced by `total / stages` each.
inline Scenario with_total_budget(Scenario s, double total) {
	for (double& b : s.budgets) b = total / s.stages;
	return s;
}

inline json to_json(const MarketState& m) {
	return {{"demand", detail::to_rows(m.demand)},
	        {"pickup", detail::to_list(m.pickup)},
	        {"ev_share", detail::to_list(m.ev_share)},
	        {"stationary", detail::to_list(m.stationary)},
	        {"charge_demand", detail::to_list(m.charge_demand)},
	        {"total_charge_rate", m.total_charge_rate},
	        {"access_c", detail::to_list(m.access_c)},
	        {"access_s", detail::to_list(m.access_s)},
	        {"wait_c", detail::to_list(m.wait_c)},
	        {"wait_s", detail::to_list(m.wait_s)},
	        {"block_s", detail::to_list(m.block_s)},
	        {"fleet_ev", m.fleet_ev},
	        {"fleet_gas", m.fleet_gas},
	        {"revenue", m.revenue},
	        {"profit", m.profit},
	        {"ev_utilization", m.ev_utilization},
	        {"feasibility_margin", m.feasibility_margin}};
}

inline json to_json(const OperationalDecision& ops) {
	return {{"price", detail::to_list(ops.price)},
	        {"idle_ev", detail::to_list(ops.idle_ev)},
	        {"idle_gas", detail::to_list(ops.idle_gas)},
	        {"rebalance", detail::to_rows(ops.rebalance)},
	        {"charge_share", detail::to_list(ops.charge_share)}};
}

} // namespace chargenet

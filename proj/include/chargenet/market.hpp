#pragma once

// Passenger side of the ride-hailing market: pickup times, price-elastic
// demand, and zonal flow balance.

#include <cmath>
#include <string>

#include "chargenet/error.hpp"
#include "chargenet/model.hpp"

namespace chargenet::market {

/// Square-root law: pickup time falls with the number of idle vehicles.
inline double pickup_time(double idle_ev, double idle_gas, double phi) {
	const double idle = idle_ev + idle_gas;
	if (!(idle > 0.0))
		throw DomainError("pickup_time: zone has no idle vehicles (" + std::to_string(idle) + ")");
	return phi / std::sqrt(idle);
}

/// Binary logit share of travellers choosing ride-hailing over an outside
/// option priced in proportion to trip time. Callers only depend on the call
/// operator, so another decreasing curve can be swapped in.
struct LogitDemand {
	double alpha = 0.0;             // value of time, $/h
	double sensitivity = 0.0;       // 1/$
	double outside_price = 0.0;     // $/h of trip time

	explicit LogitDemand(const Scenario& s)
	    : alpha(s.alpha), sensitivity(s.logit_sensitivity), outside_price(s.outside_price) {}
	LogitDemand(double alpha_, double sensitivity_, double outside_price_)
	    : alpha(alpha_), sensitivity(sensitivity_), outside_price(outside_price_) {}

	double share(double price, double trip_hours, double pickup) const {
		const double cost = price * trip_hours + alpha * pickup;
		const double outside = outside_price * trip_hours;
		// exp(-e c) / (exp(-e c) + exp(-e c0)) = 1 / (1 + exp(e (c - c0)))
		const double z = sensitivity * (cost - outside);
		if (z > 0.0) {
			const double e = std::exp(-z);
			return e / (1.0 + e);
		}
		return 1.0 / (1.0 + std::exp(z));
	}

	double operator()(double potential, double price, double trip_hours, double pickup) const {
		return potential * share(price, trip_hours, pickup);
	}
};

inline double demand(double potential, double price, double trip_hours, double pickup, double alpha,
                     double sensitivity, double outside_price) {
	return LogitDemand(alpha, sensitivity, outside_price)(potential, price, trip_hours, pickup);
}

/// Realized demand for every origin-destination pair.
template <typename Curve = LogitDemand>
Matrix demand_matrix(const Scenario& s, const Vector& price, const Vector& pickup, const Curve& curve) {
	Matrix out(s.zones, s.zones);
	for (int i = 0; i < s.zones; ++i)
		for (int j = 0; j < s.zones; ++j)
			out(i, j) = curve(s.base_demand(i, j), price(i), s.trip_time(i, j), pickup(i));
	return out;
}

inline Matrix demand_matrix(const Scenario& s, const Vector& price, const Vector& pickup) {
	return demand_matrix(s, price, pickup, LogitDemand(s));
}

/// Outflow minus inflow per zone; all zeros iff the flows are balanced.
inline Vector flow_residual(const Matrix& demand, const Matrix& rebalance) {
	const Matrix total = demand + rebalance;
	return total.rowwise().sum() - total.colwise().sum().transpose();
}

} // namespace chargenet::market

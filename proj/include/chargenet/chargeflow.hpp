#pragma once

// EV movement chain: flow matrix, transition matrix, stationary charging
// demand distribution, and the energy-balance scaling that turns it into
// charging rates.

#include <cmath>
#include <string>
#include <vector>

#include "chargenet/error.hpp"
#include "chargenet/model.hpp"

namespace chargenet::chargeflow {

struct EvFlow {
	Matrix D; // average EVs moving from i to j (diagonal: staying in i)
	Vector R; // EV share of each zone's idle fleet
};

/// EV flow matrix. Pickup time accrues on every outgoing trip of zone i;
/// intra-zone trips and rebalancing add to the diagonal.
inline EvFlow demand_matrix(const Vector& idle_ev, const Vector& idle_gas, const Matrix& demand,
                            const Matrix& rebalance, const Vector& pickup, const Matrix& trip_time) {
	const Eigen::Index m = idle_ev.size();
	EvFlow out{Matrix(m, m), Vector(m)};
	for (Eigen::Index i = 0; i < m; ++i) {
		if (!(idle_ev(i) > 0.0))
			throw DomainError("demand_matrix: idle EVs must be positive in zone " + std::to_string(i));
		const double r = idle_ev(i) / (idle_ev(i) + idle_gas(i));
		out.R(i) = r;
		for (Eigen::Index j = 0; j < m; ++j)
			out.D(i, j) = r * (demand(i, j) + rebalance(i, j)) * trip_time(i, j);
		out.D(i, i) += idle_ev(i) + r * demand.row(i).sum() * pickup(i);
	}
	return out;
}

inline Matrix transition_matrix(const Matrix& D) {
	Matrix P = D;
	for (Eigen::Index i = 0; i < D.rows(); ++i) {
		const double total = D.row(i).sum();
		if (!(total > 0.0))
			throw DomainError("transition_matrix: row " + std::to_string(i) + " of D sums to zero");
		P.row(i) /= total;
	}
	return P;
}

namespace detail {

// Every state reaches every other along positive entries.
inline bool irreducible(const Matrix& P) {
	const Eigen::Index m = P.rows();
	for (Eigen::Index start = 0; start < m; ++start) {
		std::vector<char> seen(static_cast<std::size_t>(m), 0);
		std::vector<Eigen::Index> stack{start};
		seen[static_cast<std::size_t>(start)] = 1;
		Eigen::Index count = 1;
		while (!stack.empty()) {
			const Eigen::Index u = stack.back();
			stack.pop_back();
			for (Eigen::Index v = 0; v < m; ++v)
				if (P(u, v) > 0.0 && !seen[static_cast<std::size_t>(v)]) {
					seen[static_cast<std::size_t>(v)] = 1;
					++count;
					stack.push_back(v);
				}
		}
		if (count != m) return false;
	}
	return true;
}

} // namespace detail

/// Unique positive left eigenvector of a row-stochastic P with unit sum.
/// Solves (P^T - I) n = 0 with the last balance row replaced by sum(n) = 1.
/// A P with zero entries is accepted (with a warning) when irreducible.
inline Vector stationary_distribution(const Matrix& P, std::vector<std::string>* warnings = nullptr) {
	const Eigen::Index m = P.rows();
	if (m == 0 || P.cols() != m) throw DomainError("stationary_distribution: P must be square");
	if ((P.array() < 0.0).any()) throw DomainError("stationary_distribution: P has negative entries");
	if (!(P.array() > 0.0).all()) {
		if (!detail::irreducible(P))
			throw DomainError("stationary_distribution: P is reducible; stationary distribution not unique");
		if (warnings) warnings->push_back("stationary_distribution: P is not strictly positive");
	}
	Matrix A = P.transpose() - Matrix::Identity(m, m);
	A.row(m - 1).setOnes();
	Vector rhs = Vector::Zero(m);
	rhs(m - 1) = 1.0;
	Vector n = A.partialPivLu().solve(rhs);
	// One refinement step keeps the residual near machine precision.
	n += A.partialPivLu().solve(rhs - A * n);
	return n;
}

/// Power iteration from the uniform distribution.
inline Vector power_iteration(const Matrix& P, int steps) {
	Eigen::RowVectorXd n = Eigen::RowVectorXd::Constant(P.rows(), 1.0 / static_cast<double>(P.rows()));
	for (int s = 0; s < steps; ++s) {
		n = n * P;
		n /= n.sum();
	}
	return n.transpose();
}

/// EVs idle or serving trips (including pickup), summed over zones.
inline double ev_operating_time(const Vector& idle_ev, const Vector& ev_share, const Matrix& demand,
                                const Matrix& rebalance, const Vector& pickup, const Matrix& trip_time) {
	double total = idle_ev.sum();
	for (Eigen::Index i = 0; i < idle_ev.size(); ++i) {
		double busy = 0.0;
		for (Eigen::Index j = 0; j < idle_ev.size(); ++j)
			busy += demand(i, j) * pickup(i) + (demand(i, j) + rebalance(i, j)) * trip_time(i, j);
		total += ev_share(i) * busy;
	}
	return total;
}

/// Effective range left after travelling to charging facilities, weighted by
/// where charging demand arises. Access times only count where that mode is used.
inline double feasibility_margin(const Vector& n, const Vector& share, const Vector& access_c,
                                 const Vector& access_s, double range_hours) {
	double margin = range_hours;
	for (Eigen::Index i = 0; i < n.size(); ++i) {
		if (share(i) > 0.0) margin -= share(i) * n(i) * access_c(i);
		if (share(i) < 1.0) margin -= (1.0 - share(i)) * n(i) * access_s(i);
	}
	return margin;
}

struct ChargingRate {
	double K = 0.0;       // veh/h
	Vector k;             // n * K
	double margin = 0.0;  // feasibility margin
};

inline ChargingRate total_charging_rate(const Vector& n, const Vector& share, const Vector& access_c,
                                        const Vector& access_s, double range_hours,
                                        double ev_operating) {
	ChargingRate out;
	out.margin = feasibility_margin(n, share, access_c, access_s, range_hours);
	if (!(out.margin >= kPositiveFloor))
		throw InfeasibleError("feasibility margin " + std::to_string(out.margin) +
		                      " h is not positive: EVs cannot reach charging facilities within range");
	out.K = ev_operating / out.margin;
	out.k = n * out.K;
	return out;
}

} // namespace chargenet::chargeflow

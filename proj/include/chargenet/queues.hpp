#pragma once

// Congestion at both facility types: square-root access times, the M/M/V
// (Erlang C) plug-in charging queue, and the battery-swap station modelled as a
// mixed open (EVs) / closed (batteries) queue observed every swap duration.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "chargenet/error.hpp"
#include "chargenet/model.hpp"

namespace chargenet::queues {

struct QueueMetrics {
	double utilization = 0.0;
	double empty_prob = 0.0; // P0, charging queue only
	double wait = 0.0;       // hours in queue before service
	double block = 0.0;      // swap stations only: fraction of arrivals turned away
	double full_prob = 0.0;  // swap stations only: station full at a sampling epoch
};

/// Expected travel time to the nearest of `stations` facilities.
inline double access_time(double stations, double psi) {
	if (!(stations > 0.0))
		throw DomainError("access_time: no facility of this type in the zone (count " +
		                  std::to_string(stations) + ")");
	return psi / std::sqrt(stations);
}

/// Erlang C expected wait of an M/M/V queue with arrival rate `arrival` per
/// station. P0 sums from v = 0.
inline QueueMetrics erlang_c_wait(double arrival, const ChargeStationSpec& spec) {
	const int servers = spec.chargers;
	const double load = arrival * spec.charge_hours; // offered load a
	const double rho = load / servers;
	if (!(rho < 1.0))
		throw UnstableQueueError("charging queue unstable: utilization " + std::to_string(rho));
	QueueMetrics out;
	out.utilization = rho;
	if (arrival <= 0.0) {
		out.empty_prob = 1.0;
		return out;
	}
	// Terms a^v / v! accumulated relative to the largest to avoid overflow.
	double term = 1.0;
	double partial = 1.0; // sum_{v=0}^{V-1} a^v/v!
	for (int v = 1; v < servers; ++v) {
		term *= load / v;
		partial += term;
	}
	const double top = term * load / servers; // a^V / V!
	const double denom = partial + top / (1.0 - rho);
	out.empty_prob = 1.0 / denom;
	const double wait_prob = top / (1.0 - rho) * out.empty_prob;
	out.wait = wait_prob * spec.charge_hours / (servers * (1.0 - rho));
	return out;
}

namespace detail {

inline std::vector<double> poisson_pmf(double mean, int count) {
	std::vector<double> pmf(static_cast<std::size_t>(count), 0.0);
	if (count == 0) return pmf;
	double log_p = -mean;
	for (int u = 0; u < count; ++u) {
		if (u > 0) log_p += std::log(mean) - std::log(static_cast<double>(u));
		pmf[static_cast<std::size_t>(u)] = mean > 0.0 ? std::exp(log_p) : (u == 0 ? 1.0 : 0.0);
	}
	return pmf;
}

inline std::vector<std::vector<double>> binomial_table(int trials, double success) {
	std::vector<std::vector<double>> table(static_cast<std::size_t>(trials) + 1);
	for (int n = 0; n <= trials; ++n) {
		auto& row = table[static_cast<std::size_t>(n)];
		row.assign(static_cast<std::size_t>(n) + 1, 0.0);
		for (int v = 0; v <= n; ++v) {
			const double log_choose = std::lgamma(n + 1.0) - std::lgamma(v + 1.0) - std::lgamma(n - v + 1.0);
			double p = log_choose;
			p += v > 0 ? v * std::log(success) : 0.0;
			p += n - v > 0 ? (n - v) * std::log1p(-success) : 0.0;
			row[static_cast<std::size_t>(v)] = std::exp(p);
		}
	}
	return table;
}

} // namespace detail

/// Embedded Markov chain of one swap station sampled every swap duration.
/// State (i, j): i EVs in the station, j fully charged batteries.
class SwapChain {
public:
	/// Only exact zeros are dropped: in heavy traffic the rare downward moves
	/// are what keeps the chain irreducible.
	static constexpr double kNegligible = 0.0;
	/// Poisson means per interval above this are capped in the transition
	/// kernel so P(no arrival) stays a representable double; otherwise the
	/// chain cannot leave the full level and loses irreducibility. The cap
	/// changes transition entries only for stations whose capacity is near it.
	static constexpr double kMaxKernelMean = 700.0;

	SwapChain(double arrival, const SwapStationSpec& spec) : spec_(spec), arrival_(arrival) {
		if (!(arrival > 0.0)) throw DomainError("swap_chain_build: arrival rate must be positive");
		build();
	}

	const SwapStationSpec& spec() const { return spec_; }
	double arrival() const { return arrival_; }
	int states() const { return (spec_.capacity + 1) * (spec_.batteries + 1); }
	int index(int evs, int full) const { return evs * (spec_.batteries + 1) + full; }

	/// Poisson arrival pmf over one sampling interval.
	double arrival_pmf(int u) const {
		return u >= 0 && u < static_cast<int>(arrivals_.size()) ? arrivals_[static_cast<std::size_t>(u)] : 0.0;
	}

	/// Probability that `completed` of `charging` batteries finish in one interval.
	double completion_pmf(int charging, int completed) const {
		if (charging < 0 || charging > spec_.chargers || completed < 0 || completed > charging) return 0.0;
		return completions_[static_cast<std::size_t>(charging)][static_cast<std::size_t>(completed)];
	}

	const Eigen::SparseMatrix<double, Eigen::RowMajor>& transition() const { return transition_; }

	/// Equilibrium distribution over states (solved on first use).
	const Vector& equilibrium() const {
		if (equilibrium_.size() == 0) equilibrium_ = solve_equilibrium();
		return equilibrium_;
	}

	double probability(int evs, int full) const { return equilibrium()(index(evs, full)); }

	/// Expected EV count at sampling epochs.
	double mean_evs() const {
		const Vector& g = equilibrium();
		double total = 0.0;
		for (int i = 0; i <= spec_.capacity; ++i)
			for (int j = 0; j <= spec_.batteries; ++j) total += i * g(index(i, j));
		return total;
	}

	/// Probability that the station is full at a sampling epoch.
	double full_prob() const {
		const Vector& g = equilibrium();
		double total = 0.0;
		for (int j = 0; j <= spec_.batteries; ++j) total += g(index(spec_.capacity, j));
		return std::clamp(total, 0.0, 1.0);
	}

	/// Swaps completed per hour at equilibrium.
	double throughput() const {
		const Vector& g = equilibrium();
		double total = 0.0;
		for (int i = 0; i <= spec_.capacity; ++i)
			for (int j = 0; j <= spec_.batteries; ++j) total += std::min({i, j, spec_.bays}) * g(index(i, j));
		return total / spec_.swap_hours;
	}

	/// Fraction of arriving EVs turned away: expected arrivals beyond capacity
	/// per interval over expected arrivals per interval.
	double blocking() const {
		const Vector& g = equilibrium();
		const int W = spec_.capacity;
		const double mean = arrival_ * spec_.swap_hours;
		double lost = 0.0;
		for (int i = 0; i <= W; ++i)
			for (int j = 0; j <= spec_.batteries; ++j) {
				const double p = g(index(i, j));
				if (p == 0.0) continue;
				const int room = W - (i - std::min({i, j, spec_.bays}));
				// E[max(0, u - room)] = mean - room + E[max(0, room - u)]
				double under = 0.0;
				for (int u = 0; u < room; ++u) under += (room - u) * arrival_pmf(u);
				lost += p * std::max(0.0, mean - room + under);
			}
		return std::clamp(lost / mean, 0.0, 1.0);
	}

	/// Stationary distribution by power iteration from `start`; used to check
	/// that the direct solve does not depend on initialization.
	Vector iterate_from(Vector start, int steps) const {
		start /= start.sum();
		for (int s = 0; s < steps; ++s) start = (start.transpose() * transition_).transpose();
		return start;
	}

private:
	void build() {
		const int W = spec_.capacity;
		const int B = spec_.batteries;
		const double mean = arrival_ * spec_.swap_hours;
		arrivals_ = detail::poisson_pmf(mean, W + 2);
		const std::vector<double> kernel =
		    mean > kMaxKernelMean ? detail::poisson_pmf(kMaxKernelMean, W + 2) : arrivals_;
		completions_ = detail::binomial_table(spec_.chargers, -std::expm1(-spec_.swap_hours / spec_.charge_hours));

		std::vector<Eigen::Triplet<double>> entries;
		entries.reserve(static_cast<std::size_t>(states()) * 12 * 24);
		std::vector<double> ev_mass(static_cast<std::size_t>(W) + 1);
		for (int i = 0; i <= W; ++i) {
			for (int j = 0; j <= B; ++j) {
				const int departed = std::min({i, j, spec_.bays});
				const int base = i - departed;
				// EV count distribution at the next epoch; the full-queue state
				// takes the exact complement so each row sums to one.
				double below = 0.0;
				for (int next = base; next < W; ++next) {
					ev_mass[static_cast<std::size_t>(next)] = kernel[static_cast<std::size_t>(next - base)];
					below += ev_mass[static_cast<std::size_t>(next)];
				}
				ev_mass[static_cast<std::size_t>(W)] = std::max(0.0, 1.0 - below);
				const int charging = std::min(B - j, spec_.chargers);
				const int from = index(i, j);
				for (int done = 0; done <= charging; ++done) {
					const double pb = completion_pmf(charging, done);
					if (pb == 0.0) continue;
					const int next_full = j + done - departed;
					for (int next = base; next <= W; ++next) {
						const double p = ev_mass[static_cast<std::size_t>(next)] * pb;
						if (!(p > kNegligible)) continue;
						entries.emplace_back(from, index(next, next_full), p);
					}
				}
			}
		}
		transition_.resize(states(), states());
		transition_.setFromTriplets(entries.begin(), entries.end());
		transition_.makeCompressed();
	}

	// Grassmann-Taksar-Heyman state reduction, eliminating the highest EV
	// counts first. At most `bays` EVs leave per interval, so a state at level l
	// only reaches levels >= l - bays among those not yet eliminated and each
	// elimination touches O(n * (bays + 1) * (B + 1)) entries.
	Vector solve_equilibrium() const {
		const int n = states();
		const int width = spec_.batteries + 1;
		std::vector<double> p(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0.0); // column-major
		auto at = [&](int i, int j) -> double& {
			return p[static_cast<std::size_t>(j) * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)];
		};
		for (int i = 0; i < n; ++i)
			for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(transition_, i); it; ++it)
				at(i, static_cast<int>(it.col())) = it.value();

		std::vector<double> leave(static_cast<std::size_t>(n), 0.0);
		for (int k = n - 1; k > 0; --k) {
			const int level = k / width;
			const int first = std::max(0, level - spec_.bays) * width;
			double out = 0.0;
			for (int j = first; j < k; ++j) out += at(k, j);
			leave[static_cast<std::size_t>(k)] = out;
			if (!(out > 0.0)) continue; // unreachable remainder; handled by normalization
			double* col_k = &at(0, k);
			for (int j = first; j < k; ++j) {
				const double f = at(k, j) / out;
				if (f == 0.0) continue;
				double* col_j = &at(0, j);
				for (int i = 0; i < k; ++i) col_j[i] += col_k[i] * f;
			}
		}
		Vector g(n);
		g(0) = 1.0;
		for (int k = 1; k < n; ++k) {
			const double out = leave[static_cast<std::size_t>(k)];
			if (!(out > 0.0)) {
				g(k) = 0.0;
				continue;
			}
			double in = 0.0;
			const double* col_k = &at(0, k);
			for (int i = 0; i < k; ++i) in += g(i) * col_k[i];
			g(k) = in / out;
			if (g(k) > 1.0) g.head(k + 1) /= g(k); // heavy traffic: g(0) is tiny
		}
		g /= g.sum();
		return g;
	}

	SwapStationSpec spec_;
	double arrival_;
	std::vector<double> arrivals_;
	std::vector<std::vector<double>> completions_;
	Eigen::SparseMatrix<double, Eigen::RowMajor> transition_;
	mutable Vector equilibrium_;
};

inline SwapChain swap_chain_build(double arrival, const SwapStationSpec& spec) {
	return SwapChain(arrival, spec);
}

/// Little's-law wait at a swap station, floored at zero. The admitted rate is
/// the arrival rate net of the chain's expected overflow, which equals the
/// equilibrium swap throughput.
inline QueueMetrics swap_wait(const SwapChain& chain) {
	QueueMetrics out;
	out.block = chain.blocking();
	out.full_prob = chain.full_prob();
	double admitted = chain.arrival() * (1.0 - out.block);
	if (!(admitted > 0.0)) admitted = chain.throughput(); // blocking rounded to one
	if (!(admitted > 0.0)) throw DomainError("swap_wait: no admitted arrivals");
	out.wait = std::max(0.0, chain.mean_evs() / admitted - chain.spec().swap_hours);
	out.utilization = admitted * chain.spec().swap_hours / chain.spec().bays;
	return out;
}

inline QueueMetrics swap_wait(double arrival, const SwapStationSpec& spec) {
	if (arrival <= 0.0) return {};
	return swap_wait(SwapChain(arrival, spec));
}

/// Shape-preserving (Fritsch-Carlson) cubic interpolant on a sorted grid.
class MonotoneCubic {
public:
	MonotoneCubic() = default;
	MonotoneCubic(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
		const std::size_t n = x_.size();
		slope_.assign(n, 0.0);
		if (n < 2) return;
		std::vector<double> secant(n - 1);
		for (std::size_t k = 0; k + 1 < n; ++k) secant[k] = (y_[k + 1] - y_[k]) / (x_[k + 1] - x_[k]);
		slope_[0] = secant[0];
		slope_[n - 1] = secant[n - 2];
		for (std::size_t k = 1; k + 1 < n; ++k) {
			if (secant[k - 1] * secant[k] <= 0.0) {
				slope_[k] = 0.0;
			} else {
				// weighted harmonic mean (Fritsch-Butland), valid on nonuniform grids
				const double h0 = x_[k] - x_[k - 1];
				const double h1 = x_[k + 1] - x_[k];
				const double w0 = 2.0 * h1 + h0;
				const double w1 = h1 + 2.0 * h0;
				slope_[k] = (w0 + w1) / (w0 / secant[k - 1] + w1 / secant[k]);
			}
		}
	}

	double operator()(double x) const {
		if (x <= x_.front()) return y_.front();
		if (x >= x_.back()) return y_.back();
		const auto it = std::upper_bound(x_.begin(), x_.end(), x);
		const std::size_t k = static_cast<std::size_t>(it - x_.begin()) - 1;
		const double h = x_[k + 1] - x_[k];
		const double s = (x - x_[k]) / h;
		const double s2 = s * s;
		const double s3 = s2 * s;
		return (2 * s3 - 3 * s2 + 1) * y_[k] + (s3 - 2 * s2 + s) * h * slope_[k] +
		       (-2 * s3 + 3 * s2) * y_[k + 1] + (s3 - s2) * h * slope_[k + 1];
	}

	double lower() const { return x_.front(); }
	double upper() const { return x_.back(); }

private:
	std::vector<double> x_, y_, slope_;
};

/// Swap-station wait and blocking cached over a grid of per-station arrival
/// rates; read-only after construction. Step 0.1 veh/h over
/// [0.01, 1.5 * bays / swap_hours], then a geometric tail for saturated rates.
class SwapWaitTable {
public:
	explicit SwapWaitTable(const SwapStationSpec& spec, double step = 0.1) : spec_(spec) {
		std::vector<double> rates{0.0};
		const double dense_top = 1.5 * spec.bays / spec.swap_hours;
		for (double r = 0.01; r < dense_top; r += step) rates.push_back(r);
		rates.push_back(dense_top);
		for (double r = dense_top * 1.25; r < dense_top * 400.0; r *= 1.25) rates.push_back(r);
		std::vector<double> waits, blocks;
		waits.reserve(rates.size());
		blocks.reserve(rates.size());
		for (double r : rates) {
			if (r == 0.0) {
				waits.push_back(0.0);
				blocks.push_back(0.0);
				continue;
			}
			QueueMetrics m = swap_wait(SwapChain(r, spec));
			waits.push_back(m.wait);
			blocks.push_back(m.block);
		}
		wait_ = MonotoneCubic(rates, waits);
		block_ = MonotoneCubic(rates, std::move(blocks));
		saturated_wait_ = waits.back();
	}

	const SwapStationSpec& spec() const { return spec_; }

	double wait(double arrival) const {
		if (arrival <= 0.0) return 0.0;
		if (arrival >= wait_.upper()) return saturated_wait_;
		return std::max(0.0, wait_(arrival));
	}

	double block(double arrival) const {
		if (arrival <= 0.0) return 0.0;
		return std::clamp(block_(arrival), 0.0, 1.0);
	}

private:
	SwapStationSpec spec_;
	MonotoneCubic wait_;
	MonotoneCubic block_;
	double saturated_wait_ = 0.0;
};

enum class QueueKind { charging, swapping };

struct ProbeRow {
	double stations = 0.0;
	double wait = 0.0;       // NaN when the charging queue is unstable
	double block = 0.0;
	bool stable = true;
	double first_difference = std::numeric_limits<double>::quiet_NaN();
	double second_difference = std::numeric_limits<double>::quiet_NaN();
};

struct ProbeResult {
	std::vector<ProbeRow> rows;
	bool convex = true;      // no second difference below -tolerance
	bool decreasing = true;  // no positive first difference
	int unstable_points = 0;
};

inline constexpr double kConvexityTolerance = 1e-6;

/// Waits at one station when `demand` veh/h is split evenly over each count
/// of stations in `stations`. Differences are taken over consecutive stable
/// points; unstable points are reported, not thrown.
inline ProbeResult convexity_probe(QueueKind kind, double demand, const std::vector<double>& stations,
                                   const ChargeStationSpec& charge, const SwapStationSpec& swap,
                                   double tolerance = kConvexityTolerance) {
	if (!(demand > 0.0)) throw DomainError("convexity_probe: demand must be positive");
	ProbeResult out;
	for (double x : stations) {
		ProbeRow row;
		row.stations = x;
		const double arrival = demand / x;
		if (kind == QueueKind::charging) {
			try {
				row.wait = erlang_c_wait(arrival, charge).wait;
			} catch (const UnstableQueueError&) {
				row.stable = false;
				row.wait = std::numeric_limits<double>::quiet_NaN();
				++out.unstable_points;
			}
		} else {
			QueueMetrics m = swap_wait(arrival, swap);
			row.wait = m.wait;
			row.block = m.block;
		}
		out.rows.push_back(row);
	}
	for (std::size_t k = 1; k < out.rows.size(); ++k) {
		auto& cur = out.rows[k];
		const ProbeRow prev = out.rows[k - 1];
		if (!cur.stable || !prev.stable) continue;
		cur.first_difference = cur.wait - prev.wait;
		if (cur.first_difference > tolerance) out.decreasing = false;
		if (k >= 2 && out.rows[k - 2].stable) {
			auto& mid = out.rows[k - 1];
			mid.second_difference = cur.wait - 2.0 * mid.wait + out.rows[k - 2].wait;
			if (mid.second_difference < -tolerance) out.convex = false;
		}
	}
	return out;
}

} // namespace chargenet::queues

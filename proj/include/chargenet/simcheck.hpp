#pragma once

// Continuous-time discrete-event simulations used as independent oracles for
// the closed-form charging queue and the sampled swap-station chain.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "chargenet/error.hpp"
#include "chargenet/model.hpp"

namespace chargenet::simcheck {

struct SimResult {
	double mean_wait = 0.0;    // hours, among admitted arrivals
	double ci_halfwidth = 0.0; // 95% batch-means half-width, hours
	double block_rate = 0.0;
	std::int64_t admitted = 0;
	std::int64_t blocked = 0;
};

inline constexpr int kBatches = 200;

namespace detail {

// Batch means over the post-warmup waits (contiguous equal-size batches).
class BatchMeans {
public:
	explicit BatchMeans(std::int64_t expected) : batch_size_(std::max<std::int64_t>(1, expected / kBatches)) {}

	void add(double value) {
		sum_ += value;
		++count_;
		current_ += value;
		if (++in_batch_ == batch_size_) {
			batches_.push_back(current_ / static_cast<double>(batch_size_));
			current_ = 0.0;
			in_batch_ = 0;
		}
	}

	double mean() const { return count_ > 0 ? sum_ / static_cast<double>(count_) : 0.0; }

	double halfwidth() const {
		const std::size_t n = batches_.size();
		if (n < 2) return std::numeric_limits<double>::infinity();
		double m = 0.0;
		for (double b : batches_) m += b;
		m /= static_cast<double>(n);
		double var = 0.0;
		for (double b : batches_) var += (b - m) * (b - m);
		var /= static_cast<double>(n - 1);
		return 1.96 * std::sqrt(var / static_cast<double>(n));
	}

	std::int64_t count() const { return count_; }

private:
	std::int64_t batch_size_;
	std::int64_t in_batch_ = 0;
	std::int64_t count_ = 0;
	double current_ = 0.0;
	double sum_ = 0.0;
	std::vector<double> batches_;
};

inline std::int64_t warmup_for(std::int64_t arrivals) { return arrivals / 20; }

} // namespace detail

/// FCFS M/M/V simulation: each arrival takes the earliest-free charger.
/// The first 5% of arrivals are discarded as warmup.
inline SimResult des_mmV(double arrival, const ChargeStationSpec& spec, std::int64_t arrivals,
                         std::uint64_t seed) {
	if (!(arrival * spec.charge_hours / spec.chargers < 1.0))
		throw UnstableQueueError("des_mmV: utilization must be below one");
	if (arrivals < 1) throw DomainError("des_mmV: need at least one arrival");
	std::mt19937_64 rng(seed);
	std::exponential_distribution<double> gap(arrival);
	std::exponential_distribution<double> service(1.0 / spec.charge_hours);
	std::priority_queue<double, std::vector<double>, std::greater<>> free_at;
	for (int v = 0; v < spec.chargers; ++v) free_at.push(0.0);

	const std::int64_t warmup = detail::warmup_for(arrivals);
	detail::BatchMeans stats(arrivals);
	double now = 0.0;
	for (std::int64_t n = 0; n < arrivals + warmup; ++n) {
		now += gap(rng);
		const double server = free_at.top();
		free_at.pop();
		const double start = std::max(now, server);
		free_at.push(start + service(rng));
		if (n >= warmup) stats.add(start - now);
	}
	SimResult out;
	out.mean_wait = stats.mean();
	out.ci_halfwidth = stats.halfwidth();
	out.admitted = stats.count();
	return out;
}

/// Event-driven swap station: Poisson EV arrivals, `bays` swap bays with
/// constant swap time, a closed loop of `batteries` batteries recharged on at
/// most `chargers` chargers with exponential times. An EV arriving to find
/// `capacity` EVs present is blocked. A swap needs a free bay and a full
/// battery; the depleted battery is plugged in when the swap completes.
inline SimResult des_swap(double arrival, const SwapStationSpec& spec, std::int64_t arrivals,
                          std::uint64_t seed) {
	if (!(arrival > 0.0)) throw DomainError("des_swap: arrival rate must be positive");
	if (arrivals < 1) throw DomainError("des_swap: need at least one arrival");
	std::mt19937_64 rng(seed);
	std::exponential_distribution<double> gap(arrival);
	std::exponential_distribution<double> charge(1.0 / spec.charge_hours);

	enum class Kind { swap_done, charge_done };
	struct Event {
		double time;
		Kind kind;
		bool operator>(const Event& other) const { return time > other.time; }
	};
	std::priority_queue<Event, std::vector<Event>, std::greater<>> events;

	std::deque<double> waiting; // arrival times of EVs not yet in a bay
	int in_bay = 0;
	int full = spec.batteries;
	int charging = 0;
	int depleted = 0; // waiting for a charger

	const std::int64_t warmup = detail::warmup_for(arrivals);
	detail::BatchMeans stats(arrivals);
	std::int64_t seen = 0;
	std::int64_t blocked = 0;
	std::int64_t counted = 0;

	double next_arrival = gap(rng);
	double now = 0.0;

	auto start_swaps = [&]() {
		while (!waiting.empty() && in_bay < spec.bays && full > 0) {
			const double arrived = waiting.front();
			waiting.pop_front();
			--full;
			++in_bay;
			if (arrived >= 0.0) stats.add(now - arrived);
			events.push({now + spec.swap_hours, Kind::swap_done});
		}
	};
	auto start_charging = [&]() {
		while (depleted > 0 && charging < spec.chargers) {
			--depleted;
			++charging;
			events.push({now + charge(rng), Kind::charge_done});
		}
	};

	while (seen < arrivals + warmup) {
		if (events.empty() || next_arrival <= events.top().time) {
			now = next_arrival;
			next_arrival = now + gap(rng);
			const bool measured = seen >= warmup;
			++seen;
			const int present = static_cast<int>(waiting.size()) + in_bay;
			if (present >= spec.capacity) {
				if (measured) ++blocked;
				continue;
			}
			if (measured) ++counted;
			// Warmup EVs are tagged with a negative time so they are not recorded.
			waiting.push_back(measured ? now : -1.0);
			start_swaps();
		} else {
			const Event e = events.top();
			events.pop();
			now = e.time;
			if (e.kind == Kind::swap_done) {
				--in_bay;
				++depleted;
				start_charging();
			} else {
				--charging;
				++full;
				start_charging();
			}
			start_swaps();
		}
	}
	// Drain so every admitted, measured EV receives a wait.
	while (!waiting.empty() && !events.empty()) {
		const Event e = events.top();
		events.pop();
		now = e.time;
		if (e.kind == Kind::swap_done) {
			--in_bay;
			++depleted;
		} else {
			--charging;
			++full;
		}
		start_charging();
		start_swaps();
	}
	SimResult out;
	out.mean_wait = stats.mean();
	out.ci_halfwidth = stats.halfwidth();
	out.admitted = counted;
	out.blocked = blocked;
	out.block_rate = static_cast<double>(blocked) / static_cast<double>(arrivals);
	return out;
}

} // namespace chargenet::simcheck

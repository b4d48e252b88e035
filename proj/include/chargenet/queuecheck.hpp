#pragma once

// Analytic queue models against the event simulations, and the convexity
// probes at a fixed charging demand.

#include <cmath>
#include <cstdint>
#include <vector>

#include "chargenet/model.hpp"
#include "chargenet/queues.hpp"
#include "chargenet/simcheck.hpp"

namespace chargenet::queuecheck {

inline constexpr std::int64_t kArrivals = 1'000'000;
inline constexpr double kErlangRelative = 0.03;
inline constexpr double kSwapWaitRelative = 0.05;
inline constexpr double kSwapWaitAbsolute = 0.05 / 60.0; // hours
inline constexpr double kSwapBlockAbsolute = 0.01;
inline constexpr double kProbeDemand = 10.0;             // veh/h
inline constexpr std::uint64_t kSeed = 7;

inline const std::vector<double> kUtilizations{0.3, 0.6, 0.9};
inline const std::vector<double> kSwapArrivals{2.0, 10.0, 20.0, 30.0};

struct ErlangRow {
	int chargers = 0;
	double utilization = 0.0;
	double arrival = 0.0;
	double analytic = 0.0; // h
	double simulated = 0.0;
	double ci = 0.0;
	double relative_error = 0.0;
	bool pass = false;
};

struct SwapRow {
	double arrival = 0.0;
	double chain_wait = 0.0; // h
	double sim_wait = 0.0;
	double sim_ci = 0.0;
	double chain_block = 0.0;
	double sim_block = 0.0;
	bool wait_pass = false;
	bool block_pass = false;
};

inline ErlangRow erlang_row(const ChargeStationSpec& spec, double utilization, std::int64_t arrivals,
                            std::uint64_t seed) {
	ErlangRow r;
	r.chargers = spec.chargers;
	r.utilization = utilization;
	r.arrival = utilization * spec.chargers / spec.charge_hours;
	r.analytic = queues::erlang_c_wait(r.arrival, spec).wait;
	const simcheck::SimResult sim = simcheck::des_mmV(r.arrival, spec, arrivals, seed);
	r.simulated = sim.mean_wait;
	r.ci = sim.ci_halfwidth;
	r.relative_error = std::abs(r.simulated - r.analytic) / r.analytic;
	r.pass = r.relative_error <= kErlangRelative;
	return r;
}

inline std::vector<ErlangRow> erlang_rows(const ChargeStationSpec& spec, std::int64_t arrivals = kArrivals,
                                          std::uint64_t seed = kSeed) {
	std::vector<ErlangRow> out;
	for (std::size_t k = 0; k < kUtilizations.size(); ++k) out.push_back(erlang_row(spec, kUtilizations[k], arrivals, seed + k));
	return out;
}

inline SwapRow swap_row(const SwapStationSpec& spec, double arrival, std::int64_t arrivals, std::uint64_t seed) {
	SwapRow r;
	r.arrival = arrival;
	const queues::QueueMetrics chain = queues::swap_wait(arrival, spec);
	const simcheck::SimResult sim = simcheck::des_swap(arrival, spec, arrivals, seed);
	r.chain_wait = chain.wait;
	r.chain_block = chain.block;
	r.sim_wait = sim.mean_wait;
	r.sim_ci = sim.ci_halfwidth;
	r.sim_block = sim.block_rate;
	r.wait_pass = std::abs(r.chain_wait - r.sim_wait) <= std::max(kSwapWaitRelative * r.sim_wait, kSwapWaitAbsolute);
	r.block_pass = std::abs(r.chain_block - r.sim_block) <= kSwapBlockAbsolute;
	return r;
}

inline std::vector<SwapRow> swap_rows(const SwapStationSpec& spec, std::int64_t arrivals = kArrivals,
                                      std::uint64_t seed = kSeed) {
	std::vector<SwapRow> out;
	for (std::size_t k = 0; k < kSwapArrivals.size(); ++k)
		out.push_back(swap_row(spec, kSwapArrivals[k], arrivals, seed + 100 + k));
	return out;
}

inline std::vector<double> probe_stations() {
	std::vector<double> x;
	for (int n = 1; n <= 20; ++n) x.push_back(n);
	return x;
}

} // namespace chargenet::queuecheck

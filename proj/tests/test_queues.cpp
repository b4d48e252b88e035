#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace chargenet;
using namespace chargenet::queues;

namespace {

ChargeStationSpec charging(int chargers, double hours = 1.0) {
	ChargeStationSpec s;
	s.chargers = chargers;
	s.charge_hours = hours;
	return s;
}

SwapStationSpec small_swap() {
	SwapStationSpec s;
	s.bays = 1;
	s.chargers = 3;
	s.batteries = 3;
	s.capacity = 8;
	s.swap_hours = 1.0 / 12.0;
	s.charge_hours = 1.0;
	return s;
}

} // namespace

TEST(Access, SquareRoot) {
	EXPECT_DOUBLE_EQ(access_time(4.0, 0.5), 0.25);
	EXPECT_DOUBLE_EQ(access_time(1.0, 0.3), 0.3);
	EXPECT_THROW(access_time(0.0, 0.5), DomainError);
}

TEST(ErlangC, SingleServer) {
	// M/M/1 at rho 0.5: Wq = rho / (mu - lambda) = 0.5 / 1.
	const QueueMetrics m = erlang_c_wait(0.5, charging(1));
	EXPECT_NEAR(m.wait, 1.0, 1e-12);
	EXPECT_NEAR(m.empty_prob, 0.5, 1e-12);
}

TEST(ErlangC, TwoServers) {
	// a = 1, rho = 1/2: P0 = 1/3, P(wait) = 1/3, Wq = P(wait) / (2 mu - lambda).
	const QueueMetrics m = erlang_c_wait(1.0, charging(2));
	EXPECT_NEAR(m.empty_prob, 1.0 / 3.0, 1e-12);
	EXPECT_NEAR(m.wait, 1.0 / 3.0, 1e-12);
}

TEST(ErlangC, UnstableThrows) {
	EXPECT_THROW(erlang_c_wait(10.0, charging(10)), UnstableQueueError);
	EXPECT_THROW(erlang_c_wait(11.0, charging(10)), UnstableQueueError);
	EXPECT_NO_THROW(erlang_c_wait(9.99, charging(10)));
}

TEST(ErlangC, ZeroArrivalsNeverWait) {
	const QueueMetrics m = erlang_c_wait(0.0, charging(10));
	EXPECT_EQ(m.wait, 0.0);
	EXPECT_EQ(m.empty_prob, 1.0);
}

TEST(SwapChain, RowsAreStochastic) {
	for (double lam : {0.5, 5.0, 12.0, 40.0}) {
		const SwapChain c(lam, small_swap());
		Vector rows = Vector::Zero(c.states());
		const auto& P = c.transition();
		for (int k = 0; k < P.outerSize(); ++k)
			for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(P, k); it; ++it) {
				EXPECT_GE(it.value(), 0.0);
				rows(k) += it.value();
			}
		EXPECT_LE((rows.array() - 1.0).abs().maxCoeff(), 1e-10) << lam;
	}
}

TEST(SwapChain, EmptyStationWithFullBatteriesOnlyReceivesArrivals) {
	const SwapStationSpec spec = small_swap();
	const SwapChain c(20.0, spec);
	const int B = spec.batteries, W = spec.capacity;
	const auto& P = c.transition();
	const int from = c.index(0, B);
	double below = 0.0;
	for (int i = 0; i < W; ++i) {
		EXPECT_DOUBLE_EQ(P.coeff(from, c.index(i, B)), c.arrival_pmf(i)) << i;
		below += c.arrival_pmf(i);
	}
	EXPECT_NEAR(P.coeff(from, c.index(W, B)), 1.0 - below, 1e-15);
	for (int i = 0; i <= W; ++i)
		for (int j = 0; j < B; ++j) EXPECT_EQ(P.coeff(from, c.index(i, j)), 0.0);
}

TEST(SwapChain, EquilibriumIsStationary) {
	for (double lam : {1.0, 10.0, 30.0}) {
		const SwapChain c(lam, small_swap());
		const Vector& g = c.equilibrium();
		EXPECT_NEAR(g.sum(), 1.0, 1e-12);
		EXPECT_GE(g.minCoeff(), 0.0);
		const Vector next = (g.transpose() * c.transition()).transpose();
		EXPECT_LE((next - g).cwiseAbs().sum(), 1e-10) << lam;
	}
}

TEST(SwapChain, IndependentOfInitialization) {
	const SwapStationSpec spec = small_swap();
	const SwapChain c(8.0, spec);
	Vector a = Vector::Zero(c.states());
	a(c.index(0, spec.batteries)) = 1.0;
	Vector b = Vector::Zero(c.states());
	b(c.index(spec.capacity, 0)) = 1.0;
	const Vector from_a = c.iterate_from(a, 20000);
	const Vector from_b = c.iterate_from(b, 20000);
	EXPECT_LE(0.5 * (from_a - from_b).cwiseAbs().sum(), 1e-9);
	EXPECT_LE(0.5 * (from_a - c.equilibrium()).cwiseAbs().sum(), 1e-9);
}

TEST(SwapChain, LightTraffic) {
	const QueueMetrics m = swap_wait(1e-3, SwapStationSpec{});
	EXPECT_LE(m.wait, 1e-4);
	EXPECT_LE(m.block, 1e-6);
}

TEST(SwapChain, HeavyTrafficBlocksAlmostEveryone) {
	const QueueMetrics m = swap_wait(1e3, SwapStationSpec{});
	EXPECT_GE(m.block, 0.99);
	EXPECT_TRUE(std::isfinite(m.wait));
	EXPECT_GE(m.wait, 0.0);
}

TEST(SwapChain, ThroughputMatchesAdmittedArrivals) {
	for (double lam : {2.0, 10.0, 20.0}) {
		const SwapChain c(lam, SwapStationSpec{});
		EXPECT_NEAR(c.throughput(), lam * (1.0 - c.blocking()), 1e-6 * lam) << lam;
	}
}

TEST(SwapWaitTable, InterpolatesDirectSolve) {
	const SwapStationSpec spec;
	const SwapWaitTable table(spec);
	for (double lam = 0.13; lam < 18.0; lam += 0.0377) {
		const QueueMetrics m = swap_wait(lam, spec);
		const double tol = std::max(0.005 * m.wait, 1e-7);
		EXPECT_NEAR(table.wait(lam), m.wait, tol) << lam;
		EXPECT_NEAR(table.block(lam), m.block, std::max(0.005 * m.block, 1e-4)) << lam;
	}
	EXPECT_EQ(table.wait(0.0), 0.0);
}

TEST(Probe, ChargingIsConvexAndDecreasing) {
	const ProbeResult p = convexity_probe(QueueKind::charging, 10.0, queuecheck::probe_stations(), ChargeStationSpec{},
	                                      SwapStationSpec{});
	EXPECT_TRUE(p.convex);
	EXPECT_TRUE(p.decreasing);
	EXPECT_EQ(p.unstable_points, 1); // one station at utilization exactly one
	EXPECT_FALSE(p.rows[0].stable);
}

TEST(Probe, SwapIsConvexAndDecreasing) {
	const ProbeResult p = convexity_probe(QueueKind::swapping, 10.0, queuecheck::probe_stations(), ChargeStationSpec{},
	                                      SwapStationSpec{});
	EXPECT_TRUE(p.convex);
	EXPECT_TRUE(p.decreasing);
	EXPECT_EQ(p.unstable_points, 0);
}

TEST(Probe, SinglePointHasNoDifferences) {
	const ProbeResult p = convexity_probe(QueueKind::charging, 10.0, {5.0}, ChargeStationSpec{}, SwapStationSpec{});
	ASSERT_EQ(p.rows.size(), 1u);
	EXPECT_TRUE(std::isnan(p.rows[0].first_difference));
	EXPECT_TRUE(std::isnan(p.rows[0].second_difference));
	EXPECT_TRUE(p.convex);
	EXPECT_TRUE(p.decreasing);
}

TEST(Probe, ManyStationsWaitVanishes) {
	const ProbeResult c = convexity_probe(QueueKind::charging, 10.0, {1e3}, ChargeStationSpec{}, SwapStationSpec{});
	const ProbeResult s = convexity_probe(QueueKind::swapping, 10.0, {1e3}, ChargeStationSpec{}, SwapStationSpec{});
	EXPECT_LE(c.rows[0].wait, 1e-12);
	EXPECT_LE(s.rows[0].wait, 1e-4);
}

TEST(SwapChain, SaturatedStationStaysFull) {
	const SwapStationSpec spec;
	double last = 0.0;
	for (double lam : {1e3, 1e4, 1e5, 1e7}) {
		const SwapChain c(lam, spec);
		EXPECT_NEAR(c.mean_evs(), spec.capacity, 1e-6) << lam;
		EXPECT_NEAR(c.throughput(), lam * (1.0 - c.blocking()), 1e-6 * c.throughput()) << lam;
		EXPECT_GT(c.blocking(), last) << lam;
		last = c.blocking();
	}
}

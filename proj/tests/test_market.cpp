#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace chargenet;

TEST(Pickup, SquareRootLaw) {
	EXPECT_DOUBLE_EQ(market::pickup_time(3, 1, 2), 1.0);
	EXPECT_DOUBLE_EQ(market::pickup_time(8, 8, 2), 0.5);
	EXPECT_THROW(market::pickup_time(0, 0, 2), DomainError);
}

TEST(Logit, EqualCostsSplitEvenly) {
	// p = p0 with no pickup time: ride-hailing and outside option cost the same.
	EXPECT_DOUBLE_EQ(market::demand(80.0, 50.0, 0.4, 0.0, 25.0, 0.3, 50.0), 40.0);
}

TEST(Logit, UnitCostGap) {
	// cost 1 against outside cost 0: price 1 $/h over a one-hour trip.
	const double expected = 100.0 * std::exp(-1.0) / (std::exp(-1.0) + 1.0);
	const double got = market::demand(100.0, 1.0, 1.0, 0.0, 25.0, 1.0, 0.0);
	EXPECT_NEAR(got, expected, 1e-12);
	EXPECT_NEAR(got, 26.894, 5e-4);
}

TEST(Logit, SharpPreferenceTakesEveryone) {
	const double lam = market::demand(100.0, 10.0, 0.5, 0.0, 25.0, 1e3, 30.0);
	EXPECT_NEAR(lam, 100.0, 1e-6 * 100.0);
}

TEST(Logit, StableForExtremeExponents) {
	const double up = market::demand(100.0, 1e6, 1.0, 0.0, 25.0, 1.0, 1.0);
	const double down = market::demand(100.0, 0.0, 1.0, 0.0, 25.0, 1.0, 1e6);
	EXPECT_TRUE(std::isfinite(up));
	EXPECT_GE(up, 0.0);
	EXPECT_DOUBLE_EQ(down, 100.0);
}

TEST(FlowResidual, Examples) {
	Matrix lam(2, 2), f = Matrix::Zero(2, 2);
	lam << 0, 10, 4, 0;
	Vector r = market::flow_residual(lam, f);
	EXPECT_DOUBLE_EQ(r(0), 6.0);
	EXPECT_DOUBLE_EQ(r(1), -6.0);
	f(1, 0) = 6.0;
	r = market::flow_residual(lam, f);
	EXPECT_DOUBLE_EQ(r(0), 0.0);
	EXPECT_DOUBLE_EQ(r(1), 0.0);

	Matrix sym(3, 3);
	sym << 1, 2, 3, 2, 5, 7, 3, 7, 1;
	EXPECT_EQ(market::flow_residual(sym, Matrix::Zero(3, 3)), Vector::Zero(3));
}

TEST(FlowResidual, ConservesTotalFlow) {
	std::mt19937_64 rng(11);
	std::uniform_real_distribution<double> u(0.0, 50.0);
	for (int trial = 0; trial < 100; ++trial) {
		const int m = 2 + trial % 7;
		Matrix lam(m, m), f(m, m);
		for (int i = 0; i < m; ++i)
			for (int j = 0; j < m; ++j) {
				lam(i, j) = u(rng);
				f(i, j) = u(rng);
			}
		EXPECT_NEAR(market::flow_residual(lam, f).sum(), 0.0, 1e-10);
	}
}

TEST(DemandMatrix, UsesOriginPriceAndPickup) {
	const Scenario s = support::scenario("smoke2.json");
	Vector price(2), pickup(2);
	price << 40.0, 70.0;
	pickup << 0.1, 0.2;
	const Matrix lam = market::demand_matrix(s, price, pickup);
	for (int i = 0; i < 2; ++i)
		for (int j = 0; j < 2; ++j) {
			const double c = price(i) * s.trip_time(i, j) + s.alpha * pickup(i);
			const double c0 = s.outside_price * s.trip_time(i, j);
			const double e = s.logit_sensitivity;
			const double expected = s.base_demand(i, j) * std::exp(-e * c) / (std::exp(-e * c) + std::exp(-e * c0));
			EXPECT_NEAR(lam(i, j), expected, 1e-10 * expected);
		}
}

#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace chargenet;
using namespace chargenet::simcheck;

namespace {

ChargeStationSpec servers(int v) {
	ChargeStationSpec s;
	s.chargers = v;
	s.charge_hours = 1.0;
	return s;
}

} // namespace

TEST(Des, SingleServerMatchesClosedForm) {
	const SimResult r = des_mmV(0.5, servers(1), 400'000, 1);
	EXPECT_NEAR(r.mean_wait, 1.0, std::max(3.0 * r.ci_halfwidth, 0.02));
	EXPECT_GT(r.ci_halfwidth, 0.0);
}

TEST(Des, TwoServersMatchClosedForm) {
	const SimResult r = des_mmV(1.0, servers(2), 400'000, 2);
	EXPECT_NEAR(r.mean_wait, 1.0 / 3.0, std::max(3.0 * r.ci_halfwidth, 0.01));
}

TEST(Des, SameSeedSameResult) {
	const SimResult a = des_mmV(7.0, servers(10), 100'000, 42);
	const SimResult b = des_mmV(7.0, servers(10), 100'000, 42);
	EXPECT_EQ(a.mean_wait, b.mean_wait);
	EXPECT_EQ(a.ci_halfwidth, b.ci_halfwidth);
	const SimResult c = des_mmV(7.0, servers(10), 100'000, 43);
	EXPECT_NE(a.mean_wait, c.mean_wait);
	const SimResult d = des_swap(10.0, SwapStationSpec{}, 100'000, 42);
	const SimResult e = des_swap(10.0, SwapStationSpec{}, 100'000, 42);
	EXPECT_EQ(d.mean_wait, e.mean_wait);
	EXPECT_EQ(d.block_rate, e.block_rate);
}

TEST(Des, ConfidenceShrinksWithSampleSize) {
	const SimResult small = des_mmV(5.0, servers(10), 200'000, 3);
	const SimResult large = des_mmV(5.0, servers(10), 400'000, 3);
	EXPECT_NEAR(large.ci_halfwidth / small.ci_halfwidth, 1.0 / std::sqrt(2.0), 0.2 / std::sqrt(2.0));
}

TEST(Des, SwapLightTrafficNeverBlocks) {
	const SimResult r = des_swap(0.5, SwapStationSpec{}, 100'000, 5);
	EXPECT_EQ(r.blocked, 0);
	EXPECT_LE(r.mean_wait, 0.01);
}

TEST(Des, SwapOverloadBlocksMost) {
	const SimResult r = des_swap(200.0, SwapStationSpec{}, 200'000, 6);
	EXPECT_GE(r.block_rate, 0.9);
}

TEST(Des, SwapWaitAgreesWithChainAtModerateLoad) {
	const SwapStationSpec spec;
	const queues::QueueMetrics chain = queues::swap_wait(2.0, spec);
	const SimResult r = des_swap(2.0, spec, 400'000, 8);
	EXPECT_NEAR(r.mean_wait, chain.wait, std::max(0.05 * chain.wait, 0.05 / 60.0));
	EXPECT_NEAR(r.block_rate, chain.block, 0.01);
}

TEST(Des, RejectsEmptyRuns) {
	EXPECT_THROW(des_mmV(1.0, servers(2), 0, 1), DomainError);
	EXPECT_THROW(des_swap(0.0, SwapStationSpec{}, 10, 1), DomainError);
}

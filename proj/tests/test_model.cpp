#include <gtest/gtest.h>

#include "support.hpp"

using namespace chargenet;

namespace {

json two_zone() {
	json doc = support::read_json(support::data("smoke2.json"));
	doc.erase("name");
	return doc;
}

} // namespace

TEST(Scenario, BundledSixZoneFields) {
	const Scenario s = support::scenario("manhattan6.json");
	EXPECT_EQ(s.zones, 6);
	EXPECT_EQ(s.stages, 4);
	EXPECT_EQ(s.charge_spec.chargers, 10);
	EXPECT_EQ(s.swap_spec.bays, 1);
	EXPECT_EQ(s.swap_spec.chargers, 10);
	EXPECT_EQ(s.swap_spec.batteries, 10);
	EXPECT_EQ(s.swap_spec.capacity, 100);
	EXPECT_DOUBLE_EQ(s.charge_spec.charge_hours, 1.0);
	EXPECT_DOUBLE_EQ(s.swap_spec.swap_hours, 1.0 / 12.0);
	EXPECT_DOUBLE_EQ(s.cost_c, 0.2);
	EXPECT_DOUBLE_EQ(s.cost_s, 1.0);
	EXPECT_DOUBLE_EQ(s.battery_range_hours, 6.0);
	EXPECT_DOUBLE_EQ(s.gamma_e, 20.0);
	EXPECT_DOUBLE_EQ(s.gamma_g, 30.0);
}

TEST(Scenario, ZeroDiagonalTripTimeNamesPositivity) {
	json doc = two_zone();
	doc["trip_time"][0][0] = 0.0;
	try {
		validate_scenario(doc);
		FAIL() << "expected a validation error";
	} catch (const ValidationError& e) {
		EXPECT_NE(std::string(e.what()).find("trip_time"), std::string::npos);
		EXPECT_NE(std::string(e.what()).find("positive"), std::string::npos);
	}
}

TEST(Scenario, MinimalSymmetricTwoZone) {
	json doc = two_zone();
	doc["base_demand"] = {{10.0, 0.0}, {0.0, 10.0}};
	const Scenario s = validate_scenario(doc);
	EXPECT_EQ(s.zones, 2);
}

TEST(Scenario, Rejections) {
	json missing = two_zone();
	missing.erase("phi");
	EXPECT_THROW(validate_scenario(missing), ValidationError);

	json shape = two_zone();
	shape["base_demand"] = {{1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}};
	EXPECT_THROW(validate_scenario(shape), ValidationError);

	json negative = two_zone();
	negative["base_demand"][1][0] = -1.0;
	EXPECT_THROW(validate_scenario(negative), ValidationError);

	json budgets = two_zone();
	budgets["budgets"] = {1.0};
	EXPECT_THROW(validate_scenario(budgets), ValidationError);

	json bays = two_zone();
	bays["swap_station"]["capacity"] = 0;
	EXPECT_THROW(validate_scenario(bays), ValidationError);

	json one_zone = two_zone();
	one_zone["zones"] = 1;
	EXPECT_THROW(validate_scenario(one_zone), ValidationError);
}

TEST(Scenario, CheaperGasolineWarnsOnly) {
	json doc = two_zone();
	doc["gamma_e"] = 40.0;
	std::vector<std::string> warnings;
	EXPECT_NO_THROW(validate_scenario(doc, &warnings));
	ASSERT_EQ(warnings.size(), 1u);
	EXPECT_NE(warnings[0].find("gamma_e"), std::string::npos);
}

TEST(Scenario, MoreBatteriesThanChargersWarns) {
	json doc = two_zone();
	doc["swap_station"]["batteries"] = 12;
	std::vector<std::string> warnings;
	validate_scenario(doc, &warnings);
	ASSERT_EQ(warnings.size(), 1u);
	EXPECT_NE(warnings[0].find("batteries"), std::string::npos);
}

TEST(Scenario, ValidationIsIdempotent) {
	for (const char* name : {"smoke2.json", "manhattan6.json"}) {
		const Scenario s = support::scenario(name);
		EXPECT_EQ(validate_scenario(s), s) << name;
		EXPECT_EQ(validate_scenario(to_json(s)), s) << name;
	}
}

TEST(Scenario, SwapChargeTimeDefaultsToChargingStation) {
	json doc = two_zone();
	doc["charge_station"]["charge_hours"] = 2.0;
	doc["swap_station"].erase("charge_hours");
	EXPECT_DOUBLE_EQ(validate_scenario(doc).swap_spec.charge_hours, 2.0);
}

TEST(Plans, CumulativeBudgetAndEvenSplit) {
	const Scenario s = with_total_budget(support::scenario("manhattan6.json"), 100.0);
	for (double b : s.budgets) EXPECT_DOUBLE_EQ(b, 25.0);
	EXPECT_DOUBLE_EQ(s.cumulative_budget(0), 25.0);
	EXPECT_DOUBLE_EQ(s.cumulative_budget(3), 100.0);
}

TEST(Plans, AccumulateAndIncrementsRoundTrip) {
	PlanningDecision plan{Matrix(3, 2), Matrix(3, 2)};
	plan.new_charge << 1, 2, 0, 1, 3, 0;
	plan.new_swap << 0, 0, 2, 0, 1, 1;
	const CumulativePlan c = accumulate(plan);
	EXPECT_DOUBLE_EQ(c.charge(2, 0), 4.0);
	EXPECT_DOUBLE_EQ(c.swap(2, 1), 1.0);
	const PlanningDecision back = increments(c);
	EXPECT_EQ(back.new_charge, plan.new_charge);
	EXPECT_EQ(back.new_swap, plan.new_swap);
}

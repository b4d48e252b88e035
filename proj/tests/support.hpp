#pragma once

#include <fstream>
#include <string>

#include "chargenet/chargenet.hpp"

namespace support {

inline std::string data(const std::string& name) { return std::string(CHARGENET_DATA_DIR) + "/" + name; }
inline std::string fixture(const std::string& name) { return std::string(CHARGENET_FIXTURE_DIR) + "/" + name; }

inline chargenet::json read_json(const std::string& path) {
	std::ifstream in(path);
	return chargenet::json::parse(in);
}

inline chargenet::Scenario scenario(const std::string& name) {
	return chargenet::validate_scenario(read_json(data(name)));
}

inline std::string slurp(const std::string& path) {
	std::ifstream in(path, std::ios::binary);
	return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A feasible hand-picked stage decision on the two-zone scenario.
struct StagePoint {
	chargenet::Vector charge, swap;
	chargenet::OperationalDecision ops;
};

inline StagePoint smoke_point(double share = 0.5) {
	StagePoint p;
	p.charge = chargenet::Vector::Constant(2, 4.0);
	p.swap = chargenet::Vector::Constant(2, 1.0);
	p.ops.price = chargenet::Vector::Constant(2, 60.0);
	p.ops.idle_ev = chargenet::Vector::Constant(2, 40.0);
	p.ops.idle_gas = chargenet::Vector::Constant(2, 30.0);
	p.ops.rebalance = chargenet::Matrix::Zero(2, 2);
	p.ops.charge_share = chargenet::Vector::Constant(2, share);
	return p;
}

} // namespace support

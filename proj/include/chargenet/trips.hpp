#pragma once

// Trip records to zone-level demand and travel-time matrices.
// Header contract: pickup_zone, dropoff_zone, duration_minutes (any order,
// extra columns ignored, no quoted commas).

#include <cmath>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "chargenet/error.hpp"
#include "chargenet/model.hpp"

namespace chargenet::trips {

/// Raw zone id -> zone index in [0, M).
struct ZoneMap {
	std::map<std::string, int> index;
	int zones = 0;
};

/// Parses {"raw id": zone} with zones numbered 1..M, every number used.
inline ZoneMap parse_zone_map(const json& doc) {
	if (!doc.is_object() || doc.empty()) throw ValidationError("zone map must be a non-empty JSON object");
	ZoneMap out;
	std::vector<char> used;
	for (const auto& [raw, value] : doc.items()) {
		if (!value.is_number_integer()) throw ValidationError("zone map entry '" + raw + "' must be an integer");
		const int z = value.get<int>();
		if (z < 1) throw ValidationError("zone map entry '" + raw + "' must be >= 1");
		out.index[raw] = z - 1;
		if (static_cast<int>(used.size()) < z) used.resize(static_cast<std::size_t>(z), 0);
		used[static_cast<std::size_t>(z - 1)] = 1;
	}
	out.zones = static_cast<int>(used.size());
	for (int z = 0; z < out.zones; ++z)
		if (!used[static_cast<std::size_t>(z)])
			throw ValidationError("zone map skips zone " + std::to_string(z + 1));
	if (out.zones < 2) throw ValidationError("zone map must cover at least 2 zones");
	return out;
}

struct Ingest {
	Matrix base_demand; // trips/hour
	Matrix trip_time;   // mean duration, hours; NaN where no trip was seen
	long long trips = 0;
	long long unmapped = 0;
	long long zero_duration = 0;
	std::map<std::string, long long> unmapped_ids;
	int empty_pairs = 0;
	std::vector<std::string> warnings;
};

namespace detail {

inline std::string trim(const std::string& text) {
	const auto first = text.find_first_not_of(" \t\r\"");
	if (first == std::string::npos) return "";
	const auto last = text.find_last_not_of(" \t\r\"");
	return text.substr(first, last - first + 1);
}

inline std::vector<std::string> split(const std::string& line) {
	std::vector<std::string> out;
	std::stringstream ss(line);
	std::string cell;
	while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
	if (!line.empty() && line.back() == ',') out.emplace_back();
	return out;
}

} // namespace detail

/// Counts trips per mapped pair over `span_hours` of records. Unmapped zone
/// ids and zero-duration trips are dropped and counted.
inline Ingest ingest(std::istream& in, const ZoneMap& zones, double span_hours) {
	if (!(span_hours > 0.0) || !std::isfinite(span_hours)) throw ValidationError("time span must be positive");
	std::string line;
	if (!std::getline(in, line) || detail::trim(line).empty()) throw ValidationError("trip file is empty");
	const std::vector<std::string> header = detail::split(line);
	auto column = [&](const char* name) {
		for (std::size_t c = 0; c < header.size(); ++c)
			if (header[c] == name) return c;
		throw ValidationError(std::string("trip file is missing column '") + name + "'");
	};
	const std::size_t cp = column("pickup_zone"), cd = column("dropoff_zone"), ct = column("duration_minutes");
	const std::size_t width = std::max({cp, cd, ct}) + 1;

	const int M = zones.zones;
	Ingest out;
	Matrix count = Matrix::Zero(M, M), minutes = Matrix::Zero(M, M);
	long long line_no = 1;
	while (std::getline(in, line)) {
		++line_no;
		if (detail::trim(line).empty()) continue;
		const std::vector<std::string> cells = detail::split(line);
		if (cells.size() < width) throw ValidationError("trip file line " + std::to_string(line_no) + ": too few columns");
		double duration = 0.0;
		try {
			std::size_t used = 0;
			duration = std::stod(cells[ct], &used);
			if (used != cells[ct].size()) throw std::invalid_argument("trailing text");
		} catch (const std::exception&) {
			throw ValidationError("trip file line " + std::to_string(line_no) + ": duration_minutes '" + cells[ct] +
			                      "' is not a number");
		}
		if (!std::isfinite(duration) || duration < 0.0)
			throw ValidationError("trip file line " + std::to_string(line_no) + ": negative or non-finite duration");
		const auto from = zones.index.find(cells[cp]);
		const auto to = zones.index.find(cells[cd]);
		if (from == zones.index.end() || to == zones.index.end()) {
			++out.unmapped;
			if (from == zones.index.end()) ++out.unmapped_ids[cells[cp]];
			if (to == zones.index.end()) ++out.unmapped_ids[cells[cd]];
			continue;
		}
		if (duration == 0.0) {
			++out.zero_duration;
			continue;
		}
		count(from->second, to->second) += 1.0;
		minutes(from->second, to->second) += duration;
		++out.trips;
	}
	if (out.trips == 0) throw ValidationError("no usable trips after filtering");

	out.base_demand = count / span_hours;
	out.trip_time = Matrix(M, M);
	for (int i = 0; i < M; ++i)
		for (int j = 0; j < M; ++j) {
			if (count(i, j) > 0.0) {
				out.trip_time(i, j) = minutes(i, j) / count(i, j) / 60.0;
			} else {
				out.trip_time(i, j) = std::nan("");
				++out.empty_pairs;
			}
		}
	if (out.unmapped > 0)
		out.warnings.push_back(std::to_string(out.unmapped) + " trips reference " +
		                       std::to_string(out.unmapped_ids.size()) + " unmapped zone ids; excluded");
	if (out.zero_duration > 0)
		out.warnings.push_back(std::to_string(out.zero_duration) + " zero-duration trips rejected");
	if (out.empty_pairs > 0)
		out.warnings.push_back(std::to_string(out.empty_pairs) +
		                       " zone pairs have no trips; their trip_time is null and must be supplied");
	return out;
}

/// Scenario fragment: zones, base_demand, trip_time (null where unknown) and
/// the ingestion counts.
inline json to_fragment(const Ingest& d, double span_hours) {
	json time = json::array();
	for (Eigen::Index i = 0; i < d.trip_time.rows(); ++i) {
		json row = json::array();
		for (Eigen::Index j = 0; j < d.trip_time.cols(); ++j)
			row.push_back(std::isnan(d.trip_time(i, j)) ? json(nullptr) : json(d.trip_time(i, j)));
		time.push_back(row);
	}
	json unmapped = json::object();
	for (const auto& [id, n] : d.unmapped_ids) unmapped[id] = n;
	return {{"zones", d.base_demand.rows()},
	        {"base_demand", chargenet::detail::to_rows(d.base_demand)},
	        {"trip_time", time},
	        {"ingest",
	         {{"span_hours", span_hours},
	          {"trips", d.trips},
	          {"unmapped_trips", d.unmapped},
	          {"unmapped_ids", unmapped},
	          {"zero_duration_trips", d.zero_duration},
	          {"empty_pairs", d.empty_pairs}}}};
}

} // namespace chargenet::trips

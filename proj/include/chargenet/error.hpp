#pragma once

#include <stdexcept>
#include <string>

namespace chargenet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

/// A scenario, spec, or decision document violates a stated constraint.
class ValidationError : public Error {
public:
	using Error::Error;
};

/// A function was evaluated outside of its mathematical domain.
class DomainError : public Error {
public:
	using Error::Error;
};

/// The energy-balance feasibility margin is not positive, or no feasible
/// point could be found.
class InfeasibleError : public Error {
public:
	using Error::Error;
};

/// Charging-station utilization reached or exceeded one.
class UnstableQueueError : public Error {
public:
	using Error::Error;
};

} // namespace chargenet

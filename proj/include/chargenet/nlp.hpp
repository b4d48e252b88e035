#pragma once

// Small dense nonlinear programming toolkit: an augmented-Lagrangian outer
// loop over equality constraints and linear inequalities, with a projected
// Newton (or limited-memory quasi-Newton) inner solve on a box. Derivatives
// are finite differences taken block by block, so a variable only triggers
// re-evaluation of the block that owns it; the Hessian is block diagonal
// apart from the linear-constraint penalty.

#include <algorithm>
#include <cmath>
#include <deque>
#include <Eigen/Cholesky>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "chargenet/model.hpp"

namespace chargenet::nlp {

/// Value of one block: its contribution to the objective (to be maximized)
/// and its equality residuals, which should vanish at a solution.
struct BlockValue {
	double objective = 0.0;
	Vector equality;
};

/// maximize sum_b objective_b(x)  s.t.  equality_b(x) = 0,  A x <= b,  lo <= x <= hi.
/// Block b reads only the variables listed in blocks[b]; each variable belongs
/// to exactly one block. `evaluate` returns nullopt where the model is undefined.
struct Problem {
	Vector lo, hi;
	std::vector<std::vector<int>> blocks;
	std::function<std::optional<BlockValue>(int block, const Vector& x)> evaluate;
	Vector equality_scale;            // per block row, concatenated in block order
	Matrix A;                         // linear inequalities (rows may be zero)
	Vector b;
	Vector inequality_scale;
	double objective_scale = 1.0;
};

struct Options {
	int max_outer = 30;
	int max_inner = 400;
	int memory = 8;
	double tolerance = 1e-7;          // projected-gradient norm, scaled units
	double feasibility = 1e-7;        // scaled constraint violation
	double penalty = 10.0;
	double penalty_growth = 5.0;
	double max_penalty = 1e8;
	double fd_step = 1e-7;            // in box-normalized units
	enum class Method { newton, lbfgs } method = Method::newton;
	double hessian_step = 1e-4;       // box-normalized
};

struct Result {
	Vector x;
	double objective = -std::numeric_limits<double>::infinity();
	double violation = std::numeric_limits<double>::infinity();
	Vector equality_multipliers;      // scaled by constraint and objective scales
	Vector inequality_multipliers;
	int outer_iterations = 0;
	int evaluations = 0;
	bool feasible_start = true;
	std::vector<double> trace;        // objective after each outer iteration
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

class Solver {
public:
	Solver(const Problem& p, const Options& o) : p_(p), o_(o) {
		n_ = static_cast<int>(p.lo.size());
		owner_.assign(static_cast<std::size_t>(n_), -1);
		offset_.assign(p.blocks.size() + 1, 0);
		for (std::size_t b = 0; b < p.blocks.size(); ++b)
			for (int v : p.blocks[b]) owner_[static_cast<std::size_t>(v)] = static_cast<int>(b);
		for (int v = 0; v < n_; ++v) {
			if (p.hi(v) > p.lo(v) && owner_[static_cast<std::size_t>(v)] < 0)
				throw Error("nlp: free variable not owned by any block");
			if (p.hi(v) > p.lo(v)) free_.push_back(v);
		}
		width_ = p.hi - p.lo;
	}

	Result run(const Vector& x0) {
		const int nb = static_cast<int>(p_.blocks.size());
		Vector u = to_unit(x0);
		Result res;
		// Block sizes of the equality system.
		std::vector<BlockValue> vals(static_cast<std::size_t>(nb));
		for (int b = 0; b < nb; ++b) {
			auto v = eval_block(b, u);
			if (!v) {
				res.feasible_start = false;
				return res;
			}
			vals[static_cast<std::size_t>(b)] = *v;
			offset_[static_cast<std::size_t>(b) + 1] =
			    offset_[static_cast<std::size_t>(b)] + static_cast<int>(v->equality.size());
		}
		const int ne = offset_.back();
		const int ni = static_cast<int>(p_.A.rows());
		lam_ = Vector::Zero(ne);
		mu_ = Vector::Zero(ni);
		rho_ = o_.penalty;
		double prev_violation = kInf;

		for (int outer = 0; outer < o_.max_outer; ++outer) {
			inner(u);
			const Vector x = from_unit(u);
			double obj = 0.0;
			Vector eq(ne);
			for (int b = 0; b < nb; ++b) {
				auto v = eval_block(b, u);
				obj += v->objective;
				eq.segment(offset_[static_cast<std::size_t>(b)], v->equality.size()) =
				    v->equality.cwiseQuotient(p_.equality_scale.segment(offset_[static_cast<std::size_t>(b)], v->equality.size()));
			}
			const Vector g = ineq(x);
			const double violation =
			    std::max(ne ? eq.cwiseAbs().maxCoeff() : 0.0, ni ? g.cwiseMax(0.0).maxCoeff() : 0.0);
			res.trace.push_back(obj);
			res.outer_iterations = outer + 1;
			res.x = x;
			res.objective = obj;
			res.violation = violation;
			if (violation <= o_.feasibility && last_inner_converged_) break;
			lam_ += rho_ * eq;
			mu_ = (mu_ + rho_ * g).cwiseMax(0.0);
			if (violation > 0.25 * prev_violation) rho_ = std::min(rho_ * o_.penalty_growth, o_.max_penalty);
			prev_violation = violation;
		}
		res.equality_multipliers = lam_;
		res.inequality_multipliers = mu_;
		res.evaluations = evaluations_;
		return res;
	}

private:
	const Problem& p_;
	Options o_;
	int n_ = 0;
	std::vector<int> owner_;
	std::vector<int> offset_;
	std::vector<int> free_;
	Vector width_;
	Vector lam_, mu_;
	double rho_ = 1.0;
	int evaluations_ = 0;
	bool last_inner_converged_ = false;
	Vector to_unit(const Vector& x) const {
		Vector u = Vector::Zero(n_);
		for (int v = 0; v < n_; ++v)
			if (width_(v) > 0.0) u(v) = std::clamp((x(v) - p_.lo(v)) / width_(v), 0.0, 1.0);
		return u;
	}
	Vector from_unit(const Vector& u) const {
		Vector x = p_.lo + width_.cwiseProduct(u);
		for (int v = 0; v < n_; ++v) x(v) = std::clamp(x(v), p_.lo(v), p_.hi(v));
		return x;
	}

	std::optional<BlockValue> eval_block(int b, const Vector& u) {
		++evaluations_;
		auto v = p_.evaluate(b, from_unit(u));
		if (v && !std::isfinite(v->objective)) return std::nullopt;
		if (v && !v->equality.allFinite()) return std::nullopt;
		return v;
	}

	Vector ineq(const Vector& x) const {
		if (p_.A.rows() == 0) return Vector();
		return (p_.A * x - p_.b).cwiseQuotient(p_.inequality_scale);
	}

	// Augmented-Lagrangian contribution of one block (minimization form).
	double block_merit(int b, const BlockValue& v) const {
		const int off = offset_[static_cast<std::size_t>(b)];
		const Eigen::Index m = v.equality.size();
		const Vector c = v.equality.cwiseQuotient(p_.equality_scale.segment(off, m));
		return -v.objective / p_.objective_scale + lam_.segment(off, m).dot(c) + 0.5 * rho_ * c.squaredNorm();
	}

	double linear_merit(const Vector& u) const {
		if (p_.A.rows() == 0) return 0.0;
		const Vector g = ineq(from_unit(u));
		double total = 0.0;
		for (Eigen::Index r = 0; r < g.size(); ++r) {
			const double t = std::max(0.0, mu_(r) + rho_ * g(r));
			total += (t * t - mu_(r) * mu_(r)) / (2.0 * rho_);
		}
		return total;
	}

	Vector linear_gradient(const Vector& u) const {
		Vector grad = Vector::Zero(n_);
		if (p_.A.rows() == 0) return grad;
		const Vector g = ineq(from_unit(u));
		for (Eigen::Index r = 0; r < g.size(); ++r) {
			const double t = std::max(0.0, mu_(r) + rho_ * g(r));
			if (t > 0.0) grad += t * (p_.A.row(r).transpose().cwiseProduct(width_)) / p_.inequality_scale(r);
		}
		return grad;
	}

	// Merit of every block plus the linear terms; +inf where undefined.
	double merit(const Vector& u, std::vector<double>* parts) {
		double total = linear_merit(u);
		for (int b = 0; b < static_cast<int>(p_.blocks.size()); ++b) {
			auto v = eval_block(b, u);
			if (!v) return kInf;
			const double m = block_merit(b, *v);
			if (parts) (*parts)[static_cast<std::size_t>(b)] = m;
			total += m;
		}
		return total;
	}

	Vector gradient(const Vector& u, const std::vector<double>& parts) {
		Vector grad = linear_gradient(u);
		Vector w = u;
		for (int v : free_) {
			const int b = owner_[static_cast<std::size_t>(v)];
			const double base = parts[static_cast<std::size_t>(b)];
			double h = u(v) + o_.fd_step <= 1.0 ? o_.fd_step : -o_.fd_step;
			w(v) = u(v) + h;
			auto val = eval_block(b, w);
			if (!val) {
				h = -h;
				w(v) = std::clamp(u(v) + h, 0.0, 1.0);
				h = w(v) - u(v);
				val = h != 0.0 ? eval_block(b, w) : std::nullopt;
			}
			grad(v) += val ? (block_merit(b, *val) - base) / h : 0.0;
			w(v) = u(v);
		}
		return grad;
	}


	// Central-difference gradient of the merit (one-sided at the box).
	Vector central_gradient(const Vector& u, const std::vector<double>& parts) {
		Vector grad = linear_gradient(u);
		Vector w = u;
		const double h = std::cbrt(std::numeric_limits<double>::epsilon());
		for (int v : free_) {
			const int b = owner_[static_cast<std::size_t>(v)];
			std::optional<double> up, down;
			if (u(v) + h <= 1.0) {
				w(v) = u(v) + h;
				if (auto val = eval_block(b, w)) up = block_merit(b, *val);
			}
			if (u(v) - h >= 0.0) {
				w(v) = u(v) - h;
				if (auto val = eval_block(b, w)) down = block_merit(b, *val);
			}
			w(v) = u(v);
			const double base = parts[static_cast<std::size_t>(b)];
			if (up && down) grad(v) += (*up - *down) / (2.0 * h);
			else if (up) grad(v) += (*up - base) / h;
			else if (down) grad(v) += (base - *down) / h;
		}
		return grad;
	}

	// Block-diagonal finite-difference Hessian of the block merits plus the
	// Gauss-Newton Hessian of the active linear-constraint penalty terms.
	Matrix hessian(const Vector& u, const std::vector<double>& parts) {
		Matrix H = Matrix::Zero(n_, n_);
		const double h = o_.hessian_step;
		Vector w = u;
		for (std::size_t b = 0; b < p_.blocks.size(); ++b) {
			std::vector<int> vars;
			for (int v : p_.blocks[b])
				if (width_(v) > 0.0) vars.push_back(v);
			const std::size_t nv = vars.size();
			std::vector<double> step(nv), single(nv, kInf);
			const double f0 = parts[b];
			auto merit_at = [&](const Vector& x) {
				auto val = eval_block(static_cast<int>(b), x);
				return val ? block_merit(static_cast<int>(b), *val) : kInf;
			};
			for (std::size_t a = 0; a < nv; ++a) {
				const int v = vars[a];
				step[a] = u(v) + h <= 1.0 ? h : -h;
				w(v) = u(v) + step[a];
				single[a] = merit_at(w);
				// Diagonal from three points along the same side.
				w(v) = u(v) + 2.0 * step[a];
				const double twice = (u(v) + 2.0 * step[a] >= 0.0 && u(v) + 2.0 * step[a] <= 1.0) ? merit_at(w) : kInf;
				w(v) = u(v) - step[a];
				const double other = (u(v) - step[a] >= 0.0 && u(v) - step[a] <= 1.0) ? merit_at(w) : kInf;
				w(v) = u(v);
				if (std::isfinite(other) && std::isfinite(single[a]))
					H(v, v) = (single[a] - 2.0 * f0 + other) / (h * h);
				else if (std::isfinite(twice) && std::isfinite(single[a]))
					H(v, v) = (twice - 2.0 * single[a] + f0) / (h * h);
			}
			for (std::size_t a = 0; a < nv; ++a)
				for (std::size_t c = a + 1; c < nv; ++c) {
					const int va = vars[a], vc = vars[c];
					w(va) = u(va) + step[a];
					w(vc) = u(vc) + step[c];
					const double both = merit_at(w);
					w(va) = u(va);
					w(vc) = u(vc);
					if (!std::isfinite(both) || !std::isfinite(single[a]) || !std::isfinite(single[c])) continue;
					const double value = (both - single[a] - single[c] + f0) / (step[a] * step[c]);
					H(va, vc) = H(vc, va) = value;
				}
		}
		if (p_.A.rows() > 0) {
			const Vector g = ineq(from_unit(u));
			for (Eigen::Index r = 0; r < g.size(); ++r) {
				if (!(mu_(r) + rho_ * g(r) > 0.0)) continue;
				const Vector a = p_.A.row(r).transpose().cwiseProduct(width_) / p_.inequality_scale(r);
				H += rho_ * a * a.transpose();
			}
		}
		return H;
	}

	// Projected Newton: Newton direction on the variables not pinned at a
	// bound, Levenberg shift until the reduced Hessian is positive definite,
	// projected backtracking line search.
	void newton(Vector& u) {
		const std::size_t nb = p_.blocks.size();
		std::vector<double> parts(nb), trial_parts(nb);
		double f = merit(u, &parts);
		last_inner_converged_ = false;
		if (!std::isfinite(f)) return;
		double shift = 0.0;
		int stalls = 0;
		for (int it = 0; it < o_.max_inner; ++it) {
			const Vector g = central_gradient(u, parts);
			const double pg = projected_norm(u, g);
			if (pg <= o_.tolerance) {
				last_inner_converged_ = true;
				return;
			}
			std::vector<int> active;
			const double eps = 1e-12;
			for (int v : free_)
				if (!((u(v) <= eps && g(v) > 0.0) || (u(v) >= 1.0 - eps && g(v) < 0.0))) active.push_back(v);
			const int na = static_cast<int>(active.size());
			const Matrix H = hessian(u, parts);
			Matrix Hr(na, na);
			Vector gr(na);
			for (int a = 0; a < na; ++a) {
				gr(a) = g(active[static_cast<std::size_t>(a)]);
				for (int c = 0; c < na; ++c) Hr(a, c) = H(active[static_cast<std::size_t>(a)], active[static_cast<std::size_t>(c)]);
			}
			const double scale = std::max(1e-12, Hr.diagonal().cwiseAbs().maxCoeff());
			shift = std::max(shift * 0.25, 0.0);
			Vector dr;
			for (int attempt = 0; attempt < 60; ++attempt) {
				Eigen::LLT<Matrix> llt(Hr + shift * Matrix::Identity(na, na));
				if (llt.info() == Eigen::Success) {
					dr = llt.solve(-gr);
					if (dr.allFinite() && dr.dot(gr) < 0.0) break;
				}
				dr.resize(0);
				shift = std::max(2.0 * shift, 1e-8 * scale);
			}
			if (dr.size() != na) return;
			Vector d = Vector::Zero(n_);
			for (int a = 0; a < na; ++a) d(active[static_cast<std::size_t>(a)]) = dr(a);
			// Long steps are truncated to the unit box's diameter.
			const double longest = d.cwiseAbs().maxCoeff();
			if (longest > 1.0) d /= longest;

			double step = 1.0, ft = kInf;
			Vector trial;
			bool accepted = false;
			for (int ls = 0; ls < 40; ++ls) {
				trial = (u + step * d).cwiseMax(0.0).cwiseMin(1.0);
				ft = merit(trial, &trial_parts);
				if (std::isfinite(ft) && ft <= f + 1e-4 * g.dot(trial - u)) {
					accepted = true;
					break;
				}
				step *= 0.5;
			}
			if (!accepted) {
				shift = std::max(10.0 * shift, 1e-4 * scale);
				if (++stalls >= 3) return;
				continue;
			}
			if (step < 1.0) shift = std::max(2.0 * shift, 1e-8 * scale);
			const double decrease = f - ft;
			u = trial;
			f = ft;
			parts = trial_parts;
			stalls = decrease <= 1e-15 * (1.0 + std::abs(f)) ? stalls + 1 : 0;
			if (stalls >= 3) {
				last_inner_converged_ = true;
				return;
			}
		}
	}

	static double projected_norm(const Vector& u, const Vector& g) {
		double worst = 0.0;
		for (Eigen::Index i = 0; i < u.size(); ++i) {
			const double step = std::clamp(u(i) - g(i), 0.0, 1.0) - u(i);
			worst = std::max(worst, std::abs(step));
		}
		return worst;
	}

	void inner(Vector& u) {
		if (o_.method == Options::Method::newton) {
			newton(u);
			return;
		}
		const std::size_t nb = p_.blocks.size();
		std::vector<double> parts(nb);
		double f = merit(u, &parts);
		last_inner_converged_ = false;
		if (!std::isfinite(f)) return;
		Vector g = gradient(u, parts);
		std::deque<std::pair<Vector, Vector>> memory;
		int stalls = 0;
		for (int it = 0; it < o_.max_inner; ++it) {
			if (projected_norm(u, g) <= o_.tolerance) {
				last_inner_converged_ = true;
				return;
			}
			// Free set: variables not pinned at a bound by the gradient.
			Vector mask = Vector::Ones(n_);
			for (int v = 0; v < n_; ++v)
				if (width_(v) <= 0.0 || (u(v) <= 0.0 && g(v) > 0.0) || (u(v) >= 1.0 && g(v) < 0.0)) mask(v) = 0.0;
			Vector q = g.cwiseProduct(mask);
			std::vector<double> alpha(memory.size());
			for (std::size_t k = memory.size(); k-- > 0;) {
				const auto& [s, y] = memory[k];
				alpha[k] = s.dot(q) / y.dot(s);
				q -= alpha[k] * y.cwiseProduct(mask);
			}
			if (!memory.empty()) {
				const auto& [s, y] = memory.back();
				q *= s.dot(y) / y.squaredNorm();
			} else {
				const double gn = q.cwiseAbs().maxCoeff();
				if (gn > 0.0) q *= std::min(1.0, 0.1 / gn);
			}
			for (std::size_t k = 0; k < memory.size(); ++k) {
				const auto& [s, y] = memory[k];
				const double beta = y.dot(q) / y.dot(s);
				q += (alpha[k] - beta) * s.cwiseProduct(mask);
			}
			Vector d = -q.cwiseProduct(mask);
			if (g.dot(d) >= 0.0) {
				memory.clear();
				d = -g.cwiseProduct(mask);
				const double gn = d.cwiseAbs().maxCoeff();
				if (gn > 0.0) d *= std::min(1.0, 0.1 / gn);
			}

			double step = 1.0;
			Vector trial;
			double ft = kInf;
			bool accepted = false;
			for (int ls = 0; ls < 40; ++ls) {
				trial = (u + step * d).cwiseMax(0.0).cwiseMin(1.0);
				ft = merit(trial, &parts);
				if (std::isfinite(ft) && ft <= f + 1e-4 * g.dot(trial - u)) {
					accepted = true;
					break;
				}
				step *= 0.5;
			}
			if (!accepted) {
				if (memory.empty()) return;
				memory.clear();
				continue;
			}
			const Vector gt = gradient(trial, parts);
			const Vector s = trial - u;
			const Vector y = gt - g;
			if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
				memory.emplace_back(s, y);
				if (static_cast<int>(memory.size()) > o_.memory) memory.pop_front();
			}
			const double decrease = f - ft;
			u = trial;
			g = gt;
			f = ft;
			stalls = decrease <= 1e-14 * (1.0 + std::abs(f)) ? stalls + 1 : 0;
			if (stalls >= 5) {
				last_inner_converged_ = true;
				return;
			}
		}
	}
};

} // namespace detail

inline Result solve(const Problem& problem, const Vector& x0, const Options& options = {}) {
	detail::Solver solver(problem, options);
	return solver.run(x0);
}

/// Forward-difference Jacobian of the blocks' objective and equality rows in
/// original units. Rows of `objective` and columns of `equality` follow the
/// variable order; infeasible perturbations fall back to a backward step.
struct Derivatives {
	Vector objective;  // d objective / dx
	Matrix equality;   // rows: equality residuals (concatenated), cols: variables
};

/// Finite-difference gradient and equality Jacobian in original units: central
/// where both neighbours are in the domain and inside the box, one-sided otherwise.
inline Derivatives differentiate(const Problem& p, const Vector& x, double relative_step = 1e-6) {
	const int n = static_cast<int>(x.size());
	std::vector<BlockValue> base;
	std::vector<int> offset{0};
	for (std::size_t b = 0; b < p.blocks.size(); ++b) {
		auto v = p.evaluate(static_cast<int>(b), x);
		if (!v) throw DomainError("differentiate: point is outside the model's domain");
		base.push_back(*v);
		offset.push_back(offset.back() + static_cast<int>(v->equality.size()));
	}
	Derivatives d{Vector::Zero(n), Matrix::Zero(offset.back(), n)};
	Vector w = x;
	auto probe = [&](std::size_t b, int v, double h) -> std::optional<BlockValue> {
		if (x(v) + h > p.hi(v) || x(v) + h < p.lo(v)) return std::nullopt;
		w(v) = x(v) + h;
		auto val = p.evaluate(static_cast<int>(b), w);
		w(v) = x(v);
		return val;
	};
	for (std::size_t b = 0; b < p.blocks.size(); ++b)
		for (int v : p.blocks[b]) {
			if (!(p.hi(v) > p.lo(v))) continue;
			const double h = relative_step * std::max(std::abs(x(v)), 1e-3 * (p.hi(v) - p.lo(v)));
			const auto up = probe(b, v, h);
			const auto down = probe(b, v, -h);
			const int rows = static_cast<int>(base[b].equality.size());
			if (up && down) {
				d.objective(v) = (up->objective - down->objective) / (2.0 * h);
				d.equality.block(offset[b], v, rows, 1) = (up->equality - down->equality) / (2.0 * h);
			} else if (up || down) {
				const BlockValue& one = up ? *up : *down;
				const double step = up ? h : -h;
				d.objective(v) = (one.objective - base[b].objective) / step;
				d.equality.block(offset[b], v, rows, 1) = (one.equality - base[b].equality) / step;
			}
		}
	return d;
}

} // namespace chargenet::nlp

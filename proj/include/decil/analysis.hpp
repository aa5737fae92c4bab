#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "decil/env.hpp"
#include "decil/io.hpp"
#include "decil/rollout.hpp"
#include "decil/train.hpp"

namespace decil {

using VectorFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Central differences, column j = (fn(x + eps e_j) - fn(x - eps e_j)) / (2 eps).
inline Eigen::MatrixXd fd_jacobian(const VectorFn& fn, const Eigen::VectorXd& x, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("fd_jacobian: eps must be > 0");
    const Eigen::VectorXd f0 = fn(x);
    Eigen::MatrixXd jac(f0.size(), x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        Eigen::VectorXd xp = x, xm = x;
        xp[j] += eps;
        xm[j] -= eps;
        const Eigen::VectorXd col = (fn(xp) - fn(xm)) / (2.0 * eps);
        if (!col.allFinite())
            throw NumericError("fd_jacobian: non-finite output in column " + std::to_string(j));
        jac.col(j) = col;
    }
    return jac;
}

struct JacobianReport {
    Eigen::VectorXd probe_state;  // raw units; Jacobians in normalized coordinates
    Eigen::MatrixXd J_f, J_gx, J_gy, J_h;
    std::map<std::string, double> fro_norms;
    double chain_rule_residual = 0.0;  // ||J_h - (J_gx + J_gy J_f)||_F
};

// Finite-difference Jacobians of f, the two input blocks of g, and the
// composite h(x) = g(x, f(x)), plus the chain-rule residual.
inline JacobianReport composite_jacobians(const DynamicsModel& f, const DenoisingPolicy& d,
                                          const State& x_raw, double eps) {
    JacobianReport rep;
    rep.probe_state = x_raw;
    const Eigen::VectorXd xn = f.stats.norm_state(x_raw);
    const Eigen::VectorXd yn = f.predict_norm(xn);

    rep.J_f = fd_jacobian([&](const Eigen::VectorXd& v) { return f.predict_norm(v); }, xn, eps);
    rep.J_gx = fd_jacobian([&](const Eigen::VectorXd& v) { return d.refine_norm(v, yn); }, xn, eps);
    rep.J_gy = fd_jacobian([&](const Eigen::VectorXd& v) { return d.refine_norm(xn, v); }, yn, eps);
    rep.J_h = fd_jacobian(
        [&](const Eigen::VectorXd& v) { return d.refine_norm(v, f.predict_norm(v)); }, xn, eps);

    rep.chain_rule_residual = (rep.J_h - (rep.J_gx + rep.J_gy * rep.J_f)).norm();
    rep.fro_norms = {{"J_f", rep.J_f.norm()},
                     {"J_gx", rep.J_gx.norm()},
                     {"J_gy", rep.J_gy.norm()},
                     {"J_h", rep.J_h.norm()}};
    return rep;
}

struct NormAuditReport {
    std::vector<double> before_norms;
    std::vector<double> after_norms;
    double fraction_reduced = 0.0;  // strict <, per probe point
    bool degenerate_equal = false;  // every pair exactly equal
};

// ||J_{g,y}||_F at probe points (x_t, y = x_next) for an untrained vs a
// trained policy; probes are spread evenly over the dataset.
inline NormAuditReport jacobian_norm_audit(const DenoisingPolicy& d_before,
                                           const DenoisingPolicy& d_after,
                                           const TrajectoryDataset& data, int n_probe,
                                           double eps = 1e-4) {
    if (d_before.net.layer_dims != d_after.net.layer_dims)
        throw ShapeError("jacobian_norm_audit: policies must share architecture");
    const auto flat = data.flat();
    const int n = static_cast<int>(flat.size());
    n_probe = std::min(n_probe, n);

    NormAuditReport rep;
    int reduced = 0;
    bool all_equal = true;
    for (int k = 0; k < n_probe; ++k) {
        const Transition& tr = *flat[(static_cast<long>(k) * n) / n_probe];
        const Eigen::VectorXd xn = data.stats.norm_state(tr.x_t);
        const Eigen::VectorXd yn = data.stats.norm_state(tr.x_next);
        auto norm_at = [&](const DenoisingPolicy& d) {
            return fd_jacobian([&](const Eigen::VectorXd& v) { return d.refine_norm(xn, v); }, yn,
                               eps)
                .norm();
        };
        const double nb = norm_at(d_before);
        const double na = norm_at(d_after);
        rep.before_norms.push_back(nb);
        rep.after_norms.push_back(na);
        if (na < nb) ++reduced;
        if (na != nb) all_equal = false;
    }
    rep.fraction_reduced = n_probe > 0 ? static_cast<double>(reduced) / n_probe : 0.0;
    rep.degenerate_equal = all_equal;
    return rep;
}

// Monte Carlo check of the small-noise quadratic law for a linear denoiser
// g(x, y) = x_next + J (y - x_next): E||g - x_next||^2 = sigma^2 ||J||_F^2
// exactly, so the MC estimate must match up to sampling error.
inline double quadratic_loss_check(const Eigen::MatrixXd& J, double sigma, int n_mc,
                                   std::uint64_t seed) {
    if (sigma <= 0.0) throw std::invalid_argument("quadratic_loss_check: sigma must be > 0");
    const double expected = sigma * sigma * J.squaredNorm();
    auto rng = make_rng(seed, "quad_loss");
    double acc = 0.0;
    for (int k = 0; k < n_mc; ++k) {
        const Eigen::VectorXd eta = gaussian_vector(static_cast<int>(J.cols()), sigma, rng);
        acc += (J * eta).squaredNorm();
    }
    const double estimate = acc / n_mc;
    if (expected == 0.0) return 0.0;
    return std::abs(estimate - expected) / expected;
}

inline double quadratic_loss_check(double sigma, int n_mc, std::uint64_t seed) {
    Eigen::MatrixXd J(2, 2);
    J << 0.4, -0.2, 0.1, 0.6;
    return quadratic_loss_check(J, sigma, n_mc, seed);
}

struct SensitivityRecord {
    double sigma_train = 0.0;
    double sigma_s = 0.0;
    std::vector<double> per_state_rho;
    double mean_rho = 0.0;
    int n_excluded = 0;  // states with S_f below threshold
};

// rho(x) = S_{f o d}(x) / S_f(x) with shared noise draws between numerator
// and denominator; all in normalized units.
inline SensitivityRecord sensitivity_ratio(const DynamicsModel& f, const DenoisingPolicy& d,
                                           const TrajectoryDataset& data, double sigma_s,
                                           int n_mc, std::uint64_t seed) {
    if (sigma_s <= 0.0) throw std::invalid_argument("sensitivity_ratio: sigma_s must be > 0");
    if (n_mc < 100) throw std::invalid_argument("sensitivity_ratio: n_mc must be >= 100");

    SensitivityRecord rec;
    rec.sigma_s = sigma_s;
    const auto flat = data.flat();
    const int sd = data.state_dim;

    auto rng = make_rng(seed, "sensitivity/noise");
    Eigen::MatrixXd eta(sd, n_mc);
    for (int k = 0; k < n_mc; ++k) eta.col(k) = gaussian_vector(sd, sigma_s, rng);

    double sum_rho = 0.0;
    for (const Transition* tr : flat) {
        const Eigen::VectorXd xn = data.stats.norm_state(tr->x_t);
        const Eigen::VectorXd target = data.stats.norm_state(tr->x_next);
        Eigen::MatrixXd noisy = eta.colwise() + xn;
        Eigen::MatrixXd f_out = f.predict_norm_batch(noisy);
        Eigen::MatrixXd d_out = d.eval_norm_batch(noisy, f_out).topRows(sd);
        const double s_f = (f_out.colwise() - target).colwise().norm().mean();
        const double s_fd = (d_out.colwise() - target).colwise().norm().mean();
        if (s_f < 1e-12) {
            ++rec.n_excluded;
            continue;
        }
        const double rho = s_fd / s_f;
        rec.per_state_rho.push_back(rho);
        sum_rho += rho;
    }
    rec.mean_rho =
        rec.per_state_rho.empty() ? 0.0 : sum_rho / static_cast<double>(rec.per_state_rho.size());
    return rec;
}

struct ErrorBoundReport {
    double eps_x = 0.0;       // 95th pct of ||x_hat - x_next||
    double eps_a = 0.0;       // 95th pct of ||a_hat - a_t||
    double lipschitz_a = 0.0; // max operator norm of dD/da over probe states
    double fraction_satisfied = 0.0;
    int n_transitions = 0;
};

namespace detail {

inline double percentile(std::vector<double> v, double p) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = p * (v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - lo;
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

// largest singular value via power iteration on J^T J
inline double operator_norm(const Eigen::MatrixXd& jac, int iters = 50) {
    Eigen::MatrixXd m = jac.transpose() * jac;
    Eigen::VectorXd v = Eigen::VectorXd::Ones(m.cols()).normalized();
    double lambda = 0.0;
    for (int i = 0; i < iters; ++i) {
        Eigen::VectorXd w = m * v;
        lambda = w.norm();
        if (lambda < 1e-300) return 0.0;
        v = w / lambda;
    }
    return std::sqrt(lambda);
}

}  // namespace detail

// Per-sample audit of the environment error bound
// ||D(x_t, a_hat) - x_hat|| <= L_a ||a_hat - a_t|| + ||x_hat - x_next||.
inline ErrorBoundReport error_bound_audit(const Environment& env, const DynamicsModel& f,
                                          const DenoisingPolicy& d, const TrajectoryDataset& data,
                                          double eps_fd = 1e-4) {
    ErrorBoundReport rep;
    const auto flat = data.flat();
    rep.n_transitions = static_cast<int>(flat.size());

    std::vector<double> state_err, action_err;
    std::vector<State> x_hats;
    std::vector<Action> a_hats;
    state_err.reserve(flat.size());
    for (const Transition* tr : flat) {
        auto [x_hat, a_hat] = decil_step(f, d, tr->x_t);
        state_err.push_back((x_hat - tr->x_next).norm());
        action_err.push_back((a_hat - tr->a_t).norm());
        x_hats.push_back(std::move(x_hat));
        a_hats.push_back(std::move(a_hat));
    }
    rep.eps_x = detail::percentile(state_err, 0.95);
    rep.eps_a = detail::percentile(action_err, 0.95);

    const int n_probe = std::min<int>(200, rep.n_transitions);
    double lip = 0.0;
    for (int k = 0; k < n_probe; ++k) {
        const Transition& tr = *flat[(static_cast<long>(k) * rep.n_transitions) / n_probe];
        const Eigen::MatrixXd jac = fd_jacobian(
            [&](const Eigen::VectorXd& a) { return env.step(tr.x_t, a); }, tr.a_t, eps_fd);
        lip = std::max(lip, detail::operator_norm(jac));
    }
    rep.lipschitz_a = lip;

    int satisfied = 0;
    for (std::size_t i = 0; i < flat.size(); ++i) {
        const double lhs = (env.step(flat[i]->x_t, a_hats[i]) - x_hats[i]).norm();
        const double rhs = lip * action_err[i] + state_err[i];
        if (lhs <= rhs + 1e-12) ++satisfied;
    }
    rep.fraction_satisfied =
        rep.n_transitions > 0 ? static_cast<double>(satisfied) / rep.n_transitions : 0.0;
    return rep;
}

struct VectorFieldResult {
    std::vector<State> traj_f;   // integrated under v_f
    std::vector<State> traj_fd;  // integrated under v_fd
    int grid_rows = 0;
    int total_rows = 0;
};

// Drift field v_f = (f(x) - x)/dt and corrected field v_fd = (h(x) - x)/dt on
// a 2-D grid, plus one explicit-Euler trajectory per field from x0. CSV rows:
// kind,step,x0,x1,v0,v1 (v empty for trajectory rows).
inline VectorFieldResult vector_field_export(const DynamicsModel& f, const DenoisingPolicy& d,
                                             double xmin, double xmax, double ymin, double ymax,
                                             int resolution, double dt, const State& x0,
                                             int steps, std::ostream& out) {
    if (d.state_dim != 2) throw std::invalid_argument("vector_field_export: 2-D state only");

    auto predict_f = [&](const State& x) { return f.predict(x); };
    auto predict_h = [&](const State& x) {
        const Eigen::VectorXd xn = f.stats.norm_state(x);
        return d.stats.denorm_state(d.refine_norm(xn, f.predict_norm(xn)));
    };

    VectorFieldResult res;
    out << "kind,index,x0,x1,vf0,vf1,vfd0,vfd1\n";
    for (int i = 0; i < resolution; ++i) {
        for (int j = 0; j < resolution; ++j) {
            State x(2);
            x << xmin + (xmax - xmin) * i / std::max(1, resolution - 1),
                ymin + (ymax - ymin) * j / std::max(1, resolution - 1);
            const State vf = (predict_f(x) - x) / dt;
            const State vfd = (predict_h(x) - x) / dt;
            out << "grid," << i * resolution + j << ',' << fmt_double(x[0]) << ','
                << fmt_double(x[1]) << ',' << fmt_double(vf[0]) << ',' << fmt_double(vf[1])
                << ',' << fmt_double(vfd[0]) << ',' << fmt_double(vfd[1]) << "\n";
            res.grid_rows += 1;
        }
    }

    auto integrate = [&](auto&& predict, const char* kind, std::vector<State>& traj) {
        State x = x0;
        traj.push_back(x);
        out << kind << ",0," << fmt_double(x[0]) << ',' << fmt_double(x[1]) << ",,,,\n";
        for (int s = 1; s <= steps; ++s) {
            x = x + dt * ((predict(x) - x) / dt);  // Euler step under the field
            traj.push_back(x);
            out << kind << ',' << s << ',' << fmt_double(x[0]) << ',' << fmt_double(x[1])
                << ",,,,\n";
        }
    };
    integrate(predict_f, "traj_f", res.traj_f);
    integrate(predict_h, "traj_fd", res.traj_fd);
    res.total_rows = res.grid_rows + 2 * (steps + 1);
    return res;
}

inline void to_json(nlohmann::json& j, const JacobianReport& r) {
    j = nlohmann::json{{"probe_state", vec_to_json(r.probe_state)},
                       {"fro_norms", r.fro_norms},
                       {"chain_rule_residual", r.chain_rule_residual}};
}

inline void to_json(nlohmann::json& j, const NormAuditReport& r) {
    j = nlohmann::json{{"before_norms", r.before_norms},
                       {"after_norms", r.after_norms},
                       {"fraction_reduced", r.fraction_reduced},
                       {"degenerate_equal", r.degenerate_equal}};
}

inline void to_json(nlohmann::json& j, const SensitivityRecord& r) {
    j = nlohmann::json{{"sigma_train", r.sigma_train},
                       {"sigma_s", r.sigma_s},
                       {"mean_rho", r.mean_rho},
                       {"n_states", r.per_state_rho.size()},
                       {"n_excluded", r.n_excluded}};
}

inline void to_json(nlohmann::json& j, const ErrorBoundReport& r) {
    j = nlohmann::json{{"eps_x", r.eps_x},
                       {"eps_a", r.eps_a},
                       {"lipschitz_a", r.lipschitz_a},
                       {"fraction_satisfied", r.fraction_satisfied},
                       {"n_transitions", r.n_transitions}};
}

}  // namespace decil

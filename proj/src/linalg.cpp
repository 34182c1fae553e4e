#include "lipscan/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>

#include "lipscan/rng.hpp"

namespace lipscan::linalg {

namespace {

constexpr double kSigmaFloor = 1e-12;
constexpr Eigen::Index kDenseOraclePolicy = 256;

Vec random_unit(Eigen::Index n, Rng& rng) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
    const double nrm = v.norm();
    if (nrm > 0.0) v /= nrm;
    return v;
}

} // namespace

LinearOperator LinearOperator::from_matrix(const Mat& m) {
    LinearOperator op;
    op.rows = m.rows();
    op.cols = m.cols();
    op.apply = [m](const Vec& v) -> Vec { return m * v; };
    op.apply_adjoint = [m](const Vec& u) -> Vec { return m.transpose() * u; };
    return op;
}

LinearOperator LinearOperator::symmetric(Eigen::Index n, std::function<Vec(const Vec&)> apply) {
    LinearOperator op;
    op.rows = n;
    op.cols = n;
    op.apply = apply;
    op.apply_adjoint = std::move(apply);
    return op;
}

PowerResult power_method(const LinearOperator& op, const PowerConfig& cfg) {
    PowerResult res;
    for (int restart = 0; restart <= 3; ++restart) {
        Rng rng(cfg.seed, "power_method", static_cast<std::uint64_t>(restart));
        Vec v = random_unit(op.cols, rng);
        double sigma_prev = 0.0;
        bool dead_start = false;
        for (int t = 1; t <= cfg.max_iters; ++t) {
            Vec u_tilde = op.apply(v);
            const double un = u_tilde.norm();
            if (un == 0.0) {
                dead_start = (t == 1);
                break;
            }
            Vec u = u_tilde / un;
            Vec v_tilde = op.apply_adjoint(u);
            const double sigma = v_tilde.norm(); // equals u^T op v_t for normalized v_t
            res.iters = t;
            if (sigma == 0.0) {
                res.sigma = un; // op v lies in the range but op^T u vanished numerically
                res.converged = true;
                return res;
            }
            v = v_tilde / sigma;
            res.sigma = sigma;
            if (std::abs(sigma - sigma_prev) <= cfg.rel_tol * std::max(std::abs(sigma), kSigmaFloor)) {
                res.converged = true;
                return res;
            }
            sigma_prev = sigma;
        }
        if (!dead_start) return res; // ran out of iterations: converged=false
    }
    // the operator annihilated three independent random starts: treat as zero
    res.sigma = 0.0;
    res.converged = true;
    return res;
}

SymPowerResult sym_power_method(const LinearOperator& op, const PowerConfig& cfg) {
    SymPowerResult res;
    res.eigvec = Vec::Zero(op.cols);
    for (int restart = 0; restart <= 3; ++restart) {
        Rng rng(cfg.seed, "sym_power_method", static_cast<std::uint64_t>(restart));
        Vec v = random_unit(op.cols, rng);
        double lambda_prev = 0.0;
        bool dead_start = false;
        for (int t = 1; t <= cfg.max_iters; ++t) {
            Vec w = op.apply(v);
            const double lambda = v.dot(w);
            const double wn = w.norm();
            res.iters = t;
            if (wn == 0.0) {
                dead_start = (t == 1);
                if (!dead_start) { // v landed exactly in the null space mid-run
                    res.lambda = lambda;
                    res.eigvec = v;
                    res.converged = true;
                    return res;
                }
                break;
            }
            v = w / wn;
            res.lambda = lambda;
            res.eigvec = v;
            if (t > 1 &&
                std::abs(lambda - lambda_prev) <= cfg.rel_tol * std::max(std::abs(lambda), kSigmaFloor)) {
                res.converged = true;
                return res;
            }
            lambda_prev = lambda;
        }
        if (!dead_start) return res;
    }
    res.lambda = 0.0;
    res.converged = true;
    return res;
}

LanczosResult lanczos_extremes(const LinearOperator& op, int k, double zero_tol,
                               std::uint64_t seed) {
    const Eigen::Index n = op.cols;
    if (k > n) k = static_cast<int>(n);
    if (k < 1) throw Error("lanczos_extremes: k must be >= 1");

    std::vector<Vec> basis;
    std::vector<double> alphas, betas; // betas[j] couples step j and j+1
    basis.reserve(static_cast<size_t>(k));

    Rng rng(seed, "lanczos", 0);
    auto fresh_vector = [&]() -> Vec {
        // random start orthogonal to everything converged so far
        for (int attempt = 0; attempt < 8; ++attempt) {
            Vec v = random_unit(n, rng);
            for (const Vec& q : basis) v -= q.dot(v) * q;
            const double nrm = v.norm();
            if (nrm > 1e-8) return v / nrm;
        }
        return Vec();
    };

    Vec v = fresh_vector();
    if (v.size() == 0) throw Error("lanczos_extremes: cannot find a nonzero start vector");

    int restarts = 0;
    while (static_cast<int>(basis.size()) < k) {
        basis.push_back(v);
        Vec w = op.apply(v);
        const double alpha = v.dot(w);
        alphas.push_back(alpha);
        if (static_cast<int>(basis.size()) == k) break;

        // full reorthogonalization against all stored Lanczos vectors
        for (const Vec& q : basis) w -= q.dot(w) * q;
        for (const Vec& q : basis) w -= q.dot(w) * q; // second pass for stability

        const double beta = w.norm();
        const double scale = std::max(1.0, std::abs(alpha));
        if (beta <= 1e-12 * scale) {
            // invariant subspace found; restart in the orthogonal complement
            if (++restarts > 3 || static_cast<Eigen::Index>(basis.size()) >= n) break;
            Vec nv = fresh_vector();
            if (nv.size() == 0) break;
            v = nv;
            betas.push_back(0.0);
        } else {
            v = w / beta;
            betas.push_back(beta);
        }
    }

    const int m = static_cast<int>(alphas.size());
    Mat tri = Mat::Zero(m, m);
    for (int i = 0; i < m; ++i) {
        tri(i, i) = alphas[static_cast<size_t>(i)];
        if (i + 1 < m) {
            tri(i, i + 1) = betas[static_cast<size_t>(i)];
            tri(i + 1, i) = betas[static_cast<size_t>(i)];
        }
    }
    const Vec ritz = exact_eig_symmetric(tri);

    LanczosResult res;
    res.steps = m;
    res.lambda_max = ritz[m - 1];
    res.lambda_min = ritz[0];
    const double threshold = zero_tol * std::max(1.0, std::abs(res.lambda_max));
    for (int i = 0; i < m; ++i) {
        if (std::abs(ritz[i]) > threshold) {
            if (!res.lambda_min_nonzero || ritz[i] < *res.lambda_min_nonzero)
                res.lambda_min_nonzero = ritz[i];
        }
    }
    return res;
}

Vec dense_svd_oracle(const Mat& m) {
    if (m.rows() > kDenseOraclePolicy || m.cols() > kDenseOraclePolicy)
        throw TooLarge("dense_svd_oracle: matrix exceeds 256x256 policy");
    Eigen::JacobiSVD<Mat> svd(m);
    return svd.singularValues();
}

Vec exact_eig_symmetric(const Mat& m) {
    if (m.rows() > kDenseOraclePolicy || m.cols() > kDenseOraclePolicy)
        throw TooLarge("exact_eig_symmetric: matrix exceeds 256x256 policy");
    if (m.rows() != m.cols()) throw ShapeMismatch("exact_eig_symmetric: matrix not square");
    Eigen::SelfAdjointEigenSolver<Mat> es(m);
    if (es.info() != Eigen::Success) throw NoConvergence("exact_eig_symmetric: solver failed");
    return es.eigenvalues();
}

bool adjoint_consistent(const LinearOperator& op, std::uint64_t seed, double tol) {
    Rng rng(seed, "adjoint_check", 0);
    for (int trial = 0; trial < 5; ++trial) {
        Vec v = random_unit(op.cols, rng);
        Vec u = random_unit(op.rows, rng);
        const Vec av = op.apply(v);
        const Vec atu = op.apply_adjoint(u);
        const double lhs = u.dot(av);
        const double rhs = atu.dot(v);
        const double scale = std::max(1.0, u.norm() * av.norm() + atu.norm() * v.norm());
        if (std::abs(lhs - rhs) > tol * scale) return false;
    }
    return true;
}

} // namespace lipscan::linalg

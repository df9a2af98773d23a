#include "condsr/error.hpp"
#include "condsr/shift_metrics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace condsr;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
    Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& row : r) {
        Eigen::Index j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

// Brute-force CMD straight from the definition, one column at a time.
double cmd_oracle(const Matrix& a, const Matrix& b, int order) {
    double total = 0.0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double ma = a.col(c).mean();
        const double mb = b.col(c).mean();
        total += (ma - mb) * (ma - mb);
        for (int k = 2; k <= order; ++k) {
            double ca = 0.0, cb = 0.0;
            for (Eigen::Index i = 0; i < a.rows(); ++i) ca += std::pow(a(i, c) - ma, k);
            for (Eigen::Index i = 0; i < b.rows(); ++i) cb += std::pow(b(i, c) - mb, k);
            ca /= static_cast<double>(a.rows());
            cb /= static_cast<double>(b.rows());
            total += (ca - cb) * (ca - cb);
        }
    }
    return total;
}

double rbf_mmd_oracle(const Matrix& a, const Matrix& b, double sigma) {
    auto k = [&](const Eigen::RowVectorXd& x, const Eigen::RowVectorXd& y) {
        return std::exp(-(x - y).squaredNorm() / (2.0 * sigma * sigma));
    };
    double aa = 0, bb = 0, ab = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.rows(); ++j) aa += k(a.row(i), a.row(j));
    }
    for (Eigen::Index i = 0; i < b.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.rows(); ++j) bb += k(b.row(i), b.row(j));
    }
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.rows(); ++j) ab += k(a.row(i), b.row(j));
    }
    const double na = static_cast<double>(a.rows()), nb = static_cast<double>(b.rows());
    return aa / (na * na) + bb / (nb * nb) - 2.0 * ab / (na * nb);
}

}  // namespace

TEST_CASE("cmd examples") {
    const Matrix h1 = rows({{0, 0}, {2, 2}});
    const Matrix h2 = rows({{1, 1}, {1, 1}});
    CHECK(cmd_value(h1, h1, {}) == 0.0);
    CHECK(cmd_value(h1, h2, {1, -1, 1}) == doctest::Approx(0.0));
    CHECK(cmd_value(h1, h2, {2, -1, 1}) == doctest::Approx(2.0));
}

TEST_CASE("cmd matches the brute-force moment oracle") {
    Rng rng(1);
    for (int order = 1; order <= 6; ++order) {
        const Matrix a = oracle::random_matrix(7, 3, rng).array().tanh();
        const Matrix b = oracle::random_matrix(5, 3, rng).array().tanh();
        CHECK(cmd_value(a, b, {order, -1, 1}) == doctest::Approx(cmd_oracle(a, b, order)).epsilon(1e-12));
    }
}

TEST_CASE("mmd examples") {
    const Matrix h1 = rows({{0, 0}, {2, 2}});
    const Matrix h2 = rows({{1, 1}, {1, 1}});
    CHECK(std::abs(mmd_value(h1, h1, {Kernel::Rbf, std::nullopt})) < 1e-12);
    CHECK(std::abs(mmd_value(h1, h1, {Kernel::Linear, std::nullopt})) < 1e-12);
    CHECK(mmd_value(h1, h2, {Kernel::Linear, std::nullopt}) == doctest::Approx(0.0));
    const double got = mmd_value(rows({{0}}), rows({{2}}), {Kernel::Rbf, 1.0});
    CHECK(got == doctest::Approx(2.0 - 2.0 * std::exp(-2.0)).epsilon(1e-14));
    CHECK(got == doctest::Approx(1.72933).epsilon(1e-5));
}

TEST_CASE("mmd matches the brute-force kernel-sum oracle") {
    Rng rng(2);
    const Matrix a = oracle::random_matrix(6, 4, rng);
    const Matrix b = oracle::random_matrix(9, 4, rng);
    CHECK(mmd_value(a, b, {Kernel::Rbf, 0.7}) == doctest::Approx(rbf_mmd_oracle(a, b, 0.7)).epsilon(1e-12));
    const double sigma = median_heuristic_bandwidth(a, b);
    CHECK(mmd_value(a, b, {}) == doctest::Approx(rbf_mmd_oracle(a, b, sigma)).epsilon(1e-12));
    const double lin = (a.colwise().mean() - b.colwise().mean()).squaredNorm();
    CHECK(mmd_value(a, b, {Kernel::Linear, std::nullopt}) == doctest::Approx(lin).epsilon(1e-12));
}

TEST_CASE("median heuristic") {
    const Matrix a = rows({{0}, {1}});
    const Matrix b = rows({{3}});
    // Pairwise distances 1, 3, 2: median 2.
    CHECK(median_heuristic_bandwidth(a, b) == doctest::Approx(2.0));
    CHECK(median_heuristic_bandwidth(rows({{1}}), rows({{1}})) == 1.0);
}

TEST_CASE("symmetry, nonnegativity, shift sensitivity") {
    Rng rng(3);
    for (int t = 0; t < 1000; ++t) {
        const Matrix a = oracle::random_matrix(4, 2, rng).array().tanh();
        const Matrix b = oracle::random_matrix(4, 2, rng).array().tanh();
        const double c = cmd_value(a, b, {});
        CHECK(c == cmd_value(b, a, {}));
        CHECK(c >= 0.0);
        for (Kernel k : {Kernel::Rbf, Kernel::Linear}) {
            const double m = mmd_value(a, b, {k, std::nullopt});
            CHECK(m == mmd_value(b, a, {k, std::nullopt}));
            CHECK(m >= 0.0);
        }
    }
    const Matrix h = oracle::random_matrix(10, 3, rng);
    const MmdConfig lin{Kernel::Linear, std::nullopt};
    CHECK(mmd_value(h, h, lin) == doctest::Approx(0.0));
    const Matrix shifted = h.rowwise() + Eigen::RowVector3d(0.3, -0.1, 0.2);
    CHECK(mmd_value(h, shifted, lin) > mmd_value(h, h, lin));
}

TEST_CASE("gradients with respect to the first sample") {
    Rng rng(4);
    const Matrix h2 = oracle::random_matrix(5, 3, rng).array().tanh();
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix h1 = oracle::random_matrix(5, 3, rng).array().tanh();
        const oracle::Builder cmd_f = [&](ad::Tape& t, const std::vector<ad::Var>& x) {
            return cmd(x[0], t.constant(h2), {});
        };
        const oracle::Builder rbf_f = [&](ad::Tape& t, const std::vector<ad::Var>& x) {
            return mmd(x[0], t.constant(h2), {Kernel::Rbf, 0.9});
        };
        const oracle::Builder lin_f = [&](ad::Tape& t, const std::vector<ad::Var>& x) {
            return mmd(x[0], t.constant(h2), {Kernel::Linear, std::nullopt});
        };
        CHECK(oracle::gradient_relative_error(cmd_f, {h1}) < 1e-5);
        CHECK(oracle::gradient_relative_error(rbf_f, {h1}) < 1e-5);
        CHECK(oracle::gradient_relative_error(lin_f, {h1}) < 1e-5);
    }
}

TEST_CASE("errors") {
    CHECK_THROWS_AS(cmd_value(Matrix::Zero(2, 2), Matrix::Zero(2, 3), {}), ShapeError);
    CHECK_THROWS_AS(mmd_value(Matrix::Zero(2, 2), Matrix::Zero(2, 3), {}), ShapeError);
    CHECK_THROWS_AS(cmd_value(Matrix::Zero(2, 2), Matrix::Zero(2, 2), {0, -1, 1}), ValidationError);
    CHECK_THROWS_AS(mmd_value(Matrix::Zero(2, 2), Matrix::Zero(2, 2), {Kernel::Rbf, -1.0}), ValidationError);
    CHECK(kernel_from_string("rbf") == Kernel::Rbf);
    CHECK_THROWS_AS(kernel_from_string("poly"), ValidationError);
}

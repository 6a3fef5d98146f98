#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "attnpca/linalg.hpp"
#include "attnpca/rng.hpp"
#include "test_oracles.hpp"

using namespace attnpca;

namespace {

Mat random_symmetric(std::size_t n, RngStream& rng, double scale = 1.0) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const double v = scale * rng.normal();
            m(i, j) = v;
            m(j, i) = v;
        }
    return m;
}

}  // namespace

TEST_CASE("vector helpers") {
    const Vec x = {1.0, 2.0, 3.0};
    const Vec y = {4.0, -5.0, 6.0};
    CHECK(dot(x, y) == doctest::Approx(12.0));
    CHECK(norm(x) == doctest::Approx(std::sqrt(14.0)));
    Vec z = x;
    axpy(2.0, y, z);
    CHECK(z[0] == doctest::Approx(9.0));
    CHECK(z[1] == doctest::Approx(-8.0));
    CHECK(norm(normalized(y)) == doctest::Approx(1.0));
}

TEST_CASE("pairwise sum is exact on integers and order-stable") {
    Vec values(1000);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(i + 1);
    CHECK(pairwise_sum(values) == 500500.0);
    CHECK(pairwise_mean(values) == doctest::Approx(500.5));
}

TEST_CASE("matvec and matmul agree with hand results") {
    Mat m(2, 3);
    m(0, 0) = 1; m(0, 1) = 2; m(0, 2) = 3;
    m(1, 0) = 4; m(1, 1) = 5; m(1, 2) = 6;
    const Vec v = {1.0, 0.0, -1.0};
    const Vec mv = m.matvec(v);
    CHECK(mv[0] == doctest::Approx(-2.0));
    CHECK(mv[1] == doctest::Approx(-2.0));

    const Mat mt = m.transposed();
    const Mat mmt = m.matmul(mt);
    CHECK(mmt(0, 0) == doctest::Approx(14.0));
    CHECK(mmt(0, 1) == doctest::Approx(32.0));
    CHECK(mmt(1, 1) == doctest::Approx(77.0));
    CHECK(mmt.is_symmetric(1e-12));
}

TEST_CASE("jacobi eigendecomposition: diagonal case is exact") {
    const Mat m = Mat::diagonal({3.0, 1.0, 2.0});
    const SymmetricEigen eig = jacobi_eigendecompose(m);
    CHECK(eig.eigenvalues[0] == doctest::Approx(3.0));
    CHECK(eig.eigenvalues[1] == doctest::Approx(2.0));
    CHECK(eig.eigenvalues[2] == doctest::Approx(1.0));
    // Sign convention: dominant entry positive.
    for (std::size_t j = 0; j < 3; ++j) {
        const Vec col = eig.eigenvectors.col(j);
        std::size_t arg = 0;
        for (std::size_t i = 1; i < 3; ++i)
            if (std::abs(col[i]) > std::abs(col[arg])) arg = i;
        CHECK(col[arg] > 0.0);
    }
}

TEST_CASE("jacobi matches the threshold-Jacobi oracle on random matrices") {
    RngStream rng(42, 7);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(rng.next_u64() % 7);
        const Mat m = random_symmetric(n, rng);
        const SymmetricEigen eig = jacobi_eigendecompose(m);
        const std::vector<double> expected = oracles::jacobi_eigenvalues_ascending(m);
        for (std::size_t j = 0; j < n; ++j)
            CHECK(eig.eigenvalues[n - 1 - j] ==
                  doctest::Approx(expected[j]).epsilon(1e-10));
    }
}

TEST_CASE("jacobi invariants: orthonormality, reconstruction, ordering") {
    RngStream rng(11, 3);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 3 + static_cast<std::size_t>(rng.next_u64() % 5);
        const Mat m = random_symmetric(n, rng, 2.0);
        const SymmetricEigen eig = jacobi_eigendecompose(m);

        const Mat gram = eig.eigenvectors.transposed().matmul(eig.eigenvectors);
        Mat identity = Mat::identity(n);
        CHECK((gram - identity).frobenius_norm() < 1e-10);

        // Σ_j σ_j u_j u_jᵀ reconstructs the input.
        Mat recon(n, n);
        for (std::size_t j = 0; j < n; ++j) {
            const Vec u = eig.eigenvectors.col(j);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < n; ++c)
                    recon(r, c) += eig.eigenvalues[j] * u[r] * u[c];
        }
        CHECK((recon - m).frobenius_norm() / m.frobenius_norm() < 1e-10);

        for (std::size_t j = 0; j + 1 < n; ++j)
            CHECK(eig.eigenvalues[j] >= eig.eigenvalues[j + 1]);
    }
}

TEST_CASE("jacobi rejects non-symmetric and non-square input") {
    Mat bad(2, 2);
    bad(0, 1) = 1.0;
    bad(1, 0) = 2.0;
    CHECK_THROWS_AS(jacobi_eigendecompose(bad), std::invalid_argument);
    CHECK_THROWS_AS(jacobi_eigendecompose(Mat(2, 3)), std::invalid_argument);
}

TEST_CASE("rng determinism: identical (seed, stream) reproduce bit-for-bit") {
    RngStream a(123, 456);
    RngStream b(123, 456);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

    RngStream c(123, 456), d(123, 457);
    bool all_equal = true;
    for (int i = 0; i < 100; ++i) all_equal &= (c.next_u64() == d.next_u64());
    CHECK_FALSE(all_equal);

    RngStream e(123, 456), f(123, 456);
    for (int i = 0; i < 1000; ++i) {
        const double x = e.normal();
        const double y = f.normal();
        CHECK(x == y);
    }
}

TEST_CASE("derived streams are independent of sibling order") {
    RngStream root(9, 9);
    RngStream child2_a = root.derive(2);
    RngStream child1 = root.derive(1);
    (void)child1.next_u64();
    RngStream child2_b = root.derive(2);
    for (int i = 0; i < 100; ++i) CHECK(child2_a.next_u64() == child2_b.next_u64());
}

TEST_CASE("normal sampler moments match the standard normal") {
    RngStream rng(2024, 1);
    const std::size_t n = 4000000;
    double s1 = 0, s2 = 0, s4 = 0, s6 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.normal();
        const double x2 = x * x;
        s1 += x;
        s2 += x2;
        s4 += x2 * x2;
        s6 += x2 * x2 * x2;
    }
    const double inv = 1.0 / static_cast<double>(n);
    // SEs: sd(X)=1, sd(X²)=√2, sd(X⁴)=√96, sd(X⁶)≈√10170.
    CHECK(std::abs(s1 * inv) < 4.0 * std::sqrt(1.0 * inv));
    CHECK(std::abs(s2 * inv - 1.0) < 4.0 * std::sqrt(2.0 * inv));
    CHECK(std::abs(s4 * inv - 3.0) < 4.0 * std::sqrt(96.0 * inv));
    CHECK(std::abs(s6 * inv - 15.0) < 4.0 * std::sqrt(10170.0 * inv));
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "attnpca/covariance.hpp"
#include "attnpca/moments.hpp"
#include "attnpca/optim.hpp"
#include "attnpca/parallel.hpp"
#include "attnpca/rng.hpp"
#include "test_oracles.hpp"

using namespace attnpca;

TEST_CASE("experiment covariance: scalar case gives a^2 + 0.1") {
    // d = 1: Σ = [a² + 0.1] for whatever a the stream produced.
    RngStream rng(5, 0);
    RngStream replay(5, 0);
    const CovarianceModel cov = build_experiment_covariance(1, rng);
    const double a = replay.normal();
    CHECK(cov.matrix()(0, 0) == doctest::Approx(a * a + 0.1).epsilon(1e-14));
    CHECK(cov.eigenvalue(0) == doctest::Approx(a * a + 0.1).epsilon(1e-14));
    CHECK(cov.simple_spectrum());
}

TEST_CASE("experiment covariance: smallest eigenvalue >= 0.1") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const CovarianceModel cov = build_experiment_covariance(5, RngStream(seed, 2));
        CHECK(cov.eigenvalue(4) >= 0.1 - 1e-12);
        CHECK(cov.matrix().is_symmetric(1e-12));
    }
}

TEST_CASE("experiment covariance eigenvalues match the independent Jacobi oracle") {
    const CovarianceModel cov = build_experiment_covariance(5, RngStream(17, 4));
    const std::vector<double> oracle = oracles::jacobi_eigenvalues_ascending(cov.matrix());
    for (std::size_t j = 0; j < 5; ++j)
        CHECK(cov.eigenvalue(4 - j) == doctest::Approx(oracle[j]).epsilon(1e-10));
}

TEST_CASE("covariance reconstruction and orthonormality invariants") {
    const CovarianceModel cov = build_experiment_covariance(6, RngStream(23, 1));
    const std::size_t d = cov.dim();

    Mat recon(d, d);
    for (std::size_t j = 0; j < d; ++j) {
        const Vec u = cov.eigenvector(j);
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c)
                recon(r, c) += cov.eigenvalue(j) * u[r] * u[c];
    }
    CHECK((recon - cov.matrix()).frobenius_norm() / cov.matrix().frobenius_norm() < 1e-10);

    const Mat gram = cov.eigenvectors().transposed().matmul(cov.eigenvectors());
    CHECK((gram - Mat::identity(d)).frobenius_norm() < 1e-10);

    // apply / apply_squared agree with direct matrix products.
    RngStream rng(23, 9);
    const Vec v = sample_unit_sphere(d, rng);
    const Vec direct = cov.matrix().matvec(v);
    CHECK(oracles::rel_error_vec(cov.apply(v), direct) < 1e-12);
    CHECK(oracles::rel_error_vec(cov.apply_squared(v), cov.matrix().matvec(direct)) < 1e-12);
}

TEST_CASE("from_matrix validation") {
    Mat asym(2, 2);
    asym(0, 0) = 1.0;
    asym(1, 1) = 1.0;
    asym(0, 1) = 0.5;
    asym(1, 0) = 0.5 + 1e-6;
    CHECK_THROWS_AS(CovarianceModel::from_matrix(asym), std::invalid_argument);

    const Mat indefinite = Mat::diagonal({1.0, -0.5});
    CHECK_THROWS_AS(CovarianceModel::from_matrix(indefinite), std::invalid_argument);

    // PSD factory clamps a rounding-level negative eigenvalue to zero.
    const Mat singular = Mat::diagonal({1.0, 0.0});
    const CovarianceModel psd = CovarianceModel::from_matrix_psd(singular);
    CHECK(psd.eigenvalue(1) == 0.0);
    CHECK_THROWS_AS(CovarianceModel::from_matrix(singular), std::invalid_argument);
}

TEST_CASE("simple_spectrum threshold") {
    CHECK(CovarianceModel::from_matrix(Mat::diagonal({2.0, 1.0})).simple_spectrum());
    const double s = 1.0;
    CHECK_FALSE(CovarianceModel::from_matrix(Mat::diagonal({s, s * (1.0 - 1e-9)}))
                    .simple_spectrum());
}

TEST_CASE("sample_prompt: determinism, length one, dimensions") {
    const CovarianceModel cov = build_experiment_covariance(4, RngStream(3, 3));
    const Prompt p1 = sample_prompt(cov, 7, RngStream(100, 200));
    const Prompt p2 = sample_prompt(cov, 7, RngStream(100, 200));
    CHECK(p1.data == p2.data);
    CHECK(p1.length == 7);
    CHECK(p1.dim == 4);
    CHECK(p1.seed_tag_seed == 100);
    CHECK(p1.seed_tag_stream == 200);

    const Prompt single = sample_prompt(cov, 1, RngStream(1, 1));
    CHECK(single.length == 1);
    CHECK(single.token_vec(0).size() == 4);

    CHECK_THROWS_AS(sample_prompt(cov, 0, RngStream(0, 0)), std::invalid_argument);
}

TEST_CASE("sample_prompt: empirical covariance of I_2 within 3 MC standard errors") {
    const CovarianceModel cov = CovarianceModel::from_matrix(Mat::identity(2));
    const std::size_t n = 100000;
    const Prompt prompt = sample_prompt(cov, n, RngStream(7, 7));

    // SE oracle: sd of X_i X_j is √(Σ_ii Σ_jj + Σ_ij²).
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = i; j < 2; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < n; ++l)
                acc += prompt.token(l)[i] * prompt.token(l)[j];
            acc /= static_cast<double>(n);
            const double target = i == j ? 1.0 : 0.0;
            const double se = std::sqrt((1.0 + (i == j ? 1.0 : 0.0)) /
                                        static_cast<double>(n));
            CHECK(std::abs(acc - target) <= 3.0 * se);
        }
    }
}

TEST_CASE("sample_prompt: variance of first coordinate for diag(2,1)") {
    const CovarianceModel cov = CovarianceModel::from_matrix(Mat::diagonal({2.0, 1.0}));
    const std::size_t n = 100000;
    const Prompt prompt = sample_prompt(cov, n, RngStream(8, 8));
    double acc = 0.0;
    for (std::size_t l = 0; l < n; ++l) acc += prompt.token(l)[0] * prompt.token(l)[0];
    acc /= static_cast<double>(n);
    // sd(X²) for N(0, 2): √(2·2²) = √8; SE oracle √((Σ_00² + Σ_00²)/n).
    const double se = std::sqrt(8.0 / static_cast<double>(n));
    CHECK(std::abs(acc - 2.0) <= 3.0 * se);
}

TEST_CASE("gaussian_moment_oracle: pinned values") {
    const CovarianceModel cov = CovarianceModel::from_matrix(Mat::diagonal({2.0, 1.0}));
    const Vec mu = {1.0, 0.0};
    CHECK(gaussian_moment_oracle(1, cov, mu) == doctest::Approx(3.0));  // tr(Σ)
    CHECK(gaussian_moment_oracle(2, cov, {0.0, 0.0}) == doctest::Approx(0.0));
    // 3·tr·a² + 12ab = 3·3·4 + 12·2·4 = 132 (cross-checked by MC below).
    CHECK(gaussian_moment_oracle(6, cov, mu) == doctest::Approx(132.0));
    CHECK_THROWS_AS(gaussian_moment_oracle(0, cov, mu), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_moment_oracle(7, cov, mu), std::invalid_argument);
}

TEST_CASE("gaussian_moment_oracle: kind 6 against dedicated Monte Carlo") {
    const CovarianceModel cov = CovarianceModel::from_matrix(Mat::diagonal({2.0, 1.0}));
    const Vec mu = {1.0, 0.0};
    RngStream rng(99, 99);
    const std::size_t n = 10000000;
    std::vector<double> x(2);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        sample_tokens_into(cov, 1, rng, x.data());
        const double proj = x[0] * mu[0] + x[1] * mu[1];
        const double v = proj * proj * proj * proj * (x[0] * x[0] + x[1] * x[1]);
        sum += v;
        sum_sq += v * v;
    }
    const double mean = sum / static_cast<double>(n);
    const double var = (sum_sq / static_cast<double>(n) - mean * mean);
    const double se = std::sqrt(var / static_cast<double>(n));
    CHECK(std::abs(mean - 132.0) <= 3.0 * se);
}

TEST_CASE("all six moment identities within 4 SE of Monte Carlo on random instances") {
    // 20 random (Σ, μ) pairs, d <= 6; one sample set per pair evaluates all
    // six statistics.  Workers fill disjoint slots; asserts run on the main
    // thread afterwards.
    RngStream seeder(314, 0);
    const std::size_t n = 1000000;
    std::vector<double> deviation_in_se(20 * 7, 0.0);
    parallel_for(20, default_workers(), [&](std::size_t pair_idx) {
        RngStream pair_rng = seeder.derive(pair_idx);
        const std::size_t d = 2 + pair_idx % 5;  // 2..6
        const CovarianceModel cov = build_experiment_covariance(d, pair_rng.derive(1));
        Vec mu = sample_unit_sphere(d, pair_rng.derive(2));
        for (double& m : mu) m *= 1.5;

        RngStream draw = pair_rng.derive(3);
        std::vector<double> x1(d), x2(d);
        std::vector<double> sums(7, 0.0), sq(7, 0.0);
        for (std::size_t s = 0; s < n; ++s) {
            sample_tokens_into(cov, 1, draw, x1.data());
            sample_tokens_into(cov, 1, draw, x2.data());
            double n1 = 0, p1 = 0, p2 = 0, cross = 0;
            for (std::size_t i = 0; i < d; ++i) {
                n1 += x1[i] * x1[i];
                p1 += x1[i] * mu[i];
                p2 += x2[i] * mu[i];
                cross += x1[i] * x2[i];
            }
            const double vals[7] = {0.0,
                                    n1,
                                    p1 * p1,
                                    cross * p1 * p2,
                                    cross * p1 * p1 * p1 * p2,
                                    p1 * p1 * n1,
                                    p1 * p1 * p1 * p1 * n1};
            for (int k = 1; k <= 6; ++k) {
                sums[k] += vals[k];
                sq[k] += vals[k] * vals[k];
            }
        }
        for (int k = 1; k <= 6; ++k) {
            const double mean = sums[k] / static_cast<double>(n);
            const double var = sq[k] / static_cast<double>(n) - mean * mean;
            const double se = std::sqrt(var / static_cast<double>(n));
            const double target = gaussian_moment_oracle(k, cov, mu);
            deviation_in_se[pair_idx * 7 + k] = std::abs(mean - target) / se;
        }
    });
    for (std::size_t pair_idx = 0; pair_idx < 20; ++pair_idx)
        for (int k = 1; k <= 6; ++k) {
            INFO("pair ", pair_idx, " kind ", k);
            CHECK(deviation_in_se[pair_idx * 7 + k] <= 4.0);
        }
}

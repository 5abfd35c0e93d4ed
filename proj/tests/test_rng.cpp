#include "cmidps/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace cmidps;

// Every frozen seed in this repo depends on the exact draw sequence; these
// pins make a generator change fail here first instead of in a dozen
// downstream regression tests.
TEST_CASE("stream outputs are pinned") {
    RngStream r(0);
    CHECK(r.next_u64() == 16461397835623557320ULL);
    CHECK(r.next_u64() == 17046779270297018946ULL);
    CHECK(r.next_u64() == 14283335028294870068ULL);

    RngStream s(12345);
    CHECK(s.uniform() == doctest::Approx(0.73910744480361801).epsilon(1e-15));
    CHECK(s.uniform() == doctest::Approx(0.8788097615226379).epsilon(1e-15));
    CHECK(s.normal() == doctest::Approx(-0.83505138319914651).epsilon(1e-15));
    CHECK(s.normal() == doctest::Approx(0.9394635373393907).epsilon(1e-15));

    RngStream c = RngStream(12345).child("chain");
    CHECK(c.key() == 779204301996518311ULL);
    CHECK(c.next_u64() == 15718377426381673168ULL);
}

TEST_CASE("child streams are independent of parent consumption") {
    RngStream a(42);
    const RngStream c1 = a.child("x");
    a.next_u64();
    a.normal();
    const RngStream c2 = a.child("x");
    CHECK(c1.key() == c2.key());  // derivation depends on the key, not the state

    // distinct labels give distinct streams
    CHECK(a.child("x").key() != a.child("y").key());
    CHECK(a.child("x", 0).key() != a.child("x", 1).key());
}

TEST_CASE("normal draws have the right moments") {
    RngStream r(777);
    const int n = 200000;
    double sum = 0.0, sq = 0.0, quad = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        sum += x;
        sq += x * x;
        quad += x * x * x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    const double kurt = quad / n / (var * var);
    CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - 1.0) < 4.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(kurt - 3.0) < 0.1);
}

TEST_CASE("bounded draws cover the range uniformly") {
    RngStream r(99);
    const std::uint64_t n = 9;
    std::vector<int> counts(n, 0);
    const int draws = 90000;
    for (int i = 0; i < draws; ++i) ++counts[r.bounded(n)];
    for (std::uint64_t k = 0; k < n; ++k) {
        const double expect = draws / static_cast<double>(n);
        CHECK(std::abs(counts[k] - expect) < 5.0 * std::sqrt(expect));
    }
}

TEST_CASE("rademacher entries are +-1 and balanced") {
    RngStream r(5);
    const Eigen::VectorXd v = r.rademacher_vec(10000);
    int plus = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        CHECK(std::abs(v[i]) == 1.0);
        if (v[i] > 0) ++plus;
    }
    CHECK(std::abs(plus - 5000) < 300);
}

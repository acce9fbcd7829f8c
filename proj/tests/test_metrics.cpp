#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ngc/metrics.hpp"
#include "ngc/repr.hpp"
#include "ngc/rng.hpp"

using namespace ngc;
using namespace ngc::metrics;

namespace {

Tensor f32(std::vector<float> v) {
    uint32_t n = uint32_t(v.size());
    return Tensor::from_f32({n}, std::move(v));
}

Tensor lab(std::vector<uint16_t> v, uint32_t h, uint32_t w) {
    return Tensor::from_u16({h, w}, std::move(v));
}

}  // namespace

TEST_CASE("every report metric is registered with the right polarity") {
    CHECK(polarity("l1") == Polarity::LowerBetter);
    CHECK(polarity("angular_l1_deg") == Polarity::LowerBetter);
    CHECK(polarity("l2") == Polarity::LowerBetter);
    CHECK(polarity("error_rate") == Polarity::LowerBetter);
    CHECK(polarity("dispersion") == Polarity::LowerBetter);
    CHECK(polarity("accuracy") == Polarity::HigherBetter);
    CHECK(polarity("miou") == Polarity::HigherBetter);
    CHECK(polarity("pixels_improved_pct") == Polarity::HigherBetter);
    CHECK_THROWS_AS(polarity("made_up"), std::out_of_range);

    // better() is strict in both directions
    CHECK(better("l1", 0.5, 0.6));
    CHECK_FALSE(better("l1", 0.6, 0.5));
    CHECK_FALSE(better("l1", 0.5, 0.5));
    CHECK(better("accuracy", 0.9, 0.8));
    CHECK_FALSE(better("accuracy", 0.8, 0.8));
}

TEST_CASE("l1 and l2 against hand arithmetic and a brute-force oracle") {
    Tensor p = f32({1, -2, 3});
    Tensor g = f32({0, 0, 0});
    CHECK(l1(p, g) == doctest::Approx(2.0));           // (1+2+3)/3
    CHECK(l2(p, g) == doctest::Approx(std::sqrt(14.0)));
    CHECK(l1(p, p) == 0.0);
    CHECK(l2(p, p) == 0.0);

    Rng rng(5);
    std::vector<float> a(64), b(64);
    for (auto& x : a) x = float(rng.uniform(-3, 3));
    for (auto& x : b) x = float(rng.uniform(-3, 3));
    double s1 = 0.0, s2 = 0.0;
    for (size_t i = 0; i < 64; ++i) {
        s1 += std::abs(double(a[i]) - double(b[i]));
        s2 += (double(a[i]) - double(b[i])) * (double(a[i]) - double(b[i]));
    }
    CHECK(l1(f32(a), f32(b)) == doctest::Approx(s1 / 64).epsilon(1e-12));
    CHECK(l2(f32(a), f32(b)) == doctest::Approx(std::sqrt(s2)).epsilon(1e-12));

    CHECK_THROWS_AS(l1(f32({1, 2}), f32({1, 2, 3})), TensorError);
}

TEST_CASE("angular error lifts in-plane directions to the hemisphere") {
    auto dir_map = [](std::vector<float> v) {
        uint32_t n = uint32_t(v.size() / 2);
        return Tensor::from_f32({n, 1, 2}, std::move(v));
    };
    // identical directions -> 0 degrees
    CHECK(angular_l1_deg(dir_map({0.6f, 0.8f}), dir_map({0.6f, 0.8f})) ==
          doctest::Approx(0.0).scale(1).epsilon(1e-9));
    // in-plane unit vectors at right angles -> 90 degrees
    CHECK(angular_l1_deg(dir_map({1, 0}), dir_map({0, 1})) == doctest::Approx(90.0).epsilon(1e-9));
    // opposite in-plane unit vectors -> 180 degrees
    CHECK(angular_l1_deg(dir_map({1, 0}), dir_map({-1, 0})) ==
          doctest::Approx(180.0).epsilon(1e-9));
    // flat (0,0) lifts to the pole; a full in-plane vector sits 90 degrees away
    CHECK(angular_l1_deg(dir_map({0, 0}), dir_map({1, 0})) == doctest::Approx(90.0).epsilon(1e-9));
    // (0.6, 0.8) vs (0.6, -0.8): dot = 0.36 - 0.64 = -0.28 on the plane
    double expect = std::acos(-0.28) * 180.0 / 3.14159265358979323846;
    CHECK(angular_l1_deg(dir_map({0.6f, 0.8f}), dir_map({0.6f, -0.8f})) ==
          doctest::Approx(expect).epsilon(1e-6));
    // averaged over elements
    CHECK(angular_l1_deg(dir_map({1, 0, 1, 0}), dir_map({0, 1, 1, 0})) ==
          doctest::Approx(45.0).epsilon(1e-9));

    CHECK_THROWS_AS(angular_l1_deg(f32({1, 2, 3}), f32({1, 2, 3})), TensorError);
}

TEST_CASE("accuracy and miou on 2x2 hand fixtures") {
    Tensor gt = lab({0, 0, 1, 1}, 2, 2);
    Tensor pred = lab({0, 0, 1, 0}, 2, 2);
    CHECK(accuracy(pred, gt) == doctest::Approx(0.75));
    CHECK(accuracy(gt, gt) == 1.0);

    // class 0 fully correct, class 1 half correct, miss goes to a third class:
    //   IOU(0) = 2/2 = 1, IOU(1) = 1/2, classes present in gt: {0, 1}
    Tensor pred2 = lab({0, 0, 1, 2}, 2, 2);
    CHECK(miou(pred2, gt, 3) == doctest::Approx(0.75));

    // in a strict two-class map the miss must land on the other class, which
    // costs that class its perfect union:
    //   IOU(0) = 2/3, IOU(1) = 1/2
    Tensor pred3 = lab({0, 0, 1, 0}, 2, 2);
    CHECK(miou(pred3, gt, 2) == doctest::Approx((2.0 / 3 + 0.5) / 2));

    // half the pixels of each class flipped: both IOUs collapse to 1/3
    Tensor pred4 = lab({0, 1, 0, 1}, 2, 2);
    CHECK(miou(pred4, gt, 2) == doctest::Approx(1.0 / 3));

    // classes absent from ground truth are skipped
    Tensor gt5 = lab({0, 0, 0, 0}, 2, 2);
    Tensor pred5 = lab({0, 0, 1, 1}, 2, 2);
    CHECK(miou(pred5, gt5, 4) == doctest::Approx(0.5));  // IOU(0) = 2/4 alone

    CHECK(miou(gt, gt, 2) == 1.0);
    CHECK_THROWS_AS(miou(gt, gt, 1), std::invalid_argument);
}

TEST_CASE("miou against a brute-force per-class recomputation") {
    Rng rng(23);
    for (int round = 0; round < 20; ++round) {
        int classes = 2 + int(rng.below(5));
        std::vector<uint16_t> g(36), p(36);
        for (auto& v : g) v = uint16_t(rng.below(classes));
        for (auto& v : p) v = uint16_t(rng.below(classes));
        Tensor gt = lab(g, 6, 6);
        Tensor pred = lab(p, 6, 6);

        double sum = 0.0;
        int present = 0;
        for (int c = 0; c < classes; ++c) {
            size_t inter = 0, in_p = 0, in_g = 0;
            for (size_t i = 0; i < 36; ++i) {
                in_p += p[i] == c;
                in_g += g[i] == c;
                inter += p[i] == c && g[i] == c;
            }
            if (in_g == 0) continue;
            sum += double(inter) / double(in_p + in_g - inter);
            ++present;
        }
        CHECK(miou(pred, gt, classes) == doctest::Approx(sum / present).epsilon(1e-12));
    }
}

TEST_CASE("pixels improved: trivial anchors and a counting oracle") {
    NodeSpec cont{"d", true, false, false, 1, ""};
    Tensor gt = f32({0, 0, 0, 0});
    Tensor base = f32({1, 1, 1, 1});

    // new = baseline -> 0%
    CHECK(pixels_improved_pct(cont, base, base, gt) == 0.0);
    // new = gt, baseline wrong everywhere -> 100%
    CHECK(pixels_improved_pct(cont, gt, base, gt) == 100.0);
    // ties count as not improved
    Tensor half_better = f32({0.5f, 1, 1, 1});
    CHECK(pixels_improved_pct(cont, half_better, base, gt) == doctest::Approx(25.0));

    NodeSpec cat{"s", true, true, false, 4, ""};
    Tensor lgt = lab({1, 2, 3, 0}, 2, 2);
    Tensor lbase = lab({1, 0, 0, 0}, 2, 2);
    Tensor lnew = lab({0, 2, 3, 0}, 2, 2);
    // newly correct on 2 pixels, newly wrong on 1, already-correct stays 0
    CHECK(pixels_improved_pct(cat, lnew, lbase, lgt) == doctest::Approx(50.0));

    // random triple vs a brute-force count
    Rng rng(17);
    std::vector<float> g(100), b(100), n(100);
    for (size_t i = 0; i < 100; ++i) {
        g[i] = float(rng.uniform(-1, 1));
        b[i] = float(rng.uniform(-1, 1));
        n[i] = float(rng.uniform(-1, 1));
    }
    size_t count = 0;
    for (size_t i = 0; i < 100; ++i)
        count += std::abs(double(n[i]) - double(g[i])) < std::abs(double(b[i]) - double(g[i]));
    CHECK(pixels_improved_pct(cont, f32(n), f32(b), f32(g)) == doctest::Approx(100.0 * count / 100));
}

TEST_CASE("each node kind selects its own ranking metric") {
    CHECK(selection_metric_name(node_spec("depth")) == "l1");
    CHECK(selection_metric_name(node_spec("normC")) == "angular_l1_deg");
    CHECK(selection_metric_name(node_spec("normW")) == "angular_l1_deg");
    CHECK(selection_metric_name(node_spec("seg")) == "error_rate");
    CHECK(selection_metric_name(node_spec("wire")) == "error_rate");
    CHECK(selection_metric_name(node_spec("half")) == "error_rate");
    CHECK(selection_metric_name(node_spec("pose")) == "l2");

    // error_rate really is 1 - accuracy
    Tensor gt = lab({0, 1, 2, 3}, 2, 2);
    Tensor pred = lab({0, 1, 0, 0}, 2, 2);
    CHECK(selection_metric(node_spec("seg"), pred, gt) == doctest::Approx(0.5));
    // and the continuous kinds dispatch to their metric
    Tensor a = f32({1, 2, 3, 4, 5, 6});
    Tensor b = f32({0, 0, 0, 0, 0, 0});
    CHECK(selection_metric(node_spec("pose"), a, b) == doctest::Approx(l2(a, b)));
}

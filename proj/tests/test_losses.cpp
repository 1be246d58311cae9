#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fedcn/losses.hpp"
#include "gradient_cases.hpp"
#include "support.hpp"

using namespace fedcn;
using namespace fedcn::testing;

namespace {

std::vector<Vector> permuted(const std::vector<Vector>& v, const std::vector<std::size_t>& order) {
    std::vector<Vector> out;
    for (std::size_t i : order) out.push_back(v[i]);
    return out;
}

std::vector<int> permuted(const std::vector<int>& v, const std::vector<std::size_t>& order) {
    std::vector<int> out;
    for (std::size_t i : order) out.push_back(v[i]);
    return out;
}

std::vector<Vector> softmax_rows(const std::vector<Vector>& logits) {
    std::vector<Vector> out;
    for (const auto& l : logits) out.push_back(softmax(l));
    return out;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("ce examples") {
    const std::vector<Vector> confident{{1000.0, 0.0, 0.0}};
    CHECK(ce_loss(confident, std::vector<int>{0}).value == doctest::Approx(0.0));
    const std::vector<Vector> uniform{{0.3, 0.3, 0.3, 0.3}, {-2, -2, -2, -2}};
    CHECK(ce_loss(uniform, std::vector<int>{1, 3}).value == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    CHECK_THROWS_AS(ce_loss(uniform, std::vector<int>{1, 4}), InvalidArgument);
    CHECK_THROWS_AS(ce_loss(uniform, std::vector<int>{-1, 0}), InvalidArgument);
    CHECK_THROWS_AS(ce_loss(uniform, std::vector<int>{1}), InvalidArgument);
}

TEST_CASE("ce gradient is softmax minus one-hot over the batch size") {
    const std::vector<Vector> logits{{1.0, 2.0}, {0.5, -0.5}};
    const LossOutput out = ce_loss(logits, std::vector<int>{0, 1});
    const Vector p0 = softmax(logits[0]);
    CHECK(out.grad_logits[0][0] == doctest::Approx((p0[0] - 1.0) / 2.0));
    CHECK(out.grad_logits[0][1] == doctest::Approx(p0[1] / 2.0));
}

TEST_CASE("pcl examples") {
    const LossConfig one{1.0, 0.1};
    CHECK(pcl_loss(std::vector<Vector>{{0.3, -0.4}}, std::vector<int>{0}, std::vector<Vector>{{2.0, 5.0}}, one).value ==
          doctest::Approx(0.0));
    const std::vector<Vector> protos{{1.0, 0.0}, {0.0, 1.0}};
    const double got = pcl_loss(std::vector<Vector>{{1.0, 0.0}}, std::vector<int>{0}, protos, one).value;
    CHECK(got == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))).epsilon(1e-14));
    CHECK_THROWS_AS(pcl_loss(std::vector<Vector>{{1.0, 0.0}}, std::vector<int>{2}, protos, one), InvalidArgument);
}

TEST_CASE("pcl value matches the oracle on random batches") {
    RngStream rng(3);
    for (int t = 0; t < 30; ++t) {
        const GradInstance g = make_grad_instance(3000 + std::uint64_t(t), 0);
        const BatchForward fwd = forward_batch(g.model, g.inputs);
        const double tau = rng.uniform(0.05, 2.0);
        const double got =
            pcl_loss(fwd.representations, g.labels, known_prototypes(g.model.classifier, 3).copy(), {tau, 0.1}).value;
        CHECK(got == doctest::Approx(oracle_pcl(g.model, g.inputs, g.labels, 3, tau)).epsilon(1e-11));
    }
}

TEST_CASE("pcl decreases as a sample moves toward its prototype") {
    // Prototypes r*e_c, negatives with no e_0 component, a start point with
    // nonnegative coordinates and x_0 < r. Along z(s) = (1-s)x + s*r*e_0 every
    // competing logit loses ground to the positive one, so the loss must fall.
    RngStream rng(4);
    for (int t = 0; t < 100; ++t) {
        const double r = rng.uniform(1.0, 3.0);
        std::vector<Vector> protos(3, Vector(4, 0.0));
        for (std::size_t c = 0; c < 3; ++c) protos[c][c] = r;
        std::vector<Vector> batch(4, Vector(4, 0.0));
        for (std::size_t j = 1; j < 4; ++j) {
            for (std::size_t k = 1; k < 4; ++k) batch[j][k] = rng.uniform(0.0, 2.0);
        }
        Vector start(4);
        for (double& v : start) v = rng.uniform(0.0, 2.0);
        start[0] = rng.uniform(0.0, r);
        const std::vector<int> labels{0, 1, 2, 1};
        double previous = INFINITY;
        for (double s : {0.0, 0.25, 0.5, 0.75, 1.0}) {
            for (std::size_t k = 0; k < 4; ++k) batch[0][k] = (1.0 - s) * start[k] + s * protos[0][k];
            const double value = pcl_loss(batch, labels, protos, {1.0, 0.1}).value;
            CHECK(value < previous);
            previous = value;
        }
    }
}

TEST_CASE("combined loss examples") {
    const std::vector<Vector> logits{{1.0, 0.0, -1.0}, {0.2, 0.1, 0.0}};
    const std::vector<Vector> reps{{1.0, 2.0}, {-1.0, 0.5}};
    const std::vector<int> labels{0, 2};
    const std::vector<Vector> protos{{1, 0}, {0, 1}, {1, 1}};
    const LossOutput ce = ce_loss(logits, labels);
    const LossOutput pcl = pcl_loss(reps, labels, protos, LossConfig{});
    const LossOutput zero = combined_known_loss(ce, pcl, 0.0);
    CHECK(zero.value == ce.value);
    CHECK(zero.grad_logits == ce.grad_logits);
    CHECK(combined_known_loss(ce, pcl, 1.0).value == doctest::Approx(ce.value + pcl.value).epsilon(1e-15));
    const LossOutput paper = combined_known_loss(ce, pcl, 0.1);
    CHECK(std::abs(paper.value - (ce.value + 0.1 * pcl.value)) <= 1e-12);
    CHECK(paper.grad_reps[1][0] == doctest::Approx(0.1 * pcl.grad_reps[1][0]).epsilon(1e-15));
}

TEST_CASE("swl examples") {
    const std::vector<Vector> reps{{0.0, 0.0}, {3.0, 4.0}};
    const LossOutput single = swl_loss(reps, std::vector<Vector>{{0.0, 0.0}}, LossConfig{});
    CHECK(single.value == doctest::Approx(2.5).epsilon(1e-15));
    // z = (0, 1); prototypes (1, 1) and (-1, 1): equal dot products, both at distance 1.
    const LossOutput sym =
        swl_loss(std::vector<Vector>{{0.0, 1.0}}, std::vector<Vector>{{1.0, 1.0}, {-1.0, 1.0}}, LossConfig{});
    CHECK(sym.value == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(swl_loss(reps, std::vector<Vector>{}, LossConfig{}), InvalidArgument);
}

TEST_CASE("swl is nonnegative and zero only at a fully weighted prototype") {
    RngStream rng(5);
    for (int t = 0; t < 300; ++t) {
        const auto reps = random_vectors(rng, 4, 3, 3.0);
        const auto protos = random_vectors(rng, 3, 3, 3.0);
        CHECK(swl_loss(reps, protos, LossConfig{}).value > 0.0);
    }
    // A sample on a prototype whose dot product dominates at tau = 0.07.
    const LossOutput at = swl_loss(std::vector<Vector>{{10.0, 0.0}}, std::vector<Vector>{{10.0, 0.0}, {0.0, 1.0}},
                                   LossConfig{});
    CHECK(at.value == 0.0);
}

TEST_CASE("swl value matches the oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const GradInstance g = make_grad_instance(5000 + seed, 4);
        const BatchForward fwd = forward_batch(g.model, g.inputs);
        const double got = swl_loss(fwd.representations, PrototypeView(g.model.classifier, 3, 4).copy(), LossConfig{}).value;
        CHECK(got == doctest::Approx(oracle_swl(g.model, g.inputs, 3, 4, 0.07)).epsilon(1e-11));
    }
}

TEST_CASE("topk indices") {
    CHECK(topk_indices(Vector{0.1, 5.0, 3.0, 5.0}, 2) == std::vector<std::size_t>{1, 3});
    CHECK(topk_indices(Vector{1.0, 1.0, 1.0}, 2) == std::vector<std::size_t>{0, 1});
    CHECK_THROWS_AS(topk_indices(Vector{1.0}, 2), InvalidArgument);
}

TEST_CASE("pairwise bce examples") {
    const std::vector<Vector> reps{{5, 4, 3, 2, 1, 0}, {5, 4, 3, 2, 1, 0}};
    const std::vector<Vector> same{{1.0, 0.0}, {1.0, 0.0}};
    CHECK(pairwise_bce_loss(same, reps, 5).value == doctest::Approx(0.0).epsilon(1e-6));
    // Different top-5 sets (s = 0) and orthogonal one-hot probabilities; the diagonal
    // pairs (s = 1, p.p = 1) contribute the clamped -log(1 - 1e-7) only.
    const std::vector<Vector> reps2{{5, 4, 3, 2, 1, 0}, {0, 1, 2, 3, 4, 5}};
    const std::vector<Vector> ortho{{1.0, 0.0}, {0.0, 1.0}};
    CHECK(pairwise_bce_loss(ortho, reps2, 5).value <= 1e-6);
    CHECK_THROWS_AS(pairwise_bce_loss(std::vector<Vector>{{1.0}}, std::vector<Vector>{{1.0}}, 1), InvalidArgument);
}

TEST_CASE("pairwise bce matches a double-loop recomputation") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const GradInstance g = make_grad_instance(6000 + seed, 4, 6);
        const BatchForward fwd = forward_batch(g.model, g.inputs);
        std::vector<Vector> head;
        for (const auto& l : fwd.logits) head.emplace_back(l.begin() + 3, l.end());
        const double got = pairwise_bce_from_logits(head, fwd.representations, kDefaultRankTopK).value;
        const auto targets = oracle_rank_targets(fwd.representations, kDefaultRankTopK);
        CHECK(std::abs(got - oracle_bce(g.model, g.inputs, targets, 3, 4)) <= 1e-10);
        CHECK(got == doctest::Approx(pairwise_bce_loss(softmax_rows(head), fwd.representations, 5).value).epsilon(1e-14));
    }
}

TEST_CASE("losses are invariant to batch order") {
    RngStream rng(7);
    for (int t = 0; t < 50; ++t) {
        const auto reps = random_vectors(rng, 6, 6);
        const auto logits = random_vectors(rng, 6, 4);
        std::vector<int> labels;
        for (int i = 0; i < 6; ++i) labels.push_back(int(rng.uniform_index(4)));
        const auto protos = random_vectors(rng, 4, 6);
        std::vector<std::size_t> order{0, 1, 2, 3, 4, 5};
        rng.shuffle(std::span<std::size_t>(order));
        const auto pr = permuted(reps, order);
        const auto pl = permuted(logits, order);
        const auto py = permuted(labels, order);
        CHECK(std::abs(ce_loss(logits, labels).value - ce_loss(pl, py).value) <= 1e-12);
        CHECK(std::abs(pcl_loss(reps, labels, protos, {1.0, 0.1}).value - pcl_loss(pr, py, protos, {1.0, 0.1}).value) <=
              1e-12);
        CHECK(std::abs(swl_loss(reps, protos, {1.0, 0.1}).value - swl_loss(pr, protos, {1.0, 0.1}).value) <= 1e-12);
        CHECK(std::abs(pairwise_bce_from_logits(logits, reps, 5).value - pairwise_bce_from_logits(pl, pr, 5).value) <=
              1e-12);
    }
}

TEST_CASE("gradients of every loss match central differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        CHECK(ce_gradient_case(seed).failures == 0);
        CHECK(pcl_gradient_case(seed).failures == 0);
        CHECK(swl_gradient_case(seed).failures == 0);
        CHECK(bce_gradient_case(seed).failures == 0);
    }
}

TEST_CASE("loss config validation") {
    CHECK_NOTHROW(LossConfig{}.validate());
    CHECK_THROWS_AS((LossConfig{0.0, 0.1}.validate()), InvalidArgument);
    CHECK_THROWS_AS((LossConfig{0.07, -0.1}.validate()), InvalidArgument);
}

}

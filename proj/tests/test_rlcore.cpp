#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <set>

#include "diffrl/critic.hpp"
#include "diffrl/errors.hpp"
#include "diffrl/replay.hpp"
#include "diffrl/rollout.hpp"
#include "testutil.hpp"

using namespace diffrl;

namespace {

TransitionRecord make_rec(double s, double a, double r, double ns, bool term) {
    TransitionRecord t;
    t.state = {s};
    t.action = {a};
    t.reward = r;
    t.next_state = {ns};
    t.terminal = term;
    return t;
}

// Reference advantage: explicit forward sum of discounted TD errors, cut at
// terminal or boundary steps. Mirrors the definition rather than the
// production recursion.
std::vector<double> gae_by_double_loop(std::span<const double> r, std::span<const double> v,
                                       std::span<const uint8_t> term, std::span<const uint8_t> bound,
                                       double gamma, double lambda) {
    size_t T = r.size();
    std::vector<double> adv(T);
    for (size_t t = 0; t < T; ++t) {
        double acc = 0.0, w = 1.0;
        for (size_t j = t; j < T; ++j) {
            double delta = r[j] + gamma * (term[j] ? 0.0 : v[j + 1]) - v[j];
            acc += w * delta;
            if (term[j] || bound[j]) break;
            w *= gamma * lambda;
        }
        adv[t] = acc;
    }
    return adv;
}

}  // namespace

TEST_CASE("replay: ring keeps exactly the most recent records") {
    ReplayBuffer buf(8, 1, 1);
    CHECK(buf.capacity() == 8);
    for (int i = 0; i < 11; ++i) buf.push(make_rec(i, 0.0, i, i + 1, false));
    CHECK(buf.size() == 8);
    std::set<double> kept;
    for (long i = 0; i < buf.size(); ++i) kept.insert(buf.record(i).reward);
    CHECK(kept == std::set<double>{3, 4, 5, 6, 7, 8, 9, 10});
    CHECK_THROWS_AS(buf.record(8), DomainError);
    CHECK_THROWS_AS(ReplayBuffer(0, 1, 1), DomainError);
}

TEST_CASE("replay: stored fields round trip bit-stably") {
    ReplayBuffer buf(4, 2, 1);
    Rng rng(3);
    TransitionRecord r;
    r.state = {rng.normal(), rng.normal()};
    r.action = {0.3};
    r.reward = -1.7182818;
    r.next_state = {rng.normal(), rng.normal()};
    r.terminal = true;
    buf.push(r);
    auto back = buf.record(0);
    CHECK(testutil::bitwise_equal(back.state, r.state));
    CHECK(testutil::bitwise_equal(back.action, r.action));
    CHECK(testutil::bitwise_equal(back.next_state, r.next_state));
    CHECK(back.reward == r.reward);
    CHECK(back.terminal);

    // a time-limit cut is stored as nonterminal so the backup still bootstraps
    TransitionRecord cut = r;
    cut.truncated = true;
    buf.push(cut);
    CHECK_FALSE(buf.record(1).terminal);

    TransitionRecord bad = r;
    bad.action = {0.1, 0.2};
    CHECK_THROWS_AS(buf.push(bad), DimensionError);
}

TEST_CASE("replay: batches draw uniformly and never repeat a slot") {
    ReplayBuffer buf(16, 1, 1);
    for (int i = 0; i < 16; ++i) buf.push(make_rec(i, 0.0, i, i, false));
    Rng rng(7);

    // full-size batch = a permutation of the contents
    auto b = buf.sample(16, rng);
    std::set<double> seen(b.rewards.begin(), b.rewards.end());
    CHECK(seen.size() == 16);

    // smaller batches: no duplicates within a batch
    for (int trial = 0; trial < 50; ++trial) {
        auto s = buf.sample(5, rng);
        std::set<double> u(s.rewards.begin(), s.rewards.end());
        CHECK(u.size() == 5);
    }

    // frequency check over many singleton draws
    std::array<long, 16> count{};
    const int draws = 16000;
    for (int i = 0; i < draws; ++i) {
        auto one = buf.sample(1, rng);
        count[static_cast<int>(one.rewards[0])]++;
    }
    // each slot expects 1000 hits, sd ~ 31; allow 5 sigma
    for (long c : count) CHECK(std::fabs(static_cast<double>(c) - 1000.0) < 155.0);

    CHECK_THROWS_AS(buf.sample(17, rng), DomainError);
    CHECK_THROWS_AS(buf.sample(0, rng), DomainError);
}

TEST_CASE("critic ensemble: distinct members, targets start as copies, min is a lower envelope") {
    Rng rng(11);
    CriticConfig cfg;
    cfg.hidden = {16, 16};
    CriticEnsemble c = CriticEnsemble::make(3, 1, cfg, rng);
    CHECK(c.ensemble_size() == 2);

    MatD s(4, 3), a(4, 1);
    for (long i = 0; i < 4; ++i) {
        for (long j = 0; j < 3; ++j) s(i, j) = rng.normal();
        a(i, 0) = rng.uniform(-1.0, 1.0);
    }
    std::vector<double> q0(4), q1(4), qmin(4);
    c.member_q(0, s, a, q0);
    c.member_q(1, s, a, q1);
    bool differ = false;
    for (int i = 0; i < 4; ++i) differ |= (q0[i] != q1[i]);
    CHECK(differ);

    // fresh targets equal the online members, so target_min == min(member qs)
    c.target_min(s, a, qmin);
    for (int i = 0; i < 4; ++i) CHECK(qmin[i] == std::min(q0[i], q1[i]));

    // and the min never exceeds any single target member's estimate
    for (long m = 0; m < 2; ++m) {
        for (long i = 0; i < 4; ++i) {
            std::vector<double> in{s(i, 0), s(i, 1), s(i, 2), a(i, 0)};
            double qm = c.targets()[m].forward1(in)[0];
            CHECK(qmin[i] <= qm + 1e-12);
        }
    }
}

TEST_CASE("bellman targets: terminal masking and the discount") {
    Rng rng(5);
    CriticConfig cfg;
    cfg.hidden = {16};
    CriticEnsemble c = CriticEnsemble::make(1, 1, cfg, rng);

    ReplayBuffer::Batch b{MatD(2, 1), MatD(2, 1), MatD(2, 1), {1.5, -0.5}, {1, 0}};
    b.states(0, 0) = 0.1;
    b.states(1, 0) = 0.2;
    b.actions(0, 0) = 0.0;
    b.actions(1, 0) = 0.0;
    b.next_states(0, 0) = 0.7;
    b.next_states(1, 0) = -0.7;

    MatD fixed(2, 1);
    fixed(0, 0) = 0.25;
    fixed(1, 0) = -0.25;
    NextActionSampler sampler = [&](const MatD&, Rng&) { return fixed; };

    auto y = bellman_target(c, b, sampler, 0.9, rng);
    std::vector<double> qmin(2);
    c.target_min(b.next_states, fixed, qmin);
    CHECK(y[0] == 1.5);  // terminal row keeps only its reward
    CHECK(y[1] == doctest::Approx(-0.5 + 0.9 * qmin[1]).epsilon(1e-12));

    auto y0 = bellman_target(c, b, sampler, 0.0, rng);
    CHECK(y0[0] == 1.5);
    CHECK(y0[1] == -0.5);
}

TEST_CASE("critic update: exact targets give zero loss and leave parameters alone") {
    Rng rng(9);
    CriticConfig cfg;
    cfg.hidden = {12};
    cfg.ensemble = 1;
    CriticEnsemble c = CriticEnsemble::make(2, 1, cfg, rng);

    MatD s(6, 2), a(6, 1);
    for (long i = 0; i < 6; ++i) {
        s(i, 0) = rng.normal();
        s(i, 1) = rng.normal();
        a(i, 0) = rng.uniform(-1.0, 1.0);
    }
    std::vector<double> t(6);
    c.member_q(0, s, a, t);

    auto before = c.members()[0].params;
    double loss = c.update(s, a, t);
    CHECK(loss == 0.0);
    CHECK(testutil::bitwise_equal(c.members()[0].params, before));
}

TEST_CASE("critic update: fixed batch with constant targets is a shrinking regression") {
    Rng rng(21);
    CriticConfig cfg;
    cfg.hidden = {16, 16};
    cfg.lr = 1e-3;
    CriticEnsemble c = CriticEnsemble::make(2, 1, cfg, rng);

    MatD s(16, 2), a(16, 1);
    for (long i = 0; i < 16; ++i) {
        s(i, 0) = rng.normal();
        s(i, 1) = rng.normal();
        a(i, 0) = rng.uniform(-1.0, 1.0);
    }
    std::vector<double> targets(16, 1.0);
    std::vector<double> losses;
    for (int step = 0; step < 100; ++step) losses.push_back(c.update(s, a, targets));
    for (size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] <= losses[i - 1] * (1.0 + 1e-6));
    CHECK(losses.back() < 0.1 * losses.front());
}

TEST_CASE("critic update: EMA targets crawl toward the online weights at the configured rate") {
    Rng rng(33);
    CriticConfig cfg;
    cfg.hidden = {8};
    cfg.ema_rate = 0.005;
    CriticEnsemble c = CriticEnsemble::make(1, 1, cfg, rng);

    auto tgt_before = c.targets()[0].params;
    MatD s(4, 1), a(4, 1);
    for (long i = 0; i < 4; ++i) {
        s(i, 0) = rng.normal();
        a(i, 0) = rng.uniform(-1.0, 1.0);
    }
    std::vector<double> targets(4, 2.0);
    c.update(s, a, targets);
    const auto& online = c.members()[0].params;
    const auto& tgt = c.targets()[0].params;
    for (size_t j = 0; j < tgt.size(); ++j) {
        double want = 0.995 * tgt_before[j] + 0.005 * online[j];
        CHECK(tgt[j] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("fitted values on a three-state chain match exact policy evaluation") {
    // Tabular MDP: states {0,1,2} (observed as s/2), actions {-1,+1} moving
    // along the chain with clamping. Reward 1 for pushing right at the top,
    // -0.1 for pushing right elsewhere, 0 for pushing left. The behavior
    // policy is a fair coin over the two actions; its exact action values
    // solve the evaluation recursion directly.
    const double gamma = 0.9;
    auto next_of = [](int s, int a) { return std::clamp(s + a, 0, 2); };
    auto reward_of = [](int s, int a) {
        if (a == +1) return s == 2 ? 1.0 : -0.1;
        return 0.0;
    };

    double Q[3][2] = {};
    for (int it = 0; it < 600; ++it) {
        double nq[3][2];
        for (int s = 0; s < 3; ++s)
            for (int ai = 0; ai < 2; ++ai) {
                int a = ai == 0 ? -1 : +1;
                int ns = next_of(s, a);
                double v = 0.5 * (Q[ns][0] + Q[ns][1]);
                nq[s][ai] = reward_of(s, a) + gamma * v;
            }
        std::copy(&nq[0][0], &nq[0][0] + 6, &Q[0][0]);
    }

    Rng rng(77);
    CriticConfig cfg;
    cfg.hidden = {32, 32};
    cfg.lr = 1e-3;
    cfg.ema_rate = 0.02;
    CriticEnsemble c = CriticEnsemble::make(1, 1, cfg, rng);

    // every (s, a) pair tiled four times per fitting batch
    const int reps = 4;
    ReplayBuffer::Batch b{MatD(6 * reps, 1), MatD(6 * reps, 1), MatD(6 * reps, 1),
                          std::vector<double>(6 * reps), std::vector<uint8_t>(6 * reps, 0)};
    long row = 0;
    for (int rep = 0; rep < reps; ++rep)
        for (int s = 0; s < 3; ++s)
            for (int ai = 0; ai < 2; ++ai) {
                int a = ai == 0 ? -1 : +1;
                b.states(row, 0) = s / 2.0;
                b.actions(row, 0) = static_cast<double>(a);
                b.next_states(row, 0) = next_of(s, a) / 2.0;
                b.rewards[row] = reward_of(s, a);
                ++row;
            }

    // Each pair occupies rows {p, p+6, p+12, p+18}; giving alternate action
    // draws to alternate repetitions makes every update see the exact fair-coin
    // average instead of a noisy one, so the ensemble min settles cleanly.
    NextActionSampler coin = [&](const MatD& ns, Rng&) {
        MatD out(ns.rows, 1);
        for (long i = 0; i < ns.rows; ++i) out(i, 0) = ((i / 6) % 2 == 0) ? -1.0 : 1.0;
        return out;
    };

    for (int step = 0; step < 20000; ++step) {
        if (step == 12000) for (auto& o : c.optimizers()) o.lr = 3e-4;
        auto y = bellman_target(c, b, coin, gamma, rng);
        c.update(b.states, b.actions, y);
    }

    double worst = 0.0;
    for (int s = 0; s < 3; ++s)
        for (int ai = 0; ai < 2; ++ai) {
            std::vector<double> obs{s / 2.0}, act{ai == 0 ? -1.0 : 1.0};
            worst = std::max(worst, std::fabs(c.q(obs, act) - Q[s][ai]));
        }
    CHECK(worst < 0.05);
}

TEST_CASE("gae: lambda zero collapses to one-step TD errors") {
    std::vector<double> r{1.0, -0.5, 2.0, 0.3, 1.1, -2.0};
    std::vector<double> v{0.2, 0.6, -0.1, 0.9, 0.4, -0.3, 0.8};
    std::vector<uint8_t> term{0, 0, 1, 0, 0, 0};
    std::vector<uint8_t> bound{0, 0, 0, 0, 1, 0};
    std::vector<double> adv(6), ret(6);
    gae(r, v, term, bound, 0.97, 0.0, adv, ret);
    for (size_t t = 0; t < 6; ++t) {
        double td = r[t] + 0.97 * (term[t] ? 0.0 : v[t + 1]) - v[t];
        CHECK(adv[t] == doctest::Approx(td).epsilon(1e-12));
        CHECK(ret[t] == doctest::Approx(adv[t] + v[t]).epsilon(1e-12));
    }
}

TEST_CASE("gae: undiscounted lambda one sums the remaining episode rewards") {
    std::vector<double> r{1.0, 2.0, 3.0, 4.0, 5.0};
    std::vector<double> v(6, 0.0);
    std::vector<uint8_t> term{0, 0, 1, 0, 1};
    std::vector<uint8_t> bound(5, 0);
    std::vector<double> adv(5), ret(5);
    gae(r, v, term, bound, 1.0, 1.0, adv, ret);
    CHECK(adv[0] == doctest::Approx(6.0));
    CHECK(adv[1] == doctest::Approx(5.0));
    CHECK(adv[2] == doctest::Approx(3.0));
    CHECK(adv[3] == doctest::Approx(9.0));
    CHECK(adv[4] == doctest::Approx(5.0));
}

TEST_CASE("gae: recursion agrees with the brute-force double loop") {
    Rng rng(13);
    const size_t T = 40;
    std::vector<double> r(T), v(T + 1);
    std::vector<uint8_t> term(T, 0), bound(T, 0);
    for (auto& x : r) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    term[9] = term[30] = 1;
    bound[19] = 1;

    std::vector<double> adv(T), ret(T);
    gae(r, v, term, bound, 0.99, 0.95, adv, ret);
    auto want = gae_by_double_loop(r, v, term, bound, 0.99, 0.95);
    for (size_t t = 0; t < T; ++t) CHECK(adv[t] == doctest::Approx(want[t]).epsilon(1e-12));

    std::vector<double> shortv(T);  // missing bootstrap slot
    CHECK_THROWS_AS(gae(r, shortv, term, bound, 0.99, 0.95, adv, ret), DimensionError);
}

TEST_CASE("rollout buffer: per-step bootstraps reproduce the array recursion") {
    RolloutBuffer buf;
    buf.gamma = 0.98;
    buf.gae_lambda = 0.9;
    buf.reserve(8, 1, 1);

    // episode one ends in a terminal; episode two is cut by a time limit and
    // bootstraps from its recorded next_value
    struct Row {
        double r, v, nv;
        bool term, bound;
    };
    std::vector<Row> rows{
        {1.0, 0.5, 0.8, false, false}, {0.2, 0.8, -0.1, false, false}, {-1.0, -0.1, 0.4, true, false},
        {0.7, 0.3, 0.9, false, false}, {1.5, 0.9, 0.6, false, true},
    };
    for (size_t t = 0; t < rows.size(); ++t) {
        std::vector<double> s{static_cast<double>(t)}, a{0.0};
        buf.push(s, a, rows[t].r, rows[t].v, rows[t].nv, 0.0, rows[t].term, rows[t].bound);
    }
    buf.compute_gae();

    double carry = 0.0;
    std::vector<double> want(rows.size());
    for (long t = static_cast<long>(rows.size()) - 1; t >= 0; --t) {
        const Row& w = rows[t];
        double delta = w.r + 0.98 * (w.term ? 0.0 : w.nv) - w.v;
        carry = delta + 0.98 * 0.9 * ((w.term || w.bound) ? 0.0 : carry);
        want[t] = carry;
    }
    for (size_t t = 0; t < rows.size(); ++t) {
        CHECK(buf.advantages[t] == doctest::Approx(want[t]).epsilon(1e-12));
        CHECK(buf.returns[t] == doctest::Approx(want[t] + rows[t].v).epsilon(1e-12));
    }

    CHECK_THROWS_AS(buf.compute_gae(), DomainError);  // once per fill cycle
    std::vector<double> s{0.0}, a{0.0};
    CHECK_THROWS_AS(buf.push(s, a, 0, 0, 0, 0, false, false), DomainError);
    buf.clear();
    CHECK(buf.size() == 0);
    CHECK_FALSE(buf.computed());
    CHECK_THROWS_AS(buf.compute_gae(), DomainError);  // empty
}

TEST_CASE("rollout buffer: normalized advantages have zero mean and unit variance") {
    RolloutBuffer buf;
    buf.reserve(200, 1, 1);
    Rng rng(29);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> s{rng.normal()}, a{rng.uniform(-1.0, 1.0)};
        buf.push(s, a, rng.normal(), rng.normal(), rng.normal(), 0.0, rng.uniform() < 0.05, false);
    }
    CHECK_THROWS_AS(buf.normalize_advantages(), DomainError);  // not computed yet
    buf.compute_gae();
    buf.normalize_advantages();
    double mean = 0.0;
    for (double x : buf.advantages) mean += x;
    mean /= 200.0;
    double var = 0.0;
    for (double x : buf.advantages) var += (x - mean) * (x - mean);
    var /= 200.0;
    CHECK(std::fabs(mean) < 1e-8);
    CHECK(std::fabs(var - 1.0) < 1e-6);
}

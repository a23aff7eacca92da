#include "ropi/verification.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "ropi/asap.hpp"
#include "ropi/errors.hpp"
#include "ropi/features.hpp"

namespace ropi::verify {

// Oracles ---------------------------------------------------------------------

Eigen::VectorXd exact_policy_evaluation(const TabularRobustMDP& mdp, std::size_t kernel, std::span<const int> policy) {
    const auto n = static_cast<Eigen::Index>(mdp.n_states);
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd r(n);
    for (Eigen::Index x = 0; x < n; ++x) {
        const auto act = static_cast<std::size_t>(policy[static_cast<std::size_t>(x)]);
        r[x] = mdp.reward(x, static_cast<Eigen::Index>(act));
        a.row(x) -= mdp.discount * mdp.kernels[kernel][act].row(x);
    }
    return a.fullPivLu().solve(r);
}

Eigen::VectorXd exhaustive_robust_evaluation(const TabularRobustMDP& mdp, std::span<const int> policy) {
    const std::size_t n = mdp.n_states;
    const std::size_t k = mdp.kernels.size();
    const auto ni = static_cast<Eigen::Index>(n);
    Eigen::VectorXd best = Eigen::VectorXd::Constant(ni, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> choice(n, 0);
    while (true) {
        Eigen::MatrixXd a = Eigen::MatrixXd::Identity(ni, ni);
        Eigen::VectorXd r(ni);
        for (std::size_t x = 0; x < n; ++x) {
            const auto act = static_cast<std::size_t>(policy[x]);
            const auto xi = static_cast<Eigen::Index>(x);
            r[xi] = mdp.reward(xi, static_cast<Eigen::Index>(act));
            a.row(xi) -= mdp.discount * mdp.kernels[choice[x]][act].row(xi);
        }
        best = best.cwiseMin(a.fullPivLu().solve(r));
        std::size_t pos = 0;
        while (pos < n && ++choice[pos] == k) choice[pos++] = 0;
        if (pos == n) break;
    }
    return best;
}

std::vector<double> value_iteration_sweep(const TabularRobustMDP& mdp, std::size_t kernel, const std::vector<double>& v) {
    std::vector<double> out(mdp.n_states);
    for (std::size_t x = 0; x < mdp.n_states; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < mdp.n_actions; ++a) {
            double expected = 0.0;
            for (std::size_t y = 0; y < mdp.n_states; ++y)
                expected += mdp.kernels[kernel][a](static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) * v[y];
            const double q = mdp.reward(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(a)) + mdp.discount * expected;
            best = std::max(best, q);
        }
        out[x] = best;
    }
    return out;
}

double enumerated_td_error(const CriticSample& s, const Eigen::VectorXd& w, double discount) {
    const Eigen::VectorXd dense_w = w;
    std::vector<double> per_model;
    for (const auto& outcomes : s.candidates) {
        double e = 0.0;
        for (const NextOutcome& o : outcomes) {
            if (o.terminal) continue;
            const Eigen::VectorXd phi = o.features.dense();
            e += o.probability * phi.dot(dense_w);
        }
        per_model.push_back(e);
    }
    const double worst = *std::min_element(per_model.begin(), per_model.end());
    return s.reward + discount * worst - s.features.dense().dot(dense_w);
}

std::vector<double> dense_forward(const QNetwork& net, const std::vector<double>& x, int head) {
    std::vector<double> a = x;
    const std::vector<int> path = net.path(head);
    for (std::size_t k = 0; k < path.size(); ++k) {
        const DenseLayer& layer = net.layers()[static_cast<std::size_t>(path[k])];
        const Eigen::VectorXd& p = layer.parameters();
        std::vector<double> z(static_cast<std::size_t>(layer.outputs()));
        for (int o = 0; o < layer.outputs(); ++o) {
            double sum = p[static_cast<Eigen::Index>(layer.outputs()) * layer.inputs() + o];
            for (int i = 0; i < layer.inputs(); ++i)
                sum += p[static_cast<Eigen::Index>(i) * layer.outputs() + o] * a[static_cast<std::size_t>(i)];
            z[static_cast<std::size_t>(o)] = (k + 1 < path.size()) ? std::max(0.0, sum) : sum;
        }
        a = std::move(z);
    }
    return a;
}

Eigen::VectorXd central_difference(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double h) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double up = f(probe);
        probe[i] = x[i] - h;
        const double down = f(probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor) {
    return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

double cartesian_acrobot_energy(const EnvState& s, const AcrobotParams& p) {
    const double t1 = s[0];
    const double t12 = s[0] + s[2];
    const double w1 = s[1];
    const double w12 = s[1] + s[3];
    const double lc1 = 0.5 * p.link1_length;
    const double lc2 = 0.5 * p.link2_length;
    // Angles measured from the downward vertical; y points up.
    const double y1 = -lc1 * std::cos(t1);
    const double vx1 = lc1 * std::cos(t1) * w1;
    const double vy1 = lc1 * std::sin(t1) * w1;
    const double y2 = -p.link1_length * std::cos(t1) - lc2 * std::cos(t12);
    const double vx2 = p.link1_length * std::cos(t1) * w1 + lc2 * std::cos(t12) * w12;
    const double vy2 = p.link1_length * std::sin(t1) * w1 + lc2 * std::sin(t12) * w12;
    const double kinetic = 0.5 * p.link1_mass * (vx1 * vx1 + vy1 * vy1) + 0.5 * p.link_moi * w1 * w1 +
                           0.5 * p.link2_mass * (vx2 * vx2 + vy2 * vy2) + 0.5 * p.link_moi * w12 * w12;
    const double potential = p.gravity * (p.link1_mass * y1 + p.link2_mass * y2);
    return kinetic + potential;
}

Moments two_pass_moments(const std::vector<double>& values) {
    Moments m;
    if (values.empty()) return m;
    double sum = 0.0;
    for (double v : values) sum += v;
    m.mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - m.mean) * (v - m.mean);
    m.stddev = std::sqrt(sq / static_cast<double>(values.size()));
    return m;
}

TabularProblem bandit_problem(double discount) {
    TabularRobustMDP mdp;
    mdp.n_states = 1;
    mdp.n_actions = 2;
    mdp.reward = Eigen::MatrixXd(1, 2);
    mdp.reward << 1.0, 0.0;
    mdp.kernels = {{Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Ones(1, 1)}};
    mdp.discount = discount;
    return TabularProblem(mdp, 0, 1);
}

// Checks ----------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

template <class F>
CheckResult timed(const std::string& name, F&& body) {
    const auto start = Clock::now();
    CheckResult r;
    r.name = name;
    try {
        body(r);
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return r;
}

std::string fmt(const char* format, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, format, a, b);
    return buf;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + std::min(hi - lo, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(hi - lo + 1)));
}

std::vector<int> random_policy(const TabularRobustMDP& mdp, Rng& rng) {
    std::vector<int> pi(mdp.n_states);
    for (int& a : pi) a = static_cast<int>(pick(rng, 0, mdp.n_actions - 1));
    return pi;
}

EnvState state_of(std::size_t x) { return {static_cast<double>(x), 0.0, 0.0, 0.0}; }

CriticBatch policy_batch(const TabularProblem& problem, const std::vector<int>& pi) {
    CriticBatch batch;
    for (std::size_t x = 0; x < pi.size(); ++x) batch.push_back(problem.materialize(state_of(x), pi[x]));
    return batch;
}

Eigen::VectorXd random_vector(Eigen::Index n, Rng& rng, double scale) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = uniform(rng, -scale, scale);
    return v;
}

EnvState random_state(Rng& rng, double scale) {
    EnvState s;
    for (double& v : s) v = uniform(rng, -scale, scale);
    return s;
}

AsapPolicy random_asap(Rng& rng, int max_k) {
    const int k = static_cast<int>(pick(rng, 0, static_cast<std::size_t>(max_k)));
    AsapPolicy p(k, kNumActions, HyperplaneFeatureMap{}, uniform(rng, 0.5, 2.0));
    Eigen::VectorXd theta(p.parameters().size());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = normal(rng);
    p.set_parameters(theta);
    return p;
}

}  // namespace

CheckResult check_contraction(const VerifyOptions& options, int trials) {
    return timed("robust Bellman contraction", [&](CheckResult& r) {
        Rng rng(derive_seed(options.seed, 1));
        const double gammas[] = {0.5, 0.9, 0.99};
        double worst = 0.0;  // max of ||Tv1 - Tv2|| - gamma ||v1 - v2||
        int failures = 0;
        for (int t = 0; t < trials; ++t) {
            const double gamma = gammas[t % 3];
            const TabularRobustMDP mdp =
                random_tabular_mdp(pick(rng, 1, 6), pick(rng, 1, 3), pick(rng, 1, 4), gamma, rng);
            const auto n = static_cast<Eigen::Index>(mdp.n_states);
            const Eigen::VectorXd v1 = random_vector(n, rng, 10.0);
            const Eigen::VectorXd v2 = random_vector(n, rng, 10.0);
            const double bound = gamma * (v1 - v2).lpNorm<Eigen::Infinity>();
            const std::vector<int> pi = random_policy(mdp, rng);
            const double optimal =
                (tabular_robust_bellman(v1, mdp) - tabular_robust_bellman(v2, mdp)).lpNorm<Eigen::Infinity>();
            const double fixed = (tabular_robust_bellman(v1, mdp, std::span<const int>(pi)) -
                                  tabular_robust_bellman(v2, mdp, std::span<const int>(pi)))
                                     .lpNorm<Eigen::Infinity>();
            const double excess = std::max(optimal, fixed) - bound;
            worst = std::max(worst, excess);
            if (excess > 1e-12) ++failures;
        }
        r.passed = failures == 0;
        r.detail = std::to_string(trials) + " trials, " + std::to_string(failures) + " violations" +
                   fmt(", max excess %.3g", worst);
    });
}

CheckResult check_single_kernel_bellman(const VerifyOptions& options, int trials) {
    return timed("single-kernel Bellman = value iteration", [&](CheckResult& r) {
        Rng rng(derive_seed(options.seed, 2));
        double worst = 0.0;
        for (int t = 0; t < trials; ++t) {
            const TabularRobustMDP mdp = random_tabular_mdp(pick(rng, 1, 6), pick(rng, 1, 3), 1, 0.9, rng);
            const Eigen::VectorXd v = random_vector(static_cast<Eigen::Index>(mdp.n_states), rng, 5.0);
            const Eigen::VectorXd lib = tabular_robust_bellman(v, mdp);
            const std::vector<double> ref = value_iteration_sweep(mdp, 0, std::vector<double>(v.begin(), v.end()));
            for (std::size_t x = 0; x < ref.size(); ++x)
                worst = std::max(worst, std::abs(lib[static_cast<Eigen::Index>(x)] - ref[x]));
        }
        r.passed = worst <= 1e-12;
        r.detail = fmt("max |T v - VI(v)| = %.3g", worst);
    });
}

CheckResult check_rpvi_oracle(const VerifyOptions& options, int trials) {
    return timed("RPVI fixed point = exhaustive robust evaluation", [&](CheckResult& r) {
        Rng rng(derive_seed(options.seed, 3));
        const double gammas[] = {0.5, 0.9, 0.99};
        double worst_robust = 0.0;
        double worst_plain = 0.0;
        bool bitwise = true;
        for (int t = 0; t < trials; ++t) {
            const double gamma = gammas[t % 3];
            const TabularRobustMDP mdp =
                random_tabular_mdp(pick(rng, 1, 5), pick(rng, 1, 3), pick(rng, 1, 4), gamma, rng);
            const std::vector<int> pi = random_policy(mdp, rng);
            const TabularProblem problem(mdp, 0, 1);
            const CriticBatch batch = policy_batch(problem, pi);
            const CriticParams zero{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mdp.n_states))};
            const RpviFixedPoint fp = rpvi_fixed_point(batch, zero, gamma, 1e-13, 200000);
            const Eigen::VectorXd oracle = exhaustive_robust_evaluation(mdp, pi);
            worst_robust = std::max(worst_robust, (fp.critic.w - oracle).lpNorm<Eigen::Infinity>());

            // Single kernel: robust RPVI must equal the nominal projected evaluation exactly.
            TabularRobustMDP single = mdp;
            single.kernels.resize(1);
            const TabularProblem single_problem(single, 0, 1);
            const CriticBatch single_batch = policy_batch(single_problem, pi);
            RpviOptions nominal;
            nominal.robust = false;
            const RpviFixedPoint a = rpvi_fixed_point(single_batch, zero, gamma, 1e-13, 200000);
            const RpviFixedPoint b = rpvi_fixed_point(single_batch, zero, gamma, 1e-13, 200000, nominal);
            bitwise = bitwise && a.critic.w == b.critic.w && a.iterations == b.iterations;
            worst_plain = std::max(worst_plain,
                                   (a.critic.w - exact_policy_evaluation(single, 0, pi)).lpNorm<Eigen::Infinity>());
        }
        r.passed = worst_robust <= 1e-8 && worst_plain <= 1e-8 && bitwise;
        r.detail = fmt("robust err %.3g, single-kernel err %.3g", worst_robust, worst_plain) +
                   (bitwise ? ", singleton bit-identical" : ", singleton NOT bit-identical");
    });
}

CheckResult check_td_error_oracle(const VerifyOptions& options, int trials) {
    return timed("robust TD error = enumeration, pessimism", [&](CheckResult& r) {
        Rng rng(derive_seed(options.seed, 4));
        double worst = 0.0;
        int pessimism_violations = 0;
        for (int t = 0; t < trials; ++t) {
            const TabularRobustMDP mdp = random_tabular_mdp(pick(rng, 1, 6), pick(rng, 1, 3), pick(rng, 1, 4), 0.9, rng);
            const TabularProblem problem(mdp, 0, 1);
            const std::size_t x = pick(rng, 0, mdp.n_states - 1);
            const int a = static_cast<int>(pick(rng, 0, mdp.n_actions - 1));
            const CriticSample s = problem.materialize(state_of(x), a);
            const CriticParams c{random_vector(static_cast<Eigen::Index>(mdp.n_states), rng, 5.0)};
            const double delta = options.td_error(s, c, mdp.discount);
            worst = std::max(worst, std::abs(delta - enumerated_td_error(s, c.w, mdp.discount)));
            for (std::size_t k = 0; k < s.candidates.size(); ++k) {
                CriticSample single = s;
                single.candidates = {s.candidates[k]};
                single.nominal_index = 0;
                if (delta > enumerated_td_error(single, c.w, mdp.discount) + 1e-12) ++pessimism_violations;
            }
        }
        r.passed = worst <= 1e-12 && pessimism_violations == 0;
        r.detail = fmt("max deviation %.3g", worst) + ", " + std::to_string(pessimism_violations) +
                   " pessimism violations";
    });
}

CheckResult check_td_convergence(const VerifyOptions& options, int trials) {
    return timed("robust TD(0) converges to robust value", [&](CheckResult& r) {
        Rng rng(derive_seed(options.seed, 5));
        double worst = 0.0;
        for (int t = 0; t < trials; ++t) {
            const TabularRobustMDP mdp = random_tabular_mdp(pick(rng, 2, 5), pick(rng, 1, 3), pick(rng, 1, 4), 0.8, rng);
            const std::vector<int> pi = random_policy(mdp, rng);
            const TabularProblem problem(mdp, 0, 1);
            const CriticBatch batch = policy_batch(problem, pi);
            CriticParams c{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mdp.n_states))};
            for (int sweep = 0; sweep < 2000 && c.finite(); ++sweep) {
                Eigen::VectorXd update = Eigen::VectorXd::Zero(c.w.size());
                for (const CriticSample& s : batch) s.features.add_to(update, options.td_error(s, c, mdp.discount));
                c.w += 0.5 * update;
                if (c.w.lpNorm<Eigen::Infinity>() > 1e6) break;
            }
            const double err = c.finite() ? (c.w - exhaustive_robust_evaluation(mdp, pi)).lpNorm<Eigen::Infinity>()
                                          : std::numeric_limits<double>::infinity();
            worst = std::max(worst, err);
        }
        r.passed = worst <= 1e-8;
        r.detail = fmt("max error after 2000 sweeps %.3g", worst);
    });
}

CheckResult check_spot_values(const VerifyOptions& options) {
    return timed("hand-enumerated spot values", [&](CheckResult& r) {
        std::ostringstream detail;
        bool ok = true;

        // Robust TD error: next values {1.0, -2.0, 0.3}, r = 1, gamma = 0.9, V(x) = 0.5.
        CriticSample s;
        s.features = one_hot(0, 4);
        s.reward = 1.0;
        for (std::size_t k = 1; k <= 3; ++k) s.candidates.push_back({NextOutcome{1.0, one_hot(k, 4), false}});
        Eigen::VectorXd w(4);
        w << 0.5, 1.0, -2.0, 0.3;
        const double delta = options.td_error(s, CriticParams{w}, 0.9);
        ok = ok && std::abs(delta - (-1.3)) <= 1e-12;
        detail << "td " << delta;

        // Robust DQN target: per-model maxima {3, 1, 2}, r = 0, gamma = 0.99.
        NetworkShape shape;
        shape.inputs = input_width(InputEncoding::raw);
        shape.encoding = InputEncoding::raw;
        shape.hidden = {1};
        shape.actions = 2;
        QNetwork net(shape);
        net.layers()[0].weights()(0, 0) = 1.0;  // h = relu(x0)
        net.layers()[1].weights()(0, 0) = 1.0;  // Q = (h, 0)
        ReplayEntry e;
        e.reward = 0.0;
        for (double v : {3.0, 1.0, 2.0}) e.candidates.push_back({EnvState{v, 0.0, 0.0, 0.0}, false});
        e.nominal_index = 0;
        const std::vector<const ReplayEntry*> batch{&e};
        const double robust = robust_dqn_target(batch, net, 0, 0.99, true)[0];
        const double nominal = robust_dqn_target(batch, net, 0, 0.99, false)[0];
        ok = ok && std::abs(robust - 0.99) <= 1e-12 && std::abs(nominal - 2.97) <= 1e-12;
        detail << ", dqn robust " << robust << " nominal " << nominal;

        // Robust backup: next values {2.0, -1.0, 0.5} -> (-1.0, model 2).
        std::vector<TransitionModel> models;
        const double lengths[] = {0.5, 2.0, 5.0};
        for (std::size_t i = 0; i < 3; ++i) models.push_back(make_model(Domain::cartpole, lengths[i], i + 1));
        const UncertaintySet set(models, 0);
        const EnvState x{0.0, 0.0, 0.01, 0.0};
        const std::vector<Candidate> next = candidate_next_states(x, 1, set);
        const double values[] = {2.0, -1.0, 0.5};
        auto value_fn = [&](const EnvState& y) {
            for (std::size_t i = 0; i < next.size(); ++i)
                if (next[i].next_state == y) return values[i];
            throw ContractViolation("unexpected next state");
        };
        const RobustBackupResult backup = robust_backup(x, 1, value_fn, set);
        ok = ok && backup.value == -1.0 && backup.argmin_model == 2;
        detail << ", backup " << backup.value << " @model " << backup.argmin_model;

        r.passed = ok;
        r.detail = detail.str();
    });
}

CheckResult check_asap_gradients(const VerifyOptions& options, int trials) {
    return timed("ASAP log-gradient = finite differences", [&](CheckResult& r) {
        Rng rng(derive_seed(options.seed, 6));
        double worst = 0.0;
        for (int t = 0; t < trials; ++t) {
            AsapPolicy p = random_asap(rng, 3);
            const EnvState x = random_state(rng, 1.0);
            const int a = static_cast<int>(pick(rng, 0, kNumActions - 1));
            const Eigen::VectorXd analytic = p.log_gradient(x, a);
            AsapPolicy probe = p;
            auto f = [&](const Eigen::VectorXd& theta) {
                probe.set_parameters(theta);
                return std::log(probe.action_probabilities(x)[a]);
            };
            worst = std::max(worst, relative_error(analytic, central_difference(f, p.parameters(), 1e-6)));
        }
        r.passed = worst < 1e-5;
        r.detail = std::to_string(trials) + fmt(" instances, max rel. error %.3g", worst);
    });
}

CheckResult check_mlp_gradients(const VerifyOptions& options, int trials) {
    return timed("MLP backprop = finite differences", [&](CheckResult& r) {
        Rng rng(derive_seed(options.seed, 7));
        double worst_grad = 0.0;
        double worst_forward = 0.0;
        bool isolated = true;
        int done = 0;
        while (done < trials) {
            NetworkShape shape;
            shape.inputs = 3;
            shape.hidden = pick(rng, 0, 1) == 0 ? std::vector<int>{3} : std::vector<int>{3, 3};
            shape.heads = static_cast<int>(pick(rng, 1, 2));
            shape.actions = 2;
            QNetwork net(shape);
            net.initialize(rng);
            for (DenseLayer& l : net.layers()) l.parameters() *= 2.0;
            const int head = static_cast<int>(pick(rng, 0, static_cast<std::size_t>(shape.heads) - 1));
            const Eigen::Index batch = static_cast<Eigen::Index>(pick(rng, 1, 3));
            Eigen::MatrixXd x(3, batch);
            for (Eigen::Index j = 0; j < batch; ++j) x.col(j) = random_vector(3, rng, 1.0);
            Eigen::MatrixXd g(2, batch);
            for (Eigen::Index j = 0; j < batch; ++j) g.col(j) = random_vector(2, rng, 1.0);

            // Finite differences are meaningless across a ReLU kink: redraw such instances.
            ForwardCache cache;
            const Eigen::MatrixXd q = net.forward(x, head, cache);
            bool near_kink = false;
            for (std::size_t k = 1; k < cache.inputs.size(); ++k) {
                const DenseLayer& prev = net.layers()[static_cast<std::size_t>(cache.path[k - 1])];
                Eigen::MatrixXd z = prev.weights() * cache.inputs[k - 1];
                z.colwise() += prev.bias();
                if (z.cwiseAbs().minCoeff() < 1e-3) near_kink = true;
            }
            if (near_kink) continue;
            ++done;

            for (Eigen::Index j = 0; j < batch; ++j) {
                const std::vector<double> ref = dense_forward(net, std::vector<double>(x.col(j).data(), x.col(j).data() + 3), head);
                for (std::size_t a = 0; a < ref.size(); ++a)
                    worst_forward = std::max(worst_forward, std::abs(ref[a] - q(static_cast<Eigen::Index>(a), j)));
            }

            const NetworkGradients grads = net.backward(cache, g);
            for (std::size_t li = 0; li < net.layers().size(); ++li) {
                const bool on_path =
                    std::find(cache.path.begin(), cache.path.end(), static_cast<int>(li)) != cache.path.end();
                if (!on_path) {
                    isolated = isolated && !grads.touched[li] && grads.layers[li].isZero(0.0);
                    continue;
                }
                QNetwork probe = net;
                auto f = [&](const Eigen::VectorXd& params) {
                    probe.layers()[li].parameters() = params;
                    return (probe.predict(x, head).array() * g.array()).sum();
                };
                worst_grad = std::max(worst_grad, relative_error(grads.layers[li],
                                                                 central_difference(f, net.layers()[li].parameters(), 1e-5)));
            }
        }
        r.passed = worst_grad < 1e-4 && worst_forward <= 1e-12 && isolated;
        r.detail = std::to_string(trials) + fmt(" nets, max rel. error %.3g, forward vs oracle %.3g", worst_grad,
                                                worst_forward) +
                   (isolated ? ", heads isolated" : ", head isolation VIOLATED");
    });
}

CheckResult check_score_identity(const VerifyOptions& options, int trials) {
    return timed("score identity sum_a pi psi = 0", [&](CheckResult& r) {
        Rng rng(derive_seed(options.seed, 8));
        double worst = 0.0;
        for (int t = 0; t < trials; ++t) {
            const AsapPolicy p = random_asap(rng, 3);
            const EnvState x = random_state(rng, 2.0);
            const Eigen::VectorXd pi = p.action_probabilities(x);
            Eigen::VectorXd total = Eigen::VectorXd::Zero(p.parameters().size());
            for (int a = 0; a < p.num_actions(); ++a) total += pi[a] * compatibility_features(p, x, a);
            worst = std::max(worst, total.lpNorm<Eigen::Infinity>());
        }
        r.passed = worst < 1e-10;
        r.detail = fmt("max |sum| = %.3g", worst);
    });
}

CheckResult check_energy_conservation(const VerifyOptions& options) {
    return timed("acrobot passive energy conservation", [&](CheckResult& r) {
        Rng rng(derive_seed(options.seed, 9));
        const AcrobotParams p;
        double worst_drift = 0.0;
        double worst_form = 0.0;
        std::vector<EnvState> starts = {{1.0, 0.0, 0.5, 0.0}, {2.5, 0.0, -1.0, 0.0}, {0.3, 1.0, -0.2, -1.5}};
        for (int i = 0; i < 5; ++i) starts.push_back(random_state(rng, 1.5));
        for (const EnvState& s0 : starts) {
            const double e0 = acrobot_energy(s0, p);
            EnvState s = s0;
            for (int t = 0; t < 500; ++t) {
                s = rk4_step([&](const EnvState& y) { return acrobot_derivative(y, 0.0, p); }, s, 0.05);
                const double e = acrobot_energy(s, p);
                worst_drift = std::max(worst_drift, std::abs(e - e0) / std::abs(e0));
                worst_form = std::max(worst_form, std::abs(e - cartesian_acrobot_energy(s, p)));
            }
        }
        r.passed = worst_drift < 1e-3 && worst_form < 1e-9;
        r.detail = fmt("max relative drift %.3g over 500 steps, energy forms differ by %.3g", worst_drift, worst_form);
    });
}

CheckResult check_reward_bounds(const VerifyOptions& options, int steps) {
    return timed("reward bounds", [&](CheckResult& r) {
        Rng rng(derive_seed(options.seed, 10));
        int violations = 0;
        int episodes = 0;
        for (Domain d : {Domain::cartpole, Domain::acrobot}) {
            TransitionModel model;
            EnvState x{};
            int t = 0;
            bool fresh = true;
            for (int i = 0; i < steps / 2; ++i) {
                if (fresh) {
                    const double value = d == Domain::cartpole ? uniform(rng, 0.5, 5.0) : uniform(rng, 1.0, 5.5);
                    model = make_model(d, value);
                    x = reset(d, rng);
                    t = 0;
                    fresh = false;
                    ++episodes;
                }
                const StepOutcome o = model.step(x, static_cast<int>(pick(rng, 0, 1)));
                const bool ok = d == Domain::cartpole ? (o.terminal ? o.reward == 0.0 : o.reward == 1.0)
                                                      : (o.terminal ? o.reward == 0.0 : o.reward == -1.0);
                if (!ok || !all_finite(o.next_state)) ++violations;
                x = o.next_state;
                fresh = o.terminal || ++t >= model.max_steps();
            }
        }
        r.passed = violations == 0;
        r.detail = std::to_string(steps) + " steps, " + std::to_string(episodes) + " episodes, " +
                   std::to_string(violations) + " violations";
    });
}

CheckResult check_nominal_reduction(const VerifyOptions& options) {
    return timed("nominal reduction (singleton set)", [&](CheckResult& r) {
        Rng rng(derive_seed(options.seed, 11));
        std::vector<std::string> failed;

        UncertaintySpec spec = default_uncertainty_spec(Domain::cartpole, derive_seed(options.seed, 12));
        const UncertaintySet full = sample_uncertainty_set(spec);
        const UncertaintySet single = full.nominal_only();
        const TilingSpec tiling = default_tiling(Domain::cartpole);

        // TD error and RPVI on a random nominal batch.
        AsapPolicy policy = AsapPolicy::flat();
        DynamicsProblem single_problem(single, tiling);
        DynamicsProblem full_problem(full, tiling);
        Rng batch_rng(derive_seed(options.seed, 13));
        const TrajectoryBatch traj = generate_trajectories(policy, single_problem, 5, 0.99, batch_rng);
        const CriticBatch batch = materialize(traj, single, tiling);
        const CriticParams w{random_vector(static_cast<Eigen::Index>(tiling.dimension()), rng, 1.0)};
        for (const CriticSample& s : batch)
            if (options.td_error(s, w, 0.99) != td_error(s, w, 0.99)) {
                failed.push_back("td_error");
                break;
            }
        RpviOptions nominal;
        nominal.robust = false;
        if (rpvi_update(batch, w, 0.99).w != rpvi_update(batch, w, 0.99, nominal).w) failed.push_back("rpvi");

        // Online actor-critic traces.
        OnlineAcConfig ac;
        ac.episodes = 15;
        ac.seed = derive_seed(options.seed, 14);
        AsapPolicy p1(1);
        Rng init(derive_seed(options.seed, 15));
        p1.initialize(init);
        AsapPolicy p2 = p1;
        ac.robust = true;
        const OnlineAcResult robust_run = online_robust_ac(p1, single_problem, ac);
        ac.robust = false;
        const OnlineAcResult plain_run = online_robust_ac(p2, full_problem, ac);
        bool same = p1.parameters() == p2.parameters() && robust_run.critic.w == plain_run.critic.w &&
                    robust_run.log.size() == plain_run.log.size();
        for (std::size_t i = 0; same && i < robust_run.log.size(); ++i)
            same = robust_run.log[i].episode_return == plain_run.log[i].episode_return &&
                   robust_run.log[i].mean_td_error == plain_run.log[i].mean_td_error;
        if (!same) failed.push_back("online_ac");

        // DQN training traces at reduced scale.
        DqnConfig dq;
        dq.episodes = 6;
        dq.hidden = {16, 16};
        dq.batch_size = 16;
        dq.learning_starts = 32;
        dq.target_sync = 50;
        dq.seed = derive_seed(options.seed, 16);
        const UncertaintySet acro = sample_uncertainty_set(default_uncertainty_spec(Domain::acrobot, 3));
        const std::vector<DqnTask> robust_tasks{{Domain::cartpole, single}, {Domain::acrobot, acro.nominal_only()}};
        const std::vector<DqnTask> plain_tasks{{Domain::cartpole, full}, {Domain::acrobot, acro}};
        const DqnResult a = train_multitask_dqn(dq, robust_tasks, DqnMode::robust_option_heads);
        const DqnResult b = train_multitask_dqn(dq, plain_tasks, DqnMode::option_heads);
        if (!(a.log == b.log && a.network == b.network)) failed.push_back("dqn");

        r.passed = failed.empty();
        if (failed.empty()) {
            r.detail = "td_error, rpvi, online_ac, dqn bit-identical";
        } else {
            r.detail = "differs:";
            for (const auto& f : failed) r.detail += " " + f;
        }
    });
}

CheckResult check_bandit_convergence(const VerifyOptions& options) {
    return timed("ROPI gradient norm -> 0 on a bandit", [&](CheckResult& r) {
        const TabularProblem problem = bandit_problem();
        AsapPolicy policy = AsapPolicy::flat();
        RopiConfig cfg;
        cfg.discount = 0.9;
        cfg.schedule = StepSchedule::inverse_t;
        cfg.actor_step = 100.0;
        cfg.episodes_per_iteration = 4;
        cfg.tolerance = 1e-3;
        cfg.max_iterations = 1000;
        cfg.seed = derive_seed(options.seed, 17);
        const RopiResult result = ropi(policy, problem, cfg);
        const double final_norm = result.history.empty() ? 0.0 : result.history.back().grad_norm;
        const double p_best = policy.action_probabilities(state_of(0))[0];
        r.passed = result.converged && final_norm < 1e-3 && p_best > 0.99;
        r.detail = std::to_string(result.history.size()) + fmt(" iterations, final ||grad|| %.3g, pi(best) %.6f",
                                                                 final_norm, p_best);
    });
}

std::vector<CheckResult> run_all(const VerifyOptions& options) {
    return {check_contraction(options),        check_single_kernel_bellman(options), check_rpvi_oracle(options),
            check_td_error_oracle(options),    check_td_convergence(options),        check_spot_values(options),
            check_asap_gradients(options),     check_mlp_gradients(options),         check_score_identity(options),
            check_energy_conservation(options), check_reward_bounds(options),        check_nominal_reduction(options),
            check_bandit_convergence(options)};
}

std::string format_table(const std::vector<CheckResult>& results) {
    std::size_t width = 5;
    for (const auto& r : results) width = std::max(width, r.name.size());
    std::ostringstream out;
    auto row = [&](const std::string& name, const std::string& status, const std::string& time,
                   const std::string& detail) {
        out << name << std::string(width - name.size() + 2, ' ') << status << std::string(8 - status.size(), ' ')
            << time << std::string(time.size() < 9 ? 9 - time.size() : 1, ' ') << detail << '\n';
    };
    row("check", "status", "seconds", "detail");
    for (const auto& r : results) {
        char t[32];
        std::snprintf(t, sizeof t, "%.2f", r.seconds);
        row(r.name, r.passed ? "PASS" : "FAIL", t, r.detail);
    }
    return out.str();
}

}  // namespace ropi::verify

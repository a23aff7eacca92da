#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "ropi/errors.hpp"
#include "ropi/random.hpp"

namespace ropi {

enum class Domain { cartpole, acrobot };

std::string_view to_string(Domain domain);
Domain parse_domain(std::string_view name);

/// CartPole: (x, x_dot, theta, theta_dot). Acrobot: (theta1, theta1_dot, theta2, theta2_dot).
using EnvState = std::array<double, 4>;

inline constexpr std::size_t kStateDim = 4;
/// Both domains expose two discrete actions: 0 pushes left / applies -torque,
/// 1 pushes right / applies +torque.
inline constexpr int kNumActions = 2;

struct CartPoleParams {
    double pole_length = 0.5;  ///< full length [m]; the dynamics use half of it
    double pole_mass = 0.1;
    double cart_mass = 1.0;
    double gravity = 9.8;
    double force_magnitude = 10.0;
    double dt = 0.02;
    double angle_limit = 12.0 * std::numbers::pi / 180.0;
    double position_limit = 2.4;
    int max_steps = 200;

    void validate() const;
    bool operator==(const CartPoleParams&) const = default;
};

struct AcrobotParams {
    double link1_mass = 1.0;
    double link2_mass = 1.0;
    double link1_length = 1.0;
    double link2_length = 1.0;
    double link_moi = 1.0;  ///< moment of inertia of each link about its centre
    double gravity = 9.8;
    double dt = 0.2;
    int substeps = 4;
    double torque_magnitude = 1.0;
    double max_vel1 = 4.0 * std::numbers::pi;
    double max_vel2 = 9.0 * std::numbers::pi;
    double goal_height = 1.0;
    int max_steps = 500;

    void validate() const;
    bool operator==(const AcrobotParams&) const = default;
};

struct StepOutcome {
    EnvState next_state{};
    double reward = 0.0;
    bool terminal = false;
};

inline bool all_finite(const EnvState& s) {
    for (double v : s)
        if (!std::isfinite(v)) return false;
    return true;
}

/// One classical fourth-order Runge-Kutta step of ds/dt = f(s).
/// Throws IntegrationError when any stage of f is non-finite.
template <class Derivative>
EnvState rk4_step(Derivative&& f, const EnvState& s, double dt) {
    if (!(dt > 0.0)) throw ContractViolation("rk4_step: dt must be positive");
    auto checked = [&](const EnvState& at) {
        EnvState d = f(at);
        if (!all_finite(d)) throw IntegrationError("rk4_step: derivative is not finite");
        return d;
    };
    auto offset = [](const EnvState& base, const EnvState& d, double h) {
        EnvState r;
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = base[i] + h * d[i];
        return r;
    };
    const EnvState k1 = checked(s);
    const EnvState k2 = checked(offset(s, k1, dt / 2.0));
    const EnvState k3 = checked(offset(s, k2, dt / 2.0));
    const EnvState k4 = checked(offset(s, k3, dt));
    EnvState out;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    return out;
}

// CartPole ---------------------------------------------------------------

EnvState cartpole_derivative(const EnvState& s, double force, const CartPoleParams& p);
bool cartpole_out_of_bounds(const EnvState& s, const CartPoleParams& p);
StepOutcome cartpole_step(const EnvState& s, int action, const CartPoleParams& p);

// Acrobot ----------------------------------------------------------------

EnvState acrobot_derivative(const EnvState& s, double torque, const AcrobotParams& p);
/// Height of the tip above the shoulder, in link-length units when both links are 1 m.
double acrobot_tip_height(const EnvState& s, const AcrobotParams& p);
bool acrobot_goal_reached(const EnvState& s, const AcrobotParams& p);
/// Total mechanical energy (kinetic + potential, shoulder as zero height).
double acrobot_energy(const EnvState& s, const AcrobotParams& p);
/// Integrates one control period with an arbitrary elbow torque.
StepOutcome acrobot_step_torque(const EnvState& s, double torque, const AcrobotParams& p);
StepOutcome acrobot_step(const EnvState& s, int action, const AcrobotParams& p);

// Shared -----------------------------------------------------------------

/// CartPole: each component uniform in [-0.05, 0.05]; Acrobot: [-0.1, 0.1].
EnvState reset(Domain domain, Rng& rng);
EnvState reset(Domain domain, std::uint64_t seed);

}  // namespace ropi

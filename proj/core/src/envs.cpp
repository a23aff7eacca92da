#include "ropi/envs.hpp"

#include <algorithm>
#include <string>

namespace ropi {

std::string_view to_string(Domain domain) {
    return domain == Domain::cartpole ? "cartpole" : "acrobot";
}

Domain parse_domain(std::string_view name) {
    if (name == "cartpole") return Domain::cartpole;
    if (name == "acrobot") return Domain::acrobot;
    throw ConfigError("unknown domain '" + std::string(name) + "'", "domain");
}

namespace {

void require_positive(double v, const char* field) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("must be a positive finite number", field);
}

void check_action(int action) {
    if (action != 0 && action != 1)
        throw ContractViolation("action index must be 0 or 1, got " + std::to_string(action));
}

double wrap_angle(double a) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double w = std::fmod(a + std::numbers::pi, two_pi);
    if (w < 0.0) w += two_pi;
    return w - std::numbers::pi;
}

}  // namespace

void CartPoleParams::validate() const {
    require_positive(pole_length, "pole_length");
    require_positive(pole_mass, "pole_mass");
    require_positive(cart_mass, "cart_mass");
    require_positive(gravity, "gravity");
    require_positive(force_magnitude, "force_magnitude");
    require_positive(dt, "dt");
    require_positive(angle_limit, "angle_limit");
    require_positive(position_limit, "position_limit");
    if (max_steps < 1) throw ConfigError("must be at least 1", "max_steps");
}

void AcrobotParams::validate() const {
    require_positive(link1_mass, "link1_mass");
    require_positive(link2_mass, "link2_mass");
    require_positive(link1_length, "link1_length");
    require_positive(link2_length, "link2_length");
    require_positive(link_moi, "link_moi");
    require_positive(gravity, "gravity");
    require_positive(dt, "dt");
    require_positive(torque_magnitude, "torque_magnitude");
    require_positive(max_vel1, "max_vel1");
    require_positive(max_vel2, "max_vel2");
    if (substeps < 1) throw ConfigError("must be at least 1", "substeps");
    if (max_steps < 1) throw ConfigError("must be at least 1", "max_steps");
}

EnvState cartpole_derivative(const EnvState& s, double force, const CartPoleParams& p) {
    const double theta = s[2];
    const double theta_dot = s[3];
    const double half_length = p.pole_length / 2.0;
    const double total_mass = p.cart_mass + p.pole_mass;
    const double polemass_length = p.pole_mass * half_length;
    const double sin_t = std::sin(theta);
    const double cos_t = std::cos(theta);

    const double temp = (force + polemass_length * theta_dot * theta_dot * sin_t) / total_mass;
    const double theta_acc = (p.gravity * sin_t - cos_t * temp) /
                             (half_length * (4.0 / 3.0 - p.pole_mass * cos_t * cos_t / total_mass));
    const double x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;
    return {s[1], x_acc, theta_dot, theta_acc};
}

bool cartpole_out_of_bounds(const EnvState& s, const CartPoleParams& p) {
    return std::abs(s[0]) > p.position_limit || std::abs(s[2]) > p.angle_limit;
}

StepOutcome cartpole_step(const EnvState& s, int action, const CartPoleParams& p) {
    check_action(action);
    if (!all_finite(s)) throw IntegrationError("cartpole_step: state is not finite");
    if (cartpole_out_of_bounds(s, p)) throw ContractViolation("cartpole_step: state is terminal");

    const double force = action == 1 ? p.force_magnitude : -p.force_magnitude;
    StepOutcome out;
    out.next_state = rk4_step([&](const EnvState& x) { return cartpole_derivative(x, force, p); }, s, p.dt);
    out.terminal = cartpole_out_of_bounds(out.next_state, p);
    out.reward = out.terminal ? 0.0 : 1.0;
    return out;
}

EnvState acrobot_derivative(const EnvState& s, double torque, const AcrobotParams& p) {
    const double m1 = p.link1_mass;
    const double m2 = p.link2_mass;
    const double l1 = p.link1_length;
    const double lc1 = p.link1_length / 2.0;
    const double lc2 = p.link2_length / 2.0;
    const double inertia1 = p.link_moi;
    const double inertia2 = p.link_moi;
    const double g = p.gravity;

    const double theta1 = s[0];
    const double dtheta1 = s[1];
    const double theta2 = s[2];
    const double dtheta2 = s[3];

    const double d1 =
        m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * std::cos(theta2)) + inertia1 + inertia2;
    const double d2 = m2 * (lc2 * lc2 + l1 * lc2 * std::cos(theta2)) + inertia2;
    const double phi2 = m2 * lc2 * g * std::sin(theta1 + theta2);
    const double phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * std::sin(theta2) -
                        2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * std::sin(theta2) +
                        (m1 * lc1 + m2 * l1) * g * std::sin(theta1) + phi2;
    const double ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * std::sin(theta2) - phi2) /
                            (m2 * lc2 * lc2 + inertia2 - d2 * d2 / d1);
    const double ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    return {dtheta1, ddtheta1, dtheta2, ddtheta2};
}

double acrobot_tip_height(const EnvState& s, const AcrobotParams& p) {
    return -p.link1_length * std::cos(s[0]) - p.link2_length * std::cos(s[0] + s[2]);
}

bool acrobot_goal_reached(const EnvState& s, const AcrobotParams& p) {
    return acrobot_tip_height(s, p) >= p.goal_height;
}

double acrobot_energy(const EnvState& s, const AcrobotParams& p) {
    const double m1 = p.link1_mass;
    const double m2 = p.link2_mass;
    const double l1 = p.link1_length;
    const double lc1 = p.link1_length / 2.0;
    const double lc2 = p.link2_length / 2.0;
    const double w1 = s[1];
    const double w12 = s[1] + s[3];

    const double kinetic =
        0.5 * (m1 * lc1 * lc1 + p.link_moi) * w1 * w1 +
        0.5 * m2 * (l1 * l1 * w1 * w1 + lc2 * lc2 * w12 * w12 + 2.0 * l1 * lc2 * w1 * w12 * std::cos(s[2])) +
        0.5 * p.link_moi * w12 * w12;
    const double potential =
        -m1 * p.gravity * lc1 * std::cos(s[0]) - m2 * p.gravity * (l1 * std::cos(s[0]) + lc2 * std::cos(s[0] + s[2]));
    return kinetic + potential;
}

StepOutcome acrobot_step_torque(const EnvState& s, double torque, const AcrobotParams& p) {
    if (!all_finite(s) || !std::isfinite(torque)) throw IntegrationError("acrobot_step: state is not finite");
    if (acrobot_goal_reached(s, p)) throw ContractViolation("acrobot_step: state is terminal");

    const double h = p.dt / p.substeps;
    EnvState x = s;
    for (int i = 0; i < p.substeps; ++i)
        x = rk4_step([&](const EnvState& y) { return acrobot_derivative(y, torque, p); }, x, h);

    x[0] = wrap_angle(x[0]);
    x[2] = wrap_angle(x[2]);
    x[1] = std::clamp(x[1], -p.max_vel1, p.max_vel1);
    x[3] = std::clamp(x[3], -p.max_vel2, p.max_vel2);

    StepOutcome out;
    out.next_state = x;
    out.terminal = acrobot_goal_reached(x, p);
    out.reward = out.terminal ? 0.0 : -1.0;
    return out;
}

StepOutcome acrobot_step(const EnvState& s, int action, const AcrobotParams& p) {
    check_action(action);
    return acrobot_step_torque(s, action == 1 ? p.torque_magnitude : -p.torque_magnitude, p);
}

EnvState reset(Domain domain, Rng& rng) {
    const double half_width = domain == Domain::cartpole ? 0.05 : 0.1;
    EnvState s;
    for (double& v : s) v = uniform(rng, -half_width, half_width);
    return s;
}

EnvState reset(Domain domain, std::uint64_t seed) {
    Rng rng(seed);
    return reset(domain, rng);
}

}  // namespace ropi

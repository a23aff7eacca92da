#include "ropi/experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ropi/errors.hpp"

namespace ropi {

using nlohmann::json;

std::string_view to_string(AgentMode mode) {
    switch (mode) {
        case AgentMode::flat: return "flat";
        case AgentMode::asap: return "asap";
        case AgentMode::asap_robust: return "asap-robust";
        case AgentMode::dqn: return "dqn";
        case AgentMode::odqn: return "odqn";
        case AgentMode::rodqn: return "rodqn";
    }
    return "unknown";
}

AgentMode parse_agent_mode(const std::string& name) {
    for (AgentMode m : {AgentMode::flat, AgentMode::asap, AgentMode::asap_robust, AgentMode::dqn, AgentMode::odqn,
                        AgentMode::rodqn})
        if (name == to_string(m)) return m;
    throw ConfigError("unknown mode '" + name + "' (expected flat, asap, asap-robust, dqn, odqn or rodqn)", "mode");
}

bool is_linear(AgentMode mode) {
    return mode == AgentMode::flat || mode == AgentMode::asap || mode == AgentMode::asap_robust;
}

DqnMode dqn_mode(AgentMode mode) {
    switch (mode) {
        case AgentMode::dqn: return DqnMode::single_head;
        case AgentMode::odqn: return DqnMode::option_heads;
        case AgentMode::rodqn: return DqnMode::robust_option_heads;
        default: throw ContractViolation("dqn_mode: '" + std::string(to_string(mode)) + "' is not a DQN mode");
    }
}

namespace {

bool robust_mode(AgentMode mode) { return mode == AgentMode::asap_robust || mode == AgentMode::rodqn; }

std::size_t idx(Domain d) { return static_cast<std::size_t>(d); }

// Reads one JSON object, recording which keys were consumed so leftovers can be reported.
class Section {
public:
    Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
        if (!doc_.is_object()) throw ConfigError("expected an object", path_.empty() ? "<root>" : path_);
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    bool has(const std::string& key) const { return doc_.contains(key) && !doc_.at(key).is_null(); }

    const json* take(const std::string& key) {
        seen_.insert(key);
        if (!has(key)) return nullptr;
        return &doc_.at(key);
    }

    Section child(const std::string& key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Section(has(key) ? doc_.at(key) : empty, field(key));
    }

    void number(const std::string& key, double& out) {
        if (const json* v = take(key)) {
            if (!v->is_number()) throw ConfigError("expected a number", field(key));
            out = v->get<double>();
        }
    }

    template <class Int>
    void integer(const std::string& key, Int& out) {
        if (const json* v = take(key)) {
            if (!v->is_number_integer()) throw ConfigError("expected an integer", field(key));
            if constexpr (std::is_unsigned_v<Int>) {
                if (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)
                    throw ConfigError("expected a non-negative integer", field(key));
                out = static_cast<Int>(v->get<std::uint64_t>());
            } else {
                out = static_cast<Int>(v->get<std::int64_t>());
            }
        }
    }

    void boolean(const std::string& key, bool& out) {
        if (const json* v = take(key)) {
            if (!v->is_boolean()) throw ConfigError("expected true or false", field(key));
            out = v->get<bool>();
        }
    }

    void string(const std::string& key, std::string& out) {
        if (const json* v = take(key)) {
            if (!v->is_string()) throw ConfigError("expected a string", field(key));
            out = v->get<std::string>();
        }
    }

    void numbers(const std::string& key, std::vector<double>& out) {
        if (const json* v = take(key)) {
            if (!v->is_array()) throw ConfigError("expected an array of numbers", field(key));
            out.clear();
            for (const json& e : *v) {
                if (!e.is_number()) throw ConfigError("expected an array of numbers", field(key));
                out.push_back(e.get<double>());
            }
        }
    }

    void integers(const std::string& key, std::vector<int>& out) {
        if (const json* v = take(key)) {
            if (!v->is_array()) throw ConfigError("expected an array of integers", field(key));
            out.clear();
            for (const json& e : *v) {
                if (!e.is_number_integer()) throw ConfigError("expected an array of integers", field(key));
                out.push_back(e.get<int>());
            }
        }
    }

    void finish() const {
        for (const auto& [key, value] : doc_.items())
            if (!seen_.count(key)) throw ConfigError("unknown field", field(key));
    }

private:
    const json& doc_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class F>
auto config_field(const std::string& field, F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        if (e.field().rfind(field, 0) == 0) throw;
        throw ConfigError(e.what(), e.field().empty() ? field : field + "." + e.field());
    }
}

void read_cartpole(Section s, CartPoleParams& p) {
    s.number("pole_length", p.pole_length);
    s.number("pole_mass", p.pole_mass);
    s.number("cart_mass", p.cart_mass);
    s.number("gravity", p.gravity);
    s.number("force_magnitude", p.force_magnitude);
    s.number("dt", p.dt);
    s.number("angle_limit", p.angle_limit);
    s.number("position_limit", p.position_limit);
    s.integer("max_steps", p.max_steps);
    s.finish();
}

void read_acrobot(Section s, AcrobotParams& p) {
    s.number("link1_mass", p.link1_mass);
    s.number("link2_mass", p.link2_mass);
    s.number("link1_length", p.link1_length);
    s.number("link2_length", p.link2_length);
    s.number("link_moi", p.link_moi);
    s.number("gravity", p.gravity);
    s.number("dt", p.dt);
    s.integer("substeps", p.substeps);
    s.number("torque_magnitude", p.torque_magnitude);
    s.number("max_vel1", p.max_vel1);
    s.number("max_vel2", p.max_vel2);
    s.number("goal_height", p.goal_height);
    s.integer("max_steps", p.max_steps);
    s.finish();
}

void read_uncertainty(Section s, UncertaintyConfig& u) {
    s.number("nominal", u.spec.nominal_value);
    s.integer("n", u.spec.n);
    s.number("lo", u.spec.lo);
    s.number("hi", u.spec.hi);
    double v = 0.0;
    if (s.has("mean")) {
        s.number("mean", v);
        u.spec.mean = v;
    } else {
        s.take("mean");
    }
    if (s.has("stddev")) {
        s.number("stddev", v);
        u.spec.stddev = v;
    } else {
        s.take("stddev");
    }
    s.integer("seed", u.spec.seed);
    if (s.has("values")) {
        std::vector<double> values;
        s.numbers("values", values);
        u.values = std::move(values);
    } else {
        s.take("values");
    }
    s.integer("nominal_index", u.nominal_index);
    s.finish();
}

void read_tiling(Section s, TilingSpec& t) {
    s.integers("bins", t.bins);
    if (const json* r = s.take("ranges")) {
        if (!r->is_array()) throw ConfigError("expected an array of [lo, hi] pairs", s.field("ranges"));
        t.ranges.clear();
        for (const json& pair : *r) {
            if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number())
                throw ConfigError("expected an array of [lo, hi] pairs", s.field("ranges"));
            t.ranges.emplace_back(pair[0].get<double>(), pair[1].get<double>());
        }
    }
    std::string coding = t.coding == TileCoding::concatenated ? "concatenated" : "cross_product";
    s.string("coding", coding);
    if (coding == "concatenated") {
        t.coding = TileCoding::concatenated;
    } else if (coding == "cross_product") {
        t.coding = TileCoding::cross_product;
    } else {
        throw ConfigError("expected concatenated or cross_product", s.field("coding"));
    }
    s.finish();
}

void read_online(Section s, OnlineAcConfig& c) {
    s.number("discount", c.discount);
    s.number("actor_step", c.actor_step);
    s.number("critic_step", c.critic_step);
    s.integer("episodes", c.episodes);
    s.number("divergence_bound", c.divergence_bound);
    s.finish();
}

void read_ropi(Section s, RopiConfig& c) {
    s.number("discount", c.discount);
    s.number("actor_step", c.actor_step);
    std::string schedule = c.schedule == StepSchedule::constant ? "constant" : "inverse_t";
    s.string("schedule", schedule);
    if (schedule == "constant") {
        c.schedule = StepSchedule::constant;
    } else if (schedule == "inverse_t") {
        c.schedule = StepSchedule::inverse_t;
    } else {
        throw ConfigError("expected constant or inverse_t", s.field("schedule"));
    }
    std::string critic = c.critic_mode == CriticMode::batch_rpvi ? "batch_rpvi" : "online_td";
    s.string("critic", critic);
    if (critic == "batch_rpvi") {
        c.critic_mode = CriticMode::batch_rpvi;
    } else if (critic == "online_td") {
        c.critic_mode = CriticMode::online_td;
    } else {
        throw ConfigError("expected batch_rpvi or online_td", s.field("critic"));
    }
    s.number("critic_step", c.critic_step);
    s.integer("critic_sweeps", c.critic_sweeps);
    s.integer("episodes_per_iteration", c.episodes_per_iteration);
    s.number("tolerance", c.tolerance);
    s.integer("max_iterations", c.max_iterations);
    s.number("critic_tolerance", c.critic_tolerance);
    s.integer("critic_max_iterations", c.critic_max_iterations);
    s.boolean("baseline", c.baseline);
    s.number("divergence_bound", c.divergence_bound);
    s.finish();
}

void read_dqn(Section s, DqnConfig& c) {
    s.integer("episodes", c.episodes);
    s.integer("replay_capacity", c.replay_capacity);
    s.integer("batch_size", c.batch_size);
    s.integer("learning_starts", c.learning_starts);
    s.integer("target_sync", c.target_sync);
    s.number("epsilon_start", c.epsilon_start);
    s.number("epsilon_end", c.epsilon_end);
    s.integer("epsilon_decay_steps", c.epsilon_decay_steps);
    s.number("discount", c.discount);
    s.number("step_size", c.adam.step_size);
    s.number("beta1", c.adam.beta1);
    s.number("beta2", c.adam.beta2);
    s.number("adam_epsilon", c.adam.epsilon);
    s.integers("hidden", c.hidden);
    std::string encoding(to_string(c.encoding));
    s.string("input_encoding", encoding);
    c.encoding = parse_input_encoding(encoding);
    s.number("divergence_loss", c.divergence_loss);
    s.integer("divergence_patience", c.divergence_patience);
    s.boolean("stop_when_solved", c.stop_when_solved);
    s.integer("solved_window", c.solved_window);
    s.number("cartpole_solved", c.cartpole_solved);
    s.number("acrobot_solved", c.acrobot_solved);
    s.finish();
}

json cartpole_json(const CartPoleParams& p) {
    return {{"pole_length", p.pole_length}, {"pole_mass", p.pole_mass}, {"cart_mass", p.cart_mass},
            {"gravity", p.gravity}, {"force_magnitude", p.force_magnitude}, {"dt", p.dt},
            {"angle_limit", p.angle_limit}, {"position_limit", p.position_limit}, {"max_steps", p.max_steps}};
}

json acrobot_json(const AcrobotParams& p) {
    return {{"link1_mass", p.link1_mass}, {"link2_mass", p.link2_mass}, {"link1_length", p.link1_length},
            {"link2_length", p.link2_length}, {"link_moi", p.link_moi}, {"gravity", p.gravity}, {"dt", p.dt},
            {"substeps", p.substeps}, {"torque_magnitude", p.torque_magnitude}, {"max_vel1", p.max_vel1},
            {"max_vel2", p.max_vel2}, {"goal_height", p.goal_height}, {"max_steps", p.max_steps}};
}

json uncertainty_json(const UncertaintyConfig& u, const UncertaintySet& set) {
    return {{"nominal", u.spec.nominal_value}, {"n", u.spec.n}, {"lo", u.spec.lo}, {"hi", u.spec.hi},
            {"mean", u.spec.resolved_mean()}, {"stddev", u.spec.resolved_stddev()}, {"seed", u.spec.seed},
            {"values", set.parameter_values()}, {"nominal_index", set.nominal_index()}};
}

json tiling_json(const TilingSpec& t) {
    json ranges = json::array();
    for (const auto& [lo, hi] : t.ranges) ranges.push_back({lo, hi});
    return {{"bins", t.bins}, {"ranges", ranges},
            {"coding", t.coding == TileCoding::concatenated ? "concatenated" : "cross_product"}};
}

}  // namespace

UncertaintySet UncertaintyConfig::build(const CartPoleParams& cartpole, const AcrobotParams& acrobot) const {
    if (values) {
        if (values->empty()) throw ConfigError("at least one value is required", "values");
        std::vector<TransitionModel> models;
        for (std::size_t i = 0; i < values->size(); ++i)
            models.push_back(make_model(spec.domain, (*values)[i], i, cartpole, acrobot));
        return UncertaintySet(std::move(models), nominal_index);
    }
    UncertaintySpec s = spec;
    s.cartpole_base = cartpole;
    s.acrobot_base = acrobot;
    return sample_uncertainty_set(s);
}

UncertaintySet ExperimentConfig::uncertainty_set(Domain d) const {
    return config_field("uncertainty." + std::string(to_string(d)),
                        [&] { return uncertainty_for(d).build(cartpole, acrobot); });
}

SweepGrid ExperimentConfig::sweep_grid(Domain d) const {
    SweepGrid grid = default_sweep_grid(d, sweep.seed);
    if (!sweep.values[idx(d)].empty()) grid.values = sweep.values[idx(d)];
    grid.episodes = sweep.episodes;
    grid.cartpole_base = cartpole;
    grid.acrobot_base = acrobot;
    return grid;
}

void ExperimentConfig::apply_seed(std::uint64_t new_seed) {
    seed = new_seed;
    online.seed = new_seed;
    ropi.seed = new_seed;
    dqn.seed = new_seed;
}

void ExperimentConfig::validate() const {
    if (domains.empty()) throw ConfigError("at least one domain is required", "domains");
    if (is_linear(mode) && domains.size() != 1)
        throw ConfigError("linear modes train on exactly one domain", "domains");
    for (std::size_t i = 0; i < domains.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (domains[i] == domains[j]) throw ConfigError("duplicate domain", "domains");
    config_field("physics.cartpole", [&] { cartpole.validate(); });
    config_field("physics.acrobot", [&] { acrobot.validate(); });
    for (Domain d : domains) {
        const std::string name(to_string(d));
        config_field("uncertainty." + name, [&] {
            if (!uncertainty_for(d).values) uncertainty_for(d).spec.validate();
        });
        uncertainty_set(d);
        config_field("features." + name, [&] {
            const TilingSpec& t = tiling[idx(d)];
            t.validate();
        });
    }
    if (is_linear(mode)) {
        if (mode != AgentMode::flat && asap.hyperplanes < 1)
            throw ConfigError("must be at least 1 for ASAP modes", "asap.hyperplanes");
        if (asap.hyperplanes < 0 || asap.hyperplanes > 16) throw ConfigError("must lie in [0, 16]", "asap.hyperplanes");
        if (!(asap.temperature > 0.0)) throw ConfigError("must be positive", "asap.temperature");
        if (asap.feature_map.scale.size() != kStateDim)
            throw ConfigError("expected " + std::to_string(kStateDim) + " entries", "asap.feature_scale");
        if (!(asap.init_stddev >= 0.0)) throw ConfigError("must be non-negative", "asap.init_stddev");
        config_field("linear", [&] {
            online.validate();
            ropi.validate();
        });
    } else {
        config_field("dqn", [&] { dqn.validate(); });
    }
    if (sweep.episodes < 1) throw ConfigError("must be at least 1", "sweep.episodes");
    if (sweep.threads < 1) throw ConfigError("must be at least 1", "sweep.threads");
    for (Domain d : {Domain::cartpole, Domain::acrobot})
        config_field("sweep", [&] { sweep_grid(d).validate(); });
}

ExperimentConfig default_config(AgentMode mode, std::uint64_t seed) {
    ExperimentConfig c;
    c.mode = mode;
    c.domains = is_linear(mode) ? std::vector<Domain>{Domain::cartpole}
                                : std::vector<Domain>{Domain::cartpole, Domain::acrobot};
    c.output_dir = "runs/" + std::string(to_string(mode));
    for (Domain d : {Domain::cartpole, Domain::acrobot}) {
        c.uncertainty[idx(d)].spec = default_uncertainty_spec(d, 0);
        c.tiling[idx(d)] = default_tiling(d, c.cartpole, c.acrobot);
    }
    c.asap.hyperplanes = mode == AgentMode::flat ? 0 : 1;
    // Pole angle in units of 0.1 rad so that no hyperplane coordinate dominates the score.
    c.asap.feature_map.scale = {1.0, 1.0, 10.0, 1.0};
    c.apply_seed(seed);
    return c;
}

ExperimentConfig parse_config(const json& doc) {
    Section root(doc, "");
    if (!root.has("mode")) throw ConfigError("required field is missing", "mode");
    if (!root.has("seed")) throw ConfigError("required field is missing", "seed");
    std::string mode_name;
    root.string("mode", mode_name);
    std::uint64_t seed = 0;
    root.integer("seed", seed);
    ExperimentConfig c = default_config(parse_agent_mode(mode_name), seed);

    if (root.has("domain") && root.has("domains")) throw ConfigError("give either domain or domains", "domain");
    if (root.has("domain")) {
        std::string d;
        root.string("domain", d);
        c.domains = {config_field("domain", [&] { return parse_domain(d); })};
    } else {
        root.take("domain");
    }
    if (const json* ds = root.take("domains")) {
        if (!ds->is_array()) throw ConfigError("expected an array of domain names", "domains");
        c.domains.clear();
        for (const json& d : *ds) {
            if (!d.is_string()) throw ConfigError("expected an array of domain names", "domains");
            c.domains.push_back(config_field("domains", [&] { return parse_domain(d.get<std::string>()); }));
        }
    }
    root.string("output_dir", c.output_dir);

    {
        Section physics = root.child("physics");
        read_cartpole(physics.child("cartpole"), c.cartpole);
        read_acrobot(physics.child("acrobot"), c.acrobot);
        physics.finish();
    }
    // Feature ranges default to the (possibly overridden) physics limits.
    c.tiling[idx(Domain::cartpole)] = default_tiling(Domain::cartpole, c.cartpole, c.acrobot);
    c.tiling[idx(Domain::acrobot)] = default_tiling(Domain::acrobot, c.cartpole, c.acrobot);
    {
        Section u = root.child("uncertainty");
        read_uncertainty(u.child("cartpole"), c.uncertainty[idx(Domain::cartpole)]);
        read_uncertainty(u.child("acrobot"), c.uncertainty[idx(Domain::acrobot)]);
        u.finish();
    }
    {
        Section f = root.child("features");
        read_tiling(f.child("cartpole"), c.tiling[idx(Domain::cartpole)]);
        read_tiling(f.child("acrobot"), c.tiling[idx(Domain::acrobot)]);
        f.finish();
    }
    {
        Section a = root.child("asap");
        a.integer("hyperplanes", c.asap.hyperplanes);
        a.number("temperature", c.asap.temperature);
        a.numbers("feature_scale", c.asap.feature_map.scale);
        a.boolean("feature_bias", c.asap.feature_map.bias);
        a.number("init_stddev", c.asap.init_stddev);
        a.finish();
    }
    {
        Section l = root.child("linear");
        std::string algorithm = c.algorithm == LinearAlgorithm::online ? "online" : "batch";
        l.string("algorithm", algorithm);
        if (algorithm == "online") {
            c.algorithm = LinearAlgorithm::online;
        } else if (algorithm == "batch") {
            c.algorithm = LinearAlgorithm::batch;
        } else {
            throw ConfigError("expected online or batch", "linear.algorithm");
        }
        read_online(l.child("online"), c.online);
        read_ropi(l.child("ropi"), c.ropi);
        l.finish();
    }
    read_dqn(root.child("dqn"), c.dqn);
    {
        Section s = root.child("sweep");
        s.integer("episodes", c.sweep.episodes);
        s.integer("seed", c.sweep.seed);
        s.integer("threads", c.sweep.threads);
        s.numbers("cartpole_values", c.sweep.values[idx(Domain::cartpole)]);
        s.numbers("acrobot_values", c.sweep.values[idx(Domain::acrobot)]);
        s.finish();
    }
    root.finish();

    c.apply_seed(seed);
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path);
    json doc;
    try {
        doc = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("not valid JSON: ") + e.what(), "<root>");
    }
    return parse_config(doc);
}

json to_json(const ExperimentConfig& c) {
    json doc;
    doc["mode"] = std::string(to_string(c.mode));
    doc["seed"] = c.seed;
    doc["domains"] = json::array();
    for (Domain d : c.domains) doc["domains"].push_back(std::string(to_string(d)));
    doc["output_dir"] = c.output_dir;
    doc["physics"] = {{"cartpole", cartpole_json(c.cartpole)}, {"acrobot", acrobot_json(c.acrobot)}};
    doc["uncertainty"] = json::object();
    doc["features"] = json::object();
    for (Domain d : {Domain::cartpole, Domain::acrobot}) {
        const std::string name(to_string(d));
        doc["uncertainty"][name] = uncertainty_json(c.uncertainty_for(d), c.uncertainty_set(d));
        doc["features"][name] = tiling_json(c.tiling[idx(d)]);
    }
    doc["asap"] = {{"hyperplanes", c.asap.hyperplanes},
                   {"temperature", c.asap.temperature},
                   {"feature_scale", c.asap.feature_map.scale},
                   {"feature_bias", c.asap.feature_map.bias},
                   {"init_stddev", c.asap.init_stddev}};
    doc["linear"] = {
        {"algorithm", c.algorithm == LinearAlgorithm::online ? "online" : "batch"},
        {"online",
         {{"discount", c.online.discount},
          {"actor_step", c.online.actor_step},
          {"critic_step", c.online.critic_step},
          {"episodes", c.online.episodes},
          {"divergence_bound", c.online.divergence_bound}}},
        {"ropi",
         {{"discount", c.ropi.discount},
          {"actor_step", c.ropi.actor_step},
          {"schedule", c.ropi.schedule == StepSchedule::constant ? "constant" : "inverse_t"},
          {"critic", c.ropi.critic_mode == CriticMode::batch_rpvi ? "batch_rpvi" : "online_td"},
          {"critic_step", c.ropi.critic_step},
          {"critic_sweeps", c.ropi.critic_sweeps},
          {"episodes_per_iteration", c.ropi.episodes_per_iteration},
          {"tolerance", c.ropi.tolerance},
          {"max_iterations", c.ropi.max_iterations},
          {"critic_tolerance", c.ropi.critic_tolerance},
          {"critic_max_iterations", c.ropi.critic_max_iterations},
          {"baseline", c.ropi.baseline},
          {"divergence_bound", c.ropi.divergence_bound}}}};
    doc["dqn"] = {{"episodes", c.dqn.episodes},
                  {"replay_capacity", c.dqn.replay_capacity},
                  {"batch_size", c.dqn.batch_size},
                  {"learning_starts", c.dqn.learning_starts},
                  {"target_sync", c.dqn.target_sync},
                  {"epsilon_start", c.dqn.epsilon_start},
                  {"epsilon_end", c.dqn.epsilon_end},
                  {"epsilon_decay_steps", c.dqn.epsilon_decay_steps},
                  {"discount", c.dqn.discount},
                  {"step_size", c.dqn.adam.step_size},
                  {"beta1", c.dqn.adam.beta1},
                  {"beta2", c.dqn.adam.beta2},
                  {"adam_epsilon", c.dqn.adam.epsilon},
                  {"hidden", c.dqn.hidden},
                  {"input_encoding", std::string(to_string(c.dqn.encoding))},
                  {"divergence_loss", c.dqn.divergence_loss},
                  {"divergence_patience", c.dqn.divergence_patience},
                  {"stop_when_solved", c.dqn.stop_when_solved},
                  {"solved_window", c.dqn.solved_window},
                  {"cartpole_solved", c.dqn.cartpole_solved},
                  {"acrobot_solved", c.dqn.acrobot_solved}};
    doc["sweep"] = {{"episodes", c.sweep.episodes},
                    {"seed", c.sweep.seed},
                    {"threads", c.sweep.threads},
                    {"cartpole_values", c.sweep_grid(Domain::cartpole).values},
                    {"acrobot_values", c.sweep_grid(Domain::acrobot).values}};
    return doc;
}

std::string config_hash(const ExperimentConfig& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_json(config).dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Checkpoints ---------------------------------------------------------------

int DqnCheckpoint::head_for(Domain domain) const {
    for (std::size_t i = 0; i < tasks.size(); ++i)
        if (tasks[i] == domain) return mode == AgentMode::dqn ? 0 : static_cast<int>(i);
    throw ContractViolation("checkpoint was not trained on " + std::string(to_string(domain)));
}

AgentMode checkpoint_mode(const Checkpoint& checkpoint) {
    return std::visit([](const auto& c) { return c.mode; }, checkpoint);
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    json doc = {{"format", "ropi-checkpoint"}, {"version", kCheckpointVersion}};
    if (const auto* lin = std::get_if<LinearCheckpoint>(&checkpoint)) {
        const AsapPolicy& p = lin->policy;
        doc["kind"] = "asap";
        doc["mode"] = std::string(to_string(lin->mode));
        doc["domain"] = std::string(to_string(lin->domain));
        doc["policy"] = {{"hyperplanes", p.hyperplanes()},
                         {"num_actions", p.num_actions()},
                         {"temperature", p.temperature()},
                         {"feature_scale", p.feature_map().scale},
                         {"feature_bias", p.feature_map().bias},
                         {"parameters", std::vector<double>(p.parameters().begin(), p.parameters().end())}};
        doc["critic"] = {{"w", std::vector<double>(lin->critic.w.begin(), lin->critic.w.end())}};
    } else {
        const auto& dq = std::get<DqnCheckpoint>(checkpoint);
        const NetworkShape& s = dq.network.shape();
        doc["kind"] = "qnetwork";
        doc["mode"] = std::string(to_string(dq.mode));
        doc["tasks"] = json::array();
        for (Domain d : dq.tasks) doc["tasks"].push_back(std::string(to_string(d)));
        doc["shape"] = {{"inputs", s.inputs},   {"hidden", s.hidden},
                        {"heads", s.heads},     {"actions", s.actions},
                        {"encoding", std::string(to_string(s.encoding))}};
        doc["layers"] = json::array();
        for (const DenseLayer& l : dq.network.layers())
            doc["layers"].push_back({{"inputs", l.inputs()},
                                     {"outputs", l.outputs()},
                                     {"parameters", std::vector<double>(l.parameters().begin(), l.parameters().end())}});
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out << doc.dump() << '\n';
    if (!out) throw IoError("failed writing checkpoint " + path);
}

namespace {

Eigen::VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read checkpoint " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw IoError(path + ": not a checkpoint (" + e.what() + ")");
    }
    try {
        if (doc.value("format", "") != "ropi-checkpoint") throw IoError(path + ": not a ropi checkpoint");
        if (doc.at("version").get<int>() != kCheckpointVersion)
            throw IoError(path + ": unsupported checkpoint version " + doc.at("version").dump());
        const std::string kind = doc.at("kind").get<std::string>();
        const AgentMode mode = parse_agent_mode(doc.at("mode").get<std::string>());
        if (kind == "asap") {
            if (!is_linear(mode)) throw IoError(path + ": mode does not match checkpoint kind");
            const json& p = doc.at("policy");
            HyperplaneFeatureMap fmap;
            fmap.scale = p.at("feature_scale").get<std::vector<double>>();
            fmap.bias = p.at("feature_bias").get<bool>();
            AsapPolicy policy(p.at("hyperplanes").get<int>(), p.at("num_actions").get<int>(), fmap,
                              p.at("temperature").get<double>());
            policy.set_parameters(to_vector(p.at("parameters").get<std::vector<double>>()));
            LinearCheckpoint c{mode, parse_domain(doc.at("domain").get<std::string>()), std::move(policy),
                               CriticParams{to_vector(doc.at("critic").at("w").get<std::vector<double>>())}};
            return c;
        }
        if (kind == "qnetwork") {
            if (is_linear(mode)) throw IoError(path + ": mode does not match checkpoint kind");
            const json& s = doc.at("shape");
            NetworkShape shape{s.at("inputs").get<int>(), s.at("hidden").get<std::vector<int>>(),
                               s.at("heads").get<int>(), s.at("actions").get<int>(),
                               parse_input_encoding(s.at("encoding").get<std::string>())};
            std::vector<DenseLayer> layers;
            for (const json& l : doc.at("layers")) {
                DenseLayer layer(l.at("inputs").get<int>(), l.at("outputs").get<int>());
                const auto params = l.at("parameters").get<std::vector<double>>();
                if (static_cast<Eigen::Index>(params.size()) != layer.parameters().size())
                    throw IoError(path + ": layer parameter count does not match its shape");
                layer.parameters() = to_vector(params);
                layers.push_back(std::move(layer));
            }
            DqnCheckpoint c;
            c.mode = mode;
            for (const json& t : doc.at("tasks")) c.tasks.push_back(parse_domain(t.get<std::string>()));
            c.network = QNetwork(shape, std::move(layers));
            return c;
        }
        throw IoError(path + ": unknown checkpoint kind '" + kind + "'");
    } catch (const json::exception& e) {
        throw IoError(path + ": malformed checkpoint (" + e.what() + ")");
    } catch (const ConfigError& e) {
        throw IoError(path + ": malformed checkpoint (" + e.what() + ")");
    } catch (const ContractViolation& e) {
        throw IoError(path + ": malformed checkpoint (" + e.what() + ")");
    }
}

EvalPolicy evaluation_policy(const Checkpoint& checkpoint, Domain domain, const std::string& label) {
    if (const auto* lin = std::get_if<LinearCheckpoint>(&checkpoint)) {
        if (lin->domain != domain)
            throw ContractViolation("checkpoint was trained on " + std::string(to_string(lin->domain)) + ", not " +
                                    std::string(to_string(domain)));
        EvalPolicy p = stochastic_policy(std::make_shared<AsapPolicy>(lin->policy), label);
        p.domain = domain;
        return p;
    }
    const auto& dq = std::get<DqnCheckpoint>(checkpoint);
    return greedy_policy(std::make_shared<QNetwork>(dq.network), dq.head_for(domain), domain, label);
}

// Training ------------------------------------------------------------------

AsapPolicy make_linear_policy(const ExperimentConfig& config) {
    const int k = config.mode == AgentMode::flat ? 0 : config.asap.hyperplanes;
    AsapPolicy policy(k, kNumActions, config.asap.feature_map, config.asap.temperature);
    Rng rng(derive_seed(config.seed, 1));
    policy.initialize(rng, config.asap.init_stddev);
    return policy;
}

TrainingArtifacts run_training(const ExperimentConfig& config, const std::string& output_dir) {
    config.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(output_dir, ec);
    if (ec) throw IoError("cannot create output directory " + output_dir + ": " + ec.message());
    const fs::path dir(output_dir);

    TrainingArtifacts artifacts{"checkpoint.json", "training_log.csv", "resolved_config.json"};
    {
        std::ofstream out(dir / artifacts.resolved_config);
        if (!out) throw IoError("cannot write " + (dir / artifacts.resolved_config).string());
        out << to_json(config).dump(2) << '\n';
    }

    const bool robust = robust_mode(config.mode);
    if (is_linear(config.mode)) {
        const Domain domain = config.domains.front();
        const UncertaintySet full = config.uncertainty_set(domain);
        DynamicsProblem problem(robust ? full : full.nominal_only(), config.tiling[idx(domain)]);
        AsapPolicy policy = make_linear_policy(config);
        LinearCheckpoint checkpoint{config.mode, domain, policy, {}};
        if (config.algorithm == LinearAlgorithm::online) {
            OnlineAcConfig cfg = config.online;
            cfg.robust = robust;
            OnlineAcResult result = online_robust_ac(policy, problem, cfg);
            write_episode_log(result.log, (dir / artifacts.log).string());
            checkpoint.critic = result.critic;
        } else {
            RopiConfig cfg = config.ropi;
            cfg.robust = robust;
            RopiResult result = ropi(policy, problem, cfg);
            artifacts.log = "ropi_diagnostics.csv";
            write_ropi_diagnostics(result.history, (dir / artifacts.log).string());
            checkpoint.critic = result.critic;
        }
        checkpoint.policy = policy;
        save_checkpoint(checkpoint, (dir / artifacts.checkpoint).string());
    } else {
        std::vector<DqnTask> tasks;
        for (Domain d : config.domains) tasks.push_back({d, config.uncertainty_set(d)});
        DqnResult result = train_multitask_dqn(config.dqn, tasks, dqn_mode(config.mode));
        write_dqn_log(result.log, result.tasks, (dir / artifacts.log).string());
        DqnCheckpoint checkpoint{config.mode, result.tasks, std::move(result.network)};
        save_checkpoint(checkpoint, (dir / artifacts.checkpoint).string());
    }
    return artifacts;
}

}  // namespace ropi

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "semppl/error.hpp"
#include "semppl/ndgrad.hpp"
#include "semppl/rng.hpp"

namespace semppl::nets {

using ndgrad::Mode;
using ndgrad::Tensor;

/// Two-layer perceptron: linear -> [batch norm] -> rectifier -> linear.
struct MlpSpec {
    std::size_t input = 1;
    std::size_t hidden = 1;
    std::size_t output = 1;
    bool use_batch_norm = true;

    void validate(const std::string& name) const {
        if (input < 1 || hidden < 1 || output < 1) throw SpecError(name + ": all layer sizes must be >= 1");
    }
};

struct ParamFlags {
    bool is_bias = false;
    bool is_batch_norm = false;
};

struct MlpParams {
    Tensor w1, b1, bn_scale, bn_shift, w2, b2;
    ndgrad::BatchNormState bn;
    bool use_batch_norm = true;
};

/// Named view of one parameter tensor.
struct ParamRef {
    std::string name;
    Tensor* value;
    ParamFlags flags;
};

/// Online encoder/projector/predictor plus the EMA target encoder/projector.
struct NetworkPair {
    MlpSpec encoder_spec, projector_spec, predictor_spec;
    MlpParams encoder, projector, predictor;
    MlpParams target_encoder, target_projector;
    double ema_rate = 0.996;
};

namespace detail {

inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, CounterRng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> w(fan_in * fan_out);
    for (double& x : w) x = rng.uniform(-limit, limit);
    return Tensor::matrix(fan_in, fan_out, std::move(w));
}

inline MlpParams init_mlp(const MlpSpec& spec, CounterRng& rng) {
    MlpParams p;
    p.w1 = glorot_uniform(spec.input, spec.hidden, rng);
    p.b1 = Tensor::zeros({spec.hidden});
    p.bn_scale = Tensor::filled({spec.hidden}, 1.0);
    p.bn_shift = Tensor::zeros({spec.hidden});
    p.w2 = glorot_uniform(spec.hidden, spec.output, rng);
    p.b2 = Tensor::zeros({spec.output});
    p.bn = ndgrad::BatchNormState::identity(spec.hidden);
    p.use_batch_norm = spec.use_batch_norm;
    return p;
}

template <typename Params, typename Fn>
void for_each_mlp_param(Params& p, const std::string& prefix, Fn&& fn) {
    fn(prefix + ".l1.weight", p.w1, ParamFlags{false, false});
    fn(prefix + ".l1.bias", p.b1, ParamFlags{true, false});
    if (p.use_batch_norm) {
        fn(prefix + ".bn.scale", p.bn_scale, ParamFlags{false, true});
        fn(prefix + ".bn.shift", p.bn_shift, ParamFlags{false, true});
    }
    fn(prefix + ".l2.weight", p.w2, ParamFlags{false, false});
    fn(prefix + ".l2.bias", p.b2, ParamFlags{true, false});
}

}  // namespace detail

inline NetworkPair build_networks(const MlpSpec& encoder, const MlpSpec& projector, const MlpSpec& predictor,
                                  std::uint64_t seed, double ema_rate = 0.996) {
    encoder.validate("encoder");
    projector.validate("projector");
    predictor.validate("predictor");
    if (projector.input != encoder.output) {
        throw SpecError("projector input " + std::to_string(projector.input) + " != encoder output " +
                        std::to_string(encoder.output));
    }
    if (predictor.input != projector.output) {
        throw SpecError("predictor input " + std::to_string(predictor.input) + " != projector output " +
                        std::to_string(projector.output));
    }
    if (predictor.output != projector.output) {
        throw SpecError("predictor output " + std::to_string(predictor.output) +
                        " must match projector output " + std::to_string(projector.output));
    }
    if (!(ema_rate >= 0.0 && ema_rate <= 1.0)) throw SpecError("ema rate must lie in [0, 1]");

    CounterRng rng = make_stream(seed, StreamPurpose::network_init);
    NetworkPair pair;
    pair.encoder_spec = encoder;
    pair.projector_spec = projector;
    pair.predictor_spec = predictor;
    pair.encoder = detail::init_mlp(encoder, rng);
    pair.projector = detail::init_mlp(projector, rng);
    pair.predictor = detail::init_mlp(predictor, rng);
    pair.target_encoder = pair.encoder;
    pair.target_projector = pair.projector;
    pair.ema_rate = ema_rate;
    return pair;
}

/// Trainable parameters in a fixed order (encoder, projector, predictor).
inline std::vector<ParamRef> online_parameters(NetworkPair& pair) {
    std::vector<ParamRef> out;
    auto add = [&](const std::string& name, Tensor& t, ParamFlags flags) { out.push_back({name, &t, flags}); };
    detail::for_each_mlp_param(pair.encoder, "online.encoder", add);
    detail::for_each_mlp_param(pair.projector, "online.projector", add);
    detail::for_each_mlp_param(pair.predictor, "online.predictor", add);
    return out;
}

inline std::vector<ParamRef> target_parameters(NetworkPair& pair) {
    std::vector<ParamRef> out;
    auto add = [&](const std::string& name, Tensor& t, ParamFlags flags) { out.push_back({name, &t, flags}); };
    detail::for_each_mlp_param(pair.target_encoder, "target.encoder", add);
    detail::for_each_mlp_param(pair.target_projector, "target.projector", add);
    return out;
}

/// Parameters of one MLP as they enter a forward pass (tracked or constant).
struct MlpVars {
    Tensor w1, b1, bn_scale, bn_shift, w2, b2;
    ndgrad::BatchNormState* bn = nullptr;
    bool use_batch_norm = true;
};

/// The online networks bound for one forward/backward pass.
struct OnlineVars {
    MlpVars encoder, projector, predictor;
    /// Tape leaves in online_parameters() order; empty when bound as constants.
    std::vector<Tensor> leaves;
};

namespace detail {

inline MlpVars bind_mlp(MlpParams& p, ndgrad::Tape* tape, std::vector<Tensor>* leaves) {
    auto lift = [&](const Tensor& t) {
        if (!tape) return t;
        Tensor v = tape->variable(t);
        leaves->push_back(v);
        return v;
    };
    MlpVars v;
    v.w1 = lift(p.w1);
    v.b1 = lift(p.b1);
    if (p.use_batch_norm) {
        v.bn_scale = lift(p.bn_scale);
        v.bn_shift = lift(p.bn_shift);
    }
    v.w2 = lift(p.w2);
    v.b2 = lift(p.b2);
    v.bn = &p.bn;
    v.use_batch_norm = p.use_batch_norm;
    return v;
}

}  // namespace detail

/// Lifts the online parameters onto `tape` as gradient-receiving leaves.
inline OnlineVars bind_online(NetworkPair& pair, ndgrad::Tape& tape) {
    OnlineVars vars;
    vars.encoder = detail::bind_mlp(pair.encoder, &tape, &vars.leaves);
    vars.projector = detail::bind_mlp(pair.projector, &tape, &vars.leaves);
    vars.predictor = detail::bind_mlp(pair.predictor, &tape, &vars.leaves);
    return vars;
}

/// Online parameters as constants, e.g. for evaluation.
inline OnlineVars constant_online(NetworkPair& pair) {
    OnlineVars vars;
    vars.encoder = detail::bind_mlp(pair.encoder, nullptr, nullptr);
    vars.projector = detail::bind_mlp(pair.projector, nullptr, nullptr);
    vars.predictor = detail::bind_mlp(pair.predictor, nullptr, nullptr);
    return vars;
}

/// Train mode updates the running moments referenced by `v.bn` unless
/// `update_running` is false.
inline Tensor mlp_forward(const MlpVars& v, const Tensor& x, Mode mode, bool update_running = true) {
    Tensor h = ndgrad::add(ndgrad::matmul(x, v.w1), v.b1);
    if (v.use_batch_norm) {
        ndgrad::BatchNormState* state = mode == Mode::train && !update_running ? nullptr : v.bn;
        h = ndgrad::batch_norm(h, v.bn_scale, v.bn_shift, state, mode);
    }
    return ndgrad::add(ndgrad::matmul(ndgrad::relu(h), v.w2), v.b2);
}

/// Encoder output f(x).
inline Tensor encode(const OnlineVars& vars, const Tensor& x, Mode mode) {
    return mlp_forward(vars.encoder, x, mode);
}

/// l2-normalised h(g(f(x))).
inline Tensor forward_online(const OnlineVars& vars, const Tensor& x, Mode mode) {
    const Tensor z = mlp_forward(vars.encoder, x, mode);
    return ndgrad::l2_normalize(mlp_forward(vars.predictor, mlp_forward(vars.projector, z, mode), mode));
}

/// l2-normalised g_t(f_t(x)); never tracked, never mutates running moments.
inline Tensor forward_target(const NetworkPair& pair, const Tensor& x, Mode mode) {
    ndgrad::BatchNormState enc_bn = pair.target_encoder.bn, proj_bn = pair.target_projector.bn;
    auto as_vars = [](const MlpParams& p, ndgrad::BatchNormState* bn) {
        return MlpVars{p.w1, p.b1, p.bn_scale, p.bn_shift, p.w2, p.b2, bn, p.use_batch_norm};
    };
    const Tensor z = mlp_forward(as_vars(pair.target_encoder, &enc_bn), x.detach(), mode, false);
    return ndgrad::l2_normalize(mlp_forward(as_vars(pair.target_projector, &proj_bn), z, mode, false));
}

namespace detail {

inline Tensor ema_blend(const Tensor& target, const Tensor& online, double rate) {
    std::vector<double> out(target.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = rate * target[i] + (1.0 - rate) * online[i];
    return Tensor(target.shape(), std::move(out));
}

inline void ema_blend(std::vector<double>& target, const std::vector<double>& online, double rate) {
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = rate * target[i] + (1.0 - rate) * online[i];
}

inline void ema_mlp(MlpParams& target, const MlpParams& online, double rate) {
    target.w1 = ema_blend(target.w1, online.w1, rate);
    target.b1 = ema_blend(target.b1, online.b1, rate);
    target.bn_scale = ema_blend(target.bn_scale, online.bn_scale, rate);
    target.bn_shift = ema_blend(target.bn_shift, online.bn_shift, rate);
    target.w2 = ema_blend(target.w2, online.w2, rate);
    target.b2 = ema_blend(target.b2, online.b2, rate);
    ema_blend(target.bn.running_mean, online.bn.running_mean, rate);
    ema_blend(target.bn.running_var, online.bn.running_var, rate);
}

}  // namespace detail

/// target <- rate * target + (1 - rate) * online, including batch-norm
/// running moments.
inline void ema_update(NetworkPair& pair) {
    detail::ema_mlp(pair.target_encoder, pair.encoder, pair.ema_rate);
    detail::ema_mlp(pair.target_projector, pair.projector, pair.ema_rate);
}

}  // namespace semppl::nets

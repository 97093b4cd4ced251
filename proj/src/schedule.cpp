#include "schedule.hpp"

#include <cmath>

namespace avldm {

double NoiseSchedule::beta_at(int t) const {
    check(t >= 1 && t <= T, "timestep out of range: t=" + std::to_string(t) + ", T=" + std::to_string(T));
    return beta[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_at(int t) const {
    check(t >= 0 && t <= T, "timestep out of range: t=" + std::to_string(t) + ", T=" + std::to_string(T));
    return t == 0 ? 1.0 : alpha_bar[static_cast<size_t>(t - 1)];
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    check(T >= 1, "schedule needs T >= 1");
    check(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end,
          "schedule needs 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int t = 0; t < T; t++) {
        double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / static_cast<double>(T - 1);
        s.beta[static_cast<size_t>(t)] = b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<size_t>(t)] = prod;
    }
    return s;
}

Tensor forward_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    check(z0.same_shape(eps), "forward_sample: eps shape " + shape_str(eps.shape) + " != z0 shape " + shape_str(z0.shape));
    const double ab = sched.alpha_bar_at(t);
    check(t >= 1, "forward_sample: t must be >= 1");
    const double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    Tensor out(z0.shape);
    for (int64_t i = 0; i < z0.numel(); i++) out[i] = c0 * z0[i] + c1 * eps[i];
    return out;
}

Tensor posterior_step(const Tensor& z_t, const Tensor& eps_pred, int t, const NoiseSchedule& sched, const Tensor& noise) {
    check(z_t.same_shape(eps_pred) && z_t.same_shape(noise), "posterior_step: shape mismatch");
    check(t >= 1, "posterior_step: t must be >= 1");
    const double beta = sched.beta_at(t);
    const double ab_t = sched.alpha_bar_at(t);
    const double ab_prev = sched.alpha_bar_at(t - 1);
    const double alpha = 1.0 - beta;
    // mu = (z_t - beta/sqrt(1-abar_t) * eps) / sqrt(alpha_t); at t=1 this is
    // exactly the x0-estimate since 1-abar_1 == beta_1.
    const double c_mu = 1.0 / std::sqrt(alpha);
    const double c_eps = beta / std::sqrt(1.0 - ab_t);
    const double post_var = t == 1 ? 0.0 : (1.0 - ab_prev) / (1.0 - ab_t) * beta;
    const double c_noise = std::sqrt(post_var);
    Tensor out(z_t.shape);
    for (int64_t i = 0; i < z_t.numel(); i++)
        out[i] = c_mu * (z_t[i] - c_eps * eps_pred[i]) + c_noise * noise[i];
    return out;
}

Tensor ddim_step(const Tensor& z_t, const Tensor& eps_pred, int t, int t_prev, const NoiseSchedule& sched) {
    check(z_t.same_shape(eps_pred), "ddim_step: shape mismatch");
    check(t_prev < t, "ddim_step: t_prev must be < t");
    const double ab_t = sched.alpha_bar_at(t);
    const double ab_p = sched.alpha_bar_at(t_prev);
    const double c_x0 = 1.0 / std::sqrt(ab_t);
    const double c_e = std::sqrt(1.0 - ab_t);
    const double c0 = std::sqrt(ab_p), c1 = std::sqrt(1.0 - ab_p);
    Tensor out(z_t.shape);
    for (int64_t i = 0; i < z_t.numel(); i++) {
        double x0 = c_x0 * (z_t[i] - c_e * eps_pred[i]);
        out[i] = c0 * x0 + c1 * eps_pred[i];
    }
    return out;
}

std::vector<int> ddim_timesteps(const NoiseSchedule& sched, int steps) {
    check(steps >= 1 && steps <= sched.T, "ddim_timesteps: bad step count");
    std::vector<int> ts;
    if (steps == 1) {
        ts.push_back(sched.T);
        return ts;
    }
    for (int i = 0; i < steps; i++) {
        double pos = sched.T - (sched.T - 1) * static_cast<double>(i) / (steps - 1);
        int t = static_cast<int>(std::lround(pos));
        if (ts.empty() || ts.back() != t) ts.push_back(t);
    }
    return ts;  // descending, ends at 1
}

double noise_estimation_loss(const Tensor& eps_pred, const Tensor& eps_true) {
    check(eps_pred.same_shape(eps_true), "noise_estimation_loss: shape mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < eps_pred.numel(); i++) {
        double d = eps_pred[i] - eps_true[i];
        acc += d * d;
    }
    return acc / static_cast<double>(eps_pred.numel());
}

double multimodal_diffusion_loss(double loss_audio, double loss_video) {
    return loss_audio + loss_video;
}

}  // namespace avldm

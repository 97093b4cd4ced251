#pragma once

#include "tensor.hpp"

namespace avldm {

// Shared noise schedule for both modality streams. Timesteps are 1-based;
// t = 0 means clean data, with alpha_bar(0) == 1 by convention.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[t-1] = beta_t
    std::vector<double> alpha_bar;  // alpha_bar[t-1] = prod_{s<=t} (1 - beta_s)

    double beta_at(int t) const;       // t in [1, T]
    double alpha_bar_at(int t) const;  // t in [0, T]
};

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end);

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
Tensor forward_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

// One ancestral reverse step parameterized by predicted noise; fixed posterior
// variance. At t = 1 the noise term is suppressed and the result is the
// model's x0-estimate.
Tensor posterior_step(const Tensor& z_t, const Tensor& eps_pred, int t, const NoiseSchedule& sched, const Tensor& noise);

// Deterministic DDIM step (eta = 0) from t to t_prev < t (t_prev may be 0).
Tensor ddim_step(const Tensor& z_t, const Tensor& eps_pred, int t, int t_prev, const NoiseSchedule& sched);

// Descending timestep subset for few-step sampling: uniform stride over [1,T].
std::vector<int> ddim_timesteps(const NoiseSchedule& sched, int steps);

double noise_estimation_loss(const Tensor& eps_pred, const Tensor& eps_true);

// total two-stream loss: L_a + L_v at a shared timestep
double multimodal_diffusion_loss(double loss_audio, double loss_video);

}  // namespace avldm

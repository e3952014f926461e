#include "sardet/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace sardet {

NoiseSchedule NoiseSchedule::cosine(int T) {
  if (T < 1) throw ParameterError("NoiseSchedule: T must be >= 1, got " + std::to_string(T));
  const double s = 0.008;
  auto f = [&](double t) {
    const double x = ((t / T + s) / (1.0 + s)) * M_PI / 2.0;
    return std::cos(x) * std::cos(x);
  };
  NoiseSchedule out;
  out.steps = T;
  out.alpha.assign(T + 1, 0.0);
  out.alpha_bar.assign(T + 1, 1.0);
  const double f0 = f(0.0);
  double prev = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double raw = f(static_cast<double>(t)) / f0;
    double a = raw / prev;
    a = std::clamp(a, 0.001, 0.999);
    out.alpha[t] = a;
    out.alpha_bar[t] = out.alpha_bar[t - 1] * a;
    prev = raw;
  }
  return out;
}

namespace {

void check_t(int t, const NoiseSchedule& sched, const char* where) {
  if (t < 1 || t > sched.steps)
    throw ParameterError(std::string(where) + ": t=" + std::to_string(t) + " outside [1," +
                         std::to_string(sched.steps) + "]");
}

}  // namespace

BoxSetState q_sample(std::span<const float> z0, int n, int t, const NoiseSchedule& sched,
                     std::span<const float> eps) {
  check_t(t, sched, "q_sample");
  if (static_cast<int>(z0.size()) != 4 * n || eps.size() != z0.size())
    throw ParameterError("q_sample: z0/eps must both hold n*4 values");
  const double ab = sched.alpha_bar[t];
  const double cs = std::sqrt(ab);
  const double cn = std::sqrt(1.0 - ab);
  BoxSetState out;
  out.count = n;
  out.t = t;
  out.z.resize(z0.size());
  for (size_t i = 0; i < z0.size(); ++i)
    out.z[i] = static_cast<float>(cs * z0[i] + cn * eps[i]);
  return out;
}

void q_step_inplace(std::vector<float>& z, int t, const NoiseSchedule& sched, Rng& rng) {
  check_t(t, sched, "q_step_inplace");
  const double a = sched.alpha[t];
  const double cs = std::sqrt(a);
  const double cn = std::sqrt(1.0 - a);
  for (float& v : z) v = static_cast<float>(cs * v + cn * rng.normal());
}

BoxSetState ddim_step(const BoxSetState& state, std::span<const float> z0_hat, int t_next,
                      const NoiseSchedule& sched) {
  check_t(state.t, sched, "ddim_step");
  if (t_next > state.t || t_next < 0)
    throw ParameterError("ddim_step: need t_next in [0, t], got t=" + std::to_string(state.t) +
                         " t_next=" + std::to_string(t_next));
  if (t_next == state.t) return state;  // algebraically the identity
  if (z0_hat.size() != state.z.size())
    throw ParameterError("ddim_step: z0_hat size mismatch");
  const double ab_t = sched.alpha_bar[state.t];
  const double ab_n = sched.alpha_bar[t_next];
  const double cs_t = std::sqrt(ab_t);
  const double cn_t = std::sqrt(1.0 - ab_t);
  const double cs_n = std::sqrt(ab_n);
  const double cn_n = std::sqrt(1.0 - ab_n);
  BoxSetState out;
  out.count = state.count;
  out.t = t_next;
  out.z.resize(state.z.size());
  for (size_t i = 0; i < state.z.size(); ++i) {
    const double eps_hat = (state.z[i] - cs_t * z0_hat[i]) / cn_t;
    out.z[i] = static_cast<float>(cs_n * z0_hat[i] + cn_n * eps_hat);
  }
  return out;
}

TrainingPair make_training_pair(const std::vector<BBox>& gt, int n, int t, float scale,
                                const NoiseSchedule& sched, Rng& rng) {
  if (n < 1) throw ParameterError("make_training_pair: n must be >= 1");
  check_t(t, sched, "make_training_pair");
  TrainingPair pair;
  pair.target_z0.resize(4 * n);
  pair.padding.assign(n, 0);
  const int real = std::min<int>(n, static_cast<int>(gt.size()));
  pair.truncated = static_cast<int>(gt.size()) - real;
  for (int i = 0; i < real; ++i) {
    const SignalBox s = encode_box(clamp_valid(gt[i]), scale);
    std::copy(s.v.begin(), s.v.end(), pair.target_z0.begin() + 4 * i);
  }
  for (int i = real; i < n; ++i) {
    pair.padding[i] = 1;
    if (real > 0) {
      // cyclic repeat of the encoded gt rows
      const int src = i % real;
      std::copy_n(pair.target_z0.begin() + 4 * src, 4, pair.target_z0.begin() + 4 * i);
    } else {
      for (int j = 0; j < 4; ++j) pair.target_z0[4 * i + j] = static_cast<float>(rng.normal());
    }
  }
  std::vector<float> eps(4 * n);
  for (float& e : eps) e = static_cast<float>(rng.normal());
  pair.state = q_sample(pair.target_z0, n, t, sched, eps);
  return pair;
}

void box_renewal(BoxSetState& state, std::span<const float> scores, float threshold, Rng& rng,
                 std::vector<uint8_t>* renewed) {
  if (static_cast<int>(scores.size()) != state.count)
    throw ParameterError("box_renewal: one score per box required");
  if (renewed) renewed->assign(state.count, 0);
  for (int i = 0; i < state.count; ++i) {
    if (scores[i] >= threshold) continue;
    for (int j = 0; j < 4; ++j) state.z[4 * i + j] = static_cast<float>(rng.normal());
    if (renewed) (*renewed)[i] = 1;
  }
  return;
}

}  // namespace sardet

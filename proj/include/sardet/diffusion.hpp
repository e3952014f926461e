#pragma once

#include <span>
#include <vector>

#include "sardet/box.hpp"
#include "sardet/rng.hpp"

namespace sardet {

// Cosine noise schedule over T steps. alpha_bar[0] == 1 by convention;
// alpha[t] for t in 1..T. alpha_bar is stored as the exact running product of
// the clipped alphas so that recomputing it from alpha reproduces the stored
// values.
struct NoiseSchedule {
  int steps = 0;                  // T
  std::vector<double> alpha;      // [T+1], index 0 unused
  std::vector<double> alpha_bar;  // [T+1]

  static NoiseSchedule cosine(int T);
};

// A set of boxes in signal space at diffusion time t.
struct BoxSetState {
  int count = 0;  // N
  int t = 0;
  std::vector<float> z;  // N*4, row-major

  std::span<float> row(int i) { return {z.data() + 4 * i, 4}; }
  std::span<const float> row(int i) const { return {z.data() + 4 * i, 4}; }
};

// One-shot forward corruption: z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
BoxSetState q_sample(std::span<const float> z0, int n, int t, const NoiseSchedule& sched,
                     std::span<const float> eps);

// Single forward step z_t = sqrt(alpha_t) z_{t-1} + sqrt(1 - alpha_t) eps,
// used by the marginal-consistency checks.
void q_step_inplace(std::vector<float>& z, int t, const NoiseSchedule& sched, Rng& rng);

// Deterministic reverse step: recover eps_hat from the z0 prediction at t and
// jump to t_next with zero stochasticity.
BoxSetState ddim_step(const BoxSetState& state, std::span<const float> z0_hat, int t_next,
                      const NoiseSchedule& sched);

struct TrainingPair {
  BoxSetState state;              // corrupted boxes at time t
  std::vector<float> target_z0;   // N*4 clean signal-space rows
  std::vector<uint8_t> padding;   // 1 where the row is padding, not real gt
  int truncated = 0;              // gt boxes dropped because |gt| > N
};

// Encode gt to signal space, pad to n rows (cyclic repetition of gt when any
// exist, N(0, I) draws marked as padding otherwise), then corrupt at time t.
TrainingPair make_training_pair(const std::vector<BBox>& gt, int n, int t, float scale,
                                const NoiseSchedule& sched, Rng& rng);

// Replace rows whose score falls below threshold with fresh N(0, I) draws.
// renewed, when given, is filled with a 0/1 flag per row.
void box_renewal(BoxSetState& state, std::span<const float> scores, float threshold, Rng& rng,
                 std::vector<uint8_t>* renewed = nullptr);

}  // namespace sardet

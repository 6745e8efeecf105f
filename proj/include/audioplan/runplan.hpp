#pragma once

#include <cstdint>

namespace audioplan {

// per_device * grad_accum * devices. Throws ValidationError on non-positive
// inputs.
std::int64_t effective_batch_size(std::int64_t per_device,
                                  std::int64_t grad_accum,
                                  std::int64_t devices);

struct LrScheduleConfig {
  double peak_lr = 3e-5;
  double warmup_fraction_of_epoch1 = 0.30;
  std::uint32_t epoch1_steps = 1;  // caller supplies ceil(N / batch_size)
  std::uint32_t total_steps = 1;
  double floor_lr = 0.0;

  std::uint32_t warmup_steps() const;  // ceil(fraction * epoch1_steps)
};

// Linear warmup from peak/W to peak over the first W steps, then cosine
// annealing from peak to floor over [W, total_steps).
double lr_at(std::uint32_t step, const LrScheduleConfig& cfg);

}  // namespace audioplan

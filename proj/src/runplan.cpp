#include "audioplan/runplan.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "audioplan/manifest.hpp"

namespace audioplan {

std::int64_t effective_batch_size(std::int64_t per_device,
                                  std::int64_t grad_accum,
                                  std::int64_t devices) {
  if (per_device <= 0 || grad_accum <= 0 || devices <= 0)
    throw ValidationError("effective_batch_size: all factors must be >= 1");
  return per_device * grad_accum * devices;
}

std::uint32_t LrScheduleConfig::warmup_steps() const {
  return static_cast<std::uint32_t>(std::ceil(
      warmup_fraction_of_epoch1 * static_cast<double>(epoch1_steps)));
}

namespace {

void validate_schedule(const LrScheduleConfig& cfg) {
  if (!(cfg.warmup_fraction_of_epoch1 > 0.0 &&
        cfg.warmup_fraction_of_epoch1 <= 1.0))
    throw ValidationError("lr schedule: warmup fraction must be in (0, 1]");
  if (cfg.epoch1_steps == 0 || cfg.total_steps == 0)
    throw ValidationError("lr schedule: step counts must be >= 1");
  if (!(cfg.peak_lr > cfg.floor_lr && cfg.floor_lr >= 0.0))
    throw ValidationError("lr schedule: need peak_lr > floor_lr >= 0");
  if (cfg.warmup_steps() > cfg.total_steps)
    throw ValidationError("lr schedule: warmup (" +
                          std::to_string(cfg.warmup_steps()) +
                          " steps) exceeds total_steps");
}

}  // namespace

double lr_at(std::uint32_t step, const LrScheduleConfig& cfg) {
  validate_schedule(cfg);
  if (step >= cfg.total_steps)
    throw ValidationError("lr_at: step " + std::to_string(step) +
                          " out of range");
  const std::uint32_t warmup = cfg.warmup_steps();
  if (step < warmup) {
    // First step starts at peak/W, not zero, so step 0 still trains.
    return cfg.peak_lr * static_cast<double>(step + 1) /
           static_cast<double>(warmup);
  }
  const std::uint32_t decay_steps = cfg.total_steps - warmup;
  if (decay_steps == 0) return cfg.peak_lr;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(decay_steps);
  return cfg.floor_lr + (cfg.peak_lr - cfg.floor_lr) * 0.5 *
                            (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace audioplan

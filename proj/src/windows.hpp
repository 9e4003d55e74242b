#pragma once

#include <vector>

#include "chain.hpp"
#include "coarsen/dynamics.hpp"

namespace coarsen::detail {

std::vector<VanishEvent> commit(ParticleSystem& sys, std::vector<Removal> removals,
                                const std::vector<Index>& ids, const std::vector<double>& y,
                                double t_end);
std::vector<double> y_of(const ParticleSystem& sys, const std::vector<Index>& ids);

std::vector<VanishEvent> advance_direct(ParticleSystem& sys, double t_end, const StepControl& ctrl,
                                        AdvanceStats* stats);

// Overlapping-block waveform relaxation: each block of living particles is
// integrated on its own step sequence, bordered by the trajectories its
// neighbours produced in the previous sweep, until two sweeps agree.
std::vector<VanishEvent> advance_windows(ParticleSystem& sys, double t_end, const StepControl& ctrl,
                                         AdvanceStats* stats);

}  // namespace coarsen::detail

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace commnet {

/// Linear ramp of one environment parameter over a window of epochs,
/// clamped to the start value before and the end value after.
struct CurriculumSchedule {
  std::string param;
  double start_value = 0.0;
  double end_value = 0.0;
  int start_epoch = 0;
  int end_epoch = 0;

  void validate() const {
    if (end_epoch < start_epoch)
      throw std::invalid_argument("curriculum: end epoch before start epoch");
  }

  double value_at(int epoch) const {
    if (epoch <= start_epoch) return start_value;
    if (epoch >= end_epoch || end_epoch == start_epoch) return end_value;
    double f = static_cast<double>(epoch - start_epoch) /
               static_cast<double>(end_epoch - start_epoch);
    return start_value + f * (end_value - start_value);
  }
};

inline double curriculum_value(const std::vector<CurriculumSchedule>& schedules,
                               const std::string& param, int epoch,
                               double fallback) {
  for (const CurriculumSchedule& s : schedules)
    if (s.param == param) return s.value_at(epoch);
  return fallback;
}

}  // namespace commnet

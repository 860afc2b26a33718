#pragma once

#include <cstdint>

#include "weatherseg/nets.hpp"

namespace weatherseg {

struct EmaConfig {
  double alpha = 0.99;

  void validate() const;
};

// θ_T' = α·θ_T + (1−α)·θ_S, elementwise. The result never requires grad.
HeadParams ema_update(const HeadParams& teacher, const HeadParams& student, const EmaConfig& cfg);

// |‖θ_T' − θ_T‖ − (1−α)·‖θ_S − θ_T‖|, maximised over the head's tensors,
// where θ_S is the student the update was taken against.
double verify_ema_bound(const HeadParams& before, const HeadParams& after,
                        const HeadParams& student, const EmaConfig& cfg);

// L2 distance over all tensors of two heads of equal shape.
double head_distance(const HeadParams& a, const HeadParams& b);

// Two EMA teachers of one student. Dual mode alternates: teacher 1 on even
// steps, teacher 2 on odd. Single mode updates teacher 1 every step and leaves
// teacher 2 untouched.
class TeacherPair {
 public:
  TeacherPair() = default;
  TeacherPair(HeadParams first, HeadParams second);

  // Copies of `student`, each offset by independent uniform noise of
  // half-width `perturbation`.
  static TeacherPair from_student(const HeadParams& student, double perturbation,
                                  std::uint64_t seed);

  const HeadParams& first() const { return first_; }
  const HeadParams& second() const { return second_; }

  void update(const HeadParams& student, std::int64_t step, const EmaConfig& cfg, bool dual);

  // Step at which a teacher last moved; -1 before the first update.
  std::int64_t last_update_step() const { return last_update_step_; }
  void set_last_update_step(std::int64_t step) { last_update_step_ = step; }

 private:
  HeadParams first_;
  HeadParams second_;
  std::int64_t last_update_step_ = -1;
};

}  // namespace weatherseg

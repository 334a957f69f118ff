#pragma once

#include <limits>

namespace vbac {

// Patience counter over a metric that should increase. An epoch counts as
// an improvement only when it beats the best value by at least min_delta.
class EarlyStopper {
 public:
  EarlyStopper(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  // Records the next value; returns true once patience is exhausted.
  bool update(double metric) {
    ++seen_;
    if (metric >= best_ + min_delta_ || seen_ == 1) {
      best_ = metric;
      best_step_ = seen_;
      wait_ = 0;
    } else {
      ++wait_;
    }
    return wait_ >= patience_;
  }

  bool improved_last() const { return best_step_ == seen_; }
  double best() const { return best_; }
  int best_step() const { return best_step_; }  // 1-based
  int steps() const { return seen_; }

 private:
  int patience_;
  double min_delta_;
  double best_ = -std::numeric_limits<double>::infinity();
  int best_step_ = 0;
  int seen_ = 0;
  int wait_ = 0;
};

}  // namespace vbac

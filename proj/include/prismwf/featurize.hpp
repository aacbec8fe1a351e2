#pragma once

// Slot-based trace representation: a 6 x L matrix of per-slot statistics.

#include <Eigen/Dense>
#include <cstdint>

#include "prismwf/core.hpp"

namespace prismwf {

// Row layout of a feature matrix.
enum FeatureRow : int {
  kOutCount = 0,        // c+   outgoing packets in the slot
  kInCount = 1,         // c-   incoming packets in the slot
  kOutInTransitions = 2,  // n+-  adjacent +1 -> -1 pairs inside the slot
  kInOutTransitions = 3,  // n-+  adjacent -1 -> +1 pairs inside the slot
  kOutInMeanGap = 4,    // s+-  mean gap over n+- transitions (seconds)
  kInOutMeanGap = 5,    // s-+  mean gap over n-+ transitions (seconds)
};
inline constexpr int kFeatureRows = 6;

struct FeatureChannelMask {
  bool include_counts = true;       // rows 0-1
  bool include_transitions = true;  // rows 2-3
  bool include_intervals = true;    // rows 4-5

  static FeatureChannelMask all() { return {}; }
  bool any() const {
    return include_counts || include_transitions || include_intervals;
  }
};

class FeatureMatrix {
 public:
  FeatureMatrix(Eigen::MatrixXd values, double slot_seconds,
                double max_seconds);

  const Eigen::MatrixXd& values() const noexcept { return values_; }
  double slot_seconds() const noexcept { return slot_seconds_; }
  double max_seconds() const noexcept { return max_seconds_; }
  Eigen::Index slots() const noexcept { return values_.cols(); }

  friend bool operator==(const FeatureMatrix& a, const FeatureMatrix& b) {
    return a.slot_seconds_ == b.slot_seconds_ &&
           a.max_seconds_ == b.max_seconds_ && a.values_ == b.values_;
  }

 private:
  Eigen::MatrixXd values_;
  double slot_seconds_;
  double max_seconds_;
};

// L = ceil(T / dt), snapping T / dt to an integer when it is within
// rounding distance of one (160 / 0.02 -> 8000).
Eigen::Index slot_count(double max_seconds, double slot_seconds);

// 1-based slot j with (j-1)*dt <= t < j*dt.
std::int64_t slot_index(double t, double slot_seconds);

FeatureMatrix featurize(const Trace& trace, double slot_seconds,
                        double max_seconds,
                        const FeatureChannelMask& mask = {});

}  // namespace prismwf

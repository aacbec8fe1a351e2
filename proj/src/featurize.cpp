#include "prismwf/featurize.hpp"

#include <cmath>

namespace prismwf {

FeatureMatrix::FeatureMatrix(Eigen::MatrixXd values, double slot_seconds,
                             double max_seconds)
    : values_(std::move(values)),
      slot_seconds_(slot_seconds),
      max_seconds_(max_seconds) {
  if (values_.rows() != kFeatureRows) {
    throw Error("shape_mismatch", "feature matrix must have 6 rows");
  }
}

Eigen::Index slot_count(double max_seconds, double slot_seconds) {
  if (!(slot_seconds > 0.0) || !std::isfinite(slot_seconds)) {
    throw Error("invalid_argument", "slot interval must be positive");
  }
  if (!(max_seconds > 0.0) || !std::isfinite(max_seconds)) {
    throw Error("invalid_argument", "max loading time must be positive");
  }
  const double q = max_seconds / slot_seconds;
  const double r = std::round(q);
  if (std::abs(q - r) <= 1e-9 * std::max(1.0, r)) {
    return static_cast<Eigen::Index>(r);
  }
  return static_cast<Eigen::Index>(std::ceil(q));
}

std::int64_t slot_index(double t, double slot_seconds) {
  auto j = static_cast<std::int64_t>(std::floor(t / slot_seconds)) + 1;
  // The quotient can land one slot off near boundaries; settle it against
  // the products the half-open interval is defined by.
  while (j > 1 && static_cast<double>(j - 1) * slot_seconds > t) --j;
  while (t >= static_cast<double>(j) * slot_seconds) ++j;
  return j;
}

FeatureMatrix featurize(const Trace& trace, double slot_seconds,
                        double max_seconds, const FeatureChannelMask& mask) {
  if (!mask.any()) {
    throw Error("invalid_argument", "feature mask selects no channels");
  }
  const Eigen::Index slots = slot_count(max_seconds, slot_seconds);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(kFeatureRows, slots);
  Eigen::MatrixXd gap_sums = Eigen::MatrixXd::Zero(2, slots);

  // Events are time-sorted, so each slot's members form a contiguous run
  // and "previous event in the same slot" is just the previous event.
  std::int64_t prev_slot = -1;
  const PacketEvent* prev = nullptr;
  for (const auto& e : trace.events()) {
    if (e.timestamp() >= max_seconds) break;
    const std::int64_t j = slot_index(e.timestamp(), slot_seconds);
    if (j > slots) break;
    const Eigen::Index col = j - 1;
    m(e.direction() > 0 ? kOutCount : kInCount, col) += 1.0;
    if (prev != nullptr && prev_slot == j) {
      const double gap = e.timestamp() - prev->timestamp();
      if (prev->direction() > 0 && e.direction() < 0) {
        m(kOutInTransitions, col) += 1.0;
        gap_sums(0, col) += gap;
      } else if (prev->direction() < 0 && e.direction() > 0) {
        m(kInOutTransitions, col) += 1.0;
        gap_sums(1, col) += gap;
      }
    }
    prev = &e;
    prev_slot = j;
  }

  for (Eigen::Index j = 0; j < slots; ++j) {
    if (m(kOutInTransitions, j) > 0) {
      m(kOutInMeanGap, j) = gap_sums(0, j) / m(kOutInTransitions, j);
    }
    if (m(kInOutTransitions, j) > 0) {
      m(kInOutMeanGap, j) = gap_sums(1, j) / m(kInOutTransitions, j);
    }
  }

  if (!mask.include_counts) m.middleRows(kOutCount, 2).setZero();
  if (!mask.include_transitions) m.middleRows(kOutInTransitions, 2).setZero();
  if (!mask.include_intervals) m.middleRows(kOutInMeanGap, 2).setZero();
  return FeatureMatrix(std::move(m), slot_seconds, max_seconds);
}

}  // namespace prismwf

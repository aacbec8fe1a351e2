#include "prismwf/core.hpp"

#include <algorithm>
#include <cmath>

namespace prismwf {

PacketEvent::PacketEvent(double timestamp, int direction)
    : timestamp_(timestamp), direction_(direction) {
  if (!std::isfinite(timestamp) || timestamp < 0.0) {
    throw Error("invalid_packet", "packet timestamp must be finite and >= 0");
  }
  if (direction != 1 && direction != -1) {
    throw Error("invalid_packet", "packet direction must be +1 or -1, got " +
                                      std::to_string(direction));
  }
}

Trace::Trace(std::vector<PacketEvent> events, std::optional<int> origin_class)
    : events_(std::move(events)), origin_class_(origin_class) {
  std::stable_sort(events_.begin(), events_.end(),
                   [](const PacketEvent& a, const PacketEvent& b) {
                     return a.timestamp() < b.timestamp();
                   });
}

double Trace::duration() const noexcept {
  return events_.empty() ? 0.0 : events_.back().timestamp();
}

Trace Trace::with_origin(std::optional<int> origin_class) const {
  Trace copy = *this;
  copy.origin_class_ = origin_class;
  return copy;
}

Trace validate_trace(std::vector<PacketEvent> events,
                     std::optional<int> origin_class) {
  Trace sorted(std::move(events), origin_class);
  if (sorted.empty()) return sorted;
  const double t0 = sorted.events().front().timestamp();
  if (t0 == 0.0) return sorted;
  std::vector<PacketEvent> shifted;
  shifted.reserve(sorted.size());
  for (const auto& e : sorted.events()) {
    shifted.emplace_back(e.timestamp() - t0, e.direction());
  }
  return Trace(std::move(shifted), origin_class);
}

Trace validate_trace(const Trace& trace) {
  return validate_trace(trace.events(), trace.origin_class());
}

LabelVector::LabelVector(int num_classes, std::vector<int> active)
    : num_classes_(num_classes), active_(std::move(active)) {
  if (num_classes_ < 1) {
    throw Error("invalid_label", "num_classes must be positive");
  }
  std::sort(active_.begin(), active_.end());
  if (active_.empty()) {
    throw Error("invalid_label", "label needs at least one active class");
  }
  if (std::adjacent_find(active_.begin(), active_.end()) != active_.end()) {
    throw Error("invalid_label", "duplicate class id in label");
  }
  if (active_.front() < 0 || active_.back() >= num_classes_) {
    throw Error("invalid_label", "class id out of range [0, " +
                                     std::to_string(num_classes_) + ")");
  }
}

bool LabelVector::contains(int class_id) const {
  return std::binary_search(active_.begin(), active_.end(), class_id);
}

std::vector<double> LabelVector::multi_hot() const {
  std::vector<double> y(static_cast<std::size_t>(num_classes_), 0.0);
  for (int c : active_) y[static_cast<std::size_t>(c)] = 1.0;
  return y;
}

ScoreVector::ScoreVector(std::vector<double> scores)
    : scores_(std::move(scores)) {
  if (scores_.empty()) throw Error("invalid_scores", "empty score vector");
  for (double s : scores_) {
    if (!std::isfinite(s)) throw Error("invalid_scores", "non-finite score");
  }
}

}  // namespace prismwf

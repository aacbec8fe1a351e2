#pragma once

// Shared domain types: packet events, traces, label vectors, score vectors.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace prismwf {

// All recoverable failures raise prismwf::Error. `code()` is a short
// machine-parseable identifier (e.g. "invalid_trace", "shape_mismatch").
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

// A single observed packet: +1 outgoing, -1 incoming.
class PacketEvent {
 public:
  PacketEvent(double timestamp, int direction);

  double timestamp() const noexcept { return timestamp_; }
  int direction() const noexcept { return direction_; }

  friend bool operator==(const PacketEvent&, const PacketEvent&) = default;

 private:
  double timestamp_;
  int direction_;
};

// Time-ordered packet sequence. The constructor stable-sorts by timestamp,
// so equal timestamps keep their input order.
class Trace {
 public:
  Trace() = default;
  explicit Trace(std::vector<PacketEvent> events,
                 std::optional<int> origin_class = std::nullopt);

  const std::vector<PacketEvent>& events() const noexcept { return events_; }
  std::optional<int> origin_class() const noexcept { return origin_class_; }
  std::size_t size() const noexcept { return events_.size(); }
  bool empty() const noexcept { return events_.empty(); }

  // Timestamp of the last event, 0 for an empty trace.
  double duration() const noexcept;

  Trace with_origin(std::optional<int> origin_class) const;

  friend bool operator==(const Trace&, const Trace&) = default;

 private:
  std::vector<PacketEvent> events_;
  std::optional<int> origin_class_;
};

// Sorts (stable) and shifts so the first event sits at t = 0.
Trace validate_trace(std::vector<PacketEvent> events,
                     std::optional<int> origin_class = std::nullopt);
Trace validate_trace(const Trace& trace);

// Set of active classes out of `num_classes`; the multi-hot vector y.
class LabelVector {
 public:
  LabelVector(int num_classes, std::vector<int> active);

  int num_classes() const noexcept { return num_classes_; }
  // Sorted ascending, no duplicates.
  const std::vector<int>& active() const noexcept { return active_; }
  std::size_t cardinality() const noexcept { return active_.size(); }
  bool is_single() const noexcept { return active_.size() == 1; }
  bool contains(int class_id) const;

  std::vector<double> multi_hot() const;

  friend bool operator==(const LabelVector&, const LabelVector&) = default;

 private:
  int num_classes_;
  std::vector<int> active_;
};

// Raw classifier logits over C classes.
class ScoreVector {
 public:
  explicit ScoreVector(std::vector<double> scores);

  std::size_t size() const noexcept { return scores_.size(); }
  std::span<const double> values() const noexcept { return scores_; }
  double operator[](std::size_t i) const { return scores_[i]; }

 private:
  std::vector<double> scores_;
};

}  // namespace prismwf

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "loopscope/loopdetect.hpp"
#include "loopscope/trace.hpp"

namespace loopscope {

struct NeighborQuery {
  std::size_t time = 0;
  double radius = 1.0;         // > 0
  std::size_t time_window = 5;  // support steps tau with |tau - time| <= time_window
};

/// Real states of one layer, bucketed by time step.
///
/// Within a bucket, vectors are sorted by Euclidean norm. A query only
/// examines the norm band [|q| - r, |q| + r] of each bucket in its time
/// window, since anything outside cannot be within r by the triangle
/// inequality, then checks the candidates exactly. Counts are identical to a
/// linear scan.
class SupportIndex {
 public:
  // Throws UsageError on empty input, FormatError on inconsistent dimension
  // or a missing layer.
  static SupportIndex build(std::span<const StateTrace* const> traces, std::size_t layer);

  std::size_t layer() const { return layer_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return size_; }
  std::size_t num_steps() const { return buckets_.size(); }

  /// |{(tau, h) : |tau - t| <= window and ||state - h||_2 < r}|.
  /// Inputs are float32; distances accumulate in double.
  std::size_t count(std::span<const float> state, const NeighborQuery& query) const;

 private:
  struct Bucket {
    std::vector<float> vectors;  // row-major, sorted by norm
    std::vector<double> norms;   // ascending
  };

  std::size_t count_in_bucket(const Bucket& bucket, std::span<const float> state,
                              double state_norm, double radius) const;

  std::size_t layer_ = 0;
  std::size_t dim_ = 0;
  std::size_t size_ = 0;
  std::vector<Bucket> buckets_;
};

inline std::size_t count_neighbors(const SupportIndex& index, std::span<const float> state,
                                   const NeighborQuery& query) {
  return index.count(state, query);
}

enum class CurveAxis { absolute_time, relative_to_loop_start };

std::string_view to_string(CurveAxis axis);
CurveAxis parse_axis(std::string_view text);

struct CurvePoint {
  long step = 0;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t n = 0;

  bool operator==(const CurvePoint&) const = default;
};

struct DeviationCurve {
  CurveAxis axis = CurveAxis::absolute_time;
  std::vector<CurvePoint> points;  // strictly increasing step

  bool operator==(const DeviationCurve&) const = default;
};

/// Offsets from rho + lambda at which relative curves are evaluated.
std::span<const long> relative_offsets();

/// `count` evenly spaced steps over [0, num_steps - 1], deduplicated.
std::vector<long> evenly_spaced_steps(std::size_t num_steps, std::size_t count = 20);

struct CurveOptions {
  double radius = 1.0;
  std::size_t time_window = 5;
  CurveAxis axis = CurveAxis::absolute_time;
  // Absolute steps, or offsets from rho + lambda in relative mode. Empty
  // means 20 evenly spaced steps (absolute) or relative_offsets().
  std::vector<long> steps;
  std::size_t workers = 1;
};

/// Collects per-step samples and reduces them to curve points. Samples are
/// reduced in insertion order so results do not depend on thread timing.
class CurveAccumulator {
 public:
  void add(long step, double value);
  // Makes the step appear in the curve even if it never gets a sample.
  void touch(long step);
  void merge(const CurveAccumulator& other);
  DeviationCurve finish(CurveAxis axis) const;

 private:
  std::vector<std::pair<long, std::vector<double>>> samples_;  // sorted by step
};

/// Neighbor counts of the given traces (at the index's layer), aggregated per
/// step. In relative mode `loops` must hold one entry per trace with rho in
/// whole-passage coordinates; traces without a loop, and offsets that fall
/// outside a trace, are skipped and reflected in n. Every requested step gets
/// a point, with n = 0 when nothing reached it.
void accumulate_counts(const SupportIndex& index, std::span<const StateTrace* const> traces,
                       std::span<const std::optional<LoopSpec>> loops, const CurveOptions& options,
                       CurveAccumulator& out);

DeviationCurve deviation_curve(const SupportIndex& index, std::span<const StateTrace* const> traces,
                               const CurveOptions& options,
                               std::span<const std::optional<LoopSpec>> loops = {});

/// n(generated) - n(real) at generated loop-relative steps, pairing each
/// generated trace with the real trace that supplied its condition. Both are
/// evaluated at the same absolute step.
void accumulate_differences(const SupportIndex& index,
                            std::span<const StateTrace* const> generated,
                            std::span<const StateTrace* const> paired_real,
                            std::span<const std::optional<LoopSpec>> loops,
                            const CurveOptions& options, CurveAccumulator& out);

/// Token-permuted copies of real passages (condition region included).
/// Passage i is shuffled with stream seed ^ i; ids get a "/shuffled" suffix.
std::vector<Passage> shuffle_control(std::span<const Passage> passages, std::uint64_t seed);

}  // namespace loopscope

#include "loopscope/neighborhood.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "loopscope/error.hpp"
#include "loopscope/parallel.hpp"
#include "loopscope/rng.hpp"

namespace loopscope {

namespace {

double norm_of(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

constexpr std::array<long, 17> kRelativeOffsets = {-32, -16, -10, -8, -6, -4, -2, 0, 2,
                                                   4,   6,   8,   10, 16, 32, 64, 128};

}  // namespace

SupportIndex SupportIndex::build(std::span<const StateTrace* const> traces, std::size_t layer) {
  if (traces.empty()) throw UsageError("build_support: no traces");
  SupportIndex index;
  index.layer_ = layer;
  index.dim_ = traces.front()->dim();

  std::size_t max_steps = 0;
  for (const StateTrace* t : traces) {
    if (t->dim() != index.dim_) {
      throw FormatError("build_support: trace " + t->passage_id() + " has dim " +
                        std::to_string(t->dim()) + ", expected " + std::to_string(index.dim_));
    }
    if (layer >= t->num_layers()) {
      throw FormatError("build_support: trace " + t->passage_id() + " has no layer " +
                        std::to_string(layer));
    }
    max_steps = std::max(max_steps, t->num_steps());
  }

  // Gather (norm, trace, step) per time bucket, then lay vectors out sorted.
  struct Ref {
    double norm;
    const StateTrace* trace;
  };
  std::vector<std::vector<Ref>> refs(max_steps);
  for (const StateTrace* t : traces) {
    for (std::size_t step = 0; step < t->num_steps(); ++step) {
      refs[step].push_back({norm_of(t->at(layer, step)), t});
    }
  }

  index.buckets_.resize(max_steps);
  for (std::size_t step = 0; step < max_steps; ++step) {
    auto& bucket_refs = refs[step];
    std::stable_sort(bucket_refs.begin(), bucket_refs.end(),
                     [](const Ref& a, const Ref& b) { return a.norm < b.norm; });
    Bucket& bucket = index.buckets_[step];
    bucket.norms.reserve(bucket_refs.size());
    bucket.vectors.reserve(bucket_refs.size() * index.dim_);
    for (const Ref& r : bucket_refs) {
      const auto v = r.trace->at(layer, step);
      bucket.norms.push_back(r.norm);
      bucket.vectors.insert(bucket.vectors.end(), v.begin(), v.end());
    }
    index.size_ += bucket_refs.size();
  }
  return index;
}

std::size_t SupportIndex::count_in_bucket(const Bucket& bucket, std::span<const float> state,
                                          double state_norm, double radius) const {
  // Norm band, widened slightly so rounding in the norms can never exclude a
  // true neighbor; the exact test below decides.
  const double slack = 1e-9 * (state_norm + radius + 1.0);
  const auto lo = std::lower_bound(bucket.norms.begin(), bucket.norms.end(),
                                   state_norm - radius - slack);
  const auto hi = std::upper_bound(lo, bucket.norms.end(), state_norm + radius + slack);
  const double r2 = radius * radius;
  const std::size_t d = dim_;

  std::size_t found = 0;
  for (auto it = lo; it != hi; ++it) {
    const float* h = bucket.vectors.data() + static_cast<std::size_t>(it - bucket.norms.begin()) * d;
    double dist2 = 0.0;
    std::size_t k = 0;
    // Partial sums only grow, so stopping once r^2 is reached is exact.
    for (; k < d; ++k) {
      const double diff = static_cast<double>(state[k]) - static_cast<double>(h[k]);
      dist2 += diff * diff;
      if (dist2 >= r2) break;
    }
    if (k == d && dist2 < r2) ++found;
  }
  return found;
}

std::size_t SupportIndex::count(std::span<const float> state, const NeighborQuery& query) const {
  if (state.size() != dim_) {
    throw UsageError("count_neighbors: state has dim " + std::to_string(state.size()) +
                     ", index has " + std::to_string(dim_));
  }
  if (!(query.radius > 0.0)) throw UsageError("count_neighbors: radius must be positive");
  if (buckets_.empty()) return 0;

  const std::size_t first = query.time > query.time_window ? query.time - query.time_window : 0;
  if (first >= buckets_.size()) return 0;
  const std::size_t last = std::min(buckets_.size() - 1, query.time + query.time_window);
  const double state_norm = norm_of(state);

  std::size_t total = 0;
  for (std::size_t step = first; step <= last; ++step) {
    total += count_in_bucket(buckets_[step], state, state_norm, query.radius);
  }
  return total;
}

std::string_view to_string(CurveAxis axis) {
  return axis == CurveAxis::absolute_time ? "absolute_time" : "relative_to_loop_start";
}

CurveAxis parse_axis(std::string_view text) {
  if (text == "absolute_time" || text == "absolute") return CurveAxis::absolute_time;
  if (text == "relative_to_loop_start" || text == "relative") {
    return CurveAxis::relative_to_loop_start;
  }
  throw UsageError("unknown curve axis '" + std::string(text) + "'");
}

std::span<const long> relative_offsets() { return kRelativeOffsets; }

std::vector<long> evenly_spaced_steps(std::size_t num_steps, std::size_t count) {
  std::vector<long> steps;
  if (num_steps == 0 || count == 0) return steps;
  if (count == 1) return {0};
  for (std::size_t i = 0; i < count; ++i) {
    const double pos = static_cast<double>(i) * static_cast<double>(num_steps - 1) /
                       static_cast<double>(count - 1);
    const long step = std::lround(pos);
    if (steps.empty() || steps.back() != step) steps.push_back(step);
  }
  return steps;
}

void CurveAccumulator::touch(long step) {
  auto it = std::lower_bound(samples_.begin(), samples_.end(), step,
                             [](const auto& entry, long s) { return entry.first < s; });
  if (it == samples_.end() || it->first != step) samples_.insert(it, {step, {}});
}

void CurveAccumulator::add(long step, double value) {
  touch(step);
  auto it = std::lower_bound(samples_.begin(), samples_.end(), step,
                             [](const auto& entry, long s) { return entry.first < s; });
  it->second.push_back(value);
}

void CurveAccumulator::merge(const CurveAccumulator& other) {
  for (const auto& [step, values] : other.samples_) {
    touch(step);
    for (double v : values) add(step, v);
  }
}

DeviationCurve CurveAccumulator::finish(CurveAxis axis) const {
  DeviationCurve curve;
  curve.axis = axis;
  for (const auto& [step, values] : samples_) {
    CurvePoint point;
    point.step = step;
    point.n = values.size();
    if (!values.empty()) {
      double sum = 0.0;
      for (double v : values) sum += v;
      point.mean = sum / static_cast<double>(values.size());
      double ss = 0.0;
      for (double v : values) ss += (v - point.mean) * (v - point.mean);
      point.std = std::sqrt(ss / static_cast<double>(values.size()));
    }
    curve.points.push_back(point);
  }
  return curve;
}

namespace {

std::vector<long> curve_steps(const CurveOptions& options,
                              std::span<const StateTrace* const> traces) {
  if (!options.steps.empty()) return options.steps;
  if (options.axis == CurveAxis::relative_to_loop_start) {
    return {relative_offsets().begin(), relative_offsets().end()};
  }
  std::size_t max_steps = 0;
  for (const StateTrace* t : traces) max_steps = std::max(max_steps, t->num_steps());
  return evenly_spaced_steps(max_steps, 20);
}

// Absolute time step evaluated for trace i at curve step s, or -1 to skip.
long resolve_step(const CurveOptions& options, const StateTrace& trace,
                  std::span<const std::optional<LoopSpec>> loops, std::size_t i, long s) {
  long at = s;
  if (options.axis == CurveAxis::relative_to_loop_start) {
    if (!loops[i]) return -1;
    at = static_cast<long>(loops[i]->rho + loops[i]->period) + s;
  }
  if (at < 0 || at >= static_cast<long>(trace.num_steps())) return -1;
  return at;
}

void check_relative_inputs(const CurveOptions& options, std::size_t num_traces,
                           std::span<const std::optional<LoopSpec>> loops) {
  if (options.axis == CurveAxis::relative_to_loop_start && loops.size() != num_traces) {
    throw UsageError("relative curves need one loop entry per trace");
  }
}

}  // namespace

void accumulate_counts(const SupportIndex& index, std::span<const StateTrace* const> traces,
                       std::span<const std::optional<LoopSpec>> loops, const CurveOptions& options,
                       CurveAccumulator& out) {
  check_relative_inputs(options, traces.size(), loops);
  const std::vector<long> steps = curve_steps(options, traces);

  // Per-trace slots keep the reduction order independent of scheduling.
  std::vector<std::vector<std::pair<long, double>>> per_trace(traces.size());
  parallel_for(traces.size(), options.workers, [&](std::size_t i) {
    const StateTrace& trace = *traces[i];
    for (long s : steps) {
      const long at = resolve_step(options, trace, loops, i, s);
      if (at < 0) continue;
      const NeighborQuery query{static_cast<std::size_t>(at), options.radius, options.time_window};
      const auto n = index.count(trace.at(index.layer(), static_cast<std::size_t>(at)), query);
      per_trace[i].emplace_back(s, static_cast<double>(n));
    }
  });
  for (long s : steps) out.touch(s);
  for (const auto& samples : per_trace) {
    for (const auto& [s, v] : samples) out.add(s, v);
  }
}

DeviationCurve deviation_curve(const SupportIndex& index, std::span<const StateTrace* const> traces,
                               const CurveOptions& options,
                               std::span<const std::optional<LoopSpec>> loops) {
  CurveAccumulator acc;
  accumulate_counts(index, traces, loops, options, acc);
  return acc.finish(options.axis);
}

void accumulate_differences(const SupportIndex& index,
                            std::span<const StateTrace* const> generated,
                            std::span<const StateTrace* const> paired_real,
                            std::span<const std::optional<LoopSpec>> loops,
                            const CurveOptions& options, CurveAccumulator& out) {
  if (generated.size() != paired_real.size()) {
    throw UsageError("difference curve: generated and real traces must pair up");
  }
  check_relative_inputs(options, generated.size(), loops);
  const std::vector<long> steps = curve_steps(options, generated);

  std::vector<std::vector<std::pair<long, double>>> per_trace(generated.size());
  parallel_for(generated.size(), options.workers, [&](std::size_t i) {
    const StateTrace& gen = *generated[i];
    const StateTrace& real = *paired_real[i];
    for (long s : steps) {
      const long at = resolve_step(options, gen, loops, i, s);
      if (at < 0 || at >= static_cast<long>(real.num_steps())) continue;
      const NeighborQuery query{static_cast<std::size_t>(at), options.radius, options.time_window};
      const auto step = static_cast<std::size_t>(at);
      const double n_gen = static_cast<double>(index.count(gen.at(index.layer(), step), query));
      const double n_real = static_cast<double>(index.count(real.at(index.layer(), step), query));
      per_trace[i].emplace_back(s, n_gen - n_real);
    }
  });
  for (long s : steps) out.touch(s);
  for (const auto& samples : per_trace) {
    for (const auto& [s, v] : samples) out.add(s, v);
  }
}

std::vector<Passage> shuffle_control(std::span<const Passage> passages, std::uint64_t seed) {
  if (passages.empty()) throw UsageError("shuffle_control: no passages");
  std::vector<Passage> out;
  out.reserve(passages.size());
  for (std::size_t i = 0; i < passages.size(); ++i) {
    Passage p = passages[i];
    Rng rng(passage_seed(seed, i));
    // Fisher-Yates from the back.
    for (std::size_t j = p.tokens.size(); j > 1; --j) {
      const std::size_t k = rng.uniform_below(j);
      std::swap(p.tokens[j - 1], p.tokens[k]);
    }
    p.source_id = p.id;
    p.id += "/shuffled";
    p.text.reset();
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace loopscope

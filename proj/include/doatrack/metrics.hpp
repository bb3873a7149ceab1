#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include "doatrack/common.hpp"

namespace doatrack {

struct TruthEntry {
  int speaker = 0;
  double azimuth_deg = 0.0;
  bool active = true;
};

struct TruthFrame {
  double time_s = 0.0;
  std::vector<TruthEntry> speakers;
};

using GroundTruth = std::vector<TruthFrame>;

struct EstimateEntry {
  int id = -1;  // -1: no identity (frame-wise localization)
  double azimuth_deg = 0.0;
};

using EstimateFrame = std::vector<EstimateEntry>;

struct FrameMatch {
  std::vector<std::pair<int, int>> pairs;  // (estimate index, truth index)
  std::vector<double> errors;              // circular error per pair, degrees
  std::vector<int> unmatched_truth;        // miss detections
  std::vector<int> unmatched_estimates;    // false alarms
};

/// Minimum-cost square assignment (Hungarian method). `cost` is n x m
/// row-major; returns for each row the assigned column or -1.
std::vector<int> hungarian(const std::vector<double>& cost, int rows, int cols);

/// Optimal matching minimizing the total circular error among pairs whose
/// error does not exceed the gate.
FrameMatch match_frame(const std::vector<double>& estimates, const std::vector<double>& truth,
                       double gate_deg = 15.0);

struct FrameDetail {
  long frame = 0;
  int truth_count = 0;
  int estimate_count = 0;
  int matched = 0;
  int misses = 0;
  int false_alarms = 0;
  int id_switches = 0;
  double abs_error_sum = 0.0;
};

struct EvalReport {
  std::optional<double> mae_deg;           // over matched pairs
  std::optional<double> md_rate_percent;   // of active speaker-frames
  std::optional<double> fa_rate_percent;   // of active speaker-frames
  int id_switches = 0;
  long active_speaker_frames = 0;
  long matched = 0;
  long misses = 0;
  long false_alarms = 0;
  std::vector<FrameDetail> frames;
};

/// Frame-aligned evaluation. Inactive truth entries are ignored.
EvalReport evaluate(const std::vector<EstimateFrame>& estimates, const GroundTruth& truth,
                    double gate_deg = 15.0);

/// Nearest-neighbour resampling of the truth onto an estimator frame clock.
GroundTruth align_truth(const GroundTruth& truth, const std::vector<double>& frame_times);

void write_report_text(std::ostream& os, const EvalReport& report);
void write_report_json(std::ostream& os, const EvalReport& report);
void write_report_frames(std::ostream& os, const EvalReport& report);

}  // namespace doatrack

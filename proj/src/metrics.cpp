#include "doatrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

#include <nlohmann/json.hpp>

namespace doatrack {

std::vector<int> hungarian(const std::vector<double>& cost, int rows, int cols) {
  if (static_cast<std::size_t>(rows) * cols != cost.size()) throw Error("cost size mismatch");
  const int n = std::max(rows, cols);
  if (n == 0) return std::vector<int>(rows, -1);
  auto c = [&](int i, int j) { return (i < rows && j < cols) ? cost[i * cols + j] : 0.0; };

  // Shortest augmenting path formulation with potentials, 1-based.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> assignment(rows, -1);
  for (int j = 1; j <= n; ++j) {
    const int i = p[j] - 1;
    if (i >= 0 && i < rows && j - 1 < cols) assignment[i] = j - 1;
  }
  return assignment;
}

FrameMatch match_frame(const std::vector<double>& estimates, const std::vector<double>& truth,
                       double gate_deg) {
  const int ne = static_cast<int>(estimates.size());
  const int nt = static_cast<int>(truth.size());
  // Pairs beyond the gate get a penalty larger than any feasible total, so
  // the optimum maximizes the number of gated pairs first.
  const double penalty = 181.0 * (std::max(ne, nt) + 1);
  std::vector<double> cost(static_cast<std::size_t>(ne) * nt);
  for (int e = 0; e < ne; ++e)
    for (int t = 0; t < nt; ++t) {
      const double d = circular_distance_deg(estimates[e], truth[t]);
      cost[e * nt + t] = d <= gate_deg ? d : penalty;
    }
  const auto assign = hungarian(cost, ne, nt);

  FrameMatch m;
  std::vector<char> truth_used(nt, 0);
  for (int e = 0; e < ne; ++e) {
    const int t = assign[e];
    if (t >= 0 && circular_distance_deg(estimates[e], truth[t]) <= gate_deg) {
      m.pairs.emplace_back(e, t);
      m.errors.push_back(circular_distance_deg(estimates[e], truth[t]));
      truth_used[t] = 1;
    } else {
      m.unmatched_estimates.push_back(e);
    }
  }
  for (int t = 0; t < nt; ++t)
    if (!truth_used[t]) m.unmatched_truth.push_back(t);
  return m;
}

EvalReport evaluate(const std::vector<EstimateFrame>& estimates, const GroundTruth& truth,
                    double gate_deg) {
  if (estimates.size() != truth.size())
    throw Error("estimate and truth sequences are not frame-aligned");
  EvalReport r;
  std::map<int, int> last_id;
  double error_sum = 0.0;

  for (std::size_t t = 0; t < truth.size(); ++t) {
    std::vector<const TruthEntry*> active;
    for (const auto& s : truth[t].speakers)
      if (s.active) active.push_back(&s);
    std::vector<double> ta, ea;
    for (const auto* s : active) ta.push_back(s->azimuth_deg);
    for (const auto& e : estimates[t]) ea.push_back(e.azimuth_deg);
    const FrameMatch m = match_frame(ea, ta, gate_deg);

    FrameDetail fd;
    fd.frame = static_cast<long>(t);
    fd.truth_count = static_cast<int>(ta.size());
    fd.estimate_count = static_cast<int>(ea.size());
    fd.matched = static_cast<int>(m.pairs.size());
    fd.misses = static_cast<int>(m.unmatched_truth.size());
    fd.false_alarms = static_cast<int>(m.unmatched_estimates.size());
    for (std::size_t k = 0; k < m.pairs.size(); ++k) {
      fd.abs_error_sum += m.errors[k];
      const int id = estimates[t][m.pairs[k].first].id;
      if (id < 0) continue;
      const int speaker = active[m.pairs[k].second]->speaker;
      auto it = last_id.find(speaker);
      if (it != last_id.end() && it->second != id) ++fd.id_switches;
      last_id[speaker] = id;
    }
    r.active_speaker_frames += fd.truth_count;
    r.matched += fd.matched;
    r.misses += fd.misses;
    r.false_alarms += fd.false_alarms;
    r.id_switches += fd.id_switches;
    error_sum += fd.abs_error_sum;
    r.frames.push_back(fd);
  }
  if (r.matched > 0) r.mae_deg = error_sum / static_cast<double>(r.matched);
  if (r.active_speaker_frames > 0) {
    const double denom = static_cast<double>(r.active_speaker_frames);
    r.md_rate_percent = 100.0 * static_cast<double>(r.misses) / denom;
    r.fa_rate_percent = 100.0 * static_cast<double>(r.false_alarms) / denom;
  }
  return r;
}

GroundTruth align_truth(const GroundTruth& truth, const std::vector<double>& frame_times) {
  GroundTruth out;
  out.reserve(frame_times.size());
  for (double t : frame_times) {
    TruthFrame f;
    f.time_s = t;
    if (!truth.empty()) {
      auto it = std::lower_bound(truth.begin(), truth.end(), t,
                                 [](const TruthFrame& a, double v) { return a.time_s < v; });
      if (it == truth.end()) {
        --it;
      } else if (it != truth.begin() && t - std::prev(it)->time_s <= it->time_s - t) {
        --it;
      }
      f.speakers = it->speakers;
    }
    out.push_back(std::move(f));
  }
  return out;
}

namespace {

void put_optional(std::ostream& os, const char* key, const std::optional<double>& v) {
  os << key << " = ";
  if (v)
    os << *v;
  else
    os << "n/a";
  os << '\n';
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

void write_report_text(std::ostream& os, const EvalReport& r) {
  const auto precision = os.precision(10);
  put_optional(os, "mae_deg", r.mae_deg);
  put_optional(os, "md_rate_percent", r.md_rate_percent);
  put_optional(os, "fa_rate_percent", r.fa_rate_percent);
  os << "id_switches = " << r.id_switches << '\n'
     << "active_speaker_frames = " << r.active_speaker_frames << '\n'
     << "matched = " << r.matched << '\n'
     << "misses = " << r.misses << '\n'
     << "false_alarms = " << r.false_alarms << '\n'
     << "frames = " << r.frames.size() << '\n';
  os.precision(precision);
}

void write_report_json(std::ostream& os, const EvalReport& r) {
  nlohmann::json j;
  j["mae_deg"] = optional_json(r.mae_deg);
  j["md_rate_percent"] = optional_json(r.md_rate_percent);
  j["fa_rate_percent"] = optional_json(r.fa_rate_percent);
  j["id_switches"] = r.id_switches;
  j["active_speaker_frames"] = r.active_speaker_frames;
  j["matched"] = r.matched;
  j["misses"] = r.misses;
  j["false_alarms"] = r.false_alarms;
  j["frames"] = r.frames.size();
  os << j.dump(2) << '\n';
}

void write_report_frames(std::ostream& os, const EvalReport& r) {
  os << "frame,truth,estimates,matched,misses,false_alarms,id_switches,abs_error_sum\n";
  const auto precision = os.precision(10);
  for (const auto& f : r.frames) {
    os << f.frame << ',' << f.truth_count << ',' << f.estimate_count << ',' << f.matched << ','
       << f.misses << ',' << f.false_alarms << ',' << f.id_switches << ',' << f.abs_error_sum
       << '\n';
  }
  os.precision(precision);
}

}  // namespace doatrack

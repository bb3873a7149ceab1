#include "doatrack/io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

namespace doatrack {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream is(path, mode);
  if (!is) throw Error("cannot open " + path.string());
  return is;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream os(path, mode);
  if (!os) throw Error("cannot write " + path.string());
  return os;
}

// Shortest text that reads back to the same double.
std::string fmt_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

double parse_double(const std::string& text, const std::string& what) {
  const std::string s = boost::algorithm::trim_copy(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw Error("invalid number for " + what + ": '" + text + "'");
  return v;
}

long parse_long(const std::string& text, const std::string& what) {
  const std::string s = boost::algorithm::trim_copy(text);
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) throw Error("invalid integer for " + what + ": '" + text + "'");
  return v;
}

bool parse_bool(const std::string& text, const std::string& what) {
  const std::string s = boost::algorithm::to_lower_copy(boost::algorithm::trim_copy(text));
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw Error("invalid boolean for " + what + ": '" + text + "'");
}

std::vector<double> parse_numbers(const std::string& text, const std::string& what) {
  std::vector<std::string> parts;
  const std::string s = boost::algorithm::trim_copy(text);
  if (s.empty()) return {};
  boost::algorithm::split(parts, s, boost::algorithm::is_any_of(" \t,"),
                          boost::algorithm::token_compress_on);
  std::vector<double> out;
  for (const auto& p : parts) out.push_back(parse_double(p, what));
  return out;
}

// "a b; c d; ..." -> rows of numbers.
std::vector<std::vector<double>> parse_rows(const std::string& text, const std::string& what) {
  std::vector<std::string> rows;
  boost::algorithm::split(rows, text, boost::algorithm::is_any_of(";"));
  std::vector<std::vector<double>> out;
  for (const auto& r : rows) {
    if (boost::algorithm::trim_copy(r).empty()) continue;
    out.push_back(parse_numbers(r, what));
  }
  return out;
}

template <class Matrix>
std::string fmt_matrix(const Matrix& m) {
  std::string s;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (!s.empty()) s += ' ';
      s += fmt_double(m(r, c));
    }
  return s;
}

template <class Matrix>
Matrix parse_matrix(const std::string& text, const std::string& what) {
  const auto v = parse_numbers(text, what);
  Matrix m;
  if (v.size() == static_cast<std::size_t>(m.rows())) {
    m.setZero();
    for (Eigen::Index k = 0; k < m.rows(); ++k) m(k, k) = v[k];
    return m;
  }
  if (v.size() != static_cast<std::size_t>(m.size()))
    throw Error(what + " needs " + std::to_string(m.rows()) + " diagonal or " +
                std::to_string(m.size()) + " row-major entries");
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = v[r * m.cols() + c];
  return m;
}

std::string fmt_optional(const std::optional<double>& v) { return v ? fmt_double(*v) : ""; }

std::optional<double> parse_optional(const std::string& text, const std::string& what) {
  if (boost::algorithm::trim_copy(text).empty()) return std::nullopt;
  return parse_double(text, what);
}

std::string window_name(WindowType w) {
  switch (w) {
    case WindowType::hamming_periodic: return "hamming";
    case WindowType::hann_periodic: return "hann";
    case WindowType::rectangular: return "rectangular";
  }
  return "hamming";
}

WindowType parse_window(const std::string& text) {
  const std::string s = boost::algorithm::trim_copy(text);
  if (s == "hamming") return WindowType::hamming_periodic;
  if (s == "hann") return WindowType::hann_periodic;
  if (s == "rectangular") return WindowType::rectangular;
  throw Error("unknown window '" + text + "'");
}

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

#define DOUBLE_FIELD(sec, key, member)                                                   \
  Field {                                                                                \
    sec, key, [](const PipelineConfig& c) { return fmt_double(c.member); },              \
        [](PipelineConfig& c, const std::string& v) { c.member = parse_double(v, key); } \
  }
#define INT_FIELD(sec, key, member)                                                     \
  Field {                                                                               \
    sec, key, [](const PipelineConfig& c) { return std::to_string(c.member); },         \
        [](PipelineConfig& c, const std::string& v) {                                   \
          c.member = static_cast<int>(parse_long(v, key));                              \
        }                                                                               \
  }

const std::vector<Field>& config_fields() {
  static const std::vector<Field> fields = {
      INT_FIELD("audio", "sample_rate", sample_rate),
      INT_FIELD("stft", "window_length", stft.window_length),
      INT_FIELD("stft", "hop", stft.hop),
      Field{"stft", "window", [](const PipelineConfig& c) { return window_name(c.stft.window); },
            [](PipelineConfig& c, const std::string& v) { c.stft.window = parse_window(v); }},
      DOUBLE_FIELD("frontend", "floor_time_constant_s", frontend.floor_time_constant_s),
      DOUBLE_FIELD("frontend", "speech_ratio", frontend.speech_ratio),
      DOUBLE_FIELD("frontend", "power_smoothing", frontend.power_smoothing),
      INT_FIELD("frontend", "frequency_smoothing", frontend.frequency_smoothing),
      INT_FIELD("ctf", "length", ctf.ctf_length),
      INT_FIELD("ctf", "memory_frames", ctf.memory_frames),
      Field{"ctf", "forgetting", [](const PipelineConfig& c) { return fmt_optional(c.ctf.forgetting); },
            [](PipelineConfig& c, const std::string& v) {
              c.ctf.forgetting = parse_optional(v, "forgetting");
            }},
      INT_FIELD("ctf", "reference_channel", ctf.reference_channel),
      DOUBLE_FIELD("ctf", "init_delta", ctf.init_delta),
      DOUBLE_FIELD("ctf", "exact_rcond", ctf.exact_rcond),
      DOUBLE_FIELD("ctf", "consistency_tol", ctf.consistency_tol),
      DOUBLE_FIELD("ctf", "consistency_eps", ctf.consistency_eps),
      DOUBLE_FIELD("ctf", "min_freq_hz", ctf.min_freq_hz),
      Field{"ctf", "max_freq_hz", [](const PipelineConfig& c) { return fmt_optional(c.ctf.max_freq_hz); },
            [](PipelineConfig& c, const std::string& v) {
              c.ctf.max_freq_hz = parse_optional(v, "max_freq_hz");
            }},
      INT_FIELD("localizer", "grid_size", grid_size),
      DOUBLE_FIELD("localizer", "variance", localizer.variance),
      DOUBLE_FIELD("localizer", "learning_rate", localizer.learning_rate),
      DOUBLE_FIELD("localizer", "entropy_weight", localizer.entropy_weight),
      DOUBLE_FIELD("localizer", "mean_magnitude", localizer.mean_magnitude),
      DOUBLE_FIELD("localizer", "weight_floor", localizer.weight_floor),
      DOUBLE_FIELD("localizer", "peak_threshold", localizer.peak_threshold),
      DOUBLE_FIELD("localizer", "min_separation_deg", localizer.min_separation_deg),
      DOUBLE_FIELD("localizer", "gradient_clip", localizer.gradient_clip),
      Field{"localizer", "normalize_features",
            [](const PipelineConfig& c) { return std::string(c.localizer.normalize_features ? "true" : "false"); },
            [](PipelineConfig& c, const std::string& v) {
              c.localizer.normalize_features = parse_bool(v, "normalize_features");
            }},
      INT_FIELD("tracker", "max_speakers", tracker.max_speakers),
      Field{"tracker", "observation_cov",
            [](const PipelineConfig& c) { return fmt_matrix(c.tracker.observation_cov); },
            [](PipelineConfig& c, const std::string& v) {
              c.tracker.observation_cov = parse_matrix<Eigen::Matrix2d>(v, "observation_cov");
            }},
      Field{"tracker", "dynamics_cov",
            [](const PipelineConfig& c) { return fmt_matrix(c.tracker.dynamics_cov); },
            [](PipelineConfig& c, const std::string& v) {
              c.tracker.dynamics_cov = parse_matrix<Eigen::Matrix3d>(v, "dynamics_cov");
            }},
      DOUBLE_FIELD("tracker", "volume", tracker.volume),
      INT_FIELD("tracker", "vem_iterations", tracker.vem_iterations),
      Field{"tracker", "adaptive_dynamics",
            [](const PipelineConfig& c) { return std::string(c.tracker.adaptive_dynamics ? "true" : "false"); },
            [](PipelineConfig& c, const std::string& v) {
              c.tracker.adaptive_dynamics = parse_bool(v, "adaptive_dynamics");
            }},
      DOUBLE_FIELD("tracker", "dynamics_floor", tracker.dynamics_floor),
      INT_FIELD("tracker", "birth_window", tracker.birth_window),
      DOUBLE_FIELD("tracker", "birth_log_threshold", tracker.birth_log_threshold),
      Field{"tracker", "birth_cov",
            [](const PipelineConfig& c) { return fmt_matrix(c.tracker.birth_cov); },
            [](PipelineConfig& c, const std::string& v) {
              c.tracker.birth_cov = parse_matrix<Eigen::Matrix3d>(v, "birth_cov");
            }},
      DOUBLE_FIELD("tracker", "birth_min_separation_deg", tracker.birth_min_separation_deg),
      DOUBLE_FIELD("tracker", "merge_distance_deg", tracker.merge_distance_deg),
      DOUBLE_FIELD("tracker", "activity_threshold", tracker.activity_threshold),
      INT_FIELD("tracker", "activity_window", tracker.activity_window),
      INT_FIELD("tracker", "sleep_timeout", tracker.sleep_timeout),
      DOUBLE_FIELD("tracker", "min_evidence_fraction", tracker.min_evidence_fraction),
      DOUBLE_FIELD("metrics", "gate_deg", metric_gate_deg),
      Field{"run", "backend",
            [](const PipelineConfig& c) {
              return std::string(c.backend == Backend::openmp ? "openmp" : "serial");
            },
            [](PipelineConfig& c, const std::string& v) {
              const std::string s = boost::algorithm::trim_copy(v);
              if (s == "openmp")
                c.backend = Backend::openmp;
              else if (s == "serial")
                c.backend = Backend::serial;
              else
                throw Error("unknown backend '" + v + "'");
            }},
  };
  return fields;
}

#undef DOUBLE_FIELD
#undef INT_FIELD

void write_config_text(std::ostream& os, const PipelineConfig& cfg, bool with_backend) {
  std::string section;
  for (const auto& f : config_fields()) {
    if (!with_backend && std::strcmp(f.section, "run") == 0) continue;
    if (section != f.section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get(cfg) << '\n';
  }
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::uint64_t parse_hex64(const std::string& s) {
  std::size_t pos = 0;
  const std::uint64_t v = std::stoull(s, &pos, 16);
  if (pos != s.size()) throw Error("invalid fingerprint '" + s + "'");
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> parts;
  boost::algorithm::split(parts, line, boost::algorithm::is_any_of(","));
  for (auto& p : parts) boost::algorithm::trim(p);
  return parts;
}

bool next_data_line(std::istream& is, std::string& line) {
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = boost::algorithm::trim_copy(line);
    if (t.empty() || t[0] == '#') continue;
    line = t;
    return true;
  }
  return false;
}

// Parses "# key value" header lines and the column header of a record file.
struct RecordHeader {
  std::string kind;
  std::uint64_t fingerprint = 0;
  FrameClock clock;
};

RecordHeader read_record_header(std::istream& is, const std::string& expected_kind,
                                const std::string& expected_columns) {
  RecordHeader h;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] != '#') break;
    std::istringstream ls(line.substr(1));
    std::string key;
    ls >> key;
    if (key == "doatrack") {
      ls >> h.kind;
    } else if (key == "fingerprint") {
      std::string v;
      ls >> v;
      h.fingerprint = parse_hex64(v);
    } else if (key == "clock") {
      std::string kv;
      while (ls >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error("malformed clock header");
        const std::string k = kv.substr(0, eq);
        const long v = parse_long(kv.substr(eq + 1), k);
        if (k == "frames") h.clock.frames = v;
        else if (k == "hop") h.clock.hop = static_cast<int>(v);
        else if (k == "window") h.clock.window = static_cast<int>(v);
        else if (k == "rate") h.clock.sample_rate = static_cast<int>(v);
        else throw Error("unknown clock field '" + k + "'");
      }
    }
  }
  if (h.kind != expected_kind) throw Error("not a " + expected_kind + " file");
  if (boost::algorithm::trim_copy(line) != expected_columns)
    throw Error("unexpected column header in " + expected_kind + " file");
  return h;
}

void write_record_header(std::ostream& os, const std::string& kind, std::uint64_t fingerprint,
                         const FrameClock& c) {
  os << "# doatrack " << kind << '\n'
     << "# fingerprint " << hex64(fingerprint) << '\n'
     << "# clock frames=" << c.frames << " hop=" << c.hop << " window=" << c.window
     << " rate=" << c.sample_rate << '\n';
}

constexpr const char* kTrackColumns = "frame,time_s,id,azimuth_deg,velocity,active,trace";
constexpr const char* kPeakColumns = "frame,time_s,index,azimuth_deg,weight";

FrameClock clock_of(const RunResult& result, const PipelineConfig& cfg) {
  return {static_cast<long>(result.heatmap.size()), cfg.stft.hop, cfg.stft.window_length,
          cfg.sample_rate};
}

// ---- WAV helpers -------------------------------------------------------------

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}
void put16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  os.write(b, 2);
}

}  // namespace

// ---- manifest ----------------------------------------------------------------

void RunManifest::validate() const {
  for (const auto& p : inputs)
    if (!fs::exists(p)) throw Error("input not found: " + p.string());
  if (!config.empty() && !fs::exists(config)) throw Error("config not found: " + config.string());
  if (output.empty()) throw Error("no output path given");
}

// ---- audio -------------------------------------------------------------------

AudioBuffer read_wav(const fs::path& path, int target_rate) {
  auto is = open_in(path, std::ios::binary);
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                         std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw Error(name + ": not a RIFF/WAVE file");

  int format = -1, channels = 0, rate = 0, bits = 0, block_align = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw Error(name + ": truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw Error(name + ": malformed fmt chunk");
      const unsigned char* f = bytes.data() + body;
      format = le16(f);
      channels = le16(f + 2);
      rate = static_cast<int>(le32(f + 4));
      block_align = le16(f + 12);
      bits = le16(f + 14);
      if (format == 0xFFFE) {
        if (size < 40) throw Error(name + ": malformed extensible fmt chunk");
        format = le16(f + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1u);
  }
  if (format < 0) throw Error(name + ": missing fmt chunk");
  if (!data) throw Error(name + ": missing data chunk");
  if (channels < 1 || rate <= 0 || block_align != channels * (bits / 8))
    throw Error(name + ": inconsistent fmt chunk");
  const bool pcm = format == 1 && (bits == 16 || bits == 24 || bits == 32);
  const bool flt = format == 3 && (bits == 32 || bits == 64);
  if (!pcm && !flt)
    throw Error(name + ": unsupported encoding (format " + std::to_string(format) + ", " +
                std::to_string(bits) + " bits)");
  if (data_size % block_align != 0) throw Error(name + ": truncated sample data");

  const std::size_t frames = data_size / block_align;
  const int width = bits / 8;
  AudioBuffer out;
  out.sample_rate = rate;
  out.samples.resize(channels, static_cast<Eigen::Index>(frames));
  for (std::size_t n = 0; n < frames; ++n) {
    for (int c = 0; c < channels; ++c) {
      const unsigned char* p = data + n * block_align + static_cast<std::size_t>(c) * width;
      double v = 0.0;
      if (pcm) {
        if (bits == 16) {
          v = static_cast<std::int16_t>(le16(p)) / 32768.0;
        } else if (bits == 24) {
          std::int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
          if (s & 0x800000) s -= 0x1000000;
          v = s / 8388608.0;
        } else {
          v = static_cast<std::int32_t>(le32(p)) / 2147483648.0;
        }
      } else if (bits == 32) {
        float f;
        std::memcpy(&f, p, 4);
        v = f;
      } else {
        double d;
        std::memcpy(&d, p, 8);
        v = d;
      }
      out.samples(c, static_cast<Eigen::Index>(n)) = v;
    }
  }
  if (target_rate > 0 && target_rate != rate) {
    out.samples = resample(out.samples, rate, target_rate);
    out.sample_rate = target_rate;
  }
  return out;
}

void write_wav(const fs::path& path, const AudioBuffer& audio, WavFormat format) {
  auto os = open_out(path, std::ios::binary);
  const int channels = audio.channels();
  const int width = format == WavFormat::pcm16 ? 2 : 4;
  const auto frames = static_cast<std::uint64_t>(audio.length());
  const std::uint64_t data_size = frames * channels * width;
  if (data_size + 36 > 0xffffffffULL) throw Error("audio too long for a WAV file");
  os.write("RIFF", 4);
  put32(os, static_cast<std::uint32_t>(36 + data_size));
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put32(os, 16);
  put16(os, format == WavFormat::pcm16 ? 1 : 3);
  put16(os, static_cast<std::uint16_t>(channels));
  put32(os, static_cast<std::uint32_t>(audio.sample_rate));
  put32(os, static_cast<std::uint32_t>(audio.sample_rate * channels * width));
  put16(os, static_cast<std::uint16_t>(channels * width));
  put16(os, static_cast<std::uint16_t>(width * 8));
  os.write("data", 4);
  put32(os, static_cast<std::uint32_t>(data_size));
  for (std::uint64_t n = 0; n < frames; ++n) {
    for (int c = 0; c < channels; ++c) {
      const double v = audio.samples(c, static_cast<Eigen::Index>(n));
      if (format == WavFormat::pcm16) {
        const long q = std::clamp(std::lround(v * 32768.0), -32768L, 32767L);
        put16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
      } else {
        const float f = static_cast<float>(v);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        put32(os, u);
      }
    }
  }
  if (!os) throw Error("failed writing " + path.string());
}

SignalMatrix resample(const SignalMatrix& in, int from_rate, int to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw Error("sample rates must be positive");
  if (from_rate == to_rate) return in;
  const long g = std::gcd(from_rate, to_rate);
  const long up = to_rate / g;
  const long down = from_rate / g;

  // Kaiser-windowed sinc, cutoff at the lower Nyquist, 16 zero crossings.
  const double cutoff = std::min(1.0, static_cast<double>(to_rate) / from_rate);
  const int half = static_cast<int>(std::ceil(16.0 / cutoff));
  const double beta = 8.6;
  const double norm = std::cyl_bessel_i(0.0, beta);
  auto kernel = [&](double x) {
    const double r = x / half;
    if (std::abs(r) >= 1.0) return 0.0;
    const double w = std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - r * r)) / norm;
    const double arg = kPi * cutoff * x;
    const double sinc = x == 0.0 ? 1.0 : std::sin(arg) / arg;
    return cutoff * sinc * w;
  };

  // Output sample m sits at input position m * down / up; the fractional
  // part cycles through `up` phases.
  const int taps = 2 * half;
  std::vector<double> table(static_cast<std::size_t>(up) * taps);
  for (long p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / up;
    for (int j = 0; j < taps; ++j) table[p * taps + j] = kernel(frac + half - 1 - j);
  }

  const long n_in = in.cols();
  const long n_out = (n_in * up + down - 1) / down;
  SignalMatrix out(in.rows(), n_out);
  for (Eigen::Index c = 0; c < in.rows(); ++c) {
    for (long m = 0; m < n_out; ++m) {
      const long num = m * down;
      const long base = num / up;
      const long phase = num % up;
      const double* h = table.data() + phase * taps;
      double acc = 0.0;
      for (int j = 0; j < taps; ++j) {
        const long k = base - half + 1 + j;
        if (k >= 0 && k < n_in) acc += h[j] * in(c, k);
      }
      out(c, m) = acc;
    }
  }
  return out;
}

// ---- geometry ----------------------------------------------------------------

ArrayGeometry parse_geometry(std::istream& is) {
  ArrayGeometry g;
  std::string line;
  int row = 0;
  while (next_data_line(is, line)) {
    std::istringstream ls(line);
    ls.imbue(std::locale::classic());
    if (line.rfind("speed_of_sound", 0) == 0) {
      std::string key, value;
      ls >> key >> value;
      g.speed_of_sound = parse_double(value, "speed_of_sound");
      continue;
    }
    ++row;
    std::vector<std::string> parts;
    boost::algorithm::split(parts, line, boost::algorithm::is_any_of(" \t,"),
                            boost::algorithm::token_compress_on);
    if (parts.size() != 3) throw Error("geometry row " + std::to_string(row) + ": expected x y z");
    g.positions.emplace_back(parse_double(parts[0], "x"), parse_double(parts[1], "y"),
                             parse_double(parts[2], "z"));
  }
  g.validate();
  return g;
}

ArrayGeometry read_geometry(const fs::path& path) {
  auto is = open_in(path);
  try {
    return parse_geometry(is);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_geometry(std::ostream& os, const ArrayGeometry& geom) {
  os << "speed_of_sound " << fmt_double(geom.speed_of_sound) << '\n';
  for (const auto& p : geom.positions)
    os << fmt_double(p.x()) << ' ' << fmt_double(p.y()) << ' ' << fmt_double(p.z()) << '\n';
}

// ---- truth -------------------------------------------------------------------

GroundTruth read_truth(const fs::path& path) {
  auto is = open_in(path);
  GroundTruth truth;
  std::string line;
  bool header = true;
  while (next_data_line(is, line)) {
    if (header) {
      header = false;
      if (line != "time_s,speaker,azimuth_deg,active") throw Error(path.string() + ": unexpected truth header");
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 4) throw Error(path.string() + ": truth rows need 4 fields");
    const double t = parse_double(f[0], "time_s");
    if (truth.empty() || truth.back().time_s != t) {
      if (!truth.empty() && t < truth.back().time_s) throw Error(path.string() + ": truth times must be sorted");
      truth.push_back({t, {}});
    }
    truth.back().speakers.push_back({static_cast<int>(parse_long(f[1], "speaker")),
                                     wrap_degrees(parse_double(f[2], "azimuth_deg")),
                                     parse_bool(f[3], "active")});
  }
  return truth;
}

void write_truth(std::ostream& os, const GroundTruth& truth) {
  os << "time_s,speaker,azimuth_deg,active\n";
  for (const auto& f : truth)
    for (const auto& s : f.speakers)
      os << fmt_double(f.time_s) << ',' << s.speaker << ',' << fmt_double(s.azimuth_deg) << ','
         << (s.active ? 1 : 0) << '\n';
}

// ---- tracks and peaks --------------------------------------------------------

double FrameClock::time(long frame) const {
  return (static_cast<double>(frame) * hop + window / 2.0) / sample_rate;
}

void write_tracks(std::ostream& os, const TrackFile& file) {
  write_record_header(os, "tracks", file.fingerprint, file.clock);
  os << kTrackColumns << '\n';
  for (const auto& r : file.records)
    os << r.frame << ',' << fmt_double(r.time_s) << ',' << r.track.id << ','
       << fmt_double(r.track.azimuth_deg) << ',' << fmt_double(r.track.velocity) << ','
       << (r.track.active ? 1 : 0) << ',' << fmt_double(r.track.trace) << '\n';
}

TrackFile read_tracks(std::istream& is) {
  const RecordHeader h = read_record_header(is, "tracks", kTrackColumns);
  TrackFile file;
  file.clock = h.clock;
  file.fingerprint = h.fingerprint;
  std::string line;
  while (next_data_line(is, line)) {
    const auto f = split_csv(line);
    if (f.size() != 7) throw Error("track rows need 7 fields");
    TrackRecord r;
    r.frame = parse_long(f[0], "frame");
    r.time_s = parse_double(f[1], "time_s");
    r.track.id = static_cast<int>(parse_long(f[2], "id"));
    r.track.azimuth_deg = parse_double(f[3], "azimuth_deg");
    r.track.velocity = parse_double(f[4], "velocity");
    r.track.active = parse_bool(f[5], "active");
    r.track.trace = parse_double(f[6], "trace");
    if (r.frame < 0 || r.frame >= file.clock.frames) throw Error("track frame outside the clock");
    file.records.push_back(r);
  }
  return file;
}

TrackFile read_tracks(const fs::path& path) {
  auto is = open_in(path);
  try {
    return read_tracks(is);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::vector<EstimateFrame> estimates_from_tracks(const TrackFile& file) {
  std::vector<EstimateFrame> out(static_cast<std::size_t>(file.clock.frames));
  for (const auto& r : file.records)
    if (r.track.active) out.at(r.frame).push_back({r.track.id, r.track.azimuth_deg});
  return out;
}

void write_peaks(std::ostream& os, const PeakFile& file) {
  write_record_header(os, "peaks", file.fingerprint, file.clock);
  os << kPeakColumns << '\n';
  for (std::size_t t = 0; t < file.peaks.size(); ++t)
    for (const auto& p : file.peaks[t])
      os << t << ',' << fmt_double(file.clock.time(static_cast<long>(t))) << ',' << p.index << ','
         << fmt_double(p.azimuth_deg) << ',' << fmt_double(p.weight) << '\n';
}

PeakFile read_peaks(std::istream& is) {
  const RecordHeader h = read_record_header(is, "peaks", kPeakColumns);
  PeakFile file;
  file.clock = h.clock;
  file.fingerprint = h.fingerprint;
  file.peaks.resize(static_cast<std::size_t>(h.clock.frames));
  std::string line;
  while (next_data_line(is, line)) {
    const auto f = split_csv(line);
    if (f.size() != 5) throw Error("peak rows need 5 fields");
    const long t = parse_long(f[0], "frame");
    if (t < 0 || t >= h.clock.frames) throw Error("peak frame outside the clock");
    file.peaks[t].push_back({static_cast<int>(parse_long(f[2], "index")),
                             parse_double(f[3], "azimuth_deg"), parse_double(f[4], "weight")});
  }
  return file;
}

EstimateSequence read_estimates(const fs::path& path) {
  std::string first;
  {
    auto is = open_in(path);
    std::getline(is, first);
  }
  auto is = open_in(path);
  EstimateSequence seq;
  FrameClock clock;
  try {
    if (first.rfind("# doatrack peaks", 0) == 0) {
      const PeakFile pf = read_peaks(is);
      clock = pf.clock;
      seq.fingerprint = pf.fingerprint;
      seq.frames.resize(pf.peaks.size());
      for (std::size_t t = 0; t < pf.peaks.size(); ++t)
        for (const auto& p : pf.peaks[t]) seq.frames[t].push_back({-1, p.azimuth_deg});
    } else {
      const TrackFile tf = read_tracks(is);
      clock = tf.clock;
      seq.fingerprint = tf.fingerprint;
      seq.frames = estimates_from_tracks(tf);
    }
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
  for (long t = 0; t < clock.frames; ++t) seq.times.push_back(clock.time(t));
  return seq;
}

// ---- configuration -----------------------------------------------------------

std::uint64_t PipelineConfig::fingerprint() const {
  // FNV-1a over the canonical text form; the backend does not change results
  // and is left out.
  std::ostringstream os;
  write_config_text(os, *this, false);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

PipelineConfig parse_pipeline_config(std::istream& is) {
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(std::string("config: ") + e.what());
  }
  std::map<std::pair<std::string, std::string>, const Field*> index;
  for (const auto& f : config_fields()) index[{f.section, f.key}] = &f;

  PipelineConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw Error("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      auto it = index.find({section, key});
      if (it == index.end()) throw Error("config: unknown key [" + section + "] " + key);
      it->second->set(cfg, value.data());
    }
  }
  cfg.validate();
  return cfg;
}

PipelineConfig read_pipeline_config(const fs::path& path) {
  auto is = open_in(path);
  try {
    return parse_pipeline_config(is);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_pipeline_config(std::ostream& os, const PipelineConfig& cfg) {
  write_config_text(os, cfg, true);
}

SceneConfig parse_scene_config(std::istream& is, const fs::path& base_dir) {
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(std::string("scene: ") + e.what());
  }
  SceneConfig cfg;
  bool have_geometry = false;
  std::optional<double> speed;

  auto unknown = [](const std::string& sec, const std::string& key) {
    return Error("scene: unknown key [" + sec + "] " + key);
  };

  for (const auto& [section, body] : tree) {
    if (section == "scene") {
      for (const auto& [key, v] : body) {
        const std::string& s = v.data();
        if (key == "duration_s") cfg.duration_s = parse_double(s, key);
        else if (key == "sample_rate") cfg.sample_rate = static_cast<int>(parse_long(s, key));
        else if (key == "snr_db") cfg.snr_db = parse_double(s, key);
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_long(s, key));
        else if (key == "speed_of_sound") speed = parse_double(s, key);
        else if (key == "geometry") {
          cfg.geometry = read_geometry(base_dir / boost::algorithm::trim_copy(s));
          have_geometry = true;
        } else if (key == "mics") {
          cfg.geometry.positions.clear();
          for (const auto& row : parse_rows(s, key)) {
            if (row.size() != 3) throw Error("scene: each mic needs x y z");
            cfg.geometry.positions.emplace_back(row[0], row[1], row[2]);
          }
          have_geometry = true;
        } else if (key == "window_length") {
          cfg.frame_clock.window_length = static_cast<int>(parse_long(s, key));
        } else if (key == "hop") {
          cfg.frame_clock.hop = static_cast<int>(parse_long(s, key));
        } else {
          throw unknown(section, key);
        }
      }
    } else if (section == "reverb") {
      for (const auto& [key, v] : body) {
        const std::string& s = v.data();
        if (key == "enabled") cfg.reverb.enabled = parse_bool(s, key);
        else if (key == "t60_s") cfg.reverb.t60_s = parse_double(s, key);
        else if (key == "drr_db") cfg.reverb.drr_db = parse_double(s, key);
        else throw unknown(section, key);
      }
    } else if (section.rfind("source", 0) == 0) {
      SourceSpec src;
      const std::string suffix = section.substr(6);
      src.id = suffix.empty() ? static_cast<int>(cfg.sources.size()) + 1
                              : static_cast<int>(parse_long(suffix, "source section"));
      for (const auto& [key, v] : body) {
        const std::string& s = v.data();
        if (key == "id") {
          src.id = static_cast<int>(parse_long(s, key));
        } else if (key == "signal") {
          const std::string t = boost::algorithm::trim_copy(s);
          if (t == "white_noise") src.signal = SourceSignal::white_noise;
          else if (t == "speech_like") src.signal = SourceSignal::speech_like;
          else if (t == "file") src.signal = SourceSignal::file;
          else throw Error("scene: unknown signal '" + s + "'");
        } else if (key == "file") {
          src.file = (base_dir / boost::algorithm::trim_copy(s)).string();
        } else if (key == "gain_db") {
          src.gain_db = parse_double(s, key);
        } else if (key == "azimuth_deg") {
          src.trajectory = {{0.0, parse_double(s, key)}};
        } else if (key == "trajectory") {
          src.trajectory.clear();
          for (const auto& row : parse_rows(s, key)) {
            if (row.size() != 2) throw Error("scene: trajectory points are 'time azimuth'");
            src.trajectory.push_back({row[0], row[1]});
          }
        } else if (key == "activity") {
          src.activity.clear();
          for (const auto& row : parse_rows(s, key)) {
            if (row.size() != 2) throw Error("scene: activity intervals are 'start end'");
            src.activity.push_back({row[0], row[1]});
          }
        } else {
          throw unknown(section, key);
        }
      }
      cfg.sources.push_back(std::move(src));
    } else {
      throw Error("scene: unknown section [" + section + "]");
    }
  }
  if (!have_geometry) throw Error("scene: no geometry given (geometry = file or mics = ...)");
  if (speed) cfg.geometry.speed_of_sound = *speed;
  cfg.validate();
  return cfg;
}

SceneConfig read_scene_config(const fs::path& path) {
  auto is = open_in(path);
  try {
    return parse_scene_config(is, path.parent_path());
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

// ---- results -----------------------------------------------------------------

void write_heatmap(std::ostream& os, const RunResult& result, std::uint64_t fingerprint) {
  os << "# fingerprint " << hex64(fingerprint) << '\n' << "frame,time_s";
  for (double a : result.azimuths) os << ',' << fmt_double(a);
  os << '\n';
  for (std::size_t t = 0; t < result.heatmap.size(); ++t) {
    os << t << ',' << fmt_double(result.frame_times[t]);
    for (double w : result.heatmap[t]) os << ',' << fmt_double(w);
    os << '\n';
  }
}

TrackFile make_track_file(const RunResult& result, const PipelineConfig& cfg) {
  return {clock_of(result, cfg), cfg.fingerprint(), result.tracks};
}

PeakFile make_peak_file(const RunResult& result, const PipelineConfig& cfg) {
  return {clock_of(result, cfg), cfg.fingerprint(), result.peaks};
}

void write_report(const fs::path& dir, const EvalReport& report, std::uint64_t fingerprint) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  {
    auto os = open_out(dir / "report.txt");
    os << "config_fingerprint = " << hex64(fingerprint) << '\n';
    write_report_text(os, report);
  }
  {
    std::ostringstream js;
    write_report_json(js, report);
    auto j = nlohmann::json::parse(js.str());
    j["config_fingerprint"] = hex64(fingerprint);
    auto os = open_out(dir / "report.json");
    os << j.dump(2) << '\n';
  }
  {
    auto os = open_out(dir / "report_frames.csv");
    os << "# fingerprint " << hex64(fingerprint) << '\n';
    write_report_frames(os, report);
  }
}

void write_results(const fs::path& dir, const RunResult& result, const PipelineConfig& cfg,
                   bool tracking, const EvalReport* report) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  const std::uint64_t fp = cfg.fingerprint();
  {
    auto os = open_out(dir / "heatmap.csv");
    write_heatmap(os, result, fp);
  }
  if (tracking) {
    auto os = open_out(dir / "tracks.csv");
    write_tracks(os, make_track_file(result, cfg));
  } else {
    auto os = open_out(dir / "peaks.csv");
    write_peaks(os, make_peak_file(result, cfg));
  }
  {
    auto os = open_out(dir / "config.ini");
    write_pipeline_config(os, cfg);
  }
  if (report) write_report(dir, *report, fp);
}

}  // namespace doatrack

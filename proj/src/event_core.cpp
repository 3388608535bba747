// Copyright 2026 The AnonyNoise Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "anony/event_core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "sample archive assumes a little-endian host");

namespace anony::event {

namespace fs = std::filesystem;
using nlohmann::json;

void EventStream::validate() const {
  std::int64_t prev_t = INT64_MIN;
  for (size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (e.x < 0 || e.x >= width || e.y < 0 || e.y >= height)
      throw std::invalid_argument("event " + std::to_string(i) + " at (" +
                                  std::to_string(e.x) + "," + std::to_string(e.y) +
                                  ") outside " + std::to_string(width) + "x" +
                                  std::to_string(height) + " sensor");
    if (e.p != 0 && e.p != 1)
      throw std::invalid_argument("event " + std::to_string(i) + " has polarity " +
                                  std::to_string(e.p));
    if (e.t < prev_t)
      throw std::invalid_argument("event " + std::to_string(i) +
                                  " has decreasing timestamp");
    prev_t = e.t;
  }
}

void AugmentationConfig::validate() const {
  if (pad_fraction < 0 || pad_fraction >= 1)
    throw std::invalid_argument("pad_fraction must be in [0, 1)");
  if (rotation_max_deg < 0 || rotation_max_deg >= 90)
    throw std::invalid_argument("rotation_max_deg must be in [0, 90)");
}

void SyntheticDatasetSpec::validate() const {
  if (n_subjects < 1 || n_target_classes < 1 || samples_per_pair < 1 || height < 1 ||
      width < 1 || T < 1 || events_per_sample < 1)
    throw std::invalid_argument("synthetic spec: all counts must be >= 1");
  if (identity_signature_strength < 0 || identity_signature_strength > 1 ||
      motion_pattern_strength < 0 || motion_pattern_strength > 1)
    throw std::invalid_argument("synthetic spec: strengths must be in [0, 1]");
}

EventHistogram build_histogram(const EventStream& stream, int T,
                               std::int64_t window_us) {
  if (T < 1) throw std::invalid_argument("build_histogram: T must be >= 1");
  stream.validate();
  EventHistogram hist;
  hist.T = T;
  hist.data = Tensor({2 * T, stream.height, stream.width});
  if (stream.events.empty()) return hist;

  const std::int64_t t0 = stream.events.front().t;
  std::int64_t t1 = stream.events.back().t;
  if (window_us > 0) t1 = std::min(t1, t0 + window_us);
  const std::int64_t span = t1 - t0;

  for (const Event& e : stream.events) {
    if (e.t > t1) continue;
    int bin = 0;
    if (span > 0) {
      bin = static_cast<int>(((e.t - t0) * T) / span);
      if (bin >= T) bin = T - 1;  // right-closed last bin
    }
    hist.data.at(e.p * T + bin, e.y, e.x) += 1.0f;
  }
  return hist;
}

EventHistogram histogram_from_frames(const std::vector<Tensor>& frames, int T) {
  if (frames.empty()) throw std::invalid_argument("histogram_from_frames: no frames");
  if (static_cast<int>(frames.size()) < T)
    throw std::invalid_argument("histogram_from_frames: fewer frames than bins");
  const int H = frames[0].dim(1), W = frames[0].dim(2);
  for (const Tensor& f : frames)
    if (f.ndim() != 3 || f.dim(0) != 2 || f.dim(1) != H || f.dim(2) != W)
      throw std::invalid_argument("histogram_from_frames: frame shape mismatch");

  EventHistogram hist;
  hist.T = T;
  hist.data = Tensor({2 * T, H, W});
  const int M = static_cast<int>(frames.size());
  for (int i = 0; i < M; ++i) {
    int bin = std::min(i * T / M, T - 1);
    for (int p = 0; p < 2; ++p)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          hist.data.at(p * T + bin, y, x) += frames[i].at(p, y, x);
  }
  return hist;
}

EventHistogram resize_nearest(const EventHistogram& hist, int new_h, int new_w) {
  const int C = hist.channels(), H = hist.height(), W = hist.width();
  EventHistogram out;
  out.T = hist.T;
  out.data = Tensor({C, new_h, new_w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < new_h; ++y) {
      int sy = std::min(static_cast<int>(static_cast<std::int64_t>(y) * H / new_h), H - 1);
      for (int x = 0; x < new_w; ++x) {
        int sx = std::min(static_cast<int>(static_cast<std::int64_t>(x) * W / new_w), W - 1);
        out.data.at(c, y, x) = hist.data.at(c, sy, sx);
      }
    }
  return out;
}

EventHistogram augment_with(const EventHistogram& hist, int pad_h, int pad_w,
                            int crop_y, int crop_x, bool flip, double angle_deg,
                            bool bilinear) {
  const int C = hist.channels(), H = hist.height(), W = hist.width();
  Tensor cur(hist.data.shape);

  // pad + crop + flip in one gather
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        int sy = y + crop_y - pad_h;
        int sx = x + crop_x - pad_w;
        float val = (sy >= 0 && sy < H && sx >= 0 && sx < W) ? hist.data.at(c, sy, sx) : 0.0f;
        cur.at(c, y, flip ? W - 1 - x : x) = val;
      }

  if (angle_deg != 0.0) {
    const double th = angle_deg * M_PI / 180.0;
    const double cs = std::cos(th), sn = std::sin(th);
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    Tensor rot(hist.data.shape);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        // inverse rotation of the output grid
        double dy = y - cy, dx = x - cx;
        double sy = cs * dy + sn * dx + cy;
        double sx = -sn * dy + cs * dx + cx;
        if (bilinear) {
          int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
          double fy = sy - y0, fx = sx - x0;
          for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int oy = 0; oy < 2; ++oy)
              for (int ox = 0; ox < 2; ++ox) {
                int yy = y0 + oy, xx = x0 + ox;
                if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                double wgt = (oy ? fy : 1 - fy) * (ox ? fx : 1 - fx);
                acc += wgt * cur.at(c, yy, xx);
              }
            rot.at(c, y, x) = static_cast<float>(acc);
          }
        } else {
          int yy = static_cast<int>(std::lround(sy)), xx = static_cast<int>(std::lround(sx));
          if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
          for (int c = 0; c < C; ++c) rot.at(c, y, x) = cur.at(c, yy, xx);
        }
      }
    cur = std::move(rot);
  }

  EventHistogram out;
  out.T = hist.T;
  out.data = std::move(cur);
  return out;
}

EventHistogram augment(const EventHistogram& hist, const AugmentationConfig& cfg,
                       Rng& rng) {
  cfg.validate();
  if (!cfg.enabled) return hist;
  const int H = hist.height(), W = hist.width();
  const int pad_h = static_cast<int>(std::lround(cfg.pad_fraction * H));
  const int pad_w = static_cast<int>(std::lround(cfg.pad_fraction * W));
  const int crop_y = static_cast<int>(rng.uniform_int(2 * pad_h + 1));
  const int crop_x = static_cast<int>(rng.uniform_int(2 * pad_w + 1));
  const bool flip = cfg.horizontal_flip && rng.uniform() < 0.5;
  const double angle =
      cfg.rotation_max_deg > 0 ? rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg)
                               : 0.0;
  return augment_with(hist, pad_h, pad_w, crop_y, crop_x, flip, angle,
                      cfg.bilinear_rotation);
}

ReIdSplit build_reid_split(const std::vector<LabeledSample>& samples,
                           SplitProtocol protocol, std::uint64_t seed) {
  std::set<std::string> keys;
  for (const auto& s : samples)
    if (!keys.insert(s.sample_key).second)
      throw std::invalid_argument("duplicate sample_key: " + s.sample_key);

  Rng rng(seed ^ 0x5b1d5f1ed5eedull);
  ReIdSplit split;

  if (protocol == SplitProtocol::kDvsGesture) {
    split.exclusion_rule = ExclusionRule::kSameSubjectAndLabel;
    // one random sample per (subject, label) pair into the query; everything
    // is gallery, with same-(subject,label) entries excluded at lookup time
    std::map<std::pair<int, int>, std::vector<int>> groups;
    for (int i = 0; i < static_cast<int>(samples.size()); ++i)
      groups[{samples[i].subject_id, samples[i].target_label}].push_back(i);
    for (auto& [key, idx] : groups) {
      split.query.push_back(idx[static_cast<size_t>(rng.uniform_int(idx.size()))]);
    }
    for (int i = 0; i < static_cast<int>(samples.size()); ++i) split.gallery.push_back(i);
  } else {
    split.exclusion_rule = ExclusionRule::kNone;
    std::map<int, std::vector<int>> by_subject;
    for (int i = 0; i < static_cast<int>(samples.size()); ++i)
      by_subject[samples[i].subject_id].push_back(i);
    std::set<int> query_set;
    std::vector<std::string> short_subjects;
    for (auto& [sid, idx] : by_subject) {
      if (idx.size() < 3) {
        short_subjects.push_back(std::to_string(sid));
        continue;
      }
      std::vector<int> order(idx.size());
      for (size_t i = 0; i < idx.size(); ++i) order[i] = static_cast<int>(i);
      rng.shuffle(order);
      query_set.insert(idx[static_cast<size_t>(order[0])]);
      query_set.insert(idx[static_cast<size_t>(order[1])]);
    }
    if (!short_subjects.empty()) {
      std::string list;
      for (const auto& s : short_subjects) list += (list.empty() ? "" : ", ") + s;
      throw std::invalid_argument("subjects with too few samples for the SEE protocol: " +
                                  list);
    }
    for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
      if (query_set.count(i))
        split.query.push_back(i);
      else
        split.gallery.push_back(i);
    }
  }

  // every query must retain at least one same-subject candidate
  for (int q : split.query) {
    bool any_relevant = false;
    for (int g : valid_candidates(split, samples, q))
      if (samples[static_cast<size_t>(g)].subject_id ==
          samples[static_cast<size_t>(q)].subject_id) {
        any_relevant = true;
        break;
      }
    if (!any_relevant)
      throw std::invalid_argument("query " + samples[static_cast<size_t>(q)].sample_key +
                                  " has no relevant gallery sample after exclusion");
  }
  return split;
}

std::vector<int> valid_candidates(const ReIdSplit& split,
                                  const std::vector<LabeledSample>& samples,
                                  int query_index) {
  const LabeledSample& q = samples[static_cast<size_t>(query_index)];
  std::vector<int> out;
  for (int g : split.gallery) {
    const LabeledSample& c = samples[static_cast<size_t>(g)];
    if (c.sample_key == q.sample_key) continue;
    if (split.exclusion_rule == ExclusionRule::kSameSubjectAndLabel &&
        c.subject_id == q.subject_id && c.target_label == q.target_label)
      continue;
    out.push_back(g);
  }
  return out;
}

namespace {

struct Blob {
  double y, x;
  int polarity;
};

std::vector<Blob> subject_signature(const SyntheticDatasetSpec& spec, int subject) {
  Rng rng(spec.seed * 0x9e37ull + 0xb10b5ull * static_cast<std::uint64_t>(subject + 1));
  std::vector<Blob> blobs;
  const int n_blobs = 3;
  for (int b = 0; b < n_blobs; ++b) {
    Blob blob;
    blob.y = rng.uniform(2.0, spec.height - 3.0);
    blob.x = rng.uniform(2.0, spec.width - 3.0);
    blob.polarity = static_cast<int>(rng.uniform_int(2));
    blobs.push_back(blob);
  }
  return blobs;
}

}  // namespace

std::vector<LabeledSample> generate_synthetic_dataset(const SyntheticDatasetSpec& spec) {
  spec.validate();
  const std::int64_t duration = 1000000;  // 1 s per sample
  std::vector<LabeledSample> out;
  out.reserve(static_cast<size_t>(spec.n_subjects) * spec.n_target_classes *
              spec.samples_per_pair);

  for (int subject = 0; subject < spec.n_subjects; ++subject) {
    std::vector<Blob> signature = subject_signature(spec, subject);
    for (int cls = 0; cls < spec.n_target_classes; ++cls) {
      const double theta = 2.0 * M_PI * cls / spec.n_target_classes;
      const double dir_y = std::sin(theta), dir_x = std::cos(theta);
      for (int rep = 0; rep < spec.samples_per_pair; ++rep) {
        Rng rng(spec.seed + hash64("sample-" + std::to_string(subject) + "-" +
                                   std::to_string(cls) + "-" + std::to_string(rep)));
        const int n_total = spec.events_per_sample;
        const int n_id = static_cast<int>(
            std::lround(0.4 * spec.identity_signature_strength * n_total));
        const int n_mot = static_cast<int>(
            std::lround(0.4 * spec.motion_pattern_strength * n_total));
        const int n_noise = n_total - n_id - n_mot;

        std::vector<Event> events;
        events.reserve(static_cast<size_t>(n_total));
        auto clampi = [](double v, int hi) {
          int i = static_cast<int>(std::lround(v));
          return std::max(0, std::min(hi - 1, i));
        };

        // static per-subject signature blobs
        for (int i = 0; i < n_id; ++i) {
          const Blob& b = signature[static_cast<size_t>(rng.uniform_int(signature.size()))];
          Event e;
          e.y = clampi(b.y + rng.normal(0.0, 0.8), spec.height);
          e.x = clampi(b.x + rng.normal(0.0, 0.8), spec.width);
          e.t = rng.uniform_int(duration);
          e.p = b.polarity;
          events.push_back(e);
        }

        // class-specific moving blob
        const double span = 0.6 * std::min(spec.height, spec.width);
        const double cy = (spec.height - 1) / 2.0 + rng.uniform(-1.5, 1.5);
        const double cx = (spec.width - 1) / 2.0 + rng.uniform(-1.5, 1.5);
        for (int i = 0; i < n_mot; ++i) {
          std::int64_t t = rng.uniform_int(duration);
          double frac = static_cast<double>(t) / duration - 0.5;
          Event e;
          e.y = clampi(cy + dir_y * span * frac + rng.normal(0.0, 1.0), spec.height);
          e.x = clampi(cx + dir_x * span * frac + rng.normal(0.0, 1.0), spec.width);
          e.t = t;
          e.p = static_cast<int>(rng.uniform_int(2));
          events.push_back(e);
        }

        // uniform background
        for (int i = 0; i < n_noise; ++i) {
          Event e;
          e.y = static_cast<int>(rng.uniform_int(spec.height));
          e.x = static_cast<int>(rng.uniform_int(spec.width));
          e.t = rng.uniform_int(duration);
          e.p = static_cast<int>(rng.uniform_int(2));
          events.push_back(e);
        }

        std::sort(events.begin(), events.end(),
                  [](const Event& a, const Event& b) { return a.t < b.t; });

        EventStream stream;
        stream.width = spec.width;
        stream.height = spec.height;
        stream.events = std::move(events);

        LabeledSample sample;
        sample.histogram = build_histogram(stream, spec.T);
        sample.subject_id = subject;
        sample.target_label = cls;
        sample.sample_key = "synth-s" + std::to_string(subject) + "-c" +
                            std::to_string(cls) + "-i" + std::to_string(rep);
        out.push_back(std::move(sample));
      }
    }
  }
  return out;
}

EventStream load_event_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open event file: " + path);
  EventStream stream;
  std::string line;
  std::int64_t offset = 0;
  int line_no = 0;

  auto fail = [&](const std::string& what) {
    throw std::runtime_error(path + ": " + what + " at line " + std::to_string(line_no) +
                             " (byte offset " + std::to_string(offset) + ")");
  };

  // sidecar geometry line
  if (!std::getline(in, line)) fail("missing geometry line");
  ++line_no;
  if (std::sscanf(line.c_str(), "# width=%d height=%d", &stream.width, &stream.height) != 2)
    fail("malformed geometry line, expected '# width=W height=H'");
  if (stream.width < 1 || stream.height < 1) fail("non-positive sensor geometry");
  offset += static_cast<std::int64_t>(line.size()) + 1;

  if (!std::getline(in, line)) fail("missing header line");
  ++line_no;
  if (line != "x,y,t,p") fail("malformed header, expected 'x,y,t,p'");
  offset += static_cast<std::int64_t>(line.size()) + 1;

  std::int64_t prev_t = INT64_MIN;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      offset += 1;
      continue;
    }
    Event e;
    long long t = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%lld,%d", &e.x, &e.y, &t, &e.p) != 4)
      fail("malformed event record '" + line + "'");
    e.t = t;
    if (e.x < 0 || e.x >= stream.width || e.y < 0 || e.y >= stream.height)
      fail("event coordinates (" + std::to_string(e.x) + "," + std::to_string(e.y) +
           ") outside sensor");
    if (e.p != 0 && e.p != 1) fail("polarity must be 0 or 1");
    if (e.t < prev_t) fail("decreasing timestamp");
    prev_t = e.t;
    stream.events.push_back(e);
    offset += static_cast<std::int64_t>(line.size()) + 1;
  }
  return stream;
}

namespace {

std::string tensor_file_name(const std::string& key) {
  std::string name;
  for (char c : key)
    name += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return name + ".bin";
}

}  // namespace

void save_samples(const std::vector<LabeledSample>& samples, const std::string& dir) {
  if (samples.empty()) throw std::invalid_argument("save_samples: empty sample list");
  const int C = samples[0].histogram.channels();
  const int H = samples[0].histogram.height();
  const int W = samples[0].histogram.width();
  const int T = samples[0].histogram.T;
  fs::create_directories(dir);

  json manifest;
  manifest["schema_version"] = 1;
  manifest["T"] = T;
  manifest["H"] = H;
  manifest["W"] = W;
  manifest["samples"] = json::array();

  for (const auto& s : samples) {
    if (s.histogram.channels() != C || s.histogram.height() != H ||
        s.histogram.width() != W)
      throw std::invalid_argument("save_samples: inhomogeneous tensor shapes");
    std::string fname = tensor_file_name(s.sample_key);
    std::ofstream out(fs::path(dir) / fname, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + fname);
    out.write(reinterpret_cast<const char*>(s.histogram.data.v.data()),
              static_cast<std::streamsize>(s.histogram.data.v.size() * sizeof(float)));
    manifest["samples"].push_back({{"sample_key", s.sample_key},
                                   {"subject_id", s.subject_id},
                                   {"target_label", s.target_label},
                                   {"tensor_file", fname}});
  }

  std::ofstream mf(fs::path(dir) / "manifest.json");
  mf << manifest.dump(2) << "\n";
}

std::vector<LabeledSample> load_samples(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("cannot open manifest.json in " + dir);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed manifest.json in " + dir + ": " + e.what());
  }
  if (manifest.value("schema_version", 0) != 1)
    throw std::runtime_error("unsupported sample archive schema_version");
  const int T = manifest.at("T").get<int>();
  const int H = manifest.at("H").get<int>();
  const int W = manifest.at("W").get<int>();
  const size_t n_floats = static_cast<size_t>(2 * T) * H * W;

  std::vector<LabeledSample> out;
  for (const auto& entry : manifest.at("samples")) {
    LabeledSample s;
    s.sample_key = entry.at("sample_key").get<std::string>();
    s.subject_id = entry.at("subject_id").get<int>();
    s.target_label = entry.at("target_label").get<int>();
    s.histogram.T = T;
    s.histogram.data = Tensor({2 * T, H, W});
    fs::path tf = fs::path(dir) / entry.at("tensor_file").get<std::string>();
    std::ifstream in(tf, std::ios::binary);
    if (!in) throw std::runtime_error("missing tensor file " + tf.string());
    in.read(reinterpret_cast<char*>(s.histogram.data.v.data()),
            static_cast<std::streamsize>(n_floats * sizeof(float)));
    if (static_cast<size_t>(in.gcount()) != n_floats * sizeof(float))
      throw std::runtime_error("tensor file " + tf.string() + " truncated at byte offset " +
                               std::to_string(in.gcount()));
    out.push_back(std::move(s));
  }
  return out;
}

void split_train_val(const std::vector<LabeledSample>& samples, double val_fraction,
                     std::uint64_t seed, std::vector<int>& train_idx,
                     std::vector<int>& val_idx) {
  train_idx.clear();
  val_idx.clear();
  std::map<std::pair<int, int>, std::vector<int>> groups;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i)
    groups[{samples[i].subject_id, samples[i].target_label}].push_back(i);
  for (auto& [key, idx] : groups) {
    std::vector<int> order(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(seed ^ hash64("val-split-" + std::to_string(key.first) + "-" +
                          std::to_string(key.second)));
    rng.shuffle(order);
    int n_val = static_cast<int>(std::lround(val_fraction * static_cast<double>(idx.size())));
    n_val = std::min(n_val, static_cast<int>(idx.size()) - 1);
    for (size_t i = 0; i < idx.size(); ++i) {
      if (static_cast<int>(i) < n_val)
        val_idx.push_back(idx[static_cast<size_t>(order[i])]);
      else
        train_idx.push_back(idx[static_cast<size_t>(order[i])]);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
}

}  // namespace anony::event

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

#include "anony/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace anony::eval {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor extract_embeddings(models::ClassifierNet& classifier,
                          const std::vector<event::LabeledSample>& samples,
                          const std::vector<int>& indices,
                          const SampleTransform& transform, int batch_size) {
  const int D = models::ClassifierConfig::kEmbedDim;
  Tensor out({static_cast<int>(indices.size()), D});
  for (size_t start = 0; start < indices.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(indices.size(), start + static_cast<size_t>(batch_size));
    const auto& first = samples[static_cast<size_t>(indices[start])].histogram.data;
    Tensor batch({static_cast<int>(end - start), first.dim(0), first.dim(1), first.dim(2)});
    for (size_t i = start; i < end; ++i) {
      const auto& s = samples[static_cast<size_t>(indices[i])];
      Tensor h = transform ? transform(s.histogram.data, s.sample_key) : s.histogram.data;
      std::copy(h.v.begin(), h.v.end(),
                batch.v.begin() + static_cast<std::ptrdiff_t>((i - start) * h.v.size()));
    }
    models::ClassifierOut co = classifier.forward(batch, nn::Mode::kEval, nullptr);
    for (size_t i = start; i < end; ++i)
      std::copy(co.embedding.v.begin() + static_cast<std::ptrdiff_t>((i - start) * D),
                co.embedding.v.begin() + static_cast<std::ptrdiff_t>((i - start + 1) * D),
                out.v.begin() + static_cast<std::ptrdiff_t>(i * D));
  }
  return out;
}

RetrievalResult evaluate_retrieval(const event::ReIdSplit& split,
                                   const std::vector<event::LabeledSample>& samples,
                                   const Tensor& embeddings) {
  if (embeddings.dim(0) != static_cast<int>(samples.size()))
    throw std::invalid_argument("evaluate_retrieval: embeddings must cover all samples");
  const int D = embeddings.dim(1);

  // L2-normalize rows
  Tensor norm(embeddings.shape);
  for (int i = 0; i < embeddings.dim(0); ++i) {
    const float* row = embeddings.v.data() + static_cast<size_t>(i) * D;
    double nrm = 0.0;
    for (int k = 0; k < D; ++k) nrm += static_cast<double>(row[k]) * row[k];
    nrm = std::sqrt(nrm);
    float* o = norm.v.data() + static_cast<size_t>(i) * D;
    for (int k = 0; k < D; ++k)
      o[k] = nrm > 0 ? static_cast<float>(row[k] / nrm) : 0.0f;
  }

  RetrievalResult result;
  const std::vector<int> ks = {1, 5, 10};
  std::map<int, int> hits;
  for (int k : ks) hits[k] = 0;
  double ap_sum = 0.0;

  for (int q : split.query) {
    std::vector<int> candidates = event::valid_candidates(split, samples, q);
    int R = 0;
    for (int c : candidates)
      if (samples[static_cast<size_t>(c)].subject_id ==
          samples[static_cast<size_t>(q)].subject_id)
        ++R;
    if (R == 0)
      throw std::invalid_argument("query " + samples[static_cast<size_t>(q)].sample_key +
                                  " has no relevant gallery sample after exclusion");

    std::vector<std::pair<double, int>> scored;
    scored.reserve(candidates.size());
    for (int c : candidates) {
      const float* a = norm.v.data() + static_cast<size_t>(q) * D;
      const float* b = norm.v.data() + static_cast<size_t>(c) * D;
      double acc = 0.0;
      for (int k = 0; k < D; ++k) {
        double d = static_cast<double>(a[k]) - b[k];
        acc += d * d;
      }
      scored.emplace_back(std::sqrt(acc), c);
    }
    std::sort(scored.begin(), scored.end(), [&](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first < y.first;
      return samples[static_cast<size_t>(x.second)].sample_key <
             samples[static_cast<size_t>(y.second)].sample_key;
    });

    std::vector<int> ranked;
    ranked.reserve(scored.size());
    int n_correct = 0;
    double ap = 0.0;
    for (size_t rank = 0; rank < scored.size(); ++rank) {
      int c = scored[rank].second;
      ranked.push_back(c);
      bool relevant = samples[static_cast<size_t>(c)].subject_id ==
                      samples[static_cast<size_t>(q)].subject_id;
      if (relevant) {
        ++n_correct;
        ap += static_cast<double>(n_correct) / static_cast<double>(rank + 1);
      }
      for (int k : ks)
        if (relevant && static_cast<int>(rank) < k && n_correct == 1) ++hits[k];
    }
    ap_sum += ap / R;
    result.ranked.push_back(std::move(ranked));
  }

  const double nq = static_cast<double>(split.query.size());
  for (int k : ks) result.topk_acc[k] = 100.0 * hits[k] / nq;
  result.mAP = ap_sum / nq;
  return result;
}

double evaluate_accuracy(models::ClassifierNet& classifier,
                         const std::vector<event::LabeledSample>& samples,
                         const std::vector<int>& indices, bool use_subject_labels,
                         const SampleTransform& transform, int batch_size) {
  if (indices.empty()) throw std::invalid_argument("evaluate_accuracy: no samples");
  int correct = 0;
  for (size_t start = 0; start < indices.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(indices.size(), start + static_cast<size_t>(batch_size));
    const auto& first = samples[static_cast<size_t>(indices[start])].histogram.data;
    Tensor batch({static_cast<int>(end - start), first.dim(0), first.dim(1), first.dim(2)});
    for (size_t i = start; i < end; ++i) {
      const auto& s = samples[static_cast<size_t>(indices[i])];
      Tensor h = transform ? transform(s.histogram.data, s.sample_key) : s.histogram.data;
      std::copy(h.v.begin(), h.v.end(),
                batch.v.begin() + static_cast<std::ptrdiff_t>((i - start) * h.v.size()));
    }
    models::ClassifierOut co = classifier.forward(batch, nn::Mode::kEval, nullptr);
    const int C = co.logits.dim(1);
    for (size_t i = start; i < end; ++i) {
      const float* row = co.logits.v.data() + (i - start) * static_cast<size_t>(C);
      int best = 0;
      for (int c = 1; c < C; ++c)
        if (row[c] > row[best]) best = c;
      const auto& s = samples[static_cast<size_t>(indices[i])];
      int truth = use_subject_labels ? s.subject_id : s.target_label;
      if (best == truth) ++correct;
    }
  }
  return 100.0 * correct / static_cast<double>(indices.size());
}

namespace {

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(6);
  os << *v;
  return os.str();
}

void write_scatter_svg(const std::vector<MetricsRow>& rows, const std::string& path) {
  const int W = 640, H = 480, M = 60;
  std::ofstream out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\">\n";
  auto px = [&](double acc_t) { return M + (W - 2 * M) * acc_t / 100.0; };
  auto py = [&](double acc_id) { return H - M - (H - 2 * M) * acc_id / 100.0; };
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int g = 0; g <= 100; g += 20) {
    out << "<line x1=\"" << px(g) << "\" y1=\"" << py(0) << "\" x2=\"" << px(g) << "\" y2=\""
        << py(100) << "\" stroke=\"#ddd\"/>\n";
    out << "<line x1=\"" << px(0) << "\" y1=\"" << py(g) << "\" x2=\"" << px(100)
        << "\" y2=\"" << py(g) << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << px(g) - 8 << "\" y=\"" << H - M + 20 << "\" font-size=\"11\">" << g
        << "</text>\n";
    out << "<text x=\"" << M - 30 << "\" y=\"" << py(g) + 4 << "\" font-size=\"11\">" << g
        << "</text>\n";
  }
  out << "<text x=\"" << W / 2 - 30 << "\" y=\"" << H - 15
      << "\" font-size=\"13\">acc_T [%]</text>\n";
  out << "<text x=\"12\" y=\"" << H / 2
      << "\" font-size=\"13\" transform=\"rotate(-90 16 " << H / 2
      << ")\">acc_id [%]</text>\n";

  // arrows from a row to its "<label>+inversion" partner
  for (const auto& row : rows) {
    for (const auto& other : rows) {
      if (other.config_label == row.config_label + "+inversion") {
        out << "<line x1=\"" << px(row.acc_t) << "\" y1=\"" << py(row.acc_id_top1)
            << "\" x2=\"" << px(other.acc_t) << "\" y2=\"" << py(other.acc_id_top1)
            << "\" stroke=\"#888\" stroke-dasharray=\"4 2\" marker-end=\"url(#arr)\"/>\n";
      }
    }
  }
  out << "<defs><marker id=\"arr\" markerWidth=\"8\" markerHeight=\"8\" refX=\"6\" "
         "refY=\"3\" orient=\"auto\"><path d=\"M0,0 L6,3 L0,6 z\" fill=\"#888\"/>"
         "</marker></defs>\n";
  for (const auto& row : rows) {
    out << "<circle cx=\"" << px(row.acc_t) << "\" cy=\"" << py(row.acc_id_top1)
        << "\" r=\"5\" fill=\"#2266cc\"/>\n";
    out << "<text x=\"" << px(row.acc_t) + 7 << "\" y=\"" << py(row.acc_id_top1) - 5
        << "\" font-size=\"11\">" << row.config_label << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace

void emit_report(const std::vector<MetricsRow>& rows, const std::string& out_dir,
                 const std::string& config_snapshot_json) {
  if (rows.empty()) throw std::invalid_argument("emit_report: no metric rows");
  fs::create_directories(out_dir);

  std::ofstream csv(fs::path(out_dir) / "metrics.csv");
  csv << "config,acc_T,acc_id_top1,acc_id_top5,acc_id_top10,mAP,recon_mse\n";
  csv.precision(6);
  for (const auto& r : rows) {
    csv << r.config_label << "," << r.acc_t << "," << r.acc_id_top1 << ","
        << fmt_opt(r.acc_id_top5) << "," << fmt_opt(r.acc_id_top10) << "," << r.map_id
        << "," << fmt_opt(r.recon_mse) << "\n";
  }
  csv.close();

  json j;
  j["config"] = json::parse(config_snapshot_json);
  j["rows"] = json::array();
  for (const auto& r : rows) {
    json row;
    row["config"] = r.config_label;
    row["acc_T"] = r.acc_t;
    row["acc_id_top1"] = r.acc_id_top1;
    if (r.acc_id_top5) row["acc_id_top5"] = *r.acc_id_top5;
    if (r.acc_id_top10) row["acc_id_top10"] = *r.acc_id_top10;
    row["mAP"] = r.map_id;
    if (r.recon_mse) row["recon_mse"] = *r.recon_mse;
    j["rows"].push_back(row);
  }
  std::ofstream jf(fs::path(out_dir) / "metrics.json");
  jf << j.dump(2) << "\n";
  jf.close();

  write_scatter_svg(rows, (fs::path(out_dir) / "metrics_plot.svg").string());
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty metrics file");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    fields.resize(7);
    MetricsRow r;
    r.config_label = fields[0];
    r.acc_t = std::stod(fields[1]);
    r.acc_id_top1 = std::stod(fields[2]);
    if (!fields[3].empty()) r.acc_id_top5 = std::stod(fields[3]);
    if (!fields[4].empty()) r.acc_id_top10 = std::stod(fields[4]);
    r.map_id = std::stod(fields[5]);
    if (!fields[6].empty()) r.recon_mse = std::stod(fields[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace anony::eval

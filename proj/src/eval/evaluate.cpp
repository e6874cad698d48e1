#include "timt/eval/evaluate.hpp"

#include "timt/eval/bleu.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>

namespace timt::eval {

using json = nlohmann::ordered_json;

namespace {

std::vector<int> strip_specials(const std::vector<int>& ids) {
  std::vector<int> out;
  for (int id : ids) {
    if (id == corpus::kPadId || id == corpus::kBosId || id == corpus::kEosId) continue;
    out.push_back(id);
  }
  return out;
}

struct TimedDecode {
  std::vector<std::vector<int>> hyps;
  std::vector<double> ms;
};

template <typename DecodeFn>
TimedDecode run_decodes(const std::vector<corpus::TripleSample>& samples,
                        DecodeFn decode, const LatencyOptions& lat) {
  if (lat.measure) {
    require(static_cast<int>(samples.size()) >= lat.min_sentences,
            "latency measurement needs at least " +
                std::to_string(lat.min_sentences) + " sentences");
    for (int i = 0; i < lat.warmup && i < static_cast<int>(samples.size()); ++i) {
      decode(samples[static_cast<size_t>(i)]);
    }
  }
  TimedDecode out;
  out.hyps.reserve(samples.size());
  for (const corpus::TripleSample& s : samples) {
    if (lat.measure) {
      const auto t0 = std::chrono::steady_clock::now();
      out.hyps.push_back(decode(s));
      const auto t1 = std::chrono::steady_clock::now();
      out.ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    } else {
      out.hyps.push_back(decode(s));
    }
  }
  return out;
}

EvalReport finish_report(const std::string& model_id, const std::string& split,
                         int64_t n_params,
                         const std::vector<corpus::TripleSample>& samples,
                         TimedDecode&& decoded) {
  EvalReport rep;
  rep.model_id = model_id;
  rep.split = split;
  rep.n_params = n_params;
  std::vector<std::vector<int>> refs;
  refs.reserve(samples.size());
  for (const corpus::TripleSample& s : samples) {
    refs.push_back(strip_specials(s.tgt_ids));
  }
  rep.bleu = corpus_bleu(decoded.hyps, refs);
  if (!decoded.ms.empty()) {
    rep.latency_n = static_cast<int>(decoded.ms.size());
    double sum = 0.0;
    for (double v : decoded.ms) sum += v;
    rep.latency_ms_mean = sum / decoded.ms.size();
    std::vector<double> sorted = decoded.ms;
    std::sort(sorted.begin(), sorted.end());
    const size_t mid = sorted.size() / 2;
    rep.latency_ms_median = sorted.size() % 2 == 1
                                ? sorted[mid]
                                : 0.5 * (sorted[mid - 1] + sorted[mid]);
  }
  return rep;
}

}  // namespace

EvalReport evaluate_student(const model::ImageToTextModel& m,
                            const std::vector<corpus::TripleSample>& samples,
                            const std::string& split, int max_len,
                            const LatencyOptions& lat) {
  require(!samples.empty(), "empty evaluation split");
  auto decode = [&](const corpus::TripleSample& s) {
    return strip_specials(m.greedy_decode(s.image, max_len));
  };
  return finish_report("student", split, m.count_params(), samples,
                       run_decodes(samples, decode, lat));
}

EvalReport evaluate_pipeline(const model::ImageToTextModel& tir,
                             const model::TextToTextModel& mt,
                             const std::vector<corpus::TripleSample>& samples,
                             const std::string& split, int max_len,
                             const LatencyOptions& lat) {
  require(!samples.empty(), "empty evaluation split");
  auto decode = [&](const corpus::TripleSample& s) {
    std::vector<int> recognized = strip_specials(tir.greedy_decode(s.image, max_len));
    if (recognized.empty()) return std::vector<int>{};
    return strip_specials(mt.greedy_decode(recognized, max_len));
  };
  return finish_report("pipeline", split, tir.count_params() + mt.count_params(),
                       samples, run_decodes(samples, decode, lat));
}

void emit_report(const std::filesystem::path& dir,
                 const std::vector<EvalReport>& reports,
                 const std::vector<train::SweepPoint>& sweep,
                 const std::vector<train::AblationRow>& ablation) {
  require(!reports.empty() || !sweep.empty() || !ablation.empty(),
          "empty report: nothing to emit");
  std::filesystem::create_directories(dir);

  json root;
  root["reports"] = json::array();
  for (const EvalReport& r : reports) {
    json j;
    j["model"] = r.model_id;
    j["split"] = r.split;
    j["bleu"] = r.bleu;
    j["n_params"] = r.n_params;
    if (r.latency_n > 0) {
      j["latency_ms_mean"] = r.latency_ms_mean;
      j["latency_ms_median"] = r.latency_ms_median;
      j["latency_n"] = r.latency_n;
    }
    root["reports"].push_back(j);
  }
  if (!sweep.empty()) {
    root["lambda_sweep"] = json::array();
    for (const train::SweepPoint& p : sweep) {
      json j;
      j["lambda_kd"] = p.lambda_kd;
      j["valid_bleu"] = p.valid_bleu;
      j["test_bleu"] = p.test_bleu;
      root["lambda_sweep"].push_back(j);
    }
  }
  if (!ablation.empty()) {
    root["ablation"] = json::array();
    for (const train::AblationRow& row : ablation) {
      json j;
      j["row"] = row.row_no;
      j["decoder"] = row.use_decoder;
      j["sequential"] = row.use_sequential;
      j["image"] = row.use_image;
      j["valid_bleu"] = row.valid_bleu;
      j["test_bleu"] = row.test_bleu;
      root["ablation"].push_back(j);
    }
  }
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw std::runtime_error("cannot write report.json in " + dir.string());
    out << root.dump(2) << "\n";
  }

  {
    std::ofstream out(dir / "summary.txt");
    if (!out) throw std::runtime_error("cannot write summary.txt in " + dir.string());
    out << "model      split   bleu      params     lat_mean_ms  lat_median_ms\n";
    char line[256];
    for (const EvalReport& r : reports) {
      if (r.latency_n > 0) {
        std::snprintf(line, sizeof(line), "%-10s %-7s %-9.3f %-10lld %-12.3f %-12.3f\n",
                      r.model_id.c_str(), r.split.c_str(), r.bleu,
                      static_cast<long long>(r.n_params), r.latency_ms_mean,
                      r.latency_ms_median);
      } else {
        std::snprintf(line, sizeof(line), "%-10s %-7s %-9.3f %-10lld %-12s %-12s\n",
                      r.model_id.c_str(), r.split.c_str(), r.bleu,
                      static_cast<long long>(r.n_params), "-", "-");
      }
      out << line;
    }
    if (!ablation.empty()) {
      out << "\nrow  teachers  valid_bleu  test_bleu\n";
      for (const train::AblationRow& row : ablation) {
        std::string teachers;
        if (row.use_decoder) teachers += "D";
        if (row.use_sequential) teachers += "S";
        if (row.use_image) teachers += "I";
        std::snprintf(line, sizeof(line), "%-4d %-9s %-11.3f %-9.3f\n", row.row_no,
                      teachers.c_str(), row.valid_bleu, row.test_bleu);
        out << line;
      }
    }
    if (!sweep.empty()) {
      out << "\nlambda_kd  valid_bleu  test_bleu\n";
      for (const train::SweepPoint& p : sweep) {
        std::snprintf(line, sizeof(line), "%-10.3f %-11.3f %-9.3f\n", p.lambda_kd,
                      p.valid_bleu, p.test_bleu);
        out << line;
      }
    }
  }

  if (!sweep.empty()) {
    std::ofstream out(dir / "lambda_sweep.csv");
    if (!out) throw std::runtime_error("cannot write lambda_sweep.csv in " + dir.string());
    out << "lambda_kd,bleu\n";
    char line[64];
    for (const train::SweepPoint& p : sweep) {
      std::snprintf(line, sizeof(line), "%.4f,%.4f\n", p.lambda_kd, p.valid_bleu);
      out << line;
    }
  }
}

}  // namespace timt::eval

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "caepl/error.hpp"
#include "caepl/metrics.hpp"
#include "caepl/train.hpp"

namespace caepl {

// Fixed, versioned CSV schemas. The first line names the schema; readers
// skip '#' lines. Formatting is deterministic so identical runs produce
// byte-identical files.
inline constexpr const char* kTrainLogSchema = "# caepl-train-log-v1";
inline constexpr const char* kScoresSchema = "# caepl-scores-v1";
inline constexpr const char* kCompareSchema = "# caepl-compare-v1";
inline constexpr const char* kCompareAggSchema = "# caepl-compare-agg-v1";
inline constexpr const char* kParamsSchema = "# caepl-params-v1";

namespace detail {

inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::string fmt_f(double v, int decimals) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out << text;
    if (!out) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline void write_train_log_csv(const TrainingLog& log, const std::filesystem::path& path) {
  std::ostringstream out;
  out << kTrainLogSchema << "\n";
  out << "epoch,loss,val_loss,acc,val_acc,seconds\n";
  for (const auto& r : log.rows)
    out << r.epoch << ',' << detail::fmt_g(r.loss) << ',' << detail::fmt_g(r.val_loss) << ','
        << detail::fmt_g(r.acc) << ',' << detail::fmt_g(r.val_acc) << ','
        << detail::fmt_g(r.seconds) << "\n";
  detail::write_text_atomic(path, out.str());
}

inline TrainingLog read_train_log_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  TrainingLog log;
  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      if (line != "epoch,loss,val_loss,acc,val_acc,seconds")
        throw DataError("'" + path.string() + "' is not a training log csv");
      saw_header = true;
      continue;
    }
    EpochRow r;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf", &r.epoch, &r.loss, &r.val_loss, &r.acc,
                    &r.val_acc, &r.seconds) != 6)
      throw DataError("malformed training log row: " + line);
    log.rows.push_back(r);
  }
  if (!saw_header) throw DataError("'" + path.string() + "' has no header row");
  return log;
}

inline void write_scores_csv(const std::string& split, const ConfusionMatrix& cm,
                             const std::filesystem::path& path) {
  std::ostringstream out;
  out << kScoresSchema << "\n";
  out << "split,mean_iou,pix_acc";
  for (int k = 0; k < cm.num_classes(); ++k) out << ",iou_" << k;
  out << "\n";
  out << split << ',' << detail::fmt_f(cm.mean_iou(), 6) << ','
      << detail::fmt_f(cm.pixel_accuracy(), 6);
  for (double iou : cm.per_class_iou()) {
    out << ',';
    if (iou == iou)
      out << detail::fmt_f(iou, 6);
    else
      out << "nan";
  }
  out << "\n";
  detail::write_text_atomic(path, out.str());
}

}  // namespace caepl

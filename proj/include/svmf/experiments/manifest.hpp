// Run manifests and metric files. Nothing written here depends on the wall
// clock, so identical (config, seed) runs produce identical bytes.
#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "svmf/experiments/metrics.hpp"
#include "svmf/nn/tape.hpp"

#ifndef SVMF_REVISION
#define SVMF_REVISION "unknown"
#endif

namespace svmf::experiments {

using json = nlohmann::ordered_json;

class OutputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Shortest text that reads back to the same double (17 significant digits).
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct RunManifest {
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  std::string revision = SVMF_REVISION;
  /// Role name -> file name relative to the output directory.
  std::map<std::string, std::string> files;
  json summary = json::object();
  std::string status = "ok";
  std::string error;

  [[nodiscard]] std::string config_hash() const { return hex64(fnv1a64(config.dump())); }

  [[nodiscard]] json to_json() const {
    json j;
    j["command"] = command;
    j["config_hash"] = config_hash();
    j["seed"] = seed;
    j["revision"] = revision;
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    j["files"] = files;
    j["summary"] = summary;
    return j;
  }
};

inline std::ofstream open_output(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw OutputError("cannot open '" + path + "' for writing");
  return os;
}

inline void finish_output(std::ofstream& os, const std::string& path) {
  os.flush();
  if (!os) throw OutputError("failed writing '" + path + "'");
}

inline void write_json_file(const std::string& path, const json& j) {
  auto os = open_output(path);
  os << j.dump(2) << '\n';
  finish_output(os, path);
}

inline json metric_json(const MetricRecord& r) {
  json j;
  j["epoch"] = r.epoch;
  j["split"] = r.split;
  j["re"] = r.re;
  j["kl"] = r.kl;
  j["elbo"] = r.elbo;
  if (r.ll) j["ll"] = *r.ll;
  return j;
}

/// One JSON object per line.
inline void write_metrics_ndjson(const std::string& path, const std::vector<MetricRecord>& records) {
  auto os = open_output(path);
  for (const auto& r : records) os << metric_json(r).dump() << '\n';
  finish_output(os, path);
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricRecord>& records) {
  auto os = open_output(path);
  os << "epoch,split,re,kl,elbo,ll\n";
  for (const auto& r : records)
    os << r.epoch << ',' << r.split << ',' << format_double(r.re) << ',' << format_double(r.kl) << ','
       << format_double(r.elbo) << ',' << (r.ll ? format_double(*r.ll) : "") << '\n';
  finish_output(os, path);
}

/// Header `index,label,z0,z1,...`; one row per latent.
inline void write_latents_csv(const std::string& path, const nn::Tensor& latents, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != latents.rows())
    throw std::invalid_argument("write_latents_csv: label count mismatch");
  auto os = open_output(path);
  os << "index,label";
  for (Eigen::Index k = 0; k < latents.cols(); ++k) os << ",z" << k;
  os << '\n';
  for (Eigen::Index i = 0; i < latents.rows(); ++i) {
    os << i << ',' << labels[i];
    for (Eigen::Index k = 0; k < latents.cols(); ++k) os << ',' << format_double(latents(i, k));
    os << '\n';
  }
  finish_output(os, path);
}

}  // namespace svmf::experiments

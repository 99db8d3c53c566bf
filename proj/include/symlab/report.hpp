#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "symlab/tensor.hpp"

namespace symlab {

/// Flat UTF-8 "key = value" configuration. '#' starts a comment. The
/// SYMLAB_SEED environment variable overrides the "seed" key.
class Config {
 public:
  static Config load(const std::string& path);
  static Config from_string(const std::string& text);

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  std::string get(const std::string& key, const std::string& def = "") const;
  double get_num(const std::string& key, double def) const;
  std::uint64_t seed() const;  // "seed" key with environment override
  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  void set_num(const std::string& key, double value);
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

/// Deterministic float formatting used by every emitted artifact.
std::string format_number(double v);

// ---- CSV (RFC 4180) ----
std::string csv_field(const std::string& raw);
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
void write_matrix_csv(const std::string& path, const Tensor& m,
                      const std::vector<std::string>& row_labels,
                      const std::vector<std::string>& col_labels);

// ---- SVG heatmaps ----
/// Deterministic SVG heatmap: white-to-blue monotone colormap over
/// [min, max]; masked cells (mask false) are left blank.
void render_heatmap(const Tensor& m, const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels, const std::string& out_path,
                    const std::vector<char>* mask = nullptr);

// ---- run directories and manifests ----

/// FNV-1a 64-bit content hash, hex encoded (integrity check, not crypto).
std::string file_hash_hex(const std::string& path);

struct RunManifest {
  std::string name;
  std::string timestamp;
  std::string tool_version;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;   // effective options incl. the command
  std::map<std::string, std::string> outputs;  // relative path -> content hash
  double wall_seconds = 0.0;                   // excluded from replay comparison

  void save(const std::string& path) const;
  static RunManifest load(const std::string& path);
};

/// One run owns runs/<timestamp>-<name>/ and its manifest.
class RunDir {
 public:
  RunDir(const std::string& root, const std::string& name);
  const std::string& path() const { return dir_; }
  std::string file(const std::string& rel) const { return dir_ + "/" + rel; }
  /// Registers an already-written output file in the manifest.
  void record(const std::string& rel);
  void finalize(const Config& cfg, std::uint64_t seed, double wall_seconds);
  RunManifest& manifest() { return manifest_; }

 private:
  std::string dir_;
  RunManifest manifest_;
};

/// Re-hashes every output listed in the manifest; returns mismatched paths.
std::vector<std::string> verify_manifest(const std::string& manifest_path);

}  // namespace symlab

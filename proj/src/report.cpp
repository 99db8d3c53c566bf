#include "symlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace symlab {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

Config Config::from_string(const std::string& text) {
  Config cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw TensorError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw TensorError("config line " + std::to_string(lineno) + ": empty key");
    cfg.entries_[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

Config Config::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw TensorError("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_string(ss.str());
}

std::string Config::get(const std::string& key, const std::string& def) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? def : it->second;
}

double Config::get_num(const std::string& key, double def) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(it->second, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != it->second.size())
    throw TensorError("config: key '" + key + "' is not numeric: " + it->second);
  return v;
}

std::uint64_t Config::seed() const {
  if (const char* env = std::getenv("SYMLAB_SEED")) return std::strtoull(env, nullptr, 10);
  return static_cast<std::uint64_t>(get_num("seed", 0.0));
}

void Config::set_num(const std::string& key, double value) { entries_[key] = format_number(value); }

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& raw) {
  if (raw.find_first_of(",\"\n\r") == std::string::npos) return raw;
  std::string out = "\"";
  for (char c : raw) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw TensorError("write_csv: cannot open " + path);
  for (std::size_t i = 0; i < header.size(); ++i)
    f << (i ? "," : "") << csv_field(header[i]);
  f << "\r\n";
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw TensorError("write_csv: ragged row");
    for (std::size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << csv_field(row[i]);
    f << "\r\n";
  }
}

void write_matrix_csv(const std::string& path, const Tensor& m,
                      const std::vector<std::string>& row_labels,
                      const std::vector<std::string>& col_labels) {
  if (row_labels.size() != m.rows() || col_labels.size() != m.cols())
    throw TensorError("write_matrix_csv: label count mismatch");
  std::vector<std::string> header = {""};
  header.insert(header.end(), col_labels.begin(), col_labels.end());
  std::vector<std::vector<std::string>> rows;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::vector<std::string> row = {row_labels[r]};
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(format_number(m.at(r, c)));
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void render_heatmap(const Tensor& m, const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels, const std::string& out_path,
                    const std::vector<char>* mask) {
  m.check_finite("render_heatmap");
  if (row_labels.size() != m.rows() || col_labels.size() != m.cols())
    throw TensorError("render_heatmap: label count mismatch");
  if (mask && mask->size() != m.data.size()) throw TensorError("render_heatmap: mask size");

  double lo = m.data.front(), hi = m.data.front();
  for (double v : m.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;

  const int cell = 24, margin_left = 110, margin_top = 70;
  const int width = margin_left + cell * static_cast<int>(m.cols()) + 10;
  const int height = margin_top + cell * static_cast<int>(m.rows()) + 10;

  std::ofstream f(out_path, std::ios::binary);
  if (!f) throw TensorError("render_heatmap: cannot open " + out_path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"monospace\" font-size=\"10\">\n";
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (mask && !(*mask)[r * m.cols() + c]) continue;
      // monotone white-to-blue colormap
      const double t = (m.at(r, c) - lo) / span;
      const int red = 255 - static_cast<int>(std::lround(t * 215.0));
      const int green = 255 - static_cast<int>(std::lround(t * 135.0));
      const int x = margin_left + static_cast<int>(c) * cell;
      const int y = margin_top + static_cast<int>(r) * cell;
      f << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
        << "\" fill=\"rgb(" << red << "," << green << ",255)\"><title>" << format_number(m.at(r, c))
        << "</title></rect>\n";
    }
  for (std::size_t c = 0; c < m.cols(); ++c) {
    const int x = margin_left + static_cast<int>(c) * cell + cell / 2;
    f << "<text x=\"" << x << "\" y=\"" << margin_top - 6 << "\" text-anchor=\"start\" transform=\"rotate(-45 "
      << x << " " << margin_top - 6 << ")\">" << xml_escape(col_labels[c]) << "</text>\n";
  }
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const int y = margin_top + static_cast<int>(r) * cell + cell / 2 + 4;
    f << "<text x=\"" << margin_left - 6 << "\" y=\"" << y << "\" text-anchor=\"end\">"
      << xml_escape(row_labels[r]) << "</text>\n";
  }
  f << "</svg>\n";
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TensorError("file_hash_hex: cannot open " + path);
  std::uint64_t h = 14695981039346656037ull;
  char buf[4096];
  while (f.read(buf, sizeof buf) || f.gcount() > 0) {
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!f) break;
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

void RunManifest::save(const std::string& path) const {
  nlohmann::json j;  // sorted keys by default
  j["name"] = name;
  j["timestamp"] = timestamp;
  j["tool_version"] = tool_version;
  j["seed"] = seed;
  j["config"] = config;
  j["outputs"] = outputs;
  j["wall_seconds"] = wall_seconds;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw TensorError("RunManifest::save: cannot open " + path);
  f << j.dump(2) << "\n";
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw TensorError("RunManifest::load: cannot open " + path);
  nlohmann::json j;
  f >> j;
  RunManifest m;
  m.name = j.at("name").get<std::string>();
  m.timestamp = j.at("timestamp").get<std::string>();
  m.tool_version = j.at("tool_version").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.config = j.at("config").get<std::map<std::string, std::string>>();
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  m.wall_seconds = j.at("wall_seconds").get<double>();
  return m;
}

RunDir::RunDir(const std::string& root, const std::string& name) {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%S", &tm);
  std::string base = root + "/" + stamp + "-" + name;
  dir_ = base;
  for (int i = 1; std::filesystem::exists(dir_); ++i) dir_ = base + "." + std::to_string(i);
  std::filesystem::create_directories(dir_);
  manifest_.name = name;
  manifest_.timestamp = stamp;
  manifest_.tool_version = "symlab 1.0";
}

void RunDir::record(const std::string& rel) { manifest_.outputs[rel] = file_hash_hex(file(rel)); }

void RunDir::finalize(const Config& cfg, std::uint64_t seed, double wall_seconds) {
  manifest_.seed = seed;
  manifest_.config = cfg.entries();
  manifest_.wall_seconds = wall_seconds;
  manifest_.save(file("manifest.json"));
}

std::vector<std::string> verify_manifest(const std::string& manifest_path) {
  const RunManifest m = RunManifest::load(manifest_path);
  const std::string dir = std::filesystem::path(manifest_path).parent_path().string();
  std::vector<std::string> bad;
  for (const auto& [rel, hash] : m.outputs) {
    const std::string p = dir.empty() ? rel : dir + "/" + rel;
    if (!std::filesystem::exists(p) || file_hash_hex(p) != hash) bad.push_back(rel);
  }
  return bad;
}

}  // namespace symlab

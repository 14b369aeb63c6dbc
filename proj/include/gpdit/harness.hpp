#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gpdit/gp.hpp"

namespace gpdit {

inline constexpr const char* kVersion = "0.1.0";

// Flat key=value configuration: one pair per line, '#' starts a comment.
struct Config {
  std::map<std::string, std::string> kv;
  std::string source_dir;  // directory of the file, base for relative paths

  bool has(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& fallback) const;
  double get_num(const std::string& key, double fallback) const;
  long get_int(const std::string& key, long fallback) const;
};

Config parse_config_text(const std::string& text);
Config load_config(const std::string& path);

// Builds a GpSpec from keys d, N (required) and nu, ell, kernel_mode, r,
// period, mu_file, sigma_file (optional; file paths resolve against the
// config's directory). mu_file holds d*N values; sigma_file is a d x d CSV.
GpSpec spec_from_config(const Config& cfg);

// Numeric CSV, no header, 17 significant digits.
std::string format_g17(double v);
void write_csv(const std::string& path, const Eigen::MatrixXd& rows,
               const std::string& header = "");
Eigen::MatrixXd read_csv(const std::string& path);

std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64_file(const std::string& path);
std::string digest_string(std::uint64_t digest);

// data.csv -> data.manifest.json (the last extension is replaced).
std::string manifest_path_for(const std::string& out_path);

// Writes the run manifest next to the primary output: tool and module
// versions, subcommand, config digest, seed, parameters, and an FNV-1a
// digest per output file. The timestamp is the only non-deterministic field.
void write_run_manifest(const std::string& manifest_path,
                        const std::string& subcommand,
                        std::uint64_t config_digest, std::uint64_t seed,
                        const std::map<std::string, std::string>& params,
                        const std::vector<std::string>& output_files);

int cli_dispatch(int argc, const char* const* argv);

}  // namespace gpdit

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusionlasso/data.hpp"
#include "fusionlasso/gibbs.hpp"
#include "fusionlasso/version.hpp"

// Draw files (CSV and length-prefixed binary) and the run.json provenance
// record every CLI invocation writes.

namespace fusionlasso {

namespace detail {

inline void write_double_csv(std::ostream& out, double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  out << ss.str();
}

}  // namespace detail

// One row per kept draw: chain, draw, labeled beta columns, lambda2 and (for
// the linear family) sigma2.
inline void write_draws_csv(std::ostream& out, const PosteriorDraws& draws) {
  const bool has_sigma = draws.family == Family::linear;
  out << "chain,draw";
  for (const auto& l : draws.labels) out << "," << l;
  out << ",lambda2";
  if (has_sigma) out << ",sigma2";
  out << "\n";
  for (std::size_t c = 0; c < draws.chains.size(); ++c) {
    const ChainDraws& ch = draws.chains[c];
    for (Eigen::Index r = 0; r < ch.beta.rows(); ++r) {
      out << c << "," << r;
      for (Eigen::Index j = 0; j < ch.beta.cols(); ++j) {
        out << ",";
        detail::write_double_csv(out, ch.beta(r, j));
      }
      out << ",";
      detail::write_double_csv(out, ch.lambda2[r]);
      if (has_sigma) {
        out << ",";
        detail::write_double_csv(out, ch.sigma2[r]);
      }
      out << "\n";
    }
  }
}

inline void write_draws_csv_file(const std::string& path, const PosteriorDraws& draws) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_draws_csv(out, draws);
}

// Little-endian binary: u64 header length, JSON header, then per chain a
// row-major block of doubles with columns [beta..., lambda2, sigma2?].
inline void write_draws_binary_file(const std::string& path, const PosteriorDraws& draws) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  const bool has_sigma = draws.family == Family::linear;
  nlohmann::json header = {
      {"format", "fusionlasso-draws"},
      {"version", 1},
      {"family", family_to_string(draws.family)},
      {"n_classes", draws.n_classes},
      {"labels", draws.labels},
      {"burnin", draws.burnin},
      {"thin", draws.thin},
      {"master_seed", draws.master_seed},
      {"has_sigma", has_sigma},
  };
  std::vector<std::uint64_t> kept, seeds;
  for (const auto& c : draws.chains) {
    kept.push_back(static_cast<std::uint64_t>(c.beta.rows()));
    seeds.push_back(c.seed);
  }
  header["kept"] = kept;
  header["chain_seeds"] = seeds;
  const std::string hs = header.dump();
  const std::uint64_t len = hs.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& c : draws.chains) {
    for (Eigen::Index r = 0; r < c.beta.rows(); ++r) {
      for (Eigen::Index j = 0; j < c.beta.cols(); ++j) {
        const double v = c.beta(r, j);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
      const double l2 = c.lambda2[r];
      out.write(reinterpret_cast<const char*>(&l2), sizeof(l2));
      if (has_sigma) {
        const double s2 = c.sigma2[r];
        out.write(reinterpret_cast<const char*>(&s2), sizeof(s2));
      }
    }
  }
}

inline PosteriorDraws read_draws_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open draws file: " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len == 0 || len > (1ULL << 30)) throw std::runtime_error("bad draws header: " + path);
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  const nlohmann::json header = nlohmann::json::parse(hs);
  if (header.value("format", std::string()) != "fusionlasso-draws") {
    throw std::runtime_error("not a fusionlasso draws file: " + path);
  }
  PosteriorDraws draws;
  draws.family = family_from_string(header.at("family").get<std::string>());
  draws.n_classes = header.value("n_classes", 2);
  draws.labels = header.at("labels").get<std::vector<std::string>>();
  draws.burnin = header.value("burnin", 0);
  draws.thin = header.value("thin", 1);
  draws.master_seed = header.value("master_seed", std::uint64_t{0});
  const bool has_sigma = header.value("has_sigma", false);
  const auto kept = header.at("kept").get<std::vector<std::uint64_t>>();
  const auto seeds = header.value("chain_seeds", std::vector<std::uint64_t>(kept.size(), 0));
  const Eigen::Index p = static_cast<Eigen::Index>(draws.labels.size());
  for (std::size_t c = 0; c < kept.size(); ++c) {
    ChainDraws ch;
    ch.seed = c < seeds.size() ? seeds[c] : 0;
    const auto rows = static_cast<Eigen::Index>(kept[c]);
    ch.beta.resize(rows, p);
    ch.lambda2.resize(rows);
    if (has_sigma) ch.sigma2.resize(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index j = 0; j < p; ++j) {
        in.read(reinterpret_cast<char*>(&ch.beta(r, j)), sizeof(double));
      }
      in.read(reinterpret_cast<char*>(&ch.lambda2[r]), sizeof(double));
      if (has_sigma) in.read(reinterpret_cast<char*>(&ch.sigma2[r]), sizeof(double));
    }
    if (!in) throw std::runtime_error("truncated draws file: " + path);
    draws.chains.push_back(std::move(ch));
  }
  return draws;
}

inline PosteriorDraws read_draws_csv_file(const std::string& path) {
  const CsvTable table = read_csv_file(path);
  if (table.header.size() < 4 || table.header[0] != "chain" || table.header[1] != "draw") {
    throw std::runtime_error("draws csv must start with chain,draw columns: " + path);
  }
  const bool has_sigma = table.header.back() == "sigma2";
  const std::size_t lambda_col = table.header.size() - (has_sigma ? 2 : 1);
  if (table.header[lambda_col] != "lambda2") {
    throw std::runtime_error("draws csv missing lambda2 column: " + path);
  }
  PosteriorDraws draws;
  draws.family = has_sigma ? Family::linear : Family::logistic;
  for (std::size_t j = 2; j < lambda_col; ++j) draws.labels.push_back(table.header[j]);
  const Eigen::Index p = static_cast<Eigen::Index>(draws.labels.size());

  std::vector<std::vector<std::vector<double>>> per_chain;  // chain -> rows
  for (const auto& row : table.rows) {
    const auto chain = static_cast<std::size_t>(std::stoul(row[0]));
    if (chain >= per_chain.size()) per_chain.resize(chain + 1);
    std::vector<double> vals;
    vals.reserve(row.size() - 2);
    for (std::size_t j = 2; j < row.size(); ++j) {
      vals.push_back(detail::parse_double(row[j], table.header[j]));
    }
    per_chain[chain].push_back(std::move(vals));
  }
  for (std::size_t c = 0; c < per_chain.size(); ++c) {
    ChainDraws ch;
    const auto rows = static_cast<Eigen::Index>(per_chain[c].size());
    ch.beta.resize(rows, p);
    ch.lambda2.resize(rows);
    if (has_sigma) ch.sigma2.resize(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto& vals = per_chain[c][static_cast<std::size_t>(r)];
      for (Eigen::Index j = 0; j < p; ++j) ch.beta(r, j) = vals[static_cast<std::size_t>(j)];
      ch.lambda2[r] = vals[static_cast<std::size_t>(p)];
      if (has_sigma) ch.sigma2[r] = vals[static_cast<std::size_t>(p) + 1];
    }
    draws.chains.push_back(std::move(ch));
  }
  return draws;
}

inline PosteriorDraws read_draws_file(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") {
    return read_draws_csv_file(path);
  }
  return read_draws_binary_file(path);
}

// Provenance record: config + seed + version, written for every run.  The
// stored argv makes a run reproducible via `fusionlasso rerun <run.json>`.
inline void write_run_record(const std::filesystem::path& out_dir, const std::string& subcommand,
                             const std::vector<std::string>& argv, std::uint64_t seed,
                             const nlohmann::json& config) {
  std::filesystem::create_directories(out_dir);
  nlohmann::json j = {
      {"tool", "fusionlasso"},
      {"version", kVersion},
      {"subcommand", subcommand},
      {"seed", seed},
      {"argv", argv},
      {"config", config},
  };
  std::ofstream out(out_dir / "run.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write run.json in " + out_dir.string());
  out << j.dump(2) << "\n";
}

}  // namespace fusionlasso

#include "camfprint/evaluation.hpp"

#include <algorithm>
#include <iomanip>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "camfprint/data_ingest.hpp"

namespace camfp {

namespace {

double compute_cell(const std::vector<std::uint32_t>& rows_i, const std::vector<std::uint32_t>& rows_j,
                    const PairScoreFn& score, const EvalConfig& cfg, std::uint64_t cell_index) {
  std::mt19937_64 rng(derive_seed(cfg.seed, "eval/cell", cell_index));
  std::uniform_int_distribution<std::size_t> pick_i(0, rows_i.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_j(0, rows_j.size() - 1);
  std::vector<std::uint32_t> a(static_cast<std::size_t>(cfg.n_pairs_per_cell));
  std::vector<std::uint32_t> b(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    a[k] = rows_i[pick_i(rng)];
    b[k] = rows_j[pick_j(rng)];
  }
  const auto s = score(a, b);
  if (s.size() != a.size()) throw Error("similarity_matrix: scorer returned the wrong number of scores");
  int same = 0;
  for (double v : s) same += v >= cfg.eta ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(cfg.n_pairs_per_cell);
}

bool same_model(const std::string& a, const std::string& b) {
  const auto pa = parse_device_id(a);
  const auto pb = parse_device_id(b);
  return pa && pb && pa->model_id == pb->model_id;
}

void rank(std::vector<Confusion>& list) {
  std::stable_sort(list.begin(), list.end(), [](const Confusion& x, const Confusion& y) { return x.error > y.error; });
}

}  // namespace

SimilarityMatrix similarity_matrix(const std::vector<std::string>& devices,
                                   const std::vector<std::vector<std::uint32_t>>& members, const PairScoreFn& score,
                                   const EvalConfig& cfg) {
  if (cfg.n_pairs_per_cell < 1) throw ConfigError("similarity_matrix: n_pairs_per_cell must be >= 1");
  if (devices.size() != members.size()) throw ConfigError("similarity_matrix: devices and members differ in size");
  if (devices.empty()) throw ConfigError("similarity_matrix: no devices");
  for (std::size_t d = 0; d < devices.size(); ++d) {
    if (members[d].empty()) throw DataError("similarity_matrix: device " + devices[d] + " has no test signatures");
  }

  const std::size_t n = devices.size();
  SimilarityMatrix m;
  m.devices = devices;
  m.cells.assign(n * n, 0.0);
  m.n_pairs_per_cell = cfg.n_pairs_per_cell;
  m.eta = cfg.eta;
  m.seed = cfg.seed;

  const std::size_t workers = static_cast<std::size_t>(std::max(1, cfg.workers));
  auto run = [&](std::size_t w) {
    for (std::size_t cell = w; cell < n * n; cell += workers) {
      m.cells[cell] = compute_cell(members[cell / n], members[cell % n], score, cfg, cell);
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            run(w);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return m;
}

SimilarityMatrix similarity_matrix(const SignatureStore& store, const SimilarityNet<float>& f_sim,
                                   const Digest& extractor_version, const std::vector<std::string>& devices,
                                   const std::set<std::string>& allowed_paths, const EvalConfig& cfg) {
  std::vector<float> table;
  std::vector<std::vector<std::uint32_t>> members(devices.size());
  std::uint32_t row = 0;
  for (std::size_t d = 0; d < devices.size(); ++d) {
    for (const auto& rec : store.get_by_device(devices[d], extractor_version)) {
      if (!allowed_paths.contains(rec.image_path)) continue;
      table.insert(table.end(), rec.values.begin(), rec.values.end());
      members[d].push_back(row++);
    }
  }
  const PairScoreFn scorer = [&](std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
    const auto s = f_sim.score_indexed(table, a, b);
    return std::vector<double>(s.begin(), s.end());
  };
  return similarity_matrix(devices, members, scorer, cfg);
}

EvalReport overall_accuracy(const SimilarityMatrix& matrix) {
  const std::size_t n = matrix.size();
  if (n == 0 || matrix.cells.size() != n * n) throw ConfigError("overall_accuracy: malformed matrix");
  EvalReport r;
  r.matrix = matrix;
  r.per_cell_accuracy.resize(n * n);
  double total = 0, diag = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double cell = matrix.at(i, j);
      const double acc = i == j ? cell : 1.0 - cell;
      r.per_cell_accuracy[i * n + j] = acc;
      total += acc;
      if (i == j) {
        diag += cell;
      } else if (acc < 1.0) {
        Confusion c{matrix.devices[i], matrix.devices[j], cell, 1.0 - acc,
                    same_model(matrix.devices[i], matrix.devices[j])};
        r.worst_confusions.push_back(c);
      }
    }
  }
  r.overall_accuracy = total / static_cast<double>(n * n);
  r.diagonal_mean = diag / static_cast<double>(n);
  rank(r.worst_confusions);
  for (const auto& c : r.worst_confusions) {
    if (c.same_model) r.same_model_confusions.push_back(c);
  }
  return r;
}

ModelGroupReport same_model_report(const EvalReport& report) {
  const auto& m = report.matrix;
  const std::size_t n = m.size();
  ModelGroupReport g;
  double same_sum = 0, cross_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const bool sm = same_model(m.devices[i], m.devices[j]);
      const double err = 1.0 - report.per_cell_accuracy[i * n + j];
      Confusion c{m.devices[i], m.devices[j], m.at(i, j), err, sm};
      if (sm) {
        same_sum += err;
        ++g.same_model_cells;
        if (err > 0) g.same_model.push_back(c);
      } else {
        cross_sum += err;
        ++g.cross_model_cells;
        if (err > 0) g.cross_model.push_back(c);
      }
    }
  }
  g.same_model_mean_error = g.same_model_cells ? same_sum / static_cast<double>(g.same_model_cells) : 0.0;
  g.cross_model_mean_error = g.cross_model_cells ? cross_sum / static_cast<double>(g.cross_model_cells) : 0.0;
  rank(g.same_model);
  rank(g.cross_model);
  return g;
}

namespace {

nlohmann::ordered_json confusions_json(const std::vector<Confusion>& list) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : list) {
    nlohmann::ordered_json o;
    o["device_a"] = c.device_a;
    o["device_b"] = c.device_b;
    o["cell"] = c.cell;
    o["error"] = c.error;
    o["same_model"] = c.same_model;
    arr.push_back(std::move(o));
  }
  return arr;
}

nlohmann::ordered_json matrix_json(const SimilarityMatrix& m) {
  nlohmann::ordered_json j;
  j["devices"] = m.devices;
  j["n_pairs_per_cell"] = m.n_pairs_per_cell;
  j["eta"] = m.eta;
  j["seed"] = m.seed;
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    rows.push_back(std::vector<double>(m.cells.begin() + static_cast<std::ptrdiff_t>(i * m.size()),
                                       m.cells.begin() + static_cast<std::ptrdiff_t>((i + 1) * m.size())));
  }
  j["cells"] = std::move(rows);
  return j;
}

}  // namespace

std::string report_to_json(const EvalReport& report, const ModelGroupReport& groups) {
  nlohmann::ordered_json j;
  j["overall_accuracy"] = report.overall_accuracy;
  j["diagonal_mean"] = report.diagonal_mean;
  j["matrix"] = matrix_json(report.matrix);
  const std::size_t n = report.matrix.size();
  auto acc = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < n; ++i) {
    acc.push_back(std::vector<double>(report.per_cell_accuracy.begin() + static_cast<std::ptrdiff_t>(i * n),
                                      report.per_cell_accuracy.begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
  }
  j["per_cell_accuracy"] = std::move(acc);
  j["worst_confusions"] = confusions_json(report.worst_confusions);
  j["same_model_confusions"] = confusions_json(report.same_model_confusions);
  nlohmann::ordered_json g;
  g["same_model_mean_error"] = groups.same_model_mean_error;
  g["cross_model_mean_error"] = groups.cross_model_mean_error;
  g["same_model_cells"] = groups.same_model_cells;
  g["cross_model_cells"] = groups.cross_model_cells;
  j["model_groups"] = std::move(g);
  return j.dump(2) + "\n";
}

std::string matrix_to_csv(const SimilarityMatrix& matrix) {
  std::ostringstream out;
  out << "device";
  for (const auto& d : matrix.devices) out << ',' << d;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    out << matrix.devices[i];
    for (std::size_t j = 0; j < matrix.size(); ++j) out << ',' << matrix.at(i, j);
    out << '\n';
  }
  return out.str();
}

SimilarityMatrix matrix_from_json(std::string_view json) {
  try {
    auto j = nlohmann::json::parse(json);
    if (j.contains("matrix")) j = j.at("matrix");
    SimilarityMatrix m;
    m.devices = j.at("devices").get<std::vector<std::string>>();
    m.n_pairs_per_cell = j.at("n_pairs_per_cell").get<int>();
    m.eta = j.at("eta").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& row : j.at("cells")) {
      const auto r = row.get<std::vector<double>>();
      if (r.size() != m.devices.size()) throw DataError("matrix: ragged row");
      m.cells.insert(m.cells.end(), r.begin(), r.end());
    }
    if (m.cells.size() != m.devices.size() * m.devices.size()) throw DataError("matrix: wrong number of rows");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("matrix: malformed JSON: ") + e.what());
  }
}

}  // namespace camfp

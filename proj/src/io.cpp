#include "velokin/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "velokin/binary_io.hpp"
#include "velokin/text.hpp"

namespace velokin::io {

namespace {

using nlohmann::json;

constexpr char kColumnarMagic[8] = {'V', 'K', 'C', 'O', 'L', '0', '0', '1'};

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.push_back(trim(field));
      field.clear();
    } else {
      field.push_back(ch);
    }
  }
  out.push_back(trim(field));
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

enum class Cell { kInteger, kNonInteger, kText };

// Classifies a field and stores its integer value when it has one.
Cell classify(const std::string& tok, std::int64_t& value) {
  if (tok.empty()) return Cell::kText;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (*first == '+') ++first;
  auto [p, ec] = std::from_chars(first, last, value);
  if (ec == std::errc() && p == last) return Cell::kInteger;
  double d = 0.0;
  auto [pd, ecd] = std::from_chars(first, last, d);
  if (ecd == std::errc() && pd == last) {
    if (std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9.0e15) {
      value = static_cast<std::int64_t>(d);
      return Cell::kInteger;
    }
    return Cell::kNonInteger;
  }
  return Cell::kText;
}

std::int32_t checked_count(std::int64_t v, const std::string& where) {
  if (v < 0) throw DatasetError(DatasetErrorKind::kNegativeCount, "negative count at " + where);
  if (v > std::numeric_limits<std::int32_t>::max()) {
    throw DatasetError(DatasetErrorKind::kMalformed, "count too large at " + where);
  }
  return static_cast<std::int32_t>(v);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

json number(double x) {
  if (std::isfinite(x)) return x;
  return format_double(x);
}

double from_number(const json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw std::runtime_error("bad number in JSON: " + s);
  }
  return j.get<double>();
}

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
  return a;
}

json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
  return rows;
}

Eigen::VectorXd json_vec(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = from_number(a[i]);
  return v;
}

Eigen::MatrixXd json_mat(const json& rows) {
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = r == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(rows[0].size());
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != c) {
      throw std::runtime_error("ragged matrix in JSON");
    }
    m.row(i) = json_vec(rows[static_cast<std::size_t>(i)]).transpose();
  }
  return m;
}

json hyper_json(const Hyperparameters& h) {
  return {{"bound_a", h.bound_a}, {"sector_p", h.sector_p}, {"beta", h.beta}};
}

Hyperparameters json_hyper(const json& j) {
  Hyperparameters h;
  h.bound_a = j.at("bound_a").get<double>();
  h.sector_p = j.at("sector_p").get<double>();
  h.beta = j.at("beta").get<double>();
  return h;
}

json config_json(const ChainConfig& c) {
  return {{"n_iter", c.n_iter},
          {"n_burnin", c.n_burnin},
          {"thin", c.thin},
          {"seed", c.seed},
          {"target_accept", c.target_accept},
          {"adapt_start", c.adapt_start},
          {"adapt_end", c.resolved_adapt_end()},
          {"gamma_c1", c.gamma_c1},
          {"gamma_c2", c.gamma_c2},
          {"univariate_adapt_interval", c.univariate_adapt_interval},
          {"adapt", c.adapt}};
}

json acceptance_json(const BlockAcceptance& a) {
  auto one = [](const AcceptanceStats& s) {
    return json{{"proposed", s.proposed}, {"accepted", s.accepted}, {"rate", s.rate()}};
  };
  return {{"block", one(a.block)},
          {"eta", one(a.eta)},
          {"u_switch", one(a.u_sw)},
          {"phi", one(a.phi)},
          {"lambda", one(a.lambda)}};
}

json waic_json(const WaicResult& w) {
  return {{"waic", number(w.waic)},
          {"lppd", number(w.lppd)},
          {"p_waic", number(w.p_waic)},
          {"draws", w.draws},
          {"points", w.points}};
}

// Sorted token order: numeric when every token is an integer.
std::vector<std::string> sorted_tokens(const std::vector<std::string>& tokens) {
  std::set<std::string> uniq(tokens.begin(), tokens.end());
  std::vector<std::string> out(uniq.begin(), uniq.end());
  bool numeric = true;
  for (const auto& t : out) {
    std::int64_t v = 0;
    numeric = numeric && classify(t, v) == Cell::kInteger;
  }
  if (numeric) {
    std::sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) {
      return std::stoll(a) < std::stoll(b);
    });
  }
  return out;
}

std::vector<int> index_tokens(const std::vector<std::string>& tokens,
                              const std::vector<std::string>& names) {
  std::map<std::string, int> idx;
  for (std::size_t i = 0; i < names.size(); ++i) idx[names[i]] = static_cast<int>(i);
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(idx.at(t));
  return out;
}

template <typename T>
json int_array(const std::vector<T>& v) {
  json a = json::array();
  for (auto x : v) a.push_back(x);
  return a;
}

std::vector<int> json_ints(const json& a) { return a.get<std::vector<int>>(); }

}  // namespace

CountMatrix read_matrix_market(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw DatasetError(DatasetErrorKind::kEmpty, path.string() + " is empty");
  std::istringstream banner(lower(line));
  std::string tag, object, format, field, symmetry;
  banner >> tag >> object >> format >> field >> symmetry;
  if (tag != "%%matrixmarket" || object != "matrix" || format != "coordinate") {
    throw DatasetError(DatasetErrorKind::kMalformed,
                       path.string() + ": expected a Matrix Market coordinate matrix");
  }
  if (field != "integer" && field != "real") {
    throw DatasetError(DatasetErrorKind::kNonIntegerEntry,
                       path.string() + ": unsupported field type '" + field + "'");
  }
  if (symmetry != "general") {
    throw DatasetError(DatasetErrorKind::kMalformed, path.string() + ": only general matrices are supported");
  }
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (!t.empty() && t[0] != '%') break;
  }
  std::istringstream size_line(line);
  std::int64_t rows = -1, cols = -1, nnz = -1;
  size_line >> rows >> cols >> nnz;
  if (!size_line || rows < 1 || cols < 1 || nnz < 0) {
    throw DatasetError(DatasetErrorKind::kMalformed, path.string() + ": bad size line");
  }
  CountMatrix m = CountMatrix::Zero(rows, cols);
  std::int64_t seen = 0;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '%') continue;
    std::istringstream entry(t);
    std::int64_t i = 0, j = 0;
    std::string vtok;
    entry >> i >> j >> vtok;
    if (!entry && vtok.empty()) {
      throw DatasetError(DatasetErrorKind::kMalformed, path.string() + ": bad entry '" + t + "'");
    }
    if (i < 1 || i > rows || j < 1 || j > cols) {
      throw DatasetError(DatasetErrorKind::kMalformed, path.string() + ": entry out of range '" + t + "'");
    }
    std::int64_t v = 0;
    const Cell kind = classify(vtok, v);
    const std::string where = path.string() + " (" + std::to_string(i) + "," + std::to_string(j) + ")";
    if (kind != Cell::kInteger) {
      throw DatasetError(DatasetErrorKind::kNonIntegerEntry, "non-integer entry '" + vtok + "' at " + where);
    }
    const std::int64_t total = static_cast<std::int64_t>(m(i - 1, j - 1)) + v;
    m(i - 1, j - 1) = checked_count(total, where);
    ++seen;
  }
  if (seen != nnz) {
    throw DatasetError(DatasetErrorKind::kMalformed, path.string() + ": expected " +
                                                         std::to_string(nnz) + " entries, found " +
                                                         std::to_string(seen));
  }
  return m;
}

CountMatrix read_dense_csv(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  std::vector<std::vector<std::int32_t>> rows;
  bool first_line = true;
  int row_name_column = -1;  // undecided
  std::size_t width = 0;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split_csv(line);
    std::vector<Cell> kinds(f.size());
    std::vector<std::int64_t> vals(f.size(), 0);
    for (std::size_t k = 0; k < f.size(); ++k) kinds[k] = classify(f[k], vals[k]);
    if (first_line) {
      first_line = false;
      bool header = false;
      for (std::size_t k = 1; k < f.size(); ++k) header = header || kinds[k] == Cell::kText;
      if (f.size() == 1) header = kinds[0] == Cell::kText;
      if (header) continue;
    }
    if (row_name_column < 0) row_name_column = kinds[0] == Cell::kText ? 1 : 0;
    const auto skip = static_cast<std::size_t>(row_name_column);
    if (f.size() <= skip) {
      throw DatasetError(DatasetErrorKind::kMalformed, path.string() + ": empty row at line " + std::to_string(line_no));
    }
    const std::size_t n = f.size() - skip;
    if (width == 0) width = n;
    if (n != width) {
      throw DatasetError(DatasetErrorKind::kDimensionMismatch,
                         path.string() + ": line " + std::to_string(line_no) + " has " +
                             std::to_string(n) + " values, expected " + std::to_string(width));
    }
    std::vector<std::int32_t> row(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::string where = path.string() + " line " + std::to_string(line_no) + " column " +
                                std::to_string(k + skip + 1);
      if (kinds[k + skip] != Cell::kInteger) {
        throw DatasetError(DatasetErrorKind::kNonIntegerEntry,
                           "non-integer entry '" + f[k + skip] + "' at " + where);
      }
      row[k] = checked_count(vals[k + skip], where);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DatasetError(DatasetErrorKind::kEmpty, path.string() + " has no data rows");
  CountMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

CountMatrix read_counts(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string first;
  std::getline(in, first);
  if (lower(first).rfind("%%matrixmarket", 0) == 0) return read_matrix_market(path);
  return read_dense_csv(path);
}

void write_matrix_market(const fs::path& path, const CountMatrix& m) {
  std::ofstream out = open_out(path);
  std::int64_t nnz = 0;
  for (Eigen::Index i = 0; i < m.size(); ++i) nnz += m.data()[i] != 0 ? 1 : 0;
  out << "%%MatrixMarket matrix coordinate integer general\n";
  out << m.rows() << ' ' << m.cols() << ' ' << nnz << '\n';
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (m(i, j) != 0) out << i + 1 << ' ' << j + 1 << ' ' << m(i, j) << '\n';
    }
  }
}

void write_dense_csv(const fs::path& path, const CountMatrix& m) {
  std::ofstream out = open_out(path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << m(i, j);
    }
    out << '\n';
  }
}

void write_dense_csv(const fs::path& path, const Eigen::MatrixXd& m,
                     const std::vector<std::string>& header) {
  std::ofstream out = open_out(path);
  if (!header.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
    out << '\n';
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

Labels read_labels(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  Labels lab;
  std::vector<std::string> groups;
  std::vector<std::string> subgroups;
  std::set<std::string> ids;
  std::size_t columns = 0;
  bool first = true;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split_csv(line);
    if (first) {
      first = false;
      const std::string head = lower(f[0]);
      if (head == "cell" || head == "cell_id" || head == "id" || head == "barcode") {
        columns = f.size();
        continue;
      }
    }
    if (columns == 0) columns = f.size();
    if (f.size() != columns || (columns != 2 && columns != 3)) {
      throw DatasetError(DatasetErrorKind::kMalformed,
                         path.string() + ": line " + std::to_string(line_no) +
                             " must have 2 or 3 columns (cell, group[, subgroup])");
    }
    if (f[1].empty() || (columns == 3 && f[2].empty())) {
      throw DatasetError(DatasetErrorKind::kMalformed, path.string() + ": empty label at line " + std::to_string(line_no));
    }
    if (!ids.insert(f[0]).second) {
      throw DatasetError(DatasetErrorKind::kMalformed, path.string() + ": duplicate cell id '" + f[0] + "'");
    }
    lab.cell_ids.push_back(f[0]);
    groups.push_back(f[1]);
    if (columns == 3) subgroups.push_back(f[2]);
  }
  if (lab.cell_ids.empty()) throw DatasetError(DatasetErrorKind::kEmpty, path.string() + " has no labels");
  lab.group_names = sorted_tokens(groups);
  lab.group = index_tokens(groups, lab.group_names);
  lab.has_subgroups = columns == 3;
  if (lab.has_subgroups) {
    lab.subgroup_names = sorted_tokens(subgroups);
    lab.subgroup = index_tokens(subgroups, lab.subgroup_names);
  } else {
    lab.subgroup_names = lab.group_names;
    lab.subgroup = lab.group;
  }
  return lab;
}

void write_labels(const fs::path& path, const Labels& labels) {
  std::ofstream out = open_out(path);
  out << (labels.has_subgroups ? "cell,group,subgroup\n" : "cell,group\n");
  for (std::size_t c = 0; c < labels.group.size(); ++c) {
    const std::string id = c < labels.cell_ids.size() ? labels.cell_ids[c] : "cell" + std::to_string(c + 1);
    out << id << ',' << labels.group_names[static_cast<std::size_t>(labels.group[c])];
    if (labels.has_subgroups) out << ',' << labels.subgroup_names[static_cast<std::size_t>(labels.subgroup[c])];
    out << '\n';
  }
}

Labels make_labels(const std::vector<int>& group, const std::vector<int>& subgroup) {
  Labels lab;
  lab.group = group;
  lab.subgroup = subgroup;
  lab.has_subgroups = true;
  const int k = group.empty() ? 0 : *std::max_element(group.begin(), group.end()) + 1;
  const int r = subgroup.empty() ? 0 : *std::max_element(subgroup.begin(), subgroup.end()) + 1;
  for (int i = 0; i < k; ++i) lab.group_names.push_back(std::to_string(i + 1));
  for (int i = 0; i < r; ++i) lab.subgroup_names.push_back(std::to_string(i + 1));
  for (std::size_t c = 0; c < group.size(); ++c) lab.cell_ids.push_back("cell" + std::to_string(c + 1));
  return lab;
}

Dataset ingest(CountMatrix spliced, CountMatrix unspliced, const Labels& labels) {
  if (spliced.rows() != unspliced.rows() || spliced.cols() != unspliced.cols()) {
    throw DatasetError(DatasetErrorKind::kDimensionMismatch,
                       "spliced is " + std::to_string(spliced.rows()) + "x" + std::to_string(spliced.cols()) +
                           " but unspliced is " + std::to_string(unspliced.rows()) + "x" +
                           std::to_string(unspliced.cols()));
  }
  if (static_cast<Eigen::Index>(labels.group.size()) != spliced.rows()) {
    throw DatasetError(DatasetErrorKind::kDimensionMismatch,
                       "label table has " + std::to_string(labels.group.size()) + " cells but the matrices have " +
                           std::to_string(spliced.rows()));
  }
  Dataset d = Dataset::from_labels(std::move(spliced), std::move(unspliced), labels.group, labels.subgroup);
  d.validate();
  return d;
}

Dataset ingest(const fs::path& spliced, const fs::path& unspliced, const fs::path& labels) {
  return ingest(read_counts(spliced), read_counts(unspliced), read_labels(labels));
}

void write_columnar(const fs::path& path, const Eigen::MatrixXd& m) {
  std::ofstream out = open_out(path);
  out.write(kColumnarMagic, sizeof(kColumnarMagic));
  binary::Writer w(out);
  w.put<std::int64_t>(m.rows());
  w.put<std::int64_t>(m.cols());
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Eigen::MatrixXd read_columnar(const fs::path& path) {
  std::ifstream in = open_in(path);
  char magic[sizeof(kColumnarMagic)] = {};
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + sizeof(magic), kColumnarMagic)) {
    throw std::runtime_error(path.string() + " is not a columnar draws file");
  }
  binary::Reader r(in);
  const auto rows = r.get<std::int64_t>();
  const auto cols = r.get<std::int64_t>();
  const auto expected = static_cast<std::uintmax_t>(16 + sizeof(kColumnarMagic)) +
                        static_cast<std::uintmax_t>(rows) * static_cast<std::uintmax_t>(cols) * sizeof(double);
  if (rows < 0 || cols < 0 || fs::file_size(path) != expected) {
    throw std::runtime_error(path.string() + " is truncated or corrupt");
  }
  Eigen::MatrixXd m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
  if (!in) throw std::runtime_error(path.string() + " is truncated");
  return m;
}

namespace {

template <typename Get>
Eigen::MatrixXd stack(const std::vector<ModelState>& draws, Eigen::Index width, Get get) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(draws.size()), width);
  for (std::size_t d = 0; d < draws.size(); ++d) {
    const auto& v = get(draws[d]);
    m.row(static_cast<Eigen::Index>(d)) = Eigen::Map<const Eigen::RowVectorXd>(v.data(), width);
  }
  return m;
}

const std::vector<std::string> kStateFamilies = {"u_off", "u_on", "s_on", "eta", "u_switch", "phi", "lambda"};

}  // namespace

void write_posterior(const fs::path& dir, const PosteriorDraws& post, const Dataset& data) {
  fs::create_directories(dir);
  const auto& d = post.draws;
  const int G = data.genes();
  const int C = data.cells();
  const int K = data.n_groups;
  const int R = data.n_subgroups;
  write_columnar(dir / "u_off.bin", stack(d, G, [](const ModelState& s) -> const Eigen::VectorXd& { return s.u_off; }));
  write_columnar(dir / "u_on.bin", stack(d, G, [](const ModelState& s) -> const Eigen::VectorXd& { return s.u_on; }));
  write_columnar(dir / "s_on.bin", stack(d, G, [](const ModelState& s) -> const Eigen::VectorXd& { return s.s_on; }));
  write_columnar(dir / "eta.bin", stack(d, G, [](const ModelState& s) -> const Eigen::VectorXd& { return s.eta; }));
  write_columnar(dir / "u_switch.bin", stack(d, K * G, [](const ModelState& s) -> const Eigen::MatrixXd& { return s.u_sw; }));
  write_columnar(dir / "phi.bin", stack(d, R * G, [](const ModelState& s) -> const Eigen::MatrixXd& { return s.phi; }));
  write_columnar(dir / "lambda.bin", stack(d, C, [](const ModelState& s) -> const Eigen::VectorXd& { return s.lambda; }));
  Eigen::MatrixXd lp(static_cast<Eigen::Index>(d.size()), 2);
  for (std::size_t i = 0; i < d.size(); ++i) {
    lp(static_cast<Eigen::Index>(i), 0) = static_cast<double>(post.iteration[i]);
    lp(static_cast<Eigen::Index>(i), 1) = post.log_posterior[i];
  }
  write_columnar(dir / "log_posterior.bin", lp);

  const WaicResult w = post.pointwise.draws() >= 2 ? post.pointwise.result() : WaicResult{};
  const Hyperparameters hyper = d.empty() ? Hyperparameters{} : d.front().hyper;
  json meta = {{"format", "velokin-posterior-1"},
               {"genes", G},
               {"cells", C},
               {"groups", K},
               {"subgroups", R},
               {"draws", d.size()},
               {"hyper", hyper_json(hyper)},
               {"group_of_subgroup", int_array(data.group_of_subgroup)},
               {"subgroup_of_cell", int_array(data.subgroup_of_cell)},
               {"group_of_cell", int_array(data.group_of_cell)},
               {"config", config_json(post.config)},
               {"completed_iterations", post.completed_iterations},
               {"acceptance", acceptance_json(post.acceptance)},
               {"acceptance_after_adaptation", acceptance_json(post.acceptance_frozen)},
               {"waic", waic_json(w)}};
  std::ofstream out = open_out(dir / "meta.json");
  out << meta.dump(2) << '\n';
}

StoredPosterior read_posterior(const fs::path& dir) {
  std::ifstream meta_in = open_in(dir / "meta.json");
  json meta;
  try {
    meta_in >> meta;
  } catch (const json::exception& e) {
    throw std::runtime_error((dir / "meta.json").string() + ": " + e.what());
  }
  if (meta.value("format", "") != "velokin-posterior-1") {
    throw std::runtime_error((dir / "meta.json").string() + " is not a posterior description");
  }
  const int G = meta.at("genes").get<int>();
  const int C = meta.at("cells").get<int>();
  const int K = meta.at("groups").get<int>();
  const int R = meta.at("subgroups").get<int>();
  const auto n = meta.at("draws").get<std::size_t>();
  const Hyperparameters hyper = json_hyper(meta.at("hyper"));
  StoredPosterior out;
  out.group_of_subgroup = json_ints(meta.at("group_of_subgroup"));
  out.subgroup_of_cell = json_ints(meta.at("subgroup_of_cell"));
  out.group_of_cell = json_ints(meta.at("group_of_cell"));
  const json& w = meta.at("waic");
  out.waic = {from_number(w.at("waic")), from_number(w.at("lppd")), from_number(w.at("p_waic")),
              w.at("draws").get<std::int64_t>(), w.at("points").get<std::int64_t>()};

  std::map<std::string, Eigen::MatrixXd> fam;
  const std::map<std::string, Eigen::Index> width = {{"u_off", G}, {"u_on", G}, {"s_on", G}, {"eta", G},
                                                     {"u_switch", K * G}, {"phi", R * G}, {"lambda", C}};
  for (const auto& name : kStateFamilies) {
    fam[name] = read_columnar(dir / (name + ".bin"));
    if (fam[name].rows() != static_cast<Eigen::Index>(n) || fam[name].cols() != width.at(name)) {
      throw std::runtime_error(name + ".bin does not match meta.json");
    }
  }
  const Eigen::MatrixXd lp = read_columnar(dir / "log_posterior.bin");
  if (lp.rows() != static_cast<Eigen::Index>(n) || lp.cols() != 2) {
    throw std::runtime_error("log_posterior.bin does not match meta.json");
  }
  for (std::size_t d = 0; d < n; ++d) {
    const auto i = static_cast<Eigen::Index>(d);
    ModelState st = ModelState::zeros(G, K, R, C, hyper);
    st.u_off = fam["u_off"].row(i).transpose();
    st.u_on = fam["u_on"].row(i).transpose();
    st.s_on = fam["s_on"].row(i).transpose();
    st.eta = fam["eta"].row(i).transpose();
    st.u_sw = Eigen::Map<const Eigen::MatrixXd>(Eigen::RowVectorXd(fam["u_switch"].row(i)).data(), K, G);
    st.phi = Eigen::Map<const Eigen::MatrixXd>(Eigen::RowVectorXd(fam["phi"].row(i)).data(), R, G);
    st.lambda = fam["lambda"].row(i).transpose();
    out.draws.push_back(std::move(st));
    out.log_posterior.push_back(lp(i, 1));
  }
  return out;
}

void export_posterior_csv(const fs::path& dir, const StoredPosterior& post) {
  for (const auto& name : kStateFamilies) {
    write_dense_csv(dir / (name + ".csv"), read_columnar(dir / (name + ".bin")));
  }
  Eigen::MatrixXd lp(static_cast<Eigen::Index>(post.log_posterior.size()), 1);
  for (std::size_t i = 0; i < post.log_posterior.size(); ++i) lp(static_cast<Eigen::Index>(i), 0) = post.log_posterior[i];
  write_dense_csv(dir / "log_posterior.csv", lp, {"log_posterior"});
}

void write_truth(const fs::path& path, const SimulationTruth& t) {
  const ScenarioSpec& s = t.spec;
  json j = {{"format", "velokin-truth-1"},
            {"spec",
             {{"genes", s.genes},
              {"cells", s.cells},
              {"groups", s.groups},
              {"subgroups", s.subgroups},
              {"hierarchy_means", s.hierarchy_means},
              {"seed", s.seed},
              {"time_variance", s.time_variance},
              {"hyper", hyper_json(s.hyper)}}},
            {"hyper", hyper_json(t.state.hyper)},
            {"u_off", vec_json(t.state.u_off)},
            {"u_on", vec_json(t.state.u_on)},
            {"s_on", vec_json(t.state.s_on)},
            {"eta", vec_json(t.state.eta)},
            {"u_switch", mat_json(t.state.u_sw)},
            {"phi", mat_json(t.state.phi)},
            {"lambda", vec_json(t.state.lambda)},
            {"omega", mat_json(t.omega)},
            {"elapsed", mat_json(t.elapsed)},
            {"hierarchy_mean", mat_json(t.hierarchy_mean)},
            {"mean_of_subgroup", int_array(t.mean_of_subgroup)},
            {"group_of_cell", int_array(t.group_of_cell)},
            {"subgroup_of_cell", int_array(t.subgroup_of_cell)},
            {"group_of_subgroup", int_array(t.group_of_subgroup)}};
  std::ofstream out = open_out(path);
  out << j.dump(1) << '\n';
}

SimulationTruth read_truth(const fs::path& path) {
  std::ifstream in = open_in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "velokin-truth-1") throw std::runtime_error(path.string() + " is not a truth file");
  SimulationTruth t;
  const json& s = j.at("spec");
  t.spec.genes = s.at("genes").get<int>();
  t.spec.cells = s.at("cells").get<int>();
  t.spec.groups = s.at("groups").get<int>();
  t.spec.subgroups = s.at("subgroups").get<int>();
  t.spec.hierarchy_means = s.at("hierarchy_means").get<int>();
  t.spec.seed = s.at("seed").get<std::uint64_t>();
  t.spec.time_variance = s.at("time_variance").get<double>();
  t.spec.hyper = json_hyper(s.at("hyper"));
  t.state.hyper = json_hyper(j.at("hyper"));
  t.state.u_off = json_vec(j.at("u_off"));
  t.state.u_on = json_vec(j.at("u_on"));
  t.state.s_on = json_vec(j.at("s_on"));
  t.state.eta = json_vec(j.at("eta"));
  t.state.u_sw = json_mat(j.at("u_switch"));
  t.state.phi = json_mat(j.at("phi"));
  t.state.lambda = json_vec(j.at("lambda"));
  t.omega = json_mat(j.at("omega"));
  t.elapsed = json_mat(j.at("elapsed"));
  t.hierarchy_mean = json_mat(j.at("hierarchy_mean"));
  t.mean_of_subgroup = json_ints(j.at("mean_of_subgroup"));
  t.group_of_cell = json_ints(j.at("group_of_cell"));
  t.subgroup_of_cell = json_ints(j.at("subgroup_of_cell"));
  t.group_of_subgroup = json_ints(j.at("group_of_subgroup"));
  return t;
}

void write_waic(const fs::path& path, const WaicResult& w) {
  std::ofstream out = open_out(path);
  out << waic_json(w).dump(2) << '\n';
}

Settings read_settings(const fs::path& path) {
  std::ifstream in = open_in(path);
  Settings s;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos || trim(body.substr(0, eq)).empty()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    s[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
  }
  return s;
}

void write_settings(const fs::path& path, const Settings& s) {
  std::ofstream out = open_out(path);
  for (const auto& [k, v] : s) out << k << " = " << v << '\n';
}

}  // namespace velokin::io

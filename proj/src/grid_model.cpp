#include "opf_resid/grid_model.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>

#include "opf_resid/error.hpp"

namespace opf_resid {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

using Table = std::vector<std::vector<double>>;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Drops %-comments line by line.
std::string strip_comments(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_comment = false;
  for (char c : text) {
    if (c == '\n') {
      in_comment = false;
      out.push_back(c);
    } else if (c == '%') {
      in_comment = true;
    } else if (!in_comment) {
      out.push_back(c);
    }
  }
  return out;
}

// Finds `mpc.<field>` followed by `=` and returns the position after `=`.
std::optional<size_t> find_assignment(std::string_view text,
                                      std::string_view field) {
  const std::string key = "mpc." + std::string(field);
  size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string_view::npos) {
    size_t p = pos + key.size();
    while (p < text.size() && (text[p] == ' ' || text[p] == '\t')) {
      ++p;
    }
    if (p < text.size() && text[p] == '=') {
      return p + 1;
    }
    pos = p;
  }
  return std::nullopt;
}

double parse_number(std::string_view token, std::string_view table, int row) {
  double value = 0.0;
  // from_chars does not accept a leading '+'.
  if (!token.empty() && token.front() == '+') {
    token.remove_prefix(1);
  }
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    if (token == "Inf" || token == "inf") {
      return INFINITY;
    }
    if (token == "-Inf" || token == "-inf") {
      return -INFINITY;
    }
    throw ParseError("table '" + std::string(table) + "', row " +
                     std::to_string(row) + ": cannot parse value '" +
                     std::string(token) + "'");
  }
  return value;
}

Table parse_table(std::string_view text, std::string_view field,
                  size_t min_cols) {
  const auto eq = find_assignment(text, field);
  if (!eq) {
    throw ParseError("missing table 'mpc." + std::string(field) + "'");
  }
  const size_t open = text.find('[', *eq);
  const size_t close = text.find(']', *eq);
  if (open == std::string_view::npos || close == std::string_view::npos ||
      close < open) {
    throw ParseError("table '" + std::string(field) + "' is not bracketed");
  }
  const std::string_view body = text.substr(open + 1, close - open - 1);

  Table rows;
  size_t start = 0;
  while (start <= body.size()) {
    size_t stop = body.find_first_of(";\n", start);
    if (stop == std::string_view::npos) {
      stop = body.size();
    }
    const std::string_view line = trim(body.substr(start, stop - start));
    start = stop + 1;
    if (line.empty()) {
      continue;
    }
    const int row_no = static_cast<int>(rows.size()) + 1;
    std::vector<double> row;
    size_t p = 0;
    while (p < line.size()) {
      while (p < line.size() &&
             (line[p] == ' ' || line[p] == '\t' || line[p] == ',')) {
        ++p;
      }
      if (p >= line.size()) {
        break;
      }
      size_t q = p;
      while (q < line.size() && line[q] != ' ' && line[q] != '\t' &&
             line[q] != ',') {
        ++q;
      }
      row.push_back(parse_number(line.substr(p, q - p), field, row_no));
      p = q;
    }
    if (row.size() < min_cols) {
      throw ParseError("table '" + std::string(field) + "', row " +
                       std::to_string(row_no) + ": expected at least " +
                       std::to_string(min_cols) + " columns, got " +
                       std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

double parse_scalar(std::string_view text, std::string_view field) {
  const auto eq = find_assignment(text, field);
  if (!eq) {
    throw ParseError("missing scalar 'mpc." + std::string(field) + "'");
  }
  const size_t semi = text.find_first_of(";\n", *eq);
  return parse_number(trim(text.substr(*eq, semi - *eq)), field, 1);
}

}  // namespace

std::string_view to_string(BusKind kind) {
  switch (kind) {
    case BusKind::reference:
      return "reference";
    case BusKind::generator:
      return "generator";
    case BusKind::load:
      return "load";
  }
  return "unknown";
}

int GridCase::num_active_branches() const {
  int n = 0;
  for (const auto& br : branches) {
    n += br.in_service ? 1 : 0;
  }
  return n;
}

int GridCase::reference_bus() const {
  for (int i = 0; i < num_buses(); ++i) {
    if (buses[i].kind == BusKind::reference) {
      return i;
    }
  }
  throw ValidationError("case has no reference bus");
}

int GridCase::bus_index(int external_id) const {
  const auto it = index_of_.find(external_id);
  if (it == index_of_.end()) {
    throw ValidationError("unknown bus id " + std::to_string(external_id));
  }
  return it->second;
}

std::vector<std::vector<int>> GridCase::gens_by_bus() const {
  std::vector<std::vector<int>> out(buses.size());
  for (int g = 0; g < num_gens(); ++g) {
    out[gens[g].bus].push_back(g);
  }
  return out;
}

void GridCase::reindex() {
  index_of_.clear();
  for (int i = 0; i < num_buses(); ++i) {
    if (!index_of_.emplace(buses[i].id, i).second) {
      throw ValidationError("duplicate bus id " + std::to_string(buses[i].id));
    }
  }
}

void GridCase::validate() const {
  if (!(base_mva > 0.0)) {
    throw ValidationError("baseMVA must be positive");
  }
  int refs = 0;
  for (const auto& bus : buses) {
    if (bus.kind == BusKind::reference) {
      ++refs;
    }
    if (!(bus.vmin < bus.vmax)) {
      throw ValidationError("bus " + std::to_string(bus.id) +
                            ": Vmin must be below Vmax");
    }
  }
  if (refs == 0) {
    throw ValidationError("case has no reference bus");
  }
  if (refs > 1) {
    throw ValidationError("case has " + std::to_string(refs) +
                          " reference buses, expected exactly one");
  }
  std::vector<int> gen_count(buses.size(), 0);
  for (size_t g = 0; g < gens.size(); ++g) {
    const auto& gen = gens[g];
    if (gen.bus < 0 || gen.bus >= num_buses()) {
      throw ValidationError("generator " + std::to_string(g + 1) +
                            " references a missing bus");
    }
    if (gen.pmin > gen.pmax || gen.qmin > gen.qmax) {
      throw ValidationError("generator " + std::to_string(g + 1) +
                            ": inverted bounds");
    }
    if (gen.cost.c2 < 0.0) {
      throw ValidationError("generator " + std::to_string(g + 1) +
                            ": non-convex cost (c2 < 0)");
    }
    ++gen_count[gen.bus];
  }
  for (int i = 0; i < num_buses(); ++i) {
    if (buses[i].kind == BusKind::load && gen_count[i] > 0) {
      throw ValidationError("load bus " + std::to_string(buses[i].id) +
                            " carries a generator");
    }
    if (buses[i].kind != BusKind::load && gen_count[i] == 0) {
      throw ValidationError("bus " + std::to_string(buses[i].id) +
                            " is a " + std::string(to_string(buses[i].kind)) +
                            " bus without generators");
    }
  }
  for (size_t k = 0; k < branches.size(); ++k) {
    const auto& br = branches[k];
    if (br.from < 0 || br.from >= num_buses() || br.to < 0 ||
        br.to >= num_buses()) {
      throw ValidationError("branch " + std::to_string(k + 1) +
                            " references a missing bus");
    }
    if (!(br.tap > 0.0)) {
      throw ValidationError("branch " + std::to_string(k + 1) +
                            ": tap ratio must be positive");
    }
    if (br.in_service && br.r * br.r + br.x * br.x <= 0.0) {
      throw ValidationError("branch " + std::to_string(k + 1) +
                            ": zero series impedance");
    }
  }
}

GridCase parse_matpower_case(std::string_view raw) {
  const std::string text = strip_comments(raw);
  GridCase grid;
  grid.base_mva = parse_scalar(text, "baseMVA");
  const double base = grid.base_mva;

  const Table bus = parse_table(text, "bus", 13);
  const Table gen = parse_table(text, "gen", 10);
  const Table branch = parse_table(text, "branch", 11);
  const Table gencost = parse_table(text, "gencost", 4);

  if (const auto fn = text.find("function"); fn != std::string::npos) {
    const auto eq = text.find('=', fn);
    const auto nl = text.find('\n', fn);
    if (eq != std::string::npos && eq < nl) {
      grid.name = std::string(trim(std::string_view(text).substr(eq + 1, nl - eq - 1)));
    }
  }

  grid.buses.reserve(bus.size());
  for (size_t i = 0; i < bus.size(); ++i) {
    const auto& row = bus[i];
    BusRecord rec;
    rec.id = static_cast<int>(row[0]);
    switch (static_cast<int>(row[1])) {
      case 1:
        rec.kind = BusKind::load;
        break;
      case 2:
        rec.kind = BusKind::generator;
        break;
      case 3:
        rec.kind = BusKind::reference;
        break;
      default:
        throw ParseError("table 'bus', row " + std::to_string(i + 1) +
                         ": unsupported bus type " +
                         std::to_string(static_cast<int>(row[1])));
    }
    rec.pd = row[2] / base;
    rec.qd = row[3] / base;
    rec.gs = row[4] / base;
    rec.bs = row[5] / base;
    rec.vm0 = row[7];
    rec.va0 = row[8] * kDeg;
    rec.vmax = row[11];
    rec.vmin = row[12];
    grid.buses.push_back(rec);
  }
  grid.reindex();

  if (gencost.size() != gen.size()) {
    throw ValidationError("gencost has " + std::to_string(gencost.size()) +
                          " rows but gen has " + std::to_string(gen.size()));
  }
  for (size_t g = 0; g < gen.size(); ++g) {
    const auto& row = gen[g];
    const auto& cost = gencost[g];
    if (static_cast<int>(cost[0]) != 2) {
      throw ValidationError("gencost row " + std::to_string(g + 1) +
                            ": only polynomial (model 2) costs are supported");
    }
    const int n = static_cast<int>(cost[3]);
    if (n < 1 || n > 3) {
      throw ValidationError("gencost row " + std::to_string(g + 1) +
                            ": polynomial degree above 2 is not supported");
    }
    if (cost.size() < static_cast<size_t>(4 + n)) {
      throw ParseError("table 'gencost', row " + std::to_string(g + 1) +
                       ": expected " + std::to_string(n) + " coefficients");
    }
    if (row[7] <= 0.0) {
      continue;  // out of service
    }
    GenRecord rec;
    rec.bus = grid.bus_index(static_cast<int>(row[0]));
    rec.pg0 = row[1] / base;
    rec.qg0 = row[2] / base;
    rec.qmax = row[3] / base;
    rec.qmin = row[4] / base;
    rec.vg0 = row[5];
    rec.pmax = row[8] / base;
    rec.pmin = row[9] / base;
    // Highest order first in the file.
    double coef[3] = {0.0, 0.0, 0.0};  // c0, c1, c2
    for (int k = 0; k < n; ++k) {
      coef[n - 1 - k] = cost[4 + k];
    }
    rec.cost.c0 = coef[0];
    rec.cost.c1 = coef[1] * base;
    rec.cost.c2 = coef[2] * base * base;
    grid.gens.push_back(rec);
  }

  // Same bus-type cleanup MATPOWER does: PV buses need a live generator.
  std::vector<int> count(grid.buses.size(), 0);
  for (const auto& g : grid.gens) {
    ++count[g.bus];
  }
  for (size_t i = 0; i < grid.buses.size(); ++i) {
    auto& b = grid.buses[i];
    if (b.kind == BusKind::generator && count[i] == 0) {
      b.kind = BusKind::load;
    } else if (b.kind == BusKind::load && count[i] > 0) {
      b.kind = BusKind::generator;
    }
  }

  grid.branches.reserve(branch.size());
  for (const auto& row : branch) {
    BranchRecord rec;
    rec.from = grid.bus_index(static_cast<int>(row[0]));
    rec.to = grid.bus_index(static_cast<int>(row[1]));
    rec.r = row[2];
    rec.x = row[3];
    rec.b = row[4];
    rec.smax = row[5] / base;
    rec.tap = row[8] == 0.0 ? 1.0 : row[8];
    rec.shift = row[9] * kDeg;
    rec.in_service = row[10] > 0.0;
    grid.branches.push_back(rec);
  }

  grid.validate();
  return grid;
}

GridCase load_matpower_case(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ParseError("cannot open case file '" + path + "'");
  }
  std::stringstream ss;
  ss << in.rdbuf();
  GridCase grid = parse_matpower_case(ss.str());
  if (grid.name.empty()) {
    grid.name = path;
  }
  return grid;
}

std::string write_matpower_case(const GridCase& grid) {
  const double base = grid.base_mva;
  std::ostringstream out;
  out.precision(17);
  out << "function mpc = " << (grid.name.empty() ? "grid" : grid.name)
      << "\nmpc.version = '2';\nmpc.baseMVA = " << base << ";\n";
  out << "mpc.bus = [\n";
  for (const auto& b : grid.buses) {
    const int type = b.kind == BusKind::reference   ? 3
                     : b.kind == BusKind::generator ? 2
                                                    : 1;
    out << '\t' << b.id << '\t' << type << '\t' << b.pd * base << '\t'
        << b.qd * base << '\t' << b.gs * base << '\t' << b.bs * base
        << "\t1\t" << b.vm0 << '\t' << b.va0 / kDeg << "\t0\t1\t" << b.vmax
        << '\t' << b.vmin << ";\n";
  }
  out << "];\nmpc.gen = [\n";
  for (const auto& g : grid.gens) {
    out << '\t' << grid.buses[g.bus].id << '\t' << g.pg0 * base << '\t'
        << g.qg0 * base << '\t' << g.qmax * base << '\t' << g.qmin * base
        << '\t' << g.vg0 << '\t' << base << "\t1\t" << g.pmax * base << '\t'
        << g.pmin * base << ";\n";
  }
  out << "];\nmpc.branch = [\n";
  for (const auto& br : grid.branches) {
    out << '\t' << grid.buses[br.from].id << '\t' << grid.buses[br.to].id
        << '\t' << br.r << '\t' << br.x << '\t' << br.b << '\t'
        << br.smax * base << '\t' << br.smax * base << '\t' << br.smax * base
        << '\t' << br.tap << '\t' << br.shift / kDeg << '\t'
        << (br.in_service ? 1 : 0) << ";\n";
  }
  out << "];\nmpc.gencost = [\n";
  for (const auto& g : grid.gens) {
    out << "\t2\t0\t0\t3\t" << g.cost.c2 / (base * base) << '\t'
        << g.cost.c1 / base << '\t' << g.cost.c0 << ";\n";
  }
  out << "];\n";
  return out.str();
}

BranchAdmittance branch_admittance(const BranchRecord& br) {
  using C = std::complex<double>;
  const double zz = br.r * br.r + br.x * br.x;
  if (zz <= 0.0) {
    throw SolverError("zero-impedance branch makes the admittance singular");
  }
  const C ys = 1.0 / C(br.r, br.x);
  const C charging(0.0, br.b / 2.0);
  const C ratio = std::polar(br.tap, br.shift);
  BranchAdmittance y;
  y.ytt = ys + charging;
  y.yff = y.ytt / (br.tap * br.tap);
  y.yft = -ys / std::conj(ratio);
  y.ytf = -ys / ratio;
  return y;
}

AdmittanceMatrix build_admittance(const GridCase& grid) {
  const int n = grid.num_buses();
  AdmittanceMatrix y;
  y.branch.resize(grid.branches.size());
  std::vector<Eigen::Triplet<double>> gt;
  std::vector<Eigen::Triplet<double>> bt;
  gt.reserve(4 * grid.branches.size() + n);
  bt.reserve(4 * grid.branches.size() + n);
  for (size_t k = 0; k < grid.branches.size(); ++k) {
    const auto& br = grid.branches[k];
    if (!br.in_service) {
      continue;
    }
    const auto ya = branch_admittance(br);
    y.branch[k] = ya;
    const int f = br.from;
    const int t = br.to;
    gt.emplace_back(f, f, ya.yff.real());
    gt.emplace_back(f, t, ya.yft.real());
    gt.emplace_back(t, f, ya.ytf.real());
    gt.emplace_back(t, t, ya.ytt.real());
    bt.emplace_back(f, f, ya.yff.imag());
    bt.emplace_back(f, t, ya.yft.imag());
    bt.emplace_back(t, f, ya.ytf.imag());
    bt.emplace_back(t, t, ya.ytt.imag());
  }
  for (int i = 0; i < n; ++i) {
    gt.emplace_back(i, i, grid.buses[i].gs);
    bt.emplace_back(i, i, grid.buses[i].bs);
  }
  y.G.resize(n, n);
  y.B.resize(n, n);
  y.G.setFromTriplets(gt.begin(), gt.end());
  y.B.setFromTriplets(bt.begin(), bt.end());
  return y;
}

GridCase apply_branch_outage(const GridCase& grid, int branch_index) {
  if (branch_index < 0 || branch_index >= grid.num_branches()) {
    throw ValidationError("branch index " + std::to_string(branch_index) +
                          " out of range");
  }
  if (!grid.branches[branch_index].in_service) {
    throw ValidationError("branch " + std::to_string(branch_index) +
                          " is already out of service");
  }
  GridCase out = grid;
  out.branches[branch_index].in_service = false;
  return out;
}

bool is_connected(const GridCase& grid) {
  const int n = grid.num_buses();
  if (n == 0) {
    return true;
  }
  std::vector<std::vector<int>> adj(n);
  for (const auto& br : grid.branches) {
    if (br.in_service) {
      adj[br.from].push_back(br.to);
      adj[br.to].push_back(br.from);
    }
  }
  std::vector<char> seen(n, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int visited = 1;
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    for (int j : adj[i]) {
      if (!seen[j]) {
        seen[j] = 1;
        ++visited;
        stack.push_back(j);
      }
    }
  }
  return visited == n;
}

}  // namespace opf_resid

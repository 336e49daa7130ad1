#pragma once

#include <complex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/SparseCore>

namespace opf_resid {

enum class BusKind { reference, generator, load };

std::string_view to_string(BusKind kind);

/// One network node. All electrical quantities are per-unit on the case base,
/// angles in radians.
struct BusRecord {
  int id = 0;  ///< external bus number as written in the case file
  BusKind kind = BusKind::load;
  double pd = 0.0;
  double qd = 0.0;
  double gs = 0.0;
  double bs = 0.0;
  double vmin = 0.9;
  double vmax = 1.1;
  double vm0 = 1.0;  ///< stored operating point, informational
  double va0 = 0.0;
};

/// c(P) = c2 P^2 + c1 P + c0 with P in per-unit.
struct CostCurve {
  double c2 = 0.0;
  double c1 = 0.0;
  double c0 = 0.0;

  double operator()(double p) const { return (c2 * p + c1) * p + c0; }
  double derivative(double p) const { return 2.0 * c2 * p + c1; }
};

struct GenRecord {
  int bus = 0;  ///< internal bus index
  double pg0 = 0.0;
  double qg0 = 0.0;
  double vg0 = 1.0;
  double pmin = 0.0;
  double pmax = 0.0;
  double qmin = 0.0;
  double qmax = 0.0;
  CostCurve cost;
};

struct BranchRecord {
  int from = 0;  ///< internal bus index
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b = 0.0;      ///< total line charging susceptance
  double tap = 1.0;    ///< off-nominal ratio on the from side
  double shift = 0.0;  ///< phase shift in radians
  double smax = 0.0;   ///< apparent-power rating, 0 means unlimited
  bool in_service = true;

  bool limited() const { return smax > 0.0; }
};

/// Static network data. Buses are stored in file order and addressed by
/// contiguous internal index; `bus_index` maps external numbers back.
struct GridCase {
  std::string name;
  double base_mva = 100.0;
  std::vector<BusRecord> buses;
  std::vector<GenRecord> gens;
  std::vector<BranchRecord> branches;

  int num_buses() const { return static_cast<int>(buses.size()); }
  int num_gens() const { return static_cast<int>(gens.size()); }
  int num_branches() const { return static_cast<int>(branches.size()); }
  int num_active_branches() const;

  int reference_bus() const;
  int bus_index(int external_id) const;

  /// Generators attached to each bus, in generator order.
  std::vector<std::vector<int>> gens_by_bus() const;

  /// Rebuilds the external-id lookup. Call after editing `buses`.
  void reindex();

  /// Throws ValidationError when any record invariant is broken.
  void validate() const;

 private:
  std::unordered_map<int, int> index_of_;
};

/// Parses the bus/gen/branch/gencost subset of a MATPOWER version 2 m-file.
/// Out-of-service generators are dropped; out-of-service branches are kept.
GridCase parse_matpower_case(std::string_view text);
GridCase load_matpower_case(const std::string& path);

/// Emits the case back in MATPOWER layout and physical units.
std::string write_matpower_case(const GridCase& grid);

/// pi-model two-port admittances of a single branch.
struct BranchAdmittance {
  std::complex<double> yff;
  std::complex<double> yft;
  std::complex<double> ytf;
  std::complex<double> ytt;
};

/// Y = G + jB together with the per-branch and shunt pieces it was built from.
struct AdmittanceMatrix {
  Eigen::SparseMatrix<double> G;
  Eigen::SparseMatrix<double> B;
  std::vector<BranchAdmittance> branch;  ///< zero for out-of-service branches
};

BranchAdmittance branch_admittance(const BranchRecord& br);

AdmittanceMatrix build_admittance(const GridCase& grid);

/// Copy of `grid` with branch `branch_index` switched out. Islanding is not
/// checked here.
GridCase apply_branch_outage(const GridCase& grid, int branch_index);

/// True when the in-service branches connect every bus.
bool is_connected(const GridCase& grid);

}  // namespace opf_resid

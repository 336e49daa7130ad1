#!/usr/bin/env python3
"""Regenerates tests/data/oracle_*.json from an independent toolchain (PYPOWER).

Nothing here shares code with the C++ library: the case files are read by a
small regex loader below and every reference value comes from PYPOWER's own
makeYbus / runopf / runpf, or from a cvxpy QP assembled on PYPOWER's makeBdc.

    pip install pypower
    python3 tests/oracles/make_fixtures.py
"""
import json
import pathlib
import re

import numpy as np
import cvxpy as cp
from pypower.api import ppoption, runopf, runpf, makeYbus, makeBdc, ext2int

DATA = pathlib.Path(__file__).resolve().parent.parent / "data"
CASES = ["case9", "case14", "case30", "case118"]


def load_m(path):
    text = path.read_text()
    ppc = {"version": "2"}
    ppc["baseMVA"] = float(re.search(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)", text).group(1))
    for name in ["bus", "gen", "branch", "gencost"]:
        body = re.search(r"mpc\." + name + r"\s*=\s*\[(.*?)\];", text, re.S).group(1)
        rows = []
        for line in body.split("\n"):
            line = line.split("%")[0].strip().rstrip(";")
            if line:
                rows.append([float(v) for v in line.split()])
        ppc[name] = np.array(rows)
    return ppc


def dc_opf(ppc):
    """B-theta DC-OPF with shift injections and rateA limits, solved by cvxpy."""
    ppc = ext2int(ppc)
    base = ppc["baseMVA"]
    bus, gen, branch, cost = ppc["bus"], ppc["gen"], ppc["branch"], ppc["gencost"]
    nb, ng = len(bus), len(gen)
    bbus, bf, pbusinj, pfinj = makeBdc(base, bus, branch)
    bbus, bf = bbus.toarray(), bf.toarray()
    cg = np.zeros((nb, ng))
    for k in range(ng):
        cg[int(gen[k, 0]), k] = 1.0
    pg = cp.Variable(ng)
    va = cp.Variable(nb)
    pd = (bus[:, 2] + bus[:, 4]) / base
    c2 = cost[:, 4] * base**2
    c1 = cost[:, 5] * base
    c0 = cost[:, 6]
    cons = [bbus @ va + pbusinj + pd == cg @ pg,
            pg >= gen[:, 9] / base, pg <= gen[:, 8] / base]
    ref = int(np.where(bus[:, 1] == 3)[0][0])
    cons.append(va[ref] == 0)
    lim = branch[:, 5] > 0
    if lim.any():
        flow = bf @ va + pfinj
        cons += [flow[lim] <= branch[lim, 5] / base, flow[lim] >= -branch[lim, 5] / base]
    prob = cp.Problem(cp.Minimize(c2 @ cp.square(pg) + c1 @ pg + c0.sum()), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    assert prob.status == "optimal"
    i2e = ppc["order"]["gen"]["i2e"]
    return float(prob.value), (pg.value[i2e] * base).tolist()


def main():
    opt = ppoption(VERBOSE=0, OUT_ALL=0, OPF_VIOLATION=1e-8, PDIPM_GRADTOL=1e-10,
                   PDIPM_COMPTOL=1e-10, PDIPM_COSTTOL=1e-10)
    counts, dc, ac = {}, {}, {}
    for name in CASES + ["case9241pegase"]:
        ppc = load_m(DATA / f"{name}.m")
        counts[name] = {"buses": len(ppc["bus"]), "gens": len(ppc["gen"]),
                        "branches": len(ppc["branch"])}
    for name in CASES:
        obj, pg = dc_opf(load_m(DATA / f"{name}.m"))
        dc[name] = {"objective": obj, "Pg_MW": pg}
        ppc = load_m(DATA / f"{name}.m")
        # PYPOWER's PIPS breaks on an empty flow-limit block; a 1e6 MVA
        # rating on unlimited branches is never binding.
        ppc["branch"][ppc["branch"][:, 5] == 0, 5] = 1e6
        r = runopf(ppc, opt)
        assert r["success"], name
        ac[name] = {"objective": float(r["f"]), "Pg_MW": r["gen"][:, 1].tolist(),
                    "Vm": r["bus"][:, 7].tolist(), "Va_deg": r["bus"][:, 8].tolist()}
    (DATA / "oracle_counts.json").write_text(json.dumps(counts, indent=1))
    (DATA / "oracle_dcopf.json").write_text(json.dumps(dc, indent=1))
    (DATA / "oracle_acopf.json").write_text(json.dumps(ac, indent=1))

    # Ybus of case118 (external bus numbering is 1..118 and contiguous).
    ppc = ext2int(load_m(DATA / "case118.m"))
    ybus, _, _ = makeYbus(ppc["baseMVA"], ppc["bus"], ppc["branch"])
    ybus = ybus.tocoo()
    entries = [[int(i), int(j), float(v.real), float(v.imag)]
               for i, j, v in zip(ybus.row, ybus.col, ybus.data)]
    (DATA / "oracle_case118_ybus.json").write_text(json.dumps({"n": 118, "entries": entries}))

    # Converged power flow of case14 from its stored generator setpoints.
    r, ok = runpf(load_m(DATA / "case14.m"), ppoption(VERBOSE=0, OUT_ALL=0, PF_TOL=1e-12))
    assert ok
    br = r["branch"]
    (DATA / "oracle_case14_pf.json").write_text(json.dumps({
        "Vm": r["bus"][:, 7].tolist(), "Va_deg": r["bus"][:, 8].tolist(),
        "PF_MW": br[:, 13].tolist(), "QF_MVAr": br[:, 14].tolist(),
        "PT_MW": br[:, 15].tolist(), "QT_MVAr": br[:, 16].tolist()}, indent=1))


if __name__ == "__main__":
    main()

"""Potential-outcome distribution space and the bound program builder.

The sharp identified set for the treated-survivor effect is a set of
conditional laws q(u | w, x, g) over u = (y2(1), y2(0), y1(1), y1(0)),
one 16-mass block per treatment/covariate/sample triple.  The data
constrain each block through containment (Artstein) inequalities on the
marginals matching what each arm reveals, and the optional restriction
flags add linear rows (monotone response, stationarity, dominance,
cross-sample equality) or bilinear descriptors (latent unconfoundedness,
positively correlated outcomes) handled by profiling at solve time.

Pattern index convention: u = (i, j, k, l) with i = y2(1), j = y2(0),
k = y1(1), l = y1(0); flat index ((i*2+j)*2+k)*2+l.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .data import CellTable, RestrictionSet, MASS_FLOOR

Q_TOL = 1e-9
# data mass below this is treated as a structural zero when pinning
# shared conditionals
PIN_TOL = 1e-12


def u_index(i: int, j: int, k: int, l: int) -> int:
    return ((i * 2 + j) * 2 + k) * 2 + l


U_PATTERNS = [(i, j, k, l) for i in (0, 1) for j in (0, 1)
              for k in (0, 1) for l in (0, 1)]

# monotone treatment response: y(1) >= y(0) pointwise in both periods
MTR_ZERO = [u_index(i, j, k, l) for (i, j, k, l) in U_PATTERNS
            if (k == 0 and l == 1) or (i == 0 and j == 1)]


@dataclass(frozen=True)
class QTable:
    """Candidate conditional laws q(u | w, x, g), all blocks explicit.

    ``q_o[x, w]`` and ``q_e[x, w]`` are 16-vectors on the simplex
    (tolerance 1e-9).  The experimental blocks are stored per arm even
    when internal validity makes them equal.
    """

    q_o: np.ndarray     # [x, w, 16]
    q_e: np.ndarray     # [x, w, 16]

    def __post_init__(self):
        for name in ("q_o", "q_e"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for arr in (self.q_o, self.q_e):
            if arr.ndim != 3 or arr.shape[1] != 2 or arr.shape[2] != 16:
                raise ValueError("QTable blocks must be [x, w, 16]")
            if (arr < -MASS_FLOOR).any():
                raise ValueError("negative q mass")
            if np.abs(arr.sum(axis=2) - 1.0).max() > Q_TOL:
                raise ValueError("q block off the simplex beyond 1e-9")

    @property
    def n_cells(self) -> int:
        return self.q_o.shape[0]


def phi_value(qt: QTable, ct: CellTable) -> float:
    """The treated-survivor effect functional at a candidate q.

    Phi = sum (i-j) q(i,j,0,l|w,x,O) f(w,x|O) / sum q(i,j,0,l|w,x,O) f(w,x|O);
    returns nan when the survivor mass vanishes.
    """
    fwx = ct.f_wx("O")                         # [x, w]
    num = den = 0.0
    for (i, j, k, l) in U_PATTERNS:
        if k != 0:
            continue
        u = u_index(i, j, k, l)
        mass = (qt.q_o[:, :, u] * fwx).sum()
        num += (i - j) * mass
        den += mass
    if den <= 1e-15:
        return float("nan")
    return num / den


@dataclass(frozen=True)
class BilinearRatio:
    """One shared conditional entering a bilinear restriction.

    kind "lu1": untreated regression P(Y2(0)=1 | Y1(0)=level, x);
    kind "lu2": treated regression P(Y2(1)=1 | Y1(1)=level, x);
    kind "pco": P(Y2(0)=1 | Y1(1)=0, Y1(0)=0, x, g).
    ``pinned_value`` is None when the data leave the ratio free and the
    solver must profile it on a grid.
    """

    kind: str
    x: int
    level: int
    g: str
    pinned_value: Optional[float]


@dataclass(frozen=True)
class SolverOptions:
    lp_tol: float = 1e-9
    grid_points: int = 21
    max_profile_dims: int = 8
    multi_start: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.grid_points < 2:
            raise ValueError("profiling grid needs at least 2 points")
        if self.lp_tol <= 0:
            raise ValueError("lp tolerance must be positive")


@dataclass(frozen=True)
class Program:
    """Assembled bound program over the stacked block variables.

    Rows in ``eq``/``ineq`` act on the concatenated q vector; ``eq_b`` is
    1.0 for block simplex rows and 0.0 for homogeneous restriction rows,
    which is what lets the Charnes-Cooper transform scale them uniformly.
    Inequalities are a q <= b with b again either a containment data mass
    (scaled by t) or zero.
    """

    blocks: Tuple[tuple, ...]            # (w or None, x, g)
    n_cells: int
    objective_num: np.ndarray
    objective_den: np.ndarray
    simplex_a: np.ndarray                # one row per block, b = 1
    eq_a: np.ndarray                     # homogeneous restriction rows
    eq_labels: Tuple[str, ...]
    ineq_a: np.ndarray                   # a q <= b
    ineq_b: np.ndarray
    ineq_labels: Tuple[str, ...]
    bilinear: Tuple[BilinearRatio, ...]
    restrictions: RestrictionSet
    merged_e: bool
    fw_o: np.ndarray = None              # f(w | x, O), [x, w]
    fw_e: np.ndarray = None              # f(w | x, E), [x, w]

    @property
    def n_vars(self) -> int:
        return 16 * len(self.blocks)

    def block_offset(self, w, x: int, g: str) -> int:
        key = (w, x, g)
        for idx, blk in enumerate(self.blocks):
            if blk == key:
                return 16 * idx
        if g == "E" and self.merged_e:
            for idx, blk in enumerate(self.blocks):
                if blk == (None, x, "E"):
                    return 16 * idx
        raise KeyError(f"no block {key}")


def _p_joint_o(ct: CellTable, x: int, w: int) -> Optional[np.ndarray]:
    """P(Y2=j, Y1=l | W=w, x, O) as [y2, y1], or None if the arm is empty."""
    arm = ct.pmf_o[x][:, :, w]
    tot = arm.sum()
    if tot <= MASS_FLOOR:
        return None
    return arm / tot


def _p_y1_e(ct: CellTable, x: int, w: int) -> Optional[np.ndarray]:
    arm = ct.pmf_e[x][:, w]
    tot = arm.sum()
    if tot <= MASS_FLOOR:
        return None
    return arm / tot


def build_program(ct: CellTable, restrictions: RestrictionSet) -> Program:
    """Emit containment constraints, restriction rows, and the objective.

    The two experimental blocks per cell are merged into one when
    internal validity is imposed (the merge is then exact) or when no
    active restriction touches the experimental sample (the E blocks then
    only absorb containment and never interact with the objective).
    """
    if restrictions.nsd:
        raise ValueError("the nsd flag selects a point-identified estimand; "
                         "it has no bound program")

    touches_e = restrictions.ev or restrictions.sd or restrictions.st \
        or restrictions.pco or restrictions.mtr
    merged_e = restrictions.iv or not touches_e

    blocks: List[tuple] = []
    for x in range(ct.n_cells):
        blocks.append((0, x, "O"))
        blocks.append((1, x, "O"))
        if merged_e:
            blocks.append((None, x, "E"))
        else:
            blocks.append((0, x, "E"))
            blocks.append((1, x, "E"))
    blocks = tuple(blocks)
    n_vars = 16 * len(blocks)

    def offset(w, x, g):
        if g == "E" and merged_e:
            key = (None, x, "E")
        else:
            key = (w, x, g)
        return 16 * blocks.index(key)

    # objective
    fwx_o = ct.f_wx("O")
    num = np.zeros(n_vars)
    den = np.zeros(n_vars)
    for x in range(ct.n_cells):
        for w in (0, 1):
            off = offset(w, x, "O")
            for (i, j, k, l) in U_PATTERNS:
                if k != 0:
                    continue
                u = off + u_index(i, j, k, l)
                num[u] += (i - j) * fwx_o[x, w]
                den[u] += fwx_o[x, w]

    simplex = np.zeros((len(blocks), n_vars))
    for bi in range(len(blocks)):
        simplex[bi, 16 * bi:16 * (bi + 1)] = 1.0

    ineq_rows, ineq_rhs, ineq_labels = [], [], []
    eq_rows, eq_labels = [], []

    def add_contain(row, rhs, label):
        # marginal(q) >= rhs  ->  -marginal(q) <= -rhs
        ineq_rows.append(-row)
        ineq_rhs.append(-rhs)
        ineq_labels.append(label)

    # containment families
    for x in range(ct.n_cells):
        joint0 = _p_joint_o(ct, x, 0)
        if joint0 is not None:
            off = offset(0, x, "O")
            for j in (0, 1):
                for l in (0, 1):
                    row = np.zeros(n_vars)
                    for i in (0, 1):
                        for k in (0, 1):
                            row[off + u_index(i, j, k, l)] = 1.0
                    add_contain(row, float(joint0[j, l]), f"contain:O:w0:x{x}:j{j}l{l}")
        joint1 = _p_joint_o(ct, x, 1)
        if joint1 is not None:
            off = offset(1, x, "O")
            for i in (0, 1):
                for k in (0, 1):
                    row = np.zeros(n_vars)
                    for j in (0, 1):
                        for l in (0, 1):
                            row[off + u_index(i, j, k, l)] = 1.0
                    add_contain(row, float(joint1[i, k]), f"contain:O:w1:x{x}:i{i}k{k}")
        p0e = _p_y1_e(ct, x, 0)
        if p0e is not None:
            off = offset(0, x, "E")
            for l in (0, 1):
                row = np.zeros(n_vars)
                for i in (0, 1):
                    for j in (0, 1):
                        for k in (0, 1):
                            row[off + u_index(i, j, k, l)] = 1.0
                add_contain(row, float(p0e[l]), f"contain:E:w0:x{x}:l{l}")
        p1e = _p_y1_e(ct, x, 1)
        if p1e is not None:
            off = offset(1, x, "E")
            for k in (0, 1):
                row = np.zeros(n_vars)
                for i in (0, 1):
                    for j in (0, 1):
                        for l in (0, 1):
                            row[off + u_index(i, j, k, l)] = 1.0
                add_contain(row, float(p1e[k]), f"contain:E:w1:x{x}:k{k}")

    # monotone treatment response: structural zeros in every block
    if restrictions.mtr:
        for bi, blk in enumerate(blocks):
            for u in MTR_ZERO:
                row = np.zeros(n_vars)
                row[16 * bi + u] = 1.0
                eq_rows.append(row)
                eq_labels.append(f"mtr:{blk}:u{u}")

    # internal validity of the experiment: q equal across E arms.
    # With merged E blocks this is structural; rows appear only if a
    # future layout keeps the arms separate while iv is on.
    if restrictions.iv and not merged_e:
        for x in range(ct.n_cells):
            off0, off1 = offset(0, x, "E"), offset(1, x, "E")
            for u in range(16):
                row = np.zeros(n_vars)
                row[off0 + u] = 1.0
                row[off1 + u] = -1.0
                eq_rows.append(row)
                eq_labels.append(f"iv:x{x}:u{u}")

    # external validity: w-mixtures agree across samples per cell
    if restrictions.ev:
        for x in range(ct.n_cells):
            fw_o = ct.pmf_o[x].sum(axis=(0, 1))     # f(w | x, O)
            fw_e = ct.pmf_e[x].sum(axis=0)          # f(w | x, E)
            for u in range(16):
                row = np.zeros(n_vars)
                if merged_e:
                    row[offset(0, x, "E") + u] += float(fw_e.sum())
                else:
                    for w in (0, 1):
                        row[offset(w, x, "E") + u] += float(fw_e[w])
                for w in (0, 1):
                    row[offset(w, x, "O") + u] -= float(fw_o[w])
                eq_rows.append(row)
                eq_labels.append(f"ev:x{x}:u{u}")

    # stochastic dominance of treated over untreated potential outcomes,
    # per (x, g), both periods, evaluated at the point 0
    if restrictions.sd:
        for x in range(ct.n_cells):
            for g in ("O", "E"):
                if g == "O":
                    fw = ct.pmf_o[x].sum(axis=(0, 1))
                    arms = [(0, offset(0, x, "O")), (1, offset(1, x, "O"))]
                else:
                    fw = ct.pmf_e[x].sum(axis=0)
                    if merged_e:
                        arms = [(0, offset(0, x, "E")), (1, offset(0, x, "E"))]
                        fw = np.array([fw.sum(), 0.0])
                    else:
                        arms = [(0, offset(0, x, "E")), (1, offset(1, x, "E"))]
                for t, (zero_var, one_var) in (("2", ("i", "j")), ("1", ("k", "l"))):
                    row = np.zeros(n_vars)
                    for w, off in arms:
                        for (i, j, k, l) in U_PATTERNS:
                            vals = {"i": i, "j": j, "k": k, "l": l}
                            u = off + u_index(i, j, k, l)
                            if vals[zero_var] == 0:
                                row[u] += float(fw[w])
                            if vals[one_var] == 0:
                                row[u] -= float(fw[w])
                    ineq_rows.append(row)
                    ineq_rhs.append(0.0)
                    ineq_labels.append(f"sd:t{t}:x{x}:{g}")

    # stationarity: (Y2(1),Y2(0)) and (Y1(1),Y1(0)) share a law per block
    if restrictions.st:
        for bi, blk in enumerate(blocks):
            off = 16 * bi
            for a in (0, 1):
                for b in (0, 1):
                    row = np.zeros(n_vars)
                    for (i, j, k, l) in U_PATTERNS:
                        u = off + u_index(i, j, k, l)
                        if i == a and j == b:
                            row[u] += 1.0
                        if k == a and l == b:
                            row[u] -= 1.0
                    eq_rows.append(row)
                    eq_labels.append(f"st:{blk}:y1_{a}y0_{b}")

    # latent unconfoundedness: regressions shared across treatment arms.
    # Containment pins each O block's observed-arm joint, so the shared
    # conditionals are data whenever the conditioning mass is positive;
    # only zero-mass rows leave a free ratio for the profiler.
    bilinear: List[BilinearRatio] = []
    if restrictions.lu:
        for x in range(ct.n_cells):
            joint0 = _p_joint_o(ct, x, 0)
            joint1 = _p_joint_o(ct, x, 1)
            for l in (0, 1):
                mass = None if joint0 is None else float(joint0[:, l].sum())
                if mass is not None and mass > PIN_TOL:
                    rho = float(joint0[1, l] / mass)
                    bilinear.append(BilinearRatio("lu1", x, l, "O", rho))
                else:
                    bilinear.append(BilinearRatio("lu1", x, l, "O", None))
            for k in (0, 1):
                mass = None if joint1 is None else float(joint1[:, k].sum())
                if mass is not None and mass > PIN_TOL:
                    sigma = float(joint1[1, k] / mass)
                    bilinear.append(BilinearRatio("lu2", x, k, "O", sigma))
                else:
                    bilinear.append(BilinearRatio("lu2", x, k, "O", None))

    if restrictions.pco:
        for x in range(ct.n_cells):
            for g in ("O", "E"):
                bilinear.append(BilinearRatio("pco", x, 0, g, None))

    eq_a = np.array(eq_rows) if eq_rows else np.zeros((0, n_vars))
    ineq_a = np.array(ineq_rows) if ineq_rows else np.zeros((0, n_vars))
    fw_o = ct.pmf_o.sum(axis=(1, 2))
    fw_e = ct.pmf_e.sum(axis=1)
    return Program(blocks=blocks, n_cells=ct.n_cells,
                   objective_num=num, objective_den=den,
                   simplex_a=simplex, eq_a=eq_a, eq_labels=tuple(eq_labels),
                   ineq_a=ineq_a, ineq_b=np.array(ineq_rhs, dtype=float),
                   ineq_labels=tuple(ineq_labels),
                   bilinear=tuple(bilinear), restrictions=restrictions,
                   merged_e=merged_e, fw_o=fw_o, fw_e=fw_e)


def ratio_rows(program: Program, ratio: BilinearRatio, value: float):
    """Linear rows realizing one bilinear ratio at a fixed value.

    Returns (eq_rows, eq_labels, ineq_rows, ineq_labels); inequality rows
    are homogeneous a q <= 0.
    """
    n = program.n_vars
    eqs, eq_labels, ineqs, in_labels = [], [], [], []
    if ratio.kind == "lu1":
        # block (1,x,O): P(Y2(0)=1, Y1(0)=l) = value * P(Y1(0)=l)
        off = program.block_offset(1, ratio.x, "O")
        row = np.zeros(n)
        for (i, j, k, l) in U_PATTERNS:
            if l != ratio.level:
                continue
            u = off + u_index(i, j, k, l)
            row[u] += (1.0 if j == 1 else 0.0) - value
        eqs.append(row)
        eq_labels.append(f"lu1:x{ratio.x}:l{ratio.level}")
    elif ratio.kind == "lu2":
        # block (0,x,O): P(Y2(1)=1, Y1(1)=k) = value * P(Y1(1)=k)
        off = program.block_offset(0, ratio.x, "O")
        row = np.zeros(n)
        for (i, j, k, l) in U_PATTERNS:
            if k != ratio.level:
                continue
            u = off + u_index(i, j, k, l)
            row[u] += (1.0 if i == 1 else 0.0) - value
        eqs.append(row)
        eq_labels.append(f"lu2:x{ratio.x}:k{ratio.level}")
    elif ratio.kind == "pco":
        # mixture ratios of the joint at (k,l)=(0,0) versus (1,0):
        # A - value*B = 0 and C - value*D >= 0 with the paper's pattern sums
        x = ratio.x
        fw = program.fw_o[x] if ratio.g == "O" else program.fw_e[x]
        if ratio.g == "E" and program.merged_e:
            arm_offsets = {0: program.block_offset(0, x, "E")}
            weights = {0: float(fw.sum())}
        else:
            arm_offsets = {w: program.block_offset(w, x, ratio.g) for w in (0, 1)}
            weights = {w: float(fw[w]) for w in (0, 1)}
        row_eq = np.zeros(n)
        row_in = np.zeros(n)
        for w, off in arm_offsets.items():
            c = weights[w]
            for (i, j, k, l) in U_PATTERNS:
                if l != 0:
                    continue
                u = off + u_index(i, j, k, l)
                if k == 0:
                    row_eq[u] += c * ((1.0 if j == 1 else 0.0) - value)
                else:
                    row_in[u] -= c * ((1.0 if j == 1 else 0.0) - value)
        eqs.append(row_eq)
        eq_labels.append(f"pco:x{x}:{ratio.g}:eq")
        ineqs.append(row_in)
        in_labels.append(f"pco:x{x}:{ratio.g}:ge")
    else:
        raise ValueError(f"unknown ratio kind {ratio.kind}")
    return eqs, eq_labels, ineqs, in_labels

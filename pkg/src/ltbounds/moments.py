"""Many-moment inequality testing with a Gaussian multiplier bootstrap.

The null is H0: mu_j <= 0 for every moment column j.  The statistic is
the max over studentized column means; its critical value comes from a
one-step multiplier bootstrap with standard-normal weights.  Moment
matrices for the dominance and external-validity specification tests
are built here as well: two-sample quantities are embedded in the
pooled sample with membership indicators, and ratio-of-means
functionals are linearized so each column's sample mean equals the
plug-in estimate exactly while the column variance tracks the delta
method.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .data import CombinedDataset, EmptyCell

VAR_FLOOR = 1e-300


class ZeroVariance(Exception):
    def __init__(self, label: str):
        super().__init__(f"moment column {label!r} has zero sample variance")
        self.label = label


class MissingInstrument(Exception):
    pass


@dataclass(frozen=True)
class MomentMatrix:
    """Observation-by-moment matrix with column labels.

    values has shape (n, p).  Column variances are checked at test
    time, not construction, so degenerate generators can still be
    inspected.
    """

    values: np.ndarray
    labels: Tuple[str, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] == 0:
            raise ValueError("moment matrix must be two-dimensional with p >= 1")
        if not np.all(np.isfinite(v)):
            raise ValueError("moment matrix contains non-finite values")
        if len(self.labels) != v.shape[1]:
            raise ValueError("one label per column required")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def column_means(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def column_sds(self) -> np.ndarray:
        # population-style 1/n variance, matching the statistic's display
        return self.values.std(axis=0)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    critical_value: float
    p_value: float
    reject: bool
    alpha: float
    b: int
    seed: int

    def __post_init__(self):
        if self.reject != (self.statistic > self.critical_value):
            raise ValueError("reject flag inconsistent with statistic and critical value")


def _studentize(m: MomentMatrix) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    means = m.column_means()
    sds = m.column_sds()
    for j, sd in enumerate(sds):
        if sd <= 0.0:
            raise ZeroVariance(m.labels[j])
    return m.values, means, sds


def max_t_statistic(m: MomentMatrix) -> float:
    """T = max_j sqrt(n) * mean_j / sd_j."""
    if m.n < 2:
        raise ValueError("need at least two observations")
    _, means, sds = _studentize(m)
    return float(np.max(np.sqrt(m.n) * means / sds))


def _bootstrap_draws(m: MomentMatrix, b: int, seed: int) -> np.ndarray:
    values, means, sds = _studentize(m)
    n = m.n
    z = (values - means) / sds
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((b, n))
    return (eps @ z) / np.sqrt(n)   # (b, p): sqrt(n) * mean_i eps_i z_ij


def multiplier_bootstrap_cv(m: MomentMatrix, alpha: float, b: int, seed: int) -> float:
    """(1-alpha) empirical quantile of the multiplier max statistic.

    The quantile is the order statistic of rank ceil((1-alpha)*B), so
    the critical value is deterministic given the seed.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")
    if b < 100:
        raise ValueError("need at least 100 bootstrap replications")
    w = _bootstrap_draws(m, b, seed).max(axis=1)
    w.sort()
    rank = int(np.ceil((1.0 - alpha) * b))
    return float(w[rank - 1])


def run_test(m: MomentMatrix, alpha: float = 0.05, b: int = 1000,
             seed: int = 0) -> TestResult:
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")
    if b < 100:
        raise ValueError("need at least 100 bootstrap replications")
    t = max_t_statistic(m)
    w = _bootstrap_draws(m, b, seed).max(axis=1)
    p_value = float(np.mean(w >= t))
    w.sort()
    rank = int(np.ceil((1.0 - alpha) * b))
    cv = float(w[rank - 1])
    return TestResult(statistic=t, critical_value=cv, p_value=p_value,
                      reject=bool(t > cv), alpha=alpha, b=b, seed=seed)


class _Lin:
    """Ratio-of-means functional linearized around the plug-in estimate.

    Carries (value, per-observation column); the column mean equals the
    value exactly, and sums/products propagate by the product rule so
    composite moments keep that property.
    """

    __slots__ = ("val", "col")

    def __init__(self, val: float, col: np.ndarray):
        self.val = float(val)
        self.col = col

    def __add__(self, other):
        return _Lin(self.val + other.val, self.col + other.col)

    def __sub__(self, other):
        return _Lin(self.val - other.val, self.col - other.col)

    def __neg__(self):
        return _Lin(-self.val, -self.col)

    def __mul__(self, other):
        if isinstance(other, _Lin):
            return _Lin(self.val * other.val,
                        self.val * other.val
                        + self.val * (other.col - other.val)
                        + other.val * (self.col - self.val))
        return _Lin(self.val * other, self.col * other)


def _ratio(num: np.ndarray, den: np.ndarray) -> _Lin:
    a = float(num.mean())
    b = float(den.mean())
    val = a / b
    col = val + (num - a) / b - val * (den - b) / b
    return _Lin(val, col)


def fosd_moments(ds: CombinedDataset) -> MomentMatrix:
    """Single pooled moment testing that the experimental short-term
    outcome distribution dominates the untreated observational one.

    For a binary outcome the distribution functions only bite at zero,
    so one column suffices: F(0 | W=0, O) - F(0 | E) <= 0.
    """
    o_unt = (ds.is_o == 1) & (ds.w == 0)
    e_all = ds.is_o == 0
    if not o_unt.any():
        raise EmptyCell(-1, "O", "no untreated observational rows")
    if not e_all.any():
        raise EmptyCell(-1, "E", "no experimental rows")
    at_zero = (ds.y1 == 0).astype(float)
    lin = _ratio(at_zero * o_unt, o_unt.astype(float)) \
        - _ratio(at_zero * e_all, e_all.astype(float))
    return MomentMatrix(values=lin.col[:, None], labels=("fosd:y0",))


_ASSUMPTIONS = ("none", "sd", "lqd", "sdl", "het", "ex", "miv")


def external_validity_moments(ds: CombinedDataset, assumption: str = "none",
                              v_column: Optional[Sequence[int]] = None) -> MomentMatrix:
    """Moment columns for the external-validity specification test.

    Per covariate cell two base columns encode the pointwise selection
    bound on the treated short-term distribution; the assumption flag
    appends the matching dominance columns.  ``ex`` and ``miv`` need a
    discrete instrument, one column per (event, instrument value) pair,
    and the max-t statistic performs the intersection over values.
    """
    if assumption not in _ASSUMPTIONS:
        raise ValueError(f"unknown assumption {assumption!r}")
    if assumption in ("ex", "miv"):
        if v_column is None:
            raise MissingInstrument("assumption requires an instrument column")
        v = np.asarray(v_column, dtype=int)
        if v.shape[0] != ds.n:
            raise MissingInstrument("instrument column length does not match data")
    else:
        v = None

    y0 = (ds.y1 == 0).astype(float)
    y1i = (ds.y1 == 1).astype(float)
    is_o = (ds.is_o == 1)
    is_e = ~is_o
    treated = ds.w == 1

    cols, labels = [], []
    for cx in range(ds.n_cells):
        in_x = ds.x == cx
        o_x = (is_o & in_x).astype(float)
        e_t_x = (is_e & in_x & treated).astype(float)
        if o_x.sum() == 0:
            raise EmptyCell(cx, "O")
        if e_t_x.sum() == 0:
            raise EmptyCell(cx, "E", "no treated experimental rows")

        # joint P(Y1=0, W=1 | x, O) and the treated experimental cdf at 0
        fo_p1 = _ratio(y0 * o_x * treated, o_x)
        p0 = _ratio(o_x * (~treated), o_x)
        fe = _ratio(y0 * e_t_x, e_t_x)

        base_lo = fo_p1 - fe            # lower bound violated when > 0
        base_hi = fe - fo_p1 - p0       # upper bound violated when > 0
        cols += [base_lo.col, base_hi.col]
        labels += [f"base_lower:x{cx}", f"base_upper:x{cx}"]

        if assumption in ("sd", "lqd"):
            o_t_x = (is_o & in_x & treated).astype(float)
            if o_t_x.sum() == 0:
                raise EmptyCell(cx, "O", "no treated observational rows")
            fo = _ratio(y0 * o_t_x, o_t_x)
            lin = fe - fo
            cols.append(lin.col)
            labels.append(f"{assumption}:x{cx}")
        elif assumption == "sdl":
            p1 = _ratio(o_x * treated, o_x)
            lin = p1 * fe - fo_p1
            cols.append(lin.col)
            labels.append(f"sdl:x{cx}")
        elif assumption == "het":
            # the threshold variant collapses to an equality at the only
            # candidate cut point for binary outcomes
            p1 = _ratio(o_x * treated, o_x)
            lin = p1 * fe - fo_p1
            cols += [lin.col, (-lin).col]
            labels += [f"het_lo:x{cx}", f"het_hi:x{cx}"]
        elif assumption in ("ex", "miv"):
            values = np.unique(v)
            for event, ind in (("0", y0), ("1", y1i)):
                for val in values:
                    if assumption == "ex":
                        o_xv = (is_o & in_x & (v == val)).astype(float)
                        if o_xv.sum() == 0:
                            raise EmptyCell(cx, "O", f"no rows at v={val}")
                        c_lin = _ratio(ind * o_xv * treated, o_xv)
                        lin = c_lin - _ratio(ind * e_t_x, e_t_x)
                        cols.append(lin.col)
                        labels.append(f"ex:x{cx}:K{event}:v{val}")
                    else:
                        e_t_xv = (is_e & in_x & treated & (v == val)).astype(float)
                        if e_t_xv.sum() == 0:
                            raise EmptyCell(cx, "E", f"no treated rows at v={val}")
                        fe_v = _ratio(ind * e_t_xv, e_t_xv)
                        others = values[values <= val] if event == "0" \
                            else values[values >= val]
                        for vp in others:
                            o_xvp = (is_o & in_x & (v == vp)).astype(float)
                            if o_xvp.sum() == 0:
                                raise EmptyCell(cx, "O", f"no rows at v={vp}")
                            c_lin = _ratio(ind * o_xvp * treated, o_xvp)
                            lin = c_lin - fe_v
                            cols.append(lin.col)
                            labels.append(f"miv:x{cx}:K{event}:v{val}:vp{vp}")

    return MomentMatrix(values=np.column_stack(cols), labels=tuple(labels))

"""Parameter-space partition and convergence diagnostics.

For a one-parameter working model and a target rate, the admissible
interval [A, B] splits into k subintervals, one per dose: the parameter
values under which that dose is the closest to target. The split points
solve the equidistance equations between adjacent doses. The same
machinery yields the set of parameter values under which the true
closest-to-target dose is recommended, and per-dose membership of the
dose-solving constants in that set (the sufficient condition for the
allocation sequence to settle there).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import CrmError, FeasibilityError, ParameterDomainError
from .models import LOGISTIC_2P, WorkingModel

if TYPE_CHECKING:  # pragma: no cover
    from .inference import TrialHistory

BISECT_TOL = 1e-10


@dataclass(frozen=True)
class Partition:
    """Half-open split of [A, B]: dose i owns [kappa_{i-1}, kappa_i).

    The upper bound B is assigned to the last interval.
    """

    bounds: tuple[float, float]
    kappas: tuple[float, ...]  # kappa_0 = A .. kappa_k = B

    @property
    def k(self) -> int:
        return len(self.kappas) - 1

    @property
    def intervals(self) -> tuple[tuple[float, float], ...]:
        return tuple(zip(self.kappas[:-1], self.kappas[1:]))

    def interval_index(self, a: float) -> int:
        """1-based dose index of the interval containing ``a``."""
        lo, hi = self.bounds
        if not lo <= a <= hi:
            raise ParameterDomainError(f"{a} outside partition bounds [{lo}, {hi}]")
        # bisect over interior kappas; B belongs to the last interval
        idx = int(np.searchsorted(np.asarray(self.kappas[1:-1]), a, side="right"))
        return idx + 1

    def to_table(self) -> list[dict]:
        return [
            {"dose_index": i + 1, "lower": lo, "upper": hi}
            for i, (lo, hi) in enumerate(self.intervals)
        ]

    def to_json(self) -> str:
        doc = {
            "bounds": list(self.bounds),
            "kappas": list(self.kappas),
            "intervals": self.to_table(),
        }
        return json.dumps(doc, sort_keys=True)

    def to_tsv(self) -> str:
        lines = ["dose_index\tlower\tupper"]
        for row in self.to_table():
            lines.append(f"{row['dose_index']}\t{row['lower']!r}\t{row['upper']!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ConsistencyReport:
    """Per-dose solving constants vs. the settling set of the true MTD.

    ``members_in_set[i]`` records whether dose i+1's solving constant
    lies strictly inside the set; all-true is the sufficient condition
    for allocations to settle at the true closest-to-target dose.
    """

    a_constants: tuple[float, ...]
    a0: float
    d0: int
    theta0: float
    s_set: tuple[float, float]
    members_in_set: tuple[bool, ...]
    tie_flag: bool = False

    @property
    def all_members(self) -> bool:
        return all(self.members_in_set)


def _bisect(f, lo: float, hi: float, tol: float = BISECT_TOL) -> float:
    f_lo = f(lo)
    f_hi = f(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if (f_lo > 0) == (f_hi > 0):
        raise CrmError(f"no sign change on [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if f_mid == 0.0:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _require_one_parameter(model: WorkingModel) -> None:
    if model.kind == LOGISTIC_2P:
        raise ParameterDomainError("partition machinery applies to one-parameter kinds")


def compute_partition(
    model: WorkingModel, theta: float, bounds: tuple[float, float]
) -> Partition:
    """Split [A, B] at the adjacent-dose equidistance points.

    Each split point solves prob(d_i, kappa) + prob(d_{i+1}, kappa) = 2 * theta
    by bisection; feasibility requires prob(d_i, B) < theta < prob(d_i, A)
    at every dose.
    """
    _require_one_parameter(model)
    if not 0.0 < theta < 1.0:
        raise ValueError(f"target must lie in (0,1), got {theta}")
    lo, hi = bounds
    if not lo < hi:
        raise ValueError(f"bounds must be an interval, got {bounds}")
    for i in range(1, model.k + 1):
        p_hi = model.prob_tox(i, hi)
        p_lo = model.prob_tox(i, lo)
        if not p_hi < theta < p_lo:
            raise FeasibilityError(
                f"dose {i}: need prob(B)={p_hi:.6g} < theta={theta} < prob(A)={p_lo:.6g}"
            )
    kappas = [lo]
    for i in range(1, model.k):
        f = lambda a, i=i: model.prob_tox(i, a) + model.prob_tox(i + 1, a) - 2.0 * theta
        kappas.append(_bisect(f, lo, hi))
    kappas.append(hi)
    for a, b in zip(kappas[:-1], kappas[1:]):
        if not a < b:
            raise CrmError(f"partition points not strictly increasing: {kappas}")
    return Partition(bounds=(lo, hi), kappas=tuple(kappas))


def _true_curve(truth) -> Sequence[float]:
    curve = getattr(truth, "true_tox", truth)
    return tuple(float(r) for r in curve)


def closest_dose(curve: Sequence[float], theta: float) -> tuple[int, bool]:
    """1-based index minimizing |curve - theta|; ties go to the lower dose."""
    dists = [abs(r - theta) for r in curve]
    best = min(dists)
    winners = [i for i, d in enumerate(dists) if d == best]
    return winners[0] + 1, len(winners) > 1


def check_consistency(model: WorkingModel, truth, theta: float) -> ConsistencyReport:
    """Solve the per-dose constants and test membership in the settling set.

    ``truth`` is a scenario object carrying ``true_tox`` or a plain
    sequence of strictly increasing true toxicity probabilities.
    """
    _require_one_parameter(model)
    curve = _true_curve(truth)
    if len(curve) != model.k:
        raise CrmError(f"truth has {len(curve)} doses, model has {model.k}")
    for r in curve:
        if not 0.0 < r < 1.0:
            raise ValueError(f"true probabilities must lie in (0,1), got {r}")
    if any(b <= a for a, b in zip(curve[:-1], curve[1:])):
        raise ValueError("true toxicity curve must be strictly increasing")

    a_constants = tuple(model.solve_param(i + 1, curve[i]) for i in range(model.k))
    d0, tie = closest_dose(curve, theta)
    a0 = a_constants[d0 - 1]
    theta0 = curve[d0 - 1]

    lo, hi = model.param_bounds
    span = sorted(a_constants + (a0,))
    if model.kind == "power-direct":
        lo = min(lo, span[0] * 0.5)
        hi = max(hi, span[-1] * 2.0)
    else:
        lo = min(lo, span[0] - 1.0)
        hi = max(hi, span[-1] + 1.0)
    part = compute_partition(model, theta, (lo, hi))
    s_lo, s_hi = part.kappas[d0 - 1], part.kappas[d0]
    members = tuple(s_lo < a < s_hi for a in a_constants)
    return ConsistencyReport(
        a_constants=a_constants,
        a0=a0,
        d0=d0,
        theta0=theta0,
        s_set=(s_lo, s_hi),
        members_in_set=members,
        tie_flag=tie,
    )


def score_term(model: WorkingModel, t: float, dose_index: int, a: float) -> float:
    """One response's estimating-function contribution at parameter ``a``."""
    p = model.prob_tox(dose_index, a)
    dp = model.prob_tox_deriv(dose_index, a)
    return t * dp / p + (1.0 - t) * (-dp) / (1.0 - p)


def estimating_function(model: WorkingModel, history: "TrialHistory", a: float) -> float:
    """Mean score over the history at parameter ``a`` (diagnostic form).

    Its zero coincides with the MLE whenever the responses are
    heterogeneous; no heterogeneity is required to evaluate it.
    """
    _require_one_parameter(model)
    records = list(history)
    if not records:
        raise CrmError("estimating function needs at least one record")
    total = 0.0
    for r in records:
        total += score_term(model, float(r.toxicity), r.dose_index, a)
    return total / len(records)


def dose_level_estimating_function(
    model: WorkingModel,
    allocation_freq: Sequence[float],
    curve: Sequence[float],
    a: float,
) -> float:
    """The dose-level rewrite: sum over doses of freq * score_term(R(d), d, a)."""
    _require_one_parameter(model)
    total = 0.0
    for i, (w, r) in enumerate(zip(allocation_freq, curve)):
        if w:
            total += w * score_term(model, float(r), i + 1, a)
    return total

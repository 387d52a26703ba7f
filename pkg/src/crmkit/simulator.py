"""Replicated trial simulation under known truths.

Each replicate runs on its own counter-based random stream (Philox keyed
by the replicate seed), so parallel and serial execution, and any
aggregation order, give bit-identical results. Per-patient draw order is
fixed: group label (when the scenario is two-group), then toxicity, then
grade (when a grade model is configured), then response (when an
efficacy curve is configured); randomizing policies consume one extra
uniform at allocation time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import designs as dsn
from . import inference as inf
from .errors import CrmError
from .models import WorkingModel


@dataclass(frozen=True)
class Scenario:
    """A true state of nature for simulation."""

    true_tox: tuple[float, ...]
    n: int
    true_resp: tuple[float, ...] | None = None
    group_shift: int | None = None
    group_prob: float = 0.5
    grade_probs: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "true_tox", tuple(float(r) for r in self.true_tox))
        for r in self.true_tox:
            if not 0.0 < r < 1.0:
                raise ValueError(f"true toxicity must lie in (0,1), got {r}")
        if any(b <= a for a, b in zip(self.true_tox[:-1], self.true_tox[1:])):
            raise ValueError("true toxicity curve must be strictly increasing")
        if self.true_resp is not None:
            object.__setattr__(
                self, "true_resp", tuple(float(q) for q in self.true_resp)
            )
            if len(self.true_resp) != len(self.true_tox):
                raise ValueError("true_resp must match true_tox in length")
            for q in self.true_resp:
                if not 0.0 < q < 1.0:
                    raise ValueError(f"true response must lie in (0,1), got {q}")
        if self.n < 1:
            raise ValueError("sample size must be >= 1")
        if self.grade_probs is not None:
            gp = tuple(tuple(float(p) for p in row) for row in self.grade_probs)
            object.__setattr__(self, "grade_probs", gp)
            for row in gp:
                if len(row) != 4 or abs(sum(row) - 1.0) > 1e-9 or any(p < 0 for p in row):
                    raise ValueError(
                        "grade_probs rows are distributions over non-DLT grades 0..3"
                    )

    @property
    def k(self) -> int:
        return len(self.true_tox)

    def tox_prob(self, dose_index: int, group: int | None) -> float:
        i = dose_index
        if self.group_shift is not None and group == 1:
            i = min(dose_index + self.group_shift, self.k)
        return self.true_tox[i - 1]


@dataclass(frozen=True)
class ForcedOutcome:
    """A scripted patient outcome overriding the random draws."""

    toxicity: int
    grade: int | None = None
    group: int | None = None
    response: int | None = None


@dataclass(frozen=True)
class TrialResult:
    doses: tuple[int, ...]
    toxicities: tuple[int, ...]
    history: inf.TrialHistory
    recommendation: int
    estimates: tuple[float, ...] | None
    theta_hat: float | None
    settle_index: int
    seed: int


@dataclass(frozen=True)
class OperatingCharacteristics:
    """Aggregates over replicated trials."""

    recommendation_dist: tuple[float, ...]
    allocation_dist: tuple[float, ...]
    toxicity_rate: float
    settle_stats: dict[int, float]
    theta_hat_mean: float
    theta_hat_var: float
    replicates: int
    n: int


def trial_rng(seed: int) -> np.random.Generator:
    """The counter-based stream for one replicate."""
    return np.random.Generator(np.random.Philox(key=seed))


def _default_grade(toxicity: int) -> int:
    return 4 if toxicity else 0


def _draw_grade(scenario: Scenario, dose: int, toxicity: int, rng) -> int:
    if toxicity:
        return 4
    if scenario.grade_probs is None:
        return 0
    row = scenario.grade_probs[dose - 1]
    u = rng.random()
    acc = 0.0
    for g, p in enumerate(row):
        acc += p
        if u < acc:
            return g
    return 3


def _settle_index(doses: Sequence[int]) -> int:
    if not doses:
        return 0
    j = len(doses)
    last = doses[-1]
    while j > 1 and doses[j - 2] == last:
        j -= 1
    return j


def _fast_path_applicable(policy: dsn.DesignPolicy, scenario: Scenario) -> bool:
    return (
        policy.is_two_stage
        and policy.randomize is None
        and policy.model_class is None
        and policy.grouping is None
        and policy.msd is None
        and scenario.group_shift is None
    )


def _run_two_stage_fast(
    policy: dsn.DesignPolicy,
    model: WorkingModel,
    scenario: Scenario,
    seed: int,
    scripted: Sequence[ForcedOutcome] | None,
) -> TrialResult:
    """Incremental-state loop for the plain two-stage likelihood design."""
    rule = policy.inference.escalation
    k = model.k
    n = len(scripted) if scripted is not None else scenario.n
    rng = trial_rng(seed)
    tox = [0] * k
    ntox = [0] * k
    level_n = [0] * k
    level_sev = [0.0] * k
    any_dlt = False
    model_stage = False
    warm: float | None = None
    level = 1
    max_tried = 0
    doses: list[int] = []
    ys: list[int] = []
    records: list[inf.PatientRecord] = []
    no_skip = policy.no_skip_active()
    target = policy.target
    over_w = policy.over_weight
    estimates: tuple[float, ...] | None = None
    alpha_count = model.k

    def model_recommend() -> tuple[int, tuple[float, ...], float]:
        nonlocal warm
        a = inf.mle_from_counts(model, tox, ntox, warm=warm)
        warm = a
        curve = tuple(model.prob_tox(i, a) for i in range(1, alpha_count + 1))
        idx = dsn.closest_by_distance(curve, target, over_w, policy.tie_break)
        if no_skip and max_tried > 0 and idx > max_tried + 1:
            idx = max_tried + 1
        return idx, curve, a

    a_final: float | None = None
    for j in range(n):
        if model_stage:
            if sum(ntox) > 0:  # a DLT triggered the hand-off, so tox >= 1
                x, estimates, a_final = model_recommend()
            else:
                x = max(1, (doses[-1] if doses else 1) - 1)  # awaiting heterogeneity
        else:
            x = level
        if scripted is not None:
            out = scripted[j]
            y = out.toxicity
            grade = out.grade if out.grade is not None else _default_grade(y)
        else:
            y = 1 if rng.random() < scenario.tox_prob(x, None) else 0
            grade = _draw_grade(scenario, x, y, rng)
        doses.append(x)
        ys.append(y)
        records.append(inf.PatientRecord(x, y, grade=grade))
        max_tried = max(max_tried, x)
        tox[x - 1] += y
        ntox[x - 1] += 1 - y
        if not model_stage:
            level = x
            level_n[x - 1] += 1
            level_sev[x - 1] += rule.grade_severity[grade]
            if y == 1 or grade == dsn.DLT_GRADE:
                any_dlt = True
            decision = dsn.stage_one_action(
                rule, level_n[x - 1], level_sev[x - 1], any_dlt
            )
            if decision.action == dsn.HAND_OFF:
                model_stage = True
            elif decision.action == dsn.ESCALATE:
                level = min(level + 1, k)

    if model_stage and sum(ntox) > 0:
        rec, estimates, a_final = model_recommend()
    elif not model_stage:
        rec = level
        estimates = None
        a_final = None
    else:
        rec = max(1, (doses[-1] if doses else 1) - 1)
        estimates = None
        a_final = None
    theta_hat = estimates[rec - 1] if estimates is not None else None
    return TrialResult(
        doses=tuple(doses),
        toxicities=tuple(ys),
        history=inf.TrialHistory(tuple(records)),
        recommendation=rec,
        estimates=estimates,
        theta_hat=theta_hat,
        settle_index=_settle_index(doses),
        seed=seed,
    )


def _run_generic(
    policy: dsn.DesignPolicy,
    model: WorkingModel,
    scenario: Scenario,
    seed: int,
    scripted: Sequence[ForcedOutcome] | None,
) -> TrialResult:
    k = model.k
    n = len(scripted) if scripted is not None else scenario.n
    rng = trial_rng(seed)
    history = inf.TrialHistory()
    doses: list[int] = []
    ys: list[int] = []
    grouping = policy.grouping is not None or scenario.group_shift is not None
    rec = None
    for j in range(n):
        group = None
        if scripted is not None:
            group = scripted[j].group
        elif grouping:
            group = 1 if rng.random() < scenario.group_prob else 0
        try:
            if policy.grouping is not None:
                if group is None:
                    group = 0
                tg = dsn.two_group_next_dose(
                    model,
                    history,
                    policy.inference.prior,
                    group,
                    policy.grouping,
                    target=policy.target,
                    tie_break=policy.tie_break,
                )
                x = tg.dose_index
            else:
                rec = dsn.next_dose(policy, model, history, rng)
                x = rec.index
        except CrmError as exc:
            raise CrmError(f"allocation failed at patient {j + 1}: {exc}") from exc
        if scripted is not None:
            out = scripted[j]
            y = out.toxicity
            grade = out.grade if out.grade is not None else _default_grade(y)
            v = out.response
        else:
            y = 1 if rng.random() < scenario.tox_prob(x, group) else 0
            grade = _draw_grade(scenario, x, y, rng)
            v = None
            if scenario.true_resp is not None and y == 0:
                v = 1 if rng.random() < scenario.true_resp[x - 1] else 0
        history = history.append(
            inf.PatientRecord(x, y, grade=grade, group=group, response=v)
        )
        doses.append(x)
        ys.append(y)
    try:
        if policy.grouping is not None:
            tg = dsn.two_group_next_dose(
                model,
                history,
                policy.inference.prior,
                0,
                policy.grouping,
                target=policy.target,
                tie_break=policy.tie_break,
            )
            final_index, final_est = tg.dose_index, tg.estimates
        else:
            final = dsn.next_dose(policy, model, history, rng)
            final_index, final_est = final.index, final.estimates
    except CrmError as exc:
        raise CrmError(f"final recommendation failed: {exc}") from exc
    theta_hat = final_est[final_index - 1] if final_est is not None else None
    return TrialResult(
        doses=tuple(doses),
        toxicities=tuple(ys),
        history=history,
        recommendation=final_index,
        estimates=final_est,
        theta_hat=theta_hat,
        settle_index=_settle_index(doses),
        seed=seed,
    )


def run_trial(
    policy: dsn.DesignPolicy,
    model: WorkingModel,
    scenario: Scenario,
    seed: int,
    scripted: Sequence[ForcedOutcome] | None = None,
) -> TrialResult:
    """Simulate one trial; fully deterministic given the seed.

    ``scripted`` forces the per-patient outcomes (the random outcome
    draws are skipped) while allocation still follows the policy.
    """
    if scenario.k != model.k:
        raise CrmError(f"scenario has {scenario.k} doses, model has {model.k}")
    if _fast_path_applicable(policy, scenario):
        return _run_two_stage_fast(policy, model, scenario, seed, scripted)
    return _run_generic(policy, model, scenario, seed, scripted)


def replicate_seeds(base_seed: int, replicates: int) -> range:
    return range(base_seed, base_seed + replicates)


def aggregate(results: Sequence[TrialResult], k: int) -> OperatingCharacteristics:
    """Commutative fold of per-trial results into operating characteristics."""
    if not results:
        raise ValueError("need at least one replicate")
    rec_counts = np.zeros(k)
    alloc_counts = np.zeros(k)
    tox_total = 0
    patients_total = 0
    settle: dict[int, int] = {}
    theta_sum = 0.0
    theta_sq = 0.0
    theta_n = 0
    for r in sorted(results, key=lambda t: t.seed):
        rec_counts[r.recommendation - 1] += 1
        for d in r.doses:
            alloc_counts[d - 1] += 1
        tox_total += sum(r.toxicities)
        patients_total += len(r.doses)
        settle[r.settle_index] = settle.get(r.settle_index, 0) + 1
        if r.theta_hat is not None:
            theta_n += 1
            theta_sum += r.theta_hat
            theta_sq += r.theta_hat * r.theta_hat
    m = len(results)
    theta_mean = theta_sum / theta_n if theta_n else float("nan")
    theta_var = (
        (theta_sq - theta_n * theta_mean * theta_mean) / (theta_n - 1)
        if theta_n > 1
        else float("nan")
    )
    return OperatingCharacteristics(
        recommendation_dist=tuple(float(x) for x in rec_counts / m),
        allocation_dist=tuple(float(x) for x in alloc_counts / patients_total),
        toxicity_rate=tox_total / patients_total,
        settle_stats={j: c / m for j, c in sorted(settle.items())},
        theta_hat_mean=theta_mean,
        theta_hat_var=theta_var,
        replicates=m,
        n=patients_total // m,
    )


def operating_characteristics(
    policy: dsn.DesignPolicy,
    model: WorkingModel,
    scenario: Scenario,
    replicates: int,
    base_seed: int,
) -> OperatingCharacteristics:
    """Aggregate ``run_trial`` over the replicate seed range."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    results = [
        run_trial(policy, model, scenario, seed)
        for seed in replicate_seeds(base_seed, replicates)
    ]
    return aggregate(results, model.k)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def scenario_from_dict(doc: dict) -> Scenario:
    return Scenario(
        true_tox=tuple(doc["true_tox"]),
        n=int(doc["n"]),
        true_resp=tuple(doc["true_resp"]) if doc.get("true_resp") else None,
        group_shift=doc.get("group_shift"),
        group_prob=float(doc.get("group_prob", 0.5)),
        grade_probs=tuple(tuple(row) for row in doc["grade_probs"])
        if doc.get("grade_probs")
        else None,
    )


def oc_to_dict(oc: OperatingCharacteristics) -> dict:
    return {
        "recommendation_dist": list(oc.recommendation_dist),
        "allocation_dist": list(oc.allocation_dist),
        "toxicity_rate": oc.toxicity_rate,
        "settle_stats": {str(j): f for j, f in oc.settle_stats.items()},
        "theta_hat_mean": oc.theta_hat_mean,
        "theta_hat_var": oc.theta_hat_var,
        "replicates": oc.replicates,
        "n": oc.n,
    }


def oc_to_json(oc: OperatingCharacteristics) -> str:
    return json.dumps(oc_to_dict(oc), sort_keys=True, indent=2)


def oc_to_csv(oc: OperatingCharacteristics) -> str:
    lines = ["dose_index,recommendation_freq,allocation_freq"]
    for i, (r, a) in enumerate(zip(oc.recommendation_dist, oc.allocation_dist)):
        lines.append(f"{i + 1},{r!r},{a!r}")
    return "\n".join(lines) + "\n"

"""Allocation policies: mapping (history, inference output) to the next dose.

A policy couples a target toxicity rate with an inference mode (Bayesian
under a prior, or likelihood preceded by a grade-gated escalation stage),
an optional asymmetric distance that penalizes overshooting the target,
optional randomization around the target, two-group handling, and a
most-successful-dose criterion when an efficacy outcome is collected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import inference as inf
from .errors import CrmError, HistoryError
from .models import POWER_EXP, ModelClass, Skeleton, WorkingModel

ESCALATE = "escalate"
STAY = "stay"
HAND_OFF = "hand_off"

# Estimate used by the distance in Bayes mode.
ESTIMATE_POSTERIOR_MEAN = "posterior_mean"
ESTIMATE_PLUGIN = "plugin"

DEFAULT_GRADE_SEVERITY = (0.0, 1.0, 2.0, 3.0, 4.0)
DLT_GRADE = 4
COHORT_GATE = 3  # once this many patients sit at a level, escalate only on full cohorts


@dataclass(frozen=True)
class EscalationRule:
    """Grade-gated stage-one escalation.

    Escalate while the mean severity at the current level stays below
    ``severity_threshold``; once ``COHORT_GATE`` patients sit at a level,
    escalation additionally requires complete cohorts of that size. The
    first dose-limiting toxicity halts the stage (at cohort completion
    when patients are included in groups).
    """

    cohort_size: int = 1
    severity_threshold: float = 2.0
    grade_severity: tuple[float, ...] = DEFAULT_GRADE_SEVERITY

    def __post_init__(self):
        if self.cohort_size < 1:
            raise ValueError("cohort_size must be >= 1")
        if len(self.grade_severity) != 5:
            raise ValueError("grade_severity maps the five grades 0..4")


@dataclass(frozen=True)
class BayesInference:
    """Model-based allocation from a posterior under a proper prior."""

    prior: inf.PriorSpec
    estimate: str = ESTIMATE_POSTERIOR_MEAN

    def __post_init__(self):
        if self.estimate not in (ESTIMATE_POSTERIOR_MEAN, ESTIMATE_PLUGIN):
            raise ValueError(f"unknown estimate kind {self.estimate!r}")
        if isinstance(self.prior, inf.NoPrior):
            raise ValueError("Bayes inference needs a proper prior; use two-stage likelihood")


@dataclass(frozen=True)
class TwoStageLikelihood:
    """Likelihood allocation once responses are heterogeneous; grade-gated
    escalation before that."""

    escalation: EscalationRule = field(default_factory=EscalationRule)


@dataclass(frozen=True)
class RandomizationSpec:
    """Bernoulli displacement to the level just above (below) the target."""

    delta_prob: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.delta_prob < 1.0:
            raise ValueError("delta_prob must lie in (0,1)")


@dataclass(frozen=True)
class TwoGroupSpec:
    """Two-group heterogeneity handled by a one-level shift member."""

    shift: int = 1
    prior_weights: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if self.shift < 1:
            raise ValueError("shift must be >= 1")
        if any(w < 0 for w in self.prior_weights) or abs(sum(self.prior_weights) - 1) > 1e-9:
            raise ValueError("prior_weights must be nonnegative and sum to 1")


@dataclass(frozen=True)
class MsdSpec:
    """Most-successful-dose criterion: maximize response without toxicity.

    The efficacy curve uses the log-shift power model over its own
    skeleton, fit on non-toxic patients' responses; optional priors allow
    fitting before the component likelihoods are heterogeneous.
    """

    response_skeleton: Skeleton
    tox_prior: inf.PriorSpec | None = None
    resp_prior: inf.PriorSpec | None = None


@dataclass(frozen=True)
class DesignPolicy:
    """Everything needed to turn a history into the next recommendation."""

    target: float
    inference: BayesInference | TwoStageLikelihood
    over_weight: float = 1.0  # 1.0 = symmetric distance; > 1 magnifies overdose
    randomize: RandomizationSpec | None = None
    model_class: ModelClass | None = None
    grouping: TwoGroupSpec | None = None
    msd: MsdSpec | None = None
    no_skip: bool | None = None  # None = on for two-stage designs, off for Bayes
    tie_break: str = "lower"

    def __post_init__(self):
        if not 0.0 < self.target < 1.0:
            raise ValueError("target must lie in (0,1)")
        if self.over_weight < 1.0:
            raise ValueError("over_weight must be >= 1")
        if self.tie_break not in ("lower", "upper"):
            raise ValueError("tie_break must be 'lower' or 'upper'")
        if self.model_class is not None and not isinstance(self.inference, BayesInference):
            raise ValueError("a model class requires Bayes inference (shared prior)")
        if self.grouping is not None and not isinstance(self.inference, BayesInference):
            raise ValueError("two-group handling requires Bayes inference (shared prior)")

    @property
    def is_two_stage(self) -> bool:
        return isinstance(self.inference, TwoStageLikelihood)

    def no_skip_active(self) -> bool:
        return self.is_two_stage if self.no_skip is None else self.no_skip


@dataclass(frozen=True)
class StageDecision:
    action: str  # escalate | stay | hand_off
    mean_severity: float | None
    reason: str


@dataclass(frozen=True)
class DoseRecommendation:
    index: int
    rationale: str
    estimates: tuple[float, ...] | None = None
    estimate_kind: str = "stage_one"
    stage_action: str | None = None
    model_weights: tuple[float, ...] | None = None
    randomized_from: int | None = None


# ---------------------------------------------------------------------------
# Distance and argmin
# ---------------------------------------------------------------------------

def distance_to_target(estimate: float, target: float, over_weight: float = 1.0) -> float:
    """Overdose-magnified distance: over_weight*(est-target)+ + (target-est)+."""
    diff = estimate - target
    return over_weight * diff if diff > 0 else -diff


def closest_by_distance(
    estimates, target: float, over_weight: float = 1.0, tie_break: str = "lower"
) -> int:
    """1-based index minimizing the configured distance."""
    dists = [distance_to_target(float(e), target, over_weight) for e in estimates]
    best = min(dists)
    winners = [i for i, d in enumerate(dists) if d == best]
    chosen = winners[0] if tie_break == "lower" else winners[-1]
    return chosen + 1


# ---------------------------------------------------------------------------
# Stage one (grade-gated escalation)
# ---------------------------------------------------------------------------

def _is_dlt(record: inf.PatientRecord) -> bool:
    return record.toxicity == 1 or record.grade == DLT_GRADE


def stage_one_action(
    rule: EscalationRule,
    n_level: int,
    severity_sum: float,
    any_dlt: bool,
) -> StageDecision:
    """Stage-one decision from the current level's tallies.

    ``n_level``/``severity_sum`` describe the patients at the current
    level; ``any_dlt`` covers the whole history.
    """
    if n_level == 0:
        raise HistoryError("stage-one decision needs at least one patient at the level")
    mid_cohort = n_level % rule.cohort_size != 0
    if any_dlt:
        if mid_cohort:
            return StageDecision(STAY, None, "completing the cohort containing the first DLT")
        return StageDecision(HAND_OFF, None, "dose-limiting toxicity ends the escalation stage")
    if mid_cohort:
        return StageDecision(STAY, None, f"cohort of {rule.cohort_size} in progress")
    mean_sev = severity_sum / n_level
    if mean_sev >= rule.severity_threshold:
        return StageDecision(
            STAY, mean_sev,
            f"mean severity {mean_sev:.3g} >= {rule.severity_threshold:g}",
        )
    if n_level >= COHORT_GATE and n_level % COHORT_GATE != 0:
        return StageDecision(
            STAY, mean_sev, f"awaiting a complete cohort of {COHORT_GATE} at this level"
        )
    return StageDecision(
        ESCALATE, mean_sev,
        f"mean severity {mean_sev:.3g} < {rule.severity_threshold:g}",
    )


def two_stage_step(rule: EscalationRule, history: inf.TrialHistory) -> StageDecision:
    """Stage-one decision for the level of the most recent patient."""
    records = list(history)
    if not records:
        raise HistoryError("two-stage step needs a nonempty history")
    level = records[-1].dose_index
    n_level = 0
    severity_sum = 0.0
    any_dlt = False
    for r in records:
        if _is_dlt(r):
            any_dlt = True
        if r.dose_index == level:
            if r.grade is None:
                raise HistoryError(
                    f"record at dose {r.dose_index} lacks a grade; grades are required "
                    "while the escalation rule is active"
                )
            n_level += 1
            severity_sum += rule.grade_severity[r.grade]
    return stage_one_action(rule, n_level, severity_sum, any_dlt)


def stage_engaged(rule: EscalationRule, history: inf.TrialHistory) -> bool:
    """True once the escalation stage has handed off to the model.

    Walks the history replaying the stage-one decisions: the hand-off
    happens at completion of the cohort containing the first
    dose-limiting toxicity (immediately, for cohorts of one).
    """
    level_n: dict[int, int] = {}
    level_sev: dict[int, float] = {}
    any_dlt = False
    for r in history:
        # records entered after an override may lack grades; severity then
        # follows the binary outcome
        sev = (4.0 if r.toxicity else 0.0) if r.grade is None else rule.grade_severity[r.grade]
        level_n[r.dose_index] = level_n.get(r.dose_index, 0) + 1
        level_sev[r.dose_index] = level_sev.get(r.dose_index, 0.0) + sev
        if _is_dlt(r):
            any_dlt = True
        decision = stage_one_action(
            rule, level_n[r.dose_index], level_sev[r.dose_index], any_dlt
        )
        if decision.action == HAND_OFF:
            return True
    return False


# ---------------------------------------------------------------------------
# Model-based allocation
# ---------------------------------------------------------------------------

def _apply_no_skip(policy: DesignPolicy, index: int, max_tried: int) -> tuple[int, bool]:
    if policy.no_skip_active() and max_tried > 0 and index > max_tried + 1:
        return max_tried + 1, True
    return index, False


def _model_class_estimates(
    policy: DesignPolicy, history: inf.TrialHistory
) -> tuple[tuple[float, ...], tuple[float, ...], int]:
    mclass = policy.model_class
    prior = policy.inference.prior
    weights = inf.posterior_model_weights(mclass, history, prior)
    best = int(np.argmax(weights))  # argmax takes the first (lowest) on ties
    member = mclass.members[best]
    a_map = inf.map_estimate(member, history, prior)
    curve = tuple(member.prob_tox(i, a_map) for i in range(1, member.k + 1))
    return curve, tuple(float(w) for w in weights), best


def next_dose(
    policy: DesignPolicy,
    model: WorkingModel,
    history: inf.TrialHistory,
    rng: np.random.Generator | None = None,
) -> DoseRecommendation:
    """The dose for the next patient under the policy.

    Deterministic given the inputs and the generator state; the generator
    is consumed only by randomizing policies (one uniform per call).
    In likelihood mode, histories without response heterogeneity defer to
    the escalation stage instead of erroring.
    """
    history.validate_for(model.k)
    k = model.k
    max_tried = history.max_dose_index()

    if policy.is_two_stage:
        rule = policy.inference.escalation
        if len(history) == 0:
            return DoseRecommendation(
                1, "first patient enters at the lowest level", stage_action=ESCALATE
            )
        if not stage_engaged(rule, history):
            decision = two_stage_step(rule, history)
            level = history.records[-1].dose_index
            if decision.action == ESCALATE:
                idx = min(level + 1, k)
            else:  # stay covers mid-cohort waits and blocked escalation
                idx = level
            return DoseRecommendation(
                idx, f"stage one: {decision.reason}", stage_action=decision.action
            )
        if not history.is_heterogeneous:
            level = history.records[-1].dose_index
            idx = max(1, level - 1)
            return DoseRecommendation(
                idx,
                "all responses toxic so far: de-escalating while awaiting heterogeneity",
                stage_action=STAY,
            )

    if policy.model_class is not None:
        estimates, weights, member = _model_class_estimates(policy, history)
        kind = "model_class"
        base = closest_by_distance(estimates, policy.target, policy.over_weight, policy.tie_break)
        rationale = (
            f"member {member + 1} (weight {weights[member]:.3f}) puts dose {base} "
            f"closest to target {policy.target:g}"
        )
        model_weights = weights
    else:
        if policy.is_two_stage:
            a_hat = inf.mle(model, history)
            estimates = tuple(model.prob_tox(i, a_hat) for i in range(1, k + 1))
            kind = "mle_plugin"
        else:
            summ = inf.posterior(model, history, policy.inference.prior)
            if policy.inference.estimate == ESTIMATE_POSTERIOR_MEAN:
                estimates = summ.prob_tox_mean
                kind = "posterior_mean"
            else:
                estimates = summ.prob_tox_plugin
                kind = "posterior_plugin"
        base = closest_by_distance(estimates, policy.target, policy.over_weight, policy.tie_break)
        rationale = (
            f"estimate {estimates[base - 1]:.3f} at dose {base} is closest to "
            f"target {policy.target:g}"
        )
        model_weights = None

    index, capped = _apply_no_skip(policy, base, max_tried)
    if capped:
        rationale += f"; capped at one level above the highest tried dose ({max_tried})"

    randomized_from = None
    if policy.randomize is not None and rng is not None:
        moved = randomized_next_dose(policy, index, estimates, rng)
        if moved != index:
            randomized_from = index
            rationale += f"; randomized from dose {index} to {moved}"
            index = moved

    return DoseRecommendation(
        index,
        rationale,
        estimates=estimates,
        estimate_kind=kind,
        model_weights=model_weights,
        randomized_from=randomized_from,
    )


def randomized_next_dose(
    policy: DesignPolicy,
    base: int | DoseRecommendation,
    estimates,
    rng: np.random.Generator,
) -> int:
    """Displace the systematic choice by a Bernoulli step around the target.

    Below-target estimates may move one level up, above-target one level
    down; at the grid edges the allocation is systematic again. Consumes
    exactly one uniform draw when a displacement is possible.
    """
    if policy.randomize is None:
        raise CrmError("policy has no randomization configured")
    index = base.index if isinstance(base, DoseRecommendation) else int(base)
    k = len(estimates)
    at_base = float(estimates[index - 1])
    if at_base <= policy.target:
        if index >= k:
            return index
        delta = 1 if rng.random() < policy.randomize.delta_prob else 0
        return index + delta
    if index <= 1:
        return index
    delta = 1 if rng.random() < policy.randomize.delta_prob else 0
    return index - delta


def initial_dose(policy: DesignPolicy, model: WorkingModel) -> DoseRecommendation:
    """Starting recommendation before any data.

    Two-stage designs start at the lowest level; a partition prior starts
    at its modal interval; other Bayes priors start at the dose whose
    prior-based estimate is closest to target.
    """
    if policy.is_two_stage:
        return DoseRecommendation(
            1, "first patient enters at the lowest level", stage_action=ESCALATE
        )
    prior = policy.inference.prior
    if isinstance(prior, inf.PartitionPrior):
        best = max(range(len(prior.mass)), key=lambda i: (prior.mass[i], -i))
        return DoseRecommendation(
            best + 1,
            f"prior-modal partition interval (mass {prior.mass[best]:g})",
            estimate_kind="prior_mass",
        )
    return next_dose(policy, model, inf.TrialHistory())


# ---------------------------------------------------------------------------
# Two-group allocation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoGroupResult:
    dose_index: int
    weights: tuple[float, float]
    selected_member: int  # 1 = no shift, 2 = one-level shift for group 1
    estimates: tuple[float, ...]


def shift_group_history(
    history: inf.TrialHistory, shift: int, k: int
) -> inf.TrialHistory:
    """Group-1 records moved ``shift`` levels up (saturating at the top)."""
    out = []
    for r in history:
        if r.group is None:
            raise HistoryError("two-group allocation requires group labels on all records")
        if r.group == 1:
            r = inf.PatientRecord(
                min(r.dose_index + shift, k), r.toxicity, r.grade, r.group, r.response
            )
        out.append(r)
    return inf.TrialHistory(tuple(out))


def two_group_next_dose(
    model: WorkingModel,
    history: inf.TrialHistory,
    prior: inf.PriorSpec,
    group: int,
    spec: TwoGroupSpec = TwoGroupSpec(),
    target: float = 0.2,
    tie_break: str = "lower",
) -> TwoGroupResult:
    """Next dose for a patient from ``group`` under the two-member class.

    Member 1 treats the groups as identical; member 2 models group 1 as
    one level more toxic (top level saturating). The member with the
    larger posterior weight (ties to member 1) supplies the group's
    toxicity curve; the curve is summarized at the posterior mode.
    """
    if group not in (0, 1):
        raise HistoryError(f"group must be 0 or 1, got {group}")
    k = model.k
    shifted = shift_group_history(history, spec.shift, k)
    log_margs = []
    for member_history in (history, shifted):
        if len(member_history) == 0:
            log_margs.append(0.0)
        else:
            log_margs.append(inf.log_marginal_likelihood(model, member_history, prior))
    logs = np.array(
        [
            (math.log(w) if w > 0 else -np.inf) + lm
            for w, lm in zip(spec.prior_weights, log_margs)
        ]
    )
    raw = np.exp(logs - np.max(logs))
    weights = raw / raw.sum()
    selected = 2 if weights[1] > weights[0] else 1
    fit_history = shifted if selected == 2 else history
    a_map = inf.map_estimate(model, fit_history, prior)

    def member_curve_index(i: int) -> int:
        if selected == 2 and group == 1:
            return min(i + spec.shift, k)
        return i

    estimates = tuple(
        model.prob_tox(member_curve_index(i), a_map) for i in range(1, k + 1)
    )
    idx = closest_by_distance(estimates, target, tie_break=tie_break)
    return TwoGroupResult(
        dose_index=idx,
        weights=(float(weights[0]), float(weights[1])),
        selected_member=selected,
        estimates=estimates,
    )


# ---------------------------------------------------------------------------
# Most successful dose
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MsdResult:
    dose_index: int
    p_success: tuple[float, ...]
    prob_tox: tuple[float, ...]
    prob_resp: tuple[float, ...]
    tox_param: float
    resp_param: float


def msd_next_dose(
    spec: MsdSpec, tox_model: WorkingModel, history: inf.TrialHistory
) -> MsdResult:
    """Dose maximizing estimated response-without-toxicity probability.

    The toxicity curve is fit on all records; the response curve on the
    non-toxic records (response conditional on no toxicity). The two
    likelihoods factorize, so independent fits are exact. Ties go to the
    lower dose.
    """
    history.validate_for(tox_model.k)
    resp_model = WorkingModel(POWER_EXP, spec.response_skeleton)
    non_toxic = [r for r in history if r.toxicity == 0]
    if not non_toxic:
        raise HistoryError("no non-toxic records to fit the response curve on")
    missing = [r for r in non_toxic if r.response is None]
    if missing:
        raise HistoryError(
            f"{len(missing)} non-toxic record(s) lack the response outcome"
        )
    resp_history = inf.TrialHistory(
        tuple(inf.PatientRecord(r.dose_index, r.response) for r in non_toxic)
    )

    if spec.tox_prior is not None:
        a_hat = inf.map_estimate(tox_model, history, spec.tox_prior)
    else:
        a_hat = inf.mle(tox_model, history)
    if spec.resp_prior is not None:
        b_hat = inf.map_estimate(resp_model, resp_history, spec.resp_prior)
    else:
        b_hat = inf.mle(resp_model, resp_history)

    k = tox_model.k
    tox_curve = tuple(tox_model.prob_tox(i, a_hat) for i in range(1, k + 1))
    resp_curve = tuple(resp_model.prob_tox(i, b_hat) for i in range(1, k + 1))
    success = tuple(q * (1.0 - r) for q, r in zip(resp_curve, tox_curve))
    best = max(range(k), key=lambda i: (success[i], -i))
    return MsdResult(
        dose_index=best + 1,
        p_success=success,
        prob_tox=tox_curve,
        prob_resp=resp_curve,
        tox_param=a_hat,
        resp_param=b_hat,
    )

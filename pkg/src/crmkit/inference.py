"""Likelihood and Bayesian inference for working dose-toxicity models.

Everything here is a pure function of (model, history, prior). The
posterior machinery runs deterministic adaptive Gauss-Legendre
quadrature in log space with max-shift normalization, so marginal
quantities are invariant to a common log-shift of the integrand.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import norm as _norm

from . import quadrature
from .errors import (
    CrmError,
    DoseIndexError,
    HistoryError,
    NoInteriorMaximumError,
    ParameterDomainError,
)
from .models import LOGISTIC_2P, POWER_DIRECT, POWER_EXP, ModelClass, WorkingModel

SCORE_TOL = 1e-10
POSTERIOR_ABS_TOL = 1e-10  # tighter than the 1e-8 contract; ratios stay well inside it


class EmptyHistoryWarning(UserWarning):
    """Likelihood evaluated on an empty history (defined as 0)."""


# ---------------------------------------------------------------------------
# Trial data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PatientRecord:
    """One patient's dose and outcomes.

    ``grade`` is the 0-4 toxicity severity (4 = dose-limiting), ``group``
    the optional two-group label, ``response`` the optional efficacy
    outcome observed on non-toxic patients.
    """

    dose_index: int
    toxicity: int
    grade: int | None = None
    group: int | None = None
    response: int | None = None

    def __post_init__(self):
        if self.dose_index < 1:
            raise DoseIndexError(f"dose index must be >= 1, got {self.dose_index}")
        if self.toxicity not in (0, 1):
            raise HistoryError(f"toxicity outcome must be 0 or 1, got {self.toxicity}")
        if self.grade is not None and self.grade not in (0, 1, 2, 3, 4):
            raise HistoryError(f"grade must be in 0..4, got {self.grade}")
        if self.group is not None and self.group not in (0, 1):
            raise HistoryError(f"group must be 0 or 1, got {self.group}")
        if self.response is not None and self.response not in (0, 1):
            raise HistoryError(f"response must be 0 or 1, got {self.response}")


@dataclass(frozen=True)
class TrialHistory:
    """The accumulated outcome data: an ordered tuple of patient records."""

    records: tuple[PatientRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> "TrialHistory":
        """Build from (dose_index, toxicity) pairs."""
        return cls(tuple(PatientRecord(d, y) for d, y in pairs))

    def append(self, record: PatientRecord) -> "TrialHistory":
        return TrialHistory(self.records + (record,))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def is_heterogeneous(self) -> bool:
        """True when both a toxic and a non-toxic response are present."""
        seen = {r.toxicity for r in self.records}
        return seen == {0, 1}

    def max_dose_index(self) -> int:
        return max((r.dose_index for r in self.records), default=0)

    def validate_for(self, k: int) -> None:
        for r in self.records:
            if r.dose_index > k:
                raise DoseIndexError(f"record at dose {r.dose_index} exceeds skeleton size {k}")

    def counts(self, k: int) -> tuple[list[int], list[int]]:
        """Per-dose (toxic, non-toxic) counts; order-independent view."""
        self.validate_for(k)
        tox = [0] * k
        ntox = [0] * k
        for r in self.records:
            if r.toxicity:
                tox[r.dose_index - 1] += 1
            else:
                ntox[r.dose_index - 1] += 1
        return tox, ntox


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaPrior:
    """Gamma density over a positive parameter: rate ** shape * a ** (shape-1) * exp(-rate*a) / Gamma(shape)."""

    rate: float
    shape: float

    def __post_init__(self):
        if self.rate <= 0 or self.shape <= 0:
            raise ValueError("gamma prior requires rate > 0 and shape > 0")

    def log_density(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        out = np.full(a.shape, -np.inf)
        pos = a > 0
        out[pos] = (
            self.shape * math.log(self.rate)
            + (self.shape - 1.0) * np.log(a[pos])
            - self.rate * a[pos]
            - math.lgamma(self.shape)
        )
        return out


@dataclass(frozen=True)
class NormalPrior:
    """Normal density over an unbounded parameter."""

    mean: float = 0.0
    variance: float = 1.34 ** 2

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("normal prior requires variance > 0")

    def log_density(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        return -0.5 * (a - self.mean) ** 2 / self.variance - 0.5 * math.log(
            2 * math.pi * self.variance
        )


@dataclass(frozen=True)
class PseudoDataPrior:
    """Prior expressed as weighted fictional observations.

    The posterior kernel is w * pseudo_loglik + (1 - w) * observed_loglik.
    ``weight`` = 1 drops the observed-data term entirely.
    """

    records: TrialHistory
    weight: float

    def __post_init__(self):
        if not 0.0 < self.weight <= 1.0:
            raise ValueError("pseudo-data weight must lie in (0, 1]")
        if len(self.records) == 0:
            raise ValueError("pseudo-data prior needs at least one pseudo record")
        if not self.records.is_heterogeneous:
            raise ValueError(
                "pseudo records must contain both outcomes, else the prior is improper"
            )


@dataclass(frozen=True)
class PartitionPrior:
    """Piecewise-uniform prior over the parameter partition.

    ``mass[i]`` is placed uniformly on the subinterval of the parameter
    space in which dose i+1 is the closest-to-target dose, so the
    pre-data probability that dose i+1 is recommended equals mass[i].
    """

    mass: tuple[float, ...]
    target: float
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "mass", tuple(float(m) for m in self.mass))
        if any(m < 0 for m in self.mass):
            raise ValueError("partition masses must be nonnegative")
        if abs(sum(self.mass) - 1.0) > 1e-9:
            raise ValueError(f"partition masses must sum to 1, got {sum(self.mass)}")
        if not 0.0 < self.target < 1.0:
            raise ValueError("target must lie in (0, 1)")


class NoPrior:
    """Likelihood-only marker: posterior() returns the MLE plug-in summary."""

    def __repr__(self):  # pragma: no cover
        return "NoPrior()"


PriorSpec = GammaPrior | NormalPrior | PseudoDataPrior | PartitionPrior | NoPrior


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------

def log_likelihood(model: WorkingModel, history: TrialHistory, params) -> float | np.ndarray:
    """Binomial log-likelihood of the history (constant terms dropped).

    Vectorized over scalar-parameter values for the one-parameter kinds.
    An empty history yields 0 with an :class:`EmptyHistoryWarning`.
    """
    if len(history) == 0:
        warnings.warn("log-likelihood of an empty history is 0", EmptyHistoryWarning)
        scalar = np.ndim(params) == 0 or model.kind == LOGISTIC_2P
        return 0.0 if scalar else np.zeros(np.shape(params))
    tox, ntox = history.counts(model.k)
    if model.kind == LOGISTIC_2P:
        a, b = params
        total = 0.0
        for i in range(model.k):
            if tox[i] == 0 and ntox[i] == 0:
                continue
            eta = a * model.skeleton.alpha[i] + b
            # log sigma(eta) and log sigma(-eta), stable in both tails
            log_p = -np.logaddexp(0.0, -eta)
            log_q = -np.logaddexp(0.0, eta)
            total += tox[i] * log_p + ntox[i] * log_q
        return float(total)
    a = np.asarray(params, dtype=float)
    scalar = a.ndim == 0
    expo = np.exp(a) if model.kind == POWER_EXP else a
    total = np.zeros_like(np.asarray(expo, dtype=float))
    for i in range(model.k):
        if tox[i] == 0 and ntox[i] == 0:
            continue
        log_psi = expo * model.skeleton.log_alpha[i]
        if tox[i]:
            total = total + tox[i] * log_psi
        if ntox[i]:
            total = total + ntox[i] * np.log1p(-np.exp(log_psi))
    return float(total) if scalar else total


def _score_direct(a: float, log_alpha, tox, ntox) -> tuple[float, float]:
    """Score and its derivative on the direct power scale."""
    s = 0.0
    ds = 0.0
    for i in range(len(log_alpha)):
        la = log_alpha[i]
        if tox[i]:
            s += tox[i] * la
        if ntox[i]:
            p = math.exp(a * la)
            q = 1.0 - p
            s -= ntox[i] * p * la / q
            ds -= ntox[i] * la * la * p / (q * q)
    return s, ds


def _score_exp(a: float, log_alpha, tox, ntox) -> tuple[float, float]:
    """Score and derivative on the log-shift scale (a_direct = exp(a))."""
    e = math.exp(a)
    s_d, ds_d = _score_direct(e, log_alpha, tox, ntox)
    # chain rule: dL/da = e * S_d(e); d2L/da2 = e * S_d(e) + e^2 * S_d'(e)
    return e * s_d, e * s_d + e * e * ds_d


def _safeguarded_root(fn, lo: float, hi: float, x0: float, tol: float = SCORE_TOL) -> float:
    """Newton iteration on fn (value, derivative) with a bisection fallback.

    Requires fn decreasing through zero on [lo, hi] in the sign sense
    fn(lo) >= 0 >= fn(hi); maintains the bracket at every step.
    """
    x = x0 if lo < x0 < hi else 0.5 * (lo + hi)
    for _ in range(200):
        s, ds = fn(x)
        if abs(s) < tol:
            return x
        if s > 0:
            lo = x
        else:
            hi = x
        x_new = x - s / ds if ds != 0 else 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if hi - lo < 1e-15 * max(1.0, abs(hi)):
            return 0.5 * (lo + hi)
        x = x_new
    return x


def _mle_direct(model: WorkingModel, history: TrialHistory, warm: float | None = None) -> float:
    """Root of the direct-scale score; unique under heterogeneity."""
    tox, ntox = history.counts(model.k)
    return mle_from_counts(model, tox, ntox, warm=warm)


def mle_from_counts(model: WorkingModel, tox, ntox, warm: float | None = None) -> float:
    """Direct-scale MLE from per-dose counts (hot path for simulation).

    Safeguarded Newton on the score with a bisection fallback; the score
    is strictly decreasing, so the bracketed root is unique.
    """
    if sum(tox) == 0 or sum(ntox) == 0:
        raise NoInteriorMaximumError(
            "likelihood has no interior maximum: need at least one toxic "
            "and one non-toxic response"
        )
    log_alpha = model.skeleton.log_alpha
    if model.kind == POWER_EXP:
        lo, hi = math.exp(model.param_bounds[0]), math.exp(model.param_bounds[1])
    elif model.kind == POWER_DIRECT:
        lo, hi = model.param_bounds
    else:
        raise ParameterDomainError("scalar MLE applies to the one-parameter kinds")
    s_lo, _ = _score_direct(lo, log_alpha, tox, ntox)
    s_hi, _ = _score_direct(hi, log_alpha, tox, ntox)
    if s_lo < 0 or s_hi > 0:
        raise NoInteriorMaximumError(
            f"score has no sign change on the admissible bracket ({lo}, {hi})"
        )
    start = warm if warm is not None else math.sqrt(lo * hi)
    return _safeguarded_root(
        lambda a: _score_direct(a, log_alpha, tox, ntox), lo, hi, start
    )


def _mle_logistic(model: WorkingModel, history: TrialHistory) -> tuple[float, float]:
    """Two-parameter logistic MLE by Newton iteration with step halving."""
    tox, ntox = history.counts(model.k)
    if sum(tox) == 0 or sum(ntox) == 0:
        raise NoInteriorMaximumError(
            "likelihood has no interior maximum: need at least one toxic "
            "and one non-toxic response"
        )
    alpha = np.asarray(model.skeleton.alpha)
    n = np.asarray(tox, dtype=float) + np.asarray(ntox, dtype=float)
    t = np.asarray(tox, dtype=float)
    x = np.stack([alpha, np.ones_like(alpha)], axis=1)  # design matrix
    theta = np.zeros(2)

    def loglik(th):
        eta = x @ th
        return float(np.sum(t * -np.logaddexp(0.0, -eta) + (n - t) * -np.logaddexp(0.0, eta)))

    current = loglik(theta)
    for _ in range(200):
        eta = x @ theta
        p = 1.0 / (1.0 + np.exp(-np.clip(eta, -500, 500)))
        grad = x.T @ (t - n * p)
        w = n * p * (1.0 - p)
        hess = -(x.T * w) @ x
        if abs(np.linalg.det(hess)) < 1e-12:
            raise NoInteriorMaximumError("logistic information matrix is singular")
        step = np.linalg.solve(hess, grad)
        scale = 1.0
        for _ in range(40):
            candidate = theta - scale * step
            new = loglik(candidate)
            if new >= current - 1e-12:
                break
            scale *= 0.5
        theta = theta - scale * step
        if np.linalg.norm(theta) > 1e4:
            raise NoInteriorMaximumError(
                "logistic MLE diverged (separated data has no finite maximum)"
            )
        if np.max(np.abs(grad)) < SCORE_TOL:
            break
        current = loglik(theta)
    if theta[0] < 0:
        raise ParameterDomainError(
            f"logistic MLE slope {theta[0]:.4g} < 0 lies outside the admissible domain "
            "(non-increasing empirical rates)"
        )
    return float(theta[0]), float(theta[1])


def mle(model: WorkingModel, history: TrialHistory, warm: float | None = None):
    """Maximum-likelihood parameter estimate.

    Requires response heterogeneity (at least one toxic and one
    non-toxic outcome); otherwise the likelihood is maximized on the
    boundary and :class:`NoInteriorMaximumError` is raised.

    Returns a float for the one-parameter kinds (on the model's own
    scale) and an (a, b) pair for ``logistic-2p``.
    """
    if model.kind == LOGISTIC_2P:
        return _mle_logistic(model, history)
    direct_warm = None
    if warm is not None:
        direct_warm = math.exp(warm) if model.kind == POWER_EXP else warm
    root = _mle_direct(model, history, warm=direct_warm)
    return math.log(root) if model.kind == POWER_EXP else root


# ---------------------------------------------------------------------------
# Posterior quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PosteriorSummary:
    """Posterior summaries of the parameter and the per-dose toxicity curve.

    ``prob_tox_mean`` integrates the curve against the posterior
    (the posterior mean of the probability at each dose);
    ``prob_tox_plugin`` evaluates the curve at the posterior mean
    parameter. ``normalizer`` is the posterior normalizing constant
    (NaN for the likelihood-only summary).
    """

    param_mean: float
    param_mode: float
    prob_tox_mean: tuple[float, ...]
    prob_tox_plugin: tuple[float, ...]
    normalizer: float
    source: str = "posterior"


def _weighted_loglik(model: WorkingModel, history: TrialHistory, prior) -> callable:
    """The log posterior kernel on the model's own parameter scale."""
    have_data = len(history) > 0

    if isinstance(prior, PseudoDataPrior):
        w = prior.weight
        pseudo = prior.records

        def kernel(a):
            out = w * log_likelihood(model, pseudo, a)
            if have_data and w < 1.0:
                out = out + (1.0 - w) * log_likelihood(model, history, a)
            return out

        return kernel

    if isinstance(prior, (GammaPrior, NormalPrior)):

        def kernel(a):
            out = prior.log_density(np.asarray(a, dtype=float))
            if have_data:
                out = out + log_likelihood(model, history, a)
            return out

        return kernel

    if isinstance(prior, PartitionPrior):
        log_dens = _partition_log_density(model, prior)

        def kernel(a):
            out = log_dens(np.asarray(a, dtype=float))
            if have_data:
                out = out + log_likelihood(model, history, a)
            return out

        return kernel

    raise CrmError(f"unsupported prior {prior!r}")


def _partition_breakpoints(model: WorkingModel, prior: PartitionPrior) -> list[float]:
    from .partition import compute_partition  # runtime import avoids a cycle

    bounds = prior.bounds if prior.bounds is not None else model.param_bounds
    if len(prior.mass) != model.k:
        raise CrmError(
            f"partition prior has {len(prior.mass)} masses for {model.k} doses"
        )
    part = compute_partition(model, prior.target, bounds)
    return list(part.kappas)


def _partition_log_density(model: WorkingModel, prior: PartitionPrior):
    kappas = _partition_breakpoints(model, prior)
    edges = np.asarray(kappas)
    heights = np.empty(model.k)
    for i in range(model.k):
        width = edges[i + 1] - edges[i]
        heights[i] = prior.mass[i] / width if prior.mass[i] > 0 else 0.0

    def log_dens(a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        idx = np.clip(np.searchsorted(edges, a, side="right") - 1, 0, model.k - 1)
        h = heights[idx]
        out = np.full(a.shape, -np.inf)
        inside = (a >= edges[0]) & (a <= edges[-1]) & (h > 0)
        out[inside] = np.log(h[inside])
        return out

    return log_dens


def _integration_pieces(model: WorkingModel, prior) -> tuple[str, list[float]]:
    """Integration variable ('a' or 't' for a=t/(1-t)) and its breakpoints."""
    if isinstance(prior, PartitionPrior):
        kappas = _partition_breakpoints(model, prior)
        if model.kind == POWER_DIRECT:
            return "t", [k / (1.0 + k) for k in kappas]
        return "a", kappas
    if model.kind == POWER_DIRECT:
        return "t", [0.0, 1.0]
    lo, hi = model.param_bounds
    return "a", [lo, hi]


def _prior_score(prior, a: float) -> tuple[float, float]:
    """(d/da log density, second derivative) for the parametric priors."""
    if isinstance(prior, GammaPrior):
        return (prior.shape - 1.0) / a - prior.rate, -(prior.shape - 1.0) / (a * a)
    if isinstance(prior, NormalPrior):
        return -(a - prior.mean) / prior.variance, -1.0 / prior.variance
    raise CrmError(f"no closed-form score for prior {prior!r}")


def map_estimate(model: WorkingModel, history: TrialHistory, prior: PriorSpec) -> float:
    """Posterior-mode (MAP) parameter on the model's own scale.

    Closed-form safeguarded Newton for the parametric and pseudo-data
    priors; piecewise bounded search for the partition prior. With
    :class:`NoPrior` this is the MLE.
    """
    if model.kind == LOGISTIC_2P:
        raise ParameterDomainError("MAP machinery applies to the one-parameter kinds")
    if isinstance(prior, NoPrior):
        return mle(model, history)
    history.validate_for(model.k)
    log_alpha = model.skeleton.log_alpha
    tox, ntox = history.counts(model.k)
    data_score = _score_exp if model.kind == POWER_EXP else _score_direct

    if isinstance(prior, (GammaPrior, NormalPrior, PseudoDataPrior)):
        if isinstance(prior, PseudoDataPrior):
            w = prior.weight
            ptox, pntox = prior.records.counts(model.k)

            def kernel_score(a):
                s1, d1 = data_score(a, log_alpha, ptox, pntox)
                s2, d2 = data_score(a, log_alpha, tox, ntox)
                return w * s1 + (1 - w) * s2, w * d1 + (1 - w) * d2

        else:

            def kernel_score(a):
                ps, pd = _prior_score(prior, a)
                s, d = data_score(a, log_alpha, tox, ntox)
                return ps + s, pd + d

        if model.kind == POWER_DIRECT:
            lo, hi = 1e-12, max(1e7, model.param_bounds[1])
        else:
            lo, hi = model.param_bounds
        s_lo = kernel_score(lo)[0]
        s_hi = kernel_score(hi)[0]
        if s_lo <= 0:
            return lo
        if s_hi >= 0:
            return hi
        start = None
        if history.is_heterogeneous and isinstance(prior, (GammaPrior, NormalPrior)):
            try:
                start = mle(model, history)
            except (NoInteriorMaximumError, CrmError):
                start = None
        return _safeguarded_root(kernel_score, lo, hi, start if start is not None else 0.5 * (lo + hi))

    # Partition prior: search each smooth piece in the integration variable.
    kernel = _weighted_loglik(model, history, prior)
    var, pieces = _integration_pieces(model, prior)

    def param_of(x: float) -> float:
        return x / (1.0 - x) if var == "t" else x

    best_x, best_val = None, -np.inf
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        if hi - lo < 1e-15:
            continue
        eps = 1e-12 * (hi - lo)
        res = minimize_scalar(
            lambda x: -float(kernel(np.asarray([param_of(x)]))[0]),
            bounds=(lo + eps, hi - eps),
            method="bounded",
            options={"xatol": 1e-12},
        )
        if -res.fun > best_val:
            best_val = -res.fun
            best_x = float(res.x)
    if best_x is None or not np.isfinite(best_val):
        raise CrmError("posterior kernel has no finite maximum on the domain")
    return param_of(best_x)


def _kernel_shift(kernel, param_of, pieces, a_map: float) -> float:
    """A safe log-shift: kernel at the MAP, guarded by a coarse probe grid."""
    xs = []
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        if hi - lo > 1e-15:
            eps = 1e-9 * (hi - lo)
            xs.append(np.linspace(lo + eps, hi - eps, 17))
    grid = param_of(np.concatenate(xs))
    probe = float(np.max(kernel(grid)))
    at_map = float(kernel(np.asarray([a_map]))[0])
    return max(probe, at_map)


def posterior(
    model: WorkingModel, history: TrialHistory, prior: PriorSpec
) -> PosteriorSummary:
    """Posterior parameter and toxicity-curve summaries under a prior.

    With :class:`NoPrior` the maximum-likelihood plug-in summary is
    returned instead (requires a heterogeneous history).
    """
    if model.kind == LOGISTIC_2P:
        raise CrmError("posterior quadrature supports the one-parameter kinds only")
    history.validate_for(model.k)
    if isinstance(prior, NoPrior):
        a_hat = mle(model, history)
        curve = tuple(model.prob_tox(i, a_hat) for i in range(1, model.k + 1))
        return PosteriorSummary(
            param_mean=a_hat,
            param_mode=a_hat,
            prob_tox_mean=curve,
            prob_tox_plugin=curve,
            normalizer=float("nan"),
            source="mle",
        )

    kernel = _weighted_loglik(model, history, prior)
    var, pieces = _integration_pieces(model, prior)

    if var == "t":

        def param_of(t):
            return t / (1.0 - t)

        def jacobian(t: np.ndarray) -> np.ndarray:
            return 1.0 / (1.0 - t) ** 2

    else:

        def param_of(a):
            return a

        def jacobian(a: np.ndarray) -> np.ndarray:
            return np.ones_like(a)

    mode_param = map_estimate(model, history, prior)
    shift = _kernel_shift(kernel, param_of, pieces, mode_param)
    if not np.isfinite(shift):
        raise CrmError("posterior kernel has no finite maximum on the domain")

    k = model.k

    def eval_kernel(x: np.ndarray) -> np.ndarray:
        return kernel(param_of(x))

    def integrand(x: np.ndarray) -> np.ndarray:
        a = param_of(x)
        weight = np.exp(eval_kernel(x) - shift) * jacobian(x)
        rows = [weight, a * weight]
        for i in range(1, k + 1):
            rows.append(model.prob_tox(i, a) * weight)
        return np.stack(rows)

    vals = quadrature.integrate_piecewise(integrand, pieces, abs_tol=POSTERIOR_ABS_TOL)
    z = float(vals[0])
    if z <= 0 or not math.isfinite(z):
        raise CrmError("posterior normalizer is not positive and finite")
    mean = float(vals[1]) / z
    curve_mean = tuple(float(v) / z for v in vals[2:])
    curve_plugin = tuple(model.prob_tox(i, mean) for i in range(1, k + 1))
    try:
        normalizer = math.exp(shift) * z
    except OverflowError:
        normalizer = float("inf")
    return PosteriorSummary(
        param_mean=mean,
        param_mode=mode_param,
        prob_tox_mean=curve_mean,
        prob_tox_plugin=curve_plugin,
        normalizer=normalizer,
    )


def log_marginal_likelihood(
    model: WorkingModel, history: TrialHistory, prior: PriorSpec
) -> float:
    """log of integral( exp(loglik) * prior density ) over the parameter."""
    if isinstance(prior, NoPrior):
        raise CrmError("marginal likelihood requires a proper prior")
    kernel = _weighted_loglik(model, history, prior)
    var, pieces = _integration_pieces(model, prior)
    if var == "t":

        def param_of(t):
            return t / (1.0 - t)

        def integrand(t: np.ndarray) -> np.ndarray:
            a = t / (1.0 - t)
            return np.exp(kernel(a) - shift) / (1.0 - t) ** 2

    else:

        def param_of(a):
            return a

        def integrand(a: np.ndarray) -> np.ndarray:
            return np.exp(kernel(a) - shift)

    a_map = map_estimate(model, history, prior)
    shift = _kernel_shift(kernel, param_of, pieces, a_map)
    if not np.isfinite(shift):
        return -np.inf
    z = float(quadrature.integrate_piecewise(integrand, pieces, abs_tol=POSTERIOR_ABS_TOL))
    if z <= 0:
        return -np.inf
    return shift + math.log(z)


def posterior_model_weights(
    mclass: ModelClass, history: TrialHistory, prior: PriorSpec
) -> np.ndarray:
    """Posterior weights over the members of a model class.

    All members share the prior. Marginal likelihoods are handled in
    log space with max-shift normalization, so the result is invariant
    to a common log-shift; the weights sum to 1 exactly.
    """
    logs = np.array(
        [
            math.log(w) + log_marginal_likelihood(m, history, prior)
            if w > 0
            else -np.inf
            for m, w in zip(mclass.members, mclass.prior_weights)
        ]
    )
    shift = np.max(logs)
    if not np.isfinite(shift):
        raise CrmError("all marginal likelihoods vanished")
    raw = np.exp(logs - shift)
    return raw / raw.sum()


# ---------------------------------------------------------------------------
# Confidence intervals
# ---------------------------------------------------------------------------

def observed_information(model: WorkingModel, history: TrialHistory, a_hat: float) -> float:
    """Observed information at the MLE for the power-family kinds.

    Summed over the non-toxic records only: for the direct power scale
    the toxic terms are linear in the parameter, so this equals the full
    negative second derivative of the log-likelihood at the MLE; on the
    log-shift scale the same sum picks up the exp(a_hat) chain factor.
    """
    if model.kind == LOGISTIC_2P:
        raise ParameterDomainError("interval machinery applies to the one-parameter kinds")
    tox, ntox = history.counts(model.k)
    if sum(ntox) == 0:
        raise CrmError("variance formula needs at least one non-toxic record")
    scale = math.exp(a_hat) if model.kind == POWER_EXP else 1.0
    total = 0.0
    for i in range(model.k):
        if ntox[i] == 0:
            continue
        p = model.prob_tox(i + 1, a_hat)
        c = scale * model.skeleton.log_alpha[i]
        total += ntox[i] * p * c * c / (1.0 - p) ** 2
    if total <= 0 or not math.isfinite(total):
        raise CrmError(f"non-positive information {total}")
    return total


def wald_interval(
    model: WorkingModel, next_dose: int, a_hat: float, variance: float, level: float
) -> tuple[float, float]:
    """Map a log-shift-scale Wald interval through the toxicity curve.

    ``a_hat`` is on the model's own scale; ``variance`` is the variance
    of the estimate on the log-shift scale (where the parameter is
    unbounded, so the interval never leaves the admissible domain). The
    two power kinds therefore yield identical intervals for the same
    fitted curve.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0,1), got {level}")
    if variance < 0:
        raise CrmError(f"negative variance {variance}")
    z = _norm.ppf(1.0 - (1.0 - level) / 2.0)
    half = z * math.sqrt(variance)
    center = math.log(a_hat) if model.kind == POWER_DIRECT else a_hat
    ends = (center + half, center - half)
    probs = []
    for a in ends:
        if model.kind == POWER_DIRECT:
            a = math.exp(a)
        probs.append(model.prob_tox(next_dose, a))
    lo, hi = min(probs), max(probs)
    return lo, hi


def confidence_interval(
    model: WorkingModel,
    history: TrialHistory,
    a_hat: float,
    next_dose: int,
    level: float,
) -> tuple[float, float]:
    """Wald confidence interval for the toxicity probability at a dose.

    The parameter variance is the reciprocal observed information at the
    MLE (a sum over the non-toxic records only), carried to the log-shift
    scale, and the interval is mapped through the monotone curve, so the
    returned pair is ordered low to high.
    """
    info = observed_information(model, history, a_hat)
    if model.kind == POWER_DIRECT:
        info = info * a_hat * a_hat  # to the log-shift scale
    return wald_interval(model, next_dose, a_hat, 1.0 / info, level)

"""Working dose-toxicity models and their skeletons.

A skeleton fixes per-dose baseline probabilities; a working model bends
them through a low-dimensional parameter. Three parameterizations are
provided:

- ``power-exp``: prob = alpha_i ** exp(a), a on the whole real line
  (the log-shift form; equivalently log(-log prob) = log(-log alpha_i) + a).
- ``power-direct``: prob = alpha_i ** a with a > 0 (the form under which
  the classic worked illustrations reproduce; the two power kinds are
  related by a = exp(a')).
- ``logistic-2p``: prob = expit(a * alpha_i + b), the saturated
  two-parameter model used once allocation concentrates on two levels.

All evaluation is pure and stateless; arrays of parameter values are
accepted wherever a scalar is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DoseIndexError, ParameterDomainError

POWER_EXP = "power-exp"
POWER_DIRECT = "power-direct"
LOGISTIC_2P = "logistic-2p"
MODEL_KINDS = (POWER_EXP, POWER_DIRECT, LOGISTIC_2P)

# Default admissible interval for the log-shift parameterization. Wide
# enough that prob spans essentially (0,1) for any practical skeleton.
DEFAULT_BOUNDS_EXP = (-10.0, 10.0)
# Search bracket on the direct power scale (a > 0).
DEFAULT_BOUNDS_DIRECT = (1e-4, 1e4)


@dataclass(frozen=True)
class Skeleton:
    """Ordered dose labels with their working-model constants.

    Args:
        doses: opaque dose labels, ordered low to high. Computation is by
            1-based index only; labels are carried for reporting.
        alpha: per-dose constants, strictly increasing in (0, 1).
    """

    doses: tuple
    alpha: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "doses", tuple(self.doses))
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        k = len(self.alpha)
        if k < 2:
            raise ValueError(f"skeleton needs at least 2 doses, got {k}")
        if len(self.doses) != k:
            raise ValueError("doses and alpha must have equal length")
        prev = 0.0
        for a in self.alpha:
            if not (prev < a < 1.0):
                raise ValueError(
                    f"skeleton constants must satisfy 0 < a_1 < ... < a_k < 1, got {self.alpha}"
                )
            prev = a

    @classmethod
    def from_alpha(cls, alpha) -> "Skeleton":
        """Skeleton with integer labels 1..k."""
        alpha = tuple(alpha)
        return cls(doses=tuple(range(1, len(alpha) + 1)), alpha=alpha)

    @property
    def k(self) -> int:
        return len(self.alpha)

    @property
    def log_alpha(self) -> np.ndarray:
        return np.log(self.alpha)


@dataclass(frozen=True)
class WorkingModel:
    """A skeleton plus a parameterization kind (and admissible bounds).

    ``param_bounds`` is the admissible interval for the scalar parameter:
    the compact interval for ``power-exp``, the positive search bracket
    for ``power-direct``, and the lower bound on the slope for
    ``logistic-2p`` (intercept unconstrained).
    """

    kind: str
    skeleton: Skeleton
    param_bounds: tuple[float, float] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.param_bounds is None:
            default = DEFAULT_BOUNDS_DIRECT if self.kind == POWER_DIRECT else DEFAULT_BOUNDS_EXP
            object.__setattr__(self, "param_bounds", default)
        lo, hi = self.param_bounds
        if not lo < hi:
            raise ValueError(f"param_bounds must be an interval, got {self.param_bounds}")
        if self.kind == POWER_DIRECT and lo <= 0:
            raise ValueError("power-direct requires a strictly positive parameter domain")

    @property
    def k(self) -> int:
        return self.skeleton.k

    def _check_dose(self, dose_index: int) -> int:
        if not 1 <= dose_index <= self.k:
            raise DoseIndexError(f"dose index {dose_index} outside 1..{self.k}")
        return dose_index - 1

    def _check_params(self, params):
        if self.kind == LOGISTIC_2P:
            a, b = self._split_logistic(params)
            if np.any(np.asarray(a) < 0):
                raise ParameterDomainError("logistic-2p requires slope a >= 0")
            return a, b
        a = np.asarray(params, dtype=float)
        if self.kind == POWER_DIRECT and np.any(a <= 0):
            raise ParameterDomainError("power-direct requires a > 0")
        return a

    @staticmethod
    def _split_logistic(params):
        try:
            a, b = params
        except (TypeError, ValueError) as exc:
            raise ParameterDomainError("logistic-2p expects a parameter pair (a, b)") from exc
        return np.asarray(a, dtype=float), np.asarray(b, dtype=float)

    def prob_tox(self, dose_index: int, params):
        """Toxicity probability at a dose for given parameter value(s).

        Vectorized over ``params``: scalar in, float out; array in, array out.
        """
        i = self._check_dose(dose_index)
        alpha_i = self.skeleton.alpha[i]
        if self.kind == LOGISTIC_2P:
            a, b = self._check_params(params)
            out = expit(a * alpha_i + b)
        else:
            a = self._check_params(params)
            expo = np.exp(a) if self.kind == POWER_EXP else a
            out = np.exp(expo * math.log(alpha_i))
        if np.ndim(out) == 0:
            return float(out)
        return out

    def prob_tox_deriv(self, dose_index: int, params):
        """d prob / d a at a dose (closed form, matching ``prob_tox``)."""
        i = self._check_dose(dose_index)
        alpha_i = self.skeleton.alpha[i]
        log_alpha = math.log(alpha_i)
        if self.kind == LOGISTIC_2P:
            p = self.prob_tox(dose_index, params)
            out = alpha_i * np.asarray(p) * (1.0 - np.asarray(p))
        else:
            p = np.asarray(self.prob_tox(dose_index, params))
            a = np.asarray(params, dtype=float)
            if self.kind == POWER_EXP:
                out = p * np.exp(a) * log_alpha  # = p * log(p)
            else:
                out = p * log_alpha
        if np.ndim(out) == 0:
            return float(out)
        return out

    def prob_tox_curve(self, params) -> np.ndarray:
        """Toxicity probabilities at every dose for a scalar parameter."""
        return np.array([self.prob_tox(i, params) for i in range(1, self.k + 1)])

    def solve_param(self, dose_index: int, prob: float) -> float:
        """The parameter value at which this dose's probability equals ``prob``.

        Only defined for the one-parameter kinds.
        """
        i = self._check_dose(dose_index)
        if not 0.0 < prob < 1.0:
            raise ParameterDomainError(f"target probability must lie in (0,1), got {prob}")
        if self.kind == LOGISTIC_2P:
            raise ParameterDomainError("solve_param is defined for one-parameter kinds only")
        direct = math.log(prob) / math.log(self.skeleton.alpha[i])
        return math.log(direct) if self.kind == POWER_EXP else direct


@dataclass(frozen=True)
class ModelClass:
    """A finite family of working models with prior weights.

    Members share a kind and dose grid but carry distinct skeletons.
    """

    members: tuple[WorkingModel, ...]
    prior_weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "prior_weights", tuple(float(w) for w in self.prior_weights))
        if not self.members:
            raise ValueError("model class needs at least one member")
        if len(self.prior_weights) != len(self.members):
            raise ValueError("one prior weight per member required")
        if any(w < 0 for w in self.prior_weights):
            raise ValueError("prior weights must be nonnegative")
        total = sum(self.prior_weights)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"prior weights must sum to 1, got {total}")
        kinds = {m.kind for m in self.members}
        if len(kinds) != 1:
            raise ValueError("all members must share a model kind")
        ks = {m.k for m in self.members}
        if len(ks) != 1:
            raise ValueError("all members must share the dose grid size")

    @property
    def size(self) -> int:
        return len(self.members)


def prob_tox(model: WorkingModel, dose_index: int, params):
    """Module-level alias for :meth:`WorkingModel.prob_tox`."""
    return model.prob_tox(dose_index, params)


def prob_tox_deriv(model: WorkingModel, dose_index: int, params):
    """Module-level alias for :meth:`WorkingModel.prob_tox_deriv`."""
    return model.prob_tox_deriv(dose_index, params)

"""Shared fixtures: the worked-illustration design and frozen outcomes."""

from __future__ import annotations

import pytest

import crmkit as ck

# Six-level design used throughout: skeleton, target 0.2, true curve.
ILLUSTRATION_ALPHA = (0.04, 0.07, 0.20, 0.35, 0.55, 0.70)
ILLUSTRATION_TRUTH = (0.03, 0.22, 0.45, 0.60, 0.80, 0.95)
TARGET = 0.2

# Outcomes as (dose, toxicity): 3 cohorts of 3 (no tox at 1 and 2, two tox
# at 3), then the model stage at level 2. Patients 11-16 carry t = 2
# toxicities (the count derived by the A2 oracle); this order keeps the
# recommendation at level 2 for every remaining patient.
OUTCOMES_9 = [(1, 0)] * 3 + [(2, 0)] * 3 + [(3, 1), (3, 1), (3, 0)]
OUTCOMES_10 = OUTCOMES_9 + [(2, 0)]
OUTCOMES_16 = OUTCOMES_10 + [(2, 1), (2, 0), (2, 0), (2, 0), (2, 0), (2, 1)]

A_HAT_9 = 0.715
A_HAT_10 = 0.759
RHAT_9 = (0.101, 0.149, 0.316, 0.472, 0.652, 0.775)


@pytest.fixture(scope="session")
def skeleton():
    return ck.Skeleton.from_alpha(ILLUSTRATION_ALPHA)


@pytest.fixture(scope="session")
def model_direct(skeleton):
    return ck.WorkingModel(ck.POWER_DIRECT, skeleton)


@pytest.fixture(scope="session")
def model_exp(skeleton):
    return ck.WorkingModel(ck.POWER_EXP, skeleton)


@pytest.fixture(scope="session")
def history9():
    return ck.TrialHistory.from_pairs(OUTCOMES_9)


@pytest.fixture(scope="session")
def history10():
    return ck.TrialHistory.from_pairs(OUTCOMES_10)


@pytest.fixture(scope="session")
def history16():
    return ck.TrialHistory.from_pairs(OUTCOMES_16)


def grade_for(tox: int) -> int:
    return 4 if tox else 0


def illustration_design_doc() -> dict:
    """The two-stage design document used by the service-level tests."""
    return {
        "skeleton": {"alpha": list(ILLUSTRATION_ALPHA)},
        "model": {"kind": "power-direct"},
        "policy": {
            "target": TARGET,
            "inference": {
                "mode": "likelihood-two-stage",
                "escalation": {"cohort_size": 3},
            },
        },
        "ci_level": 0.9,
    }

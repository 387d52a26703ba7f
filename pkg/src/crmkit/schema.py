"""Design-configuration documents: JSON schema validation and builders.

A single JSON document declares the skeleton, model kind, allocation
policy, and prior; it is validated structurally here and turned into the
engine's typed objects. Validation failures carry field-level messages.
"""

from __future__ import annotations

from dataclasses import dataclass

import jsonschema

from . import designs as dsn
from . import inference as inf
from .errors import ConfigError
from .models import MODEL_KINDS, ModelClass, Skeleton, WorkingModel

PRIOR_SCHEMA = {
    "type": "object",
    "oneOf": [
        {
            "properties": {
                "kind": {"const": "gamma"},
                "rate": {"type": "number", "exclusiveMinimum": 0},
                "shape": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["kind", "rate", "shape"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "normal"},
                "mean": {"type": "number"},
                "variance": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["kind", "variance"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "pseudo-data"},
                "weight": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "records": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "properties": {
                            "dose_index": {"type": "integer", "minimum": 1},
                            "toxicity": {"type": "integer", "enum": [0, 1]},
                        },
                        "required": ["dose_index", "toxicity"],
                    },
                },
            },
            "required": ["kind", "weight", "records"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "partition"},
                "mass": {
                    "type": "array",
                    "minItems": 2,
                    "items": {"type": "number", "minimum": 0},
                },
                "bounds": {
                    "type": "array",
                    "minItems": 2,
                    "maxItems": 2,
                    "items": {"type": "number"},
                },
            },
            "required": ["kind", "mass"],
            "additionalProperties": False,
        },
    ],
}

DESIGN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "skeleton": {
            "type": "object",
            "properties": {
                "alpha": {
                    "type": "array",
                    "minItems": 2,
                    "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                },
                "doses": {"type": "array"},
            },
            "required": ["alpha"],
            "additionalProperties": False,
        },
        "model": {
            "type": "object",
            "properties": {
                "kind": {"enum": list(MODEL_KINDS)},
                "bounds": {
                    "type": "array",
                    "minItems": 2,
                    "maxItems": 2,
                    "items": {"type": "number"},
                },
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "policy": {
            "type": "object",
            "properties": {
                "target": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "inference": {
                    "type": "object",
                    "oneOf": [
                        {
                            "properties": {
                                "mode": {"const": "bayes"},
                                "prior": PRIOR_SCHEMA,
                                "estimate": {"enum": ["posterior_mean", "plugin"]},
                            },
                            "required": ["mode", "prior"],
                            "additionalProperties": False,
                        },
                        {
                            "properties": {
                                "mode": {"const": "likelihood-two-stage"},
                                "escalation": {
                                    "type": "object",
                                    "properties": {
                                        "cohort_size": {"type": "integer", "minimum": 1},
                                        "severity_threshold": {"type": "number"},
                                        "grade_severity": {
                                            "type": "array",
                                            "minItems": 5,
                                            "maxItems": 5,
                                            "items": {"type": "number"},
                                        },
                                    },
                                    "additionalProperties": False,
                                },
                            },
                            "required": ["mode"],
                            "additionalProperties": False,
                        },
                    ],
                },
                "over_weight": {"type": "number", "minimum": 1},
                "randomize": {
                    "type": "object",
                    "properties": {
                        "delta_prob": {
                            "type": "number",
                            "exclusiveMinimum": 0,
                            "exclusiveMaximum": 1,
                        }
                    },
                    "additionalProperties": False,
                },
                "no_skip": {"type": "boolean"},
                "tie_break": {"enum": ["lower", "upper"]},
                "grouping": {
                    "type": "object",
                    "properties": {
                        "shift": {"type": "integer", "minimum": 1},
                        "prior_weights": {
                            "type": "array",
                            "minItems": 2,
                            "maxItems": 2,
                            "items": {"type": "number", "minimum": 0},
                        },
                    },
                    "additionalProperties": False,
                },
                "model_class": {
                    "type": "object",
                    "properties": {
                        "skeletons": {
                            "type": "array",
                            "minItems": 1,
                            "items": {
                                "type": "array",
                                "minItems": 2,
                                "items": {"type": "number"},
                            },
                        },
                        "weights": {
                            "type": "array",
                            "items": {"type": "number", "minimum": 0},
                        },
                    },
                    "required": ["skeletons"],
                    "additionalProperties": False,
                },
                "msd": {
                    "type": "object",
                    "properties": {
                        "response_alpha": {
                            "type": "array",
                            "minItems": 2,
                            "items": {
                                "type": "number",
                                "exclusiveMinimum": 0,
                                "exclusiveMaximum": 1,
                            },
                        }
                    },
                    "required": ["response_alpha"],
                    "additionalProperties": False,
                },
            },
            "required": ["target", "inference"],
            "additionalProperties": False,
        },
        "ci_level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "max_patients": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
    },
    "required": ["skeleton", "model", "policy"],
    "additionalProperties": False,
}

_VALIDATOR = jsonschema.Draft202012Validator(DESIGN_SCHEMA)


@dataclass(frozen=True)
class DesignConfig:
    """A validated design document with its built engine objects."""

    model: WorkingModel
    policy: dsn.DesignPolicy
    ci_level: float
    max_patients: int | None
    seed: int
    raw: dict


def validate_design_document(doc: dict) -> None:
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            path = "/".join(str(p) for p in e.absolute_path) or "(root)"
            msgs.append(f"{path}: {e.message}")
        raise ConfigError(f"design document failed validation ({len(msgs)} error(s))", msgs)


def _build_prior(doc: dict, target: float, model: WorkingModel) -> inf.PriorSpec:
    kind = doc["kind"]
    if kind == "gamma":
        return inf.GammaPrior(rate=doc["rate"], shape=doc["shape"])
    if kind == "normal":
        return inf.NormalPrior(mean=doc.get("mean", 0.0), variance=doc["variance"])
    if kind == "pseudo-data":
        records = inf.TrialHistory(
            tuple(
                inf.PatientRecord(r["dose_index"], r["toxicity"]) for r in doc["records"]
            )
        )
        return inf.PseudoDataPrior(records=records, weight=doc["weight"])
    if kind == "partition":
        bounds = tuple(doc["bounds"]) if doc.get("bounds") else None
        return inf.PartitionPrior(mass=tuple(doc["mass"]), target=target, bounds=bounds)
    raise ConfigError(f"unknown prior kind {kind!r}")


def parse_design_document(doc: dict) -> DesignConfig:
    """Validate and build a design document into engine objects.

    Semantic failures (e.g. a non-increasing skeleton) surface as
    :class:`ConfigError` with the offending field in the message.
    """
    validate_design_document(doc)
    sk_doc = doc["skeleton"]
    try:
        alpha = tuple(sk_doc["alpha"])
        doses = tuple(sk_doc["doses"]) if sk_doc.get("doses") else None
        skeleton = (
            Skeleton(doses=doses, alpha=alpha) if doses else Skeleton.from_alpha(alpha)
        )
    except ValueError as exc:
        raise ConfigError(f"skeleton: {exc}", [f"skeleton/alpha: {exc}"]) from exc

    model_doc = doc["model"]
    try:
        bounds = tuple(model_doc["bounds"]) if model_doc.get("bounds") else None
        model = WorkingModel(model_doc["kind"], skeleton, param_bounds=bounds)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}", [f"model: {exc}"]) from exc

    pol = doc["policy"]
    target = pol["target"]
    inf_doc = pol["inference"]
    try:
        if inf_doc["mode"] == "bayes":
            prior = _build_prior(inf_doc["prior"], target, model)
            if isinstance(prior, inf.PartitionPrior) and len(prior.mass) != model.k:
                raise ConfigError(
                    "partition prior mass length must equal the number of doses",
                    ["policy/inference/prior/mass: length mismatch"],
                )
            mode = dsn.BayesInference(
                prior=prior, estimate=inf_doc.get("estimate", dsn.ESTIMATE_POSTERIOR_MEAN)
            )
        else:
            esc = inf_doc.get("escalation", {})
            mode = dsn.TwoStageLikelihood(
                escalation=dsn.EscalationRule(
                    cohort_size=esc.get("cohort_size", 1),
                    severity_threshold=esc.get("severity_threshold", 2.0),
                    grade_severity=tuple(
                        esc.get("grade_severity", dsn.DEFAULT_GRADE_SEVERITY)
                    ),
                )
            )

        model_class = None
        if pol.get("model_class"):
            mc = pol["model_class"]
            skeletons = [Skeleton.from_alpha(a) for a in mc["skeletons"]]
            members = tuple(
                WorkingModel(model.kind, s, param_bounds=model.param_bounds)
                for s in skeletons
            )
            weights = mc.get("weights") or [1.0 / len(members)] * len(members)
            model_class = ModelClass(members=members, prior_weights=tuple(weights))

        grouping = None
        if pol.get("grouping"):
            g = pol["grouping"]
            grouping = dsn.TwoGroupSpec(
                shift=g.get("shift", 1),
                prior_weights=tuple(g.get("prior_weights", (0.5, 0.5))),
            )

        msd = None
        if pol.get("msd"):
            msd = dsn.MsdSpec(
                response_skeleton=Skeleton.from_alpha(pol["msd"]["response_alpha"])
            )

        randomize = None
        if pol.get("randomize"):
            randomize = dsn.RandomizationSpec(delta_prob=pol["randomize"]["delta_prob"])

        policy = dsn.DesignPolicy(
            target=target,
            inference=mode,
            over_weight=pol.get("over_weight", 1.0),
            randomize=randomize,
            model_class=model_class,
            grouping=grouping,
            msd=msd,
            no_skip=pol.get("no_skip"),
            tie_break=pol.get("tie_break", "lower"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"policy: {exc}", [f"policy: {exc}"]) from exc

    return DesignConfig(
        model=model,
        policy=policy,
        ci_level=doc.get("ci_level", 0.9),
        max_patients=doc.get("max_patients"),
        seed=doc.get("seed", 0),
        raw=doc,
    )

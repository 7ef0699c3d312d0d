"""Run configuration documents.

A config is a YAML or JSON mapping with the sections below; every section is
schema-checked and unknown keys are rejected. Errors carry the source line.

.. code-block:: yaml

    seed: 0                  # run seed; INCENTFED_RUN_SEED overrides it
    data:  {m: 4, t: 3, d: 4, full_size: 400, dirichlet_alpha: 0.5,
            noise_sigma: 1.0, seed: 21}
    game:  {payoff: discovery, lambda_reg: 5.0e-4, n_min: 50, n_max: 400,
            theta: null, cost_seed: null, profile: null}
    model: {family: softmax, hidden: 8}
    train: {gamma: 0.05, H: 5, R: 100, gamma_tilde: null, n0: null,
            x0_seed: 0, aggregate_with: next, workers: 1}
    probe: {samples: 256, seed: 0}
    oracle: {tol: 1.0e-10}
    output: {per_iter_trace: false, figures: true}
    sweep: {h_list: [1, 5, 10, 20], target_fraction: 0.1}

``theta: null`` draws cost coefficients with ``cost_seed`` (default: the data
seed); ``profile: null`` draws class profiles from the data spec. A
``derived`` section, as written into ``resolved_config.json``, is accepted
and ignored.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from incentfed import datagen, game as game_mod
from incentfed.engine import FedConfig
from incentfed.errors import ConfigError

SEED_ENV = "INCENTFED_RUN_SEED"

_int = {"type": "integer"}
_nonneg_int = {"type": "integer", "minimum": 0}
_pos_num = {"type": "number", "exclusiveMinimum": 0}
_num_or_list = {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}, "minItems": 1}]}


def _section(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _section(
    {
        "seed": _nonneg_int,
        "data": _section(
            {
                "m": {"type": "integer", "minimum": 1},
                "t": {"type": "integer", "minimum": 2},
                "d": {"type": "integer", "minimum": 1},
                "full_size": {"oneOf": [{"type": "integer", "minimum": 1},
                                        {"type": "array", "items": {"type": "integer", "minimum": 1}}]},
                "dirichlet_alpha": _pos_num,
                "noise_sigma": {"type": "number", "minimum": 0},
                "seed": _nonneg_int,
                "client_keys": {"type": "array", "items": _nonneg_int},
            },
            required=("m", "t", "d", "full_size"),
        ),
        "game": _section(
            {
                "payoff": {"enum": ["discovery", "coverage"]},
                "lambda_reg": _pos_num,
                "n_min": _num_or_list,
                "n_max": _num_or_list,
                "theta": {"oneOf": [{"type": "null"}, _num_or_list]},
                "cost_seed": {"oneOf": [{"type": "null"}, _nonneg_int]},
                "profile": {"oneOf": [{"type": "null"},
                                      {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}]},
            },
            required=("payoff", "lambda_reg", "n_min", "n_max"),
        ),
        "model": _section({"family": {"enum": list(datagen.FAMILIES)}, "hidden": {"type": "integer", "minimum": 1}},
                          required=("family",)),
        "train": _section(
            {
                "gamma": _pos_num,
                "H": {"type": "integer", "minimum": 1},
                "R": {"type": "integer", "minimum": 1},
                "gamma_tilde": {"oneOf": [{"type": "null"}, _pos_num]},
                "n0": {"oneOf": [{"type": "null"}, _num_or_list]},
                "x0_seed": _nonneg_int,
                "aggregate_with": {"enum": ["next", "current"]},
                "workers": {"type": "integer", "minimum": 1},
            },
            required=("gamma", "H", "R"),
        ),
        "probe": _section({"samples": {"type": "integer", "minimum": 2}, "seed": _nonneg_int}),
        "oracle": _section({"tol": _pos_num}),
        "output": _section({"per_iter_trace": {"type": "boolean"}, "figures": {"type": "boolean"}}),
        "sweep": _section({
            "h_list": {"type": "array", "items": {"type": "integer", "minimum": 1}},
            "target_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        }),
        "derived": {"type": "object"},
    },
    required=("data", "game", "model", "train"),
)

DEFAULT_H_LIST = (1, 5, 10, 20)


def _node_at(node, path):
    """Walk a composed YAML node along a schema-error path; stop where the path ends."""
    for key in path:
        if isinstance(node, yaml.MappingNode):
            match = [v for k, v in node.value if k.value == str(key)]
            if not match:
                break
            node = match[0]
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            break
    return node


def _extra_key_node(node, allowed):
    if isinstance(node, yaml.MappingNode):
        for k, _ in node.value:
            if k.value not in allowed:
                return k
    return node


def parse_text(text: str, source: str = "<config>") -> dict:
    try:
        root = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: {getattr(exc, 'problem', None) or exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}:1: config must be a mapping")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        node = _node_at(root, err.absolute_path)
        if err.validator == "additionalProperties":
            node = _extra_key_node(node, err.schema.get("properties", {}))
        line = node.start_mark.line + 1 if node is not None else 1
        dotted = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{source}:{line}: {dotted}: {err.message}")
    return doc


def load(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_text(text, str(path))


@dataclass
class Resolved:
    """A parsed document together with the objects built from it."""

    doc: dict
    fed: FedConfig
    seed_source: str
    figures: bool
    h_list: tuple
    target_fraction: float


def build(doc: dict, env=None) -> Resolved:
    """Turn a validated document into a :class:`FedConfig`; semantic errors raise ConfigError."""
    env = os.environ if env is None else env
    doc = copy.deepcopy(doc)
    seed_source = "config"
    if env.get(SEED_ENV) not in (None, ""):
        try:
            doc["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer") from None
        if doc["seed"] < 0:
            raise ConfigError(f"{SEED_ENV} must be nonnegative")
        seed_source = f"env:{SEED_ENV}"
    run_seed = doc.get("seed", 0)
    d, gsec, model, train = doc["data"], doc["game"], doc["model"], doc["train"]
    try:
        spec = datagen.DataSpec(
            m=d["m"], t=d["t"], d=d["d"], full_size=d["full_size"],
            dirichlet_alpha=d.get("dirichlet_alpha", 1.0), noise_sigma=d.get("noise_sigma", 1.0),
            seed=d.get("seed", 0), client_keys=d.get("client_keys"),
        )
        if gsec.get("profile") is not None:
            profile = game_mod.ClassProfile(np.array(gsec["profile"], dtype=np.float64))
        else:
            profile = datagen.sample_profiles(spec)
        if gsec.get("theta") is not None:
            theta = np.broadcast_to(np.asarray(gsec["theta"], dtype=np.float64), (spec.m,)).copy()
        else:
            cost_seed = gsec.get("cost_seed")
            theta = datagen.sample_costs(profile, spec.seed if cost_seed is None else cost_seed)
        payoff_cls = game_mod.PAYOFF_MODELS[gsec["payoff"]]
        game = game_mod.ParticipationGame(
            payoff_cls(profile), theta, _vec(gsec["n_min"], spec.m), _vec(gsec["n_max"], spec.m), gsec["lambda_reg"]
        )
        fed = FedConfig(
            game=game, data=spec, gamma=train["gamma"], H=train["H"], R=train["R"],
            family=model["family"], hidden=model.get("hidden", 8),
            gamma_tilde=train.get("gamma_tilde"),
            n0=None if train.get("n0") is None else _vec(train["n0"], spec.m),
            x0_seed=train.get("x0_seed", 0), run_seed=run_seed,
            aggregate_with=train.get("aggregate_with", "next"),
            per_iter=doc.get("output", {}).get("per_iter_trace", False),
            workers=train.get("workers", 1),
            probe_samples=doc.get("probe", {}).get("samples", 256),
            probe_seed=doc.get("probe", {}).get("seed", 0),
            ne_tol=doc.get("oracle", {}).get("tol", 1e-10),
        )
        fed.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    doc["seed"] = run_seed
    doc["game"]["theta"] = theta.tolist()
    sweep = doc.get("sweep", {})
    return Resolved(
        doc=doc, fed=fed, seed_source=seed_source,
        figures=doc.get("output", {}).get("figures", True),
        h_list=tuple(sweep.get("h_list", DEFAULT_H_LIST)),
        target_fraction=sweep.get("target_fraction", 0.1),
    )


def _vec(value, m):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 1 and arr.shape != (m,):
        raise ValueError(f"expected a scalar or {m} values, got {arr.shape[0]}")
    return np.broadcast_to(arr, (m,)).copy()


def resolved_document(res: Resolved, trace) -> dict:
    """The input document with derived quantities filled in; re-running it reproduces the trace."""
    doc = copy.deepcopy(res.doc)
    doc["train"]["gamma_tilde"] = trace.gamma_tilde
    doc["derived"] = {
        "run_seed": res.fed.run_seed,
        "run_seed_source": res.seed_source,
        "gamma_tilde": trace.gamma_tilde,
        "gamma_tilde_source": "config" if res.fed.gamma_tilde is not None else "probe",
        "mu_hat": trace.mu_hat,
        "L_hat": trace.L_hat,
        "gamma_tilde_max": trace.mu_hat / trace.L_hat**2,
        "rho": trace.rho,
        "delta_0": trace.delta_0,
        "n_star": None if trace.n_star is None else trace.n_star.tolist(),
        "p_star": None if trace.p_star is None else trace.p_star.tolist(),
        "warnings": list(trace.warnings),
    }
    return doc

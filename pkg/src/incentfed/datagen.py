"""Synthetic non-iid client data.

Client class mixes are Dirichlet draws; features are class-conditional
Gaussians around signed unit vectors. All draws come from keyed streams, so a
client's data depends only on ``(seed, client key, q_i, full size)``.

On-disk layout (``save_datasets``/``load_datasets``): a JSON header and a flat
little-endian binary file. For each client in order the binary holds the
feature matrix in column-major float64 order, then the label vector as int64,
then (quadratic only) the target vector as float64. The header records the
byte offset and shape of every block.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from incentfed import rng
from incentfed.game import ClassProfile
from incentfed.losses import Mlp2, Quadratic, SoftmaxLinear

FAMILIES = ("quadratic", "softmax", "mlp")
FORMAT_VERSION = 1


@dataclass(frozen=True)
class DataSpec:
    m: int
    t: int
    d: int
    full_size: tuple
    dirichlet_alpha: float = 1.0
    noise_sigma: float = 1.0
    seed: int = 0
    client_keys: tuple | None = None

    def __post_init__(self):
        sizes = np.broadcast_to(np.asarray(self.full_size, dtype=np.int64), (self.m,))
        object.__setattr__(self, "full_size", tuple(int(s) for s in sizes))
        keys = tuple(range(self.m)) if self.client_keys is None else tuple(int(k) for k in self.client_keys)
        object.__setattr__(self, "client_keys", keys)
        if self.m < 1 or self.t < 2 or self.d < 1:
            raise ValueError("need m >= 1, t >= 2, d >= 1")
        if len(keys) != self.m:
            raise ValueError("need one client key per client")
        if min(self.full_size) < 1:
            raise ValueError("every client needs at least one sample")
        if not self.dirichlet_alpha > 0:
            raise ValueError("dirichlet_alpha must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


def sample_profiles(spec: DataSpec) -> ClassProfile:
    rows = []
    for key in spec.client_keys:
        row = rng.stream(spec.seed, "profiles", key).dirichlet(np.full(spec.t, spec.dirichlet_alpha))
        rows.append(row / row.sum())
    return ClassProfile(np.array(rows))


def sample_costs(profile: ClassProfile, seed: int) -> np.ndarray:
    """Cost coefficients ``theta_i ~ U[0, ||q_i||^2]``."""
    u = rng.stream(seed, "costs").random(profile.m)
    return u * profile.sq_norms()


def class_means(t: int, d: int, noise_sigma: float) -> np.ndarray:
    """Class ``c`` sits at ``+-scale * e_{c//2}``; axes wrap when ``t > 2d``."""
    scale = 3.0 * noise_sigma if noise_sigma > 0 else 1.0
    means = np.zeros((t, d))
    for c in range(t):
        means[c, (c // 2) % d] = scale if c % 2 == 0 else -scale
    return means


def make_client_data(spec: DataSpec, q_row, key: int, size: int):
    labels = rng.stream(spec.seed, "labels", key).choice(spec.t, size=size, p=q_row)
    noise = rng.stream(spec.seed, "features", key).standard_normal((size, spec.d))
    features = class_means(spec.t, spec.d, spec.noise_sigma)[labels] + spec.noise_sigma * noise
    return features, labels


def quadratic_targets(labels, t):
    """Centered class index, so heterogeneous label mixes pull optima apart."""
    return labels.astype(np.float64) - 0.5 * (t - 1)


def build_problem(family: str, features, labels, t: int, hidden: int = 8, targets=None):
    if family == "quadratic":
        A = np.hstack([features, np.ones((features.shape[0], 1))])
        return Quadratic(A, quadratic_targets(labels, t) if targets is None else targets)
    if family == "softmax":
        return SoftmaxLinear(features, labels, t)
    if family == "mlp":
        return Mlp2(features, labels, hidden, t)
    raise ValueError(f"unknown loss family {family!r}; expected one of {FAMILIES}")


def make_datasets(spec: DataSpec, profile: ClassProfile, family: str = "softmax", hidden: int = 8) -> list:
    if profile.m != spec.m or profile.t != spec.t:
        raise ValueError("class profile does not match the data spec")
    problems = []
    for i, key in enumerate(spec.client_keys):
        X, y = make_client_data(spec, profile.q[i], key, spec.full_size[i])
        problems.append(build_problem(family, X, y, spec.t, hidden))
    return problems


def save_datasets(path, spec: DataSpec, profile: ClassProfile, family: str = "softmax", hidden: int = 8):
    """Write ``<path>.json`` (header) and ``<path>.bin`` (payload)."""
    path = Path(path)
    blocks, offset = [], 0
    with open(path.with_suffix(".bin"), "wb") as fh:
        for i, key in enumerate(spec.client_keys):
            X, y = make_client_data(spec, profile.q[i], key, spec.full_size[i])
            entry = {"client_key": key, "rows": int(X.shape[0]), "cols": int(X.shape[1])}
            parts = [("features", np.asfortranarray(X, dtype="<f8")), ("labels", y.astype("<i8"))]
            if family == "quadratic":
                parts.append(("targets", quadratic_targets(y, spec.t).astype("<f8")))
            for name, arr in parts:
                raw = arr.tobytes(order="F")
                entry[name] = {"offset": offset, "nbytes": len(raw), "dtype": arr.dtype.str}
                fh.write(raw)
                offset += len(raw)
            blocks.append(entry)
    header = {
        "format_version": FORMAT_VERSION,
        "layout": "column-major little-endian",
        "family": family,
        "hidden": hidden,
        "spec": asdict(spec),
        "profile": profile.q.tolist(),
        "clients": blocks,
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=2))


def load_datasets(path):
    """Inverse of :func:`save_datasets`; returns ``(spec, profile, problems)``."""
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format {header.get('format_version')!r}")
    raw = path.with_suffix(".bin").read_bytes()
    s = header["spec"]
    spec = DataSpec(**{**s, "full_size": tuple(s["full_size"]), "client_keys": tuple(s["client_keys"])})
    problems = []
    for entry in header["clients"]:
        def block(name, shape):
            b = entry[name]
            arr = np.frombuffer(raw, dtype=b["dtype"], count=b["nbytes"] // np.dtype(b["dtype"]).itemsize,
                                offset=b["offset"])
            return arr.reshape(shape, order="F")
        X = block("features", (entry["rows"], entry["cols"])).astype(np.float64)
        y = block("labels", (entry["rows"],)).astype(np.int64)
        targets = block("targets", (entry["rows"],)).astype(np.float64) if "targets" in entry else None
        problems.append(build_problem(header["family"], X, y, spec.t, header["hidden"], targets))
    return spec, ClassProfile(np.array(header["profile"])), problems

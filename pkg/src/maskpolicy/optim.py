"""Named parameter collections, decoupled-weight-decay Adam, and the
binary checkpoint format (little-endian float64 blob + JSON sidecar).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import DTYPE, Tensor
from .errors import ConfigError

FORMAT_VERSION = 1


@dataclass
class ParameterSet:
    """Uniquely named trainable tensors plus optimizer state.

    A ParameterSet is owned by one training context at a time; frozen
    read-only use from several places is fine.
    """

    params: dict[str, Tensor] = field(default_factory=dict)
    step_count: int = 0
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=DTYPE), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return sorted(self.params)

    def num_params(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    def copy(self) -> "ParameterSet":
        ps = ParameterSet(step_count=self.step_count)
        for name, t in self.params.items():
            ps.params[name] = Tensor(t.data.copy(), requires_grad=True)
        ps.moments = {k: (m.copy(), v.copy()) for k, (m, v) in self.moments.items()}
        return ps

    def blob(self) -> bytes:
        """Parameters in sorted-name order as little-endian float64."""
        return b"".join(self.params[n].data.astype("<f8").tobytes() for n in self.names())

    def content_hash(self) -> str:
        return hashlib.sha256(self.blob()).hexdigest()


def init_normal(pset: ParameterSet, name: str, shape, rng: np.random.Generator, std: float = 0.02) -> Tensor:
    return pset.add(name, rng.normal(0.0, std, size=shape))


def init_zeros(pset: ParameterSet, name: str, shape) -> Tensor:
    return pset.add(name, np.zeros(shape))


def init_ones(pset: ParameterSet, name: str, shape) -> Tensor:
    return pset.add(name, np.ones(shape))


def adamw_step(pset: ParameterSet, lr: float, betas: tuple[float, float] = (0.9, 0.999),
               weight_decay: float = 0.0, eps: float = 1e-8) -> None:
    """One decoupled-weight-decay Adam update over all grads.

    Grads are left untouched; the caller zeroes them. Parameters with no
    grad this step still receive weight decay.
    """
    if lr <= 0.0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    b1, b2 = betas
    pset.step_count += 1
    t = pset.step_count
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name in pset.names():
        p = pset.params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in pset.moments:
            pset.moments[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
        m, v = pset.moments[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.data -= lr * (update + weight_decay * p.data)


# ---------------------------------------------------------------------------
# Checkpoint files
# ---------------------------------------------------------------------------

def save_params(pset: ParameterSet, path: str | Path, meta: dict | None = None) -> str:
    """Write <path>.bin (parameter blob) and <path>.json (sidecar); when
    optimizer moments exist they go to <path>.opt.bin so a resumed run
    continues the same Adam trajectory. Returns the parameter hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = pset.blob()
    sidecar = {
        "format_version": FORMAT_VERSION,
        "precision": "float64",
        "shapes": {n: list(pset.params[n].shape) for n in pset.names()},
        "step_count": pset.step_count,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "has_moments": bool(pset.moments),
        "meta": meta or {},
    }
    path.with_suffix(".bin").write_bytes(blob)
    if pset.moments:
        opt = b"".join(
            pset.moments[n][0].astype("<f8").tobytes() + pset.moments[n][1].astype("<f8").tobytes()
            for n in pset.names() if n in pset.moments)
        sidecar["moment_names"] = [n for n in pset.names() if n in pset.moments]
        path.with_suffix(".opt.bin").write_bytes(opt)
    path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True, indent=1))
    return sidecar["sha256"]


def load_params(path: str | Path) -> tuple[ParameterSet, dict]:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    if sidecar["format_version"] != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format {sidecar['format_version']}")
    blob = path.with_suffix(".bin").read_bytes()
    if hashlib.sha256(blob).hexdigest() != sidecar["sha256"]:
        raise ConfigError(f"checkpoint blob hash mismatch for {path}")
    pset = ParameterSet(step_count=sidecar.get("step_count", 0))
    offset = 0
    for name in sorted(sidecar["shapes"]):
        shape = tuple(sidecar["shapes"][name])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape)
        pset.add(name, arr.copy())
        offset += n * 8
    if sidecar.get("has_moments"):
        opt = path.with_suffix(".opt.bin").read_bytes()
        offset = 0
        for name in sidecar["moment_names"]:
            shape = tuple(sidecar["shapes"][name])
            n = int(np.prod(shape)) if shape else 1
            m = np.frombuffer(opt, dtype="<f8", count=n, offset=offset).reshape(shape).copy()
            offset += n * 8
            v = np.frombuffer(opt, dtype="<f8", count=n, offset=offset).reshape(shape).copy()
            offset += n * 8
            pset.moments[name] = (m, v)
    return pset, sidecar["meta"]

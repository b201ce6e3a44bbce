"""Parameter containers and the Adam optimizer shared by the tokenizer and the models."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np


class ParamSet:
    """Mixin for dataclasses whose fields are all float64 arrays."""

    names: ClassVar[tuple[str, ...]]

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.names}

    def copy(self):
        return dataclasses.replace(self, **{n: a.copy() for n, a in self.arrays().items()})

    def zeros_like(self):
        return dataclasses.replace(self, **{n: np.zeros_like(a) for n, a in self.arrays().items()})

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def unflatten(self, flat: np.ndarray):
        out, i = {}, 0
        for n, a in self.arrays().items():
            out[n] = np.asarray(flat[i:i + a.size], dtype=np.float64).reshape(a.shape).copy()
            i += a.size
        return dataclasses.replace(self, **out)

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays().values())))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())

    def digest(self) -> str:
        h = hashlib.sha256()
        for n, a in self.arrays().items():
            h.update(n.encode())
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]

    def add_(self, other) -> None:
        for n, a in self.arrays().items():
            a += getattr(other, n)

    def identical(self, other) -> bool:
        return all(np.array_equal(a, getattr(other, n)) for n, a in self.arrays().items())


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    # per-row step counts for lazily updated (sparse) matrices
    row_steps: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.step,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()},
                         {k: a.copy() for k, a in self.row_steps.items()})

    def to_doc(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "step": self.step, "m": self.m, "v": self.v,
                "row_steps": {k: a.astype(np.int64).tolist() for k, a in self.row_steps.items()}}

    @classmethod
    def from_doc(cls, doc: dict) -> "AdamState":
        return cls(float(doc["lr"]), float(doc["beta1"]), float(doc["beta2"]), float(doc["eps"]),
                   int(doc["step"]),
                   {k: np.array(a, dtype=np.float64) for k, a in doc["m"].items()},
                   {k: np.array(a, dtype=np.float64) for k, a in doc["v"].items()},
                   {k: np.array(a, dtype=np.int64) for k, a in doc.get("row_steps", {}).items()})


def adam_update_(params: ParamSet, grads: ParamSet, opt: AdamState,
                 sparse: tuple[str, ...] = ()) -> None:
    """In-place Adam step.

    Matrices named in ``sparse`` are updated lazily: only rows with a
    nonzero gradient move, each with its own bias-correction counter.
    """
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    for name, p in params.arrays().items():
        g = getattr(grads, name)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = opt.m.setdefault(name, np.zeros_like(p))
        v = opt.v.setdefault(name, np.zeros_like(p))
        if name in sparse:
            steps = opt.row_steps.setdefault(name, np.zeros(p.shape[0], dtype=np.int64))
            rows = np.flatnonzero(np.any(g != 0, axis=tuple(range(1, g.ndim))))
            if rows.size == 0:
                continue
            steps[rows] += 1
            t = steps[rows].reshape((-1,) + (1,) * (p.ndim - 1))
            m[rows] = b1 * m[rows] + (1 - b1) * g[rows]
            v[rows] = b2 * v[rows] + (1 - b2) * g[rows] ** 2
            mhat = m[rows] / (1 - b1 ** t)
            vhat = v[rows] / (1 - b2 ** t)
            p[rows] -= opt.lr * mhat / (np.sqrt(vhat) + opt.eps)
        else:
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** opt.step)
            vhat = v / (1 - b2 ** opt.step)
            p -= opt.lr * mhat / (np.sqrt(vhat) + opt.eps)


def apply_update(params: ParamSet, grads: ParamSet, opt: AdamState):
    """Functional Adam step: returns fresh (params, opt), inputs untouched."""
    new_params, new_opt = params.copy(), opt.copy()
    adam_update_(new_params, grads, new_opt)
    return new_params, new_opt

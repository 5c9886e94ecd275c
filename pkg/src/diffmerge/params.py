"""Named parameter collections and first-order optimizers.

A :class:`ParamSet` is an immutable-by-convention mapping from parameter
name (dotted string path, e.g. ``"block0.weight"``) to a float64 array.
Iteration order is always lexicographic, which makes flattening, task
vectors and checkpoints deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .autodiff import Array, as_tensor
from .errors import AlignmentError, ConfigurationError


class ParamSet:
    """Ordered map from parameter name to float64 array."""

    def __init__(self, entries: Mapping[str, Array]):
        self._entries: dict[str, Array] = {
            name: as_tensor(entries[name]) for name in sorted(entries)
        }

    def __getitem__(self, name: str) -> Array:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamSet):
            return NotImplemented
        return self.names() == other.names() and all(
            np.array_equal(self[n], other[n]) for n in self.names()
        )

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self) -> Iterator[tuple[str, Array]]:
        return iter(self._entries.items())

    @property
    def total_dim(self) -> int:
        return sum(v.size for v in self._entries.values())

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self._entries.items()})

    def flatten(self) -> Array:
        """Concatenate all entries (lexicographic order, row-major) into one vector."""
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._entries.values()])

    def unflatten(self, flat: Array) -> "ParamSet":
        """Inverse of :meth:`flatten`, using this set's names and shapes as schema."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.ndim != 1 or flat.size != self.total_dim:
            raise AlignmentError(
                f"unflatten: expected {self.total_dim} values, got shape {flat.shape}"
            )
        out, pos = {}, 0
        for name, v in self._entries.items():
            out[name] = flat[pos : pos + v.size].reshape(v.shape).copy()
            pos += v.size
        return ParamSet(out)

    def aligned_with(self, other: "ParamSet") -> bool:
        return self.names() == other.names() and all(
            self[n].shape == other[n].shape for n in self.names()
        )

    def __repr__(self) -> str:
        return f"ParamSet({len(self)} entries, total_dim={self.total_dim})"


def require_alignment(a: ParamSet, b: ParamSet, context: str) -> None:
    """Raise :class:`AlignmentError` naming the first offending parameter."""
    a_names, b_names = set(a.names()), set(b.names())
    for name in sorted(a_names - b_names):
        raise AlignmentError(f"{context}: {name!r} missing from second set")
    for name in sorted(b_names - a_names):
        raise AlignmentError(f"{context}: {name!r} missing from first set")
    for name in a.names():
        if a[name].shape != b[name].shape:
            raise AlignmentError(
                f"{context}: {name!r} shape mismatch {a[name].shape} vs {b[name].shape}"
            )


@dataclass
class OptimizerState:
    """SGD or Adam state; moments are keyed by parameter name."""

    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")

    @classmethod
    def sgd(cls, learning_rate: float) -> "OptimizerState":
        return cls(kind="sgd", learning_rate=learning_rate)

    @classmethod
    def adam(
        cls,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "OptimizerState":
        return cls(kind="adam", learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps)


def optimizer_step(state: OptimizerState, params: ParamSet, grads: ParamSet) -> ParamSet:
    """One optimizer update; returns the new parameters, mutating ``state``.

    ``grads`` must align with ``params`` by name and shape.  SGD applies
    ``p - lr * g``; Adam is the standard bias-corrected update.
    """
    require_alignment(params, grads, "optimizer_step")
    state.step_count += 1
    lr = state.learning_rate
    out = {}
    if state.kind == "sgd":
        for name, p in params.items():
            out[name] = p - lr * grads[name]
    else:
        t = state.step_count
        b1, b2 = state.beta1, state.beta2
        for name, p in params.items():
            g = grads[name]
            m = state.m.get(name)
            if m is None:
                m = np.zeros_like(p)
                v = np.zeros_like(p)
            else:
                v = state.v[name]
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            state.m[name] = m
            state.v[name] = v
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            out[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return ParamSet(out)

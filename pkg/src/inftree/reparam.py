"""Axis-aligned regions of the unit hypercube and truncated-proposal weights.

Every proposal is written as ``x = g(z)`` with ``z`` uniform on ``[0, 1]^T``.
A region of parameter space is then a box in ``z``; drawing uniformly in the
box and pushing through ``g`` samples the truncated proposal, and its density
is ``q(x) / volume``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPLIT_MARGIN = 1e-9


@dataclass(frozen=True, eq=False)
class HyperRect:
    """Box ``[lo, hi]`` inside the unit hypercube."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).copy()
        hi = np.asarray(self.hi, dtype=float).copy()
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size == 0:
            raise ValueError("lo and hi must be non-empty 1-D arrays of equal length")
        if np.any(lo < 0.0) or np.any(hi > 1.0) or np.any(lo >= hi):
            raise ValueError(f"invalid box lo={lo}, hi={hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "_log_vol", float(np.sum(np.log(hi - lo))))

    @classmethod
    def unit(cls, dim: int) -> "HyperRect":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def volume(self) -> float:
        return volume(self)

    def log_volume(self) -> float:
        return self._log_vol

    def contains(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.all((z >= self.lo) & (z <= self.hi), axis=-1)

    def __eq__(self, other):
        if not isinstance(other, HyperRect):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __hash__(self):
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    def __repr__(self):
        return f"HyperRect(lo={self.lo.tolist()}, hi={self.hi.tolist()})"

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "HyperRect":
        return cls(np.asarray(d["lo"]), np.asarray(d["hi"]))


def volume(rect: HyperRect) -> float:
    return float(np.prod(rect.widths))


def split_rect(rect: HyperRect, dim: int, point: float) -> tuple[HyperRect, HyperRect]:
    """Cut ``rect`` along ``dim`` at ``point``.

    Raises ``ValueError`` when the point is not strictly inside the interval
    (a guard margin keeps both children at positive volume).
    """
    lo, hi = rect.lo[dim], rect.hi[dim]
    margin = SPLIT_MARGIN * (hi - lo)
    if not (lo + margin < point < hi - margin):
        raise ValueError(f"split point {point} outside ({lo}, {hi}) on dim {dim}")
    left_hi = rect.hi.copy()
    left_hi[dim] = point
    right_lo = rect.lo.copy()
    right_lo[dim] = point
    return HyperRect(rect.lo, left_hi), HyperRect(right_lo, rect.hi)


def sample_in_rect(rect: HyperRect, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform draw(s) in ``rect``; shape ``(dim,)`` or ``(size, dim)``."""
    shape = (rect.dim,) if size is None else (size, rect.dim)
    u = rng.random(shape)
    z = rect.lo + u * rect.widths
    # rounding can push lo + u*w onto hi; keep draws inside the closed box
    return np.clip(z, rect.lo, rect.hi)


def truncated_log_weight(model, rect: HyperRect, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map ``z`` through the model and return ``(x, log w)``.

    ``log w = log gamma(x) - log q(x) + log volume(rect)``, which is the
    importance weight under the proposal truncated to ``rect``. Works on a
    single point or a batch of rows.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zz = np.atleast_2d(z)
    x = model.transform(zz)
    logw = np.asarray(model.log_weight(x), dtype=float) + rect.log_volume()
    if np.any(np.isnan(logw)) or np.any(logw == np.inf):
        raise FloatingPointError("non-finite density evaluation in log_weight")
    if single:
        return x[0], logw[0]
    return x, logw


def truncated_weight(model, rect: HyperRect, z: np.ndarray):
    """Linear-space version of :func:`truncated_log_weight`."""
    x, logw = truncated_log_weight(model, rect, z)
    return x, np.exp(logw)

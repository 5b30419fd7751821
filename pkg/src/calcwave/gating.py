"""Three-state RyR channel gating: (c1, o, c2) per interface node.

dq/dt = A(u) q + f(u), advanced by backward Euler with the calcium trace
frozen at the start of the step. Open probability is P = 1 - c1 - c2.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np

from . import kernels


class GatingError(RuntimeError):
    pass


@dataclass(frozen=True)
class RateConstants:
    ka_plus: float = 1500.0
    ka_minus: float = 28.8
    kb_plus: float = 1500.0
    kb_minus: float = 385.9
    kc_plus: float = 1.75
    kc_minus: float = 0.1

    def __post_init__(self):
        for name, v in zip(("ka_plus", "ka_minus", "kb_plus", "kb_minus", "kc_plus", "kc_minus"), astuple(self)):
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"rate {name} must be positive, got {v}")


KEIZER_LEVINE = RateConstants()


def gating_matrix(u: float, rates: RateConstants = KEIZER_LEVINE):
    """Return (A(u), f(u)) of the linear gating system."""
    if u < 0:
        raise ValueError(f"gating_matrix needs u >= 0 (clamp the trace first), got {u}")
    r = rates
    u3 = u**3
    u4 = u**4
    a = np.array(
        [
            [-u4 * r.ka_plus - r.ka_minus, -r.ka_minus, -r.ka_minus],
            [-u3 * r.kb_plus, -u3 * r.kb_plus - r.kb_minus, -u3 * r.kb_plus],
            [-r.kc_plus, -r.kc_plus, -r.kc_plus - r.kc_minus],
        ]
    )
    f = np.array([r.ka_minus, u3 * r.kb_plus, r.kc_plus])
    return a, f


class GatingField:
    """Per-node channel state, rows are (c1, o, c2)."""

    __slots__ = ("q",)

    def __init__(self, q):
        self.q = np.array(q, dtype=np.float64, order="C", copy=True).reshape(-1, 3)

    @classmethod
    def uniform(cls, n: int, c1: float, o: float, c2: float) -> "GatingField":
        if min(c1, o, c2) < 0 or c1 + o + c2 > 1 + 1e-12:
            raise ValueError(f"initial gating state ({c1}, {o}, {c2}) is outside the simplex")
        return cls(np.tile([c1, o, c2], (n, 1)))

    def __len__(self):
        return self.q.shape[0]

    def copy(self) -> "GatingField":
        return GatingField(self.q)

    @property
    def c1(self):
        return self.q[:, 0]

    @property
    def o(self):
        return self.q[:, 1]

    @property
    def c2(self):
        return self.q[:, 2]


def step_gating(state: GatingField, u_trace, dt: float, rates: RateConstants = KEIZER_LEVINE,
                inplace: bool = False) -> GatingField:
    """One backward-Euler step with the trace u clamped at zero.

    Solves (I - dt A(u)) q_new = q + dt f(u) per node.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    u = np.ascontiguousarray(u_trace, dtype=np.float64).reshape(-1)
    if u.shape[0] != len(state):
        raise ValueError(f"trace has {u.shape[0]} values for {len(state)} gating nodes")
    if not np.all(np.isfinite(u)):
        raise GatingError("non-finite calcium trace passed to the gating update")
    out = state if inplace else state.copy()
    min_det = kernels.gating_step(out.q, u, float(dt), rates.ka_plus, rates.ka_minus, rates.kb_plus,
                                  rates.kb_minus, rates.kc_plus, rates.kc_minus)
    if not min_det > 0:
        raise GatingError("singular backward-Euler gating system")
    # simplex check; the exact update stays in the simplex for u >= 0
    q = out.q
    if q.min() < -1e-12 or q.sum(axis=1).max() > 1 + 1e-10:
        raise GatingError(f"gating state left the simplex (min {q.min():.3e}, max sum {q.sum(axis=1).max():.12f})")
    np.clip(q, 0.0, 1.0, out=q)
    return out


def open_probability(state: GatingField) -> np.ndarray:
    """P = 1 - c1 - c2 per node, clamped to [0, 1]."""
    p = 1.0 - state.q[:, 0] - state.q[:, 2]
    excess = max(-p.min(initial=0.0), p.max(initial=0.0) - 1.0)
    if excess > 1e-10:
        raise GatingError(f"open probability outside [0, 1] by {excess:.3e}")
    return np.clip(p, 0.0, 1.0)

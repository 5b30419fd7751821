"""Pointwise membrane flux laws, the reaction term and stimulus pulses.

Sign conventions: ``flux_er`` returns g_e = J_S - J_R - J_le, the flux
D_e dn(u_e) seen from the ER; the cytosol side of the ER membrane receives
-g_e. ``flux_plasma`` returns g_c = J_lp - J_N - J_P (+ influx), the flux
D_c dn(u) on the plasma membrane.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields

import numpy as np

log = logging.getLogger(__name__)


class FluxError(ValueError):
    pass


@dataclass(frozen=True)
class FluxParams:
    # ER membrane: RyR, SERCA, leak
    c1e: float
    c2e: float
    c3e: float
    # plasma membrane: PMCA, NCX, leak
    c1c: float
    c2c: float
    c3c: float
    ks: float
    kp: float
    kn: float
    c_o: float
    m: float = 1e-3
    # buffer reaction; kb_minus = kb_plus = 0 switches it off
    kb_minus: float = 0.0
    kb_plus: float = 0.0
    b0: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"flux parameter {f.name} must be finite, got {v}")
            if f.name in ("kb_minus", "kb_plus", "b0"):
                if v < 0:
                    raise ValueError(f"reaction constant {f.name} must be non-negative, got {v}")
            elif not v > 0:
                raise ValueError(f"flux parameter {f.name} must be positive, got {v}")

    @property
    def has_reaction(self) -> bool:
        return self.kb_minus > 0 or self.kb_plus > 0


@dataclass(frozen=True)
class ClampSpec:
    a: float = 1e-3
    M: float = 1e4
    enabled: bool = False

    def __post_init__(self):
        if not (self.a > 0 and self.M > 0):
            raise ValueError(f"clamp needs a > 0 and M > 0, got a={self.a}, M={self.M}")


def phi_m(x, m: float):
    """Regularized floor for the SERCA denominator; always >= m/2."""
    x = np.asarray(x, dtype=float)
    xm = np.clip(x, 0.0, m)
    mid = m**6 / (2 * m**5 - 5 * m**2 * xm**3 + 6 * m * xm**4 - 2 * xm**5)
    out = np.where(x <= 0, 0.5 * m, np.where(x >= m, x, mid))
    return out if out.ndim else float(out)


def phi_clamp(x, spec: ClampSpec):
    """C1 quintic blend: identity on [0, M], saturating at -a and M + a."""
    a, M = spec.a, spec.M
    x = np.asarray(x, dtype=float)
    lo = np.clip(x, -a, 0.0)
    hi = np.clip(x - M, 0.0, a)
    below = 3 * lo**5 / a**4 + 7 * lo**4 / a**3 + 4 * lo**3 / a**2 + lo
    above = 3 * hi**5 / a**4 - 7 * hi**4 / a**3 + 4 * hi**3 / a**2 + hi + M
    out = np.select(
        [x <= -a, x < 0, x <= M, x <= M + a],
        [-a, below, x, above],
        default=M + a,
    )
    return out if out.ndim else float(out)


def _clamped(x, clamp: ClampSpec | None):
    return phi_clamp(x, clamp) if clamp is not None and clamp.enabled else x


def _check(value, what):
    v = np.asarray(value)
    if not np.all(np.isfinite(v)):
        bad = np.flatnonzero(~np.isfinite(v))
        raise FluxError(f"non-finite {what} at point {int(bad[0])}")
    return value


def flux_er_parts(u, ue, p, params: FluxParams, clamp: ClampSpec | None = None):
    """Return (J_R, J_S, J_le) on the ER membrane."""
    u = _clamped(np.asarray(u, dtype=float), clamp)
    ue = _clamped(np.asarray(ue, dtype=float), clamp)
    j_r = params.c1e * p * (ue - u)
    j_s = params.c2e * u / ((params.ks + u) * phi_m(ue, params.m))
    j_le = params.c3e * (ue - u)
    return j_r, j_s, j_le


def flux_er(u, ue, p, params: FluxParams, clamp: ClampSpec | None = None):
    """g_e = J_S - J_R - J_le."""
    j_r, j_s, j_le = flux_er_parts(u, ue, p, params, clamp)
    return _check(j_s - j_r - j_le, "ER membrane flux")


def flux_plasma(u, t, x, y, params: FluxParams, influx=None, clamp: ClampSpec | None = None):
    """g_c = J_lp - J_N - J_P, plus the stimulus where it is active."""
    u = _clamped(np.asarray(u, dtype=float), clamp)
    j_p = params.c1c * u * u / (params.kp**2 + u * u)
    j_n = params.c2c * u / (params.kn + u)
    j_lp = params.c3c * (params.c_o - u)
    g = j_lp - j_n - j_p
    if influx is not None:
        g = g + influx(x, y, t)
    return _check(g, "plasma membrane flux")


def reaction(b, u, params: FluxParams):
    """f(b, u) = Kb-(b0 - b) - Kb+ b u."""
    return params.kb_minus * (params.b0 - b) - params.kb_plus * b * u


@dataclass(frozen=True)
class NoInflux:
    kind = "none"

    def active(self, t: float) -> bool:
        return False

    def __call__(self, x, y, t):
        return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class RectPulse:
    """Constant influx on t_start <= t <= t_end where y - x >= offset."""

    amplitude: float
    t_start: float
    t_end: float
    offset: float = 2.5
    kind = "rect"

    def active(self, t: float) -> bool:
        return self.t_start <= t <= self.t_end

    def __call__(self, x, y, t):
        x = np.asarray(x, dtype=float)
        if not self.active(t):
            return np.zeros_like(x)
        return np.where(np.asarray(y) - x >= self.offset, self.amplitude, 0.0)


@dataclass(frozen=True)
class BumpPulse:
    """amplitude * exp(1 - w / (w - (t - center)^2)) on |t - center| < sqrt(w)."""

    amplitude: float
    center: float
    width2: float
    offset: float = 2.5
    kind = "bump"

    def active(self, t: float) -> bool:
        return (t - self.center) ** 2 < self.width2

    def value(self, t: float) -> float:
        if not self.active(t):
            return 0.0
        return self.amplitude * math.exp(1.0 - self.width2 / (self.width2 - (t - self.center) ** 2))

    def __call__(self, x, y, t):
        x = np.asarray(x, dtype=float)
        v = self.value(t)
        if v == 0.0:
            return np.zeros_like(x)
        return np.where(np.asarray(y) - x >= self.offset, v, 0.0)


def warn_if_below_floor(ue, m: float, where: str = "") -> bool:
    """Log once per call when the ER trace dips under the phi_m floor."""
    low = np.asarray(ue) < m
    if low.any():
        log.warning("ER calcium below phi_m floor m=%g at %d interface points%s", m, int(low.sum()), where)
        return True
    return False

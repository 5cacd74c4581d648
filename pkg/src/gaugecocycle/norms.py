"""L^p, Lorentz and equiintegrability diagnostics for fields on weighted grids."""

from __future__ import annotations

import numpy as np

from .errors import BadExponent, EmptySequence
from .forms import FormField


def _values_and_weights(f, weights=None):
    if isinstance(f, FormField):
        vals = f.pointwise_norm()
        w = f.chart.weights if weights is None else weights
    else:
        vals = np.abs(np.asarray(f))
        if weights is None:
            raise ValueError("scalar fields need explicit quadrature weights")
        w = weights
    w = np.broadcast_to(w, vals.shape)
    return vals.ravel(), w.ravel()


def lp_norm(f, p: float, weights=None) -> float:
    """Weighted L^p norm of pointwise (algebra) norms; p = inf gives the max."""
    if not (p == np.inf or p >= 1):
        raise BadExponent(f"p = {p} is not in [1, inf]")
    v, w = _values_and_weights(f, weights)
    if p == np.inf:
        return float(np.max(v, initial=0.0))
    return float(np.sum(w * v**p) ** (1.0 / p))


def lorentz_quasinorm(f, s: float, theta: float, weights=None) -> float:
    """Lorentz quasinorm from the distribution function,

        ||f||^theta = int_0^inf t^(theta-1) mu_f(t)^(theta/s) dt,

    evaluated exactly on the step distribution of the grid values.
    """
    if not 1 < s < np.inf:
        raise BadExponent(f"s = {s} is not in (1, inf)")
    if not 1 <= theta < np.inf:
        raise BadExponent(f"theta = {theta} is not in [1, inf)")
    v, w = _values_and_weights(f, weights)
    order = np.argsort(-v, kind="stable")
    v, w = v[order], w[order]
    mass = np.cumsum(w)  # mu_f(t) = mass[k] for v[k+1] <= t < v[k]
    nxt = np.append(v[1:], 0.0)
    total = np.sum(mass ** (theta / s) * (v**theta - nxt**theta)) / theta
    return float(total ** (1.0 / theta))


def equiintegrability_profile(seq, fractions, weights=None) -> list[tuple[float, float]]:
    """Largest mass of |f_nu| over sets of volume <= delta * total, sup over nu.

    Cells enter in decreasing order of value; the last one counts
    fractionally, which makes the profile exact for uniform cells and
    concave in delta.
    """
    seq = list(seq)
    if not seq:
        raise EmptySequence("empty field sequence")
    best = np.zeros(len(fractions))
    for f in seq:
        v, w = _values_and_weights(f, weights)
        order = np.argsort(-v, kind="stable")
        v, w = v[order], w[order]
        vol = np.concatenate([[0.0], np.cumsum(w)])
        mass = np.concatenate([[0.0], np.cumsum(v * w)])
        prof = np.interp(np.asarray(fractions) * vol[-1], vol, mass)
        best = np.maximum(best, prof)
    return [(float(d), float(m)) for d, m in zip(fractions, best)]

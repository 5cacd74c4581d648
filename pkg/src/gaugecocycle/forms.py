"""Algebra-valued differential forms on chart grids and their discrete calculus.

Forms are stored collocated: a k-form carries one algebra value per grid
point for every increasing multi-index of length k.  Derivatives are central
differences with second-order one-sided stencils wherever a neighbour is
missing (non-periodic chart edges or the edge of a mask).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .errors import ChartMismatch, DegreeOverflow, DegreeUnderflow, GroupMismatch
from .grid import Chart
from .lie import Group, dagger, log_map


@lru_cache(maxsize=None)
def multi_indices(n: int, k: int) -> tuple[tuple[int, ...], ...]:
    return tuple(combinations(range(n), k))


@dataclass(frozen=True, eq=False)
class FormField:
    chart: Chart
    degree: int
    group: Group
    comps: np.ndarray  # (C(n,k), *chart.shape, N, N)

    def __post_init__(self):
        n = self.chart.ndim
        expected = (len(multi_indices(n, self.degree)),) + self.chart.shape + (self.group.n, self.group.n)
        if self.comps.shape != expected:
            raise GroupMismatch(f"form components have shape {self.comps.shape}, expected {expected}")

    @property
    def chart_id(self) -> int:
        return self.chart.chart_id

    @property
    def index(self) -> tuple[tuple[int, ...], ...]:
        return multi_indices(self.chart.ndim, self.degree)

    def component(self, *idx: int) -> np.ndarray:
        """Component for an arbitrary multi-index, with the alternating sign."""
        if len(set(idx)) < len(idx):
            return np.zeros(self.comps.shape[1:], dtype=complex)
        order = np.argsort(idx)
        sign = _perm_sign(order)
        return sign * self.comps[self.index.index(tuple(sorted(idx)))]

    def __add__(self, other: "FormField") -> "FormField":
        _same(self, other)
        return self.like(self.comps + other.comps)

    def __sub__(self, other: "FormField") -> "FormField":
        _same(self, other)
        return self.like(self.comps - other.comps)

    def __mul__(self, c) -> "FormField":
        c = np.asarray(c)
        if c.ndim:  # scalar field on the chart
            c = c[None, ..., None, None]
        return self.like(self.comps * c)

    __rmul__ = __mul__

    def like(self, comps: np.ndarray) -> "FormField":
        return FormField(self.chart, self.degree, self.group, comps)

    def pointwise_norm(self) -> np.ndarray:
        """Metric norm of the form at every grid point."""
        n2 = np.zeros(self.chart.shape)
        for J, c in zip(self.index, self.comps):
            gj = np.prod([self.chart.inv_metric[m] for m in J], axis=0) if J else 1.0
            n2 = n2 + gj * np.sum(np.abs(c) ** 2, axis=(-2, -1)) / self.group.n
        return np.sqrt(n2)


def _perm_sign(order) -> int:
    order = list(order)
    sign = 1
    for i in range(len(order)):
        while order[i] != i:
            j = order[i]
            order[i], order[j] = order[j], order[i]
            sign = -sign
    return sign


def _same(a: FormField, b: FormField) -> None:
    if a.chart is not b.chart:
        raise ChartMismatch("forms live on different charts")
    if a.group is not b.group:
        raise GroupMismatch("forms take values in different groups")
    if a.degree != b.degree:
        raise ValueError("degree mismatch")


def zero_form(chart: Chart, group: Group, degree: int) -> FormField:
    k = len(multi_indices(chart.ndim, degree))
    return FormField(chart, degree, group, np.zeros((k,) + chart.shape + (group.n, group.n), dtype=complex))


def from_components(chart: Chart, group: Group, comps, degree: int = 1) -> FormField:
    comps = np.asarray(comps, dtype=complex)
    return FormField(chart, degree, group, comps)


# --- shifts and stencils ---------------------------------------------------------------


def _shift(a: np.ndarray, axis: int, s: int, periodic: bool):
    """Return (b, ok) with b[x] = a[x + s e_axis] and ok marking in-range points."""
    n = a.shape[axis]
    if periodic:
        return np.roll(a, -s, axis=axis), np.ones(n, dtype=bool)
    b = np.roll(a, -s, axis=axis)
    idx = np.arange(n) + s
    return b, (idx >= 0) & (idx < n)


def _bcast(ok: np.ndarray, axis: int, ndim: int) -> np.ndarray:
    sh = [1] * ndim
    sh[axis] = -1
    return ok.reshape(sh)


def _stencil_masks(chart: Chart, axis: int, mask: np.ndarray | None):
    """Boolean selectors for central / forward / backward / first-order stencils."""
    nd = chart.ndim
    per = chart.periodic[axis]
    valid = np.ones(chart.shape, dtype=bool) if mask is None else mask
    out = {}
    for s in (-2, -1, 1, 2):
        v, ok = _shift(valid, axis, s, per)
        out[s] = v & _bcast(ok, axis, nd)
    central = valid & out[1] & out[-1]
    fwd = valid & ~central & out[1] & out[2]
    bwd = valid & ~central & ~fwd & out[-1] & out[-2]
    fwd1 = valid & ~central & ~fwd & ~bwd & out[1]
    bwd1 = valid & ~central & ~fwd & ~bwd & ~fwd1 & out[-1]
    return central, fwd, bwd, fwd1, bwd1, {s: valid & v for s, v in out.items()}


def _expand(sel: np.ndarray, extra: int) -> np.ndarray:
    return sel.reshape(sel.shape + (1,) * extra)


def partial(f: np.ndarray, chart: Chart, axis: int, mask: np.ndarray | None = None) -> np.ndarray:
    """Second-order derivative of a (possibly matrix-valued) field along ``axis``.

    Points outside ``mask`` get 0; stencils never read outside the mask.
    """
    nd = chart.ndim
    extra = f.ndim - nd
    h = chart.spacing[axis]
    per = chart.periodic[axis]
    central, fwd, bwd, fwd1, bwd1, _ = _stencil_masks(chart, axis, mask)
    fp, _ = _shift(f, axis, 1, per)
    fm, _ = _shift(f, axis, -1, per)
    fpp, _ = _shift(f, axis, 2, per)
    fmm, _ = _shift(f, axis, -2, per)
    out = np.zeros_like(f, dtype=np.result_type(f, float))
    e = lambda s: _expand(s, extra)  # noqa: E731
    out = np.where(e(central), (fp - fm) / (2 * h), out)
    out = np.where(e(fwd), (-3 * f + 4 * fp - fpp) / (2 * h), out)
    out = np.where(e(bwd), (3 * f - 4 * fm + fmm) / (2 * h), out)
    out = np.where(e(fwd1), (fp - f) / h, out)
    out = np.where(e(bwd1), (f - fm) / h, out)
    return out


@lru_cache(maxsize=None)
def _diff_matrix(n: int, h: float, periodic: bool) -> np.ndarray:
    """The 1D stencil of ``partial`` as a dense matrix (built from basis vectors)."""
    probe = Chart(0, (0,), (n,), (h,), (periodic,), margin=0)
    return partial(np.eye(n), probe, 0)


def partial_adjoint(f: np.ndarray, chart: Chart, axis: int) -> np.ndarray:
    """Plain transpose of ``partial`` (no mask) along ``axis``."""
    D = _diff_matrix(chart.shape[axis], chart.spacing[axis], chart.periodic[axis])
    moved = np.moveaxis(f, axis, 0)
    out = np.tensordot(D.T, moved, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def log_derivative(group: Group, g: np.ndarray, chart: Chart, axis: int, mask: np.ndarray | None = None):
    """Algebra-valued ``g^{-1} d_axis g`` from group-level differences.

    Uses logs of neighbour ratios, so the result lies exactly in the algebra
    and is exact for one-parameter subgroups sampled on the grid.
    """
    h = chart.spacing[axis]
    central, fwd, bwd, fwd1, bwd1, _ = _stencil_masks(chart, axis, mask)
    if group.n == 1:
        return _u1_log_derivative(g, chart, axis, h, (central, fwd, bwd, fwd1, bwd1))
    n = chart.shape[axis]
    stride = int(np.prod(chart.shape[axis + 1:]))
    N = group.n
    gf = g.reshape(-1, N, N)

    def rel_log(idx, s):
        # log(g[x]^{-1} g[x + s e_axis]) at flat indices idx; only read where the stencil needs it
        t = (idx // stride) % n
        nb = idx + (((t + s) % n) - t) * stride
        if N == 1:  # u(1) fast path: log is i * angle
            z = gf[:, 0, 0]
            return (1j * np.angle(np.conj(z[idx]) * z[nb]))[:, None, None]
        return log_map(group, dagger(gf[idx]) @ gf[nb], radius=np.pi)

    out = np.zeros(gf.shape, dtype=complex)
    for sel, rule in ((central, lambda i: (rel_log(i, 1) - rel_log(i, -1)) / (2 * h)),
                      (fwd, lambda i: (4 * rel_log(i, 1) - rel_log(i, 2)) / (2 * h)),
                      (bwd, lambda i: (-4 * rel_log(i, -1) + rel_log(i, -2)) / (2 * h)),
                      (fwd1, lambda i: rel_log(i, 1) / h),
                      (bwd1, lambda i: -rel_log(i, -1) / h)):
        idx = np.flatnonzero(sel)
        if idx.size:
            out[idx] = rule(idx)
    return out.reshape(g.shape)


def _u1_log_derivative(g, chart, axis, h, masks):
    """Whole-array version of ``log_derivative`` for U(1): logs are phase differences."""
    central, fwd, bwd, fwd1, bwd1 = masks
    z = g[..., 0, 0]
    zc = np.conj(z)
    per = chart.periodic[axis]

    def rl(s):
        zs, _ = _shift(z, axis, s, per)
        return np.angle(zc * zs)

    out = np.zeros(z.shape)
    r1, rm1 = rl(1), rl(-1)
    out = np.where(central, (r1 - rm1) / (2 * h), out)
    if fwd.any():
        out = np.where(fwd, (4 * r1 - rl(2)) / (2 * h), out)
    if bwd.any():
        out = np.where(bwd, (-4 * rm1 + rl(-2)) / (2 * h), out)
    out = np.where(fwd1, r1 / h, out)
    out = np.where(bwd1, -rm1 / h, out)
    return (1j * out)[..., None, None]


def maurer_cartan(group: Group, g: np.ndarray, chart: Chart, mask: np.ndarray | None = None) -> FormField:
    """The 1-form g^{-1} dg."""
    comps = np.stack([log_derivative(group, g, chart, a, mask) for a in range(chart.ndim)])
    return FormField(chart, 1, group, comps)


# --- exterior calculus -----------------------------------------------------------------


def exterior_derivative(w: FormField, mask: np.ndarray | None = None) -> FormField:
    n, k = w.chart.ndim, w.degree
    if k >= n:
        raise DegreeOverflow(f"d of a {k}-form in dimension {n}")
    out = []
    for K in multi_indices(n, k + 1):
        acc = 0
        for p, mu in enumerate(K):
            rest = K[:p] + K[p + 1:]
            acc = acc + (-1) ** p * partial(w.comps[w.index.index(rest)], w.chart, mu, mask)
        out.append(acc)
    return FormField(w.chart, k + 1, w.group, np.stack(out).astype(complex))


def _metric_factor(chart: Chart, J) -> np.ndarray | float:
    if not J:
        return 1.0
    return np.prod([chart.inv_metric[m] for m in J], axis=0)


def codifferential(w: FormField) -> FormField:
    """Exact adjoint of ``exterior_derivative`` for the weighted metric inner product."""
    n, k = w.chart.ndim, w.degree
    if k < 1:
        raise DegreeUnderflow("codifferential of a 0-form")
    c = w.chart
    out = []
    for J in multi_indices(n, k - 1):
        acc = np.zeros(c.shape + (w.group.n, w.group.n), dtype=complex)
        for mu in range(n):
            if mu in J:
                continue
            K = tuple(sorted(J + (mu,)))
            p = K.index(mu)
            scale = (c.weights * _metric_factor(c, K))[..., None, None]
            acc = acc + (-1) ** p * partial_adjoint(scale * w.comps[w.index.index(K)], c, mu)
        acc = acc / (c.weights * _metric_factor(c, J))[..., None, None]
        out.append(acc)
    return FormField(c, k - 1, w.group, np.stack(out))


def inner(a: FormField, b: FormField) -> float:
    """Weighted L2 inner product Re <a, b> with the chart metric."""
    _same(a, b)
    c = a.chart
    tot = 0.0
    for J, x, y in zip(a.index, a.comps, b.comps):
        pw = np.real(np.sum(np.conj(x) * y, axis=(-2, -1))) / a.group.n
        tot += float(np.sum(c.weights * _metric_factor(c, J) * pw))
    return tot


def wedge_bracket(a: FormField, b: FormField) -> FormField:
    """(a ^ b)_{mu nu} = a_mu b_nu - a_nu b_mu with matrix products."""
    if a.chart is not b.chart:
        raise ChartMismatch("wedge of forms on different charts")
    if a.group is not b.group:
        raise GroupMismatch("wedge of forms in different groups")
    if a.degree != 1 or b.degree != 1:
        raise ValueError("wedge_bracket takes two 1-forms")
    comps = [a.comps[m] @ b.comps[v] - a.comps[v] @ b.comps[m] for m, v in multi_indices(a.chart.ndim, 2)]
    return FormField(a.chart, 2, a.group, np.stack(comps))


def graded_bracket(a: FormField, b: FormField) -> FormField:
    """[a ^ b] = a ^ b + b ^ a; for a = b this is twice a ^ a."""
    return wedge_bracket(a, b) + wedge_bracket(b, a)


def integrate_top(w: FormField) -> np.ndarray:
    """Coordinate integral of a top-degree form (matrix-valued)."""
    if w.degree != w.chart.ndim:
        raise ValueError("only top-degree forms integrate")
    return np.sum(w.comps[0], axis=tuple(range(w.chart.ndim))) * w.chart.param_cell


def gradient_sup(f: np.ndarray, chart: Chart) -> float:
    """max_x |grad f| for a real scalar field, using the chart metric."""
    g2 = sum(chart.inv_metric[a] * partial(f, chart, a) ** 2 for a in range(chart.ndim))
    return float(np.sqrt(np.max(g2)))

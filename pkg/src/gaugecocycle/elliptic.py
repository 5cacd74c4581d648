"""Critical drift equation  Lap(alpha) = A . grad(alpha) + F  on box domains.

``alpha`` is vector valued with trailing axis of length N and ``A`` is a
matrix-valued 1-form with components ``A[mu]`` of shape (*grid, N, N).  The
Laplacian is the compact (2n+1)-point stencil with zero Dirichlet data;
``A . grad`` uses collocated central differences.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, eigsh, splu, spsolve

from .errors import ContractionFailure, MarginExhausted, NonConvergence
from .forms import _diff_matrix, partial
from .grid import Chart, box_chart, smoothstep
from .norms import lorentz_quasinorm, lp_norm


@dataclass(frozen=True, eq=False)
class DriftProblem:
    chart: Chart
    A: np.ndarray  # (n, *shape, N, N)
    F: np.ndarray  # (*shape, N)

    def __post_init__(self):
        c = self.chart
        if self.A.shape[:c.ndim + 1] != (c.ndim,) + c.shape:
            raise ValueError("drift has the wrong shape")
        if self.F.shape[:c.ndim] != c.shape:
            raise ValueError("source has the wrong shape")

    @property
    def N(self) -> int:
        return self.F.shape[-1]

    @property
    def a_norm(self) -> float:
        return drift_norm(self.A, self.chart)


@dataclass
class SolverReport:
    iterations: int
    contraction_factor: float
    residual_l2: float
    residual_lorentz: float
    lorentz_exponents: tuple
    distances: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def drift_norm(A: np.ndarray, chart: Chart) -> float:
    """||A||_{L^n} of the pointwise Frobenius norm over components and matrix entries."""
    pw = np.sqrt(np.sum(np.abs(A) ** 2, axis=(0, -2, -1)))
    return lp_norm(pw, chart.ndim, chart.weights)


def interior_mask(chart: Chart) -> np.ndarray:
    return ~chart.boundary_mask(include_natural=True)


@lru_cache(maxsize=32)
def _laplacian(shape: tuple, spacing: tuple) -> sp.csr_matrix:
    """Dirichlet Laplacian on the interior points (analyst sign, negative definite)."""
    inner = [n - 2 for n in shape]
    mats = []
    for a, (m, h) in enumerate(zip(inner, spacing)):
        d2 = sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) / h**2
        ops = [sp.identity(k, format="csr") for k in inner]
        ops[a] = d2
        term = ops[0]
        for o in ops[1:]:
            term = sp.kron(term, o, format="csr")
        mats.append(term)
    return sum(mats).tocsr()


def laplacian(v: np.ndarray, chart: Chart) -> np.ndarray:
    """Compact-stencil Laplacian of a field vanishing on the boundary (zero on the boundary)."""
    out = np.zeros_like(v)
    inner = tuple(slice(1, -1) for _ in chart.shape)
    for a, h in enumerate(chart.spacing):
        up = [slice(1, -1)] * chart.ndim
        dn = [slice(1, -1)] * chart.ndim
        up[a] = slice(2, None)
        dn[a] = slice(None, -2)
        out[inner] += (v[tuple(up)] - 2 * v[inner] + v[tuple(dn)]) / h**2
    return out


def gradient(v: np.ndarray, chart: Chart) -> np.ndarray:
    return np.stack([partial(v, chart, a) for a in range(chart.ndim)])


def drift_term(A: np.ndarray, v: np.ndarray, chart: Chart) -> np.ndarray:
    """(A . grad v)(x) = sum_mu A_mu(x) d_mu v(x)."""
    return np.einsum("m...ij,m...j->...i", A, gradient(v, chart))


def dirichlet_distance(v: np.ndarray, w: np.ndarray, chart: Chart) -> float:
    """Discrete W^{1,2}_0 norm of v - w: forward differences over every grid edge.

    This is the energy norm of the compact Laplacian, ``sqrt(<-Lap u, u>)``,
    so it has no spurious null modes on the interior.
    """
    u = v - w
    vol = float(np.prod(chart.spacing))
    total = 0.0
    for a, h in enumerate(chart.spacing):
        total += float(np.sum(np.abs(np.diff(u, axis=a)) ** 2)) / h**2
    return float(np.sqrt(total * vol))


def poisson_dirichlet(g: np.ndarray, chart: Chart, rtol: float = 1e-12) -> np.ndarray:
    """Solve Lap(u) = g in the interior, u = 0 on the boundary, by preconditioned CG."""
    L = _laplacian(chart.shape, chart.spacing)
    inner = tuple(slice(1, -1) for _ in chart.shape)
    rhs = g[inner].reshape(L.shape[0], -1)
    K = -L  # symmetric positive definite
    M = sp.diags(1.0 / K.diagonal())
    out = np.zeros(g.shape, dtype=g.dtype)
    cols = []
    for k in range(rhs.shape[1]):
        col = rhs[:, k]
        parts = [col.real, col.imag] if np.iscomplexobj(col) else [col]
        sol = []
        for b in parts:
            if not np.any(b):
                sol.append(np.zeros_like(b))
                continue
            x, info = cg(K, -b, rtol=rtol, atol=0.0, M=M, maxiter=20 * K.shape[0])
            if info != 0:
                raise NonConvergence(f"Poisson CG did not converge (info={info})")
            sol.append(x)
        cols.append(sol[0] + 1j * sol[1] if len(sol) == 2 else sol[0])
    out[inner] = np.stack(cols, axis=-1).reshape(g[inner].shape)
    return out


def apply_T(p: DriftProblem, v: np.ndarray) -> np.ndarray:
    return poisson_dirichlet(drift_term(p.A, v, p.chart) + p.F, p.chart)


def residual(p: DriftProblem, alpha: np.ndarray) -> np.ndarray:
    r = laplacian(alpha, p.chart) - drift_term(p.A, alpha, p.chart) - p.F
    return np.where(interior_mask(p.chart)[..., None], r, 0)


def solve_drift_dirichlet(p: DriftProblem, tol: float = 1e-10, max_iter: int = 200,
                          initial: np.ndarray | None = None, lorentz=(2.0, 1.0)):
    """Fixed-point iteration v <- Lap^{-1}(A . grad v + F) with zero boundary values."""
    v = np.zeros(p.F.shape, dtype=np.result_type(p.A, p.F, float)) if initial is None else initial.copy()
    dists = []
    stalls = 0
    for it in range(1, max_iter + 1):
        nxt = apply_T(p, v)
        d = dirichlet_distance(nxt, v, p.chart)
        v = nxt
        if dists and d >= dists[-1]:
            stalls += 1
            if stalls >= 5:
                raise ContractionFailure(f"iterate distance stopped decreasing ({d:.3g} after {it} steps)")
        else:
            stalls = 0
        dists.append(d)
        if d <= tol:
            break
    else:
        raise NonConvergence(f"no convergence in {max_iter} iterations (last distance {dists[-1]:.3g})")
    ratios = [b / a for a, b in zip(dists[:-1], dists[1:]) if a > 0 and b > 0]
    factor = float(np.exp(np.mean(np.log(ratios)))) if ratios else 0.0
    r = residual(p, v)
    rn = np.sqrt(np.sum(np.abs(r) ** 2, axis=-1))
    report = SolverReport(
        iterations=it,
        contraction_factor=factor,
        residual_l2=lp_norm(rn, 2, p.chart.weights),
        residual_lorentz=lorentz_quasinorm(rn, lorentz[0], lorentz[1], p.chart.weights),
        lorentz_exponents=tuple(lorentz),
        distances=[float(x) for x in dists],
    )
    return v, report


def _drift_matrix(p: DriftProblem) -> sp.csr_matrix:
    """Sparse matrix of v -> A . grad v on interior unknowns ordered (point, component)."""
    c, N = p.chart, p.N
    inner = tuple(slice(1, -1) for _ in c.shape)
    full_ix = np.arange(c.size).reshape(c.shape)[inner].reshape(-1)
    m = full_ix.size
    total = None
    for mu in range(c.ndim):
        ops = [sp.identity(n, format="csr") for n in c.shape]
        ops[mu] = sp.csr_matrix(_diff_matrix(c.shape[mu], c.spacing[mu], False))
        D = ops[0]
        for o in ops[1:]:
            D = sp.kron(D, o, format="csr")
        D = D[full_ix][:, full_ix]
        blocks = sp.bsr_matrix((p.A[mu][inner].reshape(m, N, N), np.arange(m), np.arange(m + 1)),
                               shape=(m * N, m * N))
        term = blocks @ sp.kron(D, sp.identity(N), format="csr")
        total = term if total is None else total + term
    return total.tocsr()


def direct_drift_solve(p: DriftProblem) -> np.ndarray:
    """Monolithic sparse solve of (Lap - A . grad) alpha = F (test oracle)."""
    c, N = p.chart, p.N
    inner = tuple(slice(1, -1) for _ in c.shape)
    L = sp.kron(_laplacian(c.shape, c.spacing), sp.identity(N), format="csr")
    sol = spsolve((L - _drift_matrix(p)).tocsc(), p.F[inner].reshape(-1))
    out = np.zeros(p.F.shape, dtype=np.result_type(sol, p.F))
    out[inner] = sol.reshape(out[inner].shape)
    return out


# --- contraction diagnostics ---------------------------------------------------------


def smooth_test_field(chart: Chart, rng: np.random.Generator, N: int, modes: int = 3) -> np.ndarray:
    """Random combination of low sine modes in normalised box coordinates (zero on the boundary)."""
    norm = [(x - x[0]) / (x[-1] - x[0]) for x in chart.coords]
    mesh = np.meshgrid(*norm, indexing="ij")
    out = np.zeros(chart.shape + (N,))
    for k in range(N):
        for _ in range(modes):
            freq = rng.integers(1, 4, size=chart.ndim)
            amp = rng.standard_normal()
            term = amp * np.ones(chart.shape)
            for m, f in zip(mesh, freq):
                term = term * np.sin(np.pi * f * m)
            out[..., k] += term
    return out


def contraction_probe(chart: Chart, A: np.ndarray, pairs: int = 20, seed: int = 0) -> float:
    """Largest ratio ||T v - T w|| / ||v - w|| (gradient norm) over random smooth pairs.

    T is affine, so T v - T w = Lap^{-1}(A . grad(v - w)) and one Poisson
    solve per pair suffices.
    """
    if not np.any(A):
        return 0.0
    rng = np.random.default_rng(seed)
    N = A.shape[-1]
    worst = 0.0
    for _ in range(pairs):
        v = smooth_test_field(chart, rng, N)
        w = smooth_test_field(chart, rng, N)
        num = dirichlet_distance(poisson_dirichlet(drift_term(A, v - w, chart), chart), 0 * v, chart)
        worst = max(worst, num / dirichlet_distance(v, w, chart))
    return worst


def drift_operator_norm(chart: Chart, A: np.ndarray, seed: int = 0) -> float:
    """Exact Lipschitz constant of v -> Lap^{-1}(A . grad v) in the ``dirichlet_distance`` norm.

    With K = -Lap and D the drift matrix this is the square root of the top
    eigenvalue of the pencil (D^H K^{-1} D, K).
    """
    if not np.any(A):
        return 0.0
    N = A.shape[-1]
    p = DriftProblem(chart, A, np.zeros(chart.shape + (N,)))
    D = _drift_matrix(p).astype(complex)
    K = (-sp.kron(_laplacian(chart.shape, chart.spacing), sp.identity(N))).tocsc()
    n = K.shape[0]
    Dh = D.conj().T.tocsr()
    if chart.ndim <= 2:
        lu = splu(K)
        real_solve = lambda b: lu.solve(np.ascontiguousarray(b))  # noqa: E731
    else:
        # direct factorisations fill in badly beyond two dimensions
        Kr = K.tocsr()
        pre = sp.diags(1.0 / Kr.diagonal())

        def real_solve(b):
            if not np.any(b):
                return np.zeros_like(b)
            x, info = cg(Kr, b, rtol=1e-13, atol=0.0, M=pre, maxiter=20 * n)
            if info != 0:
                raise NonConvergence(f"CG did not converge in the operator norm (info={info})")
            return x

    def solve(b):
        b = np.asarray(b, dtype=complex).reshape(-1)
        return real_solve(b.real) + 1j * real_solve(b.imag)

    op = LinearOperator((n, n), matvec=lambda x: Dh @ solve(D @ x), dtype=complex)
    minv = LinearOperator((n, n), matvec=solve, dtype=complex)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    lam = eigsh(op, k=1, M=K.astype(complex), Minv=minv, which="LM", v0=v0, tol=1e-10,
                return_eigenvectors=False)
    return float(np.sqrt(max(lam[0].real, 0.0)))


def smooth_drift(chart: Chart, N: int, seed: int = 0, modes: int = 3) -> np.ndarray:
    """A smooth matrix-valued drift with unit L^n norm, in normalised coordinates."""
    rng = np.random.default_rng(seed)
    norm = [(x - x[0]) / (x[-1] - x[0]) for x in chart.coords]
    mesh = np.meshgrid(*norm, indexing="ij")
    A = np.zeros((chart.ndim,) + chart.shape + (N, N))
    for mu in range(chart.ndim):
        for i in range(N):
            for j in range(N):
                for _ in range(modes):
                    w = rng.standard_normal(chart.ndim)
                    ph = rng.uniform(0, 2 * np.pi)
                    A[mu, ..., i, j] += np.cos(sum(wk * 2 * np.pi * m for wk, m in zip(w, mesh)) + ph)
    return A / drift_norm(A, chart)


def certify_eps_elliptic(chart: Chart, A_unit: np.ndarray, threshold: float = 0.9,
                         pairs: int = 20, seed: int = 0) -> tuple[float, float]:
    """Largest ||c A_unit||_{L^n} whose exact contraction constant stays <= threshold.

    The constant (``drift_operator_norm``) is linear in c, so the threshold
    scale is read off once.  The smooth-field probe is a lower bound of the
    constant and serves as a cross-check of the eigensolve.  Returns
    (eps_elliptic, confirmed constant).
    """
    base = drift_norm(A_unit, chart)
    f1 = drift_operator_norm(chart, A_unit, seed)
    c = threshold / f1 * (1 - 1e-6)
    f = c * f1
    # the probe is a lower bound of the exact constant; exceeding it means the eigensolve failed
    if f > threshold or contraction_probe(chart, c * A_unit, pairs, seed) > f * (1 + 1e-6):
        raise ContractionFailure(f"contraction constant at the extrapolated scale is {f:.4g} > {threshold}")
    return float(c * base), float(f)


# --- bootstrap ------------------------------------------------------------------------


def bootstrap_stage_count(n: int, q: float, theta: float) -> int:
    """Number of localisation stages used to lift W^{1,2} solutions to W^{2,(q,theta)}."""
    if n <= 2 or q <= 2 * n / (n - 2):
        return 1
    low = n * (q - 2) / (2 * q)
    m = 2
    while m < n / 2:
        if (m >= low) if theta >= q else (m > low):
            return m
        m += 1
    raise ValueError(f"no admissible stage count for n={n}, q={q}, theta={theta}")


def w2q_norm(u: np.ndarray, chart: Chart, q: float, region: np.ndarray | None = None) -> float:
    """Discrete W^{2,q} norm from values, gradients and second differences."""
    g = gradient(u, chart)
    hess = [partial(g[a], chart, b) for a in range(chart.ndim) for b in range(chart.ndim)]
    pw = (np.sum(np.abs(u) ** 2, axis=-1) + np.sum(np.abs(g) ** 2, axis=(0, -1))
          + sum(np.sum(np.abs(hh) ** 2, axis=-1) for hh in hess))
    pw = np.sqrt(pw)
    w = chart.weights if region is None else np.where(region, chart.weights, 0.0)
    return lp_norm(pw, q, w)


@dataclass
class BootstrapReport:
    stages: int
    boxes: list
    stage_norms: list
    interior_norm: float


def _sub_box(chart: Chart, lo, hi) -> Chart:
    shape = tuple(b - a + 1 for a, b in zip(lo, hi))
    origin = tuple(x[a] for x, a in zip(chart.coords, lo))
    lengths = tuple(h * (n - 1) for h, n in zip(chart.spacing, shape))
    return box_chart(shape, lengths, origin=origin)


def _cutoff(shape, pad: int, profile: str = "smooth") -> np.ndarray:
    """Smooth cutoff, 0 on the outer layer, 1 beyond ``pad`` layers from every edge."""
    out = np.ones(shape)
    for a, n in enumerate(shape):
        t = np.arange(n, dtype=float)
        ramp = smoothstep(t / pad, profile) * smoothstep((n - 1 - t) / pad, profile)
        sh = [1] * len(shape)
        sh[a] = -1
        out = out * ramp.reshape(sh)
    return out


def bootstrap_interior(p: DriftProblem, K: tuple, q: float | None = None, theta: float | None = None,
                       alpha: np.ndarray | None = None, cutoff: str = "smooth", tol: float = 1e-10,
                       stages: int | None = None, profile: str = "smooth"):
    """Localise and re-solve on nested boxes Omega_0 > Omega_1 > ... > K.

    ``K`` is an inclusive index box ((lo...), (hi...)).  Stage l multiplies
    the current solution u by a cutoff phi equal to one on the next box and
    solves the zero-Dirichlet problem for phi u, whose source is
    phi f - (A . grad phi) u + 2 grad phi . grad u + u Lap(phi).
    ``cutoff="one"`` skips localisation and reproduces
    ``solve_drift_dirichlet``.  ``stages`` overrides the stage count and
    ``profile`` selects the cutoff ramp (see ``smoothstep``).
    """
    c = p.chart
    n = c.ndim
    q = q if q is not None else max(1.0, 0.75 * n)
    theta = theta if theta is not None else q
    m = stages or bootstrap_stage_count(n, q, theta)
    full = ((0,) * n, tuple(s - 1 for s in c.shape))
    if cutoff == "one":
        u, _ = solve_drift_dirichlet(p, tol=tol)
        return u, BootstrapReport(m, [full], [w2q_norm(u, c, q)], w2q_norm(u, c, q))
    if alpha is None:
        alpha, _ = solve_drift_dirichlet(p, tol=tol)
    lo_k, hi_k = K
    room = min(min(lo_k), min(s - 1 - h for s, h in zip(c.shape, hi_k)))
    step = (room - 2) // m  # K keeps two cells of clearance for the second differences
    if step < 3:
        raise MarginExhausted(f"{room} cells between K and the boundary cannot host {m} stages")
    # level l is the box inset by l * step; stage l solves on level l - 1 with a
    # cutoff ramping over one step, so the new solution is exact on level l
    u, f, A, chart, lo = alpha, p.F, p.A, c, (0,) * n
    boxes, norms = [], []
    for stage in range(1, m + 1):
        blo = tuple((stage - 1) * step for _ in range(n))
        bhi = tuple(s - 1 - (stage - 1) * step for s in c.shape)
        sl = tuple(slice(a - l, b - l + 1) for a, b, l in zip(blo, bhi, lo))
        sub = _sub_box(chart, tuple(a - l for a, l in zip(blo, lo)), tuple(b - l for b, l in zip(bhi, lo)))
        u, f, A = u[sl], f[sl], A[(slice(None),) + sl]
        phi = _cutoff(sub.shape, step, profile)
        dphi = gradient(phi, sub)
        lap_phi = sum(partial(dphi[a], sub, a) for a in range(n))
        source = (phi[..., None] * f + u * lap_phi[..., None]
                  - np.einsum("m...,m...ij,...j->...i", dphi, A, u)
                  + 2 * np.einsum("m...,m...i->...i", dphi, gradient(u, sub)))
        u, _ = solve_drift_dirichlet(DriftProblem(sub, A, source), tol=tol)
        boxes.append((blo, bhi))
        norms.append(w2q_norm(u, sub, q))
        chart, lo = sub, blo
    kmask = np.zeros(chart.shape, dtype=bool)
    kmask[tuple(slice(a - l, b - l + 1) for a, b, l in zip(lo_k, hi_k, lo))] = True
    return u, BootstrapReport(m, boxes, norms, w2q_norm(u, chart, q, kmask))

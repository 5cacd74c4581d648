"""Compact groups U(1) and SU(2) realised as N x N unitary matrices.

Every group or algebra value is a numpy array whose two trailing axes are the
matrix axes, so all operations broadcast over grids of values.  U(1) uses
1 x 1 matrices; the phase e^{i t} is stored as ``[[exp(1j*t)]]``.

The bi-invariant metric is normalised as ``|xi| = ||xi||_F / sqrt(N)``.  With
this choice the injectivity radius of ``exp`` is pi for both groups.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GroupMismatch, OutsideInjectivityDomain, TooFarFromGroup

_TOL = 1e-12


@dataclass(frozen=True)
class Group:
    name: str
    n: int
    basis: np.ndarray  # (dim, n, n) algebra basis with structure constants eps_ijk for SU2

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def abelian(self) -> bool:
        return self.n == 1

    def identity(self, shape: tuple[int, ...] = ()) -> np.ndarray:
        return np.broadcast_to(np.eye(self.n, dtype=complex), shape + (self.n, self.n)).copy()

    def zeros(self, shape: tuple[int, ...] = ()) -> np.ndarray:
        return np.zeros(shape + (self.n, self.n), dtype=complex)

    def check(self, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value)
        if value.shape[-2:] != (self.n, self.n):
            raise GroupMismatch(f"{self.name} expects trailing shape {(self.n, self.n)}, got {value.shape}")
        return value

    def __repr__(self) -> str:
        return f"Group({self.name})"


_SIGMA = np.array(
    [[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]],
    dtype=complex,
)

U1 = Group("U1", 1, np.array([[[1j]]]))
# tau_k = -i sigma_k / 2 so that [tau_1, tau_2] = tau_3.
SU2 = Group("SU2", 2, -0.5j * _SIGMA)

GROUPS = {"U1": U1, "SU2": SU2}


def get_group(name: str | Group) -> Group:
    if isinstance(name, Group):
        return name
    try:
        return GROUPS[name.upper()]
    except KeyError:
        raise GroupMismatch(f"unknown group {name!r}") from None


@dataclass(frozen=True)
class IdentityNeighborhood:
    """Geodesic ball around the identity on which ``log_map`` is used."""

    group: Group
    radius: float = np.pi / 2

    def __post_init__(self):
        if not 0 < self.radius < np.pi:
            raise ValueError("radius must lie in (0, pi)")


def dagger(m: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(m, -1, -2))


def alg_norm(xi: np.ndarray) -> np.ndarray:
    """Pointwise norm of algebra (or ambient matrix) values."""
    n = xi.shape[-1]
    return np.sqrt(np.sum(np.abs(xi) ** 2, axis=(-2, -1)) / n)


def alg_inner(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    n = xi.shape[-1]
    return np.real(np.sum(np.conj(xi) * eta, axis=(-2, -1))) / n


def to_coords(group: Group, xi: np.ndarray) -> np.ndarray:
    """Real coordinates of ``xi`` in ``group.basis`` (last axis has length dim)."""
    group.check(xi)
    gram = alg_inner(group.basis[:, None], group.basis[None, :])
    rhs = np.stack([alg_inner(b, xi) for b in group.basis], axis=-1)
    return rhs @ np.linalg.inv(gram).T


def from_coords(group: Group, c: np.ndarray) -> np.ndarray:
    return np.tensordot(np.asarray(c, dtype=float), group.basis, axes=(-1, 0))


def is_group_element(group: Group, g: np.ndarray, tol: float = _TOL) -> bool:
    g = group.check(g)
    eye = np.eye(group.n)
    unitary = np.max(np.abs(dagger(g) @ g - eye), initial=0.0) <= tol
    if group.n == 1:
        return bool(unitary)
    return bool(unitary and np.max(np.abs(np.linalg.det(g) - 1), initial=0.0) <= tol)


def is_algebra_element(group: Group, xi: np.ndarray, tol: float = _TOL) -> bool:
    xi = group.check(xi)
    skew = np.max(np.abs(xi + dagger(xi)), initial=0.0) <= tol
    traceless = group.n == 1 or np.max(np.abs(np.trace(xi, axis1=-2, axis2=-1)), initial=0.0) <= tol
    return bool(skew and traceless)


def exp_map(group: Group, xi: np.ndarray) -> np.ndarray:
    """Closed-form exponential: ``exp(xi) = cos|xi| + sinc|xi| xi``.

    Valid for both groups because ``xi @ xi = -|xi|^2`` on u(1) and su(2).
    """
    xi = group.check(np.asarray(xi, dtype=complex))
    theta = alg_norm(xi)
    sinc = np.sinc(theta / np.pi)  # numpy sinc is sin(pi x)/(pi x)
    eye = np.eye(group.n)
    return np.cos(theta)[..., None, None] * eye + sinc[..., None, None] * xi


def _angle_and_axis(g: np.ndarray):
    n = g.shape[-1]
    a0 = np.real(np.trace(g, axis1=-2, axis2=-1)) / n
    x = 0.5 * (g - dagger(g))
    if n == 2:
        x = x - 0.5 * np.trace(x, axis1=-2, axis2=-1)[..., None, None] * np.eye(2)
    s = alg_norm(x)
    return np.arctan2(s, a0), s, x


def geodesic_distance(group: Group, g: np.ndarray, h: np.ndarray | None = None) -> np.ndarray:
    """Bi-invariant distance d(g, h) = |log(g^{-1} h)|; distance to identity if h is None."""
    g = group.check(g)
    rel = g if h is None else dagger(g) @ group.check(h)
    theta, _, _ = _angle_and_axis(rel)
    return theta


def log_map(
    group: Group,
    g: np.ndarray,
    nbhd: IdentityNeighborhood | None = None,
    radius: float | None = None,
) -> np.ndarray:
    """Inverse of ``exp_map`` on the geodesic ball of the neighbourhood radius.

    ``radius`` overrides the neighbourhood; it may be as large as pi (the cut
    locus is excluded).
    """
    g = group.check(np.asarray(g, dtype=complex))
    if radius is None:
        radius = (nbhd or IdentityNeighborhood(group)).radius
    theta, s, x = _angle_and_axis(g)
    if np.any(theta >= radius) or np.any(theta >= np.pi - 1e-12):
        raise OutsideInjectivityDomain(
            f"{group.name} element at distance {float(np.max(theta)):.6g} >= radius {radius:.6g}"
        )
    # theta / sin(theta) with s = sin(theta); stable near zero
    factor = np.where(s > 1e-300, theta / np.where(s > 1e-300, s, 1.0), 1.0)
    return factor[..., None, None] * x


def patch_interpolate(
    group: Group,
    F: np.ndarray,
    psi: np.ndarray | float,
    nbhd: IdentityNeighborhood | None = None,
) -> np.ndarray:
    """``exp(psi * log F)``; exact copies of F where psi == 1 and identity where psi == 0."""
    F = group.check(np.asarray(F, dtype=complex))
    psi = np.asarray(psi, dtype=float)
    out = exp_map(group, psi[..., None, None] * log_map(group, F, nbhd))
    out = np.where((psi == 1.0)[..., None, None], F, out)
    out = np.where((psi == 0.0)[..., None, None], np.eye(group.n), out)
    return out


def project_to_group(group: Group, m: np.ndarray, max_distance: float = 0.5) -> np.ndarray:
    """Nearest-group projection: phase normalisation (U1) or SU(2) polar factor."""
    m = group.check(np.asarray(m, dtype=complex))
    if group.n == 1:
        mod = np.abs(m)
        if np.any(mod < 1e-300):
            raise TooFarFromGroup("cannot project zero onto U1")
        proj = m / mod
    else:
        u, _, vh = np.linalg.svd(m)
        w = u @ vh
        phase = np.angle(np.linalg.det(w))
        cand = w * np.exp(-0.5j * phase)[..., None, None]
        # two SU(2) candidates differ by -1; keep the closer one
        flip = np.sum(np.abs(cand - m) ** 2, axis=(-2, -1)) > np.sum(np.abs(-cand - m) ** 2, axis=(-2, -1))
        proj = np.where(flip[..., None, None], -cand, cand)
    gap = np.linalg.norm(m - proj, ord=2, axis=(-2, -1)) if group.n > 1 else np.abs(m - proj)[..., 0, 0]
    if np.any(gap > max_distance):
        raise TooFarFromGroup(f"input lies {float(np.max(gap)):.3g} from {group.name}")
    return proj


def adjoint(group: Group, g: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Ad_g xi = g xi g^{-1}."""
    g, xi = group.check(g), group.check(xi)
    return g @ xi @ dagger(g)


def bracket(group: Group, xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    xi, eta = group.check(xi), group.check(eta)
    return xi @ eta - eta @ xi


def random_algebra(group: Group, rng: np.random.Generator, shape=(), scale: float = 1.0) -> np.ndarray:
    c = rng.standard_normal(shape + (group.dim,))
    return from_coords(group, scale * c)


def u1(phase) -> np.ndarray:
    """U(1) element(s) e^{i phase} as 1 x 1 matrices."""
    return np.exp(1j * np.asarray(phase, dtype=float))[..., None, None]

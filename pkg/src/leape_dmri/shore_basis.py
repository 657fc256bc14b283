"""SHORE basis functions in q-space and displacement space.

Conventions used throughout the package:

* Fourier pair ``P(R) = integral E(q) exp(-2 pi i q.R) dq`` with diffusion
  time ``tau = 1/(4 pi^2)``, hence ``|q| = sqrt(b)``.
* Only even angular orders ``l`` are used; for each ``l`` the radial index runs
  over ``l <= n <= (N + l)/2``.  Coefficients are laid out by ascending ``l``,
  then ``n``, then ``m``.
* Real spherical harmonics are orthonormal over the sphere and built from the
  associated Legendre functions *without* the Condon-Shortley phase::

      Y_l^m = sqrt(2) K_l^m P_l^m(cos theta) cos(m phi)        m > 0
      Y_l^0 = K_l^0 P_l^0(cos theta)
      Y_l^m = sqrt(2) K_l^|m| P_l^|m|(cos theta) sin(|m| phi)  m < 0

  with ``K_l^m = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import lgamma, log, pi
from typing import NamedTuple

import numpy as np
from scipy.special import eval_genlaguerre, lpmv, roots_legendre

from .gradients import GradientScheme


class ShoreIndex(NamedTuple):
    n: int
    l: int
    m: int


def coefficient_count(radial_order: int) -> int:
    F = radial_order // 2
    return (F + 1) * (F + 2) * (4 * F + 3) // 6


def build_index_set(radial_order: int) -> list[ShoreIndex]:
    """Ordered (n, l, m) triples of the even-order SHORE basis up to `radial_order`."""
    if (not isinstance(radial_order, (int, np.integer)) or radial_order < 0
            or radial_order % 2):
        raise ValueError(f"radial order must be a non-negative even integer, got {radial_order!r}")
    out = []
    for l in range(0, radial_order + 1, 2):
        for n in range(l, (radial_order + l) // 2 + 1):
            for m in range(-l, l + 1):
                out.append(ShoreIndex(n, l, m))
    return out


def laguerre(k, a, x):
    """Generalised Laguerre polynomial ``L_k^(a)(x)``.

    `x` may be an array; the result has its shape.
    """
    if k < 0:
        raise ValueError("Laguerre degree must be >= 0")
    out = eval_genlaguerre(int(k), float(a), np.asarray(x, dtype=np.float64))
    return out if np.ndim(out) else float(out)


def _unit_and_norm(points):
    """Split points into norms and directions; zero vectors get direction +z."""
    pts = np.asarray(points, dtype=np.float64)
    r = np.linalg.norm(pts, axis=-1)
    safe = np.where(r > 0, r, 1.0)
    u = pts / safe[..., None]
    u[r == 0] = (0.0, 0.0, 1.0)
    return r, u


def _sh_norm(l, am):
    return np.sqrt((2 * l + 1) / (4 * pi) * np.exp(lgamma(l - am + 1) - lgamma(l + am + 1)))


def real_sh(l, m, u):
    """Real, orthonormal spherical harmonic ``Y_l^m`` at direction(s) `u`.

    See the module docstring for the sign convention.
    """
    if abs(m) > l:
        raise ValueError(f"|m| must not exceed l (got l={l}, m={m})")
    _, u = _unit_and_norm(u)
    z = np.clip(u[..., 2], -1.0, 1.0)
    phi = np.arctan2(u[..., 1], u[..., 0])
    am = abs(m)
    # lpmv carries the Condon-Shortley phase (-1)^m; fold it out
    leg = (-1.0) ** am * lpmv(am, l, z)
    val = _sh_norm(l, am) * leg
    if m > 0:
        val = np.sqrt(2.0) * val * np.cos(am * phi)
    elif m < 0:
        val = np.sqrt(2.0) * val * np.sin(am * phi)
    return val if np.ndim(val) else float(val)


def _sh_table(indices, u):
    """Spherical harmonics for every index column, evaluated at rows of `u`."""
    cache = {}
    out = np.empty(u.shape[:-1] + (len(indices),))
    for j, (_, l, m) in enumerate(indices):
        if (l, m) not in cache:
            cache[(l, m)] = real_sh(l, m, u)
        out[..., j] = cache[(l, m)]
    return out


def _log_kappa(zeta, n, l):
    return 0.5 * (log(2.0) + lgamma(n - l + 1) - 1.5 * log(zeta) - lgamma(n + 1.5))


def _log_kappa_eap(zeta, n, l):
    return 0.5 * (log(16.0 * pi ** 3) + 1.5 * log(zeta) + lgamma(n - l + 1) - lgamma(n + 1.5))


def signal_radial(n, l, qnorm, zeta):
    """Radial factor of the q-space basis function (n, l) at ``|q|``."""
    x = np.asarray(qnorm, dtype=np.float64) ** 2 / zeta
    return (np.exp(_log_kappa(zeta, n, l)) * x ** (l / 2) * np.exp(-x / 2)
            * laguerre(n - l, l + 0.5, x))


def eap_radial(n, l, rnorm, zeta):
    """Radial factor (sign included) of the displacement-space basis function."""
    x = 4 * pi ** 2 * zeta * np.asarray(rnorm, dtype=np.float64) ** 2
    sign = (-1.0) ** (n - l // 2)
    return (sign * np.exp(_log_kappa_eap(zeta, n, l)) * x ** (l / 2) * np.exp(-x / 2)
            * laguerre(n - l, l + 0.5, x))


def phi(idx, q, zeta):
    """q-space basis function ``Phi_nlm`` at the q-vector(s) `q`."""
    n, l, m = idx
    r, u = _unit_and_norm(q)
    val = signal_radial(n, l, r, zeta) * real_sh(l, m, u)
    return val if np.ndim(val) else float(val)


def psi(idx, R, zeta):
    """Displacement-space basis function ``Psi_nlm``: the Fourier dual of `phi`."""
    n, l, m = idx
    r, u = _unit_and_norm(R)
    val = eap_radial(n, l, r, zeta) * real_sh(l, m, u)
    return val if np.ndim(val) else float(val)


@dataclass(frozen=True, eq=False)
class DirectionSet:
    """Unit vectors used to sample ODFs.

    `adjacency` holds neighbour index arrays for tessellations and is ``None``
    otherwise.  `name` is a short identifier recorded in model manifests.
    """

    dirs: np.ndarray
    adjacency: tuple | None = None
    hemisphere: bool = False
    name: str = ""

    def __len__(self):
        return self.dirs.shape[0]


def fibonacci_directions(M: int) -> DirectionSet:
    """`M` deterministic spherical-Fibonacci directions on the upper hemisphere."""
    if M < 1:
        raise ValueError("need at least one direction")
    i = np.arange(M, dtype=np.float64)
    z = 1.0 - (i + 0.5) / M
    rho = np.sqrt(1.0 - z ** 2)
    golden = pi * (3.0 - np.sqrt(5.0))
    ang = golden * i
    dirs = np.column_stack([rho * np.cos(ang), rho * np.sin(ang), z])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs.flags.writeable = False
    return DirectionSet(dirs, None, True, f"fibonacci-hemisphere-{M}")


@dataclass(frozen=True, eq=False)
class ShoreBasis:
    """Even-order SHORE basis of maximal radial order `radial_order` and scale `zeta`.

    `zeta` is in the q^2 units implied by ``|q| = sqrt(b)``, i.e. s/mm^2.
    """

    radial_order: int = 6
    zeta: float = 700.0
    indices: list = field(init=False, repr=False)

    def __post_init__(self):
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        object.__setattr__(self, "indices", build_index_set(self.radial_order))

    @property
    def n_c(self) -> int:
        return len(self.indices)

    @property
    def n(self):
        return np.array([i.n for i in self.indices])

    @property
    def l(self):
        return np.array([i.l for i in self.indices])

    def _radial_table(self, radius, radial_fn):
        out = np.empty(np.shape(radius) + (self.n_c,))
        cache = {}
        for j, (n, l, _) in enumerate(self.indices):
            if (n, l) not in cache:
                cache[(n, l)] = radial_fn(n, l, radius, self.zeta)
            out[..., j] = cache[(n, l)]
        return out

    def signal_matrix(self, q) -> np.ndarray:
        """Basis values at q-vectors: shape ``q.shape[:-1] + (n_c,)``."""
        r, u = _unit_and_norm(q)
        return self._radial_table(r, signal_radial) * _sh_table(self.indices, u)

    def eap_matrix(self, R) -> np.ndarray:
        """Displacement-space basis values at points `R`."""
        r, u = _unit_and_norm(R)
        return self._radial_table(r, eap_radial) * _sh_table(self.indices, u)

    def design_matrix(self, scheme: GradientScheme) -> np.ndarray:
        return signal_design_matrix(scheme, self)

    @property
    def odf_rmax(self) -> float:
        return 5.0 / np.sqrt(2 * pi ** 2 * self.zeta)

    def odf_radial_integrals(self, n_nodes: int = 64) -> np.ndarray:
        """``int_0^rmax eap_radial(r) r^2 dr`` per index, by Gauss-Legendre quadrature."""
        x, w = roots_legendre(n_nodes)
        rmax = self.odf_rmax
        r = 0.5 * rmax * (x + 1.0)
        w = 0.5 * rmax * w
        rad = self._radial_table(r, eap_radial)
        return (w * r ** 2) @ rad


def signal_design_matrix(scheme: GradientScheme, basis: ShoreBasis) -> np.ndarray:
    """K x n_c matrix of q-space basis values; b = 0 rows use q = 0."""
    return basis.signal_matrix(scheme.qvectors)


def odf_matrix(dirs: DirectionSet, basis: ShoreBasis, n_nodes: int = 64) -> np.ndarray:
    """Linear map from coefficients to ODF values ``int P(r u) r^2 dr`` at `dirs`."""
    d = np.asarray(dirs.dirs if isinstance(dirs, DirectionSet) else dirs, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] == 0:
        raise ValueError("need a non-empty (M, 3) direction array")
    return _sh_table(basis.indices, d) * basis.odf_radial_integrals(n_nodes)

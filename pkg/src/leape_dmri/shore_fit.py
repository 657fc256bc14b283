"""Conventional SHORE estimation and feature extraction from coefficients."""

from __future__ import annotations

from dataclasses import dataclass
from math import pi

import numpy as np
from scipy.special import binom, roots_genlaguerre

from .gradients import GradientScheme
from .shore_basis import ShoreBasis, _log_kappa_eap, laguerre, signal_design_matrix


class RankDeficiencyError(np.linalg.LinAlgError):
    """The regularised least-squares system does not determine all coefficients."""


@dataclass(frozen=True)
class FitConfig:
    lambda_n: float = 1e-8
    lambda_l: float = 1e-8

    def __post_init__(self):
        if self.lambda_n < 0 or self.lambda_l < 0:
            raise ValueError("regularisation weights must be >= 0")


def regularization_diagonal(basis: ShoreBasis, cfg: FitConfig) -> np.ndarray:
    """Diagonal of ``lambda_N diag((n(n+1))^2) + lambda_L diag((l(l+1))^2)``."""
    n, l = basis.n.astype(float), basis.l.astype(float)
    return cfg.lambda_n * (n * (n + 1)) ** 2 + cfg.lambda_l * (l * (l + 1)) ** 2


class ShoreFitter:
    """Precomputed linear fitting operator for one (scheme, basis, config) triple.

    The minimiser of ``||Phi c - y||^2 + c^T Lambda c`` is obtained from the
    augmented least-squares problem ``[Phi; sqrt(Lambda)] c ~ [y; 0]``, which
    avoids squaring the condition number of ``Phi``.  Fitting many voxels is
    then a single matrix product.
    """

    def __init__(self, scheme: GradientScheme, basis: ShoreBasis, cfg: FitConfig = FitConfig()):
        self.scheme = scheme
        self.basis = basis
        self.cfg = cfg
        self.design = signal_design_matrix(scheme, basis)
        self.reg = regularization_diagonal(basis, cfg)
        K, nc = self.design.shape
        aug = np.vstack([self.design, np.diag(np.sqrt(self.reg))])
        rhs = np.vstack([np.eye(K), np.zeros((nc, K))])
        sol, _, rank, sv = np.linalg.lstsq(aug, rhs, rcond=None)
        if rank < nc:
            raise RankDeficiencyError(
                f"regularised SHORE system has rank {rank} < {nc} coefficients "
                f"({K} samples, lambda_N={cfg.lambda_n}, lambda_L={cfg.lambda_l})")
        self.operator = sol  # (n_c, K)

    def fit(self, y) -> np.ndarray:
        """Coefficients for signal vector(s) `y` of shape (..., K)."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != self.design.shape[0]:
            raise ValueError(f"signal length {y.shape[-1]} does not match scheme size "
                             f"{self.design.shape[0]}")
        if not np.all(np.isfinite(y)):
            raise ValueError("signals must be finite")
        return y @ self.operator.T

    def normal_residual(self, c, y) -> np.ndarray:
        """Relative residual of the regularised normal equations."""
        A = self.design
        lhs = (c @ A.T) @ A + c * self.reg
        rhs = y @ A
        return np.linalg.norm(lhs - rhs, axis=-1) / np.linalg.norm(rhs, axis=-1)


def fit_shore(y, scheme: GradientScheme, basis: ShoreBasis, cfg: FitConfig = FitConfig()):
    """Regularised least-squares SHORE coefficients of normalised signal(s) `y`."""
    return ShoreFitter(scheme, basis, cfg).fit(y)


def reconstruct_signal(c, design) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    design = np.asarray(design)
    if c.shape[-1] != design.shape[1]:
        raise ValueError("coefficient length does not match the design matrix")
    return c @ design.T


def odf_sample(c, upsilon) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    upsilon = np.asarray(upsilon)
    if c.shape[-1] != upsilon.shape[1]:
        raise ValueError("coefficient length does not match the ODF matrix")
    return c @ upsilon.T


def eap_eval(c, R, basis: ShoreBasis):
    """Propagator ``P(R) = sum_j c_j Psi_j(R)``.

    `c` has shape (..., n_c) and `R` shape (P, 3) or (3,).  The result has
    shape ``c.shape[:-1] + (P,)`` (or ``c.shape[:-1]`` for a single point).
    """
    R = np.asarray(R, dtype=np.float64)
    M = basis.eap_matrix(R.reshape(-1, 3))
    out = np.asarray(c, dtype=np.float64) @ M.T
    return out[..., 0] if R.ndim == 1 else out


def _origin_weights(basis: ShoreBasis) -> np.ndarray:
    """``Psi_j(0)`` per index; nonzero only for l = 0."""
    w = np.zeros(basis.n_c)
    y00 = 0.5 / np.sqrt(pi)
    for j, (n, l, _) in enumerate(basis.indices):
        if l == 0:
            # L_n^(1/2)(0) = binom(n + 1/2, n)
            w[j] = (-1.0) ** n * np.exp(_log_kappa_eap(basis.zeta, n, 0)) * binom(n + 0.5, n) * y00
    return w


def _second_moment_weights(basis: ShoreBasis) -> np.ndarray:
    """``int |R|^2 Psi_j(R) dR`` per index; nonzero only for l = 0.

    With ``x = 4 pi^2 zeta r^2`` the radial integral becomes
    ``(64 pi^5 zeta^(5/2))^-1 int x^(3/2) exp(-x/2) L_n^(1/2)(x) dx``; the
    substitution ``x = 2t`` makes it exact under generalised Gauss-Laguerre
    quadrature of weight ``t^(3/2) exp(-t)``.
    """
    w = np.zeros(basis.n_c)
    t, gw = roots_genlaguerre(16, 1.5)
    zeta = basis.zeta
    for j, (n, l, _) in enumerate(basis.indices):
        if l != 0:
            continue
        integral = 2.0 ** 2.5 * np.sum(gw * laguerre(n, 0.5, 2.0 * t))
        radial = integral / (64.0 * pi ** 5 * zeta ** 2.5)
        kappa = np.exp(_log_kappa_eap(zeta, n, 0))
        # angular integral of Y_0^0 over the sphere is sqrt(4 pi)
        w[j] = (-1.0) ** n * kappa * radial * np.sqrt(4 * pi)
    return w


def rtop(c, basis: ShoreBasis):
    """Return-to-origin probability ``P(0)``."""
    return np.asarray(c, dtype=np.float64) @ _origin_weights(basis)


def msd(c, basis: ShoreBasis):
    """Mean square displacement ``int |R|^2 P(R) dR``."""
    return np.asarray(c, dtype=np.float64) @ _second_moment_weights(basis)

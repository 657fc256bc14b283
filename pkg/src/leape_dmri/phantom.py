"""Synthetic multi-tensor phantoms on HCP-like multi-shell schemes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fo_extract import canonicalize
from .gradients import TAU, GradientScheme, repulsion_directions

DENSE_SHELLS = (1000.0, 2000.0, 3000.0)
DIRS_PER_SHELL = 90
SPARSE_DIRS_PER_SHELL = 30
SPARSE_SHELLS = (1000.0, 2000.0)


@dataclass(frozen=True)
class TensorMixture:
    """Volume fractions, eigenvalues (mm^2/s, descending) and principal axes."""

    fractions: tuple
    eigenvalues: tuple
    axes: tuple

    def __post_init__(self):
        f = np.asarray(self.fractions, dtype=np.float64)
        ev = np.asarray(self.eigenvalues, dtype=np.float64).reshape(len(f), 3)
        ax = np.asarray(self.axes, dtype=np.float64).reshape(len(f), 3)
        if len(f) == 0:
            raise ValueError("a mixture needs at least one compartment")
        if np.any(f <= 0) or np.any(f > 1) or abs(f.sum() - 1.0) > 1e-12:
            raise ValueError("fractions must lie in (0, 1] and sum to 1")
        if np.any(ev <= 0):
            raise ValueError("eigenvalues must be positive")
        if np.any(np.diff(ev, axis=1) > 0):
            raise ValueError("eigenvalues must be sorted in descending order")
        if np.any(np.abs(np.linalg.norm(ax, axis=1) - 1.0) > 1e-9):
            raise ValueError("principal axes must be unit vectors")

    @property
    def n_compartments(self) -> int:
        return len(self.fractions)

    def tensors(self) -> np.ndarray:
        """(C, 3, 3) diffusion tensors, axially symmetric about each principal axis
        when the two minor eigenvalues coincide."""
        out = []
        for ev, ax in zip(self.eigenvalues, self.axes):
            ax = np.asarray(ax, dtype=np.float64)
            e1, e2, e3 = _orthonormal_frame(ax)
            out.append(ev[0] * np.outer(e1, e1) + ev[1] * np.outer(e2, e2) + ev[2] * np.outer(e3, e3))
        return np.array(out)

    def to_dict(self) -> dict:
        return {"fractions": [float(f) for f in self.fractions],
                "eigenvalues": [[float(e) for e in ev] for ev in self.eigenvalues],
                "axes": [[float(a) for a in ax] for ax in self.axes]}

    @classmethod
    def from_dict(cls, d) -> "TensorMixture":
        return cls(tuple(d["fractions"]), tuple(map(tuple, d["eigenvalues"])),
                   tuple(map(tuple, d["axes"])))


def _orthonormal_frame(axis):
    a = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    b = np.cross(a, helper)
    b /= np.linalg.norm(b)
    return a, b, np.cross(a, b)


def make_hcp_like_scheme(seed: int = 0):
    """Dense three-shell scheme and its 61-sample two-shell subset.

    The dense scheme is one b = 0 sample followed by 90 directions at each of
    b = 1000, 2000, 3000 s/mm^2.  Within a shell the first 30 directions are
    repulsion-optimised on their own and the remaining 60 are optimised
    around them, so that the leading 30 are well spread.  The sparse scheme
    takes the b = 0 sample and the first 30 directions of the two lower
    shells.

    Returns
    -------
    dense : GradientScheme
    sparse : GradientScheme
    subset : ndarray of int
        Indices of the sparse samples within the dense scheme.
    """
    bvecs, bvals = [np.zeros(3)], [0.0]
    for s, b in enumerate(DENSE_SHELLS):
        shell_seed = [seed, s]
        head = repulsion_directions(SPARSE_DIRS_PER_SHELL, shell_seed)
        tail = repulsion_directions(DIRS_PER_SHELL - SPARSE_DIRS_PER_SHELL, shell_seed + [1], fixed=head)
        bvecs += list(head) + list(tail)
        bvals += [b] * DIRS_PER_SHELL
    dense = GradientScheme(np.array(bvecs), np.array(bvals))
    subset = [0]
    for s, b in enumerate(DENSE_SHELLS):
        if b in SPARSE_SHELLS:
            start = 1 + s * DIRS_PER_SHELL
            subset += list(range(start, start + SPARSE_DIRS_PER_SHELL))
    subset = np.array(subset, dtype=np.int64)
    return dense, dense.subset(subset), subset


def simulate_signal(mix: TensorMixture, scheme: GradientScheme) -> np.ndarray:
    """Noise-free normalised signal ``sum_i f_i exp(-b u^T D_i u)``."""
    D = mix.tensors()
    adc = np.einsum("ki,cij,kj->ck", scheme.bvecs, D, scheme.bvecs)
    att = np.exp(-scheme.bvals[None, :] * adc)
    return np.asarray(mix.fractions) @ att


def add_rician_noise(y, snr, seed) -> np.ndarray:
    """Rician magnitude noise with ``sigma = 1/snr`` (relative to S0 = 1).

    ``snr = inf`` returns a copy of `y`.  Draws are a function of `seed` and the
    sample position only.
    """
    y = np.asarray(y, dtype=np.float64)
    if not snr > 0:
        raise ValueError("snr must be positive")
    if np.isinf(snr):
        return y.copy()
    sigma = 1.0 / snr
    rng = np.random.default_rng(seed)
    n = rng.normal(0.0, sigma, size=(2,) + y.shape)
    return np.sqrt((y + n[0]) ** 2 + n[1] ** 2)


def ground_truth_features(mix: TensorMixture, min_fraction: float = 0.2):
    """Analytic MSD, RTOP and fiber orientations of a Gaussian mixture."""
    D = mix.tensors()
    f = np.asarray(mix.fractions)
    msd = float(np.sum(f * 2 * TAU * np.trace(D, axis1=1, axis2=2)))
    rtop = float(np.sum(f * (4 * np.pi * TAU) ** -1.5 / np.sqrt(np.linalg.det(D))))
    fos = np.array([ax for fi, ax in zip(mix.fractions, mix.axes) if fi >= min_fraction],
                   dtype=np.float64).reshape(-1, 3)
    return msd, rtop, canonicalize(fos)


# --- corpus recipe ----------------------------------------------------------

def random_unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def random_mixture(rng, n_compartments=None, min_fraction=0.2, min_crossing_angle=30.0,
                   lambda1=(1.2e-3, 2.0e-3), lambda23=(0.2e-3, 0.5e-3)) -> TensorMixture:
    """Random 1-3 compartment mixture following the corpus recipe."""
    C = int(rng.integers(1, 4)) if n_compartments is None else n_compartments
    if C == 1:
        fractions = np.array([1.0])
    else:
        fractions = min_fraction + (1.0 - C * min_fraction) * rng.dirichlet(np.ones(C))
        fractions[-1] = 1.0 - fractions[:-1].sum()
    axes = []
    cos_min = np.cos(np.radians(min_crossing_angle))
    while len(axes) < C:
        a = random_unit(rng)
        if all(abs(a @ b) <= cos_min for b in axes):
            axes.append(a)
    ev = []
    for _ in range(C):
        l1 = rng.uniform(*lambda1)
        l2 = rng.uniform(*lambda23)
        ev.append((l1, l2, l2))
    return TensorMixture(tuple(fractions), tuple(ev), tuple(map(tuple, axes)))


def make_corpus(n_samples, scheme: GradientScheme, seed, snrs=(np.inf,)):
    """Noisy signals and their mixtures.

    Sample ``i`` draws its mixture from ``default_rng([seed, i])``, uses SNR
    ``snrs[i % len(snrs)]`` and noise seed ``[seed, i, 1]``, so any sample can
    be regenerated on its own.

    Returns
    -------
    signals : (n_samples, K) array
    mixtures : list of TensorMixture
    sample_snr : (n_samples,) array
    """
    signals = np.empty((n_samples, len(scheme)))
    mixtures, sample_snr = [], np.empty(n_samples)
    for i in range(n_samples):
        rng = np.random.default_rng([seed, i])
        mix = random_mixture(rng)
        snr = float(snrs[i % len(snrs)])
        signals[i] = add_rician_noise(simulate_signal(mix, scheme), snr, [seed, i, 1])
        mixtures.append(mix)
        sample_snr[i] = snr
    return signals, mixtures, sample_snr

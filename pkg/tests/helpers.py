"""Independent numerical oracles shared by the test modules."""

import numpy as np
from scipy.special import roots_legendre


def sphere_quadrature(n):
    """Gauss-Legendre in cos(theta) times a uniform 2n-point rule in phi.

    Exact for spherical polynomials of degree < 2n.
    """
    x, w = roots_legendre(n)
    phi = np.arange(2 * n) * np.pi / n
    z = np.repeat(x, 2 * n)
    ph = np.tile(phi, n)
    s = np.sqrt(1 - z ** 2)
    pts = np.column_stack([s * np.cos(ph), s * np.sin(ph), z])
    weights = np.repeat(w, 2 * n) * (np.pi / n)
    return pts, weights


def fourier_grid_eap(basis, C, R, dq=8.0, qmax=280.0):
    """``P(R) = sum_q E(q) cos(2 pi q.R) dq^3`` on a Cartesian q-grid.

    The q-space signal is built from the basis' signal functions only; the
    trapezoid sum converges spectrally because the signal is smooth and its
    propagator is negligible beyond ``1 / dq``.
    """
    C = np.atleast_2d(C)
    R = np.atleast_2d(R)
    g = np.arange(-qmax, qmax + dq / 2, dq)
    qx, qy = np.meshgrid(g, g, indexing="ij")
    out = np.zeros((len(C), len(R)))
    for qz in g:
        q = np.stack([qx, qy, np.full_like(qx, qz)], -1).reshape(-1, 3)
        E = basis.signal_matrix(q) @ C.T
        out += (np.cos(2 * np.pi * q @ R.T).T @ E).T
    return out * dq ** 3


def grid_moments(basis, C, h=0.002, rmax=0.08):
    """``(int P dR, int |R|^2 P dR)`` by a Cartesian trapezoid rule in R."""
    from leape_dmri.shore_fit import eap_eval
    C = np.atleast_2d(C)
    g = np.arange(-rmax, rmax + h / 2, h)
    mass = np.zeros(len(C))
    second = np.zeros(len(C))
    X, Y = np.meshgrid(g, g, indexing="ij")
    for z in g:
        R = np.stack([X, Y, np.full_like(X, z)], -1).reshape(-1, 3)
        P = eap_eval(C, R, basis)
        mass += P.sum(axis=1)
        second += P @ (R ** 2).sum(axis=1)
    return mass * h ** 3, second * h ** 3


def step3_gradient_check(seed, n_probe=60, h=1e-6):
    """Max relative error of the step-3 MLP1 gradient against central differences.

    Reduced model: radial order 2, 10 ODF directions, 12 input signals and
    small random networks whose biases keep pre-activations off the
    rectifier kink.
    """
    from leape_dmri.leape import CoefScaler, step3_objective
    from leape_dmri.neural import init_params
    from leape_dmri.shore_basis import ShoreBasis, fibonacci_directions, odf_matrix

    rng = np.random.default_rng(seed)
    basis = ShoreBasis(2, 700.0)
    upsilon = odf_matrix(fibonacci_directions(10), basis)
    n_c = basis.n_c
    mlp1 = init_params([12, 9, 9, n_c], [seed, 1])
    mlp2 = init_params([20, 9, 1], [seed, 2])
    for net in (mlp1, mlp2):
        for b in net.biases:
            b[:] = rng.normal(scale=0.5, size=b.shape)
    scaler = CoefScaler(rng.normal(size=n_c), 2.5)
    y = rng.uniform(0.1, 1.0, size=(6, 12))
    c_gold = scaler.to_coef(rng.normal(size=(6, n_c)))
    v_gold = rng.normal(size=(6, 10))

    def loss():
        return step3_objective(mlp1, mlp2, y, c_gold, v_gold, upsilon, scaler, 0.5, with_grads=False)

    _, grads = step3_objective(mlp1, mlp2, y, c_gold, v_gold, upsilon, scaler, 0.5)
    worst = 0.0
    for k, (dW, db) in enumerate(grads):
        for arr, g in ((mlp1.weights[k], dW), (mlp1.biases[k], db)):
            flat = arr.reshape(-1)
            for i in rng.choice(flat.size, size=min(flat.size, n_probe), replace=False):
                old = flat[i]
                flat[i] = old + h
                fp = loss()
                flat[i] = old - h
                fm = loss()
                flat[i] = old
                num = (fp - fm) / (2 * h)
                ana = g.reshape(-1)[i]
                worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
    return worst


# (criterion, part) -> (passed, detail); printed by the terminal-summary hook
ACCEPTANCE_RESULTS = {}


def record_acceptance(criterion, passed, detail, part=""):
    ACCEPTANCE_RESULTS[(int(criterion), part)] = (bool(passed), detail)
    return passed


def acceptance_lines():
    lines = []
    for crit in sorted({c for c, _ in ACCEPTANCE_RESULTS}):
        parts = sorted((p, r) for (c, p), r in ACCEPTANCE_RESULTS.items() if c == crit)
        ok = all(r[0] for _, r in parts)
        detail = "; ".join(f"{p + ': ' if p else ''}{'pass' if r[0] else 'FAIL'} ({r[1]})" for p, r in parts)
        lines.append(f"criterion {crit}: {'PASS' if ok else 'FAIL'} - {detail}")
    return lines

"""Learning-based propagator estimation: dataset assembly, three-step training, inference.

Training network (step 3)::

    y --MLP1--> c_hat --Upsilon--> v_hat --+
                                           +--MLP2--> e_FO (approximate)
    c_gold --Upsilon--> v_gold ------------+

MLP1 predicts coefficients in a fixed affine unit, ``c_hat = mu + s * z``
with per-coefficient training means ``mu`` and one global spread ``s``
(constants, not parameters).  Step 1 measures the MSE in that unit, which
has the same minimiser; the step-3 objective measures ``||c_hat - c||^2`` in
coefficient units so that its balance against the FO term does not depend
on ``s``.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .fo_extract import PeakConfig, find_peaks_batch, fo_error, tessellate_sphere
from .gradients import GradientScheme
from .neural import (AdamState, MLP, adam_step, backward, composite_loss, forward,
                     init_params, load_model, mse_loss, save_model)
from .shore_basis import DirectionSet, ShoreBasis, fibonacci_directions, odf_matrix
from .shore_fit import FitConfig, ShoreFitter

log = logging.getLogger(__name__)

PIPELINE_VERSION = 1


@dataclass(frozen=True)
class TrainingConfig:
    alpha: float = 0.5
    lr: float = 1e-3
    batch_size: int = 128
    epochs_step1: int = 10
    epochs_step2: int = 40
    epochs_step3: int = 10
    val_fraction: float = 0.1
    seed: int = 0
    hidden: tuple = (500, 500, 500)

    def __post_init__(self):
        if self.alpha < 0 or self.lr <= 0 or self.batch_size < 1:
            raise ValueError("alpha must be >= 0, lr and batch_size positive")
        if min(self.epochs_step1, self.epochs_step2, self.epochs_step3) < 0:
            raise ValueError("epoch counts must be >= 0")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(text).hexdigest()


@dataclass(frozen=True, eq=False)
class LeapeSetup:
    """Fixed, non-trainable ingredients shared by all training steps and inference."""

    basis: ShoreBasis = field(default_factory=ShoreBasis)
    odf_dirs: DirectionSet = field(default_factory=lambda: fibonacci_directions(100))
    peak_sphere: DirectionSet = field(default_factory=lambda: tessellate_sphere(2))
    peak_cfg: PeakConfig = field(default_factory=PeakConfig)

    def __post_init__(self):
        u = odf_matrix(self.odf_dirs, self.basis)
        u.flags.writeable = False
        object.__setattr__(self, "upsilon", u)
        up = odf_matrix(self.peak_sphere, self.basis)
        up.flags.writeable = False
        object.__setattr__(self, "upsilon_peaks", up)

    def peaks(self, c) -> list:
        """Fiber orientations of coefficient rows `c`."""
        return find_peaks_batch(np.atleast_2d(c) @ self.upsilon_peaks.T, self.peak_sphere,
                                self.peak_cfg)

    def describe(self) -> dict:
        return {"basis": {"radial_order": self.basis.radial_order, "zeta": self.basis.zeta},
                "odf_directions": self.odf_dirs.name,
                "peak_sphere": self.peak_sphere.name,
                "peak_config": asdict(self.peak_cfg)}


@dataclass
class TrainingSet:
    """Struct-of-arrays training data: one row per voxel."""

    y_sparse: np.ndarray
    c_gold: np.ndarray
    v_gold: np.ndarray
    fo_gold: list

    def __len__(self):
        return self.y_sparse.shape[0]


def build_training_set(signals_dense, scheme_dense: GradientScheme, subset,
                       setup: LeapeSetup, fit_cfg: FitConfig = FitConfig()) -> TrainingSet:
    """Gold-standard coefficients from the dense scheme plus sparse inputs."""
    signals_dense = np.atleast_2d(np.asarray(signals_dense, dtype=np.float64))
    subset = np.asarray(subset, dtype=np.int64)
    if subset.ndim != 1 or subset.size == 0 or subset.min() < 0 or subset.max() >= len(scheme_dense):
        raise ValueError("sparse scheme is not a subset of the dense scheme")
    if signals_dense.shape[1] != len(scheme_dense):
        raise ValueError("signal length does not match the dense scheme")
    c_gold = ShoreFitter(scheme_dense, setup.basis, fit_cfg).fit(signals_dense)
    return TrainingSet(y_sparse=signals_dense[:, subset].copy(), c_gold=c_gold,
                       v_gold=c_gold @ setup.upsilon.T, fo_gold=setup.peaks(c_gold))


def split_indices(n, val_fraction, seed):
    """(train, validation) index arrays; depends on (seed, n) only."""
    if n < 2:
        raise ValueError("need at least two samples to hold out a validation set")
    perm = np.random.default_rng([seed, n]).permutation(n)
    n_val = min(max(1, int(round(val_fraction * n))), n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


@dataclass
class CoefScaler:
    """Fixed affine map between network units and SHORE coefficients."""

    mean: np.ndarray
    scale: float

    @classmethod
    def fit(cls, c):
        mean = c.mean(axis=0)
        scale = float(np.sqrt(np.mean((c - mean) ** 2)))
        return cls(mean, scale if scale > 0 else 1.0)

    def to_net(self, c):
        return (c - self.mean) / self.scale

    def to_coef(self, z):
        return self.mean + self.scale * z


def _run_epochs(net, stage, cfg, epochs, train_idx, batch_grad, eval_loss):
    """Adam over shuffled mini-batches, keeping the best-validation parameters.

    Returns ``(best_net, history)``; history rows hold the training and
    validation losses at initialisation (epoch 0) and after every epoch.
    """
    state = AdamState.zeros_like(net)
    tr, va = eval_loss(net)
    history = [{"epoch": 0, "train": tr, "val": va}]
    best, best_val = net.copy(), va
    for epoch in range(1, epochs + 1):
        order = np.random.default_rng([cfg.seed, stage, epoch]).permutation(train_idx)
        for start in range(0, len(order), cfg.batch_size):
            grads = batch_grad(net, order[start:start + cfg.batch_size])
            adam_step(net, grads, state, cfg.lr)
        tr, va = eval_loss(net)
        history.append({"epoch": epoch, "train": tr, "val": va})
        log.info("step %d epoch %d: train %.6g val %.6g", stage, epoch, tr, va)
        if va < best_val:
            best, best_val = net.copy(), va
    return best, history


def train_step1(ts: TrainingSet, cfg: TrainingConfig, scaler: CoefScaler = None, init=None):
    """MLP1 trained on the coefficient MSE alone (in network units).

    Returns ``(mlp1, scaler, history)``.
    """
    if len(ts) < 2:
        raise ValueError("step 1 needs at least two samples")
    scaler = scaler or CoefScaler.fit(ts.c_gold)
    z_gold = scaler.to_net(ts.c_gold)
    dims = [ts.y_sparse.shape[1], *cfg.hidden, ts.c_gold.shape[1]]
    net = init.copy() if init is not None else init_params(dims, [cfg.seed, 1])
    train_idx, val_idx = split_indices(len(ts), cfg.val_fraction, cfg.seed)

    def batch_grad(net, idx):
        out, cache = forward(net, ts.y_sparse[idx])
        _, g = mse_loss(out, z_gold[idx])
        return backward(net, cache, g)[0]

    def eval_loss(net):
        pred = forward(net, ts.y_sparse)[0]
        return mse_loss(pred[train_idx], z_gold[train_idx])[0], mse_loss(pred[val_idx], z_gold[val_idx])[0]

    net, hist = _run_epochs(net, 1, cfg, cfg.epochs_step1, train_idx, batch_grad, eval_loss)
    return net, scaler, hist


def predict_coefficients(mlp1: MLP, scaler: CoefScaler, y) -> np.ndarray:
    return scaler.to_coef(forward(mlp1, y)[0])


def build_fo_error_targets(ts: TrainingSet, mlp1: MLP, scaler: CoefScaler, setup: LeapeSetup):
    """MLP2 inputs ``[v_hat, v_gold]`` and FO-error targets in degrees."""
    c_hat = predict_coefficients(mlp1, scaler, ts.y_sparse)
    v_hat = c_hat @ setup.upsilon.T
    est = setup.peaks(c_hat)
    targets = np.array([fo_error(e, r) for e, r in zip(est, ts.fo_gold)])
    return np.hstack([v_hat, ts.v_gold]), targets


def train_step2(inputs, targets, cfg: TrainingConfig, n_dirs: int = None):
    """MLP2: MSE regression of FO errors from paired ODFs.  Returns ``(mlp2, history)``."""
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    if len(inputs) < 2 or len(inputs) != len(targets):
        raise ValueError("step 2 needs at least two (input, target) pairs")
    if n_dirs is not None and inputs.shape[1] != 2 * n_dirs:
        raise ValueError(f"MLP2 input must have {2 * n_dirs} features, got {inputs.shape[1]}")
    net = init_params([inputs.shape[1], *cfg.hidden, 1], [cfg.seed, 2])
    train_idx, val_idx = split_indices(len(inputs), cfg.val_fraction, cfg.seed)

    def batch_grad(net, idx):
        out, cache = forward(net, inputs[idx])
        _, g = mse_loss(out, targets[idx])
        return backward(net, cache, g)[0]

    def eval_loss(net):
        pred = forward(net, inputs)[0]
        return mse_loss(pred[train_idx], targets[train_idx])[0], mse_loss(pred[val_idx], targets[val_idx])[0]

    return _run_epochs(net, 2, cfg, cfg.epochs_step2, train_idx, batch_grad, eval_loss)


def step3_objective(mlp1: MLP, mlp2: MLP, y, c_gold, v_gold, upsilon, scaler: CoefScaler, alpha,
                    with_grads=True):
    """Batch sum of ``alpha ||c_hat - c||^2 + MLP2([Upsilon c_hat, v_gold])``.

    `mlp2` may be ``None`` (coefficient term only).  Returns the loss and,
    if requested, the MLP1 parameter gradients.
    """
    z_hat, cache1 = forward(mlp1, y)
    c_hat = scaler.to_coef(z_hat)
    if mlp2 is not None:
        e_tilde, cache2 = forward(mlp2, np.hstack([c_hat @ upsilon.T, v_gold]))
        e_tilde = e_tilde[:, 0]
    else:
        e_tilde = np.zeros(len(z_hat))
    loss, g_c, g_e = composite_loss(c_hat, c_gold, e_tilde, alpha)
    if not with_grads:
        return loss
    if mlp2 is not None:
        _, g_in = backward(mlp2, cache2, g_e[:, None])
        # v_hat = c_hat Upsilon^T
        g_c = g_c + g_in[:, :upsilon.shape[0]] @ upsilon
    # c_hat = mu + s z_hat
    grads, _ = backward(mlp1, cache1, scaler.scale * g_c)
    return loss, grads


def train_step3(ts: TrainingSet, mlp1: MLP, mlp2, scaler: CoefScaler, setup: LeapeSetup,
                cfg: TrainingConfig):
    """Fine-tune MLP1 on the composite objective with MLP2 frozen.

    Passing ``mlp2=None`` trains on the coefficient term alone (the MSE-only
    ablation).  Validation loss is the per-sample mean of the objective.
    Returns ``(mlp1, history)``.
    """
    if len(ts) < 2:
        raise ValueError("step 3 needs at least two samples")
    train_idx, val_idx = split_indices(len(ts), cfg.val_fraction, cfg.seed)
    upsilon = setup.upsilon

    def batch_grad(net, idx):
        return step3_objective(net, mlp2, ts.y_sparse[idx], ts.c_gold[idx], ts.v_gold[idx],
                               upsilon, scaler, cfg.alpha)[1]

    def eval_loss(net):
        def mean_loss(idx):
            return step3_objective(net, mlp2, ts.y_sparse[idx], ts.c_gold[idx], ts.v_gold[idx],
                                   upsilon, scaler, cfg.alpha, with_grads=False) / len(idx)
        return mean_loss(train_idx), mean_loss(val_idx)

    return _run_epochs(mlp1.copy(), 3, cfg, cfg.epochs_step3, train_idx, batch_grad, eval_loss)


@dataclass
class LeapeModel:
    mlp1: MLP
    scaler: CoefScaler
    setup: LeapeSetup
    sparse_scheme: GradientScheme
    mlp2: MLP = None
    config: TrainingConfig = field(default_factory=TrainingConfig)
    info: dict = field(default_factory=dict)

    def predict(self, y) -> np.ndarray:
        return predict(self, y)

    def to_bytes(self) -> bytes:
        nets = {"mlp1": self.mlp1}
        if self.mlp2 is not None:
            nets["mlp2"] = self.mlp2
        meta = {"pipeline_version": PIPELINE_VERSION,
                "setup": self.setup.describe(),
                "sparse_scheme": self.sparse_scheme.to_text(),
                "sparse_scheme_sha256": self.sparse_scheme.digest(),
                "training_config": self.config.to_dict(),
                "training_config_sha256": self.config.digest(),
                "coef_scale": self.scaler.scale,
                "fo_error_unit": "degrees",
                "info": self.info}
        arrays = {"coef_mean": self.scaler.mean, "upsilon": self.setup.upsilon}
        return save_model(nets, meta, arrays)

    @classmethod
    def from_bytes(cls, data: bytes) -> "LeapeModel":
        nets, meta, arrays = load_model(data)
        if meta.get("pipeline_version") != PIPELINE_VERSION:
            raise ValueError(f"model pipeline version {meta.get('pipeline_version')!r} "
                             f"is not supported (expected {PIPELINE_VERSION})")
        s = meta["setup"]
        setup = setup_from_description(s)
        if not np.array_equal(setup.upsilon, arrays["upsilon"]):
            raise ValueError("stored ODF matrix does not match the recorded setup")
        cfg = meta["training_config"]
        return cls(mlp1=nets["mlp1"], mlp2=nets.get("mlp2"),
                   scaler=CoefScaler(arrays["coef_mean"], meta["coef_scale"]),
                   setup=setup, sparse_scheme=GradientScheme.from_text(meta["sparse_scheme"]),
                   config=TrainingConfig(**{**cfg, "hidden": tuple(cfg["hidden"])}),
                   info=meta.get("info", {}))


def setup_from_description(s) -> LeapeSetup:
    kind, _, count = s["odf_directions"].rpartition("-")
    if kind != "fibonacci-hemisphere":
        raise ValueError(f"unknown ODF direction set {s['odf_directions']!r}")
    skind, _, sub = s["peak_sphere"].rpartition("-")
    if skind != "icosphere":
        raise ValueError(f"unknown peak sphere {s['peak_sphere']!r}")
    return LeapeSetup(ShoreBasis(s["basis"]["radial_order"], s["basis"]["zeta"]),
                      fibonacci_directions(int(count)), tessellate_sphere(int(sub)),
                      PeakConfig(**s["peak_config"]))


def predict(model: LeapeModel, y_sparse) -> np.ndarray:
    """Test-phase estimate: MLP1 only."""
    y = np.asarray(y_sparse, dtype=np.float64)
    if y.shape[-1] != len(model.sparse_scheme):
        raise ValueError(f"expected {len(model.sparse_scheme)} signals per voxel, got {y.shape[-1]}")
    return predict_coefficients(model.mlp1, model.scaler, y)


def train_leape(ts: TrainingSet, sparse_scheme: GradientScheme, setup: LeapeSetup,
                cfg: TrainingConfig, ablation: bool = False):
    """Full three-step schedule.

    With ``ablation=True`` MLP2 is never trained and step 3 continues on the
    coefficient term alone.  Returns ``(model, history)``.
    """
    mlp1, scaler, h1 = train_step1(ts, cfg)
    history = {"step1": h1}
    if ablation:
        mlp2 = None
    else:
        inputs, targets = build_fo_error_targets(ts, mlp1, scaler, setup)
        mlp2, h2 = train_step2(inputs, targets, cfg, n_dirs=len(setup.odf_dirs))
        history["step2"] = h2
        history["step2_target_mean"] = float(targets.mean())
        history["step2_target_var"] = float(targets.var())
    final, h3 = train_step3(ts, mlp1, mlp2, scaler, setup, cfg)
    history["step3"] = h3
    model = LeapeModel(final, scaler, setup, sparse_scheme, None if ablation else mlp2, cfg,
                       {"ablation_mse_only": ablation})
    return model, history

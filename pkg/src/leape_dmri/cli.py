"""Command-line driver: simulate, fit, train, predict, evaluate.

Exit codes: 0 success, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import storage
from .evaluation import evaluate
from .gradients import GradientScheme, atomic_write_bytes
from .leape import (LeapeModel, LeapeSetup, TrainingConfig, build_training_set, predict,
                    train_leape)
from .neural import ModelFormatError
from .phantom import ground_truth_features, make_corpus, make_hcp_like_scheme
from .shore_basis import ShoreBasis
from .shore_fit import FitConfig, ShoreFitter

log = logging.getLogger("leape_dmri")

SIMULATE_DEFAULTS = {"n_train": 50000, "n_test": 5000, "snr": [None, 30, 20], "scheme_seed": 0}
TRAIN_KEYS = ("alpha", "lr", "batch_size", "epochs_step1", "epochs_step2", "epochs_step3",
              "val_fraction", "hidden")


class DataError(Exception):
    pass


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise DataError("config must be a JSON object")
    return cfg


def _snr_value(s):
    # JSON has no infinity; null or "inf" mean noise-free
    return np.inf if s is None or s == "inf" else float(s)


def _snr_label(s):
    return None if np.isinf(s) else s


def cmd_simulate(args):
    cfg = {**SIMULATE_DEFAULTS, **_load_config(args.config)}
    for key in ("n_train", "n_test", "scheme_seed"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    if args.snr is not None:
        cfg["snr"] = args.snr
    cfg["seed"] = args.seed
    snrs = [_snr_value(s) for s in cfg["snr"]]
    cfg["snr"] = [_snr_label(s) for s in snrs]
    os.makedirs(args.out, exist_ok=True)
    dense, sparse, subset = make_hcp_like_scheme(cfg["scheme_seed"])
    dense_path = os.path.join(args.out, "scheme_dense.txt")
    sparse_path = os.path.join(args.out, "scheme_sparse.txt")
    dense.save(dense_path)
    sparse.save(sparse_path)
    n_train, n_test = int(cfg["n_train"]), int(cfg["n_test"])
    signals, mixtures, sample_snr = make_corpus(n_train + n_test, dense, args.seed, snrs)
    parts = {"train": slice(0, n_train), "test": slice(n_train, n_train + n_test)}
    for part, sl in parts.items():
        dpath = os.path.join(args.out, f"{part}_dense.f32")
        storage.write_array(dpath, signals[sl], scheme_path="scheme_dense.txt", corpus=cfg, part=part)
        spath = os.path.join(args.out, f"{part}_sparse.f32")
        storage.write_array(spath, signals[sl][:, subset], scheme_path="scheme_sparse.txt",
                            corpus=cfg, part=part)
        truth = []
        for mix, snr in zip(mixtures[sl], sample_snr[sl]):
            m, r, fos = ground_truth_features(mix)
            truth.append({"mixture": mix.to_dict(), "snr": _snr_label(snr), "msd": m, "rtop": r,
                          "fos": fos.tolist(), "anisotropic": True})
        atomic_write_bytes(os.path.join(args.out, f"truth_{part}.json"),
                           storage.dumps_canonical({"corpus": cfg, "samples": truth}).encode())
    atomic_write_bytes(os.path.join(args.out, "corpus.json"),
                       storage.dumps_canonical({**cfg, "sparse_subset": subset.tolist(),
                                                "scheme_dense_sha256": dense.digest()}).encode())
    log.info("wrote %d train / %d test samples to %s", n_train, n_test, args.out)
    return 0


def _basis_from(args, cfg):
    order = args.order if args.order is not None else cfg.get("radial_order", 6)
    zeta = args.zeta if args.zeta is not None else cfg.get("zeta", 700.0)
    return ShoreBasis(int(order), float(zeta))


def _fit_cfg_from(args, cfg):
    ln = args.lambda_n if args.lambda_n is not None else cfg.get("lambda_n", 1e-8)
    ll = args.lambda_l if args.lambda_l is not None else cfg.get("lambda_l", 1e-8)
    return FitConfig(float(ln), float(ll))


def cmd_fit(args):
    cfg = _load_config(args.config)
    scheme = GradientScheme.load(args.scheme)
    signals, _ = storage.read_array(args.signals)
    if signals.shape[1] != len(scheme):
        raise DataError(f"{args.signals} rows have {signals.shape[1]} samples, scheme has {len(scheme)}")
    basis, fit_cfg = _basis_from(args, cfg), _fit_cfg_from(args, cfg)
    c = ShoreFitter(scheme, basis, fit_cfg).fit(signals)
    storage.write_array(args.out, c, kind="shore-coefficients", method="conventional",
                        scheme_path=storage.relative_to(args.scheme, args.out),
                        scheme_sha256=scheme.digest(),
                        basis={"N": basis.radial_order, "zeta": basis.zeta},
                        fit={"lambda_n": fit_cfg.lambda_n, "lambda_l": fit_cfg.lambda_l})
    return 0


def _training_signals_path(corpus):
    return os.path.join(corpus, "train_dense.f32") if os.path.isdir(corpus) else corpus


def cmd_train(args):
    cfg = _load_config(args.config)
    tcfg = {k: cfg[k] for k in TRAIN_KEYS if k in cfg}
    for k in ("alpha", "lr", "batch_size", "epochs_step1", "epochs_step2", "epochs_step3"):
        if getattr(args, k) is not None:
            tcfg[k] = getattr(args, k)
    if args.hidden is not None:
        tcfg["hidden"] = args.hidden
    tcfg["seed"] = args.seed
    train_cfg = TrainingConfig(**tcfg)
    dense = GradientScheme.load(args.scheme_dense)
    sparse = GradientScheme.load(args.scheme_sparse)
    try:
        subset = sparse.locate_in(dense)
    except ValueError as exc:
        raise DataError(f"sparse scheme is not a subset of the dense scheme: {exc}") from None
    signals, _ = storage.read_array(_training_signals_path(args.corpus))
    if signals.shape[1] != len(dense):
        raise DataError("training signals do not match the dense scheme")
    setup = LeapeSetup(basis=_basis_from(args, cfg))
    ts = build_training_set(signals, dense, subset, setup, _fit_cfg_from(args, cfg))
    model, history = train_leape(ts, sparse, setup, train_cfg, ablation=args.ablation_mse_only)
    model.info.update({"dense_scheme_sha256": dense.digest(), "sparse_subset": subset.tolist(),
                       "n_training_samples": len(ts),
                       "fit": {"lambda_n": _fit_cfg_from(args, cfg).lambda_n,
                               "lambda_l": _fit_cfg_from(args, cfg).lambda_l},
                       "history": history})
    atomic_write_bytes(args.out, model.to_bytes())
    return 0


def cmd_predict(args):
    try:
        with open(args.model, "rb") as fh:
            model = LeapeModel.from_bytes(fh.read())
    except ModelFormatError as exc:
        raise DataError(f"{args.model}: {exc}") from None
    signals, meta = storage.read_array(args.signals)
    if signals.shape[1] != len(model.sparse_scheme):
        subset = model.info.get("sparse_subset")
        if subset is None or signals.shape[1] <= max(subset):
            raise DataError(f"signals have {signals.shape[1]} samples per row, model expects "
                            f"{len(model.sparse_scheme)}")
        signals = signals[:, subset]
    c = predict(model, signals)
    basis = model.setup.basis
    storage.write_array(args.out, c, kind="shore-coefficients",
                        method="leape-mse-only" if model.info.get("ablation_mse_only") else "leape",
                        basis={"N": basis.radial_order, "zeta": basis.zeta},
                        training_config_sha256=model.config.digest())
    return 0


def _parse_pred(item):
    name, sep, path = item.partition("=")
    if not sep:
        path = item
        name = os.path.splitext(os.path.basename(item))[0]
    return name, path


def cmd_evaluate(args):
    gold, gmeta = storage.read_array(args.gold)
    basis_meta = gmeta.get("basis", {"N": 6, "zeta": 700.0})
    setup = LeapeSetup(basis=ShoreBasis(int(basis_meta["N"]), float(basis_meta["zeta"])))
    preds, sources = {}, {}
    for item in args.pred:
        name, path = _parse_pred(item)
        if name in preds:
            raise DataError(f"duplicate prediction name {name!r}")
        c, meta = storage.read_array(path)
        if meta.get("basis", basis_meta) != basis_meta:
            raise DataError(f"{path}: basis {meta.get('basis')} differs from gold {basis_meta}")
        preds[name] = c
        sources[name] = {"file": os.path.basename(path), "sidecar": meta}
    mask = None
    truth_info = None
    if args.truth:
        try:
            with open(args.truth, encoding="utf-8") as fh:
                truth = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read truth file: {exc}") from None
        mask = np.array([s.get("anisotropic", True) for s in truth["samples"]])
        if len(mask) != len(gold):
            raise DataError("truth file sample count does not match gold")
        truth_info = {"file": os.path.basename(args.truth), "corpus": truth.get("corpus")}
    config = {"gold": {"file": os.path.basename(args.gold), "sidecar": gmeta},
              "predictions": sources, "truth": truth_info, "setup": setup.describe()}
    report = evaluate(gold, preds, setup, mask, config)
    atomic_write_bytes(args.report, storage.dumps_canonical(report.to_dict()).encode("utf-8"))
    table = report.table()
    atomic_write_bytes(os.path.splitext(args.report)[0] + ".txt", table.encode("utf-8"))
    sys.stdout.write(table)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="leape-dmri", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic corpus")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--n-train", dest="n_train", type=int)
    s.add_argument("--n-test", dest="n_test", type=int)
    s.add_argument("--scheme-seed", dest="scheme_seed", type=int)
    s.add_argument("--snr", nargs="+", help="SNR values; 'inf' for noise-free")
    s.set_defaults(func=cmd_simulate)

    def basis_flags(q):
        q.add_argument("--config")
        q.add_argument("--lambda-n", dest="lambda_n", type=float)
        q.add_argument("--lambda-l", dest="lambda_l", type=float)
        q.add_argument("--zeta", type=float)
        q.add_argument("--order", type=int)

    f = sub.add_parser("fit", help="conventional SHORE fit")
    f.add_argument("--scheme", required=True)
    f.add_argument("--signals", required=True)
    f.add_argument("--out", required=True)
    basis_flags(f)
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("train", help="train the two-network estimator")
    t.add_argument("--corpus", required=True, help="corpus directory or dense signal file")
    t.add_argument("--scheme-dense", dest="scheme_dense", required=True)
    t.add_argument("--scheme-sparse", dest="scheme_sparse", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--ablation-mse-only", dest="ablation_mse_only", action="store_true")
    t.add_argument("--alpha", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--epochs-step1", dest="epochs_step1", type=int)
    t.add_argument("--epochs-step2", dest="epochs_step2", type=int)
    t.add_argument("--epochs-step3", dest="epochs_step3", type=int)
    t.add_argument("--hidden", type=int, nargs="+")
    basis_flags(t)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="estimate coefficients with a trained model")
    r.add_argument("--model", required=True)
    r.add_argument("--signals", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="compare estimates with the gold standard")
    e.add_argument("--gold", required=True)
    e.add_argument("--pred", required=True, nargs="+", metavar="NAME=PATH")
    e.add_argument("--report", required=True)
    e.add_argument("--truth")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, ValueError, OSError, KeyError) as exc:
        print(f"leape-dmri {args.command}: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

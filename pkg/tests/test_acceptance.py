"""Acceptance criteria, each evaluated at its stated tolerance.

Every test records one result line; the terminal summary prints them as
``criterion N: PASS|FAIL - detail``.  Criterion 6 trains the full-size
pipeline on 50k samples and dominates the runtime (tens of minutes).
"""

import json
import os
import time

import numpy as np
import pytest

from leape_dmri.cli import main as cli_main
from leape_dmri.evaluation import paired_t_test, per_sample_errors
from leape_dmri.fo_extract import axial_angle, find_peaks, tessellate_sphere
from leape_dmri.leape import (LeapeSetup, TrainingConfig, build_training_set, predict, split_indices,
                              step3_objective, train_leape)
from leape_dmri.neural import backward, forward, init_params
from leape_dmri.phantom import (TensorMixture, ground_truth_features, make_corpus, make_hcp_like_scheme,
                                random_mixture, simulate_signal)
from leape_dmri.shore_basis import ShoreBasis, odf_matrix
from leape_dmri.shore_fit import FitConfig, ShoreFitter, eap_eval, msd, rtop

from .helpers import fourier_grid_eap, grid_moments, record_acceptance, step3_gradient_check

BASIS = ShoreBasis(6, 700.0)


@pytest.fixture(scope="module")
def schemes():
    return make_hcp_like_scheme(0)


def test_criterion_1_fourier_duality():
    rng = np.random.default_rng(0)
    C = rng.normal(size=(20, BASIS.n_c))
    R = rng.normal(scale=0.01, size=(50, 3))
    closed = eap_eval(C, R, BASIS)
    numeric = fourier_grid_eap(BASIS, C, R)
    err = np.max(np.abs(closed - numeric), axis=1) / np.max(np.abs(closed), axis=1)
    ok = record_acceptance(1, err.max() < 1e-3, f"max error / max|P| = {err.max():.2e}, tol 1e-3")
    assert ok


def test_criterion_2_round_trip(schemes):
    dense = schemes[0]
    fitter = ShoreFitter(dense, BASIS, FitConfig(0.0, 0.0))
    C0 = np.random.default_rng(1).normal(size=(100, BASIS.n_c))
    C = fitter.fit(C0 @ fitter.design.T)
    rel = np.linalg.norm(C - C0, axis=1) / np.linalg.norm(C0, axis=1)
    ok = record_acceptance(2, rel.max() < 1e-6, f"max relative error {rel.max():.2e} over 100 vectors, tol 1e-6")
    assert ok


@pytest.fixture(scope="module")
def gaussian_fits(schemes):
    dense = schemes[0]
    rng = np.random.default_rng(2)
    mixes = [random_mixture(rng, 1) for _ in range(10)]
    Y = np.array([simulate_signal(m, dense) for m in mixes])
    C = ShoreFitter(dense, BASIS, FitConfig(1e-8, 1e-8)).fit(Y)
    truth = np.array([ground_truth_features(m)[:2] for m in mixes])
    return C, truth


def test_criterion_3_msd(gaussian_fits):
    C, truth = gaussian_fits
    rel = np.abs(msd(C, BASIS) / truth[:, 0] - 1)
    ok = record_acceptance(3, rel.max() < 0.05, f"worst {100 * rel.max():.2f}%, tol 5%", "MSD vs Gaussian")
    assert ok


def test_criterion_3_rtop(gaussian_fits):
    C, truth = gaussian_fits
    rel = np.abs(rtop(C, BASIS) / truth[:, 1] - 1)
    ok = record_acceptance(3, rel.max() < 0.05, f"worst {100 * rel.max():.2f}%, median "
                           f"{100 * np.median(rel):.2f}%, tol 5%", "RTOP vs Gaussian")
    assert ok


def test_criterion_3_quadrature(gaussian_fits):
    C, _ = gaussian_fits
    _, second = grid_moments(BASIS, C)
    rel_m = np.abs(msd(C, BASIS) / second - 1).max()
    # P(0) is the integral of the q-space signal
    origin = fourier_grid_eap(BASIS, C, np.zeros((1, 3)))[:, 0]
    rel_r = np.abs(rtop(C, BASIS) / origin - 1).max()
    ok = record_acceptance(3, max(rel_m, rel_r) < 1e-3,
                           f"MSD {rel_m:.1e}, RTOP {rel_r:.1e}, tol 1e-3", "vs quadrature")
    assert ok


@pytest.mark.parametrize("angle", [45, 60, 90])
def test_criterion_4_crossings(schemes, angle):
    dense = schemes[0]
    t = np.radians(angle)
    axes = np.array([[1.0, 0.0, 0.0], [np.cos(t), np.sin(t), 0.0]])
    mix = TensorMixture((0.5, 0.5), ((1.7e-3, 0.3e-3, 0.3e-3),) * 2, tuple(map(tuple, axes)))
    c = ShoreFitter(dense, BASIS, FitConfig()).fit(simulate_signal(mix, dense))
    sphere = tessellate_sphere(2)
    peaks = find_peaks(odf_matrix(sphere, BASIS) @ c, sphere)
    errs = axial_angle(axes, peaks).min(axis=1) if len(peaks) else np.array([90.0, 90.0])
    ok = len(peaks) == 2 and bool(np.all(errs <= 10.0))
    record_acceptance(4, ok, f"{len(peaks)} peaks, errors {np.round(errs, 1).tolist()} deg", f"{angle} deg")
    assert ok


def test_criterion_5_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    net = init_params([8, 12, 12, 4], 5)
    for b in net.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    X, T = rng.normal(size=(6, 8)), rng.normal(size=(6, 4))
    out, cache = forward(net, X)
    grads, gx = backward(net, cache, out - T)

    def loss():
        return 0.5 * np.sum((net(X) - T) ** 2)

    worst, probes, h = 0.0, 0, 1e-6
    for k, (dW, db) in enumerate(grads):
        for arr, g in ((net.weights[k], dW), (net.biases[k], db)):
            flat = arr.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                fp = loss()
                flat[i] = old - h
                fm = loss()
                flat[i] = old
                num, ana = (fp - fm) / (2 * h), g.reshape(-1)[i]
                worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-8))
                probes += 1
    mlp_ok = record_acceptance(5, worst < 1e-5, f"{probes} coordinates, worst {worst:.1e}, tol 1e-5",
                               "MLP backward")
    step3 = max(step3_gradient_check(s) for s in range(3))
    elapsed = time.perf_counter() - start
    s3_ok = record_acceptance(5, step3 < 1e-4 and elapsed < 60,
                              f"worst {step3:.1e}, tol 1e-4, {elapsed:.1f}s", "step-3 objective")
    assert mlp_ok and s3_ok


# --- criterion 6: full-size pipeline ------------------------------------------

N_TRAIN, N_TEST, SNR, SEED = 50_000, 5_000, 20.0, 0


@pytest.fixture(scope="module")
def pipeline(schemes):
    dense, sparse, subset = schemes
    start = time.perf_counter()
    signals = make_corpus(N_TRAIN + N_TEST, dense, SEED, (SNR,))[0]
    setup = LeapeSetup()
    train = build_training_set(signals[:N_TRAIN], dense, subset, setup)
    test = build_training_set(signals[N_TRAIN:], dense, subset, setup)
    cfg = TrainingConfig(seed=SEED)
    leape, hist = train_leape(train, sparse, setup, cfg)
    ablation, _ = train_leape(train, sparse, setup, cfg, ablation=True)
    conventional = ShoreFitter(sparse, setup.basis, FitConfig()).fit(test.y_sparse)
    return {"setup": setup, "train": train, "test": test, "leape": leape, "history": hist,
            "ablation": ablation, "conventional": conventional, "cfg": cfg,
            "seconds": time.perf_counter() - start}


def _errors(c, test, setup):
    e = per_sample_errors(c, test.c_gold, setup, test.fo_gold)
    return e["msd"], e["rtop_cbrt"], e["fo_deg"]


def test_criterion_6a_leape_vs_conventional(pipeline):
    test, setup = pipeline["test"], pipeline["setup"]
    lm, lr, _ = _errors(predict(pipeline["leape"], test.y_sparse), test, setup)
    cm, cr, _ = _errors(pipeline["conventional"], test, setup)
    tm, pm = paired_t_test(lm, cm)
    tr, pr = paired_t_test(lr, cr)
    ok_m = lm.mean() <= cm.mean()
    ok_r = lr.mean() <= cr.mean()
    record_acceptance(6, ok_m, f"LEAPE {lm.mean():.3e} vs SHORE {cm.mean():.3e}, t={tm:.1f}, p={pm:.1e}",
                      "(a) MSD")
    record_acceptance(6, ok_r, f"LEAPE {lr.mean():.3f} vs SHORE {cr.mean():.3f}, t={tr:.1f}, p={pr:.1e}",
                      "(a) RTOP^1/3")
    assert ok_m and ok_r


def test_criterion_6b_step3_validation(pipeline):
    h3 = pipeline["history"]["step3"]
    best = min(h["val"] for h in h3)
    train, setup, model = pipeline["train"], pipeline["setup"], pipeline["leape"]
    _, va = split_indices(len(train), pipeline["cfg"].val_fraction, pipeline["cfg"].seed)
    final = step3_objective(model.mlp1, model.mlp2, train.y_sparse[va], train.c_gold[va], train.v_gold[va],
                            setup.upsilon, model.scaler, pipeline["cfg"].alpha, with_grads=False) / len(va)
    ok = final <= h3[0]["val"] and final == pytest.approx(best, rel=1e-12)
    record_acceptance(6, ok, f"start {h3[0]['val']:.4g}, returned {final:.4g}", "(b) step-3 val")
    assert ok


def test_criterion_6c_ablation_fo(pipeline):
    test, setup = pipeline["test"], pipeline["setup"]
    _, _, fo_l = _errors(predict(pipeline["leape"], test.y_sparse), test, setup)
    _, _, fo_a = _errors(predict(pipeline["ablation"], test.y_sparse), test, setup)
    t, p = paired_t_test(fo_a, fo_l)
    ok = fo_a.mean() >= fo_l.mean()
    record_acceptance(6, ok, f"ablation {fo_a.mean():.2f} vs LEAPE {fo_l.mean():.2f} deg, t={t:.1f}, p={p:.1e}; "
                      f"pipeline {pipeline['seconds'] / 60:.0f} min", "(c) FO")
    assert ok


def test_leape_coefficients_closer_than_conventional(pipeline):
    test = pipeline["test"]
    d_leape = np.linalg.norm(predict(pipeline["leape"], test.y_sparse) - test.c_gold, axis=1)
    d_conv = np.linalg.norm(pipeline["conventional"] - test.c_gold, axis=1)
    assert d_leape.mean() < d_conv.mean()


# --- criterion 7: determinism of the command-line pipeline ---------------------

def _cli_run(root):
    corpus = os.path.join(root, "corpus")
    common = ["--epochs-step1", "2", "--epochs-step2", "2", "--epochs-step3", "2",
              "--hidden", "24", "24", "--batch-size", "64"]
    steps = [
        ["simulate", "--out", corpus, "--seed", "7", "--n-train", "400", "--n-test", "60",
         "--snr", "inf", "30", "20"],
        ["train", "--corpus", corpus, "--scheme-dense", f"{corpus}/scheme_dense.txt",
         "--scheme-sparse", f"{corpus}/scheme_sparse.txt", "--out", f"{root}/model.bin", "--seed", "3", *common],
        ["train", "--corpus", corpus, "--scheme-dense", f"{corpus}/scheme_dense.txt",
         "--scheme-sparse", f"{corpus}/scheme_sparse.txt", "--out", f"{root}/ablation.bin", "--seed", "3",
         "--ablation-mse-only", *common],
        ["fit", "--scheme", f"{corpus}/scheme_dense.txt", "--signals", f"{corpus}/test_dense.f32",
         "--out", f"{root}/gold.f32"],
        ["fit", "--scheme", f"{corpus}/scheme_sparse.txt", "--signals", f"{corpus}/test_sparse.f32",
         "--out", f"{root}/shore.f32"],
        ["predict", "--model", f"{root}/model.bin", "--signals", f"{corpus}/test_sparse.f32",
         "--out", f"{root}/leape.f32"],
        ["predict", "--model", f"{root}/ablation.bin", "--signals", f"{corpus}/test_sparse.f32",
         "--out", f"{root}/ablation.f32"],
        ["evaluate", "--gold", f"{root}/gold.f32", "--pred", f"shore={root}/shore.f32",
         f"leape={root}/leape.f32", f"ablation={root}/ablation.f32", "--report", f"{root}/report.json",
         "--truth", f"{corpus}/truth_test.json"],
    ]
    for argv in steps:
        assert cli_main(argv) == 0, argv
    with open(f"{root}/report.json", "rb") as a, open(f"{root}/report.txt", "rb") as b:
        return a.read(), b.read()


def test_criterion_7_determinism(tmp_path, capsys):
    first = _cli_run(str(tmp_path / "run1"))
    second = _cli_run(str(tmp_path / "run2"))
    capsys.readouterr()
    report = json.loads(first[0])
    ok = first == second and set(report["methods"]) == {"shore", "leape", "ablation"}
    record_acceptance(7, ok, f"report.json {len(first[0])} bytes, report.txt {len(first[1])} bytes, "
                      f"{'identical' if first == second else 'different'}")
    assert ok


def test_criterion_8_t_test():
    t, p = paired_t_test([2, 4, 6, 8, 10], [1, 2, 3, 4, 5])
    ok = abs(t - 4.2426) < 1e-4 and abs(p - 0.0132) < 1e-3
    record_acceptance(8, ok, f"t = {t:.4f}, p = {p:.4f} (4 dof)")
    assert ok

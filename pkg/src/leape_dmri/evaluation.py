"""Comparison of coefficient estimates against a gold standard."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .fo_extract import fo_error
from .shore_fit import msd, rtop


class DegenerateInputError(ValueError):
    pass


def signed_cbrt(x):
    return np.cbrt(np.asarray(x, dtype=np.float64))


_TRANSFORMS = {"identity": lambda x: np.asarray(x, dtype=np.float64), "cube-root": signed_cbrt}


def metric_mean_abs_diff(a, b, transform="identity") -> float:
    """Mean of ``|t(a_i) - t(b_i)|`` with `t` the identity or the signed cube root."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("need two non-empty sequences of equal length")
    t = _TRANSFORMS[transform]
    return float(np.mean(np.abs(t(a) - t(b))))


def paired_t_test(a, b):
    """Paired Student's t-test on ``d = a - b``; returns ``(t, two-sided p)``."""
    d = np.asarray(a, dtype=np.float64).reshape(-1) - np.asarray(b, dtype=np.float64).reshape(-1)
    n = d.size
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    sd = np.std(d, ddof=1)
    if sd == 0:
        raise DegenerateInputError("differences have zero variance")
    t = float(np.mean(d) / (sd / np.sqrt(n)))
    p = float(2.0 * stats.t.sf(abs(t), n - 1))
    return t, p


def per_sample_errors(c_est, c_gold, setup, fo_gold=None):
    """Absolute MSD and RTOP^(1/3) differences and FO errors, one per sample."""
    basis = setup.basis
    d_msd = np.abs(msd(c_est, basis) - msd(c_gold, basis))
    d_rtop = np.abs(signed_cbrt(rtop(c_est, basis)) - signed_cbrt(rtop(c_gold, basis)))
    fo_gold = setup.peaks(c_gold) if fo_gold is None else fo_gold
    fo = np.array([fo_error(e, g) for e, g in zip(setup.peaks(c_est), fo_gold)])
    return {"msd": d_msd, "rtop_cbrt": d_rtop, "fo_deg": fo}


@dataclass
class EvalReport:
    methods: dict
    n_samples: int
    n_fo_samples: int
    t_tests: dict
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"methods": self.methods, "n_samples": self.n_samples,
                "n_fo_samples": self.n_fo_samples, "paired_t_tests": self.t_tests,
                "config": self.config}

    def table(self) -> str:
        rows = [("method", "MSD |diff|", "RTOP^1/3 |diff|", "FO error (deg)")]
        for name in sorted(self.methods):
            m = self.methods[name]
            rows.append((name, f"{m['msd_mean_abs_diff']:.6g}", f"{m['rtop_cbrt_mean_abs_diff']:.6g}",
                         f"{m['fo_error_mean']:.4f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.append(f"samples: {self.n_samples} (FO metric over {self.n_fo_samples})")
        for key in sorted(self.t_tests):
            res = self.t_tests[key]
            if res.get("t") is None:
                lines.append(f"{key}: degenerate ({res['note']})")
            else:
                lines.append(f"{key}: t = {res['t']:.4f}, p = {res['p']:.4g}")
        return "\n".join(lines) + "\n"


def evaluate(gold, predictions: dict, setup, fo_mask=None, config=None) -> EvalReport:
    """Compare each named coefficient array in `predictions` with `gold`.

    `fo_mask` restricts the FO metric to the flagged samples (those whose
    ground truth contains an anisotropic compartment).
    """
    gold = np.asarray(gold, dtype=np.float64)
    n = len(gold)
    mask = np.ones(n, dtype=bool) if fo_mask is None else np.asarray(fo_mask, dtype=bool)
    fo_gold = setup.peaks(gold)
    errors, methods = {}, {}
    for name in sorted(predictions):
        c = np.asarray(predictions[name], dtype=np.float64)
        if c.shape != gold.shape:
            raise ValueError(f"prediction {name!r} has shape {c.shape}, gold has {gold.shape}")
        e = per_sample_errors(c, gold, setup, fo_gold)
        e["fo_deg"] = e["fo_deg"][mask]
        errors[name] = e
        methods[name] = {"msd_mean_abs_diff": float(e["msd"].mean()),
                         "rtop_cbrt_mean_abs_diff": float(e["rtop_cbrt"].mean()),
                         "fo_error_mean": float(e["fo_deg"].mean()) if mask.any() else 0.0,
                         "fo_error_median": float(np.median(e["fo_deg"])) if mask.any() else 0.0}
    tests = {}
    for a, b in itertools.combinations(sorted(predictions), 2):
        for metric in ("msd", "rtop_cbrt", "fo_deg"):
            key = f"{a} vs {b}: {metric}"
            try:
                t, p = paired_t_test(errors[a][metric], errors[b][metric])
                tests[key] = {"t": t, "p": p, "dof": int(len(errors[a][metric]) - 1)}
            except ValueError as exc:
                tests[key] = {"t": None, "p": None, "note": str(exc)}
    return EvalReport(methods, n, int(mask.sum()), tests, config or {})

"""NLL evaluation, paired comparisons and wall-clock timing of maps."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import SampleSet

NLL_CAP = 50.0
Z95 = 1.959963984540054


@dataclass
class NllResult:
    nll: np.ndarray
    capped: int
    orientation_only: bool = False

    @property
    def n(self) -> int:
        return int(self.nll.size)

    @property
    def mean(self) -> float:
        return float(self.nll.mean()) if self.n else math.nan

    @property
    def std(self) -> float:
        return float(self.nll.std(ddof=1)) if self.n > 1 else math.nan


def eval_nll(model, test: SampleSet, cap: float = NLL_CAP) -> NllResult:
    """Per-sample negative log-likelihood, capped at ``cap`` nats.

    ``model`` is anything with ``logpdf(samples) -> array``. STeF maps yield
    orientation-only densities and are flagged as such.
    """
    orientation_only = getattr(model, "kind", "") == "stef"
    if len(test) == 0:
        return NllResult(np.zeros(0), 0, orientation_only)
    with np.errstate(invalid="ignore"):
        nll = -np.asarray(model.logpdf(test), dtype=float)
    nll = np.where(np.isnan(nll), np.inf, nll)
    over = nll > cap
    return NllResult(np.where(over, cap, nll), int(np.count_nonzero(over)), orientation_only)


@dataclass
class PairedDiff:
    mean: float
    ci_low: float
    ci_high: float
    p_value: float
    n: int

    def excludes_zero(self) -> bool:
        return self.ci_low > 0.0 or self.ci_high < 0.0


def paired_diff_ci(a, b) -> PairedDiff:
    """Mean of ``b - a`` with a normal-approximation 95% interval and the
    one-sided p-value for H0: mean difference <= 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"paired lists differ in length: {a.shape} vs {b.shape}")
    n = a.size
    if n == 0:
        return PairedDiff(math.nan, math.nan, math.nan, math.nan, 0)
    d = b - a
    mean = float(d.mean())
    se = float(d.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    if se == 0.0:
        p = 0.5 if mean == 0.0 else (0.0 if mean > 0 else 1.0)
    else:
        p = 0.5 * math.erfc(mean / se / math.sqrt(2.0))
    return PairedDiff(mean, mean - Z95 * se, mean + Z95 * se, p, n)


@dataclass
class MethodRow:
    name: str
    result: NllResult
    diff: PairedDiff | None = None
    train_seconds: float | None = None
    query_seconds: float | None = None


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    reference: str | None = None

    def to_csv(self, timings: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["method", "n", "nll_mean", "nll_std", "capped", "orientation_only",
                "diff_vs_ref", "ci_low", "ci_high", "p_one_sided"]
        if timings:
            head += ["train_s", "query_s"]
        w.writerow(head)
        for r in self.rows:
            res = r.result
            row = [r.name, res.n, _fmt(res.mean), _fmt(res.std), res.capped, int(res.orientation_only)]
            if r.diff is None:
                row += ["", "", "", ""]
            else:
                row += [_fmt(r.diff.mean), _fmt(r.diff.ci_low), _fmt(r.diff.ci_high), _fmt(r.diff.p_value)]
            if timings:
                row += [_fmt(r.train_seconds), _fmt(r.query_seconds)]
            w.writerow(row)
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'Method':<16} {'NLL':>18} {'NLL reduction':>14} {'95% CI':>20}"]
        for r in self.rows:
            res = r.result
            nll = "N/A" if res.n == 0 else f"{res.mean:.3f} ± {res.std:.3f}"
            if res.orientation_only:
                nll += "*"
            if r.diff is None:
                red, ci = "--", "--"
            else:
                red = f"{r.diff.mean:+.3f}"
                ci = f"[{r.diff.ci_low:.3f}, {r.diff.ci_high:.3f}]"
            lines.append(f"{r.name:<16} {nll:>18} {red:>14} {ci:>20}")
        if any(r.result.orientation_only for r in self.rows):
            lines.append("* orientation-only density; speed is not modelled by this method")
        if any(r.train_seconds is not None for r in self.rows):
            lines.append("")
            lines.append(f"{'Method':<16} {'Train time (s)':>16} {'Inference time (s)':>20}")
            for r in self.rows:
                lines.append(f"{r.name:<16} {_fmt(r.train_seconds, '.3f'):>16} {_fmt(r.query_seconds, '.3e'):>20}")
        return "\n".join(lines) + "\n"


def _fmt(v, spec: str = ".6f") -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "N/A"
    return format(v, spec)


def compare(models: dict, test: SampleSet, reference: str | None = None) -> EvalReport:
    """Evaluate named models on one test set; differences are (method - reference)."""
    names = list(models)
    reference = names[0] if reference is None else reference
    results = {k: eval_nll(m, test) for k, m in models.items()}
    report = EvalReport(reference=reference)
    for k in names:
        diff = None
        if k != reference and results[k].n:
            diff = paired_diff_ci(results[reference].nll, results[k].nll)
        report.rows.append(MethodRow(k, results[k], diff))
    return report


# -- timing -------------------------------------------------------------------


@dataclass
class Timing:
    seconds: list

    @property
    def mean(self) -> float:
        return float(np.mean(self.seconds))

    @property
    def std(self) -> float:
        return float(np.std(self.seconds, ddof=1)) if len(self.seconds) > 1 else 0.0


def time_build(build, repeats: int = 1):
    """Run ``build()`` ``repeats`` times; returns (last result, Timing)."""
    out = None
    secs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = build()
        secs.append(time.perf_counter() - t0)
    return out, Timing(secs)


def query_workload(bounds, n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = bounds
    return rng.uniform(x0, x1, n), rng.uniform(y0, y1, n), rng.uniform(0.0, 86400.0, n)


def time_query(model, bounds, n: int = 100_000, repeats: int = 5, warmup: int = 3, seed: int = 0,
               batched: bool = True) -> Timing:
    """Mean seconds per query over ``n`` random (x, y, t) queries, per repeat.

    With ``batched`` the model answers all queries in one vectorised call
    (``query_arrays`` when available); otherwise queries run one at a time.
    """
    x, y, t = query_workload(bounds, n, seed)
    for i in range(warmup):
        model.query(float(x[i]), float(y[i]), float(t[i]))
    secs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        if batched and hasattr(model, "query_arrays"):
            model.query_arrays(x, y, t)
        else:
            for i in range(n):
                model.query(x[i], y[i], t[i])
        secs.append((time.perf_counter() - t0) / n)
    return Timing(secs)

"""Objective-to-subjective evaluation: logistic mapping, PLCC/SROCC/RMSE,
per-codec breakdowns and parameter sweeps over a stimulus manifest."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .cloud import load_ply
from .metrics import MetricConfig, PairContext, compute_metric

log = logging.getLogger(__name__)

__all__ = [
    "FitError",
    "CorrelationError",
    "ManifestError",
    "StimulusRecord",
    "FitReport",
    "logistic",
    "logistic_fit",
    "plcc",
    "srocc",
    "rmse",
    "read_manifest",
    "write_manifest",
    "ScoreCache",
    "score_manifest",
    "fit_group",
    "evaluate_manifest",
    "EvaluationReport",
    "sweep_k",
    "sweep_variants",
    "SweepRow",
    "write_sweep_csv",
]

MANIFEST_COLUMNS = ("ref_path", "deg_path", "mos", "codec_tag", "content_tag")


class FitError(ValueError):
    pass


class CorrelationError(ValueError):
    pass


class ManifestError(ValueError):
    pass


# --------------------------------------------------------------------------
# correlation primitives
# --------------------------------------------------------------------------

def _pair(x, y, min_len):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < min_len:
        raise ValueError(f"need at least {min_len} values, got {x.size}")
    return x, y


def plcc(x, y) -> float:
    x, y = _pair(x, y, 2)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise CorrelationError("correlation undefined for a constant input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def srocc(x, y) -> float:
    """Spearman correlation: Pearson on ranks, ties get their average rank."""
    x, y = _pair(x, y, 2)
    return plcc(rankdata(x, method="average"), rankdata(y, method="average"))


def rmse(predicted, actual) -> float:
    p, a = _pair(predicted, actual, 1)
    r = p - a
    return math.sqrt(math.fsum((r * r).tolist()) / r.size)


# --------------------------------------------------------------------------
# logistic mapping
# --------------------------------------------------------------------------

def logistic(q, beta):
    """``b2 + (b1 - b2) / (1 + exp(-(q - b3) / b4))``."""
    b1, b2, b3, b4 = beta
    return b2 + (b1 - b2) * expit((np.asarray(q, dtype=np.float64) - b3) / b4)


def _jacobian(q, beta):
    b1, b2, b3, b4 = beta
    z = (q - b3) / b4
    s = expit(z)
    g = (b1 - b2) * s * (1.0 - s)
    return np.column_stack([s, 1.0 - s, -g / b4, -g * z / b4])


def _ssr(q, y, beta):
    r = y - logistic(q, beta)
    return float(r @ r)


def _lm(q, y, beta, max_iter=500, rtol=1e-10):
    """Levenberg-Marquardt on the logistic; returns (beta, ssr, converged)."""
    beta = np.array(beta, dtype=np.float64)
    cost = _ssr(q, y, beta)
    lam = 1e-3
    for _ in range(max_iter):
        if cost == 0.0:
            return beta, cost, True
        r = y - logistic(q, beta)
        J = _jacobian(q, beta)
        A = J.T @ J
        g = J.T @ r
        diag = np.maximum(np.diag(A), 1e-12 * max(np.max(np.diag(A)), 1e-300))
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = beta + step
            if not np.all(np.isfinite(trial)) or trial[3] == 0.0:
                lam *= 10.0
                continue
            new_cost = _ssr(q, y, trial)
            if new_cost <= cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            return beta, cost, True  # no downhill step left: stationary
        rel = (cost - new_cost) / cost if cost > 0 else 0.0
        beta, cost = trial, new_cost
        lam = max(lam / 10.0, 1e-12)
        if rel < rtol:
            return beta, cost, True
    return beta, cost, False


def _grid_start(q, y):
    """Best (b1..b4) over a coarse grid of b3, b4; b1, b2 solved linearly."""
    spread = float(np.std(q))
    best = None
    for b3 in np.quantile(q, np.linspace(0.05, 0.95, 19)):
        for scale in (1 / 16, 1 / 8, 1 / 4, 1 / 2, 1, 2, 4):
            for sign in (1.0, -1.0):
                b4 = sign * scale * spread
                s = expit((q - b3) / b4)
                X = np.column_stack([s, 1.0 - s])
                coef, *_ = np.linalg.lstsq(X, y, rcond=None)
                beta = np.array([coef[0], coef[1], b3, b4])
                c = _ssr(q, y, beta)
                if best is None or c < best[1]:
                    best = (beta, c)
    return best[0]


def logistic_fit(q, mos):
    """Fit the four-parameter logistic mapping objective scores to MOS.

    Starts from b1 = max MOS, b2 = min MOS, b3 = median score and
    b4 = std(score)/4 signed by the rank correlation, then runs
    Levenberg-Marquardt (stop on relative residual change < 1e-10 or 500
    iterations).  A coarse grid restart is used when that run diverges.
    Returns the fitted beta as a length-4 array.
    """
    q, y = _pair(q, mos, 5)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(y))):
        raise FitError("scores and MOS must be finite")
    if np.ptp(q) == 0:
        raise FitError("objective scores are all equal; logistic fit is undefined")
    try:
        sign = 1.0 if srocc(q, y) >= 0 else -1.0
    except CorrelationError:
        sign = 1.0
    beta0 = np.array([y.max(), y.min(), np.median(q), sign * np.std(q) / 4])
    cost0 = _ssr(q, y, beta0)
    beta, cost, converged = _lm(q, y, beta0)
    if not converged or not np.isfinite(cost) or cost > cost0:
        log.debug("logistic fit diverged from default start; retrying from grid")
        beta_g, cost_g, _ = _lm(q, y, _grid_start(q, y))
        if cost_g < cost or not np.isfinite(cost):
            beta, cost = beta_g, cost_g
    if not np.all(np.isfinite(beta)):
        raise FitError("logistic fit did not produce finite parameters")
    return beta


@dataclass
class FitReport:
    group: str
    n: int
    srocc: float | None
    plcc: float | None = None
    rmse: float | None = None
    beta: list | None = None
    predicted: list | None = None
    error: str | None = None

    def summary(self):
        return {"plcc": self.plcc, "srocc": self.srocc, "rmse": self.rmse,
                "beta": self.beta, "n": self.n}


def fit_group(q, mos, group="all") -> FitReport:
    """SROCC on raw scores; PLCC and RMSE after the logistic mapping."""
    q = np.asarray(q, dtype=np.float64)
    mos = np.asarray(mos, dtype=np.float64)
    report = FitReport(group, int(q.size), None)
    try:
        report.srocc = srocc(q, mos)
    except (CorrelationError, ValueError) as exc:
        report.error = str(exc)
        return report
    try:
        beta = logistic_fit(q, mos)
    except (FitError, ValueError) as exc:
        report.error = f"logistic fit skipped: {exc}"
        return report
    pred = logistic(q, beta)
    report.beta = [float(b) for b in beta]
    report.predicted = pred.tolist()
    report.rmse = rmse(pred, mos)
    try:
        report.plcc = plcc(pred, mos)
    except CorrelationError as exc:
        report.error = str(exc)
    return report


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StimulusRecord:
    ref_path: str
    deg_path: str
    mos: float
    codec_tag: str = ""
    content_tag: str = ""


def read_manifest(path) -> list[StimulusRecord]:
    """Parse the UTF-8 manifest CSV; relative paths resolve against its folder."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ManifestError(f"{path}: manifest is empty")
        missing = [c for c in MANIFEST_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ManifestError(f"{path}: missing column(s) {', '.join(missing)}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            try:
                mos = float(row["mos"])
            except (TypeError, ValueError):
                raise ManifestError(f"{path}:{lineno}: bad mos {row['mos']!r}") from None
            if not math.isfinite(mos):
                raise ManifestError(f"{path}:{lineno}: mos must be finite")
            records.append(StimulusRecord(
                os.path.join(base, row["ref_path"]),
                os.path.join(base, row["deg_path"]),
                mos,
                row["codec_tag"] or "",
                row["content_tag"] or "",
            ))
    if not records:
        raise ManifestError(f"{path}: manifest has no stimuli")
    return records


def write_manifest(path, records, append=False):
    exists = append and os.path.exists(path) and os.path.getsize(path) > 0
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not exists:
            w.writerow(MANIFEST_COLUMNS)
        for r in records:
            w.writerow([r.ref_path, r.deg_path, repr(float(r.mos)), r.codec_tag, r.content_tag])


# --------------------------------------------------------------------------
# scoring
# --------------------------------------------------------------------------

def _cfg_key(cfg: MetricConfig):
    return json.dumps(cfg.to_dict(), sort_keys=True)


class ScoreCache:
    """Raw metric scores keyed by (ref, deg, metric, config).

    Optionally backed by a JSON file so that re-fitting in a later run does not
    recompute metrics.
    """

    def __init__(self, path=None):
        self.path = path
        self._data = {}
        if path and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                self._data = json.load(fh)

    @staticmethod
    def key(rec, metric, cfg):
        return "|".join([rec.ref_path, rec.deg_path, metric, _cfg_key(cfg)])

    def get(self, rec, metric, cfg):
        return self._data.get(self.key(rec, metric, cfg))

    def put(self, rec, metric, cfg, value):
        self._data[self.key(rec, metric, cfg)] = value

    def __len__(self):
        return len(self._data)

    def save(self):
        if self.path:
            with open(self.path, "w", encoding="utf-8") as fh:
                json.dump(self._data, fh, sort_keys=True)


def _score_one(rec, jobs, cache):
    """Score one stimulus for every (label, metric, cfg) job.

    Returns ``(scores, failures)`` where scores maps label -> float.
    """
    scores, failures = {}, []
    todo = [(lab, m, c) for lab, m, c in jobs if cache.get(rec, m, c) is None]
    for lab, m, c in jobs:
        hit = cache.get(rec, m, c)
        if hit is not None:
            scores[lab] = hit
    if not todo:
        return scores, failures, {}
    try:
        ref = load_ply(rec.ref_path)
        deg = load_ply(rec.deg_path)
    except Exception as exc:  # noqa: BLE001 - recorded, stimulus excluded
        return scores, [{"stimulus": rec.deg_path, "metric": None, "error": str(exc)}], {}
    contexts = {}
    fresh = {}
    warnings = {}
    for lab, m, c in todo:
        ctx = contexts.get(c.color_matrix)
        if ctx is None:
            ctx = contexts[c.color_matrix] = PairContext(ref, deg, c.color_matrix)
        try:
            res = compute_metric(m, ref, deg, c, ctx)
        except Exception as exc:  # noqa: BLE001
            failures.append({"stimulus": rec.deg_path, "metric": lab, "error": str(exc)})
            continue
        scores[lab] = fresh[(m, c)] = res.value
        if res.metadata.get("warnings"):
            warnings[lab] = list(res.metadata["warnings"])
    return scores, failures, (fresh, warnings)


def score_manifest(records, jobs, cache=None, threads=1):
    """Compute raw scores for every stimulus and job.

    ``jobs`` is a list of ``(label, metric_id, MetricConfig)``.  Returns
    ``(scores, failures, warnings)``; ``scores[label]`` is a list aligned with
    ``records`` holding floats or ``None`` for failed stimuli.
    """
    cache = cache if cache is not None else ScoreCache()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda r: _score_one(r, jobs, cache), records))
    else:
        results = [_score_one(r, jobs, cache) for r in records]
    scores = {lab: [None] * len(records) for lab, _, _ in jobs}
    failures, warnings = [], {}
    # merged in manifest order so the outcome does not depend on scheduling
    for i, (rec, (sc, fl, extra)) in enumerate(zip(records, results)):
        for lab, v in sc.items():
            scores[lab][i] = v
        failures.extend(fl)
        if extra:
            fresh, warn = extra
            for (m, c), v in fresh.items():
                cache.put(rec, m, c, v)
            for lab, w in warn.items():
                warnings.setdefault(lab, []).extend(w)
    return scores, failures, warnings


def _groups(records, group_by):
    groups = {"all": list(range(len(records)))}
    if group_by:
        for i, r in enumerate(records):
            tag = getattr(r, group_by)
            groups.setdefault(tag, []).append(i)
    return groups


@dataclass
class EvaluationReport:
    fits: dict  # metric -> group -> FitReport
    scores: dict
    failures: list
    warnings: dict = field(default_factory=dict)

    def to_dict(self):
        return {m: {g: f.summary() for g, f in groups.items()}
                for m, groups in self.fits.items()}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def format_table(self):
        """Plain-text table: one row per metric, SROCC/PLCC x100 and RMSE per group."""
        group_names = []
        for groups in self.fits.values():
            for g in groups:
                if g not in group_names:
                    group_names.append(g)
        name_w = max([len("metric")] + [len(m) for m in self.fits])
        head1 = " " * name_w + "".join(f" | {g:^22}" for g in group_names)
        head2 = f"{'metric':<{name_w}}" + " | SROCC   PLCC    RMSE " * len(group_names)
        lines = [head1, head2, "-" * len(head2)]

        def cell(v, scale=1.0, digits=1):
            return "   -  " if v is None else f"{v * scale:6.{digits}f}"

        for m, groups in self.fits.items():
            row = f"{m:<{name_w}}"
            for g in group_names:
                f = groups.get(g)
                if f is None:
                    row += " | " + " " * 22
                else:
                    row += (f" | {cell(f.srocc, 100)}  {cell(f.plcc, 100)}  "
                            f"{cell(f.rmse, 1, 3)}")
            lines.append(row.rstrip())
        if self.failures:
            lines.append("")
            lines.append(f"{len(self.failures)} failure(s):")
            for f in self.failures:
                what = f" [{f['metric']}]" if f["metric"] else ""
                lines.append(f"  {f['stimulus']}{what}: {f['error']}")
        return "\n".join(lines) + "\n"


def evaluate_manifest(manifest, metrics, cfg: MetricConfig = MetricConfig(),
                      group_by="codec_tag", threads=1, cache=None) -> EvaluationReport:
    """Score every stimulus, then fit and correlate per metric and per group."""
    records = read_manifest(manifest) if isinstance(manifest, (str, os.PathLike)) else list(manifest)
    if not records:
        raise ManifestError("manifest has no stimuli")
    jobs = [(m, m, cfg) for m in metrics]
    scores, failures, warnings = score_manifest(records, jobs, cache, threads)
    mos = np.array([r.mos for r in records])
    fits = {}
    for m in metrics:
        fits[m] = {}
        for g, members in _groups(records, group_by).items():
            ok = [i for i in members if scores[m][i] is not None]
            fits[m][g] = fit_group([scores[m][i] for i in ok], mos[ok], g)
    return EvaluationReport(fits, scores, failures, warnings)


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

@dataclass
class SweepRow:
    label: str
    plcc: float | None
    srocc: float | None
    warnings: list = field(default_factory=list)


def _sweep(records, jobs, cache, threads):
    scores, failures, warnings = score_manifest(records, jobs, cache, threads)
    mos = np.array([r.mos for r in records])
    rows = []
    for lab, _, _ in jobs:
        ok = [i for i, v in enumerate(scores[lab]) if v is not None]
        f = fit_group([scores[lab][i] for i in ok], mos[ok], "all")
        rows.append(SweepRow(lab, f.plcc, f.srocc, sorted(set(warnings.get(lab, [])))))
    return rows, failures


def _records(manifest):
    return read_manifest(manifest) if isinstance(manifest, (str, os.PathLike)) else list(manifest)


def sweep_k(manifest, metric, k_values, cfg: MetricConfig = MetricConfig(),
            threads=1, cache=None):
    """Correlation of one metric as a function of the neighbourhood size."""
    jobs = [(str(k), metric, cfg.with_k(int(k))) for k in k_values]
    return _sweep(_records(manifest), jobs, cache, threads)


_COLOR_VARIANTS = {"y": "p2d-y", "u": "p2d-u", "v": "p2d-v", "yuv": "p2d-yuv"}
_JOINT_VARIANTS = {"y": "p2d-jgy", "u": "p2d-jgu", "v": "p2d-jgv", "yuv": "p2d-jgc-yuv"}


def sweep_variants(manifest, metric, variants=None, poolings=None,
                   cfg: MetricConfig = MetricConfig(), threads=1, cache=None):
    """Correlation per color component (``variants``) or per fusion pooling.

    Components map to P2D-Y/U/V/YUV, or to the joint metric of each component
    when ``metric`` is a joint one.
    """
    if (variants is None) == (poolings is None):
        raise ValueError("give exactly one of variants or poolings")
    if variants is not None:
        table = _JOINT_VARIANTS if metric in _JOINT_VARIANTS.values() else _COLOR_VARIANTS
        jobs = []
        for v in variants:
            if v.lower() not in table:
                raise ValueError(f"unknown variant {v!r}; choose from {sorted(table)}")
            jobs.append((v.lower(), table[v.lower()], cfg))
    else:
        jobs = [(p, metric, replace(cfg, fusion_pooling=p)) for p in poolings]
    return _sweep(_records(manifest), jobs, cache, threads)


def write_sweep_csv(rows, path_or_buf=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k_or_variant", "plcc", "srocc"])
    for r in rows:
        w.writerow([r.label, "" if r.plcc is None else repr(r.plcc),
                    "" if r.srocc is None else repr(r.srocc)])
    text = buf.getvalue()
    if path_or_buf is not None:
        with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text

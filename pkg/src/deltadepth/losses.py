"""Training losses (pixel-wise L1, multiscale gradient matching) and depth evaluation metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, abs_, avg_pool2x

CSV_HEADER = ["cutoff_m", "mean", "absrel", "rms", "rmslog", "d1", "d2", "d3", "count"]


def _as4d(x):
    if isinstance(x, Tensor):
        return x if x.ndim == 4 else x.reshape(1, *x.shape)
    x = np.asarray(x)
    return x if x.ndim == 4 else x[None]


def _mask4d(mask, like: Tensor) -> np.ndarray:
    m = np.asarray(mask, dtype=like.data.dtype)
    m = m if m.ndim == 4 else m[None]
    return np.broadcast_to(m, like.shape).copy()


def l1_loss(pred: Tensor, gt, valid_mask) -> Tensor:
    """Mean |pred - gt| over valid pixels, averaged over the batch."""
    pred = _as4d(pred)
    gt = Tensor(_as4d(gt), dtype=pred.data.dtype)
    m = _mask4d(valid_mask, pred)
    counts = m.reshape(m.shape[0], -1).sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("l1_loss: empty validity mask")
    weights = m / (counts[:, None, None, None] * m.shape[0])
    return (abs_(pred - gt) * weights).sum()


def _masked_pool(e: Tensor, m: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Average only valid contributors; a pooled pixel is valid if any contributor is."""
    num = avg_pool2x(e * m)
    den = avg_pool2x(Tensor(m, dtype=m.dtype)).data
    valid = (den > 0).astype(m.dtype)
    inv = np.where(den > 0, 1.0 / np.where(den > 0, den, 1.0), 0.0).astype(m.dtype)
    return num * inv, valid


def _gradient_term(e: Tensor, m: np.ndarray) -> Tensor:
    """Per-batch-element mean |dx e| over valid x-sites plus mean |dy e| over valid y-sites."""
    B = e.shape[0]
    total = None
    for axis in (2, 1):
        n = e.shape[axis]
        if n < 2:
            continue
        hi = [slice(None)] * 4
        lo = [slice(None)] * 4
        hi[axis] = slice(1, n)
        lo[axis] = slice(0, n - 1)
        diff = e[tuple(hi)] - e[tuple(lo)]
        site = m[tuple(hi)] * m[tuple(lo)]
        counts = site.reshape(B, -1).sum(axis=1)
        w = np.where(counts > 0, 1.0 / np.where(counts > 0, counts, 1.0), 0.0)
        term = (abs_(diff) * (site * w[:, None, None, None] / B).astype(m.dtype)).sum()
        total = term if total is None else total + term
    return total


def msg_loss(pred: Tensor, gt, valid_mask, scales: int = 5) -> Tensor:
    """Multiscale gradient matching: sum over scales of mean |grad(pred - gt)|.

    Scale s works on 2**s average-pooled (mask-aware) rasters; gradients are
    forward differences between valid neighbours.
    """
    pred = _as4d(pred)
    H, W = pred.shape[1:3]
    need = 2 ** (scales - 1)
    if H < need or W < need:
        raise ValueError(f"msg_loss: raster {H}x{W} too small for {scales} scales (needs >= {need})")
    m = _mask4d(valid_mask, pred)
    e = pred - Tensor(_as4d(gt), dtype=pred.data.dtype)
    e = e * m
    total = None
    for s in range(scales):
        if s:
            e, m = _masked_pool(e, m)
        term = _gradient_term(e, m)
        if term is not None:
            total = term if total is None else total + term
    return total if total is not None else Tensor(0.0, dtype=pred.data.dtype)


@dataclass
class LossReport:
    l1: list[float] = field(default_factory=list)
    msg: list[float] = field(default_factory=list)
    total: float = 0.0
    loss: Tensor | None = None


def sequence_loss(preds, gts, masks, scales: int = 5) -> LossReport:
    """Sum over time of (L1 + msg); ``loss`` holds the differentiable total."""
    if not (len(preds) == len(gts) == len(masks)):
        raise ValueError(f"sequence length mismatch: {len(preds)}, {len(gts)}, {len(masks)}")
    rep = LossReport()
    for p, g, m in zip(preds, gts, masks):
        a = l1_loss(p, g, m)
        b = msg_loss(p, g, m, scales)
        step = a + b
        rep.loss = step if rep.loss is None else rep.loss + step
        rep.l1.append(a.item())
        rep.msg.append(b.item())
    rep.total = float(sum(x + y for x, y in zip(rep.l1, rep.msg)))
    return rep


# -- evaluation metrics ----------------------------------------------------
METRIC_KEYS = ("mean", "absrel", "rms", "rmslog", "d1", "d2", "d3")


@dataclass
class CutoffMetrics:
    cutoff: float
    count: int
    mean: float | None = None
    absrel: float | None = None
    rms: float | None = None
    rmslog: float | None = None
    d1: float | None = None
    d2: float | None = None
    d3: float | None = None


@dataclass
class MetricReport:
    rows: list[CutoffMetrics]

    def __getitem__(self, cutoff: float) -> CutoffMetrics:
        for r in self.rows:
            if math.isclose(r.cutoff, cutoff):
                return r
        raise KeyError(cutoff)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            vals = [_fmt(r.cutoff)] + [_fmt(getattr(r, k)) for k in METRIC_KEYS] + [str(r.count)]
            w.writerow(vals)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricReport":
        rows = []
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected metric CSV header {header}")
        for rec in reader:
            vals = [None if v == "" else float(v) for v in rec[1:8]]
            rows.append(CutoffMetrics(float(rec[0]), int(rec[8]), *vals))
        return cls(rows)


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6g}"


class MetricAccumulator:
    """Pools per-pixel error sums across frames, then reports per cutoff."""

    def __init__(self, cutoffs):
        self.cutoffs = list(cutoffs)
        # count, |e|, |e|/gt, e^2, dlog^2, n_log, d1, d2, d3
        self._sums = {c: np.zeros(9) for c in self.cutoffs}

    def add(self, pred_m, gt_m) -> None:
        pred = np.asarray(pred_m, dtype=np.float64).ravel()
        gt = np.asarray(gt_m, dtype=np.float64).ravel()
        if pred.shape != gt.shape:
            raise ValueError(f"prediction/GT size mismatch: {pred.shape} vs {gt.shape}")
        for c in self.cutoffs:
            sel = (gt > 0) & (gt <= c)
            p, g = pred[sel], gt[sel]
            err = p - g
            pos = p > 0
            ratio = np.full(p.shape, np.inf)
            ratio[pos] = np.maximum(p[pos] / g[pos], g[pos] / p[pos])
            logd = np.log(p[pos]) - np.log(g[pos])
            self._sums[c] += [
                sel.sum(),
                np.abs(err).sum(),
                (np.abs(err) / g).sum(),
                (err * err).sum(),
                (logd * logd).sum(),
                pos.sum(),
                (ratio < 1.25).sum(),
                (ratio < 1.25**2).sum(),
                (ratio < 1.25**3).sum(),
            ]

    def report(self) -> MetricReport:
        rows = []
        for c in self.cutoffs:
            s = self._sums[c]
            n = int(s[0])
            if n == 0:
                rows.append(CutoffMetrics(c, 0))
                continue
            rows.append(
                CutoffMetrics(
                    cutoff=c,
                    count=n,
                    mean=s[1] / n,
                    absrel=s[2] / n,
                    rms=math.sqrt(s[3] / n),
                    rmslog=math.sqrt(s[4] / s[5]) if s[5] else None,
                    d1=s[6] / n,
                    d2=s[7] / n,
                    d3=s[8] / n,
                )
            )
        return MetricReport(rows)


def compute_metrics(pred_m, gt_m, cutoffs) -> MetricReport:
    """Depth metrics in meters for each cutoff; GT 0 is invalid."""
    acc = MetricAccumulator(cutoffs)
    acc.add(pred_m, gt_m)
    return acc.report()


def default_cutoffs(max_range: float) -> list[float]:
    """10/20/30 m (those not beyond half range), half range and full range, de-duplicated."""
    half = max_range / 2.0
    cands = [c for c in (10.0, 20.0, 30.0) if c <= half] + [half, float(max_range)]
    out = []
    for c in sorted(cands):
        if not any(math.isclose(c, o) for o in out):
            out.append(c)
    return out

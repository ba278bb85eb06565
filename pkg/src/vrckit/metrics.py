"""Evaluation and loss metrics: Chamfer distance, F-score, Gaussian KL,
classification accuracy.

chamfer_distance and gaussian_kl come in two flavors: a plain numpy path for
evaluation and a Tensor path that participates in the differentiation tape.
Both produce identical values; sums over points always run in a canonical
(value-sorted) order so results are invariant to point permutation bit for
bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .geometry import PointCloud

CD_REPORT_SCALE = 1.0e4   # presentation-time scaling used in result tables
DEFAULT_FSCORE_TAU = 0.01  # 1% of the unit-normalized diameter


def _pts(cloud):
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64)


def _check_nonempty(p, q, op):
    if p.shape[0] == 0 or q.shape[0] == 0:
        raise ValueError(f"{op}: clouds must be nonempty")


def _min_sq_dists(p, q):
    """Per-point squared distance from each p to its nearest q, plus indices.

    Exact elementwise (p - q)^2 arithmetic so results agree bit for bit with
    a brute-force per-row oracle; used by the evaluation paths.
    """
    n = q.shape[0]
    chunk = max(1, int(1.2e6 // n))
    mins = np.empty(p.shape[0])
    args = np.empty(p.shape[0], dtype=np.int64)
    for s in range(0, p.shape[0], chunk):
        d2 = np.sum((p[s:s + chunk, None, :] - q[None, :, :]) ** 2, axis=2)
        args[s:s + chunk] = np.argmin(d2, axis=1)   # first min on ties
        mins[s:s + chunk] = d2[np.arange(d2.shape[0]), args[s:s + chunk]]
    return mins, args


def _nearest_indices_both(p, q):
    """Argmin matches p->q and q->p from one |p|^2 - 2 p.q + |q|^2 matrix
    (training path).

    Distances are recomputed exactly by the graph on the gathered matches, so
    small rounding differences here only matter at (measure-zero) ties.
    """
    d2 = np.sum(p * p, axis=1)[:, None] - 2.0 * (p @ q.T) + np.sum(q * q, axis=1)[None, :]
    return np.argmin(d2, axis=1), np.argmin(d2, axis=0)


def _canonical_mean(values):
    return float(np.mean(np.sort(values)))


def chamfer_distance(p, q):
    """Symmetric Chamfer distance with squared Euclidean norms.

    Accepts PointClouds / arrays (returns float) or Tensors of shape (N, 3)
    (returns a scalar Tensor whose gradient flows to both clouds through the
    nearest-neighbor matches).
    """
    if isinstance(p, ad.Tensor) or isinstance(q, ad.Tensor):
        return chamfer_distance_tensor(p, q)
    pp, qq = _pts(p), _pts(q)
    _check_nonempty(pp, qq, "chamfer_distance")
    d_pq, _ = _min_sq_dists(pp, qq)
    d_qp, _ = _min_sq_dists(qq, pp)
    return _canonical_mean(d_pq) + _canonical_mean(d_qp)


def _chamfer_one_direction(p, q, match_idx):
    matched = ad.gather(q, match_idx)
    d2 = ad.sum_reduce(ad.square(ad.sub(p, matched)), axis=1)
    return ad.mean_reduce(d2, axis=0, canonical=True)


def chamfer_distance_tensor(p, q, batch=1):
    """Differentiable Chamfer distance between (N,3) coordinate tensors.

    With batch > 1 the rows of p and q hold `batch` equally sized clouds
    stacked along axis 0; matches are constrained within each cloud and the
    result is the mean of per-cloud Chamfer distances.
    """
    if not isinstance(p, ad.Tensor):
        p = ad.const(_pts(p))
    if not isinstance(q, ad.Tensor):
        q = ad.const(_pts(q))
    _check_nonempty(p.data, q.data, "chamfer_distance")
    np_, nq = p.data.shape[0], q.data.shape[0]
    if np_ % batch or nq % batch:
        raise ValueError("chamfer_distance_tensor: rows not divisible by batch")
    bp, bq = np_ // batch, nq // batch
    idx_pq = np.empty(np_, dtype=np.int64)
    idx_qp = np.empty(nq, dtype=np.int64)
    for b in range(batch):
        sp, sq = b * bp, b * bq
        a_pq, a_qp = _nearest_indices_both(p.data[sp:sp + bp], q.data[sq:sq + bq])
        idx_pq[sp:sp + bp] = a_pq + sq
        idx_qp[sq:sq + bq] = a_qp + sp
    return ad.add(_chamfer_one_direction(p, q, idx_pq),
                  _chamfer_one_direction(q, p, idx_qp))


def fscore(p, q, tau=DEFAULT_FSCORE_TAU):
    """(precision, recall, f1) at distance threshold tau (unsquared).

    precision: fraction of p within tau of some q point; recall symmetric;
    f1 their harmonic mean, 0 when both are 0.
    """
    if tau <= 0:
        raise ValueError("fscore: tau must be positive")
    pp, qq = _pts(p), _pts(q)
    _check_nonempty(pp, qq, "fscore")
    tau2 = tau * tau
    d_pq, _ = _min_sq_dists(pp, qq)
    d_qp, _ = _min_sq_dists(qq, pp)
    precision = float(np.count_nonzero(d_pq <= tau2)) / pp.shape[0]
    recall = float(np.count_nonzero(d_qp <= tau2)) / qq.shape[0]
    if precision + recall == 0.0:
        return 0.0, 0.0, 0.0
    f1 = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


@dataclass
class LatentDistribution:
    """Diagonal Gaussian: mean and log-variance vectors (arrays or Tensors)."""

    mu: object
    logvar: object

    @property
    def dim(self):
        mu = self.mu.data if isinstance(self.mu, ad.Tensor) else np.asarray(self.mu)
        return mu.shape[-1]

    @staticmethod
    def standard(dim):
        return LatentDistribution(np.zeros(dim), np.zeros(dim))


def gaussian_kl(q, p):
    """Closed-form KL[q || p] for diagonal Gaussians; differentiable on Tensors.

    0.5 * sum( exp(lq - lp) + (mq - mp)^2 * exp(-lp) - 1 + lp - lq )
    """
    tensor_mode = any(isinstance(x, ad.Tensor) for x in (q.mu, q.logvar, p.mu, p.logvar))
    if not tensor_mode:
        mq, lq = np.asarray(q.mu, dtype=np.float64), np.asarray(q.logvar, dtype=np.float64)
        mp_, lp = np.asarray(p.mu, dtype=np.float64), np.asarray(p.logvar, dtype=np.float64)
        if mq.shape != mp_.shape or lq.shape != lp.shape:
            raise ad.ShapeMismatchError(
                f"gaussian_kl: dimension mismatch {mq.shape} vs {mp_.shape}")
        if not (np.all(np.isfinite(lq)) and np.all(np.isfinite(lp))):
            raise ValueError("gaussian_kl: log-variances must be finite")
        term = np.exp(lq - lp) + (mq - mp_) ** 2 * np.exp(-lp) - 1.0 + (lp - lq)
        return 0.5 * float(np.sum(term))

    mq = q.mu if isinstance(q.mu, ad.Tensor) else ad.const(q.mu)
    lq = q.logvar if isinstance(q.logvar, ad.Tensor) else ad.const(q.logvar)
    mp_ = p.mu if isinstance(p.mu, ad.Tensor) else ad.const(p.mu)
    lp = p.logvar if isinstance(p.logvar, ad.Tensor) else ad.const(p.logvar)
    if mq.data.shape != mp_.data.shape:
        raise ad.ShapeMismatchError(
            f"gaussian_kl: dimension mismatch {mq.data.shape} vs {mp_.data.shape}")
    ratio = ad.exp(ad.sub(lq, lp))
    mdiff = ad.mul(ad.square(ad.sub(mq, mp_)), ad.exp(ad.scale(lp, -1.0)))
    logterm = ad.sub(lp, lq)
    total = ad.sum_reduce(ad.add(ad.add(ratio, mdiff), logterm))
    total = ad.sub(total, ad.const(np.array(float(mq.data.size))))
    return ad.scale(total, 0.5)


def classification_metrics(pred_labels, true_labels, categories):
    """(overall accuracy, unweighted mean of per-category accuracies)."""
    if len(pred_labels) != len(true_labels):
        raise ValueError("classification_metrics: length mismatch")
    cats = set(categories)
    for lab in list(pred_labels) + list(true_labels):
        if lab not in cats:
            raise ValueError(f"classification_metrics: unknown label '{lab}'")
    if not true_labels:
        raise ValueError("classification_metrics: empty label lists")
    correct = {}
    total = {}
    hits = 0
    for pred, true in zip(pred_labels, true_labels):
        total[true] = total.get(true, 0) + 1
        if pred == true:
            correct[true] = correct.get(true, 0) + 1
            hits += 1
    acc = hits / len(true_labels)
    per_cat = [correct.get(c, 0) / total[c] for c in categories if c in total]
    return acc, float(np.mean(per_cat))


@dataclass
class MetricReport:
    """Aggregate completion metrics; cd is presentation-scaled (x 1e4)."""

    cd: float
    fscore: float
    precision: float
    recall: float
    per_category: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "cd": self.cd,
            "fscore": self.fscore,
            "precision": self.precision,
            "recall": self.recall,
            "per_category": {
                c: {"cd": v[0], "fscore": v[1], "count": v[2]}
                for c, v in sorted(self.per_category.items())
            },
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @staticmethod
    def from_samples(samples, tau=DEFAULT_FSCORE_TAU):
        """Build a report from (category, cd_raw, precision, recall, f1) rows.

        Averages are unweighted means over categories, mirroring per-category
        result tables.
        """
        by_cat = {}
        for cat, cd_raw, prec, rec, f1 in samples:
            by_cat.setdefault(cat, []).append((cd_raw, prec, rec, f1))
        per_category = {}
        for cat, rows in by_cat.items():
            arr = np.asarray(rows)
            per_category[cat] = (float(arr[:, 0].mean()) * CD_REPORT_SCALE,
                                 float(arr[:, 3].mean()), len(rows))
        cats = sorted(per_category)
        cd_avg = float(np.mean([per_category[c][0] for c in cats]))
        f1_avg = float(np.mean([per_category[c][1] for c in cats]))
        all_rows = np.asarray([r for rows in by_cat.values() for r in rows])
        return MetricReport(
            cd=cd_avg,
            fscore=f1_avg,
            precision=float(all_rows[:, 1].mean()),
            recall=float(all_rows[:, 2].mean()),
            per_category=per_category,
        )

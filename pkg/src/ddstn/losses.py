"""Training objectives.

Every loss takes :class:`~ddstn.autodiff.Tensor` operands (plain arrays are
lifted to constants) and returns a scalar Tensor, so the result can be fed to
:func:`ddstn.autodiff.backward`. Batch sums are taken as means, which keeps
the weights ``C1``/``C2`` independent of the batch size.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigError, ContractError, DataError, DimensionError
from .networks import BoundNetwork, NetworkParams

MMD_KERNELS = ("linear", "rbf")
COUPLINGS = ("symmetric", "target", "source")
DEFAULT_BANK_SCALES = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class Hyperparams:
    """Loss weights.

    ``bandwidths=None`` with the rbf kernel means "median heuristic", resolved
    once by the trainer from the first batch.
    """

    C1: float = 1.0
    C2: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 0.5
    mmd_kernel: str = "linear"
    bandwidths: tuple[float, ...] | None = None
    lupi_penalty: float = 1.0
    include_paired_target: bool = False

    def __post_init__(self):
        for name in ("C1", "C2", "lambda1", "lambda2"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be a finite non-negative number, got {v!r}")
        if not np.isfinite(self.lupi_penalty) or self.lupi_penalty <= 0:
            raise ConfigError(f"lupi_penalty must be positive, got {self.lupi_penalty!r}")
        if self.mmd_kernel not in MMD_KERNELS:
            raise ConfigError(f"mmd_kernel must be one of {MMD_KERNELS}, got {self.mmd_kernel!r}")
        if self.bandwidths is not None:
            bw = tuple(float(g) for g in self.bandwidths)
            _check_bandwidths(bw)
            object.__setattr__(self, "bandwidths", bw)

    def to_dict(self) -> dict:
        return {
            "C1": self.C1,
            "C2": self.C2,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "mmd_kernel": self.mmd_kernel,
            "bandwidths": list(self.bandwidths) if self.bandwidths is not None else None,
            "lupi_penalty": self.lupi_penalty,
            "include_paired_target": self.include_paired_target,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Hyperparams:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameter(s): {', '.join(sorted(unknown))}")
        d = dict(d)
        if d.get("bandwidths") is not None:
            d["bandwidths"] = tuple(d["bandwidths"])
        return cls(**d)

    def replace(self, **changes) -> Hyperparams:
        return replace(self, **changes)


def _check_bandwidths(bandwidths: Sequence[float]) -> None:
    if len(bandwidths) == 0:
        raise ConfigError("bandwidth list must be non-empty")
    for g in bandwidths:
        if not np.isfinite(g) or g <= 0:
            raise ConfigError(f"bandwidths must be positive, got {g!r}")


def _lift(*xs) -> list[ad.Tensor]:
    return ad._lift_all(*xs)


def _check_labels(y: np.ndarray) -> None:
    bad = ~np.isin(y, (-1.0, 1.0))
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DataError(f"label {y[i]!r} at position {i} is not -1 or +1")


def _vector(t: ad.Tensor, name: str) -> None:
    if t.ndim != 1:
        raise DimensionError(f"{name} must be a vector, got shape {t.shape}")
    if t.shape[0] == 0:
        raise ContractError(f"{name} is empty")


def hinge_loss(scores, labels) -> ad.Tensor:
    """mean_i max(0, 1 - y_i s_i)."""
    scores, labels = _lift(scores, labels)
    _vector(scores, "scores")
    if labels.shape != scores.shape:
        raise ContractError(f"hinge_loss: {scores.shape[0]} scores but labels of shape {labels.shape}")
    _check_labels(labels.value)
    return ad.mean(ad.relu(ad.sub(1.0, ad.mul(labels, scores))))


def svmplus_paired_loss(target_scores, slack, labels, penalty: float = 1.0) -> ad.Tensor:
    """Penalty form of the SVM+ problem on paired samples.

    ``slack`` are the correcting-channel outputs. Returns
    ``mean_i [ max(0, xi_i) + penalty * max(0, 1 - y_i s_i - max(0, xi_i)) ]``:
    the clamped slack is what gets minimised, the second term charges for
    violating ``y_i s_i >= 1 - xi_i``.
    """
    target_scores, slack, labels = _lift(target_scores, slack, labels)
    _vector(target_scores, "target_scores")
    if slack.shape != target_scores.shape or labels.shape != target_scores.shape:
        raise ContractError(
            "svmplus_paired_loss: length mismatch "
            f"(scores {target_scores.shape}, slack {slack.shape}, labels {labels.shape})"
        )
    _check_labels(labels.value)
    if penalty <= 0:
        raise ConfigError(f"penalty must be positive, got {penalty!r}")
    xi = ad.clamp_min0(slack)
    violation = ad.relu(ad.sub(ad.sub(1.0, ad.mul(labels, target_scores)), xi))
    return ad.mean(ad.add(xi, ad.scale(violation, penalty)))


def _feature_pair(fs, ft) -> tuple[ad.Tensor, ad.Tensor]:
    fs, ft = _lift(fs, ft)
    if fs.ndim != 2 or ft.ndim != 2:
        raise DimensionError(f"features must be matrices, got {fs.shape} and {ft.shape}")
    if fs.shape[1] != ft.shape[1]:
        raise ContractError(f"feature dimensions differ: {fs.shape[1]} vs {ft.shape[1]}")
    if fs.shape[0] < 1 or ft.shape[0] < 1:
        raise ContractError("feature sets must be non-empty")
    return fs, ft


def _row_mean(x: ad.Tensor) -> ad.Tensor:
    return ad.mean(x, axis=0)


def mmd2_linear(fs, ft) -> ad.Tensor:
    """Squared distance between the feature means."""
    fs, ft = _feature_pair(fs, ft)
    return ad.sum(ad.square(ad.sub(_row_mean(fs), _row_mean(ft))))


def _sq_dists(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    g = a.graph
    na, nb = a.shape[0], b.shape[0]
    sa = ad.reshape(ad.sum(ad.square(a), axis=1), (na, 1))
    sb = ad.reshape(ad.sum(ad.square(b), axis=1), (1, nb))
    cross = ad.matmul(a, ad.transpose(b))
    outer = ad.add(
        ad.matmul(sa, g.constant(np.ones((1, nb)))), ad.matmul(g.constant(np.ones((na, 1))), sb)
    )
    return ad.sub(outer, ad.scale(cross, 2.0))


def mmd2_rbf(fs, ft, bandwidths: Sequence[float]) -> ad.Tensor:
    """Biased squared MMD with Gaussian kernels exp(-gamma ||x - y||^2), averaged over the bank."""
    bandwidths = tuple(float(g) for g in bandwidths)
    _check_bandwidths(bandwidths)
    fs, ft = _feature_pair(fs, ft)
    d_ss, d_tt, d_st = _sq_dists(fs, fs), _sq_dists(ft, ft), _sq_dists(fs, ft)
    terms = []
    for gamma in bandwidths:
        k_ss = ad.mean(ad.exp(ad.scale(d_ss, -gamma)))
        k_tt = ad.mean(ad.exp(ad.scale(d_tt, -gamma)))
        k_st = ad.mean(ad.exp(ad.scale(d_st, -gamma)))
        terms.append(ad.sub(ad.add(k_ss, k_tt), ad.scale(k_st, 2.0)))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / len(terms))


def _covariance(x: ad.Tensor) -> ad.Tensor:
    n = x.shape[0]
    ones = x.graph.constant(np.ones((n, 1)))
    centered = ad.sub(x, ad.matmul(ones, ad.reshape(_row_mean(x), (1, x.shape[1]))))
    return ad.scale(ad.matmul(ad.transpose(centered), centered), 1.0 / (n - 1))


def coral_loss(fs, ft) -> ad.Tensor:
    """||cov(fs) - cov(ft)||_F^2 / (4 d^2), sample covariances."""
    fs, ft = _feature_pair(fs, ft)
    if fs.shape[0] < 2 or ft.shape[0] < 2:
        raise ContractError(
            f"coral_loss needs at least 2 samples per side, got {fs.shape[0]} and {ft.shape[0]}"
        )
    d = fs.shape[1]
    diff = ad.sub(_covariance(fs), _covariance(ft))
    return ad.scale(ad.sum(ad.square(diff)), 1.0 / (4.0 * d * d))


def median_heuristic_gamma(features: np.ndarray) -> float:
    """1 / (2 median^2) of the pairwise Euclidean distances (distinct pairs).

    Falls back to 1.0 when the median distance is 0.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] < 2:
        return 1.0
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    iu = np.triu_indices(x.shape[0], k=1)
    med = float(np.median(np.sqrt(np.maximum(d2[iu], 0.0))))
    if not np.isfinite(med) or med <= 0:
        return 1.0
    return 1.0 / (2.0 * med * med)


def kernel_bank(gamma: float, scales: Sequence[float] = DEFAULT_BANK_SCALES) -> tuple[float, ...]:
    return tuple(gamma * s for s in scales)


def discrepancy(fs, ft, kind: str, bandwidths: Sequence[float] | None = None) -> ad.Tensor:
    """Dispatch to the distribution distance named by ``kind`` (linear, rbf or coral)."""
    if kind == "linear":
        return mmd2_linear(fs, ft)
    if kind == "rbf":
        if bandwidths is None:
            fs_, ft_ = _feature_pair(fs, ft)
            bandwidths = (median_heuristic_gamma(np.vstack([fs_.value, ft_.value])),)
        return mmd2_rbf(fs, ft, bandwidths)
    if kind == "coral":
        return coral_loss(fs, ft)
    raise ConfigError(f"unknown discrepancy {kind!r}")


def final_layer_penalty(target: BoundNetwork, source: BoundNetwork | None, lambda1: float) -> ad.Tensor:
    """1/2 (||W_t||^2 + lambda1 ||W_s||^2) over the final dense layers only."""
    reg = ad.sum(ad.square(target.W))
    if source is not None and lambda1 > 0:
        reg = ad.add(reg, ad.scale(ad.sum(ad.square(source.W)), lambda1))
    return ad.scale(reg, 0.5)


def bind_pair(source_net, target_net) -> tuple[BoundNetwork, BoundNetwork]:
    """Put both channels on one graph; already-bound channels must share a graph."""
    if isinstance(source_net, BoundNetwork) and isinstance(target_net, BoundNetwork):
        if source_net.graph is not target_net.graph:
            raise ContractError("source and target channels are bound to different graphs")
        return source_net, target_net
    if isinstance(source_net, BoundNetwork):
        return source_net, BoundNetwork(target_net, source_net.graph)
    if isinstance(target_net, BoundNetwork):
        return BoundNetwork(source_net, target_net.graph), target_net
    if not isinstance(source_net, NetworkParams) or not isinstance(target_net, NetworkParams):
        raise ContractError("channels must be NetworkParams or BoundNetwork")
    g = ad.Graph()
    return BoundNetwork(source_net, g), BoundNetwork(target_net, g)


def _labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size == 0:
        raise ContractError("empty batch")
    _check_labels(y)
    return y


def coupled_lupi_loss(
    target_scores: ad.Tensor,
    source_scores: ad.Tensor,
    labels,
    penalty: float,
    coupling: str = "symmetric",
) -> ad.Tensor:
    """SVM+ penalty with either channel as decision function.

    ``target``: target decides, source corrects; ``source``: the reverse;
    ``symmetric``: the equal-weight average of both directions.
    """
    if coupling == "target":
        return svmplus_paired_loss(target_scores, source_scores, labels, penalty)
    if coupling == "source":
        return svmplus_paired_loss(source_scores, target_scores, labels, penalty)
    if coupling == "symmetric":
        a = svmplus_paired_loss(target_scores, source_scores, labels, penalty)
        b = svmplus_paired_loss(source_scores, target_scores, labels, penalty)
        return ad.scale(ad.add(a, b), 0.5)
    raise ConfigError(f"coupling must be one of {COUPLINGS}, got {coupling!r}")


def ddstn_objective(
    source_net,
    target_net,
    paired_batch,
    unpaired_batch,
    source_pool,
    hp: Hyperparams,
    coupling: str = "symmetric",
) -> ad.Tensor:
    """Doubly supervised objective.

    ``paired_batch`` is ``(x_s, x_t, y)``, ``unpaired_batch`` is ``(x_t, y)``
    and ``source_pool`` holds raw source-modality inputs whose penultimate
    features form the source side of the distribution match. The value is::

        1/2 (||W_t||^2 + lambda1 ||W_s||^2)
          + C1 * lupi(f_t(x_t^p), f_s(x_s^p), y^p)
          + C2 * hinge(f_t(x_t^u), y^u)
          + lambda2 * mmd2(phi_s(pool), phi_t(x_t^u))

    Channels may be NetworkParams (bound to a fresh graph) or BoundNetwork.
    """
    src, tgt = bind_pair(source_net, target_net)
    xs_p, xt_p, y_p = paired_batch
    xt_u, y_u = unpaired_batch
    y_p, y_u = _labels(y_p), _labels(y_u)
    if len(xs_p) != len(y_p) or len(xt_p) != len(y_p):
        raise ContractError("paired batch arrays have different lengths")
    if len(xt_u) != len(y_u):
        raise ContractError("unpaired batch arrays have different lengths")
    g = tgt.graph

    total = final_layer_penalty(tgt, src, hp.lambda1)
    (feat_tp, score_tp), (feat_tu, score_tu) = tgt.many(xt_p, xt_u)
    source_inputs = ([xs_p] if hp.C1 > 0 else []) + ([source_pool] if hp.lambda2 > 0 else [])
    source_out = src.many(*source_inputs) if source_inputs else []
    if hp.C1 > 0:
        _, score_sp = source_out[0]
        lupi = coupled_lupi_loss(score_tp, score_sp, y_p, hp.lupi_penalty, coupling)
        total = ad.add(total, ad.scale(lupi, hp.C1))

    hinge_scores, hinge_labels, target_feats = score_tu, y_u, feat_tu
    if hp.include_paired_target:
        hinge_scores = ad.concat([score_tp, score_tu])
        hinge_labels = np.concatenate([y_p, y_u])
        target_feats = ad.concat([feat_tp, feat_tu])
    if hp.C2 > 0:
        total = ad.add(total, ad.scale(hinge_loss(hinge_scores, g.constant(hinge_labels)), hp.C2))

    if hp.lambda2 > 0:
        feat_pool, _ = source_out[-1]
        mmd = discrepancy(feat_pool, target_feats, hp.mmd_kernel, hp.bandwidths)
        total = ad.add(total, ad.scale(mmd, hp.lambda2))
    return total

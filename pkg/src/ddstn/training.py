"""Optimisers and training loops for the doubly supervised method and its baselines."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .datagen import BimodalDataset
from .exceptions import ConfigError, ContractError, DataError
from .losses import (
    Hyperparams,
    bind_pair,
    ddstn_objective,
    discrepancy,
    final_layer_penalty,
    hinge_loss,
    kernel_bank,
    median_heuristic_gamma,
)
from .networks import (
    BoundNetwork,
    LayerSpec,
    NetworkParams,
    build_network,
    forward,
    image_backbone,
    parse_spec,
    vector_backbone,
)

ALGORITHMS = ("ddstn", "cnn_svm", "cnn_svm_plus", "ddc", "dan", "deep_coral")
BASELINES = ALGORITHMS[1:]
COUPLING_MODES = ("symmetric", "epoch_alternate")


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.method not in ("sgd", "adam"):
            raise ConfigError(f"optimizer method must be 'sgd' or 'adam', got {self.method!r}")
        if not self.lr >= 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("adam needs 0 <= beta1, beta2 < 1 and eps > 0")


@dataclass
class OptimizerState:
    config: OptimizerConfig
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def init_optimizer(params: Sequence[np.ndarray], config: OptimizerConfig = OptimizerConfig()) -> OptimizerState:
    state = OptimizerState(config)
    if config.method == "adam":
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    return state


def optimizer_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState
) -> tuple[list[np.ndarray], OptimizerState]:
    """One update. Returns new parameter arrays; the state is advanced in place."""
    if len(params) != len(grads):
        raise ContractError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g):
            raise ContractError(f"parameter {i}: shape {np.shape(p)} but gradient {np.shape(g)}")
    cfg = state.config
    state.step += 1
    if cfg.method == "sgd":
        return [p - cfg.lr * g for p, g in zip(params, grads)], state
    if len(state.m) != len(params):
        raise ContractError("optimizer state was initialised for different parameters")
    t = state.step
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(p - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps))
    return out, state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    paired_batch_size: int = 32
    unpaired_batch_size: int = 32
    optimizer: OptimizerConfig = OptimizerConfig()
    hyperparams: Hyperparams = Hyperparams()
    coupling_mode: str = "symmetric"
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.epochs, (int, np.integer)) or self.epochs < 0:
            raise ConfigError(f"epochs must be an integer >= 0, got {self.epochs!r}")
        for name in ("paired_batch_size", "unpaired_batch_size"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        if self.coupling_mode not in COUPLING_MODES:
            raise ConfigError(f"coupling_mode must be one of {COUPLING_MODES}, got {self.coupling_mode!r}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "paired_batch_size": self.paired_batch_size,
            "unpaired_batch_size": self.unpaired_batch_size,
            "optimizer": {
                "method": self.optimizer.method,
                "lr": self.optimizer.lr,
                "beta1": self.optimizer.beta1,
                "beta2": self.optimizer.beta2,
                "eps": self.optimizer.eps,
            },
            "hyperparams": self.hyperparams.to_dict(),
            "coupling_mode": self.coupling_mode,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        known = {"epochs", "paired_batch_size", "unpaired_batch_size", "optimizer",
                 "hyperparams", "coupling_mode", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training field(s): {', '.join(sorted(unknown))}")
        if "optimizer" in d:
            try:
                d["optimizer"] = OptimizerConfig(**d["optimizer"])
            except TypeError as exc:
                raise ConfigError(f"optimizer: {exc}") from exc
        if "hyperparams" in d:
            d["hyperparams"] = Hyperparams.from_dict(d["hyperparams"])
        return cls(**d)

    def replace(self, **changes) -> TrainConfig:
        return replace(self, **changes)


@dataclass
class ChannelSpecs:
    """Layer lists and input shapes of the two channels."""

    source: list[LayerSpec]
    target: list[LayerSpec]
    source_shape: tuple[int, ...]
    target_shape: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "source": [l.to_dict() for l in self.source],
            "target": [l.to_dict() for l in self.target],
            "source_shape": list(self.source_shape),
            "target_shape": list(self.target_shape),
        }


def default_specs(ds: BimodalDataset, feature_dim: int = 32) -> ChannelSpecs:
    """Default backbones for the dataset's mode."""
    make = image_backbone if ds.mode == "image" else vector_backbone
    return ChannelSpecs(
        make(feature_dim=feature_dim),
        make(feature_dim=feature_dim),
        ds.input_shape("source"),
        ds.input_shape("target"),
    )


def coerce_specs(specs, ds: BimodalDataset) -> ChannelSpecs:
    if specs is None:
        return default_specs(ds)
    if isinstance(specs, ChannelSpecs):
        return specs
    if isinstance(specs, dict):
        return ChannelSpecs(
            parse_spec(specs["source"]),
            parse_spec(specs["target"]),
            tuple(specs.get("source_shape") or ds.input_shape("source")),
            tuple(specs.get("target_shape") or ds.input_shape("target")),
        )
    raise ConfigError(f"cannot interpret channel specs {specs!r}")


@dataclass
class TrainedModel:
    target: NetworkParams
    source: NetworkParams | None
    history: list[float]
    config: dict
    kind: str = "ddstn"
    bandwidths: tuple[float, ...] | None = None

    def equals(self, other: TrainedModel) -> bool:
        same_source = (self.source is None and other.source is None) or (
            self.source is not None and other.source is not None and self.source.equals(other.source)
        )
        return (
            self.kind == other.kind
            and self.target.equals(other.target)
            and same_source
            and self.history == other.history
            and self.bandwidths == other.bandwidths
        )


def _seeds(seed: int) -> tuple[int, int, np.random.Generator]:
    ss = np.random.SeedSequence(seed)
    t_seq, s_seq, b_seq = ss.spawn(3)
    return (
        int(t_seq.generate_state(1)[0]),
        int(s_seq.generate_state(1)[0]),
        np.random.default_rng(b_seq),
    )


def _batches(n: int, size: int, steps: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """``steps`` index batches; a fresh permutation is drawn whenever one runs out."""
    perm = rng.permutation(n)
    pos = 0
    for _ in range(steps):
        if pos >= n:
            perm = rng.permutation(n)
            pos = 0
        yield perm[pos : pos + size]
        pos += size


def epoch_schedule(
    n_paired: int, n_unpaired: int, cfg: TrainConfig, rng: np.random.Generator
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Lock-step (paired, unpaired) minibatch indices for one epoch."""
    steps = max(
        math.ceil(n_paired / cfg.paired_batch_size), math.ceil(n_unpaired / cfg.unpaired_batch_size)
    )
    p_iter = _batches(n_paired, cfg.paired_batch_size, steps, rng)
    u_iter = _batches(n_unpaired, cfg.unpaired_batch_size, steps, rng)
    return list(zip(p_iter, u_iter))


def method_hyperparams(kind: str, hp: Hyperparams) -> tuple[Hyperparams, str]:
    """Hyperparameters and distribution distance each algorithm trains with."""
    if kind == "ddstn":
        return hp, hp.mmd_kernel
    if kind == "cnn_svm":
        return hp.replace(C1=0.0, lambda1=0.0, lambda2=0.0), "none"
    if kind == "cnn_svm_plus":
        return hp.replace(lambda2=0.0), "none"
    if kind in ("ddc", "dan"):
        return hp.replace(mmd_kernel="rbf"), "rbf"
    if kind == "deep_coral":
        return hp, "coral"
    raise ConfigError(f"unknown algorithm {kind!r}; expected one of {ALGORITHMS}")


def method_objective(
    kind: str,
    source,
    target,
    paired_batch,
    unpaired_batch,
    source_pool,
    hp: Hyperparams,
    coupling: str = "symmetric",
) -> ad.Tensor:
    """Loss of one minibatch step for ``kind``.

    ``ddstn`` and ``cnn_svm_plus`` use the coupled objective. ``cnn_svm`` is
    a hinge over every labelled target sample in the step. ``ddc``/``dan``/
    ``deep_coral`` put an independent hinge on each channel (target: all
    labelled target samples; source: the paired source samples) plus the
    distribution distance between source-pool and unpaired-target features.
    """
    hp, dist = method_hyperparams(kind, hp)
    if kind in ("ddstn", "cnn_svm_plus"):
        return ddstn_objective(source, target, paired_batch, unpaired_batch, source_pool, hp, coupling)

    src, tgt = bind_pair(source, target)
    g = tgt.graph
    xs_p, xt_p, y_p = paired_batch
    xt_u, y_u = unpaired_batch
    (feat_tp, score_tp), (feat_tu, score_tu) = tgt.many(xt_p, xt_u)
    y_all = g.constant(np.concatenate([np.asarray(y_p, float), np.asarray(y_u, float)]))
    target_hinge = hinge_loss(ad.concat([score_tp, score_tu]), y_all)

    if kind == "cnn_svm":
        total = final_layer_penalty(tgt, None, 0.0)
        return ad.add(total, ad.scale(target_hinge, hp.C2))

    total = final_layer_penalty(tgt, src, hp.lambda1)
    total = ad.add(total, ad.scale(target_hinge, hp.C2))
    source_inputs = ([xs_p] if hp.C1 > 0 else []) + ([source_pool] if hp.lambda2 > 0 else [])
    source_out = src.many(*source_inputs) if source_inputs else []
    if hp.C1 > 0:
        _, score_sp = source_out[0]
        total = ad.add(total, ad.scale(hinge_loss(score_sp, g.constant(y_p)), hp.C1))
    if hp.lambda2 > 0:
        feat_pool, _ = source_out[-1]
        target_feats = ad.concat([feat_tp, feat_tu]) if hp.include_paired_target else feat_tu
        d = discrepancy(feat_pool, target_feats, dist, hp.bandwidths)
        total = ad.add(total, ad.scale(d, hp.lambda2))
    return total


def resolve_bandwidths(
    kind: str, hp: Hyperparams, source: NetworkParams, target: NetworkParams,
    source_pool: np.ndarray, first_unpaired: np.ndarray,
) -> Hyperparams:
    """Freeze rbf bandwidths from the initial features of the first batch.

    Single median-heuristic kernel for ``ddc`` (and ``ddstn`` with rbf), the
    scaled five-kernel bank for ``dan``. Explicit bandwidths are kept as given.
    """
    hp_k, dist = method_hyperparams(kind, hp)
    if dist != "rbf" or hp.bandwidths is not None or hp_k.lambda2 == 0:
        return hp
    feats = np.vstack(
        [forward(source, source_pool)["features"], forward(target, first_unpaired)["features"]]
    )
    gamma = median_heuristic_gamma(feats)
    bank = kernel_bank(gamma) if kind == "dan" else (gamma,)
    return hp.replace(bandwidths=bank)


def _check_dataset(ds: BimodalDataset) -> None:
    if ds.n_paired == 0:
        raise DataError("training needs at least one paired record")
    if ds.n_unpaired == 0:
        raise DataError("training needs at least one unpaired record")


def train(kind: str, ds: BimodalDataset, specs=None, cfg: TrainConfig = TrainConfig()) -> TrainedModel:
    """Train either channel pair for ``kind`` and return the final parameters."""
    if kind not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {kind!r}; expected one of {ALGORITHMS}")
    _check_dataset(ds)
    specs = coerce_specs(specs, ds)
    t_seed, s_seed, rng = _seeds(cfg.seed)
    target = build_network(specs.target, specs.target_shape, t_seed)
    source = build_network(specs.source, specs.source_shape, s_seed)
    if target.feature_dim != source.feature_dim:
        raise ConfigError(
            f"channel feature widths differ: source {source.feature_dim}, target {target.feature_dim}"
        )

    hp = cfg.hyperparams
    history: list[float] = []
    state = init_optimizer(target.flat() + source.flat(), cfg.optimizer)
    n_t = len(target.flat())
    for epoch in range(cfg.epochs):
        coupling = "symmetric"
        if cfg.coupling_mode == "epoch_alternate":
            coupling = "target" if epoch % 2 == 0 else "source"
        losses = []
        for p_idx, u_idx in epoch_schedule(ds.n_paired, ds.n_unpaired, cfg, rng):
            if epoch == 0 and not losses:
                hp = resolve_bandwidths(kind, hp, source, target, ds.X_s, ds.X_tu[u_idx])
            graph = ad.Graph()
            tgt_b, src_b = BoundNetwork(target, graph), BoundNetwork(source, graph)
            loss = method_objective(
                kind,
                src_b,
                tgt_b,
                (ds.X_s[p_idx], ds.X_tp[p_idx], ds.y_p[p_idx]),
                (ds.X_tu[u_idx], ds.y_u[u_idx]),
                ds.X_s,
                hp,
                coupling,
            )
            leaves = tgt_b.flat_leaves() + src_b.flat_leaves()
            grads = ad.backward(loss, leaves)
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(f"{kind}: non-finite loss at epoch {epoch}")
            losses.append(value)
            new, state = optimizer_step(target.flat() + source.flat(), grads, state)
            target = target.with_flat(new[:n_t])
            source = source.with_flat(new[n_t:])
        history.append(float(np.mean(losses)))

    config = {"kind": kind, "train": cfg.to_dict(), "specs": specs.to_dict()}
    config["train"]["hyperparams"] = hp.to_dict()
    return TrainedModel(
        target,
        None if kind == "cnn_svm" else source,
        history,
        config,
        kind,
        hp.bandwidths,
    )


def train_ddstn(ds: BimodalDataset, specs=None, cfg: TrainConfig = TrainConfig()) -> TrainedModel:
    return train("ddstn", ds, specs, cfg)


def train_baseline(kind: str, ds: BimodalDataset, specs=None, cfg: TrainConfig = TrainConfig()) -> TrainedModel:
    if kind not in BASELINES:
        raise ConfigError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    return train(kind, ds, specs, cfg)


def write_history(model: TrainedModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(model.history):
            w.writerow([i, format(v, ".17g")])

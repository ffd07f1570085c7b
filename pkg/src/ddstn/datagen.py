"""Synthetic bimodal data, CSV persistence and stratified fold plans.

The generator mimics the modality-imbalance regime: a small set of records
that carry both a (more informative) source modality and the target
modality, and a larger set that only has the target modality.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError

IMAGE_SIZE = 12


@dataclass(frozen=True)
class GenConfig:
    n_paired: int = 106
    n_unpaired: int = 159
    dim_s: int = 8
    dim_t: int = 8
    separation_s: float = 1.6
    separation_t: float = 0.8
    noise_s: float = 0.6
    noise_t: float = 1.0
    cross_corr: float = 0.7
    mode: str = "vector"
    seed: int = 0

    def __post_init__(self):
        for name in ("n_paired", "n_unpaired", "dim_s", "dim_t"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        for name in ("noise_s", "noise_t"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)!r}")
        for name in ("separation_s", "separation_t"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)!r}")
        if not 0.0 <= self.cross_corr <= 1.0:
            raise ConfigError(f"cross_corr must lie in [0, 1], got {self.cross_corr!r}")
        if self.mode not in ("vector", "image"):
            raise ConfigError(f"mode must be 'vector' or 'image', got {self.mode!r}")

    @classmethod
    def from_dict(cls, d: dict) -> GenConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown generator field(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _rows(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if n == 0:
        # keep the feature width of an empty selection
        return x.reshape(0, x.shape[1] if x.ndim == 2 else 0)
    return x.reshape(n, -1)


@dataclass
class BimodalDataset:
    """Paired (source, target, label) records plus unpaired (target, label) records.

    Features are stored as 2-D arrays with one row per record; in image mode
    each row is a flattened ``IMAGE_SIZE x IMAGE_SIZE`` grid.
    """

    paired_ids: list[str]
    X_s: np.ndarray
    X_tp: np.ndarray
    y_p: np.ndarray
    unpaired_ids: list[str]
    X_tu: np.ndarray
    y_u: np.ndarray
    mode: str = "vector"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X_s = _rows(self.X_s, len(self.paired_ids))
        self.X_tp = _rows(self.X_tp, len(self.paired_ids))
        self.y_p = np.asarray(self.y_p, dtype=np.float64)
        self.X_tu = _rows(self.X_tu, len(self.unpaired_ids))
        self.y_u = np.asarray(self.y_u, dtype=np.float64)
        self.paired_ids = [str(i) for i in self.paired_ids]
        self.unpaired_ids = [str(i) for i in self.unpaired_ids]
        self.validate()

    def validate(self) -> None:
        ids = self.paired_ids + self.unpaired_ids
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise DataError(f"duplicate id {dup!r}")
        if len(self.y_p) != len(self.paired_ids) or len(self.y_u) != len(self.unpaired_ids):
            raise DataError("label count does not match record count")
        if self.X_tp.shape[1] != self.X_tu.shape[1] and self.n_paired and self.n_unpaired:
            raise DataError("paired and unpaired target features have different widths")
        for name, y in (("paired", self.y_p), ("unpaired", self.y_u)):
            bad = ~np.isin(y, (-1.0, 1.0))
            if np.any(bad):
                raise DataError(f"{name} label {y[bad][0]!r} is not -1 or +1")

    @property
    def n_paired(self) -> int:
        return len(self.paired_ids)

    @property
    def n_unpaired(self) -> int:
        return len(self.unpaired_ids)

    @property
    def dim_s(self) -> int:
        return self.X_s.shape[1]

    @property
    def dim_t(self) -> int:
        return self.X_tp.shape[1] if self.n_paired else self.X_tu.shape[1]

    def input_shape(self, which: str) -> tuple[int, ...]:
        dim = self.dim_s if which == "source" else self.dim_t
        if self.mode == "image":
            side = math.isqrt(dim)
            if side * side != dim:
                raise DataError(f"image mode needs square images, {which} rows have {dim} values")
            return (side, side)
        return (dim,)

    def subset_unpaired(self, ids) -> BimodalDataset:
        """Same paired part, unpaired part restricted to ``ids`` (in the given order)."""
        index = {i: k for k, i in enumerate(self.unpaired_ids)}
        missing = [i for i in ids if i not in index]
        if missing:
            raise DataError(f"unknown unpaired id(s): {missing[:5]}")
        rows = [index[i] for i in ids]
        return BimodalDataset(
            list(self.paired_ids), self.X_s, self.X_tp, self.y_p,
            [self.unpaired_ids[r] for r in rows], self.X_tu[rows], self.y_u[rows],
            self.mode, dict(self.meta),
        )

    def without_source(self) -> BimodalDataset:
        """Copy whose source features are zeroed (used to check source-free methods)."""
        return BimodalDataset(
            list(self.paired_ids), np.zeros_like(self.X_s), self.X_tp, self.y_p,
            list(self.unpaired_ids), self.X_tu, self.y_u, self.mode, dict(self.meta),
        )

    def equals(self, other: BimodalDataset) -> bool:
        return (
            self.paired_ids == other.paired_ids
            and self.unpaired_ids == other.unpaired_ids
            and self.mode == other.mode
            and all(
                a.shape == b.shape and np.array_equal(a, b)
                for a, b in (
                    (self.X_s, other.X_s), (self.X_tp, other.X_tp), (self.y_p, other.y_p),
                    (self.X_tu, other.X_tu), (self.y_u, other.y_u),
                )
            )
        )


def balanced_labels(n: int, rng: np.random.Generator) -> np.ndarray:
    """ceil(n/2) negatives and floor(n/2) positives in random order."""
    y = np.concatenate([-np.ones(n - n // 2), np.ones(n // 2)])
    return rng.permutation(y)


def _unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _render(z: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Blob images whose radius grows with the class score ``z``."""
    r = np.clip(3.0 + z, 0.5, 6.0)
    c = (IMAGE_SIZE - 1) / 2.0
    ii, jj = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    dist = np.sqrt((ii - c) ** 2 + (jj - c) ** 2)
    img = 1.0 / (1.0 + np.exp(-(r[:, None, None] - dist[None]) / 0.5))
    img = img + 0.25 * noise * rng.standard_normal(img.shape)
    return img.reshape(len(z), -1)


def generate_synthetic(cfg: GenConfig = GenConfig()) -> BimodalDataset:
    """Draw a dataset.

    Each record gets a class label and a latent vector ``u``. For paired
    records ``u`` is shared by both modalities:

        x = y * separation * mu + noise * (c * u + sqrt(1 - c^2) * eps)

    with per-modality unit directions ``mu`` drawn once from the seed.
    """
    rng = np.random.default_rng(cfg.seed)
    mu_s, mu_t = _unit(rng, cfg.dim_s), _unit(rng, cfg.dim_t)
    c = cfg.cross_corr
    c_perp = math.sqrt(max(0.0, 1.0 - c * c))
    d_lat = max(cfg.dim_s, cfg.dim_t)

    y_p = balanced_labels(cfg.n_paired, rng)
    y_u = balanced_labels(cfg.n_unpaired, rng)
    u_p = rng.standard_normal((cfg.n_paired, d_lat))
    u_u = rng.standard_normal((cfg.n_unpaired, d_lat))

    def draw(y, u, mu, sep, noise, dim):
        eps = rng.standard_normal((len(y), dim))
        return y[:, None] * sep * mu[None, :] + noise * (c * u[:, :dim] + c_perp * eps)

    X_s = draw(y_p, u_p, mu_s, cfg.separation_s, cfg.noise_s, cfg.dim_s)
    X_tp = draw(y_p, u_p, mu_t, cfg.separation_t, cfg.noise_t, cfg.dim_t)
    X_tu = draw(y_u, u_u, mu_t, cfg.separation_t, cfg.noise_t, cfg.dim_t)

    if cfg.mode == "image":
        X_s = _render(X_s @ mu_s, cfg.noise_s, rng)
        X_tp = _render(X_tp @ mu_t, cfg.noise_t, rng)
        X_tu = _render(X_tu @ mu_t, cfg.noise_t, rng)

    width = len(str(cfg.n_paired + cfg.n_unpaired))
    paired_ids = [f"p{i:0{width}d}" for i in range(cfg.n_paired)]
    unpaired_ids = [f"u{i:0{width}d}" for i in range(cfg.n_unpaired)]
    return BimodalDataset(
        paired_ids, X_s, X_tp, y_p, unpaired_ids, X_tu, y_u, cfg.mode, {"gen": cfg.to_dict()}
    )


@dataclass(frozen=True)
class FoldPlan:
    """Test-id lists of each fold; paired records are always in training."""

    folds: tuple[tuple[str, ...], ...]
    seed: int = 0

    @property
    def k(self) -> int:
        return len(self.folds)

    def train_ids(self, ds: BimodalDataset, fold: int) -> list[str]:
        test = set(self.folds[fold])
        return [i for i in ds.unpaired_ids if i not in test]

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "folds": [list(f) for f in self.folds]}


def make_fold_plan(ds: BimodalDataset, k: int = 3, seed: int = 0) -> FoldPlan:
    """Stratified partition of the unpaired ids into ``k`` test folds.

    Both classes are shuffled, laid end to end and dealt round-robin, so fold
    sizes and per-fold class counts each differ by at most one.
    """
    if not isinstance(k, (int, np.integer)) or k < 2:
        raise ConfigError(f"k must be an integer >= 2, got {k!r}")
    if k > ds.n_unpaired:
        raise ConfigError(f"k={k} exceeds the {ds.n_unpaired} unpaired records")
    rng = np.random.default_rng(seed)
    ids = np.array(ds.unpaired_ids, dtype=object)
    order = np.concatenate(
        [rng.permutation(np.flatnonzero(ds.y_u < 0)), rng.permutation(np.flatnonzero(ds.y_u > 0))]
    )
    folds = []
    for f in range(k):
        members = sorted(ids[order[f::k]].tolist())
        folds.append(tuple(members))
    return FoldPlan(tuple(folds), seed)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_csv(ds: BimodalDataset, path) -> None:
    """Write ``id,kind,label,s0..,t0..`` rows; unpaired rows leave the s-columns empty."""
    header = ["id", "kind", "label"]
    header += [f"s{j}" for j in range(ds.dim_s)] + [f"t{j}" for j in range(ds.dim_t)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, rid in enumerate(ds.paired_ids):
            w.writerow(
                [rid, "paired", int(ds.y_p[i])]
                + [_fmt(v) for v in ds.X_s[i]]
                + [_fmt(v) for v in ds.X_tp[i]]
            )
        for i, rid in enumerate(ds.unpaired_ids):
            w.writerow(
                [rid, "unpaired", int(ds.y_u[i])] + [""] * ds.dim_s + [_fmt(v) for v in ds.X_tu[i]]
            )


def _column_index(header: list[str], prefix: str) -> list[int]:
    cols = []
    j = 0
    while f"{prefix}{j}" in header:
        cols.append(header.index(f"{prefix}{j}"))
        j += 1
    return cols


def load_csv(path, mode: str = "vector") -> BimodalDataset:
    """Read the CSV written by :func:`save_csv`.

    Raises DataError with the 1-based file line number for bad rows.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    missing = [c for c in ("id", "kind", "label") if c not in header]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
    s_cols, t_cols = _column_index(header, "s"), _column_index(header, "t")
    if not t_cols:
        raise DataError(f"{path}: no target feature columns (t0, t1, ...)")
    i_id, i_kind = header.index("id"), header.index("kind")
    i_label = header.index("label")

    p_ids, xs, xtp, yp, u_ids, xtu, yu = [], [], [], [], [], [], []
    seen: set[str] = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}")
        rid, kind = row[i_id], row[i_kind]
        if rid in seen:
            raise DataError(f"{path}: row {lineno}: duplicate id {rid!r}")
        seen.add(rid)
        try:
            label = float(row[i_label])
        except ValueError:
            raise DataError(f"{path}: row {lineno}: label {row[i_label]!r} is not a number") from None
        if label not in (-1.0, 1.0):
            raise DataError(f"{path}: row {lineno}: label {row[i_label]!r} is not -1 or +1")
        try:
            t = [float(row[c]) for c in t_cols]
        except ValueError:
            raise DataError(f"{path}: row {lineno}: missing or non-numeric target feature") from None
        if kind == "paired":
            try:
                s = [float(row[c]) for c in s_cols]
            except ValueError:
                raise DataError(f"{path}: row {lineno}: paired row lacks source features") from None
            if not s_cols:
                raise DataError(f"{path}: row {lineno}: paired row lacks source features")
            p_ids.append(rid), xs.append(s), xtp.append(t), yp.append(label)
        elif kind == "unpaired":
            if any(row[c] != "" for c in s_cols):
                raise DataError(f"{path}: row {lineno}: unpaired row carries source features")
            u_ids.append(rid), xtu.append(t), yu.append(label)
        else:
            raise DataError(f"{path}: row {lineno}: kind {kind!r} is not paired/unpaired")

    dim_s, dim_t = len(s_cols), len(t_cols)
    return BimodalDataset(
        p_ids,
        np.array(xs, dtype=np.float64).reshape(len(p_ids), dim_s),
        np.array(xtp, dtype=np.float64).reshape(len(p_ids), dim_t),
        np.array(yp),
        u_ids,
        np.array(xtu, dtype=np.float64).reshape(len(u_ids), dim_t),
        np.array(yu),
        mode,
        {"source": str(path)},
    )

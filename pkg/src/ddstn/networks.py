"""Per-domain channels: a feature extractor followed by a linear score layer.

A channel is described by a list of :class:`LayerSpec` and an input shape.
Everything before the final ``dense(1)`` is the feature extractor; its output
is the penultimate representation used for distribution matching, and the
final layer's ``(W, b)`` are the weights that get the norm penalty.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigError, DimensionError, SpecError

LAYER_KINDS = ("dense", "conv", "maxpool2", "relu", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    size: int | None = None  # dense: output width; conv: output channels
    k: int | None = None  # conv kernel size

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.size is not None:
            d["size"] = self.size
        if self.k is not None:
            d["k"] = self.k
        return d

    @classmethod
    def from_dict(cls, d: dict) -> LayerSpec:
        if "kind" not in d:
            raise SpecError(f"layer entry {d!r} has no 'kind'")
        return cls(d["kind"], d.get("size"), d.get("k"))

    def __str__(self) -> str:
        if self.kind == "dense":
            return f"dense({self.size})"
        if self.kind == "conv":
            return f"conv({self.k},{self.size})"
        return self.kind


def dense(size: int) -> LayerSpec:
    return LayerSpec("dense", size=size)


def conv(k: int, channels: int) -> LayerSpec:
    return LayerSpec("conv", size=channels, k=k)


RELU = LayerSpec("relu")
MAXPOOL2 = LayerSpec("maxpool2")
FLATTEN = LayerSpec("flatten")


def vector_backbone(hidden: int = 64, feature_dim: int = 32) -> list[LayerSpec]:
    return [dense(hidden), RELU, dense(feature_dim), RELU, dense(1)]


def image_backbone(k: int = 3, channels: int = 8, feature_dim: int = 32) -> list[LayerSpec]:
    return [conv(k, channels), RELU, MAXPOOL2, FLATTEN, dense(feature_dim), RELU, dense(1)]


def parse_spec(entries: Sequence) -> list[LayerSpec]:
    """Accept LayerSpec objects, dicts, or short strings like ``"dense:32"``."""
    out = []
    for e in entries:
        if isinstance(e, LayerSpec):
            out.append(e)
        elif isinstance(e, dict):
            out.append(LayerSpec.from_dict(e))
        elif isinstance(e, str):
            name, *args = e.split(":")
            try:
                if name == "dense":
                    out.append(dense(int(args[0])))
                elif name == "conv":
                    out.append(conv(int(args[0]), int(args[1])))
                else:
                    out.append(LayerSpec(name))
            except (IndexError, ValueError) as exc:
                raise SpecError(f"cannot parse layer {e!r}") from exc
        else:
            raise SpecError(f"cannot parse layer {e!r}")
    return out


def infer_shapes(spec: Sequence[LayerSpec], input_shape: Sequence[int]) -> list[tuple[int, ...]]:
    """Return the activation shape after every layer (index 0 is the input).

    Raises SpecError naming the first layer that does not fit.
    """
    shape = tuple(int(s) for s in input_shape)
    if len(shape) == 2:
        shape = (1,) + shape
    if len(shape) not in (1, 3) or any(s < 1 for s in shape):
        raise SpecError(f"input shape {tuple(input_shape)} must be (d,) or (H, W)")
    if not spec:
        raise SpecError("empty layer list")
    shapes = [shape]
    for i, layer in enumerate(spec):
        where = f"layer {i} ({layer})"
        if layer.kind not in LAYER_KINDS:
            raise SpecError(f"{where}: unknown kind {layer.kind!r}")
        if layer.kind == "dense":
            if len(shape) != 1:
                raise SpecError(f"{where}: expects a flat input, got {shape}")
            if not layer.size or layer.size < 1:
                raise SpecError(f"{where}: output size must be >= 1")
            shape = (layer.size,)
        elif layer.kind == "conv":
            if len(shape) != 3:
                raise SpecError(f"{where}: expects a (C, H, W) input, got {shape}")
            if not layer.k or not layer.size or layer.k < 1 or layer.size < 1:
                raise SpecError(f"{where}: kernel size and channels must be >= 1")
            if layer.k > shape[1] or layer.k > shape[2]:
                raise SpecError(f"{where}: kernel {layer.k} larger than {shape[1:]}")
            shape = (layer.size, shape[1] - layer.k + 1, shape[2] - layer.k + 1)
        elif layer.kind == "maxpool2":
            if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
                raise SpecError(f"{where}: expects a (C, H, W) input of at least 2x2, got {shape}")
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif layer.kind == "flatten":
            if len(shape) != 3:
                raise SpecError(f"{where}: nothing to flatten in {shape}")
            shape = (shape[0] * shape[1] * shape[2],)
        shapes.append(shape)
    last = spec[-1]
    if last.kind != "dense" or last.size != 1:
        raise SpecError(f"layer {len(spec) - 1} ({last}): the final layer must be dense(1)")
    return shapes


@dataclass
class NetworkParams:
    """Layer layout plus learned weights of one channel.

    ``params[i]`` holds the arrays of layer ``i`` (``[W, b]`` for dense and
    conv, empty otherwise).
    """

    spec: list[LayerSpec]
    input_shape: tuple[int, ...]
    params: list[list[np.ndarray]] = field(default_factory=list)

    @property
    def W(self) -> np.ndarray:
        return self.params[-1][0]

    @property
    def b(self) -> np.ndarray:
        return self.params[-1][1]

    @property
    def feature_dim(self) -> int:
        return self.W.shape[0]

    def flat(self) -> list[np.ndarray]:
        return [a for layer in self.params for a in layer]

    def with_flat(self, arrays: Sequence[np.ndarray]) -> NetworkParams:
        it = iter(arrays)
        params = [[np.array(next(it), dtype=np.float64) for _ in layer] for layer in self.params]
        return NetworkParams(list(self.spec), self.input_shape, params)

    def copy(self) -> NetworkParams:
        return self.with_flat(self.flat())

    def equals(self, other: NetworkParams) -> bool:
        if self.spec != other.spec or tuple(self.input_shape) != tuple(other.input_shape):
            return False
        a, b = self.flat(), other.flat()
        return len(a) == len(b) and all(
            x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b)
        )

    def to_dict(self) -> dict:
        return {
            "spec": [layer.to_dict() for layer in self.spec],
            "input_shape": list(self.input_shape),
            "params": [
                [{"shape": list(a.shape), "values": a.ravel().tolist()} for a in layer]
                for layer in self.params
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> NetworkParams:
        spec = parse_spec(d["spec"])
        input_shape = tuple(d["input_shape"])
        ref = build_network(spec, input_shape, seed=0)
        params = []
        for i, (layer, expected) in enumerate(zip(d["params"], ref.params)):
            arrays = []
            if len(layer) != len(expected):
                raise DimensionError(f"layer {i}: expected {len(expected)} arrays, found {len(layer)}")
            for entry, exp in zip(layer, expected):
                arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
                if arr.shape != exp.shape:
                    raise DimensionError(
                        f"layer {i} ({spec[i]}): stored shape {arr.shape}, spec implies {exp.shape}"
                    )
                arrays.append(arr)
            params.append(arrays)
        if len(d["params"]) != len(ref.params):
            raise DimensionError(f"{len(d['params'])} layers stored, spec has {len(ref.params)}")
        return cls(spec, input_shape, params)


def build_network(spec: Sequence[LayerSpec], input_shape: Sequence[int], seed: int) -> NetworkParams:
    """Initialise weights uniformly in +-sqrt(6 / (fan_in + fan_out)); biases zero."""
    spec = parse_spec(spec)
    shapes = infer_shapes(spec, input_shape)
    rng = np.random.default_rng(seed)
    params: list[list[np.ndarray]] = []
    for i, layer in enumerate(spec):
        in_shape = shapes[i]
        if layer.kind == "dense":
            fan_in, fan_out = in_shape[0], layer.size
            s = math.sqrt(6.0 / (fan_in + fan_out))
            params.append([rng.uniform(-s, s, size=(fan_in, fan_out)), np.zeros(layer.size)])
        elif layer.kind == "conv":
            c_in, k = in_shape[0], layer.k
            fan_in, fan_out = c_in * k * k, layer.size * k * k
            s = math.sqrt(6.0 / (fan_in + fan_out))
            params.append([rng.uniform(-s, s, size=(layer.size, c_in, k, k)), np.zeros(layer.size)])
        else:
            params.append([])
    return NetworkParams(spec, tuple(int(s) for s in input_shape), params)


class BoundNetwork:
    """A channel whose parameters live as leaves on a :class:`~ddstn.autodiff.Graph`."""

    def __init__(self, net: NetworkParams, graph: ad.Graph, requires_grad: bool = True):
        self.net = net
        self.graph = graph
        self.leaves = [[graph.leaf(a, requires_grad) for a in layer] for layer in net.params]

    @property
    def W(self) -> ad.Tensor:
        return self.leaves[-1][0]

    @property
    def b(self) -> ad.Tensor:
        return self.leaves[-1][1]

    def flat_leaves(self) -> list[ad.Tensor]:
        return [t for layer in self.leaves for t in layer]

    def __call__(self, x) -> tuple[ad.Tensor, ad.Tensor]:
        """Return ``(features, scores)`` for a batch; scores has shape ``(n,)``."""
        x = x.value if isinstance(x, ad.Tensor) else x
        x = as_batch(self.net, x) if np.ndim(x) != len(self.net.input_shape) + 2 else x
        h = self.graph.constant(x)
        n = x.shape[0]
        for layer, leaves in zip(self.net.spec[:-1], self.leaves[:-1]):
            h = _apply(layer, leaves, h, n)
        features = h
        W, b = self.leaves[-1]
        scores = ad.reshape(_affine(features, W, b, n), (n,))
        return features, scores


    def many(self, *batches) -> list[tuple[ad.Tensor, ad.Tensor]]:
        """Run several batches through one forward pass and split the results."""
        arrays = [as_batch(self.net, b) for b in batches]
        features, scores = self(np.concatenate(arrays, axis=0))
        out, start = [], 0
        for a in arrays:
            stop = start + a.shape[0]
            out.append((ad.rows(features, start, stop), ad.rows(scores, start, stop)))
            start = stop
        return out


def _affine(h: ad.Tensor, W: ad.Tensor, b: ad.Tensor, n: int) -> ad.Tensor:
    ones = h.graph.constant(np.ones((n, 1)))
    return ad.add(ad.matmul(h, W), ad.matmul(ones, ad.reshape(b, (1, b.shape[0]))))


def _apply(layer: LayerSpec, leaves, h: ad.Tensor, n: int) -> ad.Tensor:
    if layer.kind == "dense":
        return _affine(h, leaves[0], leaves[1], n)
    if layer.kind == "conv":
        return ad.conv2d_valid(h, leaves[0], leaves[1])
    if layer.kind == "relu":
        return ad.relu(h)
    if layer.kind == "maxpool2":
        return ad.maxpool2(h)
    return ad.reshape(h, (n, -1))


def as_batch(net: NetworkParams, x) -> np.ndarray:
    """Coerce ``x`` to ``(n, *input_shape)``, adding the channel axis for images.

    Flattened image rows of length ``H*W`` are accepted too.
    """
    x = np.asarray(x, dtype=np.float64)
    shape = tuple(net.input_shape)
    if x.ndim == 1 and len(shape) == 1:
        raise DimensionError(f"expected a batch of shape (n, {shape[0]}), got a single vector")
    if len(shape) == 1:
        if x.ndim != 2 or x.shape[1] != shape[0]:
            raise DimensionError(f"expected a batch of shape (n, {shape[0]}), got {x.shape}")
        return x
    h, w = shape
    if x.ndim == 2 and x.shape[1] == h * w:
        x = x.reshape(-1, h, w)
    if x.ndim != 3 or x.shape[1:] != (h, w):
        raise DimensionError(f"expected a batch of shape (n, {h}, {w}), got {x.shape}")
    return x[:, None, :, :]


def forward(params: NetworkParams, batch) -> dict[str, np.ndarray]:
    """Plain forward pass returning ``{"features": n x d, "scores": n}``."""
    graph = ad.Graph()
    features, scores = BoundNetwork(params, graph, requires_grad=False)(batch)
    return {"features": features.value, "scores": scores.value}


def save_checkpoint(path, target: NetworkParams, source: NetworkParams | None = None, **extra) -> None:
    """Write a JSON checkpoint (spec + flattened values, shortest round-trip floats)."""
    doc = {"format": "ddstn-checkpoint", "version": 1, "target": target.to_dict()}
    doc["source"] = source.to_dict() if source is not None else None
    doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path) -> dict:
    """Read a checkpoint; returns the raw document with ``target``/``source`` parsed."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not a JSON checkpoint ({exc})") from exc
    if doc.get("format") != "ddstn-checkpoint" or "target" not in doc:
        raise ConfigError(f"{path}: not a ddstn checkpoint")
    doc["target"] = NetworkParams.from_dict(doc["target"])
    if doc.get("source") is not None:
        doc["source"] = NetworkParams.from_dict(doc["source"])
    return doc

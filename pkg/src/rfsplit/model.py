"""CNN model description, receptive-field arithmetic and operation counts.

Layers are indexed from 1. Index 0 stands for the network input, so
``model.out_size(0)`` is the input height/width. Conv and pool layers are
"spatial"; dense layers form a suffix and are only ever costed, never sliced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Sequence

CONV = "conv"
POOL = "pool"
DENSE = "dense"
_KINDS = (CONV, POOL, DENSE)


class ModelError(ValueError):
    """Raised when a model violates its structural invariants.

    ``problems`` lists every violation found, each prefixed by the layer index.
    """

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    k: int = 1
    s: int = 1
    p: int = 0
    c_in: int = 0
    c_out: int = 0
    in_features: int = 0
    out_features: int = 0

    @classmethod
    def conv(cls, k: int, s: int, p: int, c_in: int, c_out: int) -> "LayerSpec":
        return cls(CONV, k, s, p, c_in, c_out)

    @classmethod
    def pool(cls, k: int, s: int, p: int, channels: int) -> "LayerSpec":
        return cls(POOL, k, s, p, channels, channels)

    @classmethod
    def dense(cls, in_features: int, out_features: int) -> "LayerSpec":
        return cls(DENSE, in_features=in_features, out_features=out_features)

    @property
    def spatial(self) -> bool:
        return self.kind != DENSE

    def out_size(self, in_size: int) -> int:
        return (in_size + 2 * self.p - self.k) // self.s + 1

    def window(self, out_row: int) -> tuple[int, int]:
        """Input rows (unclamped, 1-based) read by one output row."""
        lo = self.s * (out_row - 1) + 1 - self.p
        return lo, lo + self.k - 1


@dataclass(frozen=True)
class NetworkModel:
    input_size: int
    input_channels: int
    layers: tuple[LayerSpec, ...]
    element_bytes: int = 4
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def layer(self, i: int) -> LayerSpec:
        if not 1 <= i <= len(self.layers):
            raise IndexError(f"layer index {i} outside 1..{len(self.layers)}")
        return self.layers[i - 1]

    @cached_property
    def num_spatial(self) -> int:
        n = 0
        for layer in self.layers:
            if not layer.spatial:
                break
            n += 1
        return n

    @cached_property
    def _sizes(self) -> tuple[int, ...]:
        sizes = [self.input_size]
        for layer in self.layers[: self.num_spatial]:
            sizes.append(layer.out_size(sizes[-1]))
        return tuple(sizes)

    def out_size(self, i: int) -> int:
        """OF_i for spatial layer i (i=0 gives the input size)."""
        return self._sizes[i]

    def in_size(self, i: int) -> int:
        return self._sizes[i - 1]

    def out_channels(self, i: int) -> int:
        return self.input_channels if i == 0 else self.layer(i).c_out

    def in_channels(self, i: int) -> int:
        return self.out_channels(i - 1)

    @property
    def dense_layers(self) -> tuple[LayerSpec, ...]:
        return self.layers[self.num_spatial:]

    def prefix(self, n: int) -> "NetworkModel":
        """The first ``n`` spatial layers as a model of their own (no dense tail)."""
        return NetworkModel(self.input_size, self.input_channels, self.layers[:n],
                            self.element_bytes, f"{self.name}[:{n}]")

    @classmethod
    def from_dict(cls, doc: dict, name: str = "") -> "NetworkModel":
        inp = doc["input"]
        # c_in is inferred by chaining unless given explicitly
        channels = int(inp["channels"])
        layers = []
        for entry in doc["layers"]:
            kind = entry["kind"].lower()
            if kind == CONV:
                c_out = int(entry["c_out"])
                c_in = int(entry.get("c_in", channels))
                layers.append(LayerSpec.conv(int(entry["k"]), int(entry.get("s", 1)),
                                             int(entry.get("p", 0)), c_in, c_out))
                channels = c_out
            elif kind == POOL:
                layers.append(LayerSpec.pool(int(entry["k"]), int(entry.get("s", entry["k"])),
                                             int(entry.get("p", 0)), channels))
            elif kind == DENSE:
                layers.append(LayerSpec.dense(int(entry["in"]), int(entry["out"])))
            else:
                raise ModelError([f"unknown layer kind {entry['kind']!r}"])
        return cls(int(inp["size"]), int(inp["channels"]), tuple(layers),
                   int(doc.get("element_bytes", 4)), name or doc.get("name", ""))

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            if layer.kind == CONV:
                layers.append({"kind": CONV, "k": layer.k, "s": layer.s, "p": layer.p,
                               "c_out": layer.c_out})
            elif layer.kind == POOL:
                layers.append({"kind": POOL, "k": layer.k, "s": layer.s, "p": layer.p})
            else:
                layers.append({"kind": DENSE, "in": layer.in_features,
                               "out": layer.out_features})
        return {"name": self.name,
                "input": {"size": self.input_size, "channels": self.input_channels},
                "element_bytes": self.element_bytes, "layers": layers}


def load_model(path: str | Path) -> NetworkModel:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    try:
        model = NetworkModel.from_dict(doc, doc.get("name", path.stem))
    except KeyError as err:
        raise ModelError([f"{path.name}: missing field {err}"]) from None
    return validate_model(model)


def vgg16() -> NetworkModel:
    """The bundled VGG-16 fixture: 13 conv, 5 pool and 3 dense layers on 224x224x3."""
    text = resources.files("rfsplit.data").joinpath("vgg16.json").read_text()
    return validate_model(NetworkModel.from_dict(json.loads(text)))


def validate_model(model: NetworkModel) -> NetworkModel:
    """Check every structural invariant and return the model unchanged.

    All violations are collected before raising so one call reports the lot.
    """
    problems = []
    if model.input_size < 1:
        problems.append(f"input size must be positive, got {model.input_size}")
    if model.input_channels < 1:
        problems.append(f"input channels must be positive, got {model.input_channels}")
    if model.element_bytes < 1:
        problems.append(f"element_bytes must be positive, got {model.element_bytes}")

    size, channels, seen_dense = model.input_size, model.input_channels, False
    flat = None
    for i, layer in enumerate(model.layers, start=1):
        if layer.kind not in _KINDS:
            problems.append(f"unknown layer kind {layer.kind!r} at layer {i}")
            continue
        if layer.kind == DENSE:
            if not seen_dense:
                flat = size * size * channels if size >= 1 else None
            if layer.in_features < 1 or layer.out_features < 1:
                problems.append(f"non-positive dense features at layer {i}")
            elif flat is not None and layer.in_features != flat:
                problems.append(f"dense input mismatch at layer {i}: expected {flat}, "
                                f"got {layer.in_features}")
            flat = layer.out_features
            seen_dense = True
            continue
        if seen_dense:
            problems.append(f"{layer.kind} after dense layer at layer {i}")
            continue
        if layer.k < 1 or layer.s < 1 or layer.p < 0:
            problems.append(f"invalid geometry k={layer.k} s={layer.s} p={layer.p} at layer {i}")
            continue
        if layer.c_in != channels:
            problems.append(f"channel mismatch at layer {i}: expects {layer.c_in}, "
                            f"previous layer gives {channels}")
        if layer.kind == POOL and layer.c_out != layer.c_in:
            problems.append(f"pool changes channels at layer {i}")
        if layer.c_out < 1:
            problems.append(f"non-positive output channels at layer {i}")
        if size >= 1:
            size = layer.out_size(size)
            if size < 1:
                problems.append(f"OF < 1 at layer {i}")
        channels = layer.c_out
    if model.num_spatial == 0:
        problems.append("model has no conv/pool layers")
    if problems:
        raise ModelError(problems)
    return model


@dataclass(frozen=True)
class RfTrace:
    """Receptive-field attributes of a layer range.

    ``size`` is the output height/width, ``jump`` the cumulative stride,
    ``field`` the receptive-field side and ``center`` the (possibly
    half-integer) input row of the first output's field centre.
    """

    size: int
    jump: int = 1
    field: int = 1
    center: Fraction = Fraction(1)

    def then(self, other: "RfTrace") -> "RfTrace":
        """Compose with the trace of the immediately following range."""
        return RfTrace(other.size,
                       self.jump * other.jump,
                       self.field + (other.field - 1) * self.jump,
                       self.center + (other.center - 1) * self.jump)

    def step(self, layer: LayerSpec) -> "RfTrace":
        return RfTrace(layer.out_size(self.size),
                       self.jump * layer.s,
                       self.field + (layer.k - 1) * self.jump,
                       self.center + (Fraction(layer.k - 1, 2) - layer.p) * self.jump)


def _check_range(model: NetworkModel, a: int, b: int):
    n = model.num_spatial
    if not (1 <= a <= n + 1 and a - 1 <= b <= n):
        raise ValueError(f"invalid layer range [{a}, {b}] for {n} spatial layers")


def rf_forward(model: NetworkModel, a: int, b: int) -> RfTrace:
    """Receptive-field trace of spatial layers ``a..b`` (``b = a-1`` is the empty range)."""
    _check_range(model, a, b)
    trace = RfTrace(model.out_size(a - 1))
    for i in range(a, b + 1):
        trace = trace.step(model.layer(i))
    return trace


def rf_prefixes(model: NetworkModel, a: int, b: int) -> list[RfTrace]:
    """Traces of ``[a, a]``, ``[a, a+1]``, ... ``[a, b]``."""
    _check_range(model, a, b)
    out, trace = [], RfTrace(model.out_size(a - 1))
    for i in range(a, b + 1):
        trace = trace.step(model.layer(i))
        out.append(trace)
    return out


def _propagate_back(model: NetworkModel, a: int, b: int, lo: int, hi: int) -> tuple[int, int]:
    for i in range(b, a - 1, -1):
        layer = model.layer(i)
        lo, hi = layer.window(lo)[0], layer.window(hi)[1]
    return lo, hi


def rf_oracle(model: NetworkModel, a: int, b: int, pixel: int) -> tuple[int, int]:
    """Input rows of layer ``a`` feeding output row ``pixel`` of layer ``b``.

    Brute-force backward walk through each layer's sliding window; the
    interval is not clamped, so it may reach into the padding.
    """
    _check_range(model, a, b)
    if not 1 <= pixel <= model.out_size(b):
        raise ValueError(f"output row {pixel} outside 1..{model.out_size(b)}")
    return _propagate_back(model, a, b, pixel, pixel)


def _count_windows(in_size: int, layer: LayerSpec) -> int:
    n = 0
    while layer.window(n + 1)[1] <= in_size + layer.p:
        n += 1
    return n


def oracle_trace(model: NetworkModel, a: int, b: int) -> RfTrace:
    """Recover (OF, j, r, sigma) for ``[a, b]`` from window propagation alone."""
    _check_range(model, a, b)
    size = model.out_size(a - 1)
    for i in range(a, b + 1):
        size = _count_windows(size, model.layer(i))
    lo1, hi1 = _propagate_back(model, a, b, 1, 1)
    lo2, _ = _propagate_back(model, a, b, 2, 2)
    return RfTrace(size, lo2 - lo1, hi1 - lo1 + 1, Fraction(lo1 + hi1, 2))


def layer_flops(layer: LayerSpec, rows: int, width: int) -> int:
    """Arithmetic operations to produce ``rows`` output rows of width ``width``."""
    if rows <= 0:
        return 0
    if layer.kind == CONV:
        return 2 * layer.k * layer.k * layer.c_in * rows * width * layer.c_out
    if layer.kind == POOL:
        return layer.k * layer.k * layer.c_in * rows * width
    return 2 * layer.in_features * layer.out_features


def model_flops(model: NetworkModel) -> int:
    total = sum(layer_flops(model.layer(i), model.out_size(i), model.out_size(i))
                for i in range(1, model.num_spatial + 1))
    return total + sum(layer_flops(d, 1, 1) for d in model.dense_layers)


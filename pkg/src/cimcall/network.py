"""Basecaller network graphs and the full-precision reference path.

A :class:`NetworkGraph` is an ordered list of layer specifications
(1-D convolutions, LSTMs, a fully connected head, and elementwise
activation/normalization layers) with explicit weight arrays. The two
stock builders produce the small production-style basecaller and its
analog-friendly variant; arbitrary graphs can be described directly or
loaded from a weight file.

Reference inference runs in float64 and is the accuracy oracle that the
quantized analog execution path is compared against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .decoder import N_BASES, N_DECISIONS

__all__ = [
    "LayerSpec",
    "NetworkGraph",
    "TransitionFrames",
    "conv1d",
    "conv1d_forward",
    "lstm",
    "fully_connected",
    "swish",
    "clamp",
    "batch_norm",
    "build_dorado_fast",
    "build_al_dorado",
    "lstm_step",
    "infer_reference",
    "save_weights",
    "load_weights",
]

COMPUTE_KINDS = ("Conv1D", "LSTM", "FullyConnected")
AUX_KINDS = ("Swish", "Clamp", "BatchNorm")


@dataclass
class LayerSpec:
    """One layer: a kind tag, kind-specific geometry, weight arrays."""

    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel_width: int = 0
    stride: int = 1
    padding: int = 0
    input_size: int = 0
    hidden_size: int = 0
    reverse: bool = False
    in_features: int = 0
    out_features: int = 0
    lo: float = 0.0
    hi: float = 0.0
    channels: int = 0
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in COMPUTE_KINDS + AUX_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for name, want in self._expected_shapes().items():
            if name not in self.arrays:
                raise ValueError(f"{self.kind} layer missing array {name!r}")
            got = self.arrays[name].shape
            if got != want:
                raise ValueError(f"{self.kind} array {name!r} has shape {got}, want {want}")

    def _expected_shapes(self) -> dict[str, tuple]:
        if self.kind == "Conv1D":
            if min(self.in_channels, self.out_channels, self.kernel_width, self.stride) < 1:
                raise ValueError("Conv1D geometry fields must be positive")
            shapes = {"weight": (self.out_channels, self.in_channels, self.kernel_width)}
            if "bias" in self.arrays:
                shapes["bias"] = (self.out_channels,)
            return shapes
        if self.kind == "LSTM":
            if min(self.input_size, self.hidden_size) < 1:
                raise ValueError("LSTM geometry fields must be positive")
            h, i = self.hidden_size, self.input_size
            return {"weight": (4 * h, i + h), "bias": (4 * h,)}
        if self.kind == "FullyConnected":
            if min(self.in_features, self.out_features) < 1:
                raise ValueError("FullyConnected geometry fields must be positive")
            return {"weight": (self.out_features, self.in_features), "bias": (self.out_features,)}
        if self.kind == "BatchNorm":
            if self.channels < 1:
                raise ValueError("BatchNorm needs a positive channel count")
            c = (self.channels,)
            return {"scale": c, "offset": c, "mean": c, "var": c}
        if self.kind == "Clamp" and not self.lo < self.hi:
            raise ValueError("Clamp needs lo < hi")
        return {}

    @property
    def weight_count(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    @property
    def is_compute(self) -> bool:
        return self.kind in COMPUTE_KINDS


def conv1d(in_ch, out_ch, k, stride=1, padding=None, bias=True, rng=None) -> LayerSpec:
    if padding is None:
        padding = k // 2
    arrays = {"weight": _init(rng, (out_ch, in_ch, k), in_ch * k)}
    if bias:
        arrays["bias"] = np.zeros(out_ch)
    return LayerSpec(
        kind="Conv1D", in_channels=in_ch, out_channels=out_ch,
        kernel_width=k, stride=stride, padding=padding, arrays=arrays,
    )


def lstm(input_size, hidden_size, reverse=False, rng=None) -> LayerSpec:
    h = hidden_size
    arrays = {
        "weight": _init(rng, (4 * h, input_size + h), input_size + h),
        "bias": np.zeros(4 * h),
    }
    return LayerSpec(
        kind="LSTM", input_size=input_size, hidden_size=h, reverse=reverse, arrays=arrays,
    )


def fully_connected(in_features, out_features, rng=None) -> LayerSpec:
    arrays = {
        "weight": _init(rng, (out_features, in_features), in_features),
        "bias": np.zeros(out_features),
    }
    return LayerSpec(
        kind="FullyConnected", in_features=in_features, out_features=out_features, arrays=arrays,
    )


def swish() -> LayerSpec:
    return LayerSpec(kind="Swish")


def clamp(lo=-3.5, hi=3.5) -> LayerSpec:
    return LayerSpec(kind="Clamp", lo=lo, hi=hi)


def batch_norm(channels) -> LayerSpec:
    return LayerSpec(
        kind="BatchNorm", channels=channels,
        arrays={
            "scale": np.ones(channels), "offset": np.zeros(channels),
            "mean": np.zeros(channels), "var": np.ones(channels),
        },
    )


def _init(rng, shape, fan_in) -> np.ndarray:
    if rng is None:
        return np.zeros(shape)
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class NetworkGraph:
    """Ordered layers plus the derived whole-network quantities."""

    layers: list[LayerSpec]
    name: str = "network"

    def __post_init__(self):
        self._validate_composition()

    def _validate_composition(self):
        width = None
        for i, layer in enumerate(self.layers):
            if layer.kind == "Conv1D":
                if width is not None and layer.in_channels != width:
                    raise ValueError(f"layer {i}: expects {layer.in_channels} channels, got {width}")
                width = layer.out_channels
            elif layer.kind == "LSTM":
                if width is not None and layer.input_size != width:
                    raise ValueError(f"layer {i}: expects {layer.input_size} inputs, got {width}")
                width = layer.hidden_size
            elif layer.kind == "FullyConnected":
                if width is not None and layer.in_features != width:
                    raise ValueError(f"layer {i}: expects {layer.in_features} inputs, got {width}")
                width = layer.out_features
            elif layer.kind == "BatchNorm":
                if width is not None and layer.channels != width:
                    raise ValueError(f"layer {i}: normalizes {layer.channels} channels, got {width}")

    @property
    def samples_per_frame(self) -> int:
        spf = 1
        for layer in self.layers:
            if layer.kind == "Conv1D":
                spf *= layer.stride
        return spf

    @property
    def parameter_count(self) -> int:
        return sum(layer.weight_count for layer in self.layers)

    @property
    def out_features(self) -> int:
        for layer in reversed(self.layers):
            if layer.kind == "FullyConnected":
                return layer.out_features
        raise ValueError("network has no fully connected head")

    @property
    def n_states(self) -> int:
        return self.out_features // N_DECISIONS

    @property
    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for layer in self.layers:
            if layer.kind == "Conv1D":
                rf += (layer.kernel_width - 1) * jump
                jump *= layer.stride
        return rf

    def compute_layers(self) -> list[tuple[int, LayerSpec]]:
        return [(i, l) for i, l in enumerate(self.layers) if l.is_compute]


@dataclass
class TransitionFrames:
    """Per-timestep transition log-scores, shape (T, n_states, 5)."""

    frames: np.ndarray
    padded: bool = False

    def __post_init__(self):
        if self.frames.ndim != 3 or self.frames.shape[2] != N_DECISIONS:
            raise ValueError("frames must have shape (T, n_states, 5)")

    @property
    def t(self) -> int:
        return self.frames.shape[0]

    @property
    def n_states(self) -> int:
        return self.frames.shape[1]


def build_dorado_fast(seed: int = 0, state_len: int = 3) -> NetworkGraph:
    """Small real-time basecaller: 3 convs, 5 LSTM(96), FC head.

    Layer 1 is the bias-free 1->16 width-5 convolution (80 weights).
    The head emits 5 * 4**state_len transition scores per frame.
    """
    rng = np.random.default_rng(seed)
    feat = 96
    out = N_DECISIONS * N_BASES**state_len
    layers = [
        conv1d(1, 16, 5, stride=1, bias=False, rng=rng),
        batch_norm(16),
        swish(),
        conv1d(16, 16, 5, stride=1, rng=rng),
        batch_norm(16),
        swish(),
        conv1d(16, feat, 19, stride=5, rng=rng),
        batch_norm(feat),
        swish(),
    ]
    for i in range(5):
        layers.append(lstm(feat, feat, reverse=(i % 2 == 1), rng=rng))
    layers.append(fully_connected(feat, out, rng=rng))
    return NetworkGraph(layers=layers, name="dorado-fast")


def build_al_dorado(seed: int = 0) -> NetworkGraph:
    """Analog-oriented variant: wider LSTMs, clamps, state length 1.

    LSTM sizes grow to 128/128/128/256/256, clamp layers return between
    the convolution blocks and after the head, and the head shrinks to
    20 transition scores per frame so it can feed the streaming decoder.
    """
    rng = np.random.default_rng(seed)
    feat = 128
    sizes = [128, 128, 128, 256, 256]
    layers = [
        conv1d(1, 16, 5, stride=1, bias=False, rng=rng),
        batch_norm(16),
        swish(),
        clamp(),
        conv1d(16, 16, 5, stride=1, rng=rng),
        batch_norm(16),
        swish(),
        clamp(),
        conv1d(16, feat, 19, stride=5, rng=rng),
        batch_norm(feat),
        swish(),
    ]
    prev = feat
    for i, h in enumerate(sizes):
        layers.append(lstm(prev, h, reverse=(i % 2 == 1), rng=rng))
        prev = h
    layers.append(fully_connected(prev, N_DECISIONS * N_BASES, rng=rng))
    layers.append(clamp())
    return NetworkGraph(layers=layers, name="al-dorado")


def lstm_step(spec: LayerSpec, x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
    """One LSTM cell update; returns (h, c).

    Gate order in the weight matrix is input, forget, cell, output.
    """
    h_size = spec.hidden_size
    if x.shape != (spec.input_size,) or h_prev.shape != (h_size,) or c_prev.shape != (h_size,):
        raise ValueError("lstm_step dimensions do not match the layer spec")
    z = spec.arrays["weight"] @ np.concatenate([x, h_prev]) + spec.arrays["bias"]
    i = _sigmoid(z[:h_size])
    f = _sigmoid(z[h_size : 2 * h_size])
    g = np.tanh(z[2 * h_size : 3 * h_size])
    o = _sigmoid(z[3 * h_size :])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def conv1d_forward(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    """x is (channels, length); returns (out_channels, out_length)."""
    w, b = layer.arrays["weight"], layer.arrays.get("bias")
    k, s, p = layer.kernel_width, layer.stride, layer.padding
    if p:
        x = np.pad(x, ((0, 0), (p, p)))
    length = x.shape[1]
    n_out = (length - k) // s + 1
    if n_out < 1:
        raise ValueError("input shorter than the convolution window")
    idx = np.arange(n_out)[:, None] * s + np.arange(k)[None, :]
    cols = x[:, idx]                       # (c_in, n_out, k)
    cols = cols.transpose(1, 0, 2).reshape(n_out, -1)
    out = cols @ w.reshape(w.shape[0], -1).T
    if b is not None:
        out = out + b
    return out.T


def _lstm_forward(layer: LayerSpec, xs: np.ndarray) -> np.ndarray:
    """xs is (T, input_size); returns (T, hidden_size)."""
    seq = xs[::-1] if layer.reverse else xs
    h = np.zeros(layer.hidden_size)
    c = np.zeros(layer.hidden_size)
    out = np.empty((xs.shape[0], layer.hidden_size))
    for t in range(seq.shape[0]):
        h, c = lstm_step(layer, seq[t], h, c)
        out[t] = h
    return out[::-1] if layer.reverse else out


def infer_reference(graph: NetworkGraph, chunk: np.ndarray) -> TransitionFrames:
    """Deterministic float64 forward pass over one chunk of raw samples.

    Samples beyond the last whole frame are dropped; chunks shorter than
    the receptive field are zero-padded at the tail and the result is
    flagged. Output is (T, n_states, 5) with T = len(chunk) // spf.
    """
    x = np.asarray(chunk, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty chunk")
    spf = graph.samples_per_frame
    padded = False
    need = max(graph.receptive_field, spf)
    if x.size < need:
        x = np.pad(x, (0, need - x.size))
        padded = True
    x = x[: (x.size // spf) * spf]

    data = x[None, :]                      # (channels, length), signal domain
    frames_domain = False
    for layer in graph.layers:
        if layer.kind == "Conv1D":
            if frames_domain:
                raise ValueError("convolutions must precede recurrent layers")
            data = conv1d_forward(layer, data)
        elif layer.kind == "BatchNorm":
            a = layer.arrays
            scale = (a["scale"] / np.sqrt(a["var"] + 1e-5))[:, None]
            offset = (a["offset"] - a["mean"] * scale[:, 0])[:, None]
            if frames_domain:
                data = data * scale.T[0] + offset.T[0]
            else:
                data = data * scale + offset
        elif layer.kind == "Swish":
            data = data * _sigmoid(data)
        elif layer.kind == "Clamp":
            data = np.clip(data, layer.lo, layer.hi)
        elif layer.kind == "LSTM":
            if not frames_domain:
                data = data.T
                frames_domain = True
            data = _lstm_forward(layer, data)
        elif layer.kind == "FullyConnected":
            if not frames_domain:
                data = data.T
                frames_domain = True
            data = data @ layer.arrays["weight"].T + layer.arrays["bias"]
    t_len = data.shape[0]
    frames = data.reshape(t_len, -1, N_DECISIONS)
    return TransitionFrames(frames=frames, padded=padded)


_GEOMETRY_FIELDS = (
    "in_channels", "out_channels", "kernel_width", "stride", "padding",
    "input_size", "hidden_size", "reverse", "in_features", "out_features",
    "lo", "hi", "channels",
)


def save_weights(graph: NetworkGraph, path: str | Path) -> None:
    """Write a graph as flat little-endian float32 plus a JSON manifest.

    ``path`` names the binary file; the manifest lands at ``path`` with
    a ``.json`` suffix appended and lists layer order, geometry, and the
    shape/offset of every array in the flat file.
    """
    path = Path(path)
    manifest = {"format": "cimcall-weights", "version": 1, "name": graph.name, "layers": []}
    blobs = []
    offset = 0
    for layer in graph.layers:
        entry = {"kind": layer.kind, "arrays": []}
        for f in _GEOMETRY_FIELDS:
            v = getattr(layer, f)
            if v:
                entry[f] = v
        for name in sorted(layer.arrays):
            arr = np.ascontiguousarray(layer.arrays[name], dtype="<f4")
            entry["arrays"].append({"name": name, "shape": list(arr.shape), "offset": offset})
            blobs.append(arr.tobytes())
            offset += arr.size
        manifest["layers"].append(entry)
    path.write_bytes(b"".join(blobs))
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=1))


def load_weights(path: str | Path) -> NetworkGraph:
    """Read a graph saved by :func:`save_weights`."""
    path = Path(path)
    manifest = json.loads(Path(str(path) + ".json").read_text())
    if manifest.get("format") != "cimcall-weights" or manifest.get("version") != 1:
        raise ValueError("unrecognized weight file format")
    flat = np.frombuffer(path.read_bytes(), dtype="<f4")
    layers = []
    for entry in manifest["layers"]:
        arrays = {}
        for spec in entry["arrays"]:
            n = int(np.prod(spec["shape"])) if spec["shape"] else 1
            arrays[spec["name"]] = (
                flat[spec["offset"] : spec["offset"] + n]
                .astype(np.float64)
                .reshape(spec["shape"])
            )
        kwargs = {f: entry[f] for f in _GEOMETRY_FIELDS if f in entry}
        layers.append(LayerSpec(kind=entry["kind"], arrays=arrays, **kwargs))
    return NetworkGraph(layers=layers, name=manifest.get("name", "network"))

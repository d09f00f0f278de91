"""Noise- and drift-aware inference on programmed tiles.

Programming scales each analog layer's weights by its max-abs value,
converts them to differential conductance pairs (gate-interleaved for
LSTMs, matching the mapper's placed layout), applies one-shot
programming noise, and calibrates static quantization scales on a
calibration batch: a signed 8-bit input scale per analog layer, a
per-column ADC correction per tile, and a signed 10-bit activation scale
per layer output.

Inference then follows the hardware numerics: analog layers run through
the device model (read noise fresh per read, drift evaluated at the read
time), every digital and auxiliary operation computes in 16-bit float
semantics (results rounded to float16 after each op), and activations
crossing nodes are quantized to signed 10-bit integers.

The drift and layer-sensitivity sweeps drive this path over an
evaluation set of synthetic reads and report mean aligned accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import pipeline as pl
from .decoder import full_crf_decode
from .device import DeviceParams, ProgrammedTile, analog_vmm, program_tile
from .mapping import ArchDescription, Mapping, lstm_column_interleave, map_network
from .network import NetworkGraph, infer_reference, TransitionFrames

__all__ = [
    "ExecutionPlan",
    "ProgrammedSystem",
    "program_network",
    "infer_analog",
    "infer_analog_batch",
    "layer_sensitivity_sweep",
    "drift_sweep",
    "basecall_read",
    "basecall_reads_analog",
    "basecall_reads_reference",
]

ADC_HI = 511
PWM_HI = 127
_COL_MARGIN = 1.2
_EPS = 1e-12


def _fp16(x: np.ndarray) -> np.ndarray:
    """Round-to-nearest-even float16 at an op boundary."""
    return x.astype(np.float16).astype(np.float64)


def _q10(x: np.ndarray, scale: float) -> np.ndarray:
    q = np.clip(np.rint(x / scale), -512, 511)
    return q * scale


def _q8_codes(x: np.ndarray, scale: float) -> np.ndarray:
    return np.clip(np.rint(x / scale), -PWM_HI, PWM_HI).astype(np.int64)


@dataclass
class ExecutionPlan:
    """Per-compute-layer placement view: 'analog' or 'digital'."""

    placements: list[str]

    @classmethod
    def from_mapping(cls, graph: NetworkGraph, mapping: Mapping) -> "ExecutionPlan":
        out = []
        for i, _ in graph.compute_layers():
            out.append(mapping.assignment(i).placement)
        return cls(placements=out)


@dataclass
class _GroupState:
    """Quantization state of one compute layer group."""

    w_max: float = 1.0
    in_scale: float = 1.0
    act_scale: float = 1.0
    col_scale: np.ndarray | None = None     # per placed column


@dataclass
class ProgrammedSystem:
    """Immutable result of programming a network onto the tiles."""

    graph: NetworkGraph
    mapping: Mapping
    plan: ExecutionPlan
    device_params: DeviceParams
    program_time: float
    tiles: dict = field(default_factory=dict)   # (layer_idx, piece) -> ProgrammedTile
    quant: dict = field(default_factory=dict)   # layer_idx -> _GroupState
    saturation_count: int = 0

    def tiles_populated(self) -> set[int]:
        """Distinct physical tile ids carrying weights."""
        out = set()
        for a in self.mapping.analog_assignments():
            for p in a.pieces:
                out.add(p.tile)
        return out


def _groups(graph: NetworkGraph):
    """(layer index, layer, trailing aux specs) per compute layer."""
    compute = graph.compute_layers()
    idxs = [i for i, _ in compute]
    out = []
    for pos, (i, layer) in enumerate(compute):
        stop = idxs[pos + 1] if pos + 1 < len(compute) else len(graph.layers)
        aux = [graph.layers[j] for j in range(i + 1, stop) if not graph.layers[j].is_compute]
        out.append((i, layer, aux))
    return out


def _placed_block(layer) -> np.ndarray:
    """Crossbar weight block (rows x cols) in on-tile column order."""
    if layer.kind == "Conv1D":
        w = layer.arrays["weight"]
        return w.reshape(w.shape[0], -1).T
    if layer.kind == "FullyConnected":
        return layer.arrays["weight"].T
    if layer.kind == "LSTM":
        perm = lstm_column_interleave(layer.hidden_size)
        return layer.arrays["weight"].T[:, perm]
    raise ValueError(f"{layer.kind} is not an analog layer")


def _im2col(x: np.ndarray, layer) -> np.ndarray:
    """x (n, c, L) -> (n, positions, c*k) windows for one conv layer."""
    k, s, p = layer.kernel_width, layer.stride, layer.padding
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p)))
    n_out = (x.shape[2] - k) // s + 1
    idx = np.arange(n_out)[:, None] * s + np.arange(k)[None, :]
    cols = x[:, :, idx]                           # (n, c, P, k)
    return cols.transpose(0, 2, 1, 3).reshape(x.shape[0], n_out, -1)


def _aux_chain(layer, aux_specs, z: np.ndarray) -> np.ndarray:
    """Digital post-processing in fp16 semantics; z is (..., width)."""
    if not any(a.kind == "BatchNorm" for a in aux_specs):
        z = _fp16(z)                               # bare affine scale pass
    for a in aux_specs:
        if a.kind == "BatchNorm":
            arr = a.arrays
            scale = arr["scale"] / np.sqrt(arr["var"] + 1e-5)
            z = _fp16(z * scale + (arr["offset"] - arr["mean"] * scale))
        elif a.kind == "Swish":
            z = _fp16(z * _fp16(1.0 / (1.0 + np.exp(-z))))
        elif a.kind == "Clamp":
            z = np.clip(z, a.lo, a.hi)
    return z


def program_network(
    graph: NetworkGraph,
    mapping: Mapping,
    device_params: DeviceParams,
    seed: int = 0,
    calibration: list[np.ndarray] | None = None,
    program_time: float = 0.0,
) -> ProgrammedSystem:
    """Scale, convert, and write every analog layer onto its tiles.

    ``calibration`` is a list of raw sample chunks used to fix the
    static input/output quantization scales and the per-column ADC
    corrections; a synthetic unit-normal chunk is used when omitted.
    Digital layers keep their float weights. Raises when a layer's
    footprint exceeds its assigned tile regions.
    """
    rng = np.random.default_rng((seed, 0xC1A))
    if calibration is None:
        cal_rng = np.random.default_rng((seed, 0xCA1))
        calibration = [cal_rng.normal(0.0, 1.0, size=40 * max(graph.samples_per_frame, 1))]
    plan = ExecutionPlan.from_mapping(graph, mapping)
    quant = _calibrate(graph, mapping, calibration)

    tiles: dict = {}
    n_sat = 0
    for a in mapping.analog_assignments():
        layer = graph.layers[a.layer_index]
        block = _placed_block(layer)
        rows, cols = block.shape
        st = quant[a.layer_index]
        col = 0
        for piece_idx, p in enumerate(a.pieces):
            width = p.col_hi - p.col_lo
            if p.row_hi - p.row_lo != rows or col + width > cols:
                raise ValueError(f"layer {a.layer_index} does not fit its tile region")
            sub = block[:, col : col + width]
            tile = program_tile(
                sub, st.w_max, device_params, rng, t_programmed=program_time,
                col_scale=np.pad(st.col_scale[col : col + width], (0, 512 - width)),
            )
            n_sat += tile.saturation_count
            tiles[(a.layer_index, piece_idx)] = tile
            col += width
    return ProgrammedSystem(
        graph=graph, mapping=mapping, plan=plan, device_params=device_params,
        program_time=program_time, tiles=tiles, quant=quant, saturation_count=n_sat,
    )


def _calibrate(graph: NetworkGraph, mapping: Mapping, chunks) -> dict:
    """Float-precision range discovery for the static scales."""
    groups = _groups(graph)
    state = {i: _GroupState() for i, _, _ in groups}
    for i, layer, _ in groups:
        if mapping.assignment(i).placement == "analog":
            w = layer.arrays["weight"]
            state[i].w_max = max(float(np.max(np.abs(w))), _EPS)

    in_max = {i: _EPS for i, _, _ in groups}
    out_max = {i: _EPS for i, _, _ in groups}
    pre_max = {i: None for i, _, _ in groups}

    for samples in chunks:
        x = np.asarray(samples, dtype=np.float64)
        x = x[: (x.size // max(graph.samples_per_frame, 1)) * max(graph.samples_per_frame, 1)]
        data = x[None, None, :]                   # (n=1, c, L)
        frames_domain = False
        for i, layer, aux in groups:
            analog = mapping.assignment(i).placement == "analog"
            if layer.kind == "Conv1D":
                cols = _im2col(data, layer)
                block = _placed_block(layer)
                pre = cols @ block
                if analog:
                    in_max[i] = max(in_max[i], float(np.max(np.abs(cols))))
                    m = np.max(np.abs(pre), axis=(0, 1))
                    pre_max[i] = m if pre_max[i] is None else np.maximum(pre_max[i], m)
                z = pre + layer.arrays.get("bias", np.zeros(layer.out_channels))
                z = _aux_chain_float(aux, z)
                data = z.transpose(0, 2, 1)
            elif layer.kind == "LSTM":
                if not frames_domain:
                    data = data.transpose(0, 2, 1)
                    frames_domain = True
                seq = data if not layer.reverse else data[:, ::-1]
                n, t_len, _ = seq.shape
                h = np.zeros((n, layer.hidden_size))
                c = np.zeros((n, layer.hidden_size))
                w_mat = layer.arrays["weight"]
                bias = layer.arrays["bias"]
                outs = np.empty((n, t_len, layer.hidden_size))
                block = _placed_block(layer)
                perm_inv = np.argsort(lstm_column_interleave(layer.hidden_size))
                for t in range(t_len):
                    xin = np.concatenate([seq[:, t], h], axis=1)
                    if analog:
                        in_max[i] = max(in_max[i], float(np.max(np.abs(xin))))
                        pre_placed = xin @ block
                        m = np.max(np.abs(pre_placed), axis=0)
                        pre_max[i] = m if pre_max[i] is None else np.maximum(pre_max[i], m)
                        z = pre_placed[:, perm_inv] + bias
                    else:
                        z = xin @ w_mat.T + bias
                    hsz = layer.hidden_size
                    ig = _sigmoid(z[:, :hsz])
                    fg = _sigmoid(z[:, hsz : 2 * hsz])
                    gg = np.tanh(z[:, 2 * hsz : 3 * hsz])
                    og = _sigmoid(z[:, 3 * hsz :])
                    c = fg * c + ig * gg
                    h = og * np.tanh(c)
                    outs[:, t] = h
                data = outs if not layer.reverse else outs[:, ::-1]
                data = _aux_chain_float(aux, data)
            else:  # FullyConnected
                if not frames_domain:
                    data = data.transpose(0, 2, 1)
                    frames_domain = True
                block = _placed_block(layer)
                pre = data @ block
                if analog:
                    in_max[i] = max(in_max[i], float(np.max(np.abs(data))))
                    m = np.max(np.abs(pre), axis=tuple(range(pre.ndim - 1)))
                    pre_max[i] = m if pre_max[i] is None else np.maximum(pre_max[i], m)
                z = pre + layer.arrays["bias"]
                data = _aux_chain_float(aux, z)
            out_max[i] = max(out_max[i], float(np.max(np.abs(data))))

    for i, layer, _ in groups:
        st = state[i]
        st.in_scale = max(in_max[i], _EPS) / PWM_HI
        st.act_scale = max(out_max[i], _EPS) / ADC_HI
        if mapping.assignment(i).placement == "analog":
            acc_max = np.maximum(pre_max[i], _EPS) / (st.in_scale * st.w_max)
            st.col_scale = ADC_HI / (_COL_MARGIN * acc_max)
    return state


def _aux_chain_float(aux_specs, z):
    for a in aux_specs:
        if a.kind == "BatchNorm":
            arr = a.arrays
            scale = arr["scale"] / np.sqrt(arr["var"] + 1e-5)
            z = z * scale + (arr["offset"] - arr["mean"] * scale)
        elif a.kind == "Swish":
            z = z * _sigmoid(z)
        elif a.kind == "Clamp":
            z = np.clip(z, a.lo, a.hi)
    return z


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def infer_analog(
    system: ProgrammedSystem, chunk: np.ndarray, t_read: float, seed: int = 0
) -> TransitionFrames:
    """Quantized, noisy forward pass of one chunk at read time t_read."""
    frames = infer_analog_batch(system, np.asarray(chunk)[None, :], t_read, seed)
    return frames[0]


def infer_analog_batch(
    system: ProgrammedSystem, chunks: np.ndarray, t_read: float, seed: int = 0
) -> list[TransitionFrames]:
    """Batched analog inference over same-length chunks.

    Read noise is drawn per tile read; a batch models concurrent chunks,
    so its draws differ from running the chunks one at a time, but each
    (seed, batch) pairing is fully deterministic.
    """
    if t_read < system.program_time:
        raise ValueError("read time precedes programming time")
    graph = system.graph
    params = system.device_params
    rng = np.random.default_rng((seed, 0xAD))
    x = np.asarray(chunks, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise ValueError("chunks must be a non-empty (n, length) array")
    spf = max(graph.samples_per_frame, 1)
    x = x[:, : (x.shape[1] // spf) * spf]

    data = x[:, None, :]                      # (n, c, L) signal domain
    frames_domain = False
    for i, layer, aux in _groups(graph):
        assign = system.mapping.assignment(i)
        st = system.quant[i]
        analog = assign.placement == "analog"
        if layer.kind == "Conv1D":
            cols = _im2col(data, layer)       # (n, P, rows)
            n, p_cnt, rows = cols.shape
            if analog:
                pre = _analog_matmul(
                    system, i, cols.reshape(n * p_cnt, rows), st, params, rng, t_read
                ).reshape(n, p_cnt, -1)
            else:
                pre = _fp16(cols @ _placed_block(layer))
            z = _fp16(pre + layer.arrays.get("bias", np.zeros(layer.out_channels)))
            z = _aux_chain(layer, aux, z)
            z = _q10(z, st.act_scale)
            data = z.transpose(0, 2, 1)
        elif layer.kind == "LSTM":
            if not frames_domain:
                data = data.transpose(0, 2, 1)
                frames_domain = True
            seq = data if not layer.reverse else data[:, ::-1]
            n, t_len, _ = seq.shape
            hsz = layer.hidden_size
            h = np.zeros((n, hsz))
            c = np.zeros((n, hsz))
            bias = layer.arrays["bias"]
            perm_inv = np.argsort(lstm_column_interleave(hsz))
            outs = np.empty((n, t_len, hsz))
            w_t = layer.arrays["weight"].T
            for t in range(t_len):
                xin = np.concatenate([seq[:, t], h], axis=1)
                if analog:
                    z = _analog_matmul(system, i, xin, st, params, rng, t_read)[:, perm_inv]
                else:
                    z = _fp16(xin @ w_t)
                z = _fp16(z + bias)
                ig = _fp16(_sigmoid(z[:, :hsz]))
                fg = _fp16(_sigmoid(z[:, hsz : 2 * hsz]))
                gg = _fp16(np.tanh(z[:, 2 * hsz : 3 * hsz]))
                og = _fp16(_sigmoid(z[:, 3 * hsz :]))
                c = _fp16(fg * c + _fp16(ig * gg))
                h = _fp16(og * _fp16(np.tanh(c)))
                h = _q10(h, st.act_scale)     # hidden state crosses the mesh
                outs[:, t] = h
            z = outs if not layer.reverse else outs[:, ::-1]
            z = _aux_chain(layer, aux, z) if aux else z
            data = _q10(z, st.act_scale)
        else:  # FullyConnected
            if not frames_domain:
                data = data.transpose(0, 2, 1)
                frames_domain = True
            if analog:
                n, t_len, rows = data.shape
                pre = _analog_matmul(
                    system, i, data.reshape(n * t_len, rows), st, params, rng, t_read
                ).reshape(n, t_len, -1)
            else:
                pre = _fp16(data @ _placed_block(layer))
            z = _fp16(pre + layer.arrays["bias"])
            z = _aux_chain(layer, aux, z)
            data = _q10(z, st.act_scale)
    n, t_len = data.shape[0], data.shape[1]
    return [
        TransitionFrames(frames=data[j].reshape(t_len, -1, 5)) for j in range(n)
    ]


def _analog_matmul(system, layer_idx, xin, st, params, rng, t_read):
    """Quantize inputs, read every piece of the layer, recover floats."""
    codes = _q8_codes(xin, st.in_scale)
    a = system.mapping.assignment(layer_idx)
    outs = []
    col = 0
    for piece_idx, p in enumerate(a.pieces):
        tile = system.tiles[(layer_idx, piece_idx)]
        adc = analog_vmm(tile, codes, params, rng=rng, t_now=t_read)
        width = tile.cols_used
        recovered = adc / tile.col_scale[:width] * (st.in_scale * st.w_max)
        outs.append(recovered)
        col += width
    return _fp16(np.concatenate(outs, axis=-1))


def basecall_read(read, plan, samples_per_frame, infer_fn, decode_fn) -> str:
    """Chunk, infer, decode, and stitch one read into a base call.

    ``infer_fn`` maps a chunk sample array to a (T, S, 5) frame array;
    ``decode_fn`` maps frames to a MoveSequence. Frames produced from
    zero-padding beyond a chunk's true length are dropped before
    decoding.
    """
    chunks = pl.chunk(read, plan)
    calls = []
    for ch in chunks:
        frames = infer_fn(ch.samples)
        t_true = max(1, ch.true_len // samples_per_frame)
        ms = decode_fn(frames[:t_true])
        bases, fidx = ms.collapse_with_frames()
        calls.append(
            pl.ChunkCall(
                bases=bases, frames=np.asarray(fidx, dtype=np.int64),
                start=ch.start, t_frames=t_true,
            )
        )
    return pl.stitch(calls, plan, samples_per_frame)


def basecall_reads_reference(graph, reads, plan, decode_fn=None) -> list[str]:
    """Reference float pipeline over an evaluation set."""
    decode_fn = decode_fn or (lambda fr: full_crf_decode(fr))
    spf = graph.samples_per_frame

    def infer_fn(samples):
        return infer_reference(graph, samples).frames

    return [basecall_read(r, plan, spf, infer_fn, decode_fn) for r in reads]


def basecall_reads_analog(
    system, reads, plan, t_read, seed=0, decode_fn=None
) -> list[str]:
    """Analog pipeline over an evaluation set, batched per chunk slot.

    All reads are chunked first; chunks are inferred in one batch per
    chunk position so the tile reads vectorize across reads.
    """
    decode_fn = decode_fn or (lambda fr: full_crf_decode(fr))
    spf = system.graph.samples_per_frame
    per_read = [pl.chunk(r, plan) for r in reads]
    flat = [(ri, ch) for ri, chunks in enumerate(per_read) for ch in chunks]
    batch = np.stack([ch.samples for _, ch in flat])
    frames = infer_analog_batch(system, batch, t_read, seed)
    calls_per_read: list[list] = [[] for _ in reads]
    for (ri, ch), fr in zip(flat, frames):
        t_true = max(1, ch.true_len // spf)
        ms = decode_fn(fr.frames[:t_true])
        bases, fidx = ms.collapse_with_frames()
        calls_per_read[ri].append(
            pl.ChunkCall(
                bases=bases, frames=np.asarray(fidx, dtype=np.int64),
                start=ch.start, t_frames=t_true,
            )
        )
    return [pl.stitch(calls, plan, spf) for calls in calls_per_read]


def _mean_accuracy(calls, reads) -> float:
    return float(
        np.mean([pl.aligned_accuracy(c, r.truth) for c, r in zip(calls, reads)])
    )


def layer_sensitivity_sweep(
    graph: NetworkGraph,
    eval_set,
    seed: int = 0,
    device_params: DeviceParams | None = None,
    arch: ArchDescription | None = None,
    plan: pl.ChunkPlan | None = None,
    t_read: float = 86400.0,
    calibration: list[np.ndarray] | None = None,
) -> list[tuple[str, float]]:
    """Accuracy with each layer kept digital while the rest run analog.

    Returns (config name, mean aligned accuracy) rows: the all-digital
    baseline (the reference float pipeline), the all-analog baseline,
    then one row per compute layer held digital. Deterministic per seed.
    """
    device_params = device_params or DeviceParams()
    arch = arch or ArchDescription.default()
    plan = plan or pl.ChunkPlan()
    if calibration is None:
        calibration = [r.samples for r in eval_set[:4]]
    rows: list[tuple[str, float]] = []
    ref_calls = basecall_reads_reference(graph, eval_set, plan)
    rows.append(("all-digital", _mean_accuracy(ref_calls, eval_set)))

    n_compute = len(graph.compute_layers())
    configs = [("all-analog", frozenset())]
    configs += [
        (f"layer-{j}-digital", frozenset([j])) for j in range(n_compute)
    ]
    for name, digital in configs:
        mapping = map_network(
            graph, arch, first_layer_digital=False, digital_layers=digital
        )
        system = program_network(
            graph, mapping, device_params, seed=seed, calibration=calibration
        )
        calls = basecall_reads_analog(system, eval_set, plan, t_read, seed=seed)
        rows.append((name, _mean_accuracy(calls, eval_set)))
    return rows


def drift_sweep(
    system: ProgrammedSystem,
    eval_set,
    times,
    seed: int = 0,
    plan: pl.ChunkPlan | None = None,
) -> list[tuple[float, float]]:
    """Mean aligned accuracy at each read time; one row per time point."""
    times = list(times)
    t0_floor = system.program_time + system.device_params.t0
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("times must be ascending")
    if times and times[0] < t0_floor:
        raise ValueError("times must start at or after program_time + t0")
    plan = plan or pl.ChunkPlan()
    out = []
    for idx, t in enumerate(times):
        calls = basecall_reads_analog(system, eval_set, plan, t, seed=(seed << 8) + idx)
        out.append((float(t), _mean_accuracy(calls, eval_set)))
    return out

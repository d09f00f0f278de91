"""Cycle-accurate simulation of the mapped accelerator.

A mapped network expands into a dependency graph of micro-operations
(tile reads, DPU auxiliary ops, SRAM accesses, mesh transfers, decode
steps), one group per layer per token, with recurrent edges between
consecutive tokens at LSTM layers and window edges where convolution
receptive fields span tokens. A deterministic list scheduler then plays
the graph against the architecture's resources: each tile, DPU, the
decoder, the signal buffer, and one mesh channel per row and per column
per direction. Transfers use dimension-ordered X-then-Y routing, pay a
fixed number of cycles per contiguous leg, and pay energy per bit per
hop.

Runtime breakdown accounting (the documented rule): every cycle of every
token's span (first op start to last op end) is attributed to exactly
one category. A cycle where one of the token's own ops is running takes
that op's category (when several run, the highest of VMM > LSTM Ops >
Data Movement > Other wins). A cycle where a token op is ready but
blocked on a busy resource is Contention. A remaining idle cycle where a
cross-token predecessor is running takes the predecessor's category, and
anything still unattributed is Contention. Category totals therefore sum
to the accounted makespan, the sum of token spans.
"""

from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mapping import ArchDescription, Mapping, NodeSpec, TILE, DPU
from .network import NetworkGraph

__all__ = [
    "CostTable",
    "MicroOp",
    "JobGraph",
    "OpRecord",
    "Timeline",
    "Stats",
    "build_job_graph",
    "schedule",
    "report",
    "peak_compute",
    "critical_path_cycles",
    "write_trace",
    "depends_transitively",
]

VMM = "VMM"
BN_AUX = "BatchNormAux"
SWISH_LUT = "SwishLUT"
LSTM_AUX = "LSTMAux"
DECODE = "Decode"
SRAM = "SRAMAccess"
TRANSFER = "MeshTransfer"

CAT_VMM = "VMM"
CAT_LSTM = "LSTM Ops"
CAT_MOVE = "Data Movement"
CAT_OTHER = "Other"
CAT_CONTENTION = "Contention"
CATEGORIES = (CAT_VMM, CAT_LSTM, CAT_MOVE, CAT_OTHER, CAT_CONTENTION)

MESH_BITS = 10            # inter-node activations travel as signed 10-bit
SAMPLE_STORE_BITS = 32    # raw samples held as float32 in the signal buffer
STATE_BITS = 16           # LSTM cell state kept in DPU SRAM as fp16
DPU_VECTOR_WIDTH = 512    # elements one DPU vector op covers


@dataclass(frozen=True)
class CostTable:
    """Per-operation latency (cycles) and energy (joules)."""

    vmm_energy: float = 5.2e-9
    vmm_cycles: int = 40
    bn_energy: float = 1.24e-12
    bn_cycles: int = 3
    lut_energy: float = 1.49e-12
    lut_cycles: int = 4
    lstm_aux_energy: float = 19.3e-12
    lstm_aux_cycles: int = 25
    sram_bit_energy: float = 2.5e-15
    sram_cycles: int = 1
    mesh_ew_bit_energy: float = 44.9e-15
    mesh_ns_bit_energy: float = 81.4e-15
    mesh_turn_bit_energy: float = 126e-15
    mesh_leg_cycles: int = 3
    decode_energy: float = 0.16e-9
    decode_cycles: int = 11
    clock_hz: float = 1e9

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if getattr(self, name) <= 0:
                raise ValueError(f"cost table entry {name} must be positive")


@dataclass
class MicroOp:
    id: int
    kind: str
    token: int
    layer: int                 # graph layer index, -1 for IO/decode
    resources: tuple
    latency: int
    energy: float
    preds: list[int] = field(default_factory=list)
    payload_bits: int = 0
    category: str = CAT_OTHER

    def __post_init__(self):
        if self.latency < 1:
            raise ValueError("micro-op latency must be at least 1 cycle")
        if self.energy < 0:
            raise ValueError("micro-op energy must be non-negative")


@dataclass
class JobGraph:
    ops: list[MicroOp]
    n_tokens: int
    samples_per_frame: int
    meta: dict = field(default_factory=dict)

    def op(self, op_id: int) -> MicroOp:
        return self.ops[op_id]


@dataclass
class OpRecord:
    op: MicroOp
    ready: int
    start: int
    end: int


@dataclass
class Timeline:
    records: list[OpRecord]
    n_tokens: int
    samples_per_frame: int
    makespan: int
    total_energy: float
    category_cycles: dict
    token_spans: list[tuple[int, int]]
    token_finish: list[int]

    @property
    def accounted_makespan(self) -> int:
        return sum(e - s for s, e in self.token_spans)


def _route(src: NodeSpec, dsts: list[NodeSpec]):
    """Dimension-ordered X-then-Y multicast route.

    Returns (latency_legs, x_hop_edges, y_hop_edges, turn_points,
    claimed_channels). Hop edges shared by several branches are counted
    once for energy; the claimed channels are whole row/column segments
    in the direction traveled.
    """
    x_edges, y_edges, turns, channels = set(), set(), set(), set()
    max_legs = 0
    for d in dsts:
        legs = 0
        if d.x != src.x:
            lo, hi = sorted((src.x, d.x))
            for x in range(lo, hi):
                x_edges.add((src.y, x))
            channels.add(("row", src.y, 1 if d.x > src.x else -1))
            legs += 1
        if d.y != src.y:
            lo, hi = sorted((src.y, d.y))
            for y in range(lo, hi):
                y_edges.add((d.x, y))
            channels.add(("col", d.x, 1 if d.y > src.y else -1))
            legs += 1
        if d.x != src.x and d.y != src.y:
            turns.add((d.x, src.y))
            legs += 1
        max_legs = max(max_legs, legs)
    return max_legs, x_edges, y_edges, turns, channels


class _Builder:
    """Accumulates micro-ops for build_job_graph."""

    def __init__(self, graph, mapping, arch, costs):
        self.graph = graph
        self.mapping = mapping
        self.arch = arch
        self.costs = costs
        self.ops: list[MicroOp] = []

    def add(self, kind, token, layer, resources, latency, energy,
            preds=(), payload_bits=0, category=CAT_OTHER) -> int:
        op = MicroOp(
            id=len(self.ops), kind=kind, token=token, layer=layer,
            resources=tuple(resources), latency=int(latency), energy=float(energy),
            preds=[p for p in preds if p is not None], payload_bits=payload_bits,
            category=category,
        )
        self.ops.append(op)
        return op.id

    def transfer(self, token, layer, src: NodeSpec, dsts: list[NodeSpec],
                 bits: int, preds) -> int | None:
        dsts = [d for d in dsts if (d.x, d.y) != (src.x, src.y)]
        if not dsts:
            return None
        c = self.costs
        legs, xe, ye, tn, channels = _route(src, dsts)
        energy = bits * (
            len(xe) * c.mesh_ew_bit_energy
            + len(ye) * c.mesh_ns_bit_energy
            + len(tn) * c.mesh_turn_bit_energy
        )
        return self.add(
            TRANSFER, token, layer, sorted(channels), legs * c.mesh_leg_cycles,
            energy, preds, payload_bits=bits, category=CAT_MOVE,
        )


def _conv_io_geometry(graph: NetworkGraph):
    """Per compute layer: (rate, stride, kernel, padding) in its own
    domain, where rate is outputs per token."""
    layers = graph.compute_layers()
    conv_strides = [l.stride for _, l in layers if l.kind == "Conv1D"]
    geom = {}
    seen_convs = 0
    for idx, layer in layers:
        if layer.kind == "Conv1D":
            rate = int(np.prod(conv_strides[seen_convs + 1 :], dtype=np.int64)) if conv_strides else 1
            geom[idx] = (max(rate, 1), layer.stride, layer.kernel_width, layer.padding)
            seen_convs += 1
        else:
            geom[idx] = (1, 1, 1, 0)
    return geom


def build_job_graph(
    graph: NetworkGraph,
    mapping: Mapping,
    arch: ArchDescription,
    n_tokens: int,
    costs: CostTable | None = None,
    include_io: bool = True,
) -> JobGraph:
    """Expand the mapped network into timed, energized micro-ops.

    One group of ops per compute layer per token: tile (or DPU) matrix
    work, the post-processing chain on the assigned DPU (or the tile's
    own post-processing block when nothing but the affine correction is
    needed), mesh transfers for every node-crossing edge with multicast
    to all consumers, LSTM hidden-state recurrence onto the next token,
    and per-token signal-buffer reads and decode steps when
    ``include_io`` is set.
    """
    if costs is None:
        costs = CostTable()
    if n_tokens < 1:
        raise ValueError("need at least one token")
    b = _Builder(graph, mapping, arch, costs)
    compute = graph.compute_layers()
    geom = _conv_io_geometry(graph)
    spf = graph.samples_per_frame

    # aux layers trailing each compute layer, up to the next compute layer
    trailing: dict[int, list[int]] = {}
    comp_indices = [i for i, _ in compute]
    for pos, (i, _) in enumerate(compute):
        stop = comp_indices[pos + 1] if pos + 1 < len(compute) else len(graph.layers)
        trailing[i] = [j for j in range(i + 1, stop) if not graph.layers[j].is_compute]

    def out_width(layer):
        if layer.kind == "Conv1D":
            return layer.out_channels
        if layer.kind == "LSTM":
            return layer.hidden_size
        return layer.out_features

    def macs_per_pos(layer):
        if layer.kind == "Conv1D":
            return layer.in_channels * layer.kernel_width * layer.out_channels
        if layer.kind == "LSTM":
            return (layer.input_size + layer.hidden_size) * 4 * layer.hidden_size
        return layer.in_features * layer.out_features

    # group[(layer_idx, token)] = {"out": op_id, "out_xfer": op_id | None,
    #                              "entry": [op ids consuming inputs]}
    groups: dict[tuple[int, int], dict] = {}
    sig_reads: list[int] = []

    def nodes_of(layer_idx: int) -> list[NodeSpec]:
        a = mapping.assignment(layer_idx)
        if a.placement == "analog":
            return [arch.tile(p.tile) for p in a.pieces]
        return [arch.dpu(a.dpu)]

    if include_io:
        for k in range(n_tokens):
            rid = b.add(
                SRAM, k, -1, [("sigbuf", 0)], costs.sram_cycles,
                spf * SAMPLE_STORE_BITS * costs.sram_bit_energy,
                preds=(), payload_bits=spf * SAMPLE_STORE_BITS, category=CAT_MOVE,
            )
            sig_reads.append(rid)

    for pos, (li, layer) in enumerate(compute):
        assign = mapping.assignment(li)
        rate, stride, kw, pad = geom[li]
        aux_layers = trailing[li]
        is_lstm = layer.kind == "LSTM"
        vmm_cat = CAT_VMM if is_lstm else CAT_OTHER
        width = out_width(layer)
        prev = compute[pos - 1] if pos > 0 else None

        for k in range(n_tokens):
            # producer groups this token's inputs come from
            in_preds: list[int] = []
            if prev is not None:
                pi, player = prev
                prate = geom[pi][0]
                lo = k * rate * stride - pad
                hi = ((k + 1) * rate - 1) * stride - pad + kw - 1
                t_lo = max(0, lo // prate)
                t_hi = min(n_tokens - 1, hi // prate)
                for t in range(t_lo, t_hi + 1):
                    g = groups[(pi, t)]
                    in_preds.append(g["out_xfer"] if g["out_xfer"] is not None else g["out"])
            elif include_io:
                if layer.kind == "Conv1D":
                    lo = max(0, (k * rate * stride - pad) // spf)
                    hi = min(n_tokens - 1, (((k + 1) * rate - 1) * stride - pad + kw - 1) // spf)
                    feed_bits = spf * MESH_BITS
                else:
                    lo = hi = k
                    feed_bits = (layer.input_size or layer.in_features) * MESH_BITS
                feed = sig_reads[lo : hi + 1]
                xf = b.transfer(
                    k, -1, arch.sigbuf_node, nodes_of(li), bits=feed_bits, preds=feed
                )
                in_preds.append(xf if xf is not None else (feed[-1] if feed else None))

            if is_lstm and k > 0:
                g = groups[(li, k - 1)]
                in_preds.append(g["out_xfer"] if g["out_xfer"] is not None else g["out"])

            if assign.placement == "digital":
                dpu_node = arch.dpu(assign.dpu)
                chunks = max(1, math.ceil(rate * macs_per_pos(layer) / DPU_VECTOR_WIDTH))
                vid = b.add(
                    VMM, k, li, [("dpu", assign.dpu)],
                    costs.bn_cycles * chunks, costs.bn_energy * chunks,
                    preds=in_preds, category=CAT_OTHER,
                )
                vmm_out = [vid]
                aux_node, aux_res = dpu_node, ("dpu", assign.dpu)
            else:
                vmm_out = []
                piece_preds = list(in_preds)
                for p in assign.pieces:
                    vid = b.add(
                        VMM, k, li, [("tile", p.tile)], costs.vmm_cycles,
                        costs.vmm_energy, preds=piece_preds, category=vmm_cat,
                    )
                    vmm_out.append(vid)
                if aux_layers or is_lstm:
                    aux_node, aux_res = arch.dpu(assign.aux_dpu), ("dpu", assign.aux_dpu)
                    moved = []
                    for p, vid in zip(assign.pieces, vmm_out):
                        xf = b.transfer(
                            k, li, arch.tile(p.tile), [aux_node],
                            bits=rate * (p.col_hi - p.col_lo) * MESH_BITS, preds=[vid],
                        )
                        moved.append(xf if xf is not None else vid)
                    vmm_out = moved
                else:
                    # bare affine correction runs on the tile's own
                    # post-processing block; no mesh crossing
                    aux_node, aux_res = arch.tile(assign.pieces[0].tile), ("tile", assign.pieces[0].tile)

            # post-processing chain
            last = vmm_out
            if is_lstm:
                aid = b.add(
                    LSTM_AUX, k, li, [aux_res], costs.lstm_aux_cycles,
                    costs.lstm_aux_energy, preds=last, category=CAT_LSTM,
                )
                state_bits = 2 * layer.hidden_size * STATE_BITS
                b.add(
                    SRAM, k, li, [aux_res], costs.sram_cycles,
                    state_bits * costs.sram_bit_energy, preds=[aid],
                    payload_bits=state_bits, category=CAT_MOVE,
                )
                last = [aid]
            else:
                elems = max(1, math.ceil(rate * width / DPU_VECTOR_WIDTH))
                if not any(graph.layers[j].kind == "BatchNorm" for j in aux_layers):
                    aid = b.add(
                        BN_AUX, k, li, [aux_res], costs.bn_cycles * elems,
                        costs.bn_energy * elems, preds=last, category=CAT_OTHER,
                    )
                    last = [aid]
                for j in aux_layers:
                    kind_j = graph.layers[j].kind
                    if kind_j == "BatchNorm":
                        aid = b.add(
                            BN_AUX, k, j, [aux_res], costs.bn_cycles * elems,
                            costs.bn_energy * elems, preds=last, category=CAT_OTHER,
                        )
                    else:  # Swish or Clamp, both through the LUT path
                        aid = b.add(
                            SWISH_LUT, k, j, [aux_res], costs.lut_cycles * elems,
                            costs.lut_energy * elems, preds=last, category=CAT_OTHER,
                        )
                    last = [aid]
            if is_lstm and aux_layers:
                for j in aux_layers:
                    kind_j = graph.layers[j].kind
                    op_kind = BN_AUX if kind_j == "BatchNorm" else SWISH_LUT
                    cyc = costs.bn_cycles if kind_j == "BatchNorm" else costs.lut_cycles
                    en = costs.bn_energy if kind_j == "BatchNorm" else costs.lut_energy
                    aid = b.add(op_kind, k, j, [aux_res], cyc, en, preds=last, category=CAT_OTHER)
                    last = [aid]

            out_op = last[-1]

            # where does this layer's output travel next
            dests: list[NodeSpec] = []
            if pos + 1 < len(compute):
                dests.extend(nodes_of(compute[pos + 1][0]))
            elif include_io:
                dests.append(arch.decoder_node)
            if is_lstm:
                dests.extend(nodes_of(li))   # hidden state feeds back
            uniq = []
            for d in dests:
                if d not in uniq:
                    uniq.append(d)
            xf = b.transfer(
                k, li, aux_node, uniq, bits=rate * width * MESH_BITS, preds=[out_op]
            )
            groups[(li, k)] = {"out": out_op, "out_xfer": xf, "entry": vmm_out}

    if include_io:
        last_li = compute[-1][0]
        prev_decode = None
        for k in range(n_tokens):
            g = groups[(last_li, k)]
            preds = [g["out_xfer"] if g["out_xfer"] is not None else g["out"]]
            if prev_decode is not None:
                preds.append(prev_decode)
            prev_decode = b.add(
                DECODE, k, -1, [("decoder", 0)], costs.decode_cycles,
                costs.decode_energy, preds=preds, category=CAT_OTHER,
            )

    return JobGraph(
        ops=b.ops, n_tokens=n_tokens, samples_per_frame=spf,
        meta={"network": graph.name, "include_io": include_io},
    )


def schedule(job: JobGraph, costs: CostTable | None = None,
             arch: ArchDescription | None = None) -> Timeline:
    """Deterministic list scheduling of the micro-op graph.

    At every scheduling instant, ready ops (all predecessors finished)
    claim free resources in (token, op id) order and hold them for their
    full latency. The result is bit-identical across runs.
    """
    ops = job.ops
    n = len(ops)
    n_preds = np.zeros(n, dtype=np.int64)
    succs = defaultdict(list)
    for op in ops:
        n_preds[op.id] = len(op.preds)
        for p in op.preds:
            succs[p].append(op.id)

    ready: list[tuple[int, int]] = []
    ready_time = np.zeros(n, dtype=np.int64)
    for op in ops:
        if n_preds[op.id] == 0:
            heapq.heappush(ready, (op.token, op.id))
    busy: set = set()
    events: list[tuple[int, int]] = []       # (end_time, op_id)
    records: list[OpRecord | None] = [None] * n
    t = 0
    n_done = 0
    while n_done < n:
        # start everything startable at time t
        deferred = []
        progressed = False
        while ready:
            token, oid = heapq.heappop(ready)
            op = ops[oid]
            if any(r in busy for r in op.resources):
                deferred.append((token, oid))
                continue
            busy.update(op.resources)
            records[oid] = OpRecord(op=op, ready=int(ready_time[oid]), start=t, end=t + op.latency)
            heapq.heappush(events, (t + op.latency, oid))
            progressed = True
        for item in deferred:
            heapq.heappush(ready, item)
        if not events:
            if ready:
                raise AssertionError("scheduler stalled with free resources; graph is cyclic?")
            break
        # advance to the next completion, release, propagate readiness
        t_next, oid = heapq.heappop(events)
        finished = [oid]
        while events and events[0][0] == t_next:
            finished.append(heapq.heappop(events)[1])
        t = t_next
        for oid in finished:
            op = ops[oid]
            busy.difference_update(op.resources)
            n_done += 1
            for s in succs[oid]:
                n_preds[s] -= 1
                if n_preds[s] == 0:
                    ready_time[s] = t
                    heapq.heappush(ready, (ops[s].token, s))

    recs = [r for r in records if r is not None]
    assert len(recs) == n, "not every micro-op was scheduled"
    makespan = max(r.end for r in recs) if recs else 0
    total_energy = float(sum(op.energy for op in ops))
    spans, finishes = _token_extents(recs, job.n_tokens)
    category_cycles = _breakdown(recs, job.n_tokens, spans)
    return Timeline(
        records=recs, n_tokens=job.n_tokens, samples_per_frame=job.samples_per_frame,
        makespan=makespan, total_energy=total_energy, category_cycles=category_cycles,
        token_spans=spans, token_finish=finishes,
    )


def _token_extents(records, n_tokens):
    lo = [None] * n_tokens
    hi = [0] * n_tokens
    for r in records:
        k = r.op.token
        lo[k] = r.start if lo[k] is None else min(lo[k], r.start)
        hi[k] = max(hi[k], r.end)
    spans = [(l if l is not None else 0, h) for l, h in zip(lo, hi)]
    return spans, [h for _, h in spans]


_PRIORITY = [CAT_OTHER, CAT_MOVE, CAT_LSTM, CAT_VMM]            # ascending


def _breakdown(records, n_tokens, spans):
    """Per-cycle category attribution, summed over token spans."""
    by_token = defaultdict(list)
    by_id = {}
    for r in records:
        by_token[r.op.token].append(r)
        by_id[r.op.id] = r
    cat_idx = {c: i + 1 for i, c in enumerate(_PRIORITY)}
    CONT = len(_PRIORITY) + 1
    totals = dict.fromkeys(CATEGORIES, 0)
    for k in range(n_tokens):
        s0, e0 = spans[k]
        if e0 <= s0:
            continue
        arr = np.zeros(e0 - s0, dtype=np.int8)
        recs = by_token[k]
        for cat_i, cat in enumerate(_PRIORITY, start=1):
            for r in recs:
                if r.op.category == cat:
                    arr[r.start - s0 : r.end - s0] = cat_i
        # ready but resource-blocked
        for r in recs:
            if r.start > r.ready:
                seg = arr[r.ready - s0 : r.start - s0]
                seg[seg == 0] = CONT
        # waiting on a cross-token predecessor: take its category
        for r in recs:
            for p in r.op.preds:
                pr = by_id[p]
                if pr.op.token != k and pr.end > s0:
                    a = max(pr.start, s0) - s0
                    z = min(pr.end, r.start) - s0
                    if z > a:
                        seg = arr[a:z]
                        seg[seg == 0] = cat_idx[pr.op.category]
        arr[arr == 0] = CONT
        for cat, i in cat_idx.items():
            totals[cat] += int(np.count_nonzero(arr == i))
        totals[CAT_CONTENTION] += int(np.count_nonzero(arr == CONT))
    return totals


def critical_path_cycles(job: JobGraph) -> int:
    """Longest dependency path, ignoring resource conflicts."""
    dist = np.zeros(len(job.ops), dtype=np.int64)
    for op in job.ops:     # ops are created in topological order
        base = max((dist[p] for p in op.preds), default=0)
        dist[op.id] = base + op.latency
    return int(dist.max()) if len(job.ops) else 0


def depends_transitively(job: JobGraph, a: int, b: int) -> bool:
    """True when op a depends (directly or not) on op b."""
    seen = set()
    stack = [a]
    while stack:
        x = stack.pop()
        if x == b:
            return True
        if x in seen:
            continue
        seen.add(x)
        stack.extend(job.ops[x].preds)
    return False


@dataclass
class Stats:
    n_tokens: int
    makespan_cycles: int
    elapsed_s: float
    total_energy_j: float
    avg_power_w: float
    bases_per_frame: float
    bases_per_second: float           # steady-state marginal rate
    bases_per_second_overall: float   # includes pipeline fill
    real_time_floor_bps: float
    real_time_ratio: float
    tops_per_tile: float
    tops_peak: float
    tops_per_mm2: float
    bps_per_watt: float
    bps_per_mm2: float
    breakdown_percent: dict
    category_cycles: dict

    def summary(self) -> str:
        lines = [
            f"tokens simulated        {self.n_tokens}",
            f"makespan                {self.makespan_cycles} cycles ({self.elapsed_s * 1e6:.2f} us)",
            f"throughput              {self.bases_per_second:,.0f} bases/s "
            f"({self.real_time_ratio:.1f}x real-time floor)",
            f"throughput w/ fill      {self.bases_per_second_overall:,.0f} bases/s",
            f"total energy            {self.total_energy_j * 1e9:.2f} nJ",
            f"average power           {self.avg_power_w:.3f} W",
            f"peak compute            {self.tops_per_tile:.2f} TOPS/tile, "
            f"{self.tops_peak:.1f} TOPS, {self.tops_per_mm2:.2f} TOPS/mm2",
            f"efficiency              {self.bps_per_watt:,.0f} bases/s/W, "
            f"{self.bps_per_mm2:,.0f} bases/s/mm2",
            "runtime breakdown       "
            + ", ".join(f"{k}: {v:.1f}%" for k, v in self.breakdown_percent.items()),
        ]
        return "\n".join(lines)


def peak_compute(arch: ArchDescription, costs: CostTable) -> dict:
    """Theoretical peak: every tile cell doing one MAC per tile read."""
    macs = arch.tile_size * arch.tile_size
    seconds = costs.vmm_cycles / costs.clock_hz
    per_tile = macs / seconds / 1e12
    total = per_tile * arch.n_tiles
    return {
        "tops_per_tile": per_tile,
        "tops_peak": total,
        "tops_per_mm2": total / arch.area_mm2,
    }


def report(
    timeline: Timeline,
    samples_per_base: float,
    clock_hz: float,
    arch: ArchDescription | None = None,
    costs: CostTable | None = None,
    channels: int = 512,
    sample_rate_hz: float = 4000.0,
) -> Stats:
    """Aggregate a timeline into throughput/energy/efficiency figures.

    Bases per second is frames per second times bases per frame, where
    one frame covers ``samples_per_frame`` raw samples and one base
    spans ``samples_per_base`` of them. The steady-state rate uses the
    median completion gap over the second half of the tokens so pipeline
    fill does not dilute it. The real-time floor is the base rate the
    flow cell generates.
    """
    if costs is None:
        costs = CostTable()
    if arch is None:
        arch = ArchDescription.default()
    peak = peak_compute(arch, costs)
    floor = channels * sample_rate_hz / samples_per_base
    if not timeline.records:
        return Stats(
            n_tokens=0, makespan_cycles=0, elapsed_s=0.0, total_energy_j=0.0,
            avg_power_w=0.0, bases_per_frame=0.0, bases_per_second=0.0,
            bases_per_second_overall=0.0, real_time_floor_bps=floor,
            real_time_ratio=0.0, bps_per_watt=0.0, bps_per_mm2=0.0,
            breakdown_percent=dict.fromkeys(CATEGORIES, 0.0),
            category_cycles=dict.fromkeys(CATEGORIES, 0), **peak,
        )
    elapsed = timeline.makespan / clock_hz
    bases_per_frame = timeline.samples_per_frame / samples_per_base
    overall_fps = timeline.n_tokens / elapsed
    finishes = timeline.token_finish
    if timeline.n_tokens >= 4:
        tail = np.diff(finishes[timeline.n_tokens // 2 :])
        marginal = float(np.median(tail)) if tail.size else float(timeline.makespan)
        marginal_fps = clock_hz / marginal if marginal > 0 else overall_fps
    else:
        marginal_fps = overall_fps
    power = timeline.total_energy / elapsed
    bps = marginal_fps * bases_per_frame
    acc = max(1, timeline.accounted_makespan)
    breakdown = {
        k: 100.0 * v / acc for k, v in timeline.category_cycles.items()
    }
    return Stats(
        n_tokens=timeline.n_tokens,
        makespan_cycles=timeline.makespan,
        elapsed_s=elapsed,
        total_energy_j=timeline.total_energy,
        avg_power_w=power,
        bases_per_frame=bases_per_frame,
        bases_per_second=bps,
        bases_per_second_overall=overall_fps * bases_per_frame,
        real_time_floor_bps=floor,
        real_time_ratio=bps / floor if floor else 0.0,
        bps_per_watt=bps / power if power > 0 else 0.0,
        bps_per_mm2=bps / arch.area_mm2,
        breakdown_percent=breakdown,
        category_cycles=dict(timeline.category_cycles),
        **peak,
    )


def write_trace(timeline: Timeline, path) -> None:
    """Line-delimited schedule trace for Gantt rendering.

    Schema v1: header line, then one record per op:
    op_id kind resource start_cycle end_cycle energy_fJ
    """
    lines = ["cimcall-trace v1"]
    for r in sorted(timeline.records, key=lambda r: (r.start, r.op.id)):
        res = "+".join("/".join(str(p) for p in rr) for rr in r.op.resources)
        lines.append(
            f"{r.op.id} {r.op.kind} {res} {r.start} {r.end} {r.op.energy * 1e15:.1f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")

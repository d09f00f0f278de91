"""Layer placement onto the tiled 2-D mesh.

The architecture is a grid of heterogeneous nodes: crossbar tiles,
digital processing units (DPUs), the streaming decoder, the signal
buffer, and the IO port. Mapping lowers each compute layer to a crossbar
footprint (convolutions become tall weight columns, LSTMs a
gate-interleaved block, fully connected layers map directly), splits
layers that exceed one tile column-wise across adjacent tiles, and
assigns every digital or auxiliary operation to a DPU. Placement greedily
keeps producers and consumers close in Manhattan distance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import NetworkGraph, LayerSpec

__all__ = [
    "NodeSpec",
    "ArchDescription",
    "TilePlacement",
    "LayerAssignment",
    "Mapping",
    "layer_footprint",
    "lstm_column_interleave",
    "map_network",
    "validate_mapping",
]

TILE = "CiMTile"
DPU = "DPU"
DECODER = "LADecoder"
SIGBUF = "SignalBuffer"
IO = "IO"


@dataclass(frozen=True)
class NodeSpec:
    kind: str
    x: int
    y: int
    index: int      # id within its kind (tile id, dpu id, ...)


@dataclass
class ArchDescription:
    """Node grid plus tile geometry."""

    width: int
    height: int
    nodes: list[NodeSpec]
    tile_size: int = 512
    area_mm2: float = 25.0

    def __post_init__(self):
        seen = {}
        for n in self.nodes:
            if not (0 <= n.x < self.width and 0 <= n.y < self.height):
                raise ValueError(f"node {n} outside the {self.width}x{self.height} grid")
            if (n.x, n.y) in seen:
                raise ValueError(f"two nodes share grid slot ({n.x},{n.y})")
            seen[(n.x, n.y)] = n
        if len(self.of_kind(DECODER)) != 1 or len(self.of_kind(SIGBUF)) != 1:
            raise ValueError("architecture needs exactly one decoder and one signal buffer")
        if not self.of_kind(TILE) or not self.of_kind(DPU):
            raise ValueError("architecture needs at least one tile and one DPU")

    def of_kind(self, kind: str) -> list[NodeSpec]:
        return sorted((n for n in self.nodes if n.kind == kind), key=lambda n: n.index)

    @property
    def n_tiles(self) -> int:
        return len(self.of_kind(TILE))

    @property
    def n_dpus(self) -> int:
        return len(self.of_kind(DPU))

    def tile(self, i: int) -> NodeSpec:
        return self.of_kind(TILE)[i]

    def dpu(self, i: int) -> NodeSpec:
        return self.of_kind(DPU)[i]

    @property
    def decoder_node(self) -> NodeSpec:
        return self.of_kind(DECODER)[0]

    @property
    def sigbuf_node(self) -> NodeSpec:
        return self.of_kind(SIGBUF)[0]

    @classmethod
    def default(cls, tile_size: int = 512, area_mm2: float = 25.0) -> "ArchDescription":
        """4x4 grid: 11 tiles, 2 DPUs, decoder, signal buffer, IO."""
        spots = [
            (IO, 0, 0, 0), (SIGBUF, 1, 0, 0), (DPU, 2, 0, 0), (TILE, 3, 0, 0),
            (TILE, 0, 1, 1), (TILE, 1, 1, 2), (TILE, 2, 1, 3), (TILE, 3, 1, 4),
            (TILE, 0, 2, 5), (TILE, 1, 2, 6), (DPU, 2, 2, 1), (TILE, 3, 2, 7),
            (TILE, 0, 3, 8), (TILE, 1, 3, 9), (TILE, 2, 3, 10), (DECODER, 3, 3, 0),
        ]
        nodes = [NodeSpec(kind=k, x=x, y=y, index=i) for k, x, y, i in spots]
        return cls(width=4, height=4, nodes=nodes, tile_size=tile_size, area_mm2=area_mm2)


@dataclass
class TilePlacement:
    tile: int
    row_lo: int
    row_hi: int          # exclusive
    col_lo: int
    col_hi: int          # exclusive


@dataclass
class LayerAssignment:
    layer_index: int
    placement: str                       # "analog", "digital", or "aux"
    pieces: list[TilePlacement] = field(default_factory=list)
    dpu: int | None = None               # digital/aux execution unit
    aux_dpu: int | None = None           # post-processing DPU of an analog layer


@dataclass
class Mapping:
    """Per-layer assignments plus the producer/consumer edge metadata."""

    assignments: list[LayerAssignment]
    first_layer_digital: bool = True

    def assignment(self, layer_index: int) -> LayerAssignment:
        return self.assignments[layer_index]

    def analog_assignments(self) -> list[LayerAssignment]:
        return [a for a in self.assignments if a.placement == "analog"]

    def to_json(self) -> str:
        def enc(a: LayerAssignment):
            return {
                "layer": a.layer_index,
                "placement": a.placement,
                "pieces": [
                    [p.tile, p.row_lo, p.row_hi, p.col_lo, p.col_hi] for p in a.pieces
                ],
                "dpu": a.dpu,
                "aux_dpu": a.aux_dpu,
            }
        return json.dumps(
            {
                "format": "cimcall-mapping",
                "version": 1,
                "first_layer_digital": self.first_layer_digital,
                "assignments": [enc(a) for a in self.assignments],
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "Mapping":
        data = json.loads(text)
        if data.get("format") != "cimcall-mapping" or data.get("version") != 1:
            raise ValueError("unrecognized mapping format")
        assignments = []
        for e in data["assignments"]:
            assignments.append(
                LayerAssignment(
                    layer_index=e["layer"],
                    placement=e["placement"],
                    pieces=[TilePlacement(*p) for p in e["pieces"]],
                    dpu=e["dpu"],
                    aux_dpu=e["aux_dpu"],
                )
            )
        return cls(assignments=assignments, first_layer_digital=data["first_layer_digital"])


def layer_footprint(layer: LayerSpec) -> tuple[int, int]:
    """Crossbar rows x columns needed by one compute layer.

    Convolutions lower to (c_in * k_w) rows by c_out columns, LSTMs to
    (input + hidden) rows by 4*hidden columns, fully connected layers to
    (in) rows by (out) columns.
    """
    if layer.kind == "Conv1D":
        return layer.in_channels * layer.kernel_width, layer.out_channels
    if layer.kind == "LSTM":
        return layer.input_size + layer.hidden_size, 4 * layer.hidden_size
    if layer.kind == "FullyConnected":
        return layer.in_features, layer.out_features
    raise ValueError(f"{layer.kind} has no crossbar footprint")


def lstm_column_interleave(hidden_size: int) -> np.ndarray:
    """Column permutation placing each hidden unit's four gates together.

    ``perm[placed]`` is the natural gate-major column index, so
    ``W_natural[:, perm]`` is the on-tile layout and indexing the placed
    columns with ``argsort(perm)`` restores the original matrix.
    """
    unit = np.arange(hidden_size)
    gate = np.arange(4)
    return (gate[None, :] * hidden_size + unit[:, None]).ravel()


def _manhattan(a: NodeSpec, b: NodeSpec) -> int:
    return abs(a.x - b.x) + abs(a.y - b.y)


def map_network(
    graph: NetworkGraph,
    arch: ArchDescription,
    strategy: str = "greedy",
    first_layer_digital: bool = True,
    digital_layers: frozenset[int] | set[int] | None = None,
) -> Mapping:
    """Place every layer of the graph onto the architecture.

    Analog compute layers claim tile regions (splitting column-wise over
    adjacent free tiles when wider than one tile); the first convolution
    runs on a DPU when ``first_layer_digital`` is set, and
    ``digital_layers`` forces additional compute layers (by ordinal
    among compute layers) onto DPUs. Activation and normalization layers
    ride on their producer's post-processing DPU. Placement is
    deterministic: tiles are chosen to minimize Manhattan distance to
    the producing node, ties broken by tile id.
    """
    if strategy != "greedy":
        raise ValueError(f"unknown mapping strategy {strategy!r}")
    size = arch.tile_size
    tiles = arch.of_kind(TILE)
    dpus = arch.of_kind(DPU)
    free = {t.index for t in tiles}
    dpu_load = {d.index: 0 for d in dpus}
    digital_set = set(digital_layers or ())
    if first_layer_digital:
        digital_set.add(0)

    assignments: list[LayerAssignment] = [None] * len(graph.layers)
    prev_node = arch.sigbuf_node
    compute_ordinal = 0
    last_compute_assignment: LayerAssignment | None = None

    def pick_dpu(near: NodeSpec, weight: int) -> int:
        best = min(
            dpus, key=lambda d: (_manhattan(near, d) + 2 * dpu_load[d.index], d.index)
        )
        dpu_load[best.index] += weight
        return best.index

    for i, layer in enumerate(graph.layers):
        if not layer.is_compute:
            # aux layers execute where their producer's results land
            host = last_compute_assignment
            dpu_id = host.aux_dpu if host and host.aux_dpu is not None else host.dpu if host else dpus[0].index
            assignments[i] = LayerAssignment(layer_index=i, placement="aux", dpu=dpu_id)
            continue

        rows, cols = layer_footprint(layer)
        digital = compute_ordinal in digital_set
        if digital:
            dpu_id = pick_dpu(prev_node, 2)
            a = LayerAssignment(layer_index=i, placement="digital", dpu=dpu_id)
            prev_node = arch.dpu(dpu_id)
        else:
            if rows > size:
                raise ValueError(
                    f"layer {i} ({layer.kind}) needs {rows} rows, tile holds {size}"
                )
            n_pieces = -(-cols // size)
            if n_pieces > len(free):
                raise ValueError(
                    f"layer {i} ({layer.kind}) needs {n_pieces} tiles, {len(free)} free"
                )
            chosen = _pick_tiles(arch, free, n_pieces, prev_node)
            pieces = []
            col = 0
            for t in chosen:
                width = min(size, cols - col)
                pieces.append(TilePlacement(tile=t, row_lo=0, row_hi=rows, col_lo=0, col_hi=width))
                free.discard(t)
                col += width
            aux_weight = 8 if layer.kind == "LSTM" else 1
            aux = pick_dpu(arch.tile(chosen[0]), aux_weight)
            a = LayerAssignment(layer_index=i, placement="analog", pieces=pieces, aux_dpu=aux)
            prev_node = arch.dpu(aux)
        assignments[i] = a
        last_compute_assignment = a
        compute_ordinal += 1

    return Mapping(assignments=assignments, first_layer_digital=first_layer_digital)


def _pick_tiles(arch: ArchDescription, free: set, n: int, near: NodeSpec) -> list[int]:
    """Choose n free tiles: closest to the producer, mutually adjacent
    when split (best-effort), deterministic."""
    candidates = sorted(free, key=lambda t: (_manhattan(near, arch.tile(t)), t))
    if n == 1:
        return [candidates[0]]
    best = None
    for first in candidates:
        rest = sorted(
            (t for t in free if t != first),
            key=lambda t: (_manhattan(arch.tile(first), arch.tile(t)), t),
        )
        group = [first] + rest[: n - 1]
        spread = sum(_manhattan(arch.tile(first), arch.tile(t)) for t in group[1:])
        cost = (_manhattan(near, arch.tile(first)) + spread, tuple(group))
        if best is None or cost < best:
            best = cost
    return list(best[1])


def validate_mapping(mapping: Mapping, graph: NetworkGraph, arch: ArchDescription) -> list[str]:
    """Check a mapping against the graph and architecture.

    Returns a list of violation strings; empty means the mapping is
    consistent (bounds, no overlapping cells, every layer assigned,
    first-layer-digital honored when requested).
    """
    violations = []
    size = arch.tile_size
    n_tiles = arch.n_tiles
    occupancy = {t: np.zeros((size, size), dtype=bool) for t in range(n_tiles)}

    if len(mapping.assignments) != len(graph.layers):
        violations.append(
            f"{len(mapping.assignments)} assignments for {len(graph.layers)} layers"
        )
        return violations

    first_compute_idx = next(
        (i for i, l in enumerate(graph.layers) if l.is_compute), None
    )
    for i, layer in enumerate(graph.layers):
        a = mapping.assignments[i]
        if a is None or a.layer_index != i:
            violations.append(f"layer {i} is not assigned exactly once")
            continue
        if layer.is_compute and a.placement == "analog":
            rows, cols = layer_footprint(layer)
            got_cols = 0
            for p in a.pieces:
                if not 0 <= p.tile < n_tiles:
                    violations.append(f"layer {i}: tile id {p.tile} out of range")
                    continue
                if not (0 <= p.row_lo < p.row_hi <= size and 0 <= p.col_lo < p.col_hi <= size):
                    violations.append(f"layer {i}: placement exceeds tile bounds")
                    continue
                if p.row_hi - p.row_lo != rows:
                    violations.append(f"layer {i}: piece rows != layer rows")
                block = occupancy[p.tile][p.row_lo : p.row_hi, p.col_lo : p.col_hi]
                if block.any():
                    violations.append(f"layer {i}: overlaps cells on tile {p.tile}")
                block[:] = True
                got_cols += p.col_hi - p.col_lo
            if got_cols != cols:
                violations.append(f"layer {i}: covers {got_cols} of {cols} columns")
        elif layer.is_compute and a.placement == "digital":
            if a.dpu is None or not 0 <= a.dpu < arch.n_dpus:
                violations.append(f"layer {i}: bad DPU id {a.dpu}")
        elif layer.is_compute:
            violations.append(f"layer {i}: compute layer placed as {a.placement!r}")
    if mapping.first_layer_digital and first_compute_idx is not None:
        if mapping.assignments[first_compute_idx].placement != "digital":
            violations.append("first compute layer requested digital but placed analog")
    return violations

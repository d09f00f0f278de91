"""End-to-end basecalling data path.

Synthetic squiggle generation from a k-mer pore model, per-channel
signal buffering with the on-die SRAM limits, overlapped chunking and
the half-overlap stitch that merges per-chunk calls back into a read,
the aligned-accuracy metric, and the raw-versus-called data reduction
accounting.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "BASES",
    "PoreModel",
    "SquiggleRead",
    "ChunkPlan",
    "Chunk",
    "ChunkCall",
    "SignalBuffer",
    "synth_squiggle",
    "chunk",
    "stitch",
    "aligned_accuracy",
    "align_global",
    "data_reduction_report",
    "read_fasta",
    "write_fasta",
    "read_raw_signal",
    "write_raw_signal",
]

BASES = "ACGT"
_BASE_INDEX = {b: i for i, b in enumerate(BASES)}

N_CHANNELS = 512
CHANNEL_CAPACITY_BYTES = 2508        # 2.45 kB per channel, rounded down
SAMPLE_BYTES = 4


@dataclass
class PoreModel:
    """Mean current level per k-mer plus dwell and noise statistics.

    ``levels`` has one entry per k-mer (4**k of them, base-4 indexed
    with the first base most significant). Dwell is the number of raw
    samples one base produces: geometric with the given mean, or fixed
    at round(mean) when ``dwell_fixed`` is set.
    """

    k: int = 6
    levels: np.ndarray = field(default_factory=lambda: np.zeros(0))
    level_std: float = 0.3
    dwell_mean: float = 10.0
    dwell_fixed: bool = False

    def __post_init__(self):
        if self.levels.size == 0:
            raise ValueError("pore model needs a level table")
        if self.levels.shape != (4**self.k,):
            raise ValueError(f"level table must cover all {4**self.k} {self.k}-mers")
        if self.dwell_mean <= 0:
            raise ValueError("mean samples-per-base must be positive")
        if self.level_std < 0:
            raise ValueError("level noise std must be non-negative")

    @classmethod
    def random(cls, seed: int = 0, k: int = 6, spread: float = 2.0, **kw) -> "PoreModel":
        rng = np.random.default_rng(seed)
        return cls(k=k, levels=rng.uniform(-spread, spread, size=4**k), **kw)


@dataclass
class SquiggleRead:
    """Raw current samples for one strand, with truth when synthetic."""

    samples: np.ndarray
    truth: str | None = None
    channel: int = 0
    name: str = "read"


def _kmer_indices(sequence: str, k: int) -> np.ndarray:
    """k-mer index per base; the window starts at the base and the tail
    is padded by repeating the final base."""
    try:
        codes = np.array([_BASE_INDEX[b] for b in sequence], dtype=np.int64)
    except KeyError as e:
        raise ValueError(f"sequence contains non-ACGT symbol {e.args[0]!r}") from None
    ext = np.concatenate([codes, np.full(k - 1, codes[-1])]) if k > 1 else codes
    idx = np.zeros(len(codes), dtype=np.int64)
    for j in range(k):
        idx = idx * 4 + ext[j : j + len(codes)]
    return idx


def synth_squiggle(sequence: str, model: PoreModel, seed: int = 0) -> SquiggleRead:
    """Generate the raw sample stream for a base sequence.

    Per base: draw a dwell, emit that many copies of the k-mer level,
    add white level noise. Deterministic per seed.
    """
    if not sequence:
        raise ValueError("empty sequence")
    rng = np.random.default_rng(seed)
    idx = _kmer_indices(sequence, model.k)
    if model.dwell_fixed:
        dwell = np.full(len(sequence), int(round(model.dwell_mean)), dtype=np.int64)
    else:
        dwell = rng.geometric(1.0 / model.dwell_mean, size=len(sequence)).astype(np.int64)
    samples = np.repeat(model.levels[idx], dwell)
    if model.level_std > 0:
        samples = samples + rng.normal(0.0, model.level_std, size=samples.size)
    return SquiggleRead(samples=samples.astype(np.float32), truth=sequence)


@dataclass(frozen=True)
class ChunkPlan:
    """Overlapped chunking geometry."""

    chunk_size: int = 4000
    overlap: int = 500

    def __post_init__(self):
        if not 0 <= self.overlap < self.chunk_size:
            raise ValueError("need 0 <= overlap < chunk_size")

    @property
    def stride(self) -> int:
        return self.chunk_size - self.overlap

    @property
    def duplicated_sample_fraction(self) -> float:
        """Fraction of each interior chunk's samples shared with its
        neighbors (both edges)."""
        return 2.0 * self.overlap / self.chunk_size


@dataclass
class Chunk:
    samples: np.ndarray
    start: int
    true_len: int
    padded: bool


def chunk(read: SquiggleRead | np.ndarray, plan: ChunkPlan) -> list[Chunk]:
    """Split a read into overlapped chunks covering [0, len).

    The final chunk is zero-padded to full size and flagged when the
    read does not divide evenly.
    """
    samples = read.samples if isinstance(read, SquiggleRead) else np.asarray(read)
    n = samples.size
    if n < 1:
        raise ValueError("empty read")
    starts = [0]
    while starts[-1] + plan.chunk_size < n:
        starts.append(starts[-1] + plan.stride)
    out = []
    for s in starts:
        piece = samples[s : s + plan.chunk_size]
        true_len = piece.size
        padded = true_len < plan.chunk_size
        if padded:
            piece = np.pad(piece, (0, plan.chunk_size - true_len))
        out.append(Chunk(samples=piece, start=s, true_len=true_len, padded=padded))
    return out


@dataclass
class ChunkCall:
    """Decoded bases of one chunk, each tagged with its source frame."""

    bases: str
    frames: np.ndarray        # frame index per base, within the chunk
    start: int                # chunk start offset in samples
    t_frames: int             # frame count of the chunk


def stitch(calls: list[ChunkCall], plan: ChunkPlan, samples_per_frame: int) -> str:
    """Merge per-chunk calls into the read call.

    Each interior chunk boundary trims half the overlap (in frames) from
    both sides; the first and last chunks keep their outer edges. The
    kept windows tile the read, so concatenating the surviving bases in
    order yields the full-length call.
    """
    if not calls:
        raise ValueError("no chunk calls to stitch")
    calls = sorted(calls, key=lambda c: c.start)
    trim = (plan.overlap // samples_per_frame) // 2
    parts = []
    for i, call in enumerate(calls):
        lo = 0 if i == 0 else trim
        hi = call.t_frames if i == len(calls) - 1 else call.t_frames - trim
        frames = np.asarray(call.frames)
        keep = (frames >= lo) & (frames < hi)
        parts.append("".join(b for b, k in zip(call.bases, keep) if k))
    return "".join(parts)


class SignalBuffer:
    """Per-channel FIFO sample queues with the on-die SRAM budget.

    512 channels, 2.45 kB each. When an energy ledger is attached every
    ingest and drain accounts SRAM read/write energy per bit.
    """

    def __init__(
        self,
        n_channels: int = N_CHANNELS,
        channel_capacity_bytes: int = CHANNEL_CAPACITY_BYTES,
        sample_bytes: int = SAMPLE_BYTES,
        sram_bit_energy: float = 0.0,
    ):
        self.n_channels = n_channels
        self.channel_capacity_bytes = channel_capacity_bytes
        self.sample_bytes = sample_bytes
        self.sram_bit_energy = sram_bit_energy
        self.energy_joules = 0.0
        self._queues: list[list[float]] = [[] for _ in range(n_channels)]

    @property
    def total_capacity_bytes(self) -> int:
        return self.n_channels * self.channel_capacity_bytes

    @property
    def channel_capacity_samples(self) -> int:
        return self.channel_capacity_bytes // self.sample_bytes

    def occupancy_bytes(self, channel: int | None = None) -> int:
        if channel is None:
            return sum(len(q) for q in self._queues) * self.sample_bytes
        return len(self._queues[channel]) * self.sample_bytes

    def ingest(self, channel: int, samples) -> None:
        if not 0 <= channel < self.n_channels:
            raise ValueError(f"channel {channel} out of range")
        samples = np.atleast_1d(np.asarray(samples, dtype=np.float64))
        q = self._queues[channel]
        if (len(q) + samples.size) * self.sample_bytes > self.channel_capacity_bytes:
            raise OverflowError(
                f"channel {channel} would exceed {self.channel_capacity_bytes} bytes"
            )
        q.extend(samples.tolist())
        self.energy_joules += samples.size * self.sample_bytes * 8 * self.sram_bit_energy

    def drain(self, channel: int, n_samples: int) -> np.ndarray:
        if not 0 <= channel < self.n_channels:
            raise ValueError(f"channel {channel} out of range")
        q = self._queues[channel]
        if n_samples > len(q):
            raise ValueError(f"channel {channel} holds only {len(q)} samples")
        out = np.array(q[:n_samples])
        del q[:n_samples]
        self.energy_joules += out.size * self.sample_bytes * 8 * self.sram_bit_energy
        return out


def align_global(a: str, b: str, match: float = 1.0, mismatch: float = -1.0, gap: float = -1.0):
    """Needleman-Wunsch alignment. Returns (aligned_a, aligned_b).

    Traceback prefers diagonal over a-gap over b-gap, which keeps the
    metric deterministic when several alignments score equally.
    """
    na, nb = len(a), len(b)
    ca = np.frombuffer(a.encode(), dtype=np.uint8)
    cb = np.frombuffer(b.encode(), dtype=np.uint8)
    score = np.zeros((na + 1, nb + 1))
    score[:, 0] = np.arange(na + 1) * gap
    score[0, :] = np.arange(nb + 1) * gap
    sub = np.where(ca[:, None] == cb[None, :], match, mismatch)
    # The left-gap chain within a row is a max-plus prefix scan, so each
    # row fills with a few vector ops instead of an inner loop.
    jg = np.arange(nb + 1) * gap
    for i in range(1, na + 1):
        cand = np.maximum(score[i - 1, :-1] + sub[i - 1], score[i - 1, 1:] + gap)
        adj = np.empty(nb + 1)
        adj[0] = i * gap
        adj[1:] = cand - jg[1:]
        score[i] = np.maximum.accumulate(adj) + jg
    out_a, out_b = [], []
    i, j = na, nb
    eps = 1e-9
    while i > 0 or j > 0:
        if i > 0 and j > 0 and abs(score[i, j] - (score[i - 1, j - 1] + sub[i - 1, j - 1])) < eps:
            out_a.append(a[i - 1])
            out_b.append(b[j - 1])
            i -= 1
            j -= 1
        elif i > 0 and abs(score[i, j] - (score[i - 1, j] + gap)) < eps:
            out_a.append(a[i - 1])
            out_b.append("-")
            i -= 1
        else:
            out_a.append("-")
            out_b.append(b[j - 1])
            j -= 1
    return "".join(reversed(out_a)), "".join(reversed(out_b))


def aligned_accuracy(
    call: str, reference: str, match: float = 1.0, mismatch: float = -1.0, gap: float = -1.0
) -> float:
    """Exactly matched bases divided by the total alignment length,
    insertions and deletions included."""
    if not call or not reference:
        raise ValueError("aligned_accuracy needs two non-empty sequences")
    aa, ab = align_global(call, reference, match, mismatch, gap)
    matches = sum(1 for x, y in zip(aa, ab) if x == y)
    return matches / len(aa)


def data_reduction_report(
    reads: list[SquiggleRead],
    calls: list[str],
    raw_bytes_per_sample: float = 4.0,
    bytes_per_base: float = 1.0,
    container_bytes: dict[str, float] | None = None,
) -> dict:
    """Raw-versus-called size accounting.

    The communication ratio is total raw bytes over total called bytes.
    When container sizes are supplied (bytes per format), storage ratios
    are reported against the first entry as baseline.
    """
    if not reads:
        return {"reads": 0}
    raw = sum(float(r.samples.size) * raw_bytes_per_sample for r in reads)
    called = sum(len(c) * bytes_per_base for c in calls)
    report = {
        "reads": len(reads),
        "raw_bytes": raw,
        "called_bytes": called,
        "communication_ratio": raw / called if called else float("inf"),
    }
    if container_bytes:
        names = list(container_bytes)
        base = container_bytes[names[0]]
        report["storage_ratios"] = {n: base / container_bytes[n] for n in names[1:]}
    return report


def read_fasta(path: str | Path) -> list[tuple[str, str]]:
    records = []
    name, seq = None, []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            if name is not None:
                records.append((name, "".join(seq)))
            name, seq = line[1:].split()[0], []
        else:
            seq.append(line)
    if name is not None:
        records.append((name, "".join(seq)))
    return records


def write_fasta(path: str | Path, records: list[tuple[str, str]]) -> None:
    lines = []
    for name, seq in records:
        lines.append(f">{name}")
        for i in range(0, len(seq), 80):
            lines.append(seq[i : i + 80])
    Path(path).write_text("\n".join(lines) + "\n")


_RAW_MAGIC = b"CSIG"


def write_raw_signal(path: str | Path, reads: list[SquiggleRead]) -> None:
    """Binary raw-signal container: per read a little-endian header
    (channel id, sample count) followed by float32 samples."""
    with open(path, "wb") as f:
        f.write(_RAW_MAGIC + struct.pack("<H", 1))
        for r in reads:
            f.write(struct.pack("<II", r.channel, r.samples.size))
            f.write(np.asarray(r.samples, dtype="<f4").tobytes())


def read_raw_signal(path: str | Path) -> list[SquiggleRead]:
    data = Path(path).read_bytes()
    if data[:4] != _RAW_MAGIC:
        raise ValueError("not a raw signal file")
    (version,) = struct.unpack("<H", data[4:6])
    if version != 1:
        raise ValueError(f"unsupported raw signal version {version}")
    off = 6
    reads = []
    i = 0
    while off < len(data):
        channel, count = struct.unpack("<II", data[off : off + 8])
        off += 8
        samples = np.frombuffer(data[off : off + 4 * count], dtype="<f4").copy()
        off += 4 * count
        reads.append(SquiggleRead(samples=samples, channel=channel, name=f"read{i}"))
        i += 1
    return reads

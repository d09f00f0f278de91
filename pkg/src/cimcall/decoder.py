"""CRF-CTC sequence decoders.

The network emits, per timestep, a log-score for every state transition:
``frames[t, s, d]`` scores leaving source state ``s`` with decision ``d``,
where decision 0 is "stay" (emit nothing, remain in ``s``) and decisions
1..4 move to base A/C/G/T (emitting that base). For a state length of 1
the four states are the four bases and each timestep carries the 20
transition scores the streaming hardware consumes.

Three decoders share this representation:

* ``full_crf_decode`` is the exact two-stage reference. Stage one runs
  sum-semiring forward/backward recursions to turn raw scores into
  per-transition posterior scores; stage two runs max-plus
  forward/backward over those posteriors and picks the globally
  consistent best transition at every timestep.
* ``greedy_decode`` is the classic per-frame argmax baseline.
* ``lookaround_decode`` is the streaming approximation: exact forward
  recursions, backward passes truncated to bounded lookahead windows
  (``l_tp`` frames for the posterior stage, ``l_mlp`` for the max
  stage), decisions emitted with fixed lag.

Ties break toward the lowest flat transition index (source major,
decision minor) everywhere, which makes "stay" win an all-equal frame.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "N_BASES",
    "N_DECISIONS",
    "BASES",
    "STAY",
    "LAParams",
    "DecoderCost",
    "MoveSequence",
    "transition_destinations",
    "full_crf_decode",
    "greedy_decode",
    "LookAroundDecoder",
    "lookaround_decode",
    "decoder_cost",
    "collapse_moves",
]

N_BASES = 4
N_DECISIONS = N_BASES + 1
STAY = 0
BASES = "ACGT"


@dataclass(frozen=True)
class LAParams:
    """Lookahead depths of the streaming decoder.

    ``l_tp`` frames of lookahead feed the posterior (transition
    probability) stage, ``l_mlp`` the max-likely-path stage. The
    hardware needs ``2*l_tp + 2*l_mlp`` registers and decides a frame
    ``2*l_tp + 2*l_mlp + 1`` cycles after it enters the block.
    """

    l_tp: int = 4
    l_mlp: int = 1

    def __post_init__(self):
        if self.l_tp < 1 or self.l_mlp < 1:
            raise ValueError("lookahead depths must be at least 1")

    @property
    def registers(self) -> int:
        return 2 * self.l_tp + 2 * self.l_mlp

    @property
    def latency_cycles(self) -> int:
        return self.registers + 1


@dataclass(frozen=True)
class DecoderCost:
    registers: int
    latency_cycles: int
    parallel_lookahead_units: tuple[int, int]


def decoder_cost(params: LAParams) -> DecoderCost:
    """Register/latency cost of a lookaround decoder instance."""
    return DecoderCost(
        registers=params.registers,
        latency_cycles=params.latency_cycles,
        parallel_lookahead_units=(params.l_tp, params.l_mlp),
    )


@dataclass
class MoveSequence:
    """Decoded per-timestep decisions plus the initial state.

    ``moves[t]`` is 0 for stay or ``1 + base`` for a move. Collapsing
    emits the initial state's bases followed by one base per move.
    """

    init_state: int
    moves: np.ndarray
    n_states: int = N_BASES

    @property
    def state_len(self) -> int:
        n, k = self.n_states, 0
        while n > 1:
            n //= N_BASES
            k += 1
        return k

    def collapse(self) -> str:
        return collapse_moves(self)

    def collapse_with_frames(self) -> tuple[str, list[int]]:
        """Base string plus the frame index that emitted each base.

        The initial state's bases are attributed to frame 0; a move at
        timestep t (1-based frame t, stored at moves[t-1]) is attributed
        to frame index t-1 so indices stay within [0, T).
        """
        out = []
        frames = []
        for b in _state_to_bases(self.init_state, self.state_len):
            out.append(b)
            frames.append(0)
        for t, d in enumerate(self.moves):
            if d != STAY:
                out.append(BASES[d - 1])
                frames.append(t)
        return "".join(out), frames


def _state_to_bases(state: int, state_len: int) -> str:
    digits = []
    for _ in range(state_len):
        digits.append(BASES[state % N_BASES])
        state //= N_BASES
    return "".join(reversed(digits))


def collapse_moves(moves: MoveSequence) -> str:
    """Collapse a move sequence to its base string."""
    return moves.collapse_with_frames()[0]


def transition_destinations(n_states: int) -> np.ndarray:
    """Destination state table, shape (n_states, 5).

    Stay keeps the source state; a move shifts the state's base history
    left and appends the new base (for state length 1 the destination is
    simply the new base).
    """
    s = np.arange(n_states)[:, None]
    d = np.arange(N_DECISIONS)[None, :]
    dest = np.where(d == STAY, s, (s * N_BASES + (d - 1)) % n_states)
    return dest.astype(np.int64)


def _incoming_tables(n_states: int) -> tuple[np.ndarray, np.ndarray]:
    """For each destination state, the 5 (source, decision) pairs."""
    dest = transition_destinations(n_states)
    src = np.empty((n_states, N_DECISIONS), dtype=np.int64)
    dec = np.empty((n_states, N_DECISIONS), dtype=np.int64)
    fill = np.zeros(n_states, dtype=np.int64)
    for s in range(n_states):
        for d in range(N_DECISIONS):
            t = dest[s, d]
            src[t, fill[t]] = s
            dec[t, fill[t]] = d
            fill[t] += 1
    assert (fill == N_DECISIONS).all()
    return src, dec


def _check_frames(frames: np.ndarray) -> np.ndarray:
    w = np.asarray(frames, dtype=np.float64)
    if w.ndim != 3 or w.shape[2] != N_DECISIONS:
        raise ValueError("frames must have shape (T, n_states, 5)")
    if w.shape[0] < 1:
        raise ValueError("need at least one frame")
    n = w.shape[1]
    while n > 1 and n % N_BASES == 0:
        n //= N_BASES
    if n != 1:
        raise ValueError("n_states must be a power of 4")
    if not np.all(np.isfinite(w)):
        raise ValueError("frames contain NaN or Inf scores")
    return w


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))).squeeze(axis)


def _argmax_transition(scores: np.ndarray) -> tuple[int, int]:
    """Lowest-flat-index argmax over an (n_states, 5) score table."""
    flat = int(np.argmax(scores))
    return flat // N_DECISIONS, flat % N_DECISIONS


def _posterior_scores(w: np.ndarray) -> np.ndarray:
    """Stage one: per-timestep per-transition posterior scores.

    u[t, s, d] = alpha[t-1, s] + w[t, s, d] + beta[t+1, dest(s, d)],
    with uniform (all-zero) boundary conditions at both ends.
    """
    t_len, n_states, _ = w.shape
    dest = transition_destinations(n_states)
    src, dec = _incoming_tables(n_states)
    alpha = np.zeros((t_len + 1, n_states))
    for t in range(t_len):
        arrive = alpha[t][src] + w[t][src, dec]
        alpha[t + 1] = _logsumexp(arrive, axis=1)
    beta = np.zeros((t_len + 2, n_states))
    for t in range(t_len, 0, -1):
        leave = w[t - 1] + beta[t + 1][dest]
        beta[t] = _logsumexp(leave, axis=1)
    beta_next = beta[2:][np.arange(t_len)[:, None, None], dest[None, :, :]]
    u = alpha[:t_len, :, None] + w + beta_next
    return u


def _max_plus_decisions(u: np.ndarray) -> MoveSequence:
    """Stage two: max-plus smoothing over posteriors, argmax per step."""
    t_len, n_states, _ = u.shape
    dest = transition_destinations(n_states)
    src, dec = _incoming_tables(n_states)
    fwd = np.zeros((t_len + 1, n_states))
    for t in range(t_len):
        fwd[t + 1] = np.max(fwd[t][src] + u[t][src, dec], axis=1)
    bwd = np.zeros((t_len + 2, n_states))
    for t in range(t_len, 0, -1):
        bwd[t] = np.max(u[t - 1] + bwd[t + 1][dest], axis=1)
    moves = np.empty(t_len, dtype=np.int64)
    init_state = 0
    for t in range(t_len):
        m = fwd[t][:, None] + u[t] + bwd[t + 2][dest]
        s, d = _argmax_transition(m)
        if t == 0:
            init_state = s
        moves[t] = d
    return MoveSequence(init_state=init_state, moves=moves, n_states=n_states)


def full_crf_decode(frames: np.ndarray) -> MoveSequence:
    """Exact two-stage decode over a complete chunk of frames.

    Equivalent to enumerating every transition path, accumulating each
    path's raw score into per-transition posteriors, then selecting per
    timestep the transition on the posterior-maximizing path. Adding any
    constant to a frame leaves the output unchanged.
    """
    w = _check_frames(frames)
    return _max_plus_decisions(_posterior_scores(w))


def greedy_decode(frames: np.ndarray) -> MoveSequence:
    """Per-frame argmax baseline.

    The first frame picks the best of all transitions; afterwards the
    source state is forced to the previous frame's destination and only
    that row competes.
    """
    w = _check_frames(frames)
    t_len, n_states, _ = w.shape
    dest = transition_destinations(n_states)
    s, d = _argmax_transition(w[0])
    init_state = s
    moves = np.empty(t_len, dtype=np.int64)
    moves[0] = d
    state = dest[s, d]
    for t in range(1, t_len):
        d = int(np.argmax(w[t][state]))
        moves[t] = d
        state = dest[state, d]
    return MoveSequence(init_state=init_state, moves=moves, n_states=n_states)


class LookAroundDecoder:
    """Streaming windowed decoder for state length 1.

    Feed frames in order with :meth:`push`; each call returns the
    decisions that became final. Call :meth:`finish` once the stream
    ends to flush the tail (shrinking windows). The decoder holds at
    most ``l_tp + 1`` raw frames and ``l_mlp + 1`` posterior frames, and
    a decision for frame t is emitted as soon as frame
    ``t + l_tp + l_mlp`` has been consumed.
    """

    def __init__(self, params: LAParams, n_states: int = N_BASES):
        if n_states != N_BASES:
            raise ValueError("the streaming decoder supports state length 1 only")
        self.params = params
        self.n_states = n_states
        self._dest = transition_destinations(n_states)
        self._src, self._dec = _incoming_tables(n_states)
        self._alpha = np.zeros(n_states)
        self._fwd = np.zeros(n_states)
        self._w = deque()          # raw frames awaiting posterior computation
        self._u = deque()          # posterior frames awaiting decision
        self._w_base = 0           # stream index of _w[0] (0-based)
        self._u_base = 0           # stream index of _u[0]
        self._n_in = 0
        self._n_out = 0
        self._decisions: list[tuple[int, int]] = []
        self._finished = False

    @property
    def frames_consumed(self) -> int:
        return self._n_in

    @property
    def frames_decided(self) -> int:
        return self._n_out

    @property
    def buffered_frames(self) -> int:
        return len(self._w) + len(self._u)

    def push(self, frame: np.ndarray) -> list[tuple[int, int]]:
        """Consume one frame; return newly final (source, decision) pairs."""
        if self._finished:
            raise RuntimeError("decoder already finished")
        w = np.asarray(frame, dtype=np.float64)
        if w.shape != (self.n_states, N_DECISIONS):
            raise ValueError("frame must have shape (n_states, 5)")
        if not np.all(np.isfinite(w)):
            raise ValueError("frame contains NaN or Inf scores")
        self._w.append(w)
        self._n_in += 1
        # frame t (0-based) finalizes the posterior of t - l_tp
        t_u = self._n_in - 1 - self.params.l_tp
        if t_u >= 0:
            self._emit_posterior()
        out = []
        t_d = self._n_in - 1 - self.params.l_tp - self.params.l_mlp
        if t_d >= 0:
            out.extend(self._emit_decision())
        return out

    def finish(self) -> list[tuple[int, int]]:
        """Flush remaining decisions with naturally shrinking windows."""
        if self._finished:
            return []
        self._finished = True
        out = []
        while self._w:
            self._emit_posterior()
        while self._u:
            out.extend(self._emit_decision())
        return out

    def _emit_posterior(self):
        """Finalize u for the oldest raw frame using the l_tp window."""
        w_t = self._w.popleft()
        t = self._w_base
        self._w_base += 1
        beta = np.zeros(self.n_states)
        # backward pass over the buffered lookahead frames (t+1 .. t+l_tp)
        for w_f in reversed(self._w):
            beta = _logsumexp(w_f + beta[self._dest], axis=1)
        u = self._alpha[:, None] + w_t + beta[self._dest]
        arrive = self._alpha[self._src] + w_t[self._src, self._dec]
        self._alpha = _logsumexp(arrive, axis=1)
        self._u.append(u)

    def _emit_decision(self) -> list[tuple[int, int]]:
        """Decide the oldest posterior frame using the l_mlp window."""
        u_t = self._u.popleft()
        self._u_base += 1
        bwd = np.zeros(self.n_states)
        for u_f in reversed(self._u):
            bwd = np.max(u_f + bwd[self._dest], axis=1)
        m = self._fwd[:, None] + u_t + bwd[self._dest]
        s, d = _argmax_transition(m)
        self._fwd = np.max(self._fwd[self._src] + u_t[self._src, self._dec], axis=1)
        self._n_out += 1
        self._decisions.append((s, d))
        return [(s, d)]


def lookaround_decode(frame_stream, params: LAParams) -> MoveSequence:
    """Run the streaming decoder over an iterable of frames.

    Accepts a (T, 4, 5) array or any iterable yielding (4, 5) frames.
    """
    frames = frame_stream
    if isinstance(frames, np.ndarray):
        frames = iter(frames)
    dec = LookAroundDecoder(params)
    decisions: list[tuple[int, int]] = []
    for frame in frames:
        decisions.extend(dec.push(frame))
    decisions.extend(dec.finish())
    if not decisions:
        raise ValueError("need at least one frame")
    moves = np.array([d for _, d in decisions], dtype=np.int64)
    return MoveSequence(init_state=decisions[0][0], moves=moves, n_states=dec.n_states)

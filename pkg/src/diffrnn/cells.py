"""Forward dynamics of the recurrent cell zoo.

Four cell kinds share one code path:

* ``rnn``     — classical tanh recurrence, no memory cell.
* ``lstm``    — conventional LSTM (input/forget/output gates, internal state).
* ``dos``     — LSTM whose gates additionally see one finite-difference
                derivative of the internal state (order n): order 0 is the
                state itself, order 1 its velocity, order 2 its acceleration.
* ``drnn``    — LSTM whose gates see the weighted sum of ALL derivative
                orders 0..N.

A heterogeneous stack where layer k uses a ``dos`` cell of order k-1 builds
up increasingly high-order dynamics with depth; helpers below construct that
stack as well as homogeneous LSTM stacks.

Gate update order within a step matters and is fixed as: input/forget gates
read the derivative of the PREVIOUS state; the state is then updated; the
output gate reads the derivative of the CURRENT state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import ShapeMismatchError, seeded_rng, sigmoid, softmax, tanh

VALID_KINDS = ("rnn", "lstm", "dos", "drnn")


@dataclass(frozen=True)
class CellKind:
    """``order`` is the single derivative order for ``dos`` cells and the
    maximum order for ``drnn`` cells; it is ignored for ``rnn``/``lstm``."""

    kind: str
    order: int = 0

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ValueError(f"unknown cell kind {self.kind!r}")
        if self.order < 0:
            raise ValueError("derivative order must be >= 0")

    @property
    def dos_orders(self) -> tuple[int, ...]:
        if self.kind == "dos":
            return (self.order,)
        if self.kind == "drnn":
            return tuple(range(self.order + 1))
        return ()

    @property
    def max_order(self) -> int:
        return max(self.dos_orders, default=0)


@dataclass
class CellParams:
    """All weights of one gated recurrent layer.

    The ``w_*d`` dicts map a derivative order to its gate modulation matrix;
    they are empty for a plain LSTM.
    """

    w_ix: np.ndarray
    w_fx: np.ndarray
    w_ox: np.ndarray
    w_sx: np.ndarray
    w_ih: np.ndarray
    w_fh: np.ndarray
    w_oh: np.ndarray
    w_sh: np.ndarray
    w_id: dict[int, np.ndarray]
    w_fd: dict[int, np.ndarray]
    w_od: dict[int, np.ndarray]
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_s: np.ndarray

    @property
    def units(self) -> int:
        return self.b_i.shape[0]

    @property
    def input_units(self) -> int:
        return self.w_ix.shape[1]


@dataclass
class RnnParams:
    w_hh: np.ndarray
    w_hx: np.ndarray
    b_h: np.ndarray

    @property
    def units(self) -> int:
        return self.b_h.shape[0]

    @property
    def input_units(self) -> int:
        return self.w_hx.shape[1]


@dataclass
class OutputParams:
    w_yh: np.ndarray
    b_y: np.ndarray


@dataclass
class LayerState:
    """Evolving state of one layer: internal state ``s``, hidden state ``h``,
    and a bounded history of past internal states (most recent first) deep
    enough for the layer's highest derivative order."""

    s: np.ndarray
    h: np.ndarray
    history: list[np.ndarray] = field(default_factory=list)


@dataclass(frozen=True)
class StackConfig:
    layers: tuple[tuple[CellKind, int], ...]
    input_units: int
    output_classes: int
    tie_gate_hidden_weights: bool = False

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a stack needs at least one layer")
        if self.output_classes < 2:
            raise ValueError("need at least 2 output classes")


@dataclass
class Model:
    config: StackConfig
    layers: list  # CellParams | RnnParams, parallel to config.layers
    output: OutputParams
    seed: int = 0


def dos(order: int, s_t: np.ndarray, history) -> np.ndarray:
    """Order-n backward finite difference of the internal state.

    ``history`` holds earlier states, most recent first; missing lags at the
    start of a sequence are treated as zero.  Order 0 returns ``s_t``; order 1
    is s_t - s_{t-1}; order 2 is s_t - 2 s_{t-1} + s_{t-2}; higher orders
    iterate the differencing.
    """
    out = np.array(s_t, dtype=np.float64, copy=True)
    for j in range(1, order + 1):
        coeff = (-1.0) ** j * math.comb(order, j)
        if j - 1 < len(history):
            out += coeff * history[j - 1]
    return out


# ---------------------------------------------------------------------------
# Initialization


def _uniform_matrix(rng, rows, cols):
    r = 1.0 / math.sqrt(cols)
    return rng.uniform(-r, r, size=(rows, cols))


def init_cell_params(rng, units: int, input_units: int, orders) -> CellParams:
    # Forget bias starts at +1 so early memory is retained (keeps small-lr
    # training from losing signal before the gates learn).
    def mat_in():
        return _uniform_matrix(rng, units, input_units)

    def mat_hid():
        return _uniform_matrix(rng, units, units)

    return CellParams(
        w_ix=mat_in(), w_fx=mat_in(), w_ox=mat_in(), w_sx=mat_in(),
        w_ih=mat_hid(), w_fh=mat_hid(), w_oh=mat_hid(), w_sh=mat_hid(),
        w_id={n: mat_hid() for n in orders},
        w_fd={n: mat_hid() for n in orders},
        w_od={n: mat_hid() for n in orders},
        b_i=np.zeros(units),
        b_f=np.ones(units),
        b_o=np.zeros(units),
        b_s=np.zeros(units),
    )


def init_rnn_params(rng, units: int, input_units: int) -> RnnParams:
    return RnnParams(
        w_hh=_uniform_matrix(rng, units, units),
        w_hx=_uniform_matrix(rng, units, input_units),
        b_h=np.zeros(units),
    )


def build_model(config: StackConfig, seed: int = 0) -> Model:
    rng = seeded_rng(seed)
    layers = []
    in_units = config.input_units
    for kind, units in config.layers:
        if kind.kind == "rnn":
            layers.append(init_rnn_params(rng, units, in_units))
        else:
            layers.append(init_cell_params(rng, units, in_units, kind.dos_orders))
        in_units = units
    output = OutputParams(
        w_yh=_uniform_matrix(rng, config.output_classes, in_units),
        b_y=np.zeros(config.output_classes),
    )
    return Model(config=config, layers=layers, output=output, seed=seed)


def d2rnn_config(depth: int, input_units: int, units: int, classes: int) -> StackConfig:
    """Canonical heterogeneous stack: layer k (1-indexed) uses derivative
    order k-1, so depth 3 stacks orders 0, 1, 2."""
    layers = tuple((CellKind("dos", k), units) for k in range(depth))
    return StackConfig(layers=layers, input_units=input_units, output_classes=classes)


def stacked_lstm_config(depth: int, input_units: int, units: int, classes: int) -> StackConfig:
    layers = tuple((CellKind("lstm"), units) for _ in range(depth))
    return StackConfig(layers=layers, input_units=input_units, output_classes=classes)


# ---------------------------------------------------------------------------
# Forward pass


@dataclass
class LayerTape:
    """Per-timestep intermediates of one layer; arrays are (T, units),
    row index = t-1.  ``d_prev``/``d_cur`` map a derivative order to the
    (T, units) array of state derivatives seen by the input/forget gates
    (previous state) and the output gate (current state)."""

    x: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray     # candidate tanh activation
    s: np.ndarray
    h: np.ndarray
    tanh_s: np.ndarray
    d_prev: dict[int, np.ndarray]
    d_cur: dict[int, np.ndarray]


@dataclass
class Tape:
    """Everything a backward pass needs from one forward run."""

    config: StackConfig
    layers: list[LayerTape]
    logits: np.ndarray        # (T, classes), post-tanh confidence scores
    hidden_top: np.ndarray    # (T, units) h_t of the final layer


def init_layer_state(units: int) -> LayerState:
    return LayerState(s=np.zeros(units), h=np.zeros(units), history=[])


def rnn_step(params: RnnParams, state: LayerState, x_t: np.ndarray) -> LayerState:
    h = tanh(params.w_hh @ state.h + params.w_hx @ x_t + params.b_h)
    return LayerState(s=state.s, h=h, history=[])


def cell_step(
    params: CellParams,
    state: LayerState,
    x_t: np.ndarray,
    kind: CellKind,
    tie_gates: bool = False,
):
    """One step of a gated cell.  Returns (new_state, record) where record is
    a dict of intermediates for the tape."""
    if x_t.shape[0] != params.input_units:
        raise ShapeMismatchError(
            f"layer expects input of length {params.input_units}, got {x_t.shape[0]}"
        )
    orders = kind.dos_orders
    s_prev, h_prev, hist = state.s, state.h, state.history

    d_prev = {n: dos(n, s_prev, hist) for n in orders}
    w_fh = params.w_ih if tie_gates else params.w_fh
    w_oh = params.w_ih if tie_gates else params.w_oh

    z_i = params.w_ih @ h_prev + params.w_ix @ x_t + params.b_i
    z_f = w_fh @ h_prev + params.w_fx @ x_t + params.b_f
    for n in orders:
        z_i += params.w_id[n] @ d_prev[n]
        z_f += params.w_fd[n] @ d_prev[n]
    i_t = sigmoid(z_i)
    f_t = sigmoid(z_f)

    g_t = tanh(params.w_sh @ h_prev + params.w_sx @ x_t + params.b_s)
    s_t = f_t * s_prev + i_t * g_t

    hist_cur = [s_prev] + hist
    d_cur = {n: dos(n, s_t, hist_cur) for n in orders}

    z_o = w_oh @ h_prev + params.w_ox @ x_t + params.b_o
    for n in orders:
        z_o += params.w_od[n] @ d_cur[n]
    o_t = sigmoid(z_o)

    th = np.tanh(s_t)
    h_t = o_t * th

    new_hist = hist_cur[: kind.max_order] if kind.max_order > 0 else []
    new_state = LayerState(s=s_t, h=h_t, history=new_hist)
    record = dict(
        x=x_t, i=i_t, f=f_t, o=o_t, g=g_t, s=s_t, h=h_t, tanh_s=th,
        d_prev=d_prev, d_cur=d_cur,
    )
    return new_state, record


def lstm_step(params: CellParams, state: LayerState, x_t: np.ndarray):
    """Conventional LSTM update (no derivative terms in the gates)."""
    new_state, rec = cell_step(params, state, x_t, CellKind("lstm"))
    return new_state, (rec["i"], rec["f"], rec["o"])


def dos_cell_step(params: CellParams, state: LayerState, x_t: np.ndarray, order: int):
    new_state, rec = cell_step(params, state, x_t, CellKind("dos", order))
    return new_state, (rec["i"], rec["f"], rec["o"])


def drnn_cell_step(params: CellParams, state: LayerState, x_t: np.ndarray, max_order: int):
    new_state, rec = cell_step(params, state, x_t, CellKind("drnn", max_order))
    return new_state, (rec["i"], rec["f"], rec["o"])


def output_logits(output: OutputParams, h_t: np.ndarray) -> np.ndarray:
    return tanh(output.w_yh @ h_t + output.b_y)


def gate_weight_stacks(params: CellParams, tie: bool):
    """Per-gate matrices fused for batched evaluation: input-side (4u x in),
    hidden-side (4u x u), and per-order (w_id; w_fd) stacks (2u x u).
    Row blocks are ordered i, f, o, s."""
    w_fh = params.w_ih if tie else params.w_fh
    w_oh = params.w_ih if tie else params.w_oh
    wx = np.vstack([params.w_ix, params.w_fx, params.w_ox, params.w_sx])
    wh = np.vstack([params.w_ih, w_fh, w_oh, params.w_sh])
    wifd = {n: np.vstack([params.w_id[n], params.w_fd[n]])
            for n in params.w_id}
    bias = np.concatenate([params.b_i, params.b_f, params.b_o, params.b_s])
    return wx, wh, wifd, bias


def _layer_forward(params: CellParams, kind: CellKind, tie: bool,
                   x_all: np.ndarray) -> LayerTape:
    T = x_all.shape[0]
    u = params.units
    orders = kind.dos_orders
    max_order = kind.max_order
    wx, wh, wifd, bias = gate_weight_stacks(params, tie)
    zx = x_all @ wx.T + bias                  # (T, 4u) input-side gate terms

    i_a = np.empty((T, u)); f_a = np.empty((T, u)); o_a = np.empty((T, u))
    g_a = np.empty((T, u)); s_a = np.empty((T, u)); h_a = np.empty((T, u))
    th_a = np.empty((T, u))
    d_prev = {n: np.empty((T, u)) for n in orders}
    d_cur = {n: np.empty((T, u)) for n in orders}

    s = np.zeros(u)
    h = np.zeros(u)
    hist: list[np.ndarray] = []
    for t in range(T):
        z = zx[t] + wh @ h
        zi = z[:u].copy()
        zf = z[u:2 * u].copy()
        zo = z[2 * u:3 * u].copy()
        zs = z[3 * u:]
        for n in orders:
            dp = dos(n, s, hist)
            d_prev[n][t] = dp
            dif = wifd[n] @ dp
            zi += dif[:u]
            zf += dif[u:]
        i_t = sigmoid(zi)
        f_t = sigmoid(zf)
        g_t = np.tanh(zs)
        s_new = f_t * s + i_t * g_t
        hist_cur = [s] + hist
        for n in orders:
            dc = dos(n, s_new, hist_cur)
            d_cur[n][t] = dc
            zo += params.w_od[n] @ dc
        o_t = sigmoid(zo)
        th = np.tanh(s_new)
        h = o_t * th
        i_a[t], f_a[t], o_a[t], g_a[t] = i_t, f_t, o_t, g_t
        s_a[t], h_a[t], th_a[t] = s_new, h, th
        hist = hist_cur[:max_order] if max_order > 0 else []
        s = s_new
    return LayerTape(x=x_all, i=i_a, f=f_a, o=o_a, g=g_a, s=s_a, h=h_a,
                     tanh_s=th_a, d_prev=d_prev, d_cur=d_cur)


def _rnn_layer_forward(params: RnnParams, x_all: np.ndarray) -> LayerTape:
    T = x_all.shape[0]
    u = params.units
    zx = x_all @ params.w_hx.T + params.b_h
    h_a = np.empty((T, u))
    h = np.zeros(u)
    for t in range(T):
        h = np.tanh(params.w_hh @ h + zx[t])
        h_a[t] = h
    empty = np.zeros((T, 0))
    return LayerTape(x=x_all, i=empty, f=empty, o=empty, g=empty,
                     s=empty, h=h_a, tanh_s=empty, d_prev={}, d_cur={})


def stack_forward(model: Model, frames: np.ndarray) -> Tape:
    """Run the whole stack over a sequence of frames (T x input_units).

    Layer k consumes layer k-1's hidden states; the final layer's hidden
    state maps through the tanh output projection to per-frame confidence
    scores.  Sequence-level scores are those of the last frame.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ShapeMismatchError("forward pass needs a nonempty (T, dim) sequence")
    if frames.shape[1] != model.config.input_units:
        raise ShapeMismatchError(
            f"model expects input dimension {model.config.input_units}, "
            f"got {frames.shape[1]}"
        )
    tie = model.config.tie_gate_hidden_weights
    x_all = frames
    layer_tapes = []
    for (kind, _units), params in zip(model.config.layers, model.layers):
        if kind.kind == "rnn":
            tape = _rnn_layer_forward(params, x_all)
        else:
            tape = _layer_forward(params, kind, tie, x_all)
        layer_tapes.append(tape)
        x_all = tape.h
    logits = np.tanh(x_all @ model.output.w_yh.T + model.output.b_y)
    return Tape(config=model.config, layers=layer_tapes, logits=logits,
                hidden_top=x_all)


def predict_sequence(model: Model, frames: np.ndarray) -> tuple[int, np.ndarray]:
    """Class decision from the final frame's probabilities."""
    tape = stack_forward(model, frames)
    p = softmax(tape.logits[-1])
    return int(np.argmax(p)), p


def dos_energy(model: Model, frames: np.ndarray, layer: int) -> np.ndarray:
    """Per-frame L2 norms of the state derivatives of one layer.

    Returns (T, max_order+1): column k is |d^(k) s_t| for orders 0..max_order
    of the chosen layer (a plain LSTM layer reports order 0 only).
    """
    if not 0 <= layer < len(model.config.layers):
        raise IndexError(f"layer index {layer} out of range")
    kind, _units = model.config.layers[layer]
    if kind.kind == "rnn":
        raise ValueError("classical RNN layers have no internal state derivatives")
    tape = stack_forward(model, frames)
    s_list = tape.layers[layer].s
    max_order = kind.max_order
    T = len(s_list)
    out = np.zeros((T, max_order + 1))
    for t in range(T):
        history = [s_list[t - j] for j in range(1, t + 1)][:max_order]
        for k in range(max_order + 1):
            out[t, k] = float(np.linalg.norm(dos(k, s_list[t], history)))
    return out

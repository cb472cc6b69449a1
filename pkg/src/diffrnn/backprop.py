"""Reverse-mode gradients through a forward tape.

Two modes:

* full       — exact gradient of the loss, flowing through every path
               including the state-derivative terms in the gates.
* truncated  — identical except that gradient flow from the gate
               activations back INTO the state derivatives of order >= 1
               (velocity, acceleration, ...) is severed; errors may not
               re-enter the memory cell through those nodes.  Order-0 paths
               (the plain state term) are left intact so a cell with zeroed
               derivative matrices reduces to the conventional LSTM case.

Weight gradients for the derivative matrices themselves are computed in both
modes; truncation only stops the flow into the states behind the derivative.

``grad_check`` compares the full backward pass against central finite
differences parameter-by-parameter and is the module's own correctness
oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cells import (
    CellParams,
    Model,
    OutputParams,
    RnnParams,
    Tape,
    stack_forward,
)

_CELL_MATS = ("w_ix", "w_fx", "w_ox", "w_sx", "w_ih", "w_fh", "w_oh", "w_sh")
_CELL_DICTS = ("w_id", "w_fd", "w_od")
_CELL_BIASES = ("b_i", "b_f", "b_o", "b_s")


@dataclass
class Gradients:
    """Shape-congruent mirror of a model's parameters."""

    layers: list
    output: OutputParams


def zeros_like_params(p):
    if isinstance(p, CellParams):
        kw = {name: np.zeros_like(getattr(p, name)) for name in _CELL_MATS + _CELL_BIASES}
        for dname in _CELL_DICTS:
            kw[dname] = {n: np.zeros_like(m) for n, m in getattr(p, dname).items()}
        return CellParams(**kw)
    if isinstance(p, RnnParams):
        return RnnParams(w_hh=np.zeros_like(p.w_hh), w_hx=np.zeros_like(p.w_hx),
                         b_h=np.zeros_like(p.b_h))
    if isinstance(p, OutputParams):
        return OutputParams(w_yh=np.zeros_like(p.w_yh), b_y=np.zeros_like(p.b_y))
    raise TypeError(f"unknown parameter container {type(p)}")


def zeros_like_model(model: Model) -> Gradients:
    return Gradients(layers=[zeros_like_params(p) for p in model.layers],
                     output=zeros_like_params(model.output))


def param_items(p, prefix=""):
    """Yield (name, array) for every parameter array, in a fixed order."""
    if isinstance(p, CellParams):
        for name in _CELL_MATS:
            yield prefix + name, getattr(p, name)
        for dname in _CELL_DICTS:
            d = getattr(p, dname)
            for n in sorted(d):
                yield f"{prefix}{dname}[{n}]", d[n]
        for name in _CELL_BIASES:
            yield prefix + name, getattr(p, name)
    elif isinstance(p, RnnParams):
        for name in ("w_hh", "w_hx", "b_h"):
            yield prefix + name, getattr(p, name)
    elif isinstance(p, OutputParams):
        for name in ("w_yh", "b_y"):
            yield prefix + name, getattr(p, name)
    else:
        raise TypeError(f"unknown parameter container {type(p)}")


def model_param_items(obj):
    """Works for both Model and Gradients."""
    for li, p in enumerate(obj.layers):
        yield from param_items(p, f"layer{li}.")
    yield from param_items(obj.output, "output.")


def _coeff(order: int, j: int) -> float:
    return (-1.0) ** j * math.comb(order, j)


def _cell_backward(params: CellParams, kind, ltape, dh_in, truncated, tie):
    """Backward through one gated layer.  ``dh_in`` is (T, units) gradient at
    the layer's hidden outputs; returns (grads, dx) with dx (T, input_units).

    The time loop only carries the recurrences (state and hidden gradients);
    all weight gradients are formed afterwards as single time-batched
    matmuls against the tape.
    """
    from .cells import gate_weight_stacks

    T = ltape.s.shape[0]
    u = params.units
    orders = kind.dos_orders
    wx, wh, wifd, _bias = gate_weight_stacks(params, tie)

    dz_all = np.empty((T, 4 * u))
    dh = dh_in.copy()
    ds = np.zeros((T, u))
    i_a, f_a, o_a, g_a = ltape.i, ltape.f, ltape.o, ltape.g
    th_a, s_a = ltape.tanh_s, ltape.s

    for t in range(T - 1, -1, -1):
        i_t, f_t, o_t, g_t, th = i_a[t], f_a[t], o_a[t], g_a[t], th_a[t]
        s_prev = s_a[t - 1] if t >= 1 else 0.0

        dht = dh[t]
        do = dht * th
        ds[t] += dht * o_t * (1.0 - th * th)

        dzo = do * o_t * (1.0 - o_t)
        for n in orders:
            if not truncated or n == 0:
                dd = params.w_od[n].T @ dzo
                for j in range(n + 1):
                    if t - j >= 0:
                        ds[t - j] += _coeff(n, j) * dd

        dst = ds[t]
        di = dst * g_t
        df = dst * s_prev
        dg = dst * i_t
        if t >= 1:
            ds[t - 1] += dst * f_t

        dzg = dg * (1.0 - g_t * g_t)
        dzi = di * i_t * (1.0 - i_t)
        dzf = df * f_t * (1.0 - f_t)
        for n in orders:
            if not truncated or n == 0:
                dd = wifd[n].T @ np.concatenate([dzi, dzf])
                for j in range(n + 1):
                    if t - 1 - j >= 0:
                        ds[t - 1 - j] += _coeff(n, j) * dd

        dz = np.concatenate([dzi, dzf, dzo, dzg])
        dz_all[t] = dz
        if t >= 1:
            dh[t - 1] += wh.T @ dz

    g = zeros_like_params(params)
    h_prev_all = np.vstack([np.zeros(u), ltape.h[:-1]])
    gwx = dz_all.T @ ltape.x        # (4u, in), row blocks i, f, o, s
    gwh = dz_all.T @ h_prev_all
    g.w_ix, g.w_fx, g.w_ox, g.w_sx = (
        gwx[:u], gwx[u:2 * u], gwx[2 * u:3 * u], gwx[3 * u:])
    if tie:
        g.w_ih += gwh[:u] + gwh[u:2 * u] + gwh[2 * u:3 * u]
        g.w_sh += gwh[3 * u:]
    else:
        g.w_ih, g.w_fh, g.w_oh, g.w_sh = (
            gwh[:u], gwh[u:2 * u], gwh[2 * u:3 * u], gwh[3 * u:])
    gb = dz_all.sum(axis=0)
    g.b_i, g.b_f, g.b_o, g.b_s = gb[:u], gb[u:2 * u], gb[2 * u:3 * u], gb[3 * u:]
    for n in orders:
        gif = dz_all[:, :2 * u].T @ ltape.d_prev[n]
        g.w_id[n] = gif[:u]
        g.w_fd[n] = gif[u:]
        g.w_od[n] = dz_all[:, 2 * u:3 * u].T @ ltape.d_cur[n]
    dx = dz_all @ wx
    return g, dx


def _rnn_backward(params: RnnParams, ltape, dh_in):
    T = ltape.h.shape[0]
    u = params.units
    dh = dh_in.copy()
    dz_all = np.empty((T, u))
    for t in range(T - 1, -1, -1):
        h_t = ltape.h[t]
        dz = dh[t] * (1.0 - h_t * h_t)
        dz_all[t] = dz
        if t >= 1:
            dh[t - 1] += params.w_hh.T @ dz
    g = zeros_like_params(params)
    h_prev_all = np.vstack([np.zeros(u), ltape.h[:-1]])
    g.w_hh = dz_all.T @ h_prev_all
    g.w_hx = dz_all.T @ ltape.x
    g.b_h = dz_all.sum(axis=0)
    dx = dz_all @ params.w_hx
    return g, dx


def backward(model: Model, tape: Tape, dlogits: np.ndarray, truncated: bool) -> Gradients:
    """Gradient of the loss given its gradient at the post-tanh logits,
    one row per frame (rows may be zero for frames that carry no loss)."""
    dlogits = np.asarray(dlogits, dtype=np.float64)
    T = tape.logits.shape[0]
    if dlogits.shape != tape.logits.shape:
        raise ValueError(
            f"logit gradient shape {dlogits.shape} does not match tape "
            f"logits {tape.logits.shape}"
        )
    grads = Gradients(layers=[], output=zeros_like_params(model.output))
    tie = model.config.tie_gate_hidden_weights

    du_all = dlogits * (1.0 - tape.logits ** 2)
    grads.output.w_yh = du_all.T @ tape.hidden_top
    grads.output.b_y = du_all.sum(axis=0)
    dh = du_all @ model.output.w_yh

    for li in range(len(model.layers) - 1, -1, -1):
        kind, _units = model.config.layers[li]
        params = model.layers[li]
        ltape = tape.layers[li]
        if kind.kind == "rnn":
            g, dx = _rnn_backward(params, ltape, dh)
        else:
            g, dx = _cell_backward(params, kind, ltape, dh, truncated, tie)
        grads.layers.insert(0, g)
        dh = dx
    for name, arr in model_param_items(grads):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    return grads


def backward_full(model: Model, tape: Tape, dlogits) -> Gradients:
    return backward(model, tape, dlogits, truncated=False)


def backward_truncated(model: Model, tape: Tape, dlogits) -> Gradients:
    return backward(model, tape, dlogits, truncated=True)


# ---------------------------------------------------------------------------
# Finite-difference oracle
#
# The numeric side runs its own forward evaluation in extended precision
# (longdouble): central differences of a float64 loss at h=1e-5 carry
# ~1e-11 of cancellation noise, which would swamp honestly-tiny gradients
# deep in a stack.  The re-statement below is deliberately simple and
# independent of the tape machinery.


def _ld_sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def _ld_params(p):
    if isinstance(p, CellParams):
        kw = {name: getattr(p, name).astype(np.longdouble)
              for name in _CELL_MATS + _CELL_BIASES}
        for dname in _CELL_DICTS:
            kw[dname] = {n: m.astype(np.longdouble) for n, m in getattr(p, dname).items()}
        return CellParams(**kw)
    if isinstance(p, RnnParams):
        return RnnParams(p.w_hh.astype(np.longdouble), p.w_hx.astype(np.longdouble),
                         p.b_h.astype(np.longdouble))
    return OutputParams(p.w_yh.astype(np.longdouble), p.b_y.astype(np.longdouble))


def _ld_sequence_loss(config, layers, output, frames, label):
    tie = config.tie_gate_hidden_weights
    inputs = [frames[t] for t in range(frames.shape[0])]
    for (kind, units), p in zip(config.layers, layers):
        outs = []
        if kind.kind == "rnn":
            h = np.zeros(units, dtype=np.longdouble)
            for x in inputs:
                h = np.tanh(p.w_hh @ h + p.w_hx @ x + p.b_h)
                outs.append(h)
        else:
            orders = kind.dos_orders
            s = np.zeros(units, dtype=np.longdouble)
            h = np.zeros(units, dtype=np.longdouble)
            hist: list = []
            w_fh = p.w_ih if tie else p.w_fh
            w_oh = p.w_ih if tie else p.w_oh
            for x in inputs:
                d_prev = {}
                for n in orders:
                    d = s.copy()
                    for j in range(1, n + 1):
                        if j - 1 < len(hist):
                            d += _coeff(n, j) * hist[j - 1]
                    d_prev[n] = d
                z_i = p.w_ih @ h + p.w_ix @ x + p.b_i
                z_f = w_fh @ h + p.w_fx @ x + p.b_f
                for n in orders:
                    z_i += p.w_id[n] @ d_prev[n]
                    z_f += p.w_fd[n] @ d_prev[n]
                i_t = _ld_sigmoid(z_i)
                f_t = _ld_sigmoid(z_f)
                g_t = np.tanh(p.w_sh @ h + p.w_sx @ x + p.b_s)
                s_new = f_t * s + i_t * g_t
                hist_cur = [s] + hist
                z_o = w_oh @ h + p.w_ox @ x + p.b_o
                for n in orders:
                    d = s_new.copy()
                    for j in range(1, n + 1):
                        if j - 1 < len(hist_cur):
                            d += _coeff(n, j) * hist_cur[j - 1]
                    z_o += p.w_od[n] @ d
                o_t = _ld_sigmoid(z_o)
                h = o_t * np.tanh(s_new)
                hist = hist_cur[: kind.max_order] if kind.max_order > 0 else []
                s = s_new
                outs.append(h)
        inputs = outs
    y = np.tanh(output.w_yh @ inputs[-1] + output.b_y)
    z = np.exp(y - np.max(y))
    p_label = z[label] / np.sum(z)
    return -np.log(p_label)


@dataclass
class GradCheckEntry:
    name: str
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    max_rel_error: float
    worst: str
    passed: bool

    def format(self, limit: int = 20) -> str:
        lines = ["parameter analytic numeric rel_error"]
        worst_sorted = sorted(self.entries, key=lambda e: -e.rel_error)[:limit]
        for e in worst_sorted:
            lines.append(f"{e.name} {e.analytic:.10e} {e.numeric:.10e} {e.rel_error:.3e}")
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"{status} max_rel_error={self.max_rel_error:.3e} worst={self.worst}")
        return "\n".join(lines)


def sequence_loss_and_grad(logits: np.ndarray, label: int):
    """-log p_label at the final frame; gradient w.r.t. every frame's logits."""
    from .numerics import softmax

    p = softmax(logits[-1])
    loss = -math.log(max(p[label], 1e-300))
    d = np.zeros_like(logits)
    d[-1] = p.copy()
    d[-1][label] -= 1.0
    return loss, d


def grad_check(model: Model, frames: np.ndarray, label: int,
               h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Central finite differences vs. the full backward pass, every parameter.

    Relative error is |g_a - g_n| / max(|g_a|, |g_n|, 1e-8); the check passes
    iff the maximum over all parameters is below ``tol``.
    """
    tape = stack_forward(model, frames)
    _, dlogits = sequence_loss_and_grad(tape.logits, label)
    grads = backward_full(model, tape, dlogits)
    analytic = dict(model_param_items(grads))

    ld_layers = [_ld_params(p) for p in model.layers]
    ld_output = _ld_params(model.output)
    ld_frames = np.asarray(frames, dtype=np.longdouble)
    ld_shadow = dict(model_param_items(Gradients(layers=ld_layers, output=ld_output)))
    hl = np.longdouble(h)

    def loss_now():
        return _ld_sequence_loss(model.config, ld_layers, ld_output, ld_frames, label)

    entries = []
    for name, arr in model_param_items(model):
        ga = analytic[name]
        ld_arr = ld_shadow[name]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = ld_arr[idx]
            ld_arr[idx] = orig + hl
            lp = loss_now()
            ld_arr[idx] = orig - hl
            lm = loss_now()
            ld_arr[idx] = orig
            gn = float((lp - lm) / (2.0 * hl))
            if not (math.isfinite(gn) and math.isfinite(float(ga[idx]))):
                raise FloatingPointError(f"non-finite gradient at {name}{list(idx)}")
            rel = abs(float(ga[idx]) - gn) / max(abs(float(ga[idx])), abs(gn), 1e-8)
            entries.append(GradCheckEntry(
                name=f"{name}{list(idx)}", analytic=float(ga[idx]),
                numeric=gn, rel_error=rel))
    worst = max(entries, key=lambda e: e.rel_error)
    return GradCheckReport(entries=entries, max_rel_error=worst.rel_error,
                           worst=worst.name, passed=worst.rel_error < tol)

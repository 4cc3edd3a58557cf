"""Differentiable operations.

Each operation computes its forward value with numpy and, when a tape is
active and some input requires a gradient, records a closure that pushes
the output gradient back to its inputs.
"""
from __future__ import annotations

import contextlib

import numpy as np

from ..errors import IdOutOfRange, ShapeMismatch
from .tensor import Parameter, Tensor, active_tape, as_tensor

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")
BCE_EPS = 1e-7


# When set, piecewise ops append their branch decisions (ReLU masks, argmax
# winners, clip masks) so a gradient check can tell a kink from a bug.
_branches: list | None = None


@contextlib.contextmanager
def record_branches():
    global _branches
    old, _branches = _branches, []
    try:
        yield _branches
    finally:
        _branches = old


def _note(decision):
    if _branches is not None:
        _branches.append(np.asarray(decision).tobytes())


def sigmoid_np(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _activate(x, name):
    if name == "identity":
        return x
    if name == "relu":
        _note(x > 0)
        return np.maximum(x, 0)
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return sigmoid_np(x)
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(y, g, name):
    """Gradient through the activation, written in terms of its output y."""
    if name == "identity":
        return g
    if name == "relu":
        return g * (y > 0)
    if name == "tanh":
        return g * (1 - y * y)
    return g * y * (1 - y)


def _result(data, inputs, name, backward_factory):
    out = Tensor(data, dtype=data.dtype)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(name, backward_factory(out))
    return out


def dense(x, W: Parameter, bias: Parameter | None = None, activation: str = "identity") -> Tensor:
    """activation(x @ W + bias) over the last axis; any leading shape."""
    x = as_tensor(x)
    if x.shape[-1] != W.shape[0] or (bias is not None and bias.shape != (W.shape[1],)):
        raise ShapeMismatch(f"dense: input {x.shape}, weights {W.shape}, bias {None if bias is None else bias.shape}")
    pre = x.data @ W.data
    if bias is not None:
        pre = pre + bias.data
    y = _activate(pre, activation)

    def factory(out):
        def backward():
            if out.grad is None:
                return
            g = _activation_grad(y, out.grad, activation)
            g2 = g.reshape(-1, g.shape[-1])
            if W.requires_grad:
                W.accumulate(x.data.reshape(-1, x.shape[-1]).T @ g2)
            if bias is not None and bias.requires_grad:
                bias.accumulate(g2.sum(axis=0))
            if x.requires_grad:
                x.accumulate(g @ W.data.T)
        return backward

    inputs = [x, W] + ([bias] if bias is not None else [])
    return _result(y, inputs, "dense", factory)


def embedding(ids, E: Parameter) -> Tensor:
    """Row gather ``E[ids]``; the backward pass scatters into the used rows."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise IdOutOfRange("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= E.shape[0]):
        raise IdOutOfRange(f"embedding ids must lie in [0, {E.shape[0] - 1}]")
    y = E.data[ids]

    def factory(out):
        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(E.data)
            np.add.at(g, ids.reshape(-1), out.grad.reshape(-1, E.shape[1]))
            E.accumulate(g)
        return backward

    return _result(y, [E], "embedding", factory)


def conv1d(x, kernels: Parameter, bias: Parameter, activation: str = "relu") -> Tensor:
    """Valid convolution over time: x [b, L, k], kernels [w, k, c] -> [b, L-w+1, c]."""
    x = as_tensor(x)
    w, k, c = kernels.shape
    if x.data.ndim != 3 or x.shape[2] != k or bias.shape != (c,):
        raise ShapeMismatch(f"conv1d: input {x.shape}, kernels {kernels.shape}, bias {bias.shape}")
    b, L, _ = x.shape
    if w > L:
        raise ShapeMismatch(f"conv1d: kernel width {w} exceeds sequence length {L}")
    T = L - w + 1
    cols = np.lib.stride_tricks.sliding_window_view(x.data, w, axis=1)  # [b, T, k, w]
    cols = cols.transpose(0, 1, 3, 2).reshape(b * T, w * k)
    Kmat = kernels.data.reshape(w * k, c)
    y = _activate((cols @ Kmat + bias.data).reshape(b, T, c), activation)

    def factory(out):
        def backward():
            if out.grad is None:
                return
            g = _activation_grad(y, out.grad, activation).reshape(b * T, c)
            if kernels.requires_grad:
                kernels.accumulate((cols.T @ g).reshape(w, k, c))
            if bias.requires_grad:
                bias.accumulate(g.sum(axis=0))
            if x.requires_grad:
                dcols = (g @ Kmat.T).reshape(b, T, w, k)
                dx = np.zeros_like(x.data)
                for i in range(w):
                    dx[:, i:i + T, :] += dcols[:, :, i, :]
                x.accumulate(dx)
        return backward

    return _result(y, [x, kernels, bias], "conv1d", factory)


def maxpool_over_time(x) -> Tensor:
    """Per-channel maximum over axis 1; ties route the gradient to the first maximum."""
    x = as_tensor(x)
    if x.data.ndim != 3 or x.shape[1] < 1:
        raise ShapeMismatch(f"maxpool_over_time: expected [b, T>=1, c], got {x.shape}")
    idx = np.argmax(x.data, axis=1)[:, None, :]
    _note(idx)
    y = np.take_along_axis(x.data, idx, axis=1)[:, 0, :]

    def factory(out):
        def backward():
            if out.grad is None:
                return
            dx = np.zeros_like(x.data)
            np.put_along_axis(dx, idx, out.grad[:, None, :], axis=1)
            x.accumulate(dx)
        return backward

    return _result(y, [x], "maxpool_over_time", factory)


def conv_maxpool(x, kernels: Parameter, bias: Parameter) -> Tensor:
    """``maxpool_over_time(conv1d(x, kernels, bias, "relu"))`` in one step.

    Same values and gradients as the composition (ReLU commutes with the
    maximum and a non-positive maximum has zero gradient either way) but
    the backward pass only touches the winning positions.
    """
    x = as_tensor(x)
    w, k, c = kernels.shape
    if x.data.ndim != 3 or x.shape[2] != k or bias.shape != (c,):
        raise ShapeMismatch(f"conv_maxpool: input {x.shape}, kernels {kernels.shape}, bias {bias.shape}")
    b, L, _ = x.shape
    if w > L:
        raise ShapeMismatch(f"conv_maxpool: kernel width {w} exceeds sequence length {L}")
    T = L - w + 1
    cols = np.lib.stride_tricks.sliding_window_view(x.data, w, axis=1)
    cols = cols.transpose(0, 1, 3, 2).reshape(b * T, w * k)
    Kmat = kernels.data.reshape(w * k, c)
    pre_t = np.ascontiguousarray((cols @ Kmat).reshape(b, T, c).transpose(0, 2, 1))  # [b, c, T]
    idx = pre_t.argmax(axis=2)
    pooled = np.take_along_axis(pre_t, idx[:, :, None], axis=2)[:, :, 0] + bias.data
    y = np.maximum(pooled, 0)
    _note(idx)
    _note(pooled > 0)

    def factory(out):
        def backward():
            if out.grad is None:
                return
            g = out.grad * (pooled > 0)  # [b, c]
            rows = np.arange(b)[:, None] * T + idx  # winning window per (b, c)
            if kernels.requires_grad:
                dk = np.einsum("bc,bcj->jc", g, cols[rows])
                kernels.accumulate(dk.reshape(w, k, c))
            if bias.requires_grad:
                bias.accumulate(g.sum(axis=0))
            if x.requires_grad:
                # each winner spreads g * kernel over its w input positions
                contrib = g[:, :, None] * Kmat.T[None, :, :]  # [b, c, w*k]
                pos = (np.arange(b)[:, None] * L + idx)[:, :, None] + np.arange(w)
                flat = (pos[:, :, :, None] * k + np.arange(k)).reshape(-1)
                dx = np.bincount(flat, weights=contrib.reshape(-1), minlength=b * L * k)
                x.accumulate(dx.reshape(b, L, k).astype(x.data.dtype, copy=False))
        return backward

    return _result(y, [x, kernels, bias], "conv_maxpool", factory)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    y = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def factory(out):
        def backward():
            if out.grad is None:
                return
            for t, g in zip(tensors, np.split(out.grad, sizes, axis=axis)):
                if t.requires_grad:
                    t.accumulate(g)
        return backward

    return _result(y, tensors, "concat", factory)


def _check_recurrent(x, W, U, b, gates):
    if x.data.ndim != 3:
        raise ShapeMismatch(f"recurrent layer expects [b, T, k] input, got {x.shape}")
    h = U.shape[0]
    if W.shape != (x.shape[2], gates * h) or U.shape != (h, gates * h) or b.shape != (gates * h,):
        raise ShapeMismatch(
            f"recurrent layer: input {x.shape}, W {W.shape}, U {U.shape}, bias {b.shape} "
            f"(expected {gates} gates of width {h})"
        )
    return h


def gru_layer(x, W: Parameter, U: Parameter, b: Parameter, reverse: bool = False,
              candidate_activation: str = "tanh", return_sequence: bool = True) -> Tensor:
    """GRU over time with zero initial state.

    Gates are laid out [update z | reset r | candidate] along the last axis
    of W [k, 3h], U [h, 3h] and b [3h]:

        z = sigmoid(x W_z + h U_z + b_z)
        r = sigmoid(x W_r + h U_r + b_r)
        c = act(x W_c + (r * h) U_c + b_c)
        h' = z * h + (1 - z) * c

    With ``reverse`` the sequence is consumed from the last step; the output
    at position t is still the state after reading x_t.
    """
    x = as_tensor(x)
    h = _check_recurrent(x, W, U, b, 3)
    if candidate_activation not in ("tanh", "relu"):
        raise ValueError("candidate_activation must be tanh or relu")
    B, T, _ = x.shape
    dt = x.data.dtype
    Xp = x.data @ W.data + b.data
    U_zr, U_c = U.data[:, :2 * h], U.data[:, 2 * h:]
    order = range(T - 1, -1, -1) if reverse else range(T)
    hs = np.empty((B, T, h), dt)
    h_prev = np.empty((B, T, h), dt)
    zr_all = np.empty((B, T, 2 * h), dt)
    rh_all = np.empty((B, T, h), dt)
    c_all = np.empty((B, T, h), dt)
    state = np.zeros((B, h), dt)
    for t in order:
        h_prev[:, t] = state
        zr = sigmoid_np(Xp[:, t, :2 * h] + state @ U_zr)
        z, r = zr[:, :h], zr[:, h:]
        rh = r * state
        c = _activate(Xp[:, t, 2 * h:] + rh @ U_c, candidate_activation)
        state = z * state + (1 - z) * c
        hs[:, t] = state
        zr_all[:, t] = zr
        rh_all[:, t] = rh
        c_all[:, t] = c
    last = order[-1] if T else 0
    y = hs if return_sequence else state.copy()

    def factory(out):
        def backward():
            if out.grad is None:
                return
            g = out.grad
            dXp = np.empty_like(Xp)
            dh = np.zeros((B, h), dt)
            for t in reversed(order):
                if return_sequence:
                    dh = dh + g[:, t]
                elif t == last:
                    dh = dh + g
                z, r = zr_all[:, t, :h], zr_all[:, t, h:]
                hp, c = h_prev[:, t], c_all[:, t]
                dcp = _activation_grad(c, dh * (1 - z), candidate_activation)
                dz = dh * (hp - c)
                drh = dcp @ U_c.T
                dr = drh * hp
                dzr = np.concatenate((dz * z * (1 - z), dr * r * (1 - r)), axis=1)
                dh = dh * z + drh * r + dzr @ U_zr.T
                dXp[:, t, :2 * h] = dzr
                dXp[:, t, 2 * h:] = dcp
            dX2 = dXp.reshape(B * T, 3 * h)
            if U.requires_grad:
                dU = np.empty_like(U.data)
                dU[:, :2 * h] = h_prev.reshape(B * T, h).T @ dX2[:, :2 * h]
                dU[:, 2 * h:] = rh_all.reshape(B * T, h).T @ dX2[:, 2 * h:]
                U.accumulate(dU)
            if W.requires_grad:
                W.accumulate(x.data.reshape(B * T, -1).T @ dX2)
            if b.requires_grad:
                b.accumulate(dX2.sum(axis=0))
            if x.requires_grad:
                x.accumulate(dXp @ W.data.T)
        return backward

    return _result(y, [x, W, U, b], "gru_layer", factory)


def bidirectional(x, forward_params, backward_params, candidate_activation: str = "tanh") -> Tensor:
    """Concatenate a forward GRU and a reversed GRU along features: [b, T, 2h]."""
    fwd = gru_layer(x, *forward_params, reverse=False, candidate_activation=candidate_activation)
    bwd = gru_layer(x, *backward_params, reverse=True, candidate_activation=candidate_activation)
    return concat([fwd, bwd], axis=-1)


def lstm_layer(x, W: Parameter, U: Parameter, b: Parameter, return_sequence: bool = True) -> Tensor:
    """LSTM over time with zero initial state and gates laid out [i | f | g | o]."""
    x = as_tensor(x)
    h = _check_recurrent(x, W, U, b, 4)
    B, T, _ = x.shape
    dt = x.data.dtype
    Xp = x.data @ W.data + b.data
    hs = np.empty((B, T, h), dt)
    h_prev = np.empty((B, T, h), dt)
    c_prev = np.empty((B, T, h), dt)
    gates = np.empty((B, T, 4 * h), dt)
    tanh_c = np.empty((B, T, h), dt)
    hstate = np.zeros((B, h), dt)
    cstate = np.zeros((B, h), dt)
    for t in range(T):
        h_prev[:, t] = hstate
        c_prev[:, t] = cstate
        pre = Xp[:, t] + hstate @ U.data
        ga = np.empty_like(pre)
        ga[:, :2 * h] = sigmoid_np(pre[:, :2 * h])
        ga[:, 2 * h:3 * h] = np.tanh(pre[:, 2 * h:3 * h])
        ga[:, 3 * h:] = sigmoid_np(pre[:, 3 * h:])
        i, f, g, o = ga[:, :h], ga[:, h:2 * h], ga[:, 2 * h:3 * h], ga[:, 3 * h:]
        cstate = f * cstate + i * g
        tc = np.tanh(cstate)
        hstate = o * tc
        gates[:, t] = ga
        tanh_c[:, t] = tc
        hs[:, t] = hstate
    y = hs if return_sequence else hstate.copy()

    def factory(out):
        def backward():
            if out.grad is None:
                return
            gout = out.grad
            dpre_all = np.empty((B, T, 4 * h), dt)
            dh = np.zeros((B, h), dt)
            dc = np.zeros((B, h), dt)
            for t in range(T - 1, -1, -1):
                if return_sequence:
                    dh = dh + gout[:, t]
                elif t == T - 1:
                    dh = dh + gout
                ga = gates[:, t]
                i, f, g, o = ga[:, :h], ga[:, h:2 * h], ga[:, 2 * h:3 * h], ga[:, 3 * h:]
                tc = tanh_c[:, t]
                dc = dc + dh * o * (1 - tc * tc)
                dpre = dpre_all[:, t]
                dpre[:, :h] = dc * g * i * (1 - i)
                dpre[:, h:2 * h] = dc * c_prev[:, t] * f * (1 - f)
                dpre[:, 2 * h:3 * h] = dc * i * (1 - g * g)
                dpre[:, 3 * h:] = dh * tc * o * (1 - o)
                dc = dc * f
                dh = dpre @ U.data.T
            d2 = dpre_all.reshape(B * T, 4 * h)
            if U.requires_grad:
                U.accumulate(h_prev.reshape(B * T, h).T @ d2)
            if W.requires_grad:
                W.accumulate(x.data.reshape(B * T, -1).T @ d2)
            if b.requires_grad:
                b.accumulate(d2.sum(axis=0))
            if x.requires_grad:
                x.accumulate(dpre_all @ W.data.T)
        return backward

    return _result(y, [x, W, U, b], "lstm_layer", factory)


def softmax_np(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def word_attention(H, W: Parameter, bias: Parameter, context: Parameter):
    """Additive attention pooling over time.

    u_t = tanh(W h_t + bias), alpha = softmax_t(u_t . context), output
    sum_t alpha_t h_t. Returns ``(output [b, d], alpha [b, T])``; alpha is a
    plain array for inspection.
    """
    H = as_tensor(H)
    if H.data.ndim != 3:
        raise ShapeMismatch(f"word_attention expects [b, T, d], got {H.shape}")
    B, T, d = H.shape
    a = W.shape[1]
    if W.shape[0] != d or bias.shape != (a,) or context.shape != (a,):
        raise ShapeMismatch(f"word_attention: H {H.shape}, W {W.shape}, bias {bias.shape}, context {context.shape}")
    u = np.tanh(H.data @ W.data + bias.data)
    alpha = softmax_np(u @ context.data, axis=1)
    y = np.einsum("bt,btd->bd", alpha, H.data)

    def factory(out):
        def backward():
            if out.grad is None:
                return
            go = out.grad
            dalpha = np.einsum("btd,bd->bt", H.data, go)
            ds = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
            if context.requires_grad:
                context.accumulate(np.einsum("bt,bta->a", ds, u))
            dpre = ds[:, :, None] * context.data * (1 - u * u)
            d2 = dpre.reshape(B * T, a)
            if W.requires_grad:
                W.accumulate(H.data.reshape(B * T, d).T @ d2)
            if bias.requires_grad:
                bias.accumulate(d2.sum(axis=0))
            if H.requires_grad:
                H.accumulate(alpha[:, :, None] * go[:, None, :] + dpre @ W.data.T)
        return backward

    return _result(y, [H, W, bias, context], "word_attention", factory), alpha


def bce_loss(predictions, targets) -> Tensor:
    """Mean binary cross-entropy; predictions are clipped to [eps, 1 - eps]."""
    p_t = as_tensor(predictions)
    y = np.asarray(targets, dtype=p_t.data.dtype)
    if y.shape != p_t.shape:
        raise ShapeMismatch(f"bce_loss: predictions {p_t.shape} vs targets {y.shape}")
    p = np.clip(p_t.data, BCE_EPS, 1 - BCE_EPS)
    n = p.size
    loss = -(y * np.log(p) + (1 - y) * np.log(1 - p)).sum() / n
    inside = (p_t.data > BCE_EPS) & (p_t.data < 1 - BCE_EPS)
    _note(inside)

    def factory(out):
        def backward():
            if out.grad is None:
                return
            g = (-y / p + (1 - y) / (1 - p)) / n * inside
            p_t.accumulate(g * out.grad)
        return backward

    return _result(np.asarray(loss, dtype=p_t.data.dtype), [p_t], "bce_loss", factory)


def weighted_sum(x, weights) -> Tensor:
    """sum(x * weights) with constant weights; a scalar probe for gradient checks."""
    x = as_tensor(x)
    wts = np.asarray(weights, dtype=x.data.dtype)
    val = np.asarray((x.data * wts).sum(), dtype=x.data.dtype)

    def factory(out):
        def backward():
            if out.grad is not None:
                x.accumulate(wts * out.grad)
        return backward

    return _result(val, [x], "weighted_sum", factory)

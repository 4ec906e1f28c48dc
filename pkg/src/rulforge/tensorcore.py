"""Forward and backward primitives for the dilated-conv network.

Plain numpy, no autodiff. Every backward pass here is derived by hand and
verified against central finite differences in the test suite.

Exactness contract: any reduction that spans the (batch, time) plane is
computed over the compressed set of valid positions (gathered with
np.nonzero on the mask), and per-position contractions use einsum with
optimize=False so no BLAS path is taken. Together these make every output
and gradient at valid positions bitwise-stable no matter how much zero
padding a batch carries.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericsError, ShapeError, ValidationError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def check_finite(name: str, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericsError(f"non-finite values in {name}")


def _valid_index(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-major indices of valid positions; padding-size independent."""
    bs, ls = np.nonzero(mask)
    if bs.size == 0:
        raise ValidationError("mask selects zero valid positions")
    return bs, ls


def _pad_amounts(kernel: int, dilation: int, padding_mode: str) -> tuple[int, int]:
    total = (kernel - 1) * dilation
    if padding_mode == "causal_left":
        return total, 0
    if padding_mode == "symmetric":
        return total // 2, total - total // 2
    raise ValidationError(f"unknown padding_mode {padding_mode!r}")


def conv1d_forward(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    dilation: int = 1,
    padding_mode: str = "causal_left",
) -> np.ndarray:
    """Length-preserving dilated 1-D convolution.

    x [B, Cin, L], weight [Cout, Cin, K], bias [Cout] -> [B, Cout, L].
    causal_left puts all (K-1)*d zeros before the sequence so position t
    never sees the future; symmetric splits them (extra zero on the right
    for even totals).
    """
    b, c_in, length = x.shape
    c_out, c_in_w, kernel = weight.shape
    if c_in_w != c_in:
        raise ShapeError(f"conv expects {c_in_w} input channels, got {c_in}")
    if dilation < 1:
        raise ValidationError(f"dilation must be >= 1, got {dilation}")
    left, right = _pad_amounts(kernel, dilation, padding_mode)
    x_pad = np.zeros((b, c_in, length + left + right))
    x_pad[:, :, left : left + length] = x
    out = np.zeros((b, c_out, length))
    for k in range(kernel):
        tap = x_pad[:, :, k * dilation : k * dilation + length]
        out += np.einsum("oi,bil->bol", weight[:, :, k], tap, optimize=False)
    out += bias[None, :, None]
    return out


def conv1d_backward(
    grad_out: np.ndarray,
    x: np.ndarray,
    weight: np.ndarray,
    dilation: int = 1,
    padding_mode: str = "causal_left",
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv1d_forward w.r.t. input, weight, and bias.

    With a mask, the weight and bias reductions run over compressed valid
    positions only. grad_out is assumed zero at padded positions (the
    layer stack guarantees it), so the input gradient can accumulate over
    the full padded buffer without contaminating valid entries.
    """
    b, c_in, length = x.shape
    c_out, _, kernel = weight.shape
    left, right = _pad_amounts(kernel, dilation, padding_mode)
    x_pad = np.zeros((b, c_in, length + left + right))
    x_pad[:, :, left : left + length] = x

    grad_w = np.zeros_like(weight)
    if mask is not None:
        bs, ls = _valid_index(mask)
        go_c = grad_out[bs, :, ls]  # [n, Cout]
        for k in range(kernel):
            tap_c = x_pad[bs, :, ls + k * dilation]  # [n, Cin]
            grad_w[:, :, k] = np.einsum("no,ni->oi", go_c, tap_c, optimize=False)
        grad_b = go_c.sum(axis=0)
    else:
        for k in range(kernel):
            tap = x_pad[:, :, k * dilation : k * dilation + length]
            grad_w[:, :, k] = np.einsum("bol,bil->oi", grad_out, tap, optimize=False)
        grad_b = grad_out.sum(axis=(0, 2))

    grad_x_pad = np.zeros_like(x_pad)
    for k in range(kernel):
        contrib = np.einsum("oi,bol->bil", weight[:, :, k], grad_out, optimize=False)
        grad_x_pad[:, :, k * dilation : k * dilation + length] += contrib
    grad_x = grad_x_pad[:, :, left : left + length]
    return grad_x, grad_w, grad_b


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0.0)


def dropout_forward(
    x: np.ndarray,
    rate: float,
    rng: np.random.Generator | None = None,
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout. rng=None means eval mode (identity, cache None).

    Random draws cover valid elements only (n_valid x C when a mask is
    given), so the consumed rng stream does not depend on padding size.
    """
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None or rate == 0.0:
        return x, None
    scale = 1.0 / (1.0 - rate)
    if mask is not None:
        bs, ls = _valid_index(mask)
        draws = rng.random((bs.size, x.shape[1]))
        keep_c = draws >= rate
        keep = np.zeros(x.shape, dtype=bool)
        keep[bs, :, ls] = keep_c
    else:
        keep = rng.random(x.shape) >= rate
    return x * keep * scale, keep


def dropout_backward(
    grad_out: np.ndarray, keep: np.ndarray | None, rate: float
) -> np.ndarray:
    if keep is None:
        return grad_out
    return grad_out * keep * (1.0 / (1.0 - rate))


def pointwise_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Per-timestep affine map: x [B, Cin, L], weight [Cout, Cin] -> [B, Cout, L]."""
    if weight.shape[1] != x.shape[1]:
        raise ShapeError(f"pointwise expects {weight.shape[1]} input channels, got {x.shape[1]}")
    out = np.einsum("oi,bil->bol", weight, x, optimize=False)
    out += bias[None, :, None]
    return out


def pointwise_backward(
    grad_out: np.ndarray,
    x: np.ndarray,
    weight: np.ndarray,
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if mask is not None:
        bs, ls = _valid_index(mask)
        go_c = grad_out[bs, :, ls]
        x_c = x[bs, :, ls]
        grad_w = np.einsum("no,ni->oi", go_c, x_c, optimize=False)
        grad_b = go_c.sum(axis=0)
    else:
        grad_w = np.einsum("bol,bil->oi", grad_out, x, optimize=False)
        grad_b = grad_out.sum(axis=(0, 2))
    grad_x = np.einsum("oi,bol->bil", weight, grad_out, optimize=False)
    return grad_x, grad_w, grad_b


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mask: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> tuple[np.ndarray, dict | None]:
    """Batch normalization over valid positions of a padded [B, C, L] tensor.

    Training computes per-channel mean and population variance over the
    compressed valid set, normalizes with them, and updates the running
    stats in place. Eval normalizes with the running stats. Padded
    positions come out exactly zero either way.
    """
    bs, ls = _valid_index(mask)
    if training:
        x_c = x[bs, :, ls]  # [n, C]
        mu = x_c.mean(axis=0)
        var = x_c.var(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mu[None, :, None]) * inv_std[None, :, None]
    out = (gamma[None, :, None] * x_hat + beta[None, :, None]) * mask[:, None, :]
    cache = None
    if training:
        cache = {
            "x": x,
            "mu": mu,
            "inv_std": inv_std,
            "gamma": gamma,
            "bs": bs,
            "ls": ls,
        }
    return out, cache


def batchnorm_backward(
    grad_out: np.ndarray, cache: dict
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients through training-mode batchnorm, restricted to valid positions.

    Includes the sum(x - mu) correction term even though it is zero in
    exact arithmetic; dropping it fails finite-difference checks at tight
    tolerances.
    """
    x, mu, inv_std, gamma = cache["x"], cache["mu"], cache["inv_std"], cache["gamma"]
    bs, ls = cache["bs"], cache["ls"]
    n = bs.size
    x_c = x[bs, :, ls]  # [n, C]
    go_c = grad_out[bs, :, ls]
    centered = x_c - mu
    x_hat_c = centered * inv_std
    grad_gamma = (go_c * x_hat_c).sum(axis=0)
    grad_beta = go_c.sum(axis=0)
    g_xhat = go_c * gamma
    g_var = (g_xhat * centered).sum(axis=0) * (-0.5) * inv_std**3
    g_mu = (g_xhat.sum(axis=0)) * (-inv_std) + g_var * (-2.0 / n) * centered.sum(axis=0)
    gx_c = g_xhat * inv_std + g_var * (2.0 / n) * centered + g_mu / n
    grad_x = np.zeros_like(x)
    grad_x[bs, :, ls] = gx_c
    return grad_x, grad_gamma, grad_beta


def masked_mse_loss(
    pred: np.ndarray, target: np.ndarray, loss_mask: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean squared error over supervised positions, with its gradient.

    Returns (loss, dloss/dpred) where the gradient is 2 * (pred - target)
    / n_valid at supervised positions and exactly zero elsewhere.
    """
    bs, ls = _valid_index(loss_mask)
    diff = pred[bs, ls] - target[bs, ls]
    n = diff.size
    loss = float((diff * diff).sum() / n)
    grad = np.zeros_like(pred)
    grad[bs, ls] = 2.0 * diff / n
    return loss, grad


def grad_check(f, inputs: list[np.ndarray], eps: float = 1e-4, atol: float = 1e-9) -> float:
    """Compare analytic gradients of f against central finite differences.

    f(*inputs) must return (loss, grads) with one gradient per input.
    Returns the worst relative error |ga - gfd| / max(1e-8, |ga| + |gfd|)
    over every element of every input. Disagreements below `atol` count as
    zero: where the true gradient vanishes (dead ReLU, dropped unit) the
    quotient is rounding noise of order ulp(loss)/eps, not a derivative.
    """
    _, grads = f(*inputs)
    if len(grads) != len(inputs):
        raise ValidationError(f"f returned {len(grads)} gradients for {len(inputs)} inputs")
    worst = 0.0
    for inp, ga in zip(inputs, grads):
        flat = inp.reshape(-1)
        ga_flat = np.asarray(ga).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            loss_plus, _ = f(*inputs)
            flat[j] = orig - eps
            loss_minus, _ = f(*inputs)
            flat[j] = orig
            gfd = (loss_plus - loss_minus) / (2.0 * eps)
            if abs(ga_flat[j] - gfd) <= atol:
                continue
            rel = abs(ga_flat[j] - gfd) / max(1e-8, abs(ga_flat[j]) + abs(gfd))
            worst = max(worst, rel)
    return worst

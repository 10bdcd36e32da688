"""Noise-prediction network for conditional point-cloud diffusion.

A two-level set-abstraction / feature-propagation network written directly
in numpy, with a hand-derived backward pass. Free and condition points are
processed together; a fourth input channel marks condition points and only
the free points receive a prediction. A global max-pool over the level-2
centres, fed their absolute positions, gives every point access to the
whole shape. A separate max-pooled MLP over the condition points alone
encodes where the defective structure is, independent of the noise level.
The 64-d time embedding is concatenated to the point features
in front of every abstraction and propagation level.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict

import numpy as np

from ..rng import make_rng
from .geometry import (
    ball_query,
    farthest_from_centroid,
    farthest_point_sampling,
    gather,
    scatter_add,
    three_nn_weights,
)

Params = Dict[str, np.ndarray]


@dataclass(frozen=True)
class DenoiserConfig:
    temb_dim: int = 64
    slope: float = 0.1
    center_fraction: float = 0.25
    radii: tuple[float, float] = (0.1, 0.2)
    neighbors: tuple[int, int] = (32, 32)
    sa1_widths: tuple[int, int] = (32, 64)
    sa2_width: int = 128
    fp1_width: int = 64
    global_width: int = 64
    cond_widths: tuple[int, int] = (64, 128)
    fp2_width: int = 64
    interp_k: int = 3
    T: int = 1000
    seed: int = 0

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def layer_shapes(cfg: DenoiserConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered manifest of every parameter tensor."""
    e = cfg.temb_dim
    s1a, s1b = cfg.sa1_widths
    s2 = cfg.sa2_width
    k1, k2 = cfg.cond_widths
    return [
        ("temb.w1", (e, e)),
        ("temb.b1", (e,)),
        ("temb.w2", (e, e)),
        ("temb.b2", (e,)),
        ("cond.w1", (3, k1)),
        ("cond.b1", (k1,)),
        ("cond.w2", (k1, k2)),
        ("cond.b2", (k2,)),
        ("sa1.w1", (3 + 1 + e, s1a)),
        ("sa1.b1", (s1a,)),
        ("sa1.w2", (s1a, s1b)),
        ("sa1.b2", (s1b,)),
        ("sa2.w1", (3 + s1b + e, s2)),
        ("sa2.b1", (s2,)),
        ("glob.w1", (3 + s2 + k2 + e, cfg.global_width)),
        ("glob.b1", (cfg.global_width,)),
        ("fp1.w1", (s2 + s1b + cfg.global_width + k2 + e, cfg.fp1_width)),
        ("fp1.b1", (cfg.fp1_width,)),
        ("fp2.w1", (cfg.fp1_width + 4 + e, cfg.fp2_width)),
        ("fp2.b1", (cfg.fp2_width,)),
        ("head.w", (cfg.fp2_width, 3)),
        ("head.b", (3,)),
    ]


def param_count(cfg: DenoiserConfig) -> int:
    return int(sum(np.prod(shape) for _, shape in layer_shapes(cfg)))


def init_params(cfg: DenoiserConfig, seed: int | None = None) -> Params:
    """He fan-in normal weights, zero biases and a zero output head."""
    rng = make_rng(cfg.seed if seed is None else seed)
    params: Params = {}
    for name, shape in layer_shapes(cfg):
        if name.startswith("head") or len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.standard_normal(shape) * np.sqrt(2.0 / shape[0])
    return params


def flatten(params: Params, cfg: DenoiserConfig) -> np.ndarray:
    return np.concatenate([params[name].ravel() for name, _ in layer_shapes(cfg)])


def unflatten(vector: np.ndarray, cfg: DenoiserConfig) -> Params:
    out: Params = {}
    pos = 0
    for name, shape in layer_shapes(cfg):
        size = int(np.prod(shape))
        out[name] = np.array(vector[pos : pos + size], dtype=np.float64).reshape(shape)
        pos += size
    if pos != len(vector):
        raise ValueError(f"parameter vector has {len(vector)} entries, manifest needs {pos}")
    return out


def leaky(x: np.ndarray, slope: float) -> np.ndarray:
    if 0.0 <= slope <= 1.0:
        return np.maximum(x, slope * x)
    return np.where(x > 0, x, slope * x)


def leaky_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x.dtype.type(1.0), x.dtype.type(slope))


def sinusoid(t, dim: int = 64) -> np.ndarray:
    """``[sin(t f_k), cos(t f_k)]`` with ``f_k = 10000^(-k / (dim/2))``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    arg = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def time_embedding(t: int, T: int, params: Params, slope: float = 0.1) -> np.ndarray:
    if not 1 <= t <= T:
        raise ValueError(f"step {t} outside 1..{T}")
    s = sinusoid(t, params["temb.w1"].shape[0])
    h = s @ params["temb.w1"] + params["temb.b1"]
    return (leaky(h, slope) @ params["temb.w2"] + params["temb.b2"])[0]


def compute_dtype(params: Params):
    """float32 when the parameters are single precision, else float64."""
    return np.float32 if params["head.w"].dtype == np.float32 else np.float64


def _linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense layer on the last axis.

    ``w`` and ``b`` may carry a leading batch axis matching ``x``, giving every
    batch row its own weights (used to evaluate many parameter sets at once).
    """
    out_shape = x.shape[:-1] + (w.shape[-1],)
    if w.ndim == 2:
        z = x.reshape(-1, x.shape[-1]) @ w
    else:
        z = x.reshape(x.shape[0], -1, x.shape[-1]) @ w
    z = z.reshape(out_shape)
    if b.ndim == 2:
        return z + b.reshape((b.shape[0],) + (1,) * (z.ndim - 2) + (b.shape[1],))
    return z + b


def _wgrad(x: np.ndarray, dz: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])


def _interpolate(feats: np.ndarray, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.einsum("bnk,bnkc->bnc", w, gather(feats, idx))


def _check_finite(name: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite activation in {name}")


def num_centers(n: int, fraction: float) -> int:
    return max(1, int(round(n * fraction)))


def point_geometry(cfg: DenoiserConfig, pts: np.ndarray) -> dict:
    """Centres, neighbourhoods and interpolation weights of a batch of clouds.

    None of this depends on the parameters, so callers that evaluate the
    network repeatedly on the same points may compute it once.
    """
    b, n, _ = pts.shape
    n1 = num_centers(n, cfg.center_fraction)
    idx1 = farthest_point_sampling(pts, n1, farthest_from_centroid(pts))
    c1 = gather(pts, idx1)
    g1 = ball_query(c1, pts, cfg.radii[0], cfg.neighbors[0], order="distance")
    n2 = num_centers(n1, cfg.center_fraction)
    idx2 = farthest_point_sampling(c1, n2, farthest_from_centroid(c1))
    c2 = gather(c1, idx2)
    g2 = ball_query(c2, c1, cfg.radii[1], cfg.neighbors[1], order="distance")
    i21, w21 = three_nn_weights(c1, c2, cfg.interp_k)
    i10, w10 = three_nn_weights(pts, c1, cfg.interp_k)
    return dict(n1=n1, c1=c1, g1=g1, n2=n2, c2=c2, g2=g2, i21=i21, w21=w21, i10=i10, w10=w10)


def forward(
    params: Params, cfg: DenoiserConfig, xt: np.ndarray, c0: np.ndarray, t, geometry: dict | None = None
) -> tuple[np.ndarray, dict]:
    """Predicted noise ``(B, M, 3)`` for batched free points and conditions.

    Returns the prediction and the cache consumed by :func:`backward`.
    ``geometry`` may be a :func:`point_geometry` result for the same points.
    """
    dt = compute_dtype(params)
    xt = np.asarray(xt, dtype=dt)
    c0 = np.asarray(c0, dtype=dt)
    b, m, _ = xt.shape
    n_cond = c0.shape[1]
    t = np.broadcast_to(np.asarray(t), (b,))
    if np.any(t < 1) or np.any(t > cfg.T):
        raise ValueError(f"step outside 1..{cfg.T}")
    a = cfg.slope
    p = params
    cache: dict = {"m": m}

    pts = np.concatenate([xt, c0], axis=1)
    n = pts.shape[1]
    is_cond = np.concatenate([np.zeros((b, m, 1), dt), np.ones((b, n_cond, 1), dt)], axis=1)
    feat0 = np.concatenate([pts, is_cond], axis=-1)
    geo = point_geometry(cfg, pts) if geometry is None else geometry
    n1, c1, g1, n2, c2, g2 = (geo[k] for k in ("n1", "c1", "g1", "n2", "c2", "g2"))
    i21, w21, i10, w10 = (geo[k] for k in ("i21", "w21", "i10", "w10"))
    w21, w10 = w21.astype(dt, copy=False), w10.astype(dt, copy=False)
    cache["geometry"] = geo

    s = sinusoid(t, cfg.temb_dim).astype(dt, copy=False)
    h_t = _linear(s, p["temb.w1"], p["temb.b1"])
    a_t = leaky(h_t, a)
    emb = _linear(a_t, p["temb.w2"], p["temb.b2"])
    cache.update(s=s, h_t=h_t, a_t=a_t)
    _check_finite("time embedding", emb)

    # condition code: max-pool of a point-wise MLP over the condition points only
    zc1 = _linear(c0, p["cond.w1"], p["cond.b1"])
    ac1 = leaky(zc1, a)
    zc2 = _linear(ac1, p["cond.w2"], p["cond.b2"])
    ac2 = leaky(zc2, a)
    argc = np.argmax(ac2, axis=1)
    code = np.take_along_axis(ac2, argc[:, None, :], axis=1)[:, 0, :]
    _check_finite("condition code", code)
    kc = code.shape[-1]
    cache.update(c0=c0, zc1=zc1, ac1=ac1, zc2=zc2, argc=argc)

    # set abstraction 1
    k1 = g1.shape[-1]
    x1 = np.concatenate(
        [
            gather(pts, g1) - c1[:, :, None, :],
            gather(is_cond, g1),
            np.broadcast_to(emb[:, None, None, :], (b, n1, k1, cfg.temb_dim)),
        ],
        axis=-1,
    )
    z1a = _linear(x1, p["sa1.w1"], p["sa1.b1"])
    a1a = leaky(z1a, a)
    z1b = _linear(a1a, p["sa1.w2"], p["sa1.b2"])
    a1b = leaky(z1b, a)
    arg1 = np.argmax(a1b, axis=2)
    f1 = np.take_along_axis(a1b, arg1[:, :, None, :], axis=2)[:, :, 0, :]
    _check_finite("SA1", f1)
    cache.update(n=n, n1=n1, g1=g1, x1=x1, z1a=z1a, a1a=a1a, z1b=z1b, arg1=arg1)

    # set abstraction 2
    k2 = g2.shape[-1]
    x2 = np.concatenate(
        [
            gather(c1, g2) - c2[:, :, None, :],
            gather(f1, g2),
            np.broadcast_to(emb[:, None, None, :], (b, n2, k2, cfg.temb_dim)),
        ],
        axis=-1,
    )
    z2 = _linear(x2, p["sa2.w1"], p["sa2.b1"])
    a2 = leaky(z2, a)
    arg2 = np.argmax(a2, axis=2)
    f2 = np.take_along_axis(a2, arg2[:, :, None, :], axis=2)[:, :, 0, :]
    _check_finite("SA2", f2)
    cache.update(n2=n2, g2=g2, x2=x2, z2=z2, arg2=arg2)

    # global abstraction over all level-2 centres, absolute positions included
    xg = np.concatenate(
        [
            c2,
            f2,
            np.broadcast_to(code[:, None, :], (b, n2, kc)),
            np.broadcast_to(emb[:, None, :], (b, n2, cfg.temb_dim)),
        ],
        axis=-1,
    )
    zg = _linear(xg, p["glob.w1"], p["glob.b1"])
    ag = leaky(zg, a)
    argg = np.argmax(ag, axis=1)
    fg = np.take_along_axis(ag, argg[:, None, :], axis=1)[:, 0, :]
    _check_finite("global", fg)
    cache.update(xg=xg, zg=zg, argg=argg)

    # feature propagation 2 -> 1
    y1 = np.concatenate(
        [
            _interpolate(f2, i21, w21),
            f1,
            np.broadcast_to(fg[:, None, :], (b, n1, cfg.global_width)),
            np.broadcast_to(code[:, None, :], (b, n1, kc)),
            np.broadcast_to(emb[:, None, :], (b, n1, cfg.temb_dim)),
        ],
        axis=-1,
    )
    zf1 = _linear(y1, p["fp1.w1"], p["fp1.b1"])
    g_1 = leaky(zf1, a)
    cache.update(i21=i21, w21=w21, y1=y1, zf1=zf1)

    # feature propagation 1 -> points
    y0 = np.concatenate(
        [_interpolate(g_1, i10, w10), feat0, np.broadcast_to(emb[:, None, :], (b, n, cfg.temb_dim))],
        axis=-1,
    )
    zf0 = _linear(y0, p["fp2.w1"], p["fp2.b1"])
    g_0 = leaky(zf0, a)
    _check_finite("FP", g_0)
    cache.update(i10=i10, w10=w10, y0=y0, zf0=zf0, g_0=g_0)

    out = _linear(g_0[:, :m], p["head.w"], p["head.b"])
    return out, cache


def backward(params: Params, cfg: DenoiserConfig, cache: dict, d_out: np.ndarray) -> Params:
    """Gradient of a scalar objective w.r.t. every parameter, given dObjective/dOutput."""
    a = cfg.slope
    p = params
    e = cfg.temb_dim
    m, n, n1, n2 = cache["m"], cache["n"], cache["n1"], cache["n2"]
    b = d_out.shape[0]
    grads: Params = {}

    g_0 = cache["g_0"]
    grads["head.w"] = _wgrad(g_0[:, :m], d_out)
    grads["head.b"] = d_out.reshape(-1, 3).sum(axis=0)
    d_g0 = np.zeros_like(g_0)
    d_g0[:, :m] = _linear(d_out, p["head.w"].T, np.zeros(p["head.w"].shape[0], d_out.dtype))

    # FP 1 -> points
    dz = d_g0 * leaky_grad(cache["zf0"], a)
    grads["fp2.w1"] = _wgrad(cache["y0"], dz)
    grads["fp2.b1"] = dz.reshape(-1, dz.shape[-1]).sum(axis=0)
    dy0 = dz @ p["fp2.w1"].T
    c_in = cfg.fp1_width
    d_emb = dy0[..., -e:].sum(axis=1)
    d_g1 = np.zeros((b, n1, c_in), d_out.dtype)
    i10, w10 = cache["i10"], cache["w10"]
    for j in range(i10.shape[-1]):
        d_g1 += scatter_add(dy0[..., :c_in] * w10[..., j : j + 1], i10[..., j], n1)

    # FP 2 -> 1
    dz = d_g1 * leaky_grad(cache["zf1"], a)
    grads["fp1.w1"] = _wgrad(cache["y1"], dz)
    grads["fp1.b1"] = dz.reshape(-1, dz.shape[-1]).sum(axis=0)
    dy1 = dz @ p["fp1.w1"].T
    s2 = cfg.sa2_width
    s1 = cfg.sa1_widths[1]
    d_emb += dy1[..., -e:].sum(axis=1)
    d_f1 = dy1[..., s2 : s2 + s1].copy()
    g = cfg.global_width
    kc = cfg.cond_widths[1]
    d_fg = dy1[..., s2 + s1 : s2 + s1 + g].sum(axis=1)
    d_code = dy1[..., s2 + s1 + g : s2 + s1 + g + kc].sum(axis=1)
    d_f2 = np.zeros((b, n2, s2), d_out.dtype)
    i21, w21 = cache["i21"], cache["w21"]
    for j in range(i21.shape[-1]):
        d_f2 += scatter_add(dy1[..., :s2] * w21[..., j : j + 1], i21[..., j], n2)

    # global abstraction
    zg = cache["zg"]
    d_ag = np.zeros_like(zg)
    np.put_along_axis(d_ag, cache["argg"][:, None, :], d_fg[:, None, :], axis=1)
    dz = d_ag * leaky_grad(zg, a)
    grads["glob.w1"] = _wgrad(cache["xg"], dz)
    grads["glob.b1"] = dz.reshape(-1, dz.shape[-1]).sum(axis=0)
    dxg = _linear(dz, p["glob.w1"].T, np.zeros(p["glob.w1"].shape[0], d_out.dtype))
    d_f2 += dxg[..., 3 : 3 + s2]
    d_code += dxg[..., 3 + s2 : 3 + s2 + kc].sum(axis=1)
    d_emb += dxg[..., -e:].sum(axis=1)

    # SA 2
    z2 = cache["z2"]
    d_a2 = np.zeros_like(z2)
    np.put_along_axis(d_a2, cache["arg2"][:, :, None, :], d_f2[:, :, None, :], axis=2)
    dz = d_a2 * leaky_grad(z2, a)
    grads["sa2.w1"] = _wgrad(cache["x2"], dz)
    grads["sa2.b1"] = dz.reshape(-1, dz.shape[-1]).sum(axis=0)
    dx2 = _linear(dz, p["sa2.w1"].T, np.zeros(p["sa2.w1"].shape[0], d_out.dtype))
    d_emb += dx2[..., -e:].sum(axis=(1, 2))
    d_f1 += scatter_add(dx2[..., 3 : 3 + s1], cache["g2"], n1)

    # SA 1
    z1b = cache["z1b"]
    d_a1b = np.zeros_like(z1b)
    np.put_along_axis(d_a1b, cache["arg1"][:, :, None, :], d_f1[:, :, None, :], axis=2)
    dz = d_a1b * leaky_grad(z1b, a)
    grads["sa1.w2"] = _wgrad(cache["a1a"], dz)
    grads["sa1.b2"] = dz.reshape(-1, dz.shape[-1]).sum(axis=0)
    da = _linear(dz, p["sa1.w2"].T, np.zeros(p["sa1.w2"].shape[0], d_out.dtype))
    dz = da * leaky_grad(cache["z1a"], a)
    grads["sa1.w1"] = _wgrad(cache["x1"], dz)
    grads["sa1.b1"] = dz.reshape(-1, dz.shape[-1]).sum(axis=0)
    dx1 = _linear(dz, p["sa1.w1"].T, np.zeros(p["sa1.w1"].shape[0], d_out.dtype))
    d_emb += dx1[..., -e:].sum(axis=(1, 2))

    # condition code
    zc2 = cache["zc2"]
    d_ac2 = np.zeros_like(zc2)
    np.put_along_axis(d_ac2, cache["argc"][:, None, :], d_code[:, None, :], axis=1)
    dz = d_ac2 * leaky_grad(zc2, a)
    grads["cond.w2"] = _wgrad(cache["ac1"], dz)
    grads["cond.b2"] = dz.reshape(-1, dz.shape[-1]).sum(axis=0)
    da = _linear(dz, p["cond.w2"].T, np.zeros(p["cond.w2"].shape[0], d_out.dtype))
    dz = da * leaky_grad(cache["zc1"], a)
    grads["cond.w1"] = _wgrad(cache["c0"], dz)
    grads["cond.b1"] = dz.reshape(-1, dz.shape[-1]).sum(axis=0)

    # time embedding
    grads["temb.w2"] = cache["a_t"].T @ d_emb
    grads["temb.b2"] = d_emb.sum(axis=0)
    dh = (d_emb @ p["temb.w2"].T) * leaky_grad(cache["h_t"], a)
    grads["temb.w1"] = cache["s"].T @ dh
    grads["temb.b1"] = dh.sum(axis=0)
    return grads


def noise_loss(eps: np.ndarray, eps_hat: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch mean of per-cloud mean squared noise error, and its output gradient."""
    b, m, _ = eps.shape
    diff = eps_hat - eps
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.sum(diff**2) / (b * m))
    return loss, 2.0 * diff / (b * m)


class PointDenoiser:
    """Callable ``(x_t_free, c0, t) -> eps_hat`` bound to a parameter set."""

    def __init__(self, params: Params, cfg: DenoiserConfig):
        self.params = params
        self.cfg = cfg

    def __call__(self, xt_free: np.ndarray, c0: np.ndarray, t: int) -> np.ndarray:
        out, _ = forward(self.params, self.cfg, np.asarray(xt_free)[None], np.asarray(c0)[None], t)
        return out[0]

    def batch(self, xt: np.ndarray, c0: np.ndarray, t) -> np.ndarray:
        return forward(self.params, self.cfg, xt, c0, t)[0]

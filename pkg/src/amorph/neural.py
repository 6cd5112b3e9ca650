"""Policy/value network with hand-written exact backpropagation.

Stack: [images + coord channels] -> conv 5x5(2 filters) -> ReLU -> maxpool 2
-> conv 3x3(2 filters) -> ReLU -> maxpool 2 -> flatten -> fc(32) -> ReLU ->
concat tool/extra vector -> fc(64) -> ReLU -> fc(64) -> ReLU -> linear heads
for the action mean and the state value. The action distribution is a
diagonal Gaussian with a state-independent learnable log-std vector.

Everything runs in float64; gradients are exact reverse-mode and verified
against central finite differences in the tests.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .errors import CheckpointError, ConfigurationError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = np.log(2.0 * np.pi)


def coord_channels(n: int) -> np.ndarray:
    """Row- and column-index maps normalized to [-1, 1], shape (2, n, n)."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    if n == 1:
        lin = np.array([-1.0])
    else:
        lin = -1.0 + 2.0 * np.arange(n) / (n - 1)
    rows = np.repeat(lin[:, None], n, axis=1)
    cols = np.repeat(lin[None, :], n, axis=0)
    return np.stack([rows, cols])


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, C, H, W) -> (B, C*k*k, H*W) patches with same padding.

    The (C, ki, kj)-major layout keeps every slice copy contiguous and lets
    the convolution run as one batched matmul without transposing the large
    patch tensor.
    """
    b, c, hh, ww = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((b, c, k, k, hh, ww))
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + hh, kj:kj + ww]
    return cols.reshape(b, c * k * k, hh * ww)


def _col2im(dcols: np.ndarray, shape: tuple, k: int) -> np.ndarray:
    b, c, hh, ww = shape
    pad = k // 2
    dxp = np.zeros((b, c, hh + 2 * pad, ww + 2 * pad))
    dc = dcols.reshape(b, c, k, k, hh, ww)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki:ki + hh, kj:kj + ww] += dc[:, :, ki, kj]
    return dxp[:, :, pad:pad + hh, pad:pad + ww]


def _conv_forward(x, w, bias):
    f = w.shape[0]
    k = w.shape[2]
    b, _, hh, ww = x.shape
    cols = _im2col(x, k)
    out = np.matmul(w.reshape(f, -1), cols) + bias[:, None]
    return out.reshape(b, f, hh, ww), cols


def _conv_backward(dout, cols, x_shape, w, need_dx=True):
    f = w.shape[0]
    k = w.shape[2]
    b = dout.shape[0]
    dflat = dout.reshape(b, f, -1)
    dw = np.matmul(dflat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = dflat.sum(axis=(0, 2))
    if not need_dx:
        return None, dw, db
    dcols = np.matmul(w.reshape(f, -1).T, dflat)
    return _col2im(dcols, x_shape, k), dw, db


def _maxpool(x):
    b, c, hh, ww = x.shape
    xr = x.reshape(b, c, hh // 2, 2, ww // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    xr = xr.reshape(b, c, hh // 2, ww // 2, 4)
    idx = np.argmax(xr, axis=-1)   # first maximum on ties
    out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _maxpool_backward(dout, idx, x_shape):
    b, c, hh, ww = x_shape
    dxr = np.zeros((b, c, hh // 2, ww // 2, 4))
    np.put_along_axis(dxr, idx[..., None], dout[..., None], axis=-1)
    dxr = dxr.reshape(b, c, hh // 2, ww // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return dxr.reshape(b, c, hh, ww)


PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b",
               "fc2_w", "fc2_b", "fc3_w", "fc3_b", "mean_w", "mean_b",
               "value_w", "value_b", "log_std")


class PolicyNetwork:
    """Parameter container plus forward/backward for the control policy."""

    def __init__(self, n: int, m: int, vec_dim: int, action_dim: int,
                 seed=0, log_std_init: float = -0.5):
        if n % 4 != 0:
            raise ConfigurationError(f"grid size n={n} must be divisible by 4")
        self.n = n
        self.m = m
        self.vec_dim = vec_dim
        self.action_dim = action_dim
        self.flat_dim = 2 * (n // 4) * (n // 4)
        self.coords = coord_channels(n)

        rng = np.random.default_rng(seed)

        def uniform(shape, fan_in, scale=1.0):
            lim = scale / np.sqrt(fan_in)
            return rng.uniform(-lim, lim, size=shape)

        cin = m + 2
        self.params = {
            "conv1_w": uniform((2, cin, 5, 5), cin * 25),
            "conv1_b": np.zeros(2),
            "conv2_w": uniform((2, 2, 3, 3), 2 * 9),
            "conv2_b": np.zeros(2),
            "fc1_w": uniform((self.flat_dim, 32), self.flat_dim),
            "fc1_b": np.zeros(32),
            "fc2_w": uniform((32 + vec_dim, 64), 32 + vec_dim),
            "fc2_b": np.zeros(64),
            "fc3_w": uniform((64, 64), 64),
            "fc3_b": np.zeros(64),
            "mean_w": uniform((64, action_dim), 64, scale=0.01),
            "mean_b": np.zeros(action_dim),
            "value_w": uniform((64, 1), 64, scale=0.01),
            "value_b": np.zeros(1),
            "log_std": np.full(action_dim, float(log_std_init)),
        }

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def clone(self) -> "PolicyNetwork":
        other = PolicyNetwork.__new__(PolicyNetwork)
        other.n, other.m = self.n, self.m
        other.vec_dim, other.action_dim = self.vec_dim, self.action_dim
        other.flat_dim = self.flat_dim
        other.coords = self.coords
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def _check_shapes(self, images, vecs):
        if images.ndim != 4 or images.shape[1:] != (self.m, self.n, self.n):
            raise ConfigurationError(
                f"images: expected (B, {self.m}, {self.n}, {self.n}), got {images.shape}")
        if vecs.ndim != 2 or vecs.shape[1] != self.vec_dim:
            raise ConfigurationError(
                f"vecs: expected (B, {self.vec_dim}), got {vecs.shape}")
        if images.shape[0] != vecs.shape[0]:
            raise ConfigurationError("images and vecs disagree on batch size")

    def forward(self, images: np.ndarray, vecs: np.ndarray):
        """Batched forward pass -> (mean (B,A), value (B,), cache)."""
        images = np.asarray(images, dtype=np.float64)
        vecs = np.asarray(vecs, dtype=np.float64)
        self._check_shapes(images, vecs)
        p = self.params
        b = images.shape[0]

        coords = np.broadcast_to(self.coords, (b, 2, self.n, self.n))
        x0 = np.concatenate([images, coords], axis=1)

        c1, cols1 = _conv_forward(x0, p["conv1_w"], p["conv1_b"])
        r1 = np.maximum(c1, 0.0)
        p1, idx1 = _maxpool(r1)
        c2, cols2 = _conv_forward(p1, p["conv2_w"], p["conv2_b"])
        r2 = np.maximum(c2, 0.0)
        p2, idx2 = _maxpool(r2)
        flat = p2.reshape(b, self.flat_dim)

        h1 = np.maximum(flat @ p["fc1_w"] + p["fc1_b"], 0.0)
        g = np.concatenate([h1, vecs], axis=1)
        h2 = np.maximum(g @ p["fc2_w"] + p["fc2_b"], 0.0)
        h3 = np.maximum(h2 @ p["fc3_w"] + p["fc3_b"], 0.0)
        mean = h3 @ p["mean_w"] + p["mean_b"]
        value = (h3 @ p["value_w"] + p["value_b"])[:, 0]

        cache = {"x0_shape": x0.shape, "cols1": cols1, "r1": r1, "idx1": idx1,
                 "p1": p1, "cols2": cols2, "r2": r2, "idx2": idx2,
                 "flat": flat, "h1": h1, "g": g, "h2": h2, "h3": h3}
        return mean, value, cache

    def backward(self, cache, d_mean: np.ndarray, d_value: np.ndarray) -> dict:
        """Exact gradients of sum(d_mean * mean) + sum(d_value * value)."""
        p = self.params
        g = {}

        h3 = cache["h3"]
        g["mean_w"] = h3.T @ d_mean
        g["mean_b"] = d_mean.sum(axis=0)
        dv = d_value[:, None]
        g["value_w"] = h3.T @ dv
        g["value_b"] = dv.sum(axis=0)

        dh3 = (d_mean @ p["mean_w"].T + dv @ p["value_w"].T) * (h3 > 0.0)
        g["fc3_w"] = cache["h2"].T @ dh3
        g["fc3_b"] = dh3.sum(axis=0)
        dh2 = (dh3 @ p["fc3_w"].T) * (cache["h2"] > 0.0)
        g["fc2_w"] = cache["g"].T @ dh2
        g["fc2_b"] = dh2.sum(axis=0)
        dg = dh2 @ p["fc2_w"].T
        dh1 = dg[:, :32] * (cache["h1"] > 0.0)
        g["fc1_w"] = cache["flat"].T @ dh1
        g["fc1_b"] = dh1.sum(axis=0)
        dflat = dh1 @ p["fc1_w"].T

        b = dflat.shape[0]
        side = self.n // 4
        dp2 = dflat.reshape(b, 2, side, side)
        dr2 = _maxpool_backward(dp2, cache["idx2"], cache["r2"].shape)
        dc2 = dr2 * (cache["r2"] > 0.0)
        dp1, g["conv2_w"], g["conv2_b"] = _conv_backward(
            dc2, cache["cols2"], cache["p1"].shape, p["conv2_w"])
        dr1 = _maxpool_backward(dp1, cache["idx1"], cache["r1"].shape)
        dc1 = dr1 * (cache["r1"] > 0.0)
        _, g["conv1_w"], g["conv1_b"] = _conv_backward(
            dc1, cache["cols1"], cache["x0_shape"], p["conv1_w"], need_dx=False)

        g["log_std"] = np.zeros(self.action_dim)
        return g

    # --- single-observation helpers -------------------------------------

    def _obs_arrays(self, obs):
        return obs.images[None], obs.vector()[None]

    def action(self, obs, rng=None, deterministic: bool = True) -> np.ndarray:
        mean, _, _ = self.forward(*self._obs_arrays(obs))
        if deterministic or rng is None:
            return mean[0]
        return sample_action(mean[0], self.params["log_std"], rng)[0]

    def value_of(self, obs) -> float:
        _, value, _ = self.forward(*self._obs_arrays(obs))
        return float(value[0])

    # --- persistence -----------------------------------------------------

    def meta(self) -> dict:
        return {"n": self.n, "m": self.m, "vec_dim": self.vec_dim,
                "action_dim": self.action_dim}

    def save(self, path) -> None:
        save_arrays(path, self.meta(), self.params)

    @classmethod
    def load(cls, path) -> "PolicyNetwork":
        meta, arrays = load_arrays(path)
        for key in ("n", "m", "vec_dim", "action_dim"):
            if key not in meta:
                raise CheckpointError(f"checkpoint header missing {key!r}")
        net = cls(meta["n"], meta["m"], meta["vec_dim"], meta["action_dim"])
        for name in net.params:
            if name not in arrays:
                raise CheckpointError(f"checkpoint missing parameter {name!r}")
            if arrays[name].shape != net.params[name].shape:
                raise CheckpointError(
                    f"parameter {name!r}: expected {net.params[name].shape}, "
                    f"found {arrays[name].shape}")
            net.params[name] = arrays[name]
        return net


def gaussian_log_prob(action: np.ndarray, mean: np.ndarray, log_std: np.ndarray):
    """Diagonal Gaussian log density, summed over action dims (last axis)."""
    z = (action - mean) / np.exp(log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) \
        - 0.5 * LOG_2PI * action.shape[-1]


def sample_action(mean: np.ndarray, log_std: np.ndarray, rng: np.random.Generator):
    """Draw an action and its log probability."""
    noise = rng.standard_normal(mean.shape)
    action = mean + np.exp(log_std) * noise
    return action, float(gaussian_log_prob(action, mean, log_std))


# --- named-array container (checkpoints and trainer state) ----------------

_MAGIC = b"AMORPHCK"
_CONTAINER_VERSION = 1


def save_arrays(path, meta: dict, arrays: dict) -> None:
    """Binary container: JSON header plus named little-endian float64 arrays."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _CONTAINER_VERSION))
    header = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    names = sorted(arrays)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<Q", d))
        buf.write(arr.tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_arrays(path):
    with open(path, "rb") as f:
        data = f.read()
    view = memoryview(data)
    if bytes(view[:8]) != _MAGIC:
        raise CheckpointError("bad magic: not an amorph checkpoint")
    (version,) = struct.unpack_from("<I", view, 8)
    if version != _CONTAINER_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", view, 12)
    off = 16
    meta = json.loads(bytes(view[off:off + hlen]).decode())
    off += hlen
    (count,) = struct.unpack_from("<I", view, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", view, off)
        off += 4
        name = bytes(view[off:off + nlen]).decode()
        off += nlen
        (ndim,) = struct.unpack_from("<I", view, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", view, off) if ndim else ()
        off += 8 * ndim
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(view, dtype="<f8", count=size, offset=off).reshape(shape)
        off += 8 * size
        arrays[name] = arr.astype(np.float64)
    return meta, arrays

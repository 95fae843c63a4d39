"""Minimal float64 numerical core: dense / embedding / 3D-conv layers with
analytic gradients, Adam, and a versioned binary parameter format.

Layers operate on batch-first arrays. ``forward`` returns ``(y, cache)``;
``backward(cache, dy)`` returns ``(dx, grads)`` where ``grads`` maps the
layer's parameter names to arrays of matching shapes. Everything is float64:
the gradient acceptance checks compare against central finite differences and
need the headroom.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np


class NNError(Exception):
    pass


class ShapeError(NNError):
    pass


class NonFiniteError(NNError):
    pass


class ParamsFormatError(NNError):
    pass


class DescriptorMismatchError(ParamsFormatError):
    pass


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, scale: float = 1.0) -> np.ndarray:
    limit = scale * np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-limit, limit, size=shape)


def _apply_activation(pre: np.ndarray, activation: str | None) -> np.ndarray:
    if activation is None:
        return pre
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "tanh":
        return np.tanh(pre)
    raise ValueError(f"unknown activation {activation!r}")


def _activation_grad(dy: np.ndarray, pre: np.ndarray, y: np.ndarray, activation: str | None) -> np.ndarray:
    if activation is None:
        return dy
    if activation == "relu":
        return dy * (pre > 0.0)
    if activation == "tanh":
        return dy * (1.0 - y * y)
    raise ValueError(f"unknown activation {activation!r}")


class Dense:
    """y = act(x @ w + b) over the last axis."""

    def __init__(
        self,
        n_in: int,
        n_out: int,
        activation: str | None = None,
        rng: np.random.Generator | None = None,
        w_scale: float = 1.0,
    ):
        self.n_in = n_in
        self.n_out = n_out
        self.activation = activation
        rng = rng or np.random.default_rng(0)
        self.w = he_uniform(rng, (n_in, n_out), n_in, w_scale)
        self.b = np.zeros(n_out, dtype=np.float64)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {"w": self.w, "b": self.b}

    def descriptor(self) -> dict:
        return {
            "kind": "dense",
            "n_in": self.n_in,
            "n_out": self.n_out,
            "activation": self.activation,
        }

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"dense expects last dim {self.n_in}, got {x.shape}")
        pre = x @ self.w + self.b
        y = _apply_activation(pre, self.activation)
        return y, (x, pre, y)

    def backward(self, cache, dy: np.ndarray):
        x, pre, y = cache
        dpre = _activation_grad(dy, pre, y, self.activation)
        flat_x = x.reshape(-1, self.n_in)
        flat_d = dpre.reshape(-1, self.n_out)
        gw = flat_x.T @ flat_d
        gb = flat_d.sum(axis=0)
        dx = dpre @ self.w.T
        return dx, {"w": gw, "b": gb}


class Embedding:
    """Row lookup table for small integer codes; optional tanh on the rows."""

    def __init__(
        self,
        num_codes: int,
        dim: int,
        activation: str | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.num_codes = num_codes
        self.dim = dim
        self.activation = activation
        rng = rng or np.random.default_rng(0)
        self.table = rng.uniform(-1.0, 1.0, size=(num_codes, dim))

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {"table": self.table}

    def descriptor(self) -> dict:
        return {
            "kind": "embedding",
            "num_codes": self.num_codes,
            "dim": self.dim,
            "activation": self.activation,
        }

    def forward(self, codes: np.ndarray):
        pre = self.table[codes]
        y = _apply_activation(pre, self.activation)
        return y, (codes, pre, y)

    def backward(self, cache, dy: np.ndarray):
        codes, pre, y = cache
        dpre = _activation_grad(dy, pre, y, self.activation)
        # Scatter-add via one-hot matmul: much faster than np.add.at for the
        # large flat batches the conv branch produces.
        flat_codes = codes.reshape(-1)
        flat_d = dpre.reshape(-1, self.dim)
        onehot = np.zeros((flat_codes.size, self.num_codes), dtype=np.float64)
        onehot[np.arange(flat_codes.size), flat_codes] = 1.0
        g = onehot.T @ flat_d
        return None, {"table": g}


class Conv3d:
    """Strided 3D cross-correlation, channels-last: (N, X, Y, Z, C)."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int = 3,
        stride: int = 2,
        pad: int = 0,
        activation: str | None = "relu",
        rng: np.random.Generator | None = None,
    ):
        self.c_in = c_in
        self.c_out = c_out
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        self.activation = activation
        rng = rng or np.random.default_rng(0)
        fan_in = c_in * kernel**3
        self.w = he_uniform(rng, (fan_in, c_out), fan_in)
        self.b = np.zeros(c_out, dtype=np.float64)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {"w": self.w, "b": self.b}

    def descriptor(self) -> dict:
        return {
            "kind": "conv3d",
            "c_in": self.c_in,
            "c_out": self.c_out,
            "kernel": self.kernel,
            "stride": self.stride,
            "pad": self.pad,
            "activation": self.activation,
        }

    def out_size(self, n: int) -> int:
        return (n + 2 * self.pad - self.kernel) // self.stride + 1

    def _cols(self, xp: np.ndarray, od: tuple[int, int, int]):
        k, s = self.kernel, self.stride
        n = xp.shape[0]
        ox, oy, oz = od
        # One strided gather: window view (n, wx, wy, wz, c, k, k, k) then a
        # single stride-s slice + copy, instead of k^3 separate assignments.
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
        patches = win[:, ::s, ::s, ::s][:, :ox, :oy, :oz]
        cols = patches.transpose(0, 1, 2, 3, 5, 6, 7, 4).reshape(
            n, ox * oy * oz, k**3 * self.c_in
        )
        return np.ascontiguousarray(cols)

    def forward(self, x: np.ndarray):
        if x.ndim != 5 or x.shape[-1] != self.c_in:
            raise ShapeError(f"conv3d expects (N,X,Y,Z,{self.c_in}), got {x.shape}")
        p = self.pad
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (p, p), (0, 0))) if p else x
        od = tuple(self.out_size(x.shape[i + 1]) for i in range(3))
        if min(od) < 1:
            raise ShapeError(f"conv3d output collapses for input {x.shape}")
        cols = self._cols(xp, od)
        pre = (cols @ self.w + self.b).reshape(x.shape[0], *od, self.c_out)
        y = _apply_activation(pre, self.activation)
        return y, (x.shape, xp.shape, cols, pre, y, od)

    def backward(self, cache, dy: np.ndarray):
        x_shape, xp_shape, cols, pre, y, od = cache
        k, s, p = self.kernel, self.stride, self.pad
        n = x_shape[0]
        ox, oy, oz = od
        dpre = _activation_grad(dy, pre, y, self.activation).reshape(
            n, ox * oy * oz, self.c_out
        )
        flat_cols = cols.reshape(-1, cols.shape[-1])
        flat_d = dpre.reshape(-1, self.c_out)
        gw = flat_cols.T @ flat_d
        gb = flat_d.sum(axis=0)
        dcols = (dpre @ self.w.T).reshape(n, ox, oy, oz, k, k, k, self.c_in)
        dxp = np.zeros(xp_shape, dtype=np.float64)
        for i in range(k):
            for j in range(k):
                for l in range(k):
                    dxp[
                        :,
                        i : i + ox * s : s,
                        j : j + oy * s : s,
                        l : l + oz * s : s,
                        :,
                    ] += dcols[:, :, :, :, i, j, l, :]
        if p:
            dx = dxp[:, p:-p, p:-p, p:-p, :]
        else:
            dx = dxp
        return dx, {"w": gw, "b": gb}


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax; output strictly positive, rows sum to 1."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Adam:
    """Standard Adam with bias correction over a named parameter dict."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float = 7e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        b1c = 1.0 - self.beta1**t
        b2c = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.shape:
                raise ShapeError(f"grad {name}: {g.shape} != param {p.shape}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class Net:
    """Base for composite networks: an ordered dict of named layers.

    Subclasses define ``forward``/``backward`` wiring and a ``descriptor``.
    Parameter names are ``<layer>.<param>`` and serialize in layer order.
    """

    def __init__(self):
        self.layers: dict[str, object] = {}

    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for lname, layer in self.layers.items():
            for pname, arr in layer.params.items():
                out[f"{lname}.{pname}"] = arr
        return out

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        mine = self.params()
        if set(mine) != set(values):
            raise DescriptorMismatchError(
                f"parameter names differ: {sorted(set(mine) ^ set(values))}"
            )
        for name, arr in mine.items():
            if arr.shape != values[name].shape:
                raise DescriptorMismatchError(
                    f"parameter {name}: shape {values[name].shape} != {arr.shape}"
                )
            arr[...] = values[name]

    def descriptor(self) -> dict:
        return {
            "net": type(self).__name__,
            "layers": {name: layer.descriptor() for name, layer in self.layers.items()},
        }

    def param_bytes(self) -> bytes:
        buf = io.BytesIO()
        for name in sorted(self.params()):
            buf.write(name.encode())
            buf.write(np.ascontiguousarray(self.params()[name]).tobytes())
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        save_params(path, self.descriptor(), self.params())

    def load(self, path: str | Path) -> None:
        _, values = load_params(path, expected_descriptor=self.descriptor())
        self.set_params(values)


_MAGIC = b"VXNP"
_FORMAT_VERSION = 1


def save_params(path: str | Path, descriptor: dict, params: dict[str, np.ndarray]) -> None:
    """Versioned little-endian binary: descriptor echo + named float64 tensors."""
    desc = json.dumps(descriptor, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _FORMAT_VERSION))
        f.write(struct.pack("<Q", len(desc)))
        f.write(desc)
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype=np.float64)
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<Q", d))
            f.write(arr.astype("<f8").tobytes())


def load_params(
    path: str | Path, expected_descriptor: dict | None = None
) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    off = 0

    def take(n: int) -> memoryview:
        nonlocal off
        if off + n > len(raw):
            raise ParamsFormatError(f"{path}: truncated at byte {off}")
        chunk = view[off : off + n]
        off += n
        return chunk

    if bytes(take(4)) != _MAGIC:
        raise ParamsFormatError(f"{path}: bad magic, not a parameter file")
    (version,) = struct.unpack("<I", take(4))
    if version != _FORMAT_VERSION:
        raise ParamsFormatError(f"{path}: unsupported version {version}")
    (dlen,) = struct.unpack("<Q", take(8))
    try:
        descriptor = json.loads(bytes(take(dlen)).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParamsFormatError(f"{path}: bad descriptor: {e}") from e
    if expected_descriptor is not None and descriptor != expected_descriptor:
        raise DescriptorMismatchError(
            f"{path}: architecture descriptor does not match this network"
        )
    (count,) = struct.unpack("<I", take(4))
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(size * 8), dtype="<f8").reshape(shape).copy()
        params[name] = arr
    if off != len(raw):
        raise ParamsFormatError(f"{path}: {len(raw) - off} trailing bytes")
    return descriptor, params


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


def accumulate(total: dict[str, np.ndarray], grads: dict[str, np.ndarray], prefix: str, scale: float = 1.0) -> None:
    """Add layer grads into a net-level dict under `<prefix>.<name>` keys."""
    for name, g in grads.items():
        key = f"{prefix}.{name}"
        if key in total:
            total[key] += scale * g
        else:
            total[key] = scale * g if scale != 1.0 else g.copy()

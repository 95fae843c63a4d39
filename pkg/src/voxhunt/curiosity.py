"""Novelty reward by random network distillation.

A frozen, randomly initialized target network maps (position code, agent
info) to a feature vector; a trainable predictor chases it. The mean squared
prediction error is the curiosity reward: it decays wherever the agent keeps
returning and stays high in rarely visited states.

The raw error is what trajectory triage consumes after training; an optional
running-deviation normalizer only rescales the copy fed into the combined
step reward.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import nn


@dataclass(frozen=True)
class CuriosityConfig:
    lr: float = 7e-5
    batch_size: int = 128
    normalize: bool = True
    updates_per_iter: int = 4


@dataclass(frozen=True)
class RNDArch:
    pos_dim: int = 96  # 3 * pe_d
    info_dim: int = 9
    pos_units: int = 64
    info_units: tuple[int, ...] = (64, 64)
    trunk: tuple[int, ...] = (128, 64)
    out_dim: int = 128


class RNDNet(nn.Net):
    def __init__(self, arch: RNDArch, rng: np.random.Generator):
        super().__init__()
        self.arch = arch
        a = arch
        self.layers["pos_fc"] = nn.Dense(a.pos_dim, a.pos_units, "relu", rng)
        prev = a.info_dim
        for i, width in enumerate(a.info_units):
            self.layers[f"info_fc{i}"] = nn.Dense(prev, width, "relu", rng)
            prev = width
        concat = a.pos_units + prev
        prev = concat
        for i, width in enumerate(a.trunk):
            self.layers[f"trunk_fc{i}"] = nn.Dense(prev, width, "relu", rng)
            prev = width
        self.layers["out"] = nn.Dense(prev, a.out_dim, None, rng)

    def forward(self, inputs: dict[str, np.ndarray]):
        a = self.arch
        caches: dict[str, object] = {}
        pos_out, caches["pos_fc"] = self.layers["pos_fc"].forward(inputs["pos"])
        h = inputs["info"]
        info_caches = []
        for i in range(len(a.info_units)):
            h, c = self.layers[f"info_fc{i}"].forward(h)
            info_caches.append(c)
        caches["info_path"] = info_caches
        x = np.concatenate([pos_out, h], axis=-1)
        caches["split"] = pos_out.shape[-1]
        trunk_caches = []
        for i in range(len(a.trunk)):
            x, c = self.layers[f"trunk_fc{i}"].forward(x)
            trunk_caches.append(c)
        caches["trunk_path"] = trunk_caches
        out, caches["out"] = self.layers["out"].forward(x)
        return out, caches

    def backward(self, caches, dout: np.ndarray) -> dict[str, np.ndarray]:
        a = self.arch
        grads: dict[str, np.ndarray] = {}
        dx, g = self.layers["out"].backward(caches["out"], dout)
        nn.accumulate(grads, g, "out")
        for i in reversed(range(len(a.trunk))):
            dx, g = self.layers[f"trunk_fc{i}"].backward(caches["trunk_path"][i], dx)
            nn.accumulate(grads, g, f"trunk_fc{i}")
        split = caches["split"]
        d_pos, d_info = dx[:, :split], dx[:, split:]
        _, g = self.layers["pos_fc"].backward(caches["pos_fc"], d_pos)
        nn.accumulate(grads, g, "pos_fc")
        for i in reversed(range(len(a.info_units))):
            d_info, g = self.layers[f"info_fc{i}"].backward(caches["info_path"][i], d_info)
            nn.accumulate(grads, g, f"info_fc{i}")
        return grads


class RunningStd:
    """Welford accumulator; reports 1.0 until it has seen two samples."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, values: np.ndarray) -> None:
        for v in np.asarray(values, dtype=np.float64).reshape(-1):
            self.count += 1
            d = v - self.mean
            self.mean += d / self.count
            self.m2 += d * (v - self.mean)

    @property
    def std(self) -> float:
        if self.count < 2:
            return 1.0
        return float(np.sqrt(self.m2 / self.count))


class RNDPair:
    """Frozen target plus trainable predictor with identical architectures."""

    def __init__(
        self,
        arch: RNDArch,
        cfg: CuriosityConfig,
        target_rng: np.random.Generator,
        predictor_rng: np.random.Generator,
    ):
        self.arch = arch
        self.cfg = cfg
        self.target = RNDNet(arch, target_rng)
        self.predictor = RNDNet(arch, predictor_rng)
        self.adam = nn.Adam(self.predictor.params(), lr=cfg.lr)
        self.reward_std = RunningStd()

    def raw_reward(self, inputs: dict[str, np.ndarray]) -> np.ndarray:
        """Per-state mean squared feature error, always >= 0."""
        t, _ = self.target.forward(inputs)
        p, _ = self.predictor.forward(inputs)
        return ((t - p) ** 2).mean(axis=-1)

    def normalized_reward(self, raw: np.ndarray) -> np.ndarray:
        if not self.cfg.normalize:
            return np.asarray(raw, dtype=np.float64)
        return np.asarray(raw, dtype=np.float64) / (self.reward_std.std + 1e-8)

    def observe_rewards(self, raw: np.ndarray) -> None:
        if self.cfg.normalize:
            self.reward_std.update(raw)

    def train_step(self, inputs: dict[str, np.ndarray]) -> float:
        """One Adam step on the predictor; the target never moves."""
        t, _ = self.target.forward(inputs)
        p, caches = self.predictor.forward(inputs)
        err = p - t
        n, k = err.shape
        loss = float((err**2).mean())
        grads = self.predictor.backward(caches, (2.0 / (n * k)) * err)
        nn.check_finite("rnd loss", np.array([loss]))
        self.adam.step(grads)
        return loss

    def update(self, inputs: dict[str, np.ndarray], rng: np.random.Generator) -> float:
        """A few minibatch steps over freshly collected states."""
        n = len(inputs["pos"])
        total = 0.0
        for _ in range(self.cfg.updates_per_iter):
            idx = rng.integers(0, n, size=min(self.cfg.batch_size, n))
            total += self.train_step({k: v[idx] for k, v in inputs.items()})
        return total / max(self.cfg.updates_per_iter, 1)

    def target_hash(self) -> str:
        return hashlib.sha256(self.target.param_bytes()).hexdigest()

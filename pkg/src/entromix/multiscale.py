"""Multi-scale temporal mixing over channel×time signals.

The block builds a pyramid of progressively coarser views of the input
by repeated non-overlapping average pooling along time, then fuses the
pyramid top-down: each finer level receives a residual correction
computed from the already-fused level above it by a low-rank MLP acting
along the time axis. The output is the fused finest level, so the block
preserves the input's shape and, with one level, is the identity map.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .layers import Linear, Module
from .tensor import Tensor


@dataclass(frozen=True)
class MultiScaleConfig:
    """Pyramid geometry: number of levels, pooling kernel, mixer rank."""

    levels: int = 4
    pool_kernel: int = 2
    rank: int = 16

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigError(f"levels must be ≥ 1, got {self.levels}")
        if self.pool_kernel < 2:
            raise ConfigError(f"pool_kernel must be ≥ 2, got {self.pool_kernel}")
        if self.rank < 1:
            raise ConfigError(f"rank must be ≥ 1, got {self.rank}")

    def min_time_len(self) -> int:
        """Shortest input that keeps every pyramid level non-empty."""
        return self.pool_kernel ** (self.levels - 1)

    def level_lengths(self, time_len: int) -> list[int]:
        if time_len < self.min_time_len():
            raise ConfigError(
                f"time length {time_len} is too short for {self.levels} levels "
                f"with pool kernel {self.pool_kernel}; minimum is {self.min_time_len()}"
            )
        lengths = [int(time_len)]
        for _ in range(self.levels - 1):
            lengths.append(lengths[-1] // self.pool_kernel)
        return lengths


class LevelMixer(Module):
    """Low-rank MLP along time: down-project → GELU → up-project.

    Maps a coarser level's time extent to the next finer level's extent,
    applied identically to every (batch, channel) row.
    """

    def __init__(self, in_len: int, out_len: int, rank: int, rng: np.random.Generator):
        self.down = Linear(in_len, rank, rng)
        self.up = Linear(rank, out_len, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.up(T.gelu(self.down(x)))

    __call__ = forward


class MultiScaleMixer(Module):
    """Pyramid-and-fuse block over inputs of shape (batch, channels, time)."""

    def __init__(self, cfg: MultiScaleConfig, time_len: int, rng: np.random.Generator):
        self._cfg = cfg
        self._time_len = int(time_len)
        self._lengths = cfg.level_lengths(time_len)
        # mixer i turns the fused level i+1 into a correction for level i
        self.mixers = [
            LevelMixer(self._lengths[i + 1], self._lengths[i], cfg.rank, rng)
            for i in range(cfg.levels - 1)
        ]

    @property
    def level_lengths(self) -> list[int]:
        return list(self._lengths)

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 3:
            raise ConfigError(
                f"multi-scale mixer expects (batch, channels, time), got shape {x.shape}"
            )
        if x.shape[-1] != self._time_len:
            raise ConfigError(
                f"multi-scale mixer was built for time length {self._time_len}, "
                f"got input with time length {x.shape[-1]}"
            )

    def build_pyramid(self, x: Tensor) -> list[Tensor]:
        """Level 0 is the input itself; each next level is pooled once more."""
        self._check_input(x)
        taus = [x]
        k = self._cfg.pool_kernel
        for _ in range(self._cfg.levels - 1):
            taus.append(T.avg_pool1d(taus[-1], k))
        return taus

    def fuse_top_down(self, taus: list[Tensor]) -> list[Tensor]:
        """Coarsest level passes through; finer levels add mixed corrections."""
        if len(taus) != self._cfg.levels:
            raise ConfigError(
                f"expected {self._cfg.levels} pyramid levels, got {len(taus)}"
            )
        for tau, want in zip(taus, self._lengths):
            if tau.shape[-1] != want:
                raise ConfigError(
                    f"pyramid level has time length {tau.shape[-1]}, expected {want}"
                )
        xis: list[Tensor | None] = [None] * self._cfg.levels
        xis[-1] = taus[-1]
        for i in range(self._cfg.levels - 2, -1, -1):
            xis[i] = taus[i] + self.mixers[i](xis[i + 1])
        return xis

    def forward(self, x: Tensor) -> Tensor:
        if self._cfg.levels == 1:
            self._check_input(x)
            return x
        return self.fuse_top_down(self.build_pyramid(x))[0]

    __call__ = forward

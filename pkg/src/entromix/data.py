"""Deterministic synthetic trial generation, covariate shifts, and trial I/O.

Each class is defined by a two-timescale template: a slow sinusoidal
envelope multiplied by a fast carrier, mixed across channels with
class-specific weights and phases.  Trials are the class template plus
Gaussian noise, z-scored per trial and per channel.  Covariate shifts are
label-preserving affine/noise transforms applied after that normalization,
optionally ramped or switched on part-way through a stream.

Randomness policy: every trial draws from ``PCG64(SeedSequence([seed,
trial_id]))``, so a trial's content depends only on the spec seed and its
id — never on how many trials are generated around it.  The generator
family is fixed by name to keep outputs platform-independent.

Trial file format (little-endian, normative):
  magic ``NTRL`` | u16 version=1 | u32 n_trials | u32 C | u32 T | u32 K |
  then per trial: u32 trial_id | u16 label | C*T float32, channel-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError, DomainError

__all__ = [
    "SynthSpec",
    "ShiftSpec",
    "TrialBatch",
    "TrialDataset",
    "generate",
    "apply_shift",
    "split",
    "write_trials",
    "read_trials",
]

_MAGIC = b"NTRL"
_VERSION = 1
_HEADER = struct.Struct("<4sHIIII")
_RECORD_HEAD = struct.Struct("<IH")

# Salt mixed into the channel-weight stream so it is decoupled from the
# per-trial noise streams derived from the same spec seed.
_WEIGHT_STREAM = 0x57E16875


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a deterministic synthetic trial dataset."""

    n_classes: int = 10
    channels: int = 8
    time_len: int = 128
    noise_sd: float = 0.5
    seed: int = 0
    slow_freqs: tuple[float, ...] | None = None
    fast_freqs: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if self.channels < 1 or self.time_len < 2:
            raise ConfigError(
                f"degenerate signal geometry: channels={self.channels}, time_len={self.time_len}"
            )
        if self.noise_sd < 0:
            raise ConfigError(f"noise_sd must be non-negative, got {self.noise_sd}")
        for name in ("slow_freqs", "fast_freqs"):
            freqs = getattr(self, name)
            if freqs is not None and len(freqs) != self.n_classes:
                raise ConfigError(f"{name} must list one frequency per class")
        pairs = list(zip(self.class_slow_freqs(), self.class_fast_freqs()))
        if len(set(pairs)) != self.n_classes:
            raise ConfigError("class spectral templates must be pairwise distinct")

    def class_slow_freqs(self) -> tuple[float, ...]:
        """Envelope frequency (cycles per trial) for each class."""
        if self.slow_freqs is not None:
            return tuple(float(f) for f in self.slow_freqs)
        return tuple(1.0 + (k % 5) for k in range(self.n_classes))

    def class_fast_freqs(self) -> tuple[float, ...]:
        """Carrier frequency (cycles per trial) for each class."""
        if self.fast_freqs is not None:
            return tuple(float(f) for f in self.fast_freqs)
        return tuple(8.0 + 4.0 * (k // 5) for k in range(self.n_classes))

    def class_templates(self) -> np.ndarray:
        """Clean per-class templates, shape (K, C, T), float64."""
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, _WEIGHT_STREAM]))
        )
        k, c, t = self.n_classes, self.channels, self.time_len
        weights = rng.uniform(0.5, 1.5, size=(k, c))
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(k, c, 2))
        grid = np.arange(t, dtype=np.float64) / t
        slow = np.asarray(self.class_slow_freqs(), dtype=np.float64)
        fast = np.asarray(self.class_fast_freqs(), dtype=np.float64)
        envelope = np.sin(
            2.0 * np.pi * slow[:, None, None] * grid[None, None, :] + phases[:, :, :1]
        )
        carrier = np.sin(
            2.0 * np.pi * fast[:, None, None] * grid[None, None, :] + phases[:, :, 1:2]
        )
        return weights[:, :, None] * envelope * carrier


@dataclass(frozen=True)
class ShiftSpec:
    """Label-preserving covariate shift applied to already-normalized trials.

    ``gain`` and ``offset`` may be scalars or per-channel sequences.  The
    ``schedule`` controls how the shift develops over a stream: ``none``
    applies it fully everywhere, ``abrupt`` switches it on at batch index
    ``change_at``, and ``ramp`` scales it linearly from nothing on the first
    batch to full strength on the last.
    """

    gain: float | tuple[float, ...] = 1.0
    offset: float | tuple[float, ...] = 0.0
    noise_sd: float = 0.0
    schedule: str = "none"
    change_at: int = 0

    def __post_init__(self) -> None:
        if self.schedule not in ("none", "abrupt", "ramp"):
            raise ConfigError(f"unknown shift schedule {self.schedule!r}")
        if self.noise_sd < 0:
            raise ConfigError(f"shift noise_sd must be non-negative, got {self.noise_sd}")
        if self.change_at < 0:
            raise ConfigError(f"change_at must be non-negative, got {self.change_at}")

    def is_identity(self) -> bool:
        return (
            float(np.max(np.abs(np.asarray(self.gain, dtype=np.float64) - 1.0))) == 0.0
            and float(np.max(np.abs(np.asarray(self.offset, dtype=np.float64)))) == 0.0
            and self.noise_sd == 0.0
        )

    def strength(self, position: int, total_batches: int) -> float:
        """Schedule multiplier in [0, 1] for the batch at ``position``."""
        if position < 0:
            raise DomainError(f"stream position must be non-negative, got {position}")
        if self.schedule == "none":
            return 1.0
        if self.schedule == "abrupt":
            return 1.0 if position >= self.change_at else 0.0
        if total_batches <= 1:
            return 1.0
        return min(1.0, position / (total_batches - 1))


@dataclass
class TrialBatch:
    """A batch of trials: signals (B, C, T), labels (B,), trial ids (B,)."""

    signals: np.ndarray
    labels: np.ndarray
    trial_ids: np.ndarray

    def __post_init__(self) -> None:
        if self.signals.ndim != 3:
            raise DomainError(f"signals must be (B, C, T), got shape {self.signals.shape}")
        b = self.signals.shape[0]
        if self.labels.shape != (b,) or self.trial_ids.shape != (b,):
            raise DomainError(
                f"labels/trial_ids must both have shape ({b},), got "
                f"{self.labels.shape} and {self.trial_ids.shape}"
            )

    def __len__(self) -> int:
        return self.signals.shape[0]


@dataclass
class TrialDataset:
    """An in-memory trial collection with its class count."""

    signals: np.ndarray  # (N, C, T) float32
    labels: np.ndarray  # (N,) int64 in [0, K)
    trial_ids: np.ndarray  # (N,) int64, unique
    n_classes: int
    _validate: bool = field(default=True, repr=False)

    def __post_init__(self) -> None:
        self.signals = np.asarray(self.signals, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.trial_ids = np.asarray(self.trial_ids, dtype=np.int64)
        if not self._validate:
            return
        if self.signals.ndim != 3:
            raise DomainError(f"signals must be (N, C, T), got shape {self.signals.shape}")
        n = self.signals.shape[0]
        if self.labels.shape != (n,) or self.trial_ids.shape != (n,):
            raise DomainError("labels and trial_ids must have one entry per trial")
        if not np.isfinite(self.signals).all():
            raise DomainError("signals contain non-finite values")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DomainError(
                f"labels must lie in [0, {self.n_classes}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )
        if len(np.unique(self.trial_ids)) != n:
            raise DomainError("trial_ids must be unique within a dataset")

    def __len__(self) -> int:
        return self.signals.shape[0]

    @property
    def channels(self) -> int:
        return self.signals.shape[1]

    @property
    def time_len(self) -> int:
        return self.signals.shape[2]

    def subset(self, indices: np.ndarray) -> "TrialDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return TrialDataset(
            self.signals[idx], self.labels[idx], self.trial_ids[idx], self.n_classes
        )

    def batches(self, batch_size: int, rng: np.random.Generator | None = None):
        """Yield TrialBatch objects; pass an rng to shuffle the order."""
        if batch_size < 1:
            raise DomainError(f"batch_size must be >= 1, got {batch_size}")
        order = np.arange(len(self))
        if rng is not None:
            rng.shuffle(order)
        for start in range(0, len(self), batch_size):
            idx = order[start : start + batch_size]
            yield TrialBatch(self.signals[idx], self.labels[idx], self.trial_ids[idx])


def _zscore_per_channel(trial: np.ndarray) -> np.ndarray:
    """Standardize each channel of one (C, T) trial over time."""
    mean = trial.mean(axis=1, keepdims=True)
    sd = trial.std(axis=1, keepdims=True)
    return (trial - mean) / np.maximum(sd, 1e-8)


def generate(spec: SynthSpec, n_trials: int) -> TrialDataset:
    """Generate ``n_trials`` class-balanced trials from a spec.

    Trial ``i`` carries label ``i % K``, so classes stay balanced within
    one trial.  Content is portable and stable: each trial's noise comes
    from its own ``SeedSequence([spec.seed, trial_id])`` stream.
    """
    if n_trials < spec.n_classes:
        raise DomainError(
            f"need at least one trial per class: n_trials={n_trials} < K={spec.n_classes}"
        )
    templates = spec.class_templates()
    signals = np.empty((n_trials, spec.channels, spec.time_len), dtype=np.float32)
    labels = np.empty(n_trials, dtype=np.int64)
    for i in range(n_trials):
        label = i % spec.n_classes
        trial = templates[label]
        if spec.noise_sd > 0:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, i])))
            trial = trial + spec.noise_sd * rng.standard_normal(trial.shape)
        signals[i] = _zscore_per_channel(trial).astype(np.float32)
        labels[i] = label
    return TrialDataset(signals, labels, np.arange(n_trials, dtype=np.int64), spec.n_classes)


def apply_shift(
    batch: TrialBatch,
    shift: ShiftSpec,
    position: int = 0,
    total_batches: int = 1,
    rng: np.random.Generator | None = None,
) -> TrialBatch:
    """Return a shifted copy of a batch; labels and ids are untouched.

    The transform is ``gain * signals + offset + noise`` with the deviation
    from identity scaled by the schedule strength at ``position``.  A zero
    strength or identity spec returns the signals bit-for-bit.
    """
    strength = shift.strength(position, total_batches)
    if strength == 0.0 or shift.is_identity():
        return TrialBatch(batch.signals.copy(), batch.labels.copy(), batch.trial_ids.copy())
    c = batch.signals.shape[1]
    gain = np.broadcast_to(np.asarray(shift.gain, dtype=np.float32), (c,))
    offset = np.broadcast_to(np.asarray(shift.offset, dtype=np.float32), (c,))
    eff_gain = (1.0 + strength * (gain.astype(np.float64) - 1.0)).astype(np.float32)
    eff_offset = (strength * offset.astype(np.float64)).astype(np.float32)
    out = batch.signals * eff_gain[None, :, None] + eff_offset[None, :, None]
    eff_sd = strength * shift.noise_sd
    if eff_sd > 0:
        if rng is None:
            raise DomainError("a shift with extra noise requires an rng for determinism")
        out = out + (eff_sd * rng.standard_normal(out.shape)).astype(np.float32)
    return TrialBatch(out.astype(np.float32), batch.labels.copy(), batch.trial_ids.copy())


def split(
    dataset: TrialDataset,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[TrialDataset, TrialDataset, TrialDataset]:
    """Label-stratified, seed-deterministic train/val/test partition."""
    fracs = [float(f) for f in fractions]
    if len(fracs) != 3 or any(f < 0 for f in fracs):
        raise DomainError(f"fractions must be three non-negative numbers, got {fractions}")
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise DomainError(f"fractions must sum to 1, got {sum(fracs)}")
    parts: list[list[np.ndarray]] = [[], [], []]
    for k in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == k)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, k])))
        rng.shuffle(idx)
        n = len(idx)
        # Largest-remainder allocation keeps per-class counts within one
        # trial of proportional while using every trial exactly once.
        raw = [f * n for f in fracs]
        counts = [int(np.floor(r)) for r in raw]
        remainders = sorted(range(3), key=lambda j: raw[j] - counts[j], reverse=True)
        for j in remainders[: n - sum(counts)]:
            counts[j] += 1
        start = 0
        for part, count in zip(parts, counts):
            part.append(idx[start : start + count])
            start += count
    out = []
    for part in parts:
        merged = np.sort(np.concatenate(part)) if part else np.empty(0, dtype=np.int64)
        out.append(dataset.subset(merged))
    return out[0], out[1], out[2]


def write_trials(path, dataset: TrialDataset) -> None:
    """Write a dataset in the NTRL container format."""
    n, c, t = dataset.signals.shape
    blob = bytearray()
    blob += _HEADER.pack(_MAGIC, _VERSION, n, c, t, dataset.n_classes)
    for i in range(n):
        blob += _RECORD_HEAD.pack(int(dataset.trial_ids[i]), int(dataset.labels[i]))
        blob += dataset.signals[i].astype("<f4", copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def read_trials(path) -> TrialDataset:
    """Read an NTRL file; any structural defect reports its byte offset."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise DataFormatError(
            f"truncated header: file has {len(blob)} bytes, need {_HEADER.size} (byte offset 0)"
        )
    magic, version, n, c, t, k = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise DataFormatError(f"bad magic {magic!r}, expected {_MAGIC!r} (byte offset 0)")
    if version != _VERSION:
        raise DataFormatError(f"unsupported version {version}, expected {_VERSION} (byte offset 4)")
    if k < 2 or c < 1 or t < 1:
        raise DataFormatError(
            f"implausible header fields n_trials={n} C={c} T={t} K={k} (byte offset 6)"
        )
    record_size = _RECORD_HEAD.size + 4 * c * t
    expected = _HEADER.size + n * record_size
    if len(blob) != expected:
        raise DataFormatError(
            f"payload length mismatch: header declares {n} trials of {record_size} bytes "
            f"({expected} total), file has {len(blob)} bytes (byte offset {min(len(blob), expected)})"
        )
    signals = np.empty((n, c, t), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    trial_ids = np.empty(n, dtype=np.int64)
    offset = _HEADER.size
    for i in range(n):
        trial_id, label = _RECORD_HEAD.unpack_from(blob, offset)
        if label >= k:
            raise DataFormatError(
                f"trial {trial_id}: label {label} outside [0, {k}) (byte offset {offset + 4})"
            )
        payload = np.frombuffer(
            blob, dtype="<f4", count=c * t, offset=offset + _RECORD_HEAD.size
        )
        if not np.isfinite(payload).all():
            raise DataFormatError(
                f"trial {trial_id}: non-finite sample (byte offset {offset + _RECORD_HEAD.size})"
            )
        signals[i] = payload.reshape(c, t)
        labels[i] = label
        trial_ids[i] = trial_id
        offset += record_size
    if len(np.unique(trial_ids)) != n:
        raise DataFormatError(f"duplicate trial ids in file (byte offset {_HEADER.size})")
    return TrialDataset(signals, labels, trial_ids, int(k))

"""Deterministic, seedable disturbance and attack generators.

Every generator is a pure function of ``(spec, seed, t)`` and accepts scalar or
array time arguments, so the integrators can pre-sample all RK4 stage times
in one call.

Kinds
-----
zero
    Identically zero.
decaying_sinusoid
    ``a * exp(-decay*tau) * sin(w*tau + phase)`` with ``tau = t - onset``.
windowed_noise
    Seeded Gaussian values held constant on buckets of width ``bucket``,
    non-zero only on ``[onset, onset + window)`` and optionally multiplied
    by ``exp(-decay*tau)``.
bias_step
    ``a * (1 - exp(-decay*tau))`` for ``tau >= 0``; a plain step when
    ``decay`` is omitted.  This is a constant plus an exponentially decaying
    transient, i.e. a trackable biasing input.
pulse
    ``a`` on ``[onset, onset + window)``.

New kinds are added by extending ``KINDS`` and ``_EVALUATORS``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DomainError

KINDS = ("zero", "decaying_sinusoid", "windowed_noise", "bias_step", "pulse")
ATTACK_KINDS = ("zero", "bias_step", "pulse", "decaying_sinusoid")


@dataclass(frozen=True)
class SignalSpec:
    kind: str = "zero"
    dim: int = 1
    amplitude: tuple[float, ...] = (1.0,)
    frequency: float = 0.0
    decay: float | None = None
    onset: float = 0.0
    window: float | None = None
    phase: float = 0.0
    bucket: float = 0.01
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown signal kind {self.kind!r}; expected one of {KINDS}")
        amp = tuple(float(a) for a in np.atleast_1d(self.amplitude))
        if len(amp) == 1 and self.dim > 1:
            amp = amp * self.dim
        if len(amp) != self.dim:
            raise ConfigError(f"amplitude has {len(amp)} entries, channel dimension is {self.dim}")
        object.__setattr__(self, "amplitude", amp)
        if self.bucket <= 0:
            raise ConfigError("bucket width must be positive")
        if self.kind in ("windowed_noise", "pulse") and (self.window is None or self.window <= 0):
            raise ConfigError(f"{self.kind} needs a finite positive window")

    @property
    def is_l2(self) -> bool:
        """Whether the generated path has finite energy on [0, inf)."""
        if self.kind == "zero":
            return True
        if self.kind in ("windowed_noise", "pulse"):
            return True
        if self.kind == "decaying_sinusoid":
            return (self.decay is not None and self.decay > 0) or self.window is not None
        return all(a == 0.0 for a in self.amplitude)

    def scaled(self, factor: float) -> SignalSpec:
        return replace(self, amplitude=tuple(factor * a for a in self.amplitude))


def channel_seed(base_seed: int, label: str) -> int:
    """Seed for a noise channel that has no explicit seed of its own."""
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFF, zlib.crc32(label.encode())])
    return int(ss.generate_state(1)[0])


@lru_cache(maxsize=256)
def _noise_table(seed: int, n_buckets: int, dim: int) -> np.ndarray:
    table = np.random.default_rng(seed).standard_normal((n_buckets, dim))
    table.setflags(write=False)
    return table


def _tau(spec: SignalSpec, t: np.ndarray) -> np.ndarray:
    return t - spec.onset


def _zero(spec, t, seed):
    return np.zeros((t.size, spec.dim))


def _decaying_sinusoid(spec, t, seed):
    tau = _tau(spec, t)
    env = np.exp(-(spec.decay or 0.0) * np.maximum(tau, 0.0))
    val = env * np.sin(spec.frequency * tau + spec.phase)
    active = tau >= 0
    if spec.window is not None:
        active &= tau < spec.window
    return np.where(active, val, 0.0)[:, None] * np.asarray(spec.amplitude)


def _windowed_noise(spec, t, seed):
    if seed is None:
        raise ConfigError("windowed_noise needs a seed")
    n_buckets = int(np.ceil(spec.window / spec.bucket))
    table = _noise_table(int(seed), n_buckets, spec.dim)
    tau = _tau(spec, t)
    active = (tau >= 0) & (tau < spec.window)
    idx = np.clip(np.floor(tau / spec.bucket).astype(np.int64), 0, n_buckets - 1)
    out = table[idx] * np.asarray(spec.amplitude)
    if spec.decay:
        out = out * np.exp(-spec.decay * np.maximum(tau, 0.0))[:, None]
    return np.where(active[:, None], out, 0.0)


def _bias_step(spec, t, seed):
    tau = _tau(spec, t)
    if spec.decay:
        shape = -np.expm1(-spec.decay * np.maximum(tau, 0.0))
    else:
        shape = np.ones_like(tau)
    return np.where(tau >= 0, shape, 0.0)[:, None] * np.asarray(spec.amplitude)


def _pulse(spec, t, seed):
    tau = _tau(spec, t)
    active = (tau >= 0) & (tau < spec.window)
    return active.astype(float)[:, None] * np.asarray(spec.amplitude)


_EVALUATORS = {
    "zero": _zero,
    "decaying_sinusoid": _decaying_sinusoid,
    "windowed_noise": _windowed_noise,
    "bias_step": _bias_step,
    "pulse": _pulse,
}


def sample(spec: SignalSpec, t, seed: int | None = None) -> np.ndarray:
    """Evaluate ``spec`` at time(s) ``t``.

    Returns a ``(dim,)`` vector for scalar ``t`` and a ``(len(t), dim)``
    array otherwise.  ``seed`` is used only by noise kinds; ``spec.seed``
    takes precedence when set.
    """
    scalar = np.ndim(t) == 0
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times < 0):
        raise DomainError("signals are defined for t >= 0 only")
    evaluator = _EVALUATORS.get(spec.kind)
    if evaluator is None:
        raise ConfigError(f"unknown signal kind {spec.kind!r}")
    out = evaluator(spec, times, spec.seed if spec.seed is not None else seed)
    return out[0] if scalar else out


def l2_norm_truncated(samples, h: float) -> float:
    """Trapezoidal estimate of ``(int_0^T ||z||^2 dt)^(1/2)`` on a uniform grid."""
    z = np.asarray(samples, dtype=float)
    if z.size == 0 or z.shape[0] == 0:
        raise DomainError("empty series")
    if h <= 0:
        raise DomainError("step must be positive")
    sq = z**2 if z.ndim == 1 else np.sum(z.reshape(z.shape[0], -1) ** 2, axis=1)
    if sq.shape[0] == 1:
        return 0.0
    return float(np.sqrt(np.trapezoid(sq, dx=h)))

"""Multipath channel, received power/rate, and the exhaustive-search beam oracle.

The channel vector is a sum over Z paths of complex gains times the array
response at the path azimuth.  The ULA response depends only on azimuth, so
elevation is absorbed into the effective gain as a cos(elevation) factor.

Rates use the deterministic SNR form (P_sym / noise_var) * |<h, x>|^2 averaged
over subcarriers; additive noise is realized only by the optional demo helper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codebook import Codebook, CodebookConfig, steering_vector


class ChannelError(ValueError):
    """Invalid channel state or query."""


@dataclass(frozen=True)
class PathComponent:
    gain: complex
    azimuth: float
    elevation: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.gain.real) and math.isfinite(self.gain.imag)):
            raise ChannelError(f"path gain must be finite, got {self.gain}")


@dataclass(frozen=True)
class ChannelState:
    """Paths plus the subcarrier layout.

    Subcarrier 0 is the unperturbed path sum; higher subcarriers rotate each
    path's phase by a deterministic seeded offset so the subcarrier average
    stays meaningful without inventing wideband physics.
    """

    paths: tuple[PathComponent, ...]
    num_subcarriers: int = 1
    seed: int = 0

    def __post_init__(self):
        if len(self.paths) == 0:
            raise ChannelError("channel needs at least one path")
        if self.num_subcarriers < 1:
            raise ChannelError(f"num_subcarriers must be >= 1, got {self.num_subcarriers}")


@dataclass(frozen=True)
class RadioParams:
    symbol_power: float
    noise_variance: float

    def __post_init__(self):
        if not self.symbol_power > 0:
            raise ChannelError(f"symbol_power must be > 0, got {self.symbol_power}")
        if not self.noise_variance > 0:
            raise ChannelError(f"noise_variance must be > 0, got {self.noise_variance}")

    @property
    def snr(self) -> float:
        return self.symbol_power / self.noise_variance


def _subcarrier_phases(state: ChannelState, w: int) -> np.ndarray:
    """Per-path phase offsets for subcarrier w (all zero for w = 0)."""
    if w == 0:
        return np.zeros(len(state.paths))
    rng = np.random.default_rng([state.seed, w])
    return rng.uniform(0.0, 2.0 * math.pi, len(state.paths))


def channel_vector(state: ChannelState, array: CodebookConfig, w: int = 0) -> np.ndarray:
    """Channel vector h on subcarrier w: sum of gain * steering(azimuth) over paths."""
    if not (0 <= w < state.num_subcarriers):
        raise ChannelError(f"subcarrier {w} out of range [0, {state.num_subcarriers})")
    phases = _subcarrier_phases(state, w)
    h = np.zeros(array.num_antennas, dtype=np.complex128)
    for path, phi in zip(state.paths, phases):
        effective_gain = path.gain * math.cos(path.elevation) * np.exp(1j * phi)
        h += effective_gain * steering_vector(array, path.azimuth)
    return h


def received_power(h: np.ndarray, beam_elements: np.ndarray, radio: RadioParams) -> float:
    """Per-subcarrier SNR term: (P_sym / noise_var) * |<h, x>|^2.

    Conjugate inner product convention: <h, x> = sum_k conj(h_k) x_k.
    """
    if h.shape != beam_elements.shape:
        raise ChannelError(f"dimension mismatch: h {h.shape} vs beam {beam_elements.shape}")
    inner = np.vdot(h, beam_elements)
    return radio.snr * float(abs(inner)) ** 2


def average_rate(state: ChannelState, array: CodebookConfig, beam_elements: np.ndarray,
                 radio: RadioParams) -> float:
    """Mean of received_power over the subcarriers."""
    total = 0.0
    for q in range(state.num_subcarriers):
        total += received_power(channel_vector(state, array, q), beam_elements, radio)
    return total / state.num_subcarriers


def beam_rates(state: ChannelState, codebook: Codebook, radio: RadioParams) -> np.ndarray:
    """Average rate of every beam in the codebook (vectorized sweep)."""
    array = codebook.config
    acc = np.zeros(len(codebook))
    for q in range(state.num_subcarriers):
        h = channel_vector(state, array, q)
        acc += radio.snr * np.abs(h.conj() @ codebook.matrix) ** 2
    return acc / state.num_subcarriers


def optimal_beam(state: ChannelState, codebook: Codebook, radio: RadioParams) -> tuple[int, float]:
    """Exhaustive-search oracle: (argmax beam index, achieved rate).

    Ties break toward the lower index (argmax already does).
    """
    if len(codebook) == 0:
        raise ChannelError("codebook is empty")
    rates = beam_rates(state, codebook, radio)
    idx = int(np.argmax(rates))
    return idx, float(rates[idx])


def awgn_sample(h: np.ndarray, beam_elements: np.ndarray, radio: RadioParams,
                rng: np.random.Generator) -> complex:
    """Demo-only received-signal draw with complex Gaussian noise (unit symbol)."""
    sigma = math.sqrt(radio.noise_variance / 2.0)
    noise = rng.normal(0.0, sigma) + 1j * rng.normal(0.0, sigma)
    return complex(np.vdot(h, beam_elements) * math.sqrt(radio.symbol_power) + noise)


def line_of_sight(azimuth: float, gain: complex = 1.0 + 0.0j,
                  num_subcarriers: int = 1, seed: int = 0) -> ChannelState:
    """Single-path channel at the given azimuth (the frame-label channel)."""
    return ChannelState(paths=(PathComponent(gain=gain, azimuth=azimuth),),
                        num_subcarriers=num_subcarriers, seed=seed)

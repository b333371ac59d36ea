"""Analog beamforming codebook for a uniform linear array.

Beam i applies the phase progression

    x_i[k] = (1/sqrt(K)) * exp(j * k * (2*pi/wavelength) * spacing * sin(rho_i))

across the K antenna elements, where rho_i is the i-th of N quantized
azimuth angles.  Quantized angles are cell-centered over the configured
azimuth range, which keeps them strictly inside (-pi/2, pi/2) and avoids
endpoint aliasing of the sin() response.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

HALF_PI = math.pi / 2.0


class CodebookError(ValueError):
    """Invalid codebook configuration or query."""


@dataclass(frozen=True)
class CodebookConfig:
    """Array geometry and beam grid.

    num_antennas:  K, elements in the ULA.
    num_beams:     N, quantized beams in the codebook.
    spacing:       inter-element spacing in meters.
    wavelength:    carrier wavelength in meters.
    azimuth_range: (lo, hi) radians; must sit inside [-pi/2, pi/2].
    """

    num_antennas: int
    num_beams: int
    spacing: float
    wavelength: float
    azimuth_range: tuple[float, float] = (-HALF_PI, HALF_PI)

    def __post_init__(self):
        if self.num_antennas < 1:
            raise CodebookError(f"num_antennas must be >= 1, got {self.num_antennas}")
        if self.num_beams < 1:
            raise CodebookError(f"num_beams must be >= 1, got {self.num_beams}")
        if not self.spacing > 0:
            raise CodebookError(f"spacing must be > 0, got {self.spacing}")
        if not self.wavelength > 0:
            raise CodebookError(f"wavelength must be > 0, got {self.wavelength}")
        lo, hi = self.azimuth_range
        if not (-HALF_PI <= lo < hi <= HALF_PI):
            raise CodebookError(
                f"azimuth_range must be an interval inside [-pi/2, pi/2], got {self.azimuth_range}"
            )

    @classmethod
    def half_wavelength(cls, num_antennas, num_beams, wavelength,
                        azimuth_range=(-HALF_PI, HALF_PI)):
        """Standard half-wavelength ULA spacing."""
        return cls(num_antennas, num_beams, wavelength / 2.0, wavelength, azimuth_range)


@dataclass(frozen=True)
class BeamformingVector:
    index: int
    elements: np.ndarray        # shape (K,), complex128, unit norm
    azimuth: float

    def __post_init__(self):
        self.elements.flags.writeable = False


@dataclass(frozen=True)
class Codebook:
    config: CodebookConfig
    beams: tuple[BeamformingVector, ...]
    # K x N matrix with beam i in column i, for vectorized sweeps
    matrix: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.matrix is None:
            mat = np.column_stack([b.elements for b in self.beams])
            mat.flags.writeable = False
            object.__setattr__(self, "matrix", mat)

    def __len__(self):
        return len(self.beams)

    def __getitem__(self, i) -> BeamformingVector:
        return self.beams[i]


def quantized_azimuths(config: CodebookConfig) -> np.ndarray:
    """Cell-centered uniform grid of N angles over the azimuth range."""
    lo, hi = config.azimuth_range
    n = config.num_beams
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def steering_vector(config: CodebookConfig, azimuth: float) -> np.ndarray:
    """Unit-norm ULA response at an arbitrary azimuth.

    Same phase law as the codebook entries; the channel model evaluates it
    at path azimuths.
    """
    lo, hi = config.azimuth_range
    if not (lo <= azimuth <= hi):
        raise CodebookError(f"azimuth {azimuth} outside range [{lo}, {hi}]")
    k = np.arange(config.num_antennas)
    phase = k * (2.0 * math.pi / config.wavelength) * config.spacing * math.sin(azimuth)
    return np.exp(1j * phase) / math.sqrt(config.num_antennas)


def generate_codebook(config: CodebookConfig) -> Codebook:
    azimuths = quantized_azimuths(config)
    beams = tuple(
        BeamformingVector(index=i, elements=steering_vector(config, float(az)), azimuth=float(az))
        for i, az in enumerate(azimuths)
    )
    return Codebook(config=config, beams=beams)


def to_json(codebook: Codebook) -> str:
    """Serialize to JSON with bit-exact doubles.

    Element arrays are stored interleaved [re0, im0, re1, im1, ...].  Python's
    repr-based float formatting guarantees exact decimal->binary round trips.
    """
    doc = {
        "config": {
            "num_antennas": codebook.config.num_antennas,
            "num_beams": codebook.config.num_beams,
            "spacing": codebook.config.spacing,
            "wavelength": codebook.config.wavelength,
            "azimuth_range": list(codebook.config.azimuth_range),
        },
        "beams": [
            {
                "index": b.index,
                "azimuth": b.azimuth,
                "elements": [x for c in b.elements for x in (c.real, c.imag)],
            }
            for b in codebook.beams
        ],
    }
    return json.dumps(doc, sort_keys=True)


def from_json(text: str) -> Codebook:
    doc = json.loads(text)
    cfg = doc["config"]
    config = CodebookConfig(
        num_antennas=cfg["num_antennas"],
        num_beams=cfg["num_beams"],
        spacing=cfg["spacing"],
        wavelength=cfg["wavelength"],
        azimuth_range=tuple(cfg["azimuth_range"]),
    )
    beams = []
    for b in doc["beams"]:
        flat = np.asarray(b["elements"], dtype=np.float64)
        elements = flat[0::2] + 1j * flat[1::2]
        beams.append(BeamformingVector(index=b["index"], elements=elements, azimuth=b["azimuth"]))
    return Codebook(config=config, beams=tuple(beams))

"""Compton kinematics and per-scan physical constants."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

ELECTRON_REST_ENERGY = 0.511  # MeV
CLASSICAL_ELECTRON_RADIUS = 2.8179403262e-13  # cm
WATER_ELECTRON_DENSITY = 3.343e23  # electrons per cm^3


def scattered_energy(energy: float, omega: float, e0: float = ELECTRON_REST_ENERGY) -> float:
    """Energy (MeV) of a photon of energy ``energy`` after Compton scattering by ``omega``."""
    if energy <= 0:
        raise ValueError("photon energy must be positive")
    if not 0.0 <= omega <= math.pi:
        raise ValueError(f"scattering angle must lie in [0, pi], got {omega}")
    return energy / (1.0 + (energy / e0) * (1.0 - math.cos(omega)))


def klein_nishina(energy: float, omega: float, e0: float = ELECTRON_REST_ENERGY) -> float:
    """Klein-Nishina differential cross-section per electron, cm^2/sr.

    ``r_e^2 / 2 * P^2 * (P + 1/P - sin^2 omega)`` with ``P = E_s / E``.
    """
    p = scattered_energy(energy, omega, e0) / energy
    return 0.5 * CLASSICAL_ELECTRON_RADIUS ** 2 * p * p * (p + 1.0 / p - math.sin(omega) ** 2)


def klein_nishina_total(energy: float, e0: float = ELECTRON_REST_ENERGY) -> float:
    """Klein-Nishina cross-section per electron integrated over all angles, cm^2."""
    if energy <= 0:
        raise ValueError("photon energy must be positive")
    k = energy / e0
    L = math.log1p(2 * k)
    return 2 * math.pi * CLASSICAL_ELECTRON_RADIUS ** 2 * (
        (1 + k) / k ** 2 * (2 * (1 + k) / (1 + 2 * k) - L / k)
        + L / (2 * k) - (1 + 3 * k) / (1 + 2 * k) ** 2)


@dataclass(frozen=True)
class PhysicsParams:
    energy: float = 1.17
    e0: float = ELECTRON_REST_ENERGY
    psi: float = math.pi / 4
    a: float = 1.0
    b: float = 1.0
    i0: float = 1.0
    lambda_mode: str = "constant"
    lambda_value: float = 1.0

    def __post_init__(self):
        if self.energy <= 0 or self.e0 <= 0:
            raise ValueError("energies must be positive")
        if not 0.0 < 2 * self.psi < math.pi:
            raise ValueError("opening angle 2*psi must lie in (0, pi)")
        # forward scattering only: omega = pi - 2 psi <= pi/2
        if self.omega > math.pi / 2 + 1e-12:
            raise ValueError(f"psi must be >= pi/4 (forward scattering), got {self.psi}")
        # a = b = 0 is accepted as the attenuation-free (linear) limit
        if self.a < 0 or self.b < 0:
            raise ValueError("attenuation weights a, b must be non-negative")
        if self.lambda_mode not in ("constant", "klein_nishina"):
            raise ValueError(f"unknown lambda mode {self.lambda_mode!r}")
        if self.lambda_mode == "constant" and self.lambda_value <= 0:
            raise ValueError("constant lambda must be positive")
        if self.i0 <= 0:
            raise ValueError("source intensity must be positive")

    @property
    def omega(self) -> float:
        return math.pi - 2.0 * self.psi

    @property
    def scattered_energy(self) -> float:
        return scattered_energy(self.energy, self.omega, self.e0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhysicsParams":
        return cls(**d)

    @classmethod
    def water(cls, energy: float = 1.17, psi: float = math.pi / 4, unit_cm: float = 25.0,
              e0: float = ELECTRON_REST_ENERGY, **kw) -> "PhysicsParams":
        """Attenuation weights for a density given relative to water.

        Above about 100 keV in low-Z matter the attenuation per electron is the
        total Compton cross-section, so ``a`` and ``b`` are the Klein-Nishina
        totals at ``E`` and ``E_s`` times the electron density of water, per
        ``unit_cm`` centimetres of length.
        """
        es = scattered_energy(energy, math.pi - 2 * psi, e0)
        scale = WATER_ELECTRON_DENSITY * unit_cm
        return cls(energy=energy, e0=e0, psi=psi, a=klein_nishina_total(energy, e0) * scale,
                   b=klein_nishina_total(es, e0) * scale, **kw)


def lambda_weight(params: PhysicsParams) -> float:
    """Scan-constant intensity factor: the configured constant, or ``I0 * dsigma/dOmega``."""
    if params.lambda_mode == "constant":
        return float(params.lambda_value)
    return params.i0 * klein_nishina(params.energy, params.omega, params.e0)

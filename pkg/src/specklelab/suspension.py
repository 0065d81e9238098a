"""Polydisperse particle suspensions and Brownian dynamics in a thin cuvette.

All quantities are SI (meters, seconds, kelvin, Pa*s). A suspension is a
set of particle populations (e.g. large mobile droplets, a fine mobile
background, immobile scatterers on the glass) confined to a thin
cylindrical volume. Mobile particles perform free Brownian motion with
the Stokes-Einstein diffusion coefficient

    D = k_B * T / (6 * pi * eta * r)

with reflective axial boundaries (the cuvette windows) and periodic
lateral boundaries over the bounding square of the illuminated cylinder.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import Boltzmann as KB

from .errors import ConfigError, DataError

__all__ = [
    "ParticlePopulation",
    "SuspensionSample",
    "ScattererState",
    "number_density_from_mass_fraction",
    "lognormal_radius_moment",
    "sample_radii",
    "sample_scatterers",
    "diffusion_coefficient",
    "step_brownian",
    "concat_states",
]

# Amplitude reference radius: |amplitude| = (r / 1 um) ** exponent, so
# populations with different size scales stay on one common scale.
_AMPLITUDE_REF_RADIUS = 1e-6


@dataclass(frozen=True)
class ParticlePopulation:
    """One species of scatterers with a lognormal radius law.

    ``radius_band`` truncates the lognormal by rejection (both bounds in
    meters); immobile populations model static speckle from glass
    imperfections and never move.
    """

    species_name: str
    median_radius: float
    geometric_sigma: float
    number_density: float
    scattering_strength_exponent: float = 3.0
    mobile: bool = True
    radius_band: tuple[float, float] | None = None

    def __post_init__(self):
        if self.median_radius <= 0:
            raise ConfigError(f"{self.species_name}: median_radius must be > 0")
        if self.geometric_sigma < 1.0:
            raise ConfigError(f"{self.species_name}: geometric_sigma must be >= 1")
        if self.number_density < 0:
            raise ConfigError(f"{self.species_name}: number_density must be >= 0")
        if self.radius_band is not None:
            lo, hi = self.radius_band
            if not (0 < lo < hi):
                raise ConfigError(f"{self.species_name}: invalid radius_band {self.radius_band}")


@dataclass(frozen=True)
class SuspensionSample:
    """A loaded cuvette: particle populations, medium, geometry, label.

    Defaults follow a thin-film transmission geometry: a 50 um spacer and
    a laboratory at 21 C (294.15 K). ``max_particles_per_population``
    caps the rendered particle count at desk scale; the physical volume
    holds far more, but speckle statistics converge long before that.
    """

    populations: list[ParticlePopulation]
    temperature: float = 294.15
    viscosity: float = 9.78e-4
    cuvette_thickness: float = 50e-6
    illuminated_diameter: float = 1.7e-3
    class_label: str = ""
    lot_id: str = ""
    seed: int = 0
    max_particles_per_population: int = 50_000

    def __post_init__(self):
        if self.temperature <= 0 or self.viscosity <= 0:
            raise ConfigError("temperature and viscosity must be > 0")
        if self.cuvette_thickness <= 0 or self.illuminated_diameter <= 0:
            raise ConfigError("cuvette geometry must be positive")

    @property
    def illuminated_volume(self) -> float:
        return math.pi * (self.illuminated_diameter / 2) ** 2 * self.cuvette_thickness


@dataclass
class ScattererState:
    """Microscopic state of all scatterers at one instant.

    positions: (n, 3) with x, y lateral in [-half_width, half_width) and
    z axial in [0, thickness]; amplitudes are complex with a fixed random
    phase per particle.
    """

    positions: np.ndarray
    radii: np.ndarray
    amplitudes: np.ndarray
    mobility: np.ndarray
    time: float
    thickness: float
    half_width: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.radii)
        if not (len(self.positions) == len(self.amplitudes) == len(self.mobility) == n):
            raise DataError("scatterer arrays must have equal length")
        if n and (self.positions[:, 2].min() < 0 or self.positions[:, 2].max() > self.thickness):
            raise DataError("axial coordinates outside [0, thickness]")

    def __len__(self) -> int:
        return len(self.radii)


def lognormal_radius_moment(
    median_radius: float,
    geometric_sigma: float,
    order: int,
    radius_band: tuple[float, float] | None = None,
) -> float:
    """Analytic k-th raw moment of a (possibly truncated) lognormal radius law.

    For ln r ~ N(mu, sigma^2) with median e^mu the untruncated moment is
    exp(k*mu + k^2 sigma^2 / 2); truncation to [a, b] rescales by the
    usual ratio of shifted normal CDFs.
    """
    if median_radius <= 0:
        raise ConfigError("degenerate radius law: median_radius must be > 0")
    mu = math.log(median_radius)
    sigma = math.log(geometric_sigma)
    if sigma == 0.0:
        r = median_radius
        if radius_band is not None and not (radius_band[0] <= r <= radius_band[1]):
            raise ConfigError("monodisperse radius lies outside radius_band")
        return r**order
    raw = math.exp(order * mu + 0.5 * order**2 * sigma**2)
    if radius_band is None:
        return raw

    def phi(x: float) -> float:
        return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))

    a, b = radius_band
    za, zb = (math.log(a) - mu) / sigma, (math.log(b) - mu) / sigma
    denom = phi(zb) - phi(za)
    if denom <= 0:
        raise ConfigError("radius_band excludes essentially all mass")
    num = phi(zb - order * sigma) - phi(za - order * sigma)
    return raw * num / denom


def number_density_from_mass_fraction(
    mass_fraction: float,
    fat_density: float,
    milk_density: float,
    median_radius: float,
    geometric_sigma: float,
    radius_band: tuple[float, float] | None = None,
) -> float:
    """Particles per m^3 needed to realize a dispersed-phase weight percent.

    n = (wt% / 100 * suspension_density) / (particle_density * <(4/3) pi r^3>)
    where the third moment is the analytic moment of the radius law.
    """
    if mass_fraction < 0:
        raise ConfigError("mass_fraction must be >= 0")
    if fat_density <= 0 or milk_density <= 0:
        raise ConfigError("densities must be > 0")
    if mass_fraction == 0:
        return 0.0
    mean_volume = 4.0 / 3.0 * math.pi * lognormal_radius_moment(
        median_radius, geometric_sigma, 3, radius_band
    )
    return (mass_fraction / 100.0 * milk_density) / (fat_density * mean_volume)


def sample_radii(population: ParticlePopulation, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n radii from the population's truncated lognormal law.

    Out-of-band draws are rejected and resampled so the empirical CDF
    matches the truncated law, not a clipped one.
    """
    mu = math.log(population.median_radius)
    sigma = math.log(population.geometric_sigma)
    if sigma == 0.0:
        return np.full(n, population.median_radius)
    radii = rng.lognormal(mu, sigma, size=n)
    if population.radius_band is not None:
        lo, hi = population.radius_band
        bad = (radii < lo) | (radii > hi)
        guard = 0
        while bad.any():
            radii[bad] = rng.lognormal(mu, sigma, size=int(bad.sum()))
            bad = (radii < lo) | (radii > hi)
            guard += 1
            if guard > 10_000:
                raise ConfigError("radius_band rejection sampling failed to converge")
    return radii


def sample_scatterers(
    sample: SuspensionSample,
    rng_seed: int | np.random.Generator,
    subset: str = "all",
) -> ScattererState:
    """Draw an initial scatterer state for the illuminated cylinder.

    ``subset`` selects "all", "mobile" or "static" populations; the
    static subset is what a fixed location's glass background looks like.
    Counts above the cap are truncated with a warning in the metadata.
    """
    if subset not in ("all", "mobile", "static"):
        raise ConfigError(f"unknown subset {subset!r}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(int(rng_seed))

    volume = sample.illuminated_volume
    if not math.isfinite(volume):
        raise ConfigError("illuminated volume is not finite")
    radius = sample.illuminated_diameter / 2

    pos, rad, amp, mob = [], [], [], []
    counts: dict[str, int] = {}
    warnings: list[str] = []
    for pop in sample.populations:
        if subset == "mobile" and not pop.mobile:
            continue
        if subset == "static" and pop.mobile:
            continue
        n = int(round(pop.number_density * volume))
        if n > sample.max_particles_per_population:
            warnings.append(
                f"{pop.species_name}: count {n} capped to {sample.max_particles_per_population}"
            )
            n = sample.max_particles_per_population
        counts[pop.species_name] = n
        if n == 0:
            continue
        r_disk = radius * np.sqrt(rng.uniform(0, 1, n))
        theta = rng.uniform(0, 2 * math.pi, n)
        z = rng.uniform(0, sample.cuvette_thickness, n)
        pos.append(np.column_stack([r_disk * np.cos(theta), r_disk * np.sin(theta), z]))
        radii = sample_radii(pop, n, rng)
        rad.append(radii)
        magnitude = (radii / _AMPLITUDE_REF_RADIUS) ** pop.scattering_strength_exponent
        phase = rng.uniform(0, 2 * math.pi, n)
        amp.append(magnitude * np.exp(1j * phase))
        mob.append(np.full(n, pop.mobile))

    if pos:
        positions = np.concatenate(pos)
        radii = np.concatenate(rad)
        amplitudes = np.concatenate(amp)
        mobility = np.concatenate(mob)
    else:
        positions = np.zeros((0, 3))
        radii = np.zeros(0)
        amplitudes = np.zeros(0, dtype=complex)
        mobility = np.zeros(0, dtype=bool)

    return ScattererState(
        positions=positions,
        radii=radii,
        amplitudes=amplitudes,
        mobility=mobility,
        time=0.0,
        thickness=sample.cuvette_thickness,
        half_width=radius,
        metadata={"counts": counts, "warnings": warnings},
    )


def diffusion_coefficient(radius, temperature: float, viscosity: float):
    """Stokes-Einstein diffusion coefficient, elementwise over radius."""
    r = np.asarray(radius, dtype=float)
    if np.any(r <= 0):
        raise DataError("degenerate particle: radius must be > 0")
    if temperature < 0:
        raise DataError("temperature must be >= 0")
    if viscosity <= 0:
        raise DataError("viscosity must be > 0")
    d = KB * temperature / (6.0 * math.pi * viscosity * r)
    return float(d) if np.isscalar(radius) else d


def step_brownian(
    state: ScattererState,
    dt: float,
    temperature: float,
    viscosity: float,
    rng: np.random.Generator,
) -> ScattererState:
    """Advance the state by one Brownian step of duration dt.

    Mobile particles receive independent Gaussian displacements of
    per-axis variance 2*D(r)*dt; immobile particles keep their positions.
    Axial boundaries reflect, lateral boundaries wrap periodically over
    the bounding square of the illuminated cylinder. Pure with respect
    to the passed rng: a fresh state is returned.
    """
    if dt < 0:
        raise DataError("dt must be >= 0")
    positions = state.positions.copy()
    if dt > 0 and state.mobility.any():
        idx = np.flatnonzero(state.mobility)
        d = diffusion_coefficient(state.radii[idx], temperature, viscosity)
        sigma = np.sqrt(2.0 * d * dt)
        positions[idx] += sigma[:, None] * rng.standard_normal((idx.size, 3))

        # reflective fold in z over [0, thickness]
        t = state.thickness
        z = np.mod(positions[idx, 2], 2.0 * t)
        positions[idx, 2] = np.where(z > t, 2.0 * t - z, z)

        # periodic wrap in x, y over [-half_width, half_width)
        hw = state.half_width
        positions[idx, 0] = np.mod(positions[idx, 0] + hw, 2.0 * hw) - hw
        positions[idx, 1] = np.mod(positions[idx, 1] + hw, 2.0 * hw) - hw

    return dataclasses.replace(state, positions=positions, time=state.time + dt)


def concat_states(*states: ScattererState) -> ScattererState:
    """Merge states sharing the same geometry into one."""
    states = [s for s in states if len(s) > 0] or list(states[:1])
    first = states[0]
    for s in states[1:]:
        if s.thickness != first.thickness or s.half_width != first.half_width:
            raise DataError("cannot merge states with different geometry")
    meta: dict = {"counts": {}, "warnings": []}
    for s in states:
        meta["counts"].update(s.metadata.get("counts", {}))
        meta["warnings"].extend(s.metadata.get("warnings", []))
    return ScattererState(
        positions=np.concatenate([s.positions for s in states]),
        radii=np.concatenate([s.radii for s in states]),
        amplitudes=np.concatenate([s.amplitudes for s in states]),
        mobility=np.concatenate([s.mobility for s in states]),
        time=first.time,
        thickness=first.thickness,
        half_width=first.half_width,
        metadata=meta,
    )

"""Experiment configuration: TOML-backed, hand-editable, fully seeded.

One config file describes the whole lifecycle: suspension templates per
class, optics, exposure protocol tables, dataset counts, and training
options. All randomness derives from the single master seed, so a config
plus seed reproduces every artifact byte for byte.

The desk-scale defaults shrink the illuminated spot so the rendered
particle counts land in the hundreds-to-thousands per class. At that
scale the per-class globule size law (median radius and geometric
sigma) is what separates the classes in a single frame; the true
per-class size distributions of homogenized milk are not published, so
these are modeling choices, deliberately exposed here for editing.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .nn.training import TrainingConfig
from .optics import OpticalConfig
from .pipeline import DatasetCounts
from .protocols import ExposureProtocol
from .suspension import ParticlePopulation, SuspensionSample, number_density_from_mass_fraction

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ClassSpec", "BackgroundSpec", "SuspensionSpec", "DatasetSpec", "ExperimentConfig", "desk_config"]


@dataclass(frozen=True)
class ClassSpec:
    """Fat-globule population of one concentration class."""

    label: str
    mass_fraction: float
    median_radius: float
    geometric_sigma: float
    radius_band: tuple[float, float] = (0.5e-6, 5.0e-6)
    scattering_strength_exponent: float = 3.0


@dataclass(frozen=True)
class BackgroundSpec:
    """A population shared by every class (fine protein background, glass)."""

    name: str
    median_radius: float
    geometric_sigma: float
    number_density: float
    mobile: bool
    scattering_strength_exponent: float = 3.0


@dataclass(frozen=True)
class SuspensionSpec:
    temperature: float = 294.15
    viscosity: float = 9.78e-4
    fat_density: float = 920.0
    milk_density: float = 1030.0
    cuvette_thickness: float = 50e-6
    illuminated_diameter: float = 0.12e-3
    particle_cap: int = 50_000
    lot_jitter: float = 0.03


@dataclass(frozen=True)
class DatasetSpec:
    lots: int = 5
    versions: int = 2
    locations: int = 3
    frames_per_movie: int = 200
    background_window: int = 200
    background_mode: str = "blocked"
    protocol: str = "A"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs"
    optics: OpticalConfig = field(default_factory=OpticalConfig)
    suspension: SuspensionSpec = field(default_factory=SuspensionSpec)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    classes: tuple[ClassSpec, ...] = ()
    backgrounds: tuple[BackgroundSpec, ...] = ()
    protocols: dict = field(default_factory=dict)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def class_labels(self) -> tuple[str, ...]:
        return tuple(c.label for c in self.classes)

    def protocol(self, tag: str | None = None) -> ExposureProtocol:
        tag = tag or self.dataset.protocol
        if tag not in self.protocols:
            raise ConfigError(f"config has no exposure table for protocol {tag!r}")
        schedule = {
            label: [(float(e), int(n)) for e, n in entries]
            for label, entries in self.protocols[tag].items()
        }
        missing = [c for c in self.class_labels() if c not in schedule]
        if missing:
            raise ConfigError(f"protocol {tag} exposure table missing classes {missing}")
        return ExposureProtocol(tag=tag, schedule=schedule)

    def counts(self) -> DatasetCounts:
        return DatasetCounts(
            lots=self.dataset.lots,
            versions=self.dataset.versions,
            locations=self.dataset.locations,
            frames_per_movie=self.dataset.frames_per_movie,
        )

    def suspension_templates(self) -> dict[str, SuspensionSample]:
        """One SuspensionSample template per class (lot seeds filled later)."""
        s = self.suspension
        templates: dict[str, SuspensionSample] = {}
        for spec in self.classes:
            fat = ParticlePopulation(
                species_name="fat",
                median_radius=spec.median_radius,
                geometric_sigma=spec.geometric_sigma,
                number_density=number_density_from_mass_fraction(
                    spec.mass_fraction,
                    s.fat_density,
                    s.milk_density,
                    spec.median_radius,
                    spec.geometric_sigma,
                    spec.radius_band,
                ),
                scattering_strength_exponent=spec.scattering_strength_exponent,
                mobile=True,
                radius_band=spec.radius_band,
            )
            extras = [
                ParticlePopulation(
                    species_name=b.name,
                    median_radius=b.median_radius,
                    geometric_sigma=b.geometric_sigma,
                    number_density=b.number_density,
                    scattering_strength_exponent=b.scattering_strength_exponent,
                    mobile=b.mobile,
                )
                for b in self.backgrounds
            ]
            templates[spec.label] = SuspensionSample(
                populations=[fat, *extras],
                temperature=s.temperature,
                viscosity=s.viscosity,
                cuvette_thickness=s.cuvette_thickness,
                illuminated_diameter=s.illuminated_diameter,
                class_label=spec.label,
                max_particles_per_population=s.particle_cap,
            )
        return templates


def desk_config(seed: int = 0) -> ExperimentConfig:
    """Desk-scale defaults: 3 classes, CI-sized counts, protocols A-D.

    Exposures are expressed in seconds and sized to the simulated
    intensity decorrelation times (tens of milliseconds at these globule
    radii), so protocol B genuinely smears and protocol C genuinely
    mixes, the same mechanisms the microsecond-scale reference tables
    exercise on real milk.
    """
    classes = (
        ClassSpec(label="0.5", mass_fraction=0.5, median_radius=0.70e-6, geometric_sigma=1.55),
        ClassSpec(label="2.0", mass_fraction=2.0, median_radius=0.95e-6, geometric_sigma=1.35),
        ClassSpec(label="3.2", mass_fraction=3.2, median_radius=1.20e-6, geometric_sigma=1.18),
    )
    backgrounds = (
        BackgroundSpec(
            name="casein",
            median_radius=150e-9,
            geometric_sigma=1.5,
            number_density=1.8e15,
            mobile=True,
        ),
        BackgroundSpec(
            name="glass",
            median_radius=1.0e-6,
            geometric_sigma=1.3,
            number_density=1.2e15,
            mobile=False,
        ),
    )
    ms = 1e-3
    single = lambda e: [(e, 1)]
    protocols = {
        "A": {"0.5": single(0.8 * ms), "2.0": single(0.5 * ms), "3.2": single(0.4 * ms)},
        "B": {"0.5": single(10.0 * ms), "2.0": single(11.0 * ms), "3.2": single(12.0 * ms)},
        "C": {
            "0.5": [(12.0 * ms, 2), (6.0 * ms, 2), (1.5 * ms, 1)],
            "2.0": [(12.0 * ms, 2), (6.0 * ms, 2), (1.5 * ms, 1)],
            "3.2": [(12.0 * ms, 2), (6.0 * ms, 2), (1.5 * ms, 1)],
        },
        "D": {
            "0.5": [(0.8 * ms, 2), (10.0 * ms, 2), (12.0 * ms, 1)],
            "2.0": [(0.5 * ms, 2), (11.0 * ms, 2), (12.0 * ms, 1)],
            "3.2": [(0.4 * ms, 2), (12.0 * ms, 2), (12.0 * ms, 1)],
        },
    }
    # beam waist = illuminated radius keeps the speckle grain near 3
    # detector pixels; grid 320 leaves the angle-offset window clear of DC
    optics = OpticalConfig(
        beam_waist=0.06e-3,
        detector_width=128,
        detector_height=128,
        sub_steps_per_exposure=4,
        source_grid=320,
        source_extent_factor=2.0,
    )
    return ExperimentConfig(
        seed=seed,
        optics=optics,
        suspension=SuspensionSpec(),
        dataset=DatasetSpec(),
        classes=classes,
        backgrounds=backgrounds,
        protocols=protocols,
        training=TrainingConfig(epochs=8, patience=None, seed=seed),
    )


# ---------------------------------------------------------------------------
# TOML serialization


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int,)):
        return str(value)
    if isinstance(value, float):
        text = repr(value)
        return text if any(c in text for c in ".eE") else text + ".0"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize {type(value).__name__} to TOML")


def _quote_key(key: str) -> str:
    if key and all(c.isalnum() or c in "-_" for c in key):
        return key
    return '"' + key.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _emit_table(lines: list[str], name: str, table: dict) -> None:
    scalars = {k: v for k, v in table.items() if not isinstance(v, dict)}
    subtables = {k: v for k, v in table.items() if isinstance(v, dict)}
    if scalars or not subtables:
        lines.append(f"[{name}]")
        for key, value in scalars.items():
            lines.append(f"{_quote_key(key)} = {_toml_value(value)}")
        lines.append("")
    for key, sub in subtables.items():
        _emit_table(lines, f"{name}.{_quote_key(key)}", sub)


def to_toml(config: ExperimentConfig) -> str:
    doc = {
        "experiment": {"seed": config.seed, "output_dir": config.output_dir},
        "optics": asdict(config.optics),
        "suspension": asdict(config.suspension),
        "dataset": asdict(config.dataset),
        "training": {
            k: v for k, v in asdict(config.training).items() if v is not None
        },
        "class": {
            c.label: {
                "mass_fraction": c.mass_fraction,
                "median_radius": c.median_radius,
                "geometric_sigma": c.geometric_sigma,
                "radius_band": list(c.radius_band),
                "scattering_strength_exponent": c.scattering_strength_exponent,
            }
            for c in config.classes
        },
        "background": {b.name: {k: v for k, v in asdict(b).items() if k != "name"} for b in config.backgrounds},
        "protocol": {
            tag: {label: [[float(e), int(n)] for e, n in entries] for label, entries in table.items()}
            for tag, table in config.protocols.items()
        },
    }
    lines: list[str] = []
    for name, table in doc.items():
        _emit_table(lines, name, table)
    return "\n".join(lines).rstrip() + "\n"


def from_toml(text: str) -> ExperimentConfig:
    doc = tomllib.loads(text)
    try:
        experiment = doc.get("experiment", {})
        optics = OpticalConfig(**doc.get("optics", {}))
        suspension = SuspensionSpec(**doc.get("suspension", {}))
        dataset = DatasetSpec(**doc.get("dataset", {}))
        training = TrainingConfig(**doc.get("training", {}))
        classes = tuple(
            ClassSpec(
                label=label,
                mass_fraction=spec["mass_fraction"],
                median_radius=spec["median_radius"],
                geometric_sigma=spec["geometric_sigma"],
                radius_band=tuple(spec.get("radius_band", (0.5e-6, 5.0e-6))),
                scattering_strength_exponent=spec.get("scattering_strength_exponent", 3.0),
            )
            for label, spec in doc.get("class", {}).items()
        )
        backgrounds = tuple(
            BackgroundSpec(name=name, **spec) for name, spec in doc.get("background", {}).items()
        )
        protocols = {
            tag: {label: [(float(e), int(n)) for e, n in entries] for label, entries in table.items()}
            for tag, table in doc.get("protocol", {}).items()
        }
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return ExperimentConfig(
        seed=int(experiment.get("seed", 0)),
        output_dir=str(experiment.get("output_dir", "runs")),
        optics=optics,
        suspension=suspension,
        dataset=dataset,
        classes=classes,
        backgrounds=backgrounds,
        protocols=protocols,
        training=training,
    )


def load_config(path) -> ExperimentConfig:
    return from_toml(Path(path).read_text())


def save_config(path, config: ExperimentConfig) -> None:
    Path(path).write_text(to_toml(config))


def with_overrides(config: ExperimentConfig, **kwargs) -> ExperimentConfig:
    """Replace top-level fields, accepting nested dataclass replacements."""
    return replace(config, **kwargs)

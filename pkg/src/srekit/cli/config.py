"""Experiment configuration: a sectioned ``key = value`` text format.

A hand-written reader is used instead of :mod:`configparser` so that every
error can name its line, including both lines of a duplicated section.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

from ..errors import ConfigurationError
from ..models import ArParams, GarchParams, JointFilterParams, NoiseSpec

MODELS = ("ar", "garch", "joint_filter")
CHECKS = ("p1", "p2", "p3", "lyapunov", "lemma_probes")
GARCH_VIEWS = ("data_generating", "filter_given_path")


class ConfigError(ConfigurationError):
    """All problems found in one config text, each prefixed with its line."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass(frozen=True)
class ModelSection:
    model_id: str = "ar"
    noise: str = "standard_normal"
    df: float | None = None
    phi0: float = 0.0
    phi1: float = 0.5
    omega: float = 0.1
    alpha: float = 0.2
    beta: float = 0.7
    view: str = "filter_given_path"
    omega_mu: float = 0.1
    alpha_mu: float = 0.1
    beta_mu: float = 0.5
    omega_sigma: float = 0.1
    alpha_sigma: float = 0.2
    beta_sigma: float = 0.7
    mu_init: float = 0.0
    sigma2_init: float = 1.0


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    T: int = 400
    burn_in: int | None = None
    path_burn_in: int = 1000
    replicates: int = 1
    ci_level: float = 0.99
    n_blocks: int = 1000
    r_max: int = 4
    n_moment: int = 10000


@dataclass(frozen=True)
class ChecksSection:
    checks: tuple[str, ...] = ("p1",)


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"
    csv: bool = True
    report: bool = True


@dataclass(frozen=True)
class ProbeSection:
    anchor: tuple[float, ...] = (0.0,)
    coupling_offset: float = 1.0
    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None
    n_samples: int = 10000


@dataclass(frozen=True)
class PerturbationSection:
    """Intercept perturbation ``amplitude * rate**t`` for models without a built-in one."""

    amplitude: float = 1.0
    rate: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    run: RunSection = field(default_factory=RunSection)
    checks: ChecksSection = field(default_factory=ChecksSection)
    output: OutputSection = field(default_factory=OutputSection)
    probe: ProbeSection = field(default_factory=ProbeSection)
    perturbation: PerturbationSection | None = None

    @property
    def burn_in(self) -> int:
        """Fit burn-in, defaulting to 10% of ``T``."""
        return self.run.burn_in if self.run.burn_in is not None else int(0.1 * self.run.T)

    def noise_spec(self) -> NoiseSpec:
        m = self.model
        return NoiseSpec(distribution=m.noise, df=m.df)

    def params(self):
        m = self.model
        noise = self.noise_spec()
        if m.model_id == "ar":
            return ArParams(m.phi0, m.phi1, noise)
        if m.model_id == "garch":
            return GarchParams(m.omega, m.alpha, m.beta, noise)
        return JointFilterParams(
            m.omega_mu, m.alpha_mu, m.beta_mu, m.omega_sigma, m.alpha_sigma, m.beta_sigma,
            noise, m.mu_init, m.sigma2_init,
        )

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, seed=int(seed)))

    def with_output(self, directory: str) -> "ExperimentConfig":
        return replace(self, output=replace(self.output, directory=str(directory)))


SECTIONS = {
    "model": ModelSection,
    "run": RunSection,
    "checks": ChecksSection,
    "output": OutputSection,
    "probe": ProbeSection,
    "perturbation": PerturbationSection,
}

# keys that only apply to one model
_MODEL_KEYS = {
    "ar": {"phi0", "phi1"},
    "garch": {"omega", "alpha", "beta", "view"},
    "joint_filter": {"omega_mu", "alpha_mu", "beta_mu", "omega_sigma", "alpha_sigma", "beta_sigma",
                     "mu_init", "sigma2_init"},
}


def _field_types(cls) -> dict[str, str]:
    return {f.name: str(f.type) for f in fields(cls)}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_float(text: str) -> float:
    value = float(text)
    if math.isnan(value):
        raise ValueError("NaN is not allowed")
    return value


def _parse_int(text: str) -> int:
    return int(text)


def _parse_value(type_name: str, text: str):
    optional = "None" in type_name
    if optional and text.lower() == "none":
        return None
    if type_name.startswith("tuple[str"):
        items = tuple(s.strip() for s in text.split(",") if s.strip())
        return items
    if type_name.startswith("tuple[float"):
        items = [s.strip() for s in text.split(",")]
        if not all(items):
            raise ValueError(f"expected a comma-separated list of numbers, got {text!r}")
        return tuple(_parse_float(s) for s in items)
    if type_name.startswith("bool"):
        return _parse_bool(text)
    if type_name.startswith("int"):
        return _parse_int(text)
    if type_name.startswith("float"):
        return _parse_float(text)
    return text


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a config text; raises :class:`ConfigError` listing every problem."""
    errors: list[str] = []
    seen_sections: dict[str, int] = {}
    values: dict[str, dict[str, tuple[int, str]]] = {}
    current: str | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append(f"line {lineno}: malformed section header {line!r}")
                current = None
                continue
            name = line[1:-1].strip()
            if name not in SECTIONS:
                errors.append(f"line {lineno}: unknown section [{name}]")
                current = None
                continue
            if name in seen_sections:
                errors.append(
                    f"line {lineno}: duplicate section [{name}] (first defined on line {seen_sections[name]})"
                )
                current = None
                continue
            seen_sections[name] = lineno
            values[name] = {}
            current = name
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        if current is None:
            if not any(e.startswith(f"line {lineno}") for e in errors):
                errors.append(f"line {lineno}: key outside a valid section")
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        types = _field_types(SECTIONS[current])
        if key not in types:
            errors.append(f"line {lineno}: unknown key {key!r} in [{current}]")
            continue
        if key in values[current]:
            errors.append(
                f"line {lineno}: duplicate key {key!r} in [{current}] (first set on line {values[current][key][0]})"
            )
            continue
        values[current][key] = (lineno, value)

    sections = {}
    for name, cls in SECTIONS.items():
        if name not in values:
            continue
        types = _field_types(cls)
        kwargs = {}
        for key, (lineno, value) in values[name].items():
            try:
                kwargs[key] = _parse_value(types[key], value)
            except ValueError as exc:
                errors.append(f"line {lineno}: [{name}] {key}: {exc}")
        sections[name] = (cls(**kwargs), values[name])
    if errors:
        raise ConfigError(errors)

    config = ExperimentConfig(**{name: sec for name, (sec, _) in sections.items()})
    _validate(config, {name: locs for name, (_, locs) in sections.items()}, seen_sections)
    return config


def _line(locs, section, key, headers) -> str:
    if key in locs.get(section, {}):
        return f"line {locs[section][key][0]}"
    if section in headers:
        return f"line {headers[section]}"
    return "defaults"


def _validate(config: ExperimentConfig, locs: dict, headers: dict) -> None:
    errors = []
    m, run, probe = config.model, config.run, config.probe

    def err(section, key, msg):
        errors.append(f"{_line(locs, section, key, headers)}: [{section}] {key}: {msg}")

    if m.model_id not in MODELS:
        err("model", "model_id", f"must be one of {', '.join(MODELS)}")
    else:
        foreign = [
            k for k in locs.get("model", {})
            if any(k in keys for mid, keys in _MODEL_KEYS.items() if mid != m.model_id)
        ]
        for k in foreign:
            err("model", k, f"not a parameter of model {m.model_id!r}")
        if m.model_id == "garch" and m.view not in GARCH_VIEWS:
            err("model", "view", f"must be one of {', '.join(GARCH_VIEWS)}")
        if not foreign:
            try:
                config.params()
            except ConfigurationError as exc:
                msg = str(exc)
                key = next((k for k in _MODEL_KEYS[m.model_id] | {"noise", "df"} if k in msg), "model_id")
                err("model", key, msg)

    for key, lo in (("T", 1), ("replicates", 1), ("r_max", 1), ("n_blocks", 30), ("n_moment", 100),
                    ("path_burn_in", 0)):
        if getattr(run, key) < lo:
            err("run", key, f"must be >= {lo}")
    if run.burn_in is not None and not 0 <= run.burn_in < run.T:
        err("run", "burn_in", "must satisfy 0 <= burn_in < T")
    if not 0 < run.ci_level < 1:
        err("run", "ci_level", "must be in (0, 1)")
    if run.seed < 0:
        err("run", "seed", "must be >= 0")

    for c in config.checks.checks:
        if c not in CHECKS:
            err("checks", "checks", f"unknown check {c!r} (supported: {', '.join(CHECKS)})")
    if len(set(config.checks.checks)) != len(config.checks.checks):
        err("checks", "checks", "lists a check twice")
    if "p3" in config.checks.checks and m.model_id != "joint_filter" and config.perturbation is None:
        err("checks", "checks", "p3 needs model_id = joint_filter or a [perturbation] section")
    if config.perturbation is not None:
        if m.model_id == "joint_filter":
            errors.append(f"line {headers['perturbation']}: [perturbation] the joint filter has its own perturbation")
        elif not 0 <= config.perturbation.rate < 1:
            err("perturbation", "rate", "must be in [0, 1)")

    if len(probe.anchor) != 1:
        err("probe", "anchor", "models here are one-dimensional; give a single value")
    elif m.model_id in ("garch", "joint_filter") and probe.anchor[0] < 0:
        err("probe", "anchor", "variance states must be >= 0")
    if probe.n_samples < 100:
        err("probe", "n_samples", "must be >= 100")
    if (probe.lower is None) != (probe.upper is None):
        err("probe", "lower", "give both lower and upper or neither")
    elif probe.lower is not None and (len(probe.lower) != 1 or len(probe.upper) != 1 or
                                      not probe.lower[0] < probe.upper[0]):
        err("probe", "lower", "need a single value with lower < upper")
    if not math.isfinite(probe.coupling_offset) or probe.coupling_offset == 0:
        err("probe", "coupling_offset", "must be finite and non-zero")
    if errors:
        raise ConfigError(errors)


def _render_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_render_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(config: ExperimentConfig) -> str:
    """Text that :func:`parse_config` maps back to ``config``."""
    out = []
    for name in SECTIONS:
        section = getattr(config, name)
        if section is None:
            continue
        out.append(f"[{name}]")
        model_id = config.model.model_id
        for f in fields(section):
            if name == "model" and any(
                f.name in keys for mid, keys in _MODEL_KEYS.items() if mid != model_id
            ):
                continue
            out.append(f"{f.name} = {_render_value(getattr(section, f.name))}")
        out.append("")
    return "\n".join(out)

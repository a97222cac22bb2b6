"""Experiment configurations: presets, config-file parsing, validation.

Config files are flat ``section.key = value`` text (``#`` comments, lists
comma-separated) or an equivalent nested JSON object.  Unknown keys are
rejected.  Presets cover the two demand-response scenarios, the three
scalability sweeps, and the scalar thermostat benchmark.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError
from .greens import build_tables
from .schedule import geometric_schedule
from .score import GaussianMixture

__all__ = ["MixtureSpec", "LqgSpec", "ExperimentConfig", "PRESETS", "preset",
           "parse_config_text", "parse_config_json", "load_config", "validate_config",
           "dsweep_mixtures", "ksweep_mixtures", "MODE_NAMES"]

# short mode names used in configs/CLI -> simulator guidance modes
MODE_NAMES = {
    "mf": "mf-linear",
    "ia0": "ia-zero",
    "iam": "ia-target-mean",
    "cl": "closed-loop",
}


@dataclass
class MixtureSpec:
    weights: list
    means: list            # one scalar per component (broadcast over zones)
    sigmas: list           # isotropic per-component scale
    ar_rho: float = 0.0    # spatial AR(1) zone correlation; 0 = diagonal

    def build(self, d: int) -> GaussianMixture:
        if self.ar_rho > 0:
            return GaussianMixture.spatial_ar1(self.weights, self.means, self.sigmas, self.ar_rho, d)
        return GaussianMixture.isotropic(self.weights, self.means, self.sigmas, d=d)


@dataclass
class LqgSpec:
    kappa: float = 0.8
    q: float = 2.0
    m_tar: float = 1.5
    sigma_tar: float = 0.3
    m_bar_grid: list = field(default_factory=lambda: [0.0, 0.375, 0.75, 1.125, 1.5])


@dataclass
class ExperimentConfig:
    name: str = "custom"
    d: int = 1
    target: MixtureSpec | None = None
    initial: MixtureSpec | None = None      # None: delta start at the origin
    beta0: float = 12.0
    gamma: float = 0.65
    intervals: int = 8
    n_particles: int = 8000
    n_steps: int = 2500
    seed: int = 20250101
    modes: list = field(default_factory=lambda: ["mf", "ia0", "iam"])
    sweep_axis: str = "none"                # none | dimension | components | ar-rho
    sweep_values: list = field(default_factory=list)
    lqg: LqgSpec | None = None

    def schedule(self):
        return geometric_schedule(self.beta0, self.gamma, self.intervals)

    def mixtures(self, sweep_value=None):
        """(initial, target) mixtures for one run, resolving the sweep axis."""
        if self.sweep_axis == "dimension" and sweep_value is not None:
            return dsweep_mixtures(int(sweep_value))
        if self.sweep_axis == "components" and sweep_value is not None:
            return ksweep_mixtures(int(sweep_value), self.d)
        if self.sweep_axis == "ar-rho" and sweep_value is not None:
            tar = MixtureSpec(self.target.weights, self.target.means, self.target.sigmas, float(sweep_value))
            ini = None
            if self.initial is not None:
                ini = MixtureSpec(self.initial.weights, self.initial.means, self.initial.sigmas, float(sweep_value))
            return (ini.build(self.d) if ini else None), tar.build(self.d)
        ini = self.initial.build(self.d) if self.initial is not None else None
        return ini, self.target.build(self.d)

    def dim_for(self, sweep_value=None) -> int:
        if self.sweep_axis == "dimension" and sweep_value is not None:
            return int(sweep_value)
        return self.d

    def echo(self) -> dict:
        out = asdict(self)
        return out


def dsweep_mixtures(d: int):
    """Zone-count sweep endpoints: sinusoidal zone-type profile, narrow modes.

    z_j = sin(2 pi j / d); target means 0.1 + 0.15 z and 1.5 - 0.15 z;
    initial means displaced by +1.5 (first mode) and +4.0 (second); narrow
    per-component scales from the well-separated scenario.
    """
    z = np.sin(2.0 * np.pi * np.arange(d) / d)
    m0 = 0.1 * np.ones(d) + 0.15 * z
    m1 = 1.5 * np.ones(d) - 0.15 * z
    target = GaussianMixture.isotropic([0.6, 0.4], np.vstack([m0, m1]), [0.2, 0.3])
    initial = GaussianMixture.isotropic([0.6, 0.4], np.vstack([m0 + 1.5, m1 + 4.0]), [0.5, 0.7])
    return initial, target


def ksweep_mixtures(K: int, d: int):
    """Fleet-heterogeneity sweep: K modes uniform on [-1, 2], weights (K..1).

    Initial means are target + 4 (aggressive displacement).  Per-component
    scales interpolate the narrow scenario's ranges; the construction keeps
    the target global mean at 0 for every K so both constant-centre
    baselines coincide.
    """
    means = np.linspace(-1.0, 2.0, K)
    w = np.arange(K, 0, -1, dtype=float)
    w /= w.sum()
    s_tar = np.linspace(0.2, 0.3, K)
    s_in = np.linspace(0.5, 0.7, K)
    target = GaussianMixture.isotropic(w, np.repeat(means[:, None], d, axis=1), s_tar)
    initial = GaussianMixture.isotropic(w, np.repeat(means[:, None] + 4.0, d, axis=1), s_in)
    return initial, target


# ----------------------------------------------------------------------------
# presets
# ----------------------------------------------------------------------------

def _target_dr() -> MixtureSpec:
    return MixtureSpec([0.6, 0.4], [0.0, 1.5], [0.2, 0.3])


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name]()


def _scenario_a() -> ExperimentConfig:
    return ExperimentConfig(
        name="scenario-a",
        target=_target_dr(),
        initial=MixtureSpec([0.6, 0.4], [1.0, 6.0], [3.0, 3.0]),
    )


def _scenario_b() -> ExperimentConfig:
    return ExperimentConfig(
        name="scenario-b",
        target=_target_dr(),
        initial=MixtureSpec([0.6, 0.4], [1.5, 5.5], [0.5, 0.7]),
    )


def _d_sweep() -> ExperimentConfig:
    return ExperimentConfig(
        name="d-sweep",
        target=_target_dr(),
        initial=MixtureSpec([0.6, 0.4], [1.6, 5.5], [0.5, 0.7]),
        n_particles=4000,
        sweep_axis="dimension",
        sweep_values=[1, 2, 4, 8, 16, 32],
    )


def _k_sweep() -> ExperimentConfig:
    return ExperimentConfig(
        name="k-sweep",
        d=4,
        target=_target_dr(),  # regenerated per K by ksweep_mixtures
        initial=MixtureSpec([0.6, 0.4], [1.5, 5.5], [0.5, 0.7]),
        n_particles=4000,
        sweep_axis="components",
        sweep_values=[2, 3, 4, 8],
    )


def _ar_sweep() -> ExperimentConfig:
    return ExperimentConfig(
        name="ar-sweep",
        d=8,
        target=_target_dr(),
        initial=MixtureSpec([0.6, 0.4], [1.5, 5.5], [0.5, 0.7]),
        n_particles=4000,
        sweep_axis="ar-rho",
        sweep_values=[0.0, 0.5, 0.8],
    )


def _lqg_tcl() -> ExperimentConfig:
    return ExperimentConfig(name="lqg-tcl", target=_target_dr(), lqg=LqgSpec())


PRESETS = {
    "scenario-a": _scenario_a,
    "scenario-b": _scenario_b,
    "d-sweep": _d_sweep,
    "k-sweep": _k_sweep,
    "ar-sweep": _ar_sweep,
    "lqg-tcl": _lqg_tcl,
}


# ----------------------------------------------------------------------------
# config parsing
# ----------------------------------------------------------------------------

_FLOAT_LIST_KEYS = {"weights", "means", "sigmas", "m_bar_grid", "sweep_values", "values"}

_SCHEMA = {
    "name": str,
    "d": int,
    "schedule.beta0": float,
    "schedule.gamma": float,
    "schedule.intervals": int,
    "sim.particles": int,
    "sim.steps": int,
    "sim.seed": int,
    "modes": "strlist",
    "sweep.axis": str,
    "sweep.values": "floatlist",
    "target.weights": "floatlist",
    "target.means": "floatlist",
    "target.sigmas": "floatlist",
    "target.ar_rho": float,
    "initial.weights": "floatlist",
    "initial.means": "floatlist",
    "initial.sigmas": "floatlist",
    "initial.ar_rho": float,
    "lqg.kappa": float,
    "lqg.q": float,
    "lqg.m_tar": float,
    "lqg.sigma_tar": float,
    "lqg.m_bar_grid": "floatlist",
}


def _cast(key: str, raw, kind):
    try:
        if kind == "floatlist":
            if isinstance(raw, str):
                parts = [p for p in raw.replace(",", " ").split() if p]
                return [float(p) for p in parts]
            return [float(v) for v in raw]
        if kind == "strlist":
            if isinstance(raw, str):
                return [p for p in raw.replace(",", " ").split() if p]
            return [str(v) for v in raw]
        return kind(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} ({exc})") from None


def _assemble(flat: dict) -> ExperimentConfig:
    for key in flat:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
    vals = {k: _cast(k, v, _SCHEMA[k]) for k, v in flat.items()}

    def mixture(section: str) -> MixtureSpec | None:
        keys = [f"{section}.weights", f"{section}.means", f"{section}.sigmas"]
        present = [k for k in keys if k in vals]
        if not present:
            return None
        missing = [k for k in keys if k not in vals]
        if missing:
            raise ConfigError(f"incomplete mixture section {section!r}: missing {missing}")
        return MixtureSpec(
            vals[keys[0]], vals[keys[1]], vals[keys[2]], vals.get(f"{section}.ar_rho", 0.0)
        )

    lqg = None
    lqg_keys = [k for k in vals if k.startswith("lqg.")]
    if lqg_keys:
        lqg = LqgSpec(
            kappa=vals.get("lqg.kappa", 0.8),
            q=vals.get("lqg.q", 2.0),
            m_tar=vals.get("lqg.m_tar", 1.5),
            sigma_tar=vals.get("lqg.sigma_tar", 0.3),
            m_bar_grid=vals.get("lqg.m_bar_grid", [0.0, 1.5]),
        )

    cfg = ExperimentConfig(
        name=vals.get("name", "custom"),
        d=vals.get("d", 1),
        target=mixture("target"),
        initial=mixture("initial"),
        beta0=vals.get("schedule.beta0", 12.0),
        gamma=vals.get("schedule.gamma", 0.65),
        intervals=vals.get("schedule.intervals", 8),
        n_particles=vals.get("sim.particles", 8000),
        n_steps=vals.get("sim.steps", 2500),
        seed=vals.get("sim.seed", 20250101),
        modes=vals.get("modes", ["mf", "ia0", "iam"]),
        sweep_axis=vals.get("sweep.axis", "none"),
        sweep_values=vals.get("sweep.values", []),
        lqg=lqg,
    )
    return cfg


def parse_config_text(text: str) -> ExperimentConfig:
    flat = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        flat[key.strip()] = value.strip()
    return _assemble(flat)


def parse_config_json(text: str) -> ExperimentConfig:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON config: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("JSON config must be an object")
    flat = {}
    for key, val in obj.items():
        if isinstance(val, dict):
            for sub, v in val.items():
                flat[f"{key}.{sub}"] = v
        else:
            flat[key] = val
    return _assemble(flat)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return parse_config_json(text)
    return parse_config_text(text)


# ----------------------------------------------------------------------------
# validation
# ----------------------------------------------------------------------------

def validate_config(config: ExperimentConfig, dry_run: bool = True) -> list:
    """Structural checks plus an optional coefficient dry run.

    Returns a list of error strings; empty means the config is runnable.
    """
    errors = []

    def check_mixture(spec: MixtureSpec | None, label: str):
        if spec is None:
            return
        w = np.asarray(spec.weights, dtype=float)
        if abs(w.sum() - 1.0) > 1e-12:
            errors.append(f"{label}: weights sum {w.sum():.6g} != 1")
        if np.any(w < 0):
            errors.append(f"{label}: negative weight")
        if len(spec.means) != w.size or len(spec.sigmas) != w.size:
            errors.append(f"{label}: weights/means/sigmas lengths differ")
        if any(s <= 0 for s in spec.sigmas):
            errors.append(f"{label}: non-PD covariance (sigma <= 0)")
        if not (0.0 <= spec.ar_rho < 1.0):
            errors.append(f"{label}: ar_rho {spec.ar_rho} outside [0, 1)")

    if config.target is None and config.lqg is None:
        errors.append("config needs a target mixture (or an lqg section)")
    check_mixture(config.target, "target")
    check_mixture(config.initial, "initial")
    if config.beta0 <= 0:
        errors.append(f"schedule.beta0 must be positive, got {config.beta0}")
    if not (0 < config.gamma <= 1):
        errors.append(f"schedule.gamma must lie in (0, 1], got {config.gamma}")
    if config.intervals < 1:
        errors.append("schedule.intervals must be >= 1")
    if config.n_particles < 1 or config.n_steps < 10:
        errors.append("sim.particles >= 1 and sim.steps >= 10 required")
    if config.sweep_axis not in ("none", "dimension", "components", "ar-rho"):
        errors.append(f"unknown sweep axis {config.sweep_axis!r}")
    if config.sweep_axis != "none" and not config.sweep_values:
        errors.append("sweep axis set but sweep.values empty")
    for m in config.modes:
        if m not in MODE_NAMES:
            errors.append(f"unknown mode {m!r}; available: {sorted(MODE_NAMES)}")
    if config.lqg is not None:
        if config.lqg.kappa < 0 or config.lqg.q < 0:
            errors.append("lqg: kappa and q must be nonnegative")
        if config.lqg.sigma_tar <= 0:
            errors.append("lqg: sigma_tar must be positive")

    if errors or not dry_run or config.target is None:
        return errors

    # dry run: build tables at the first sweep point and scan probe precision
    try:
        sweep_value = config.sweep_values[0] if config.sweep_axis != "none" else None
        initial, target = config.mixtures(sweep_value)
        sched = config.schedule()
        from .guidance import linear_guidance

        g = linear_guidance(initial.mean if initial is not None else np.zeros(target.dim), target.mean)
        tables = build_tables(sched, g.pwc_values(sched), config.n_steps)
        ts = np.linspace(tables.t_clip[0], tables.t_clip[1], 2001)
        K = tables.probe_precision(ts)
        if not np.all(np.isfinite(K)) or np.any(K <= 0):
            bad = float(ts[np.argmin(K)])
            errors.append(f"probe precision not positive on the grid (worst at t={bad:.4f})")
    except Exception as exc:  # surface anything the dry run trips over
        errors.append(f"dry run failed: {exc}")
    return errors

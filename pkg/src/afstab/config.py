"""Experiment configuration: a single JSON file with nested typed sections.

parse -> serialize -> parse is the identity; validation collects every
violation instead of stopping at the first.
"""

import json
from dataclasses import asdict, dataclass, field

from .errors import ParseError, ValidationError
from .geometry import FAMILIES, MetricChart
from .grid import Grid


@dataclass
class FamilyConfig:
    tag: str = "flat"
    params: dict = field(default_factory=dict)
    box_halfwidth: float = 100.0
    excision_radius: float = 0.0
    decay_b: float = 10.0
    decay_tau: float = 1.0
    base_point: list = field(default_factory=lambda: [2.0, 0.0, 0.0])


@dataclass
class GridConfig:
    nodes: int = 65
    halfwidth: float = 20.0
    bc: str = "corrected"


@dataclass
class SolverConfig:
    tol: float = 1e-11
    max_iter: int = 20000
    method: str = "auto"
    eps_grad_factor: float = 1e-6
    normalization: str = "point"


@dataclass
class SamplingConfig:
    seed: int | None = None
    ball_radius: float = 3.0
    rho: float | None = None          # defaults to two grid cells at run time
    n_pairs: int = 200
    n_targets: int = 20
    target_radius: float = 2.0
    n_mv_samples: int = 8
    n_pythagoras_pairs: int = 50
    eikonal_nodes: int = 81


@dataclass
class MassConfig:
    radii: list = field(default_factory=lambda: [20.0, 40.0, 80.0])
    fit_exponent: float | None = None
    quadrature_polar: int = 32
    quadrature_azimuth: int = 64
    residual_threshold: float = 1e-3


@dataclass
class BishopGromovConfig:
    radii: list = field(default_factory=lambda: [1.5, 2.0, 2.5, 3.0, 4.0, 5.0])
    kappa: float | None = None        # None: use the certified value


@dataclass
class CertificateConfig:
    x_field: dict = field(default_factory=lambda: {"kind": "zero"})
    c_coef: float = 1.0
    n_sample_points: int = 600
    sample_r_min: float = 0.25
    sample_r_max: float = 10.0


@dataclass
class SweepConfig:
    parameter: str = "m"
    values: list = field(default_factory=list)


@dataclass
class OutputConfig:
    directory: str = "out"
    formats: list = field(default_factory=lambda: ["json", "csv"])


_SECTIONS = {
    "family": FamilyConfig, "grid": GridConfig, "solver": SolverConfig,
    "sampling": SamplingConfig, "mass": MassConfig,
    "bishop_gromov": BishopGromovConfig, "certificate": CertificateConfig,
    "sweep": SweepConfig, "output": OutputConfig,
}


@dataclass
class ExperimentConfig:
    family: FamilyConfig = field(default_factory=FamilyConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    mass: MassConfig = field(default_factory=MassConfig)
    bishop_gromov: BishopGromovConfig = field(default_factory=BishopGromovConfig)
    certificate: CertificateConfig = field(default_factory=CertificateConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def chart(self, override_params: dict | None = None) -> MetricChart:
        f = self.family
        params = dict(f.params)
        if override_params:
            params.update(override_params)
        return MetricChart(family=f.tag, params=params,
                           box_halfwidth=f.box_halfwidth,
                           excision_radius=f.excision_radius,
                           decay_b=f.decay_b, decay_tau=f.decay_tau,
                           base_point=tuple(f.base_point))

    def make_grid(self) -> Grid:
        return Grid(halfwidth=self.grid.halfwidth, nodes=self.grid.nodes)

    def rho(self) -> float:
        if self.sampling.rho is not None:
            return float(self.sampling.rho)
        return 2.0 * 2.0 * self.grid.halfwidth / (self.grid.nodes - 1)


def config_from_dict(data: dict) -> ExperimentConfig:
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ValidationError([f"unknown section(s): {sorted(unknown)}"])
    kwargs = {}
    violations = []
    for name, cls in _SECTIONS.items():
        section = data.get(name, {})
        if not isinstance(section, dict):
            violations.append(f"{name}: expected an object, got {type(section).__name__}")
            continue
        allowed = {f_.name for f_ in cls.__dataclass_fields__.values()}
        bad = set(section) - allowed
        if bad:
            violations.append(f"{name}: unknown field(s) {sorted(bad)}")
            section = {k: v for k, v in section.items() if k in allowed}
        kwargs[name] = cls(**section)
    if violations:
        raise ValidationError(violations)
    cfg = ExperimentConfig(**kwargs)
    violations = validate(cfg)
    if violations:
        raise ValidationError(violations)
    return cfg


def validate(cfg: ExperimentConfig) -> list:
    """All validation violations, empty when the config is usable."""
    v = []
    f = cfg.family
    if f.tag not in FAMILIES:
        v.append(f"family.tag must be one of {FAMILIES}, got {f.tag!r}")
    if f.box_halfwidth <= 0:
        v.append("family.box_halfwidth must be positive")
    if f.excision_radius < 0:
        v.append("family.excision_radius must be nonnegative")
    if f.decay_b <= 0:
        v.append("family.decay_b must be positive")
    if not f.decay_tau > 0.5:
        v.append("family.decay_tau: tau must exceed 1/2")
    elif f.decay_tau > 1.0:
        v.append("family.decay_tau must not exceed 1 for the corpus families")
    if len(f.base_point) != 3:
        v.append("family.base_point must be a 3-vector")
    elif not all(isinstance(c, (int, float)) for c in f.base_point):
        v.append("family.base_point components must be numbers")

    g = cfg.grid
    if g.nodes < 17 or g.nodes % 2 == 0:
        v.append("grid.nodes must be odd and >= 17")
    if g.halfwidth <= 0:
        v.append("grid.halfwidth must be positive")
    elif g.halfwidth > f.box_halfwidth:
        v.append("grid.halfwidth must not exceed family.box_halfwidth")
    if g.bc not in ("plain", "corrected"):
        v.append("grid.bc must be 'plain' or 'corrected'")

    s = cfg.solver
    if not 0 < s.tol <= 1e-6:
        v.append("solver.tol must lie in (0, 1e-6]")
    if s.max_iter < 100:
        v.append("solver.max_iter must be at least 100")
    if s.method not in ("auto", "cg", "amg"):
        v.append("solver.method must be 'auto', 'cg', or 'amg'")
    if s.eps_grad_factor <= 0:
        v.append("solver.eps_grad_factor must be positive")
    if s.normalization not in ("point", "annulus"):
        v.append("solver.normalization must be 'point' or 'annulus'")

    sm = cfg.sampling
    if sm.seed is None:
        v.append("sampling.seed is mandatory")
    elif not isinstance(sm.seed, int):
        v.append("sampling.seed must be an integer")
    if sm.ball_radius <= 0:
        v.append("sampling.ball_radius must be positive")
    if sm.rho is not None and sm.rho <= 0:
        v.append("sampling.rho must be positive when given")
    for name in ("n_pairs", "n_mv_samples", "n_pythagoras_pairs"):
        if getattr(sm, name) < 1:
            v.append(f"sampling.{name} must be at least 1")
    if sm.n_targets < 0:
        v.append("sampling.n_targets must be nonnegative")
    if sm.target_radius <= 0:
        v.append("sampling.target_radius must be positive")
    if sm.eikonal_nodes < 33:
        v.append("sampling.eikonal_nodes must be at least 33")

    ms = cfg.mass
    if len(ms.radii) < 3:
        v.append("mass.radii needs at least 3 extraction radii")
    elif any(b <= a for a, b in zip(ms.radii, ms.radii[1:])):
        v.append("mass.radii must be strictly increasing")
    elif ms.radii[0] <= 1.0:
        v.append("mass.radii must all exceed 1")
    elif ms.radii[-1] > f.box_halfwidth:
        v.append("mass.radii must fit inside family.box_halfwidth")
    if ms.quadrature_polar < 4 or ms.quadrature_azimuth < 8:
        v.append("mass quadrature orders too small (polar >= 4, azimuth >= 8)")
    if ms.residual_threshold <= 0:
        v.append("mass.residual_threshold must be positive")

    bg = cfg.bishop_gromov
    if len(bg.radii) < 2:
        v.append("bishop_gromov.radii needs at least 2 radii")
    elif any(b <= a for a, b in zip(bg.radii, bg.radii[1:])):
        v.append("bishop_gromov.radii must be strictly increasing")
    if bg.kappa is not None and bg.kappa < 0:
        v.append("bishop_gromov.kappa must be nonnegative when given")

    ct = cfg.certificate
    if ct.x_field.get("kind", "zero") not in ("zero", "gradient_bump"):
        v.append("certificate.x_field.kind must be 'zero' or 'gradient_bump'")
    if ct.c_coef <= 0.25:
        v.append("certificate.c_coef must exceed 1/4")
    if ct.n_sample_points < 10:
        v.append("certificate.n_sample_points must be at least 10")
    if not 0 < ct.sample_r_min < ct.sample_r_max:
        v.append("certificate sample radii must satisfy 0 < r_min < r_max")

    o = cfg.output
    if not isinstance(o.directory, str) or not o.directory:
        v.append("output.directory must be a nonempty string")
    bad = set(o.formats) - {"json", "csv"}
    if bad:
        v.append(f"output.formats contains unsupported entries {sorted(bad)}")
    return v


def parse_config(path) -> ExperimentConfig:
    """Load and validate a config file; raises ParseError / ValidationError."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a JSON object")
    return config_from_dict(data)

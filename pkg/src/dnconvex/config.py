"""
Run configuration: a JSON document with named sections.

Every section is a small dataclass with defaults.  ``validate_config``
parses strictly (unknown keys are errors), re-checks every numeric
constraint of the modules it feeds, and reports all problems at once as
``(field path, message)`` pairs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .basis import MAX_N
from .domain import CWF_KINDS

__all__ = [
    "ConfigError",
    "GridSection",
    "TruthSection",
    "SourceSection",
    "BasisSection",
    "SystemSection",
    "CWFSection",
    "OptimizerSection",
    "NoiseSection",
    "OutputSection",
    "RunConfig",
    "validate_config",
    "load_config",
    "default_config",
]


class ConfigError(ValueError):
    """Raised with the full list of ``(path, message)`` problems."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.errors))


@dataclass
class GridSection:
    n1: int = 33
    n2: int = 33
    side: float = 0.5
    top: float = 0.5
    bottom: float = -1.5


@dataclass
class TruthSection:
    background: float = 0.0
    inclusions: list = field(
        default_factory=lambda: [{"center": [0.5, 0.1], "radius": 0.12, "amplitude": -0.5}]
    )


@dataclass
class SourceSection:
    K: int = 64
    eps_width: float = 0.25
    amplitude: float = 1.0


@dataclass
class BasisSection:
    N: int = 4


@dataclass
class SystemSection:
    form: str = "premultiplied"
    bc_mode: str = "direct"
    cutoff_depth: float | None = 0.6


@dataclass
class CWFSection:
    kind: str = "elliptic"
    omega: float = 2.0
    nu: float = 1.05
    d: float = 2.25
    c: float = 0.95
    lam: float | str = 2.0
    gamma: float | str = 0.1
    clamp: bool = True


@dataclass
class OptimizerSection:
    R: float = 500.0
    step: float | str = "auto"
    max_iter: int = 500
    tol: float = 1e-8
    s_order: int = 2
    metric: str = "sobolev"
    W0: str | dict = "zero"


@dataclass
class NoiseSection:
    level: float = 0.0
    seed: int = 0


@dataclass
class OutputSection:
    directory: str = "run_output"
    dump_intermediates: bool = False


SECTIONS = {
    "grid": GridSection,
    "truth": TruthSection,
    "source": SourceSection,
    "basis": BasisSection,
    "system": SystemSection,
    "cwf": CWFSection,
    "optimizer": OptimizerSection,
    "noise": NoiseSection,
    "output": OutputSection,
}


@dataclass
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    truth: TruthSection = field(default_factory=TruthSection)
    source: SourceSection = field(default_factory=SourceSection)
    basis: BasisSection = field(default_factory=BasisSection)
    system: SystemSection = field(default_factory=SystemSection)
    cwf: CWFSection = field(default_factory=CWFSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def default_config() -> RunConfig:
    return RunConfig()


# ---------------------------------------------------------------------------
# validation


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _check_types(sec_name, cls, raw, errors):
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    if not isinstance(raw, dict):
        errors.append((sec_name, "must be an object"))
        return cls()
    for k, v in raw.items():
        if k not in known:
            errors.append((f"{sec_name}.{k}", "unknown key"))
            continue
        kwargs[k] = v
    return cls(**kwargs)


def _inclusion_errors(incl, errors):
    if not isinstance(incl, list):
        errors.append(("truth.inclusions", "must be a list"))
        return
    for i, inc in enumerate(incl):
        path = f"truth.inclusions[{i}]"
        if not isinstance(inc, dict) or set(inc) != {"center", "radius", "amplitude"}:
            errors.append((path, "needs exactly center, radius, amplitude"))
            continue
        c = inc["center"]
        if not (isinstance(c, list) and len(c) == 2 and all(_is_num(x) for x in c)):
            errors.append((f"{path}.center", "must be two numbers"))
        if not (_is_num(inc["radius"]) and inc["radius"] > 0):
            errors.append((f"{path}.radius", "must be > 0"))
        if not _is_num(inc["amplitude"]):
            errors.append((f"{path}.amplitude", "must be a number"))
        elif inc["amplitude"] > 0:
            errors.append((f"{path}.amplitude", "a₀ ≤ 0 on Ω requires amplitude <= 0"))


def _semantic(cfg: RunConfig, errors):
    def need(path, ok, msg):
        if not ok:
            errors.append((path, msg))

    g = cfg.grid
    need("grid.n1", _is_int(g.n1) and g.n1 >= 9, "integer >= 9")
    need("grid.n2", _is_int(g.n2) and g.n2 >= 9, "integer >= 9")
    need("grid.side", _is_num(g.side) and g.side > 0, "must be > 0")
    need("grid.top", _is_num(g.top) and g.top > 0, "must be > 0")
    need("grid.bottom", _is_num(g.bottom) and g.bottom < -1, "must lie below the source line x2 = -1")

    t = cfg.truth
    if not _is_num(t.background):
        errors.append(("truth.background", "must be a number"))
    elif t.background > 0:
        errors.append(("truth.background", "a₀ ≤ 0 on Ω is required (maximum-principle regime)"))
    _inclusion_errors(t.inclusions, errors)

    s = cfg.source
    need("source.K", _is_int(s.K) and s.K >= 32, "integer >= 32 source positions")
    need("source.eps_width", _is_num(s.eps_width) and s.eps_width > 0, "must be > 0")
    need("source.amplitude", _is_num(s.amplitude) and s.amplitude > 0, "must be > 0")

    need("basis.N", _is_int(cfg.basis.N) and 1 <= cfg.basis.N <= MAX_N,
         f"basis size must satisfy 1 <= N <= {MAX_N} (cap of the orthonormal basis)")

    sy = cfg.system
    need("system.form", sy.form in ("inverse", "premultiplied"), "one of inverse, premultiplied")
    need("system.bc_mode", sy.bc_mode in ("direct", "derivative"), "one of direct, derivative")
    need("system.cutoff_depth", sy.cutoff_depth is None or (_is_num(sy.cutoff_depth) and sy.cutoff_depth > 0),
         "null or > 0")

    w = cfg.cwf
    need("cwf.kind", w.kind in CWF_KINDS, f"one of {', '.join(CWF_KINDS)}")
    need("cwf.omega", _is_num(w.omega) and w.omega > 1, "must be > 1")
    need("cwf.nu", _is_num(w.nu) and w.nu > 1, "must be > 1")
    need("cwf.d", _is_num(w.d), "must be a number")
    need("cwf.c", _is_num(w.c) and w.c > 0, "must be > 0")
    need("cwf.lam", w.lam == "auto" or (_is_num(w.lam) and w.lam >= 0), "'auto' or >= 0")
    need("cwf.gamma", w.gamma == "auto" or (_is_num(w.gamma) and w.gamma >= 0), "'auto' or >= 0")
    need("cwf.clamp", isinstance(w.clamp, bool), "must be true or false")
    if (w.lam == "auto") != (w.gamma == "auto"):
        errors.append(("cwf.lam", "lam and gamma must both be 'auto' or both numbers"))

    o = cfg.optimizer
    need("optimizer.R", _is_num(o.R) and o.R > 0, "must be > 0")
    need("optimizer.step", o.step == "auto" or (_is_num(o.step) and o.step > 0), "'auto' or > 0")
    need("optimizer.max_iter", _is_int(o.max_iter) and o.max_iter >= 0, "integer >= 0")
    need("optimizer.tol", _is_num(o.tol) and o.tol >= 0, "must be >= 0")
    need("optimizer.s_order", o.s_order in (1, 2, 3), "one of 1, 2, 3")
    need("optimizer.metric", o.metric in ("sobolev", "euclidean"), "one of sobolev, euclidean")
    W0 = o.W0
    ok = W0 == "zero" or (isinstance(W0, dict) and set(W0) == {"random"} and _is_int(W0["random"]))
    need("optimizer.W0", ok, "'zero' or {\"random\": seed}")

    n = cfg.noise
    need("noise.level", _is_num(n.level) and 0 <= n.level < 1, "must lie in [0, 1)")
    need("noise.seed", _is_int(n.seed), "must be an integer")
    if cfg.cwf.lam == "auto" and _is_num(n.level) and n.level == 0:
        errors.append(("cwf.lam", "'auto' schedule needs noise.level > 0"))

    out = cfg.output
    need("output.directory", isinstance(out.directory, str) and out.directory, "non-empty string")
    need("output.dump_intermediates", isinstance(out.dump_intermediates, bool), "must be true or false")

    # cross-module checks that need the geometry
    if not errors:
        from .domain import CWFSpec, DomainError, GridSpec, build_masks
        from .forward import ForwardError, SourceSpec

        try:
            grid = GridSpec(g.n1, g.n2, g.side, g.top, g.bottom)
            SourceSpec(0.5, s.eps_width, s.amplitude).check_fits(grid)
        except (DomainError, ForwardError) as e:
            errors.append(("source.eps_width", str(e)))
            return
        try:
            build_masks(grid, CWFSpec(kind=w.kind, omega_param=w.omega, nu=w.nu, d=w.d, c=w.c))
        except DomainError as e:
            errors.append(("cwf.d", str(e)))


def validate_config(raw) -> RunConfig:
    """Parse a JSON string or dict into a RunConfig, raising ConfigError."""
    errors = []
    if isinstance(raw, (str, bytes)):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ConfigError([("<root>", f"invalid JSON: {e}")]) from None
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "must be an object")])
    kwargs = {}
    for k, v in raw.items():
        if k not in SECTIONS:
            errors.append((k, "unknown section"))
            continue
        try:
            kwargs[k] = _check_types(k, SECTIONS[k], v, errors)
        except TypeError as e:  # pragma: no cover - guarded by the key check
            errors.append((k, str(e)))
    cfg = RunConfig(**kwargs)
    _semantic(cfg, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return validate_config(fh.read())

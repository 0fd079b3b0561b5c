"""Flat ``key = value`` experiment configuration.

Keys are dotted (``lod.k_list``), numbers may be written as dyadic literals
(``2^-3``), lists are comma separated, and fields are small call
expressions such as ``gaussian(center=0.5, sigma=0.1)``. Unknown keys are
rejected so that a typo never silently falls back to a default.
"""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .. import fem
from ..coefficients import Coefficient, constant, periodic_inclusion, random_checkerboard
from ..mesh import TensorMesh, build_mesh
from ..timestep import SCHEMES, num_steps

NORMS = ("l2", "weighted_l2", "energy")
COEFF_KINDS = ("periodic", "checkerboard", "constant")
_DYADIC = re.compile(r"^\s*([+-]?\d+(?:\.\d*)?)\s*\^\s*([+-]?\d+)\s*$")
_CALL = re.compile(r"^\s*([A-Za-z_]\w*)\s*(?:\((.*)\))?\s*$")
_A0_POWER = re.compile(r"^\s*eps\s*\^\s*([+-]?\d+(?:\.\d*)?)\s*$")


class ConfigError(ValueError):
    pass


def parse_number(text: str) -> float:
    """Float from ``0.25``, ``1e-3`` or a power literal like ``2^-3``."""
    m = _DYADIC.match(text)
    if m:
        return float(m.group(1)) ** int(m.group(2))
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"not a number: {text!r}") from None


def parse_list(text: str) -> list[float]:
    items = [t for t in (s.strip() for s in text.split(",")) if t]
    if not items:
        raise ConfigError("empty list")
    return [parse_number(t) for t in items]


def parse_int_list(text: str) -> list[int]:
    vals = parse_list(text)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_field(text: str) -> fem.Field:
    """``name`` or ``name(key=value, ...)``; ``a + b`` sums fields."""
    if "+" in text and not _DYADIC.match(text):
        parts = _split_top(text, "+")
        if len(parts) > 1:
            return fem.combination([(1.0, parse_field(p)) for p in parts])
    m = _CALL.match(text)
    if not m:
        raise ConfigError(f"cannot parse field {text!r}")
    name, args = m.group(1), m.group(2)
    params = {}
    if args and args.strip():
        for item in _split_top(args, ","):
            if "=" not in item:
                raise ConfigError(f"field argument {item!r} must be key=value")
            k, v = (s.strip() for s in item.split("=", 1))
            params[k] = parse_number(v)
    try:
        return fem.make_field(name, **params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _split_top(text: str, sep: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == sep and depth == 0:
            out.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur).strip())
    return out


def _field_text(f: fem.Field) -> str:
    if f.name == "combination":
        return " + ".join(_field_text(g) for _, g in f.params["terms"])
    if not f.params:
        return f.name
    args = ", ".join(f"{k}={v!r}" for k, v in sorted(f.params.items()))
    return f"{f.name}({args})"


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    dim: int = 1
    eps: float = 2.0**-4
    a0: str = "eps^2"
    coeff_kind: str = "periodic"
    seed: int = 1
    region: tuple = (0.0, 1.0)
    inclusion: tuple = (0.25, 0.75)
    h: float = 2.0**-8
    H_list: tuple = (2.0**-2, 2.0**-3, 2.0**-4)
    k_list: tuple = (2,)
    tau: float = 2.0**-7
    T: float = 0.25
    scheme: str = "midpoint"
    u0: fem.Field = field(default_factory=lambda: fem.make_field("zero"))
    v0: fem.Field = field(default_factory=lambda: fem.make_field("zero"))
    f: fem.Field = field(default_factory=lambda: fem.make_field("zero"))
    norms: tuple = ("l2", "weighted_l2")
    weighted: bool = False
    formulation: str = "galerkin"
    v0_projection: str = "elliptic"
    eps_list: tuple = (2.0**-3, 2.0**-4, 2.0**-5, 2.0**-6)
    a0_list: tuple = (0.25,)
    cell_n: int = 64
    snapshot_times: tuple = ()
    output: str = "out"

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------------
    def a0_value(self, eps: float | None = None) -> float:
        """a0 for the given eps (default: self.eps)."""
        eps = self.eps if eps is None else eps
        m = _A0_POWER.match(self.a0)
        if m:
            return eps ** float(m.group(1))
        return parse_number(self.a0)

    def fine_mesh(self) -> TensorMesh:
        return build_mesh(self.dim, _inverse_power(self.h, "mesh.h"))

    def coarse_meshes(self) -> list[TensorMesh]:
        return [build_mesh(self.dim, _inverse_power(H, "lod.H_list")) for H in self.H_list]

    def coefficient(self, mesh: TensorMesh | None = None, eps: float | None = None, a0: float | None = None) -> Coefficient:
        mesh = self.fine_mesh() if mesh is None else mesh
        eps = self.eps if eps is None else eps
        a0 = self.a0_value(eps) if a0 is None else a0
        if self.coeff_kind == "constant":
            return constant(mesh, a0)
        if self.coeff_kind == "periodic":
            return periodic_inclusion(mesh, eps, a0, inclusion=self.inclusion)
        return random_checkerboard(mesh, eps, a0, self.seed, region=self.region)

    def steps(self) -> int:
        return num_steps(self.T, self.tau)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # ------------------------------------------------------------------
    def validate(self) -> None:
        if self.dim not in (1, 2):
            raise ConfigError(f"dim must be 1 or 2, got {self.dim}")
        if self.coeff_kind not in COEFF_KINDS:
            raise ConfigError(f"coeff.kind must be one of {COEFF_KINDS}, got {self.coeff_kind!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"time.scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.formulation not in ("galerkin", "petrov_galerkin"):
            raise ConfigError(f"lod.formulation must be galerkin or petrov_galerkin, got {self.formulation!r}")
        if self.v0_projection not in ("elliptic", "l2"):
            raise ConfigError(f"lod.v0_projection must be elliptic or l2, got {self.v0_projection!r}")
        bad = [n for n in self.norms if n not in NORMS]
        if bad or not self.norms:
            raise ConfigError(f"norms must be a nonempty subset of {NORMS}, got {list(self.norms)}")
        if self.a0_value() <= 0:
            raise ConfigError("a0 must be positive")
        _inverse_power(self.h, "mesh.h")
        self.check_eps(self.eps)
        for H in self.H_list:
            nH = _inverse_power(H, "lod.H_list")
            if nH < 2 or _inverse_power(self.h, "mesh.h") % nH:
                raise ConfigError(f"coarse H={H} must be a multiple of h={self.h} and at most 1/2")
        if any(k < 1 for k in self.k_list):
            raise ConfigError("lod.k_list entries must be >= 1")
        try:
            self.steps()
        except ValueError as exc:
            raise ConfigError(f"time.T / time.tau: {exc}") from None
        if self.cell_n < 2 or self.cell_n & (self.cell_n - 1):
            raise ConfigError("hom.cell_n must be a power of two >= 2")
        for t in self.snapshot_times:
            if not 0 <= t <= self.T:
                raise ConfigError(f"snapshot time {t} outside [0, T]")

    def check_eps(self, eps: float) -> None:
        if self.coeff_kind == "constant":
            return
        unit = eps / 4 if self.coeff_kind == "periodic" else eps
        q = unit / self.h
        if q < 1 - 1e-12 or abs(q - round(q)) > 1e-9:
            need = "eps/4" if self.coeff_kind == "periodic" else "eps"
            raise ConfigError(f"mesh.h={self.h} must divide {need} (eps={eps}); refine mesh.h")

    # ------------------------------------------------------------------
    def to_items(self) -> list[tuple[str, str]]:
        """(key, text) pairs in the config file syntax, in a fixed order."""
        fl = lambda xs: ",".join(repr(float(x)) for x in xs)
        return [
            ("dim", str(self.dim)),
            ("eps", repr(self.eps)),
            ("a0", self.a0),
            ("coeff.kind", self.coeff_kind),
            ("coeff.seed", str(self.seed)),
            ("coeff.region", fl(self.region)),
            ("coeff.inclusion", fl(self.inclusion)),
            ("mesh.h", repr(self.h)),
            ("lod.H_list", fl(self.H_list)),
            ("lod.k_list", ",".join(str(k) for k in self.k_list)),
            ("lod.weighted", str(self.weighted).lower()),
            ("lod.formulation", self.formulation),
            ("lod.v0_projection", self.v0_projection),
            ("time.tau", repr(self.tau)),
            ("time.T", repr(self.T)),
            ("time.scheme", self.scheme),
            ("field.u0", _field_text(self.u0)),
            ("field.v0", _field_text(self.v0)),
            ("field.f", _field_text(self.f)),
            ("norms", ",".join(self.norms)),
            ("hom.eps_list", fl(self.eps_list)),
            ("hom.a0_list", fl(self.a0_list)),
            ("hom.cell_n", str(self.cell_n)),
            ("output.snapshot_times", fl(self.snapshot_times)),
            ("output.dir", self.output),
        ]

    def echo(self) -> str:
        """One-line summary used as the CSV header comment."""
        return "config: " + "; ".join(f"{k}={v}" for k, v in self.to_items())


def _inverse_power(x: float, key: str) -> int:
    if not x > 0:
        raise ConfigError(f"{key} must be positive, got {x}")
    n = 1.0 / x
    k = round(math.log2(n))
    if k < 1 or abs(n - 2**k) > 1e-9 * n:
        raise ConfigError(f"{key}={x} must be 2^-k with k >= 1")
    return 2**k


def _range_pair(text: str) -> tuple:
    vals = parse_list(text)
    if len(vals) != 2 or not vals[0] < vals[1]:
        raise ConfigError(f"expected 'lo,hi' with lo < hi, got {text!r}")
    return tuple(vals)


_PARSERS = {
    "dim": ("dim", lambda s: int(parse_number(s))),
    "eps": ("eps", parse_number),
    "a0": ("a0", lambda s: s.strip()),
    "coeff.kind": ("coeff_kind", lambda s: s.strip()),
    "coeff.seed": ("seed", lambda s: int(s.strip())),
    "coeff.region": ("region", _range_pair),
    "coeff.inclusion": ("inclusion", _range_pair),
    "mesh.h": ("h", parse_number),
    "lod.H_list": ("H_list", lambda s: tuple(parse_list(s))),
    "lod.k_list": ("k_list", lambda s: tuple(parse_int_list(s))),
    "lod.weighted": ("weighted", parse_bool),
    "lod.formulation": ("formulation", lambda s: s.strip()),
    "lod.v0_projection": ("v0_projection", lambda s: s.strip()),
    "time.tau": ("tau", parse_number),
    "time.T": ("T", parse_number),
    "time.scheme": ("scheme", lambda s: s.strip()),
    "field.u0": ("u0", parse_field),
    "field.v0": ("v0", parse_field),
    "field.f": ("f", parse_field),
    "norms": ("norms", lambda s: tuple(t.strip() for t in s.split(",") if t.strip())),
    "hom.eps_list": ("eps_list", lambda s: tuple(parse_list(s))),
    "hom.a0_list": ("a0_list", lambda s: tuple(parse_list(s))),
    "hom.cell_n": ("cell_n", lambda s: int(parse_number(s))),
    "output.snapshot_times": ("snapshot_times", lambda s: tuple(parse_list(s)) if s.strip() else ()),
    "output.dir": ("output", lambda s: s.strip()),
}
KEYS = tuple(_PARSERS)


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse config text; ``#`` starts a comment. Keyword overrides win."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}; known keys: {', '.join(KEYS)}")
        name, parse = _PARSERS[key]
        if name in values:
            raise ConfigError(f"line {lineno}: key {key!r} given twice")
        try:
            values[name] = parse(val)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno} ({key}): {exc}") from None
    values.update(overrides)
    return ExperimentConfig(**values)


def load_config(path, **overrides) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), **overrides)

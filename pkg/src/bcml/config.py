"""Experiment configuration: a sectioned key = value text file.

Sections and keys (all optional unless noted)::

    [run]          pipeline = scalar | solenoidal (required), seed, out
    [manifold]     kind = interval | rect2d (scalar pipeline), then n, length, speed
                   or nx, ny, lx, ly, factor
    [forward]      T or T_factor (multiple of the diameter), cfl_safety, stride, snap, dt
    [reconstruct]  tol_psd, tol_rank, tol_offdiag, max_sweeps, s_step, cluster_eps,
                   boundary_eps, cond_cap, quadrature, rule, jd_stall
    [checks]       s_values (comma list), pushforward_patch
    [solenoidal]   sizes (comma list), face_a, face_b, calkin_k, f, ds_factor, tol_rank
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from . import geometry
from .pipeline import ForwardParams, ReconParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SolenoidalParams:
    sizes: tuple[int, ...] = (8, 12, 16)
    face_a: str = "x0"
    face_b: str = "y0"
    calkin_k: int = 10
    f: str = "x"
    ds_factor: float = 0.25
    tol_rank: float = 1e-6


@dataclass(frozen=True)
class ExperimentConfig:
    pipeline: str
    text: str  # the file as read, echoed into manifests
    seed: int = 0
    out: str | None = None
    manifold: dict = field(default_factory=dict)
    forward: ForwardParams | None = None
    recon: ReconParams = ReconParams()
    s_values: tuple[float, ...] = (0.3, 0.5, 0.7)
    pushforward_patch: str | None = None
    solenoidal: SolenoidalParams = SolenoidalParams()
    diameter: float | None = None

    def build_manifold(self) -> geometry.DiscreteManifold:
        return geometry.build_manifold(self.manifold)


_INT = {"n", "nx", "ny", "nz", "stride", "max_sweeps", "calkin_k", "seed"}
_FLOAT = {"length", "lx", "ly", "lz", "T", "T_factor", "cfl_safety", "dt", "tol_psd", "tol_rank",
          "tol_offdiag", "s_step", "cluster_eps", "boundary_eps", "cond_cap", "jd_stall", "ds_factor"}
_POSITIVE = {"tol_psd", "tol_rank", "tol_offdiag", "cluster_eps", "boundary_eps", "s_step", "cond_cap",
             "cfl_safety", "dt", "T", "T_factor", "ds_factor"}
_KNOWN = {
    "run": {"pipeline", "seed", "out"},
    "manifold": {"kind", "n", "length", "speed", "nx", "ny", "lx", "ly", "factor"},
    "forward": {"T", "T_factor", "cfl_safety", "stride", "snap", "dt"},
    "reconstruct": {"tol_psd", "tol_rank", "tol_offdiag", "max_sweeps", "s_step", "cluster_eps",
                    "boundary_eps", "cond_cap", "quadrature", "rule", "jd_stall"},
    "checks": {"s_values", "pushforward_patch"},
    "solenoidal": {"sizes", "face_a", "face_b", "calkin_k", "f", "ds_factor", "tol_rank"},
}


def _value(section: str, key: str, raw: str):
    try:
        if key in _INT:
            v = int(raw)
        elif key in _FLOAT:
            v = float(raw)
        else:
            return raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None
    if key in _POSITIVE and not v > 0:
        raise ConfigError(f"[{section}] {key}: must be > 0, got {v}")
    return v


def _section(cp: configparser.ConfigParser, name: str) -> dict:
    if not cp.has_section(name):
        return {}
    out = {}
    for key, raw in cp.items(name):
        if key not in _KNOWN[name]:
            raise ConfigError(f"[{name}] {key}: unknown key")
        out[key] = _value(name, key, raw)
    return out


def parse(text: str, check_diameter: bool = True) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (T)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for name in cp.sections():
        if name not in _KNOWN:
            raise ConfigError(f"[{name}]: unknown section")
    run = _section(cp, "run")
    pipeline = run.get("pipeline")
    if pipeline not in ("scalar", "solenoidal"):
        raise ConfigError(f"[run] pipeline: expected scalar or solenoidal, got {pipeline!r}")
    kw = dict(pipeline=pipeline, text=text, seed=int(run.get("seed", 0)), out=run.get("out"))
    if pipeline == "solenoidal":
        so = _section(cp, "solenoidal")
        if "sizes" in so:
            try:
                so["sizes"] = tuple(int(v) for v in so["sizes"].split(","))
            except ValueError:
                raise ConfigError("[solenoidal] sizes: expected a comma separated list of integers") from None
            if any(n < 3 for n in so["sizes"]):
                raise ConfigError("[solenoidal] sizes: every size must be at least 3")
        return ExperimentConfig(solenoidal=SolenoidalParams(**so), **kw)

    man = _section(cp, "manifold")
    if man.get("kind") not in ("interval", "rect2d"):
        raise ConfigError(f"[manifold] kind: expected interval or rect2d, got {man.get('kind')!r}")
    try:
        M = geometry.build_manifold(man)
    except (KeyError, geometry.GeometryError) as exc:
        raise ConfigError(f"[manifold] {exc}") from None
    diam = geometry.diameter(M)
    fw = _section(cp, "forward")
    if "T" in fw:
        T = fw.pop("T")
        fw.pop("T_factor", None)
    elif "T_factor" in fw:
        T = fw.pop("T_factor") * diam
    else:
        raise ConfigError("[forward] T: required (or T_factor)")
    if check_diameter and T <= diam:
        raise ConfigError(f"[forward] T: must exceed the diameter {diam:.6g}, got {T}")
    if fw.get("snap", "dt") not in ("dt", "T"):
        raise ConfigError(f"[forward] snap: expected dt or T, got {fw['snap']!r}")
    rc = _section(cp, "reconstruct")
    if rc.get("quadrature", "leapfrog") not in ("leapfrog", "trapezoid"):
        raise ConfigError(f"[reconstruct] quadrature: unknown {rc['quadrature']!r}")
    if rc.get("rule", "upper") not in ("upper", "lower"):
        raise ConfigError(f"[reconstruct] rule: unknown {rc['rule']!r}")
    ck = _section(cp, "checks")
    if "s_values" in ck:
        try:
            ck["s_values"] = tuple(float(v) for v in ck["s_values"].split(","))
        except ValueError:
            raise ConfigError("[checks] s_values: expected a comma separated list of numbers") from None
    return ExperimentConfig(manifold=man, forward=ForwardParams(T=T, **fw), recon=ReconParams(**rc),
                            diameter=diam, **ck, **kw)


def load(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse(p.read_text())

"""Flat ``section.key = value`` experiment configuration.

Values are numbers, words, comma-separated vectors, or matrices with rows
separated by ``;``.  ``#`` starts a comment.  Unknown or repeated keys are
errors, never silently ignored.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Schema or invariant violation in a configuration file."""


REQUIRED = object()

TASKS = ("simulate", "limit", "skeleton-ldp", "skeleton-mdp", "rate", "tail", "converge",
         "check-hypotheses", "bihari")


def _float(s):
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"not a number: {s!r}") from None


def _int(s):
    try:
        v = float(s)
    except ValueError:
        raise ConfigError(f"not an integer: {s!r}") from None
    if v != int(v):
        raise ConfigError(f"not an integer: {s!r}")
    return int(v)


def _bool(s):
    low = s.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _vec(s):
    parts = [p for p in s.replace(" ", "").split(",") if p]
    if not parts:
        raise ConfigError("empty vector")
    return tuple(_float(p) for p in parts)


def _mat(s):
    rows = [r for r in s.split(";") if r.strip()]
    out = tuple(_vec(r) for r in rows)
    if len({len(r) for r in out}) != 1:
        raise ConfigError(f"ragged matrix: {s!r}")
    return out


def _str(s):
    return s.strip()


def _choice(*options):
    def parse(s):
        s = s.strip()
        if s not in options:
            raise ConfigError(f"{s!r} is not one of {', '.join(options)}")
        return s
    parse.options = options
    return parse


# key -> (parser, default)
SCHEMA = {
    "problem.dim": (_int, 1),
    "problem.domain": (_choice("whole", "box", "ball", "polyhedron"), "whole"),
    "problem.domain_lo": (_vec, None),
    "problem.domain_hi": (_vec, None),
    "problem.domain_center": (_vec, None),
    "problem.domain_radius": (_float, None),
    "problem.domain_normals": (_mat, None),
    "problem.domain_offsets": (_vec, None),
    "problem.domain_interior": (_vec, None),
    "problem.x0": (_vec, (0.0,)),
    "problem.drift": (_choice("zero", "constant", "linear", "mean_field_ou", "tanh_interaction"), "zero"),
    "problem.drift_alpha": (_float, 1.0),
    "problem.drift_beta": (_float, 0.0),
    "problem.drift_scale": (_float, 1.0),
    "problem.drift_A": (_mat, ((0.0,),)),
    "problem.drift_B": (_mat, ((0.0,),)),
    "problem.drift_c": (_vec, (0.0,)),
    "problem.diffusion": (_choice("zero", "constant", "affine"), "constant"),
    "problem.diffusion_sigma": (_mat, ((1.0,),)),
    "problem.diffusion_s1": (_float, 0.0),
    "problem.diffusion_s2": (_float, 0.0),
    "problem.jump": (_choice("none", "jump_kernel"), "none"),
    "problem.jump_c0": (_vec, (1.0,)),
    "problem.jump_c1": (_float, 0.0),
    "problem.jump_c2": (_float, 0.0),
    "problem.marks": (_choice("finite", "interval"), "finite"),
    "problem.marks_values": (_vec, (1.0,)),
    "problem.marks_weights": (_vec, (1.0,)),
    "problem.marks_gamma": (_vec, None),
    "problem.marks_L1": (_vec, None),
    "problem.marks_L2": (_vec, None),
    "problem.marks_L3": (_vec, None),
    "problem.marks_a": (_float, 0.0),
    "problem.marks_b": (_float, 1.0),
    "problem.marks_density": (_float, 1.0),
    "problem.marks_nodes": (_int, 8),
    "problem.modulus": (_choice("linear", "logcap"), "linear"),
    "problem.modulus_L": (_float, 1.0),
    "problem.modulus_delta": (_float, 0.25),
    "problem.growth_L": (_float, 1.0),
    "problem.lipschitz_L": (_float, None),
    "perturbation.rho_b_coef": (_float, 0.0),
    "perturbation.rho_b_power": (_float, 1.0),
    "perturbation.rho_sigma_coef": (_float, 0.0),
    "perturbation.rho_sigma_power": (_float, 1.0),
    "perturbation.rho_G_coef": (_float, 0.0),
    "perturbation.rho_G_power": (_float, 1.0),
    "perturbation.h_b": (_choice("none", "unit", "sin"), "none"),
    "perturbation.h_sigma": (_choice("none", "unit", "sin"), "none"),
    "perturbation.h_G": (_choice("none", "unit", "sin"), "none"),
    "run.T": (_float, REQUIRED),
    "run.dt": (_float, REQUIRED),
    "run.epsilon": (_vec, (0.1,)),
    "run.theta": (_float, 0.25),
    "run.particles": (_int, 1),
    "run.replicas": (_int, 1),
    "run.seed": (_int, REQUIRED),
    "task.name": (_choice(*TASKS), REQUIRED),
    "task.regime": (_choice("ldp", "mdp"), "ldp"),
    "task.event": (_choice("halfspace", "point", "supnorm"), "halfspace"),
    "task.event_a": (_vec, (1.0,)),
    "task.event_c": (_float, 1.0),
    "task.event_target": (_vec, (1.0,)),
    "task.event_delta": (_float, 1.0),
    "task.event_relative": (_bool, True),
    "task.control_cells": (_int, 10),
    "task.restarts": (_int, 3),
    "task.rounds": (_int, 4),
    "task.penalty0": (_float, 10.0),
    "task.maxiter": (_int, 100),
    "task.half": (_bool, False),
    "task.use_jumps": (_bool, True),
    "task.phi": (_vec, None),
    "task.phi_file": (_str, None),
    "task.psi": (_float, None),
    "task.psi_file": (_str, None),
    "task.project_deviation": (_bool, False),
    "task.mode": (_choice("limit", "rate", "controlled"), "limit"),
    "task.min_hits": (_int, 10),
    "task.samples": (_int, 200),
    "task.c0_L": (_float, 1.0),
    "task.c0_q": (_float, 0.0),
    "task.bihari_C": (_float, 1.0),
    "task.bihari_q": (_float, 1.0),
    "task.bihari_modulus": (_choice("linear", "logcap", "power"), "linear"),
    "task.bihari_L": (_float, 1.0),
    "task.bihari_delta": (_float, 0.25),
    "task.bihari_power": (_float, 0.5),
    "task.bihari_coef": (_float, 1.0),
    "task.bihari_points": (_int, 1001),
    "output.dir": (_str, "out"),
    "output.prefix": (_str, ""),
}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, tuple) and v and isinstance(v[0], tuple):
        return "; ".join(_format(r) for r in v)
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    return str(v)


@dataclass
class ExperimentConfig:
    values: dict
    source: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    def canonical_text(self) -> str:
        """Every resolved key in schema order; parses back to the same config."""
        lines = []
        for key in SCHEMA:
            v = self.values.get(key)
            if v is None or v == "":
                continue
            lines.append(f"{key} = {_format(v)}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, **kv):
        vals = dict(self.values)
        vals.update(kv)
        return ExperimentConfig(vals, self.source)


def parse_text(text: str, source: str | None = None) -> ExperimentConfig:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, val = (p.strip() for p in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: key {key!r} given twice")
        if not val:
            raise ConfigError(f"line {lineno}: key {key!r} has no value")
        raw[key] = val
    values = {}
    for key, (parser, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = parser(raw[key])
            except ConfigError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        elif default is REQUIRED:
            raise ConfigError(f"missing required key {key!r}")
        else:
            values[key] = default
    cfg = ExperimentConfig(values, source)
    check_invariants(cfg)
    return cfg


def load(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_text(text, str(p))


def check_invariants(cfg: ExperimentConfig):
    v = cfg.values
    T, dt = v["run.T"], v["run.dt"]
    if not (T > 0 and dt > 0):
        raise ConfigError("run.T and run.dt must be positive")
    n = round(T / dt)
    if n < 1 or abs(n * dt - T) > 1e-12 * max(1.0, T):
        raise ConfigError(f"run.dt={dt} does not divide run.T={T}")
    if v["run.particles"] < 1 or v["run.replicas"] < 1:
        raise ConfigError("run.particles and run.replicas must be >= 1")
    for e in v["run.epsilon"]:
        if not 0 <= e <= 1:
            raise ConfigError("run.epsilon values must lie in [0, 1]")
    if not 0 <= v["run.theta"] < 0.5:
        raise ConfigError("run.theta must lie in [0, 1/2)")
    d = v["problem.dim"]
    if d < 1:
        raise ConfigError("problem.dim must be >= 1")
    if len(v["problem.x0"]) not in (1, d):
        raise ConfigError("problem.x0 must have 1 or dim entries")
    dom = v["problem.domain"]
    need = {"box": ("problem.domain_lo", "problem.domain_hi"),
            "ball": ("problem.domain_center", "problem.domain_radius"),
            "polyhedron": ("problem.domain_normals", "problem.domain_offsets", "problem.domain_interior")}
    for key in need.get(dom, ()):
        if v[key] is None:
            raise ConfigError(f"domain {dom!r} needs {key}")
    cells = v["task.control_cells"]
    if cells < 1 or (v["task.name"] == "rate" and n % cells):
        raise ConfigError(f"task.control_cells={cells} must divide the {n} time steps")
    for key in ("task.phi_file", "task.psi_file"):
        if v[key] is not None and not Path(_resolve(cfg, v[key])).exists():
            raise ConfigError(f"{key}: file {v[key]!r} not found")


def _resolve(cfg, path):
    p = Path(path)
    if p.is_absolute() or cfg.source is None:
        return p
    return Path(cfg.source).parent / p


def resolve_path(cfg, path):
    return _resolve(cfg, path)


def git_blob_hash(data: bytes) -> str:
    """Content hash in the format used for git blobs."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def manifest_text(cfg: ExperimentConfig, extra_inputs: dict | None = None,
                  outputs: dict | None = None) -> str:
    canon = cfg.canonical_text()
    inputs = {"config": git_blob_hash(canon.encode())}
    for name, path in (extra_inputs or {}).items():
        inputs[name] = git_blob_hash(Path(path).read_bytes())
    combined = "".join(f"{k} {h}\n" for k, h in sorted(inputs.items()))
    lines = ["# mvlevy run manifest: the resolved configuration below re-runs this experiment",
             f"# content_hash = {git_blob_hash(combined.encode())}"]
    lines += [f"# input {k} = {h}" for k, h in sorted(inputs.items())]
    lines += [f"# output {k} = {h}" for k, h in sorted((outputs or {}).items())]
    return "\n".join(lines) + "\n" + canon


# -------------------------------------------------------------- builders

def build_problem(cfg: ExperimentConfig):
    from .coefficients import (KernelCoefficients, PerturbationFamily, RhoSchedule,
                               diffusion_from_params, drift_from_params, jump_from_params,
                               modulus_from_params)
    from .dynamics import Problem
    from .geometry import Ball, Box, Polyhedron, WholeSpace
    from .jumps import JumpModel

    v = cfg.values
    d = v["problem.dim"]

    def vec(key):
        a = np.asarray(v[key], dtype=float)
        if a.shape == (1,) and d > 1:
            a = np.full(d, a[0])
        if a.shape != (d,):
            raise ConfigError(f"{key} must have {d} entries")
        return a

    try:
        dom = v["problem.domain"]
        if dom == "whole":
            domain = WholeSpace(d)
        elif dom == "box":
            domain = Box(vec("problem.domain_lo"), vec("problem.domain_hi"))
        elif dom == "ball":
            domain = Ball(vec("problem.domain_center"), v["problem.domain_radius"])
        else:
            domain = Polyhedron(np.asarray(v["problem.domain_normals"]), np.asarray(v["problem.domain_offsets"]),
                                vec("problem.domain_interior"))
        drift = drift_from_params(v["problem.drift"], d, alpha=v["problem.drift_alpha"],
                                  beta=v["problem.drift_beta"], scale=v["problem.drift_scale"],
                                  A=np.asarray(v["problem.drift_A"]), B=np.asarray(v["problem.drift_B"]),
                                  c=np.asarray(v["problem.drift_c"]))
        diffusion = diffusion_from_params(v["problem.diffusion"], d, sigma=np.asarray(v["problem.diffusion_sigma"]),
                                          s1=v["problem.diffusion_s1"], s2=v["problem.diffusion_s2"])
        jump = jump_from_params(v["problem.jump"], d, c0=np.asarray(v["problem.jump_c0"]),
                                c1=v["problem.jump_c1"], c2=v["problem.jump_c2"])
        jump_model = None
        if jump is not None:
            opt = {k: v[f"problem.marks_{k}"] for k in ("gamma", "L1", "L2", "L3")
                   if v[f"problem.marks_{k}"] is not None}
            if v["problem.marks"] == "finite":
                jump_model = JumpModel.finite(v["problem.marks_values"], v["problem.marks_weights"], **opt)
            else:
                jump_model = JumpModel.interval(v["problem.marks_a"], v["problem.marks_b"],
                                                v["problem.marks_density"], v["problem.marks_nodes"], **opt)
        modulus = modulus_from_params(v["problem.modulus"], L=v["problem.modulus_L"],
                                      delta=v["problem.modulus_delta"])
        coeffs = KernelCoefficients(d, drift, diffusion, jump, modulus, v["problem.growth_L"],
                                    v["problem.lipschitz_L"])
        family = PerturbationFamily(
            RhoSchedule(v["perturbation.rho_b_coef"], v["perturbation.rho_b_power"]),
            RhoSchedule(v["perturbation.rho_sigma_coef"], v["perturbation.rho_sigma_power"]),
            RhoSchedule(v["perturbation.rho_G_coef"], v["perturbation.rho_G_power"]),
            v["perturbation.h_b"], v["perturbation.h_sigma"], v["perturbation.h_G"])
        return Problem(domain, coeffs, jump_model, family, vec("problem.x0"))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None

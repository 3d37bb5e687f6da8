"""Pipeline configuration, read from one JSON file.

Precedence: built-in defaults < JSON config < command-line flags.

Keys (all optional)::

    {
      "inputs": {"volume": path, "z": path, "f": path, "m": path, "u": path},
      "grid": {"n0": 16, "n1": 64, "n2": 64},          # synth only
      "reg": {"lambda0": 0.005, "lambda1": 0.05},       # c/100 and c/10, c = 0.5
      "solver": {"rel_tol": 0.02, "max_iters": 2000, "restart": 30,
                 "preconditioner": "none", "reorthogonalize": false},
      "mode": "spatiotemporal",                          # or "framewise"
      "trajectory": {"seed_frame": 0, "threshold": 0.5, "step": 10.0,
                     "start": 0, "stop": null},
      "render": {"max_magnitude": "auto", "per_frame": false},
      "preprocess": {"sigma": 2.0, "threshold": 0.3, "voxel_size": [1, 1, 1],
                     "reg_weight": 0.01, "grid_n1": 64, "grid_n2": 64},
      "synth": {...SynthSpec fields...},
      "out": "out"
    }
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .model import ValidationError
from .preprocess import FitConfig, PreprocessConfig
from .solver import SolverConfig
from .synth import SynthSpec
from .variational import RegParams

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TrajectoryConfig:
    seed_frame: int = 0
    threshold: float = 0.5
    step: float = 10.0
    start: int = 0
    stop: int | None = None


@dataclass(frozen=True)
class RenderConfig:
    max_magnitude: float | str = "auto"
    per_frame: bool = False

    def __post_init__(self):
        if self.max_magnitude != "auto" and not (isinstance(self.max_magnitude, (int, float)) and self.max_magnitude > 0):
            raise ValidationError("max_magnitude must be 'auto' or a positive number")


@dataclass(frozen=True)
class PipelineConfig:
    inputs: dict = field(default_factory=dict)
    grid: tuple[int, int, int] = (16, 64, 64)
    lambda0: float = 0.005
    lambda1: float = 0.05
    solver: SolverConfig = SolverConfig()
    mode: str = "spatiotemporal"
    trajectory: TrajectoryConfig = TrajectoryConfig()
    render: RenderConfig = RenderConfig()
    preprocess: PreprocessConfig = PreprocessConfig()
    synth: SynthSpec = SynthSpec()
    out: str = "out"

    def __post_init__(self):
        if self.mode not in ("spatiotemporal", "framewise"):
            raise ValidationError(f"mode must be spatiotemporal or framewise, got {self.mode!r}")
        self.reg  # validates lambda0/lambda1 before any compute

    @property
    def reg(self) -> RegParams:
        return RegParams(self.lambda0, self.lambda1)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)} | {"reg"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        if "inputs" in d:
            kw["inputs"] = dict(d["inputs"])
        if "grid" in d:
            g = d["grid"]
            kw["grid"] = (int(g["n0"]), int(g["n1"]), int(g["n2"])) if isinstance(g, dict) else tuple(int(x) for x in g)
        reg = d.get("reg", {})
        for k in ("lambda0", "lambda1"):
            if k in reg:
                kw[k] = float(reg[k])
            if k in d:
                kw[k] = float(d[k])
        try:
            if "solver" in d:
                kw["solver"] = SolverConfig(**d["solver"])
            if "trajectory" in d:
                kw["trajectory"] = TrajectoryConfig(**d["trajectory"])
            if "render" in d:
                kw["render"] = RenderConfig(**d["render"])
            if "preprocess" in d:
                p = dict(d["preprocess"])
                fit = FitConfig(**{k: p.pop(k) for k in ("reg_weight", "grid_n1", "grid_n2", "fallback_height") if k in p})
                if "voxel_size" in p:
                    p["voxel_size"] = tuple(float(x) for x in p["voxel_size"])
                kw["preprocess"] = PreprocessConfig(fit=fit, **p)
        except TypeError as exc:
            raise ValidationError(str(exc)) from None
        if "synth" in d:
            kw["synth"] = SynthSpec.from_dict(d["synth"])
        for k in ("mode", "out"):
            if k in d:
                kw[k] = d[k]
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def with_overrides(self, **kw) -> "PipelineConfig":
        solver_keys = {"rel_tol", "max_iters", "restart"}
        solver = {k: v for k, v in kw.items() if k in solver_keys and v is not None}
        traj = {"step": kw.pop("step")} if kw.get("step") is not None else {}
        rest = {k: v for k, v in kw.items() if k not in solver_keys and k != "step" and v is not None}
        cfg = self
        if solver:
            cfg = replace(cfg, solver=replace(cfg.solver, **solver))
        if traj:
            cfg = replace(cfg, trajectory=replace(cfg.trajectory, **traj))
        return replace(cfg, **rest) if rest else cfg

    def to_dict(self) -> dict:
        s = asdict(self.solver)
        s.pop("initial_guess")
        pre = self.preprocess
        return {
            "inputs": dict(self.inputs),
            "grid": {"n0": self.grid[0], "n1": self.grid[1], "n2": self.grid[2]},
            "reg": {"lambda0": self.lambda0, "lambda1": self.lambda1},
            "solver": s,
            "mode": self.mode,
            "trajectory": asdict(self.trajectory),
            "render": asdict(self.render),
            "preprocess": {"sigma": pre.sigma, "threshold": pre.threshold, "voxel_size": list(pre.voxel_size),
                           "reg_weight": pre.fit.reg_weight, "grid_n1": pre.fit.grid_n1,
                           "grid_n2": pre.fit.grid_n2, "fallback_height": pre.fit.fallback_height},
            "synth": self.synth.to_dict(),
            "out": self.out,
        }

"""Run configuration: dotted keys, `key = value` files, --set overrides."""

from __future__ import annotations

import os

from .quadrature import QuadConfig
from .solver import SolverConfig
from .postprocess import TraceParams

__all__ = ["Config", "DEFAULTS", "default_workers"]

DEFAULTS: dict[str, object] = {
    "quad.regular_order": 6,
    "quad.duffy_points": 6,
    "quad.near_duffy_points": 8,
    "quad.near_outer_order": 8,
    "quad.eta": 1.2,
    "quad.bisect_depth": 3,
    "quad.bisect_trigger": 0.3,
    "assembly.precision": "double",
    "solver.restart": 100,
    "solver.rel_tol": 1e-8,
    "solver.max_iters": 2000,
    "solver.row_equilibrate": True,
    "solver.verbose": False,
    "trace.rel_tol": 1e-6,
    "trace.h_min_frac": 1e-6,
    "trace.h_max_frac": 0.05,
    "trace.surface_tol_frac": 0.1,
    "trace.e_floor": 0.0,
    "trace.max_length_frac": 4.0,
    "trace.bbox_factor": 1.5,
    "trace.top_k": 4,
    "trace.start_offset_frac": 0.25,
}


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


class Config:
    """Immutable-ish view over DEFAULTS with file and --set overrides."""

    def __init__(self, values: dict | None = None):
        self.values = dict(DEFAULTS)
        if values:
            for k, v in values.items():
                if k not in DEFAULTS:
                    raise KeyError(f"unknown config key {k!r}")
                self.values[k] = v

    @classmethod
    def load(cls, path=None, overrides=()) -> "Config":
        cfg = cls()
        if path is not None:
            with open(path, "r", encoding="utf-8") as fh:
                for lineno, raw in enumerate(fh, start=1):
                    line = raw.split("#", 1)[0].strip()
                    if not line:
                        continue
                    if "=" not in line:
                        raise ValueError(f"{path}:{lineno}: expected 'key = value'")
                    key, val = (s.strip() for s in line.split("=", 1))
                    cfg.set(key, val)
        for item in overrides:
            if "=" not in item:
                raise ValueError(f"--set needs key=value, got {item!r}")
            key, val = (s.strip() for s in item.split("=", 1))
            cfg.set(key, val)
        return cfg

    def set(self, key: str, raw_value: str):
        if key not in DEFAULTS:
            raise KeyError(f"unknown config key {key!r}")
        self.values[key] = _coerce(key, str(raw_value))

    def __getitem__(self, key: str):
        return self.values[key]

    def quad(self) -> QuadConfig:
        return QuadConfig(
            regular_order=self["quad.regular_order"],
            duffy_points=self["quad.duffy_points"],
            near_duffy_points=self["quad.near_duffy_points"],
            near_outer_order=self["quad.near_outer_order"],
            eta=self["quad.eta"],
            bisect_depth=self["quad.bisect_depth"],
            bisect_trigger=self["quad.bisect_trigger"],
        )

    def solver(self, workers: int = 1) -> SolverConfig:
        return SolverConfig(
            restart=self["solver.restart"],
            rel_tol=self["solver.rel_tol"],
            max_iters=self["solver.max_iters"],
            row_equilibrate=self["solver.row_equilibrate"],
            verbose=self["solver.verbose"],
            workers=workers,
        )

    def trace_params(self) -> TraceParams:
        return TraceParams(
            rel_tol=self["trace.rel_tol"],
            h_min_frac=self["trace.h_min_frac"],
            h_max_frac=self["trace.h_max_frac"],
            surface_tol_frac=self["trace.surface_tol_frac"],
            e_floor=self["trace.e_floor"],
            max_length_frac=self["trace.max_length_frac"],
            bbox_factor=self["trace.bbox_factor"],
        )

    def snapshot(self) -> dict:
        return dict(self.values)


def default_workers() -> int:
    env = os.environ.get("HVBEM_WORKERS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1

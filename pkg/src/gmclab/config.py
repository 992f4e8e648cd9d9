"""Process-wide numerical settings, overridable from run configs.

Keys use dotted names (``field.quad_tol``) so a flat key-value config file
can address them directly.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, fields


@dataclass
class Settings:
    quad_tol: float = 1e-9          # field.quad_tol
    psd_jitter_min: float = 1e-12   # field.psd_jitter_min
    psd_jitter_max: float = 1e-8    # field.psd_jitter_max
    exact_max_points: int = 4096    # field.exact_max_points
    grid_resolution: float = 1 / 24  # lqft.grid_resolution (chart spacing)
    mc_samples: int = 2000          # lqft.mc_samples


settings = Settings()

KEYS = {
    "field.quad_tol": "quad_tol",
    "field.psd_jitter_min": "psd_jitter_min",
    "field.psd_jitter_max": "psd_jitter_max",
    "field.exact_max_points": "exact_max_points",
    "lqft.grid_resolution": "grid_resolution",
    "lqft.mc_samples": "mc_samples",
}


def _coerce(name, value):
    typ = {f.name: f.type for f in fields(Settings)}[name]
    return int(value) if typ in (int, "int") else float(value)


def apply(overrides: dict) -> dict:
    """Apply dotted-key overrides; unknown keys are returned untouched."""
    rest = {}
    for k, v in overrides.items():
        if k in KEYS:
            setattr(settings, KEYS[k], _coerce(KEYS[k], v))
        else:
            rest[k] = v
    return rest


def snapshot() -> dict:
    return {k: getattr(settings, attr) for k, attr in KEYS.items()}


@contextlib.contextmanager
def override(**kw):
    """Temporarily set attributes on :data:`settings` (attribute names)."""
    old = {k: getattr(settings, k) for k in kw}
    try:
        for k, v in kw.items():
            setattr(settings, k, v)
        yield settings
    finally:
        for k, v in old.items():
            setattr(settings, k, v)

"""Quasi-static tactile plant.

Both fingers of the parallel-jaw gripper see the same patch. At aperture
``u`` each gel surface sits at ``z_gel(u) = max(depth) + (u - u0) / 2`` in the
fingertip frame, where ``u0`` is the aperture at first touch, so closing the
gripper lowers the gel into the surface. Penetration is
``max(0, depth - z_gel)`` per cell and the normal force is
``k * sum(penetration) * cell_area``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PlantConfig
from .errors import ForceLimitError, PhytacError
from .geometry import ContactPatch


@dataclass(frozen=True)
class Material:
    texture_class: str
    friction_mu: float
    stiffness_k: float
    texture_amplitude: float


def material_for(texture_class: str, friction_mu: float, config: PlantConfig) -> Material:
    return Material(texture_class, float(friction_mu), float(config.stiffness_k[texture_class]),
                    float(config.texture_amplitude[texture_class]))


@dataclass
class PlantState:
    aperture_u: float
    normal_force: float
    slipping: bool
    imprint: np.ndarray
    clamped: bool = False


def _gel_height(patch: ContactPatch, aperture_u: float) -> float:
    return float(patch.depth_map.max()) + 0.5 * (aperture_u - patch.contact_aperture)


def penetration(patch: ContactPatch, aperture_u: float) -> np.ndarray:
    return np.maximum(0.0, patch.depth_map - _gel_height(patch, aperture_u))


def _raw_force(patch, aperture_u, material) -> float:
    return float(material.stiffness_k * penetration(patch, aperture_u).sum() * patch.cell_area)


def contact_force(patch: ContactPatch, aperture_u: float, config: PlantConfig, material: Material) -> float:
    if not 0.0 <= aperture_u <= config.aperture_max:
        raise ValueError(f"aperture {aperture_u} outside [0, {config.aperture_max}]")
    force = _raw_force(patch, aperture_u, material)
    if force > config.force_max:
        raise ForceLimitError(f"force limit: {force:.3f} N > {config.force_max} N")
    return force


def texture_pattern(texture_class: str, shape, w: float, h: float) -> np.ndarray:
    """Fixed sensor-plane modulation in [-1, 1] for each texture class."""
    rows, cols = shape
    x = -w / 2 + (np.arange(cols) + 0.5) * w / cols
    y = -h / 2 + (np.arange(rows) + 0.5) * h / rows
    gx, gy = np.meshgrid(x, y)
    if texture_class == "smooth":
        return np.zeros(shape)
    if texture_class == "fine_grain":
        return np.sin(2 * np.pi * gx / 3.0) * np.sin(2 * np.pi * gy / 3.0)
    if texture_class == "coarse_grain":
        return np.sin(2 * np.pi * gx / 6.0) * np.sin(2 * np.pi * gy / 6.0)
    if texture_class == "ridged":
        return np.sin(2 * np.pi * gx / 5.0)
    raise PhytacError(f"unknown texture class {texture_class!r}")


def render_imprint(patch: ContactPatch, aperture_u: float, config: PlantConfig, material: Material,
                   rng=None, noise_sigma: float | None = None) -> np.ndarray:
    pen = penetration(patch, aperture_u)
    img = config.baseline_intensity + config.imprint_gain * pen
    if material.texture_amplitude:
        pattern = texture_pattern(material.texture_class, pen.shape, patch.window_w, patch.window_h)
        img = img + material.texture_amplitude * pattern * np.tanh(pen / 0.1)
    img = np.clip(img, 0.0, 1.0)
    sigma = config.sensor_noise_sigma if noise_sigma is None else noise_sigma
    if sigma > 0:
        if rng is None:
            raise ValueError("sensor noise requested without an rng")
        img = np.clip(img + rng.normal(img.shape, scale=sigma), 0.0, 1.0)
    return img


def optimal_force(mass_kg: float, friction_mu: float, config: PlantConfig) -> float:
    """Two-finger friction balance with safety margin: s * m * g / (2 * mu)."""
    if mass_kg < 0 or friction_mu <= 0:
        raise ValueError("mass must be >= 0 and friction > 0")
    f = config.safety_s * mass_kg * config.gravity_g / (2.0 * friction_mu)
    if f > config.force_max:
        raise ForceLimitError(f"F* = {f:.3f} N exceeds force_max {config.force_max} N")
    return f


def is_slipping(force: float, mass_kg: float, friction_mu: float, config: PlantConfig) -> bool:
    return 2.0 * friction_mu * force < mass_kg * config.gravity_g


def optimal_aperture(patch: ContactPatch, mass_kg: float, material: Material, config: PlantConfig,
                     tol: float = 1e-6) -> float:
    """Aperture where the contact force equals F*, by bisection."""
    target = optimal_force(mass_kg, material.friction_mu, config)
    hi = min(patch.contact_aperture, config.aperture_max)
    if target == 0.0:
        return hi
    if _raw_force(patch, hi, material) >= target:
        raise PhytacError("optimal aperture not bracketed: force already above F* at first contact")
    lo = max(0.0, hi - 1.0)
    while _raw_force(patch, lo, material) < target:
        if lo == 0.0:
            raise PhytacError("optimal aperture not bracketed within the aperture range")
        lo = max(0.0, hi - 2.0 * (hi - lo))
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _raw_force(patch, mid, material) < target:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def initial_state(patch, aperture_u, mass_kg, material, config, rng=None) -> PlantState:
    force = contact_force(patch, aperture_u, config, material)
    return PlantState(aperture_u, force, is_slipping(force, mass_kg, material.friction_mu, config),
                      render_imprint(patch, aperture_u, config, material, rng))


def step(state: PlantState, delta_u: float, patch: ContactPatch, material: Material, mass_kg: float,
         config: PlantConfig, rng=None) -> PlantState:
    """Apply an aperture increment (command = achieved) and re-sense."""
    u = state.aperture_u + float(delta_u)
    clamped = not 0.0 <= u <= config.aperture_max
    u = min(max(u, 0.0), config.aperture_max)
    force = contact_force(patch, u, config, material)
    return PlantState(u, force, is_slipping(force, mass_kg, material.friction_mu, config),
                      render_imprint(patch, u, config, material, rng), clamped)

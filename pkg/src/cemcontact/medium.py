"""High-contrast permeability fields and the spectral weight derived from them."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grid import GridHierarchy

STYLES = ("A", "B", "random")
WEIGHT_MODES = ("simplified", "lagrange-sum")


@dataclass(frozen=True)
class PermeabilityField:
    """Piecewise-constant kappa, one value per fine element (row-major)."""

    values: np.ndarray
    kappa_m: float = 1.0
    kappa_I: float = 1.0

    @property
    def kappa_R(self) -> float:
        return self.kappa_I / self.kappa_m

    def as_image(self, g: GridHierarchy) -> np.ndarray:
        return self.values.reshape(g.ny_fine, g.nx_fine)


@dataclass(frozen=True)
class WeightField:
    values: np.ndarray
    mode: str


def _rect(img, x0, y0, w, hgt):
    img[max(y0, 0):max(y0 + hgt, 0), max(x0, 0):max(x0 + w, 0)] = True


def _inclusion_mask(g: GridHierarchy, style: str, rng: np.random.Generator) -> np.ndarray:
    """Boolean inclusion/channel mask on the fine elements (row index = y).

    Features are thin relative to a coarse cell so that every coarse
    element meets only a few disconnected high-contrast pieces.
    """
    n, r, nc = g.nx_fine, g.ratio, g.nc
    img = np.zeros((n, n), dtype=bool)
    thick = max(1, r // 4)
    if style == "A":
        # long horizontal channels, roughly one every other coarse row
        for cy in range(0, nc, 2):
            y0 = cy * r + int(rng.integers(1, max(2, r - thick)))
            x0 = int(rng.integers(0, max(1, n // 4)))
            length = int(rng.integers(n // 2, n + 1))
            _rect(img, x0, y0, min(length, n - x0), thick)
        n_inc = max(1, nc * nc // 8)
        size_max = max(1, r // 2)
    elif style == "B":
        n_inc = max(1, (nc * nc) // 2)
        size_max = max(1, r // 2)
    else:
        n_inc = max(1, (nc * nc) // 3)
        size_max = max(1, r)
    for _ in range(n_inc):
        w = int(rng.integers(1, size_max + 1))
        hgt = int(rng.integers(1, size_max + 1))
        x0 = int(rng.integers(0, n - w + 1))
        y0 = int(rng.integers(0, n - hgt + 1))
        _rect(img, x0, y0, w, hgt)
    return img


def generate_medium(g: GridHierarchy, style: str = "A", kappa_R: float = 1e3, seed: int = 0) -> PermeabilityField:
    """Two-valued field with matrix value 1 and inclusion value ``kappa_R``.

    The geometry depends only on ``(style, seed, grid)``; ``kappa_R`` only
    sets the inclusion value.
    """
    if style not in STYLES:
        raise ConfigError(f"unknown medium style {style!r}; expected one of {STYLES}")
    if not kappa_R >= 1.0:
        raise ConfigError(f"kappa_R must be >= 1, got {kappa_R}")
    mask = _inclusion_mask(g, style, np.random.default_rng(seed))
    values = np.where(mask.ravel(), float(kappa_R), 1.0)
    return PermeabilityField(values=values, kappa_m=1.0, kappa_I=float(kappa_R))


def compute_weight(g: GridHierarchy, kappa, mode: str = "simplified") -> WeightField:
    """Spectral weight kappa-tilde per fine element.

    ``simplified`` returns ``24 kappa / H**2``. ``lagrange-sum`` returns
    ``3 kappa sum_j |grad eta_j|^2`` with the four bilinear coarse basis
    functions of the owning coarse element evaluated at the fine-element
    centre.
    """
    k = np.asarray(getattr(kappa, "values", kappa), dtype=float)
    if mode == "simplified":
        return WeightField(24.0 * k / g.H ** 2, mode)
    if mode != "lagrange-sum":
        raise ConfigError(f"unknown weight mode {mode!r}; expected one of {WEIGHT_MODES}")
    e = np.arange(g.n_elements)
    ex, ey = e % g.nx_fine, e // g.nx_fine
    # local coordinates in [0, 1] of the fine-element centre within its coarse element
    s = ((ex % g.ratio) + 0.5) / g.ratio
    t = ((ey % g.ratio) + 0.5) / g.ratio
    # sum over the four bilinear bases of |grad eta|^2, times H^2
    grad_sq = 2.0 * ((1 - t) ** 2 + t ** 2) + 2.0 * ((1 - s) ** 2 + s ** 2)
    return WeightField(3.0 * k * grad_sq / g.H ** 2, mode)


def save_medium(field: PermeabilityField, g: GridHierarchy, path) -> None:
    path = Path(path)
    vals = field.as_image(g)
    with path.open("w") as fh:
        fh.write(f"{g.nx_fine} {g.ny_fine}\n")
        np.savetxt(fh, vals, fmt="%.17g")


def load_medium(path, g: GridHierarchy | None = None) -> PermeabilityField:
    """Read the text format ``nx ny`` followed by ``nx*ny`` row-major values."""
    path = Path(path)
    try:
        with path.open() as fh:
            header = fh.readline().split()
            values = np.array(fh.read().split(), dtype=float)
    except OSError as exc:
        raise ConfigError(f"cannot read medium file {path}: {exc}") from exc
    if len(header) != 2:
        raise ConfigError(f"{path}: header must be 'nx ny'")
    nx, ny = int(header[0]), int(header[1])
    if values.size != nx * ny:
        raise ConfigError(f"{path}: expected {nx * ny} values, found {values.size}")
    if g is not None and (nx, ny) != (g.nx_fine, g.ny_fine):
        raise ConfigError(f"{path}: medium is {nx}x{ny} but the grid is {g.nx_fine}x{g.ny_fine}")
    if np.any(values <= 0):
        raise ConfigError(f"{path}: permeability must be strictly positive")
    lo, hi = float(values.min()), float(values.max())
    return PermeabilityField(values=values, kappa_m=lo, kappa_I=hi)

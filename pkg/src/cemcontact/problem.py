"""Assembled Signorini problem data and the built-in source terms."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .assembly import assemble_load, assemble_mass, assemble_stiffness
from .errors import ConfigError
from .grid import BoundaryDecomposition, GridHierarchy
from .medium import PermeabilityField, WeightField, compute_weight


def f1(x, y):
    return -2.0 * x + 3.0 * y + np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)


def f2(x, y):
    return 0.5 - x ** 2 + y ** 2 + np.cos(1.5 * np.pi * x + np.pi * y)


def zero(x, y):
    return np.zeros_like(np.asarray(x, dtype=float))


_EXPR_NAMES = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "pi", "sinh", "cosh", "tanh",
                 "minimum", "maximum", "where")
}


def parse_source(spec):
    """``"f1"``, ``"f2"``, ``"0"``, a number, or an expression in ``x`` and ``y``."""
    if callable(spec):
        return spec
    if spec is None:
        return zero
    if isinstance(spec, (int, float)):
        value = float(spec)
        return lambda x, y: np.full(np.shape(x), value)
    text = str(spec).strip()
    if text == "f1":
        return f1
    if text == "f2":
        return f2
    try:
        code = compile(text, "<source>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse source expression {text!r}: {exc}") from exc
    unknown = set(code.co_names) - set(_EXPR_NAMES) - {"x", "y"}
    if unknown:
        raise ConfigError(f"source expression {text!r} uses unknown names {sorted(unknown)}")

    def func(x, y):
        env = dict(_EXPR_NAMES, x=np.asarray(x, dtype=float), y=np.asarray(y, dtype=float))
        return np.broadcast_to(eval(code, {"__builtins__": {}}, env), np.shape(x)).astype(float)

    func.__name__ = f"expr[{text}]"
    return func


@dataclass(frozen=True)
class ContactProblem:
    """Everything the solvers need: mesh, data and the unconstrained fine operators."""

    grid: GridHierarchy
    boundary: BoundaryDecomposition
    kappa: PermeabilityField
    weight: WeightField
    f: object
    p: object
    A: sp.csr_matrix      # stiffness, no boundary conditions
    b: np.ndarray         # load vector L(v)
    c: float = 10.0

    @property
    def contact_nodes(self) -> np.ndarray:
        return self.boundary.contact_nodes

    @property
    def dirichlet_nodes(self) -> np.ndarray:
        return self.boundary.dirichlet_nodes

    @cached_property
    def M(self) -> sp.csr_matrix:
        """Unweighted mass matrix (L2 inner product)."""
        return assemble_mass(self.grid)


def build_problem(grid, boundary, kappa, f=None, p=None, weight_mode="simplified", c=10.0) -> ContactProblem:
    if not c > 0:
        raise ConfigError(f"c must be positive, got {c}")
    f, p = parse_source(f), parse_source(p)
    return ContactProblem(
        grid=grid,
        boundary=boundary,
        kappa=kappa,
        weight=compute_weight(grid, kappa, weight_mode),
        f=f,
        p=p,
        A=assemble_stiffness(grid, kappa),
        b=assemble_load(grid, f, p, boundary),
        c=float(c),
    )

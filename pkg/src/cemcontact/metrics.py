"""Error norms and convergence-rate diagnostics for iterate histories."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid import GridHierarchy

CSV_COLUMNS = ("k", "E_L", "E_a", "T_cem_L", "T_cem_a", "T_fe_L", "T_fe_a")


def _norm(Q, v) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ (Q @ v), 0.0)))


def l2_norm(M, v) -> float:
    return _norm(M, v)


def energy_norm(A, v) -> float:
    return _norm(A, v)


def relative_errors(u_fe, u_cem, A, M) -> tuple[float, float]:
    """``(E_L, E_a)``: L2 and energy norms of ``u_fe - u_cem`` relative to ``u_fe``."""
    u_fe = np.asarray(u_fe, dtype=float)
    d = u_fe - np.asarray(u_cem, dtype=float)
    den_L, den_a = l2_norm(M, u_fe), energy_norm(A, u_fe)
    if den_L == 0.0 or den_a == 0.0:
        raise ZeroDivisionError("reference solution identically zero")
    return l2_norm(M, d) / den_L, energy_norm(A, d) / den_a


def iteration_rates(history, u_star, Q) -> np.ndarray:
    """``T_k = |u_k - u*| / |u_{k-1} - u*|`` for ``k = 1..len(history)-1``.

    A zero denominator means the iterate already equalled ``u*``; that entry
    is reported as 0 (exact convergence), not as an error.
    """
    if len(history) < 2:
        raise ValueError("need at least two iterates")
    dist = np.array([_norm(Q, np.asarray(u) - u_star) for u in history])
    rates = np.zeros(len(history) - 1)
    for k in range(1, len(history)):
        if dist[k - 1] > 0.0:
            rates[k - 1] = dist[k] / dist[k - 1]
    return rates


def energy_by_quadrature(g: GridHierarchy, kappa, u) -> float:
    """``sqrt(sum_K kappa_K int_K |grad u|^2)`` with 2x2 Gauss points per element.

    Independent of the assembled stiffness matrix; used to cross-check it.
    """
    kap = np.asarray(getattr(kappa, "values", kappa), dtype=float).ravel()
    ue = np.asarray(u, dtype=float)[g.element_nodes]     # (n_el, 4) ccw from lower-left
    h = g.h
    total = 0.0
    gp = 0.5 + np.array([-1.0, 1.0]) / (2.0 * np.sqrt(3.0))
    for s in gp:
        for t in gp:
            # bilinear gradient on the reference square, scaled by 1/h
            dx = ((1 - t) * (ue[:, 1] - ue[:, 0]) + t * (ue[:, 2] - ue[:, 3])) / h
            dy = ((1 - s) * (ue[:, 3] - ue[:, 0]) + s * (ue[:, 2] - ue[:, 1])) / h
            total += 0.25 * h * h * np.sum(kap * (dx * dx + dy * dy))
    return float(np.sqrt(total))


def pad_history(history, length: int):
    """Repeat the terminal iterate until the history has ``length`` entries."""
    history = list(history)
    return history + [history[-1]] * max(0, length - len(history))


@dataclass(frozen=True)
class ErrorReport:
    k: np.ndarray
    E_L: np.ndarray
    E_a: np.ndarray
    T_cem_L: np.ndarray
    T_cem_a: np.ndarray
    T_fe_L: np.ndarray
    T_fe_a: np.ndarray
    k0_fe: int
    k0_cem: int

    @property
    def k0(self) -> int:
        return int(self.k[-1])

    @property
    def terminal(self) -> dict:
        return {name: float(getattr(self, name)[-1]) for name in CSV_COLUMNS[1:]}

    def rows(self):
        for idx in range(len(self.k)):
            yield [int(self.k[idx])] + [float(getattr(self, c)[idx]) for c in CSV_COLUMNS[1:]]


def build_report(fe_history, cem_history, A, M) -> ErrorReport:
    """Tabulate errors and rates for ``k = 1..k0`` from two histories of fine vectors.

    Histories start at ``u_0``; the shorter one is padded with its terminal
    iterate so both reach ``k0 = max`` of the two terminal indices.
    """
    fe = [np.asarray(u, dtype=float) for u in fe_history]
    cem = [np.asarray(u, dtype=float) for u in cem_history]
    n = max(len(fe), len(cem))
    fe_p, cem_p = pad_history(fe, n), pad_history(cem, n)
    errs = np.array([relative_errors(a, b, A, M) for a, b in zip(fe_p[1:], cem_p[1:])]).reshape(-1, 2)
    return ErrorReport(
        k=np.arange(1, n),
        E_L=errs[:, 0],
        E_a=errs[:, 1],
        T_cem_L=iteration_rates(cem_p, cem_p[-1], M),
        T_cem_a=iteration_rates(cem_p, cem_p[-1], A),
        T_fe_L=iteration_rates(fe_p, fe_p[-1], M),
        T_fe_a=iteration_rates(fe_p, fe_p[-1], A),
        k0_fe=len(fe) - 1,
        k0_cem=len(cem) - 1,
    )


def format_sci(x: float) -> str:
    return f"{x:.5e}"


def write_csv(report: ErrorReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in report.rows():
            w.writerow([row[0]] + [format_sci(v) for v in row[1:]])


def read_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in CSV_COLUMNS}

"""Seed-parallel experiment execution, aggregation and persistence.

An experiment expands its configuration into an ordered list of cells
``(n, index)``.  Each cell is a pure function of the configuration and its
counter-based seed, so a pool of worker processes may evaluate cells in any
order.  Results are merged in cell order, which makes rows and aggregates
independent of the worker count.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .. import blocks
from ..charflow import (
    FlowError,
    flow_closed_form,
    integrate_flow,
    m12_bound,
    m12_bound_coeffs,
    make_state,
    max_time,
    trace_m12_along,
)
from ..ensembles import EnsembleSpec, Seed, kappa4, sample_iid
from ..girko import (
    clt_prediction,
    ginibre_kernel_variance,
    girko_rhs,
    linear_statistic_from_eigs,
    make_test_function,
    pairing_covariance,
)
from ..mde import SpectralPoint, dyson_residual, solve_m, solve_m_array
from ..resolvent import overlap_matrix, single_law_error, trace_G, two_resolvent_error
from ..stability import apply_B12, eigendecompose, m12, trace_m12_I
from .config import ConfigError, ExperimentConfig, parse_complex
from .stats import StreamingMoments, summarize

__all__ = [
    "EXPERIMENTS",
    "Cell",
    "ExperimentResult",
    "RunAborted",
    "cell_seed",
    "resolve_config",
    "run",
    "write_outputs",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAX_FAILURE_FRACTION = 0.05
WORKERS_ENV = "GIRKO_LAB_WORKERS"

BLOCKS = {
    "I": blocks.IDENTITY,
    "E1": blocks.E1,
    "E2": blocks.E2,
    "E-": blocks.EMINUS,
    "F": blocks.F,
    "F*": blocks.FSTAR,
}


class RunAborted(RuntimeError):
    """More than 5% of the cells failed."""


@dataclass(frozen=True, order=True)
class Cell:
    n: int
    index: int


def cell_seed(cfg: ExperimentConfig, cell: Cell) -> Seed:
    """Seed of a cell; depends only on ``base_seed``, ``n`` and the seed index."""
    return Seed(cfg.base_seed, (cell.n << 32) | cell.index)


def _check(value: float, threshold: float, passed: bool, **extra: Any) -> dict:
    return {"value": _jsonable(value), "threshold": _jsonable(threshold), "passed": bool(passed), **extra}


def _median(xs) -> float:
    return float(np.median(np.asarray(xs, dtype=float)))


# ---------------------------------------------------------------------------
# experiment definitions


class Experiment:
    """Base class; subclasses fill in the hooks below."""

    name = ""
    defaults: dict = {}
    deterministic = False
    default_n_list: tuple[int, ...] = (256,)
    default_seeds = 1
    monitor: str | None = None  # row column tracked with streaming moments

    def validate(self, cfg: ExperimentConfig) -> None:
        return None

    def cells(self, cfg: ExperimentConfig) -> list[Cell]:
        return [Cell(n, k) for n in sorted(set(cfg.n_list)) for k in range(cfg.seeds)]

    def run_cell(self, cfg: ExperimentConfig, cell: Cell) -> list[dict]:
        raise NotImplementedError

    def aggregate(self, cfg: ExperimentConfig, rows: list[dict]) -> tuple[dict, dict]:
        raise NotImplementedError


def _grid(p: dict, lo: str, hi: str, num: str, log_spaced: bool) -> np.ndarray:
    f = np.geomspace if log_spaced else np.linspace
    return f(float(p[lo]), float(p[hi]), int(p[num]))


class DysonTable(Experiment):
    name = "dyson-table"
    deterministic = True
    defaults = {
        "z_min": 0.0,
        "z_max": 0.95,
        "nz": 40,
        "eta_min": 1e-4,
        "eta_max": 1e2,
        "neta": 40,
        "both_signs": True,
        "tol": 1e-10,
    }

    def cells(self, cfg):
        return [Cell(0, k) for k in range(int(cfg.parameters["nz"]))]

    def run_cell(self, cfg, cell):
        p = cfg.parameters
        z = float(_grid(p, "z_min", "z_max", "nz", False)[cell.index])
        etas = _grid(p, "eta_min", "eta_max", "neta", True)
        if p["both_signs"]:
            etas = np.concatenate([etas, -etas])
        m = solve_m_array(z, etas)
        u = m / (1j * etas + m)
        res = dyson_residual(z, etas, m)
        return [
            {
                "z": z,
                "eta": float(e),
                "m_re": float(mi.real),
                "m_im": float(mi.imag),
                "u_re": float(ui.real),
                "u_im": float(ui.imag),
                "residual": float(r),
            }
            for e, mi, ui, r in zip(etas, m, u, res)
        ]

    def aggregate(self, cfg, rows):
        res = max(r["residual"] for r in rows)
        side = all(np.sign(r["m_im"]) == np.sign(r["eta"]) for r in rows)
        agg = {"points": len(rows), "max_residual": res}
        checks = {
            "residual": _check(res, cfg.parameters["tol"], res <= cfg.parameters["tol"]),
            "side_condition": _check(float(side), 1.0, side),
        }
        return agg, checks


class StabTable(Experiment):
    name = "stab-table"
    deterministic = True
    defaults = {
        "z1": 0.5,
        "dz": [1e-3, 1e-2, 1e-1],
        "direction": "1j",
        "eta": [1e-4, 1e-3, 1e-2],
        "sign_pairs": [[1, 1], [1, -1]],
        "eig_tol": 1e-9,
        "bracket_C": 10.0,
    }

    def _combos(self, p):
        return list(itertools.product(p["dz"], p["eta"], p["sign_pairs"]))

    def cells(self, cfg):
        return [Cell(0, k) for k in range(len(self._combos(cfg.parameters)))]

    def run_cell(self, cfg, cell):
        p = cfg.parameters
        dz, eta, (s1, s2) = self._combos(p)[cell.index]
        z1 = parse_complex(p["z1"])
        d = parse_complex(p["direction"])
        z2 = z1 + dz * d / abs(d)
        p1, p2 = SpectralPoint(z1, s1 * eta), SpectralPoint(z2, s2 * eta)
        pair = eigendecompose(p1, p2)
        res = max(
            (apply_B12(pair, pair.R_plus) - pair.beta_plus * pair.R_plus).norm() / pair.R_plus.norm(),
            (apply_B12(pair, pair.R_minus) - pair.beta_minus * pair.R_minus).norm() / pair.R_minus.norm(),
        )
        tr = m12(pair, blocks.IDENTITY).trace()
        closed = trace_m12_I(p1, p2)
        return [
            {
                "z1_re": z1.real,
                "z1_im": z1.imag,
                "z2_re": z2.real,
                "z2_im": z2.imag,
                "eta1": p1.eta,
                "eta2": p2.eta,
                "beta_plus_re": pair.beta_plus.real,
                "beta_plus_im": pair.beta_plus.imag,
                "beta_minus_re": pair.beta_minus.real,
                "beta_minus_im": pair.beta_minus.imag,
                "m12_trace_re": tr.real,
                "m12_trace_im": tr.imag,
                "closed_form_gap": abs(tr - closed) / max(1.0, abs(closed)),
                "eig_residual": res,
                "beta_minus_ratio": abs(pair.beta_minus) / (abs(z1 - z2) ** 2 + abs(p1.eta) + abs(p2.eta)),
            }
        ]

    def aggregate(self, cfg, rows):
        p = cfg.parameters
        res = max(r["eig_residual"] for r in rows)
        gap = max(r["closed_form_gap"] for r in rows)
        ratios = [r["beta_minus_ratio"] for r in rows]
        C = float(p["bracket_C"])
        agg = {"max_eig_residual": res, "max_closed_form_gap": gap, "ratio_min": min(ratios), "ratio_max": max(ratios)}
        checks = {
            "eigen_residual": _check(res, p["eig_tol"], res <= p["eig_tol"]),
            "closed_form": _check(gap, 1e-9, gap <= 1e-9),
            "beta_minus_bracket": _check(
                [min(ratios), max(ratios)], [1 / C, C], 1 / C <= min(ratios) and max(ratios) <= C
            ),
        }
        return agg, checks


class FlowCheck(Experiment):
    name = "flow-check"
    deterministic = True
    defaults = {
        "trajectories": [
            ["0.3", "0.3", 0.01, -0.01],
            ["0.3", "0.31+0.01j", 0.01, -0.012],
            ["0", "0", 0.02, -0.02],
            ["0.5", "0.5", 0.005, 0.005],
            ["0.2+0.2j", "0.21+0.2j", 0.01, 0.02],
        ],
        "times": 20,
        "t_frac": 0.8,
        "dt": 1e-4,
        "conservation_tol": 1e-9,
        "rk4_tol": 1e-8,
        "bound_C": 3.0,
    }

    def cells(self, cfg):
        return [Cell(0, k) for k in range(len(cfg.parameters["trajectories"]))]

    def run_cell(self, cfg, cell):
        p = cfg.parameters
        z1, z2, e1, e2 = p["trajectories"][cell.index]
        p1, p2 = SpectralPoint(parse_complex(z1), float(e1)), SpectralPoint(parse_complex(z2), float(e2))
        s0 = make_state(p1, p2)
        a0, b0 = m12_bound_coeffs(s0)
        t_end = float(p["t_frac"]) * min(max_time(p1), max_time(p2), b0 / a0)
        rk = integrate_flow(s0, t_end, min(float(p["dt"]), t_end))
        ref = flow_closed_form(s0, t_end)
        rk_err = max(abs(rk.p1.eta - ref.p1.eta), abs(rk.p2.eta - ref.p2.eta), abs(rk.p1.z - ref.p1.z))
        rows = []
        for t in np.linspace(0.0, t_end, int(p["times"])):
            st = flow_closed_form(s0, float(t))
            tr = trace_m12_along(st)
            cons = max(
                abs(solve_m(st.p1).m - st.m1) / abs(st.m1),
                abs(solve_m(st.p2).m - st.m2) / abs(st.m2),
            )
            bound = m12_bound(s0, float(t))
            rows.append(
                {
                    "trajectory": cell.index,
                    "t": float(t),
                    "z1_re": st.p1.z.real,
                    "z1_im": st.p1.z.imag,
                    "eta1": st.p1.eta,
                    "z2_re": st.p2.z.real,
                    "z2_im": st.p2.z.imag,
                    "eta2": st.p2.eta,
                    "m1_im": st.m1.imag,
                    "m2_im": st.m2.imag,
                    "m12_trace_re": tr.real,
                    "m12_trace_im": tr.imag,
                    "bound": bound,
                    "bound_ratio": abs(tr) / bound,
                    "opposite_signs": int(e1 * e2 < 0),
                    "conservation": cons,
                    "rk4_error": rk_err,
                }
            )
        return rows

    def aggregate(self, cfg, rows):
        p = cfg.parameters
        cons = max(r["conservation"] for r in rows)
        rk = max(r["rk4_error"] for r in rows)
        C = float(p["bound_C"])
        upper = max(r["bound_ratio"] for r in rows)
        opp = [r["bound_ratio"] for r in rows if r["opposite_signs"]]
        lower = min(opp) if opp else float("nan")
        agg = {"max_conservation": cons, "max_rk4_error": rk, "bound_ratio_max": upper, "bound_ratio_min_opposite": lower}
        checks = {
            "conservation": _check(cons, p["conservation_tol"], cons <= p["conservation_tol"]),
            "rk4_vs_closed_form": _check(rk, p["rk4_tol"], rk <= p["rk4_tol"]),
            "bound_upper": _check(upper, C, upper <= C),
        }
        if opp:
            checks["bound_lower_opposite_signs"] = _check(lower, 1 / C, lower >= 1 / C)
        return agg, checks


class LocalLawScan(Experiment):
    name = "local-law-scan"
    default_n_list = (128, 256)
    default_seeds = 50
    monitor = "scaled_error"
    defaults = {"z": 0.5, "etas": [0.05], "A": "I", "ratio_bracket": [0.3, 0.8]}

    def validate(self, cfg):
        for n in cfg.n_list:
            for e in cfg.parameters["etas"]:
                if abs(e) <= 1.0 / n:
                    raise ConfigError(f"eta = {e} is below the local-law scale 1/n = {1 / n}")

    def run_cell(self, cfg, cell):
        p = cfg.parameters
        X = sample_iid(EnsembleSpec(cfg.ensemble, cell.n), cell_seed(cfg, cell))
        z = parse_complex(p["z"])
        rows = []
        for e in p["etas"]:
            err, scaled = single_law_error(X, SpectralPoint(z, float(e)), BLOCKS[p["A"]])
            rows.append({"n": cell.n, "seed": cell.index, "eta": float(e), "error": err, "scaled_error": scaled})
        return rows

    def aggregate(self, cfg, rows):
        lo, hi = cfg.parameters["ratio_bracket"]
        med = {}
        for r in rows:
            med.setdefault((r["n"], r["eta"]), []).append(r["error"])
        med = {k: _median(v) for k, v in med.items()}
        agg = {"median_error": [{"n": n, "eta": e, "median": v} for (n, e), v in sorted(med.items())]}
        checks = {}
        ns = sorted(set(cfg.n_list))
        for e in cfg.parameters["etas"]:
            for n1, n2 in zip(ns, ns[1:]):
                if n2 == 2 * n1:
                    ratio = med[(n2, float(e))] / med[(n1, float(e))]
                    checks[f"doubling_n{n1}_eta{e:g}"] = _check(ratio, [lo, hi], lo <= ratio <= hi)
        return agg, checks


def _eta_for(p: dict, n: int) -> float:
    if p.get("eta") is not None:
        return float(p["eta"])
    return float(n) ** (-float(p["eta_exponent"]))


class TwoResolventScan(Experiment):
    name = "two-resolvent-scan"
    default_n_list = (128, 256, 512)
    default_seeds = 50
    monitor = "error"
    defaults = {
        "z1": 0.5,
        "dz": [0.01, 0.1],
        "direction": "1j",
        "eta": None,
        "eta_exponent": 0.5,
        "eta_signs": [1, -1],
        "A": "I",
        "B": "I",
        "quantile": 0.9,
        "bound_factor": 10.0,
    }

    def validate(self, cfg):
        p = cfg.parameters
        if len(p["eta_signs"]) != 2 or 0 in p["eta_signs"]:
            raise ConfigError("eta_signs must be two nonzero numbers")
        if p["A"] not in BLOCKS or p["B"] not in BLOCKS:
            raise ConfigError(f"A and B must be among {sorted(BLOCKS)}")
        for n in cfg.n_list:
            if _eta_for(p, n) <= 1.0 / n:
                raise ConfigError(f"eta = {_eta_for(p, n):g} is below the local-law scale 1/n at n = {n}")

    def run_cell(self, cfg, cell):
        p = cfg.parameters
        X = sample_iid(EnsembleSpec(cfg.ensemble, cell.n), cell_seed(cfg, cell))
        z1 = parse_complex(p["z1"])
        d = parse_complex(p["direction"])
        eta = _eta_for(p, cell.n)
        s1, s2 = (float(np.sign(s)) for s in p["eta_signs"])
        rows = []
        for dz in p["dz"]:
            z2 = z1 + float(dz) * d / abs(d)
            err, bound = two_resolvent_error(
                X, SpectralPoint(z1, s1 * eta), SpectralPoint(z2, s2 * eta), BLOCKS[p["A"]], BLOCKS[p["B"]]
            )
            rows.append({"n": cell.n, "seed": cell.index, "dz": float(dz), "eta": eta, "error": err, "bound": bound})
        return rows

    def aggregate(self, cfg, rows):
        p = cfg.parameters
        q, fac = float(p["quantile"]), float(p["bound_factor"])
        groups: dict = {}
        for r in rows:
            groups.setdefault((r["n"], r["dz"]), []).append(r)
        summary = []
        checks = {}
        for (n, dz), rs in sorted(groups.items()):
            errs = np.array([r["error"] for r in rs])
            bound = rs[0]["bound"]
            qv = float(np.quantile(errs, q))
            summary.append({"n": n, "dz": dz, "median": _median(errs), "quantile": qv, "bound": bound})
            checks[f"quantile_n{n}_dz{dz:g}"] = _check(qv / bound, fac, qv < fac * bound)
        dzs = sorted(set(float(x) for x in p["dz"]))
        if len(dzs) >= 2:
            for n in sorted(set(cfg.n_list)):
                small = _median([r["error"] for r in groups[(n, dzs[0])]])
                large = _median([r["error"] for r in groups[(n, dzs[-1])]])
                checks[f"improvement_n{n}"] = _check([large, small], "large < small", large < small)
        return {"groups": summary}, checks


class OverlapDecay(Experiment):
    name = "overlap-decay"
    default_n_list = (512,)
    default_seeds = 30
    defaults = {"z1": 0.3, "exponents": [0.5, 0.375, 0.25], "direction": "1", "k": 3}

    def run_cell(self, cfg, cell):
        p = cfg.parameters
        n = cell.n
        X = sample_iid(EnsembleSpec(cfg.ensemble, n), cell_seed(cfg, cell))
        z1 = parse_complex(p["z1"])
        d = parse_complex(p["direction"])
        rows = []
        for ex in p["exponents"]:
            dz = float(n) ** (-float(ex))
            O = overlap_matrix(X, z1, z1 + dz * d / abs(d), int(p["k"]))
            for i, j in np.ndindex(O.shape):
                rows.append({"n": n, "seed": cell.index, "exponent": float(ex), "dz": dz, "i": i, "j": j, "overlap": float(O[i, j])})
        return rows

    def aggregate(self, cfg, rows):
        checks = {}
        summary = []
        for n in sorted(set(cfg.n_list)):
            meds = {}
            for r in rows:
                if r["n"] == n:
                    meds.setdefault(r["dz"], []).append(r["overlap"])
            ordered = [(dz, _median(v)) for dz, v in sorted(meds.items())]
            summary += [{"n": n, "dz": dz, "median": m} for dz, m in ordered]
            vals = [m for _, m in ordered]
            ok = all(a > b for a, b in zip(vals, vals[1:]))
            checks[f"monotone_decay_n{n}"] = _check(vals, "strictly decreasing in dz", ok)
        return {"medians": summary}, checks


class Clt(Experiment):
    name = "clt"
    default_n_list = (256,)
    default_seeds = 500
    monitor = "L_re"
    defaults = {
        "z0": 0.0,
        "a": 0.25,
        "profile": "mollifier-bump",
        "support_radius": 1.0,
        "tilt": 0.5,
        "resolution": 256,
        "diagnostic": False,
        "variance_se_tol": 4.0,
        "kurtosis_se_tol": 5.0,
        "pseudo_se_tol": 4.0,
        "mean_se_tol": 4.0,
    }

    def _tf(self, p, n):
        return make_test_function(
            p["profile"],
            parse_complex(p["z0"]),
            float(p["a"]),
            n,
            int(p["resolution"]),
            support_radius=float(p["support_radius"]),
            tilt=float(p["tilt"]),
        )

    def validate(self, cfg):
        a = float(cfg.parameters["a"])
        if not (0 < a < 0.5 or (a == 0 and cfg.parameters["diagnostic"])):
            raise ConfigError("clt needs a in (0, 1/2); set diagnostic = true for a = 0")
        for n in cfg.n_list:
            try:
                self._tf(cfg.parameters, n)
            except ValueError as exc:  # support escape, bad profile or grid
                raise ConfigError(str(exc)) from exc

    def run_cell(self, cfg, cell):
        tf = self._tf(cfg.parameters, cell.n)
        X = sample_iid(EnsembleSpec(cfg.ensemble, cell.n), cell_seed(cfg, cell))
        L = linear_statistic_from_eigs(np.linalg.eigvals(X), tf)
        return [{"n": cell.n, "seed": cell.index, "L_re": L.real, "L_im": L.imag}]

    def aggregate(self, cfg, rows):
        p = cfg.parameters
        k4 = kappa4(EnsembleSpec(cfg.ensemble, 2))
        out, checks = {}, {}
        for n in sorted(set(cfg.n_list)):
            L = np.array([r["L_re"] + 1j * r["L_im"] for r in rows if r["n"] == n])
            s = summarize(L)
            tf = self._tf(p, n)
            pred = clt_prediction(tf, k4, n)
            finite_n = ginibre_kernel_variance(tf, n)
            z_var = abs(s["variance"] - pred.variance) / s["variance_se"]
            pv = s["pseudo_variance_re"] + 1j * s["pseudo_variance_im"]
            z_pv = abs(pv - pred.pseudo_variance) / s["pseudo_variance_se"]
            z_mean = abs(s["mean_re"] + 1j * s["mean_im"] - pred.mean) / s["mean_se"]
            z_kre = abs(s["kurtosis_re"]) / s["kurtosis_re_se"]
            z_kim = abs(s["kurtosis_im"]) / s["kurtosis_im_se"]
            out[str(n)] = {
                "summary": s,
                "prediction": {
                    "mean_re": pred.mean.real,
                    "mean_im": pred.mean.imag,
                    "variance": pred.variance,
                    "pseudo_variance_re": pred.pseudo_variance.real,
                    "pseudo_variance_im": pred.pseudo_variance.imag,
                    "kappa4_term": pred.kappa4_term,
                    # diagnostic only: exact bulk-Ginibre variance at this n
                    "finite_n_variance": finite_n,
                },
                "z_scores": {
                    "variance": z_var,
                    "pseudo_variance": z_pv,
                    "mean": z_mean,
                    "kurtosis_re": z_kre,
                    "kurtosis_im": z_kim,
                    "finite_n_variance": abs(s["variance"] - finite_n) / s["variance_se"],
                },
            }
            checks[f"variance_n{n}"] = _check(z_var, p["variance_se_tol"], z_var <= p["variance_se_tol"])
            checks[f"pseudo_variance_n{n}"] = _check(z_pv, p["pseudo_se_tol"], z_pv <= p["pseudo_se_tol"])
            checks[f"kurtosis_re_n{n}"] = _check(z_kre, p["kurtosis_se_tol"], z_kre <= p["kurtosis_se_tol"])
            checks[f"kurtosis_im_n{n}"] = _check(z_kim, p["kurtosis_se_tol"], z_kim <= p["kurtosis_se_tol"])
            checks[f"mean_n{n}"] = _check(z_mean, p["mean_se_tol"], z_mean <= p["mean_se_tol"])
        return out, checks


class GirkoConsistency(Experiment):
    name = "girko-consistency"
    default_n_list = (32,)
    defaults = {
        "z0": 0.0,
        "a": 0.0,
        "profile": "mollifier-bump",
        "support_radius": 1.0,
        "tilt": 0.0,
        "resolutions": [128, 256],
        "rel_tol": 0.03,
        "refinement_factor": 2.0,
    }

    def run_cell(self, cfg, cell):
        p = cfg.parameters
        X = sample_iid(EnsembleSpec(cfg.ensemble, cell.n), cell_seed(cfg, cell))
        eigs = np.linalg.eigvals(X)
        rows = []
        for res in p["resolutions"]:
            tf = make_test_function(
                p["profile"],
                parse_complex(p["z0"]),
                float(p["a"]),
                cell.n,
                int(res),
                support_radius=float(p["support_radius"]),
                tilt=float(p["tilt"]),
            )
            direct = linear_statistic_from_eigs(eigs, tf)
            g = girko_rhs(X, tf)
            rows.append(
                {
                    "n": cell.n,
                    "seed": cell.index,
                    "resolution": int(res),
                    "direct_re": direct.real,
                    "direct_im": direct.imag,
                    "girko_re": g.real,
                    "girko_im": g.imag,
                    "rel_err": abs(g - direct) / abs(direct),
                }
            )
        return rows

    def aggregate(self, cfg, rows):
        p = cfg.parameters
        res = sorted(int(r) for r in p["resolutions"])
        by = {(r["n"], r["seed"], r["resolution"]): r["rel_err"] for r in rows}
        first = max(v for (n, s, r), v in by.items() if r == res[0])
        checks = {"rel_err_coarse": _check(first, p["rel_tol"], first <= p["rel_tol"])}
        if len(res) >= 2:
            ratios = [
                by[(n, s, res[0])] / by[(n, s, res[1])]
                for (n, s, r) in by
                if r == res[0] and (n, s, res[1]) in by
            ]
            worst = min(ratios)
            checks["refinement"] = _check(worst, p["refinement_factor"], worst >= p["refinement_factor"])
        return {"max_rel_err_coarse": first}, checks


class ResolventClt(Experiment):
    name = "resolvent-clt"
    default_n_list = (256,)
    default_seeds = 1000
    defaults = {
        "zs": ["0.3", "0.45", "0.3+0.15j", "0.45+0.15j"],
        "eta": 0.1,
        "p2_se_tol": 4.0,
        "p4_se_tol": 5.0,
    }

    def run_cell(self, cfg, cell):
        p = cfg.parameters
        X = sample_iid(EnsembleSpec(cfg.ensemble, cell.n), cell_seed(cfg, cell))
        eta = float(p["eta"])
        row = {"n": cell.n, "seed": cell.index}
        I = np.eye(cell.n)
        for k, z in enumerate(p["zs"]):
            sv = np.linalg.svd(X - parse_complex(z) * I, compute_uv=False)
            row[f"g{k}_im"] = trace_G(sv, eta).imag
        return [row]

    def aggregate(self, cfg, rows):
        p = cfg.parameters
        k4 = kappa4(EnsembleSpec(cfg.ensemble, 2))
        eta = float(p["eta"])
        zs = [parse_complex(z) for z in p["zs"]]
        K = len(zs)
        out, checks = {}, {}
        for n in sorted(set(cfg.n_list)):
            G = np.array([[1j * r[f"g{k}_im"] for k in range(K)] for r in rows if r["n"] == n])
            C = G - G.mean(axis=0)
            N = C.shape[0]
            pts = [SpectralPoint(z, eta) for z in zs]
            pred = {(i, j): pairing_covariance(pts[i], pts[j], k4, n) for i in range(K) for j in range(K) if i != j}
            pairs = []
            for i, j in itertools.combinations(range(K), 2):
                prod = C[:, i] * C[:, j]
                mc = prod.mean()
                se = prod.std(ddof=1) / math.sqrt(N)
                zsc = abs(mc - pred[(i, j)]) / se
                pairs.append({"i": i, "j": j, "mc": mc.real, "prediction": pred[(i, j)].real, "se": se, "z": zsc})
                checks[f"p2_n{n}_{i}{j}"] = _check(zsc, p["p2_se_tol"], zsc <= p["p2_se_tol"])
            entry = {"p2": pairs}
            if K >= 4:
                prod = C[:, 0] * C[:, 1] * C[:, 2] * C[:, 3]
                mc = prod.mean()
                se = prod.std(ddof=1) / math.sqrt(N)
                wick = pred[(0, 1)] * pred[(2, 3)] + pred[(0, 2)] * pred[(1, 3)] + pred[(0, 3)] * pred[(1, 2)]
                zsc = abs(mc - wick) / se
                entry["p4"] = {"mc": mc.real, "prediction": wick.real, "se": se, "z": zsc}
                checks[f"p4_n{n}"] = _check(zsc, p["p4_se_tol"], zsc <= p["p4_se_tol"])
            out[str(n)] = entry
        return out, checks


EXPERIMENTS: dict[str, Experiment] = {
    e.name: e
    for e in (
        DysonTable(),
        StabTable(),
        FlowCheck(),
        LocalLawScan(),
        TwoResolventScan(),
        OverlapDecay(),
        Clt(),
        GirkoConsistency(),
        ResolventClt(),
    )
}


# ---------------------------------------------------------------------------
# orchestration


def resolve_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Merge experiment defaults into ``cfg.parameters`` and validate."""
    exp = EXPERIMENTS[cfg.experiment]
    unknown = set(cfg.parameters) - set(exp.defaults)
    if unknown:
        raise ConfigError(f"unknown parameters for {cfg.experiment}: {sorted(unknown)}")
    merged = {**exp.defaults, **cfg.parameters}
    cfg = cfg.with_overrides(parameters=merged)
    exp.validate(cfg)
    return cfg


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[dict]
    aggregate: dict
    checks: dict
    failures: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())


def _run_cell(args: tuple[ExperimentConfig, Cell]) -> tuple[Cell, list[dict] | None, str | None]:
    cfg, cell = args
    try:
        return cell, EXPERIMENTS[cfg.experiment].run_cell(cfg, cell), None
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError, FlowError) as exc:
        return cell, None, f"{type(exc).__name__}: {exc}"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run(
    cfg: ExperimentConfig,
    workers: int | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> ExperimentResult:
    """Execute every cell of ``cfg`` and aggregate.

    Parameters
    ----------
    cfg : ExperimentConfig
    workers : int, optional
        Number of worker processes; defaults to ``$GIRKO_LAB_WORKERS`` or 1.
    progress : callable, optional
        Called as ``progress(done, total)`` after every finished cell.

    Raises
    ------
    RunAborted
        If more than 5% of the cells raise.
    """
    cfg = resolve_config(cfg)
    exp = EXPERIMENTS[cfg.experiment]
    workers = default_workers() if workers is None else max(1, int(workers))
    cells = exp.cells(cfg)
    started = time.time()
    results: dict[Cell, list[dict]] = {}
    failures = []
    monitor = StreamingMoments()
    tasks = [(cfg, c) for c in cells]

    def collect(cell, rows, err, done):
        if err is not None:
            failures.append({"n": cell.n, "index": cell.index, "error": err})
            log.warning("cell %s failed: %s", cell, err)
        else:
            results[cell] = rows
            if exp.monitor:
                for r in rows:
                    monitor.push(r[exp.monitor])
        if progress:
            progress(done, len(cells))
        if exp.monitor and monitor.count > 1 and done % max(1, len(cells) // 10) == 0:
            log.info("%d/%d cells: running mean %.6g, variance %.6g", done, len(cells), monitor.mean, monitor.variance)

    if workers == 1 or len(cells) == 1:
        for k, t in enumerate(tasks, 1):
            collect(*_run_cell(t), k)
    else:
        chunk = max(1, len(tasks) // (8 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for k, out in enumerate(pool.map(_run_cell, tasks, chunksize=chunk), 1):
                collect(*out, k)

    if len(failures) > MAX_FAILURE_FRACTION * len(cells):
        raise RunAborted(f"{len(failures)} of {len(cells)} cells failed; first: {failures[0]['error']}")
    h = cfg.hash()
    rows = []
    for cell in sorted(results):
        for r in results[cell]:
            rows.append({"config_hash": h, **r})
    aggregate, checks = exp.aggregate(cfg, [r for c in sorted(results) for r in results[c]])
    meta = {"wall_clock_s": time.time() - started, "workers": workers, "cells": len(cells), "failed_cells": len(failures)}
    return ExperimentResult(cfg, rows, aggregate, checks, failures, meta)


# ---------------------------------------------------------------------------
# persistence


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def rows_to_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    buf.write(
        f"# girko-lab rows schema_version={SCHEMA_VERSION} experiment={result.config.experiment} "
        f"config_hash={result.config.hash()}\n"
    )
    if result.rows:
        cols = list(dict.fromkeys(k for r in result.rows for k in r))
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in result.rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def summary_json(result: ExperimentResult, include_meta: bool = True) -> str:
    doc = {
        "schema": "girko-lab/result",
        "schema_version": SCHEMA_VERSION,
        "experiment": result.config.experiment,
        "config_hash": result.config.hash(),
        "config": result.config.canonical_dict(),
        "aggregate": result.aggregate,
        "checks": result.checks,
        "passed": result.passed,
        "failures": result.failures,
    }
    if include_meta:
        doc["meta"] = result.meta
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True)


def write_outputs(result: ExperimentResult, out_dir: str | Path | None = None) -> tuple[Path, Path]:
    """Write ``<experiment>-<hash>.csv`` and ``.json`` into ``out_dir``."""
    out = Path(out_dir or result.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{result.config.experiment}-{result.config.hash()}"
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    csv_path.write_text(rows_to_csv(result))
    json_path.write_text(summary_json(result) + "\n")
    return csv_path, json_path

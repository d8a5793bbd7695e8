"""Run orchestration: single runs, sweeps and the analysis stages."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import chaos, graph, persist
from .bath import DissipatorSet, build_dissipator
from .config import RunConfig
from .model import Eigensystem, FranckCondonState, Variation, apply_parameter_variation, franck_condon_state
from .output import OutputConflict, StageResult, _check_existing, _finish, _staged, run_eigen, solve_eigen  # noqa: F401
from .propagation import (
    PropagationPlan,
    TrajectoryRecord,
    initial_state,
    propagate,
    quantum_yield_at,
    trans_projectors,
)

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = (
    "value", "m_inv", "E1", "V1", "E1_plus_V1", "omega", "lambda_c",
    "qy_secular", "qy_nonsecular", "qy_transient_max_dev", "status", "error",
)


# ---------------------------------------------------------------------------
# building blocks


@dataclass
class Prepared:
    config: RunConfig
    eigsys: Eigensystem
    fc: FranckCondonState
    diss: DissipatorSet
    projectors: dict

    @classmethod
    def build(cls, config: RunConfig, variation: Variation | None = None) -> "Prepared":
        es = solve_eigen(config, variation)
        fc = franck_condon_state(es)
        diss = build_dissipator(es, list(config.baths))
        return cls(config, es, fc, diss, trans_projectors(es))


def make_plan(config: RunConfig, mode: str | None = None) -> PropagationPlan:
    return PropagationPlan(
        mode=mode or config.mode,
        t_final=config.t_record,
        t_switch=config.t_switch,
        extra_times=(config.analysis.transient_window,),
        integrator=config.integrator,
        rtol=config.rtol,
    )


def simulate(prep: Prepared, mode: str | None = None) -> TrajectoryRecord:
    rho0 = initial_state(prep.config.initial, prep.fc)
    return propagate(rho0, prep.diss, prep.projectors, make_plan(prep.config, mode))


def run_single(config: RunConfig, out_dir, force: bool = False) -> StageResult:
    """Eigensystem, dissipator, one trajectory in ``config.mode`` and the QY summary."""
    out_dir = Path(out_dir)
    prev = _check_existing(out_dir, "propagate", config, force)
    if prev:
        return StageResult("propagate", out_dir, prev, skipped=True, data={"qy": prev["qy"]})
    t0 = time.perf_counter()
    prep = Prepared.build(config)
    traj = simulate(prep)
    qy = quantum_yield_at(traj, config.t_record)
    h = config.hash()
    summary = {
        "config_hash": h,
        "t_record_ps": config.t_record,
        "mode": config.mode,
        "qy": qy,
        "fc_retained_norm": prep.fc.retained_norm,
        "brightest_state": prep.fc.brightest_index,
        "n_states": prep.diss.size,
        "diagnostics": {k: v for k, v in traj.diagnostics.items() if k != "positivity_violations"},
        "n_positivity_violations": len(traj.diagnostics.get("positivity_violations", [])),
    }
    with _staged(out_dir) as tmp:
        persist.write_eigensystem(tmp, prep.eigsys, h, blob=config.outputs.eigensystem_blob)
        if config.outputs.trajectory_csv:
            persist.write_trajectory(tmp / "trajectory.csv", traj, h)
        if config.outputs.rates_triplets:
            persist.write_rate_triplets(tmp / "rates.csv", prep.diss.rates, h)
        persist.write_json(tmp / "qy.json", summary)
        doc = _finish(tmp, "propagate", config, t0, {"qy": qy})
    return StageResult("propagate", out_dir, doc, data={"qy": qy, "trajectory": traj, "prepared": prep})


def run_nnsd(config: RunConfig, out_dir, bands=None, k: int | None = None, sector: str = "even",
             force: bool = False, bins: int = 40) -> StageResult:
    out_dir = Path(out_dir)
    bands = tuple(tuple(b) for b in (bands or config.analysis.bands))
    k = k or config.analysis.k_local
    cfg = config.replace(sector="both" if sector == "merged" else sector)
    prev = _check_existing(out_dir, "nnsd", cfg, force)
    if prev:
        return StageResult("nnsd", out_dir, prev, skipped=True)
    top = max(b[1] for b in bands)
    if top > config.basis.energy_cutoff:
        logger.warning("band edge %.3g eV exceeds the energy cutoff %.3g eV", top, config.basis.energy_cutoff)
    t0 = time.perf_counter()
    es = solve_eigen(cfg, vectors=False)
    reports = chaos.band_compare(es, bands, k, sector)
    h = cfg.hash()
    with _staged(out_dir) as tmp:
        for r in reports:
            tag = f"{r.band[0]:g}-{r.band[1]:g}"
            chaos.write_nnsd_csv(tmp / f"nnsd_{tag}.csv", chaos.nnsd(r.sample.spacings, bins=bins, s_max=4.0))
        chaos.write_report_json(tmp / "nnsd_report.json", reports, {"config_hash": h, "k_local": k})
        doc = _finish(tmp, "nnsd", cfg, t0)
    return StageResult("nnsd", out_dir, doc, data={"reports": reports})


def build_relaxation_tree(prep: Prepared, root="brightest", degree: int = 2, node_cap=None) -> graph.RelaxationTree:
    r = prep.fc.brightest_index if root == "brightest" else int(root)
    rates = graph.scattering_rates(prep.diss)
    tree = graph.build_tree(prep.eigsys, rates, r, degree=degree, node_cap=node_cap)
    tree.meta["root_rule"] = str(root)
    return tree


def run_tree(config: RunConfig, out_dir, root="brightest", degree: int | None = None,
             compare: RunConfig | None = None, force: bool = False) -> StageResult:
    out_dir = Path(out_dir)
    prev = _check_existing(out_dir, "tree", config, force)
    if prev:
        return StageResult("tree", out_dir, prev, skipped=True)
    degree = degree or config.analysis.tree_degree
    t0 = time.perf_counter()
    tree = build_relaxation_tree(Prepared.build(config), root, degree)
    h = config.hash()
    tree.meta["config_hash"] = h
    data = {"tree": tree}
    with _staged(out_dir) as tmp:
        graph.export_tree(tree, tmp / "tree.json")
        (tmp / "tree.dot").write_text(f"// config_hash: {h}\n" + graph.tree_to_dot(tree))
        if compare is not None:
            other = build_relaxation_tree(Prepared.build(compare), root, degree)
            other.meta["config_hash"] = compare.hash()
            tol = 0.03 * graph.torsional_spacing(config.model)
            ov = graph.overlay(tree, other, tol)
            graph.export_tree(other, tmp / "tree_compare.json")
            (tmp / "overlay.dot").write_text(f"// config_hash: {h}\n" + graph.overlay_to_dot(ov))
            data["overlay"] = ov
        doc = _finish(tmp, "tree", config, t0, {"n_nodes": len(tree.nodes)})
    return StageResult("tree", out_dir, doc, data=data)


# ---------------------------------------------------------------------------
# sweeps


def _point(config_dict: dict, variation: tuple[str, float], point_dir: str) -> dict:
    """One sweep point. Runs in a worker process; never raises."""
    from threadpoolctl import threadpool_limits

    kind, value = variation
    row = {"value": value, "status": "ok", "error": ""}
    try:
        with threadpool_limits(1):
            config = RunConfig.from_dict(config_dict)
            var = Variation(kind, value)
            params = apply_parameter_variation(config.model, var)
            row.update(m_inv=params.m_inv, E1=params.E1, V1=params.V1, E1_plus_V1=params.E1 + params.V1,
                       omega=params.omega, lambda_c=params.lambda_c)
            prep = Prepared.build(config, var)
            h = config.hash()
            sec = simulate(prep, "secular")
            row["qy_secular"] = quantum_yield_at(sec, config.t_record)
            pdir = Path(point_dir)
            pdir.mkdir(parents=True, exist_ok=True)
            persist.write_trajectory(pdir / "trajectory_secular.csv", sec, h)
            ref = sec
            if config.mode != "secular":
                ns = simulate(prep, config.mode)
                row["qy_nonsecular"] = quantum_yield_at(ns, config.t_record)
                persist.write_trajectory(pdir / f"trajectory_{config.mode}.csv", ns, h)
                ref = ns
            else:
                row["qy_nonsecular"] = math.nan
            w = ref.times <= config.analysis.transient_window * (1 + 1e-12)
            row["_transient_t"] = ref.times[w].tolist()
            row["_transient_qy"] = ref.qy[w].tolist()
    except Exception as exc:  # isolate the failure to this point
        logger.exception("sweep point %s=%s failed", kind, value)
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def run_sweep(config: RunConfig, out_dir, threads: int = 1, force: bool = False) -> StageResult:
    """Evaluate every grid point (secular and ``config.mode``) and tabulate QY."""
    if config.sweep is None:
        raise ValueError("config has no sweep block")
    out_dir = Path(out_dir)
    prev = _check_existing(out_dir, "sweep", config, force)
    if prev:
        return StageResult("sweep", out_dir, prev, skipped=True)
    t0 = time.perf_counter()
    sw = config.sweep
    tasks = [(sw.parameter, v) for v in sw.values]
    ident = sw.identity
    baseline_index = next((i for i, v in enumerate(sw.values) if v == ident.value), None)
    if baseline_index is None:
        tasks.append((sw.parameter, ident.value))
    cfg_dict = config.to_dict()
    with _staged(out_dir) as tmp:
        dirs = [str(tmp / "points" / f"{i:03d}") for i in range(len(tasks))]
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                futs = [pool.submit(_point, cfg_dict, t, d) for t, d in zip(tasks, dirs)]
                rows = []
                for t, f in zip(tasks, futs):
                    try:
                        rows.append(f.result())
                    except Exception as exc:  # worker crash
                        rows.append({"value": t[1], "status": "failed", "error": f"{type(exc).__name__}: {exc}"})
        else:
            rows = [_point(cfg_dict, t, d) for t, d in zip(tasks, dirs)]

        base = rows[baseline_index if baseline_index is not None else -1]
        points = rows[: len(sw.values)]
        for r in points:
            r["qy_transient_max_dev"] = _transient_dev(r, base)
        h = config.hash()
        with (tmp / "sweep.csv").open("w", newline="") as fh:
            fh.write(f"# photoiso sweep v1\n# config_hash: {h}\n# parameter: {sw.parameter}\n")
            w = csv.writer(fh)
            w.writerow(SWEEP_COLUMNS)
            for r in points:
                w.writerow([_fmt(r.get(c, math.nan)) for c in SWEEP_COLUMNS])
        failed = sum(r["status"] != "ok" for r in points)
        doc = _finish(tmp, "sweep", config, t0, {"n_points": len(points), "n_failed": failed})
    clean = [{k: v for k, v in r.items() if not k.startswith("_")} for r in points]
    return StageResult("sweep", out_dir, doc, data={"rows": clean})


def _transient_dev(row: dict, base: dict) -> float:
    if row.get("status") != "ok" or base.get("status") != "ok":
        return math.nan
    a, b = np.asarray(row["_transient_qy"]), np.asarray(base["_transient_qy"])
    if len(a) != len(b) or not np.allclose(row["_transient_t"], base["_transient_t"]):
        return math.nan
    return float(np.max(np.abs(a - b)))


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)

"""On-disk formats: eigensystem tables and blobs, trajectories, rate triplets, manifests.

Every file carries the config hash of the run that produced it (a
``# config_hash:`` header line in CSV, a key in JSON and npz).
"""

from __future__ import annotations

import csv
import json
import platform
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from . import __version__
from .model import BasisSpec, Eigensystem, ModelParameters

if TYPE_CHECKING:
    from .propagation import TrajectoryRecord

EIGEN_BLOB_VERSION = 1
MANIFEST_SCHEMA = "photoiso.manifest/1"


def _header(fh, config_hash: str, kind: str):
    fh.write(f"# photoiso {kind} v1\n# config_hash: {config_hash}\n")


def read_csv_table(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(header, columns)`` for a file written by this module."""
    header, rows, names = {}, [], None
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#"):
                if ":" in line:
                    k, v = line[1:].split(":", 1)
                    header[k.strip()] = v.strip()
                continue
            if names is None:
                names = next(csv.reader([line]))
            else:
                rows.append(next(csv.reader([line])))
    cols = {}
    for j, name in enumerate(names or []):
        vals = [r[j] for r in rows]
        try:
            cols[name] = np.array([float(v) for v in vals])
        except ValueError:
            cols[name] = np.array(vals, dtype=object)
    return header, cols


def write_eigensystem(directory, eigsys: Eigensystem, config_hash: str, blob: bool = True) -> list[Path]:
    directory = Path(directory)
    table = directory / "eigensystem.csv"
    with table.open("w", newline="") as fh:
        _header(fh, config_hash, "eigensystem")
        w = csv.writer(fh)
        w.writerow(["index", "energy_ev", "transness", "parity"])
        lk = eigsys.transness if eigsys.transness is not None else np.full(len(eigsys), np.nan)
        for i, (e, l, p) in enumerate(zip(eigsys.energies, lk, eigsys.parity)):
            w.writerow([i, repr(float(e)), repr(float(l)), int(p)])
    out = [table]
    if blob:
        path = directory / "eigensystem.npz"
        arrays = {
            "format_version": np.array(EIGEN_BLOB_VERSION),
            "config_hash": np.array(config_hash),
            "energies": eigsys.energies,
            "parity": eigsys.parity,
            "params": np.array(json.dumps(eigsys.params.to_dict())),
            "basis": np.array(json.dumps(eigsys.basis.to_dict())),
        }
        if eigsys.coefficients is not None:
            arrays["coefficients"] = eigsys.coefficients
            arrays["transness"] = eigsys.transness
        np.savez_compressed(path, **arrays)
        out.append(path)
    return out


def read_eigensystem(path) -> Eigensystem:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != EIGEN_BLOB_VERSION:
            raise ValueError(f"unsupported eigensystem blob version {version}")
        params = ModelParameters(**json.loads(str(z["params"])))
        basis = BasisSpec(**json.loads(str(z["basis"])))
        coeffs = z["coefficients"].copy() if "coefficients" in z else None
        lk = z["transness"].copy() if "transness" in z else None
        return Eigensystem(
            z["energies"].copy(), coeffs, lk, z["parity"].copy(), params, basis,
            {"config_hash": str(z["config_hash"])},
        )


def write_trajectory(path, traj: TrajectoryRecord, config_hash: str) -> Path:
    path = Path(path)
    cols = traj.columns()
    names = list(cols)
    with path.open("w", newline="") as fh:
        _header(fh, config_hash, "trajectory")
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*(cols[n] for n in names)):
            w.writerow([repr(float(x)) for x in row])
    return path


def write_rate_triplets(path, rates: np.ndarray, config_hash: str) -> Path:
    """Nonzero off-diagonal entries ``K[j, i]`` as rows ``(source i, target j, rate)``."""
    path = Path(path)
    K = np.asarray(rates)
    j, i = np.nonzero(K)
    keep = i != j
    with path.open("w", newline="") as fh:
        _header(fh, config_hash, "rates")
        w = csv.writer(fh)
        w.writerow(["source", "target", "rate_ev"])
        for a, b in sorted(zip(i[keep], j[keep])):
            w.writerow([int(a), int(b), repr(float(K[b, a]))])
    return path


def write_json(path, doc: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def manifest(config, outputs: list[str], extra: dict | None = None) -> dict:
    doc = {
        "schema": MANIFEST_SCHEMA,
        "config_hash": config.hash(),
        "config": config.to_dict(),
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "outputs": sorted(outputs),
    }
    if extra:
        doc.update(extra)
    return doc

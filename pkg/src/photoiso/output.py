"""Staged output directories, manifests and the eigensystem stage.

Every stage writes into an output directory through a staging directory, so
a failure leaves no partial files behind.  A ``<stage>.manifest.json`` with
the config hash makes re-runs with an unchanged config a no-op.  This module
does not import the propagation stack.
"""

from __future__ import annotations

import json
import logging
import shutil
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from . import persist
from .config import RunConfig
from .model import Eigensystem, Variation, apply_parameter_variation, diagonalize

logger = logging.getLogger(__name__)


class OutputConflict(RuntimeError):
    pass


def solve_eigen(config: RunConfig, variation: Variation | None = None, vectors: bool = True) -> Eigensystem:
    params = config.model if variation is None else apply_parameter_variation(config.model, variation)
    return diagonalize(params, config.basis, vectors=vectors, parities=config.parities)


@contextmanager
def _staged(out_dir: Path):
    """Yield a staging directory; its files move into ``out_dir`` on success."""
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        yield tmp
        for item in sorted(tmp.iterdir()):
            dest = out_dir / item.name
            if dest.is_dir():
                shutil.rmtree(dest)
            item.replace(dest)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _manifest_path(out_dir: Path, stage: str) -> Path:
    return out_dir / f"{stage}.manifest.json"


def _check_existing(out_dir: Path, stage: str, config: RunConfig, force: bool) -> dict | None:
    """Previous manifest when the stage already ran with this config."""
    path = _manifest_path(out_dir, stage)
    if not path.exists() or force:
        return None
    doc = json.loads(path.read_text())
    if doc.get("config_hash") != config.hash():
        raise OutputConflict(f"{out_dir} holds a {stage} run with a different config; use --force to overwrite")
    if all((out_dir / name).exists() for name in doc.get("outputs", [])):
        logger.info("%s: %s already up to date", out_dir, stage)
        return doc
    return None


def _finish(tmp: Path, stage: str, config: RunConfig, t0: float, extra: dict | None = None) -> dict:
    outputs = sorted(p.name for p in tmp.iterdir())
    doc = persist.manifest(config, outputs, {"stage": stage, "wall_time_s": time.perf_counter() - t0, **(extra or {})})
    persist.write_json(_manifest_path(tmp, stage), doc)
    return doc


@dataclass
class StageResult:
    stage: str
    out_dir: Path
    manifest: dict
    skipped: bool = False
    data: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# stages


def run_eigen(config: RunConfig, out_dir, force: bool = False) -> StageResult:
    out_dir = Path(out_dir)
    prev = _check_existing(out_dir, "eigen", config, force)
    if prev:
        return StageResult("eigen", out_dir, prev, skipped=True)
    t0 = time.perf_counter()
    es = solve_eigen(config, vectors=config.outputs.eigensystem_blob)
    h = config.hash()
    with _staged(out_dir) as tmp:
        persist.write_eigensystem(tmp, es, h, blob=config.outputs.eigensystem_blob)
        doc = _finish(tmp, "eigen", config, t0, {"n_states": len(es)})
    return StageResult("eigen", out_dir, doc, data={"eigsys": es})



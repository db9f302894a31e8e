"""HTTP surface over the experiment runner.

Endpoints are synchronous; runs execute inside the request at desk scale.
Paths in requests resolve against the server's filesystem: absolute paths
are used as-is, relative ones land under FQAT_OUTPUT_ROOT (or the server's
working directory).  Domain errors come back as HTTP 400 with a
machine-readable {type, message} body.
"""

from __future__ import annotations

import os
from pathlib import Path

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import ConfigError, parse_config
from ..data import generate_domains, save_dataset
from ..landscape import ProbeConfig
from ..runner import (ConfigMismatchError, generator_config, probe_cell,
                      resolve_output_root, run_matrix, summarize)
from . import schemas

app = FastAPI(title="fqat experiment service", version=__version__)

ABLATION_POLICIES = ("adaptive", "alternate_update", "freeze_both",
                     "no_unfreeze", "reverse_freeze")

_EXPECTED = (ConfigError, ConfigMismatchError, ValueError, KeyError,
             FileNotFoundError, OSError)


def _fail(e: Exception) -> None:
    raise HTTPException(status_code=400,
                        detail={"type": type(e).__name__, "message": str(e)})


def _resolve(path: str, base: str | None) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    root = base if base is not None else os.environ.get("FQAT_OUTPUT_ROOT", ".")
    return Path(root) / p


@app.get("/health", response_model=schemas.HealthResponse)
def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(status="ok", version=__version__)


@app.post("/data/generate", response_model=schemas.GenerateDataResponse)
def generate_data(req: schemas.GenerateDataRequest) -> schemas.GenerateDataResponse:
    try:
        cfg = parse_config(req.config)
        dataset = generate_domains(cfg.data.data_seed, generator_config(cfg))
        path = _resolve(req.path, req.output_root)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(dataset, path)
    except _EXPECTED as e:
        _fail(e)
    return schemas.GenerateDataResponse(
        path=str(path), domains=dataset.domains, sizes=dataset.domain_sizes(),
        dim=dataset.dim, n_classes=dataset.n_classes,
        seed=dataset.generator_seed)


def _run(req: schemas.RunRequest, policies) -> schemas.RunResponse:
    try:
        cfg = parse_config(req.config)
        out_root = resolve_output_root(cfg, req.output_root)
        result = run_matrix(cfg, out_root, policies=policies)
    except _EXPECTED as e:
        _fail(e)
    return schemas.RunResponse(
        output_root=str(out_root),
        cells=[schemas.CellInfo(**c) for c in result["cells"]],
        summary=[schemas.SummaryRow(**r) for r in result["summary"]],
        summary_csv=str(out_root / result["summary_csv"]))


@app.post("/experiments/run", response_model=schemas.RunResponse)
def run_experiments(req: schemas.RunRequest) -> schemas.RunResponse:
    return _run(req, tuple(req.policies) if req.policies else None)


@app.post("/experiments/ablate", response_model=schemas.RunResponse)
def ablate(req: schemas.RunRequest) -> schemas.RunResponse:
    """Freeze-policy ablation: fqat under every (requested) policy variant."""
    try:
        cfg = parse_config(req.config)
        if "fqat" not in cfg.run.methods:
            raise ConfigError("run.methods must include fqat for an ablation")
    except _EXPECTED as e:
        _fail(e)
    policies = tuple(req.policies) if req.policies else ABLATION_POLICIES
    return _run(req, policies)


@app.post("/experiments/summarize", response_model=schemas.SummarizeResponse)
def summarize_runs(req: schemas.SummarizeRequest) -> schemas.SummarizeResponse:
    try:
        out_root = _resolve(req.output, None)
        if not out_root.is_dir():
            raise FileNotFoundError(f"no output directory at {out_root}")
        result = summarize(out_root)
    except _EXPECTED as e:
        _fail(e)
    return schemas.SummarizeResponse(
        output_root=str(out_root),
        rows=[schemas.SummaryRow(**r) for r in result["rows"]],
        summary_csv=str(out_root / "summary.csv"))


@app.post("/landscape/probe", response_model=schemas.ProbeResponse)
def probe(req: schemas.ProbeRequest) -> schemas.ProbeResponse:
    try:
        out_root = _resolve(req.output, None)
        probe_cfg = ProbeConfig(n_points=req.n_points, radius=req.radius,
                                n_directions=req.n_directions,
                                rho_probe=req.rho_probe)
        report = probe_cell(out_root, req.cell, probe_cfg, dims=req.dims,
                            seed=req.seed)
    except _EXPECTED as e:
        _fail(e)
    return schemas.ProbeResponse(
        cell=report["cell"], sharpness_proxy=report["sharpness_proxy"],
        dims=report["dims"], rho_probe=report["rho_probe"],
        n_directions=report["n_directions"], radius=report["radius"],
        n_points=report["n_points"], probe_seed=report["probe_seed"],
        flagged=report["flagged"],
        slice_csv=str(out_root / "cells" / req.cell / "slice.csv"),
        note=report["note"])

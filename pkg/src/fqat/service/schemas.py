"""Request/response bodies for the experiment service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class GenerateDataRequest(BaseModel):
    config: str = ""                 # INI text; the [data] section drives generation
    path: str = "dataset.txt"        # written under output root unless absolute
    output_root: str | None = None


class GenerateDataResponse(BaseModel):
    path: str
    domains: list[str]
    sizes: dict[str, int]
    dim: int
    n_classes: int
    seed: int


class RunRequest(BaseModel):
    config: str                      # full INI config text
    output_root: str | None = None   # base for a relative run.output
    policies: list[str] | None = None  # fqat-only policy axis


class CellInfo(BaseModel):
    key: str
    dir: str
    skipped: bool
    method: str
    policy: str
    label: str
    domain: str
    seed: int
    bits: int
    best_val_step: int
    best_val_acc: float
    test_acc_at_best: float


class SummaryRow(BaseModel):
    label: str
    bits: int
    domain: str
    n_runs: int
    val_acc_mean: float
    val_acc_std: float
    test_acc_mean: float
    test_acc_std: float


class RunResponse(BaseModel):
    output_root: str
    cells: list[CellInfo]
    summary: list[SummaryRow]
    summary_csv: str


class SummarizeRequest(BaseModel):
    output: str                      # output root holding cells/


class SummarizeResponse(BaseModel):
    output_root: str
    rows: list[SummaryRow]
    summary_csv: str


class ProbeRequest(BaseModel):
    output: str
    cell: str                        # cell key under <output>/cells/
    dims: int = 1
    n_points: int = Field(default=21, ge=3)
    radius: float = Field(default=0.5, gt=0)
    n_directions: int = Field(default=8, ge=1)
    rho_probe: float = Field(default=0.1, gt=0)
    seed: int = 0


class ProbeResponse(BaseModel):
    cell: str
    sharpness_proxy: float
    dims: int
    rho_probe: float
    n_directions: int
    radius: float
    n_points: int
    probe_seed: int
    flagged: list[str]
    slice_csv: str
    note: str

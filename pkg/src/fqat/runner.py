"""Experiment matrix orchestration and on-disk persistence.

Layout under an output root:

  config.ini        canonical resolved matrix config (rerun guard)
  dataset.txt       generated domains, bit-exact text format
  fp/<key>/         stage-1 checkpoints, shared by all quantized methods
  cells/<key>/      one (method, policy, domain, seed) cell:
                    run.jsonl, trace.csv, model.json, cell.ini
  summary.csv       aggregate table, recomputable from the run files

Cell keys hash the resolved hyperparameters plus the cell coordinates, so
rerunning the same config skips completed cells and a changed config in the
same directory is refused with a diff.  All files are text with repr-level
float precision; identical (config, seed) reruns produce byte-identical
files.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import os
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, serialize_config
from .data import (DomainDataset, GeneratorConfig, SplitPlan, generate_domains,
                   load_dataset, save_dataset)
from .landscape import ProbeConfig, loss_slice, sharpness_proxy, write_slice_csv
from .model import net_from_state, state_dict
from .training import RunRecord, train_fp, train_quant

SUMMARY_NOTE = "# std columns are population std (ddof=0) over completed runs"


class ConfigMismatchError(Exception):
    """Same output directory, different config; message carries the diff."""


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _r(x) -> str:
    return "" if x is None else repr(float(x))


def _hyper_text(cfg: ExperimentConfig) -> str:
    # everything but the [run] section, which names the matrix, not a cell
    return serialize_config(cfg).split("[run]")[0]


def cell_key(cfg: ExperimentConfig, method: str, policy: str, domain: str,
             seed: int) -> str:
    coord = f"method={method}\npolicy={policy}\ndomain={domain}\nseed={seed}\n"
    return _digest(_hyper_text(cfg) + coord)


def fp_key(cfg: ExperimentConfig, domain: str, seed: int) -> str:
    parts = [f"domain={domain}", f"seed={seed}"]
    for fl in fields(cfg.data):
        parts.append(f"data.{fl.name}={getattr(cfg.data, fl.name)!r}")
    parts.append(f"model.hidden={cfg.model.hidden!r}")
    for k in ("steps_fp", "batch_size", "lr_theta", "weight_decay", "eval_every"):
        parts.append(f"train.{k}={getattr(cfg.train, k)!r}")
    return _digest("\n".join(parts))


def generator_config(cfg: ExperimentConfig) -> GeneratorConfig:
    d = cfg.data
    return GeneratorConfig(n_domains=d.n_domains, n_per_domain=d.n_per_domain,
                           n_classes=d.n_classes, dim=d.dim, sigma=d.sigma,
                           radius=d.radius, rotation_deg=d.rotation_deg,
                           shift=d.shift, offset=d.offset)


def resolve_output_root(cfg: ExperimentConfig, base: str | None = None) -> Path:
    """run.output, absolute or under base / $FQAT_OUTPUT_ROOT / cwd."""
    out = Path(cfg.run.output)
    if out.is_absolute():
        return out
    root = base if base is not None else os.environ.get("FQAT_OUTPUT_ROOT", ".")
    return Path(root) / out


# -- record persistence -------------------------------------------------------


def record_to_jsonl(record: RunRecord) -> str:
    lines = [json.dumps({
        "kind": "meta", "method": record.method, "policy": record.policy,
        "label": record.label, "domain": record.test_domain,
        "seed": record.seed, "bits": record.bits})]
    for r in record.eval_rows:
        lines.append(json.dumps({
            "kind": "eval", "step": r.step, "val_loss": r.val_loss,
            "val_acc": r.val_acc, "test_loss": r.test_loss,
            "test_acc": r.test_acc}))
    for step, value in record.gap_rows:
        lines.append(json.dumps({"kind": "gap", "step": step, "value": value}))
    lines.append(json.dumps({
        "kind": "final", "best_val_step": record.best_val_step,
        "best_val_acc": record.best_val_acc,
        "test_acc_at_best": record.test_acc_at_best,
        "final_scales": record.final_scales,
        "batch_domains": list(record.batch_domains),
        "calib_domains": list(record.calib_domains)}))
    return "\n".join(lines) + "\n"


def read_run(path) -> dict:
    out = {"meta": None, "evals": [], "gaps": [], "final": None}
    with open(path) as f:
        for line in f:
            row = json.loads(line)
            kind = row.pop("kind")
            if kind == "meta":
                out["meta"] = row
            elif kind == "eval":
                out["evals"].append(row)
            elif kind == "gap":
                out["gaps"].append(row)
            elif kind == "final":
                out["final"] = row
    if out["meta"] is None or out["final"] is None:
        raise ValueError(f"{path}: incomplete run file")
    return out


def dump_trace(record: RunRecord, path) -> None:
    """Per-step CSV behind the freeze diagnostics; empty record -> header only."""
    lines = ["step,scale_id,g_va,g_flat,delta,frozen,loss_va,loss_flat"]
    for r in record.step_rows:
        lines.append(f"{r.step},{r.scale_id},{_r(r.g_va)},{_r(r.g_flat)},"
                     f"{_r(r.delta)},{int(r.frozen)},{_r(r.loss_va)},"
                     f"{_r(r.loss_flat)}")
    try:
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as e:
        raise OSError(f"cannot write trace to {path}: {e}") from e


def read_trace(path) -> list[dict]:
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = []
        for line in f:
            vals = line.rstrip("\n").split(",")
            row = dict(zip(header, vals))
            rows.append(row)
    return rows


# -- cells --------------------------------------------------------------------


def ensure_fp(dataset: DomainDataset, cfg: ExperimentConfig, domain: str,
              seed: int, out_root: Path) -> Path:
    """Train (or reuse) the stage-1 checkpoint for one (domain, seed)."""
    fpdir = Path(out_root) / "fp" / fp_key(cfg, domain, seed)
    if (fpdir / "model.json").exists():
        return fpdir
    plan = SplitPlan(domain, tuple(d for d in dataset.domains if d != domain),
                     cfg.data.val_fraction)
    record, net = train_fp(dataset, plan, cfg, seed)
    fpdir.mkdir(parents=True, exist_ok=True)
    (fpdir / "run.jsonl").write_text(record_to_jsonl(record))
    dump_trace(record, fpdir / "trace.csv")
    (fpdir / "model.json").write_text(json.dumps(state_dict(net)))
    return fpdir


def _cell_info(key: str, meta: dict, final: dict, skipped: bool) -> dict:
    return {"key": key, "dir": f"cells/{key}", "skipped": skipped,
            "method": meta["method"], "policy": meta["policy"],
            "label": meta["label"], "domain": meta["domain"],
            "seed": meta["seed"], "bits": meta["bits"],
            "best_val_step": final["best_val_step"],
            "best_val_acc": final["best_val_acc"],
            "test_acc_at_best": final["test_acc_at_best"]}


def run_cell(dataset: DomainDataset, cfg: ExperimentConfig, method: str,
             policy: str, domain: str, seed: int, out_root: Path) -> dict:
    out_root = Path(out_root)
    key = cell_key(cfg, method, policy, domain, seed)
    cdir = out_root / "cells" / key
    runfile = cdir / "run.jsonl"
    if runfile.exists():
        data = read_run(runfile)
        return _cell_info(key, data["meta"], data["final"], skipped=True)
    cdir.mkdir(parents=True, exist_ok=True)
    if method == "fp_erm":
        fpdir = ensure_fp(dataset, cfg, domain, seed, out_root)
        for fname in ("run.jsonl", "trace.csv", "model.json"):
            (cdir / fname).write_bytes((fpdir / fname).read_bytes())
    else:
        plan = SplitPlan(domain,
                         tuple(d for d in dataset.domains if d != domain),
                         cfg.data.val_fraction)
        fpdir = ensure_fp(dataset, cfg, domain, seed, out_root)
        fp_state = json.loads((fpdir / "model.json").read_text())
        fp_theta = {name: np.array(v, dtype=np.float64)
                    for name, v in fp_state["theta"].items()}
        record, net = train_quant(dataset, plan, cfg, method, seed, fp_theta,
                                  policy=policy)
        (cdir / "run.jsonl").write_text(record_to_jsonl(record))
        dump_trace(record, cdir / "trace.csv")
        (cdir / "model.json").write_text(json.dumps(state_dict(net)))
    (cdir / "cell.ini").write_text(
        f"[cell]\nkey = {key}\nmethod = {method}\npolicy = {policy}\n"
        f"domain = {domain}\nseed = {seed}\n")
    data = read_run(runfile)
    return _cell_info(key, data["meta"], data["final"], skipped=False)


def _policy_for(cfg: ExperimentConfig, method: str) -> str:
    return cfg.freeze.policy if method == "fqat" else "off"


def prepare_output(cfg: ExperimentConfig, out_root: Path) -> DomainDataset:
    """Create/validate the output directory and its dataset."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    canon = serialize_config(cfg)
    cfg_path = out_root / "config.ini"
    if cfg_path.exists():
        existing = cfg_path.read_text()
        if existing != canon:
            diff = "\n".join(difflib.unified_diff(
                existing.splitlines(), canon.splitlines(),
                fromfile="existing config.ini", tofile="requested config",
                lineterm=""))
            raise ConfigMismatchError(
                f"output directory {out_root} holds runs for a different "
                f"config; refusing to mix.\n{diff}")
    else:
        cfg_path.write_text(canon)
    ds_path = out_root / "dataset.txt"
    if ds_path.exists():
        return load_dataset(ds_path)
    dataset = generate_domains(cfg.data.data_seed, generator_config(cfg))
    save_dataset(dataset, ds_path)
    return dataset


def run_matrix(cfg: ExperimentConfig, out_root: Path,
               policies: tuple[str, ...] | None = None) -> dict:
    """Execute the (method x policy x domain x seed) matrix; resume-safe."""
    out_root = Path(out_root)
    dataset = prepare_output(cfg, out_root)
    domains = cfg.run.domains or tuple(dataset.domains)
    for d in domains:
        if d not in dataset.domains:
            raise ValueError(f"run.domains: unknown domain {d!r}")
    cells = []
    for method in cfg.run.methods:
        if method == "fqat" and policies:
            pols = policies
        else:
            pols = (_policy_for(cfg, method),)
        for policy in pols:
            for domain in domains:
                for seed in cfg.run.seeds:
                    cells.append(run_cell(dataset, cfg, method, policy,
                                          domain, seed, out_root))
    summary = summarize(out_root)
    return {"cells": cells, "summary": summary["rows"],
            "summary_csv": "summary.csv"}


# -- aggregation ---------------------------------------------------------------


def summarize(out_root: Path) -> dict:
    """Aggregate every completed cell; writes summary.csv and returns rows."""
    out_root = Path(out_root)
    cells_dir = out_root / "cells"
    runs = []
    if cells_dir.is_dir():
        for runfile in sorted(cells_dir.glob("*/run.jsonl")):
            runs.append(read_run(runfile))
    groups: dict[tuple, list[dict]] = {}
    for r in runs:
        k = (r["meta"]["label"], r["meta"]["bits"], r["meta"]["domain"])
        groups.setdefault(k, []).append(r)
    rows = []
    for (label, bits, domain), members in groups.items():
        rows.append(_summary_row(label, bits, domain, members))
    pooled: dict[tuple, list[dict]] = {}
    for r in runs:
        pooled.setdefault((r["meta"]["label"], r["meta"]["bits"]), []).append(r)
    for (label, bits), members in pooled.items():
        rows.append(_summary_row(label, bits, "all", members))
    rows.sort(key=lambda r: (r["label"], str(r["bits"]), r["domain"]))
    lines = [SUMMARY_NOTE,
             "label,bits,domain,n_runs,val_acc_mean,val_acc_std,"
             "test_acc_mean,test_acc_std"]
    for r in rows:
        lines.append(f"{r['label']},{r['bits']},{r['domain']},{r['n_runs']},"
                     f"{_r(r['val_acc_mean'])},{_r(r['val_acc_std'])},"
                     f"{_r(r['test_acc_mean'])},{_r(r['test_acc_std'])}")
    (out_root / "summary.csv").write_text("\n".join(lines) + "\n")
    return {"rows": rows}


def _summary_row(label: str, bits: int, domain: str, members: list[dict]) -> dict:
    vals = np.array([m["final"]["best_val_acc"] for m in members])
    tests = np.array([m["final"]["test_acc_at_best"] for m in members])
    return {"label": label, "bits": bits, "domain": domain,
            "n_runs": len(members),
            "val_acc_mean": float(vals.mean()),
            "val_acc_std": float(vals.std()),
            "test_acc_mean": float(tests.mean()),
            "test_acc_std": float(tests.std())}


# -- landscape probe over persisted cells ---------------------------------------


def probe_cell(out_root: Path, key: str, probe: ProbeConfig, dims: int = 1,
               seed: int = 0) -> dict:
    """Probe a persisted cell's model on its training data; writes slice CSV."""
    from .config import load_config
    from .training import _probe_batch, _splits   # shared batch convention

    out_root = Path(out_root)
    cdir = out_root / "cells" / key
    if not (cdir / "model.json").exists():
        raise FileNotFoundError(f"no model for cell {key!r} under {out_root}")
    cfg = load_config(out_root / "config.ini")
    dataset = load_dataset(out_root / "dataset.txt")
    meta = read_run(cdir / "run.jsonl")["meta"]
    net = net_from_state(json.loads((cdir / "model.json").read_text()))
    plan = SplitPlan(meta["domain"],
                     tuple(d for d in dataset.domains if d != meta["domain"]),
                     cfg.data.val_fraction)
    train, _, _ = _splits(dataset, plan, cfg, meta["seed"])
    X, y = _probe_batch(train, cfg.train.batch_size)
    result = loss_slice(net, X, y, probe, dims=dims, seed=seed)
    write_slice_csv(result, cdir / "slice.csv")
    proxy = sharpness_proxy(net, X, y, probe, seed=seed)
    report = {"cell": key, "sharpness_proxy": proxy, "dims": dims,
              "rho_probe": probe.rho_probe, "n_directions": probe.n_directions,
              "radius": probe.radius, "n_points": probe.n_points,
              "probe_seed": seed, "flagged": list(result.flagged),
              "note": "sharpness_proxy is this artifact's scalar stand-in "
                      "for a loss-surface plot"}
    (cdir / "probe.json").write_text(json.dumps(report))
    return report

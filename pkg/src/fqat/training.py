"""Two-stage training: full-precision ERM, then quantized training.

Stage 1 trains a plain float net on the training domains.  Stage 2 clones
it through the quantizer (scales fitted on train-domain data only) and
trains under one of the studied methods:

  fp_erm    stage 1 only
  qat       single-pass training, scales follow their plain gradient
  qat_sagm  dual-gradient steps, freezing disabled
  fqat      dual-gradient steps plus the disorder-guided freeze controller

Every batch concatenates an equal-sized draw from each training domain and
carries domain provenance; drawing from a domain outside the split plan
raises LeakageError.  The trace logs, per step and scale, the two
gradients, the freeze flag applied at that step's update, and (on refresh
steps only) the fresh disorder value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, method_label
from .data import DomainDataset, SplitPlan, split_dataset
from .freezing import FreezeController
from .model import DenseNet, NetConfig, quantize_model
from .quantizer import SCALE_FLOOR
from .sagm import (SagmConfig, apply_theta_update, compute_dual_gradients,
                   compute_surrogate_gap, vanilla_step)

DUAL_METHODS = ("qat_sagm", "fqat")


class LeakageError(Exception):
    """A sample from outside the allowed domains reached training."""


@dataclass(frozen=True)
class EvalRow:
    step: int
    val_loss: float
    val_acc: float
    test_loss: float
    test_acc: float


@dataclass(frozen=True)
class StepRow:
    step: int
    scale_id: str
    g_va: float
    g_flat: float | None
    delta: float | None
    frozen: bool
    loss_va: float
    loss_flat: float | None


@dataclass
class RunRecord:
    method: str
    policy: str
    label: str
    test_domain: str
    seed: int
    bits: int
    eval_rows: list[EvalRow] = field(default_factory=list)
    step_rows: list[StepRow] = field(default_factory=list)
    gap_rows: list[tuple[int, float]] = field(default_factory=list)
    batch_domains: tuple[str, ...] = ()
    calib_domains: tuple[str, ...] = ()
    best_val_step: int = -1
    best_val_acc: float = float("nan")
    test_acc_at_best: float = float("nan")
    final_scales: dict[str, float] = field(default_factory=dict)

    def finalize(self) -> None:
        if not self.eval_rows:
            raise ValueError("cannot finalize a record with no eval rows")
        best = max(self.eval_rows, key=lambda r: (r.val_acc, -r.step))
        self.best_val_step = best.step
        self.best_val_acc = best.val_acc
        self.test_acc_at_best = best.test_acc


class DomainBatchSampler:
    """Equal per-domain draws, concatenated in fixed domain order."""

    def __init__(self, train: dict[str, tuple[np.ndarray, np.ndarray]],
                 allowed: tuple[str, ...], batch_size: int, seed):
        self.parts = [(d, train[d][0], train[d][1]) for d in train]
        self.allowed = frozenset(allowed)
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        xs, ys = [], []
        for d, X, y in self.parts:
            if d not in self.allowed:
                raise LeakageError(f"batch drew from excluded domain {d!r}")
            idx = self.rng.integers(0, len(y), self.batch_size)
            xs.append(X[idx])
            ys.append(y[idx])
        return np.concatenate(xs), np.concatenate(ys)


def evaluate(net: DenseNet, X: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """(accuracy, mean loss) on a fixed sample set; no gradients involved."""
    if len(np.asarray(y)) == 0:
        raise ValueError("evaluate requires non-empty samples")
    return net.accuracy(X, y), net.loss(X, y)


def _splits(dataset: DomainDataset, plan: SplitPlan, cfg: ExperimentConfig,
            seed: int):
    train, val, test = split_dataset(dataset, plan, seed=[2, seed])
    Xv = np.concatenate([val[d][0] for d in train])
    yv = np.concatenate([val[d][1] for d in train])
    return train, (Xv, yv), test


def _eval_row(step: int, net: DenseNet, val, test) -> EvalRow:
    val_acc, val_loss = evaluate(net, *val)
    test_acc, test_loss = evaluate(net, *test)
    return EvalRow(step=step, val_loss=val_loss, val_acc=val_acc,
                   test_loss=test_loss, test_acc=test_acc)


def _probe_batch(train: dict, batch_size: int):
    xs = [train[d][0][:batch_size] for d in train]
    ys = [train[d][1][:batch_size] for d in train]
    return np.concatenate(xs), np.concatenate(ys)


def train_fp(dataset: DomainDataset, plan: SplitPlan, cfg: ExperimentConfig,
             seed: int) -> tuple[RunRecord, DenseNet]:
    """Stage 1: ERM on the training domains; also the fp_erm method itself."""
    t = cfg.train
    train, val, test = _splits(dataset, plan, cfg, seed)
    net = DenseNet(NetConfig(in_dim=dataset.dim, hidden=cfg.model.hidden,
                             n_classes=dataset.n_classes), seed=[0, seed])
    sampler = DomainBatchSampler(train, plan.train_domains, t.batch_size,
                                 seed=[1, seed])
    record = RunRecord(method="fp_erm", policy="off", label=method_label("fp_erm"),
                       test_domain=plan.test_domain, seed=seed, bits=0,
                       batch_domains=plan.train_domains)
    for step in range(1, t.steps_fp + 1):
        X, y = sampler.next_batch()
        vanilla_step(net, X, y, t.lr_theta, t.weight_decay)
        if step % t.eval_every == 0:
            record.eval_rows.append(_eval_row(step, net, val, test))
    record.finalize()
    return record, net


def train_quant(dataset: DomainDataset, plan: SplitPlan, cfg: ExperimentConfig,
                method: str, seed: int, fp_theta: dict[str, np.ndarray],
                policy: str | None = None) -> tuple[RunRecord, DenseNet]:
    """Stage 2 for qat / qat_sagm / fqat starting from a stage-1 checkpoint."""
    if method not in ("qat", *DUAL_METHODS):
        raise ValueError(f"unknown quantized method {method!r}")
    if fp_theta is None:
        raise ValueError("stage 2 requires a full-precision checkpoint")
    t, bits = cfg.train, cfg.model.bits
    if bits == 0:
        raise ValueError("quantized methods require model.bits >= 2")
    train, val, test = _splits(dataset, plan, cfg, seed)
    fp_net = DenseNet(NetConfig(in_dim=dataset.dim, hidden=cfg.model.hidden,
                                n_classes=dataset.n_classes), theta=fp_theta)
    calib_domains = tuple(train)
    for d in calib_domains:
        if d not in plan.train_domains:
            raise LeakageError(f"calibration drew from excluded domain {d!r}")
    calib_X = np.concatenate([train[d][0] for d in calib_domains])
    net = quantize_model(fp_net, bits, calib_X, cfg.model.lsq_norm)

    if policy is None:
        policy = cfg.freeze.policy if method == "fqat" else "off"
    controller = None
    sagm_cfg = None
    if method in DUAL_METHODS:
        controller = FreezeController(net.scale_ids(), policy,
                                      cfg.freeze.threshold, cfg.freeze.window,
                                      t.lr_scale, cfg.freeze.scale_rule)
        sagm_cfg = SagmConfig(rho=cfg.sagm.rho, alpha=cfg.sagm.alpha)

    record = RunRecord(method=method, policy=policy,
                       label=method_label(method, policy),
                       test_domain=plan.test_domain, seed=seed, bits=bits,
                       batch_domains=plan.train_domains,
                       calib_domains=calib_domains)
    sampler = DomainBatchSampler(train, plan.train_domains, t.batch_size,
                                 seed=[3, seed])
    probe = _probe_batch(train, t.batch_size)
    for step in range(1, t.steps_quant + 1):
        X, y = sampler.next_batch()
        if method == "qat":
            loss, sgrads = vanilla_step(net, X, y, t.lr_theta, t.weight_decay)
            for sid, sf in net.scales.items():
                sf.value = max(sf.value - t.lr_scale * sgrads[sid], SCALE_FLOOR)
                record.step_rows.append(StepRow(
                    step=step, scale_id=sid, g_va=sgrads[sid], g_flat=None,
                    delta=None, frozen=False, loss_va=loss, loss_flat=None))
        else:
            duals = compute_dual_gradients(net, X, y, sagm_cfg)
            flags = controller.frozen    # flags applied at this step's update
            apply_theta_update(net, duals, t.lr_theta, t.weight_decay)
            refresh = controller.step(net.scales, duals.scale_grads_va,
                                      duals.scale_grads_flat)
            for sid in net.scales:
                record.step_rows.append(StepRow(
                    step=step, scale_id=sid, g_va=duals.scale_grads_va[sid],
                    g_flat=duals.scale_grads_flat[sid],
                    delta=None if refresh is None else refresh[sid],
                    frozen=flags[sid], loss_va=duals.loss_va,
                    loss_flat=duals.loss_flat))
        if step % t.eval_every == 0:
            record.eval_rows.append(_eval_row(step, net, val, test))
            if method in DUAL_METHODS:
                record.gap_rows.append(
                    (step, compute_surrogate_gap(net, *probe, cfg.sagm.rho)))
    record.finalize()
    record.final_scales = net.get_scale_values()
    return record, net


def run_experiment(dataset: DomainDataset, plan: SplitPlan,
                   cfg: ExperimentConfig, method: str, seed: int,
                   fp_theta: dict[str, np.ndarray] | None = None,
                   policy: str | None = None) -> tuple[RunRecord, DenseNet]:
    """One (method, test domain, seed) cell; quantized methods need fp_theta."""
    if method == "fp_erm":
        return train_fp(dataset, plan, cfg, seed)
    if fp_theta is None:
        raise ValueError(f"method {method!r} needs a stage-1 checkpoint")
    return train_quant(dataset, plan, cfg, method, seed, fp_theta, policy)

"""Synthetic multi-domain classification tasks.

Classes are Gaussian clusters whose means sit on a circle in the first two
feature dimensions; every domain applies its own rotation and shift to the
shared clusters, which is the whole domain gap.  A constant positive offset
keeps features in unsigned-quantizer range.  Export format is line
oriented: one header, then one sample per line as
``domain label f0 f1 ...`` with floats written via repr so a round trip is
bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HEADER_MAGIC = "fqat-dataset"


@dataclass(frozen=True)
class GeneratorConfig:
    n_domains: int = 4
    n_per_domain: int = 400
    n_classes: int = 5
    dim: int = 6
    sigma: float = 0.45
    radius: float = 2.0
    rotation_deg: float = 14.0   # per-domain rotation increment in dims (0,1)
    shift: float = 0.3           # per-domain shift increment along dim 0
    offset: float = 4.5          # global positive shift for unsigned input quant


@dataclass
class DomainDataset:
    domains: list[str]
    X: dict[str, np.ndarray]
    y: dict[str, np.ndarray]
    n_classes: int
    dim: int
    generator_seed: int

    def domain_sizes(self) -> dict[str, int]:
        return {d: len(self.y[d]) for d in self.domains}


@dataclass(frozen=True)
class SplitPlan:
    test_domain: str
    train_domains: tuple[str, ...]
    val_fraction: float

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.test_domain in self.train_domains:
            raise ValueError("test domain cannot also be a train domain")


def generate_domains(seed: int, config: GeneratorConfig = GeneratorConfig()) -> DomainDataset:
    """Deterministic class-conditional Gaussians under per-domain transforms."""
    c = config
    if c.n_domains < 3:
        raise ValueError("need at least 3 domains for leave-one-out")
    if c.n_classes < 2 or c.dim < 2 or c.n_per_domain < c.n_classes:
        raise ValueError("invalid generator sizes")
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(c.n_classes) / c.n_classes
    means = np.zeros((c.n_classes, c.dim))
    means[:, 0] = c.radius * np.cos(angles)
    means[:, 1] = c.radius * np.sin(angles)
    domains = [f"domain{d}" for d in range(c.n_domains)]
    X: dict[str, np.ndarray] = {}
    y: dict[str, np.ndarray] = {}
    base = c.n_per_domain // c.n_classes
    counts = [base + (1 if k < c.n_per_domain % c.n_classes else 0)
              for k in range(c.n_classes)]
    for d, name in enumerate(domains):
        theta = np.deg2rad(c.rotation_deg) * d
        rot = np.eye(c.dim)
        rot[0, 0] = rot[1, 1] = np.cos(theta)
        rot[0, 1] = -np.sin(theta)
        rot[1, 0] = np.sin(theta)
        shift = np.zeros(c.dim)
        shift[0] = c.shift * d
        xs, ys = [], []
        for k in range(c.n_classes):
            pts = means[k] + c.sigma * rng.standard_normal((counts[k], c.dim))
            xs.append(pts @ rot.T + shift)
            ys.append(np.full(counts[k], k, dtype=np.int64))
        Xd = np.concatenate(xs) + c.offset
        yd = np.concatenate(ys)
        perm = rng.permutation(len(yd))
        X[name], y[name] = Xd[perm], yd[perm]
    return DomainDataset(domains=domains, X=X, y=y, n_classes=c.n_classes,
                         dim=c.dim, generator_seed=seed)


def split_dataset(dataset: DomainDataset, plan: SplitPlan, seed: int):
    """Per-train-domain train/val carve-out; the test domain stays whole.

    Returns (train, val, test) where train and val map domain name to
    (X, y) and test is the single held-out (X, y).
    """
    if plan.test_domain not in dataset.domains:
        raise ValueError(f"unknown test domain {plan.test_domain!r}")
    for d in plan.train_domains:
        if d not in dataset.domains:
            raise ValueError(f"unknown train domain {d!r}")
    rng = np.random.default_rng(seed)
    train: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    val: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for d in plan.train_domains:
        Xd, yd = dataset.X[d], dataset.y[d]
        n_val = max(1, int(round(plan.val_fraction * len(yd))))
        perm = rng.permutation(len(yd))
        v, t = perm[:n_val], perm[n_val:]
        if len(t) == 0:
            raise ValueError(f"domain {d!r} too small for val_fraction")
        train[d] = (Xd[t], yd[t])
        val[d] = (Xd[v], yd[v])
    test = (dataset.X[plan.test_domain], dataset.y[plan.test_domain])
    return train, val, test


def save_dataset(dataset: DomainDataset, path) -> None:
    lines = [f"{HEADER_MAGIC} dim={dataset.dim} classes={dataset.n_classes} "
             f"domains={len(dataset.domains)} seed={dataset.generator_seed}"]
    for d in dataset.domains:
        Xd, yd = dataset.X[d], dataset.y[d]
        for i in range(len(yd)):
            feats = " ".join(repr(float(v)) for v in Xd[i])
            lines.append(f"{d} {int(yd[i])} {feats}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(path) -> DomainDataset:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not lines or not lines[0].startswith(HEADER_MAGIC):
        raise ValueError(f"{path}: not a dataset file")
    meta = dict(tok.split("=", 1) for tok in lines[0].split()[1:])
    dim, n_classes = int(meta["dim"]), int(meta["classes"])
    n_domains, seed = int(meta["domains"]), int(meta["seed"])
    X: dict[str, list] = {}
    y: dict[str, list] = {}
    order: list[str] = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2 + dim:
            raise ValueError(f"{path}: malformed sample line: {ln[:60]}")
        d, label = parts[0], int(parts[1])
        if not 0 <= label < n_classes:
            raise ValueError(f"{path}: label {label} out of range")
        if d not in X:
            X[d], y[d] = [], []
            order.append(d)
        X[d].append([float(v) for v in parts[2:]])
        y[d].append(label)
    if len(order) != n_domains:
        raise ValueError(f"{path}: header says {n_domains} domains, found {len(order)}")
    return DomainDataset(
        domains=order,
        X={d: np.array(X[d], dtype=np.float64) for d in order},
        y={d: np.array(y[d], dtype=np.int64) for d in order},
        n_classes=n_classes, dim=dim, generator_seed=seed)

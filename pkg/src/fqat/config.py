"""Experiment configuration: INI-style text in, validated dataclasses out.

Every key has a default, so the empty string is a valid config.  Unknown
sections or keys are rejected with their full key path.  serialize_config
emits a canonical form (fixed order, repr floats) that survives a
parse/serialize round trip bit-exactly; resolved runs persist exactly this
form so reruns can be compared textually.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace


class ConfigError(ValueError):
    pass


METHODS = ("fp_erm", "qat", "qat_sagm", "fqat")

_METHOD_ALIASES = {
    "fp_erm": "fp_erm", "fp-erm": "fp_erm", "fperm": "fp_erm", "erm": "fp_erm",
    "qat": "qat",
    "qat_sagm": "qat_sagm", "qat+sagm": "qat_sagm", "qat-sagm": "qat_sagm",
    "fqat": "fqat",
}

_POLICY_ALIASES = {
    "adaptive": "adaptive",
    "no_unfreeze": "no_unfreeze", "nounfreeze": "no_unfreeze",
    "reverse_freeze": "reverse_freeze", "reversefreeze": "reverse_freeze",
    "freeze_both": "freeze_both", "freezeboth": "freeze_both",
    "alternate_update": "alternate_update", "alternateupdate": "alternate_update",
    "alter_update": "alternate_update", "alterupdate": "alternate_update",
    "off": "off",
}

_POLICY_LABELS = {
    "adaptive": "Adaptive", "no_unfreeze": "NoUnfreeze",
    "reverse_freeze": "ReverseFreeze", "freeze_both": "FreezeBoth",
    "alternate_update": "AlternateUpdate", "off": "Off",
}

_METHOD_LABELS = {"fp_erm": "FP-ERM", "qat": "QAT",
                  "qat_sagm": "QAT+SAGM", "fqat": "FQAT"}


def canonical_method(name: str) -> str:
    key = name.strip().lower()
    if key not in _METHOD_ALIASES:
        raise ConfigError(f"unknown method {name!r}")
    return _METHOD_ALIASES[key]


def canonical_policy(name: str) -> str:
    key = name.strip().lower()
    if key not in _POLICY_ALIASES:
        raise ConfigError(f"unknown freeze policy {name!r}")
    return _POLICY_ALIASES[key]


def method_label(method: str, policy: str = "adaptive") -> str:
    """Reporting label; FQAT ablation variants get a policy suffix."""
    if method == "fqat" and policy != "adaptive":
        return f"FQAT/{_POLICY_LABELS[policy]}"
    return _METHOD_LABELS[method]


@dataclass(frozen=True)
class DataSection:
    n_domains: int = 4
    n_per_domain: int = 400
    n_classes: int = 5
    dim: int = 6
    sigma: float = 0.45
    radius: float = 2.0
    rotation_deg: float = 14.0
    shift: float = 0.3
    offset: float = 4.5
    val_fraction: float = 0.2
    data_seed: int = 7


@dataclass(frozen=True)
class ModelSection:
    hidden: tuple[int, ...] = (16, 16, 16)
    bits: int = 3
    lsq_norm: bool = False


@dataclass(frozen=True)
class TrainSection:
    steps_fp: int = 500
    steps_quant: int = 400
    batch_size: int = 32        # per training domain, concatenated per step
    lr_theta: float = 0.05
    lr_scale: float = 0.005
    weight_decay: float = 0.0
    eval_every: int = 20
    optimizer: str = "gd"       # plain gradient descent is the only choice


@dataclass(frozen=True)
class SagmSection:
    rho: float = 0.2
    alpha: float = 0.001


@dataclass(frozen=True)
class FreezeSection:
    policy: str = "adaptive"
    threshold: float = 0.28
    window: int = 0             # 0 resolves to 2% of steps_quant (min 2)
    scale_rule: str = "sum"


@dataclass(frozen=True)
class RunSection:
    methods: tuple[str, ...] = ("fp_erm", "qat", "qat_sagm", "fqat")
    domains: tuple[str, ...] = ()   # empty tuple means every domain in turn
    seeds: tuple[int, ...] = (0, 1)
    output: str = "runs/default"


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSection = DataSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    sagm: SagmSection = SagmSection()
    freeze: FreezeSection = FreezeSection()
    run: RunSection = RunSection()


_SECTIONS = ("data", "model", "train", "sagm", "freeze", "run")
_SECTION_TYPES = {"data": DataSection, "model": ModelSection,
                  "train": TrainSection, "sagm": SagmSection,
                  "freeze": FreezeSection, "run": RunSection}


def _parse_value(path: str, raw: str, kind: type):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is str:
            return raw
        # remaining fields are tuples; element type follows the default
        if path == "run.methods":
            return tuple(canonical_method(t) for t in raw.split(",") if t.strip())
        if path == "run.domains":
            if raw.lower() in ("", "all"):
                return ()
            return tuple(t.strip() for t in raw.split(","))
        items = [t.strip() for t in raw.split(",") if t.strip()]
        return tuple(int(t) for t in items)
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"{path}: cannot parse {raw!r}") from None


def _format_value(path: str, value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if path == "run.domains" and not value:
            return "all"
        return ",".join(str(v) for v in value)
    return str(value)


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    d, m, t, s, f, r = cfg.data, cfg.model, cfg.train, cfg.sagm, cfg.freeze, cfg.run
    checks = [
        (d.n_domains >= 3, "data.n_domains: need >= 3 for leave-one-out"),
        (d.n_classes >= 2, "data.n_classes: need >= 2"),
        (d.dim >= 2, "data.dim: need >= 2"),
        (d.n_per_domain >= d.n_classes, "data.n_per_domain: need >= n_classes"),
        (d.sigma > 0, "data.sigma: must be positive"),
        (d.radius > 0, "data.radius: must be positive"),
        (0 < d.val_fraction < 1, "data.val_fraction: must lie in (0, 1)"),
        (m.bits == 0 or m.bits >= 2, "model.bits: 0 (off) or >= 2"),
        (len(m.hidden) >= 1 and all(h >= 1 for h in m.hidden),
         "model.hidden: need at least one positive width"),
        (t.steps_fp >= 1, "train.steps_fp: must be positive"),
        (t.steps_quant >= 1, "train.steps_quant: must be positive"),
        (t.batch_size >= 1, "train.batch_size: must be positive"),
        (t.lr_theta > 0, "train.lr_theta: must be positive"),
        (t.lr_scale > 0, "train.lr_scale: must be positive"),
        (t.weight_decay >= 0, "train.weight_decay: must be non-negative"),
        (1 <= t.eval_every <= t.steps_quant,
         "train.eval_every: must lie in [1, steps_quant]"),
        (t.optimizer == "gd",
         "train.optimizer: only gd is available (adaptive state would blur "
         "the disorder signal)"),
        (s.rho >= 0, "sagm.rho: must be non-negative"),
        (s.alpha >= 0, "sagm.alpha: must be non-negative"),
        (0 <= f.threshold <= 1, "freeze.threshold: must lie in [0, 1]"),
        (f.scale_rule in ("sum", "average"),
         "freeze.scale_rule: must be sum or average"),
        (len(r.methods) >= 1, "run.methods: need at least one method"),
        (len(r.seeds) >= 1, "run.seeds: need at least one seed"),
        (len(set(r.seeds)) == len(r.seeds), "run.seeds: duplicates"),
        (bool(r.output), "run.output: must be non-empty"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    policy = canonical_policy(f.policy)
    window = f.window
    if window == 0:
        window = max(2, round(0.02 * t.steps_quant))
    if window < 2:
        raise ConfigError("freeze.window: must be >= 2 (or 0 for auto)")
    if window > t.steps_quant:
        raise ConfigError("freeze.window: cannot exceed train.steps_quant")
    methods = tuple(canonical_method(x) for x in r.methods)
    return replace(cfg,
                   freeze=replace(f, policy=policy, window=window),
                   run=replace(r, methods=methods))


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    sections = {}
    for sec in parser.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        cls = _SECTION_TYPES[sec]
        known = {fl.name: fl for fl in fields(cls)}
        values = {}
        for key, raw in parser.items(sec):
            if key not in known:
                raise ConfigError(f"unknown key {sec}.{key}")
            default = getattr(cls(), key)
            kind = type(default) if not isinstance(default, tuple) else tuple
            values[key] = _parse_value(f"{sec}.{key}", raw, kind)
        sections[sec] = cls(**values)
    cfg = ExperimentConfig(**{sec: sections.get(sec, _SECTION_TYPES[sec]())
                              for sec in _SECTIONS})
    return _validate(cfg)


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for sec in _SECTIONS:
        lines.append(f"[{sec}]")
        obj = getattr(cfg, sec)
        for fl in fields(obj):
            path = f"{sec}.{fl.name}"
            lines.append(f"{fl.name} = {_format_value(path, getattr(obj, fl.name))}")
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())

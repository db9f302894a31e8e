"""Dense relu classifiers with optional fake-quantization attach points.

Placement for a net with linear layers 1..L: layer 1 quantizes only its
input activation (the data generator shifts features positive so the
unsigned grid fits), layers 2..L-1 quantize their weight matrix and input
activation, and the output layer runs in full precision.  Biases are never
quantized.  The default two-hidden-layer net therefore carries three
learned scales: fc1.act, fc2.act, fc2.weight.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .graph import (BiasAddNode, FakeQuantNode, Graph, InputNode, MatMulNode,
                    Parameter, ParamNode, ReluNode, SoftmaxXEntNode, backward,
                    forward)
from .quantizer import ACTIVATION, WEIGHT, QuantSpec, ScaleFactor, mse_init_scale


@dataclass(frozen=True)
class NetConfig:
    in_dim: int
    hidden: tuple[int, ...]
    n_classes: int
    bits: int = 0          # 0 disables quantization
    lsq_norm: bool = False

    @property
    def quantized(self) -> bool:
        return self.bits != 0

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.in_dim, *self.hidden, self.n_classes)


def scale_ids_for(config: NetConfig) -> list[str]:
    """Scale identifiers in graph construction order."""
    n_layers = len(config.dims) - 1
    ids = ["fc1.act"]
    for i in range(2, n_layers):
        ids += [f"fc{i}.act", f"fc{i}.weight"]
    return ids


class DenseNet:
    def __init__(self, config: NetConfig, seed: int | None = None,
                 theta: dict[str, np.ndarray] | None = None):
        if config.quantized and config.bits < 2:
            raise ValueError(f"bits must be 0 or >= 2, got {config.bits}")
        self.config = config
        self.n_layers = len(config.dims) - 1
        self.theta_version = 0
        rng = np.random.default_rng(seed)
        self.params: dict[str, Parameter] = {}
        for i in range(1, self.n_layers + 1):
            fan_in, fan_out = config.dims[i - 1], config.dims[i]
            if theta is not None:
                w = np.array(theta[f"fc{i}.weight"], dtype=np.float64)
                b = np.array(theta[f"fc{i}.bias"], dtype=np.float64)
                if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                    raise ValueError(f"layer {i} checkpoint shape mismatch")
            else:
                # He initialization for the relu stack
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
                b = np.zeros(fan_out)
            self.params[f"fc{i}.weight"] = Parameter(f"fc{i}.weight", w)
            self.params[f"fc{i}.bias"] = Parameter(f"fc{i}.bias", b)
        self.scales: dict[str, ScaleFactor] = {}
        if config.quantized:
            for sid in scale_ids_for(config):
                kind = ACTIVATION if sid.endswith(".act") else WEIGHT
                self.scales[sid] = ScaleFactor(1.0, QuantSpec.create(config.bits, kind), sid)
        self._build_graph()
        self._index_theta()

    # -- graph construction -------------------------------------------------

    def _build_graph(self) -> None:
        g = Graph()
        inp = g.add(InputNode("x", self.config.in_dim))
        cur: object = inp
        if "fc1.act" in self.scales:
            cur = g.add(FakeQuantNode("fc1.act.q", cur, self.scales["fc1.act"],
                                      self.config.lsq_norm))
        for i in range(1, self.n_layers + 1):
            w: object = g.add(ParamNode(self.params[f"fc{i}.weight"]))
            if f"fc{i}.weight" in self.scales:
                w = g.add(FakeQuantNode(f"fc{i}.weight.q", w,
                                        self.scales[f"fc{i}.weight"],
                                        self.config.lsq_norm))
            h = g.add(MatMulNode(f"fc{i}.mm", cur, w))
            h = g.add(BiasAddNode(f"fc{i}.add", h,
                                  g.add(ParamNode(self.params[f"fc{i}.bias"]))))
            if i < self.n_layers:
                cur = g.add(ReluNode(f"fc{i}.relu", h))
                if f"fc{i + 1}.act" in self.scales:
                    cur = g.add(FakeQuantNode(f"fc{i + 1}.act.q", cur,
                                              self.scales[f"fc{i + 1}.act"],
                                              self.config.lsq_norm))
            else:
                self._logits = h
        g.set_output(g.add(SoftmaxXEntNode("loss", self._logits)))
        self.graph = g
        self._input = inp

    def _index_theta(self) -> None:
        self._blocks = []
        start = 0
        for name, p in self.params.items():
            end = start + p.value.size
            kind = "weight" if name.endswith(".weight") else "bias"
            self._blocks.append((name, start, end, p.value.shape, kind))
            start = end
        self.n_theta = start

    # -- forward / backward --------------------------------------------------

    def loss(self, X: np.ndarray, y: np.ndarray) -> float:
        return forward(self.graph, X, y)

    def backward(self) -> None:
        backward(self.graph)

    def logits(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return self.graph.run(self._logits, feeds={self._input: X})

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.logits(X).argmax(axis=1)

    def accuracy(self, X: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(X) == np.asarray(y)))

    # -- flat parameter view (order: fc1.weight, fc1.bias, fc2.weight, ...) --

    def param_blocks(self) -> list[tuple[str, int, int, tuple, str]]:
        return list(self._blocks)

    def flat_theta(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.params.values()])

    def set_flat_theta(self, v: np.ndarray) -> None:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n_theta,):
            raise ValueError(f"expected flat theta of size {self.n_theta}")
        for name, start, end, shape, _ in self._blocks:
            self.params[name].value[...] = v[start:end].reshape(shape)
        self.theta_version += 1

    def add_to_flat_theta(self, v: np.ndarray) -> None:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n_theta,):
            raise ValueError(f"expected flat update of size {self.n_theta}")
        for name, start, end, shape, _ in self._blocks:
            self.params[name].value += v[start:end].reshape(shape)
        self.theta_version += 1

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([p.grad.ravel() for p in self.params.values()])

    def get_theta(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.params.items()}

    def set_theta(self, theta: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p.value[...] = theta[name]
        self.theta_version += 1

    # -- scales ---------------------------------------------------------------

    def scale_ids(self) -> list[str]:
        return list(self.scales)

    def get_scale_values(self) -> dict[str, float]:
        return {sid: sf.value for sid, sf in self.scales.items()}

    def set_scale_values(self, values: dict[str, float]) -> None:
        for sid, v in values.items():
            self.scales[sid].value = float(v)

    def scale_grad_values(self) -> dict[str, float]:
        return {sid: self.graph.scale_grads[sid] for sid in self.scales}

    def calibrate_scales(self, X: np.ndarray) -> dict[str, float]:
        """Set every scale by grid-search MSE fit to full-precision values.

        Activation statistics come from a plain float forward pass over X, so
        calibration sees the same tensors an unquantized net would produce.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("calibration batch must be non-empty 2-D")
        if "fc1.act" in self.scales:
            self._fit_scale("fc1.act", X)
        a = X
        for i in range(1, self.n_layers):
            w = self.params[f"fc{i}.weight"].value
            a = np.maximum(a @ w + self.params[f"fc{i}.bias"].value, 0.0)
            if f"fc{i + 1}.act" in self.scales:
                self._fit_scale(f"fc{i + 1}.act", a)
                self._fit_scale(f"fc{i + 1}.weight",
                                self.params[f"fc{i + 1}.weight"].value)
        return self.get_scale_values()

    def _fit_scale(self, sid: str, values: np.ndarray) -> None:
        sf = self.scales[sid]
        fitted = mse_init_scale(values, sf.spec, sid)
        sf.value = fitted.value
        sf.degenerate = fitted.degenerate


def state_dict(net: DenseNet) -> dict:
    """JSON-ready snapshot; floats survive a JSON round trip bit-exactly."""
    return {
        "config": {"in_dim": net.config.in_dim, "hidden": list(net.config.hidden),
                   "n_classes": net.config.n_classes, "bits": net.config.bits,
                   "lsq_norm": net.config.lsq_norm},
        "theta": {name: p.value.tolist() for name, p in net.params.items()},
        "scales": {sid: sf.value for sid, sf in net.scales.items()},
        "degenerate": {sid: sf.degenerate for sid, sf in net.scales.items()},
    }


def net_from_state(state: dict) -> DenseNet:
    c = state["config"]
    cfg = NetConfig(in_dim=c["in_dim"], hidden=tuple(c["hidden"]),
                    n_classes=c["n_classes"], bits=c["bits"],
                    lsq_norm=c["lsq_norm"])
    theta = {name: np.array(v, dtype=np.float64)
             for name, v in state["theta"].items()}
    net = DenseNet(cfg, theta=theta)
    for sid, v in state.get("scales", {}).items():
        net.scales[sid].value = float(v)
        net.scales[sid].degenerate = bool(state.get("degenerate", {}).get(sid, False))
    return net


def quantize_model(fp_net: DenseNet, bits: int, calib_X: np.ndarray,
                   lsq_norm: bool = False) -> DenseNet:
    """Clone a full-precision net into a quantized one with calibrated scales."""
    if fp_net.config.quantized:
        raise ValueError("source net is already quantized")
    cfg = replace(fp_net.config, bits=bits, lsq_norm=lsq_norm)
    net = DenseNet(cfg, theta=fp_net.get_theta())
    net.calibrate_scales(calib_X)
    return net

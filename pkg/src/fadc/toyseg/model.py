"""Small segmentation network: 3x3 stem, two FADC layers, 1x1 classifier.

An FADC layer chains FreqSelect -> AdaKern -> adaptive dilated conv; each
stage can be switched off independently for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .. import tensor as T
from ..adadr import AdaDrLossConfig, adadr_loss
from ..adakern import apply_adakern, init_lambda_predictor, predict_lambda
from ..autodiff import call, register, value_of
from ..conv import adaptive_dilated_conv2d, dilated_conv2d, init_predictor, predict_dilation
from ..freqselect import apply_freqselect, init_selection_predictor, predict_selection
from ..spectrum import HpConfig, hp_power_map

N_FADC = 2
INPUT_MEAN = 0.5


@dataclass(frozen=True)
class Toggles:
    use_adadr: bool = True
    use_adakern: bool = True
    use_freqselect: bool = True


@dataclass
class FadcLayerState:
    params: dict[str, np.ndarray]
    d_init: float = 2.0
    d_max: float = 8.0
    toggles: Toggles = field(default_factory=Toggles)
    k: int = 3


def init_fadc_layer(c_in: int, c_out: int, rng: np.random.Generator, k: int = 3,
                    d_init: float = 2.0, d_max: float = 8.0, toggles: Toggles = Toggles()) -> FadcLayerState:
    theta = init_predictor(c_in, k)
    phi = init_lambda_predictor(c_in, c_out)
    psi = init_selection_predictor(c_in)
    params = {
        # twice the He std: the neutral-start modulation of 0.5 halves the response
        "w": rng.normal(0.0, 2.0 * np.sqrt(2.0 / (c_in * k * k)), size=(c_out, c_in, k, k)),
        "b": np.zeros(c_out),
        "theta_w": theta["w"], "theta_b": theta["b"],
        "phi_w": phi["w"], "phi_b": phi["b"],
        "psi_w": psi["w"], "psi_b": psi["b"],
    }
    return FadcLayerState(params, d_init, d_max, toggles, k)


@dataclass
class LayerOutput:
    out: Any
    x_hat: Any
    dmap: Any = None
    mod: Any = None
    lam: Any = None
    sel: Any = None


def forward_fadc_layer(x, state: FadcLayerState, params: Mapping[str, Any] | None = None) -> LayerOutput:
    p = state.params if params is None else params
    tg = state.toggles
    res = LayerOutput(None, x)
    if tg.use_freqselect:
        res.sel = predict_selection(x, p["psi_w"], p["psi_b"])
        res.x_hat = apply_freqselect(x, res.sel)
    w = p["w"]
    if tg.use_adakern:
        res.lam = predict_lambda(res.x_hat, p["phi_w"], p["phi_b"])
        w = apply_adakern(w, res.lam)
    if tg.use_adadr:
        res.dmap, res.mod = predict_dilation(res.x_hat, p["theta_w"], p["theta_b"], state.d_init, state.k, state.d_max)
        y = adaptive_dilated_conv2d(res.x_hat, w, res.dmap, res.mod, p["b"])
    elif float(state.d_init).is_integer():
        y = dilated_conv2d(res.x_hat, w, int(state.d_init), p["b"])
    else:
        n, _, h, wd = np.shape(value_of(x))
        y = adaptive_dilated_conv2d(res.x_hat, w, np.full((n, 1, h, wd), float(state.d_init)), None, p["b"])
    res.out = T.relu(y)
    return res


# ---------------------------------------------------------------- loss


def _xent_fwd(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n, c, h, w = logits.shape
    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, labels[:, None].astype(np.int64), 1.0, axis=1)
    npx = n * h * w
    loss = -(logp * onehot).sum() / npx
    return np.array(loss), {"grad": (np.exp(logp) - onehot) / npx}


def _xent_bwd(ctx, g):
    return float(g) * ctx["grad"], None


register("softmax_xent", _xent_fwd, _xent_bwd)


def cross_entropy(logits, labels):
    """Mean per-pixel softmax cross entropy; labels are (n, h, w) ints."""
    return call("softmax_xent", logits, labels)


# ---------------------------------------------------------------- network


@dataclass
class ToyModel:
    params: dict[str, np.ndarray]
    layers: list[FadcLayerState]
    classes: int
    hp: HpConfig = field(default_factory=HpConfig)

    def param_names(self) -> list[str]:
        return list(self.params)


def init_model(channels: int = 8, classes: int = 4, seed: int = 0, d_init: float = 2.0,
               d_max: float = 8.0, toggles: Toggles = Toggles(), hp: HpConfig = HpConfig()) -> ToyModel:
    rng = np.random.default_rng(seed)
    params = {
        "stem_w": rng.normal(0.0, np.sqrt(2.0 / 9.0), size=(channels, 1, 3, 3)),
        "stem_b": np.zeros(channels),
    }
    layers = []
    for i in range(N_FADC):
        st = init_fadc_layer(channels, channels, rng, 3, d_init, d_max, toggles)
        for k, v in st.params.items():
            params[f"l{i}_{k}"] = v
        layers.append(st)
    params["head_w"] = rng.normal(0.0, np.sqrt(1.0 / channels), size=(classes, channels, 1, 1))
    params["head_b"] = np.zeros(classes)
    model = ToyModel(params, layers, classes, hp)
    _bind(model)
    return model


def _bind(model: ToyModel) -> None:
    for i, st in enumerate(model.layers):
        st.params = {k: model.params[f"l{i}_{k}"] for k in st.params}


def layer_params(p: Mapping[str, Any], i: int) -> dict[str, Any]:
    pre = f"l{i}_"
    return {k[len(pre):]: v for k, v in p.items() if k.startswith(pre)}


@dataclass
class ForwardResult:
    logits: Any
    layers: list[LayerOutput]
    hp: list[np.ndarray]


def forward(model: ToyModel, x, params: Mapping[str, Any] | None = None, with_hp: bool = True) -> ForwardResult:
    p = model.params if params is None else params
    # images live in [0, 1]; centring them keeps the stem away from a large DC offset
    x = np.asarray(x, dtype=np.float64) - INPUT_MEAN
    h = T.relu(dilated_conv2d(x, p["stem_w"], 1, p["stem_b"]))
    outs, hps = [], []
    for i, st in enumerate(model.layers):
        lo = forward_fadc_layer(h, st, layer_params(p, i))
        outs.append(lo)
        if with_hp and st.toggles.use_adadr:
            # ranking uses the feature the adaptive conv samples; constant for the tape
            hps.append(hp_power_map(value_of(lo.x_hat), model.hp))
        else:
            hps.append(None)
        h = lo.out
    logits = dilated_conv2d(h, p["head_w"], 1, p["head_b"])
    return ForwardResult(logits, outs, hps)


def loss_terms(model: ToyModel, fr: ForwardResult, labels: np.ndarray, loss_cfg: AdaDrLossConfig):
    task = cross_entropy(fr.logits, labels)
    aux = [adadr_loss(lo.dmap, hp, loss_cfg)
           for lo, hp in zip(fr.layers, fr.hp) if lo.dmap is not None and hp is not None]
    return task, aux


def predict(model: ToyModel, x: np.ndarray) -> np.ndarray:
    fr = forward(model, x, with_hp=False)
    return np.argmax(fr.logits, axis=1)

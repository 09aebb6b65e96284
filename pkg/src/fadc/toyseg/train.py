"""Training and evaluation loops for the toy segmentation model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from ..adadr import AdaDrLossConfig, total_loss
from ..autodiff import Tape
from ..spectrum import HpConfig
from .data import SynthSample, generate_dataset, split, stack
from .metrics import pearson, segmentation_metrics
from .model import N_FADC, Toggles, ToyModel, forward, init_model, loss_terms
from .rf import LayerSpec, receptive_field

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    image_size: int = 64
    dataset_size: int = 64
    classes: int = 4
    channels: int = 8
    epochs: int = 30
    batch_size: int = 8
    lr: float = 0.2
    momentum: float = 0.9
    predictor_lr_scale: float = 0.1
    w_adadr: float = 0.01
    q: float = 0.25
    s_window: int = 16
    d_ref: float = 2.0
    d_init: float = 2.0
    d_max: float = 8.0
    use_adadr: bool = True
    use_adakern: bool = True
    use_freqselect: bool = True

    def __post_init__(self):
        n = self.image_size
        if n < 4 or n & (n - 1):
            raise ValueError("image_size must be a power of two >= 4")
        if self.epochs < 0 or self.dataset_size < 2 or self.batch_size < 1:
            raise ValueError("epochs, dataset_size and batch_size must be positive")
        if not 2 <= self.classes:
            raise ValueError("need at least two classes")

    @property
    def toggles(self) -> Toggles:
        return Toggles(self.use_adadr, self.use_adakern, self.use_freqselect)

    @property
    def hp(self) -> HpConfig:
        return HpConfig(self.s_window, self.d_ref)

    @property
    def loss(self) -> AdaDrLossConfig:
        return AdaDrLossConfig(self.q, self.w_adadr, self.hp)

    def replace(self, **kw) -> TrainConfig:
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return TrainConfig(**vals)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, log_rows: list[dict]):
        super().__init__(message)
        self.log_rows = log_rows


def build_model(cfg: TrainConfig) -> ToyModel:
    return init_model(cfg.channels, cfg.classes, cfg.seed, cfg.d_init, cfg.d_max, cfg.toggles, cfg.hp)


def build_data(cfg: TrainConfig) -> tuple[list[SynthSample], list[SynthSample]]:
    data = generate_dataset(cfg.dataset_size, cfg.image_size, cfg.classes, cfg.seed)
    return split(data, cfg.seed)


def log_columns() -> list[str]:
    cols = ["epoch", "task_loss"]
    cols += [f"adadr_loss_l{i}" for i in range(N_FADC)]
    cols += ["pixel_accuracy"]
    cols += [f"mean_dilation_l{i}" for i in range(N_FADC)]
    cols += [f"lambda_ratio_l{i}" for i in range(N_FADC)]
    cols += [f"sel_b{b}" for b in range(4)]
    return cols


class _Stats:
    def __init__(self):
        self.sums: dict[str, float] = {}
        self.counts: dict[str, int] = {}

    def add(self, key: str, value: float, count: int = 1):
        self.sums[key] = self.sums.get(key, 0.0) + value * count
        self.counts[key] = self.counts.get(key, 0) + count

    def mean(self, key: str) -> float:
        return self.sums[key] / self.counts[key] if self.counts.get(key) else float("nan")


def _layer_stats(stats: _Stats, fr, n: int):
    for i, lo in enumerate(fr.layers):
        if lo.dmap is not None:
            stats.add(f"mean_dilation_l{i}", float(np.mean(_val(lo.dmap))), n)
        if lo.lam is not None:
            lam = _val(lo.lam)
            with np.errstate(divide="ignore", invalid="ignore"):
                stats.add(f"lambda_ratio_l{i}", float(np.mean(lam[:, 1] / lam[:, 0])), n)
        if lo.sel is not None:
            means = _val(lo.sel).mean(axis=(0, 2, 3))
            for b, m in enumerate(means):
                stats.add(f"sel_b{b}", float(m), n)


def _val(x):
    return getattr(x, "value", x)


def train(model: ToyModel, train_set: list[SynthSample], cfg: TrainConfig) -> tuple[ToyModel, list[dict]]:
    """Momentum SGD on cross entropy + weighted AdaDR terms; one log row per epoch.

    Parameters are updated in place.  A non-finite loss or parameter raises
    :class:`TrainingDiverged` carrying the rows logged so far.
    """
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    # the dilation/modulation predictor steps more gently, as is usual for offset branches
    rates = {k: cfg.lr * (cfg.predictor_lr_scale if "theta" in k else 1.0) for k in model.params}
    rows: list[dict] = []
    x_all, y_all = stack(train_set)
    loss_cfg = cfg.loss
    for epoch in range(cfg.epochs):
        order = np.random.default_rng((cfg.seed, epoch)).permutation(len(train_set))
        stats = _Stats()
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x, y = x_all[idx], y_all[idx]
            # overflow during a blow-up is reported below as divergence, not as warnings
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                tape = Tape()
                pv = {k: tape.leaf(v, k) for k, v in model.params.items()}
                fr = forward(model, x, pv)
                task, aux = loss_terms(model, fr, y, loss_cfg)
                loss = total_loss(task, aux, loss_cfg)
                if not np.isfinite(float(loss.value)):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}", rows)
                grads = tape.backward(loss)
                for k, var in pv.items():
                    if var.id not in grads:
                        continue  # branch switched off: no gradient, velocity stays zero
                    velocity[k] *= cfg.momentum
                    velocity[k] -= rates[k] * grads[var.id]
                    model.params[k] += velocity[k]
                    if not np.all(np.isfinite(model.params[k])):
                        raise TrainingDiverged(f"non-finite parameter {k} at epoch {epoch}", rows)
            n = len(idx)
            stats.add("task_loss", float(task.value), n)
            for i, term in enumerate(aux):
                stats.add(f"adadr_loss_l{i}", float(term.value), n)
            pred = np.argmax(fr.logits.value, axis=1)
            stats.add("pixel_accuracy", float(np.mean(pred == y)), n)
            _layer_stats(stats, fr, n)
        row = {"epoch": epoch + 1}
        for col in log_columns()[1:]:
            row[col] = stats.mean(col)
        rows.append(row)
        log.info("epoch %d loss %.4f acc %.4f", epoch + 1, row["task_loss"], row["pixel_accuracy"])
    return model, rows


def evaluate(model: ToyModel, dataset: list[SynthSample], batch_size: int = 8) -> dict:
    preds, labels = [], []
    for start in range(0, len(dataset), batch_size):
        x, y = stack(dataset[start : start + batch_size])
        fr = forward(model, x, with_hp=False)
        preds.append(np.argmax(fr.logits, axis=1))
        labels.append(y)
    return segmentation_metrics(np.concatenate(preds), np.concatenate(labels), model.classes)


@dataclass
class Analysis:
    mean_dilation: list[float]
    hp_dilation_corr: list[float]
    selection_means: list[list[float]]  # per layer, per band
    lambda_ratio: list[float]
    dmaps: list[np.ndarray]  # per layer, first sample
    sels: list[np.ndarray]


def analyze(model: ToyModel, dataset: list[SynthSample], batch_size: int = 8) -> Analysis:
    """Dilation / HP statistics of the FADC layers over ``dataset``."""
    nl = len(model.layers)
    dm = [[] for _ in range(nl)]
    hp = [[] for _ in range(nl)]
    sel = [[] for _ in range(nl)]
    lam = [[] for _ in range(nl)]
    first_d, first_s = [None] * nl, [None] * nl
    for start in range(0, len(dataset), batch_size):
        x, _ = stack(dataset[start : start + batch_size])
        fr = forward(model, x, with_hp=True)
        for i, lo in enumerate(fr.layers):
            if lo.dmap is not None:
                dm[i].append(lo.dmap.ravel())
                hp[i].append(fr.hp[i].ravel())
                if first_d[i] is None:
                    first_d[i] = lo.dmap[0, 0]
            if lo.sel is not None:
                sel[i].append(lo.sel.mean(axis=(2, 3)))
                if first_s[i] is None:
                    first_s[i] = lo.sel[0]
            if lo.lam is not None:
                with np.errstate(divide="ignore", invalid="ignore"):
                    lam[i].append((lo.lam[:, 1] / lo.lam[:, 0]).ravel())
    mean_d, corr = [], []
    for i, st in enumerate(model.layers):
        if dm[i]:
            d = np.concatenate(dm[i])
            mean_d.append(float(d.mean()))
            corr.append(pearson(d, np.concatenate(hp[i])))
        else:
            mean_d.append(float(st.d_init))
            corr.append(float("nan"))
    sel_means = [np.concatenate(s).mean(axis=0).tolist() if s else [] for s in sel]
    lam_ratio = [float(np.concatenate(v).mean()) if v else float("nan") for v in lam]
    return Analysis(mean_d, corr, sel_means, lam_ratio, first_d, first_s)


def model_chain(model: ToyModel, mean_dilation: list[float] | None = None) -> list[LayerSpec]:
    """Stem, FADC layers (mean learned dilation) and the 1x1 head."""
    ds = mean_dilation or [st.d_init for st in model.layers]
    chain = [LayerSpec(3, 1, 1.0)]
    chain += [LayerSpec(st.k, 1, max(float(d), 1e-9)) for st, d in zip(model.layers, ds)]
    chain.append(LayerSpec(1, 1, 1.0))
    return chain


def model_receptive_field(model: ToyModel, mean_dilation: list[float] | None = None) -> int:
    return receptive_field(model_chain(model, mean_dilation))


@dataclass
class RunResult:
    cfg: TrainConfig
    model: ToyModel
    log: list[dict]
    metrics: dict
    init_metrics: dict
    analysis: Analysis
    rf: int


def run(cfg: TrainConfig) -> RunResult:
    """Generate data, train, and evaluate on the held-out split."""
    train_set, held_out = build_data(cfg)
    model = build_model(cfg)
    init_metrics = evaluate(model, held_out)
    model, rows = train(model, train_set, cfg)
    metrics = evaluate(model, held_out)
    an = analyze(model, held_out)
    return RunResult(cfg, model, rows, metrics, init_metrics, an, model_receptive_field(model, an.mean_dilation))

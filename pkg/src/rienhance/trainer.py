"""Toy end-to-end training: encoder, prototypes, regression head and attention.

One step on a batch::

    x -> tanh layer -> h -> linear -> feature map F (c, h, w)
                       h -> linear -> embedding v
    ArcFace(v / |v|, prototypes)                     classification
    head(dropout(F)) = xi_hat  vs  RI target xi      smooth-L1 + index diversion
    attention(F) = v_attn  vs  v projected off UI    MSE

The RI target and the projected embedding are constants for the step.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional

import numpy as np

from . import kernels
from .attention import AttentionParams, attention_backward, attention_forward
from .errors import ConfigError, DimensionMismatch, DivergenceDetected
from .losses import (
    LossBundle,
    LossConfig,
    arcface_batch,
    index_diversion_loss,
    projection_mse,
    ri_surrogate_grad,
    smooth_l1,
    total_loss,
    ui_projection,
)
from .recognizability import (
    UNLABELED,
    DEFAULT_UI_SAMPLES,
    ProximityTriple,
    RecognizabilityRecord,
    UIClusterModel,
    UIMode,
    fit_ui_cluster,
    proximity_triples,
    recognizability_indices,
)
from .synth_data import SynthConfig, SynthDataset, generate

log = logging.getLogger(__name__)

GROUPS = ("encoder", "prototypes", "attention", "regression")
# where the index-diversion gradient enters the model: the regression head
# only, or additionally the RI geometry (straight-through on xi)
ID_ROUTES = ("xi_hat", "xi_hat+xi")
CHECKPOINT_FORMAT = "rienhance-checkpoint/1"
HISTORY_COLUMNS = ("epoch", "l_cls", "l_l1", "l_id", "l_mse", "l_total", "mean_ri_hard", "mean_ri_easy")


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    synth: Optional[SynthConfig] = field(default_factory=SynthConfig)
    data_dir: Optional[str] = None
    epochs: int = 40
    pretrain_epochs: int = 20
    pretrain_lr: float = 5e-3
    batch_size: int = 32
    lr: Dict[str, float] = field(default_factory=lambda: {
        "encoder": 1e-4, "prototypes": 5e-3, "regression": 2e-2, "attention": 3e-2})
    dropout: float = 0.9
    ui_refresh_interval: int = 1
    ui_mode: str = UIMode.STANDARD_NORMAL.value
    ui_samples: int = DEFAULT_UI_SAMPLES
    id_route: str = "xi_hat+xi"
    hidden: int = 64
    channels: int = 16
    height: int = 4
    width: int = 4
    embed_dim: int = 32
    reduction: int = 4
    grad_clip: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.pretrain_epochs < 0 or not self.pretrain_lr > 0:
            raise ConfigError("pretrain_epochs must be >= 0 and pretrain_lr > 0")
        if set(self.lr) != set(GROUPS):
            raise ConfigError(f"lr needs exactly the groups {GROUPS}")
        if any(not v > 0 for v in self.lr.values()):
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.ui_refresh_interval < 1:
            raise ConfigError("ui_refresh_interval must be at least 1")
        UIMode(self.ui_mode)
        if self.id_route not in ID_ROUTES:
            raise ConfigError(f"id_route must be one of {ID_ROUTES}")
        if self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive")

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["loss"] = self.loss.to_dict()
        d["synth"] = self.synth.to_dict() if self.synth is not None else None
        d["lr"] = dict(self.lr)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        if "loss" in d:
            d["loss"] = LossConfig.from_dict(d["loss"])
        if "synth" in d and d["synth"] is not None:
            d["synth"] = SynthConfig.from_dict(d["synth"])
        if "lr" in d:
            d["lr"] = {**cls().lr, **d["lr"]}
        return cls(**d)

    def replace(self, **kw):
        return TrainConfig(**{**{f.name: getattr(self, f.name) for f in fields(self)}, **kw})


@dataclass
class ModelState:
    encoder: Dict[str, np.ndarray]
    prototypes: np.ndarray
    attention: AttentionParams
    regression: Dict[str, np.ndarray]
    ui_model: Optional[UIClusterModel]
    loss_config: LossConfig
    feature_shape: tuple
    seed: int = 0
    step: int = 0

    def groups(self):
        return {
            "encoder": self.encoder,
            "prototypes": {"w": self.prototypes},
            "attention": self.attention.arrays(),
            "regression": self.regression,
        }

    @property
    def input_dim(self):
        return self.encoder["w1"].shape[1]

    def to_dict(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "seed": self.seed,
            "step": self.step,
            "feature_shape": list(self.feature_shape),
            "loss_config": self.loss_config.to_dict(),
            "encoder": {k: v.tolist() for k, v in self.encoder.items()},
            "prototypes": self.prototypes.tolist(),
            "attention": self.attention.to_dict(),
            "regression": {k: v.tolist() for k, v in self.regression.items()},
            "ui_model": self.ui_model.to_dict() if self.ui_model is not None else None,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"not a checkpoint (format={d.get('format')!r})")
        arr = lambda m: {k: np.asarray(v, dtype=np.float64) for k, v in m.items()}  # noqa: E731
        return cls(
            encoder=arr(d["encoder"]),
            prototypes=np.asarray(d["prototypes"], dtype=np.float64),
            attention=AttentionParams.from_dict(d["attention"]),
            regression=arr(d["regression"]),
            ui_model=UIClusterModel.from_dict(d["ui_model"]) if d["ui_model"] else None,
            loss_config=LossConfig.from_dict(d["loss_config"]),
            feature_shape=tuple(d["feature_shape"]),
            seed=int(d["seed"]),
            step=int(d["step"]),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class EpochRecord:
    epoch: int
    l_cls: float
    l_l1: float
    l_id: float
    l_mse: float
    l_total: float
    mean_ri_hard: float
    mean_ri_easy: float
    id_active_fraction: float
    ui_snapshot: int


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path):
        from .embedding_io import format_float
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(HISTORY_COLUMNS) + "\n")
            for r in self.records:
                vals = [str(r.epoch)] + [format_float(getattr(r, c)) for c in HISTORY_COLUMNS[1:]]
                fh.write(",".join(vals) + "\n")


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def init_model(cfg: TrainConfig, input_dim, num_classes, rng) -> ModelState:
    flat = cfg.channels * cfg.height * cfg.width
    hid = cfg.hidden
    encoder = {
        "w1": rng.normal(0.0, 1.0 / np.sqrt(input_dim), (hid, input_dim)) * 2.0,
        "b1": np.zeros(hid),
        "wf": rng.normal(0.0, 1.0 / np.sqrt(hid), (flat, hid)),
        "bf": np.zeros(flat),
        "we": rng.normal(0.0, 1.0 / np.sqrt(flat), (cfg.embed_dim, flat)),
        "be": np.zeros(cfg.embed_dim),
    }
    protos = rng.normal(size=(num_classes, cfg.embed_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    attention = AttentionParams.init(rng, cfg.channels, cfg.height, cfg.width, cfg.embed_dim,
                                     cfg.reduction)
    regression = {"w": rng.normal(0.0, 0.01, flat), "b": np.zeros(1)}
    return ModelState(encoder=encoder, prototypes=protos, attention=attention,
                      regression=regression, ui_model=None, loss_config=cfg.loss,
                      feature_shape=(cfg.channels, cfg.height, cfg.width), seed=cfg.seed)


def encode(model: ModelState, x):
    """Forward the encoder; returns ``(h, flat_feature_map, v)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.input_dim:
        raise DimensionMismatch(f"input dim {x.shape[1]}, model expects {model.input_dim}")
    e = model.encoder
    h = np.tanh(x @ e["w1"].T + e["b1"])
    fm = h @ e["wf"].T + e["bf"]
    v = fm @ e["we"].T + e["be"]
    return h, fm, v


def embed(model, x):
    return encode(model, x)[2]


def predict_xi_hat(model, x):
    _, fm, _ = encode(model, x)
    return fm @ model.regression["w"] + model.regression["b"][0]


def refresh_ui_model(model: ModelState, ui_inputs, cfg: TrainConfig, epoch):
    _, ui_fm, ui_v = encode(model, ui_inputs)
    ri_values = None
    if UIMode(cfg.ui_mode) is UIMode.EMPIRICAL:
        ri_values = ui_fm @ model.regression["w"] + model.regression["b"][0]
    return fit_ui_cluster(ui_v, mode=cfg.ui_mode, K=cfg.ui_samples, ri_values=ri_values,
                          seed=cfg.seed * 100003 + epoch)


def batch_step(model: ModelState, x, y, cfg: TrainConfig, dropout_rng, aux=True, targets=None):
    """Losses and gradients for one batch. Returns ``(LossBundle, xi, div)``.

    ``aux=False`` skips the three auxiliary terms entirely (classification only).
    ``targets=(xi, v_prime)`` pins the stop-gradient targets instead of
    recomputing them; gradient checks use this to hold them fixed.
    """
    lc = cfg.loss
    e = model.encoder
    b = x.shape[0]
    h, fm, v = encode(model, x)
    nv = np.linalg.norm(v, axis=1, keepdims=True)
    vhat = v / nv

    l_cls, g_vhat, g_protos, _ = arcface_batch(vhat, model.prototypes, y, lc.arc_scale, lc.arc_margin)
    d_fm = np.zeros_like(fm)
    grads = {"prototypes": {"w": g_protos}}
    l_l1 = l_id = l_mse = 0.0
    xi = div = None

    keep = 1.0 - cfg.dropout
    mask = (dropout_rng.random(fm.shape) < keep) / keep

    if aux:
        center = model.ui_model.center
        triples, neg_index = kernels.proximity_batch(vhat, model.prototypes, y, center)
        xi = recognizability_indices(triples, lc.epsilon) if targets is None else targets[0]

        fd = fm * mask
        xi_hat = fd @ model.regression["w"] + model.regression["b"][0]
        l1, g1 = smooth_l1(xi, xi_hat, lc.beta_smooth)
        lid, gid = index_diversion_loss(xi_hat, model.ui_model, lc.tau)
        div = (xi_hat - model.ui_model.mu_ui) / model.ui_model.sigma_ui
        l_l1, l_id = float(l1.mean()), float(lid.mean())
        d_xi_hat = (lc.weight_l1 * g1 + lc.weight_id * gid) / b
        if cfg.id_route == "xi_hat+xi":
            # loss value unchanged; the ID gradient also flows through xi(vhat, w)
            _, gx_v, gx_wt, gx_wn = ri_surrogate_grad(vhat, model.prototypes, y, neg_index,
                                                     center, lc.epsilon)
            up = lc.weight_id * gid / b
            g_vhat = g_vhat + up[:, None] * gx_v
            np.add.at(g_protos, y, up[:, None] * gx_wt)
            np.add.at(g_protos, neg_index, up[:, None] * gx_wn)
        grads["regression"] = {"w": fd.T @ d_xi_hat, "b": np.array([d_xi_hat.sum()])}
        d_fm += d_xi_hat[:, None] * model.regression["w"][None, :] * mask

        v_prime = ui_projection(v, center) if targets is None else targets[1]
        fmap = fm.reshape((b,) + tuple(model.feature_shape))
        v_attn, cache = attention_forward(fmap, model.attention)
        l_mse, g_attn = projection_mse(v_prime, v_attn)
        d_f, g_att = attention_backward(lc.weight_mse * g_attn, cache, model.attention)
        grads["attention"] = g_att
        d_fm += d_f.reshape(b, -1)

    d_v = (g_vhat - vhat * np.sum(vhat * g_vhat, axis=1, keepdims=True)) / nv
    d_fm += d_v @ e["we"]
    d_h = d_fm @ e["wf"]
    d_z = d_h * (1.0 - h * h)
    grads["encoder"] = {
        "w1": d_z.T @ x, "b1": d_z.sum(axis=0),
        "wf": d_fm.T @ h, "bf": d_fm.sum(axis=0),
        "we": d_v.T @ fm, "be": d_v.sum(axis=0),
    }
    l_total = total_loss(l_cls, l_l1, l_id, l_mse, lc) if np.isfinite(l_cls) else float("nan")
    bundle = LossBundle(l_cls, l_l1, l_id, l_mse, l_total, grads)
    return bundle, xi, div


def clip_gradients(grads, max_norm):
    sq = sum(float(np.sum(g * g)) for grp in grads.values() for g in grp.values())
    norm = np.sqrt(sq)
    if norm > max_norm:
        scale = max_norm / norm
        for grp in grads.values():
            for k in grp:
                grp[k] = grp[k] * scale
    return norm


def apply_step(model, grads, optimizers):
    params = model.groups()
    for name, grp in grads.items():
        optimizers[name].step(params[name], grp)
    model.prototypes /= np.linalg.norm(model.prototypes, axis=1, keepdims=True)
    model.step += 1


def pretrain(model, x, y, cfg, rng):
    """Classification-only warm start of encoder and prototypes.

    Stands in for a pretrained backbone; identical for full and baseline runs
    with the same seed, so their fine-tuning starts from the same weights.
    """
    opts = {g: Adam(cfg.pretrain_lr) for g in ("encoder", "prototypes")}
    n = x.shape[0]
    for _ in range(cfg.pretrain_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < 2:
                continue
            bundle, _, _ = batch_step(model, x[idx], y[idx], cfg, rng, aux=False)
            if not np.isfinite(bundle.l_total):
                raise DivergenceDetected(f"non-finite loss during pretraining at step {model.step}",
                                         step=model.step)
            clip_gradients(bundle.gradients, cfg.grad_clip)
            apply_step(model, bundle.gradients, opts)


def load_dataset(cfg: TrainConfig) -> SynthDataset:
    if cfg.synth is not None:
        return generate(cfg.synth)
    if cfg.data_dir is None:
        raise ConfigError("train config needs either synth or data_dir")
    from .cli import load_dataset_dir
    return load_dataset_dir(cfg.data_dir)


def train(cfg: TrainConfig, dataset: Optional[SynthDataset] = None, aux=None):
    """Train from scratch; returns ``(ModelState, TrainHistory)``.

    ``aux`` defaults to whether any auxiliary weight is non-zero. Passing
    ``aux=True`` with all weights zero runs the full machinery with inert
    auxiliary terms, which yields the same trajectory as ``aux=False``.
    """
    ds = dataset if dataset is not None else load_dataset(cfg)
    lc = cfg.loss
    if aux is None:
        aux = max(lc.weight_l1, lc.weight_id, lc.weight_mse) > 0

    train_mask = ds.split == "train"
    x_all = ds.inputs[train_mask]
    y_all = ds.labels[train_mask]
    hard_all = ds.is_hard[train_mask]
    n = x_all.shape[0]
    num_classes = int(ds.labels.max()) + 1

    init_ss, shuffle_ss, drop_ss, pre_ss = np.random.SeedSequence(cfg.seed).spawn(4)
    model = init_model(cfg, x_all.shape[1], num_classes, np.random.default_rng(init_ss))
    if cfg.pretrain_epochs:
        pretrain(model, x_all, y_all, cfg, np.random.default_rng(pre_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(drop_ss)
    optimizers = {g: Adam(cfg.lr[g]) for g in GROUPS}
    history = TrainHistory()
    snapshot = -1

    for epoch in range(cfg.epochs):
        if model.ui_model is None or epoch % cfg.ui_refresh_interval == 0:
            model.ui_model = refresh_ui_model(model, ds.ui_inputs, cfg, epoch)
            snapshot += 1
        order = shuffle_rng.permutation(n)
        sums = np.zeros(5)
        xi_sum = np.zeros(2)
        xi_cnt = np.zeros(2)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < 2:
                continue
            bundle, xi, div = batch_step(model, x_all[idx], y_all[idx], cfg, dropout_rng, aux=aux)
            if not np.isfinite(bundle.l_total):
                raise DivergenceDetected(
                    f"non-finite total loss at step {model.step} (epoch {epoch})",
                    step=model.step, epoch=epoch)
            sums += idx.size * np.array(bundle.values())
            if xi is not None:
                hard = hard_all[idx]
                xi_sum += [xi[hard].sum(), xi[~hard].sum()]
                xi_cnt += [hard.sum(), (~hard).sum()]
            clip_gradients(bundle.gradients, cfg.grad_clip)
            apply_step(model, bundle.gradients, optimizers)
        means = sums / n
        with np.errstate(invalid="ignore"):
            ri = np.where(xi_cnt > 0, xi_sum / np.maximum(xi_cnt, 1), np.nan)
        if aux:
            # dropout-free xi_hat over the whole training set, against the epoch's UI model
            div_all = (predict_xi_hat(model, x_all) - model.ui_model.mu_ui) / model.ui_model.sigma_ui
            active_frac = float(np.mean(div_all < lc.tau))
        else:
            active_frac = float("nan")
        rec = EpochRecord(epoch, *means, mean_ri_hard=float(ri[0]), mean_ri_easy=float(ri[1]),
                          id_active_fraction=active_frac,
                          ui_snapshot=snapshot)
        history.records.append(rec)
        log.info("epoch %d  l_total=%.4f l_cls=%.4f l_l1=%.4f l_id=%.4f l_mse=%.5f",
                 epoch, rec.l_total, rec.l_cls, rec.l_l1, rec.l_id, rec.l_mse)
    return model, history


def score(model: ModelState, inputs, ids=None, labels=None) -> List[RecognizabilityRecord]:
    """Learned RI for each input; the UI model is not needed for ``xi_hat``.

    The proximity triple and RI target are filled only for labeled inputs
    whose class exists in the model and when a UI model is present.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    n = x.shape[0]
    ids = [str(i) for i in range(n)] if ids is None else list(ids)
    labels = np.full(n, UNLABELED) if labels is None else np.asarray(labels, dtype=np.int64)
    _, fm, v = encode(model, x)
    xi_hat = fm @ model.regression["w"] + model.regression["b"][0]

    triples = xi = None
    ok = (labels >= 0) & (labels < model.prototypes.shape[0])
    if model.ui_model is not None and ok.any():
        vhat = v[ok] / np.linalg.norm(v[ok], axis=1, keepdims=True)
        triples = proximity_triples(vhat, model.prototypes, labels[ok], model.ui_model.center)
        xi = recognizability_indices(triples, model.loss_config.epsilon)

    out = []
    j = 0
    for i in range(n):
        rec = RecognizabilityRecord(instance_id=ids[i], xi_hat=float(xi_hat[i]), label=int(labels[i]))
        if triples is not None and ok[i]:
            rec.triple = ProximityTriple(*map(float, triples[j]))
            rec.xi = float(xi[j])
            j += 1
        out.append(rec)
    return out

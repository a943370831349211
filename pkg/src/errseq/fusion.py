"""Fusion model assembly, training loop and checkpoints.

Three ways to combine per-modality feature streams:

* early: concatenate features frame-wise, one recurrent encoder, one
  softmax head.
* intermediate: one encoder per modality, final hidden states
  concatenated into one shared head, trained jointly end to end.
* late: one full encoder+head submodel per modality, each trained
  independently; prediction is the unweighted mean of the per-submodel
  probability vectors.

Training is mini-batch Adam over shuffled windows with the epoch
snapshot of lowest validation loss kept (strict improvement, so ties
resolve to the earliest epoch).  All randomness is derived from the
config seed, which makes every trained model a pure function of
(config, data).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import nn
from .corpus import MODALITIES
from .preprocess import REPRESENTATIONS
from .rng import SplitMix64, derive_seed
from .splits import NUM_CLASSES, SCHEMES

CELLS = ("lstm", "gru")
FUSIONS = ("early", "intermediate", "late")

CHECKPOINT_MAGIC = b"ERSQCKPT"
CHECKPOINT_VERSION = 1


def canonical_modalities(names) -> tuple[str, ...]:
    """Fixed modality ordering: the four known names first, extras sorted."""
    names = list(names)
    if not names:
        raise ValueError("modalities must be nonempty")
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate modalities in {names}")
    known = [m for m in MODALITIES if m in names]
    extra = sorted(n for n in names if n not in MODALITIES)
    return tuple(known + extra)


@dataclass
class ModelConfig:
    """One experiment cell: scheme, architecture and training knobs."""

    scheme: str
    cell: str = "lstm"
    fusion: str = "early"
    modalities: tuple[str, ...] = MODALITIES
    representation: str = "normalized"
    window: int = 30
    stride: int = 15
    hidden: int = 64
    epochs: int = 50
    # folds hold a few dozen windows each, so training needs an
    # aggressive step size and small batches to converge in 50 epochs
    lr: float = 2e-2
    batch: int = 8
    seed: int = 42
    pca_variance: float = 0.95
    clip: float | None = None

    def __post_init__(self):
        self.modalities = canonical_modalities(self.modalities)

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.cell not in CELLS:
            raise ValueError(f"unknown cell {self.cell!r}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}")
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}")
        for name, low in (("window", 1), ("stride", 1), ("hidden", 1),
                          ("epochs", 1), ("batch", 1)):
            if int(getattr(self, name)) < low:
                raise ValueError(f"{name} must be >= {low}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0.0 < self.pca_variance <= 1.0:
            raise ValueError("pca_variance must be in (0, 1]")
        if self.clip is not None and not self.clip > 0:
            raise ValueError("clip must be positive when set")

    @property
    def num_classes(self) -> int:
        return NUM_CLASSES[self.scheme]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modalities"] = list(self.modalities)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["modalities"] = tuple(d["modalities"])
        return cls(**d)


@dataclass
class FusionModel:
    cfg: ModelConfig
    dims: dict[str, int]  # per-modality input width after representation
    encoders: dict[str, nn.CellParams] = field(default_factory=dict)
    heads: dict[str, nn.DenseParams] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.cfg.num_classes


def _init_stream(seed: int, *tokens: str) -> SplitMix64:
    return SplitMix64(derive_seed(seed, *tokens))


def build_model(cfg: ModelConfig, dims: dict[str, int]) -> FusionModel:
    """Seeded construction of the parameter set for one fusion topology."""
    cfg.validate()
    missing = [m for m in cfg.modalities if m not in dims]
    if missing:
        raise ValueError(f"missing dims for modalities {missing}")
    for m in cfg.modalities:
        if int(dims[m]) < 1:
            raise ValueError(f"dimension for {m} must be >= 1")
    dims = {m: int(dims[m]) for m in cfg.modalities}
    model = FusionModel(cfg=cfg, dims=dims)
    k = cfg.num_classes
    if cfg.fusion == "early":
        total = sum(dims.values())
        model.encoders["all"] = nn.init_cell(
            cfg.cell, total, cfg.hidden, _init_stream(cfg.seed, "init", "encoder", "all")
        )
        model.heads["all"] = nn.init_dense(
            cfg.hidden, k, _init_stream(cfg.seed, "init", "head", "all")
        )
    elif cfg.fusion == "intermediate":
        for m in cfg.modalities:
            model.encoders[m] = nn.init_cell(
                cfg.cell, dims[m], cfg.hidden, _init_stream(cfg.seed, "init", "encoder", m)
            )
        model.heads["all"] = nn.init_dense(
            cfg.hidden * len(cfg.modalities), k, _init_stream(cfg.seed, "init", "head", "all")
        )
    else:
        for m in cfg.modalities:
            model.encoders[m] = nn.init_cell(
                cfg.cell, dims[m], cfg.hidden, _init_stream(cfg.seed, "init", "encoder", m)
            )
            model.heads[m] = nn.init_dense(
                cfg.hidden, k, _init_stream(cfg.seed, "init", "head", m)
            )
    return model


def named_arrays(model: FusionModel) -> dict[str, np.ndarray]:
    """Flat name -> array view over every trainable parameter."""
    out = {}
    for name, p in model.encoders.items():
        out[f"encoder.{name}.W"] = p.W
        out[f"encoder.{name}.U"] = p.U
        out[f"encoder.{name}.b"] = p.b
    for name, p in model.heads.items():
        out[f"head.{name}.weight"] = p.weight
        out[f"head.{name}.bias"] = p.bias
    return out


def submodel_names(model: FusionModel) -> tuple[str, ...]:
    if model.cfg.fusion == "late":
        return model.cfg.modalities
    return ("all",)


def _submodel_arrays(model: FusionModel, sub: str) -> dict[str, np.ndarray]:
    if model.cfg.fusion == "late":
        p, h = model.encoders[sub], model.heads[sub]
        return {
            f"encoder.{sub}.W": p.W,
            f"encoder.{sub}.U": p.U,
            f"encoder.{sub}.b": p.b,
            f"head.{sub}.weight": h.weight,
            f"head.{sub}.bias": h.bias,
        }
    return named_arrays(model)


def check_inputs(model: FusionModel, X: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Validate a modality -> (n, W, d) feature mapping against the model."""
    if not isinstance(X, dict):
        raise TypeError("X must map modality name to an (n, W, d) array")
    out = {}
    n = None
    for m in model.cfg.modalities:
        if m not in X:
            raise ValueError(f"missing modality {m!r}")
        a = np.asarray(X[m], dtype=np.float64)
        if a.ndim != 3:
            raise ValueError(f"{m} features must be 3-D (n, W, d), got {a.shape}")
        if a.shape[2] != model.dims[m]:
            raise ValueError(
                f"{m} feature width {a.shape[2]} does not match model dim {model.dims[m]}"
            )
        if n is None:
            n = a.shape[0]
        elif a.shape[0] != n:
            raise ValueError("modalities disagree on the number of windows")
        out[m] = a
    return out


def _prepare(model: FusionModel, X: dict[str, np.ndarray]):
    """Per-submodel input assembly (early fusion concatenates once)."""
    X = check_inputs(model, X)
    fusion = model.cfg.fusion
    if fusion == "early":
        return {"all": np.concatenate([X[m] for m in model.cfg.modalities], axis=2)}
    if fusion == "intermediate":
        return {"all": X}
    return {m: X[m] for m in model.cfg.modalities}


def _take(xin, idx):
    if isinstance(xin, dict):
        return {m: a[idx] for m, a in xin.items()}
    return xin[idx]


def _num_rows(xin) -> int:
    if isinstance(xin, dict):
        return next(iter(xin.values())).shape[0]
    return xin.shape[0]


def _sub_forward(model: FusionModel, sub: str, xin):
    cfg = model.cfg
    if cfg.fusion == "intermediate":
        hs = []
        caches = {}
        for m in cfg.modalities:
            h, cache = nn.cell_forward(model.encoders[m], xin[m])
            hs.append(h)
            caches[m] = cache
        hcat = np.concatenate(hs, axis=1)
        logits = nn.dense_forward(model.heads["all"], hcat)
        return nn.softmax(logits), (caches, hcat)
    h, cache = nn.cell_forward(model.encoders[sub], xin)
    logits = nn.dense_forward(model.heads[sub], h)
    return nn.softmax(logits), (cache, h)


def _sub_backward(model: FusionModel, sub: str, ctx, probs, labels):
    cfg = model.cfg
    dlogits = nn.softmax_xent_grad(probs, labels)
    grads = {}
    if cfg.fusion == "intermediate":
        caches, hcat = ctx
        hg, dhcat = nn.dense_backward(model.heads["all"], hcat, dlogits)
        grads["head.all.weight"] = hg.weight
        grads["head.all.bias"] = hg.bias
        H = cfg.hidden
        for j, m in enumerate(cfg.modalities):
            cg, _ = nn.cell_backward(
                model.encoders[m], caches[m], dhcat[:, j * H : (j + 1) * H]
            )
            grads[f"encoder.{m}.W"] = cg.W
            grads[f"encoder.{m}.U"] = cg.U
            grads[f"encoder.{m}.b"] = cg.b
        return grads
    cache, h = ctx
    hg, dh = nn.dense_backward(model.heads[sub], h, dlogits)
    cg, _ = nn.cell_backward(model.encoders[sub], cache, dh)
    return {
        f"encoder.{sub}.W": cg.W,
        f"encoder.{sub}.U": cg.U,
        f"encoder.{sub}.b": cg.b,
        f"head.{sub}.weight": hg.weight,
        f"head.{sub}.bias": hg.bias,
    }


def loss_and_grads(model: FusionModel, sub: str, xin, labels):
    """Mean cross-entropy and its gradients for one submodel batch."""
    probs, ctx = _sub_forward(model, sub, xin)
    loss = nn.batch_cross_entropy(probs, labels)
    return loss, _sub_backward(model, sub, ctx, probs, labels)


def predict_proba(model: FusionModel, X: dict[str, np.ndarray]) -> np.ndarray:
    """Class probabilities (n, k); late fusion averages submodel outputs."""
    prepared = _prepare(model, X)
    probs = [
        _sub_forward(model, sub, prepared[sub])[0] for sub in submodel_names(model)
    ]
    return sum(probs) / len(probs)


def predict(model: FusionModel, X: dict[str, np.ndarray]) -> np.ndarray:
    """Predicted classes; argmax with ties toward the lowest index."""
    return np.argmax(predict_proba(model, X), axis=1)


def _evaluate(model: FusionModel, sub: str, xin, labels):
    probs, _ = _sub_forward(model, sub, xin)
    loss = nn.batch_cross_entropy(probs, labels)
    accuracy = float((np.argmax(probs, axis=1) == labels).mean())
    return loss, accuracy


def train_model(
    model: FusionModel,
    X_train: dict[str, np.ndarray],
    y_train,
    X_val: dict[str, np.ndarray] | None = None,
    y_val=None,
) -> dict[str, dict]:
    """Train every submodel; model ends at its best-validation snapshot.

    Returns per-submodel history: train_loss / val_loss / val_accuracy
    lists (one entry per epoch) and the selected best_epoch, 1-based.
    When no validation windows exist the training set stands in for
    epoch selection.
    """
    cfg = model.cfg
    y_train = np.asarray(y_train, dtype=np.int64)
    train_in = _prepare(model, X_train)
    n = _num_rows(train_in[submodel_names(model)[0]])
    if y_train.shape != (n,):
        raise ValueError("y_train length does not match X_train windows")
    if n == 0:
        raise ValueError("training set is empty")
    present = set(int(c) for c in np.unique(y_train))
    missing = sorted(set(range(cfg.num_classes)) - present)
    if missing:
        raise ValueError(f"classes missing from training set: {missing}")
    has_val = X_val is not None and y_val is not None and len(np.asarray(y_val)) > 0
    if has_val:
        y_val = np.asarray(y_val, dtype=np.int64)
        val_in = _prepare(model, X_val)
    history = {}
    for sub in submodel_names(model):
        params = _submodel_arrays(model, sub)
        opt = nn.Adam(params, lr=cfg.lr)
        stream = SplitMix64(derive_seed(cfg.seed, "train", sub))
        xin = train_in[sub]
        eval_in, eval_y = (val_in[sub], y_val) if has_val else (xin, y_train)
        best_loss = np.inf
        best_epoch = 0
        best_arrays = None
        train_losses = []
        val_losses = []
        val_accuracies = []
        for epoch in range(1, cfg.epochs + 1):
            order = stream.shuffled(range(n))
            loss_sum = 0.0
            for lo in range(0, n, cfg.batch):
                idx = order[lo : lo + cfg.batch]
                loss, grads = loss_and_grads(model, sub, _take(xin, idx), y_train[idx])
                if cfg.clip is not None:
                    grads = nn.clip_grads(grads, cfg.clip)
                opt.step(grads)
                loss_sum += loss * len(idx)
            train_losses.append(loss_sum / n)
            val_loss, val_accuracy = _evaluate(model, sub, eval_in, eval_y)
            val_losses.append(val_loss)
            val_accuracies.append(val_accuracy)
            if val_loss < best_loss:
                best_loss = val_loss
                best_epoch = epoch
                best_arrays = {k: a.copy() for k, a in params.items()}
        for k, a in params.items():
            np.copyto(a, best_arrays[k])
        history[sub] = {
            "train_loss": train_losses,
            "val_loss": val_losses,
            "val_accuracy": val_accuracies,
            "best_epoch": best_epoch,
        }
    return history


def save_checkpoint(path, model: FusionModel) -> None:
    """Write a versioned binary checkpoint.

    Layout: 8-byte magic, little-endian uint64 header length, JSON
    header (sorted keys) with the config, dims and array shapes, then
    each array as little-endian float64 C-order bytes, in sorted
    parameter-name order.  Byte-stable for identical models.
    """
    arrays = named_arrays(model)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "dims": {m: int(d) for m, d in model.dims.items()},
        "arrays": {name: list(arrays[name].shape) for name in sorted(arrays)},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in sorted(arrays):
            f.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> FusionModel:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a model checkpoint")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    cfg = ModelConfig.from_dict(header["config"])
    model = build_model(cfg, header["dims"])
    arrays = named_arrays(model)
    if sorted(arrays) != sorted(header["arrays"]):
        raise ValueError("checkpoint parameter names do not match the config topology")
    off = 16 + hlen
    for name in sorted(arrays):
        shape = tuple(header["arrays"][name])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = np.frombuffer(data, dtype="<f8", count=count, offset=off)
        off += count * 8
        target = arrays[name]
        if tuple(target.shape) != shape:
            raise ValueError(f"shape mismatch for {name}")
        np.copyto(target, raw.reshape(shape))
    if off != len(data):
        raise ValueError("checkpoint has trailing or missing bytes")
    return model


class RecurrentFusionClassifier(BaseEstimator, ClassifierMixin):
    """Estimator-style wrapper around build_model/train_model/predict.

    X is a mapping from modality name to an (n, W, d) float array (or a
    single 3-D array, treated as one modality named "x"); y holds class
    indices for the configured scheme.
    """

    def __init__(self, scheme: str = "error_detection", cell: str = "lstm",
                 fusion: str = "early", hidden: int = 64, epochs: int = 50,
                 lr: float = 2e-2, batch: int = 8, seed: int = 42,
                 clip: float | None = None):
        self.scheme = scheme
        self.cell = cell
        self.fusion = fusion
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.batch = batch
        self.seed = seed
        self.clip = clip

    def _as_dict(self, X) -> dict[str, np.ndarray]:
        if isinstance(X, dict):
            return X
        return {"x": np.asarray(X, dtype=np.float64)}

    def fit(self, X, y, X_val=None, y_val=None):
        X = self._as_dict(X)
        for m, a in X.items():
            if np.asarray(a).ndim != 3:
                raise ValueError(f"{m} features must be 3-D (n, W, d)")
        cfg = ModelConfig(
            scheme=self.scheme,
            cell=self.cell,
            fusion=self.fusion,
            modalities=tuple(X.keys()),
            hidden=self.hidden,
            epochs=self.epochs,
            lr=self.lr,
            batch=self.batch,
            seed=self.seed,
            clip=self.clip,
        )
        dims = {m: np.asarray(a).shape[2] for m, a in X.items()}
        self.model_ = build_model(cfg, dims)
        self.history_ = train_model(
            self.model_, X, y,
            self._as_dict(X_val) if X_val is not None else None, y_val,
        )
        self.classes_ = np.arange(cfg.num_classes)
        return self

    def predict_proba(self, X):
        return predict_proba(self.model_, self._as_dict(X))

    def predict(self, X):
        return predict(self.model_, self._as_dict(X))

"""The connectivity-weighted conv + transformer classifier.

Per band, the FC-weighted trials pass through a temporal conv block whose
output (conv channels x electrodes) is resized to an R x R plane and scaled
to [0, 255]. The three planes are stacked channel-last, cut into patches,
and classified by a small transformer carrying a class token and a
distillation token.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import AdamState, Tensor, adam_step, concat, no_grad, reshape, stack, transpose
from .autodiff import functional as F
from .connectivity import ChannelWeights
from .container import read_container, write_container
from .data import BandSpec, EpochSet
from .errors import ConfigError, FormatError, TrainingDivergedError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "fcdn-ckpt/1"
N_BANDS = 3
DISTILL_SIGNS = ("agreement", "similarity")


@dataclass(frozen=True)
class FcdnConfig:
    K: int = 64
    T: int = 1000
    C: int = 4
    conv_channels: tuple[int, int, int] = (40, 80, 160)
    kernel_widths: tuple[int, int, int] = (20, 20, 40)
    pool_widths: tuple[int, int] | None = None  # None: derive from the conv output length
    resize: int = 224
    patch: int = 16
    embed_dim: int = 192
    depth: int = 12
    heads: int = 3
    mlp_ratio: int = 4
    dropout: float = 0.5
    alpha: float = 1.0
    beta: float = 0.0
    distill_sign: str = "agreement"
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-4
    seed: int = 0
    dtype: str = "float32"

    @classmethod
    def reference(cls, **overrides) -> "FcdnConfig":
        return cls(**overrides)

    @classmethod
    def tiny(cls, **overrides) -> "FcdnConfig":
        base = dict(
            K=8, T=128, conv_channels=(4, 8, 8), resize=32, patch=8,
            embed_dim=32, depth=2, heads=2, epochs=20, lr=1e-3,
        )
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "FcdnConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("conv_channels", "kernel_widths", "pool_widths"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FcdnConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("conv_channels", "kernel_widths", "pool_widths"):
            if d.get(key) is not None:
                d[key] = tuple(int(v) for v in d[key])
        return cls(**d)

    # -- derived shapes ----------------------------------------------------
    def conv_lengths(self) -> tuple[int, int, int]:
        w1, w2, _ = self.kernel_widths
        t1 = self.T - w1 + 1
        t2 = t1 - w2 + 1
        return t1, t2, t2

    def resolved_pool_widths(self) -> tuple[int, int]:
        t3 = self.conv_lengths()[2]
        if self.pool_widths is not None:
            return self.pool_widths
        p1 = max(1, t3 // 30)
        return p1, (t3 - p1) // p1 + 1

    def pooled_lengths(self) -> tuple[int, int]:
        t3 = self.conv_lengths()[2]
        p1, p2 = self.resolved_pool_widths()
        n1 = (t3 - p1) // p1 + 1
        return n1, (n1 - p2) // p2 + 1

    @property
    def n_patches(self) -> int:
        return (self.resize // self.patch) ** 2

    @property
    def seq_len(self) -> int:
        return self.n_patches + 2

    def stage_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Per-trial output shape of every stage, in pipeline order."""
        c1, c2, c3 = self.conv_channels
        t1, t2, t3 = self.conv_lengths()
        n1, n2 = self.pooled_lengths()
        R = self.resize
        return [
            ("input", (1, self.K, self.T)),
            ("conv1", (c1, self.K, t1)),
            ("conv2", (c2, self.K, t2)),
            ("conv3", (c3, self.K, t3)),
            ("pool1", (c3, self.K, n1)),
            ("pool2", (c3, self.K, n2)),
            ("resize", (R, R)),
            ("concat", (R, R, N_BANDS)),
            ("logits", (1, self.C)),
        ]

    def validate(self) -> None:
        def need(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigError(msg)

        need(self.K >= 2 and self.T >= 2 and self.C >= 2, "K, T and C must be >= 2")
        need(len(self.conv_channels) == 3 and min(self.conv_channels) >= 1, "conv_channels needs 3 positive entries")
        need(len(self.kernel_widths) == 3 and min(self.kernel_widths) >= 1, "kernel_widths needs 3 positive entries")
        t1, t2, _ = self.conv_lengths()
        need(t1 >= 1 and t2 >= 1, f"T={self.T} too short for kernel widths {self.kernel_widths}")
        p1, p2 = self.resolved_pool_widths()
        t3 = self.conv_lengths()[2]
        need(1 <= p1 <= t3, f"pool width {p1} does not fit conv length {t3}")
        n1 = (t3 - p1) // p1 + 1
        need(1 <= p2 <= n1, f"pool width {p2} does not fit pooled length {n1}")
        need(self.pooled_lengths()[1] == 1, "second pooling must reduce time to a single sample")
        need(self.conv_channels[2] >= 2 and self.K >= 2, "conv map must be at least 2 x 2 for resizing")
        need(self.resize >= 2 and self.patch >= 1, "resize and patch must be positive")
        need(self.resize % self.patch == 0, f"resize {self.resize} not divisible by patch {self.patch}")
        need(self.embed_dim >= 1 and self.embed_dim % self.heads == 0, "embed_dim must be divisible by heads")
        need(self.depth >= 1 and self.mlp_ratio >= 1, "depth and mlp_ratio must be >= 1")
        need(0 <= self.dropout < 1, "dropout must lie in [0, 1)")
        need(self.alpha >= 0 and self.beta >= 0, "alpha and beta must be >= 0")
        need(self.distill_sign in DISTILL_SIGNS, f"distill_sign must be one of {DISTILL_SIGNS}")
        need(self.epochs >= 1 and self.batch_size >= 1 and self.lr > 0, "epochs, batch_size, lr must be positive")
        need(self.dtype in ("float32", "float64"), "dtype must be float32 or float64")


@dataclass
class ForwardOutput:
    logits: Tensor  # what the model reports: class head in training, mean of both heads in eval
    cls_logits: Tensor
    dist_logits: Tensor
    hidden: list[Tensor]  # per-block outputs, B x L x D
    attn: list[Tensor]  # per-block attention probabilities, B x H x L x L
    stages: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self) -> int:
        return len(self.train_loss)

    def record(self, epoch: int) -> dict:
        return {
            "epoch": epoch,
            "train_loss": self.train_loss[epoch - 1],
            "val_loss": self.val_loss[epoch - 1],
            "val_acc": self.val_acc[epoch - 1],
        }


class FcdnModel:
    def __init__(self, config: FcdnConfig, weights: Sequence[ChannelWeights]):
        config.validate()
        weights = list(weights)
        if len(weights) != N_BANDS:
            raise ConfigError(f"expected {N_BANDS} channel-weight vectors, got {len(weights)}")
        for w in weights:
            if w.K != config.K:
                raise ConfigError(f"weights of length {w.K} for K={config.K}")
        self.config = config
        self.weights = weights
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.config.dtype)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def block_params(self, layer: int) -> dict[str, Tensor]:
        return {k: self.params[f"block{layer}.{k}"] for k in F.ATTENTION_KEYS}

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {k: p.data.copy() for k, p in self.params.items()}
        out.update({k: v.copy() for k, v in self.buffers.items()})
        return out

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            if k in self.buffers:
                self.buffers[k][...] = v
            elif k in self.params:
                self.params[k].data = v.astype(self.dtype, copy=True)
            else:
                self.params[k] = Tensor(v, requires_grad=True, dtype=self.dtype)

    def copy(self) -> "FcdnModel":
        return copy.deepcopy(self)


# --- construction ----------------------------------------------------------------


def _uniform(rng: np.random.Generator, shape, bound: float, dtype) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)


def build(config: FcdnConfig, weights: Sequence[ChannelWeights] | None = None, seed: int | None = None) -> FcdnModel:
    """Initialise a model; FC weights default to all-ones (no connectivity weighting)."""
    if weights is None:
        weights = [ChannelWeights.ones(config.K) for _ in range(N_BANDS)]
    model = FcdnModel(config, weights)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    dt = model.dtype
    P = model.params
    zeros = lambda *s: Tensor(np.zeros(s), requires_grad=True, dtype=dt)  # noqa: E731
    ones = lambda *s: Tensor(np.ones(s), requires_grad=True, dtype=dt)  # noqa: E731

    chans = (1,) + tuple(config.conv_channels)
    for b in range(N_BANDS):
        for i in range(3):
            cin, cout, w = chans[i], chans[i + 1], config.kernel_widths[i]
            P[f"band{b}.conv{i + 1}.w"] = _uniform(rng, (cout, cin, 1, w), 1 / np.sqrt(cin * w), dt)
            P[f"band{b}.bn{i + 1}.g"] = ones(cout)
            P[f"band{b}.bn{i + 1}.b"] = zeros(cout)
            model.buffers[f"band{b}.bn{i + 1}.mean"] = np.zeros(cout, dtype=dt)
            model.buffers[f"band{b}.bn{i + 1}.var"] = np.ones(cout, dtype=dt)

    D, p = config.embed_dim, config.patch
    patch_in = p * p * N_BANDS
    P["patch.w"] = _uniform(rng, (patch_in, D), 1 / np.sqrt(patch_in), dt)
    P["patch.b"] = zeros(D)
    P["cls_token"] = _uniform(rng, (1, 1, D), 0.02, dt)
    P["dist_token"] = _uniform(rng, (1, 1, D), 0.02, dt)
    P["pos_embed"] = _uniform(rng, (1, config.seq_len, D), 0.02, dt)
    H = config.mlp_ratio * D
    for layer in range(config.depth):
        pre = f"block{layer}."
        P[pre + "ln1_g"], P[pre + "ln1_b"] = ones(D), zeros(D)
        P[pre + "qkv_w"] = _uniform(rng, (D, 3 * D), 1 / np.sqrt(D), dt)
        P[pre + "qkv_b"] = zeros(3 * D)
        P[pre + "proj_w"] = _uniform(rng, (D, D), 1 / np.sqrt(D), dt)
        P[pre + "proj_b"] = zeros(D)
        P[pre + "ln2_g"], P[pre + "ln2_b"] = ones(D), zeros(D)
        P[pre + "fc1_w"] = _uniform(rng, (D, H), 1 / np.sqrt(D), dt)
        P[pre + "fc1_b"] = zeros(H)
        P[pre + "fc2_w"] = _uniform(rng, (H, D), 1 / np.sqrt(H), dt)
        P[pre + "fc2_b"] = zeros(D)
    P["norm.g"], P["norm.b"] = ones(D), zeros(D)
    P["head.w"] = _uniform(rng, (D, config.C), 1 / np.sqrt(D), dt)
    P["head.b"] = zeros(config.C)
    P["head_dist.w"] = _uniform(rng, (D, config.C), 1 / np.sqrt(D), dt)
    P["head_dist.b"] = zeros(config.C)
    return model


def ablate_fc(model: FcdnModel) -> FcdnModel:
    """Copy of ``model`` whose channel weights are all ones."""
    out = model.copy()
    out.weights = [ChannelWeights.ones(model.config.K, w.band) for w in model.weights]
    return out


# --- forward -----------------------------------------------------------------------


def _band_arrays(model: FcdnModel, band_inputs) -> list[np.ndarray]:
    if len(band_inputs) != N_BANDS:
        raise ValueError(f"expected {N_BANDS} bands, got {len(band_inputs)}")
    arrays = [np.asarray(b.epochs if isinstance(b, EpochSet) else b) for b in band_inputs]
    cfg = model.config
    for a in arrays:
        if a.ndim != 3 or a.shape[1:] != (cfg.K, cfg.T):
            raise ValueError(f"band input shape {a.shape} does not match K={cfg.K}, T={cfg.T}")
        if a.shape[0] != arrays[0].shape[0]:
            raise ValueError("bands are not trial-aligned")
    return arrays


def _conv_block(model: FcdnModel, b: int, x: Tensor, training: bool, rng, stages: dict | None) -> Tensor:
    cfg = model.config
    P, buf = model.params, model.buffers
    p1, p2 = cfg.resolved_pool_widths()

    def bn(h, i):
        pre = f"band{b}.bn{i}"
        return F.batchnorm(h, P[pre + ".g"], P[pre + ".b"], buf[pre + ".mean"], buf[pre + ".var"], training)

    h = bn(F.conv_temporal(x, P[f"band{b}.conv1.w"], padding="valid"), 1)
    if stages is not None:
        stages[f"band{b}.conv1"] = h.data
    h = F.elu(bn(F.conv_temporal(h, P[f"band{b}.conv2.w"], padding="valid"), 2))
    if stages is not None:
        stages[f"band{b}.conv2"] = h.data
    h = F.elu(bn(F.conv_temporal(h, P[f"band{b}.conv3.w"], padding="same"), 3))
    if stages is not None:
        stages[f"band{b}.conv3"] = h.data
    h = F.elu(F.dropout(F.avgpool_temporal(h, p1), cfg.dropout, training, rng))
    if stages is not None:
        stages[f"band{b}.pool1"] = h.data
    h = F.dropout(F.avgpool_temporal(h, p2), cfg.dropout, training, rng)
    if stages is not None:
        stages[f"band{b}.pool2"] = h.data
    B = h.shape[0]
    plane = F.scale_0_255(F.bicubic_resize(reshape(h, (B, cfg.conv_channels[2], cfg.K)), cfg.resize, cfg.resize))
    if stages is not None:
        stages[f"band{b}.resize"] = plane.data
    return plane


def forward(
    model: FcdnModel,
    band_inputs,
    training: bool = False,
    rng: np.random.Generator | None = None,
    collect: bool = False,
) -> ForwardOutput:
    """Run the network on three trial-aligned band inputs (EpochSets or N x K x T arrays)."""
    cfg = model.config
    arrays = _band_arrays(model, band_inputs)
    B = arrays[0].shape[0]
    stages: dict | None = {} if collect else None
    planes = []
    for b, arr in enumerate(arrays):
        xw = arr.astype(model.dtype, copy=False) * model.weights[b].w.astype(model.dtype)[None, :, None]
        x = Tensor(xw.reshape(B, 1, cfg.K, cfg.T), dtype=model.dtype)
        planes.append(_conv_block(model, b, x, training, rng, stages))
    img = stack(planes, axis=-1)  # B x R x R x 3
    if stages is not None:
        stages["concat"] = img.data

    R, p = cfg.resize, cfg.patch
    g = R // p
    patches = reshape(transpose(reshape(img, (B, g, p, g, p, N_BANDS)), (0, 1, 3, 2, 4, 5)), (B, g * g, p * p * N_BANDS))
    P = model.params
    tokens = F.linear(patches * (1.0 / 255.0), P["patch.w"], P["patch.b"])
    zeros = Tensor(np.zeros((B, 1, cfg.embed_dim)), dtype=model.dtype)
    h = concat([zeros + P["cls_token"], zeros + P["dist_token"], tokens], axis=1) + P["pos_embed"]
    hidden, attn = [], []
    for layer in range(cfg.depth):
        h, a = F.attention_block(h, model.block_params(layer), cfg.heads)
        hidden.append(h)
        attn.append(a)
    h = F.layer_norm(h, P["norm.g"], P["norm.b"])
    if stages is not None:
        stages["cls_token"] = h.data[:, 0]
    cls_logits = F.linear(h[:, 0], P["head.w"], P["head.b"])
    dist_logits = F.linear(h[:, 1], P["head_dist.w"], P["head_dist.b"])
    logits = cls_logits if training else (cls_logits + dist_logits) * 0.5
    if stages is not None:
        stages["logits"] = logits.data
    return ForwardOutput(logits, cls_logits, dist_logits, hidden, attn, stages or {})


def predict(model: FcdnModel, band_inputs, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode labels and softmax probabilities (float64, rows sum to 1)."""
    arrays = _band_arrays(model, band_inputs)
    n = arrays[0].shape[0]
    probs = []
    with no_grad():
        for start in range(0, n, batch_size):
            out = forward(model, [a[start : start + batch_size] for a in arrays], training=False)
            z = out.logits.data.astype(np.float64)
            e = np.exp(z - z.max(axis=1, keepdims=True))
            probs.append(e / e.sum(axis=1, keepdims=True))
    P = np.concatenate(probs)
    return P.argmax(axis=1), P


# --- distillation ----------------------------------------------------------------------


def dist_token_attention(attn: Tensor) -> float:
    """Mean attention paid to the distillation token (key index 1) over batch, heads, queries."""
    return float(attn.data[..., 1].mean())


def layer_map(student_depth: int, teacher_depth: int) -> list[int]:
    """Teacher layer paired with each student layer (evenly spaced, last to last)."""
    if teacher_depth < student_depth or teacher_depth % student_depth:
        raise ValueError(
            f"layer-count mismatch: teacher depth {teacher_depth} is not a multiple of student depth {student_depth}"
        )
    step = teacher_depth // student_depth
    return [(i + 1) * step - 1 for i in range(student_depth)]


def distill_loss(
    student: ForwardOutput,
    teacher: ForwardOutput | None,
    labels,
    alpha: float,
    beta: float,
    sign: str = "agreement",
    proj: Tensor | None = None,
) -> Tensor:
    """alpha * CE(class head) + beta * sum_i w(sim_i) * q_i.

    sim_i is the batch-mean cosine similarity of the token-averaged hidden
    states of student layer i and its paired teacher layer; q_i is the
    detached mean attention on the distillation token at student layer i.
    ``sign="agreement"`` uses w(s) = 1 - s (minimising pulls the student
    towards the teacher); ``"similarity"`` uses w(s) = s.
    """
    ce = F.cross_entropy(student.cls_logits, labels)
    if beta == 0:
        return ce * alpha
    if teacher is None:
        raise ValueError("beta > 0 needs teacher outputs")
    if sign not in DISTILL_SIGNS:
        raise ValueError(f"unknown distill sign {sign!r}")
    pairs = layer_map(len(student.hidden), len(teacher.hidden))
    total = ce * alpha
    for i, j in enumerate(pairs):
        s = student.hidden[i].mean(axis=1)
        if proj is not None:
            s = F.linear(s, proj)
        t = Tensor(teacher.hidden[j].data.mean(axis=1), dtype=s.dtype)
        if s.shape != t.shape:
            raise ValueError(f"hidden sizes differ ({s.shape} vs {t.shape}); pass a projection")
        sim = F.cosine_similarity(s, t).mean()
        q = dist_token_attention(student.attn[i])
        term = (1.0 - sim) if sign == "agreement" else sim
        total = total + term * (beta * q)
    return total


# --- training ---------------------------------------------------------------------------


def _labels_of(band_sets) -> np.ndarray:
    first = band_sets[0]
    if not isinstance(first, EpochSet):
        raise TypeError("training data must be band-filtered EpochSets")
    return np.asarray(first.labels)


def evaluate_loss_acc(model: FcdnModel, band_sets, batch_size: int = 64) -> tuple[float, float]:
    labels = _labels_of(band_sets)
    _, probs = predict(model, band_sets, batch_size)
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(labels.size), labels], 1e-300))))
    return loss, float(np.mean(probs.argmax(axis=1) == labels))


def train(
    model: FcdnModel,
    teacher: FcdnModel | None,
    train_sets: Sequence[EpochSet],
    val_sets: Sequence[EpochSet],
    config: FcdnConfig | None = None,
    log_path: str | Path | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> tuple[FcdnModel, TrainHistory]:
    """Adam on the distillation objective; the best validation epoch is restored at the end.

    The class head is trained on the true labels. The distillation head is
    trained on the teacher's argmax when a teacher is given, otherwise on the
    true labels. Both are weighted by alpha.
    """
    cfg = config or model.config
    cfg.validate()
    if cfg.beta > 0 and teacher is None:
        raise ConfigError("beta > 0 requires a teacher model")
    if cfg.beta == 0 and teacher is not None:
        raise ConfigError("a teacher is only used when beta > 0")
    y_train, y_val = _labels_of(train_sets), _labels_of(val_sets)
    n = y_train.size
    if n == 0 or y_val.size == 0:
        raise ValueError("empty training or validation split")
    rng = np.random.default_rng(cfg.seed)

    proj = None
    if teacher is not None and teacher.config.embed_dim != model.config.embed_dim:
        proj = model.params.get("distill.proj_w")
        if proj is None:
            bound = 1 / np.sqrt(model.config.embed_dim)
            proj = _uniform(rng, (model.config.embed_dim, teacher.config.embed_dim), bound, model.dtype)
            model.params["distill.proj_w"] = proj
    params = model.parameters()
    state = AdamState.for_params(params)
    history = TrainHistory()
    best: tuple[float, float] | None = None
    best_state = model.state_arrays()
    train_arrays = [np.asarray(s.epochs) for s in train_sets]
    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(n)
            total, seen = 0.0, 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                batch = [a[idx] for a in train_arrays]
                try:
                    out = forward(model, batch, training=True, rng=rng)
                    t_out = None
                    dist_target = y_train[idx]
                    if teacher is not None:
                        with no_grad():
                            t_out = forward(teacher, batch, training=False)
                        dist_target = t_out.logits.data.argmax(axis=1)
                    loss = distill_loss(out, t_out, y_train[idx], cfg.alpha, cfg.beta, cfg.distill_sign, proj)
                    loss = loss + F.cross_entropy(out.dist_logits, dist_target) * cfg.alpha
                    model.zero_grad()
                    loss.backward()
                except FloatingPointError as exc:
                    raise TrainingDivergedError(f"non-finite values at epoch {epoch}, batch {start // cfg.batch_size}: {exc}") from exc
                grads = [p.grad for p in params]
                for g in grads:
                    if g is not None and not np.all(np.isfinite(g)):
                        raise TrainingDivergedError(f"non-finite gradient at epoch {epoch}")
                adam_step(params, grads, state, cfg.lr)
                total += loss.item() * idx.size
                seen += idx.size
            val_loss, val_acc = evaluate_loss_acc(model, val_sets)
            history.train_loss.append(total / seen)
            history.val_loss.append(val_loss)
            history.val_acc.append(val_acc)
            if not np.isfinite(total) or not np.isfinite(val_loss):
                raise TrainingDivergedError(f"loss became non-finite at epoch {epoch}")
            key = (-val_acc, val_loss)
            if best is None or key < best:
                best = key
                best_state = model.state_arrays()
                history.best_epoch = epoch
            record = history.record(epoch)
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
            if on_epoch is not None:
                on_epoch(record)
            logger.info("epoch %d train %.4f val %.4f acc %.3f", epoch, record["train_loss"], val_loss, val_acc)
    finally:
        if log_fh is not None:
            log_fh.close()
    model.load_state_arrays(best_state)
    return model, history


def train_teacher(
    train_sets: Sequence[EpochSet],
    val_sets: Sequence[EpochSet],
    teacher_config: FcdnConfig,
    weights: Sequence[ChannelWeights] | None = None,
    log_path: str | Path | None = None,
) -> FcdnModel:
    """Train a (typically wider/deeper) model with plain cross-entropy."""
    cfg = teacher_config.replace(beta=0.0)
    teacher = build(cfg, weights)
    train(teacher, None, train_sets, val_sets, cfg, log_path)
    return teacher


# --- checkpoints ---------------------------------------------------------------------------


def save_checkpoint(model: FcdnModel, path: str | Path, extra: dict | None = None) -> None:
    """Parameters and BN buffers as float32; config and FC weights in the manifest."""
    entries, chunks, offset = [], [], 0
    for kind, items in (("param", model.params.items()), ("buffer", model.buffers.items())):
        for name, value in items:
            arr = value.data if isinstance(value, Tensor) else value
            entries.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.reshape(-1).astype(np.float32))
            offset += arr.size
    manifest = {
        "magic": CHECKPOINT_MAGIC,
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "fc_weights": [
            {"band": None if w.band is None else dataclasses.asdict(w.band), "weights": [float(v) for v in w.w]}
            for w in model.weights
        ],
        "tensors": entries,
        "n_values": offset,
    }
    if extra:
        manifest["extra"] = extra
    write_container(path, manifest, np.concatenate(chunks) if chunks else np.zeros(0))


def load_checkpoint(path: str | Path) -> FcdnModel:
    manifest, blob = read_container(path, CHECKPOINT_MAGIC)
    try:
        config = FcdnConfig.from_dict(manifest["config"])
        weights = [
            ChannelWeights(np.asarray(w["weights"], dtype=np.float64), BandSpec(**w["band"]) if w["band"] else None)
            for w in manifest["fc_weights"]
        ]
        entries = manifest["tensors"]
        n_values = int(manifest["n_values"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed checkpoint manifest: {exc}") from exc
    if blob.size != n_values:
        raise FormatError(f"blob length mismatch: expected {n_values} floats, found {blob.size}")
    model = build(config, weights)
    state = {}
    for e in entries:
        size = int(np.prod(e["shape"], dtype=np.int64))
        arr = blob[e["offset"] : e["offset"] + size].reshape(e["shape"])
        if e["kind"] == "param" and e["name"] in model.params and model.params[e["name"]].shape != arr.shape:
            raise FormatError(f"shape mismatch for {e['name']}")
        state[e["name"]] = arr
    missing = set(model.params) - set(state)
    if missing:
        raise FormatError(f"checkpoint lacks parameters: {sorted(missing)[:3]}")
    model.load_state_arrays(state)
    return model

"""Patch-based training with Adam, checkpointing, and leave-one-out validation."""
import csv
import logging
import os
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, ContractError, DegenerateError, ShapeError
from .evaluate import pixel_metrics, postprocess
from .layers import BACKGROUND, CELL, FUZZY, weighted_nll
from .model import MARGIN, ModelConfig, build_network, forward, is_feasible
from .tensor import Tape
from .weights import save_weights

log = logging.getLogger(__name__)

# (first epoch, rate) pairs; each rate holds until the next entry
DEFAULT_SCHEDULE = ((1, 1e-5), (51, 1e-6), (101, 1e-7))


def parse_schedule(text):
    """``"1:1e-5, 51:1e-6"`` -> ``((1, 1e-5), (51, 1e-6))``."""
    pairs = []
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        try:
            epoch, rate = item.split(":")
            pairs.append((int(epoch), float(rate)))
        except ValueError:
            raise ConfigError(f"bad schedule entry {item!r}; expected epoch:rate") from None
    return tuple(pairs)


def format_schedule(schedule):
    return ", ".join(f"{e}:{r!r}" for e, r in schedule)


def _pair(value, kind, name):
    if isinstance(value, str):
        value = value.replace("x", ",").split(",")
    try:
        items = tuple(kind(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot parse {name} from {value!r}") from None
    return items


@dataclass
class TrainConfig:
    epochs: int = 2000
    lr_schedule: tuple = DEFAULT_SCHEDULE
    class_weights: tuple = (0.25, 0.75, 0.0)
    patch_size: tuple = (204, 204)
    seed: int = 0
    checkpoint_every: int = 50
    adam: tuple = (0.9, 0.999, 1e-8)
    flip_prob: float = 0.5
    rotation_prob: float = 0.5

    def __post_init__(self):
        if isinstance(self.lr_schedule, str):
            self.lr_schedule = parse_schedule(self.lr_schedule)
        self.lr_schedule = tuple((int(e), float(r)) for e, r in self.lr_schedule)
        self.class_weights = _pair(self.class_weights, float, "class_weights")
        self.patch_size = _pair(self.patch_size, int, "patch_size")
        self.adam = _pair(self.adam, float, "adam")
        self.validate()

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if not self.lr_schedule or self.lr_schedule[0][0] != 1:
            raise ConfigError("lr_schedule must start at epoch 1")
        starts = [e for e, _ in self.lr_schedule]
        if starts != sorted(set(starts)):
            raise ConfigError("lr_schedule epochs must be strictly increasing")
        if any(r < 0 for _, r in self.lr_schedule):
            raise ConfigError("learning rates must be non-negative")
        if len(self.class_weights) != 3:
            raise ConfigError("class_weights needs three values (cell, background, fuzzy)")
        if min(self.class_weights) < 0:
            raise ConfigError(f"class weights must be non-negative, got {self.class_weights}")
        if self.class_weights[2] != 0:
            raise ConfigError("the fuzzy-boundary weight must be 0")
        if self.class_weights[0] + self.class_weights[1] <= 0:
            raise ConfigError("at least one of the cell/background weights must be positive")
        if len(self.patch_size) != 2 or not all(is_feasible(n) for n in self.patch_size):
            raise ConfigError(f"patch size {self.patch_size} is infeasible; "
                              f"need N = 12 (mod 16) and N >= 188 per axis")
        b1, b2, eps = self.adam if len(self.adam) == 3 else (None, None, None)
        if b1 is None or not (0 <= b1 < 1 and 0 <= b2 < 1 and eps > 0):
            raise ConfigError(f"bad Adam parameters {self.adam}")
        for p in (self.flip_prob, self.rotation_prob):
            if not 0 <= p <= 1:
                raise ConfigError("probabilities must lie in [0, 1]")
        return self

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "lr_schedule":
                v = format_schedule(v)
            elif isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


CONFIG_KEYS = tuple(f.name for f in fields(TrainConfig))


def parse_config_text(text, overrides=None):
    """``key = value`` lines (``#`` comments) into a :class:`TrainConfig`."""
    kw = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in kw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        kw[key] = value
    kw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key in ("epochs", "seed", "checkpoint_every"):
        if key in kw:
            try:
                kw[key] = int(kw[key])
            except ValueError:
                raise ConfigError(f"{key} must be an integer, got {kw[key]!r}") from None
    for key in ("flip_prob", "rotation_prob"):
        if key in kw:
            try:
                kw[key] = float(kw[key])
            except ValueError:
                raise ConfigError(f"{key} must be a number, got {kw[key]!r}") from None
    return TrainConfig(**kw)


def load_config(path, overrides=None):
    with open(path) as fh:
        return parse_config_text(fh.read(), overrides)


def lr_schedule(epoch, schedule=DEFAULT_SCHEDULE):
    if epoch < 1:
        raise ContractError(f"epochs count from 1, got {epoch}")
    rate = schedule[0][1]
    for start, r in schedule:
        if epoch >= start:
            rate = r
    return rate


# ---------------------------------------------------------------- augmentation

def rotate(image, labels, angle):
    """Rotate about the centre by ``angle`` degrees (counter-clockwise on screen).

    Multiples of 90 on square inputs are exact lattice moves; other angles
    resample the image bilinearly and the labels by nearest neighbour.
    Pixels whose source falls outside the input become 0 / fuzzy.
    """
    C, H, W = image.shape
    quarter = angle % 360
    if quarter % 90 == 0 and (H == W or quarter == 180):
        k = quarter // 90
        return (np.ascontiguousarray(np.rot90(image, k, axes=(1, 2))),
                np.ascontiguousarray(np.rot90(labels, k)))
    theta = np.deg2rad(angle)
    c, s = np.cos(theta), np.sin(theta)
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    y, x = np.mgrid[0:H, 0:W].astype(np.float64)
    dy, dx = y - cy, x - cx
    # inverse map: output pixel -> source position
    sy = cy + c * dy - s * dx
    sx = cx + s * dy + c * dx
    inside = (sy >= 0) & (sy <= H - 1) & (sx >= 0) & (sx <= W - 1)

    y0 = np.clip(np.floor(sy).astype(np.int64), 0, H - 1)
    x0 = np.clip(np.floor(sx).astype(np.int64), 0, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    fy = np.clip(sy - y0, 0.0, 1.0)
    fx = np.clip(sx - x0, 0.0, 1.0)
    out = (image[:, y0, x0] * (1 - fy) * (1 - fx) + image[:, y0, x1] * (1 - fy) * fx
           + image[:, y1, x0] * fy * (1 - fx) + image[:, y1, x1] * fy * fx)
    out = np.where(inside, out, 0.0)

    ny = np.clip(np.floor(sy + 0.5).astype(np.int64), 0, H - 1)
    nx = np.clip(np.floor(sx + 0.5).astype(np.int64), 0, W - 1)
    lab = np.where(inside, labels[ny, nx], FUZZY).astype(labels.dtype)
    return out, lab


def augment(image, labels, seed, flip_prob=0.5, rotation_prob=0.5):
    """Horizontal flip, rotation by a whole angle in [1, 180], vertical flip.

    Every random draw happens regardless of the outcome so that a seed
    always consumes the same stream.
    """
    rng = np.random.default_rng(seed)
    u_h, u_r, u_v = rng.random(3)
    angle = int(rng.integers(1, 181))
    image = np.asarray(image, dtype=np.float64)
    labels = np.asarray(labels)
    if u_h < flip_prob:
        image, labels = image[:, :, ::-1], labels[:, ::-1]
    if u_r < rotation_prob:
        image, labels = rotate(image, labels, angle)
    if u_v < flip_prob:
        image, labels = image[:, ::-1, :], labels[::-1, :]
    return np.ascontiguousarray(image), np.ascontiguousarray(labels)


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def create(cls, params, adam=(0.9, 0.999, 1e-8)):
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params],
                   0, (adam[0], adam[1]), adam[2])


def adam_step(params, grads, state, rate):
    """One bias-corrected Adam update, in place. Missing gradients count as zero."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ContractError(f"{len(params)} parameters, {len(grads)} gradients, {len(state.m)} moment slots")
    b1, b2 = state.betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {p.name} {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------- training loop

@dataclass
class Sample:
    image: np.ndarray
    labels: np.ndarray


def sample_patch(image, labels, patch, rng):
    """Uniform random patch and its labels cropped to the output window."""
    H, W = image.shape[1:]
    ph, pw = patch
    if H < ph or W < pw:
        raise ShapeError(f"image {H}x{W} is smaller than the patch {ph}x{pw}")
    y = int(rng.integers(0, H - ph + 1))
    x = int(rng.integers(0, W - pw + 1))
    return image[:, y:y + ph, x:x + pw], labels[y:y + ph, x:x + pw]


def crop_labels(labels):
    h = MARGIN // 2
    return np.ascontiguousarray(labels[h:labels.shape[0] - h, h:labels.shape[1] - h])


def make_sample(image, labels, config, rng):
    img, lab = sample_patch(image, labels, config.patch_size, rng)
    aug_seed = int(rng.integers(2 ** 63))
    img, lab = augment(img, lab, aug_seed, config.flip_prob, config.rotation_prob)
    return Sample(img, crop_labels(lab))


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)        # (epoch, mean loss, rate)
    checkpoints: list = field(default_factory=list)
    skipped: int = 0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "lr"])
            for epoch, loss, rate in self.rows:
                w.writerow([epoch, repr(loss), repr(rate)])


def checkpoint_name(epoch):
    return f"ckpt_epoch{epoch:05d}.cbnw"


def _has_weight(labels, weights):
    return ((labels == CELL).any() and weights[0] > 0) or ((labels == BACKGROUND).any() and weights[1] > 0)


def train(dataset, net, config, out_dir=None, on_checkpoint=None):
    """Train ``net`` in place; one random patch per image per epoch.

    ``dataset`` holds ``(image [2, H, W], labels [H, W])`` pairs. With
    ``out_dir`` set, the CSV log and weight checkpoints are written there.
    ``on_checkpoint(epoch, net)`` runs at every checkpoint.
    """
    if not dataset:
        raise ConfigError("training needs at least one sample")
    config.validate()
    params = net.parameters()
    state = AdamState.create(params, config.adam)
    result = TrainingLog()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for epoch in range(1, config.epochs + 1):
        rate = lr_schedule(epoch, config.lr_schedule)
        losses = []
        for i, (image, labels) in enumerate(dataset):
            rng = np.random.default_rng([config.seed, epoch, i])
            sample = make_sample(np.asarray(image, dtype=np.float64), np.asarray(labels), config, rng)
            if not _has_weight(sample.labels, config.class_weights):
                result.skipped += 1
                log.warning("epoch %d image %d: patch has no weighted pixel; skipped", epoch, i)
                continue
            drop_seed = int(rng.integers(2 ** 63))
            net.zero_grad()
            with Tape() as tape:
                logp = forward(net, sample.image, mode="train", seed=drop_seed)
                loss = weighted_nll(logp, sample.labels, config.class_weights)
            tape.backward(loss)
            value = loss.item()
            if not np.isfinite(value):
                raise DegenerateError(f"non-finite loss at epoch {epoch}, image {i}")
            adam_step(params, [p.grad for p in params], state, rate)
            losses.append(value)
        mean = float(np.mean(losses)) if losses else float("nan")
        result.rows.append((epoch, mean, rate))
        if epoch % config.checkpoint_every == 0 or epoch == config.epochs:
            if out_dir is not None:
                path = os.path.join(out_dir, checkpoint_name(epoch))
                save_weights(net, path)
                result.checkpoints.append(path)
            if on_checkpoint is not None:
                on_checkpoint(epoch, net)
    net.zero_grad()
    if out_dir is not None:
        result.write_csv(os.path.join(out_dir, "train_log.csv"))
    return result


# ---------------------------------------------------------------- leave-one-out

@dataclass
class FoldPoint:
    fold: int
    epoch: int
    iou: float
    accuracy: float


def _score(net, image, gt_mask, tile):
    from .inference import predict_probability
    pred = postprocess(predict_probability(net, image, tile))
    return pixel_metrics(pred, gt_mask)


def leave_one_out(items, config, model_config=None, tile=444):
    """Train one fresh network per held-out image; score at epoch 0 and every checkpoint.

    ``items`` are ``(image, labels, gt_mask)`` triples. Validation runs in
    eval mode (running batch-norm statistics). Returns a list of curves,
    one list of :class:`FoldPoint` per fold.
    """
    n = len(items)
    if n < 2:
        raise ConfigError(f"leave-one-out needs at least 2 images, got {n}")
    model_config = model_config or ModelConfig()
    curves = []
    for k in range(n):
        image, _, gt = items[k]
        train_set = [(im, lab) for j, (im, lab, _) in enumerate(items) if j != k]
        net = build_network(model_config)
        curve = [FoldPoint(k, 0, *_score(net, image, gt, tile))]

        def hook(epoch, net, k=k, image=image, gt=gt, curve=curve):
            curve.append(FoldPoint(k, epoch, *_score(net, image, gt, tile)))

        train(train_set, net, config, on_checkpoint=hook)
        curves.append(curve)
    return curves


def format_curves(curves):
    lines = ["fold,epoch,iou,accuracy"]
    for curve in curves:
        for p in curve:
            lines.append(f"{p.fold},{p.epoch},{p.iou:.6f},{p.accuracy:.6f}")
    return "\n".join(lines) + "\n"

"""Desk-scale surrogate of the three-stage alignment model.

The trainable surface mirrors the full system: a linear visual adapter,
token embeddings, a vocabulary mapping layer, a 2-D localization head, and
a (2*P*N)-D trajectory head, all hanging off a frozen random affine+tanh
backbone that pools the visual tokens, the token prefix, and the sequence
position.  Every loss has an analytic gradient that is checked against
central finite differences.

Shapes (config d_v, d, vocab V, points P, frames N, sequence length L):
    adapter      (d, d_v)
    embeddings   (V, d)
    backbone_w   (d, 2d+1)   frozen
    backbone_b   (d,)        frozen
    vocab_map    (V, d)
    loc_w, loc_b (2, d), (2,)
    traj_w/b     (2PN, d), (2PN,)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

ARRAY_NAMES = (
    "adapter",
    "embeddings",
    "backbone_w",
    "backbone_b",
    "vocab_map",
    "loc_w",
    "loc_b",
    "traj_w",
    "traj_b",
)

FROZEN_ALWAYS = ("backbone_w", "backbone_b")

TRAINABLE_BY_STAGE = {
    1: ("adapter", "embeddings", "vocab_map", "loc_w", "loc_b"),
    2: ("embeddings", "vocab_map", "traj_w", "traj_b"),
    3: ("embeddings", "vocab_map"),
}


@dataclass
class TrainerConfig:
    d_v: int = 8
    d: int = 16
    vocab: int = 32
    points: int = 3
    frames: int = 100
    lam: float = 1.0
    smoothing: float = 0.1
    lr: float = 0.5
    steps: int = 200
    seed: int = 0

    def __post_init__(self):
        if min(self.d_v, self.d, self.vocab, self.points, self.frames) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0 <= self.smoothing < 1:
            raise ValueError("smoothing must be in [0, 1)")

    @classmethod
    def from_json(cls, obj: dict) -> "TrainerConfig":
        known = {k: v for k, v in obj.items() if k in cls.__dataclass_fields__}
        unknown = set(obj) - set(known)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**known)

    def to_json(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass
class ToyModelParams:
    """All surrogate weights plus the (P, N) geometry of the trajectory head."""

    adapter: np.ndarray
    embeddings: np.ndarray
    backbone_w: np.ndarray
    backbone_b: np.ndarray
    vocab_map: np.ndarray
    loc_w: np.ndarray
    loc_b: np.ndarray
    traj_w: np.ndarray
    traj_b: np.ndarray
    points: int = 1
    traj_frames: int = 1

    def copy(self) -> "ToyModelParams":
        return ToyModelParams(
            **{n: getattr(self, n).copy() for n in ARRAY_NAMES},
            points=self.points,
            traj_frames=self.traj_frames,
        )

    def check_shapes(self, cfg: TrainerConfig) -> None:
        d, d_v, V = cfg.d, cfg.d_v, cfg.vocab
        out = 2 * cfg.points * cfg.frames
        expected = {
            "adapter": (d, d_v),
            "embeddings": (V, d),
            "backbone_w": (d, 2 * d + 1),
            "backbone_b": (d,),
            "vocab_map": (V, d),
            "loc_w": (2, d),
            "loc_b": (2,),
            "traj_w": (out, d),
            "traj_b": (out,),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")
        if (self.points, self.traj_frames) != (cfg.points, cfg.frames):
            raise ValueError("trajectory head geometry does not match config")


@dataclass
class TrainingSample:
    """One training example; target rows are meaningful only where supervised."""

    frames: np.ndarray  # (n_frames, d_v)
    tokens: np.ndarray  # (L,) int
    supervised: np.ndarray  # (L,) bool
    loc_targets: np.ndarray | None = None  # (L, 2)
    traj_targets: np.ndarray | None = None  # (L, P, N, 2)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        self.tokens = np.asarray(self.tokens, dtype=int)
        self.supervised = np.asarray(self.supervised, dtype=bool)
        if self.tokens.ndim != 1 or len(self.tokens) == 0:
            raise ValueError("tokens must be a nonempty 1-D sequence")
        if self.supervised.shape != self.tokens.shape:
            raise ValueError("supervised mask must align with tokens")
        if self.loc_targets is not None:
            self.loc_targets = np.asarray(self.loc_targets, dtype=float)
        if self.traj_targets is not None:
            self.traj_targets = np.asarray(self.traj_targets, dtype=float)

    def require(self, stage: int) -> None:
        if stage == 1 and self.loc_targets is None:
            raise ValueError("stage 1 sample requires loc_targets")
        if stage == 2 and self.traj_targets is None:
            raise ValueError("stage 2 sample requires traj_targets")


class ForwardOutput(NamedTuple):
    hidden: np.ndarray  # (L, d)
    logits: np.ndarray  # (L, V)
    locs: np.ndarray  # (L, 2)
    trajs: np.ndarray  # (L, P, N, 2)


def init_params(cfg: TrainerConfig, seed: int | None = None) -> ToyModelParams:
    """Seeded Gaussian init, scaled by 1/sqrt(fan_in); head biases start at zero."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    d, d_v, V = cfg.d, cfg.d_v, cfg.vocab
    out = 2 * cfg.points * cfg.frames

    def dense(rows, cols):
        return rng.normal(0.0, 1.0 / np.sqrt(cols), size=(rows, cols))

    return ToyModelParams(
        adapter=dense(d, d_v),
        embeddings=dense(V, d),
        backbone_w=dense(d, 2 * d + 1),
        backbone_b=rng.normal(0.0, 0.1, size=d),
        vocab_map=dense(V, d),
        loc_w=dense(2, d),
        loc_b=np.zeros(2),
        traj_w=dense(out, d),
        traj_b=np.zeros(out),
        points=cfg.points,
        traj_frames=cfg.frames,
    )


def _inputs(params: ToyModelParams, frames: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """Per-token backbone input [mean frame token; mean prefix embedding; position]."""
    L = len(tokens)
    d = params.adapter.shape[0]
    z = frames @ params.adapter.T  # (n_frames, d)
    zbar = z.mean(axis=0)
    ctx = np.zeros((L, d))
    if L > 1:
        cum = np.cumsum(params.embeddings[tokens[:-1]], axis=0)
        ctx[1:] = cum / np.arange(1, L)[:, None]
    pos = (np.arange(L) + 1.0) / L
    return np.concatenate([np.tile(zbar, (L, 1)), ctx, pos[:, None]], axis=1)


def forward(params: ToyModelParams, frames, tokens) -> ForwardOutput:
    """Run the surrogate model over one sample; deterministic."""
    frames = np.asarray(frames, dtype=float)
    tokens = np.asarray(tokens, dtype=int)
    if tokens.ndim != 1 or len(tokens) == 0:
        raise ValueError("token sequence must be nonempty")
    if frames.ndim != 2 or frames.shape[1] != params.adapter.shape[1]:
        raise ValueError(
            f"frames shape {frames.shape} incompatible with adapter {params.adapter.shape}"
        )
    X = _inputs(params, frames, tokens)
    H = np.tanh(X @ params.backbone_w.T + params.backbone_b)
    logits = H @ params.vocab_map.T
    locs = H @ params.loc_w.T + params.loc_b
    flat = H @ params.traj_w.T + params.traj_b
    trajs = flat.reshape(len(tokens), params.points, params.traj_frames, 2)
    return ForwardOutput(hidden=H, logits=logits, locs=locs, trajs=trajs)


def _logsumexp(logits: np.ndarray) -> np.ndarray:
    peak = logits.max(axis=1, keepdims=True)
    return peak + np.log(np.exp(logits - peak).sum(axis=1, keepdims=True))


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def label_smoothed_ce(logits: np.ndarray, targets: np.ndarray, eps: float) -> np.ndarray:
    """Per-token label-smoothed cross-entropy with the uniform-mixture target."""
    logp = logits - _logsumexp(logits)
    nll = -logp[np.arange(len(targets)), targets]
    uniform = -logp.mean(axis=1)
    return (1.0 - eps) * nll + eps * uniform


def smoothed_ce_floor(vocab: int, eps: float) -> float:
    """Entropy of the smoothed target: the analytic minimum of label_smoothed_ce."""
    q_target = 1.0 - eps + eps / vocab
    q_other = eps / vocab
    floor = -q_target * np.log(q_target)
    if vocab > 1 and q_other > 0:
        floor -= (vocab - 1) * q_other * np.log(q_other)
    return float(floor)


def _ce_terms(out: ForwardOutput, sample: TrainingSample, eps: float) -> np.ndarray:
    return label_smoothed_ce(out.logits, sample.tokens, eps)


def loss_stage1(
    params: ToyModelParams, sample: TrainingSample, lam: float, smoothing: float
) -> float:
    """Mean over tokens of CE plus lam * L1 location error on supervised tokens."""
    sample.require(1)
    out = forward(params, sample.frames, sample.tokens)
    ce = _ce_terms(out, sample, smoothing)
    l1 = np.abs(out.locs - sample.loc_targets).sum(axis=1)
    l1 = np.where(sample.supervised, l1, 0.0)
    return float(np.mean(ce + lam * l1))


def loss_stage2(
    params: ToyModelParams, sample: TrainingSample, lam: float, smoothing: float
) -> float:
    """Mean over tokens of CE plus lam/(P*N) * summed L1 trajectory error.

    Sentinel (-1, -1) target cells participate exactly like real coordinates.
    """
    sample.require(2)
    out = forward(params, sample.frames, sample.tokens)
    ce = _ce_terms(out, sample, smoothing)
    P, N = params.points, params.traj_frames
    l1 = np.abs(out.trajs - sample.traj_targets).sum(axis=(1, 2, 3)) / (P * N)
    l1 = np.where(sample.supervised, l1, 0.0)
    return float(np.mean(ce + lam * l1))


def loss_stage3(params: ToyModelParams, sample: TrainingSample, smoothing: float) -> float:
    """Label-smoothed cross-entropy only."""
    out = forward(params, sample.frames, sample.tokens)
    return float(np.mean(_ce_terms(out, sample, smoothing)))


def stage_loss(
    params: ToyModelParams,
    sample: TrainingSample,
    stage: int,
    lam: float,
    smoothing: float,
) -> float:
    if stage == 1:
        return loss_stage1(params, sample, lam, smoothing)
    if stage == 2:
        return loss_stage2(params, sample, lam, smoothing)
    if stage == 3:
        return loss_stage3(params, sample, smoothing)
    raise ValueError(f"unknown stage {stage}")


def tile_init(params: ToyModelParams) -> ToyModelParams:
    """Initialize the trajectory head with P*N stacked copies of the location head.

    Immediately afterwards every (point, frame) slice of the trajectory
    output equals the localization output exactly.
    """
    reps = params.points * params.traj_frames
    new = params.copy()
    new.traj_w = np.tile(params.loc_w, (reps, 1))
    new.traj_b = np.tile(params.loc_b, reps)
    return new


def gradients(
    params: ToyModelParams,
    sample: TrainingSample,
    stage: int,
    lam: float,
    smoothing: float,
) -> dict[str, np.ndarray]:
    """Analytic gradients of the stage loss for one sample.

    Returns one array per parameter group; groups frozen for the stage come
    back as exact zeros.
    """
    sample.require(stage)
    frames = sample.frames
    tokens = sample.tokens
    L = len(tokens)
    V, d = params.vocab_map.shape

    X = _inputs(params, frames, tokens)
    H = np.tanh(X @ params.backbone_w.T + params.backbone_b)
    logits = H @ params.vocab_map.T

    grads = {name: np.zeros_like(getattr(params, name)) for name in ARRAY_NAMES}

    # cross-entropy head
    probs = _softmax(logits)
    q = np.full((L, V), smoothing / V)
    q[np.arange(L), tokens] += 1.0 - smoothing
    g_logits = (probs - q) / L
    grads["vocab_map"] = g_logits.T @ H
    g_h = g_logits @ params.vocab_map

    sup = sample.supervised.astype(float)[:, None]
    if stage == 1:
        locs = H @ params.loc_w.T + params.loc_b
        g_locs = (lam / L) * np.sign(locs - sample.loc_targets) * sup
        grads["loc_w"] = g_locs.T @ H
        grads["loc_b"] = g_locs.sum(axis=0)
        g_h += g_locs @ params.loc_w
    elif stage == 2:
        P, N = params.points, params.traj_frames
        flat = H @ params.traj_w.T + params.traj_b
        targets = sample.traj_targets.reshape(L, 2 * P * N)
        g_flat = (lam / (L * P * N)) * np.sign(flat - targets) * sup
        grads["traj_w"] = g_flat.T @ H
        grads["traj_b"] = g_flat.sum(axis=0)
        g_h += g_flat @ params.traj_w

    g_a = g_h * (1.0 - H**2)
    g_x = g_a @ params.backbone_w
    # backbone itself stays frozen: no accumulation

    # visual adapter: zbar is the mean of per-frame projections
    g_zbar = g_x[:, :d].sum(axis=0)
    grads["adapter"] = np.outer(g_zbar, frames.mean(axis=0))

    # embeddings enter through prefix means: token s feeds ctx_t for all t > s
    g_ctx = g_x[:, d : 2 * d]
    if L > 1:
        weighted = g_ctx[1:] / np.arange(1, L)[:, None]
        suffix = np.cumsum(weighted[::-1], axis=0)[::-1]
        np.add.at(grads["embeddings"], tokens[:-1], suffix)

    for name in FROZEN_ALWAYS:
        grads[name][...] = 0.0
    for name in ARRAY_NAMES:
        if name not in TRAINABLE_BY_STAGE[stage] and name not in FROZEN_ALWAYS:
            grads[name][...] = 0.0
    return grads


def grad_check(
    params: ToyModelParams,
    sample: TrainingSample,
    stage: int,
    eps: float = 1e-5,
    lam: float = 1.0,
    smoothing: float = 0.1,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Sweeps every trainable scalar of the stage; the error for one scalar is
    |analytic - numeric| / max(1, |numeric|).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    analytic = gradients(params, sample, stage, lam, smoothing)
    worst = 0.0
    work = params.copy()
    for name in TRAINABLE_BY_STAGE[stage]:
        arr = getattr(work, name)
        grad = analytic[name]
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + eps
            hi = stage_loss(work, sample, stage, lam, smoothing)
            arr[idx] = keep - eps
            lo = stage_loss(work, sample, stage, lam, smoothing)
            arr[idx] = keep
            numeric = (hi - lo) / (2 * eps)
            err = abs(grad[idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


def greedy_decode(params: ToyModelParams, frames, length: int) -> np.ndarray:
    """Free-running argmax decode of ``length`` tokens from the visual input.

    Row i of the forward pass depends only on tokens before i (and on the
    fixed length), so the undecided suffix can stay zero-padded.
    """
    tokens = np.zeros(length, dtype=int)
    for i in range(length):
        out = forward(params, frames, tokens)
        tokens[i] = int(np.argmax(out.logits[i]))
    return tokens

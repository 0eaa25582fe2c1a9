"""Framework-free numeric reference of the model's differentiable core:
visual prompt encoding, cross-attention over concatenated image/text/prompt
embeddings, seg-token projection with a linear per-pixel mask probe, and the
weighted total loss.  Every analytic gradient is validated against central
differences.

The mask probe is a deliberate simplification: per-pixel logit equals the dot
product of the pixel feature with the projected seg-token state.  Fidelity to
a full two-way decoder is not claimed; the contract (mask from image features
plus projected seg state) is.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, NonFiniteError, OutOfBoundsError
from .masks import (
    DICE_SMOOTH,
    BinaryMask,
    Box,
    LossWeights,
    Point,
    SoftMask,
    bce_loss,
    dice_loss,
    total_loss,
)

DEFAULT_DIM = 32
DEFAULT_QUERIES = 32


def _uniform(rng: np.random.Generator, shape, dim: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(dim)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class PromptEncoderParams:
    """Learned type embeddings plus the encoding dimension (multiple of 4)."""

    dim: int
    point_type: np.ndarray  # (dim,)
    corner_types: np.ndarray  # (2, dim)

    @classmethod
    def seeded(cls, dim: int = DEFAULT_DIM, seed: int = 0) -> "PromptEncoderParams":
        if dim % 4 != 0:
            raise ValueError(f"dim must be a multiple of 4, got {dim}")
        rng = np.random.default_rng(seed)
        return cls(
            dim=dim,
            point_type=_uniform(rng, (dim,), dim),
            corner_types=_uniform(rng, (2, dim), dim),
        )


def positional_encoding(x_norm: float, y_norm: float, dim: int) -> np.ndarray:
    """Sinusoidal encoding of normalized coordinates.

    The first dim/2 channels encode x and the last dim/2 encode y, as
    interleaved sin/cos pairs over a geometric frequency ladder, so a pure x
    translation only moves the x half.
    """
    if dim % 4 != 0:
        raise ValueError(f"dim must be a multiple of 4, got {dim}")
    quarter = dim // 4
    freqs = 10000.0 ** (-np.arange(quarter) / quarter)
    out = np.empty(dim, dtype=np.float64)
    out[0 : dim // 2 : 2] = np.sin(2.0 * np.pi * x_norm * freqs)
    out[1 : dim // 2 : 2] = np.cos(2.0 * np.pi * x_norm * freqs)
    out[dim // 2 :: 2] = np.sin(2.0 * np.pi * y_norm * freqs)
    out[dim // 2 + 1 :: 2] = np.cos(2.0 * np.pi * y_norm * freqs)
    return out


def encode_prompt(
    prompt: Point | Box, image_size: tuple[int, int], params: PromptEncoderParams
) -> np.ndarray:
    """Point -> one row, box -> two corner rows; positional encoding of the
    normalized coordinates plus the learned type embedding."""
    height, width = image_size
    d = params.dim

    def check(x: int, y: int) -> None:
        if not (0 <= x < width and 0 <= y < height):
            raise OutOfBoundsError(f"({x}, {y}) outside {width}x{height} image")

    if isinstance(prompt, Point):
        check(prompt.x, prompt.y)
        row = positional_encoding(prompt.x / width, prompt.y / height, d)
        return (row + params.point_type)[None, :]
    if isinstance(prompt, Box):
        check(prompt.x_min, prompt.y_min)
        check(prompt.x_max, prompt.y_max)
        top = positional_encoding(prompt.x_min / width, prompt.y_min / height, d)
        bottom = positional_encoding(prompt.x_max / width, prompt.y_max / height, d)
        return np.stack(
            (top + params.corner_types[0], bottom + params.corner_types[1])
        )
    raise TypeError(f"prompt must be Point or Box, got {type(prompt)}")


@dataclass
class AlignerWeights:
    """Single-head cross-attention projections plus the learnable queries."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    queries: np.ndarray  # (n_q, dim)

    @classmethod
    def seeded(
        cls, dim: int = DEFAULT_DIM, n_queries: int = DEFAULT_QUERIES, seed: int = 0
    ) -> "AlignerWeights":
        rng = np.random.default_rng(seed)
        return cls(
            w_q=_uniform(rng, (dim, dim), dim),
            w_k=_uniform(rng, (dim, dim), dim),
            w_v=_uniform(rng, (dim, dim), dim),
            w_o=_uniform(rng, (dim, dim), dim),
            queries=_uniform(rng, (n_queries, dim), dim),
        )

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _as_rows(x, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, dim))
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DimensionMismatchError(f"{name} must be (rows, {dim}), got {arr.shape}")
    return arr


def aligner_forward(
    x_img,
    x_qt,
    x_qv,
    w: AlignerWeights,
    key_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Cross-attention of the learnable queries over concatenated inputs.

    ``x_qv`` may be empty (no visual prompt).  ``key_mask`` marks keys to
    keep; masked-out keys behave exactly like absent rows.
    """
    d = w.dim
    keys_in = np.concatenate(
        [_as_rows(x_img, d, "x_img"), _as_rows(x_qt, d, "x_qt"), _as_rows(x_qv, d, "x_qv")]
    )
    if keys_in.shape[0] == 0:
        raise DimensionMismatchError("need at least one key/value row")
    q = w.queries @ w.w_q
    k = keys_in @ w.w_k
    v = keys_in @ w.w_v
    scores = q @ k.T / math.sqrt(d)
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape != (keys_in.shape[0],):
            raise DimensionMismatchError(
                f"key_mask must have shape ({keys_in.shape[0]},), got {key_mask.shape}"
            )
        if not key_mask.any():
            raise DimensionMismatchError("key_mask removes every key")
        scores = np.where(key_mask[None, :], scores, -np.inf)
    attention = softmax_rows(scores)
    return attention @ v @ w.w_o


@dataclass
class SegTokenState:
    """Seg-token hidden state and the projection into decoder feature space."""

    r_seg: np.ndarray  # (dim,)
    proj: np.ndarray  # (dim, dec_dim)


def decode_logits(image_features, st: SegTokenState) -> np.ndarray:
    features = np.asarray(image_features, dtype=np.float64)
    dec_dim = st.proj.shape[1]
    if features.ndim != 2 or features.shape[1] != dec_dim:
        raise DimensionMismatchError(
            f"image features must be (pixels, {dec_dim}), got {features.shape}"
        )
    return features @ (st.r_seg @ st.proj)


def decode_mask(
    image_features, st: SegTokenState, grid_size: tuple[int, int]
) -> SoftMask:
    """Linear per-pixel probe: sigmoid of feature . (r_seg @ proj)."""
    h, w = grid_size
    logits = decode_logits(image_features, st)
    if logits.size != h * w:
        raise DimensionMismatchError(
            f"{logits.size} pixel features for a {h}x{w} grid"
        )
    probs = 1.0 / (1.0 + np.exp(-logits))
    return SoftMask(probs.reshape(h, w))


# --- reference chain: inputs -> aligner -> pooled seg state -> mask + text ---

PARAM_NAMES = ("w_q", "w_k", "w_v", "w_o", "queries", "proj", "w_vocab")


@dataclass(frozen=True)
class ReferenceConfig:
    dim: int = 8
    n_queries: int = 4
    dec_dim: int = 6
    vocab: int = 7
    img_rows: int = 5
    text_rows: int = 3
    prompt_rows: int = 2
    grid: tuple[int, int] = (4, 4)


@dataclass
class ReferenceBatch:
    x_img: np.ndarray
    x_qt: np.ndarray
    x_qv: np.ndarray
    image_features: np.ndarray
    gold: BinaryMask
    target_token: int


def make_reference_batch(config: ReferenceConfig, seed: int = 0) -> ReferenceBatch:
    rng = np.random.default_rng(seed)
    h, w = config.grid
    gold = BinaryMask(rng.random((h, w)) < 0.5)
    return ReferenceBatch(
        x_img=rng.standard_normal((config.img_rows, config.dim)),
        x_qt=rng.standard_normal((config.text_rows, config.dim)),
        x_qv=rng.standard_normal((config.prompt_rows, config.dim)),
        image_features=rng.standard_normal((h * w, config.dec_dim)),
        gold=gold,
        target_token=int(rng.integers(config.vocab)),
    )


def init_params(config: ReferenceConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    d = config.dim
    return {
        "w_q": _uniform(rng, (d, d), d),
        "w_k": _uniform(rng, (d, d), d),
        "w_v": _uniform(rng, (d, d), d),
        "w_o": _uniform(rng, (d, d), d),
        "queries": _uniform(rng, (config.n_queries, d), d),
        "proj": _uniform(rng, (d, config.dec_dim), d),
        "w_vocab": _uniform(rng, (d, config.vocab), d),
    }


def forward_loss(
    batch: ReferenceBatch,
    params: dict[str, np.ndarray],
    w: LossWeights = LossWeights(),
    dice_smooth: float = DICE_SMOOTH,
) -> float:
    loss, _ = _forward(batch, params, w, dice_smooth)
    if not math.isfinite(loss):
        raise NonFiniteError(f"loss is {loss}")
    return loss


def _forward(batch, params, w: LossWeights, dice_smooth: float = DICE_SMOOTH):
    """Forward pass returning the loss and the cache needed for backprop."""
    d = params["w_q"].shape[0]
    keys_in = np.concatenate([batch.x_img, batch.x_qt, batch.x_qv])
    q = params["queries"] @ params["w_q"]
    k = keys_in @ params["w_k"]
    v = keys_in @ params["w_v"]
    scores = q @ k.T / math.sqrt(d)
    attention = softmax_rows(scores)
    h_mid = attention @ v
    out = h_mid @ params["w_o"]
    r_seg = out.mean(axis=0)
    if not np.isfinite(r_seg).all():
        raise NonFiniteError("pooled seg state is not finite")

    st = SegTokenState(r_seg=r_seg, proj=params["proj"])
    grid = batch.gold.data.shape
    pred = decode_mask(batch.image_features, st, grid)
    l_bce = bce_loss(pred, batch.gold)
    l_dice = dice_loss(pred, batch.gold, smooth=dice_smooth)

    with np.errstate(invalid="ignore", over="ignore"):
        logits_v = r_seg @ params["w_vocab"]
    if not np.isfinite(logits_v).all():
        raise NonFiniteError("vocabulary logits are not finite")
    shifted = logits_v - logits_v.max()
    log_z = math.log(np.exp(shifted).sum())
    l_text = float(log_z - shifted[batch.target_token])

    loss = total_loss(l_text, l_bce, l_dice, w)
    cache = {
        "keys_in": keys_in,
        "q": q,
        "k": k,
        "v": v,
        "attention": attention,
        "h_mid": h_mid,
        "r_seg": r_seg,
        "probs": pred.probs.ravel(),
        "logits_v_shifted": shifted,
    }
    return loss, cache


def loss_and_grads(
    batch: ReferenceBatch,
    params: dict[str, np.ndarray],
    w: LossWeights = LossWeights(),
    dice_smooth: float = DICE_SMOOTH,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus analytic gradients for every parameter.

    Assumes the BCE probability clamp is not binding (true for the seeded
    uniform init, which keeps logits far from saturation).
    """
    loss, cache = _forward(batch, params, w, dice_smooth)
    d = params["w_q"].shape[0]
    t = batch.gold.data.ravel().astype(np.float64)
    p = cache["probs"]
    n_pix = p.size
    r_seg = cache["r_seg"]
    n_q = params["queries"].shape[0]

    # text head
    soft_v = np.exp(cache["logits_v_shifted"])
    soft_v /= soft_v.sum()
    d_logits_v = soft_v.copy()
    d_logits_v[batch.target_token] -= 1.0
    d_logits_v *= w.lambda_text
    grad_w_vocab = np.outer(r_seg, d_logits_v)
    d_r = params["w_vocab"] @ d_logits_v

    # mask head: bce + dice through the sigmoid
    dz = w.lambda_bce * (p - t) / n_pix
    num = 2.0 * float(p @ t) + dice_smooth
    den = float(p.sum()) + float(t.sum()) + dice_smooth
    d_dice_dp = -(2.0 * t * den - num) / den**2
    dz += w.lambda_dice * d_dice_dp * p * (1.0 - p)

    d_seg_q = batch.image_features.T @ dz
    grad_proj = np.outer(r_seg, d_seg_q)
    d_r = d_r + params["proj"] @ d_seg_q

    # mean pool over query rows
    d_out = np.tile(d_r / n_q, (n_q, 1))
    grad_w_o = cache["h_mid"].T @ d_out
    d_h = d_out @ params["w_o"].T
    d_attention = d_h @ cache["v"].T
    d_v = cache["attention"].T @ d_h
    a = cache["attention"]
    d_scores = a * (d_attention - (d_attention * a).sum(axis=1, keepdims=True))
    d_q = d_scores @ cache["k"] / math.sqrt(d)
    d_k = d_scores.T @ cache["q"] / math.sqrt(d)
    grad_queries = d_q @ params["w_q"].T
    grad_w_q = params["queries"].T @ d_q
    grad_w_k = cache["keys_in"].T @ d_k
    grad_w_v = cache["keys_in"].T @ d_v

    grads = {
        "w_q": grad_w_q,
        "w_k": grad_w_k,
        "w_v": grad_w_v,
        "w_o": grad_w_o,
        "queries": grad_queries,
        "proj": grad_proj,
        "w_vocab": grad_w_vocab,
    }
    for name, grad in grads.items():
        if not np.isfinite(grad).all():
            raise NonFiniteError(f"gradient for {name} is not finite")
    if not math.isfinite(loss):
        raise NonFiniteError(f"loss is {loss}")
    return loss, grads


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    per_param: dict[str, float]

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance

    def failing_params(self, tolerance: float = 1e-4) -> list[str]:
        return [n for n, e in self.per_param.items() if e >= tolerance]


def grad_check(loss_fn, params: dict[str, np.ndarray], eps: float = 1e-5) -> GradCheckResult:
    """Compare analytic gradients with central differences, entry by entry.

    ``loss_fn(params)`` must return ``(loss, grads)``.  The relative error
    denominator is max(|analytic|, |numeric|, 1e-8).
    """
    _, analytic = loss_fn(params)
    per_param: dict[str, float] = {}
    worst = ("", 0.0)
    for name, values in params.items():
        grad = analytic[name]
        if grad.shape != values.shape:
            raise DimensionMismatchError(
                f"gradient shape {grad.shape} != parameter shape {values.shape} for {name}"
            )
        max_err = 0.0
        flat_grad = grad.ravel()
        for idx in range(values.size):
            original = values.flat[idx]
            values.flat[idx] = original + eps
            plus, _unused = loss_fn(params)
            values.flat[idx] = original - eps
            minus, _unused = loss_fn(params)
            values.flat[idx] = original
            numeric = (plus - minus) / (2.0 * eps)
            if not math.isfinite(numeric):
                raise NonFiniteError(f"central difference for {name}[{idx}] is not finite")
            a = float(flat_grad[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            max_err = max(max_err, err)
        per_param[name] = max_err
        if max_err > worst[1]:
            worst = (name, max_err)
    return GradCheckResult(
        max_rel_error=worst[1], worst_param=worst[0], per_param=per_param
    )


SUITE_EPS = 5e-5


def run_grad_check_suite(
    n_configs: int = 20,
    base_seed: int = 0,
    eps: float = SUITE_EPS,
    weights: LossWeights = LossWeights(),
    config: ReferenceConfig = ReferenceConfig(),
) -> list[GradCheckResult]:
    """Gradient-check the full chain across seeded configurations.

    The suite step size is larger than grad_check's default: with a smooth
    chain and loss magnitude near 3, the difference quotient's rounding noise
    (macheps*|loss|/2eps) dominates its truncation error, and 5e-5 sits in
    the optimal basin, keeping noise on near-zero gradient entries an order
    of magnitude under the 1e-4 verification tolerance.
    """
    results = []
    for i in range(n_configs):
        seed = base_seed + i
        batch = make_reference_batch(config, seed=seed)
        params = init_params(config, seed=seed + 10_000)
        results.append(
            grad_check(lambda p: loss_and_grads(batch, p, weights), params, eps=eps)
        )
    return results


def save_params(params: dict[str, np.ndarray], path) -> None:
    payload = {
        name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
        for name, arr in params.items()
    }
    Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def load_params(path) -> dict[str, np.ndarray]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return {
        name: np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
        for name, rec in payload.items()
    }

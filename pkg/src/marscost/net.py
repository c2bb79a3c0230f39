"""Costmap regressor with hand-rolled reverse-mode gradients.

Architecture: pillar pseudo-image -> two stride-2 conv stages (the coarse
scales that get modulated) -> FiLM conditioning of both scales on the image
embedding -> upsample + concatenate -> 3x3 conv head with ReLU -> 1x1 conv ->
sigmoid -> bilinear upsample back to the BEV grid. Everything is float64 and
deterministic; gradients are exact for the architecture as written.
"""

from dataclasses import dataclass, fields, replace

import numpy as np

from .bev import (
    EMBED_DIM,
    FilmParams,
    embed_image,
    film_backward,
    film_gamma_beta,
    pillar_encode_backward,
    pillar_encode_cached,
    pillarize,
)
from .ops import (
    conv2d_backward,
    conv2d_forward,
    resize_bilinear,
    resize_bilinear_backward,
    sigmoid,
)
from .types import DenseCostmap, GridSpec, Image, PointCloud, Sample

POINT_FEATURE_DIM = 9


@dataclass(frozen=True)
class NetConfig:
    """Channel widths of the regressor; the embedding size is fixed at 384."""

    channels: int = 12  # pillar pseudo-image channels
    stage2_channels: int = 16  # first downsampled scale
    stage3_channels: int = 24  # second downsampled scale
    film_hidden: int = 16
    head_channels: int = 32
    max_points_per_pillar: int = 32

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be positive")


_TENSOR_FIELDS = (
    "pillar_w",
    "pillar_b",
    "conv1_w",
    "conv1_b",
    "conv2_w",
    "conv2_b",
    "film3_w1",
    "film3_b1",
    "film3_w2",
    "film3_b2",
    "film4_w1",
    "film4_b1",
    "film4_w2",
    "film4_b2",
    "head_w1",
    "head_b1",
    "head_w2",
    "head_b2",
)


@dataclass
class ModelParams:
    """Every trainable tensor of the regressor."""

    pillar_w: np.ndarray  # (9, C)
    pillar_b: np.ndarray  # (C,)
    conv1_w: np.ndarray  # (3, 3, C, C2)
    conv1_b: np.ndarray
    conv2_w: np.ndarray  # (3, 3, C2, C3)
    conv2_b: np.ndarray
    film3_w1: np.ndarray  # (384, hidden)
    film3_b1: np.ndarray
    film3_w2: np.ndarray  # (hidden, 2*C2)
    film3_b2: np.ndarray
    film4_w1: np.ndarray
    film4_b1: np.ndarray
    film4_w2: np.ndarray  # (hidden, 2*C3)
    film4_b2: np.ndarray
    head_w1: np.ndarray  # (3, 3, C2+C3, Ch)
    head_b1: np.ndarray
    head_w2: np.ndarray  # (1, 1, Ch, 1)
    head_b2: np.ndarray
    max_points_per_pillar: int = 32

    def named_tensors(self):
        """Stable (name, array) iteration used by the optimizer and checkpoints."""
        return [(name, getattr(self, name)) for name in _TENSOR_FIELDS]

    def n_parameters(self) -> int:
        return sum(t.size for _, t in self.named_tensors())

    def config(self) -> NetConfig:
        return NetConfig(
            channels=self.pillar_w.shape[1],
            stage2_channels=self.conv1_w.shape[3],
            stage3_channels=self.conv2_w.shape[3],
            film_hidden=self.film3_w1.shape[1],
            head_channels=self.head_w1.shape[3],
            max_points_per_pillar=self.max_points_per_pillar,
        )

    def with_tensors(self, tensors: dict) -> "ModelParams":
        return replace(self, **tensors)

    def copy(self) -> "ModelParams":
        return replace(self, **{n: t.copy() for n, t in self.named_tensors()})

    def film3(self) -> FilmParams:
        return FilmParams(self.film3_w1, self.film3_b1, self.film3_w2, self.film3_b2)

    def film4(self) -> FilmParams:
        return FilmParams(self.film4_w1, self.film4_b1, self.film4_w2, self.film4_b2)

    @classmethod
    def from_named(cls, tensors: dict, max_points_per_pillar: int = 32) -> "ModelParams":
        missing = [n for n in _TENSOR_FIELDS if n not in tensors]
        if missing:
            raise ValueError(f"missing model tensors: {missing}")
        return cls(**{n: np.asarray(tensors[n], dtype=np.float64) for n in _TENSOR_FIELDS},
                   max_points_per_pillar=max_points_per_pillar)


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


def init_params(cfg: NetConfig, seed: int) -> ModelParams:
    """Fan-in scaled uniform init for every tensor, biases included.

    Nonzero biases keep pre-activations off the exact ReLU corner in empty
    BEV regions (a zero pseudo-image would otherwise pin them at 0). The
    FiLM gamma bias is offset by +1 so modulation starts near identity.
    """
    rng = np.random.default_rng(seed)
    c, c2, c3 = cfg.channels, cfg.stage2_channels, cfg.stage3_channels
    hid, ch = cfg.film_hidden, cfg.head_channels
    film3_b2 = _uniform(rng, hid, 2 * c2)
    film3_b2[:c2] += 1.0
    film4_b2 = _uniform(rng, hid, 2 * c3)
    film4_b2[:c3] += 1.0
    return ModelParams(
        pillar_w=_uniform(rng, POINT_FEATURE_DIM, (POINT_FEATURE_DIM, c)),
        pillar_b=_uniform(rng, POINT_FEATURE_DIM, c),
        conv1_w=_uniform(rng, 9 * c, (3, 3, c, c2)),
        conv1_b=_uniform(rng, 9 * c, c2),
        conv2_w=_uniform(rng, 9 * c2, (3, 3, c2, c3)),
        conv2_b=_uniform(rng, 9 * c2, c3),
        film3_w1=_uniform(rng, EMBED_DIM, (EMBED_DIM, hid)),
        film3_b1=_uniform(rng, EMBED_DIM, hid),
        film3_w2=_uniform(rng, hid, (hid, 2 * c2)),
        film3_b2=film3_b2,
        film4_w1=_uniform(rng, EMBED_DIM, (EMBED_DIM, hid)),
        film4_b1=_uniform(rng, EMBED_DIM, hid),
        film4_w2=_uniform(rng, hid, (hid, 2 * c3)),
        film4_b2=film4_b2,
        head_w1=_uniform(rng, 9 * (c2 + c3), (3, 3, c2 + c3, ch)),
        head_b1=_uniform(rng, 9 * (c2 + c3), ch),
        head_w2=_uniform(rng, ch, (1, 1, ch, 1)),
        head_b2=_uniform(rng, ch, 1),
        max_points_per_pillar=cfg.max_points_per_pillar,
    )


def forward_cached(
    params: ModelParams,
    cloud: PointCloud,
    image: Image,
    grid: GridSpec,
    film_identity: bool = False,
):
    """Full forward pass; returns ``(values (rows, cols), cache)``.

    ``film_identity`` bypasses the image conditioning (gamma = 1, beta = 0),
    used by the encoder-ablation mode.
    """
    pt = pillarize(cloud, grid, params.max_points_per_pillar)
    pseudo, pillar_cache = pillar_encode_cached(pt, params.pillar_w, params.pillar_b, grid)

    z1, conv1_cache = conv2d_forward(pseudo.data, params.conv1_w, params.conv1_b, stride=2, pad=1)
    s3 = np.maximum(z1, 0.0)
    z2, conv2_cache = conv2d_forward(s3, params.conv2_w, params.conv2_b, stride=2, pad=1)
    s4 = np.maximum(z2, 0.0)

    if film_identity:
        m3, m4 = s3, s4
        emb = None
        f3_cache = f4_cache = None
        gamma3 = gamma4 = None
    else:
        emb = embed_image(image)
        gamma3, beta3, f3_cache = film_gamma_beta(emb, params.film3())
        gamma4, beta4, f4_cache = film_gamma_beta(emb, params.film4())
        m3 = gamma3[None, None, :] * s3 + beta3[None, None, :]
        m4 = gamma4[None, None, :] * s4 + beta4[None, None, :]

    u4 = resize_bilinear(m4, m3.shape[0], m3.shape[1])
    fused = np.concatenate([m3, u4], axis=2)
    zh, head1_cache = conv2d_forward(fused, params.head_w1, params.head_b1, stride=1, pad=1)
    h = np.maximum(zh, 0.0)
    logits, head2_cache = conv2d_forward(h, params.head_w2, params.head_b2, stride=1, pad=0)
    p = sigmoid(logits[:, :, 0])
    values = resize_bilinear(p, grid.rows, grid.cols)

    cache = {
        "grid": grid,
        "pillar_cache": pillar_cache,
        "conv1_cache": conv1_cache,
        "conv2_cache": conv2_cache,
        "z1_pos": z1 > 0.0,
        "z2_pos": z2 > 0.0,
        "s3": s3,
        "s4": s4,
        "film_identity": film_identity,
        "f3_cache": f3_cache,
        "f4_cache": f4_cache,
        "gamma3": gamma3,
        "gamma4": gamma4,
        "m3_shape": m3.shape,
        "m4_shape": m4.shape,
        "head1_cache": head1_cache,
        "head2_cache": head2_cache,
        "zh_pos": zh > 0.0,
        "p": p,
    }
    return values, cache


def forward(
    params: ModelParams,
    cloud: PointCloud,
    image: Image,
    grid: GridSpec,
    film_identity: bool = False,
) -> DenseCostmap:
    """Predict a costmap on ``grid``; every cell is marked valid, values in (0, 1)."""
    values, _ = forward_cached(params, cloud, image, grid, film_identity)
    return DenseCostmap(grid, values, np.ones(values.shape, dtype=bool))


def backward(params: ModelParams, cache, d_values: np.ndarray) -> dict:
    """Backprop ``dL/d(values)`` to every parameter tensor; returns name -> grad."""
    p = cache["p"]
    dp = resize_bilinear_backward(d_values, p.shape[0], p.shape[1])
    dlogits = (dp * p * (1.0 - p))[:, :, None]
    dh, dhead_w2, dhead_b2 = conv2d_backward(cache["head2_cache"], dlogits)
    dzh = dh * cache["zh_pos"]
    dfused, dhead_w1, dhead_b1 = conv2d_backward(cache["head1_cache"], dzh)

    c2 = cache["m3_shape"][2]
    dm3 = dfused[:, :, :c2]
    du4 = dfused[:, :, c2:]
    dm4 = resize_bilinear_backward(du4, cache["m4_shape"][0], cache["m4_shape"][1])

    grads = {name: np.zeros_like(t) for name, t in params.named_tensors()}
    grads["head_w1"] = dhead_w1
    grads["head_b1"] = dhead_b1
    grads["head_w2"] = dhead_w2
    grads["head_b2"] = dhead_b2

    if cache["film_identity"]:
        ds3 = dm3
        ds4 = dm4
    else:
        ds3, dw1, db1, dw2, db2 = film_backward(
            cache["f3_cache"], cache["s3"], cache["gamma3"], dm3
        )
        grads["film3_w1"], grads["film3_b1"] = dw1, db1
        grads["film3_w2"], grads["film3_b2"] = dw2, db2
        ds4, dw1, db1, dw2, db2 = film_backward(
            cache["f4_cache"], cache["s4"], cache["gamma4"], dm4
        )
        grads["film4_w1"], grads["film4_b1"] = dw1, db1
        grads["film4_w2"], grads["film4_b2"] = dw2, db2

    dz2 = ds4 * cache["z2_pos"]
    ds3_more, dconv2_w, dconv2_b = conv2d_backward(cache["conv2_cache"], dz2)
    grads["conv2_w"], grads["conv2_b"] = dconv2_w, dconv2_b
    dz1 = (ds3 + ds3_more) * cache["z1_pos"]
    dpseudo, dconv1_w, dconv1_b = conv2d_backward(cache["conv1_cache"], dz1)
    grads["conv1_w"], grads["conv1_b"] = dconv1_w, dconv1_b
    grads["pillar_w"], grads["pillar_b"] = pillar_encode_backward(cache["pillar_cache"], dpseudo)
    return grads


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _huber_value_grad(pred: np.ndarray, target: np.ndarray, valid: np.ndarray, delta: float):
    n = int(np.count_nonzero(valid))
    if n == 0:
        raise ValueError("no valid target cells for the regression loss")
    err = np.where(valid, pred - target, 0.0)
    abs_err = np.abs(err)
    quad = abs_err < delta
    cell = np.where(quad, 0.5 * err**2, delta * (abs_err - 0.5 * delta))
    value = float(cell[valid].sum() / n)
    grad = np.where(quad, err, delta * np.sign(err)) * valid / n
    return value, grad


def huber_loss(pred: DenseCostmap, target: DenseCostmap, delta: float) -> float:
    """Mean robust regression loss over valid target cells.

    Quadratic ``0.5 e^2`` below the threshold, linear ``delta (|e| - delta/2)``
    beyond it; invalid cells contribute nothing.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if pred.values.shape != target.values.shape:
        raise ValueError("prediction and target grids differ")
    value, _ = _huber_value_grad(pred.values, target.values, target.valid, delta)
    return value


def _smoothness_value_grad(pred: np.ndarray, lam: float):
    h, w = pred.shape
    value = 0.0
    grad = np.zeros_like(pred)
    if h >= 2:
        dv = pred[1:, :] - pred[:-1, :]
        norm = (h - 1) * w
        value += float(np.abs(dv).sum() / norm)
        s = np.sign(dv) / norm
        grad[1:, :] += s
        grad[:-1, :] -= s
    if w >= 2:
        dh = pred[:, 1:] - pred[:, :-1]
        norm = h * (w - 1)
        value += float(np.abs(dh).sum() / norm)
        s = np.sign(dh) / norm
        grad[:, 1:] += s
        grad[:, :-1] -= s
    return lam * value, lam * grad


def smoothness_loss(pred: DenseCostmap, lam: float) -> float:
    """Mean absolute forward difference along each axis, scaled by ``lam``.

    Vertical differences are averaged over (H-1) W terms and horizontal over
    H (W-1); a degenerate single-row or single-column map contributes zero in
    the missing direction.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    value, _ = _smoothness_value_grad(pred.values, lam)
    return value


def sample_loss(params: ModelParams, sample: Sample, delta: float, lam: float,
                film_identity: bool = False) -> float:
    """Huber + smoothness of one sample (no gradients); used by the FD oracle."""
    values, _ = forward_cached(
        params, sample.cloud, sample.image, sample.target.grid, film_identity
    )
    hub, _ = _huber_value_grad(values, sample.target.values, sample.target.valid, delta)
    smo, _ = _smoothness_value_grad(values, lam)
    return hub + smo


def loss_and_grads(params: ModelParams, batch, delta: float, lam: float,
                   film_identity: bool = False):
    """Mean batch loss and exact gradients for every parameter tensor.

    Returns ``(total, huber_part, smooth_part, grads)`` where the parts are
    batch means and ``grads`` maps tensor name to the gradient array.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("batch is empty")
    total_grads = {name: np.zeros_like(t) for name, t in params.named_tensors()}
    hub_sum = 0.0
    smo_sum = 0.0
    inv_n = 1.0 / len(batch)
    for sample in batch:
        values, cache = forward_cached(
            params, sample.cloud, sample.image, sample.target.grid, film_identity
        )
        hub, dhub = _huber_value_grad(values, sample.target.values, sample.target.valid, delta)
        smo, dsmo = _smoothness_value_grad(values, lam)
        hub_sum += hub
        smo_sum += smo
        grads = backward(params, cache, (dhub + dsmo) * inv_n)
        for name in total_grads:
            total_grads[name] += grads[name]
    hub_mean = hub_sum * inv_n
    smo_mean = smo_sum * inv_n
    return hub_mean + smo_mean, hub_mean, smo_mean, total_grads

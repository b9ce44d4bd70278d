"""Latent neural process: encoder/aggregator/decoder, losses, training,
context-selection strategies, and personalized prediction.

The network is small enough that the forward and backward passes are
written directly in numpy; gradients are exact and verified against
central finite differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureMatrix, N_FEATURES

HIDDEN = 30
LATENT = 15
ENC_IN = N_FEATURES + 1  # feature vector concatenated with the 0/1 label
DEC_IN = N_FEATURES + LATENT
DROPOUT_RATE = 0.2
LOG_VAR_CLAMP = 10.0
PROB_CLIP = 1e-7

TEST_CONTEXT_SIZE = 6
STRATEGIES = ("baseline", "random", "tasks")
TASK_SEGMENTS = ("baseline", "city1", "highway1")

PARAM_SHAPES: dict[str, tuple[int, ...]] = {
    "enc_w1": (ENC_IN, HIDDEN), "enc_b1": (HIDDEN,),
    "enc_w2": (HIDDEN, HIDDEN), "enc_b2": (HIDDEN,),
    "enc_w3": (HIDDEN, HIDDEN), "enc_b3": (HIDDEN,),
    "enc_mu_w": (HIDDEN, LATENT), "enc_mu_b": (LATENT,),
    "enc_lv_w": (HIDDEN, LATENT), "enc_lv_b": (LATENT,),
    "dec_w1": (DEC_IN, HIDDEN), "dec_b1": (HIDDEN,),
    "dec_w2": (HIDDEN, HIDDEN), "dec_b2": (HIDDEN,),
    "dec_w3": (HIDDEN, HIDDEN), "dec_b3": (HIDDEN,),
    "dec_out_w": (HIDDEN, 1), "dec_out_b": (1,),
}


@dataclass
class LatentGaussian:
    mu: np.ndarray
    log_var: np.ndarray


@dataclass
class ContextSet:
    x: np.ndarray  # (n_c, 21), unscaled features
    y: np.ndarray  # (n_c,), 0/1

    def __post_init__(self):
        if len(self.x) < 1:
            raise ValueError("context set must be nonempty")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("context set contains non-finite values")


@dataclass
class NpParams:
    weights: dict[str, np.ndarray]
    seed: int | None = None
    history: list[float] = field(default_factory=list)  # per-epoch mean loss


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    context_min: int = 5
    context_max: int = 10
    strategy: str = "random"
    seed: int = 0
    # the KL regularizer ramps in linearly over this many epochs: at full
    # strength from the start it collapses the latent before the decoder
    # has picked up any credit for using it (latent posterior collapse)
    kl_warmup_epochs: int = 25
    # cosine learning-rate decay to this fraction of the base rate; damps
    # the late-training oscillation of the small full-batch Adam steps
    lr_decay_to: float = 0.1
    # ambiguity switches: which distribution the training z is drawn from,
    # and the direction of the KL regularizer
    z_source_train: str = "target"  # "target" | "context"
    kl_direction: str = "target_context"  # "target_context" | "context_target"


def init_params(seed: int, feature_scales: np.ndarray | None = None) -> NpParams:
    """Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    The inputs are deliberately unscaled (raw feature units), so three
    adjustments keep every pathway trainable from the first step:

    * ``feature_scales`` (typical magnitude per feature, computed from the
      training set) divides the first-layer rows of both networks, folding
      input normalization into the weights. Without it the label column
      and small-magnitude features are numerically invisible and the wide
      columns saturate everything downstream.
    * the log-var head and the decoder readout start at zero, so the latent
      noise scale starts at one instead of pinning the clamp, and no target
      starts clip-saturated with a silenced gradient.
    * the mu head keeps its fan-in draw: the latent then carries an
      informative projection of the aggregated context from the start,
      which is what lets the decoder's latent pathway pick up credit.
    """
    rng = np.random.default_rng(seed)
    weights: dict[str, np.ndarray] = {}
    fan_in = 1
    for name, shape in PARAM_SHAPES.items():
        if len(shape) == 2:
            fan_in = shape[0]
        if name.startswith(("enc_lv", "dec_out")):
            weights[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            weights[name] = rng.uniform(-bound, bound, size=shape)
    if feature_scales is not None:
        col = np.asarray(feature_scales, dtype=np.float64)
        if col.shape != (N_FEATURES,) or np.any(col <= 0) or not np.all(np.isfinite(col)):
            raise ValueError("feature_scales must be positive and finite per feature")
        enc_scale = np.concatenate([col, [0.5]])  # the 0/1 label column
        dec_scale = np.concatenate([col, np.ones(LATENT)])  # z is already O(1)
        weights["enc_w1"] /= enc_scale[:, None]
        weights["dec_w1"] /= dec_scale[:, None]
    return NpParams(weights, seed=seed)


def feature_scales_of(matrices: list[FeatureMatrix]) -> np.ndarray:
    """Per-feature magnitude scale over the training participants."""
    X = np.vstack([fm.X() for fm in matrices])
    return np.maximum(np.mean(np.abs(X), axis=0), 1e-6)


def zero_params() -> NpParams:
    return NpParams({k: np.zeros(s) for k, s in PARAM_SHAPES.items()})


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _encode_forward(w: dict, x: np.ndarray, y: np.ndarray) -> dict:
    inp = np.concatenate([x, np.asarray(y, dtype=np.float64)[:, None]], axis=1)
    a1 = inp @ w["enc_w1"] + w["enc_b1"]
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ w["enc_w2"] + w["enc_b2"]
    h2 = np.maximum(a2, 0.0)
    a3 = h2 @ w["enc_w3"] + w["enc_b3"]
    h3 = np.maximum(a3, 0.0)
    rbar = h3.mean(axis=0)
    mu = rbar @ w["enc_mu_w"] + w["enc_mu_b"]
    lv_raw = rbar @ w["enc_lv_w"] + w["enc_lv_b"]
    lv = np.clip(lv_raw, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
    return {"inp": inp, "a1": a1, "h1": h1, "a2": a2, "h2": h2, "a3": a3, "h3": h3,
            "rbar": rbar, "mu": mu, "lv_raw": lv_raw, "lv": lv}


def encode(params: NpParams, x: np.ndarray, y: np.ndarray) -> LatentGaussian:
    """Map labeled pairs to a diagonal Gaussian over the latent code.

    Each (x, y) pair runs through the encoder trunk; the per-pair
    representations are mean-aggregated before the mu / log-var heads, so
    the output is invariant to pair order.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("encode needs a nonempty (n, features) array")
    f = _encode_forward(params.weights, x, y)
    return LatentGaussian(f["mu"], f["lv"])


def encode_context(params: NpParams, context: ContextSet) -> LatentGaussian:
    return encode(params, context.x, context.y)


def sample_z(dist: LatentGaussian, rng: np.random.Generator) -> np.ndarray:
    """Reparameterized draw z = mu + exp(log_var / 2) * eps."""
    eps = rng.standard_normal(dist.mu.shape)
    return dist.mu + np.exp(dist.log_var / 2.0) * eps


def _decode_forward(w: dict, z: np.ndarray, x_t: np.ndarray, masks: list | None) -> dict:
    m = len(x_t)
    inp = np.concatenate([x_t, np.tile(z, (m, 1))], axis=1)
    keep = 1.0 - DROPOUT_RATE
    a1 = inp @ w["dec_w1"] + w["dec_b1"]
    h1 = np.maximum(a1, 0.0)
    if masks is not None:
        h1 = h1 * masks[0] / keep
    a2 = h1 @ w["dec_w2"] + w["dec_b2"]
    h2 = np.maximum(a2, 0.0)
    if masks is not None:
        h2 = h2 * masks[1] / keep
    a3 = h2 @ w["dec_w3"] + w["dec_b3"]
    h3 = np.maximum(a3, 0.0)
    if masks is not None:
        h3 = h3 * masks[2] / keep
    u = (h3 @ w["dec_out_w"] + w["dec_out_b"]).ravel()
    p = _sigmoid(u)
    return {"inp": inp, "a1": a1, "h1": h1, "a2": a2, "h2": h2, "a3": a3, "h3": h3,
            "u": u, "p": p}


def decode(
    params: NpParams,
    z: np.ndarray,
    x_t: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Predict per-target probabilities from a latent code.

    Each target is concatenated with z; dropout is active on the decoder
    hidden layers only in train mode.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    masks = _dropout_masks(rng, len(x_t)) if train_mode else None
    return _decode_forward(params.weights, z, x_t, masks)["p"]


def _dropout_masks(rng: np.random.Generator | None, m: int) -> list[np.ndarray]:
    if rng is None:
        raise ValueError("train-mode decode needs an rng for dropout")
    return [(rng.random((m, HIDDEN)) >= DROPOUT_RATE).astype(np.float64) for _ in range(3)]


def kl_diag_gauss(p: LatentGaussian, q: LatentGaussian) -> float:
    """KL(p || q) between diagonal Gaussians, summed over dimensions."""
    var_p = np.exp(p.log_var)
    var_q = np.exp(q.log_var)
    term = 0.5 * (q.log_var - p.log_var) + (var_p + (p.mu - q.mu) ** 2) / (2.0 * var_q) - 0.5
    return float(term.sum())


# ---------------------------------------------------------------------------
# loss and exact gradients
# ---------------------------------------------------------------------------


def _encode_backward(w: dict, f: dict, dmu: np.ndarray, dlv: np.ndarray, grads: dict) -> None:
    dlv_raw = dlv * (np.abs(f["lv_raw"]) < LOG_VAR_CLAMP)
    grads["enc_mu_w"] += np.outer(f["rbar"], dmu)
    grads["enc_mu_b"] += dmu
    grads["enc_lv_w"] += np.outer(f["rbar"], dlv_raw)
    grads["enc_lv_b"] += dlv_raw
    drbar = w["enc_mu_w"] @ dmu + w["enc_lv_w"] @ dlv_raw
    n = len(f["h3"])
    dh3 = np.tile(drbar / n, (n, 1))
    da3 = dh3 * (f["a3"] > 0)
    grads["enc_w3"] += f["h2"].T @ da3
    grads["enc_b3"] += da3.sum(axis=0)
    dh2 = da3 @ w["enc_w3"].T
    da2 = dh2 * (f["a2"] > 0)
    grads["enc_w2"] += f["h1"].T @ da2
    grads["enc_b2"] += da2.sum(axis=0)
    dh1 = da2 @ w["enc_w2"].T
    da1 = dh1 * (f["a1"] > 0)
    grads["enc_w1"] += f["inp"].T @ da1
    grads["enc_b1"] += da1.sum(axis=0)


def _decode_backward(w: dict, f: dict, du: np.ndarray, masks: list | None, grads: dict) -> np.ndarray:
    keep = 1.0 - DROPOUT_RATE
    grads["dec_out_w"] += f["h3"].T @ du[:, None]
    grads["dec_out_b"] += np.array([du.sum()])
    dh3 = du[:, None] @ w["dec_out_w"].T
    if masks is not None:
        dh3 = dh3 * masks[2] / keep
    da3 = dh3 * (f["a3"] > 0)
    grads["dec_w3"] += f["h2"].T @ da3
    grads["dec_b3"] += da3.sum(axis=0)
    dh2 = da3 @ w["dec_w3"].T
    if masks is not None:
        dh2 = dh2 * masks[1] / keep
    da2 = dh2 * (f["a2"] > 0)
    grads["dec_w2"] += f["h1"].T @ da2
    grads["dec_b2"] += da2.sum(axis=0)
    dh1 = da2 @ w["dec_w2"].T
    if masks is not None:
        dh1 = dh1 * masks[0] / keep
    da1 = dh1 * (f["a1"] > 0)
    grads["dec_w1"] += f["inp"].T @ da1
    grads["dec_b1"] += da1.sum(axis=0)
    dinp = da1 @ w["dec_w1"].T
    return dinp[:, N_FEATURES:].sum(axis=0)  # gradient w.r.t. the shared z


def np_loss_and_grad(
    params: NpParams,
    context_x: np.ndarray,
    context_y: np.ndarray,
    target_x: np.ndarray,
    target_y: np.ndarray,
    eps: np.ndarray,
    dropout_masks: list | None = None,
    z_source: str = "target",
    kl_direction: str = "target_context",
    kl_weight: float = 1.0,
) -> tuple[float, dict[str, np.ndarray], dict[str, float]]:
    """Training loss (mean BCE + KL) and exact parameter gradients.

    ``eps`` is the fixed standard-normal draw for the reparameterized z;
    passing ``dropout_masks=None`` disables dropout (used by the
    finite-difference gradient checks). ``kl_weight`` scales the KL term
    in both the returned loss and the gradients (warm-up); the unweighted
    terms are reported separately.
    """
    w = params.weights
    target_y = np.asarray(target_y, dtype=np.float64)

    fc = _encode_forward(w, np.asarray(context_x, dtype=np.float64), context_y)
    ft = _encode_forward(w, np.asarray(target_x, dtype=np.float64), target_y)
    z_enc = ft if z_source == "target" else fc
    sigma = np.exp(z_enc["lv"] / 2.0)
    z = z_enc["mu"] + sigma * eps

    fd = _decode_forward(w, z, np.asarray(target_x, dtype=np.float64), dropout_masks)
    p = fd["p"]
    pc = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    m = len(target_y)
    bce = float(-(target_y * np.log(pc) + (1 - target_y) * np.log(1 - pc)).mean())

    if kl_direction == "target_context":
        post, prior = ft, fc
    else:
        post, prior = fc, ft
    var_post = np.exp(post["lv"])
    var_prior = np.exp(prior["lv"])
    delta = post["mu"] - prior["mu"]
    kl = float((0.5 * (prior["lv"] - post["lv"]) + (var_post + delta**2) / (2 * var_prior) - 0.5).sum())
    loss = bce + kl_weight * kl

    grads = {k: np.zeros_like(v) for k, v in w.items()}

    # BCE -> logits; the clip is flat, so clipped targets get zero gradient
    inside = (p > PROB_CLIP) & (p < 1.0 - PROB_CLIP)
    du = np.where(inside, (pc - target_y) / m, 0.0)
    dz = _decode_backward(w, fd, du, dropout_masks, grads)

    # z = mu + exp(lv/2) * eps
    dmu_z = dz
    dlv_z = dz * eps * 0.5 * sigma

    # KL terms
    dmu_post = kl_weight * delta / var_prior
    dmu_prior = -kl_weight * delta / var_prior
    dlv_post = kl_weight * (-0.5 + var_post / (2 * var_prior))
    dlv_prior = kl_weight * (0.5 - (var_post + delta**2) / (2 * var_prior))

    if kl_direction == "target_context":
        dmu_t, dlv_t, dmu_c, dlv_c = dmu_post, dlv_post, dmu_prior, dlv_prior
    else:
        dmu_t, dlv_t, dmu_c, dlv_c = dmu_prior, dlv_prior, dmu_post, dlv_post
    if z_source == "target":
        dmu_t = dmu_t + dmu_z
        dlv_t = dlv_t + dlv_z
    else:
        dmu_c = dmu_c + dmu_z
        dlv_c = dlv_c + dlv_z

    _encode_backward(w, ft, dmu_t, dlv_t, grads)
    _encode_backward(w, fc, dmu_c, dlv_c, grads)
    return loss, grads, {"bce": bce, "kl": kl}


def np_loss(
    params: NpParams,
    context: ContextSet,
    targets: FeatureMatrix,
    rng: np.random.Generator,
    use_dropout: bool = True,
    z_source: str = "target",
    kl_direction: str = "target_context",
) -> float:
    """Single-draw training loss for one participant's context/target split."""
    x_t, y_t = targets.X(), targets.y()
    eps = rng.standard_normal(LATENT)
    masks = _dropout_masks(rng, len(x_t)) if use_dropout else None
    loss, _, _ = np_loss_and_grad(
        params, context.x, context.y, x_t, y_t, eps, masks, z_source, kl_direction
    )
    return loss


# ---------------------------------------------------------------------------
# context selection
# ---------------------------------------------------------------------------


def select_context(
    fm: FeatureMatrix, strategy: str, n_c: int, rng: np.random.Generator
) -> tuple[ContextSet, set[float]]:
    """Choose context windows for one participant per the named strategy.

    Returns the context set and the window start times excluded from that
    participant's target set: every window of the sampled task segment(s)
    for the baseline and tasks strategies, or exactly the sampled windows
    for the random strategy.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    rows = sorted(fm.rows, key=lambda r: r.window_start_s)
    if strategy == "baseline":
        cand = [r for r in rows if r.source_label == "baseline"]
        chosen = _sample(cand, n_c, rng, "baseline windows")
        excluded = {r.window_start_s for r in cand}
    elif strategy == "random":
        chosen = _sample(rows, n_c, rng, "windows")
        excluded = {r.window_start_s for r in chosen}
    else:  # tasks
        if n_c % 3 != 0:
            raise ValueError("tasks strategy needs a context size divisible by 3")
        chosen = []
        excluded = set()
        for seg in TASK_SEGMENTS:
            cand = [r for r in rows if r.source_label == seg]
            if not cand:
                raise ValueError(f"tasks strategy needs a {seg} segment")
            chosen.extend(_sample(cand, n_c // 3, rng, f"{seg} windows"))
            excluded |= {r.window_start_s for r in cand}
    x = np.stack([r.features for r in chosen])
    y = np.array([r.label for r in chosen], dtype=np.float64)
    return ContextSet(x, y), excluded


def _sample(rows: list, n: int, rng: np.random.Generator, what: str) -> list:
    if len(rows) < n:
        raise ValueError(f"need {n} {what}, have {len(rows)}")
    idx = rng.choice(len(rows), size=n, replace=False)
    return [rows[i] for i in sorted(idx)]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class AdamState:
    def __init__(self, weights: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.items()}

    def step(self, weights: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k in weights:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            weights[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


def _draw_context_size(cfg: TrainConfig, rng: np.random.Generator) -> int:
    if cfg.strategy == "tasks":
        sizes = [s for s in range(cfg.context_min, cfg.context_max + 1) if s % 3 == 0]
        if not sizes:
            raise ValueError("no multiple of 3 in the context-size range")
        return int(rng.choice(sizes))
    return int(rng.integers(cfg.context_min, cfg.context_max + 1))


def train_np(train_matrices: list[FeatureMatrix], cfg: TrainConfig) -> NpParams:
    """Train the neural process over the training participants.

    Per epoch the participants are visited in seeded shuffled order; each
    visit draws a fresh context (size uniform in the configured range) via
    the configured strategy, uses all of that participant's windows as
    targets, and applies one Adam step.
    """
    if len(train_matrices) < 2:
        raise ValueError("need >= 2 training participants")
    for fm in train_matrices:
        if len(fm) == 0:
            raise ValueError("empty participant feature matrix")

    params = init_params(cfg.seed, feature_scales_of(train_matrices))
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7261696E]))
    adam = AdamState(params.weights, cfg.learning_rate)

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_matrices))
        kl_weight = min(1.0, (epoch + 1) / cfg.kl_warmup_epochs) if cfg.kl_warmup_epochs else 1.0
        frac = epoch / max(cfg.epochs - 1, 1)
        adam.lr = cfg.learning_rate * (
            cfg.lr_decay_to + (1.0 - cfg.lr_decay_to) * 0.5 * (1.0 + np.cos(np.pi * frac))
        )
        epoch_losses = []
        for idx in order:
            fm = train_matrices[idx]
            n_c = _draw_context_size(cfg, rng)
            context, _ = select_context(fm, cfg.strategy, n_c, rng)
            x_t, y_t = fm.X(), fm.y()
            eps = rng.standard_normal(LATENT)
            masks = _dropout_masks(rng, len(x_t))
            loss, grads, parts = np_loss_and_grad(
                params, context.x, context.y, x_t, y_t, eps, masks,
                cfg.z_source_train, cfg.kl_direction, kl_weight,
            )
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, participant index {int(idx)}: {loss}"
                )
            adam.step(params.weights, grads)
            epoch_losses.append(parts["bce"] + parts["kl"])
        history.append(float(np.mean(epoch_losses)))
    params.history = history
    return params


def np_predict(params: NpParams, context: ContextSet, x_t: np.ndarray) -> np.ndarray:
    """Deterministic test-time prediction: z is the context-posterior mean."""
    z = encode_context(params, context).mu
    return decode(params, z, x_t, train_mode=False)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def np_params_to_dict(params: NpParams) -> dict:
    return {
        "kind": "neural_process",
        "hidden": HIDDEN,
        "latent": LATENT,
        "dropout_rate": DROPOUT_RATE,
        "seed": params.seed,
        "weights": {k: v.tolist() for k, v in params.weights.items()},
    }


def np_params_from_dict(d: dict) -> NpParams:
    if d.get("kind") != "neural_process":
        raise ValueError(f"not a neural process model: {d.get('kind')!r}")
    weights = {}
    for name, shape in PARAM_SHAPES.items():
        arr = np.array(d["weights"][name], dtype=np.float64)
        if arr.shape != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
        weights[name] = arr
    return NpParams(weights, seed=d.get("seed"))


def save_np_params(params: NpParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(np_params_to_dict(params)) + "\n")


def load_np_params(path: str | Path) -> NpParams:
    return np_params_from_dict(json.loads(Path(path).read_text()))

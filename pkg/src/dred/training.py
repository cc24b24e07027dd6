"""Rate-distortion training of the quantizer tables.

The transform stays frozen, so the corpus is encoded once and training
only moves the per-lambda quantizer scales, dead-zone widths and pmf
parameters. Each step picks one of the 16 lambda values at random and
evaluates two paths on a batch of decode slices:

* soft: soft dead zone plus uniform noise, rate from the generalized
  discrete entropy with the soft decay ``r_s``;
* hard: rounding with a straight-through gradient, distortion only.

The loss is ``(w * D_soft + (1 - w) * D_hard) / sqrt(lam) + sqrt(lam) * R``.
The hard-path pmf parameters ``(r_h, theta)`` are fitted separately by
minimizing the code length of the hard symbols.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgument
from .features import (FEATURE_DIM, N_CEPSTRUM, PITCH_INDEX, VOICING_INDEX, FeatureSequence,
                       gen_synthetic_features)
from .laplace import (EPSILON, R_DEGENERATE, rate_bits, rate_bits_grad_r, round_half_away,
                      soft_deadzone, soft_deadzone_grad, soft_deadzone_grad_delta, theta_implicit)
from .latent import (N_LAMBDA, PAIR_DIM, QuantizerParams, QuantizerTable, Transform, dequantize,
                     quantize_batch, reference_transform)

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
PITCH_WEIGHT = 10.0
R_MIN, R_MAX = 1e-7, 1.0 - 1e-4


def default_lambdas(lo: float = 3e-3, hi: float = 0.3, n: int = N_LAMBDA) -> list[float]:
    return np.geomspace(lo, hi, n).tolist()


@dataclass
class TrainConfig:
    lambdas: list[float] = field(default_factory=default_lambdas)
    mix: float = 0.5
    steps: int = 12000
    batch_size: int = 8
    # learning rates per parameter group; q is trained in the log domain,
    # both r parameters in the logit domain
    lr_log_q: float = 0.15
    lr_delta: float = 0.05
    lr_r: float = 0.5
    lr_theta: float = 0.05
    seq_frames: int = 400
    slices_per_seq: int = 4
    lengthen: bool = True
    holdout_fraction: float = 0.2
    seed: int = 0
    transform_seed: int = 0

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        if lam.shape != (N_LAMBDA,):
            raise InvalidArgument(f"need {N_LAMBDA} lambda values, got {lam.shape}")
        if np.any(lam <= 0) or np.any(np.diff(lam) <= 0):
            raise InvalidArgument("lambda values must be positive and strictly increasing")
        if not 0.0 <= self.mix <= 1.0:
            raise InvalidArgument("mix must lie in [0, 1]")


@dataclass
class RDPoint:
    lambda_index: int
    mean_rate_bits: float
    mean_distortion: float
    nondegenerate_dims: int
    is_rate_bits: float = 0.0


# --------------------------------------------------------------------------
# distortion and loss


def frame_distortion(x_hat: np.ndarray, x: np.ndarray):
    """Per-frame distortion and its gradient with respect to ``x_hat``.

    Both arrays have shape ``(..., 20)``. Pitch error is weighted by
    ``10 * v**2`` using the reference voicing.
    """
    err = x_hat - x
    w_p = PITCH_WEIGHT * x[..., VOICING_INDEX] ** 2
    d = (err[..., :N_CEPSTRUM] ** 2).sum(-1) + w_p * np.abs(err[..., PITCH_INDEX]) + err[..., VOICING_INDEX] ** 2
    grad = 2.0 * err
    grad[..., PITCH_INDEX] = w_p * np.sign(err[..., PITCH_INDEX])
    return d, grad


def distortion(x: FeatureSequence, x_hat: FeatureSequence) -> float:
    """Mean per-frame distortion between two feature sequences."""
    a = np.asarray(getattr(x, "frames", x), dtype=float)
    b = np.asarray(getattr(x_hat, "frames", x_hat), dtype=float)
    if a.shape != b.shape:
        raise InvalidArgument(f"length mismatch: {a.shape} vs {b.shape}")
    return float(frame_distortion(b, a)[0].mean())


def rd_loss(dist_soft: float, dist_hard: float, rates_soft, lam: float, mix: float = 0.5) -> float:
    """Lambda-weighted RD loss: mixed distortion over sqrt(lam) plus sqrt(lam) times total rate."""
    if lam <= 0:
        raise InvalidArgument(f"lambda must be positive, got {lam}")
    if not 0.0 <= mix <= 1.0:
        raise InvalidArgument("mix must lie in [0, 1]")
    root = math.sqrt(lam)
    return (mix * dist_soft + (1.0 - mix) * dist_hard) / root + root * float(np.sum(rates_soft))


# --------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    """Decode slices flattened into rows, newest latent of each slice first.

    ``newest`` indexes the first row of every slice; ``slice_len`` is the
    number of latents in that slice.
    """

    z: np.ndarray  # (N, M)
    target: np.ndarray  # (N, 2 * stride, 20)
    state: np.ndarray  # (n_slices, N_is)
    newest: np.ndarray  # (n_slices,)
    slice_len: np.ndarray  # (n_slices,)


class EncodedCorpus:
    """A corpus encoded once as one continuous stream."""

    def __init__(self, sequences, transform: Transform):
        frames = np.concatenate([np.asarray(s.frames, dtype=float) for s in sequences])
        self.transform = transform
        self.z, self.s = transform.analyze(frames)
        self.target = transform.target_windows(frames)
        self.n_steps = self.z.shape[0]

    def batch(self, segments) -> Batch:
        """Build a batch from ``(start, end)`` step ranges, each decoded as one slice."""
        stride = self.transform.stride
        rows, newest, lens = [], [], []
        for a, b in segments:
            r = np.arange(b - 1, a - 1, -stride)
            newest.append(sum(len(x) for x in rows))
            lens.append(len(r))
            rows.append(r)
        rows = np.concatenate(rows)
        heads = np.array([b - 1 for _, b in segments])
        return Batch(self.z[rows], self.target[rows], self.s[heads], np.array(newest), np.array(lens))


def random_segments(rng, n_steps: int, chunk: int, n_chunks: int, n_slices: int):
    """Cut ``n_chunks`` random chunks into ``n_slices`` non-overlapping slices each."""
    chunk = min(chunk, n_steps)
    segs = []
    for _ in range(n_chunks):
        start = int(rng.integers(0, n_steps - chunk + 1))
        cuts = np.sort(rng.choice(np.arange(1, chunk), size=min(n_slices - 1, chunk - 1), replace=False))
        edges = np.concatenate([[0], cuts, [chunk]]) + start
        segs.extend(zip(edges[:-1].tolist(), edges[1:].tolist()))
    return segs


# --------------------------------------------------------------------------
# loss evaluation with analytic gradients


@dataclass
class RawParams:
    """Unconstrained parameters of one lambda index for one vector type."""

    log_q: np.ndarray
    delta: np.ndarray
    logit_rs: np.ndarray
    logit_rh: np.ndarray
    theta: np.ndarray

    @property
    def q(self):
        return np.exp(self.log_q)

    @property
    def r_soft(self):
        return np.clip(_sigmoid(self.logit_rs), R_MIN, R_MAX)

    @property
    def r_hard(self):
        return np.clip(_sigmoid(self.logit_rh), R_MIN, R_MAX)

    def copy(self):
        return RawParams(*(np.array(getattr(self, f)) for f in _RAW_FIELDS))


_RAW_FIELDS = ("log_q", "delta", "logit_rs", "logit_rh", "theta")


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    p = np.clip(p, R_MIN, R_MAX)
    return np.log(p) - np.log1p(-p)


class _Path:
    """Forward quantities of one vector type (latents or states) on one path."""

    def __init__(self, values, params: RawParams, noise):
        self.values = values
        self.q = params.q
        self.delta = params.delta
        self.y = values * self.q
        self.zeta = soft_deadzone(self.y, self.delta)
        self.dzeta = soft_deadzone_grad(self.y, self.delta)
        self.dzeta_delta = soft_deadzone_grad_delta(self.y, self.delta)
        self.noise = noise
        self.hard_sym = round_half_away(self.zeta)

    def soft(self):
        return (self.zeta + self.noise) / self.q

    def hard(self):
        return self.hard_sym / self.q

    def soft_grads(self, upstream):
        """Gradients of sum(upstream * soft) w.r.t. q, delta and the input values."""
        gq = upstream * (self.dzeta * self.values / self.q - (self.zeta + self.noise) / self.q**2)
        gd = upstream * self.dzeta_delta / self.q
        gz = upstream * self.dzeta
        return gq, gd, gz

    def hard_grads(self, upstream):
        # straight-through: rounding passes gradients unchanged
        gq = upstream * (self.dzeta * self.values / self.q - self.hard_sym / self.q**2)
        gd = upstream * self.dzeta_delta / self.q
        return gq, gd


def _decode_windows(transform: Transform, z: np.ndarray, state: np.ndarray, newest: np.ndarray):
    w = z @ transform.analysis
    pair = w[newest, -PAIR_DIM:]
    a = transform.is_weight
    w[newest, -PAIR_DIM:] = pair + a * (state - pair @ transform.is_axes.T) @ transform.is_axes
    return transform.denormalize(w.reshape(z.shape[0], transform.window_frames, FEATURE_DIM))


def _decode_backward(transform: Transform, grad_out: np.ndarray, newest: np.ndarray):
    """Gradients of the decoder output w.r.t. dequantized latents and states."""
    n = grad_out.shape[0]
    gw = (grad_out * transform.std).reshape(n, -1)
    a = transform.is_weight
    P = transform.is_axes
    g_pair = gw[newest, -PAIR_DIM:]
    g_state = a * g_pair @ P.T
    gw[newest, -PAIR_DIM:] = g_pair - a * (g_pair @ P.T) @ P
    return gw @ transform.analysis.T, g_state


def _rate_terms(path: _Path, r_soft, weights=None):
    """Soft rate (bits) and its gradients w.r.t. q, delta, r_s and the inputs."""
    abs_zeta = np.abs(path.zeta)
    bits = rate_bits(abs_zeta, r_soft)
    slope = -np.log2(np.maximum(r_soft, R_DEGENERATE)) * np.sign(path.zeta)
    w = 1.0 if weights is None else weights[:, None]
    gq = w * slope * path.dzeta * path.values
    gd = w * slope * path.dzeta_delta
    gr = w * rate_bits_grad_r(abs_zeta, r_soft)
    gz = w * slope * path.dzeta * path.q
    return (w * bits), gq, gd, gr, gz


def _code_length(sym, r, theta):
    """Bits of integer symbols under the discrete Laplace, with gradients w.r.t. r and theta."""
    mag = np.abs(sym)
    zero = mag == 0
    rt = r**theta
    lnr = np.log(r)
    bits = np.where(zero, -np.log2(np.maximum(1.0 - rt, 1e-300)),
                    -np.log2(0.5 * (1.0 - r)) - (mag + theta - 1.0) * np.log2(r))
    g_r = np.where(zero, theta * r ** (theta - 1.0) / np.maximum(1.0 - rt, 1e-300),
                   1.0 / (1.0 - r) - (mag + theta - 1.0) / r) / LN2
    g_t = np.where(zero, rt * lnr / np.maximum(1.0 - rt, 1e-300), -lnr) / LN2
    return bits, g_r, g_t


@dataclass
class LossResult:
    loss: float
    dist_soft: float
    dist_hard: float
    rate: float
    code_bits: float
    grads: dict


def evaluate_loss(transform: Transform, batch: Batch, lat: RawParams, st: RawParams, lam: float, mix: float,
                  noise_lat: np.ndarray, noise_st: np.ndarray, want_z_grad: bool = False) -> LossResult:
    """Loss and analytic gradients for one lambda value on one batch.

    Gradients are returned for the raw parameters (``log_q``, ``delta``,
    ``logit_rs``, ``logit_rh``, ``theta``) of latents (``lat_*``) and states
    (``st_*``); with ``want_z_grad`` the gradient of the soft loss
    w.r.t. the latent inputs is included as ``z``.
    """
    root = math.sqrt(lam)
    lp = _Path(batch.z, lat, noise_lat)
    sp = _Path(batch.state, st, noise_st)
    n_frames = batch.target.shape[0] * batch.target.shape[1]

    xs = _decode_windows(transform, lp.soft(), sp.soft(), batch.newest)
    ds_frame, gs = frame_distortion(xs, batch.target)
    xh = _decode_windows(transform, lp.hard(), sp.hard(), batch.newest)
    dh_frame, gh = frame_distortion(xh, batch.target)
    d_soft = ds_frame.sum() / n_frames
    d_hard = dh_frame.sum() / n_frames

    n_rows = batch.z.shape[0]
    n_slices = batch.state.shape[0]
    bits_l, rq_l, rd_l, rr_l, rz_l = _rate_terms(lp, lat.r_soft)
    slice_w = 1.0 / batch.slice_len
    bits_s, rq_s, rd_s, rr_s, _ = _rate_terms(sp, st.r_soft, slice_w)
    rate = bits_l.sum() / n_rows + bits_s.sum() / n_slices

    loss = (mix * d_soft + (1 - mix) * d_hard) / root + root * rate

    # distortion gradients through the decoder
    gz_soft, gst_soft = _decode_backward(transform, gs * (mix / root / n_frames), batch.newest)
    gz_hard, gst_hard = _decode_backward(transform, gh * ((1 - mix) / root / n_frames), batch.newest)

    grads = {}
    for prefix, path, g_soft, g_hard, rq, rd, rr, rs, count, params in (
        ("lat", lp, gz_soft, gz_hard, rq_l, rd_l, rr_l, lat.r_soft, n_rows, lat),
        ("st", sp, gst_soft, gst_hard, rq_s, rd_s, rr_s, st.r_soft, n_slices, st),
    ):
        sq, sd, _ = path.soft_grads(g_soft)
        hq, hd = path.hard_grads(g_hard)
        g_q = (sq + hq).sum(0) + root * rq.sum(0) / count
        g_d = (sd + hd).sum(0) + root * rd.sum(0) / count
        g_r = root * rr.sum(0) / count
        grads[f"{prefix}_log_q"] = g_q * path.q
        grads[f"{prefix}_delta"] = g_d
        grads[f"{prefix}_logit_rs"] = g_r * rs * (1 - rs)

    # pmf fit of the hard symbols; independent of everything above
    code_bits = 0.0
    for prefix, path, params, weights, count in (
        ("lat", lp, lat, None, n_rows),
        ("st", sp, st, slice_w, n_slices),
    ):
        bits, g_r, g_t = _code_length(path.hard_sym, params.r_hard, params.theta)
        w = 1.0 if weights is None else weights[:, None]
        code_bits += (w * bits).sum() / count
        rh = params.r_hard
        grads[f"{prefix}_logit_rh"] = (w * g_r).sum(0) / count * rh * (1 - rh)
        grads[f"{prefix}_theta"] = (w * g_t).sum(0) / count

    if want_z_grad:
        _, _, gz = lp.soft_grads(gz_soft)
        grads["z"] = gz + root * rz_l / n_rows

    return LossResult(float(loss), float(d_soft), float(d_hard), float(rate), float(code_bits), grads)


def soft_loss(transform, batch, lat, st, lam, noise_lat, noise_st):
    """Loss with only the soft path (``mix = 1``); used for gradient checks."""
    return evaluate_loss(transform, batch, lat, st, lam, 1.0, noise_lat, noise_st, want_z_grad=True)


# --------------------------------------------------------------------------
# training


def _distortion_weights(transform: Transform, axes: np.ndarray, frames: int) -> np.ndarray:
    """Approximate distortion per unit squared error along each axis (pitch L1 ignored)."""
    weight = np.ones(FEATURE_DIM)
    weight[PITCH_INDEX] = 0.0
    n_axis_frames = axes.shape[1] // FEATURE_DIM
    std = np.tile(transform.std * np.sqrt(weight), n_axis_frames)
    return ((axes * std) ** 2).sum(1) / frames


def _init_params(lambdas, gains, stds) -> list[RawParams]:
    out = []
    for lam in lambdas:
        q = np.sqrt(gains * LN2 / (6.0 * lam))
        m = np.maximum(q * stds * 0.8, 1e-6)
        r = (np.sqrt(1.0 + m**2) - 1.0) / m
        r = np.clip(r, 1e-4, 0.999)
        out.append(RawParams(np.log(q), np.full_like(q, 0.1), _logit(r), _logit(r),
                             np.maximum(theta_implicit(r), 0.5)))
    return out


def _project(p: RawParams):
    np.maximum(p.delta, 0.0, out=p.delta)
    np.maximum(p.theta, 0.5, out=p.theta)
    np.clip(p.log_q, -30.0, 10.0, out=p.log_q)
    np.clip(p.logit_rs, -30.0, 30.0, out=p.logit_rs)
    np.clip(p.logit_rh, -30.0, 30.0, out=p.logit_rh)


def params_to_table(lat: list[RawParams], st: list[RawParams], lambdas) -> QuantizerTable:
    def stack(ps):
        return QuantizerParams(
            np.stack([p.q for p in ps]), np.stack([p.delta for p in ps]), np.stack([p.theta for p in ps]),
            np.stack([p.r_soft for p in ps]), np.stack([p.r_hard for p in ps]))
    return QuantizerTable(stack(lat), stack(st), np.asarray(lambdas))


def split_corpus(corpus, holdout_fraction: float):
    n_hold = max(1, int(round(len(corpus) * holdout_fraction)))
    return list(corpus[:-n_hold]), list(corpus[-n_hold:])


def train_tables(config: TrainConfig, data, transform: Transform | None = None, log_file=None):
    """Train a quantizer table; returns ``(table, rd_points)``.

    ``data`` is a list of feature sequences of ``config.seq_frames`` frames,
    at least 100 of them. The last ``holdout_fraction`` of the corpus is
    held out for the returned RD points. When ``log_file`` is given, one JSON
    line per RD point is written to it.
    """
    corpus = list(data)
    if len(corpus) < 100:
        raise InvalidArgument(f"corpus needs at least 100 sequences, got {len(corpus)}")
    if any(len(s) < config.seq_frames for s in corpus):
        raise InvalidArgument(f"every sequence needs at least {config.seq_frames} frames")
    if transform is None:
        transform = reference_transform(config.transform_seed)
    rng = np.random.default_rng(config.seed)
    train, held = split_corpus(corpus, config.holdout_fraction)
    enc = EncodedCorpus(train, transform)

    lat_gain = _distortion_weights(transform, transform.analysis, transform.window_frames)
    st_axes = np.zeros((transform.is_dim, transform.window_dim))
    st_axes[:, -PAIR_DIM:] = transform.is_axes
    st_gain = _distortion_weights(transform, st_axes * transform.is_weight, transform.window_frames)
    lat = _init_params(config.lambdas, lat_gain, transform.latent_std)
    st = _init_params(config.lambdas, st_gain, transform.is_std)

    steps_per_seq = config.seq_frames // 2
    lrs = {"log_q": config.lr_log_q, "delta": config.lr_delta, "logit_rs": config.lr_r,
           "logit_rh": config.lr_r, "theta": config.lr_theta}
    for step in range(config.steps):
        quarter = min(3, 4 * step // max(config.steps, 1)) if config.lengthen else 0
        factor = 2**quarter
        n_chunks = max(1, config.batch_size // factor)
        segs = random_segments(rng, enc.n_steps, steps_per_seq * factor, n_chunks, config.slices_per_seq * factor)
        batch = enc.batch(segs)
        k = int(rng.integers(N_LAMBDA))
        noise_l = rng.uniform(-0.5, 0.5, size=batch.z.shape)
        noise_s = rng.uniform(-0.5, 0.5, size=batch.state.shape)
        res = evaluate_loss(transform, batch, lat[k], st[k], config.lambdas[k], config.mix, noise_l, noise_s)
        for prefix, p in (("lat", lat[k]), ("st", st[k])):
            for name, lr in lrs.items():
                getattr(p, name)[...] -= lr * res.grads[f"{prefix}_{name}"]
            _project(p)
        if step % 2000 == 0:
            log.debug("step %d lambda %d loss %.4f rate %.2f dist %.4f", step, k, res.loss, res.rate, res.dist_hard)

    table = params_to_table(lat, st, config.lambdas)
    points = evaluate_table(table, held, transform, seed=config.seed + 1)
    if log_file is not None:
        write_rd_log(log_file, points)
    return table, points


# --------------------------------------------------------------------------
# evaluation


def empirical_entropy(symbols: np.ndarray) -> np.ndarray:
    """Plug-in entropy in bits of each column of an integer array."""
    out = np.empty(symbols.shape[1])
    for i in range(symbols.shape[1]):
        _, counts = np.unique(symbols[:, i], return_counts=True)
        p = counts / counts.sum()
        out[i] = float(-(p * np.log2(p)).sum())
    return out


def count_nondegenerate(table: QuantizerTable, probe_latents: np.ndarray, threshold: float = 0.01) -> np.ndarray:
    """Per-lambda count of latent dimensions whose hard symbols carry at least ``threshold`` bits."""
    probe = np.atleast_2d(np.asarray(probe_latents, dtype=float))
    counts = np.empty(table.n_lambda, dtype=int)
    for k in range(table.n_lambda):
        sym = quantize_batch(probe, table.latent, k)
        counts[k] = int((empirical_entropy(sym) >= threshold).sum())
    return counts


def coded_bits(symbols: np.ndarray, params: QuantizerParams, k: int) -> np.ndarray:
    """Range-coder cost in bits of each row of ``symbols`` under lambda index ``k``."""
    models = params.models(k)
    cost = np.zeros(symbols.shape[0])
    for i, m in enumerate(models):
        cost += m.bits(symbols[:, i])
    return cost


def evaluation_segments(n_steps: int, slice_steps: int = 50):
    return [(a, min(a + slice_steps, n_steps)) for a in range(0, n_steps, slice_steps)]


def evaluate_table(table: QuantizerTable, sequences, transform: Transform, seed: int = 1,
                   threshold: float = 0.01) -> list[RDPoint]:
    """Hard-path rate and distortion of every quantizer on held-out sequences."""
    enc = EncodedCorpus(sequences, transform)
    batch = enc.batch(evaluation_segments(enc.n_steps))
    nondeg = count_nondegenerate(table, enc.z, threshold)
    points = []
    for k in range(table.n_lambda):
        zs = quantize_batch(batch.z, table.latent, k)
        ss = quantize_batch(batch.state, table.state, k)
        zd = dequantize(zs, table.latent, k)
        sd = dequantize(ss, table.state, k)
        x_hat = _decode_windows(transform, zd, sd, batch.newest)
        dist = float(frame_distortion(x_hat, batch.target)[0].mean())
        rate = float(coded_bits(zs, table.latent, k).mean())
        is_rate = float(coded_bits(ss, table.state, k).mean())
        points.append(RDPoint(k, rate, dist, int(nondeg[k]), is_rate))
    return points


def write_rd_log(fp, points) -> None:
    for p in points:
        fp.write(json.dumps(asdict(p)) + "\n")


def synthetic_corpus(n_sequences: int = 120, seq_frames: int = 400, seed: int = 1000) -> list[FeatureSequence]:
    return [gen_synthetic_features(seed + i, seq_frames) for i in range(n_sequences)]


# --------------------------------------------------------------------------
# gradient check


@dataclass
class GradCheckConfig:
    n_points: int = 100
    seed: int = 0
    h: float = 1e-6
    n_rows: int = 12
    transform_seed: int = 0


def grad_check(config: GradCheckConfig | None = None) -> dict:
    """Compare analytic soft-loss gradients with central finite differences.

    Each random point draws a small batch, parameters and noise, then checks
    one random coordinate of the gradient w.r.t. ``log q``, ``delta`` and the
    latent input ``z``. Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    cfg = config or GradCheckConfig()
    rng = np.random.default_rng(cfg.seed)
    transform = reference_transform(cfg.transform_seed)
    m, n_is = transform.latent_dim, transform.is_dim
    errors = {"log_q": [], "delta": [], "z": []}

    for _ in range(cfg.n_points):
        n_rows = cfg.n_rows
        z = rng.normal(size=(n_rows, m)) * transform.latent_std
        target = transform.synthesize(z) + 0.3 * rng.normal(size=(n_rows, transform.window_frames, FEATURE_DIM))
        target[..., VOICING_INDEX] = rng.uniform(0, 1, size=target.shape[:2])
        batch = Batch(z, target, rng.normal(size=(2, n_is)) * transform.is_std, np.array([0, n_rows // 2]),
                      np.array([n_rows // 2, n_rows - n_rows // 2]))
        lam = float(np.exp(rng.uniform(np.log(1e-3), np.log(3.0))))

        def rand_params(dim):
            r = rng.uniform(0.05, 0.95, size=dim)
            return RawParams(rng.uniform(-1.0, 2.0, size=dim), rng.uniform(0.0, 0.6, size=dim), _logit(r),
                             _logit(r), np.full(dim, 0.6))

        lat, st = rand_params(m), rand_params(n_is)
        nl = rng.uniform(-0.5, 0.5, size=z.shape)
        ns = rng.uniform(-0.5, 0.5, size=batch.state.shape)
        base = soft_loss(transform, batch, lat, st, lam, nl, ns)

        def numeric(mutate):
            vals = []
            for sign in (1.0, -1.0):
                lat2, batch2 = lat.copy(), Batch(batch.z.copy(), batch.target, batch.state, batch.newest,
                                                 batch.slice_len)
                mutate(lat2, batch2, sign * cfg.h)
                vals.append(soft_loss(transform, batch2, lat2, st, lam, nl, ns).loss)
            return (vals[0] - vals[1]) / (2 * cfg.h)

        i = int(rng.integers(m))
        row = int(rng.integers(n_rows))

        def bump_q(p, b, h):
            p.log_q[i] += h

        def bump_d(p, b, h):
            p.delta[i] += h

        def bump_z(p, b, h):
            b.z[row, i] += h

        for name, bump, analytic in (("log_q", bump_q, base.grads["lat_log_q"][i]),
                                     ("delta", bump_d, base.grads["lat_delta"][i]),
                                     ("z", bump_z, base.grads["z"][row, i])):
            num = numeric(bump)
            errors[name].append(abs(analytic - num) / max(abs(analytic), abs(num), 1e-8))

    zeta_unit = bool(np.all(soft_deadzone_grad(np.linspace(-10, 10, 201), 0.0) == 1.0))
    z_grid = np.array([-3.0, -0.7, 0.4, 2.5])
    r = 0.3
    rate_slope = np.array([(rate_bits(abs(v + 1e-6), r) - rate_bits(abs(v - 1e-6), r)) / 2e-6 for v in z_grid])
    slope_ok = bool(np.all(np.sign(rate_slope) == np.sign(z_grid))
                    and np.allclose(np.abs(rate_slope), -math.log2(r), rtol=1e-6))
    per_param = {k: float(max(v)) for k, v in errors.items()}
    return {
        "n_points": cfg.n_points,
        "max_rel_error": max(per_param.values()),
        "max_rel_error_by_param": per_param,
        "zeta_grad_identity_at_delta0": zeta_unit,
        "rate_slope_is_l1": slope_ok,
        "epsilon": EPSILON,
    }

"""Encoder/decoder, adversarial critics, the hyperbolic projection head and training.

Shapes: windows are (B, w, c) arrays, latents (B, d_z), ball embeddings (B, d_h).
Recurrent layers run time-major internally, (w, B, features).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import hypgeo
from .autodiff import Tensor
from .errors import ConfigError, InvalidValueError, ShapeError, TrainingDivergenceError
from .optim import Adam, RiemannianAdam

MODES = ("euclidean", "hyperbolic")


@dataclass(frozen=True)
class ModelConfig:
    window: int = 100
    channels: int = 1
    latent_dim: int = 20
    ball_dim: int = 20
    encoder_hidden: int = 16
    decoder_hidden: int = 16
    critic_hidden: int = 100
    critic_iters: int = 5
    lr: float = 5e-4
    gp_weight: float = 10.0
    gp_samples: int = 8
    gp_step: float = 1e-4
    cycle_weight: float = 10.0
    leaky_slope: float = 0.2
    ball_margin: float = 1e-5
    head_scale: float = 0.3
    train_head_matrix: bool = False

    def __post_init__(self):
        for name in ("window", "channels", "latent_dim", "ball_dim", "encoder_hidden",
                     "decoder_hidden", "critic_hidden", "critic_iters", "gp_samples"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")

    @property
    def geometry(self) -> hypgeo.GeometryConfig:
        return hypgeo.GeometryConfig(ball_margin=self.ball_margin)


def _glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def _param(value, name):
    return Tensor(np.asarray(value, dtype=np.float64), requires_grad=True, name=name)


class Module:
    """Holds named parameters; children are attributes that are Modules."""

    def named_parameters(self, prefix=""):
        out = {}
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[f"{prefix}{key}"] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(f"{prefix}{key}/"))
        return out

    def parameters(self):
        return list(self.named_parameters().values())


class Dense(Module):
    def __init__(self, n_in, n_out, rng, zero=False):
        self.W = _param(np.zeros((n_in, n_out)) if zero else _glorot(rng, n_in, n_out), "W")
        self.b = _param(np.zeros(n_out), "b")

    def __call__(self, x):
        if x.shape[-1] != self.W.shape[0]:
            raise ShapeError(f"dense layer expects {self.W.shape[0]} features, got {x.shape[-1]}")
        lead = x.shape[:-1]
        y = ad.add(ad.matmul(ad.reshape(x, (-1, x.shape[-1])), self.W), self.b)
        return ad.reshape(y, lead + (self.W.shape[1],))


class LSTM(Module):
    """Single-direction LSTM over a time-major sequence, zero initial state."""

    def __init__(self, n_in, hidden, rng, zero=False):
        H = hidden
        self.hidden = H
        if zero:
            Wx, U = np.zeros((n_in, 4 * H)), np.zeros((H, 4 * H))
        else:
            Wx = _glorot(rng, n_in, 4 * H)
            U = _glorot(rng, H, 4 * H)
        b = np.zeros(4 * H)
        if not zero:
            b[H:2 * H] = 1.0  # forget gate
        self.Wx = _param(Wx, "Wx")
        self.U = _param(U, "U")
        self.b = _param(b, "b")

    def __call__(self, x):
        T, B, n_in = x.shape
        proj = ad.add(ad.matmul(ad.reshape(x, (T * B, n_in)), self.Wx), self.b)
        return ad.lstm_recurrence(ad.reshape(proj, (T, B, 4 * self.hidden)), self.U)


class BiLSTM(Module):
    def __init__(self, n_in, hidden, rng, zero=False):
        self.fwd = LSTM(n_in, hidden, rng, zero)
        self.bwd = LSTM(n_in, hidden, rng, zero)

    def __call__(self, x):
        """Returns (sequence of concatenated states, concatenated final states)."""
        hf = self.fwd(x)
        hb_rev = self.bwd(ad.slice_axis(x, None, None, axis=0, step=-1))
        hb = ad.slice_axis(hb_rev, None, None, axis=0, step=-1)
        seq = ad.concat([hf, hb], axis=2)
        final = ad.concat([ad.getitem(hf, -1), ad.getitem(hb_rev, -1)], axis=1)
        return seq, final


class Encoder(Module):
    """Window (B, w, c) -> latent (B, d_z): BiLSTM, final states, dense."""

    def __init__(self, cfg: ModelConfig, rng, zero=False):
        self.window = cfg.window
        self.channels = cfg.channels
        self.rnn = BiLSTM(cfg.channels, cfg.encoder_hidden, rng, zero)
        self.out = Dense(2 * cfg.encoder_hidden, cfg.latent_dim, rng, zero)

    def __call__(self, x):
        if x.ndim != 3 or x.shape[1:] != (self.window, self.channels):
            raise ShapeError(f"encoder expects windows of shape (B, {self.window}, {self.channels}), got {x.shape}")
        _, final = self.rnn(ad.transpose(x, (1, 0, 2)))
        return self.out(final)


class Decoder(Module):
    """Latent (B, d_z) -> window (B, w, c): dense to a driving sequence, 2 BiLSTMs, tanh head."""

    def __init__(self, cfg: ModelConfig, rng, zero=False):
        self.window = cfg.window
        self.latent_dim = cfg.latent_dim
        self.expand = Dense(cfg.latent_dim, cfg.window, rng, zero)
        self.rnn1 = BiLSTM(1, cfg.decoder_hidden, rng, zero)
        self.rnn2 = BiLSTM(2 * cfg.decoder_hidden, cfg.decoder_hidden, rng, zero)
        self.out = Dense(2 * cfg.decoder_hidden, cfg.channels, rng, zero)

    def __call__(self, z):
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeError(f"decoder expects latents of shape (B, {self.latent_dim}), got {z.shape}")
        B = z.shape[0]
        seq = ad.reshape(ad.transpose(self.expand(z)), (self.window, B, 1))
        seq, _ = self.rnn1(seq)
        seq, _ = self.rnn2(seq)
        y = ad.tanh(self.out(seq))
        return ad.transpose(y, (1, 0, 2))


class CriticX(Module):
    """Two dense layers on the flattened window; higher output = more real."""

    def __init__(self, cfg: ModelConfig, rng, zero=False):
        self.slope = cfg.leaky_slope
        self.size = cfg.window * cfg.channels
        self.l1 = Dense(self.size, cfg.critic_hidden, rng, zero)
        self.l2 = Dense(cfg.critic_hidden, 1, rng, zero)

    def __call__(self, x):
        flat = ad.reshape(x, (x.shape[0], self.size))
        return ad.reshape(self.l2(ad.leaky_relu(self.l1(flat), self.slope)), (x.shape[0],))


class CriticZ(Module):
    """One dense layer on the latent code."""

    def __init__(self, cfg: ModelConfig, rng, zero=False):
        self.l1 = Dense(cfg.latent_dim, 1, rng, zero)

    def __call__(self, z):
        return ad.reshape(self.l1(z), (z.shape[0],))


class HyperHead(Module):
    """Maps flattened windows into the Poincare ball.

    ``h = (M (x) exp_0(x)) (+) bias``, where ``M (x) y = exp_0(M log_0(y))``.
    Since ``log_0(exp_0(x)) = x`` this is evaluated as ``exp_0(M x) (+) bias``;
    going through the clamped intermediate point would erase the norm of any
    window longer than artanh(1 - margin) ~ 6.1.

    ``M`` starts as ``N(0, 1) * head_scale / sqrt(w * c)``.  By default it is
    not updated: the cycle distance is trivially minimized by shrinking ``M``
    onto the orthogonal complement of the data, which sends every embedding
    to the origin.  ``train_head_matrix=True`` restores the update.
    """

    def __init__(self, cfg: ModelConfig, rng, zero=False):
        self.size = cfg.window * cfg.channels
        self.geometry = cfg.geometry
        scale = 0.0 if zero else cfg.head_scale / np.sqrt(self.size)
        self.M = _param(rng.normal(0.0, 1.0, size=(cfg.ball_dim, self.size)) * scale, "M")
        self.bias = _param(np.zeros(cfg.ball_dim), "bias")

    def __call__(self, x):
        flat = ad.reshape(x, (x.shape[0], self.size))
        v = hypgeo.exp_map_0(ad.matmul(flat, ad.transpose(self.M)), self.geometry)
        return hypgeo.mobius_add(v, self.bias, self.geometry)


@dataclass
class LossReport:
    critic_x_loss: float
    critic_z_loss: float
    generator_loss: float
    cycle_loss: float
    gradient_penalty: float

    def as_dict(self):
        return asdict(self)


class ModelBundle(Module):
    """Encoder E, decoder G, critics D_x and D_z and the shared hyperbolic head."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, zero: bool = False):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(cfg, rng, zero)
        self.decoder = Decoder(cfg, rng, zero)
        self.critic_x = CriticX(cfg, rng, zero)
        self.critic_z = CriticZ(cfg, rng, zero)
        self.head = HyperHead(cfg, rng, zero)

    def state_arrays(self) -> dict:
        return {k: p.data for k, p in self.named_parameters().items()}

    def load_state_arrays(self, arrays: dict):
        for k, p in self.named_parameters().items():
            if arrays[k].shape != p.shape:
                raise ShapeError(f"parameter {k}: stored shape {arrays[k].shape} != {p.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)


# ------------------------------------------------------------------ operations


def _as_batch(window, cfg):
    x = window if isinstance(window, Tensor) else Tensor(np.asarray(window, dtype=np.float64))
    if x.ndim == 2:
        return ad.reshape(x, (1,) + x.shape), True
    return x, False


def encode(E: Encoder, window):
    """Latent code of one window (w, c) or a batch (B, w, c)."""
    x, single = _as_batch(window, None)
    z = E(x)
    return ad.reshape(z, z.shape[1:]) if single else z


def decode(G: Decoder, z):
    """Reconstructed window(s) from latent code(s)."""
    zt = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float64))
    single = zt.ndim == 1
    if single:
        zt = ad.reshape(zt, (1, zt.shape[0]))
    x = G(zt)
    return ad.reshape(x, x.shape[1:]) if single else x


def project_hyperbolic(head: HyperHead, window_like):
    """Ball embedding of window(s); the same head embeds inputs and reconstructions."""
    x, single = _as_batch(window_like, None)
    h = head(x)
    return ad.reshape(h, h.shape[1:]) if single else h


def hyperbolic_cycle_loss(h, h2, geometry: hypgeo.GeometryConfig = hypgeo.DEFAULT):
    """Mean Poincare distance between paired embeddings."""
    return ad.mean(hypgeo.poincare_distance(h, h2, geometry))


def euclidean_cycle_loss(x, x_rec):
    """Mean squared point-wise error."""
    return ad.mean(ad.square(ad.sub(x, x_rec)))


def fd_gradient_penalty(critic, points: np.ndarray, step: float):
    """``mean((|grad_x critic| - 1)^2)`` with the input gradient from central differences.

    The probes are constants; the penalty stays differentiable in the critic's
    parameters through the critic evaluations.
    """
    n = points.shape[0]
    flat = points.reshape(n, -1)
    D = flat.shape[1]
    offsets = np.eye(D) * step
    probes = np.concatenate([
        (flat[:, None, :] + offsets[None]).reshape(n * D, D),
        (flat[:, None, :] - offsets[None]).reshape(n * D, D),
    ])
    vals = critic(Tensor(probes.reshape((2 * n * D,) + points.shape[1:])))
    grad = ad.mul(ad.sub(ad.slice_axis(vals, 0, n * D, axis=0), ad.slice_axis(vals, n * D, None, axis=0)),
                  1.0 / (2.0 * step))
    gnorm = ad.norm2(ad.reshape(grad, (n, D)), axis=1, keepdims=False)
    return ad.mean(ad.square(ad.sub(gnorm, 1.0)))


def critic_losses(Dx, Dz, real_x, fake_x, real_z, fake_z, gp_weight=10.0, gp_step=1e-4,
                  gp_points=None):
    """Wasserstein critic objectives with gradient penalties.

    ``gp_points`` is an optional pair (x_interp, z_interp) of interpolates; by
    default the midpoints of the real/fake pairs are used.  Returns a dict of
    tape scalars: ``critic_x``, ``critic_z`` (each including its penalty),
    ``gp_x``, ``gp_z``, and the generator adversarial terms ``gen_x``, ``gen_z``.
    """
    dx_real, dx_fake = Dx(real_x), Dx(fake_x)
    dz_real, dz_fake = Dz(real_z), Dz(fake_z)
    if gp_points is None:
        gp_points = (0.5 * (_np(real_x) + _np(fake_x)), 0.5 * (_np(real_z) + _np(fake_z)))
    gp_x = fd_gradient_penalty(Dx, gp_points[0], gp_step)
    gp_z = fd_gradient_penalty(Dz, gp_points[1], gp_step)
    return {
        "critic_x": ad.add(ad.sub(ad.mean(dx_fake), ad.mean(dx_real)), ad.mul(gp_weight, gp_x)),
        "critic_z": ad.add(ad.sub(ad.mean(dz_fake), ad.mean(dz_real)), ad.mul(gp_weight, gp_z)),
        "gp_x": gp_x,
        "gp_z": gp_z,
        "gen_x": ad.neg(ad.mean(dx_fake)),
        "gen_z": ad.neg(ad.mean(dz_fake)),
    }


def _np(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _finite(value, what, epoch, step):
    if not np.isfinite(value):
        raise TrainingDivergenceError(f"non-finite {what}", epoch=epoch, step=step)
    return value


class Trainer:
    """Owns a ModelBundle, its optimizers and the sampling RNG.

    ``mode`` selects the cycle-consistency term: mean squared point-wise error
    (``euclidean``) or the Poincare distance between head embeddings
    (``hyperbolic``).
    """

    def __init__(self, bundle: ModelBundle, mode: str = "hyperbolic", seed: int = 0):
        if mode not in MODES:
            raise ConfigError(f"unknown training mode {mode!r}; expected one of {MODES}")
        self.bundle = bundle
        self.mode = mode
        self.cfg = bundle.cfg
        self.rng = np.random.default_rng([seed, 1])
        lr = self.cfg.lr
        critics = bundle.critic_x.parameters() + bundle.critic_z.parameters()
        gen = bundle.encoder.parameters() + bundle.decoder.parameters()
        if mode == "hyperbolic" and self.cfg.train_head_matrix:
            gen.append(bundle.head.M)
        self.critic_opt = Adam(critics, lr=lr)
        self.gen_opt = Adam(gen, lr=lr)
        self.ball_opt = RiemannianAdam([bundle.head.bias], lr=lr, geometry=self.cfg.geometry)
        self.steps = 0
        self.epoch = 0

    def optimizer_arrays(self) -> dict:
        out = {}
        out.update(self.critic_opt.state_arrays("optim/critic"))
        out.update(self.gen_opt.state_arrays("optim/gen"))
        out.update(self.ball_opt.state_arrays("optim/ball"))
        return out

    def load_optimizer_arrays(self, arrays: dict):
        self.critic_opt.load_state_arrays(arrays, "optim/critic")
        self.gen_opt.load_state_arrays(arrays, "optim/gen")
        self.ball_opt.load_state_arrays(arrays, "optim/ball")

    def _prior(self, n):
        return self.rng.standard_normal((n, self.cfg.latent_dim))

    def _gp_points(self, real, fake):
        k = min(self.cfg.gp_samples, real.shape[0])
        idx = self.rng.choice(real.shape[0], size=k, replace=False)
        shape = (k,) + (1,) * (real.ndim - 1)
        t = self.rng.uniform(size=shape)
        return t * real[idx] + (1.0 - t) * fake[idx]

    def cycle_term(self, x, x_rec):
        if self.mode == "euclidean":
            return euclidean_cycle_loss(x, x_rec), None
        h = self.bundle.head(x)
        h_rec = self.bundle.head(x_rec)
        limit = self.cfg.geometry.max_radius
        for emb in (h, h_rec):
            if np.any(np.sqrt(np.sum(emb.data ** 2, axis=-1)) > limit):
                raise InvalidValueError("embedding left the clamped ball")
        return hyperbolic_cycle_loss(h, h_rec, self.cfg.geometry), (h, h_rec)

    def train_step(self, batch: np.ndarray) -> LossReport:
        """``critic_iters`` critic updates followed by one encoder/decoder/head update."""
        cfg, b = self.cfg, self.bundle
        x = np.asarray(batch, dtype=np.float64)
        n = x.shape[0]
        k = cfg.critic_iters
        step_no = self.steps + 1
        # E and G are frozen during the critic updates, so their outputs are computed once
        with ad.no_grad():
            z_enc = b.encoder(Tensor(x)).data
            fake_x = b.decoder(Tensor(self._prior(n))).data
        cx = cz = gp = 0.0
        xt = Tensor(x)
        for _ in range(k):
            real_z = self._prior(n)
            gp_points = (self._gp_points(x, fake_x), self._gp_points(real_z, z_enc))
            self.critic_opt.zero_grad()
            terms = critic_losses(b.critic_x, b.critic_z, xt, Tensor(fake_x), Tensor(real_z), Tensor(z_enc),
                                  cfg.gp_weight, cfg.gp_step, gp_points)
            loss = ad.add(terms["critic_x"], terms["critic_z"])
            _finite(float(loss.data), "critic loss", self.epoch, step_no)
            ad.backward(loss)
            self.critic_opt.step()
            cx += float(terms["critic_x"].data) / k
            cz += float(terms["critic_z"].data) / k
            gp += float(terms["gp_x"].data + terms["gp_z"].data) / k

        self.gen_opt.zero_grad()
        self.ball_opt.zero_grad()
        z = b.encoder(xt)
        out = b.decoder(ad.concat([z, Tensor(self._prior(n))], axis=0))
        x_rec = ad.slice_axis(out, 0, n, axis=0)
        x_gen = ad.slice_axis(out, n, None, axis=0)
        adv = ad.sub(ad.neg(ad.mean(b.critic_x(x_gen))), ad.mean(b.critic_z(z)))
        cyc, _ = self.cycle_term(xt, x_rec)
        gen_loss = ad.add(adv, ad.mul(cfg.cycle_weight, cyc))
        _finite(float(gen_loss.data), "generator loss", self.epoch, step_no)
        ad.backward(gen_loss)
        self.gen_opt.step()
        if self.mode == "hyperbolic":
            self.ball_opt.step()
        self.steps = step_no
        return LossReport(cx, cz, float(gen_loss.data), float(cyc.data), gp)


@dataclass
class WindowOutputs:
    """Per-window inference results."""

    reconstruction: np.ndarray
    critic: np.ndarray
    h: np.ndarray | None = None
    h_rec: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


def infer_windows(bundle: ModelBundle, windows: np.ndarray, hyperbolic: bool, batch_size: int = 256) -> WindowOutputs:
    """Reconstruct windows and evaluate D_x (and the ball embeddings when ``hyperbolic``)."""
    recs, crit, hs, hrs = [], [], [], []
    with ad.no_grad():
        for start in range(0, len(windows), batch_size):
            x = Tensor(np.asarray(windows[start:start + batch_size], dtype=np.float64))
            rec = bundle.decoder(bundle.encoder(x))
            recs.append(rec.data)
            crit.append(bundle.critic_x(x).data)
            if hyperbolic:
                hs.append(bundle.head(x).data)
                hrs.append(bundle.head(rec).data)
    out = WindowOutputs(np.concatenate(recs), np.concatenate(crit))
    if hyperbolic:
        out.h = np.concatenate(hs)
        out.h_rec = np.concatenate(hrs)
    return out

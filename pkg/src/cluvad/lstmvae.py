"""Per-cluster sequence reconstruction model.

LSTM encoder -> diagonal-Gaussian latent -> LSTM decoder, trained on
reconstruction MSE plus the closed-form KL to a standard-normal prior.
Gradients are derived analytically (full backpropagation through time)
and verified against central finite differences in the test suite, so
the whole model runs on numpy with no autodiff dependency.

Shapes: windows are (T, F); batches are (B, T, F). Gates are packed
row-wise as [input, forget, cell, output] into 4H x D matrices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit as _sigmoid

from .errors import NumericError, ParameterError, SchemaError
from .preprocess import WindowedTensor

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass
class LstmParams:
    """One LSTM layer: w maps inputs, u maps the previous hidden state."""

    w: np.ndarray  # (4H, D_in)
    u: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def hidden(self) -> int:
        return self.u.shape[1]


class LstmVaeModel:
    """Encoder/decoder parameter bundle for one feature cluster."""

    def __init__(self, names, hidden, latent, enc, w_mu, b_mu, w_logvar, b_logvar,
                 w_h0, b_h0, w_c0, b_c0, dec, w_out, b_out, beta=1.0):
        self.names = tuple(names)
        self.hidden = hidden
        self.latent = latent
        self.beta = beta
        self.enc = enc
        self.w_mu, self.b_mu = w_mu, b_mu
        self.w_logvar, self.b_logvar = w_logvar, b_logvar
        self.w_h0, self.b_h0 = w_h0, b_h0
        self.w_c0, self.b_c0 = w_c0, b_c0
        self.dec = dec
        self.w_out, self.b_out = w_out, b_out

    @property
    def n_features(self) -> int:
        return len(self.names)

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Stable (name, array) listing; arrays are live views."""
        return [
            ("enc.w", self.enc.w), ("enc.u", self.enc.u), ("enc.b", self.enc.b),
            ("w_mu", self.w_mu), ("b_mu", self.b_mu),
            ("w_logvar", self.w_logvar), ("b_logvar", self.b_logvar),
            ("w_h0", self.w_h0), ("b_h0", self.b_h0),
            ("w_c0", self.w_c0), ("b_c0", self.b_c0),
            ("dec.w", self.dec.w), ("dec.u", self.dec.u), ("dec.b", self.dec.b),
            ("w_out", self.w_out), ("b_out", self.b_out),
        ]

    def copy(self) -> "LstmVaeModel":
        return LstmVaeModel(
            self.names, self.hidden, self.latent,
            LstmParams(self.enc.w.copy(), self.enc.u.copy(), self.enc.b.copy()),
            self.w_mu.copy(), self.b_mu.copy(), self.w_logvar.copy(), self.b_logvar.copy(),
            self.w_h0.copy(), self.b_h0.copy(), self.w_c0.copy(), self.b_c0.copy(),
            LstmParams(self.dec.w.copy(), self.dec.u.copy(), self.dec.b.copy()),
            self.w_out.copy(), self.b_out.copy(), self.beta,
        )

    def to_json(self) -> str:
        params = {name: arr.tolist() for name, arr in self.parameters()}
        shapes = {name: list(arr.shape) for name, arr in self.parameters()}
        return json.dumps(
            {
                "version": 1,
                "names": list(self.names),
                "hidden": self.hidden,
                "latent": self.latent,
                "beta": self.beta,
                "shapes": shapes,
                "params": params,
            },
            sort_keys=True,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> "LstmVaeModel":
        d = json.loads(text)
        if d.get("version") != 1:
            raise SchemaError(f"unsupported checkpoint version {d.get('version')!r}")
        p = {k: np.array(v, dtype=np.float64) for k, v in d["params"].items()}
        for name, shape in d["shapes"].items():
            if list(p[name].shape) != shape:
                raise SchemaError(f"checkpoint shape mismatch for {name}")
        return cls(
            tuple(d["names"]), int(d["hidden"]), int(d["latent"]),
            LstmParams(p["enc.w"], p["enc.u"], p["enc.b"]),
            p["w_mu"], p["b_mu"], p["w_logvar"], p["b_logvar"],
            p["w_h0"], p["b_h0"], p["w_c0"], p["b_c0"],
            LstmParams(p["dec.w"], p["dec.u"], p["dec.b"]),
            p["w_out"], p["b_out"], float(d["beta"]),
        )

    @classmethod
    def load(cls, path: str | Path) -> "LstmVaeModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def _init_lstm(rng: np.random.Generator, d_in: int, hidden: int) -> LstmParams:
    w = _glorot(rng, (4 * hidden, d_in))
    u = _glorot(rng, (4 * hidden, hidden))
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0  # forget-gate bias: remember by default
    return LstmParams(w, u, b)


def init_model(names, hidden: int = 64, latent: int = 8, seed: int = 0, beta: float = 1.0) -> LstmVaeModel:
    """Fresh model for the given cluster features, seeded Glorot init."""
    names = tuple(names)
    f = len(names)
    if f < 1:
        raise ParameterError("model needs at least one feature")
    rng = np.random.default_rng(seed)
    return LstmVaeModel(
        names, hidden, latent,
        _init_lstm(rng, f, hidden),
        _glorot(rng, (latent, hidden)), np.zeros(latent),
        _glorot(rng, (latent, hidden)), np.zeros(latent),
        _glorot(rng, (hidden, latent)), np.zeros(hidden),
        _glorot(rng, (hidden, latent)), np.zeros(hidden),
        _init_lstm(rng, latent, hidden),
        _glorot(rng, (f, hidden)), np.zeros(f),
        beta,
    )


def kl_gauss(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL( N(mu, diag exp(logvar)) || N(0, I) ), always >= 0."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise SchemaError(f"mu shape {mu.shape} != logvar shape {logvar.shape}")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(logvar))):
        raise NumericError("non-finite inputs to kl_gauss")
    return float(0.5 * np.sum(mu**2 + np.exp(logvar) - 1.0 - logvar))


def _lstm_forward(params: LstmParams, x: np.ndarray, h0=None, c0=None):
    b, t, _ = x.shape
    hdim = params.hidden
    h = np.zeros((b, hdim)) if h0 is None else h0
    c = np.zeros((b, hdim)) if c0 is None else c0
    h_seq = np.empty((b, t, hdim))
    cache = []
    for step in range(t):
        xt = x[:, step]
        a = xt @ params.w.T + h @ params.u.T + params.b
        gi = _sigmoid(a[:, :hdim])
        gf = _sigmoid(a[:, hdim : 2 * hdim])
        gg = np.tanh(a[:, 2 * hdim : 3 * hdim])
        go = _sigmoid(a[:, 3 * hdim :])
        c_new = gf * c + gi * gg
        tanh_c = np.tanh(c_new)
        h_new = go * tanh_c
        cache.append((xt, h, c, gi, gf, gg, go, tanh_c))
        h, c = h_new, c_new
        h_seq[:, step] = h
    return h_seq, cache


def _lstm_backward(params: LstmParams, cache, dh_seq: np.ndarray):
    """BPTT for one layer.

    dh_seq holds the gradient arriving at each h_t from outside the
    recurrence; returns input gradients, initial-state gradients, and
    parameter gradients.
    """
    b, t, _ = dh_seq.shape
    hdim = params.hidden
    dw = np.zeros_like(params.w)
    du = np.zeros_like(params.u)
    db = np.zeros_like(params.b)
    dx_seq = np.empty((b, t, params.w.shape[1]))
    dh_next = np.zeros((b, hdim))
    dc_next = np.zeros((b, hdim))
    for step in reversed(range(t)):
        xt, h_prev, c_prev, gi, gf, gg, go, tanh_c = cache[step]
        dh = dh_seq[:, step] + dh_next
        dgo = dh * tanh_c
        dc = dh * go * (1.0 - tanh_c**2) + dc_next
        dgf = dc * c_prev
        dgi = dc * gg
        dgg = dc * gi
        dc_next = dc * gf
        da = np.concatenate(
            [
                dgi * gi * (1.0 - gi),
                dgf * gf * (1.0 - gf),
                dgg * (1.0 - gg**2),
                dgo * go * (1.0 - go),
            ],
            axis=1,
        )
        dw += da.T @ xt
        du += da.T @ h_prev
        db += da.sum(axis=0)
        dx_seq[:, step] = da @ params.w
        dh_next = da @ params.u
    return dx_seq, dh_next, dc_next, {"w": dw, "u": du, "b": db}


def _forward_batch(model: LstmVaeModel, x: np.ndarray, eps: np.ndarray | None):
    """Full VAE forward on (B, T, F); eps=None means deterministic z = mu."""
    if x.ndim != 3 or x.shape[2] != model.n_features:
        raise SchemaError(f"expected (B, T, {model.n_features}) input, got {x.shape}")
    b, t, _ = x.shape
    h_seq_e, cache_e = _lstm_forward(model.enc, x)
    h_last = h_seq_e[:, -1]
    mu = h_last @ model.w_mu.T + model.b_mu
    logvar_raw = h_last @ model.w_logvar.T + model.b_logvar
    logvar = np.clip(logvar_raw, LOGVAR_MIN, LOGVAR_MAX)
    if eps is None:
        z = mu
    else:
        if eps.shape != mu.shape:
            raise SchemaError(f"noise shape {eps.shape} != latent shape {mu.shape}")
        z = mu + np.exp(0.5 * logvar) * eps
    h0 = z @ model.w_h0.T + model.b_h0
    c0 = z @ model.w_c0.T + model.b_c0
    z_seq = np.broadcast_to(z[:, None, :], (b, t, model.latent)).copy()
    h_seq_d, cache_d = _lstm_forward(model.dec, z_seq, h0, c0)
    x_hat = h_seq_d @ model.w_out.T + model.b_out
    ctx = {
        "x": x, "eps": eps, "h_last": h_last, "mu": mu,
        "logvar_raw": logvar_raw, "logvar": logvar, "z": z,
        "cache_e": cache_e, "cache_d": cache_d, "h_seq_d": h_seq_d,
        "x_hat": x_hat,
    }
    return ctx


@dataclass
class ReconstructionOutput:
    """Forward-pass result for one window."""

    x_hat: np.ndarray      # (T, F)
    mu: np.ndarray         # (L,)
    logvar: np.ndarray     # (L,)
    sq_err: np.ndarray     # (T, F) per-timestep per-feature squared error


def forward(model: LstmVaeModel, window: np.ndarray, noise: np.ndarray | None = None) -> ReconstructionOutput:
    """Reconstruct one (T, F) window.

    ``noise`` is the reparameterization draw (z = mu + sigma * noise);
    None runs the deterministic z = mu path, a pure function of
    (model, window).
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise SchemaError(f"window must be (T, F), got shape {window.shape}")
    eps = None if noise is None else np.asarray(noise, dtype=np.float64)[None, :]
    ctx = _forward_batch(model, window[None], eps)
    x_hat = ctx["x_hat"][0]
    return ReconstructionOutput(
        x_hat=x_hat,
        mu=ctx["mu"][0],
        logvar=ctx["logvar"][0],
        sq_err=(x_hat - window) ** 2,
    )


def _loss_from_ctx(model: LstmVaeModel, ctx) -> tuple[float, float, float]:
    x, x_hat = ctx["x"], ctx["x_hat"]
    recon = float(np.mean((x_hat - x) ** 2))
    mu, logvar = ctx["mu"], ctx["logvar"]
    kl = float(np.mean(0.5 * np.sum(mu**2 + np.exp(logvar) - 1.0 - logvar, axis=1)))
    total = recon + model.beta * kl
    return total, recon, kl


def loss(model: LstmVaeModel, window: np.ndarray, noise: np.ndarray | None = None) -> tuple[float, float, float]:
    """(total, recon, kl) for one window; total = recon + beta * kl."""
    window = np.asarray(window, dtype=np.float64)
    eps = None if noise is None else np.asarray(noise, dtype=np.float64)[None, :]
    ctx = _forward_batch(model, window[None], eps)
    values = _loss_from_ctx(model, ctx)
    if not all(np.isfinite(v) for v in values):
        raise NumericError(f"non-finite loss: total={values[0]}, recon={values[1]}, kl={values[2]}")
    return values


def loss_and_grads(model: LstmVaeModel, x: np.ndarray, eps: np.ndarray | None):
    """Batch loss plus analytic gradients for every parameter.

    The backward pass mirrors the forward graph exactly: output head,
    decoder BPTT, latent/initial-state maps, reparameterization, KL,
    logvar clamp, latent heads, encoder BPTT.
    """
    ctx = _forward_batch(model, x, eps)
    total, recon, kl = _loss_from_ctx(model, ctx)
    if not np.isfinite(total):
        raise NumericError(f"non-finite loss: total={total}, recon={recon}, kl={kl}")

    b, t, f = x.shape
    g: dict[str, np.ndarray] = {}

    dx_hat = 2.0 * (ctx["x_hat"] - x) / (b * t * f)
    h_seq_d = ctx["h_seq_d"]
    g["w_out"] = np.einsum("btf,bth->fh", dx_hat, h_seq_d)
    g["b_out"] = dx_hat.sum(axis=(0, 1))
    dh_seq_d = dx_hat @ model.w_out

    dz_seq, dh0, dc0, dec_g = _lstm_backward(model.dec, ctx["cache_d"], dh_seq_d)
    g["dec.w"], g["dec.u"], g["dec.b"] = dec_g["w"], dec_g["u"], dec_g["b"]

    z = ctx["z"]
    g["w_h0"] = dh0.T @ z
    g["b_h0"] = dh0.sum(axis=0)
    g["w_c0"] = dc0.T @ z
    g["b_c0"] = dc0.sum(axis=0)
    dz = dz_seq.sum(axis=1) + dh0 @ model.w_h0 + dc0 @ model.w_c0

    mu, logvar, logvar_raw = ctx["mu"], ctx["logvar"], ctx["logvar_raw"]
    dmu = dz.copy()
    if ctx["eps"] is None:
        dlogvar = np.zeros_like(logvar)
    else:
        dlogvar = dz * ctx["eps"] * 0.5 * np.exp(0.5 * logvar)
    dmu += model.beta * mu / b
    dlogvar += model.beta * 0.5 * (np.exp(logvar) - 1.0) / b
    # clamp is flat outside its range
    dlogvar_raw = dlogvar * ((logvar_raw > LOGVAR_MIN) & (logvar_raw < LOGVAR_MAX))

    h_last = ctx["h_last"]
    g["w_mu"] = dmu.T @ h_last
    g["b_mu"] = dmu.sum(axis=0)
    g["w_logvar"] = dlogvar_raw.T @ h_last
    g["b_logvar"] = dlogvar_raw.sum(axis=0)

    dh_seq_e = np.zeros((b, t, model.hidden))
    dh_seq_e[:, -1] = dmu @ model.w_mu + dlogvar_raw @ model.w_logvar
    _, _, _, enc_g = _lstm_backward(model.enc, ctx["cache_e"], dh_seq_e)
    g["enc.w"], g["enc.u"], g["enc.b"] = enc_g["w"], enc_g["u"], enc_g["b"]

    return (total, recon, kl), g


def score_window(model: LstmVaeModel, window: np.ndarray) -> tuple[float, float]:
    """(final-timestep reconstruction MSE, posterior-vs-prior KL).

    Deterministic (z = mu). The final timestep is the one the window
    attributes its score to under stride-1 alignment.
    """
    out = forward(model, window)
    recon_last = float(out.sq_err[-1].mean())
    return recon_last, kl_gauss(out.mu, out.logvar)


def score_windows(model: LstmVaeModel, data: np.ndarray, batch_size: int = 1024):
    """Vectorized score_window over a (D, T, F) stack; returns (recon, kl) arrays."""
    d = data.shape[0]
    recon = np.empty(d)
    kl = np.empty(d)
    for lo in range(0, d, batch_size):
        hi = min(lo + batch_size, d)
        ctx = _forward_batch(model, data[lo:hi], None)
        recon[lo:hi] = ((ctx["x_hat"][:, -1] - data[lo:hi, -1]) ** 2).mean(axis=1)
        mu, logvar = ctx["mu"], ctx["logvar"]
        kl[lo:hi] = 0.5 * np.sum(mu**2 + np.exp(logvar) - 1.0 - logvar, axis=1)
    return recon, kl


@dataclass
class TrainConfig:
    """Mini-batch training hyperparameters.

    ``beta_warmup`` linearly anneals the KL weight from 0 to the
    model's beta over that many epochs; without it the KL pressure can
    collapse the posterior before the latent learns to carry signal.
    """

    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    clip_norm: float = 5.0
    val_fraction: float = 0.1
    patience: int = 5
    beta_warmup: int = 5

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ParameterError("epochs >= 0, batch_size >= 1, learning_rate > 0 required")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ParameterError("val_fraction must be in [0, 1)")
        if self.clip_norm <= 0 or self.patience < 1:
            raise ParameterError("clip_norm > 0 and patience >= 1 required")
        if self.beta_warmup < 0:
            raise ParameterError("beta_warmup must be >= 0")


@dataclass
class TrainingLog:
    """Per-epoch history plus how training ended."""

    epochs: list[dict] = field(default_factory=list)
    diverged: bool = False
    best_epoch: int = -1

    def to_csv(self) -> str:
        lines = ["epoch,recon,kl,val"]
        for row in self.epochs:
            lines.append(f"{row['epoch']},{row['recon']!r},{row['kl']!r},{row['val']!r}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {name: np.zeros_like(arr) for name, arr in params}
        self.v = {name: np.zeros_like(arr) for name, arr in params}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        correct1 = 1.0 - self.beta1**self.t
        correct2 = 1.0 - self.beta2**self.t
        for name, arr in params:
            gr = grads[name]
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * gr
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * gr**2
            arr -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((gr**2).sum()) for gr in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for gr in grads.values():
            gr *= scale


def _mean_loss(model: LstmVaeModel, data: np.ndarray, batch_size: int = 1024) -> float:
    if data.shape[0] == 0:
        return np.nan
    total = 0.0
    for lo in range(0, data.shape[0], batch_size):
        chunk = data[lo : lo + batch_size]
        ctx = _forward_batch(model, chunk, None)
        total += _loss_from_ctx(model, ctx)[0] * chunk.shape[0]
    return total / data.shape[0]


def train(model: LstmVaeModel, tensor: WindowedTensor, cfg: TrainConfig) -> tuple[LstmVaeModel, TrainingLog]:
    """Adam training with gradient clipping and early stopping.

    The input model is never mutated; the returned model carries the
    best-validation-loss parameters (last epoch if no validation split).
    Non-finite losses abort with the last finite checkpoint. Fully
    deterministic given cfg.seed.
    """
    if tensor.names != model.names:
        raise SchemaError(f"tensor features {tensor.names} != model features {model.names}")
    work = model.copy()
    log = TrainingLog()
    if cfg.epochs == 0:
        return work, log

    data = np.asarray(tensor.data, dtype=np.float64)
    d = data.shape[0]
    n_val = int(d * cfg.val_fraction)
    train_data = data[: d - n_val]
    val_data = data[d - n_val :]
    if train_data.shape[0] == 0:
        raise ParameterError("validation split leaves no training windows")

    rng = np.random.default_rng(cfg.seed)
    adam = _Adam(work.parameters(), cfg.learning_rate)
    best = work.copy()
    best_val = np.inf
    stale = 0

    target_beta = work.beta
    for epoch in range(cfg.epochs):
        if cfg.beta_warmup > 0:
            work.beta = target_beta * min(1.0, (epoch + 1) / cfg.beta_warmup)
        snapshot = work.copy()
        order = rng.permutation(train_data.shape[0])
        epoch_recon = 0.0
        epoch_kl = 0.0
        seen = 0
        try:
            for lo in range(0, order.size, cfg.batch_size):
                batch = train_data[order[lo : lo + cfg.batch_size]]
                eps = rng.standard_normal((batch.shape[0], work.latent))
                (_, recon, kl), grads = loss_and_grads(work, batch, eps)
                _clip_grads(grads, cfg.clip_norm)
                adam.step(work.parameters(), grads)
                epoch_recon += recon * batch.shape[0]
                epoch_kl += kl * batch.shape[0]
                seen += batch.shape[0]
            if any(not np.all(np.isfinite(arr)) for _, arr in work.parameters()):
                raise NumericError("non-finite parameter after optimizer step")
        except NumericError:
            log.diverged = True
            work = snapshot  # last good checkpoint
            work.beta = target_beta
            break

        work.beta = target_beta  # validation always at the target KL weight
        val = _mean_loss(work, val_data) if n_val > 0 else _mean_loss(work, train_data)
        log.epochs.append(
            {"epoch": epoch, "recon": epoch_recon / seen, "kl": epoch_kl / seen, "val": val}
        )
        if val < best_val - 1e-12:
            best_val = val
            best = work.copy()
            log.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    final = best if log.best_epoch >= 0 else work
    return final, log

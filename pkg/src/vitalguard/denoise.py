"""Signal denoising: truncated reverse diffusion plus a Wiener baseline.

The diffusion model is deliberately small: channels are standardized with
training-set statistics and treated as independent length-L slices, and a
single feed-forward epsilon-predictor (slice + sinusoidal step embedding)
is shared across channels.  Denoising injects the observation at the
diffusion step whose noise level matches the estimated corruption and runs
the deterministic reverse recursion down to step zero.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import BadStep, ModelNotReady, NoData
from .nets import MLP, Adam
from .persist import array_from_json, array_to_json, load_document, save_document


def make_beta_schedule(n_steps, beta_start, beta_end):
    betas = np.linspace(beta_start, beta_end, n_steps)
    alpha_bars = np.cumprod(1.0 - betas)
    return betas, alpha_bars


def step_embedding(t, dim, n_steps):
    """Sinusoidal embedding of diffusion step t, shape (dim,)."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


def forward_sample(alpha_bars, x0, t, rng):
    """Closed-form noising: x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    if not 0 <= t < len(alpha_bars):
        raise BadStep(f"step {t} outside [0, {len(alpha_bars)})")
    eps = rng.standard_normal(np.shape(x0))
    ab = alpha_bars[t]
    return np.sqrt(ab) * np.asarray(x0) + np.sqrt(1.0 - ab) * eps, eps


class DiffusionDenoiser(BaseEstimator, TransformerMixin):
    """Per-channel 1-D denoiser trained on clean windows.

    fit() expects an array of windows shaped (n, C, L); transform() maps
    noisy windows of the same shape to denoised ones.  The per-call noise
    level is ``delta_est`` (mean-relative, like the injection scenarios);
    an explicit per-channel noise sd can be supplied instead via
    ``noise_sd`` for sharper step matching.
    """

    def __init__(self, n_steps=100, beta_start=1e-4, beta_end=0.02,
                 hidden=96, embed_dim=16, epochs=40, lr=1e-3,
                 batch_size=256, seed=0, delta_est=0.0, reverse_stride=1,
                 augment=0, restore_mean=True, restore_var=True,
                 amp_jitter=0.0):
        self.n_steps = n_steps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.delta_est = delta_est
        self.reverse_stride = reverse_stride
        self.augment = augment
        self.restore_mean = restore_mean
        self.restore_var = restore_var
        self.amp_jitter = amp_jitter

    # --- training -----------------------------------------------------------

    def _embed_table(self):
        return np.stack([step_embedding(t, self.embed_dim, self.n_steps)
                         for t in range(self.n_steps)])

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.size == 0:
            raise NoData("empty training set")
        if X.ndim != 3:
            raise ValueError(f"expected (n, C, L) windows, got shape {X.shape}")
        n, C, L = X.shape
        self.window_len_ = L
        self.n_channels_ = C
        self.channel_mean_ = X.mean(axis=(0, 2))
        self.channel_std_ = np.maximum(X.std(axis=(0, 2)), 1e-6)
        slices = ((X - self.channel_mean_[None, :, None])
                  / self.channel_std_[None, :, None]).reshape(n * C, L)

        self.betas_, self.alpha_bars_ = make_beta_schedule(
            self.n_steps, self.beta_start, self.beta_end)
        rng = np.random.default_rng(self.seed)
        self.net_ = MLP([L + self.embed_dim, self.hidden, self.hidden, L], rng=rng)
        self._embeds = self._embed_table()
        self.loss_curve_ = self._train_epochs(slices, self.epochs, rng)
        if self.augment > 0:
            extra = self.sample(self.augment, rng)
            pool = np.concatenate([slices, extra], axis=0)
            self.loss_curve_ += self._train_epochs(pool, max(self.epochs // 4, 1), rng)
        return self

    def _train_epochs(self, slices, epochs, rng):
        opt = Adam(self.net_, lr=self.lr)
        losses = []
        n = slices.shape[0]
        for _ in range(epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                x0 = slices[idx]
                if self.amp_jitter > 0:
                    # oscillation strength varies across real windows; make
                    # it a direction of the learned manifold so the reverse
                    # pass preserves observed amplitude instead of
                    # normalizing it away
                    m = x0.mean(axis=1, keepdims=True)
                    s = rng.uniform(max(1.0 - self.amp_jitter, 0.0),
                                    1.0 + self.amp_jitter, size=(len(idx), 1))
                    x0 = m + s * (x0 - m)
                t = rng.integers(0, self.n_steps, size=len(idx))
                eps = rng.standard_normal(x0.shape)
                ab = self.alpha_bars_[t][:, None]
                xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
                inp = np.concatenate([xt, self._embeds[t]], axis=1)
                pred, cache = self.net_.forward(inp)
                diff = pred - eps
                loss = float(np.mean(diff ** 2))
                grads, _ = self.net_.backward(cache, 2.0 * diff / diff.size)
                opt.step(grads)
                epoch_loss += loss * len(idx)
            losses.append(epoch_loss / n)
        return losses

    # --- inference ----------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise ModelNotReady("denoiser is not trained")

    def predict_eps(self, xt, t):
        """Predicted noise for standardized slices xt (B, L) at step t."""
        emb = np.broadcast_to(self._embeds[t], (xt.shape[0], self.embed_dim))
        return self.net_.predict(np.concatenate([xt, emb], axis=1))

    def match_step(self, noise_to_signal_ratio):
        """Step whose noise level best matches (1-ab)/ab = ratio."""
        if noise_to_signal_ratio <= 0:
            return -1  # identity: nothing to remove
        levels = (1.0 - self.alpha_bars_) / self.alpha_bars_
        return int(np.argmin(np.abs(levels - noise_to_signal_ratio)))

    def _reverse_from(self, xt, t_star):
        """Deterministic reverse recursion t*..0; returns the x0 estimate."""
        t = t_star
        x = xt
        while True:
            ab = self.alpha_bars_[t]
            eps_hat = self.predict_eps(x, t)
            x0_hat = (x - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
            if t == 0:
                return x0_hat
            t_prev = max(t - self.reverse_stride, 0)
            ab_prev = self.alpha_bars_[t_prev]
            x = np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_hat
            t = t_prev

    def channel_steps(self, delta_est, noise_sd=None):
        """Matched step per channel for a mean-relative noise level."""
        self._check_fitted()
        if noise_sd is None:
            noise_sd = delta_est * np.abs(self.channel_mean_)
        ratios = (np.asarray(noise_sd) / self.channel_std_) ** 2
        return np.array([self.match_step(r) for r in ratios])

    def transform(self, X, noise_sd=None):
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        squeeze = X.ndim == 2
        if squeeze:
            X = X[None]
        if self.delta_est == 0 and noise_sd is None:
            return X[0].copy() if squeeze else X.copy()
        steps = self.channel_steps(self.delta_est, noise_sd)
        out = np.empty_like(X)
        std = ((X - self.channel_mean_[None, :, None])
               / self.channel_std_[None, :, None])
        if noise_sd is None:
            noise_sd = self.delta_est * np.abs(self.channel_mean_)
        ratios = (np.asarray(noise_sd) / self.channel_std_) ** 2
        for t_star in np.unique(steps):
            chans = np.flatnonzero(steps == t_star)
            block = std[:, chans, :].reshape(-1, self.window_len_)
            if t_star < 0:
                rec = block
            else:
                # sqrt(ab)*y has unit variance when the step matches the
                # corruption exactly; past the schedule's range the extra
                # factor renormalizes so the net never sees inputs far off
                # the forward-process marginal
                ab = self.alpha_bars_[t_star]
                row_ratio = np.tile(ratios[chans], X.shape[0])[:, None]
                scale = np.sqrt(ab) / np.sqrt(np.maximum(1.0, ab * (1.0 + row_ratio)))
                xt = scale * block
                rec = self._reverse_from(xt, int(t_star))
            rec = rec.reshape(X.shape[0], len(chans), self.window_len_)
            out[:, chans, :] = (rec * self.channel_std_[None, chans, None]
                                + self.channel_mean_[None, chans, None])
        if self.restore_var:
            # the reverse pass reconstructs shape but pulls oscillation
            # strength toward the training prior; with the noise level known,
            # the signal variance is recoverable by moment matching
            # (observed window variance minus noise variance), so rescale
            # each window's AC part to that estimate
            nv = np.asarray(noise_sd) ** 2  # (C,), broadcasts over (n, C)
            v_sig = np.maximum(X.var(axis=-1) - nv, 0.0)
            ac = out - out.mean(axis=-1, keepdims=True)
            gain = np.sqrt(v_sig / np.maximum(ac.var(axis=-1), 1e-300))
            out = out.mean(axis=-1, keepdims=True) + gain[..., None] * ac
        if self.restore_mean:
            # a window's mean is a low-noise statistic (1/sqrt(L) of the
            # per-sample noise); keep the observed one instead of whatever
            # level the reverse process settled on
            out += (X.mean(axis=-1) - out.mean(axis=-1))[..., None]
        return out[0] if squeeze else out

    def sample(self, n, rng):
        """Draw n synthetic standardized slices via the full reverse pass."""
        self._check_fitted()
        x = rng.standard_normal((n, self.window_len_))
        x *= np.sqrt(self.alpha_bars_[-1] + (1.0 - self.alpha_bars_[-1]))
        return self._reverse_from(x, self.n_steps - 1)

    # --- persistence --------------------------------------------------------

    def save(self, path):
        self._check_fitted()
        save_document(path, "diffusion-denoiser", {
            "params": self.get_params(),
            "window_len": self.window_len_,
            "n_channels": self.n_channels_,
            "channel_mean": array_to_json(self.channel_mean_),
            "channel_std": array_to_json(self.channel_std_),
            "net": self.net_.to_payload(),
            "loss_curve": self.loss_curve_,
        })

    @classmethod
    def load(cls, path):
        doc = load_document(path, "diffusion-denoiser")
        model = cls(**doc["params"])
        model.window_len_ = doc["window_len"]
        model.n_channels_ = doc["n_channels"]
        model.channel_mean_ = array_from_json(doc["channel_mean"])
        model.channel_std_ = array_from_json(doc["channel_std"])
        model.betas_, model.alpha_bars_ = make_beta_schedule(
            model.n_steps, model.beta_start, model.beta_end)
        model.net_ = MLP.from_payload(doc["net"])
        model._embeds = model._embed_table()
        model.loss_curve_ = doc["loss_curve"]
        return model


ESTIMATED = "estimated"


class WienerDenoiser(BaseEstimator, TransformerMixin):
    """Classical local-moment Wiener filter, per channel, per sample.

    x_hat(n) = mu_L(n) + max(var_L(n) - nv, 0) / max(var_L(n), nv)
               * (y(n) - mu_L(n))
    with mu_L/var_L the moments over a centered odd window and nv the noise
    variance: a fixed scalar, a per-channel array, or the classical
    estimate (channel mean of var_L) when set to "estimated".
    """

    def __init__(self, local_window=7, noise_var=ESTIMATED):
        self.local_window = local_window
        self.noise_var = noise_var

    def fit(self, X=None, y=None):
        if self.local_window < 3 or self.local_window % 2 == 0:
            raise ValueError("local_window must be an odd integer >= 3")
        return self

    def _local_moments(self, rows):
        """Edge-aware moving mean/variance over axis -1 for rows (B, L)."""
        L = rows.shape[-1]
        half = self.local_window // 2
        ones = np.ones(rows.shape[:-1] + (L,))
        kernel = np.ones(self.local_window)

        def mov(a):
            flat = a.reshape(-1, L)
            out = np.stack([np.convolve(r, kernel, mode="same") for r in flat])
            return out.reshape(a.shape)

        counts = mov(ones)
        mean = mov(rows) / counts
        var = mov(rows ** 2) / counts - mean ** 2
        return mean, np.maximum(var, 0.0), half

    def transform(self, X, noise_var=None):
        self.fit()
        X = np.asarray(X, dtype=np.float64)
        squeeze = X.ndim == 2
        if squeeze:
            X = X[None]
        nv = self.noise_var if noise_var is None else noise_var
        mean, var, _ = self._local_moments(X)
        if isinstance(nv, str):
            if nv != ESTIMATED:
                raise ValueError(f"unknown noise_var mode {nv!r}")
            nv_arr = var.mean(axis=2)[:, :, None]
        else:
            nv_arr = np.asarray(nv, dtype=np.float64)
            if nv_arr.ndim == 1:  # per channel
                nv_arr = nv_arr[None, :, None]
        gain = np.maximum(var - nv_arr, 0.0) / np.maximum(np.maximum(var, nv_arr), 1e-300)
        out = mean + gain * (X - mean)
        return out[0] if squeeze else out

    def wiener_gain(self, X, noise_var=None):
        """Expose the per-sample gain (in [0, 1]) for property checks."""
        X = np.asarray(X, dtype=np.float64)
        squeeze = X.ndim == 2
        if squeeze:
            X = X[None]
        nv = self.noise_var if noise_var is None else noise_var
        mean, var, _ = self._local_moments(X)
        if isinstance(nv, str):
            nv_arr = var.mean(axis=2)[:, :, None]
        else:
            nv_arr = np.asarray(nv, dtype=np.float64)
            if nv_arr.ndim == 1:
                nv_arr = nv_arr[None, :, None]
        gain = np.maximum(var - nv_arr, 0.0) / np.maximum(np.maximum(var, nv_arr), 1e-300)
        return gain[0] if squeeze else gain

"""Score-distillation guidance: schedules, CFG, SDS/DSD gradients, denoisers.

The denoiser is an abstraction: anything with predict(request) -> noise
array. Two backends exist: the closed-form Gaussian denoiser below (exact
MMSE noise prediction for a declared Gaussian or mixture data distribution,
used for testing and desk-scale runs) and the remote client in `remote.py`
that talks to the guidance service.

The distillation gradient never differentiates through the denoiser: the
returned per-element factor is injected as the seed gradient on the rendered
image, which chains it with the renderer Jacobian. The negative branch is
built from the cached previous-iteration render and is a constant w.r.t. the
field parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import autodiff as ad


class GuidanceConfigError(ValueError):
    pass


# -- noise schedules -----------------------------------------------------------

class NoiseSchedule:
    """alpha_bar as a function of continuous t in [0, 1].

    Families: "scaled_linear" (sqrt-space linear betas over `num_steps`
    discrete steps, interpolated in index space) and "cosine". Both satisfy
    alpha_bar(0) >= 0.999 and alpha_bar(1) <= 0.01, monotone nonincreasing.
    """

    def __init__(self, family: str = "scaled_linear", num_steps: int = 1000,
                 beta_start: float = 0.00085, beta_end: float = 0.012):
        self.family = family
        self.num_steps = num_steps
        self.beta_start = beta_start
        self.beta_end = beta_end
        if family == "scaled_linear":
            betas = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), num_steps) ** 2
            self._alpha_bar = np.cumprod(1.0 - betas)
        elif family == "cosine":
            s = 0.008
            steps = np.arange(num_steps + 1) / num_steps
            f = np.cos((steps + s) / (1.0 + s) * np.pi / 2.0) ** 2
            self._alpha_bar = (f / f[0])[1:]
        else:
            raise GuidanceConfigError(f"unknown schedule family {family!r}")
        self.validate()

    def alpha_bar(self, t: float) -> float:
        if not 0.0 <= t <= 1.0:
            raise GuidanceConfigError(f"timestep {t} outside [0, 1]")
        x = t * (self.num_steps - 1)
        i0 = int(np.clip(np.floor(x), 0, self.num_steps - 2))
        frac = x - i0
        return float(self._alpha_bar[i0] * (1.0 - frac) + self._alpha_bar[i0 + 1] * frac)

    def validate(self) -> None:
        if np.any(np.diff(self._alpha_bar) > 0):
            raise GuidanceConfigError("alpha_bar must be monotone nonincreasing")
        if self._alpha_bar[0] < 0.999:
            raise GuidanceConfigError("alpha_bar(0) must be >= 0.999")
        if self._alpha_bar[-1] > 0.01:
            raise GuidanceConfigError("alpha_bar(1) must be <= 0.01")

    def to_dict(self) -> dict:
        return {"family": self.family, "num_steps": self.num_steps,
                "beta_start": self.beta_start, "beta_end": self.beta_end}


def weight_for(t: float, schedule: NoiseSchedule, mode: str = "one") -> float:
    if mode == "one":
        return 1.0
    if mode == "one_minus_alpha":
        return 1.0 - schedule.alpha_bar(t)
    raise GuidanceConfigError(f"unknown w(t) mode {mode!r}")


# -- config / request types ------------------------------------------------------

@dataclass
class GuidanceConfig:
    lam: float = 0.5                    # negative-branch weight
    omega: float = 7.5                  # CFG scale (convention default; not a paper value)
    t_range: tuple[float, float] = (0.02, 0.98)
    w_mode: str = "one"
    prompt: str = ""
    negative_prompts: tuple[str, ...] = ("disfigured", "ugly")
    depth_conditioning: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise GuidanceConfigError(f"lambda must be in [0, 1), got {self.lam}")
        lo, hi = self.t_range
        if not (0.0 <= lo < hi <= 1.0):
            raise GuidanceConfigError(f"invalid t range {self.t_range}")

    @property
    def negative_prompt(self) -> str:
        return ", ".join(self.negative_prompts)


@dataclass
class DenoiserRequest:
    z_t: np.ndarray
    embedding: object            # prompt string (analytic) or embedding vector (remote)
    t: float
    depth: np.ndarray | None = None
    uncond: bool = False

    def __post_init__(self):
        self.z_t = np.asarray(self.z_t, dtype=np.float64)
        if not np.isfinite(self.z_t).all():
            raise GuidanceConfigError("noisy latent contains non-finite values")
        if not 0.0 <= self.t <= 1.0:
            raise GuidanceConfigError(f"timestep {self.t} outside schedule range")


@dataclass
class NegativeCache:
    """Previous iteration's render (and its depth), constant w.r.t. parameters."""
    latent: np.ndarray
    depth: np.ndarray | None
    iteration: int


class Denoiser(Protocol):
    def predict(self, request: DenoiserRequest) -> np.ndarray: ...


# -- core operations -----------------------------------------------------------------

def add_noise(z, eps: np.ndarray, t: float, schedule: NoiseSchedule):
    """Forward diffusion: sqrt(a_t) z + sqrt(1 - a_t) eps; differentiable in z."""
    eps = np.asarray(eps)
    z_shape = z.shape if isinstance(z, ad.Tensor) else np.shape(z)
    if tuple(z_shape) != eps.shape:
        raise ad.ShapeError(f"add_noise: z shape {tuple(z_shape)} != eps shape {eps.shape}")
    a = schedule.alpha_bar(t)
    scaled_noise = np.sqrt(1.0 - a) * eps
    if isinstance(z, ad.Tensor):
        return z * np.sqrt(a) + scaled_noise
    return np.sqrt(a) * np.asarray(z) + scaled_noise


def cfg_predict(denoiser: Denoiser, request: DenoiserRequest, omega: float) -> np.ndarray:
    """Classifier-free guidance: (1 + w) cond - w uncond."""
    cond = denoiser.predict(request)
    if omega == 0.0:
        return cond
    uncond = denoiser.predict(DenoiserRequest(
        z_t=request.z_t, embedding=request.embedding, t=request.t,
        depth=request.depth, uncond=True))
    return (1.0 + omega) * cond - omega * uncond


def sds_gradient(eps_hat: np.ndarray, eps: np.ndarray, w_t: float) -> np.ndarray:
    """Per-element distillation gradient factor w(t) (eps_hat - eps)."""
    return w_t * (np.asarray(eps_hat) - np.asarray(eps))


def dsd_gradient(eps_hat_pos: np.ndarray, eps_hat_neg: np.ndarray, eps: np.ndarray,
                 lam: float, w_t: float) -> np.ndarray:
    """Denoised distillation factor w(t) (pos - lam*neg - (1-lam)*eps).

    Both predictions must share the same timestep and noise draw; seed the
    result only on the current render (the negative branch is detached).
    """
    if not 0.0 <= lam < 1.0:
        raise GuidanceConfigError(f"lambda must be in [0, 1), got {lam}")
    return w_t * (np.asarray(eps_hat_pos) - lam * np.asarray(eps_hat_neg)
                  - (1.0 - lam) * np.asarray(eps))


def dsd_loss_from_predictions(pred_pos: np.ndarray, pred_neg: np.ndarray,
                              eps: np.ndarray, lam: float, w_t: float) -> float:
    """Scalar w(t)(||pos-eps||^2 - lam ||neg-eps||^2); may be negative."""
    pos = float(np.sum((np.asarray(pred_pos) - eps) ** 2))
    neg = float(np.sum((np.asarray(pred_neg) - eps) ** 2))
    return w_t * (pos - lam * neg)


def dsd_loss(denoiser: Denoiser, schedule: NoiseSchedule, z_i, z_prev,
             embedding, neg_embedding, t: float, eps: np.ndarray, lam: float,
             w_t: float, depth: np.ndarray | None = None,
             prev_depth: np.ndarray | None = None) -> float:
    """Logging loss built from fresh predictions on both branches."""
    z_t = add_noise(np.asarray(z_i), eps, t, schedule)
    z_t_prev = add_noise(np.asarray(z_prev), eps, t, schedule)
    pred_pos = denoiser.predict(DenoiserRequest(z_t, embedding, t, depth=depth))
    pred_neg = denoiser.predict(DenoiserRequest(z_t_prev, neg_embedding, t,
                                                depth=prev_depth))
    return dsd_loss_from_predictions(pred_pos, pred_neg, eps, lam, w_t)


# -- analytic test denoiser -------------------------------------------------------

@dataclass
class GaussianSpec:
    """Isotropic Gaussian data distribution N(mean, var I) in latent space."""
    mean: np.ndarray | tuple | float
    var: float = 0.0

    def __post_init__(self):
        if self.var < 0.0:
            raise GuidanceConfigError("variance must be nonnegative")

    def mean_image(self, shape) -> np.ndarray:
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.shape == tuple(shape):
            return mean
        return np.broadcast_to(mean, shape).astype(np.float64)


@dataclass
class MixtureSpec:
    components: tuple[tuple[float, GaussianSpec], ...]

    def __post_init__(self):
        total = sum(w for w, _ in self.components)
        if not self.components or abs(total - 1.0) > 1e-9:
            raise GuidanceConfigError("mixture weights must sum to 1")


def _gaussian_eps_hat(z_t: np.ndarray, alpha_bar: float, spec: GaussianSpec) -> np.ndarray:
    mu = spec.mean_image(z_t.shape)
    denom = alpha_bar * spec.var + (1.0 - alpha_bar)
    return np.sqrt(1.0 - alpha_bar) * (z_t - np.sqrt(alpha_bar) * mu) / denom


class AnalyticDenoiser:
    """Exact MMSE noise predictor for declared per-prompt data distributions.

    Prompts (embedding strings) map to GaussianSpec or MixtureSpec targets;
    unconditional calls and unknown prompts use the default spec. Serves as
    the test oracle standing in for a learned denoiser.
    """

    def __init__(self, schedule: NoiseSchedule, targets: dict | None = None,
                 default: GaussianSpec | MixtureSpec | None = None):
        self.schedule = schedule
        self.targets = targets or {}
        self.default = default if default is not None else GaussianSpec((0.5, 0.5, 0.5))

    def _spec_for(self, request: DenoiserRequest):
        if request.uncond:
            return self.default
        return self.targets.get(request.embedding, self.default)

    def predict(self, request: DenoiserRequest) -> np.ndarray:
        a = self.schedule.alpha_bar(request.t)
        spec = self._spec_for(request)
        z_t = request.z_t
        if isinstance(spec, GaussianSpec):
            return _gaussian_eps_hat(z_t, a, spec)
        # mixture: posterior-responsibility-weighted combination
        log_r = []
        preds = []
        d = z_t.size
        for w, comp in spec.components:
            mu = comp.mean_image(z_t.shape)
            s = a * comp.var + (1.0 - a)
            resid = float(np.sum((z_t - np.sqrt(a) * mu) ** 2))
            log_r.append(np.log(w) - 0.5 * d * np.log(s) - resid / (2.0 * s))
            preds.append(_gaussian_eps_hat(z_t, a, comp))
        log_r = np.asarray(log_r)
        r = np.exp(log_r - log_r.max())
        r /= r.sum()
        out = np.zeros_like(z_t)
        for weight, pred in zip(r, preds):
            out += weight * pred
        return out


class AnalyticBackend:
    """Guidance backend bridging the trainer to the analytic denoiser.

    Embeddings are the prompt strings themselves and CFG is applied
    client-side via cfg_predict.
    """

    name = "analytic"

    def __init__(self, denoiser: AnalyticDenoiser):
        self.denoiser = denoiser
        self.schedule = denoiser.schedule

    def embed(self, prompt: str) -> str:
        return prompt

    def predict(self, z_t: np.ndarray, embedding, t: float,
                depth: np.ndarray | None, omega: float) -> np.ndarray:
        request = DenoiserRequest(z_t=z_t, embedding=embedding, t=t, depth=depth)
        return cfg_predict(self.denoiser, request, omega)

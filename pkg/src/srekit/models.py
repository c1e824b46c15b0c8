"""Ready-made map sequences: AR(1), GARCH(1,1) and the joint mean/variance filter.

All models draw their innovations ``eps_t`` from a :class:`CounterStream`
keyed by ``(seed, replicate)``, so any two consumers asking for ``eps_t``
under the same key see the same number.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .core import StateSpace, Trajectory
from .errors import ConfigurationError, NumericError
from .sequences import AffineSequence, MapSequence, PerturbedSequence, run_forward
from .streams import CounterStream

DISTRIBUTIONS = ("standard_normal", "student_t", "rademacher", "lognormal", "degenerate")
DEFAULT_BURN_IN = 1000


@dataclass(frozen=True)
class NoiseSpec:
    """Law of the i.i.d. innovations.

    ``scale`` multiplies the base draw.  Student-t draws are rescaled to unit
    variance before ``scale`` is applied, which needs ``df > 2``.  The
    ``degenerate`` law is identically zero and exists so tests can use exact
    fixed-point oracles; statistical estimators refuse it.
    """

    distribution: str = "standard_normal"
    df: float | None = None
    meanlog: float = 0.0
    sdlog: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigurationError(f"unknown noise distribution {self.distribution!r}")
        if not self.is_degenerate and not self.scale > 0:
            raise ConfigurationError("noise scale must be > 0 (sigma^2 > 0)")
        if self.distribution == "student_t":
            if self.df is None or not self.df > 2:
                raise ConfigurationError("student_t needs df > 2 for a unit-variance scaling")
            if self.df <= 4:
                warnings.warn(
                    f"student_t with df={self.df}: fourth and higher moments are infinite",
                    stacklevel=3,
                )
        if self.distribution == "lognormal" and not self.sdlog >= 0:
            raise ConfigurationError("lognormal sdlog must be >= 0")

    @property
    def is_degenerate(self) -> bool:
        return self.distribution == "degenerate"

    @property
    def mean(self) -> float:
        if self.distribution == "lognormal":
            return self.scale * math.exp(self.meanlog + self.sdlog**2 / 2)
        return 0.0

    @property
    def variance(self) -> float:
        if self.is_degenerate:
            return 0.0
        if self.distribution == "lognormal":
            s2 = self.sdlog**2
            return self.scale**2 * math.expm1(s2) * math.exp(2 * self.meanlog + s2)
        return self.scale**2

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms on (0, 1) to draws of this law (inverse-CDF)."""
        u = np.asarray(u, dtype=np.float64)
        kind = self.distribution
        if kind == "standard_normal":
            return self.scale * special.ndtri(u)
        if kind == "student_t":
            return self.scale * special.stdtrit(self.df, u) * math.sqrt((self.df - 2) / self.df)
        if kind == "rademacher":
            return np.where(u < 0.5, -self.scale, self.scale)
        if kind == "lognormal":
            return self.scale * np.exp(self.meanlog + self.sdlog * special.ndtri(u))
        return np.zeros_like(u)

    def draw(self, seed: int, t_start: int, t_stop: int, replicate: int = 0, stream: int = 0) -> np.ndarray:
        """``eps_t`` for ``t_start <= t < t_stop`` from stream ``(seed, replicate, stream)``."""
        u = CounterStream(seed, replicate, stream).uniforms(t_start, t_stop)[:, 0]
        return self.transform(u)

    def require_centered(self, unit_variance: bool = False) -> None:
        if self.distribution == "lognormal":
            raise ConfigurationError("model innovations must have zero mean; lognormal is for lemma probes")
        if unit_variance and not self.is_degenerate and abs(self.variance - 1.0) > 1e-12:
            raise ConfigurationError("this model needs unit-variance innovations (scale = 1)")


@dataclass(frozen=True)
class ArParams:
    phi0: float
    phi1: float
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        self.noise.require_centered()
        if not self.noise.is_degenerate and not self.noise.variance > 0:
            raise ConfigurationError("AR innovations need variance sigma^2 > 0")

    @property
    def contractive(self) -> bool:
        """Informational only: ``|phi1| < 1``."""
        return abs(self.phi1) < 1


@dataclass(frozen=True)
class GarchParams:
    omega: float
    alpha: float
    beta: float
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        if not self.omega > 0:
            raise ConfigurationError("GarchParams: omega must be > 0")
        if not self.alpha >= 0:
            raise ConfigurationError("GarchParams: alpha must be >= 0")
        if not self.beta >= 0:
            raise ConfigurationError("GarchParams: beta must be >= 0")
        self.noise.require_centered(unit_variance=True)


@dataclass(frozen=True)
class JointFilterParams:
    """Mean recursion ``mu_t = omega_mu + alpha_mu Y_{t-1} + beta_mu mu_{t-1}`` and
    variance recursion ``sigma2_t = omega_sigma + alpha_sigma (Y_{t-1} - mu_{t-1})^2
    + beta_sigma sigma2_{t-1}``, with ``Y_t = mu_t + sigma_t eps_t``.

    ``mu_init`` and ``sigma2_init`` start the initialised filters.
    """

    omega_mu: float = 0.1
    alpha_mu: float = 0.1
    beta_mu: float = 0.5
    omega_sigma: float = 0.1
    alpha_sigma: float = 0.2
    beta_sigma: float = 0.7
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    mu_init: float = 0.0
    sigma2_init: float = 1.0

    def __post_init__(self):
        if not self.omega_sigma > 0:
            raise ConfigurationError("JointFilterParams: omega_sigma must be > 0")
        if not self.alpha_sigma >= 0:
            raise ConfigurationError("JointFilterParams: alpha_sigma must be >= 0")
        if not self.beta_sigma >= 0:
            raise ConfigurationError("JointFilterParams: beta_sigma must be >= 0")
        if not self.sigma2_init >= 0:
            raise ConfigurationError("JointFilterParams: sigma2_init must be >= 0")
        for name in ("omega_mu", "alpha_mu", "beta_mu", "mu_init"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f"JointFilterParams: {name} must be finite")
        self.noise.require_centered(unit_variance=True)


# AR(1) ------------------------------------------------------------------------


class ArSequence(AffineSequence):
    """``Phi_t(y) = phi0 + phi1 y + eps_t`` on the real line."""

    model_id = "ar"

    def __init__(self, params: ArParams, seed: int, replicate: int = 0):
        super().__init__(StateSpace.real(1), seed, params=params, replicate=replicate)

    def _coefficients(self, t_start, t_stop):
        p = self.params
        eps = p.noise.draw(self.seed, t_start, t_stop, self.replicate)
        a = (p.phi0 + eps)[:, None]
        b = np.full((len(eps), 1, 1), float(p.phi1))
        return a, b

    def _rebind(self, seed, replicate):
        return ArSequence(self.params, seed, replicate)


def make_ar(params: ArParams, seed: int, replicate: int = 0) -> ArSequence:
    return ArSequence(params, seed, replicate)


# GARCH(1,1) -------------------------------------------------------------------


class GarchDataSequence(AffineSequence):
    """Data-generating view: ``Phi_t(s) = omega + (alpha eps_{t-1}^2 + beta) s``."""

    model_id = "garch"

    def __init__(self, params: GarchParams, seed: int, replicate: int = 0):
        super().__init__(StateSpace.half_line(), seed, params=params, replicate=replicate)

    def _coefficients(self, t_start, t_stop):
        p = self.params
        eps = p.noise.draw(self.seed, t_start - 1, t_stop - 1, self.replicate)
        a = np.full((len(eps), 1), float(p.omega))
        b = (p.alpha * eps * eps + p.beta)[:, None, None]
        return a, b

    def _rebind(self, seed, replicate):
        return GarchDataSequence(self.params, seed, replicate)


class GarchFilterSequence(AffineSequence):
    """Filter view on a fixed path: ``Phi_t(s) = omega + alpha y_{t-1}^2 + beta s``."""

    model_id = "garch"

    def __init__(self, params: GarchParams, path: Trajectory, seed: int, replicate: int = 0):
        y = path.column("y") if path.labels and "y" in path.labels else path.states[:, 0]
        super().__init__(
            StateSpace.half_line(),
            seed,
            params=params,
            replicate=replicate,
            t_range=(path.t0 + 1, path.t_end + 1),
        )
        self.path = path
        self._y = np.asarray(y, dtype=np.float64)

    @property
    def data_token(self):
        return (self.seed, self.replicate, id(self.path))

    def _coefficients(self, t_start, t_stop):
        p = self.params
        k0 = t_start - 1 - self.path.t0
        y = self._y[k0 : k0 + (t_stop - t_start)]
        a = (p.omega + p.alpha * y * y)[:, None]
        b = np.full((len(y), 1, 1), float(p.beta))
        return a, b

    def stationary_states(self, n: int) -> np.ndarray:
        """Up to ``n`` true variances along the path, as ``(m, 1)`` states."""
        if not self.path.labels or "sigma2" not in self.path.labels:
            raise ConfigurationError("the observation path carries no variances")
        return self.path.column("sigma2")[:n, None]

    def _rebind(self, seed, replicate):
        return GarchFilterSequence(self.params, self.path, seed, replicate)


def garch_observations(
    params: GarchParams, seed: int, T: int, burn_in: int = DEFAULT_BURN_IN, replicate: int = 0
) -> Trajectory:
    """Returns ``Y_t`` and ``sigma2_t`` for ``t = 0..T`` after a burn-in from the
    unconditional variance (or ``omega`` when ``alpha + beta >= 1``)."""
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    data = GarchDataSequence(params, seed, replicate)
    persistence = params.alpha + params.beta
    s0 = params.omega / (1 - persistence) if persistence < 1 else params.omega
    states = run_forward(data, [s0], -burn_in + 1, burn_in + T)[burn_in:, 0]
    eps = params.noise.draw(seed, 0, T + 1, replicate)
    y = np.sqrt(states) * eps
    return Trajectory(
        0,
        np.column_stack([y, states]),
        meta={"seed": seed, "model_id": "garch", "variant": "observations", "replicate": replicate},
        labels=("y", "sigma2"),
    )


def make_garch(
    params: GarchParams,
    seed: int,
    view: str = "data_generating",
    path: Trajectory | None = None,
    replicate: int = 0,
) -> MapSequence:
    """GARCH(1,1) variance recursion as a map sequence.

    ``view="data_generating"`` gives random slopes ``alpha eps_{t-1}^2 + beta``;
    ``view="filter_given_path"`` filters a supplied observation path and has
    the constant slope ``beta``.
    """
    if view == "data_generating":
        return GarchDataSequence(params, seed, replicate)
    if view == "filter_given_path":
        if path is None:
            raise ConfigurationError("the filter_given_path view needs an observation path")
        return GarchFilterSequence(params, path, seed, replicate)
    raise ConfigurationError(f"unknown GARCH view {view!r}")


# joint mean/variance filter ---------------------------------------------------


class JointVarianceSequence(AffineSequence):
    """``Phi_t(s) = omega_sigma + alpha_sigma (Y_{t-1} - mu_{t-1})^2 + beta_sigma s`` on a path."""

    model_id = "joint_filter"

    def __init__(self, params: JointFilterParams, observations: Trajectory, seed: int, replicate: int,
                 T: int, burn_in: int):
        super().__init__(StateSpace.half_line(), seed, params=params, replicate=replicate, t_range=(1, T))
        self.observations = observations
        self.T = T
        self.burn_in = burn_in
        self._resid = observations.column("y") - observations.column("mu")

    @property
    def data_token(self):
        return (self.seed, self.replicate, id(self.observations))

    def _coefficients(self, t_start, t_stop):
        p = self.params
        r = self._resid[t_start - 1 : t_stop - 1]
        a = (p.omega_sigma + p.alpha_sigma * r * r)[:, None]
        b = np.full((len(r), 1, 1), float(p.beta_sigma))
        return a, b

    def stationary_states(self, n: int) -> np.ndarray:
        """Up to ``n`` true variances ``sigma2_t``, ``t >= 0``, as ``(m, 1)`` states."""
        return self.observations.column("sigma2")[:n, None]

    def _rebind(self, seed, replicate):
        return make_joint_filter(self.params, seed, self.T, self.burn_in, replicate).exact


@dataclass(frozen=True)
class JointFilter:
    """One simulated path of the joint model with its exact and initialised variance filters.

    ``mean_error[t]`` is ``mu_bar_t - mu_t`` propagated through its own
    recursion, so it stays accurate long after ``mu_bar_t`` and ``mu_t``
    agree to every printed digit.  ``perturbed_mean`` is the initialised mean
    filter computed directly.
    """

    params: JointFilterParams
    seed: int
    replicate: int
    observations: Trajectory
    exact: JointVarianceSequence
    perturbed: PerturbedSequence
    mean_error: np.ndarray
    perturbed_mean: np.ndarray

    @property
    def sigma2_0(self) -> float:
        """The stationary variance at ``t = 0`` (start of the exact filter)."""
        return float(self.observations.column("sigma2")[0])


def make_joint_filter(
    params: JointFilterParams,
    seed: int,
    T: int = 1000,
    burn_in: int = DEFAULT_BURN_IN,
    replicate: int = 0,
) -> JointFilter:
    """Simulate ``Y_t, mu_t, sigma2_t`` for ``t = 0..T`` and build both variance filters.

    The exact filter uses the true means ``mu_{t-1}``; the perturbed one uses
    the initialised means ``mu_bar_{t-1}`` started from ``params.mu_init``.
    Both read the same observation path.
    """
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    if burn_in < 0:
        raise ConfigurationError("burn_in must be >= 0")
    p = params
    eps = p.noise.draw(seed, -burn_in + 1, T + 1, replicate).tolist()
    pm = p.alpha_mu + p.beta_mu
    mu = p.omega_mu / (1 - pm) if abs(pm) < 1 else p.omega_mu
    ps = p.alpha_sigma + p.beta_sigma
    s2 = p.omega_sigma / (1 - ps) if ps < 1 else p.omega_sigma
    y = mu
    n = burn_in + T + 1
    ys, mus, s2s = [y], [mu], [s2]
    for k in range(1, n):
        mu, s2 = (p.omega_mu + p.alpha_mu * y + p.beta_mu * mu,
                  p.omega_sigma + p.alpha_sigma * (y - mu) ** 2 + p.beta_sigma * s2)
        y = mu + math.sqrt(s2) * eps[k - 1]
        if not (math.isfinite(y) and math.isfinite(s2)):
            raise NumericError("joint model path diverged", t=k - burn_in, model_id="joint_filter")
        ys.append(y)
        mus.append(mu)
        s2s.append(s2)
    obs = Trajectory(
        0,
        np.column_stack([ys[burn_in:], mus[burn_in:], s2s[burn_in:]]),
        meta={"seed": seed, "model_id": "joint_filter", "variant": "observations", "replicate": replicate},
        labels=("y", "mu", "sigma2"),
    )
    yv = obs.column("y")
    muv = obs.column("mu")

    mean_error = np.empty(T + 1)
    perturbed_mean = np.empty(T + 1)
    mean_error[0] = p.mu_init - muv[0]
    perturbed_mean[0] = p.mu_init
    for t in range(1, T + 1):
        mean_error[t] = p.beta_mu * mean_error[t - 1]
        perturbed_mean[t] = p.omega_mu + p.alpha_mu * yv[t - 1] + p.beta_mu * perturbed_mean[t - 1]

    exact = JointVarianceSequence(p, obs, seed, replicate, T, burn_in)
    resid = yv - muv
    alpha_s = p.alpha_sigma

    def deltas(t_start, t_stop):
        # (Y - mu_bar)^2 - (Y - mu)^2 = -e (2 (Y - mu) - e), with e = mu_bar - mu
        e = mean_error[t_start - 1 : t_stop - 1]
        r = resid[t_start - 1 : t_stop - 1]
        da = alpha_s * (-e) * (2.0 * r - e)
        return da[:, None], np.zeros((len(e), 1, 1))

    perturbed = PerturbedSequence(exact, deltas)
    mean_error.setflags(write=False)
    perturbed_mean.setflags(write=False)
    return JointFilter(p, seed, replicate, obs, exact, perturbed, mean_error, perturbed_mean)


# simulation -------------------------------------------------------------------


def simulate_observations(seq: MapSequence, y0, T: int) -> Trajectory:
    """Run ``Y_t = Phi_t(Y_{t-1})`` for ``T`` steps from ``y0``.

    The first map applied is ``Phi_{seq.first_t}``; the returned trajectory
    starts one index earlier, at the initial state.
    """
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    y0 = seq.space.check(y0)
    t_first = seq.first_t
    states = run_forward(seq, y0, t_first, T)
    meta = {
        "seed": seq.seed,
        "model_id": seq.model_id,
        "variant": seq.variant,
        "replicate": seq.replicate,
        "y0": tuple(float(v) for v in y0),
    }
    return Trajectory(t_first - 1, states, meta=meta)

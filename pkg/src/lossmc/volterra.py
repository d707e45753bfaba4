"""Path-space importance sampling for the continuous aggregate recursion.

The compound density solves a second-kind Volterra equation

    f(x) = g(x) + integral_0^x k(x, x1) f(x1) dx1,

whose Neumann series is realized stochastically: simulate strictly
decreasing Markov paths that absorb with probability P_d per step, and
weight each path by the product of kernel-to-proposal ratios.  The mean
weight at a point estimates the density there; weighted atoms over an
interval estimate the measure, and risk functionals follow from the
resulting empirical cdf.

Two estimator refinements are available on the sampler config:
``vr_pointwise`` splits off the analytically known first Neumann term
and simulates only the remainder (a smaller-space variance reduction,
default on for point-wise runs), and
``use_all_states`` accumulates the running weight against every visited
state rather than only the absorption endpoint, which removes the
1/P_d inflation of the endpoint estimator while staying unbiased --
each visited state contributes exactly one Neumann term in expectation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .compound import CompoundModel
from .distributions import GeneralizedPoissonFrequency, LogNormalSeverity
from .errors import (
    EmptyTailError,
    ProposalSupportError,
    SupportViolationError,
    TruncationError,
    UnsupportedModelError,
)
from .rng import PcgStream, UniformStream

POINTWISE_GRID = "pointwise_grid"
INTERVAL = "interval"

_DEAD_FLOOR = 1e-120  # states this small carry no representable density


# ---------------------------------------------------------------------------
# Kernel
# ---------------------------------------------------------------------------

@dataclass
class VolterraKernel:
    """The pair (g, k) of the aggregate-loss Volterra equation.

    ``g(x)`` is the inhomogeneous term p1 * f_X(x); ``k(x, x1)`` is the
    kernel evaluated with the convention k(x, x1) = 0 for x1 >= x, so
    paths must strictly decrease.
    """

    g: callable
    k: callable
    gpd_mode: bool = False


def build_volterra_kernel(model: CompoundModel) -> VolterraKernel:
    """Kernel for an (a, b, 0) or overdispersed generalized Poisson count.

    For (a, b, 0) members k(x, x1) = (a + b (x-x1)/x) f_X(x - x1); the
    binomial member has a < 0 which makes the kernel change sign and
    breaks the nonnegative-weight guarantees, so it is rejected here.
    The generalized Poisson mode uses p1(lam, theta) and the kernel
    (theta + lam (x-x1)/x) f_X(x-x1) * lam/(lam+theta), valid for
    dispersion theta >= 0.
    """
    freq = model.frequency
    sev = model.severity

    if isinstance(freq, GeneralizedPoissonFrequency):
        lam, th = freq.lam, freq.theta
        if th < 0.0:
            raise UnsupportedModelError(
                "negative dispersion gives a sign-changing kernel"
            )
        p1 = float(freq.pmf(1))
        scale = lam / (lam + th)

        def g(x):
            return p1 * sev.pdf(x)

        def k(x, x1):
            x = np.asarray(x, dtype=float)
            x1 = np.asarray(x1, dtype=float)
            u = x - x1
            val = scale * (th + lam * u / x) * sev.pdf(u)
            out = np.where(u > 0.0, val, 0.0)
            return out if out.ndim else float(out)

        return VolterraKernel(g=g, k=k, gpd_mode=True)

    params = freq.panjer()  # raises UnsupportedModelError for other kinds
    if params.a < 0.0:
        raise UnsupportedModelError(
            "binomial frequency yields a sign-changing Volterra kernel; "
            "use the discrete recursion oracle instead"
        )
    a, b = params.a, params.b
    p1 = float(freq.pmf(1))

    def g(x):
        return p1 * sev.pdf(x)

    def k(x, x1):
        x = np.asarray(x, dtype=float)
        x1 = np.asarray(x1, dtype=float)
        u = x - x1
        val = (a + b * u / x) * sev.pdf(u)
        out = np.where(u > 0.0, val, 0.0)
        return out if out.ndim else float(out)

    return VolterraKernel(g=g, k=k, gpd_mode=False)


# ---------------------------------------------------------------------------
# Initial laws and decrement proposals
# ---------------------------------------------------------------------------

@dataclass
class PointMass:
    """Point-wise mode: every path starts at exactly x0."""

    x0: float

    def __post_init__(self):
        if self.x0 <= 0.0:
            raise ValueError("start point must be positive")

    def sample(self, stream: UniformStream, size: int) -> np.ndarray:
        return np.full(size, self.x0)

    def density(self, x):
        # delta initialization: the weight formula uses mu(x0) = 1
        return np.ones_like(np.asarray(x, dtype=float))


@dataclass
class UniformInterval:
    """Interval mode: x0 uniform on [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.lo < self.hi):
            raise ValueError("need 0 <= lo < hi")

    def sample(self, stream: UniformStream, size: int) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * stream.uniforms(size)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)


@dataclass
class BetaProposal:
    """Multiplicative decrement: x1 = x * B with B ~ Beta(a, b).

    The multiplicative form keeps the support (0, x) automatically
    valid at every state.  Keep a <= 1 so the proposal density stays
    bounded away from zero where the kernel is not and the weight
    variance stays finite; the default (1, 1.2) mildly favours large
    decrements, which suits severity-dominated paths.
    """

    a: float = 1.0
    b: float = 1.2

    def __post_init__(self):
        if self.a <= 0.0 or self.b <= 0.0:
            raise ValueError("beta shapes must be positive")

    def sample(self, x, stream: UniformStream) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = stream.uniforms(x.size)
        frac = stats.beta.ppf(u, self.a, self.b)
        return x * frac

    def density(self, x, x1) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x1 = np.asarray(x1, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(x > 0.0, x1 / x, 0.0)
            pdf = stats.beta.pdf(frac, self.a, self.b)
            out = np.where((frac > 0.0) & (frac < 1.0), pdf / x, 0.0)
        return out


@dataclass
class SizeBiasedProposal:
    """Decrement u = x - x1 drawn proportional to u * f_X(u) on (0, x).

    For the Poisson kernel this makes every step's weight ratio
    k/M equal to lam * E[X; X <= x] / ((1 - P_d) x) -- a deterministic
    number -- so all weight randomness collapses into the path length
    and endpoint.  Implemented for lognormal severities, where the
    size-biased law is again lognormal (mu + sigma^2) and conditioning
    to (0, x) is a one-line quantile transform.
    """

    severity: LogNormalSeverity

    def __post_init__(self):
        if not isinstance(self.severity, LogNormalSeverity):
            raise UnsupportedModelError(
                "size-biased decrements implemented for lognormal severity"
            )

    def _cap(self, x):
        sev = self.severity
        return (np.log(x) - sev.mu - sev.sigma ** 2) / sev.sigma

    def sample(self, x, stream: UniformStream) -> np.ndarray:
        from .normal import norm_cdf, norm_quantile

        sev = self.severity
        x = np.asarray(x, dtype=float)
        cap = norm_cdf(self._cap(x))
        u01 = stream.uniforms(x.size)
        p = np.clip(u01 * cap, 1e-300, 1.0 - 1e-16)
        z = norm_quantile(p)
        decrement = np.exp(sev.mu + sev.sigma ** 2 + sev.sigma * z)
        return x - np.minimum(decrement, x)

    def density(self, x, x1) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x1 = np.asarray(x1, dtype=float)
        u = x - x1
        e1 = self.severity.partial_expectation(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where((u > 0.0) & (e1 > 0.0),
                           u * self.severity.pdf(u) / np.where(e1 > 0.0, e1, 1.0),
                           0.0)
        return out


# ---------------------------------------------------------------------------
# Sampler configuration and paths
# ---------------------------------------------------------------------------

@dataclass
class PathSamplerConfig:
    """Everything the absorbed-path sampler needs.

    ``proposal`` supplies the conditional move density q(x, .); the
    full transition is M(x, .) = (1 - p_d) q(x, .), which integrates to
    1 - p_d over (0, x) with the remaining p_d absorbed.
    """

    proposal: object
    p_d: float
    initial: object
    n_particles: int = 10_000
    vr_pointwise: bool = True
    use_all_states: bool = False

    def __post_init__(self):
        if not (0.0 < self.p_d <= 1.0):
            raise ValueError("absorption probability must lie in (0, 1]")
        if self.n_particles < 1:
            raise ValueError("need at least one particle")


def default_absorption(model: CompoundModel) -> float:
    """P_d = 1/(1 + E[N]): mean Neumann term count matches mean path length."""
    return 1.0 / (1.0 + model.frequency.mean())


@dataclass
class PathSample:
    """One absorbed path: states x0 > x1 > ... > x_n and its weight."""

    states: np.ndarray
    n: int
    weight: float = 0.0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if len(self.states) != self.n + 1:
            raise ValueError("path of length n has n+1 states")
        if np.any(np.diff(self.states) >= 0.0) or np.any(self.states <= 0.0):
            raise ValueError("states must be positive and strictly decreasing")
        if self.weight < 0.0 or not math.isfinite(self.weight):
            raise ValueError("weight must be finite and nonnegative")


def simulate_absorbed_path(cfg: PathSamplerConfig, rng: UniformStream) -> PathSample:
    """Reference scalar sampler: absorb w.p. p_d, else move down.

    Returns the path with a zero placeholder weight; pair it with
    :func:`path_weight`.  The vectorized estimators reproduce this
    logic batch-wise.
    """
    x = float(cfg.initial.sample(rng, 1)[0])
    states = [x]
    while True:
        if rng.next_uniform() <= cfg.p_d:
            break
        nxt = float(cfg.proposal.sample(np.array([x]), rng)[0])
        if not (0.0 < nxt < x):
            raise ProposalSupportError(
                f"proposal moved {x:.6g} -> {nxt:.6g}, outside (0, x)"
            )
        states.append(nxt)
        x = nxt
    return PathSample(states=np.array(states), n=len(states) - 1, weight=0.0)


def path_weight(path: PathSample, kernel: VolterraKernel,
                cfg: PathSamplerConfig) -> float:
    """Importance weight of one absorbed path.

    W = [1/mu(x0)] * prod_j k(x_{j-1}, x_j) / M(x_{j-1}, x_j)
        * g(x_n) / P_d,

    where M = (1 - P_d) q is the sub-stochastic transition; a path of
    length zero has W = g(x0) / (mu(x0) P_d).  In point-wise mode the
    delta initialization sets mu(x0) = 1.
    """
    x0 = path.states[0]
    if isinstance(cfg.initial, PointMass):
        mu0 = 1.0
    else:
        mu0 = float(cfg.initial.density(x0))
        if mu0 <= 0.0:
            raise SupportViolationError("initial density vanishes at x0")
    w = 1.0 / mu0
    for prev, cur in zip(path.states[:-1], path.states[1:]):
        q = float(cfg.proposal.density(np.array([prev]), np.array([cur]))[0])
        if q <= 0.0:
            raise SupportViolationError(
                f"proposal density is zero on the move {prev:.6g} -> {cur:.6g}"
            )
        w *= float(kernel.k(prev, cur)) / ((1.0 - cfg.p_d) * q)
    w *= float(kernel.g(path.states[-1])) / cfg.p_d
    if w < 0.0:
        raise ValueError("negative path weight; kernel/proposal mismatch")
    return w


# ---------------------------------------------------------------------------
# Weighted particle measures
# ---------------------------------------------------------------------------

@dataclass
class WeightedParticleMeasure:
    """Raw weighted atoms produced by the estimators.

    In ``pointwise_grid`` mode there is one atom per grid point whose
    weight is the estimated density there (plus its standard error in
    ``stderr``).  In ``interval`` mode there are n_paths atoms at the
    sampled start points carrying raw path weights, and cdf values are
    weight sums divided by n_paths.  ``zero_mass`` carries the genuine
    atom of the compound law at zero, P(N = 0); distribution-level
    queries add it on top of the continuous part, without it every
    cumulative answer would saturate below 1.
    """

    locations: np.ndarray
    weights: np.ndarray
    mode: str
    normalization: str = "raw"
    zero_mass: float = 0.0
    stderr: np.ndarray | None = None
    n_paths: int = 0

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.mode not in (POINTWISE_GRID, INTERVAL):
            raise ValueError(f"unknown measure mode {self.mode!r}")
        if len(self.locations) != len(self.weights):
            raise ValueError("locations and weights must align")
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be nonnegative")

    @property
    def atoms(self) -> np.ndarray:
        return np.column_stack([self.locations, self.weights])

    def _cell_widths(self) -> np.ndarray:
        if len(self.locations) == 1:
            return np.array([1.0])
        return np.gradient(self.locations)

    def probability_atoms(self):
        """(locations, probability weights) including the atom at zero."""
        if self.mode == POINTWISE_GRID:
            w = self.weights * self._cell_widths()
        else:
            if self.n_paths < 1:
                raise ValueError("interval measure lacks its path count")
            w = self.weights / self.n_paths
        locs = np.concatenate(([0.0], self.locations))
        w = np.concatenate(([self.zero_mass], w))
        order = np.argsort(locs, kind="stable")
        return locs[order], w[order]

    def cdf(self, z):
        """Estimated F_Z at z (scalar or array)."""
        locs, w = self.probability_atoms()
        cum = np.cumsum(w)
        idx = np.searchsorted(locs, np.asarray(z, dtype=float), side="right") - 1
        out = np.where(idx >= 0, cum[np.maximum(idx, 0)], 0.0)
        return out if out.ndim else float(out)

    def to_csv(self, path) -> None:
        """Write the measure as plot-ready CSV.

        Grid mode emits columns (x, density, stderr); interval mode
        emits the sorted probability atoms, zero atom included, as
        columns (x, weight, cumulative).
        """
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if self.mode == POINTWISE_GRID:
                writer.writerow(["x", "density", "stderr"])
                se = self.stderr if self.stderr is not None else np.zeros(len(self.weights))
                for x, d, s in zip(self.locations, self.weights, se):
                    writer.writerow([f"{x:.10g}", f"{d:.17g}", f"{s:.17g}"])
            else:
                writer.writerow(["x", "weight", "cumulative"])
                locs, w = self.probability_atoms()
                cum = np.cumsum(w)
                for x, wi, c in zip(locs, w, cum):
                    writer.writerow([f"{x:.10g}", f"{wi:.17g}", f"{c:.17g}"])


def quantile_from_measure(measure: WeightedParticleMeasure, p: float) -> float:
    """Generalized inverse of the particle cdf.

    Grid mode: smallest grid point whose width-weighted cumulative sum
    (plus the zero atom) reaches p.  Interval mode: smallest atom
    location with cumulative weight fraction >= p.
    """
    if not (0.0 < p <= 1.0):
        raise ValueError("quantile level must lie in (0, 1]")
    locs, w = measure.probability_atoms()
    cum = np.cumsum(w)
    if cum[-1] < p:
        raise TruncationError(
            f"accumulated particle mass {cum[-1]:.6f} < p = {p}; "
            "widen the grid or interval"
        )
    idx = int(np.searchsorted(cum, p, side="left"))
    return float(locs[idx])


def risk_measures_from_measure(measure: WeightedParticleMeasure, alpha: float,
                               phi=None):
    """(VaR, ES, SRM) read off the particle measure.

    ES is self-normalized over the tail atoms at and beyond the VaR --
    the raw weights target a density, so without renormalization the
    tail sum would estimate an unnormalized integral rather than a
    conditional mean.  The SRM weights each ordered atom's probability
    increment by phi evaluated at the cumulative probability.
    """
    var = quantile_from_measure(measure, alpha)
    locs, w = measure.probability_atoms()
    tail = locs >= var
    wt = w[tail]
    if wt.sum() <= 0.0:
        raise EmptyTailError(f"no particle mass at or beyond the {alpha} quantile")
    es = float(np.dot(locs[tail], wt) / wt.sum())
    srm = None
    if phi is not None:
        total = w.sum()
        wn = w / total
        cum = np.cumsum(wn)
        srm = float(np.dot(locs * np.asarray(phi(cum), dtype=float), wn))
    return var, es, srm


# ---------------------------------------------------------------------------
# Vectorized estimators
# ---------------------------------------------------------------------------

def _run_point_batch(x0: float, n: int, kernel: VolterraKernel,
                     cfg: PathSamplerConfig, stream: UniformStream) -> np.ndarray:
    """Per-particle density contributions at a single start point."""
    pd = cfg.p_d
    contrib = np.zeros(n)

    if cfg.use_all_states:
        # accumulate the running weight against every visited state;
        # the n = 0 term g(x0) is deterministic
        xc = np.full(n, x0)
        w = np.ones(n)
        contrib += kernel.g(x0)
        active = np.arange(n)
        while active.size:
            u = stream.uniforms(active.size)
            active = active[u > pd]
            if not active.size:
                break
            x1 = cfg.proposal.sample(xc[active], stream)
            q = cfg.proposal.density(xc[active], x1)
            ratio = np.where(q > 0.0, kernel.k(xc[active], x1) / ((1.0 - pd) * np.where(q > 0.0, q, 1.0)), 0.0)
            w[active] *= ratio
            xc[active] = x1
            contrib[active] += w[active] * kernel.g(x1)
            alive = (w[active] > 0.0) & (xc[active] > _DEAD_FLOOR)
            active = active[alive]
        return contrib

    if cfg.vr_pointwise and pd < 1.0:
        # simulate only the n >= 1 remainder: force the first move (its
        # ratio is k/q, absorbing the 1 - p_d prefactor) and add the
        # known first term analytically
        x1 = cfg.proposal.sample(np.full(n, x0), stream)
        q = cfg.proposal.density(np.full(n, x0), x1)
        w = np.where(q > 0.0, kernel.k(np.full(n, x0), x1) / np.where(q > 0.0, q, 1.0), 0.0)
        xc = x1
        active = np.arange(n)
        active = active[(w > 0.0) & (xc > _DEAD_FLOOR)]
        while active.size:
            u = stream.uniforms(active.size)
            absorbed = u <= pd
            idx = active[absorbed]
            contrib[idx] = w[idx] * kernel.g(xc[idx]) / pd
            active = active[~absorbed]
            if not active.size:
                break
            x1 = cfg.proposal.sample(xc[active], stream)
            q = cfg.proposal.density(xc[active], x1)
            ratio = np.where(q > 0.0, kernel.k(xc[active], x1) / ((1.0 - pd) * np.where(q > 0.0, q, 1.0)), 0.0)
            w[active] *= ratio
            xc[active] = x1
            alive = (w[active] > 0.0) & (xc[active] > _DEAD_FLOOR)
            active = active[alive]
        return kernel.g(x0) + contrib

    # plain absorbed-endpoint estimator
    xc = np.full(n, x0)
    w = np.ones(n)
    active = np.arange(n)
    while active.size:
        u = stream.uniforms(active.size)
        absorbed = u <= pd
        idx = active[absorbed]
        contrib[idx] = w[idx] * kernel.g(xc[idx]) / pd
        active = active[~absorbed]
        if not active.size:
            break
        x1 = cfg.proposal.sample(xc[active], stream)
        q = cfg.proposal.density(xc[active], x1)
        ratio = np.where(q > 0.0, kernel.k(xc[active], x1) / ((1.0 - pd) * np.where(q > 0.0, q, 1.0)), 0.0)
        w[active] *= ratio
        xc[active] = x1
        alive = (w[active] > 0.0) & (xc[active] > _DEAD_FLOOR)
        active = active[alive]
    return contrib


def estimate_density_grid(model: CompoundModel, grid, n_per_point: int,
                          cfg: PathSamplerConfig, rng: UniformStream) -> WeightedParticleMeasure:
    """Point-wise density estimates over a grid of evaluation points.

    Each grid point gets its own particle batch (and, when the stream
    supports spawning, its own substream, so estimates are reproducible
    point by point).  Per-point accumulation relies on numpy's pairwise
    summation, which keeps results independent of scheduling.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0.0):
        raise ValueError("grid points must be positive")
    kernel = build_volterra_kernel(model)
    streams = rng.spawn(len(grid)) if isinstance(rng, PcgStream) else [rng] * len(grid)
    est = np.empty(len(grid))
    se = np.empty(len(grid))
    n = int(n_per_point)
    for i, x0 in enumerate(grid):
        local = replace(cfg, initial=PointMass(x0))
        contrib = _run_point_batch(float(x0), n, kernel, local, streams[i])
        est[i] = contrib.mean()
        se[i] = contrib.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    return WeightedParticleMeasure(
        locations=grid, weights=est, mode=POINTWISE_GRID,
        zero_mass=float(model.frequency.pmf(0)), stderr=se, n_paths=n,
    )


def estimate_measure_interval(model: CompoundModel, interval, n_paths: int,
                              cfg: PathSamplerConfig, rng: UniformStream) -> WeightedParticleMeasure:
    """Weighted atoms over an interval of start points.

    Start points are drawn from the uniform initial law on the
    interval; each atom carries the full path weight including the
    1/mu(x0) factor, so (1/N) sum of weights below z estimates the
    continuous mass of (0, z].
    """
    x_a, x_b = float(interval[0]), float(interval[1])
    if not (0.0 <= x_a < x_b):
        raise ValueError("need an interval [x_a, x_b] with x_a < x_b")
    kernel = build_volterra_kernel(model)
    initial = UniformInterval(x_a, x_b)
    pd = cfg.p_d
    n = int(n_paths)
    stream = rng

    x0 = initial.sample(stream, n)
    mu0 = initial.density(x0)
    inv_mu = 1.0 / mu0

    if cfg.use_all_states:
        w = inv_mu.copy()
        acc = w * kernel.g(x0)
        xc = x0.copy()
        active = np.arange(n)
        while active.size:
            u = stream.uniforms(active.size)
            active = active[u > pd]
            if not active.size:
                break
            x1 = cfg.proposal.sample(xc[active], stream)
            q = cfg.proposal.density(xc[active], x1)
            ratio = np.where(q > 0.0, kernel.k(xc[active], x1) / ((1.0 - pd) * np.where(q > 0.0, q, 1.0)), 0.0)
            w[active] *= ratio
            xc[active] = x1
            acc[active] += w[active] * kernel.g(x1)
            alive = (w[active] > 0.0) & (xc[active] > _DEAD_FLOOR)
            active = active[alive]
        weights = acc
    else:
        weights = np.zeros(n)
        w = inv_mu.copy()
        xc = x0.copy()
        active = np.arange(n)
        while active.size:
            u = stream.uniforms(active.size)
            absorbed = u <= pd
            idx = active[absorbed]
            weights[idx] = w[idx] * kernel.g(xc[idx]) / pd
            active = active[~absorbed]
            if not active.size:
                break
            x1 = cfg.proposal.sample(xc[active], stream)
            q = cfg.proposal.density(xc[active], x1)
            ratio = np.where(q > 0.0, kernel.k(xc[active], x1) / ((1.0 - pd) * np.where(q > 0.0, q, 1.0)), 0.0)
            w[active] *= ratio
            xc[active] = x1
            alive = (w[active] > 0.0) & (xc[active] > _DEAD_FLOOR)
            active = active[alive]

    return WeightedParticleMeasure(
        locations=x0, weights=weights, mode=INTERVAL,
        zero_mass=float(model.frequency.pmf(0)), n_paths=n,
    )

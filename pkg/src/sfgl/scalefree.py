"""Heavy-tail analysis of degree samples.

Discrete power-law and exponential maximum-likelihood fits, log-binned
histograms, the expected hub size of a scale-free network, and a
preferential-attachment reference generator.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize, special

from .errors import ConfigError, DomainError, FitError


@dataclass(frozen=True)
class DegreeSample:
    degrees: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.degrees)
        if d.size == 0:
            raise DomainError("degree sample is empty")
        if not np.issubdtype(d.dtype, np.integer):
            if not np.all(np.isfinite(d)) or np.any(d != np.round(d)):
                raise DomainError("degrees must be integers")
        d = d.astype(np.int64).ravel()
        if np.any(d < 0):
            raise DomainError("degrees must be non-negative")
        object.__setattr__(self, "degrees", d)

    @property
    def n_zero(self) -> int:
        return int(np.count_nonzero(self.degrees == 0))

    @property
    def positive(self) -> np.ndarray:
        return self.degrees[self.degrees > 0]


def _sample(x) -> DegreeSample:
    return x if isinstance(x, DegreeSample) else DegreeSample(np.asarray(x))


@dataclass(frozen=True)
class PowerLawFit:
    alpha: float
    theta_min: int
    log_likelihood: float
    ks_stat: float
    n_tail: int
    n_zero: int = 0

    def to_dict(self) -> dict:
        return {"model": "powerlaw", **asdict(self)}


@dataclass(frozen=True)
class ExponentialFit:
    lam: float
    theta_min: int
    log_likelihood: float
    n_tail: int
    ks_stat: float = float("nan")
    n_zero: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        return {"model": "exponential", "lambda": d.pop("lam"), **d}


@dataclass(frozen=True)
class FitComparison:
    preferred: str  # "powerlaw" | "exponential" | "tie"
    log_likelihood_ratio: float  # powerlaw minus exponential

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LogBin:
    lo: float
    hi: float
    center: float
    density: float
    count: int


def log_binned_histogram(sample, bins_per_decade: int = 10) -> list[LogBin]:
    """Histogram of positive degrees over bins ``[10^(i/b), 10^((i+1)/b))``.

    Densities are count / (bin width * number of positive degrees), so they
    integrate to one. Only non-empty bins are returned.
    """
    if bins_per_decade < 1:
        raise DomainError("bins_per_decade must be >= 1")
    x = _sample(sample).positive
    if x.size == 0:
        raise DomainError("no positive degrees to histogram")
    n_bins = int(math.floor(math.log10(x.max()) * bins_per_decade + 1e-9)) + 1
    edges = 10.0 ** (np.arange(n_bins + 1) / bins_per_decade)
    # integer exponents of ten must land exactly on their bin edge
    whole = np.arange(0, n_bins + 1, bins_per_decade)
    edges[whole] = 10.0 ** (whole // bins_per_decade)
    idx = np.searchsorted(edges, x, side="right") - 1
    counts = np.bincount(idx, minlength=n_bins)[:n_bins]
    total = x.size
    out = []
    for i in np.flatnonzero(counts):
        lo, hi = edges[i], edges[i + 1]
        out.append(LogBin(lo, hi, math.sqrt(lo * hi), counts[i] / ((hi - lo) * total), int(counts[i])))
    return out


def hurwitz_zeta(s: float, q) -> np.ndarray:
    """sum_{j >= 0} (j + q)^(-s), the discrete power-law normalizer."""
    return special.zeta(s, q)


def _power_law_ll(alpha: float, n: int, sum_log: float, theta_min: int) -> float:
    return -alpha * sum_log - n * math.log(hurwitz_zeta(alpha, theta_min))


def _power_law_mle(tail: np.ndarray, theta_min: int) -> float:
    n = tail.size
    sum_log = float(np.log(tail).sum())
    # continuity-corrected closed form; biased for small theta_min, used only to size the bracket
    denom = float(np.log(tail / (theta_min - 0.5)).sum())
    guess = 1.0 + n / denom
    hi = max(20.0, 3.0 * guess)
    res = optimize.minimize_scalar(
        lambda a: -_power_law_ll(a, n, sum_log, theta_min),
        bounds=(1.0 + 1e-9, hi),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return float(res.x)


def power_law_cdf(x, alpha: float, theta_min: int) -> np.ndarray:
    """P(X <= x) for the discrete power law on ``{theta_min, theta_min+1, ...}``."""
    x = np.asarray(x, dtype=np.float64)
    return 1.0 - hurwitz_zeta(alpha, x + 1) / hurwitz_zeta(alpha, theta_min)


def _ks(tail: np.ndarray, cdf) -> float:
    vals, counts = np.unique(tail, return_counts=True)
    emp = np.cumsum(counts) / tail.size
    return float(np.max(np.abs(emp - cdf(vals))))


def _tail(x: np.ndarray, theta_min: int) -> np.ndarray:
    tail = x[x >= theta_min]
    if tail.size < 2:
        raise FitError(f"tail above theta_min={theta_min} has {tail.size} < 2 entries")
    if np.all(tail == tail[0]):
        raise FitError("degenerate tail: all degrees are equal")
    return tail


def _fit_at(x: np.ndarray, theta_min: int, n_zero: int) -> PowerLawFit:
    tail = _tail(x, theta_min)
    alpha = _power_law_mle(tail, theta_min)
    ll = _power_law_ll(alpha, tail.size, float(np.log(tail).sum()), theta_min)
    ks = _ks(tail, lambda v: power_law_cdf(v, alpha, theta_min))
    return PowerLawFit(alpha, int(theta_min), ll, ks, int(tail.size), n_zero)


def fit_power_law(sample, theta_min: int | None = None) -> PowerLawFit:
    """Discrete power-law MLE on the tail ``theta >= theta_min``.

    The exponent maximizes the exact discrete likelihood
    ``-alpha * sum(ln theta) - n * ln zeta(alpha, theta_min)``. Without an
    explicit cutoff, every integer from 1 to the 95th percentile of the
    positive degrees is tried and the one with the smallest KS distance wins
    (smallest cutoff on ties). Zero degrees never enter the tail.
    """
    s = _sample(sample)
    x = s.positive
    if x.size < 2 or np.unique(x).size < 2:
        raise FitError("need at least 2 distinct positive degrees")
    if theta_min is not None:
        if theta_min < 1:
            raise FitError("theta_min must be >= 1")
        return _fit_at(x, int(theta_min), s.n_zero)

    top = max(1, int(np.floor(np.percentile(x, 95))))
    best = None
    for t in range(1, top + 1):
        tail = x[x >= t]
        if tail.size < 2 or np.all(tail == tail[0]):
            continue
        fit = _fit_at(x, t, s.n_zero)
        if best is None or fit.ks_stat < best.ks_stat:
            best = fit
    if best is None:
        raise FitError("no admissible theta_min candidate")
    return best


def fit_exponential(sample, theta_min: int) -> ExponentialFit:
    """Discrete exponential MLE, ``P(theta) ~ exp(-lambda theta)`` for theta >= theta_min."""
    s = _sample(sample)
    x = s.positive if theta_min >= 1 else s.degrees
    tail = x[x >= theta_min]
    if tail.size == 0:
        raise FitError(f"no degrees at or above theta_min={theta_min}")
    excess = float(tail.mean()) - theta_min
    if excess <= 0:
        raise FitError("degenerate tail: mean equals theta_min")
    lam = math.log1p(1.0 / excess)
    n = tail.size
    ll = n * math.log(-math.expm1(-lam)) - lam * float((tail - theta_min).sum())

    def cdf(v):
        return -np.expm1(-lam * (np.asarray(v, dtype=np.float64) - theta_min + 1))

    return ExponentialFit(lam, int(theta_min), ll, int(n), _ks(tail, cdf), s.n_zero)


def compare_fits(pl: PowerLawFit, ex: ExponentialFit) -> FitComparison:
    if pl.theta_min != ex.theta_min or pl.n_tail != ex.n_tail:
        raise FitError(
            f"fits use different tails (theta_min {pl.theta_min} vs {ex.theta_min}, "
            f"n_tail {pl.n_tail} vs {ex.n_tail})"
        )
    r = pl.log_likelihood - ex.log_likelihood
    preferred = "powerlaw" if r > 0 else "exponential" if r < 0 else "tie"
    return FitComparison(preferred, float(r))


def expected_max_degree(theta_min: float, n_nodes: int, alpha: float) -> float:
    """Hub-size bound ``theta_min * n^(1/(alpha-1))`` of a scale-free network."""
    if alpha <= 1:
        raise DomainError("alpha must exceed 1")
    if theta_min < 1 or n_nodes < 1:
        raise DomainError("theta_min and n_nodes must be >= 1")
    return float(theta_min * n_nodes ** (1.0 / (alpha - 1.0)))


def sample_discrete_power_law(alpha: float, theta_min: int, size: int, rng=None,
                              table: int = 100_000) -> np.ndarray:
    """Inverse-CDF draws from the discrete power law.

    The CDF is tabulated exactly on ``[theta_min, theta_min + table)``;
    beyond that the continuity-corrected continuous tail is inverted.
    """
    if alpha <= 1:
        raise DomainError("alpha must exceed 1")
    rng = np.random.default_rng(rng)
    support = np.arange(theta_min, theta_min + table, dtype=np.float64)
    pmf = support ** -alpha / hurwitz_zeta(alpha, theta_min)
    cdf = np.cumsum(pmf)
    u = rng.random(size)
    out = np.searchsorted(cdf, u, side="left").astype(np.float64) + theta_min
    far = u > cdf[-1]
    if np.any(far):
        t0 = theta_min + table
        v = (u[far] - cdf[-1]) / (1.0 - cdf[-1])
        out[far] = np.floor((t0 - 0.5) * (1.0 - v) ** (-1.0 / (alpha - 1.0)) + 0.5)
    return out.astype(np.int64)


@dataclass(frozen=True, eq=False)
class UndirectedGraph:
    n_nodes: int
    edges: np.ndarray  # (E, 2), u < v

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)


def generate_ba_graph(n_nodes: int, m_attach: int, seed: int = 0) -> UndirectedGraph:
    """Preferential-attachment graph grown from an (m+1)-clique.

    Each arriving node links to ``m_attach`` distinct existing nodes drawn with
    probability proportional to their current degree.
    """
    m = int(m_attach)
    if m < 1 or n_nodes <= m:
        raise ConfigError(f"need n_nodes > m_attach >= 1, got n={n_nodes}, m={m}")
    rng = np.random.default_rng(seed)
    n_edges = m * (m + 1) // 2 + m * (n_nodes - m - 1)
    edges = np.empty((n_edges, 2), dtype=np.int64)
    # each edge contributes both endpoints, so a uniform draw is degree-proportional
    ends = np.empty(2 * n_edges, dtype=np.int64)
    e = 0
    for u in range(m + 1):
        for v in range(u + 1, m + 1):
            edges[e] = (u, v)
            ends[2 * e], ends[2 * e + 1] = u, v
            e += 1
    for new in range(m + 1, n_nodes):
        filled = 2 * e
        targets: list[int] = []
        while len(targets) < m:
            for t in ends[rng.integers(0, filled, size=m - len(targets))].tolist():
                if t not in targets and len(targets) < m:
                    targets.append(t)
        for t in sorted(targets):
            edges[e] = (t, new)
            ends[2 * e], ends[2 * e + 1] = t, new
            e += 1
    return UndirectedGraph(n_nodes, edges)

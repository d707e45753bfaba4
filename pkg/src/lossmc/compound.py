"""Crude Monte Carlo for the compound annual loss Z = sum of N severities."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .distributions import FrequencyModel, SeverityModel
from .rng import PcgStream, UniformStream, spawn_streams


@dataclass
class CompoundModel:
    """A frequency law paired with a severity law."""

    frequency: FrequencyModel
    severity: SeverityModel

    def mean(self) -> float:
        """E[Z] = E[N] E[X] (Wald identity)."""
        return self.frequency.mean() * self.severity.mean()

    def fingerprint(self) -> str:
        """Short stable digest of the model's kind and parameters."""
        payload = {"frequency": asdict(self.frequency),
                   "severity": asdict(self.severity)}
        text = json.dumps(payload, sort_keys=True)
        return hashlib.sha1(text.encode()).hexdigest()[:12]


@dataclass
class SampleBatch:
    """A batch of simulated annual losses.

    Fields
    ------
    values : array of annual losses, length ``count``
    seed : entropy of the stream that produced the batch (-1 when the
        stream does not carry one, e.g. a replayed fixed sequence)
    count : number of draws
    """

    values: np.ndarray
    seed: int
    count: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or len(self.values) != self.count:
            raise ValueError("values must be a vector of length count")
        if np.any(self.values < 0.0):
            raise ValueError("annual losses must be nonnegative")


def simulate_compound(model: CompoundModel, T: int, rng: UniformStream) -> SampleBatch:
    """Draw T independent annual losses.

    Counts come first (one block of uniforms), then all severities in
    one block, and the random sums are assembled by cumulative-sum
    differencing; N = 0 years contribute a zero loss.
    """
    T = int(T)
    if T < 1:
        raise ValueError("need at least one simulation")
    counts = np.atleast_1d(model.frequency.sample(rng, size=T))
    total = int(counts.sum())
    if total:
        xs = np.atleast_1d(model.severity.sample(rng, size=total))
        cs = np.concatenate(([0.0], np.cumsum(xs)))
        ends = np.cumsum(counts)
        z = cs[ends] - cs[ends - counts]
    else:
        z = np.zeros(T)
    seed = getattr(rng, "seed", -1)
    return SampleBatch(values=z, seed=seed if seed is not None else -1, count=T)


def simulate_compound_parallel(model: CompoundModel, T: int, seed: int,
                               threads: int = 1, chunk: int = 1_000_000) -> SampleBatch:
    """Chunked simulation with one child stream per chunk.

    Chunk i always uses substream i and outputs are concatenated in
    chunk order, so the batch is identical for any thread count.
    """
    T = int(T)
    n_chunks = max(1, (T + chunk - 1) // chunk)
    streams = spawn_streams(seed, n_chunks)
    sizes = [chunk] * (n_chunks - 1) + [T - chunk * (n_chunks - 1)]

    def run(i):
        return simulate_compound(model, sizes[i], streams[i]).values

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            parts = list(pool.map(run, range(n_chunks)))
    else:
        parts = [run(i) for i in range(n_chunks)]
    return SampleBatch(values=np.concatenate(parts), seed=int(seed), count=T)


def save_batch_csv(batch: SampleBatch, model: CompoundModel, path) -> None:
    """Persist a batch as CSV: one loss per line.

    The single header line names the model fingerprint and the seed so
    a saved batch can be matched back to the run that produced it.
    """
    with open(path, "w") as fh:
        fh.write(f"loss model={model.fingerprint()} seed={batch.seed}\n")
        for v in batch.values:
            fh.write(f"{v:.17g}\n")


def load_batch_csv(path):
    """Read a batch written by :func:`save_batch_csv`.

    Returns (batch, model_fingerprint); the seed is recovered from the
    header so downstream bookkeeping survives the round trip.
    """
    with open(path) as fh:
        header = fh.readline()
        m = re.match(r"loss model=([0-9a-f]+) seed=(-?\d+)", header)
        if m is None:
            raise ValueError(f"unrecognized batch header: {header!r}")
        values = np.array([float(line) for line in fh if line.strip()])
    batch = SampleBatch(values=values, seed=int(m.group(2)), count=len(values))
    return batch, m.group(1)


def empirical_quantile_ci(batch: SampleBatch, alpha: float, level: float):
    """Generalized-inverse sample quantile with order-statistic bounds.

    The point estimate is inf{x in the sorted sample : F_hat(x) >=
    alpha}.  The interval inverts the binomial law of the rank count
    (Clopper-Pearson style), so it is valid at extreme alpha without
    any normality assumption.
    """
    if batch.count == 0:
        raise RuntimeError("empty batch")
    if not (0.0 < alpha < 1.0) or not (0.0 < level < 1.0):
        raise ValueError("alpha and level must lie in (0, 1)")
    s = np.sort(batch.values)
    T = batch.count
    k = int(np.ceil(alpha * T))
    point = s[max(k, 1) - 1]
    tail = 0.5 * (1.0 - level)
    lo_rank = int(stats.binom.ppf(tail, T, alpha))
    hi_rank = int(stats.binom.ppf(1.0 - tail, T, alpha)) + 1
    lo_rank = min(max(lo_rank, 1), T)
    hi_rank = min(max(hi_rank, 1), T)
    return float(point), float(s[lo_rank - 1]), float(s[hi_rank - 1])


def tail_probability_mc(batch: SampleBatch, threshold: float):
    """Fraction of the batch above the threshold, with its variance.

    The estimator is unbiased for P(Z > threshold) and its variance is
    estimate * (1 - estimate) / T.
    """
    if batch.count == 0:
        raise RuntimeError("empty batch")
    est = float(np.mean(batch.values > threshold))
    return est, est * (1.0 - est) / batch.count

"""Point samplers and the foreground-density audit.

`biased_sample` reproduces a double-sampling scheme that draws a
proportional quota from the foreground set and then the remainder from
the whole cloud, so foreground points can be drawn twice and end up
denser in the output. `uniform_sample` is the corrected, unbiased
sampler. `leakage_audit` measures the disparity by Monte Carlo and,
for the biased sampler, against the closed-form expectation f(2-f).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud


@dataclass
class DensityReport:
    """Foreground-density statistics for one sampler on one cloud."""

    input_fg_fraction: float
    mean_output_fg_fraction: float
    expected_biased_fraction: float
    density_ratio: float
    trials: int

    def to_text(self) -> str:
        """Flat key=value block, one line per field."""
        return (
            f"input_fg_fraction={self.input_fg_fraction:.17g}\n"
            f"mean_output_fg_fraction={self.mean_output_fg_fraction:.17g}\n"
            f"expected_biased_fraction={self.expected_biased_fraction:.17g}\n"
            f"density_ratio={self.density_ratio:.17g}\n"
            f"trials={self.trials}\n"
        )


def uniform_sample(cloud: PointCloud, m: int, rng_seed: int) -> PointCloud:
    """Draw m points uniformly: without replacement when n >= m, with when n < m."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    n = len(cloud)
    if n == 0:
        raise ValueError("cannot sample from an empty cloud")
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(n, size=m, replace=n < m)
    return cloud.take(idx)


def biased_fg_count(n: int, m: int, n_fg_points: int) -> int:
    """Foreground quota of the biased sampler: |P_fg| when n < m, else floor(m*|P_fg|/n)."""
    if n < m:
        return n_fg_points
    return (m * n_fg_points) // n


def biased_sample(cloud: PointCloud, m: int, fg_class: int, rng_seed: int) -> PointCloud:
    """Draw m points with the foreground double-sampled.

    A quota of foreground points is drawn (without replacement) from the
    points labeled `fg_class`; the remaining points are drawn from the
    entire cloud, foreground included. The two draws are concatenated as
    a multiset, so foreground points may appear twice -- that duplication
    is exactly what inflates foreground density.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    n = len(cloud)
    if n == 0:
        raise ValueError("cannot sample from an empty cloud")
    rng = np.random.default_rng(rng_seed)
    fg_idx = np.flatnonzero(cloud.labels == fg_class)
    n_fg = biased_fg_count(n, m, fg_idx.size)
    res1 = rng.choice(fg_idx, size=n_fg, replace=False) if n_fg > 0 else np.empty(0, dtype=np.int64)
    rest = m - n_fg
    res2 = rng.choice(n, size=rest, replace=rest > n) if rest > 0 else np.empty(0, dtype=np.int64)
    return cloud.take(np.concatenate([res1, res2]))


def cap_points(cloud: PointCloud, max_points: int, rng_seed: int) -> PointCloud:
    """Identity when the cloud fits, else a uniform draw of `max_points`."""
    if max_points < 1:
        raise ValueError(f"max_points must be >= 1, got {max_points}")
    if len(cloud) <= max_points:
        return cloud
    return uniform_sample(cloud, max_points, rng_seed)


_SAMPLERS = {"biased": biased_sample, "uniform": uniform_sample}


def leakage_audit(
    cloud: PointCloud,
    fg_class: int,
    m: int,
    sampler: str,
    trials: int,
    rng_seed: int,
) -> DensityReport:
    """Run a sampler `trials` times and report mean output foreground fraction.

    Trial t uses seed rng_seed + t, so audits are reproducible and trials
    could run in parallel. The expected fraction is computed from the
    biased sampler's quota rule (equal to the input fraction for the
    uniform sampler); for n >= m it reduces to f(2-f).
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if sampler not in _SAMPLERS:
        raise ValueError(f"sampler must be one of {sorted(_SAMPLERS)}, got {sampler!r}")
    n = len(cloud)
    n_fg_points = int((cloud.labels == fg_class).sum())
    f_in = n_fg_points / n

    fractions = np.empty(trials, dtype=np.float64)
    for t in range(trials):
        if sampler == "biased":
            out = biased_sample(cloud, m, fg_class, rng_seed + t)
        else:
            out = uniform_sample(cloud, m, rng_seed + t)
        fractions[t] = (out.labels == fg_class).mean()
    mean_out = float(fractions.mean())

    if sampler == "biased":
        n_fg = biased_fg_count(n, m, n_fg_points)
        expected = (n_fg + (m - n_fg) * f_in) / m
    else:
        expected = f_in

    ratio = mean_out / f_in if f_in > 0 else 0.0
    return DensityReport(
        input_fg_fraction=f_in,
        mean_output_fg_fraction=mean_out,
        expected_biased_fraction=float(expected),
        density_ratio=float(ratio),
        trials=trials,
    )

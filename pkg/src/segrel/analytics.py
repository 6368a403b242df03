"""Cross-model analytics: correlation, regression, subsampling, Fréchet.

The Student-t quantile used for regression confidence bands is computed
from the regularized incomplete beta function (continued-fraction
evaluation, 1e-12 tolerance) rather than a statistics library, so results
are reproducible from the written-down algorithm alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import EmptyInputError, ZeroVarianceError
from .rng import derive_stream
from .types import EmbeddingSet


@dataclass(frozen=True)
class ModelMetricVector:
    """Per-model metric values keyed by condition tag (e.g. "cityscapes",
    "syn:night", "acdc:night")."""

    model_id: str
    entries: dict[str, float]

    def __post_init__(self):
        for tag, value in self.entries.items():
            if not math.isfinite(value):
                raise ValueError(f"{self.model_id}/{tag}: non-finite metric {value}")


def pearson(x, y) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"vectors must share 1-D shape, got {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValueError(f"need at least 2 points, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVarianceError("correlation undefined for a constant vector")
    return float((dx @ dy) / math.sqrt(sxx * syy))


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    ci_level: float
    se_slope: float
    se_intercept: float
    n: int
    residual_se: float
    x_mean: float
    s_xx: float

    def predict(self, xs) -> np.ndarray:
        return self.slope * np.asarray(xs, dtype=np.float64) + self.intercept


def ols_fit(x, y, ci_level: float = 0.95) -> RegressionFit:
    """Least-squares line with standard errors from residual variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"vectors must share 1-D shape, got {x.shape} vs {y.shape}")
    n = x.size
    if n < 3:
        raise ValueError(f"need at least 3 points for a fit with CI, got {n}")
    if not 0.0 < ci_level < 1.0:
        raise ValueError(f"ci_level must lie in (0, 1), got {ci_level}")
    xm = float(x.mean())
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise ZeroVarianceError("regression undefined for constant x")
    slope = float((dx @ y) / sxx)
    intercept = float(y.mean() - slope * xm)
    resid = y - (slope * x + intercept)
    s2 = float(resid @ resid) / (n - 2)
    residual_se = math.sqrt(s2)
    return RegressionFit(
        slope=slope,
        intercept=intercept,
        ci_level=ci_level,
        se_slope=math.sqrt(s2 / sxx),
        se_intercept=math.sqrt(s2 * (1.0 / n + xm * xm / sxx)),
        n=n,
        residual_se=residual_se,
        x_mean=xm,
        s_xx=sxx,
    )


def confidence_band(fit: RegressionFit, xs) -> np.ndarray:
    """Half-width of the CI band for the mean response at each x
    (t-distributed with n-2 degrees of freedom; minimal at x = x̄)."""
    xs = np.asarray(xs, dtype=np.float64)
    tq = student_t_ppf(1.0 - (1.0 - fit.ci_level) / 2.0, fit.n - 2)
    lever = 1.0 / fit.n + (xs - fit.x_mean) ** 2 / fit.s_xx
    return tq * fit.residual_se * np.sqrt(lever)


def relative_to_reference(values, ref_index: int) -> np.ndarray:
    """Percent change of each value relative to values[ref_index]."""
    v = np.asarray(values, dtype=np.float64)
    if not 0 <= ref_index < v.size:
        raise ValueError(f"ref_index {ref_index} outside [0, {v.size})")
    ref = v[ref_index]
    if ref == 0.0:
        raise ZeroDivisionError("reference value is zero")
    return 100.0 * (v - ref) / ref


# --- regularized incomplete beta / Student-t quantile -----------------------

_BETA_TOL = 1e-12
_BETA_FPMIN = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETA_FPMIN:
        d = _BETA_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_FPMIN:
            d = _BETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETA_FPMIN:
            c = _BETA_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_FPMIN:
            d = _BETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETA_FPMIN:
            c = _BETA_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_TOL:
            break
    return h


def betainc_regularized(a: float, b: float, x: float) -> float:
    """I_x(a, b), the regularized incomplete beta function."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, dof: int) -> float:
    if dof < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {dof}")
    if t == 0.0:
        return 0.5
    x = dof / (dof + t * t)
    tail = 0.5 * betainc_regularized(dof / 2.0, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def student_t_ppf(p: float, dof: int) -> float:
    """Quantile of the Student-t distribution by bisection on the CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -student_t_ppf(1.0 - p, dof)
    hi = 1.0
    while student_t_cdf(hi, dof) < p and hi < 1e12:
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if student_t_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


# --- Fréchet distance --------------------------------------------------------

_EIG_CLAMP_REL = 1e-10


def _clamped_eigh(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sym = (mat + mat.T) * 0.5
    w, v = np.linalg.eigh(sym)
    top = max(float(w.max()), 0.0)
    w = np.where(w > _EIG_CLAMP_REL * top, w, 0.0)
    return w, v


def frechet_distance(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """Gaussian-to-Gaussian distance between two embedding sets:

        ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))

    with sample covariances (denominator n-1). The matrix square root is
    taken through the symmetric eigendecomposition of
    S_a^(1/2) S_b S_a^(1/2), eigenvalues clamped at 0.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    xa = a.data
    xb = b.data
    mu_a = xa.mean(axis=0)
    mu_b = xb.mean(axis=0)
    cov_a = np.cov(xa, rowvar=False, ddof=1).reshape(a.dim, a.dim)
    cov_b = np.cov(xb, rowvar=False, ddof=1).reshape(b.dim, b.dim)
    wa, va = _clamped_eigh(cov_a)
    sqrt_a = (va * np.sqrt(wa)) @ va.T
    inner = sqrt_a @ cov_b @ sqrt_a
    wi, _ = _clamped_eigh(inner)
    tr_sqrt = float(np.sqrt(wi).sum())
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return max(value, 0.0)


# --- subsample study ----------------------------------------------------------


@dataclass(frozen=True)
class SubsampleRow:
    n: int
    pcc_mean: float
    pcc_std: float


def subsample_study(
    per_image_values: Mapping[str, Sequence],
    reference: Mapping[str, float],
    n_grid: Sequence[int],
    repeats: int,
    seed: int,
    aggregate: Callable[[list], float] | None = None,
) -> list[SubsampleRow]:
    """Stability of the cross-model correlation as a function of sample count.

    For each n and repeat, one subset of image indices is drawn without
    replacement (shared across models, stream keyed by (seed, n, repeat)),
    each model's aggregate metric is recomputed on the subset, and the PCC
    against the reference vector is recorded. Subset indices are sorted
    before aggregation so the result is independent of draw order.
    """
    models = sorted(per_image_values)
    if not models:
        raise EmptyInputError("no models given")
    missing = [m for m in models if m not in reference]
    if missing:
        raise ValueError(f"reference is missing models: {missing}")
    m = len(per_image_values[models[0]])
    for model in models:
        if len(per_image_values[model]) != m:
            raise ValueError("all models must share the same image set")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    agg = aggregate if aggregate is not None else (lambda vals: float(np.mean(vals)))
    ref_vec = np.array([reference[model] for model in models], dtype=np.float64)
    rows = []
    for n in n_grid:
        if not 1 <= n <= m:
            raise ValueError(f"subsample size {n} outside [1, {m}]")
        pccs = np.empty(repeats, dtype=np.float64)
        for r in range(repeats):
            stream = derive_stream(seed, "subsample", n, r)
            idx = sorted(stream.sample_indices(m, n))
            vec = np.array(
                [agg([per_image_values[model][i] for i in idx]) for model in models],
                dtype=np.float64,
            )
            pccs[r] = pearson(vec, ref_vec)
        # identical repeats mean zero sampling variability, exactly
        std = 0.0 if pccs.min() == pccs.max() else float(pccs.std())
        rows.append(SubsampleRow(int(n), float(pccs.mean()), std))
    return rows

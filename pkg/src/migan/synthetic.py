"""
Synthetic blockwise-MAR benchmark data.

Features come from an AR(1) chain, get reordered so that every fifth pair
of indices lands in the two trailing blocks, and drive a linear response.
Each trailing block is blanked row-wise by its own logistic MAR indicator
that depends only on the always-observed leading block and on ``y``.

Column numbers in :class:`SyntheticSpec` (``q``) are 1-based, as in the
usual description of this design; arrays are 0-based.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError
from .patterns import IncompleteMatrix, write_csv

DEFAULT_PREDICTORS = {251: (210, 220, 230), 501: (380, 400, 420), 1501: (1100, 1200, 1300)}
DEFAULT_MAR_COEFFS = ((1.0, -2.0, 3.0), (0.0, 2.0, -2.0))


def scaled_predictors(p: int) -> tuple[int, int, int]:
    """Predictor columns for ``p``; other sizes rescale the p=251 choice."""
    if p in DEFAULT_PREDICTORS:
        return DEFAULT_PREDICTORS[p]
    d = p - 1
    q = [max(1, int(round(v * d / 250))) for v in DEFAULT_PREDICTORS[251]]
    # small p can round two predictors onto one column
    for i in (1, 2):
        q[i] = max(q[i], q[i - 1] + 1)
    shift = max(0, q[2] - d)
    return tuple(v - shift for v in q)


@dataclass
class SyntheticSpec:
    n: int = 200
    p: int = 251
    rho: float = 0.9
    noise_sd: float = 0.1
    q: Optional[tuple] = None
    beta: tuple = (1.0, 1.0, 1.0)
    sigma1: float = 1.0
    mar_coeffs: tuple = DEFAULT_MAR_COEFFS
    seed: int = 0

    def __post_init__(self):
        if self.q is None:
            self.q = scaled_predictors(self.p)
        self.q = tuple(int(v) for v in self.q)
        self.beta = tuple(float(b) for b in self.beta)
        self.mar_coeffs = tuple(tuple(float(c) for c in t) for t in self.mar_coeffs)
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.p < 6 or self.p % 5 != 1:
            raise ConfigError(f"p must be >= 6 and p = 1 (mod 5), got {self.p}")
        if len(self.q) != 3 or len(self.beta) != 3:
            raise ConfigError("need exactly three predictors and coefficients")
        if not all(1 <= v <= self.p - 1 for v in self.q):
            raise ConfigError(f"predictors {self.q} outside 1..{self.p - 1}")
        if len(set(self.q)) != 3:
            raise ConfigError(f"predictors {self.q} are not distinct")
        if len(self.mar_coeffs) != 2 or any(len(t) != 3 for t in self.mar_coeffs):
            raise ConfigError("mar_coeffs must be two (intercept, feature, y) triples")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown synthetic options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["q"] = list(self.q)
        d["beta"] = list(self.beta)
        d["mar_coeffs"] = [list(t) for t in self.mar_coeffs]
        return d

    @property
    def blocks(self) -> tuple[range, range]:
        """0-based feature columns of the two maskable blocks."""
        d = self.p - 1
        return range(3 * d // 5, 4 * d // 5), range(4 * d // 5, d)


@dataclass
class GeneratedDataset:
    X: np.ndarray
    y: np.ndarray
    truth: np.ndarray
    mask: np.ndarray
    beta_true: tuple
    R: np.ndarray = field(repr=False, default=None)

    @property
    def data(self) -> IncompleteMatrix:
        return IncompleteMatrix(self.truth, self.mask)


def gen_ar1(n: int, d: int, rho: float, noise_sd: float, rng: np.random.Generator) -> np.ndarray:
    """Rows of an AR(1) chain started from N(0, 1)."""
    if d < 1:
        raise ValueError("d must be >= 1")
    A = np.empty((n, d))
    A[:, 0] = rng.standard_normal(n)
    eps = rng.standard_normal((n, d - 1)) * noise_sd
    for j in range(1, d):
        A[:, j] = rho * A[:, j - 1] + eps[:, j - 1]
    return A


def reorder_index(d: int) -> np.ndarray:
    """0-based source column for each output column.

    1-based indices congruent to 4 (mod 5) move to the end first, then those
    congruent to 0; both groups keep their original order.
    """
    idx = np.arange(1, d + 1)
    keep = idx[(idx % 5 != 4) & (idx % 5 != 0)]
    return np.concatenate([keep, idx[idx % 5 == 4], idx[idx % 5 == 0]]) - 1


def reorder_features(A: np.ndarray) -> np.ndarray:
    return A[:, reorder_index(A.shape[1])]


def gen_response(X: np.ndarray, q: Sequence[int], beta: Sequence[float], sigma1: float,
                 rng: np.random.Generator) -> np.ndarray:
    cols = np.asarray(q, dtype=int) - 1
    if cols.min() < 0 or cols.max() >= X.shape[1]:
        raise ValueError(f"predictor columns {list(q)} out of range")
    return X[:, cols] @ np.asarray(beta, dtype=float) + sigma1 * rng.standard_normal(X.shape[0])


def _mar_logits(X, y, coeffs):
    d = X.shape[1]
    lead = X[:, :3 * d // 5].sum(axis=1) * (5.0 / (3.0 * d))
    return [a + b * lead + c * y for a, b, c in coeffs]


def mar_probabilities(X: np.ndarray, y: np.ndarray, coeffs=DEFAULT_MAR_COEFFS):
    """P(R1 = 1), P(R2 = 1) per row."""
    return [expit(l) for l in _mar_logits(X, y, coeffs)]


def gen_mar_masks(X: np.ndarray, y: np.ndarray, spec: SyntheticSpec, rng: np.random.Generator):
    """Draw the two block indicators and the feature mask (True = observed).

    ``R_i = 1`` blanks block ``i``. Returns ``(R1, R2, mask)`` where ``mask``
    has the shape of ``X``.
    """
    d = X.shape[1]
    if (d + 1) % 5 != 1:
        raise ConfigError(f"p = {d + 1} is not 1 (mod 5)")
    p1, p2 = mar_probabilities(X, y, spec.mar_coeffs)
    R1 = rng.random(X.shape[0]) < p1
    R2 = rng.random(X.shape[0]) < p2
    mask = np.ones(X.shape, dtype=bool)
    b1, b2 = spec.blocks
    mask[np.ix_(R1, np.arange(b1.start, b1.stop))] = False
    mask[np.ix_(R2, np.arange(b2.start, b2.stop))] = False
    return R1, R2, mask


@dataclass
class MarGroup:
    """One logistic MAR block: ``logit = intercept + slope * sum(drivers) + y_slope * y``."""

    block: Sequence[int]
    drivers: Sequence[int]
    intercept: float
    slope: float
    y_slope: float


def gen_logit_mar(X: np.ndarray, y: np.ndarray, groups: Sequence[MarGroup],
                  rng: np.random.Generator) -> np.ndarray:
    """Generalized block masker; groups are drawn in order, one uniform per row each."""
    mask = np.ones(X.shape, dtype=bool)
    for g in groups:
        block = np.asarray(g.block, dtype=int)
        drivers = np.asarray(g.drivers, dtype=int)
        if np.intersect1d(block, drivers).size:
            raise ConfigError("a group's driver columns overlap its own block")
        logit = g.intercept + g.slope * X[:, drivers].sum(axis=1) + g.y_slope * y
        fire = rng.random(X.shape[0]) < expit(logit)
        mask[np.ix_(fire, block)] = False
    return mask


def default_groups(p: int, coeffs=DEFAULT_MAR_COEFFS) -> list[MarGroup]:
    """The two default groups expressed for :func:`gen_logit_mar`."""
    d = p - 1
    lead = range(3 * d // 5)
    scale = 5.0 / (3.0 * d)
    blocks = (range(3 * d // 5, 4 * d // 5), range(4 * d // 5, d))
    return [MarGroup(list(b), list(lead), a, s * scale, c) for b, (a, s, c) in zip(blocks, coeffs)]


def generate(spec: SyntheticSpec) -> GeneratedDataset:
    """Build one dataset; features, response noise and masks use separate streams."""
    s_feat, s_resp, s_mask = np.random.SeedSequence(spec.seed).spawn(3)
    d = spec.p - 1
    A = gen_ar1(spec.n, d, spec.rho, spec.noise_sd, np.random.default_rng(s_feat))
    X = reorder_features(A)
    y = gen_response(X, spec.q, spec.beta, spec.sigma1, np.random.default_rng(s_resp))
    R1, R2, fmask = gen_mar_masks(X, y, spec, np.random.default_rng(s_mask))
    truth = np.column_stack([X, y])
    mask = np.column_stack([fmask, np.ones(spec.n, dtype=bool)])
    return GeneratedDataset(X, y, truth, mask, spec.beta, np.column_stack([R1, R2]))


def column_names(p: int) -> list[str]:
    return [f"x{j}" for j in range(1, p)] + ["y"]


def write_dataset(ds: GeneratedDataset, spec: SyntheticSpec, out_dir) -> None:
    """``data.csv`` (missing as NA), ``truth.csv`` and ``provenance.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = column_names(spec.p)
    write_csv(out / "data.csv", ds.truth, ds.mask, names)
    write_csv(out / "truth.csv", ds.truth, None, names)
    from . import __version__
    prov = {"spec": spec.to_dict(), "seed": spec.seed, "software_version": __version__,
            "response_column": spec.p, "predictors": list(spec.q)}
    (out / "provenance.json").write_text(json.dumps(prov, indent=2, sort_keys=True))

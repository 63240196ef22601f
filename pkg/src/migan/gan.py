"""
Per-pattern conditional WGAN-GP imputers.

Each incomplete pattern ``k`` gets a generator that sees the observed
coordinates of a row (missing ones replaced by noise) and proposes values
for every coordinate, plus a critic that scores completed rows. Two
training schemes are provided:

* direct (``train_migan1``): every GAN learns from the complete cases only;
* iterative (``train_impute_migan2``): Gibbs-like sweeps where GAN ``k`` learns
  from all rows outside pattern ``k`` of the current imputation, then
  re-imputes pattern ``k``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels, nn
from .baselines import colmean_impute
from .errors import ConfigError, DataError, NumericError
from .patterns import IncompleteMatrix, PatternPartition, complement_rows

log = logging.getLogger(__name__)

PATTERN_MAGIC = b"MIGANPAT"
PATTERN_VERSION = 1


@dataclass
class TrainConfig:
    lambda_gp: float = 10.0
    lambda_rec: float = 0.1
    batch_size: int = 256
    n_critic: int = 5
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.9
    epochs: int = 200
    plateau_tol: float = 1e-3
    plateau_window: int = 20
    M: int = 10
    N: int = 3
    T: int = 1
    cell_rounds: int = 20
    seed: int = 0
    hidden_width: Optional[int] = None
    gen_average: Optional[float] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        checks = [
            (self.lambda_gp >= 0, "lambda_gp must be >= 0"),
            (self.lambda_rec >= 0, "lambda_rec must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.n_critic >= 1, "n_critic must be >= 1"),
            (self.lr > 0, "lr must be > 0"),
            (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "betas must lie in [0, 1)"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.plateau_window >= 1, "plateau_window must be >= 1"),
            (self.M >= 1, "M must be >= 1"),
            (self.N >= 0, "N must be >= 0"),
            (self.T >= 1, "T must be >= 1"),
            (self.cell_rounds >= 0, "cell_rounds must be >= 0"),
            (self.hidden_width is None or self.hidden_width >= 1, "hidden_width must be >= 1"),
            (self.gen_average is None or 0 < self.gen_average < 1,
             "gen_average must lie in (0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class PatternGan:
    """Generator/critic pair for one missingness pattern."""

    k: int
    obs: np.ndarray
    p: int
    generator: nn.MlpParams
    critic: nn.MlpParams
    gen_adam: nn.AdamState
    critic_adam: nn.AdamState
    zero_norm_events: int = 0
    gen_avg: Optional[nn.MlpParams] = None

    @property
    def imputer(self) -> nn.MlpParams:
        """The generator used to impute: the weight average when one is kept."""
        return self.gen_avg if self.gen_avg is not None else self.generator

    @property
    def mask_vector(self) -> np.ndarray:
        m = np.zeros(self.p)
        m[self.obs] = 1.0
        return m

    @classmethod
    def create(cls, k: int, obs: np.ndarray, p: int, cfg: TrainConfig,
               rng: np.random.Generator) -> "PatternGan":
        G = nn.generator_net(p, rng, cfg.hidden_width)
        D = nn.critic_net(p, rng, cfg.hidden_width)
        adam = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
        return cls(k, np.asarray(obs, dtype=np.intp), p, G, D,
                   nn.AdamState.zeros(G.n_params, **adam), nn.AdamState.zeros(D.n_params, **adam),
                   gen_avg=G.copy() if cfg.gen_average else None)

    # header: magic "MIGANPAT" | u16 version | u32 k | u32 p | u32 n_obs | u32[n_obs] obs
    # followed by the generator and critic MLP checkpoints back to back, then
    # the averaged generator when one is kept
    def to_bytes(self) -> bytes:
        head = PATTERN_MAGIC + struct.pack("<HIII", PATTERN_VERSION, self.k, self.p, self.obs.size)
        head += np.asarray(self.obs, dtype="<u4").tobytes()
        tail = self.gen_avg.to_bytes() if self.gen_avg is not None else b""
        return head + self.generator.to_bytes() + self.critic.to_bytes() + tail

    @classmethod
    def from_bytes(cls, blob: bytes, cfg: Optional[TrainConfig] = None) -> "PatternGan":
        if blob[:8] != PATTERN_MAGIC:
            raise ValueError("not a pattern GAN checkpoint")
        version, k, p, n_obs = struct.unpack_from("<HIII", blob, 8)
        if version != PATTERN_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        off = 8 + 14
        obs = np.frombuffer(blob, dtype="<u4", count=n_obs, offset=off).astype(np.intp)
        off += 4 * n_obs
        G, off = nn.MlpParams._read(blob, off)
        D, off = nn.MlpParams._read(blob, off)
        avg = None
        if off < len(blob):
            avg, off = nn.MlpParams._read(blob, off)
        if off != len(blob):
            raise ValueError("trailing bytes after pattern checkpoint")
        cfg = cfg or TrainConfig()
        adam = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
        return cls(k, obs, p, G, D, nn.AdamState.zeros(G.n_params, **adam),
                   nn.AdamState.zeros(D.n_params, **adam), gen_avg=avg)


@dataclass
class ImputationSet:
    imputations: list
    source_mask: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.imputations)

    def check_observed(self, values: np.ndarray) -> bool:
        """True when every imputation reproduces ``values`` on observed cells."""
        obs = self.source_mask
        return all(np.array_equal(imp[obs], values[obs]) for imp in self.imputations)


def source_mask(part: PatternPartition) -> np.ndarray:
    masks = np.stack(part.mask_vectors).astype(bool)
    return masks[part.row_pattern]


def generator_impute(gan: PatternGan, x: np.ndarray, z: np.ndarray,
                     m_k: np.ndarray) -> np.ndarray:
    """Complete one row: observed entries of ``x`` are returned untouched."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    m_k = np.asarray(m_k, dtype=float)
    if not (x.shape == z.shape == m_k.shape == (gan.p,)):
        raise ValueError(f"expected length-{gan.p} vectors")
    keep = m_k.astype(bool)
    x_in = np.where(keep, x, 0.0)
    raw, _ = kernels.gen_forward(gan.imputer, x_in[None, :], z[None, :], m_k)
    return np.where(keep, x, raw[0])


def _impute_rows(gan: PatternGan, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    keep = gan.mask_vector.astype(bool)
    x_in = np.where(keep, rows, 0.0)
    z = rng.standard_normal(rows.shape)
    raw, _ = kernels.gen_forward(gan.imputer, x_in, z, gan.mask_vector)
    if not np.all(np.isfinite(raw[:, ~keep])):
        raise NumericError(f"generator for pattern {gan.k} produced non-finite values")
    return np.where(keep, rows, raw)


def critic_loss_batch(gan: PatternGan, real_batch, fake_batch, lam1: float,
                      rng: np.random.Generator):
    """Mean critic loss and its gradient; interpolation weights come from ``rng``."""
    real_batch = np.atleast_2d(real_batch)
    fake_batch = np.atleast_2d(fake_batch)
    if real_batch.shape != fake_batch.shape:
        raise ValueError("real and fake batches differ in shape")
    if real_batch.shape[0] == 0:
        raise ValueError("empty batch")
    eps = rng.random(real_batch.shape[0])
    loss, grad, zero = kernels.critic_step(gan.critic, real_batch, fake_batch, eps, lam1)
    gan.zero_norm_events += zero
    return loss, grad


def generator_loss_batch(gan: PatternGan, x_batch, z_batch, m_k, lam2: float):
    x_batch = np.atleast_2d(x_batch)
    z_batch = np.atleast_2d(z_batch)
    if x_batch.shape[0] == 0:
        raise ValueError("empty batch")
    return kernels.generator_step(gan.generator, gan.critic, x_batch, z_batch,
                                  np.asarray(m_k, dtype=float), lam2)


def _train_round(gan: PatternGan, pool: np.ndarray, cfg: TrainConfig,
                 rng: np.random.Generator) -> float:
    """``n_critic`` critic updates then one generator update; returns the generator loss."""
    n, p = pool.shape
    B = min(cfg.batch_size, n)
    m = gan.mask_vector
    for _ in range(cfg.n_critic):
        x = pool[rng.integers(n, size=B)]
        x_real = pool[rng.integers(n, size=B)]
        z = rng.standard_normal((B, p))
        eps = rng.random(B)
        _, fake = kernels.gen_forward(gan.generator, x, z, m)
        _, grad, zero = kernels.critic_step(gan.critic, x_real, fake, eps, cfg.lambda_gp)
        gan.zero_norm_events += zero
        nn.adam_update_(gan.critic.data, grad, gan.critic_adam)
    x = pool[rng.integers(n, size=B)]
    z = rng.standard_normal((B, p))
    loss, grad = kernels.generator_step(gan.generator, gan.critic, x, z, m, cfg.lambda_rec)
    nn.adam_update_(gan.generator.data, grad, gan.gen_adam)
    if gan.gen_avg is not None:
        a = cfg.gen_average
        gan.gen_avg.data *= a
        gan.gen_avg.data += (1.0 - a) * gan.generator.data
    if not math.isfinite(loss):
        raise NumericError(f"training diverged for pattern {gan.k}")
    return loss


def plateaued(history: list, window: int, tol: float) -> bool:
    """Window-mean generator loss moved by less than ``tol`` (relative).

    Evaluated only at window boundaries, comparing the last two
    non-overlapping windows.
    """
    if len(history) < 2 * window or len(history) % window:
        return False
    recent = float(np.mean(history[-window:]))
    before = float(np.mean(history[-2 * window:-window]))
    return abs(recent - before) <= tol * max(abs(before), 1e-12)


def _train(gans: list, pool: np.ndarray, cfg: TrainConfig, rng: np.random.Generator,
           max_rounds: int) -> int:
    history = []
    for r in range(max_rounds):
        history.append(sum(_train_round(g, pool, cfg, rng) for g in gans))
        if plateaued(history, cfg.plateau_window, cfg.plateau_tol):
            return r + 1
    return max_rounds


def _check_usable(part: PatternPartition, ks):
    for k in ks:
        if not part.usable(k):
            raise DataError(f"pattern {k} has no observed columns; drop fully missing rows")


def train_migan1(data: IncompleteMatrix, part: PatternPartition, cfg: TrainConfig,
                 rng: Optional[np.random.Generator] = None) -> list[PatternGan]:
    """Train one GAN per incomplete pattern on the complete cases.

    Returns an empty list when there is nothing to impute.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    ks = part.incomplete_patterns()
    if not ks:
        return []
    complete = part.complete_rows
    if complete.size < 2:
        raise DataError(
            f"direct imputation needs at least 2 complete cases, found {complete.size}; "
            "use the iterative method (migan2) with a column-mean start instead")
    _check_usable(part, ks)
    gans = [PatternGan.create(k, part.obs_sets[k], part.p, cfg, rng) for k in ks]
    pool = data.values[complete]
    B = min(cfg.batch_size, complete.size)
    rounds = cfg.epochs * math.ceil(complete.size / B)
    used = _train(gans, pool, cfg, rng, rounds)
    log.debug("direct training stopped after %d/%d rounds", used, rounds)
    return gans


def impute_migan1(data: IncompleteMatrix, part: PatternPartition, gans: list,
                  rng: np.random.Generator) -> np.ndarray:
    """Fill every incomplete row with its pattern's generator and fresh noise."""
    by_k = {g.k: g for g in gans}
    out = data.filled(0.0)
    for k in part.incomplete_patterns():
        rows = part.row_sets[k]
        if rows.size == 0:
            continue
        if k not in by_k:
            raise DataError(f"no trained generator for pattern {k}")
        out[rows] = _impute_rows(by_k[k], out[rows], rng)
    return out


def multiple_impute_migan1(data: IncompleteMatrix, part: PatternPartition,
                           cfg: TrainConfig) -> ImputationSet:
    """``M`` independent train-and-impute runs seeded ``seed+1 .. seed+M``."""
    imps = []
    for r in range(1, cfg.M + 1):
        rng = np.random.default_rng(cfg.seed + r)
        gans = train_migan1(data, part, cfg, rng)
        imps.append(impute_migan1(data, part, gans, rng))
    return ImputationSet(imps, source_mask(part),
                         {"algorithm": "migan1", "seed": cfg.seed, "config": cfg.to_dict()})


def initial_imputation(data: IncompleteMatrix, part: PatternPartition, cfg: TrainConfig,
                       rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """One direct-imputation pass when there are enough complete cases, else column means."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    if not part.incomplete_patterns():
        return data.filled(0.0)
    if part.complete_rows.size >= max(2, cfg.batch_size / 8):
        gans = train_migan1(data, part, cfg, rng)
        return impute_migan1(data, part, gans, rng)
    return colmean_impute(data)


def snapshot_sweeps(N: int, T: int, M: int) -> list[int]:
    """Sweeps (1-based) after which the iterative sampler emits its state."""
    return [s for s in range(1, N + M * T + 1) if s > N and (s - N) % T == 0]


def train_impute_migan2(initial: np.ndarray, part: PatternPartition, cfg: TrainConfig,
                        rng: Optional[np.random.Generator] = None) -> ImputationSet:
    """Iterative imputation with burn-in ``N``, thinning ``T`` and ``M`` snapshots.

    ``initial`` must be a complete matrix agreeing with the data on observed
    cells. GANs are created once and warm-started across sweeps; each
    (sweep, pattern) cell trains for ``cfg.cell_rounds`` rounds, so
    ``cell_rounds=0`` runs the sweep schedule without training.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    X = np.array(initial, dtype=float)
    if X.shape != (part.n, part.p) or not np.all(np.isfinite(X)):
        raise DataError("initial imputation must be a finite n x p matrix")
    ks = [k for k in part.incomplete_patterns() if part.row_sets[k].size > 0]
    _check_usable(part, ks)
    comps = {}
    for k in ks:
        comps[k] = complement_rows(part, k)
        if comps[k].size < 2:
            raise DataError(f"pattern {k}: fewer than 2 rows outside the pattern to train on")
    gans = {k: PatternGan.create(k, part.obs_sets[k], part.p, cfg, rng) for k in ks}

    snaps, emitted = [], []
    for s in range(1, cfg.N + cfg.M * cfg.T + 1):
        for k in ks:
            pool = X[comps[k]]
            _train([gans[k]], pool, cfg, rng, cfg.cell_rounds)
            rows = part.row_sets[k]
            X[rows] = _impute_rows(gans[k], X[rows], rng)
        if s > cfg.N and (s - cfg.N) % cfg.T == 0:
            snaps.append(X.copy())
            emitted.append(s)
    return ImputationSet(snaps, source_mask(part),
                         {"algorithm": "migan2", "seed": cfg.seed, "config": cfg.to_dict(),
                          "snapshot_sweeps": emitted,
                          "zero_norm_events": sum(g.zero_norm_events for g in gans.values())})


def multiple_impute_migan2(data: IncompleteMatrix, part: PatternPartition,
                           cfg: TrainConfig) -> ImputationSet:
    """Initial fill followed by the iterative sampler, from independent seed streams."""
    init_seq, run_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    start = initial_imputation(data, part, cfg, np.random.default_rng(init_seq))
    return train_impute_migan2(start, part, cfg, np.random.default_rng(run_seq))

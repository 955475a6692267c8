"""Simulation configurations and covariate data-generating processes."""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from ..data import Dataset
from ..errors import ContractError

T_DOF = 7

N_T1_LEVELS = (500, 1000)
GAMMA_LEVELS = (1, 2)
DIST_LEVELS = ("t7", "normal")
B_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)
TAU_LEVELS = (0.0, 0.25)
SIGMA_SQ_LEVELS = (0.5, 1.0, 2.0)
P_LEVELS = (3, 6)

FACTORS = ("n_t1", "gamma", "dist", "B", "tau", "sigma2_sq", "sigma3_sq", "P")


@dataclass(frozen=True)
class SimConfig:
    """One cell of the factorial design.

    For ``Z=5`` the covariance is the identity, ``P`` is 5, and ``B`` equals the
    raw mean shift ``b`` (the standardization factor is 1).
    """

    n_t1: int = 500
    gamma: int = 1
    dist: str = "normal"
    B: float = 0.0
    tau: float = 0.0
    sigma2_sq: float = 1.0
    sigma3_sq: float = 1.0
    P: int = 3
    Z: int = 3
    reps: int = 200
    seed: int = 0
    t_matrix: str = "covariance"

    def __post_init__(self):
        if self.dist not in DIST_LEVELS:
            raise ContractError(f"dist must be one of {DIST_LEVELS}, got {self.dist!r}")
        if self.Z not in (3, 5):
            raise ContractError("Z must be 3 or 5")
        if self.Z == 5 and self.P != 5:
            object.__setattr__(self, "P", 5)
        if self.n_t1 < 1 or self.gamma < 1 or self.P < 1:
            raise ContractError("n_t1, gamma and P must be positive")
        if self.sigma2_sq <= 0 or self.sigma3_sq <= 0:
            raise ContractError("variances must be positive")

    @property
    def sizes(self) -> tuple[int, ...]:
        n, g = self.n_t1, self.gamma
        if self.Z == 3:
            return (n, g * n, g * g * n)
        return (n, g * n, g * n, g * g * n, g * g * n)

    def design_key(self) -> tuple:
        """Factor levels only; ``reps`` and ``seed`` are run settings."""
        key = tuple((f, getattr(self, f)) for f in FACTORS) + (("Z", self.Z),)
        return key if self.t_matrix == "covariance" else key + (("t_matrix", self.t_matrix),)

    def config_id(self) -> str:
        return ",".join(f"{k}={v}" for k, v in self.design_key())

    def factors(self) -> dict:
        return {f: getattr(self, f) for f in FACTORS} | {"Z": self.Z}

    def to_dict(self) -> dict:
        return asdict(self)


def b_from_B(B: float, sigma2_sq: float, sigma3_sq: float) -> float:
    """Raw mean shift for standardized bias ``B``."""
    if sigma2_sq <= 0 or sigma3_sq <= 0:
        raise ContractError("variances must be positive")
    return B * math.sqrt((1.0 + sigma2_sq + sigma3_sq) / 3.0)


def replication_seed(config: SimConfig, rep: int, master_seed: int) -> np.random.SeedSequence:
    """Seed derived from (config id, replication index, master seed) only."""
    digest = hashlib.sha256(config.config_id().encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, rep, *words])


def rng_for(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.PCG64(seed))


def symmetric_sqrt(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(cov)
    if np.any(w <= 0):
        raise ContractError("covariance matrix is not positive definite")
    return (v * np.sqrt(w)) @ v.T


def exchangeable_cov(p: int, diag: float, tau: float) -> np.ndarray:
    cov = np.full((p, p), float(tau))
    np.fill_diagonal(cov, diag)
    return cov


def draw(rng, n: int, mean: np.ndarray, cov: np.ndarray, dist: str, t_matrix: str = "covariance") -> np.ndarray:
    """``n`` draws of ``mean + L z`` (normal) or ``mean + L z / sqrt(w / 7)`` (t7).

    For t7, ``t_matrix="covariance"`` rescales so that ``cov`` is the covariance
    of the draws; ``"scale"`` uses ``cov`` directly as the scale matrix
    (covariance ``cov * 7/5``).
    """
    if dist == "t7" and t_matrix == "covariance":
        cov = cov * (T_DOF - 2) / T_DOF
    elif t_matrix not in ("covariance", "scale"):
        raise ContractError("t_matrix must be 'covariance' or 'scale'")
    root = symmetric_sqrt(cov)
    z = rng.standard_normal((n, len(mean))) @ root
    if dist == "t7":
        w = rng.chisquare(T_DOF, size=n)
        z = z / np.sqrt(w / T_DOF)[:, None]
    return mean + z


def mean_pattern(arm: int, p: int, n_arms: int, b: float) -> np.ndarray:
    """Shift ``b`` on every covariate whose position is ``arm - 1`` modulo the block width."""
    mu = np.zeros(p)
    mu[(np.arange(p) % n_arms) == arm - 1] = b
    return mu


def _assemble(blocks, labels) -> Dataset:
    x = np.vstack(blocks)
    t = np.concatenate([np.full(len(b), k + 1) for k, b in enumerate(blocks)])
    return Dataset(covariates=x, treatment=t, labels=labels)


def generate_z3(cfg: SimConfig, rep_seed) -> Dataset:
    if cfg.Z != 3:
        raise ContractError("generate_z3 requires Z=3")
    rng = rng_for(rep_seed)
    b = b_from_B(cfg.B, cfg.sigma2_sq, cfg.sigma3_sq)
    diags = (1.0, cfg.sigma2_sq, cfg.sigma3_sq)
    blocks = [
        draw(rng, n, mean_pattern(t, cfg.P, 3, b), exchangeable_cov(cfg.P, d, cfg.tau), cfg.dist, cfg.t_matrix)
        for t, (n, d) in enumerate(zip(cfg.sizes, diags), start=1)
    ]
    return _assemble(blocks, ("t1", "t2", "t3"))


def generate_z5(cfg: SimConfig, rep_seed) -> Dataset:
    if cfg.Z != 5:
        raise ContractError("generate_z5 requires Z=5")
    rng = rng_for(rep_seed)
    eye = np.eye(5)
    blocks = [draw(rng, n, cfg.B * eye[t], eye, cfg.dist, cfg.t_matrix) for t, n in enumerate(cfg.sizes)]
    return _assemble(blocks, ("t1", "t2", "t3", "t4", "t5"))


def generate(cfg: SimConfig, rep_seed) -> Dataset:
    return generate_z3(cfg, rep_seed) if cfg.Z == 3 else generate_z5(cfg, rep_seed)


def generate_interlude(rep_seed, a: float = 2.0, sizes=(400, 800, 800)) -> Dataset:
    """Bivariate normal, identity covariance; arm 2 shifted by ``a`` on X1, arm 3 on X2."""
    rng = rng_for(rep_seed)
    means = (np.zeros(2), np.array([a, 0.0]), np.array([0.0, a]))
    blocks = [mu + rng.standard_normal((n, 2)) for mu, n in zip(means, sizes)]
    return _assemble(blocks, ("t1", "t2", "t3"))


def z3_configs(reps: int = 200, seed: int = 0, **levels) -> list[SimConfig]:
    """Full Z=3 factorial, minus the (P=6, n_t1=500) cells.

    Keyword arguments override the level tuple of any factor.
    """
    grid = {
        "n_t1": N_T1_LEVELS, "gamma": GAMMA_LEVELS, "dist": DIST_LEVELS, "B": B_LEVELS,
        "tau": TAU_LEVELS, "sigma2_sq": SIGMA_SQ_LEVELS, "sigma3_sq": SIGMA_SQ_LEVELS, "P": P_LEVELS,
    }
    for key, value in levels.items():
        if key not in grid:
            raise ContractError(f"unknown factor {key!r}")
        grid[key] = tuple(value)
    out = []
    for combo in itertools.product(*(grid[f] for f in FACTORS)):
        kw = dict(zip(FACTORS, combo))
        if kw["P"] == 6 and kw["n_t1"] == 500:
            continue
        out.append(SimConfig(**kw, Z=3, reps=reps, seed=seed))
    return out


def z5_configs(reps: int = 200, seed: int = 0) -> list[SimConfig]:
    return [
        SimConfig(n_t1=1000, gamma=g, dist=f, B=b, P=5, Z=5, reps=reps, seed=seed)
        for g in GAMMA_LEVELS for f in DIST_LEVELS for b in B_LEVELS
    ]


def stratified_sample(configs, size: int, seed: int = 0, strata=("B", "dist")) -> list[SimConfig]:
    """Deterministic subsample with equal allocation across ``strata`` cells."""
    configs = list(configs)
    groups: dict[tuple, list[SimConfig]] = {}
    for c in configs:
        groups.setdefault(tuple(getattr(c, s) for s in strata), []).append(c)
    keys = sorted(groups, key=repr)
    if size < len(keys):
        raise ContractError(f"sample size {size} smaller than the {len(keys)} strata")
    rng = np.random.Generator(np.random.PCG64(seed))
    base, extra = divmod(size, len(keys))
    out = []
    for i, key in enumerate(keys):
        members = groups[key]
        take = min(len(members), base + (1 if i < extra else 0))
        idx = np.sort(rng.choice(len(members), size=take, replace=False))
        out.extend(members[j] for j in idx)
    return out


def with_run(configs, reps: int, seed: int) -> list[SimConfig]:
    return [replace(c, reps=reps, seed=seed) for c in configs]

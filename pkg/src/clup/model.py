"""Random linear system, detector configuration and seeded instance generation.

All randomness flows through :func:`substream`, which maps a tuple of
integers to an independent ``numpy.random.Generator`` backed by the
counter-based Philox bit generator.  Replication ``i`` of an experiment with
base seed ``s`` uses ``substream(s, i)``; an instance and the random initial
point of that replication use further child keys, so results never depend on
execution order or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Union

import numpy as np

from .exceptions import InvalidConfig, InvalidDimension

R_PLT_DEFAULT = 0.1226

# child keys under a replication seed
_KEY_INSTANCE = 0
_KEY_INIT = 1


def substream(*key: int) -> np.random.Generator:
    """Independent generator for an integer key tuple (Philox counter-based)."""
    seq = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in key])
    return np.random.Generator(np.random.Philox(seq))


def sigma_from_snr_db(snr_db: float) -> float:
    """Noise scale with ``1/sigma**2`` equal to the SNR given in dB."""
    return float(10.0 ** (-snr_db / 20.0))


@dataclass(frozen=True)
class SystemInstance:
    """One draw of ``y = A x_sol + sigma v``.

    Attributes
    ----------
    A : ndarray of shape (m, n)
    x_sol : ndarray of shape (n,)
        Entries in ``{-1/sqrt(n), 1/sqrt(n)}``.
    v : ndarray of shape (m,)
    sigma : float
    y : ndarray of shape (m,)
    alpha : float
    """

    A: np.ndarray
    x_sol: np.ndarray
    v: np.ndarray
    sigma: float
    y: np.ndarray
    alpha: float

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[0]


def generate_instance(n: int, alpha: float, sigma: float, seed) -> SystemInstance:
    """Draw a system instance.

    Parameters
    ----------
    n : int
        Signal dimension.
    alpha : float
        Ratio ``m / n``; ``m = round(alpha * n)``.
    sigma : float
        Noise scale.
    seed : int or tuple of int
        Key passed to :func:`substream`.

    Raises
    ------
    InvalidDimension
        If ``n < 1`` or ``round(alpha * n) < 1``.
    """
    if n < 1 or alpha <= 0:
        raise InvalidDimension(f"need n >= 1 and alpha > 0, got n={n}, alpha={alpha}")
    if sigma < 0:
        raise InvalidConfig("sigma must be nonnegative")
    m = int(round(alpha * n))
    if m < 1:
        raise InvalidDimension(f"round(alpha*n) = {m} < 1")
    key = seed if isinstance(seed, tuple) else (seed,)
    rng = substream(*key, _KEY_INSTANCE)
    A = rng.standard_normal((m, n))
    x_sol = np.where(rng.random(n) < 0.5, -1.0, 1.0) / math.sqrt(n)
    v = rng.standard_normal(m)
    y = A @ x_sol + sigma * v
    return SystemInstance(A=A, x_sol=x_sol, v=v, sigma=float(sigma), y=y, alpha=float(alpha))


# ---------------------------------------------------------------- init modes


@dataclass(frozen=True)
class RandomSign:
    """I.i.d. uniform signs; ``seed=None`` means derive from the run seed."""

    seed: int | None = None


@dataclass(frozen=True)
class FixedVector:
    x0: tuple

    def __init__(self, x0):
        object.__setattr__(self, "x0", tuple(float(t) for t in np.ravel(x0)))


@dataclass(frozen=True)
class AgreementFraction:
    """Exactly ``round(rho * n)`` components agree in sign with ``x_sol``."""

    rho: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidConfig(f"rho must lie in [0, 1], got {self.rho}")


InitMode = Union[RandomSign, FixedVector, AgreementFraction]


@dataclass(frozen=True)
class ClupConfig:
    """Detector configuration.

    The theory works with radii normalized so that ``r_plt = 0.1226`` at
    ``alpha=0.8`` and 13 dB; the inner problem uses the ball radius
    ``r * sqrt(n)`` because ``A`` has unit-variance entries while ``x`` has unit
    norm.
    """

    r_plt: float = R_PLT_DEFAULT
    r_sc: float = 1.5
    max_iters: int = 10
    snr_db: float = 13.0
    init: InitMode = field(default_factory=RandomSign)
    inner_tol: float = 1e-8
    seed: int | tuple = 0
    convergence_tol: float | None = None
    warm_start: bool = True
    inner_method: str = "ipm"

    def __post_init__(self):
        if self.r_plt <= 0:
            raise InvalidConfig("r_plt must be positive")
        if self.r_sc < 1:
            raise InvalidConfig("r_sc must be >= 1")
        if self.max_iters < 1:
            raise InvalidConfig("max_iters must be >= 1")
        if self.inner_tol <= 0:
            raise InvalidConfig("inner_tol must be positive")
        if self.inner_method not in ("ipm", "bisection"):
            raise InvalidConfig(f"unknown inner_method {self.inner_method!r}")

    @property
    def r(self) -> float:
        return self.r_sc * self.r_plt

    @property
    def sigma(self) -> float:
        return sigma_from_snr_db(self.snr_db)

    def ball_radius(self, n: int) -> float:
        return self.r * math.sqrt(n)

    def with_(self, **kw) -> "ClupConfig":
        return replace(self, **kw)


def make_initial(config: ClupConfig, instance: SystemInstance) -> np.ndarray:
    """Initial unit vector in ``{-1/sqrt(n), 1/sqrt(n)}^n``."""
    n = instance.n
    init = config.init
    key = config.seed if isinstance(config.seed, tuple) else (config.seed,)
    if isinstance(init, FixedVector):
        x0 = np.asarray(init.x0, dtype=float)
        if x0.shape != (n,):
            raise InvalidDimension(f"fixed x0 has length {x0.size}, expected {n}")
        return np.where(x0 < 0, -1.0, 1.0) / math.sqrt(n)
    if isinstance(init, AgreementFraction):
        k = int(round(init.rho * n))
        rng = substream(*key, _KEY_INIT)
        agree = np.zeros(n, dtype=bool)
        agree[rng.permutation(n)[:k]] = True
        return np.where(agree, instance.x_sol, -instance.x_sol)
    if isinstance(init, RandomSign):
        rng = substream(*key, _KEY_INIT) if init.seed is None else substream(init.seed, _KEY_INIT)
        return np.where(rng.random(n) < 0.5, -1.0, 1.0) / math.sqrt(n)
    raise InvalidConfig(f"unknown init mode {init!r}")


# ------------------------------------------------------------ config files

CONFIG_KEYS = ("n", "alpha", "snr_db", "r_plt", "r_sc", "max_iters", "seed", "reps", "init", "rho")
_INT_KEYS = {"n", "max_iters", "seed", "reps"}
_STR_KEYS = {"init"}


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file (``#`` comments, blank lines allowed).

    Returns a dict with typed values for the recognized keys.  Unknown keys
    raise :class:`InvalidConfig`.
    """
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, val = line.split("=", 1)
        elif ":" in line:
            key, val = line.split(":", 1)
        else:
            raise InvalidConfig(f"{path}:{lineno}: expected key = value")
        key, val = key.strip(), val.strip()
        if key not in CONFIG_KEYS:
            raise InvalidConfig(f"{path}:{lineno}: unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                out[key] = int(val)
            elif key in _STR_KEYS:
                out[key] = val.lower()
            else:
                out[key] = float(val)
        except ValueError as exc:
            raise InvalidConfig(f"{path}:{lineno}: bad value for {key}: {val!r}") from exc
    if "init" in out and out["init"] not in ("random", "agreement", "fixed"):
        raise InvalidConfig(f"init must be random, agreement or fixed, got {out['init']!r}")
    return out


def config_from_mapping(d: dict, **overrides) -> ClupConfig:
    """Build a :class:`ClupConfig` from a config-file mapping."""
    d = {**d, **{k: v for k, v in overrides.items() if v is not None}}
    kw = {k: d[k] for k in ("r_plt", "r_sc", "max_iters", "snr_db", "seed") if k in d}
    init = d.get("init", "random")
    if init == "agreement":
        kw["init"] = AgreementFraction(d.get("rho", 0.5))
    elif init == "random":
        kw["init"] = RandomSign()
    else:
        raise InvalidConfig("init = fixed needs a vector and cannot come from a config file")
    return ClupConfig(**kw)


# ------------------------------------------------------------ instance dumps

_DUMP_MAGIC = b"CLUPINST"


def dump_instance(inst: SystemInstance, path, fmt: str | None = None) -> Path:
    """Write an instance for cross-checking.

    Binary layout (``fmt="bin"``, little endian): the 8-byte magic
    ``CLUPINST``, int64 ``m``, int64 ``n``, float64 ``sigma``, float64
    ``alpha``, then float64 arrays ``A`` in column-major order, ``x_sol``,
    ``v`` and ``y``.

    CSV layout (``fmt="csv"``): a header line ``# m,n,sigma,alpha`` with
    values, then one row per column ``j`` of ``A`` holding ``A[:, j]``, then
    the rows ``x_sol``, ``v`` and ``y``, each prefixed with a label.
    """
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "bin")
    path.parent.mkdir(parents=True, exist_ok=True)
    m, n = inst.A.shape
    if fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(_DUMP_MAGIC)
            fh.write(np.array([m, n], dtype="<i8").tobytes())
            fh.write(np.array([inst.sigma, inst.alpha], dtype="<f8").tobytes())
            fh.write(np.asarray(inst.A, dtype="<f8").tobytes(order="F"))
            for arr in (inst.x_sol, inst.v, inst.y):
                fh.write(np.asarray(arr, dtype="<f8").tobytes())
    elif fmt == "csv":
        with open(path, "w") as fh:
            fh.write(f"# m,n,sigma,alpha\n{m},{n},{inst.sigma!r},{inst.alpha!r}\n")
            for j in range(n):
                fh.write(f"A{j}," + ",".join(repr(float(t)) for t in inst.A[:, j]) + "\n")
            for label, arr in (("x_sol", inst.x_sol), ("v", inst.v), ("y", inst.y)):
                fh.write(label + "," + ",".join(repr(float(t)) for t in arr) + "\n")
    else:
        raise InvalidConfig(f"unknown dump format {fmt!r}")
    return path


def load_instance(path, fmt: str | None = None) -> SystemInstance:
    """Read an instance written by :func:`dump_instance`."""
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "bin")
    if fmt == "bin":
        raw = path.read_bytes()
        if raw[:8] != _DUMP_MAGIC:
            raise InvalidConfig(f"{path} is not an instance dump")
        m, n = np.frombuffer(raw, "<i8", 2, 8)
        sigma, alpha = np.frombuffer(raw, "<f8", 2, 24)
        off = 40
        A = np.frombuffer(raw, "<f8", m * n, off).reshape((m, n), order="F")
        off += 8 * m * n
        x_sol = np.frombuffer(raw, "<f8", n, off)
        v = np.frombuffer(raw, "<f8", m, off + 8 * n)
        y = np.frombuffer(raw, "<f8", m, off + 8 * (n + m))
        arrs = [np.array(a) for a in (A, x_sol, v, y)]
    else:
        lines = path.read_text().splitlines()
        m, n = (int(t) for t in lines[1].split(",")[:2])
        sigma, alpha = (float(t) for t in lines[1].split(",")[2:4])
        rows = [np.array([float(t) for t in ln.split(",")[1:]]) for ln in lines[2:]]
        arrs = [np.column_stack(rows[:n]), rows[n], rows[n + 1], rows[n + 2]]
    A, x_sol, v, y = arrs
    return SystemInstance(A=A, x_sol=x_sol, v=v, sigma=float(sigma), y=y, alpha=float(alpha))


def config_as_dict(cfg: ClupConfig) -> dict:
    """JSON-friendly view of a config."""
    out = {}
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if f.name == "init":
            out["init"] = {"mode": type(val).__name__, **{g.name: getattr(val, g.name) for g in fields(val)}}
        else:
            out[f.name] = val
    out["r"] = cfg.r
    out["sigma"] = cfg.sigma
    return out

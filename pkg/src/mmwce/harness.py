"""Monte Carlo sweeps over the pilot energy-to-noise ratio and their CSV output.

The x-axis value ``EtN0_dB`` is a nominal budget: ``N0`` is fixed to 1 and
the power constant ``P_T`` is solved so that the expected total pilot energy
of a single-path FCE (or baseline) run equals ``10**(EtN0_dB / 10)``.  RACE
is driven with the FCE power constant, so its realised energy is larger and
is reported separately in ``mean_energy``.  ``inf`` selects the noiseless
channel (``N0 = 0``, unit budget).

Trials run in fixed-size blocks.  Block ``b`` at grid point ``i`` draws from
``SeedSequence(seed, spawn_key=(i, b))`` for every algorithm, so algorithms
see the same channels and results do not depend on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.stats import binomtest

from .analysis import LinkBudget, min_energy_bound, pee_multistage, pee_single_stage
from .codebook import default_design_K3_M4, generator, load_design, num_stages
from .estimators import ALGORITHMS
from .grid import SteeringAngleGrid
from .montecarlo import BeamBook, simulate, simulate_exhaustive

CSV_COLUMNS = (
    "algorithm", "EtN0_dB", "pee", "pee_lo", "pee_hi", "mean_meas", "mean_energy",
    "mse_alpha_dB", "mean_fb_bits", "mse_alpha_final_dB",
)
BOUNDS_COLUMNS = (
    "EtN0_dB", "pee_lower", "pee_approx", "pee_upper", "pee_multi_product", "pee_multi_sum",
    "slots_bound_pfb1", "slots_bound_pfb_min",
)


class ConfigError(ValueError):
    """Invalid sweep configuration."""


@dataclass
class SweepConfig:
    N: int = 27
    K: int = 3
    Gamma: float = 1e-2
    M_max: int | None = None
    P_R: float = 1.0
    L: int = 1
    convention: str = "paper-literal"
    fading: str = "rayleigh"
    design: str | None = None
    snr_db: tuple = (0.0, 10.0, 20.0, 30.0)
    trials: int = 1000
    algorithms: tuple = ("fce", "race", "baseline")
    seed: int = 0
    block: int = 2000
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        self.snr_db = tuple(float(x) for x in np.atleast_1d(self.snr_db))
        self.algorithms = tuple(a.strip().lower() for a in np.atleast_1d(self.algorithms))
        if not self.snr_db:
            raise ConfigError("snr_db must list at least one point")
        if any(b <= a for a, b in zip(self.snr_db, self.snr_db[1:])) or any(math.isnan(x) for x in self.snr_db):
            raise ConfigError(f"snr_db must be strictly increasing, got {self.snr_db}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.block < 1 or self.workers < 1:
            raise ConfigError("block and workers must be >= 1")
        if not self.algorithms:
            raise ConfigError("no algorithms requested")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ConfigError(f"unknown algorithm(s) {bad}; expected a subset of {ALGORITHMS}")
        if not 0 < self.Gamma < 1:
            raise ConfigError(f"Gamma must lie in (0, 1), got {self.Gamma}")
        if self.L < 1 or self.N < 2 or self.K < 2:
            raise ConfigError("need L >= 1, N >= 2 and K >= 2")
        if self.fading not in ("rayleigh", "awgn"):
            raise ConfigError(f"fading must be 'rayleigh' or 'awgn', got {self.fading!r}")
        if self.convention not in ("paper-literal", "dft"):
            raise ConfigError(f"unknown grid convention {self.convention!r}")
        if self.design is None and self.K != 3:
            raise ConfigError("the built-in design needs K=3; supply a design file")
        if self.M_max is not None and self.M_max < self.M:
            raise ConfigError(f"M_max={self.M_max} below M={self.M}")

    def design_matrices(self):
        if self.design is None:
            return default_design_K3_M4()
        B_T, B_R, _ = load_design(self.design)
        if B_T.shape[1] != self.K:
            raise ConfigError(f"design file has K={B_T.shape[1]}, config has K={self.K}")
        return B_T, B_R

    @property
    def M(self) -> int:
        return self.design_matrices()[0].shape[0]

    @property
    def S(self) -> int:
        return num_stages(self.N, self.K)

    @property
    def race_max_slots(self) -> int:
        """RACE slot cap per stage; unset means the baseline's ``K**2``."""
        return self.M_max if self.M_max is not None else max(self.M, self.K**2)


@dataclass
class SweepRow:
    algorithm: str
    EtN0_dB: float
    pee: float
    pee_lo: float
    pee_hi: float
    mean_meas: float
    mean_energy: float
    mse_alpha_dB: float
    mean_fb_bits: float
    mse_alpha_final_dB: float
    errors: int = 0
    trials: int = 0


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)
    config: SweepConfig | None = None

    def row(self, algorithm: str, EtN0_dB: float) -> SweepRow:
        for r in self.rows:
            if r.algorithm == algorithm and r.EtN0_dB == EtN0_dB:
                return r
        raise KeyError((algorithm, EtN0_dB))

    def series(self, algorithm: str, column: str) -> np.ndarray:
        return np.array([getattr(r, column) for r in self.rows if r.algorithm == algorithm])


# -- running ------------------------------------------------------------------


@lru_cache(maxsize=16)
def _book(kind: str, N: int, K: int, convention: str, design: str | None) -> BeamBook:
    cfg = SweepConfig(N=N, K=K, convention=convention, design=design, algorithms=("fce",))
    B_T, B_R = cfg.design_matrices()
    return BeamBook.for_algorithm(kind, N, K, B_T, B_R, convention)


def _noise_and_budget(dB: float) -> tuple[float, float]:
    if math.isinf(dB) and dB > 0:
        return 0.0, 1.0
    return 1.0, 10.0 ** (dB / 10.0)


def power_constant(config: SweepConfig, algorithm: str, dB: float) -> float:
    """``P_T`` (or the per-slot power for the exhaustive sweep) meeting the nominal budget."""
    _, E_T = _noise_and_budget(dB)
    if algorithm == "exhaustive":
        return E_T / config.N**2
    kind = "baseline" if algorithm == "baseline" else "fce"
    book = _book(kind, config.N, config.K, config.convention, config.design)
    slots = config.K**2 if algorithm == "baseline" else book.M
    return E_T / book.energy_per_PT(slots)


def _run_block(task):
    config, algorithm, i, b = task
    dB = config.snr_db[i]
    T = min(config.block, config.trials - b * config.block)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(i, b)))
    N0, _ = _noise_and_budget(dB)
    P = power_constant(config, algorithm, dB)
    if algorithm == "exhaustive":
        grid = SteeringAngleGrid(config.N, config.convention)
        out = simulate_exhaustive(grid, P, N0, T, rng, P_R=config.P_R, L=config.L, fading=config.fading)
    else:
        kind = "baseline" if algorithm == "baseline" else "fce"
        book = _book(kind, config.N, config.K, config.convention, config.design)
        out = simulate(book, algorithm, P, N0, T, rng, P_R=config.P_R, L=config.L, Gamma=config.Gamma,
                       M_max=config.race_max_slots, fading=config.fading)
    return (int(out.errors.sum()), int(out.measurements.sum()), float(out.energy.sum()),
            int(out.feedback_bits.sum()), float(out.se_alpha.sum()), float(out.se_alpha_final.sum()))


def wilson_interval(errors: int, trials: int) -> tuple[float, float]:
    ci = binomtest(errors, trials).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


def _db(x: float) -> float:
    return 10.0 * math.log10(x) if x > 0 else -math.inf


def run_sweep(config: SweepConfig) -> SweepResult:
    """Simulate every (algorithm, grid point) pair of ``config``."""
    n_blocks = -(-config.trials // config.block)
    tasks = [(config, a, i, b) for i in range(len(config.snr_db)) for a in config.algorithms for b in range(n_blocks)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            parts = list(pool.map(_run_block, tasks))
    else:
        parts = [_run_block(t) for t in tasks]
    rows = []
    T = config.trials
    for k in range(0, len(parts), n_blocks):
        _, a, i, _ = tasks[k]
        # sums in block order: identical for any worker count
        err, meas, energy, fb, se, se_fin = (sum(col) for col in zip(*parts[k : k + n_blocks]))
        lo, hi = wilson_interval(err, T)
        rows.append(SweepRow(
            algorithm=a, EtN0_dB=config.snr_db[i], pee=err / T, pee_lo=lo, pee_hi=hi,
            mean_meas=meas / T, mean_energy=energy / T, mse_alpha_dB=_db(se / T),
            mean_fb_bits=fb / T, mse_alpha_final_dB=_db(se_fin / T), errors=err, trials=T,
        ))
    return SweepResult(rows, config)


# -- CSV ----------------------------------------------------------------------


def _fmt(x) -> str:
    return x if isinstance(x, str) else f"{x:.17g}"


def emit_csv(result: SweepResult, path) -> Path:
    """Write one row per (algorithm, grid point); header-only for an empty result."""
    path = Path(path)
    lines = []
    if result.config is not None:
        c = result.config
        lines += [
            f"# EtN0_dB: nominal single-path budget with N0=1; mean_energy: realised mean total pilot energy",
            f"# N={c.N} K={c.K} M={c.M} M_max={c.race_max_slots} Gamma={c.Gamma} L={c.L} trials={c.trials} "
            f"seed={c.seed} convention={c.convention} fading={c.fading}",
        ]
    lines.append(",".join(CSV_COLUMNS))
    for r in result.rows:
        lines.append(",".join(_fmt(getattr(r, col)) for col in CSV_COLUMNS))
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise OSError(f"cannot write sweep results to {path}: {e}") from e
    return path


def read_csv(path) -> list[dict]:
    """Parse a file written by :func:`emit_csv` or :func:`emit_bounds` (comment lines skipped)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise OSError(f"cannot read {path}: {e}") from e
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    out = []
    for ln in lines[1:]:
        vals = ln.split(",")
        out.append({h: (v if h == "algorithm" else float(v)) for h, v in zip(header, vals)})
    return out


def rows_from_csv(path) -> list[SweepRow]:
    return [SweepRow(**d) for d in read_csv(path)]


# -- analytical curves --------------------------------------------------------


def _slots_needed(budget: LinkBudget, Es_N0: float, n_cap: float = 1e6) -> float:
    """Smallest (real-valued) ``M + R`` whose minimum-energy bound is at most ``Es_N0``."""

    def excess(n):
        return min_energy_bound(replace(budget, R=n - budget.M)) - Es_N0

    if excess(budget.M) <= 0:
        return float(budget.M)
    if excess(n_cap) > 0:
        return math.inf
    return brentq(excess, budget.M, n_cap, xtol=1e-9)


def bounds_table(config: SweepConfig) -> list[dict]:
    """Analytical FCE error predictions and RACE slot bounds on the sweep grid.

    PEE columns use the nominal generator.  With ``P_s = P_T / C_s**4`` the
    received SNR is the same in every stage, so one single-stage value feeds
    the multi-stage product and sum forms.  The slot columns treat each grid
    value as a per-stage ``E_s/N0`` with the first-stage gain constant.
    """
    B_T, B_R = config.design_matrices()
    G = generator(B_T, B_R)
    book = _book("fce", config.N, config.K, config.convention, config.design)
    C1 = math.sqrt(book.tx[0].C[0] * book.rx[0].C[0])
    rows = []
    for dB in config.snr_db:
        N0, E = _noise_and_budget(dB)
        P_T = power_constant(config, "fce", dB)
        budget = LinkBudget(P_s=P_T, C_s=1.0, N=config.N, P_R=config.P_R, N0=N0, M=book.M, K=config.K)
        lower, approx, upper = (pee_single_stage(budget, G, m) for m in ("lower", "approx", "upper"))
        prod, tot = pee_multistage([min(approx, 1.0)] * config.S)
        eb = LinkBudget(P_s=1.0, C_s=C1, N=config.N, M=book.M, K=config.K)
        Es = E / N0 if N0 > 0 else math.inf
        rows.append({
            "EtN0_dB": dB, "pee_lower": lower, "pee_approx": approx, "pee_upper": upper,
            "pee_multi_product": prod, "pee_multi_sum": tot,
            "slots_bound_pfb1": _slots_needed(replace(eb, p_FB=1.0), Es),
            "slots_bound_pfb_min": _slots_needed(replace(eb, p_FB=1.0 / config.K**2), Es),
        })
    return rows


def emit_bounds(config: SweepConfig, path) -> Path:
    path = Path(path)
    lines = [",".join(BOUNDS_COLUMNS)]
    for row in bounds_table(config):
        lines.append(",".join(_fmt(row[c]) for c in BOUNDS_COLUMNS))
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise OSError(f"cannot write bounds to {path}: {e}") from e
    return path


# -- config files -------------------------------------------------------------


def _convert(name: str, value: str):
    ints = {"N", "K", "L", "trials", "seed", "block", "workers"}
    floats = {"Gamma", "P_R"}
    try:
        if name in ints:
            return int(value)
        if name in floats:
            return float(value)
        if name == "M_max":
            return None if value.lower() in ("", "none") else int(value)
        if name == "snr_db":
            return tuple(float(v) for v in value.replace(",", " ").split())
        if name == "algorithms":
            return tuple(v for v in value.replace(",", " ").split())
        if name == "design":
            return value or None
    except ValueError as e:
        raise ConfigError(f"bad value for {name}: {value!r}") from e
    return value


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    known = {f.name for f in fields(SweepConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def load_config(path=None, **overrides) -> SweepConfig:
    """Build a :class:`SweepConfig` from an optional file, then apply non-``None`` overrides."""
    values = {}
    if path is not None:
        try:
            values = parse_config_text(Path(path).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SweepConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from e

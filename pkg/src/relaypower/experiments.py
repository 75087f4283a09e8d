"""Monte Carlo MSE-versus-budget experiments.

Two scenarios are supported. ``scalar``: ten sensors observe a scalar target
with fixed gains. ``vector``: each sensor measures range and two angle ratios
of a 3-D target; the measurements are linearised at the prior mean and every
linearised row is an independently powered channel.

Each trial draws one sensor placement (hence one set of channel gains) and
evaluates every method at every sensor budget on it, so comparisons across
methods and across budgets are paired.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Iterator, Sequence

import numpy as np

from .bayes import GaussianBelief, SensorNetwork, mmse_estimate, observation_moments
from .errors import InvalidInputError, NumericalError, ScenarioError
from .relay import Allocation, Budgets, RelayProblem, fc_moments
from .sca import ScaOptions, one_hop_optimize, one_hop_uniform, optimize, uniform_allocation

log = logging.getLogger(__name__)

DEFAULT_SCALAR_GAINS = (1.00, 1.11, 1.22, 1.33, 1.44, 1.55, 1.66, 1.77, 1.88, 2.0)
DEFAULT_PT_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))
METHODS = ("two_hop_opt", "two_hop_uniform", "one_hop_opt", "one_hop_uniform")
KINDS = ("scalar", "vector")
PLACEMENTS = ("sphere", "permutation")


@dataclass(frozen=True)
class ScenarioConfig:
    """Every constant of an experiment; the JSON config maps 1:1 onto these fields.

    ``prior_mean``/``prior_cov`` default per ``kind`` when left as ``None``.
    ``snr`` is linear. Distances and wavelength are in meters.
    """

    kind: str = "scalar"
    sensor_count: int = 10
    prior_mean: tuple | None = None
    prior_cov: tuple | None = None
    scalar_gains: tuple = DEFAULT_SCALAR_GAINS
    wavelength: float = 0.125
    snr: float = 1e10
    one_hop_distance: float = 400.0
    two_hop_distance: float = 200.0
    placement_radius: float = 20.0
    placement: str = "sphere"
    fading: bool = False
    noise_power: float = 1.0
    p_t_grid: tuple = DEFAULT_PT_GRID
    p_r: float = 5.0
    trials: int = 10_000
    seed: int = 0
    epsilon: float = 1e-4
    max_iterations: int = 200
    bisection_tolerance: float = 1e-14
    floor: float = 1e-12

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.placement not in PLACEMENTS:
            raise InvalidInputError(f"placement must be one of {PLACEMENTS}, got {self.placement!r}")
        if self.prior_mean is None:
            object.__setattr__(self, "prior_mean", (1.0,) if self.kind == "scalar" else (30.0, 30.0, 10.0))
        if self.prior_cov is None:
            cov = ((1.0,),) if self.kind == "scalar" else ((4.0, 0, 0), (0, 4.0, 0), (0, 0, 1.0))
            object.__setattr__(self, "prior_cov", cov)
        object.__setattr__(self, "prior_mean", tuple(float(v) for v in np.ravel(self.prior_mean)))
        object.__setattr__(self, "prior_cov", tuple(tuple(float(v) for v in row) for row in np.atleast_2d(self.prior_cov)))
        object.__setattr__(self, "p_t_grid", tuple(float(v) for v in self.p_t_grid))
        object.__setattr__(self, "scalar_gains", tuple(float(v) for v in self.scalar_gains))
        if self.kind == "scalar" and len(self.scalar_gains) != self.sensor_count:
            raise InvalidInputError(
                f"scalar_gains has {len(self.scalar_gains)} entries for {self.sensor_count} sensors"
            )
        if self.kind == "vector" and len(self.prior_mean) != 3:
            raise InvalidInputError("vector scenario needs a 3-D prior mean")
        for name in ("wavelength", "snr", "one_hop_distance", "two_hop_distance",
                     "placement_radius", "noise_power", "p_r", "epsilon"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.one_hop_distance <= self.two_hop_distance:
            raise InvalidInputError("one_hop_distance must exceed two_hop_distance")
        if self.sensor_count < 1 or self.trials < 1:
            raise InvalidInputError("sensor_count and trials must be at least 1")
        grid = np.array(self.p_t_grid)
        if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise InvalidInputError("p_t_grid must be strictly positive and ascending")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(r) if isinstance(r, tuple) else r for r in v]
        return d

    @property
    def prior(self) -> GaussianBelief:
        return GaussianBelief(np.array(self.prior_mean), np.array(self.prior_cov))

    @property
    def sca_options(self) -> ScaOptions:
        return ScaOptions(epsilon=self.epsilon, max_iterations=self.max_iterations,
                          bisection_tolerance=self.bisection_tolerance, floor=self.floor)


@dataclass(frozen=True)
class Placement:
    sensor_coords: np.ndarray  # (M, 3)
    relay_coord: np.ndarray
    fc_coord: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sensor_coords, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "sensor_coords", s)
        object.__setattr__(self, "relay_coord", np.asarray(self.relay_coord, dtype=float))
        object.__setattr__(self, "fc_coord", np.asarray(self.fc_coord, dtype=float))
        if np.any(self.sensor_relay_distances <= 0) or self.relay_fc_distance <= 0:
            raise ScenarioError("coincident nodes in placement")

    @property
    def sensor_relay_distances(self) -> np.ndarray:
        return np.linalg.norm(self.sensor_coords - self.relay_coord, axis=1)

    @property
    def sensor_fc_distances(self) -> np.ndarray:
        return np.linalg.norm(self.sensor_coords - self.fc_coord, axis=1)

    @property
    def relay_fc_distance(self) -> float:
        return float(np.linalg.norm(self.fc_coord - self.relay_coord))


@dataclass(frozen=True)
class TrialResult:
    trial: int
    p_t: float
    method: str
    mse: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class CurvePoint:
    p_t: float
    method: str
    mean_mse: float
    std_err: float
    trials: int
    converged_fraction: float


@dataclass
class MseCurve:
    points: list[CurvePoint] = field(default_factory=list)
    excluded: dict = field(default_factory=dict)  # (p_t, method) -> failed trial indices

    def series(self, method: str) -> tuple[np.ndarray, np.ndarray]:
        pts = [p for p in self.points if p.method == method]
        return np.array([p.mean_mse for p in pts]), np.array([p.std_err for p in pts])


@dataclass
class SweepResult:
    curve: MseCurve
    results: list[TrialResult]

    def matrix(self, method: str, p_t_grid: Sequence[float]) -> np.ndarray:
        """Per-trial MSE as a (trials, budgets) array for paired comparisons."""
        col = {p: i for i, p in enumerate(p_t_grid)}
        rows = sorted({r.trial for r in self.results})
        out = np.full((len(rows), len(p_t_grid)), np.nan)
        row = {t: i for i, t in enumerate(rows)}
        for r in self.results:
            if r.method == method:
                out[row[r.trial], col[r.p_t]] = r.mse
        return out


def channel_gain(distance, wavelength, snr):
    """Free-space power gain ``snr * (wavelength / (4 pi d))^2``."""
    distance = np.asarray(distance, dtype=float)
    if np.any(distance <= 0) or not wavelength > 0 or not snr > 0:
        raise InvalidInputError("distance, wavelength and snr must be positive")
    g = snr * (wavelength / (4 * math.pi * distance)) ** 2
    return g if g.ndim else float(g)


def _target_site(config: ScenarioConfig) -> np.ndarray:
    # a scalar target has no position; its sensors surround the origin
    return np.array(config.prior_mean) if config.kind == "vector" else np.zeros(3)


def _sphere_points(rng, site, radius, count, avoid_singular):
    pts = np.empty((count, 3))
    k = 0
    while k < count:
        v = rng.standard_normal(3)
        v /= np.linalg.norm(v)
        # keep the linearised angle ratios away from their poles
        if avoid_singular and (abs(v[0]) < 0.1 or math.hypot(v[0], v[1]) < 0.1):
            continue
        pts[k] = site + radius * v
        k += 1
    return pts


def place_sensors(rng: np.random.Generator, config: ScenarioConfig) -> Placement:
    """Sensors on a sphere around the target site, randomly permuted over channels.

    With ``placement="permutation"`` the positions come from a fixed base
    layout (seeded by ``config.seed`` alone) and only their order is random.
    The relay sits ``two_hop_distance`` from the site along +x and the FC
    ``one_hop_distance`` from the site on the same axis.
    """
    site = _target_site(config)
    vector = config.kind == "vector"
    if config.placement == "permutation":
        base_rng = np.random.default_rng([config.seed, 0x5EED])
        pts = _sphere_points(base_rng, site, config.placement_radius, config.sensor_count, vector)
    else:
        pts = _sphere_points(rng, site, config.placement_radius, config.sensor_count, vector)
    pts = pts[rng.permutation(config.sensor_count)]
    axis = np.array([1.0, 0.0, 0.0])
    return Placement(pts, site + config.two_hop_distance * axis, site + config.one_hop_distance * axis)


def _link_gains(config: ScenarioConfig, placement: Placement | None, rng=None):
    m = config.sensor_count
    if placement is None:
        h_sr = np.full(m, channel_gain(config.two_hop_distance, config.wavelength, config.snr))
        h_rd = h_sr.copy()
        h_direct = np.full(m, channel_gain(config.one_hop_distance, config.wavelength, config.snr))
    else:
        h_sr = channel_gain(placement.sensor_relay_distances, config.wavelength, config.snr)
        h_rd = np.full(m, channel_gain(placement.relay_fc_distance, config.wavelength, config.snr))
        h_direct = channel_gain(placement.sensor_fc_distances, config.wavelength, config.snr)
    if config.fading:
        if rng is None:
            raise InvalidInputError("fading needs an rng")
        h_sr = h_sr * rng.exponential(size=m)
        h_rd = h_rd * rng.exponential(size=m)
        h_direct = h_direct * rng.exponential(size=m)
    return np.atleast_1d(h_sr), np.atleast_1d(h_rd), np.atleast_1d(h_direct)


def build_scalar_scenario(config: ScenarioConfig, placement: Placement | None = None,
                          rng=None) -> RelayProblem:
    """Scalar target seen through the configured per-sensor gains.

    Without a placement every link uses its nominal distance.
    """
    if config.kind != "scalar":
        raise InvalidInputError("build_scalar_scenario needs kind='scalar'")
    m = config.sensor_count
    net = SensorNetwork(np.array(config.scalar_gains).reshape(m, 1), config.noise_power * np.eye(m))
    moments = observation_moments(config.prior, net)
    h_sr, h_rd, h_direct = _link_gains(config, placement, rng)
    return RelayProblem.from_moments(moments, h_sr, h_rd, config.noise_power, config.noise_power,
                                     h_direct, config.noise_power, net)


def measurement(x, sensor) -> np.ndarray:
    """Range, y/x bearing ratio and elevation ratio of target ``x`` seen from ``sensor``."""
    d = np.asarray(x, dtype=float) - np.asarray(sensor, dtype=float)
    rng_ = np.linalg.norm(d)
    horiz = math.hypot(d[0], d[1])
    return np.array([rng_, d[1] / d[0], d[2] / horiz])


def measurement_jacobian(x, sensor, index: int | None = None) -> np.ndarray:
    """Analytic 3x3 Jacobian of :func:`measurement` with respect to the target position."""
    d = np.asarray(x, dtype=float) - np.asarray(sensor, dtype=float)
    r = float(np.linalg.norm(d))
    horiz = math.hypot(d[0], d[1])
    label = "sensor" if index is None else f"sensor {index}"
    if r == 0.0:
        raise ScenarioError(f"{label} coincides with the linearisation point")
    if d[0] == 0.0 or horiz == 0.0:
        raise ScenarioError(f"{label} is on a singular manifold of the angle measurements")
    return np.array([
        d / r,
        [-d[1] / d[0] ** 2, 1.0 / d[0], 0.0],
        [-d[2] * d[0] / horiz**3, -d[2] * d[1] / horiz**3, 1.0 / horiz],
    ])


def build_vector_scenario(config: ScenarioConfig, placement: Placement, rng=None) -> RelayProblem:
    """3-D target, three linearised measurement channels per sensor.

    The three rows of sensor j share its link gains.
    """
    if config.kind != "vector":
        raise InvalidInputError("build_vector_scenario needs kind='vector'")
    m_x = np.array(config.prior_mean)
    g = np.vstack([measurement_jacobian(m_x, s, j) for j, s in enumerate(placement.sensor_coords)])
    net = SensorNetwork(g, config.noise_power * np.eye(g.shape[0]))
    moments = observation_moments(config.prior, net)
    h_sr, h_rd, h_direct = (np.repeat(h, 3) for h in _link_gains(config, placement, rng))
    return RelayProblem.from_moments(moments, h_sr, h_rd, config.noise_power, config.noise_power,
                                     h_direct, config.noise_power, net)


def build_problem(config: ScenarioConfig, rng: np.random.Generator) -> RelayProblem:
    placement = place_sensors(rng, config)
    if config.kind == "scalar":
        return build_scalar_scenario(config, placement, rng)
    return build_vector_scenario(config, placement, rng)


def trial_rng(config: ScenarioConfig, trial: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, trial])


def run_trial(config: ScenarioConfig, trial: int, methods: Sequence[str] = METHODS) -> list[TrialResult]:
    """All methods at all budgets on one channel realization."""
    problem = build_problem(config, trial_rng(config, trial))
    opts = config.sca_options
    out = []
    for p_t in config.p_t_grid:
        budgets = Budgets(p_t, config.p_r)
        for method in methods:
            iterations, converged = 0, True
            try:
                if method == "two_hop_opt":
                    alloc, trace = optimize(problem, budgets, opts)
                    mse = problem.mse(alloc)
                    iterations, converged = trace.iterations, trace.converged
                elif method == "two_hop_uniform":
                    mse = problem.mse(uniform_allocation(problem.channel_powers, budgets))
                elif method == "one_hop_opt":
                    alpha, trace = one_hop_optimize(problem, p_t, opts)
                    mse = problem.one_hop_mse(alpha)
                    iterations, converged = trace.iterations, trace.converged
                elif method == "one_hop_uniform":
                    mse = problem.one_hop_mse(one_hop_uniform(problem.channel_powers, p_t))
                else:
                    raise InvalidInputError(f"unknown method {method!r}")
            except NumericalError as exc:
                log.warning("trial %d, P_T=%g, %s failed: %s", trial, p_t, method, exc)
                mse, converged = float("nan"), False
            out.append(TrialResult(trial, p_t, method, float(mse), iterations, converged))
    return out


def _run_chunk(args):
    config, trials, methods = args
    return [r for t in trials for r in run_trial(config, t, methods)]


def iter_trials(config: ScenarioConfig, methods: Sequence[str] = METHODS,
                workers: int = 1, chunk: int = 25) -> Iterator[list[TrialResult]]:
    """Yield per-chunk trial results in trial order, whatever the worker count."""
    for m in methods:
        if m not in METHODS:
            raise InvalidInputError(f"unknown method {m!r}")
    indices = list(range(config.trials))
    chunks = [indices[i:i + chunk] for i in range(0, len(indices), chunk)]
    if workers <= 1:
        for c in chunks:
            yield _run_chunk((config, c, tuple(methods)))
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_run_chunk, [(config, c, tuple(methods)) for c in chunks])


def aggregate(results: Iterable[TrialResult], p_t_grid: Sequence[float],
              methods: Sequence[str]) -> MseCurve:
    """Mean and standard error per (budget, method); failed trials are excluded and listed."""
    by_key: dict = {}
    for r in sorted(results, key=lambda r: r.trial):
        by_key.setdefault((r.p_t, r.method), []).append(r)
    curve = MseCurve()
    for p_t in p_t_grid:
        for method in methods:
            rs = by_key.get((p_t, method), [])
            vals = np.array([r.mse for r in rs])
            ok = np.isfinite(vals)
            failed = [r.trial for r, good in zip(rs, ok) if not good]
            if failed:
                curve.excluded[(p_t, method)] = failed
            n = int(ok.sum())
            mean = float(np.mean(vals[ok])) if n else float("nan")
            se = float(np.std(vals[ok], ddof=1) / math.sqrt(n)) if n > 1 else 0.0
            conv = float(np.mean([r.converged for r in rs])) if rs else 0.0
            curve.points.append(CurvePoint(p_t, method, mean, se, n, conv))
    return curve


CSV_HEADER = "p_t,method,mean_mse,std_err,trials,converged_fraction"


def curve_csv(curve: MseCurve) -> str:
    """Render a curve as CSV text; floats use repr so output is locale-free and exact."""
    lines = [CSV_HEADER]
    for p in curve.points:
        lines.append(f"{p.p_t!r},{p.method},{p.mean_mse!r},{p.std_err!r},{p.trials},{p.converged_fraction!r}")
    return "\n".join(lines) + "\n"


def run_sweep(config: ScenarioConfig, methods: Sequence[str] = METHODS, workers: int = 1) -> SweepResult:
    results = [r for chunk in iter_trials(config, methods, workers) for r in chunk]
    return SweepResult(aggregate(results, config.p_t_grid, methods), results)


def simulate_realization(problem: RelayProblem, alloc: Allocation, rng: np.random.Generator,
                         samples: int, batch: int = 20_000) -> tuple[float, float]:
    """Empirical MSE of the FC estimator by simulating every signal end to end.

    Draws the target and observation noise (or the joint observation when the
    problem carries no sensor network), the relay and FC noises, forms the
    relay input and FC input, and applies the MMSE estimator built from the
    FC-side joint moments.

    Returns
    -------
    mean : float
        Average squared error over ``samples`` draws.
    std_err : float
        Standard error of that average.
    """
    if samples < 1:
        raise InvalidInputError("samples must be at least 1")
    mom, spec = problem.moments, problem.spec
    at_fc = fc_moments(mom, spec, alloc)
    n_dim, m = mom.mean_x.size, mom.mean_y.size
    joint_chol = None
    if problem.network is None:
        joint_chol = _psd_sqrt(mom.joint_cov)
    else:
        prior_chol = _psd_sqrt(mom.cov_x)
        noise_chol = np.linalg.cholesky(problem.network.r_n)
    relay_amp = np.sqrt(spec.h_sr * alloc.alpha)
    fwd_amp = np.sqrt(spec.h_rd * alloc.beta / (spec.h_sr * spec.channel_powers * alloc.alpha + spec.sigma_sr))
    errs = []
    done = 0
    while done < samples:
        k = min(batch, samples - done)
        if joint_chol is None:
            x = mom.mean_x + rng.standard_normal((k, n_dim)) @ prior_chol.T
            y = x @ problem.network.g.T + rng.standard_normal((k, m)) @ noise_chol.T
        else:
            xy = np.concatenate([mom.mean_x, mom.mean_y]) + rng.standard_normal((k, n_dim + m)) @ joint_chol.T
            x, y = xy[:, :n_dim], xy[:, n_dim:]
        z_relay = relay_amp * y + np.sqrt(spec.sigma_sr) * rng.standard_normal((k, m))
        z = fwd_amp * z_relay + np.sqrt(spec.sigma_rd) * rng.standard_normal((k, m))
        x_hat = mmse_estimate(at_fc, z)
        errs.append(np.sum((x - x_hat) ** 2, axis=1))
        done += k
    e = np.concatenate(errs)
    se = float(np.std(e, ddof=1) / math.sqrt(e.size)) if e.size > 1 else float("inf")
    return float(np.mean(e)), se


def _psd_sqrt(c: np.ndarray) -> np.ndarray:
    # works for singular covariances, unlike Cholesky
    w, v = np.linalg.eigh(c)
    return v * np.sqrt(np.clip(w, 0.0, None))

"""Trajectory ensembles, entropy averaging, parameter sweeps and checkpoints.

Trajectories run in a bounded process pool. Results are always reduced in
trajectory-index order, so statistics do not depend on the worker count or on
scheduling. Every sweep point reuses the same seed (common random numbers),
which keeps a one-point sweep identical to a direct ensemble run and reduces
the noise of point-to-point differences.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import multiprocessing as mp
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import CheckpointError, ConfigError, IntegratorError, TruncationError
from .hilbert import OCCUPANCY_ABORT
from .model import DuffingParams, DuffingSystem, SquidSystem, derive_dimensionless, scale_params
from .qsd import (IntegratorConfig, NoiseStream, format_value, initial_state, resolved_squeeze, run_trajectory,
                  write_csv)

logger = logging.getLogger(__name__)

WORKER_CAP_ENV = "SQUIDQSD_MAX_WORKERS"
CHECKPOINT_FORMAT = "squidqsd-sweep-checkpoint"
CHECKPOINT_VERSION = 1
SWEEP_COLUMNS = ["axis_value", "grand_mean_entropy", "stderr", "n_traj", "converged"]
CLASS_COLUMNS = ["mean_S_entrained", "mean_S_chaotic"]
OBSERVABLES = ("x1", "p1", "x2", "p2")
# squeeze threshold tried by the resolution probe when the configured frame only moves
ALTERNATE_SQUEEZE = 4.0


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble size and averaging window.

    ``t_transient`` defaults to 50 drive periods of the system being run.
    ``t_total``, when given, overrides the integrator's run length.
    """

    n_trajectories: int = 16
    seed: int = 0
    t_transient: float | None = None
    t_total: float | None = None
    convergence_target: float = 0.01
    initial_state: str = "displaced_vacuum"

    def __post_init__(self):
        if int(self.n_trajectories) != self.n_trajectories or self.n_trajectories < 1:
            raise ConfigError(f"n_trajectories must be a positive integer, got {self.n_trajectories!r}")
        if self.t_transient is not None and self.t_transient < 0:
            raise ConfigError("t_transient must be non-negative")
        if self.t_total is not None and not self.t_total > 0:
            raise ConfigError("t_total must be positive")
        if self.t_transient is not None and self.t_total is not None and self.t_transient >= self.t_total:
            raise ConfigError("t_transient must be shorter than t_total")
        if not self.convergence_target > 0:
            raise ConfigError("convergence_target must be positive")


@dataclass(frozen=True)
class ClassifierConfig:
    """Spectral test for entrained (periodic) motion.

    A segment is entrained when more than ``threshold`` of the power of the
    mean-removed, Hann-windowed series lies within ``rel_width * omega`` of a
    drive harmonic ``k * omega``. ``window_periods`` sets the sliding window
    used to time the onset of entrainment.
    """

    threshold: float = 0.95
    rel_width: float = 0.05
    window_periods: int = 40
    observable: str = "x1"
    force: str | None = None  # "entrained" or "chaotic" bypasses the test

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ConfigError("classifier threshold must lie in (0, 1)")
        if not 0 < self.rel_width < 0.5:
            raise ConfigError("classifier rel_width must lie in (0, 0.5)")
        if self.observable not in OBSERVABLES:
            raise ConfigError(f"classifier observable must be one of {OBSERVABLES}")
        if self.force not in (None, "entrained", "chaotic"):
            raise ConfigError("classifier force must be None, 'entrained' or 'chaotic'")


def spectral_concentration(series, dt_sample: float, omega: float, rel_width: float = 0.05) -> float:
    """Fraction of spectral power within ``rel_width*omega`` of the drive harmonics."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    if x.size < 4:
        return float("nan")
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size))) ** 2
    w = 2.0 * math.pi * np.fft.rfftfreq(x.size, dt_sample)
    total = spec[1:].sum()
    if total <= 0.0:
        # a constant series is trivially locked
        return 1.0
    k = np.rint(w / omega)
    near = (k >= 1) & (np.abs(w - k * omega) <= rel_width * omega)
    return float(spec[near].sum() / total)


def classify_segment(series, dt_sample, omega, cfg: ClassifierConfig) -> bool:
    if cfg.force is not None:
        return cfg.force == "entrained"
    return spectral_concentration(series, dt_sample, omega, cfg.rel_width) > cfg.threshold


def entrainment_time(times, series, omega, cfg: ClassifierConfig, t_start: float = 0.0) -> float:
    """Earliest window start after which every window is entrained (``inf`` if never).

    Windows span ``window_periods`` drive periods and advance by one period.
    """
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    dt_sample = times[1] - times[0]
    period = 2.0 * math.pi / omega
    width = int(round(cfg.window_periods * period / dt_sample))
    hop = max(1, int(round(period / dt_sample)))
    first = int(np.searchsorted(times, t_start - 1e-9))
    starts = list(range(first, len(times) - width + 1, hop))
    if not starts:
        return float("inf")
    flags = [classify_segment(series[s:s + width], dt_sample, omega, cfg) for s in starts]
    onset = float("inf")
    for s, ok in zip(reversed(starts), reversed(flags)):
        if not ok:
            break
        onset = float(times[s])
    return onset


@dataclass
class EnsembleStats:
    """Reduced results of one ensemble.

    ``grand_mean_entropy`` is the time-and-trajectory mean over samples after
    the transient. ``time_estimate`` is the post-transient time mean of
    trajectory 0 alone and ``ensemble_estimate`` the across-trajectory mean at
    the final sample; both are kept as the two single-axis estimators.
    """

    times: np.ndarray
    mean_entropy_series: np.ndarray
    mean_series: dict
    grand_mean_entropy: float
    stderr: float
    n_used: int
    n_failed: int
    converged: bool
    time_estimate: float
    ensemble_estimate: float
    ensemble_estimate_stderr: float
    trajectory_means: np.ndarray
    t_transient: float
    classes: list | None = None
    entrainment_times: np.ndarray | None = None
    class_means: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def degraded(self) -> bool:
        return self.n_failed > 0

    def to_dict(self) -> dict:
        d = {}
        for k, v in asdict(self).items():
            if isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, dict):
                v = {kk: (vv.tolist() if isinstance(vv, np.ndarray) else vv) for kk, vv in v.items()}
            d[k] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleStats":
        d = dict(d)
        for k in ("times", "mean_entropy_series", "trajectory_means", "entrainment_times"):
            if d.get(k) is not None:
                d[k] = np.asarray(d[k], dtype=float)
        d["mean_series"] = {k: np.asarray(v, dtype=float) for k, v in d["mean_series"].items()}
        return cls(**d)


def max_workers(requested: int | None = None) -> int:
    """Worker count, capped by the SQUIDQSD_MAX_WORKERS environment variable."""
    n = (os.cpu_count() or 1) if requested is None else int(requested)
    cap = os.environ.get(WORKER_CAP_ENV)
    if cap:
        try:
            n = min(n, int(cap))
        except ValueError as exc:
            raise ConfigError(f"{WORKER_CAP_ENV} must be an integer, got {cap!r}") from exc
    return max(1, n)


def _run_one(task):
    system, icfg, seed, index, kind = task
    phi, alpha = initial_state(system, kind, track_frame=icfg.track_frame)
    try:
        rec = run_trajectory(system, icfg, NoiseStream(seed, index), initial=(phi, alpha))
    except (TruncationError, IntegratorError) as exc:
        return index, None, f"{type(exc).__name__}: {exc}"
    return index, rec, None


class _Pool:
    """Serial or process-pool map that always returns results in input order."""

    def __init__(self, workers: int | None = None):
        self.workers = max_workers(workers)
        self._ex = None

    def map(self, fn, tasks):
        tasks = list(tasks)
        if self.workers == 1 or len(tasks) == 1:
            return [fn(t) for t in tasks]
        if self._ex is None:
            self._ex = ProcessPoolExecutor(max_workers=self.workers, mp_context=mp.get_context("spawn"))
        return list(self._ex.map(fn, tasks))

    def close(self):
        if self._ex is not None:
            self._ex.shutdown()
            self._ex = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _resolve_icfg(system, icfg: IntegratorConfig, ecfg: EnsembleConfig):
    if ecfg.t_total is not None:
        icfg = replace(icfg, t_total=ecfg.t_total)
    t_tr = 50.0 * system.drive_period if ecfg.t_transient is None else ecfg.t_transient
    if t_tr >= icfg.t_total:
        raise ConfigError(f"t_transient={t_tr:.6g} is not shorter than t_total={icfg.t_total:.6g}")
    return icfg, t_tr


def _block_stderr(x, n_blocks=10) -> float:
    blocks = [b.mean() for b in np.array_split(np.asarray(x), n_blocks) if b.size]
    if len(blocks) < 2:
        return 0.0
    return float(np.std(blocks, ddof=1) / math.sqrt(len(blocks)))


def reduce_records(records, t_transient: float, convergence_target: float = 0.01,
                   omega: float | None = None, classifier: ClassifierConfig | None = None,
                   n_failed: int = 0, failures=None) -> EnsembleStats:
    """Combine trajectory records (already in index order) into EnsembleStats."""
    if not records:
        return EnsembleStats(
            times=np.zeros(0), mean_entropy_series=np.zeros(0), mean_series={k: np.zeros(0) for k in OBSERVABLES},
            grand_mean_entropy=float("nan"), stderr=float("nan"), n_used=0, n_failed=n_failed,
            converged=False, time_estimate=float("nan"), ensemble_estimate=float("nan"),
            ensemble_estimate_stderr=float("nan"), trajectory_means=np.zeros(0), t_transient=t_transient,
            failures=list(failures or []),
        )
    times = records[0].times
    S = np.stack([r.entropy for r in records])
    post = times > t_transient
    if not post.any():
        raise ConfigError("no samples after the transient window")
    traj_means = S[:, post].mean(axis=1)
    n = len(records)
    grand = float(traj_means.mean())
    if n >= 2:
        stderr = float(traj_means.std(ddof=1) / math.sqrt(n))
    else:
        stderr = _block_stderr(S[0, post])
    n_head = int(math.floor(0.9 * n))
    if n_head >= 1 and n_head < n:
        head = float(traj_means[:n_head].mean())
        scale = abs(grand)
        converged = abs(grand - head) <= convergence_target * scale if scale > 0 else head == grand
    else:
        converged = False
    final = S[:, -1]
    stats = EnsembleStats(
        times=times.copy(),
        mean_entropy_series=S.mean(axis=0),
        mean_series={k: np.stack([getattr(r, "exp_" + k) for r in records]).mean(axis=0) for k in OBSERVABLES},
        grand_mean_entropy=grand,
        stderr=stderr,
        n_used=n,
        n_failed=n_failed,
        converged=bool(converged),
        time_estimate=float(traj_means[0]),
        ensemble_estimate=float(final.mean()),
        ensemble_estimate_stderr=float(final.std(ddof=1) / math.sqrt(n)) if n >= 2 else 0.0,
        trajectory_means=traj_means,
        t_transient=t_transient,
        failures=list(failures or []),
    )
    if classifier is not None and omega is not None:
        dt_s = times[1] - times[0]
        labels, onsets = [], []
        for r in records:
            series = getattr(r, "exp_" + classifier.observable)
            ent = classify_segment(series[post], dt_s, omega, classifier)
            labels.append("entrained" if ent else "chaotic")
            onsets.append(entrainment_time(times, series, omega, classifier)
                          if classifier.force is None else float("nan"))
        stats.classes = labels
        stats.entrainment_times = np.array(onsets)
        for cls in ("entrained", "chaotic"):
            sel = [m for m, lab in zip(traj_means, labels) if lab == cls]
            stats.class_means[cls] = float(np.mean(sel)) if sel else float("nan")
    return stats


def run_ensemble(system, icfg: IntegratorConfig, ecfg: EnsembleConfig,
                 classifier: ClassifierConfig | None = None, workers: int | None = None,
                 pool: _Pool | None = None, return_records: bool = False, known: dict | None = None):
    """Run ``ecfg.n_trajectories`` trajectories and reduce them.

    Trajectories that abort on truncation health or integrator failure are
    excluded and counted in ``n_failed``. With ``return_records`` the raw
    records are returned alongside the statistics. ``known`` maps trajectory
    index to an already computed record (same system, config and seed),
    which is used instead of rerunning it.
    """
    icfg, t_tr = _resolve_icfg(system, icfg, ecfg)
    known = known or {}
    tasks = [(system, icfg, ecfg.seed, k, ecfg.initial_state) for k in range(ecfg.n_trajectories)
             if k not in known]
    own = pool is None
    pool = _Pool(workers) if own else pool
    try:
        results = pool.map(_run_one, tasks) if tasks else []
    finally:
        if own:
            pool.close()
    results += [(k, rec, None) for k, rec in known.items() if k < ecfg.n_trajectories]
    results.sort(key=lambda r: r[0])
    records = [r for _, r, err in results if r is not None]
    failures = [(k, err) for k, r, err in results if r is None]
    for k, err in failures:
        logger.warning("trajectory %d failed: %s", k, err)
    omega = 2.0 * math.pi / system.drive_period
    stats = reduce_records(records, t_tr, ecfg.convergence_target, omega, classifier,
                           n_failed=len(failures), failures=failures)
    stats.metadata = {
        "system": system.metadata(),
        "integrator": asdict(icfg),
        "ensemble": asdict(ecfg),
        "classifier": asdict(classifier) if classifier else None,
        "frame_recentres": [r.metadata.get("frame_recentres", 0) for r in records],
        "max_norm_drift": float(max((r.norm_drift.max() for r in records), default=0.0)),
        "max_occupancy": float(max((r.truncation_occupancy.max() for r in records), default=0.0)),
        # share of all samples whose occupancy is above the default abort level
        "occupancy_fraction_above_default_abort": float(np.mean(
            np.concatenate([r.truncation_occupancy for r in records]) > OCCUPANCY_ABORT)) if records else 0.0,
        "frame_refits": [r.metadata.get("frame_refits", 0) for r in records],
    }
    if return_records:
        return stats, records
    return stats


def choose_resolution(make_system, icfg: IntegratorConfig, ecfg: EnsembleConfig,
                      candidates=(14, 18, 22, 26, 30, 36), target: float = 1e-4, return_probe: bool = False):
    """Cheapest healthy (Fock dimension, frame) pair for one sweep point.

    For each candidate dimension the probe (trajectory 0 over the full time
    window) is run first with the configured frame and then, if that fails,
    with the other kind (squeezed if the configured frame only moves, and
    vice versa). A probe is healthy when the top-two
    level occupancy never exceeds ``target``; unhealthy probes stop at the
    first breach. Returns ``(fock_dim, icfg)`` with the chosen frame setting.
    With ``return_probe`` a third item is the healthy probe record (``None``
    if no candidate was healthy); it equals trajectory 0 of the ensemble.
    """
    last = None
    for n in candidates:
        system = make_system(n)
        first = resolved_squeeze(system, icfg)
        for thr in (first, 0.0 if first else ALTERNATE_SQUEEZE):
            trial = replace(icfg, squeeze_threshold=thr)
            run_icfg, _ = _resolve_icfg(system, trial, ecfg)
            phi, alpha = initial_state(system, ecfg.initial_state, track_frame=run_icfg.track_frame)
            try:
                rec = run_trajectory(system, replace(run_icfg, occupancy_abort=target), NoiseStream(ecfg.seed, 0),
                                     initial=(phi, alpha))
                occ = float(rec.truncation_occupancy.max())
            except (TruncationError, IntegratorError):
                occ, rec = float("inf"), None
            logger.info("resolution probe N=%d squeeze=%g: max occupancy %.3e", n, thr, occ)
            last = (n, trial)
            if occ <= target:
                rec.metadata["integrator"] = asdict(run_icfg)
                return (n, trial, rec) if return_probe else (n, trial)
    warnings.warn(f"no candidate Fock dimension reached occupancy {target:g}; using {last[0]}", stacklevel=2)
    return (*last, None) if return_probe else last


def choose_fock_dim(make_system, icfg: IntegratorConfig, ecfg: EnsembleConfig,
                    candidates=(14, 18, 22, 26, 30, 36), target: float = 1e-4) -> int:
    """Fock dimension chosen by :func:`choose_resolution`."""
    return choose_resolution(make_system, icfg, ecfg, candidates, target)[0]


@dataclass
class SweepResult:
    axis_name: str
    axis_values: list
    points: list
    fock_dims: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.axis_values, dtype=float)
        if v.size > 1 and not (np.all(np.diff(v) > 0) or np.all(np.diff(v) < 0)):
            raise ConfigError("sweep axis must be strictly monotone")

    @property
    def has_classes(self) -> bool:
        return any(p.classes is not None for p in self.points)

    def rows(self):
        out = []
        for v, p in zip(self.axis_values, self.points):
            row = [float(v), p.grand_mean_entropy, p.stderr, int(p.n_used), bool(p.converged)]
            if self.has_classes:
                row += [p.class_means.get("entrained", float("nan")), p.class_means.get("chaotic", float("nan"))]
            out.append(row)
        return out

    def header(self):
        return SWEEP_COLUMNS + (CLASS_COLUMNS if self.has_classes else [])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.header()) + "\n")
            for row in self.rows():
                fh.write(",".join(format_value(v) for v in row) + "\n")


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path, expected_hash: str):
    """Completed points from ``path``; ``[]`` for a missing or empty file."""
    if not os.path.exists(path):
        return []
    with open(path) as fh:
        text = fh.read()
    if not text.strip():
        warnings.warn(f"checkpoint {path} is empty; starting from scratch", stacklevel=2)
        return []
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is corrupt at byte offset {exc.pos}: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a sweep checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {doc.get('version')!r} unsupported (expected {CHECKPOINT_VERSION})")
    if doc.get("config_hash") != expected_hash:
        raise CheckpointError("checkpoint was written by a different sweep configuration; refusing to resume")
    return doc.get("completed", [])


def save_checkpoint(path, config_hash_: str, config: dict, completed: list) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash_,
        "config": config,
        "completed": completed,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def _sweep(axis_name, axis_values, make_system, icfg, ecfg, classifier, fock_dim, workers,
           checkpoint, config, stop_after=None) -> SweepResult:
    axis_values = [float(v) for v in axis_values]
    h = config_hash(config)
    completed = load_checkpoint(checkpoint, h) if checkpoint else []
    for k, entry in enumerate(completed):
        if k >= len(axis_values) or entry["axis_value"] != axis_values[k]:
            raise CheckpointError("checkpoint points do not match the requested axis")
    points = [EnsembleStats.from_dict(e["stats"]) for e in completed]
    dims = [int(e["fock_dim"]) for e in completed]
    frames = [e.get("squeeze_threshold") for e in completed]
    with _Pool(workers) as pool:
        for k in range(len(completed), len(axis_values)):
            if stop_after is not None and k >= stop_after:
                break
            v = axis_values[k]
            point_icfg, known = icfg, None
            if fock_dim == "auto":
                n, point_icfg, probe = choose_resolution(lambda d: make_system(v, d), icfg, ecfg,
                                                         return_probe=True)
                known = {0: probe} if probe is not None else None
            else:
                n = int(fock_dim)
            system = make_system(v, n)
            stats = run_ensemble(system, point_icfg, ecfg, classifier=classifier, pool=pool, known=known)
            points.append(stats)
            dims.append(n)
            frames.append(point_icfg.squeeze_threshold)
            logger.info("%s=%g N=%d <S>=%.6g ± %.2g", axis_name, v, n, stats.grand_mean_entropy, stats.stderr)
            if checkpoint:
                completed.append({"axis_value": v, "fock_dim": n, "squeeze_threshold": point_icfg.squeeze_threshold,
                                  "stats": stats.to_dict(),
                                  "rng": {"seed": ecfg.seed, "trajectories": ecfg.n_trajectories}})
                save_checkpoint(checkpoint, h, config, completed)
    done = axis_values[:len(points)]
    # squeeze threshold each point ran with (None: the model default)
    return SweepResult(axis_name, done, points, dims,
                       metadata={"config": config, "config_hash": h, "squeeze_thresholds": frames})


def capacitance_sweep(base, a_values, icfg: IntegratorConfig, ecfg: EnsembleConfig, *, mu: float = 0.2,
                      fock_dim="auto", classifier: ClassifierConfig | None = None, workers=None,
                      checkpoint=None, stop_after=None) -> SweepResult:
    """Ensemble entropy of the coupled SQUID rings versus C = a * C_base."""
    a_values = [float(a) for a in a_values]
    if not all(a > 0 for a in a_values):
        raise ConfigError("scale factors must be positive")

    def make(C, n):
        return SquidSystem.from_circuit(scale_params(base, C / base.C, 1.0), fock_dim=n, mu=mu)

    config = {"sweep": "capacitance", "base": asdict(base), "a_values": a_values, "mu": mu,
              "fock_dim": fock_dim, "integrator": asdict(icfg), "ensemble": asdict(ecfg),
              "classifier": asdict(classifier) if classifier else None}
    res = _sweep("C", [a * base.C for a in a_values], make, icfg, ecfg, classifier, fock_dim, workers,
                 checkpoint, config, stop_after)
    res.metadata["normalized"] = [asdict(derive_dimensionless(scale_params(base, a, 1.0)))
                                  for a in a_values[:len(res.points)]]
    return res


def beta_sweep(dp_base: DuffingParams, beta_values, icfg: IntegratorConfig, ecfg: EnsembleConfig, *,
               fock_dim=15, classifier: ClassifierConfig | None = ClassifierConfig(), workers=None,
               checkpoint=None, stop_after=None) -> SweepResult:
    """Ensemble entropy of the coupled Duffing oscillators versus β, split by class."""
    beta_values = [float(b) for b in beta_values]
    if not all(b > 0 for b in beta_values):
        raise ConfigError("beta values must be positive")

    def make(beta, n):
        return DuffingSystem(replace(dp_base, beta=beta), fock_dim=n)

    config = {"sweep": "beta", "base": asdict(dp_base), "beta_values": beta_values, "fock_dim": fock_dim,
              "integrator": asdict(icfg), "ensemble": asdict(ecfg),
              "classifier": asdict(classifier) if classifier else None}
    return _sweep("beta", beta_values, make, icfg, ecfg, classifier, fock_dim, workers, checkpoint,
                  config, stop_after)

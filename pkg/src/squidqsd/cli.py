"""Command-line entry point.

Subcommands::

    squidqsd squid run          single SQUID trajectory (optionally with the RSJ orbit)
    squidqsd squid sweep-c      ensemble entropy versus capacitance
    squidqsd duffing run        single Duffing trajectory
    squidqsd duffing sweep-beta ensemble entropy versus beta, split by class
    squidqsd validate           oracle suite
    squidqsd rerun MANIFEST     repeat a run and compare output hashes

Every run writes its outputs and one ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 validation failure or rerun mismatch, 2 configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import math
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from . import __version__, config, hilbert, validate
from .constants import constants_table
from .ensemble import beta_sweep, capacitance_sweep, run_ensemble
from .errors import CheckpointError, ConfigError, SquidQSDError
from .qsd import NoiseStream, initial_state, run_trajectory, write_csv
from .rsj import RsjState, integrate_rsj

logger = logging.getLogger("squidqsd")

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "squidqsd-run-manifest"
COARSE_CAVITY_DT = 0.1


@dataclass
class RunManifest:
    """Everything needed to repeat a run, plus hashes of what it wrote."""

    command: list
    options: dict
    config: dict
    constants: dict
    code_version: str
    seed: int
    started: str
    finished: str = ""
    outputs: dict = field(default_factory=dict)
    workers: int | None = None
    environment: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {"format": MANIFEST_FORMAT, **asdict(self)}
        return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"

    @classmethod
    def load(cls, path) -> "RunManifest":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict) or doc.pop("format", None) != MANIFEST_FORMAT:
            raise ConfigError(f"{path} is not a run manifest")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(f"manifest {path} is malformed: {exc}") from exc


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --- commands ---------------------------------------------------------------
# Each command takes (cfg, options, out_dir, workers) and returns
# (exit_code, [output file names]).

def _squid_run(cfg, opts, out, workers):
    return _single_run(cfg, opts, out, workers, compare_rsj=opts.get("compare_rsj", False))


def _duffing_run(cfg, opts, out, workers):
    return _single_run(cfg, opts, out, workers, compare_rsj=False)


def _single_run(cfg, opts, out, workers, compare_rsj):
    system = config.build_system(cfg)
    icfg = config.integrator_config(cfg)
    init = initial_state(system, cfg["initial_state"], cfg["initial_state_path"], track_frame=icfg.track_frame)
    rec = run_trajectory(system, icfg, NoiseStream(cfg["seed"], 0), initial=init)
    extra = None
    if compare_rsj:
        # classical orbit from the same starting flux, at rest, on the same grid
        tr = integrate_rsj(RsjState(float(rec.exp_x1[0]), 0.0), system.params, icfg.dt, icfg.t_total,
                           sample_stride=icfg.sample_stride)
        extra = {"phi_rsj": tr.phi, "phi_dot_rsj": tr.phi_dot}
    rec.to_csv(os.path.join(out, "trajectory.csv"), extra=extra)
    outputs = ["trajectory.csv"]
    if opts.get("ensemble_mean"):
        ecfg = replace(config.ensemble_config(cfg), t_total=icfg.t_total, t_transient=0.0)
        stats = run_ensemble(system, icfg, ecfg, workers=workers)
        if stats.n_used == 0:
            raise SquidQSDError("every trajectory of the ensemble failed")
        cols = [stats.times] + [stats.mean_series[k] for k in ("x1", "p1", "x2", "p2")] + [stats.mean_entropy_series]
        write_csv(os.path.join(out, "trajectory_mean.csv"), ["tau", "x1", "p1", "x2", "p2", "S"],
                  np.column_stack(cols))
        outputs.append("trajectory_mean.csv")
    if opts.get("dump_hamiltonian"):
        hilbert.dump_matrix(os.path.join(out, "hamiltonian_t0.txt"), system.hamiltonian(0.0))
        outputs.append("hamiltonian_t0.txt")
    occ = float(rec.truncation_occupancy.max())
    print(f"wrote {len(rec)} samples; max top-level occupancy {occ:.2e}; "
          f"mean S {float(rec.entropy.mean()):.6g}")
    return EXIT_OK, outputs


PLOT_STUB = '''"""Plot {title} from {csv_name}.

Columns of {csv_name}:
{columns}
"""

import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv_name}"
with open(path) as fh:
    rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
header, data = rows[0], [[float(v) if v not in ("true", "false") else v == "true" for v in r] for r in rows[1:]]
col = {{name: [r[k] for r in data] for k, name in enumerate(header)}}

fig, ax = plt.subplots()
ax.errorbar(col["axis_value"], col["grand_mean_entropy"], yerr=col["stderr"], marker="o", label="all")
for name in ("mean_S_entrained", "mean_S_chaotic"):
    if name in col:
        ax.plot(col["axis_value"], col[name], marker="s", linestyle="--", label=name)
{xscale}ax.set_xlabel("{xlabel}")
ax.set_ylabel("mean entanglement entropy")
ax.legend()
fig.savefig("{png_name}", dpi=150)
'''

SWEEP_COLUMN_DOCS = {
    "axis_value": "sweep parameter value",
    "grand_mean_entropy": "time-and-trajectory mean entanglement entropy after the transient",
    "stderr": "standard error across trajectory means",
    "n_traj": "trajectories that completed",
    "converged": "true when the mean over the first 90% of trajectories agrees within the target",
    "mean_S_entrained": "mean entropy of trajectories classified as entrained (nan if none)",
    "mean_S_chaotic": "mean entropy of trajectories classified as chaotic (nan if none)",
}


def _write_sweep(res, out, stem, title, xlabel, log_x):
    csv_name, script = f"{stem}.csv", f"plot_{stem}.py"
    res.to_csv(os.path.join(out, csv_name))
    columns = "\n".join(f"    {c}: {SWEEP_COLUMN_DOCS[c]}" for c in res.header())
    with open(os.path.join(out, script), "w") as fh:
        fh.write(PLOT_STUB.format(title=title, csv_name=csv_name, columns=columns, xlabel=xlabel,
                                  png_name=f"{stem}.png", xscale='ax.set_xscale("log")\n' if log_x else ""))
    for v, p, n in zip(res.axis_values, res.points, res.fock_dims):
        print(f"{res.axis_name}={v:.6g} N={n} <S>={p.grand_mean_entropy:.6g} ± {p.stderr:.2g} "
              f"used={p.n_used} failed={p.n_failed}")
    code = EXIT_NUMERICAL if any(p.n_used == 0 for p in res.points) else EXIT_OK
    return code, [csv_name, script]


def _checkpoint_path(out, stem, resume):
    path = os.path.join(out, f"{stem}.checkpoint.json")
    if not resume and os.path.exists(path):
        os.remove(path)
    return path


def _squid_sweep_c(cfg, opts, out, workers):
    if cfg["zeta"] is not None or cfg["phi_d"] is not None:
        raise ConfigError("zeta/phi_d overrides are not supported by sweep-c (groups are derived per point)")
    sw = cfg["sweep"]
    base = config.circuit_params(cfg)
    classifier = config.classifier_config(cfg) if sw["classify"] else None
    res = capacitance_sweep(base, sw["a_values"], config.integrator_config(cfg), config.ensemble_config(cfg),
                            mu=float(cfg["mu"]), fock_dim=sw["fock_dim"], classifier=classifier,
                            workers=workers, checkpoint=_checkpoint_path(out, "sweep_c", opts.get("resume")))
    return _write_sweep(res, out, "sweep_c", "mean entanglement entropy versus capacitance",
                        "capacitance C (F)", log_x=True)


def _duffing_sweep_beta(cfg, opts, out, workers):
    sw = cfg["sweep"]
    res = beta_sweep(config.duffing_params(cfg), sw["beta_values"], config.integrator_config(cfg),
                     config.ensemble_config(cfg), fock_dim=sw["duffing_fock_dim"],
                     classifier=config.classifier_config(cfg), workers=workers,
                     checkpoint=_checkpoint_path(out, "sweep_beta", opts.get("resume")))
    return _write_sweep(res, out, "sweep_beta", "mean entanglement entropy versus Duffing beta",
                        "beta", log_x=True)


def _validate(cfg, opts, out, workers):
    dt = opts.get("dt")
    if dt is None:
        dt = COARSE_CAVITY_DT if opts.get("profile") == "coarse" else 1e-3
    rows = validate.run_checks(opts.get("filter"), cavity_dt=float(dt),
                               cavity_trajectories=int(opts.get("cavity_trajectories") or 1000))
    if not rows:
        raise ConfigError(f"no checks match filter {opts.get('filter')!r}; known: {', '.join(validate.CHECKS)}")
    print(validate.format_table(rows))
    with open(os.path.join(out, "validate.csv"), "w") as fh:
        fh.write("check,measured,tolerance,passed\n")
        for r in rows:
            fh.write(f"{r.name},{r.measured:.15g},{r.tolerance:.15g},{'true' if r.passed else 'false'}\n")
    failed = sum(not r.passed for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    return (EXIT_VALIDATION if failed else EXIT_OK), ["validate.csv"]


COMMANDS = {
    ("squid", "run"): ("squid", _squid_run),
    ("squid", "sweep-c"): ("squid", _squid_sweep_c),
    ("duffing", "run"): ("duffing", _duffing_run),
    ("duffing", "sweep-beta"): ("duffing", _duffing_sweep_beta),
    ("validate",): (None, _validate),
}


def execute(command, options, cfg, out, workers=None) -> tuple[int, RunManifest]:
    """Run ``command`` with a resolved config, write outputs and the manifest."""
    model, fn = COMMANDS[tuple(command)]
    cfg = copy.deepcopy(cfg)
    if model is not None:
        cfg["model"] = model
    config.validate_config(cfg)
    os.makedirs(out, exist_ok=True)
    if workers is None:
        workers = cfg["workers"]
    manifest = RunManifest(
        command=list(command), options=dict(options), config=cfg, constants=constants_table(),
        code_version=__version__, seed=int(cfg["seed"]), started=_now(), workers=workers,
        environment={"python": platform.python_version(), "numpy": np.__version__, "platform": platform.platform()},
    )
    code, files = fn(cfg, options, out, workers)
    manifest.finished = _now()
    manifest.outputs = {name: file_sha256(os.path.join(out, name)) for name in files}
    with open(os.path.join(out, MANIFEST_NAME), "w") as fh:
        fh.write(manifest.to_json())
    return code, manifest


def _rerun(args) -> int:
    old = RunManifest.load(args.manifest)
    if tuple(old.command) not in COMMANDS:
        raise ConfigError(f"manifest names unknown command {old.command}")
    if old.code_version != __version__:
        logger.warning("manifest written by version %s, running %s", old.code_version, __version__)
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.manifest)), "rerun")
    if os.path.abspath(out) == os.path.dirname(os.path.abspath(args.manifest)):
        raise ConfigError("rerun --out must differ from the original output directory")
    options = dict(old.options)
    options["resume"] = False
    code, new = execute(old.command, options, old.config, out, workers=args.workers)
    mismatched = [n for n, h in old.outputs.items() if new.outputs.get(n) != h]
    for name in sorted(old.outputs):
        print(f"{name}: {'identical' if name not in mismatched else 'DIFFERS'}")
    if code != EXIT_OK:
        return code
    return EXIT_VALIDATION if mismatched else EXIT_OK


# --- argument parsing -------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--workers", type=int, help="worker processes (capped by SQUIDQSD_MAX_WORKERS)")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="squidqsd", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    groups = parser.add_subparsers(dest="group", required=True)

    squid = groups.add_parser("squid", help="coupled SQUID rings").add_subparsers(dest="cmd", required=True)
    p = squid.add_parser("run", parents=[common], help="single trajectory")
    p.add_argument("--compare-rsj", action="store_true", help="add phi_rsj,phi_dot_rsj columns")
    p.add_argument("--ensemble-mean", action="store_true",
                   help="also write the trajectory-averaged series (ensemble.n_trajectories)")
    p.add_argument("--dump-hamiltonian", action="store_true", help="write H(0) as a text matrix dump")
    p = squid.add_parser("sweep-c", parents=[common], help="entropy versus capacitance")
    p.add_argument("--c-range", nargs=2, type=float, metavar=("CMIN", "CMAX"),
                   help="log-spaced capacitances in farads (replaces sweep.a_values)")
    p.add_argument("--points", type=int, default=8, help="number of points for --c-range")
    p.add_argument("--classify", action="store_true", help="add entrained/chaotic class columns")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")

    duff = groups.add_parser("duffing", help="coupled Duffing oscillators").add_subparsers(dest="cmd", required=True)
    p = duff.add_parser("run", parents=[common], help="single trajectory")
    p.add_argument("--ensemble-mean", action="store_true",
                   help="also write the trajectory-averaged series (ensemble.n_trajectories)")
    p.add_argument("--dump-hamiltonian", action="store_true", help="write H(0) as a text matrix dump")
    p = duff.add_parser("sweep-beta", parents=[common], help="entropy versus beta")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")

    p = groups.add_parser("validate", parents=[common], help="run the oracle suite")
    p.add_argument("--filter", help="run only checks whose name contains this")
    p.add_argument("--profile", choices=("default", "coarse"), default="default",
                   help="coarse uses a deliberately large cavity time step")
    p.add_argument("--dt", type=float, help="cavity-check time step")
    p.add_argument("--cavity-trajectories", type=int, help="cavity-check ensemble size (default 1000)")

    p = groups.add_parser("rerun", help="repeat a run from its manifest and compare outputs")
    p.add_argument("manifest")
    p.add_argument("--out", help="output directory (default: <manifest dir>/rerun)")
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _resolve(args):
    cfg = config.load_config(args.config, args.overrides)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.workers is not None:
        cfg["workers"] = args.workers
    options = {}
    if args.group == "validate":
        options = {"filter": args.filter, "profile": args.profile, "dt": args.dt,
                   "cavity_trajectories": args.cavity_trajectories}
        return ("validate",), options, cfg
    for key in ("compare_rsj", "ensemble_mean", "dump_hamiltonian", "classify", "resume"):
        if getattr(args, key, False):
            options[key] = True
    if options.pop("classify", False):
        cfg["sweep"]["classify"] = True
    if getattr(args, "c_range", None):
        cmin, cmax = args.c_range
        if not (0 < cmin < cmax) or args.points < 2:
            raise ConfigError("--c-range needs 0 < CMIN < CMAX and --points >= 2")
        base_c = float(cfg["C"]) * float(cfg["scale"]["a"])
        logs = np.linspace(math.log10(cmin), math.log10(cmax), args.points)
        cs = [10.0 ** v for v in logs]
        cs[0], cs[-1] = cmin, cmax
        cfg["sweep"]["a_values"] = [c / base_c for c in cs]
    return (args.group, args.cmd), options, cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.group == "rerun":
            return _rerun(args)
        command, options, cfg = _resolve(args)
        code, _ = execute(command, options, cfg, args.out)
        return code
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SquidQSDError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

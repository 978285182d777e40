"""Command-line entry point: ``oswcal {calibrate,tune,simulate,gen-synthetic}``.

Exit status: 0 on success, 1 when input is rejected, 2 on any other failure.
Progress goes to standard error; data goes to files.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import io
from .calibrator import SeirIcuModel, calibrate_auto, calibrate_oneoff
from .errors import ValidationError
from .ga import derive_seed
from .model import init_state, simulate_ensemble, week_first_day
from .synthetic import piecewise_schedule, synthetic_observations

log = logging.getLogger("oswcal")

# seed-derivation tags for the non-calibration subcommands
_SIMULATE_STREAM = 11
_TRUTH_STREAM = 12
_NOISE_STREAM = 13


def _override(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="key=value parameter file")
    common.add_argument(
        "--set", dest="overrides", action="append", type=_override, default=[],
        metavar="KEY=VALUE", help="override a config setting (repeatable)",
    )
    common.add_argument("--seed", type=int, help="override master_seed")
    common.add_argument("--threads", type=_positive, default=1, help="fitness evaluation workers")
    common.add_argument("--out-dir", help="override output_dir")
    common.add_argument("--restart", help="restart file to resume from")
    common.add_argument("-q", "--quiet", action="store_true", help="no progress output")

    parser = argparse.ArgumentParser(prog="oswcal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", parents=[common], help="automated sliding-window calibration")
    cal.add_argument(
        "--max-windows", type=_positive,
        help="stop after this many windows and write the restart file",
    )
    tune = sub.add_parser("tune", parents=[common], help="one-off GA post-tune from a restart")
    tune.add_argument("--start-week", type=int)
    tune.add_argument("--end-week", type=int)
    sim = sub.add_parser("simulate", parents=[common], help="forward run of an R0effects.csv")
    sim.add_argument("--schedule", help="schedule file (default: <out-dir>/R0effects.csv)")
    gen = sub.add_parser("gen-synthetic", parents=[common], help="ground truth + observed CSV")
    gen.add_argument("--noise", type=float, default=0.0, help="relative Gaussian noise sd")
    gen.add_argument("--block-weeks", type=_positive, default=4)
    gen.add_argument("--mu-low", type=float, default=0.2)
    gen.add_argument("--mu-high", type=float, default=0.8)
    return parser


def _load(args) -> io.Config:
    cfg = io.load_config(args.config, dict(args.overrides))
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.out_dir is not None:
        changes["output_dir"] = args.out_dir
    if args.restart is not None:
        changes["restart_path"] = args.restart
    return io.with_overrides(cfg, **changes) if changes else cfg


@contextmanager
def _executor(threads: int):
    if threads <= 1:
        yield None
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            yield pool


def _fresh_state(cfg: io.Config, week: int):
    return init_state(
        cfg.model, cfg.initial_infected, seed=cfg.master_seed, day=week_first_day(week)
    )


def _restart_path(cfg: io.Config) -> Path:
    return Path(cfg.restart_path) if cfg.restart_path else Path(cfg.output_dir) / "restart.bin"


def _finish(cfg: io.Config, result, obs) -> None:
    io.write_outputs(result, cfg.output_dir, obs)
    io.save_restart(io.restart_from_result(result, cfg.seed_date), _restart_path(cfg))


def cmd_calibrate(args) -> None:
    cfg = _load(args)
    if not cfg.window.auto_calibrate:
        raise ValidationError("auto_calibrate is false; use 'tune' for one-off calibration", "config")
    obs = io.load_observed(cfg.observed_path, cfg.seed_date, cfg.model.num_regions)
    bounds, prior = cfg.bounds, None
    if cfg.window.sim_reload or args.restart:
        if not cfg.restart_path:
            raise ValidationError("sim_reload is set but no restart file was given", "restart")
        rf = io.load_restart(cfg.restart_path, cfg.model)
        if rf.start_week != cfg.window.start_week:
            raise ValidationError(
                f"restart file resumes at week {rf.start_week}, config start_week is "
                f"{cfg.window.start_week}", "restart",
            )
        state, bounds = rf.state, rf.bounds
        if rf.schedule is not None:
            prior = (rf.schedule, rf.schedule_first_week)
    else:
        state = _fresh_state(cfg, cfg.window.start_week)

    with _executor(args.threads) as pool:
        result = calibrate_auto(
            cfg.window, cfg.ga, SeirIcuModel(cfg.model), obs, bounds, state,
            replicates=cfg.ensemble_replicates, master_seed=cfg.master_seed,
            adjust=cfg.adjust, executor=pool, prior_schedule=prior,
            max_windows=args.max_windows,
        )
    # the restart file written next always points at the result's handover week
    _finish(cfg, result, obs)


def cmd_tune(args) -> None:
    if not args.restart:
        raise ValidationError("tune requires --restart", "restart")
    cfg = _load(args)
    obs = io.load_observed(cfg.observed_path, cfg.seed_date, cfg.model.num_regions)
    rf = io.load_restart(cfg.restart_path, cfg.model)
    start = args.start_week if args.start_week is not None else rf.start_week
    end = args.end_week if args.end_week is not None else cfg.window.current_week
    if end < start:
        raise ValidationError(f"end week {end} precedes start week {start}", "tune")
    if rf.state.day != week_first_day(start):
        raise ValidationError(
            f"restart state resumes at week {rf.start_week}, cannot tune from week {start}",
            "restart",
        )
    with _executor(args.threads) as pool:
        result = calibrate_oneoff(
            (start, end), cfg.ga, SeirIcuModel(cfg.model), obs, cfg.bounds, rf.state,
            replicates=cfg.ensemble_replicates, master_seed=cfg.master_seed, executor=pool,
        )
    _finish(cfg, result, obs)


def cmd_simulate(args) -> None:
    cfg = _load(args)
    path = args.schedule or str(Path(cfg.output_dir) / "R0effects.csv")
    schedule, first_week = io.read_schedule(path)
    if schedule.shape[1] != cfg.model.num_regions:
        raise ValidationError(
            f"{path} has {schedule.shape[1]} regions, config has {cfg.model.num_regions}",
            "schedule",
        )
    if args.restart:
        rf = io.load_restart(args.restart, cfg.model)
        state = rf.state
        if state.day != week_first_day(first_week):
            raise ValidationError(
                f"restart state resumes at week {rf.start_week}, schedule starts at week "
                f"{first_week}", "restart",
            )
    else:
        state = _fresh_state(cfg, first_week)
    last_week = first_week + schedule.shape[0] - 1
    try:
        traj, _ = simulate_ensemble(
            state, schedule, cfg.model, first_week, last_week, cfg.ensemble_replicates,
            derive_seed(cfg.master_seed, _SIMULATE_STREAM),
        )
    except ValueError as exc:
        raise ValidationError(str(exc), "schedule") from None
    obs = None
    if Path(cfg.observed_path).exists():
        obs = io.load_observed(cfg.observed_path, cfg.seed_date, cfg.model.num_regions)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_fit(traj, week_first_day(first_week), out / "fit.csv", obs)


def cmd_gen_synthetic(args) -> None:
    cfg = _load(args)
    if not 0.1 <= args.mu_low <= args.mu_high <= 0.9:
        raise ValidationError("need 0.1 <= mu-low <= mu-high <= 0.9", "gen-synthetic")
    if args.noise < 0:
        raise ValidationError("noise must be non-negative", "gen-synthetic")
    start, end = cfg.window.start_week, cfg.window.current_week
    truth = piecewise_schedule(
        cfg.model.num_regions, end - start + 1,
        np.random.default_rng(derive_seed(cfg.master_seed, _TRUTH_STREAM)),
        block_weeks=args.block_weeks, low=args.mu_low, high=args.mu_high,
    )
    obs = synthetic_observations(
        _fresh_state(cfg, start), truth, cfg.model, start, noise=args.noise,
        rng=np.random.default_rng(derive_seed(cfg.master_seed, _NOISE_STREAM)),
    )
    obs_path = Path(cfg.observed_path)
    obs_path.parent.mkdir(parents=True, exist_ok=True)
    io.write_observed(obs, obs_path, cfg.seed_date)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_schedule(truth, start, out / "mu_true.csv")
    log.info("wrote %s and %s", obs_path, out / "mu_true.csv")


COMMANDS = {
    "calibrate": cmd_calibrate,
    "tune": cmd_tune,
    "simulate": cmd_simulate,
    "gen-synthetic": cmd_gen_synthetic,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"oswcal {args.command}: {exc.component} error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"oswcal {args.command}: runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

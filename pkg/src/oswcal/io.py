"""Configuration, observed data, result files and restart files.

Config files are flat ``key = value`` text, one setting per line, ``#`` starts a
comment.  Vector settings take comma-separated values; a single value is
broadcast to every region.  See README.md for the full key list.
"""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .calibrator import AdjustConfig, CalibrationResult, WindowConfig
from .errors import ConfigError, ObservedDataError, RestartError
from .ga import BoundsTable, GaConfig
from .model import ModelParams, SimState, default_mixing
from .objective import ObservedSeries

DEFAULT_SEED_DATE = dt.date(2020, 3, 9)


@dataclass(frozen=True)
class Config:
    window: WindowConfig
    ga: GaConfig
    model: ModelParams
    bounds: BoundsTable
    initial_infected: tuple[float, ...]
    observed_path: str
    adjust: AdjustConfig = AdjustConfig()
    ensemble_replicates: int = 1
    master_seed: int = 0
    seed_date: dt.date = DEFAULT_SEED_DATE
    output_dir: str = "out"
    restart_path: str | None = None


# key -> (section, field, kind)
_WINDOW_KEYS = {
    "auto_calibrate": ("auto_calibrate", "bool"),
    "sim_reload": ("sim_reload", "bool"),
    "start_week": ("start_week", "int"),
    "current_week": ("current_week", "int"),
    "opt_window_size": ("opt_window_size", "int"),
    "opt_shift_size": ("opt_shift_size", "int"),
}
_GA_KEYS = {
    "opt_pop_size": ("pop_size", "int"),
    "opt_max_size": ("max_generations", "int"),
    "opt_p_crossover": ("p_crossover", "float"),
    "opt_p_mutation": ("p_mutation", "float"),
    "opt_elitism": ("elite_count", "int"),
    "opt_convergence_epsilon": ("convergence_epsilon", "float"),
    "opt_convergence_patience": ("convergence_patience", "int"),
}
_ADJUST_KEYS = {
    "adjust_kappa": ("kappa", "float"),
    "adjust_coeff_min": ("coeff_min", "float"),
    "adjust_coeff_max": ("coeff_max", "float"),
    "adjust_tolerance": ("tolerance", "float"),
    "adjust_average_over": ("average_over", "str"),
}
_MODEL_KEYS = {
    "num_regions": ("num_regions", "int"),
    "population": ("population", "ints"),
    "beta0": ("beta0", "float"),
    "latent_days": ("latent_days", "int"),
    "infectious_days": ("infectious_days", "int"),
    "preicu_delay_days": ("preicu_delay_days", "int"),
    "icu_stay_days": ("icu_stay_days", "int"),
    "p_icu": ("p_icu", "float"),
    "stochastic": ("stochastic", "bool"),
    "mixing": ("mixing", "matrix"),
}
_OTHER_KEYS = {
    "opt_lb": "floats",
    "opt_ub": "floats",
    "initial_infected": "floats",
    "mixing_epsilon": "float",
    "ensemble_replicates": "int",
    "master_seed": "int",
    "seed_date": "date",
    "observed_path": "str",
    "output_dir": "str",
    "restart_path": "str",
}
KNOWN_KEYS = (
    set(_WINDOW_KEYS) | set(_GA_KEYS) | set(_ADJUST_KEYS) | set(_MODEL_KEYS) | set(_OTHER_KEYS)
)
_REQUIRED = ("num_regions", "population", "current_week", "initial_infected", "observed_path")

_TRUE = {"true", ".true.", "t", "yes", "1"}
_FALSE = {"false", ".false.", "f", "no", "0"}


def _convert(raw: str, kind: str):
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"not a logical value: {raw!r}")
    if kind == "ints":
        return tuple(int(v) for v in raw.split(","))
    if kind == "floats":
        return tuple(float(v) for v in raw.split(","))
    if kind == "matrix":
        return tuple(tuple(float(v) for v in row.split(",")) for row in raw.split(";"))
    if kind == "date":
        return dt.date.fromisoformat(raw)
    if not raw:
        raise ValueError("empty value")
    return raw


def _kind(key: str) -> str:
    for table in (_WINDOW_KEYS, _GA_KEYS, _ADJUST_KEYS, _MODEL_KEYS):
        if key in table:
            return table[key][1]
    return _OTHER_KEYS[key]


def read_settings(text: str) -> dict[str, tuple[int, str]]:
    """Raw ``key -> (line number, value)`` pairs; syntax errors name the line."""
    settings: dict[str, tuple[int, str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in settings:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        settings[key] = (lineno, value)
    return settings


def _per_region(values: tuple, n: int, key: str) -> tuple:
    if len(values) == 1:
        return values * n
    if len(values) != n:
        raise ConfigError(f"{key} has {len(values)} values, expected 1 or {n}")
    return values


def parse_config(text: str, overrides: dict[str, str] | None = None) -> Config:
    settings = read_settings(text)
    for key, value in (overrides or {}).items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"override: unknown key {key!r}")
        settings[key] = (0, value)

    values = {}
    for key, (lineno, raw) in settings.items():
        try:
            values[key] = _convert(raw, _kind(key))
        except ValueError as exc:
            where = f"line {lineno}" if lineno else "override"
            raise ConfigError(f"{where}: bad value for {key}: {exc}") from None
    missing = [k for k in _REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")

    def section(table):
        return {name: values[key] for key, (name, _) in table.items() if key in values}

    n = values["num_regions"]
    try:
        window_kw = section(_WINDOW_KEYS)
        window_kw.setdefault("start_week", 1)
        window = WindowConfig(**window_kw)
        ga = GaConfig(**section(_GA_KEYS))
        adjust = AdjustConfig(**section(_ADJUST_KEYS))

        model_kw = section(_MODEL_KEYS)
        model_kw["population"] = _per_region(model_kw["population"], n, "population")
        if "mixing_epsilon" in values:
            if "mixing" in model_kw:
                raise ConfigError("give either mixing or mixing_epsilon, not both")
            model_kw["mixing"] = default_mixing(n, values["mixing_epsilon"])
        model = ModelParams(**model_kw)

        lb = _per_region(values.get("opt_lb", (0.1,)), n, "opt_lb")
        ub = _per_region(values.get("opt_ub", (0.9,)), n, "opt_ub")
        if min(lb) < 0.1:
            raise ConfigError("opt_lb below the global minimum 0.1")
        if max(ub) > 0.9:
            raise ConfigError("opt_ub above the global maximum 0.9")
        if any(a > b for a, b in zip(lb, ub)):
            raise ConfigError("opt_lb exceeds opt_ub")
        bounds = BoundsTable(np.array(lb), np.array(ub))

        infected = _per_region(values["initial_infected"], n, "initial_infected")
        if any(v < 0 or v > p for v, p in zip(infected, model.population)):
            raise ConfigError("initial_infected must lie in [0, population] for every region")

        replicates = values.get("ensemble_replicates", 1)
        if replicates < 1:
            raise ConfigError("ensemble_replicates must be >= 1")
        for key in ("observed_path", "output_dir", "restart_path"):
            if key in values and not values[key]:
                raise ConfigError(f"{key} must not be empty")

        return Config(
            window=window,
            ga=ga,
            model=model,
            bounds=bounds,
            initial_infected=tuple(float(v) for v in infected),
            observed_path=values["observed_path"],
            adjust=adjust,
            ensemble_replicates=replicates,
            master_seed=values.get("master_seed", 0),
            seed_date=values.get("seed_date", DEFAULT_SEED_DATE),
            output_dir=values.get("output_dir", "out"),
            restart_path=values.get("restart_path"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _join(values) -> str:
    return ",".join(_fmt(v) for v in values)


def render_config(cfg: Config) -> str:
    """Config file text that parses back to ``cfg``."""
    w, g, a, m = cfg.window, cfg.ga, cfg.adjust, cfg.model
    lines = ["# automation"]
    lines += [f"{key} = {_fmt(getattr(w, name))}" for key, (name, _) in _WINDOW_KEYS.items()]
    lines.append("# genetic algorithm")
    lines += [f"{key} = {_fmt(getattr(g, name))}" for key, (name, _) in _GA_KEYS.items()]
    lines.append(f"opt_lb = {_join(float(v) for v in cfg.bounds.lb)}")
    lines.append(f"opt_ub = {_join(float(v) for v in cfg.bounds.ub)}")
    lines += [f"{key} = {_fmt(getattr(a, name))}" for key, (name, _) in _ADJUST_KEYS.items()]
    lines.append("# model")
    for key, (name, kind) in _MODEL_KEYS.items():
        value = getattr(m, name)
        if kind == "ints":
            value = _join(value)
        elif kind == "matrix":
            value = ";".join(_join(row) for row in value)
        else:
            value = _fmt(value)
        lines.append(f"{key} = {value}")
    lines.append(f"initial_infected = {_join(cfg.initial_infected)}")
    lines.append("# system")
    lines.append(f"ensemble_replicates = {cfg.ensemble_replicates}")
    lines.append(f"master_seed = {cfg.master_seed}")
    lines.append(f"seed_date = {cfg.seed_date.isoformat()}")
    lines.append(f"observed_path = {cfg.observed_path}")
    lines.append(f"output_dir = {cfg.output_dir}")
    if cfg.restart_path is not None:
        lines.append(f"restart_path = {cfg.restart_path}")
    return "\n".join(lines) + "\n"


def load_config(path, overrides: dict[str, str] | None = None) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, overrides)


# ---------------------------------------------------------------- observed data

OBSERVED_COLUMNS = ("date", "region_id", "icu_count")


def load_observed(
    path, seed_date: dt.date = DEFAULT_SEED_DATE, num_regions: int | None = None
) -> ObservedSeries:
    """Read ``date,region_id,icu_count`` rows into a dense day x region matrix.

    Rows may come in any order.  Every region must be present on every day
    between the first and last date.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ObservedDataError(f"cannot read {path}: {exc.strerror}") from None
    cells: dict[tuple[int, int], float] = {}
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != OBSERVED_COLUMNS:
            raise ObservedDataError(f"{path}: header must be {','.join(OBSERVED_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ObservedDataError(f"{path}:{lineno}: expected 3 columns")
            try:
                day = (dt.date.fromisoformat(row[0].strip()) - seed_date).days
                region = int(row[1])
                count = float(row[2])
            except ValueError as exc:
                raise ObservedDataError(f"{path}:{lineno}: {exc}") from None
            if not np.isfinite(count) or count < 0:
                raise ObservedDataError(f"{path}:{lineno}: negative or invalid icu_count")
            if region < 1 or (num_regions is not None and region > num_regions):
                raise ObservedDataError(f"{path}:{lineno}: region_id {region} out of range")
            if (day, region) in cells:
                raise ObservedDataError(
                    f"{path}:{lineno}: duplicate entry for {row[0].strip()} region {region}"
                )
            cells[(day, region)] = count
    if not cells:
        raise ObservedDataError(f"{path}: no observations")

    days = sorted({d for d, _ in cells})
    n = num_regions if num_regions is not None else max(r for _, r in cells)
    for prev, cur in zip(days, days[1:]):
        if cur != prev + 1:
            raise ObservedDataError(
                f"{path}: gap between {seed_date + dt.timedelta(prev)} and "
                f"{seed_date + dt.timedelta(cur)}"
            )
    values = np.empty((len(days), n))
    for i, d in enumerate(days):
        for r in range(1, n + 1):
            try:
                values[i, r - 1] = cells[(d, r)]
            except KeyError:
                raise ObservedDataError(
                    f"{path}: missing region {r} on {seed_date + dt.timedelta(d)}"
                ) from None
    return ObservedSeries(values, start_day=days[0])


def write_observed(obs: ObservedSeries, path, seed_date: dt.date = DEFAULT_SEED_DATE) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(OBSERVED_COLUMNS)
        for i, row in enumerate(obs.values):
            date = (seed_date + dt.timedelta(obs.start_day + i)).isoformat()
            for r, value in enumerate(row, start=1):
                writer.writerow((date, r, repr(float(value))))


# ---------------------------------------------------------------- result files


def write_schedule(schedule: np.ndarray, first_week: int, path) -> None:
    schedule = np.asarray(schedule, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["week", *range(1, schedule.shape[1] + 1)])
        for k, row in enumerate(schedule):
            writer.writerow([first_week + k, *(repr(float(v)) for v in row)])


def read_schedule(path) -> tuple[np.ndarray, int]:
    """Inverse of :func:`write_schedule`: ``(values, first_week)``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ObservedDataError(f"cannot read {path}: {exc.strerror}", "schedule") from None
    if len(rows) < 2 or rows[0][0] != "week":
        raise ObservedDataError(f"{path}: not a schedule file", "schedule")
    try:
        weeks = [int(r[0]) for r in rows[1:]]
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise ObservedDataError(f"{path}: {exc}", "schedule") from None
    if weeks != list(range(weeks[0], weeks[0] + len(weeks))):
        raise ObservedDataError(f"{path}: weeks are not consecutive", "schedule")
    return values, weeks[0]


def write_bounds(bounds: BoundsTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["region", "lb", "ub"])
        for r, (lo, hi) in enumerate(zip(bounds.lb, bounds.ub), start=1):
            writer.writerow([r, repr(float(lo)), repr(float(hi))])


def write_fit(fit: np.ndarray, fit_start_day: int, path, obs: ObservedSeries | None = None) -> None:
    """Long-format ``day,region,observed,simulated``; observed is blank where missing."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["day", "region", "observed", "simulated"])
        for i, row in enumerate(np.asarray(fit, dtype=float)):
            day = fit_start_day + i
            for r, sim in enumerate(row, start=1):
                observed = ""
                if obs is not None and obs.covers(day):
                    observed = repr(float(obs.values[day - obs.start_day, r - 1]))
                writer.writerow([day, r, observed, repr(float(sim))])


def write_outputs(result: CalibrationResult, out_dir, obs: ObservedSeries | None = None) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "R0effects.csv", out / "lbub.csv", out / "fit.csv"]
        write_schedule(result.schedule, result.first_week, paths[0])
        write_bounds(result.final_bounds, paths[1])
        write_fit(
            result.fit if result.fit is not None else np.empty((0, result.schedule.shape[1])),
            result.fit_start_day,
            paths[2],
            obs,
        )
    except OSError as exc:
        raise OSError(f"cannot write outputs to {out}: {exc.strerror}") from exc
    return paths


# ---------------------------------------------------------------- restart files

RESTART_MAGIC = b"OSWR"
RESTART_VERSION = 1
_HEADER = struct.Struct("<4sIQ")  # magic, version, payload length
_CHECKSUM = struct.Struct("<Q")
_STATE_ARRAYS = ("S", "E", "I", "H", "C", "R")


@dataclass(eq=False)
class RestartFile:
    """Everything needed to continue a calibration from a handover point.

    ``week`` is the last week simulated; ``state`` sits on the first day of
    ``week + 1``.  ``schedule``/``schedule_first_week`` hold the coefficients
    calibrated so far.
    """

    week: int
    state: SimState
    bounds: BoundsTable
    seed_date: dt.date = DEFAULT_SEED_DATE
    schedule: np.ndarray | None = None
    schedule_first_week: int | None = None
    format_version: int = field(default=RESTART_VERSION)

    @property
    def start_week(self) -> int:
        return self.week + 1

    @property
    def start_date(self) -> dt.date:
        """Calendar date the restored simulation resumes on."""
        return self.seed_date + dt.timedelta(days=self.state.day)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RestartFile):
            return NotImplemented
        same_schedule = (self.schedule is None) == (other.schedule is None) and (
            self.schedule is None
            or (
                np.array_equal(self.schedule, other.schedule)
                and self.schedule_first_week == other.schedule_first_week
            )
        )
        return (
            self.format_version == other.format_version
            and self.week == other.week
            and self.seed_date == other.seed_date
            and self.state == other.state
            and self.bounds == other.bounds
            and same_schedule
        )


def _checksum(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def _encode_arrays(arrays: dict[str, np.ndarray]) -> tuple[list[dict], bytes]:
    index, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = arr.tobytes()
        index.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset}
        )
        blobs.append(blob)
        offset += len(blob)
    return index, b"".join(blobs)


def encode_restart(rf: RestartFile) -> bytes:
    arrays = {name: getattr(rf.state, name) for name in _STATE_ARRAYS}
    arrays["lb"] = rf.bounds.lb
    arrays["ub"] = rf.bounds.ub
    if rf.schedule is not None:
        arrays["schedule"] = np.asarray(rf.schedule, dtype=float)
    index, blob = _encode_arrays(arrays)
    meta = {
        "week": rf.week,
        "day": rf.state.day,
        "seed_date": rf.seed_date.isoformat(),
        "schedule_first_week": rf.schedule_first_week,
        "rng": rf.state.rng_state,
        "arrays": index,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    payload = struct.pack("<Q", len(meta_bytes)) + meta_bytes + blob
    body = _HEADER.pack(RESTART_MAGIC, rf.format_version, len(payload)) + payload
    return body + _CHECKSUM.pack(_checksum(body))


def decode_restart(data: bytes) -> RestartFile:
    if len(data) < _HEADER.size + _CHECKSUM.size:
        raise RestartError("restart file truncated")
    magic, version, length = _HEADER.unpack_from(data)
    if magic != RESTART_MAGIC:
        raise RestartError("not a restart file (bad magic)")
    if version != RESTART_VERSION:
        raise RestartError(f"unsupported restart format version {version}")
    body_len = _HEADER.size + length
    if len(data) != body_len + _CHECKSUM.size:
        raise RestartError("restart file truncated or padded")
    (stored,) = _CHECKSUM.unpack_from(data, body_len)
    if stored != _checksum(data[:body_len]):
        raise RestartError("restart file corrupted (checksum mismatch)")

    payload = data[_HEADER.size : body_len]
    (meta_len,) = struct.unpack_from("<Q", payload)
    meta = json.loads(payload[8 : 8 + meta_len])
    blob = payload[8 + meta_len :]
    arrays = {}
    for entry in meta["arrays"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(dtype.newbyteorder("="))

    rng_state = meta["rng"]
    rng = np.random.Generator(getattr(np.random, rng_state["bit_generator"])())
    rng.bit_generator.state = rng_state
    state = SimState(day=meta["day"], rng=rng, **{k: arrays[k] for k in _STATE_ARRAYS})
    return RestartFile(
        week=meta["week"],
        state=state,
        bounds=BoundsTable(arrays["lb"], arrays["ub"]),
        seed_date=dt.date.fromisoformat(meta["seed_date"]),
        schedule=arrays.get("schedule"),
        schedule_first_week=meta["schedule_first_week"],
        format_version=version,
    )


def save_restart(rf: RestartFile, path) -> None:
    Path(path).write_bytes(encode_restart(rf))


def load_restart(path, params: ModelParams | None = None) -> RestartFile:
    """Read a restart file; with ``params``, check it against the model's populations."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise RestartError(f"cannot read {path}: {exc.strerror}") from None
    rf = decode_restart(data)
    if params is not None:
        if rf.state.S.shape != (params.num_regions,):
            raise RestartError("restart state does not match the number of regions")
        totals = rf.state.totals()
        tol = 0 if params.stochastic else 1e-6
        if np.any(np.abs(totals - params.population_array) > tol):
            raise RestartError("restart state does not conserve the configured populations")
    return rf


def restart_from_result(
    result: CalibrationResult, seed_date: dt.date = DEFAULT_SEED_DATE
) -> RestartFile:
    return RestartFile(
        week=result.restart_week,
        state=result.restart_state,
        bounds=result.final_bounds,
        seed_date=seed_date,
        schedule=result.schedule,
        schedule_first_week=result.first_week,
    )


def with_overrides(cfg: Config, **changes) -> Config:
    return replace(cfg, **changes)

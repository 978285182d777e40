"""Region-structured discrete-time SEIR-ICU simulator.

Every disease stage is a fixed-duration queue (boxcar): a cohort entering a
stage on day ``t`` leaves it exactly ``duration`` days later.  This makes the
exposure-to-ICU delay exact (``latent_days + infectious_days +
preicu_delay_days``) instead of exponentially smeared.

Two update modes share one kernel:

* stochastic -- integer compartments, binomial draws per transition;
* deterministic -- real compartments, expected-value updates.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DAYS_PER_WEEK = 7
MU_MIN = 0.1
MU_MAX = 0.9
# slack for float round-off when checking schedules against the global clamp
_MU_TOL = 1e-12


def default_mixing(num_regions: int, epsilon: float = 0.05) -> tuple[tuple[float, ...], ...]:
    """Identity blended with a uniform off-diagonal weight, rows renormalised."""
    m = np.full((num_regions, num_regions), epsilon, dtype=float)
    np.fill_diagonal(m, 1.0)
    m /= m.sum(axis=1, keepdims=True)
    return tuple(tuple(float(v) for v in row) for row in m)


@dataclass(frozen=True)
class ModelParams:
    num_regions: int
    population: tuple[int, ...]
    beta0: float = 0.35
    latent_days: int = 4
    infectious_days: int = 5
    preicu_delay_days: int = 12
    icu_stay_days: int = 10
    p_icu: float = 0.05
    mixing: tuple[tuple[float, ...], ...] | None = None
    stochastic: bool = True

    _pop: np.ndarray = field(init=False, repr=False, compare=False)
    _mix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        population = tuple(int(p) for p in self.population)
        object.__setattr__(self, "population", population)
        if self.num_regions < 1:
            raise ValueError("num_regions must be >= 1")
        if len(population) != self.num_regions:
            raise ValueError(
                f"population has {len(population)} entries, expected {self.num_regions}"
            )
        if any(p < 1 for p in population):
            raise ValueError("all populations must be >= 1")
        for name in ("latent_days", "infectious_days", "preicu_delay_days", "icu_stay_days"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.p_icu <= 1.0:
            raise ValueError("p_icu must lie in [0, 1]")
        if self.beta0 <= 0:
            raise ValueError("beta0 must be positive")

        mixing = self.mixing if self.mixing is not None else default_mixing(self.num_regions)
        mixing = tuple(tuple(float(v) for v in row) for row in mixing)
        object.__setattr__(self, "mixing", mixing)
        mix = np.asarray(mixing, dtype=float)
        if mix.shape != (self.num_regions, self.num_regions):
            raise ValueError(f"mixing must be {self.num_regions}x{self.num_regions}")
        if np.any(mix < 0):
            raise ValueError("mixing weights must be non-negative")
        if np.any(np.abs(mix.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("every row of mixing must sum to 1")

        object.__setattr__(self, "_pop", np.asarray(population, dtype=float))
        object.__setattr__(self, "_mix", mix)

    @property
    def exposure_to_icu_days(self) -> int:
        return self.latent_days + self.infectious_days + self.preicu_delay_days

    @property
    def population_array(self) -> np.ndarray:
        return self._pop

    @property
    def mixing_array(self) -> np.ndarray:
        return self._mix


@dataclass
class SimState:
    """Full simulator snapshot; enough to resume a run bit-exactly.

    Queues are ``(num_regions, duration)`` arrays; column 0 holds the cohort
    that entered most recently, the last column the one about to leave.
    """

    day: int
    S: np.ndarray
    E: np.ndarray
    I: np.ndarray
    H: np.ndarray
    C: np.ndarray
    R: np.ndarray
    rng: np.random.Generator

    def copy(self) -> "SimState":
        return SimState(
            day=self.day,
            S=self.S.copy(),
            E=self.E.copy(),
            I=self.I.copy(),
            H=self.H.copy(),
            C=self.C.copy(),
            R=self.R.copy(),
            rng=copy.deepcopy(self.rng),
        )

    def totals(self) -> np.ndarray:
        """Per-region sum over every compartment."""
        return (
            self.S
            + self.E.sum(axis=1)
            + self.I.sum(axis=1)
            + self.H.sum(axis=1)
            + self.C.sum(axis=1)
            + self.R
        )

    def icu(self) -> np.ndarray:
        return self.C.sum(axis=1)

    @property
    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    def with_seed(self, seed) -> "SimState":
        """Copy of this state with a freshly seeded RNG stream."""
        out = self.copy()
        out.rng = np.random.default_rng(seed)
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SimState):
            return NotImplemented
        arrays = ("S", "E", "I", "H", "C", "R")
        return (
            self.day == other.day
            and all(
                getattr(self, a).dtype == getattr(other, a).dtype
                and np.array_equal(getattr(self, a), getattr(other, a))
                for a in arrays
            )
            and self.rng_state == other.rng_state
        )


def init_state(
    params: ModelParams,
    initial_infected: Sequence[float],
    seed: int,
    day: int = 0,
) -> SimState:
    """Seed the epidemic: ``initial_infected`` go into the first infectious slot."""
    infected = np.asarray(initial_infected, dtype=float).reshape(-1)
    if infected.shape != (params.num_regions,):
        raise ValueError(
            f"initial_infected has {infected.size} entries, expected {params.num_regions}"
        )
    pop = params.population_array
    if np.any(infected < 0) or np.any(infected > pop):
        raise ValueError("initial_infected must lie in [0, population] for every region")
    dtype = np.int64 if params.stochastic else np.float64
    if params.stochastic:
        if np.any(infected != np.round(infected)):
            raise ValueError("initial_infected must be integral in stochastic mode")
    n = params.num_regions
    I = np.zeros((n, params.infectious_days), dtype=dtype)
    I[:, 0] = infected.astype(dtype)
    return SimState(
        day=int(day),
        S=(pop - infected).astype(dtype),
        E=np.zeros((n, params.latent_days), dtype=dtype),
        I=I,
        H=np.zeros((n, params.preicu_delay_days), dtype=dtype),
        C=np.zeros((n, params.icu_stay_days), dtype=dtype),
        R=np.zeros(n, dtype=dtype),
        rng=np.random.default_rng(seed),
    )


def _shift(queue: np.ndarray, entering: np.ndarray) -> np.ndarray:
    """Advance a queue one slot in place; return the cohort that left."""
    leaving = queue[:, -1].copy()
    queue[:, 1:] = queue[:, :-1]
    queue[:, 0] = entering
    return leaving


def _advance(state: SimState, mu_today: np.ndarray, params: ModelParams) -> None:
    infectious = state.I.sum(axis=1)
    prevalence = params.mixing_array @ (infectious / params.population_array)
    force = mu_today * params.beta0 * prevalence
    p_inf = -np.expm1(-force)

    if params.stochastic:
        new_e = state.rng.binomial(state.S, p_inf)
    else:
        new_e = state.S * p_inf

    e_out = _shift(state.E, new_e)
    i_out = _shift(state.I, e_out)
    if params.stochastic:
        to_h = state.rng.binomial(i_out, params.p_icu)
    else:
        to_h = i_out * params.p_icu
    h_out = _shift(state.H, to_h)
    c_out = _shift(state.C, h_out)

    state.S = state.S - new_e
    state.R = state.R + (i_out - to_h) + c_out
    state.day += 1


def step_day(state: SimState, mu_today: Sequence[float], params: ModelParams) -> SimState:
    """Return the state one day later; ``state`` is left untouched."""
    out = state.copy()
    _advance(out, np.asarray(mu_today, dtype=float), params)
    return out


def _check_schedule(schedule, params: ModelParams, start_week: int, end_week: int) -> np.ndarray:
    if end_week < start_week:
        raise ValueError(f"end_week {end_week} precedes start_week {start_week}")
    sched = np.asarray(schedule, dtype=float)
    n_weeks = end_week - start_week + 1
    if sched.ndim != 2 or sched.shape != (n_weeks, params.num_regions):
        raise ValueError(
            f"schedule shape {sched.shape} does not match weeks {start_week}..{end_week} "
            f"x {params.num_regions} regions"
        )
    if np.any(sched < MU_MIN - _MU_TOL) or np.any(sched > MU_MAX + _MU_TOL):
        raise ValueError(f"schedule entries must lie in [{MU_MIN}, {MU_MAX}]")
    return sched


def week_first_day(week: int) -> int:
    """Day offset (from the seed date) of the first day of a 1-based week."""
    return DAYS_PER_WEEK * (week - 1)


def week_last_day(week: int) -> int:
    return DAYS_PER_WEEK * week - 1


def simulate(
    state0: SimState,
    schedule,
    params: ModelParams,
    start_week: int,
    end_week: int,
) -> tuple[np.ndarray, SimState]:
    """Run weeks ``start_week..end_week`` using ``schedule`` rows in order.

    Row ``i`` of the returned trajectory is the ICU occupancy at the end of
    day ``week_first_day(start_week) + i``.
    """
    sched = _check_schedule(schedule, params, start_week, end_week)
    if state0.day != week_first_day(start_week):
        raise ValueError(
            f"state is at day {state0.day}, week {start_week} starts on day "
            f"{week_first_day(start_week)}"
        )
    state = state0.copy()
    n_days = DAYS_PER_WEEK * sched.shape[0]
    icu = np.empty((n_days, params.num_regions), dtype=float)
    for i in range(n_days):
        _advance(state, sched[i // DAYS_PER_WEEK], params)
        icu[i] = state.C.sum(axis=1)
    return icu, state


def replicate_seed(base_seed: int, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base_seed), int(replicate)])


def simulate_ensemble(
    state0: SimState,
    schedule,
    params: ModelParams,
    start_week: int,
    end_week: int,
    n_replicates: int,
    base_seed: int,
) -> tuple[np.ndarray, SimState]:
    """Mean ICU trajectory over ``n_replicates`` independently seeded runs.

    Replicate ``r`` draws from ``replicate_seed(base_seed, r)``.  The final
    state of replicate 0 is returned; averaging integer compartments is not
    meaningful.  Deterministic models run once.
    """
    if n_replicates < 1:
        raise ValueError("n_replicates must be >= 1")
    icu, final = simulate(
        state0.with_seed(replicate_seed(base_seed, 0)), schedule, params, start_week, end_week
    )
    if not params.stochastic or n_replicates == 1:
        return icu, final
    total = icu.copy()
    for r in range(1, n_replicates):
        traj, _ = simulate(
            state0.with_seed(replicate_seed(base_seed, r)), schedule, params, start_week, end_week
        )
        total += traj
    return total / n_replicates, final

"""Continuous-time simulation of the exclusion process in a bond environment.

Each bond ``(x, x+1)`` with discrepant endpoints fires at rate ``N^2 xi_x`` and
exchanges them. Frozen-buffer windows add a reservoir channel at each edge,
driven by the boundary bond, which refreshes the edge site to Bernoulli of the
initial profile there. Times are macroscopic throughout.

The event loop runs in ``_kernel`` (compiled) or ``_fallback``; both read the
replica's Philox stream identically, so results do not depend on the backend
or on the number of worker threads.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import backend as _backend
from .environment import Environment, LatticeWindow
from .functions import Profile
from .pde import DiscreteTrajectory, reservoir_densities
from .rng import replica_bitgen
from .transform import GridFunction, TransformedFunction

ENGINES = {"thinned": 0, "tree": 1}
NO_TAG = -1
LOST = -2


@dataclass
class Configuration:
    """Occupations on the window's sites, with an optional tagged site index."""

    occupation: np.ndarray
    tagged: int | None = None
    time: float = 0.0

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupation, dtype=np.uint8)
        if occ.ndim != 1 or occ.size and occ.max() > 1:
            raise ValueError("occupations must be a 1-d array of 0/1")
        if self.tagged is not None and occ[self.tagged] != 1:
            raise ValueError("the tagged site must be occupied")
        self.occupation = occ


def init_configuration(env: Environment, rho0: Profile, rng: np.random.Generator,
                       star: bool = False) -> Configuration:
    """Product Bernoulli(rho0(x/N)) configuration; ``star`` puts the tagged particle at 0."""
    w = env.window
    p = np.asarray(rho0(w.sites() / w.N), dtype=float)
    if p.min() < 0 or p.max() > 1:
        raise ValueError("initial profile must take values in [0, 1]")
    occ = (rng.random(w.size) < p).astype(np.uint8)
    tagged = None
    if star:
        i0 = w.index(0)
        occ[i0] = 1
        tagged = i0
    return Configuration(occ, tagged)


def alias_table(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias table for sampling an index proportionally to ``weights``."""
    w = np.asarray(weights, dtype=float)
    C = w.size
    q = w * C / w.sum()
    prob = np.ones(C)
    alias = np.arange(C, dtype=np.intp)
    small = [i for i in range(C) if q[i] < 1.0]
    large = [i for i in range(C) if q[i] >= 1.0]
    while small and large:
        s, l = small.pop(), large.pop()
        prob[s] = q[s]
        alias[s] = l
        q[l] += q[s] - 1.0
        (small if q[l] < 1.0 else large).append(l)
    return prob, alias


@dataclass
class Observables:
    """What to record at each sample time.

    fields : density fields <pi, G> and, when a profile trajectory is given, Y(G)
    corrected : corrected fields X(G), Z(G) for transformed test functions
    martingales : X(G) martingales M(G) and their recorded quadratic variation
    currents : bond labels x for J_{x,x+1}; ``"all"`` records every channel
    """

    fields: dict[str, GridFunction] = field(default_factory=dict)
    corrected: dict[str, TransformedFunction] = field(default_factory=dict)
    martingales: dict[str, TransformedFunction] = field(default_factory=dict)
    currents: tuple | str = (-1,)
    tagged: bool = False
    occupations: bool = False


def _channels(window: LatticeWindow, currents) -> tuple[list, np.ndarray]:
    S = window.size
    C = S if window.periodic else S + 1
    if currents == "all":
        labels = [int(x) for x in range(window.x_min, window.x_max)]
        labels += ["wrap"] if window.periodic else ["left", "right"]
        return labels, np.arange(C, dtype=np.intp)
    labels, sel = [], []
    for x in currents:
        if not window.x_min <= x < window.x_max:
            raise ValueError(f"bond {x} is not an interior bond of the window")
        labels.append(int(x))
        sel.append(window.index(x))
    return labels, np.asarray(sel, dtype=np.intp)


@dataclass
class ObservableSeries:
    """Samples of one replica at increasing times."""

    sample_times: np.ndarray
    records: dict[str, np.ndarray]
    current_labels: list
    currents: np.ndarray
    tagged: np.ndarray | None
    occupations: np.ndarray | None
    initial: np.ndarray | None
    replica_id: int
    master_seed: int
    env_seed: int | None
    events: int
    changes: int
    warnings: list[str] = field(default_factory=list)


def _safe_zone_warnings(window: LatticeWindow, obs: Observables) -> list[str]:
    out = []
    margin = max(1, window.N // 8)
    funcs = list(obs.fields.items()) + [(k, v.base) for k, v in obs.corrected.items()]
    funcs += [(k, v.base) for k, v in obs.martingales.items()]
    for name, g in funcs:
        if g.kind == "ramp":
            continue
        lo, hi = g.support
        if lo - window.x_min < margin or window.x_max - hi < margin:
            out.append(f"test function {name!r} reaches the boundary buffer of the window")
    return out


def simulate(env: Environment, config: Configuration, horizon: float, sample_times,
             observables: Observables | None = None, *, master_seed: int = 0, replica_id: int = 0,
             bit_generator=None, rho0: Profile | None = None, profile: DiscreteTrajectory | None = None,
             engine: str = "thinned", backend: str | None = None) -> ObservableSeries:
    """Run one replica from ``config`` and sample the requested observables.

    Parameters
    ----------
    horizon : float
        Final time; every sample time must lie in ``[0, horizon]``.
    bit_generator : numpy BitGenerator, optional
        Defaults to the replica's stream ``(master_seed, replica_id)``.
    rho0 : Profile, optional
        Sets the reservoir densities on frozen-buffer windows (required there).
    profile : DiscreteTrajectory, optional
        Mean profile used to centre ``Y`` and ``Z``; its grid must contain the
        sample times.
    """
    obs = observables or Observables()
    w = env.window
    times = np.asarray(sample_times, dtype=float)
    if times.ndim != 1 or np.any(np.diff(times) <= 0):
        raise ValueError("sample times must be strictly increasing")
    if times.size and (times[0] < 0 or times[-1] > horizon):
        raise ValueError("sample times must lie in [0, horizon]")
    if config.occupation.shape != (w.size,):
        raise ValueError("configuration does not match the window")
    if engine not in ENGINES:
        raise ValueError(f"engine must be one of {sorted(ENGINES)}")
    if w.periodic:
        rho_l = rho_r = 0.0
    else:
        if rho0 is None:
            raise ValueError("frozen-buffer windows need the initial profile for their reservoirs")
        rho_l, rho_r = reservoir_densities(w, rho0)

    rates = env.channel_rates()
    prob, alias = alias_table(rates)
    labels, sel = _channels(w, obs.currents)
    mart = list(obs.martingales.items())
    weights = (np.array([tf.values / w.N for _, tf in mart]) if mart else np.zeros((0, w.size)))
    weights = np.ascontiguousarray(weights, dtype=float)
    T, F = times.size, weights.shape[0]

    eta = config.occupation.copy()
    eta0 = eta.copy()
    cur = np.zeros(rates.size, dtype=np.int64)
    snap = np.zeros((T, w.size), dtype=np.uint8)
    cur_out = np.zeros((T, sel.size), dtype=np.int64)
    tag_out = np.zeros(T, dtype=np.int64)
    f_val, f_drift, f_qv = (np.zeros((T, F)) for _ in range(3))
    bg = bit_generator if bit_generator is not None else replica_bitgen(master_seed, replica_id)
    tagged = NO_TAG if config.tagged is None else int(config.tagged)

    run = _backend.run_path_impl(backend)
    events, changes, final_tag = run(bg, eta, rates, w.periodic, rho_l, rho_r, tagged, times,
                                     ENGINES[engine], prob, alias, weights, cur, snap, sel,
                                     cur_out, tag_out, f_val, f_drift, f_qv)
    config.occupation = eta
    config.tagged = None if final_tag < 0 else int(final_tag)
    config.time = float(times[-1]) if T else config.time

    records: dict[str, np.ndarray] = {}
    occ = snap.astype(float)
    sq = math.sqrt(w.N)
    g_hat = env.gamma_hat
    rho = None
    if profile is not None:
        if profile.window != w:
            raise ValueError("profile trajectory lives on a different window")
        rho = profile.values[[profile.time_index(t) for t in times]]
    for name, G in obs.fields.items():
        records[f"pi[{name}]"] = occ @ G.values / w.N
        if rho is not None:
            records[f"Y[{name}]"] = (occ - rho) @ G.values / sq
    for name, tf in obs.corrected.items():
        records[f"X[{name}]"] = occ @ tf.values / w.N
        if rho is not None:
            records[f"Z[{name}]"] = (occ - rho) @ tf.values / (g_hat * sq)
    for j, (name, tf) in enumerate(mart):
        x0 = float(eta0 @ tf.values) / w.N
        records[f"M[{name}]"] = f_val[:, j] - x0 - f_drift[:, j]
        records[f"QV[{name}]"] = f_qv[:, j].copy()

    tag_pos = None
    if obs.tagged:
        if config.tagged is None and tagged == NO_TAG:
            raise ValueError("tagged observable requested without a tagged particle")
        tag_pos = np.where(tag_out >= 0, tag_out + w.x_min, np.iinfo(np.int64).min)
        if np.any(tag_out == LOST):
            warnings.warn("tagged particle left the window through a reservoir", RuntimeWarning)

    return ObservableSeries(
        sample_times=times,
        records=records,
        current_labels=labels,
        currents=cur_out,
        tagged=tag_pos,
        occupations=snap if obs.occupations else None,
        initial=eta0 if obs.occupations else None,
        replica_id=int(replica_id),
        master_seed=int(master_seed),
        env_seed=env.seed,
        events=int(events),
        changes=int(changes),
        warnings=_safe_zone_warnings(w, obs),
    )


@dataclass
class ObservableBatch:
    """Replica series stacked along a leading replica axis."""

    sample_times: np.ndarray
    records: dict[str, np.ndarray]       # (M, T)
    current_labels: list
    currents: np.ndarray                 # (M, T, B)
    tagged: np.ndarray | None            # (M, T)
    replica_ids: np.ndarray
    master_seed: int
    env_seeds: np.ndarray
    N: int
    events: int
    warnings: list[str]

    @property
    def M(self) -> int:
        return int(self.replica_ids.size)

    def current(self, label) -> np.ndarray:
        return self.currents[:, :, self.current_labels.index(label)]

    def time_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.sample_times - t)))
        if not math.isclose(self.sample_times[k], t, rel_tol=0, abs_tol=1e-12):
            raise KeyError(f"time {t} was not sampled")
        return k

    def column(self, name: str, t: float) -> np.ndarray:
        """Samples of one observable at one time: a record name, ``J[x]`` or ``X``."""
        k = self.time_index(t)
        if name == "X":
            if self.tagged is None:
                raise KeyError("the tagged particle was not recorded")
            return self.tagged[:, k].astype(float)
        if name.startswith("J[") and name.endswith("]"):
            label = name[2:-1]
            return self.current(int(label) if label.lstrip("-").isdigit() else label)[:, k].astype(float)
        return self.records[name][:, k]

    @classmethod
    def merge(cls, batches: list["ObservableBatch"]) -> "ObservableBatch":
        """Concatenate batches of the same experiment along the replica axis."""
        b0 = batches[0]
        for b in batches[1:]:
            if (b.N != b0.N or b.master_seed != b0.master_seed or b.current_labels != b0.current_labels
                    or not np.array_equal(b.sample_times, b0.sample_times)):
                raise ValueError("batches come from different experiments")
        cat = lambda xs: np.concatenate(xs, axis=0)
        return cls(b0.sample_times, {k: cat([b.records[k] for b in batches]) for k in b0.records},
                   b0.current_labels, cat([b.currents for b in batches]),
                   None if b0.tagged is None else cat([b.tagged for b in batches]),
                   cat([b.replica_ids for b in batches]), b0.master_seed,
                   cat([b.env_seeds for b in batches]), b0.N, sum(b.events for b in batches),
                   sorted({w for b in batches for w in b.warnings}))

    def to_csv(self, path) -> None:
        """One row per replica and sample time."""
        names = list(self.records)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            head = ["replica", "t"] + names + [f"J[{c}]" for c in self.current_labels]
            if self.tagged is not None:
                head.append("X")
            out.writerow(head)
            for m, rid in enumerate(self.replica_ids):
                for k, t in enumerate(self.sample_times):
                    row = [int(rid), repr(float(t))]
                    row += [repr(float(self.records[n][m, k])) for n in names]
                    row += [int(v) for v in self.currents[m, k]]
                    if self.tagged is not None:
                        row.append(int(self.tagged[m, k]))
                    out.writerow(row)

    def save(self, path) -> None:
        """Compact binary log (numpy ``.npz``)."""
        arrays = {f"rec:{k}": v for k, v in self.records.items()}
        np.savez_compressed(path, sample_times=self.sample_times, currents=self.currents,
                            tagged=self.tagged if self.tagged is not None else np.zeros(0),
                            replica_ids=self.replica_ids, env_seeds=self.env_seeds,
                            labels=np.array([str(c) for c in self.current_labels]),
                            meta=np.array([self.master_seed, self.N, self.events]), **arrays)

    @classmethod
    def load(cls, path) -> "ObservableBatch":
        z = np.load(path, allow_pickle=False)
        labels = [int(c) if c.lstrip("-").isdigit() else str(c) for c in z["labels"]]
        records = {k[4:]: z[k] for k in z.files if k.startswith("rec:")}
        tagged = z["tagged"] if z["tagged"].size else None
        master, N, events = (int(v) for v in z["meta"])
        return cls(z["sample_times"], records, labels, z["currents"], tagged, z["replica_ids"],
                   master, z["env_seeds"], N, events, [])


def run_replicas(env: Environment, rho0: Profile, replicas: int, horizon: float, sample_times,
                 observables: Observables | None = None, *, master_seed: int = 0, star: bool = False,
                 profile: DiscreteTrajectory | None = None, engine: str = "thinned",
                 backend: str | None = None, threads: int = 1, first_replica: int = 0) -> ObservableBatch:
    """Independent replicas in a fixed environment, merged in replica order.

    Replica ``r`` draws its initial configuration and its dynamics from the
    single stream ``(master_seed, r)``, so the batch is independent of
    ``threads``.
    """
    obs = observables or Observables()
    ids = np.arange(first_replica, first_replica + int(replicas))

    def one(rid: int) -> ObservableSeries:
        bg = replica_bitgen(master_seed, int(rid))
        config = init_configuration(env, rho0, np.random.Generator(bg), star=star)
        return simulate(env, config, horizon, sample_times, obs, master_seed=master_seed,
                        replica_id=int(rid), bit_generator=bg, rho0=rho0, profile=profile,
                        engine=engine, backend=backend)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            series = list(pool.map(one, ids))
    else:
        series = [one(r) for r in ids]
    return collect(series, env.N)


def collect(series: list[ObservableSeries], N: int) -> ObservableBatch:
    if not series:
        raise ValueError("no replicas to collect")
    s0 = series[0]
    records = {k: np.stack([s.records[k] for s in series]) for k in s0.records}
    tagged = np.stack([s.tagged for s in series]) if s0.tagged is not None else None
    warns = sorted({w for s in series for w in s.warnings})
    return ObservableBatch(
        sample_times=s0.sample_times,
        records=records,
        current_labels=s0.current_labels,
        currents=np.stack([s.currents for s in series]),
        tagged=tagged,
        replica_ids=np.array([s.replica_id for s in series]),
        master_seed=s0.master_seed,
        env_seeds=np.array([-1 if s.env_seed is None else s.env_seed for s in series]),
        N=N,
        events=int(sum(s.events for s in series)),
        warnings=warns,
    )


class SimulationError(AssertionError):
    """A bookkeeping identity failed: the simulator itself is wrong."""


def current_conservation_check(series: ObservableSeries, window: LatticeWindow) -> dict:
    """Check ``J_{x-1,x}(t) - J_{x,x+1}(t) = eta_t(x) - eta_0(x)`` at every site and time.

    Needs a series recorded with ``currents="all"`` and ``occupations=True``.
    """
    if series.occupations is None or series.currents.shape[1] != len(series.current_labels):
        raise ValueError("series lacks occupations or currents")
    S = window.size
    if len(series.current_labels) != (S if window.periodic else S + 1):
        raise ValueError("series must record the currents of every channel")
    J = series.currents
    inner = J[:, : S - 1]
    into = np.zeros((J.shape[0], S), dtype=np.int64)
    into[:, 1:] += inner
    into[:, :-1] -= inner
    if window.periodic:
        into[:, 0] += J[:, S - 1]
        into[:, -1] -= J[:, S - 1]
    else:
        into[:, 0] += J[:, S - 1]     # left reservoir: +1 for a particle entering
        into[:, -1] -= J[:, S]        # right reservoir: +1 for a particle leaving
    change = series.occupations.astype(np.int64) - series.initial.astype(np.int64)[None, :]
    bad = np.argwhere(into != change)
    if bad.size:
        k, i = bad[0]
        raise SimulationError(f"current conservation fails at site {window.x_min + i}, "
                              f"time {series.sample_times[k]}, replica {series.replica_id}")
    return {"checked": int(into.size), "violations": 0, "passed": True}


def tagged_vs_current_check(series: ObservableSeries, window: LatticeWindow) -> dict:
    """Check the order relation between the tagged particle and the current through (-1, 0).

    For ``n >= 0``: ``X_t >= n  <=>  J_{-1,0}(t) >= sum_{x=0}^{n-1} eta_t(x)``.
    For ``n >= 1``: ``X_t <= -n  <=>  -J_{-1,0}(t) >= 1 + sum_{x=-n+1}^{-1} eta_t(x)``.
    """
    if series.tagged is None or series.occupations is None or -1 not in series.current_labels:
        raise ValueError("series needs the tagged path, occupations and the current through (-1, 0)")
    J = series.currents[:, series.current_labels.index(-1)]
    i0 = window.index(0)
    checked = 0
    for k, t in enumerate(series.sample_times):
        X = int(series.tagged[k])
        if X < window.x_min:
            continue  # lost through a reservoir
        eta = series.occupations[k].astype(np.int64)
        right = np.concatenate([[0], np.cumsum(eta[i0:])])           # sum_{0}^{n-1}, n = 0..
        left = np.concatenate([[0], np.cumsum(eta[:i0][::-1])])     # sum_{-m}^{-1}, m = 0..
        for n in range(0, window.x_max + 1):
            if (X >= n) != (J[k] >= right[n]):
                raise SimulationError(f"order relation fails for n = {n} at time {t}, replica {series.replica_id}")
            checked += 1
        for n in range(1, -window.x_min + 1):
            if (X <= -n) != (-J[k] >= 1 + left[n - 1]):
                raise SimulationError(f"order relation fails for n = -{n} at time {t}, replica {series.replica_id}")
            checked += 1
    return {"checked": checked, "violations": 0, "passed": True}


def mirrored_relation_counterexample(series: ObservableSeries, window: LatticeWindow) -> int:
    """Count (time, n) pairs where ``{X <= -n} <=> {-J >= sum_{x=-n}^{-1} eta}`` fails."""
    J = series.currents[:, series.current_labels.index(-1)]
    i0 = window.index(0)
    bad = 0
    for k in range(series.sample_times.size):
        X = int(series.tagged[k])
        eta = series.occupations[k].astype(np.int64)
        left = np.concatenate([[0], np.cumsum(eta[:i0][::-1])])
        for n in range(1, -window.x_min + 1):
            bad += (X <= -n) != (-J[k] >= left[n])
    return int(bad)

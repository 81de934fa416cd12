"""Named experiments: configuration, cached Monte Carlo runs and reports.

Each experiment returns a report dictionary whose ``checks`` list holds one
entry per acceptance check::

    {"name", "experiment", "N", "M", "env_seed", "mc", "se", "theory",
     "quad_err", "tolerance", "pass", ...}

Monte Carlo batches are cached on disk under a hash of everything that
determines them, in chunks of replicas, so interrupted runs resume and
experiments that need the same simulation share it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import oracle, stats
from .dynamics import ObservableBatch, Observables, run_replicas
from .environment import Environment, LatticeWindow, Law, generate
from .functions import Profile, TestFunction, chi
from .pde import compute_ut, compute_utN, mean_flux, solve_discrete, weak_pairing
from .rng import derive_seed
from .transform import GridFunction, apply_Tl, parse_cutoff

log = logging.getLogger(__name__)

EXPERIMENTS = ("hydro", "density-clt", "current-clt", "tagged-clt", "correlations", "nash", "liggett", "hitting")
MIN_N = 16
DEFAULT_LAW = "uniform:0.25,0.5"
DEFAULT_PROFILE = "tanh"
DEFAULT_G = "gaussian:0,0.25"
MASTER_SEED = 271828
CHUNK = 250


def default_cache() -> Path:
    return Path(os.environ.get("BONDSEP_CACHE", Path.home() / ".cache" / "bondsep"))


@dataclass
class ExperimentConfig:
    """One experiment run; every default is echoed into the report."""

    experiment: str
    N: int = 256
    replicas: int = 200
    horizon: float = 0.5
    profile: str = DEFAULT_PROFILE
    law: str = DEFAULT_LAW
    epsilon: float = 0.25
    env_seed: int | None = None
    master_seed: int = MASTER_SEED
    replica_seed: int | None = None
    cutoff: str = "fixed:0.5"
    sample_every: float | None = None
    threads: int = 1
    output: str | None = None
    cache: str | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.N < MIN_N:
            raise ValueError(f"N = {self.N} is below the minimum {MIN_N}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.replicas < 1:
            raise ValueError("at least one replica is required")
        Profile.parse(self.profile)
        Law.parse(self.law)
        parse_cutoff(self.cutoff, self.N)

    @property
    def seeds(self) -> tuple[int, int]:
        """(environment seed, replica master seed), derived from the master seed unless pinned."""
        env = self.env_seed if self.env_seed is not None else derive_seed(self.master_seed, f"{self.experiment}/env")
        rep = (self.replica_seed if self.replica_seed is not None
               else derive_seed(self.master_seed, f"{self.experiment}/replicas"))
        return int(env), int(rep)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["env_seed"], d["replica_seed"] = self.seeds
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# cached Monte Carlo


@dataclass(frozen=True)
class MCPlan:
    """Everything that determines a batch of replicas."""

    N: int
    replicas: int
    horizon: float
    sample_times: tuple
    profile: str
    law: str
    epsilon: float
    env_seed: int
    replica_seed: int
    half_width: float
    boundary: str = "frozen-buffer"
    fields: tuple = ()              # (name, test-function descriptor)
    martingales: tuple = ()         # (name, test-function descriptor)
    cutoff: float = 0.5
    currents: tuple = (-1,)
    tagged: bool = False
    star: bool = False
    engine: str = "thinned"

    def key(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:20]

    def window(self) -> LatticeWindow:
        return LatticeWindow.symmetric(self.N, self.half_width, self.boundary)

    def environment(self) -> Environment:
        return generate(self.env_seed, Law.parse(self.law), self.window(), self.epsilon)

    def rho0(self) -> Profile:
        return Profile.parse(self.profile)


def half_width(radius: float, horizon: float, gamma: float, spread: float = 2.0, minimum: float = 0.0) -> float:
    """Window half-width, rounded up to 1/8 so that plans hash stably."""
    h = max(radius + spread * math.sqrt(2.0 * horizon / gamma), minimum)
    return math.ceil(h * 8) / 8


def run_plan(plan: MCPlan, cache: Path | str | None = None, threads: int = 1, progress=None):
    """Run (or load) the batch described by ``plan``; returns (batch, env, trajectory)."""
    env = plan.environment()
    rho0 = plan.rho0()
    w = env.window
    traj = solve_discrete(env, rho0, sorted({0.0, *plan.sample_times}), starred=plan.star)
    fields = {n: GridFunction.sample(w, TestFunction.parse(d)) for n, d in plan.fields}
    marts = {n: apply_Tl(env, GridFunction.sample(w, TestFunction.parse(d)), plan.cutoff)
             for n, d in plan.martingales}
    obs = Observables(fields=fields, martingales=marts, currents=tuple(plan.currents), tagged=plan.tagged)
    cache = Path(cache) if cache is not None else default_cache()
    folder = cache / plan.key()
    folder.mkdir(parents=True, exist_ok=True)
    with open(folder / "plan.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(plan), fh, indent=2)
    parts = []
    for first in range(0, plan.replicas, CHUNK):
        count = min(CHUNK, plan.replicas - first)
        path = folder / f"chunk-{first:07d}-{count}.npz"
        if path.exists():
            parts.append(ObservableBatch.load(path))
            continue
        t0 = time.time()
        b = run_replicas(env, rho0, count, plan.horizon, plan.sample_times, obs, master_seed=plan.replica_seed,
                         star=plan.star, profile=traj, engine=plan.engine, threads=threads, first_replica=first)
        b.env_seeds[:] = plan.env_seed
        b.save(path)
        parts.append(ObservableBatch.load(path))
        log.info("plan %s: replicas %d-%d in %.1fs", plan.key(), first, first + count - 1, time.time() - t0)
        if progress:
            progress(first + count, plan.replicas)
    return ObservableBatch.merge(parts), env, traj


# --------------------------------------------------------------------------
# helpers


def _check(name: str, cfg: ExperimentConfig | None, mc: float, se: float | None, theory: float,
           tolerance: float, passed: bool, quad_err: float | None = None, M: int | None = None, **extra) -> dict:
    out = {"name": name, "experiment": cfg.experiment if cfg else None, "N": cfg.N if cfg else None,
           "M": M, "env_seed": cfg.seeds[0] if cfg else None, "mc": float(mc),
           "se": None if se is None else float(se), "theory": float(theory),
           "quad_err": None if quad_err is None else float(quad_err), "tolerance": float(tolerance),
           "pass": bool(passed)}
    out.update(extra)
    return out


def _report(cfg: ExperimentConfig | None, checks: list[dict], t0: float, **extra) -> dict:
    return {"experiment": cfg.experiment if cfg else extra.pop("name", None),
            "config": cfg.to_dict() if cfg else None, "checks": checks,
            "pass": all(c["pass"] for c in checks), "runtime_s": time.time() - t0, **extra}


def _times(cfg: ExperimentConfig, required) -> tuple:
    ts = set(float(t) for t in required) | set(float(t) for t in cfg.params.get("sample_times", []))
    if cfg.sample_every:
        k = int(round(cfg.horizon / cfg.sample_every))
        ts |= {round(i * cfg.sample_every, 12) for i in range(k + 1)}
    ts = sorted(t for t in ts if t <= cfg.horizon + 1e-12)
    return tuple(ts)


def clt_plan(cfg: ExperimentConfig, times, star: bool | None = None) -> MCPlan:
    """The shared plan of the fluctuation experiments: field ``G``, the current through
    bond (-1, 0) and, for starred runs, the tagged particle."""
    rho0 = Profile.parse(cfg.profile)
    law = Law.parse(cfg.law)
    G = TestFunction.parse(cfg.params.get("G", DEFAULT_G))
    if star is None:
        star = cfg.experiment == "tagged-clt" or not rho0.flat
    env_seed, rep_seed = cfg.seeds
    return MCPlan(N=cfg.N, replicas=cfg.replicas, horizon=cfg.horizon, sample_times=_times(cfg, times),
                  profile=cfg.profile, law=cfg.law, epsilon=cfg.epsilon, env_seed=env_seed, replica_seed=rep_seed,
                  half_width=half_width(max(G.radius, abs(G.center) + G.radius), cfg.horizon, law.mean_inverse()),
                  fields=(("G", cfg.params.get("G", DEFAULT_G)),), currents=(-1,), tagged=bool(star),
                  star=bool(star))


# --------------------------------------------------------------------------
# experiments


def hydro(cfg: ExperimentConfig) -> dict:
    """Mean empirical density tested against three functions vs the heat equation."""
    t0 = time.time()
    rho0 = Profile.parse(cfg.profile)
    law = Law.parse(cfg.law)
    tests = cfg.params.get("tests", ["gaussian:-0.5,0.25", "gaussian:0,0.25", "bump:0.5,0.5"])
    check_times = cfg.params.get("times", [0.1, cfg.horizon])
    reach = max(abs(TestFunction.parse(d).center) + TestFunction.parse(d).radius for d in tests)
    env_seed, rep_seed = cfg.seeds
    plan = MCPlan(N=cfg.N, replicas=cfg.replicas, horizon=cfg.horizon, sample_times=_times(cfg, check_times),
                  profile=cfg.profile, law=cfg.law, epsilon=cfg.epsilon, env_seed=env_seed, replica_seed=rep_seed,
                  half_width=half_width(reach, cfg.horizon, law.mean_inverse()),
                  fields=tuple((f"G{i}", d) for i, d in enumerate(tests)), currents=())
    batch, env, _ = run_plan(plan, cfg.cache, cfg.threads)
    gamma = env.gamma_hat
    checks, sup_err = [], 0.0
    for i, d in enumerate(tests):
        G = TestFunction.parse(d)
        for t in plan.sample_times:
            x = batch.column(f"pi[G{i}]", t)
            mc, se = float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))
            th = weak_pairing(gamma, rho0, t, G)
            sup_err = max(sup_err, abs(mc - th))
            if any(math.isclose(t, c) for c in check_times):
                tol = max(3 * se, 0.01)
                checks.append(_check(f"<pi_t,{d}> at t={t:g}", cfg, mc, se, th, tol, abs(mc - th) <= tol,
                                     M=batch.M))
    return _report(cfg, checks, t0, sup_weak_error=sup_err, gamma=gamma, batch=batch)


def density_clt(cfg: ExperimentConfig) -> dict:
    """Covariances of the density fluctuation field vs the limiting formula."""
    t0 = time.time()
    rho0 = Profile.parse(cfg.profile)
    pairs = cfg.params.get("pairs", [[0.0, 0.0], [cfg.horizon, cfg.horizon]] if rho0.flat
                           else [[cfg.horizon / 2, cfg.horizon]])
    plan = clt_plan(cfg, {t for p in pairs for t in p})
    batch, env, _ = run_plan(plan, cfg.cache, cfg.threads)
    gamma = env.gamma_hat
    G = TestFunction.parse(cfg.params.get("G", DEFAULT_G))
    checks = []
    for s, t in pairs:
        est = stats.estimate_covariance(batch, ["Y[G]"], sorted({s, t}))
        a, b = f"Y[G]@{s:g}", f"Y[G]@{t:g}"
        mc, se = est.covariance(a, b)
        th = stats.theory_density_covariance(gamma, rho0, s, t, G, G)
        checks.append(_check(f"Cov(Y_{s:g}(G), Y_{t:g}(G))", cfg, mc, se, th.value, 3 * se,
                             abs(mc - th.value) <= 3 * se, th.quad_err, M=est.M))
    t_last = max(t for p in pairs for t in p)
    if t_last > 0 and batch.M >= 2000:
        shape = stats.clt_shape_test(batch.column("Y[G]", t_last))
        checks.append(_check(f"Gaussian shape of Y_{t_last:g}(G)", cfg, shape["p_value"], None, 0.01, 0.01,
                             shape["passed"], M=batch.M, shape=shape))
    return _report(cfg, checks, t0, gamma=gamma, batch=batch)


def current_clt(cfg: ExperimentConfig) -> dict:
    """Mean and variance of the current through bond (-1, 0)."""
    t0 = time.time()
    rho0 = Profile.parse(cfg.profile)
    t = float(cfg.params.get("t", cfg.horizon))
    plan = clt_plan(cfg, [t])
    batch, env, _ = run_plan(plan, cfg.cache, cfg.threads)
    gamma = env.gamma_hat
    J = batch.column("J[-1]", t)
    M = J.size
    checks = []
    if cfg.params.get("lln", True):
        mc, se = float(J.mean() / cfg.N), float(J.std(ddof=1) / cfg.N / math.sqrt(M))
        th = mean_flux(gamma, rho0, t)
        tol = max(3 * se, 0.01)
        checks.append(_check(f"mean J(t)/N at t={t:g}", cfg, mc, se, th, tol, abs(mc - th) <= tol, M=M))
    if cfg.params.get("clt", True):
        mc, se = stats.variance_with_se(J / math.sqrt(cfg.N))
        th = stats.theory_current_covariance(gamma, rho0, t, t)
        checks.append(_check(f"Var(J(t)/sqrt N) at t={t:g}", cfg, mc, se, th.value, 3 * se,
                             abs(mc - th.value) <= 3 * se, th.quad_err, M=M))
        dual = stats.current_covariance_by_ramps(gamma, rho0, t, t)
        diff = abs(dual["limit"] - th.value)
        checks.append(_check("current formula: ramp-approximation route", cfg, dual["limit"], None, th.value,
                             1e-4, diff <= 1e-4, M=None, ramps=dual))
    return _report(cfg, checks, t0, gamma=gamma, batch=batch)


def tagged_clt(cfg: ExperimentConfig) -> dict:
    """Law of large numbers and fluctuations of the tagged particle."""
    t0 = time.time()
    rho0 = Profile.parse(cfg.profile)
    t = float(cfg.params.get("t", cfg.horizon))
    plan = clt_plan(cfg, [t], star=True)
    batch, env, traj = run_plan(plan, cfg.cache, cfg.threads)
    gamma = env.gamma_hat
    X = batch.column("X", t)
    if np.any(X < -1e18):
        raise RuntimeError("the tagged particle left the window; enlarge it")
    M = X.size
    ut = compute_ut(gamma, rho0, [0.0, t])
    u = ut(t)
    checks = []
    if cfg.params.get("lln", True):
        mc, se = float(X.mean() / cfg.N), float(X.std(ddof=1) / cfg.N / math.sqrt(M))
        checks.append(_check(f"mean X_t/N at t={t:g}", cfg, mc, se, u, 0.05, abs(mc - u) <= 0.05, M=M))
        uN = compute_utN(env, traj, t) / cfg.N
        checks.append(_check(f"u_t^N/N at t={t:g}", cfg, uN, None, u, 0.02, abs(uN - u) <= 0.02,
                             ode_vs_root=ut.max_diff))
    if cfg.params.get("clt", True):
        mc, se = stats.variance_with_se(X / math.sqrt(cfg.N))
        th = stats.theory_tagged_covariance(gamma, rho0, t, t, ut)
        checks.append(_check(f"Var(W_t) at t={t:g}", cfg, mc, se, th.value, 4 * se,
                             abs(mc - th.value) <= 4 * se, th.quad_err, M=M, **th.extra))
        if M >= 2000:
            shape = stats.clt_shape_test(X, theory_variance=th.value * cfg.N, lattice=1.0)
            checks.append(_check(f"Gaussian shape of W_{t:g}", cfg, shape["p_value"], None, 0.01, 0.01,
                                 shape["passed"], M=M, shape=shape))
    return _report(cfg, checks, t0, gamma=gamma, u_t=u, batch=batch)


def correlations(cfg: ExperimentConfig) -> dict:
    """Decay of the two-point correlations in N, plus the exact small-window oracle."""
    t0 = time.time()
    sizes = cfg.params.get("sizes", [64, 128, 256, 512])
    rho0 = Profile.parse(cfg.params.get("profile", "sine:0.5,0.3,2.0"))
    steps = cfg.params.get("steps", [[0.3, 0.01], [cfg.horizon, 0.05]])
    law = Law.parse(cfg.law)
    sups, rows = [], []
    for n in sizes:
        w = LatticeWindow(n, -n, n - 1, "periodic")
        env = generate(cfg.seeds[0], law, w, cfg.epsilon)
        tp = oracle.two_point_ode(env, rho0, [cfg.horizon], method="implicit", dt=steps, keep=False)
        sups.append(tp.sup)
        rows.append({"N": n, "sup": tp.sup, "t_of_sup": float(tp.sup_times[np.argmax(tp.sup_abs)])})
    slope = float(np.polyfit(np.log(sizes), np.log(sups), 1)[0])
    lo, hi = cfg.params.get("slope_range", [-1.15, -0.85])
    checks = [_check("log-log slope of sup|phi| in N", cfg, slope, None, -1.0, (hi - lo) / 2, lo <= slope <= hi,
                     table=rows)]
    checks.append(two_point_oracle_check(seed=cfg.seeds[0]))
    return _report(cfg, checks, t0)


def nash(cfg: ExperimentConfig) -> dict:
    """On-diagonal heat-kernel decay of the walk over several environments."""
    t0 = time.time()
    law = Law.parse(cfg.law)
    seeds = cfg.params.get("env_seeds", 20)
    tmin, tmax, nt = cfg.params.get("t_range", [0.01, 10.0, 30])
    times = np.geomspace(tmin, tmax, int(nt))
    half = max(cfg.N, int(math.ceil(12 * math.sqrt(2 * tmax / cfg.epsilon))) + 16)
    probe = int(cfg.params.get("probe_radius", 16))
    vals = []
    for k in range(int(seeds)):
        w = LatticeWindow(cfg.N, -half, half, "frozen-buffer")
        env = generate(derive_seed(cfg.seeds[0], f"nash/{k}"), law, w, cfg.epsilon)
        wk = oracle.walk_kernel(env, times, "reflecting", probe_radius=probe)
        i0 = w.index(0)
        vals.append(wk.diagonal_sup_sqrt_t(np.arange(i0 - probe, i0 + probe + 1)))
    vals = np.array(vals)                      # (seeds, T)
    train = np.arange(times.size) % 2 == 0
    C0 = oracle.fit_nash_constant(vals[:, train])
    held = float(vals[:, ~train].max())
    checks = [
        _check("held-out sup_x p_t(x,x) sqrt(t) <= C0", cfg, held, None, C0, 0.0, held <= C0),
        _check("C0 <= 2/epsilon", cfg, C0, None, 2 / cfg.epsilon, 0.0, C0 <= 2 / cfg.epsilon),
    ]
    return _report(cfg, checks, t0, C0=C0, times=times.tolist(), sup_sqrt_t=vals.max(axis=0).tolist())


def liggett_functions(K: int, seed: int, extra: int = 5) -> list[np.ndarray]:
    """``2 1{x=y} + 1{|x-y|=1}`` and ``extra`` random Gram matrices (definite positive)."""
    idx = np.arange(K)
    d = np.abs(idx[:, None] - idx[None, :])
    fs = [2.0 * (d == 0) + 1.0 * (d == 1)]
    rng = np.random.default_rng(seed)
    for _ in range(extra):
        B = rng.normal(size=(K, K))
        fs.append(B @ B.T / K)
    return fs


def liggett(cfg: ExperimentConfig) -> dict:
    """Exclusion two-particle semigroup dominated by independent walkers."""
    t0 = time.time()
    K = int(cfg.params.get("K", 8))
    t_grid = cfg.params.get("times", [0.1, 1.0])
    w = LatticeWindow(K // 2, -(K // 2), K - K // 2 - 1, "frozen-buffer")
    env = generate(cfg.seeds[0], Law.parse(cfg.law), w, cfg.epsilon)
    checks = []
    for i, f in enumerate(liggett_functions(K, cfg.seeds[0])):
        r = oracle.liggett_check(env, f, t_grid)
        m = min(r["margins"])
        checks.append(_check(f"S2(t)f <= S2^0(t)f, f #{i}", cfg, m, None, 0.0, 1e-10, r["passed"], margins=r["margins"]))
    return _report(cfg, checks, t0)


def hitting(cfg: ExperimentConfig) -> dict:
    """Gambler's ruin in the environment and coalescence tails."""
    t0 = time.time()
    a, b = cfg.params.get("targets", [6, -4])
    t_grid = np.geomspace(*cfg.params.get("t_range", [0.5, 200.0, 25]))
    w = LatticeWindow(cfg.N, -cfg.N, cfg.N, "frozen-buffer")
    env = generate(cfg.seeds[0], Law.parse(cfg.law), w, cfg.epsilon)
    rep = oracle.hitting_and_coalescence(env, a, b, t_grid, replicas=cfg.replicas, seed=cfg.seeds[1])
    slope_max = cfg.params.get("slope_max", 0.1)
    checks = [
        _check(f"P(tau_{a} < tau_{b})", cfg, rep.mc, rep.se, rep.exact, 3 * rep.se,
               abs(rep.mc - rep.exact) <= 3 * rep.se, M=rep.replicas),
        _check("late slope of P(tau* > t) sqrt(1+t)", cfg, rep.envelope_slope, None, 0.0, slope_max,
               rep.envelope_slope <= slope_max, M=rep.replicas, envelope_constant=rep.envelope_constant),
    ]
    return _report(cfg, checks, t0, hitting=rep.to_dict())


RUNNERS = {"hydro": hydro, "density-clt": density_clt, "current-clt": current_clt, "tagged-clt": tagged_clt,
           "correlations": correlations, "nash": nash, "liggett": liggett, "hitting": hitting}


# --------------------------------------------------------------------------
# checks that are not separate experiments


def closure_check(K: int = 8, seed: int = 11, profile: str = "tanh:0.9,0.1,0,0.25") -> dict:
    """Master-equation one-point marginals vs the closed discrete equation on a short segment."""
    t0 = time.time()
    w = LatticeWindow(K // 2, -(K // 2), K - K // 2 - 1, "frozen-buffer")
    env = generate(seed, Law.parse(DEFAULT_LAW), w)
    rho0 = Profile.parse(profile)
    t_grid = [0.0, 0.01, 0.05, 0.1, 0.5]
    exact = oracle.master_equation(env, t_grid, rho0)
    disc = solve_discrete(env, rho0, t_grid).values
    diff = max(float(np.max(np.abs(exact.one_point(k) - disc[k]))) for k in range(len(t_grid)))
    dt = time.time() - t0
    return _check("master equation vs closed one-point equation", None, diff, None, 0.0, 1e-8,
                  diff <= 1e-8 and dt < 10, runtime_s=dt)


def two_point_oracle_check(K: int = 8, seed: int = 11, profile: str = "tanh:0.95,0.05,0,0.1") -> dict:
    """Two-point hierarchy vs exact correlations from the master equation, steep profile."""
    t0 = time.time()
    w = LatticeWindow(K // 2, -(K // 2), K - K // 2 - 1, "frozen-buffer")
    env = generate(seed, Law.parse(DEFAULT_LAW), w)
    rho0 = Profile.parse(profile)
    t_grid = [0.0, 0.01, 0.05, 0.1, 0.5]
    exact = oracle.master_equation(env, t_grid, rho0)
    tp = oracle.two_point_ode(env, rho0, t_grid, method="ivp", keep=True)
    diff = 0.0
    for k in range(len(t_grid)):
        diff = max(diff, float(np.max(np.abs(exact.two_point(k) - tp.phi[k]))))
    dt = time.time() - t0
    return _check("two-point hierarchy vs master equation", None, diff, None, 0.0, 1e-6,
                  diff <= 1e-6 and dt < 30, runtime_s=dt)


def transform_quality(seeds=(1, 2, 3), exponents=range(8, 14), G: str = DEFAULT_G, l: float = 0.5) -> dict:
    """``(1/N) sum |T_l G - gamma_hat G|`` against N for fixed environment seeds."""
    g = TestFunction.parse(G)
    law = Law.parse(DEFAULT_LAW)
    checks = []
    for seed in seeds:
        Ns, d = [], []
        for e in exponents:
            N = 2**e
            w = LatticeWindow.symmetric(N, max(g.radius, l) + 0.5, "frozen-buffer")
            env = generate(seed, law, w)
            tf = apply_Tl(env, GridFunction.sample(w, g), l)
            Ns.append(N)
            d.append(tf.l1_distance())
        slope = float(np.polyfit(np.log(Ns), np.log(d), 1)[0])
        checks.append(_check(f"l1 transform error slope, env seed {seed}", None, slope, None, -0.5, 0.0,
                             slope < 0, distances=dict(zip(Ns, d)),
                             monotone=bool(np.all(np.diff(d) < 0))))
    return {"checks": checks, "pass": all(c["pass"] for c in checks)}


def martingale_check(N: int = 128, replicas: int = 10_000, times=(0.05, 0.1), l: float = 0.5,
                     G: str = DEFAULT_G, seed: int = MASTER_SEED, cache=None, threads: int = 1) -> dict:
    """Mean and variance of the corrected-field martingale against its compensator."""
    g = TestFunction.parse(G)
    law = Law.parse(DEFAULT_LAW)
    plan = MCPlan(N=N, replicas=replicas, horizon=max(times), sample_times=tuple(times),
                  profile=DEFAULT_PROFILE, law=DEFAULT_LAW, epsilon=0.25,
                  env_seed=derive_seed(seed, "martingale/env"), replica_seed=derive_seed(seed, "martingale/replicas"),
                  half_width=half_width(max(g.radius, l), max(times), law.mean_inverse(), minimum=1.0),
                  boundary="periodic", martingales=(("G", G),), cutoff=l, currents=())
    batch, env, _ = run_plan(plan, cache, threads)
    checks = []
    for t in times:
        m = batch.column("M[G]", t)
        qv = batch.column("QV[G]", t)
        mean, se = float(m.mean()), float(m.std(ddof=1) / math.sqrt(m.size))
        checks.append(_check(f"mean M_t(G) at t={t:g}", None, mean, se, 0.0, 3 * se, abs(mean) <= 3 * se,
                             M=m.size))
        ratio = float(m.var(ddof=1) / qv.mean())
        checks.append(_check(f"Var M_t(G) / mean QV at t={t:g}", None, ratio, None, 1.0, 0.05,
                             0.95 <= ratio <= 1.05, M=m.size))
    return {"checks": checks, "pass": all(c["pass"] for c in checks)}


# --------------------------------------------------------------------------
# output


def run(cfg: ExperimentConfig) -> dict:
    """Execute one experiment and write its report (JSON) and tables (CSV)."""
    report = RUNNERS[cfg.experiment](cfg)
    batch = report.pop("batch", None)
    if cfg.output:
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"{cfg.experiment}.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, default=_jsonable)
        with open(out / f"{cfg.experiment}-checks.csv", "w", encoding="utf-8") as fh:
            fh.write("name,mc,se,theory,tolerance,pass\n")
            for c in report["checks"]:
                fh.write(f"\"{c['name']}\",{c['mc']!r},{c['se']!r},{c['theory']!r},{c['tolerance']!r},{c['pass']}\n")
        if batch is not None:
            batch.to_csv(out / f"{cfg.experiment}-samples.csv")
    return report


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def render(report: dict) -> str:
    """Human-readable rendering of a report."""
    lines = [f"experiment: {report.get('experiment')}   pass: {report.get('pass')}"]
    if report.get("runtime_s") is not None:
        lines.append(f"runtime: {report['runtime_s']:.1f} s")
    for c in report.get("checks", []):
        se = "" if c.get("se") is None else f" +- {c['se']:.3g}"
        lines.append(f"  [{'PASS' if c['pass'] else 'FAIL'}] {c['name']}: mc {c['mc']:.6g}{se}"
                     f"  reference {c['theory']:.6g}  tol {c['tolerance']:.3g}")
    return "\n".join(lines)

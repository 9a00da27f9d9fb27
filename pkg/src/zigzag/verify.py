"""Acceptance checks, each returning a pass/fail result with the numbers behind it."""

from __future__ import annotations

import hashlib
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, closed_forms
from .guidance import guidance_batch, velocity_terms
from .integrator import run_batch, run_forced, run_trajectory, with_settings
from .io import write_jumps, write_trajectory
from .sampling import positions_at, sample_initial
from .scenarios import Inconclusive, effective_collapse_check, get_scenario
from .states import build_epr_state, build_free_state

log = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    summary: str
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.summary}"


@dataclass
class Sizes:
    born_n: int = 2000
    ks_n: int = 5000
    points: int = 100
    oracle_configs: int = 1000
    free_batch: int = 100
    epr_batch: int = 100
    determinism_n: int = 6
    convergence_n: int = 4

    @classmethod
    def quick(cls) -> Sizes:
        return cls(born_n=60, ks_n=60, points=10, oracle_configs=50, free_batch=4, epr_batch=4,
                   determinism_n=2, convergence_n=1)


class Session:
    """Shared seed, worker count and cached batches for a set of checks."""

    def __init__(self, seed: int = 1, workers: int | None = None, sizes: Sizes | None = None):
        self.seed = seed
        self.workers = workers or os.cpu_count() or 1
        self.sizes = sizes or Sizes()
        self._cache = {}

    def rng(self, label: str) -> np.random.Generator:
        key = int.from_bytes(hashlib.sha256(label.encode()).digest()[:4], "little")
        return np.random.default_rng([self.seed, key])

    def batch(self, scenario_id: str, n: int, output_times=(), stride: int = 1 << 40):
        key = (scenario_id, n, tuple(output_times), stride)
        if key not in self._cache:
            spec = get_scenario(scenario_id)
            state = spec.build_state()
            settings = spec.settings(rng_seed=self.seed, stride=stride, output_times=tuple(output_times))
            configs = sample_initial(state, n, self.seed)
            log.info("running %s x %d", scenario_id, n)
            self._cache[key] = (state, run_batch(state, configs, settings, self.workers))
        return self._cache[key]

    def weighted_batch(self):
        spec = get_scenario("SPIN_WEIGHTED")
        n = max(self.sizes.ks_n, self.sizes.born_n)
        return self.batch("SPIN_WEIGHTED", n, (spec.T / 2,))


def check_born_rule(session: Session) -> CheckResult:
    n = session.sizes.born_n
    _, weighted = session.weighted_batch()
    _, spin_y = session.batch("SPIN_Y_SINGLE", n)
    w = analysis.outcome_fraction(weighted[:n])
    y = analysis.outcome_fraction(spin_y)
    ok = 0.87 <= w.fraction_up <= 0.93 and 0.466 <= y.fraction_up <= 0.534 and w.n_failed == y.n_failed == 0
    return CheckResult(
        "born-rule", ok,
        f"SPIN_WEIGHTED up {w.fraction_up:.4f} (n={w.n}, want [0.87, 0.93]); "
        f"SPIN_Y_SINGLE up {y.fraction_up:.4f} (n={y.n}, want [0.466, 0.534])",
        dict(weighted=vars(w) | dict(fraction_up=w.fraction_up, stderr=w.stderr),
             spin_y=vars(y) | dict(fraction_up=y.fraction_up, stderr=y.stderr)))


def check_equivariance(session: Session) -> CheckResult:
    state, records = session.weighted_batch()
    records = records[:session.sizes.ks_n]
    T = get_scenario("SPIN_WEIGHTED").T
    reports = [analysis.equivariance_test(records, t, state) for t in (T / 2, T)]
    ok = all(r.passed for r in reports)
    text = "; ".join(f"t={r.t:g}: D={r.statistic:.4f} < {r.critical:.4f}" + ("" if r.passed else " FAILED")
                     for r in reports)
    return CheckResult("equivariance", ok, f"{text} (n={reports[0].n})",
                       dict(reports=[dict(t=r.t, statistic=r.statistic, critical=r.critical, pvalue=r.pvalue,
                                          n=r.n) for r in reports]))


def _regimes(spec):
    f = spec.field_profile
    return [(0.0, f.t_i), (f.t_i, f.t_f), (f.t_f, spec.T)]


def _random_spacetime(state, spec, n, rng, margin=1.0):
    """n points per field regime, positions drawn from |Psi|^2 at each time."""
    out = []
    for lo, hi in _regimes(spec):
        ts = rng.uniform(lo + margin, hi - margin, n)
        xs = np.stack([positions_at(state, t, 1, rng)[0] for t in ts])
        out.append((lo, ts, xs))
    return out


def check_fokker_planck(session: Session) -> CheckResult:
    n = session.sizes.points
    worst = {}
    sg = get_scenario("SPIN_Y_SINGLE")
    cases = {"SPIN_Y_SINGLE": sg.build_state(),
             "free spin-up-z": build_free_state(sg.params, 1.0, 0.0)}
    rng = session.rng("fokker-planck")
    for name, state in cases.items():
        for lo, ts, xs in _random_spacetime(state, sg, n, rng):
            chis = rng.choice([-1, 1], size=(n, 1))
            res = analysis.fokker_planck_residual(state, xs, ts, chis)
            worst[f"{name} t>={lo:g}"] = float(res.max())
    top = max(worst.values())
    return CheckResult("fokker-planck", top < 1e-4, f"max relative residual {top:.2e} (< 1e-4)", worst)


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    ref = np.linalg.norm(b)
    diff = np.linalg.norm(a - b)
    return diff / ref if ref > 0 else (0.0 if diff < 1e-15 else math.inf)


def _rate_err(eng, ref, grad_ln_rho):
    """Rate error relative to max(|r|, |grad_k log rho|).

    |grad_k log rho| is the largest rate a locally uniform, fully polarised
    spin field could produce. Where the true rate is far below it, the rate
    is a near-cancellation of the two spin branches and plain relative error
    measures double-precision conditioning rather than formula agreement.
    """
    eng, ref = np.asarray(eng, dtype=float), np.asarray(ref, dtype=float)
    scale = max(np.linalg.norm(ref), np.linalg.norm(grad_ln_rho))
    return np.linalg.norm(eng - ref) / scale if scale > 0 else 0.0


def check_oracle(session: Session) -> CheckResult:
    n = session.sizes.oracle_configs
    rng = session.rng("oracle")
    spec = get_scenario("EPR_SG")
    params, fp = spec.params, spec.field_profile
    worst = dict(velocity=0.0, rate=0.0, rate_plain=0.0)
    a, b = 0.8, 0.6
    free = build_epr_state(params, fp, False, a, b)
    sg = spec.build_state()

    def compare(g, vel, rates, grads):
        for k in range(2):
            eng_r = [g["rate_plus"][0, k], g["rate_minus"][0, k]]
            worst["velocity"] = max(worst["velocity"], _rel(g["velocity"][0, k], vel[k]))
            worst["rate"] = max(worst["rate"], _rate_err(eng_r, rates[k], grads[k]))
            worst["rate_plain"] = max(worst["rate_plain"], _rel(eng_r, rates[k]))

    for _ in range(n):
        t = rng.uniform(0, spec.T)
        chi = rng.choice([-1, 1], size=2)
        x = positions_at(free, t, 1, rng)[0]
        v1, v2, r1, r2 = closed_forms.entangled_free_guidance(x[0], x[1], t, chi, params, a, b)
        compare(guidance_batch(free, x, t, chi), (v1, v2), (r1, r2),
                closed_forms.entangled_free_density_gradients(x[0], x[1], t, params))
        x = positions_at(sg, t, 1, rng)[0]
        v1, v2, _, _, r1, r2 = closed_forms.epr_sg_guidance(x[0], x[1], t, chi, params, fp)
        compare(guidance_batch(sg, x, t, chi), (v1, v2), (r1, r2),
                closed_forms.epr_sg_density_gradients(x[0], x[1], t, params, fp))

    # a = b_spin: spin-dependent parts vanish identically
    sym = build_epr_state(params, fp, False)
    spin_part = 0.0
    for _ in range(min(n, 200)):
        t = rng.uniform(0, spec.T)
        x = positions_at(sym, t, 1, rng)[0]
        for k in range(2):
            _, curl, chi_term = velocity_terms(sym, x, t, k)
            spin_part = max(spin_part, np.abs(curl).max(), np.abs(chi_term).max())
        g = guidance_batch(sym, x, t, rng.choice([-1, 1], size=2))
        spin_part = max(spin_part, np.abs(g["rate_plus"]).max(), np.abs(g["rate_minus"]).max())
    _, records = session.batch("EPR_FREE", session.sizes.free_batch)
    flips = sum(len(r.jump_t) for r in records)
    failed = sum(not r.ok for r in records)
    ok = (worst["velocity"] < 1e-10 and worst["rate"] < 1e-10 and spin_part == 0.0
          and flips == 0 and failed == 0)
    return CheckResult(
        "oracle", ok,
        f"max rel diff velocity {worst['velocity']:.1e}, rate {worst['rate']:.1e} (< 1e-10; "
        f"plain relative {worst['rate_plain']:.1e}) over {n} configs x 2 states; "
        f"a=b spin part max {spin_part:g}; EPR_FREE flips {flips} in {len(records)} trajectories",
        dict(worst, spin_part=spin_part, flips=flips, failed=failed))


def _epr_sg_pass(session: Session):
    """Stride-1 EPR_SG trajectories, reduced to what criteria 5 and 9 need."""
    if "epr_sg" in session._cache:
        return session._cache["epr_sg"]
    spec = get_scenario("EPR_SG")
    state = spec.build_state()
    settings = spec.settings(rng_seed=session.seed, stride=1)
    rows = []
    for i, cfg in enumerate(sample_initial(state, session.sizes.epr_batch, session.seed)):
        rec = run_trajectory(state, cfg, settings, index=i)
        row = dict(ok=rec.ok, anti=float(np.abs(rec.spins[:, 0] + rec.spins[:, 1]).max()),
                   early=int(np.count_nonzero(rec.jump_t < spec.field_profile.t_i)),
                   both=all(np.any((rec.jump_k == k) & (rec.jump_t >= spec.field_profile.t_i)) for k in (0, 1)))
        try:
            rep = effective_collapse_check(rec, state)
            row.update(collapse=rep.max_divergence, branch=rep.branch, checkpoint=rep.checkpoint_time)
        except Inconclusive:
            row.update(collapse=None)
        rows.append(row)
        del rec
    session._cache["epr_sg"] = (state, rows)
    return state, rows


def check_epr_structure(session: Session) -> CheckResult:
    state, rows = _epr_sg_pass(session)
    spec = get_scenario("EPR_SG")
    anti = max(r["anti"] for r in rows)
    early = sum(r["early"] for r in rows)
    both = sum(r["both"] for r in rows) / len(rows)
    failed = sum(not r["ok"] for r in rows)

    rng = session.rng("epr-structure")
    invariance = 0.0
    for _ in range(session.sizes.points):
        t = rng.uniform(0, spec.T)
        x = positions_at(state, t, 1, rng)[0]
        y = x.copy()
        y[1] += rng.normal(0, 200, 3)
        s = guidance_batch(state, np.stack([x, y]), t)["spin"]
        invariance = max(invariance, float(np.abs(s[0] - s[1]).max()))
    ok = anti <= 1e-12 and invariance <= 1e-12 and early == 0 and both >= 0.95 and failed == 0
    return CheckResult(
        "epr-structure", ok,
        f"max |s1+s2| {anti:.1e}; s change under X2 shift {invariance:.1e}; jumps before t_i {early}; "
        f"both particles jump after t_i in {both:.0%} of {len(rows)}",
        dict(anti=anti, invariance=invariance, early=early, both_fraction=both, failed=failed))


def check_pauli(session: Session) -> CheckResult:
    n = session.sizes.points
    rng = session.rng("pauli")
    worst, jumps = {}, {}
    for sid in ("SPIN_Y_SINGLE", "SPIN_WEIGHTED", "EPR_SG"):
        spec = get_scenario(sid)
        state = spec.build_state()
        for lo, ts, xs in _random_spacetime(state, spec, n, rng):
            worst[f"{sid} t>={lo:g}"] = float(analysis.pauli_residual(state, xs, ts).max())
        for t_s in (spec.field_profile.t_i, spec.field_profile.t_f):
            xs = positions_at(state, t_s, n, rng)
            jumps[f"{sid} t={t_s:g}"] = float(analysis.switch_discontinuity(state, xs, t_s).max())
    top, gap = max(worst.values()), max(jumps.values())
    return CheckResult("pauli", top < 1e-4 and gap < 1e-4,
                       f"max residual {top:.2e}, max jump across switches {gap:.2e} (< 1e-4)",
                       dict(residual=worst, continuity=jumps))


def check_single_particle(session: Session) -> CheckResult:
    rng = session.rng("single-particle")
    spin_err = third = 0.0
    product = 0.0
    for sid in ("SPIN_Y_SINGLE", "SPIN_WEIGHTED", "FREE_SPIN_Y"):
        spec = get_scenario(sid)
        state = spec.build_state()
        for lo, ts, xs in _random_spacetime(state, spec, session.sizes.points, rng):
            for t, x in zip(ts, xs):
                g = guidance_batch(state, x, t, 1)
                spin_err = max(spin_err, abs(np.linalg.norm(g["spin"][0, 0]) - 1.0))
                product = max(product, float(g["rate_plus"][0, 0] * g["rate_minus"][0, 0]))
                for chi in (1, -1):
                    third = max(third, abs(np.linalg.norm(velocity_terms(state, x, t, 0, chi)[2]) - 1.0))
    _, records = session.batch("SPIN_Y_SINGLE", session.sizes.born_n)
    along = max(float(np.abs(np.linalg.norm(r.spins[:, 0], axis=1) - 1).max()) for r in records)
    spin_err = max(spin_err, along)
    ok = spin_err <= 1e-12 and third <= 1e-12 and product == 0.0
    return CheckResult("single-particle", ok,
                       f"max ||s|-1| {spin_err:.1e}; max ||chi s|-1| {third:.1e}; max r+ r- {product:g}",
                       dict(spin=spin_err, third=third, product=product))


def _digest(records) -> str:
    h = hashlib.sha256()
    with tempfile.TemporaryDirectory() as tmp:
        for i, rec in enumerate(records):
            for kind, writer in (("traj", write_trajectory), ("jumps", write_jumps)):
                path = Path(tmp) / f"{kind}_{i}.csv"
                writer(path, rec)
                h.update(path.read_bytes())
    return h.hexdigest()


def check_determinism(session: Session) -> CheckResult:
    sizes = session.sizes
    spec = get_scenario("SPIN_Y_SINGLE")
    state = spec.build_state()
    settings = spec.settings(rng_seed=session.seed, stride=50)
    configs = sample_initial(state, sizes.determinism_n, session.seed)
    digests = {w: _digest(run_batch(state, configs, settings, w)) for w in (1, 3)}
    digests["repeat"] = _digest(run_batch(state, configs, settings, 1))
    same = len(set(digests.values())) == 1

    shifts = {}
    for sid in ("SPIN_Y_SINGLE", "EPR_SG"):
        spec = get_scenario(sid)
        state = spec.build_state()
        loose = spec.settings(rng_seed=session.seed, stride=1 << 40)
        tight = with_settings(loose, abs_tolerance=1e-12)
        for i, cfg in enumerate(sample_initial(state, sizes.convergence_n, session.seed)):
            rec = run_trajectory(state, cfg, loose, index=i)
            again = run_forced(state, cfg, tight, rec.jump_t, rec.jump_k)
            same_chi = bool(np.array_equal(again.chiralities[-1], rec.chiralities[-1]))
            shift = float(np.abs(again.final_position - rec.final_position).max()) if same_chi else math.inf
            shifts[f"{sid}#{i}"] = shift
    worst = max(shifts.values())
    return CheckResult("determinism", same and worst < 1e-6,
                       f"records identical across worker counts: {same}; "
                       f"max final-position shift 1e-10 -> 1e-12: {worst:.1e} (< 1e-6)",
                       dict(digests=digests, shifts=shifts))


def check_collapse(session: Session) -> CheckResult:
    _, rows = _epr_sg_pass(session)
    eligible = [r for r in rows if r["collapse"] is not None]
    small = sum(r["collapse"] < 1e-2 for r in eligible)
    frac = small / len(eligible) if eligible else 0.0
    worst = max((r["collapse"] for r in eligible), default=math.nan)
    return CheckResult("collapse", bool(eligible) and frac >= 0.9,
                       f"{small}/{len(eligible)} separated trajectories diverge < 1e-2 "
                       f"(max {worst:.1e}); {len(rows) - len(eligible)} inconclusive",
                       dict(eligible=len(eligible), passed=small, worst=worst,
                            divergences=[r["collapse"] for r in eligible]))


CHECKS = {
    "born-rule": check_born_rule,
    "equivariance": check_equivariance,
    "fokker-planck": check_fokker_planck,
    "oracle": check_oracle,
    "epr-structure": check_epr_structure,
    "pauli": check_pauli,
    "single-particle": check_single_particle,
    "determinism": check_determinism,
    "collapse": check_collapse,
}


def run_checks(names=None, session: Session | None = None) -> list[CheckResult]:
    session = session or Session()
    names = list(CHECKS) if not names else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks {unknown}; known: {', '.join(CHECKS)}")
    return [CHECKS[name](session) for name in names]

"""Named, parameter-pinned experiment definitions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import closed_forms
from .guidance import ParticleConfig
from .integrator import IntegratorSettings, TrajectoryRecord, replay_trajectory
from .states import (AXES, FieldProfile, PacketParams, SpinorState, Term,
                     build_epr_state, build_free_state, build_sg_state)

T_DEFAULT = 1e5
RESCALE_DEFAULT = 1e3


class Inconclusive(RuntimeError):
    """The collapse check's separation precondition does not hold."""


@dataclass(frozen=True)
class ScenarioSpec:
    """An experiment: which state, its parameters, and how to integrate it.

    kind is "sg" (one particle through the device), "free" (one particle, no
    field) or "epr" (entangled pair, device on particle 1 when with_sg).
    """

    id: str
    kind: str
    description: str = ""
    c_plus: complex = 1.0
    c_minus: complex = 0.0
    a: float = 1 / math.sqrt(2)
    b_spin: float = 1 / math.sqrt(2)
    with_sg: bool = True
    params: PacketParams = field(default_factory=PacketParams)
    field_profile: FieldProfile = field(default_factory=lambda: FieldProfile(1e-6, T_DEFAULT / 5, 3 * T_DEFAULT / 5))
    T: float = T_DEFAULT
    n_trajectories: int = 10
    integrator: IntegratorSettings = field(default_factory=IntegratorSettings)
    rescale: float = RESCALE_DEFAULT

    def __post_init__(self):
        object.__setattr__(self, "c_plus", complex(self.c_plus))
        object.__setattr__(self, "c_minus", complex(self.c_minus))
        if self.kind not in ("sg", "free", "epr"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.n_trajectories < 0:
            raise ValueError("n_trajectories must be non-negative")
        if self.rescale <= 0:
            raise ValueError("rescale must be positive")

    def build_state(self) -> SpinorState:
        if self.kind == "sg":
            return build_sg_state(self.params, self.field_profile, self.c_plus, self.c_minus)
        if self.kind == "free":
            return build_free_state(self.params, self.c_plus, self.c_minus)
        return build_epr_state(self.params, self.field_profile, self.with_sg, self.a, self.b_spin)

    def settings(self, **changes) -> IntegratorSettings:
        """Integrator settings with T_final pinned to the scenario's T."""
        return replace(self.integrator, T_final=self.T, **changes)

    @property
    def n_particles(self) -> int:
        return 2 if self.kind == "epr" else 1

    def with_overrides(self, **changes) -> ScenarioSpec:
        return override(self, changes)


_R2 = 1 / math.sqrt(2)
_R10 = 1 / math.sqrt(10)


def catalog() -> list[ScenarioSpec]:
    return [
        ScenarioSpec("SPIN_Y_SINGLE", "sg", "spin up along y through a z device", _R2, 1j * _R2),
        ScenarioSpec("SPIN_WEIGHTED", "sg", "(3 psi_+, i psi_-)/sqrt(10) through a z device", 3 * _R10, 1j * _R10),
        ScenarioSpec("SPIN_UP_Z", "sg", "spin up along z through a z device", 1.0, 0.0),
        ScenarioSpec("FREE_SPIN_Y", "free", "spin up along y, no field", _R2, 1j * _R2),
        ScenarioSpec("EPR_FREE", "epr", "singlet pair flying apart, no field", with_sg=False),
        ScenarioSpec("EPR_SG", "epr", "singlet pair, particle 1 through a z device"),
        ScenarioSpec("EPR_SG_Y", "epr", "singlet pair, particle 1 through a y device",
                     field_profile=FieldProfile(1e-6, T_DEFAULT / 5, 3 * T_DEFAULT / 5, axis="y")),
    ]


def get_scenario(scenario_id: str) -> ScenarioSpec:
    for spec in catalog():
        if spec.id == scenario_id:
            return spec
    raise KeyError(f"unknown scenario {scenario_id!r}; known: {', '.join(s.id for s in catalog())}")


# flat override keys -> (sub-object attribute or None, field name)
def _override_keys() -> dict[str, tuple[str | None, str]]:
    keys = {}
    for f in fields(ScenarioSpec):
        if f.name in ("id", "params", "field_profile", "integrator"):
            continue
        keys[f.name] = (None, f.name)
    for f in fields(PacketParams):
        keys[f.name] = ("params", f.name)
    for f in fields(FieldProfile):
        keys[f.name] = ("field_profile", f.name)
    for f in fields(IntegratorSettings):
        if f.name != "T_final":
            keys[f.name] = ("integrator", f.name)
    return keys


OVERRIDE_KEYS = _override_keys()


def override(spec: ScenarioSpec, changes: dict) -> ScenarioSpec:
    """Apply flat key -> value overrides (values already typed)."""
    top, sub = {}, {"params": {}, "field_profile": {}, "integrator": {}}
    for key, value in changes.items():
        if key not in OVERRIDE_KEYS:
            raise KeyError(f"unknown setting {key!r}")
        owner, name = OVERRIDE_KEYS[key]
        (top if owner is None else sub[owner])[name] = value
    for owner, vals in sub.items():
        if vals:
            top[owner] = replace(getattr(spec, owner), **vals)
    return replace(spec, **top)


def flat_settings(spec: ScenarioSpec) -> dict:
    """Every overridable setting of spec as key -> value."""
    out = {}
    for key, (owner, name) in OVERRIDE_KEYS.items():
        out[key] = getattr(spec if owner is None else getattr(spec, owner), name)
    return out


@dataclass
class CollapseReport:
    checkpoint_index: int
    checkpoint_time: float
    branch: int
    max_divergence: float
    threshold: float
    flips_full: int
    flips_collapsed: int
    collapsed_spin: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_divergence < self.threshold


def separated_from(record: TrajectoryRecord, field_profile: FieldProfile, d: float,
                   near: float = 3.0, far: float = 6.0) -> tuple[int, int]:
    """First row after t_f from which particle 1 stays in one branch for good.

    Returns (row, branch sign). Being in a branch means within `near`
    standard deviations of its centre and at least `far` from the other
    centre. Raises Inconclusive when no such row exists.
    """
    ax = AXES.index(field_profile.axis)
    q = record.positions[:, 0, ax]
    ok_up = np.zeros(len(q), dtype=bool)
    ok_down = np.zeros(len(q), dtype=bool)
    for i, t in enumerate(record.times):
        if t <= field_profile.t_f:
            continue
        sig = closed_forms.packet_sigma(t, d)
        up = closed_forms.branch_center(t, field_profile, +1)
        ok_up[i] = abs(q[i] - up) <= near * sig and abs(q[i] + up) >= far * sig
        ok_down[i] = abs(q[i] + up) <= near * sig and abs(q[i] - up) >= far * sig
    for branch, ok in ((1, ok_up), (-1, ok_down)):
        if ok[-1]:
            bad = np.flatnonzero(~ok)
            return int(bad[-1] + 1), branch
    raise Inconclusive("particle 1 does not end up separated into one branch")


def collapsed_state(state: SpinorState, branch: int) -> SpinorState:
    """Single-particle state of particle 2 once particle 1 sits in `branch`.

    Keeps particle 2's factors and ket from the term whose particle-1 packet
    is kicked towards `branch`.
    """
    for term in state.terms:
        force = term.factors[0][AXES.index(state.meta["field"].axis)].force
        if np.sign(force) == branch:
            return SpinorState((Term(1.0, (term.factors[1],), (term.kets[1],)),),
                               label="collapsed", meta=dict(branch=branch))
    raise ValueError("state has no term for that branch")


def effective_collapse_check(record: TrajectoryRecord, state: SpinorState, threshold: float = 1e-2,
                             uniforms: np.ndarray | None = None) -> CollapseReport:
    """Compare particle 2 in the full state with particle 2 in the collapsed product state.

    From the separation checkpoint on, particle 2 is re-integrated under the
    collapsed single-particle state on the record's own time grid, reusing the
    record's uniforms for particle 2. The record must be stride 1.
    """
    if state.n_particles != 2 or not state.meta.get("with_sg"):
        raise ValueError("collapse check needs an EPR state with the device on particle 1")
    if len(record.times) != record.n_steps + 1:
        raise ValueError("collapse check needs a stride-1 record")
    fp = state.meta["field"]
    row, branch = separated_from(record, fp, state.meta["params"].d_z)
    if uniforms is None:
        uniforms = record.uniforms()
    reduced = collapsed_state(state, branch)
    start = ParticleConfig(record.positions[row, 1], record.chiralities[row, 1:2], float(record.times[row]))
    out = replay_trajectory(reduced, start, record.times[row:], uniforms[row:, 1:2])
    if out.failure is not None:
        raise RuntimeError(f"collapsed re-integration failed: {out.failure}")
    diff = np.linalg.norm(out.positions[:, 0] - record.positions[row:, 1], axis=1)
    full_flips = int(np.count_nonzero(np.diff(record.chiralities[row:, 1])))
    return CollapseReport(row, float(record.times[row]), branch, float(diff.max()), threshold,
                          full_flips, int(out.n_flips[0]), out.spins[-1, 0].copy())

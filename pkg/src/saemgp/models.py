"""Exact computer models: two one-compartment pharmacokinetic ODEs.

Both models describe the drug concentration after a bolus dose with first
order absorption; they differ in the elimination term (Michaelis-Menten vs
first order).  The solver is a fixed-step RK4 so the exact baseline stays
deterministic.  Individual parameters live on the log scale:

  michaelis_menten: psi = (log V, log k_a, log V_m), log k_m fixed
  first_order:      psi = (log k_e, log k_a, log C_l)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SolverError

MICHAELIS_MENTEN = "michaelis_menten"
FIRST_ORDER = "first_order"

DEFAULT_STEP = 0.01

#: shared measurement grid (hours), dense early where the curves move fast;
#: used by both scenarios.
DEFAULT_TIMES = (0.25, 0.5, 1.0, 2.0, 3.5, 5.0, 7.0, 9.0, 12.0)


@dataclass(frozen=True)
class PkScenario:
    kind: str
    dose: float
    times: np.ndarray
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (MICHAELIS_MENTEN, FIRST_ORDER):
            raise DomainError(f"unknown scenario kind: {self.kind!r}")
        # dose == 0 is allowed (yields the zero profile), negative is not
        if self.dose < 0:
            raise DomainError("dose must be nonnegative")
        times = np.asarray(self.times, dtype=float)
        if times.size and not np.all(np.diff(times) > 0):
            raise DomainError("times must be strictly increasing")
        if times.size and times[0] <= 0:
            raise DomainError("times must be positive")
        object.__setattr__(self, "times", times)

    @property
    def dim(self) -> int:
        return 3


def michaelis_menten_scenario(dose: float = 50.0, times=DEFAULT_TIMES) -> PkScenario:
    return PkScenario(
        kind=MICHAELIS_MENTEN, dose=dose, times=np.asarray(times), fixed={"log_km": -2.5}
    )


def first_order_scenario(dose: float = 6.0, times=DEFAULT_TIMES) -> PkScenario:
    return PkScenario(kind=FIRST_ORDER, dose=dose, times=np.asarray(times))


def _rk4(rhs, times, step):
    """Integrate f' = rhs(t, f), f(0) = 0, return values at `times`.

    `rhs` must broadcast over a batch state vector.  The integration grid is
    a fixed-step grid from 0 to max(times); outputs are linearly
    interpolated onto `times`.
    """
    t_end = float(times[-1])
    n_steps = max(1, int(np.ceil(t_end / step - 1e-12)))
    h = t_end / n_steps
    grid = np.linspace(0.0, t_end, n_steps + 1)
    f = rhs(0.0, 0.0) * 0.0  # zero state with the batch shape
    traj = np.empty((n_steps + 1,) + np.shape(f))
    traj[0] = f
    t = 0.0
    for step_idx in range(n_steps):
        k1 = rhs(t, f)
        k2 = rhs(t + h / 2, f + h / 2 * k1)
        k3 = rhs(t + h / 2, f + h / 2 * k2)
        k4 = rhs(t + h, f + h * k3)
        f = f + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(f)):
            raise SolverError(
                f"non-finite state at t={grid[step_idx + 1]:.4g}", t=grid[step_idx + 1]
            )
        t = grid[step_idx + 1]
        traj[step_idx + 1] = f
    # interpolate each output time on the shared grid
    idx = np.clip(np.searchsorted(grid, times) - 1, 0, n_steps - 1)
    w = (times - grid[idx]) / h
    out = traj[idx] + (traj[idx + 1] - traj[idx]) * w.reshape((-1,) + (1,) * (traj.ndim - 1))
    return _clamp_nonnegative(out)


def _clamp_nonnegative(values):
    low = values.min() if values.size else 0.0
    if low < -1e-12:
        raise SolverError(f"negative concentration {low:.3e} beyond tolerance")
    return np.maximum(values, 0.0)


def _as_batch(psi):
    psi = np.asarray(psi, dtype=float)
    if psi.ndim == 1:
        return psi[None, :], True
    return psi, False


def solve_mm_pk(scenario: PkScenario, psi, step: float = DEFAULT_STEP, times=None):
    """Michaelis-Menten elimination: f' = -Vm f/(km+f) + ka (D/V) e^{-ka t}."""
    times = scenario.times if times is None else np.asarray(times, dtype=float)
    psi_b, squeeze = _as_batch(psi)
    if times.size == 0:
        out = np.empty((psi_b.shape[0], 0))
        return out[0] if squeeze else out
    v = np.exp(psi_b[:, 0])
    ka = np.exp(psi_b[:, 1])
    vm = np.exp(psi_b[:, 2])
    km = np.exp(scenario.fixed.get("log_km", -2.5))
    dose = scenario.dose

    def rhs(t, f):
        return -vm * f / (km + f) + ka * (dose / v) * np.exp(-ka * t)

    out = _rk4(rhs, times, step).T  # (batch, n_times)
    return out[0] if squeeze else out


def solve_first_order_pk(scenario: PkScenario, psi, step: float = DEFAULT_STEP, times=None):
    """First order elimination: f' = D ka ke / Cl e^{-ka t} - ke f."""
    times = scenario.times if times is None else np.asarray(times, dtype=float)
    psi_b, squeeze = _as_batch(psi)
    if times.size == 0:
        out = np.empty((psi_b.shape[0], 0))
        return out[0] if squeeze else out
    ke = np.exp(psi_b[:, 0])
    ka = np.exp(psi_b[:, 1])
    cl = np.exp(psi_b[:, 2])
    dose = scenario.dose

    def rhs(t, f):
        return dose * ka * ke / cl * np.exp(-ka * t) - ke * f

    out = _rk4(rhs, times, step).T
    return out[0] if squeeze else out


def first_order_analytic(scenario: PkScenario, psi, times=None):
    """Closed form of the first-order model; test oracle for the RK4 path.

    f(t) = D ka ke / (Cl (ka - ke)) (e^{-ke t} - e^{-ka t}), with the
    confluent limit D ke^2 / Cl * t e^{-ke t} when ka == ke.
    """
    times = scenario.times if times is None else np.asarray(times, dtype=float)
    psi_b, squeeze = _as_batch(psi)
    ke = np.exp(psi_b[:, 0])[:, None]
    ka = np.exp(psi_b[:, 1])[:, None]
    cl = np.exp(psi_b[:, 2])[:, None]
    t = times[None, :]
    dose = scenario.dose
    with np.errstate(divide="ignore", invalid="ignore"):
        generic = dose * ka * ke / (cl * (ka - ke)) * (np.exp(-ke * t) - np.exp(-ka * t))
    confluent = dose * ke**2 / cl * t * np.exp(-ke * t)
    out = np.where(np.isclose(ka, ke, rtol=1e-12, atol=0.0), confluent, generic)
    return out[0] if squeeze else out


def eval_f(scenario: PkScenario, psi, step: float = DEFAULT_STEP, times=None):
    """Dispatch to the scenario's solver; returns concentrations at the grid."""
    if scenario.kind == MICHAELIS_MENTEN:
        return solve_mm_pk(scenario, psi, step=step, times=times)
    if scenario.kind == FIRST_ORDER:
        return solve_first_order_pk(scenario, psi, step=step, times=times)
    raise DomainError(f"unknown scenario kind: {scenario.kind!r}")

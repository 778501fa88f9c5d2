"""Fixed-step RK4 simulation of the exosystem / plant / observer / internal-model loop.

The stacked state is col(v, x, zeta, z).  Within each policy phase the loop
is linear time-invariant driven by the multitone exploration signal, so the
integrator advances s' = A_tot s + B_tot delta(t) with the input evaluated at
the RK4 stage times.  The observer block is propagated through the known
matrices only; the plant matrices enter solely as physics.
"""

from dataclasses import dataclass, field

import numpy as np

from .internal_model import Exosystem, InternalModel
from .observer import ObserverKnown
from .oracle import LtiPlant

OVERFLOW_LIMIT = 1e9


@dataclass
class Tone:
    amplitude: float
    frequency: float  # rad/s
    phase: float = 0.0
    channel: int = 0


@dataclass
class ExplorationSignal:
    """Multitone probing input delta(t) plus an initial feedback gain K0."""

    tones: list
    K0: np.ndarray          # m x n_zeta (or m x n_rho, see K0_on)
    K0_on: str = "zeta"     # which vector K0 multiplies: 'zeta' or 'rho'

    def __post_init__(self):
        self.K0 = np.atleast_2d(np.asarray(self.K0, dtype=float))
        if self.K0_on not in ("zeta", "rho"):
            raise ValueError("K0_on must be 'zeta' or 'rho'")


def exploration_signal(sig: ExplorationSignal, t, m):
    """Evaluate the multitone signal at times t; returns (m,) or (len(t), m)."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + (m,))
    for tone in sig.tones:
        out[..., tone.channel] += tone.amplitude * np.sin(tone.frequency * t + tone.phase)
    return out


@dataclass
class Policy:
    """Exploration phase followed by an optional hard switch to u = K_rho rho."""

    exploration: ExplorationSignal | None = None
    K_rho: np.ndarray | None = None
    t_switch: float | None = None

    def __post_init__(self):
        if self.K_rho is not None:
            self.K_rho = np.atleast_2d(np.asarray(self.K_rho, dtype=float))
        if self.exploration is None and self.K_rho is None:
            raise ValueError("policy needs an exploration signal or a feedback gain")
        if self.exploration is not None and self.K_rho is not None \
                and self.t_switch is None:
            raise ValueError("both phases given but no switch time")


@dataclass
class TrajectoryLog:
    """Uniform-grid trajectory of every loop signal.

    ex_diag holds ||M zeta + X' v - x|| when the oracle diagnostic matrices
    were supplied, NaN otherwise (the learner never reads it).
    """

    times: np.ndarray
    v: np.ndarray
    x: np.ndarray
    zeta: np.ndarray
    z: np.ndarray
    u: np.ndarray
    y: np.ndarray
    e: np.ndarray
    ex_diag: np.ndarray
    h: float


def _phase_matrices(plant, exo, known, im, Ku_zeta, Ku_z):
    """Closed-loop matrix for s = col(v, x, zeta, z) under u = Ku [zeta; z] + delta."""
    n, m, q = plant.n, plant.m, exo.q
    n_zeta, n_z = known.n_zeta, im.n_z
    Z = np.zeros
    A_tot = np.block([
        [exo.S, Z((q, n)), Z((q, n_zeta)), Z((q, n_z))],
        [plant.E, plant.A, plant.B @ Ku_zeta, plant.B @ Ku_z],
        [Z((n_zeta, q)), known.E_zeta @ plant.C,
         known.A_full + known.B_zeta @ Ku_zeta, known.B_zeta @ Ku_z],
        [im.G2 @ plant.F, im.G2 @ plant.C, Z((n_z, n_zeta)), im.G1],
    ])
    B_tot = np.vstack([Z((q, m)), plant.B, known.B_zeta, Z((n_z, m))])
    K_row = np.hstack([Z((m, q)), Z((m, n)), Ku_zeta, Ku_z])
    return A_tot, B_tot, K_row


def _integrate_phase(A_tot, B_tot, s0, t_start, n_steps, h, delta_fn):
    """RK4 over n_steps from t_start; returns (n_steps+1, dim) states."""
    dim = s0.size
    out = np.empty((n_steps + 1, dim))
    out[0] = s0
    t_nodes = t_start + h * np.arange(n_steps + 1)
    if delta_fn is None:
        f0 = f_half = f1 = np.zeros((n_steps, B_tot.shape[0]))
    else:
        d_nodes = delta_fn(t_nodes)           # (n_steps+1, m)
        d_half = delta_fn(t_nodes[:-1] + 0.5 * h)
        f0 = d_nodes[:-1] @ B_tot.T
        f_half = d_half @ B_tot.T
        f1 = d_nodes[1:] @ B_tot.T
    s = s0.copy()
    for i in range(n_steps):
        k1 = A_tot @ s + f0[i]
        k2 = A_tot @ (s + 0.5 * h * k1) + f_half[i]
        k3 = A_tot @ (s + 0.5 * h * k2) + f_half[i]
        k4 = A_tot @ (s + h * k3) + f1[i]
        s = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(s).all() or np.abs(s).max() > OVERFLOW_LIMIT:
            raise OverflowError("state overflow at t = %g during integration"
                                % (t_start + (i + 1) * h))
        out[i + 1] = s
    return out


def simulate(plant: LtiPlant, exo: Exosystem, known: ObserverKnown,
             im: InternalModel, policy: Policy, tspan, h,
             x0, zeta0=None, z0=None, diag=None) -> TrajectoryLog:
    """Simulate the full interconnection over tspan with step h.

    diag, when given, is the oracle pair (M, X_prime) used only to log the
    reconstruction-error norm ||M zeta + X' v - x||.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    t0, t1 = float(tspan[0]), float(tspan[1])
    n, m, q = plant.n, plant.m, exo.q
    n_zeta, n_z = known.n_zeta, im.n_z
    x0 = np.asarray(x0, dtype=float).reshape(n)
    zeta0 = np.zeros(n_zeta) if zeta0 is None else np.asarray(zeta0, dtype=float).reshape(n_zeta)
    z0 = np.zeros(n_z) if z0 is None else np.asarray(z0, dtype=float).reshape(n_z)
    s0 = np.concatenate([exo.v0, x0, zeta0, z0])

    # phase plan: (t_start, n_steps, Ku_zeta, Ku_z, delta_fn)
    n_total = int(round((t1 - t0) / h))
    if abs(t0 + n_total * h - t1) > 1e-9:
        raise ValueError("tspan length must be an integer multiple of h")
    phases = []
    expl = policy.exploration
    if expl is not None:
        if expl.K0_on == "zeta":
            Ku_zeta, Ku_z = expl.K0, np.zeros((m, n_z))
        else:
            Ku_zeta, Ku_z = expl.K0[:, :n_zeta], expl.K0[:, n_zeta:]
        delta_fn = lambda t: exploration_signal(expl, t, m)
        if policy.t_switch is None or policy.t_switch >= t1:
            phases.append((t0, n_total, Ku_zeta, Ku_z, delta_fn))
        else:
            n_first = int(round((policy.t_switch - t0) / h))
            if abs(t0 + n_first * h - policy.t_switch) > 1e-9:
                raise ValueError("t_switch must land on the integration grid")
            phases.append((t0, n_first, Ku_zeta, Ku_z, delta_fn))
            phases.append((policy.t_switch, n_total - n_first,
                           policy.K_rho[:, :n_zeta], policy.K_rho[:, n_zeta:], None))
    else:
        phases.append((t0, n_total, policy.K_rho[:, :n_zeta],
                       policy.K_rho[:, n_zeta:], None))

    states = [s0[None, :]]
    u_rows = []
    for t_start, n_steps, Ku_zeta, Ku_z, delta_fn in phases:
        if n_steps == 0:
            continue
        A_tot, B_tot, K_row = _phase_matrices(plant, exo, known, im, Ku_zeta, Ku_z)
        seg = _integrate_phase(A_tot, B_tot, states[-1][-1], t_start, n_steps, h, delta_fn)
        t_seg = t_start + h * np.arange(n_steps)
        u_seg = seg[:-1] @ K_row.T
        if delta_fn is not None:
            u_seg = u_seg + delta_fn(t_seg)
        states.append(seg[1:])
        u_rows.append(u_seg)
    s_all = np.vstack(states)
    times = t0 + h * np.arange(n_total + 1)
    # input at the final sample comes from the last active phase gain
    _, _, K_last = _phase_matrices(plant, exo, known, im, phases[-1][2], phases[-1][3])
    u_final = s_all[-1] @ K_last.T
    if phases[-1][4] is not None:
        u_final = u_final + phases[-1][4](times[-1])
    u_all = np.vstack(u_rows + [u_final[None, :]])

    v = s_all[:, :q]
    x = s_all[:, q:q + n]
    zeta = s_all[:, q + n:q + n + n_zeta]
    z = s_all[:, q + n + n_zeta:]
    y = x @ plant.C.T
    e = y + v @ plant.F.T
    if diag is not None:
        M, X_prime = diag
        ex = zeta @ M.T + v @ X_prime.T - x
        ex_diag = np.linalg.norm(ex, axis=1)
    else:
        ex_diag = np.full(times.size, np.nan)
    return TrajectoryLog(times=times, v=v, x=x, zeta=zeta, z=z, u=u_all,
                         y=y, e=e, ex_diag=ex_diag, h=h)


def export_trajectory_csv(log: TrajectoryLog, path):
    """Write the log as CSV with 17-significant-digit floats."""
    cols = [("t", log.times[:, None]), ("v", log.v), ("x", log.x),
            ("zeta", log.zeta), ("z", log.z), ("u", log.u),
            ("y", log.y), ("e", log.e), ("ex_norm", log.ex_diag[:, None])]
    names = []
    for name, arr in cols:
        if arr.shape[1] == 1 and name in ("t", "ex_norm"):
            names.append(name)
        else:
            names.extend("%s_%d" % (name, i + 1) for i in range(arr.shape[1]))
    data = np.hstack([arr for _, arr in cols])
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for row in data:
            fh.write(",".join("%.17g" % val for val in row) + "\n")

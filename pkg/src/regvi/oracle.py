"""Ground-truth computations the learner is forbidden to use.

Exact Riccati and Sylvester solvers, observer pole placement, the state
parameterization matrix M, assembly of the augmented auxiliary system, PBH
tests and the state/output LQR equivalence check.  Tests certify every
learned quantity against this layer; the learning pipeline never imports it.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.signal import place_poles

from .internal_model import InternalModel
from .linalg import char_poly_alpha, is_hurwitz, poly_from_roots
from .observer import ObserverKnown

RANK_RTOL = 1e-8       # single knob for all numerical-rank thresholds
STABLE_EIG_TOL = 1e-9  # eigenvalues with Re >= -this count as unstable


class AssumptionError(ValueError):
    """A standing assumption (stabilizability, observability, ...) fails."""


class SpectraOverlapError(ValueError):
    """Sylvester system is singular because two spectra intersect."""


# ---------------------------------------------------------------------------
# PBH machinery
# ---------------------------------------------------------------------------

@dataclass
class PbhReport:
    ok: bool
    worst_eigenvalue: complex | None
    worst_rank_gap: int


def _numerical_rank(M):
    s = scipy.linalg.svdvals(M)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


def pbh_check(A, B_or_C, mode):
    """Eigenvalue-wise PBH rank test.

    mode is one of 'stabilizable', 'controllable' (B on the right) or
    'detectable', 'observable' (C below).  The stabilizable/detectable
    variants only test eigenvalues with Re >= -1e-9.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    M = np.atleast_2d(np.asarray(B_or_C, dtype=float))
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("A must be square")
    if mode not in ("stabilizable", "controllable", "detectable", "observable"):
        raise ValueError("unknown mode %r" % mode)
    dual = mode in ("detectable", "observable")
    partial = mode in ("stabilizable", "detectable")
    eigs = np.linalg.eigvals(A)
    worst_gap, worst_eig = 0, None
    for lam in eigs:
        if partial and lam.real < -STABLE_EIG_TOL:
            continue
        shifted = A - lam * np.eye(n)
        pencil = np.vstack([shifted, M]) if dual else np.hstack([shifted, M])
        gap = n - _numerical_rank(pencil)
        if gap > worst_gap or worst_eig is None:
            worst_gap, worst_eig = gap, complex(lam)
    return PbhReport(ok=worst_gap == 0, worst_eigenvalue=worst_eig, worst_rank_gap=worst_gap)


def transmission_zero_check(A, B, C, S):
    """Rosenbrock rank test at the exosystem modes: rank [A-lam I, B; C, 0] = n+p."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n, m = B.shape
    p = C.shape[0]
    worst_gap, worst_eig = 0, None
    for lam in np.linalg.eigvals(np.atleast_2d(np.asarray(S, dtype=float))):
        pencil = np.block([[A - lam * np.eye(n), B],
                           [C, np.zeros((p, m))]])
        gap = (n + p) - _numerical_rank(pencil)
        if gap > worst_gap or worst_eig is None:
            worst_gap, worst_eig = gap, complex(lam)
    return PbhReport(ok=worst_gap == 0, worst_eigenvalue=worst_eig, worst_rank_gap=worst_gap)


# ---------------------------------------------------------------------------
# Plant
# ---------------------------------------------------------------------------

@dataclass
class LtiPlant:
    """Ground-truth system x' = Ax + Bu + Ev, y = Cx, e = Cx + Fv.

    Unknown to the learner; used only by the simulator and the oracle layer.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    E: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.E = np.atleast_2d(np.asarray(self.E, dtype=float))
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if self.B.shape[0] != n or self.C.shape[1] != n or self.E.shape[0] != n:
            raise ValueError("B, C, E dimensions inconsistent with A")
        if self.F.shape != (self.C.shape[0], self.E.shape[1]):
            raise ValueError("F must be p x q")
        rep = pbh_check(self.A, self.B, "stabilizable")
        if not rep.ok:
            raise AssumptionError("(A, B) not stabilizable; PBH fails at eigenvalue %s"
                                  % rep.worst_eigenvalue)
        rep = pbh_check(self.A, self.C, "observable")
        if not rep.ok:
            raise AssumptionError("(A, C) not observable; PBH fails at eigenvalue %s"
                                  % rep.worst_eigenvalue)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def q(self):
        return self.E.shape[1]


# ---------------------------------------------------------------------------
# Linear matrix equations
# ---------------------------------------------------------------------------

def solve_sylvester_regulator(S, A, E):
    """Solve X S = A X + E by dense Kronecker vectorization.

    Requires the spectra of S and A to be disjoint (pairwise eigenvalue gap
    above 1e-8); the residual is certified by back substitution.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    E = np.atleast_2d(np.asarray(E, dtype=float))
    n, q = A.shape[0], S.shape[0]
    if E.shape != (n, q):
        raise ValueError("E must be n x q")
    eig_a = np.linalg.eigvals(A)
    eig_s = np.linalg.eigvals(S)
    gaps = np.abs(eig_a[:, None] - eig_s[None, :])
    if gaps.min() <= 1e-8:
        i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
        raise SpectraOverlapError(
            "spectra of A and S overlap at eigenvalue %s" % eig_s[j])
    # X S - A X = E  <=>  (S^T kron I - I kron A) vec(X) = vec(E)
    op = np.kron(S.T, np.eye(n)) - np.kron(np.eye(q), A)
    X = np.linalg.solve(op, E.reshape(-1, order="F")).reshape((n, q), order="F")
    residual = np.linalg.norm(X @ S - A @ X - E, "fro")
    if residual > 1e-9 * (1.0 + np.linalg.norm(X, "fro")):
        raise RuntimeError("Sylvester back-substitution residual %g too large" % residual)
    return X


def solve_lyapunov(F, C):
    """Solve F^T P + P F = C (C symmetric) by Kronecker vectorization."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = F.shape[0]
    op = np.kron(np.eye(n), F.T) + np.kron(F.T, np.eye(n))
    P = np.linalg.solve(op, C.reshape(-1, order="F")).reshape((n, n), order="F")
    return 0.5 * (P + P.T)


# ---------------------------------------------------------------------------
# Gains and Riccati equations
# ---------------------------------------------------------------------------

def stabilizing_gain(A, B):
    """Some K with A + BK Hurwitz, via pole placement on the controllable subspace.

    Deterministic: the controllable-subspace poles are placed at
    -1, -1.5, -2, ...; the uncontrollable part must already be stable.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m = B.shape
    # strict margin: eigenvalues within STABLE_EIG_TOL of the axis must be moved
    if is_hurwitz(A)[1] < -STABLE_EIG_TOL:
        return np.zeros((m, n))
    # orthonormal basis of the controllable subspace by Krylov expansion;
    # avoids the huge dynamic range of the raw controllability matrix
    scale = max(1.0, np.linalg.norm(A, 2))
    V = scipy.linalg.orth(B, rcond=RANK_RTOL)
    grew = V.shape[1] > 0
    while grew and V.shape[1] < n:
        grew = False
        for w in (A @ V / scale).T:
            for _ in range(2):  # re-orthogonalize for numerical safety
                w = w - V @ (V.T @ w)
            norm_w = np.linalg.norm(w)
            if norm_w > RANK_RTOL:
                V = np.hstack([V, (w / norm_w)[:, None]])
                grew = True
                if V.shape[1] == n:
                    break
    r = V.shape[1]
    if r == 0:
        raise AssumptionError("unstable system with trivial controllable subspace")
    U = np.linalg.qr(np.hstack([V, np.eye(n)]))[0][:, :n] if r < n else V
    U[:, :r] = V
    At = U.T @ A @ U
    A11, B1 = At[:r, :r], (U.T @ B)[:r, :]
    if r < n and is_hurwitz(At[r:, r:])[1] >= -STABLE_EIG_TOL:
        raise AssumptionError("(A, B) not stabilizable: unstable uncontrollable mode")
    target = -(1.0 + 0.5 * np.arange(r))
    if r == 1:
        K1 = -np.linalg.lstsq(B1, (A11 - target[0]).reshape(1, 1), rcond=None)[0].reshape(m, 1)
    else:
        K1 = -place_poles(A11, B1, target).gain_matrix
    K = np.hstack([K1, np.zeros((m, n - r))]) @ U.T
    ok, margin = is_hurwitz(A + B @ K)
    if not ok:
        raise RuntimeError("stabilizing gain construction failed (margin %g)" % margin)
    return K


@dataclass
class RiccatiSolution:
    P: np.ndarray
    K: np.ndarray
    residual: float
    closed_loop_margin: float


def care_residual(A, B, Q, R, P):
    return A.T @ P + P @ A + Q - P @ B @ np.linalg.solve(R, B.T @ P)


def solve_care(A, B, Q, R, max_newton=60):
    """Stabilizing solution of A^T P + P A + Q - P B R^-1 B^T P = 0.

    Newton/Kleinman iteration of Lyapunov solves starting from a
    deterministically constructed stabilizing gain; quadratic convergence is
    certified by the residual bound 1e-8 * (1 + ||P||).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if np.abs(R - R.T).max() > 1e-12 * max(1.0, np.abs(R).max()) or \
            np.min(np.linalg.eigvalsh(R)) <= 0:
        raise ValueError("R must be symmetric positive definite")
    K = stabilizing_gain(A, B)
    P_prev = None
    for _ in range(max_newton):
        Acl = A + B @ K
        if not is_hurwitz(Acl)[0]:
            raise RuntimeError("Newton iterate lost stability")
        P = solve_lyapunov(Acl, -(Q + K.T @ R @ K))
        K = -np.linalg.solve(R, B.T @ P)
        if P_prev is not None and \
                np.linalg.norm(P - P_prev, "fro") <= 1e-13 * (1.0 + np.linalg.norm(P, "fro")):
            break
        P_prev = P
    res = float(np.linalg.norm(care_residual(A, B, Q, R, P), "fro"))
    norm_p = np.linalg.norm(P, "fro")
    if res > 1e-8 * (1.0 + norm_p):
        raise RuntimeError("Newton stagnated at residual %g" % res)
    ok, margin = is_hurwitz(A + B @ K)
    if not ok:
        raise RuntimeError("closed loop not Hurwitz after Newton (margin %g)" % margin)
    return RiccatiSolution(P=P, K=K, residual=res, closed_loop_margin=margin)


def place_observer_gain(A, C, desired_poles):
    """Observer gain L with eigenvalues of A - LC at the desired locations.

    Placed on the dual pair (A^T, C^T); single-output plants use Ackermann's
    formula so repeated poles are allowed.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n, p = A.shape[0], C.shape[0]
    desired = np.atleast_1d(np.asarray(desired_poles, dtype=complex))
    if desired.size != n:
        raise ValueError("need exactly n = %d poles" % n)
    rep = pbh_check(A, C, "observable")
    if not rep.ok:
        raise AssumptionError("(A, C) not observable; PBH fails at eigenvalue %s"
                              % rep.worst_eigenvalue)
    alpha = poly_from_roots(desired)  # also validates conjugate pairing
    if p == 1:
        # Ackermann on the dual: L^T = e_n^T O_ctrb^{-1} phi(A^T)
        Ad, Bd = A.T, C.T
        blocks, Ak = [Bd], Bd
        for _ in range(n - 1):
            Ak = Ad @ Ak
            blocks.append(Ak)
        ctrb = np.hstack(blocks)
        phi = np.linalg.matrix_power(Ad, n)
        power = np.eye(n)
        for a in alpha:
            phi = phi + a * power
            power = power @ Ad
        row = np.linalg.solve(ctrb.T, np.eye(n)[:, -1])  # e_n^T ctrb^{-1}
        L = (row @ phi).reshape(n, 1)
    else:
        L = place_poles(A.T, C.T, desired).gain_matrix.T
    achieved = np.sort_complex(np.linalg.eigvals(A - L @ C))
    want = np.sort_complex(desired)
    if np.max(np.abs(achieved - want)) > 1e-6 * (1.0 + np.abs(want).max()):
        raise RuntimeError("pole placement missed the target spectrum")
    return L


# ---------------------------------------------------------------------------
# Parameterization and augmented auxiliary system
# ---------------------------------------------------------------------------

@dataclass
class ObserverParameterization:
    """Oracle-side observer data: gain L, adjugate matrices D_i and map M.

    M reconstructs the Luenberger estimate from the filter-bank state; the
    identities M A_full = (A-LC) M, M B_zeta = B, M E_zeta = L are verified
    at construction.
    """

    known: ObserverKnown
    L: np.ndarray
    D: list = field(default_factory=list)
    M: np.ndarray | None = None

    @property
    def lambda_coeffs(self):
        return self.known.companion.alpha


def compute_parameterization(plant, L, lambda_coeffs):
    """Build D_0..D_{n-1} and M for the observer gain L.

    lambda_coeffs must equal the characteristic polynomial of A - LC (this is
    what ties the user polynomial to the gain); mismatch is an error.
    """
    L = np.asarray(L, dtype=float).reshape(plant.n, plant.p)
    alpha = np.asarray(lambda_coeffs, dtype=float)
    n, m, p = plant.n, plant.m, plant.p
    F_obs = plant.A - L @ plant.C
    actual = char_poly_alpha(F_obs)
    if np.max(np.abs(actual - alpha)) > 1e-6 * (1.0 + np.abs(alpha).max()):
        raise ValueError("lambda coefficients do not match det(sI - A + LC): %s vs %s"
                         % (alpha, actual))
    # adjugate recursion for (sI - F)^{-1} = (sum_i D_i s^i) / Lambda(s)
    D = [None] * n
    D[n - 1] = np.eye(n)
    for i in range(n - 1, 0, -1):
        D[i - 1] = F_obs @ D[i] + alpha[i] * np.eye(n)
    closure = F_obs @ D[0] + alpha[0] * np.eye(n)
    scale = 1.0 + max(np.abs(Di).max() for Di in D)
    if np.abs(closure).max() > 1e-8 * scale:
        raise RuntimeError("adjugate recursion failed to close (residual %g)"
                           % np.abs(closure).max())
    cols = [plant.B[:, [i]] for i in range(m)] + [L[:, [i]] for i in range(p)]
    M = np.hstack([np.hstack([D[k] @ f for k in range(n)]) for f in cols])
    known = ObserverKnown.from_alpha(alpha, m, p)
    param = ObserverParameterization(known=known, L=L, D=D, M=M)
    errs = parameterization_identity_errors(plant, param)
    if max(errs.values()) > 1e-8:
        raise RuntimeError("parameterization identities violated: %s" % errs)
    return param


def parameterization_identity_errors(plant, param):
    """Relative errors of M A_full = (A-LC) M, M B_zeta = B, M E_zeta = L."""
    M, known, L = param.M, param.known, param.L
    F_obs = plant.A - L @ plant.C
    scale = 1.0 + np.abs(M).max()
    return {
        "dynamics": float(np.abs(M @ known.A_full - F_obs @ M).max()) / scale,
        "input": float(np.abs(M @ known.B_zeta - plant.B).max()) / scale,
        "gain": float(np.abs(M @ known.E_zeta - L).max()) / scale,
    }


def build_augmented_plant(plant, im: InternalModel):
    """Augmented system matrices Y = [[A,0],[G2 C, G1]], J = [B;0], Ebar = [E; G2 F]."""
    n, n_z = plant.n, im.n_z
    Y = np.block([[plant.A, np.zeros((n, n_z))],
                  [im.G2 @ plant.C, im.G1]])
    J = np.vstack([plant.B, np.zeros((n_z, plant.m))])
    Ebar = np.vstack([plant.E, im.G2 @ plant.F])
    return Y, J, Ebar


@dataclass
class AugmentedAux:
    """Oracle-side matrices of the augmented auxiliary system in rho = col(zeta, z)."""

    A_rho: np.ndarray
    B_rho: np.ndarray
    E_rho: np.ndarray
    D_rho: np.ndarray
    W: np.ndarray
    X_prime: np.ndarray

    @property
    def n_rho(self):
        return self.A_rho.shape[0]


def _aux_core(plant, param, im):
    known, M = param.known, param.M
    n_zeta, n_z = known.n_zeta, im.n_z
    CM = plant.C @ M
    A_zeta = known.A_full + known.E_zeta @ CM
    A_rho = np.block([[A_zeta, np.zeros((n_zeta, n_z))],
                      [im.G2 @ CM, im.G1]])
    B_rho = np.vstack([known.B_zeta, np.zeros((n_z, plant.m))])
    W = np.block([[M, np.zeros((plant.n, n_z))],
                  [np.zeros((n_z, n_zeta)), np.eye(n_z)]])
    return A_rho, B_rho, W


def build_augmented_aux(plant, param, im, exo):
    """Assemble (A_rho, B_rho, E_rho, D_rho, W, X') and check stabilizability."""
    A_rho, B_rho, W = _aux_core(plant, param, im)
    F_obs = plant.A - param.L @ plant.C
    X_prime = solve_sylvester_regulator(exo.S, F_obs, plant.E)
    CXp = plant.C @ X_prime
    E_rho = np.vstack([param.known.E_zeta @ CXp,
                       im.G2 @ (CXp + plant.F)])
    D_rho = np.vstack([-param.known.E_zeta @ plant.C,
                       -im.G2 @ plant.C])
    rep = pbh_check(A_rho, B_rho, "stabilizable")
    if not rep.ok:
        raise AssumptionError("(A_rho, B_rho) not stabilizable; PBH fails at eigenvalue %s"
                              % rep.worst_eigenvalue)
    return AugmentedAux(A_rho=A_rho, B_rho=B_rho, E_rho=E_rho, D_rho=D_rho,
                        W=W, X_prime=X_prime)


@dataclass
class Theorem4Report:
    P_xi: np.ndarray
    K_xi: np.ndarray
    P_rho: np.ndarray
    K_rho: np.ndarray
    W: np.ndarray
    deviation: float
    gain_deviation: float


def verify_theorem4(plant, param, im, Qbar, R):
    """Check P_rho = W^T P_xi W and K_rho = K_xi W between the two LQR problems.

    Qbar = blockdiag(Q_y, Q_z) weights the regulated output and the internal
    model state; the augmented weight is Q_xi = Cbar^T Qbar Cbar.
    """
    Qbar = np.atleast_2d(np.asarray(Qbar, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n_z = im.n_z
    if Qbar.shape != (plant.p + n_z, plant.p + n_z):
        raise ValueError("Qbar must be (p+n_z) square")
    if np.min(np.linalg.eigvalsh(0.5 * (Qbar + Qbar.T))) <= 0:
        raise ValueError("Qbar must be positive definite")
    Y, J, _ = build_augmented_plant(plant, im)
    Cbar = np.block([[plant.C, np.zeros((plant.p, n_z))],
                     [np.zeros((n_z, plant.n)), np.eye(n_z)]])
    Q_xi = Cbar.T @ Qbar @ Cbar
    sol_xi = solve_care(Y, J, Q_xi, R)
    A_rho, B_rho, W = _aux_core(plant, param, im)
    Q_rho = W.T @ Q_xi @ W
    sol_rho = solve_care(A_rho, B_rho, Q_rho, R)
    P_lift = W.T @ sol_xi.P @ W
    K_lift = sol_xi.K @ W
    deviation = float(np.linalg.norm(sol_rho.P - P_lift, "fro")
                      / np.linalg.norm(sol_rho.P, "fro"))
    gain_deviation = float(np.linalg.norm(sol_rho.K - K_lift, "fro")
                           / np.linalg.norm(K_lift, "fro"))
    return Theorem4Report(P_xi=sol_xi.P, K_xi=sol_xi.K, P_rho=sol_rho.P,
                          K_rho=sol_rho.K, W=W, deviation=deviation,
                          gain_deviation=gain_deviation)

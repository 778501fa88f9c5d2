"""Value-iteration engine over the regression data.

All six variants share one loop: solve the least-squares stage for the
current iterate, take a Robbins-Monro step on the Riccati residual, reset to
the initial iterate when the update escapes the current bound set, and stop
when the normalized step falls below the convergence threshold.  Stage
systems with a fixed matrix are QR-factored once; when the exogenous matrix
is parameterized through a known injection map the full-system matrix depends
on the iterate and is refactored per solve (it is small, so this stays cheap).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .linalg import unvecs, vecs
from .regression import RegressionData, check_rank


class RankConditionError(RuntimeError):
    """The data matrix lacks the full column rank the variant requires."""


@dataclass
class ViConfig:
    """Loop parameters; the step sizes are restricted to eps_k = a/(k+b).

    That rational form satisfies the divergent-sum / square-summable
    conditions by construction, so arbitrary schedules are rejected at
    configuration time.  Bound-set radii grow as bound_scale*(j+bound_shift).
    """

    P0: np.ndarray
    eps_num: float
    eps_shift: float
    eps_conv: float
    max_iters: int
    R: np.ndarray
    Q: np.ndarray | None = None       # Q (variant 1) or Q_rho (variants 3, 4)
    Q_y: np.ndarray | None = None     # variants 2, 5, 6
    Q_z: np.ndarray | None = None     # variants 5, 6
    bound_scale: float = 1000.0
    bound_shift: float = 20.0
    # Known injection map S for the exogenous matrix, E = S @ W with W the
    # reduced unknown.  The observer filters and the internal model admit
    # exogenous signals only through their input columns, so S is available
    # to the learner; constraining the solve to range(S) is what keeps the
    # identification error below the level the ill-conditioned reduced
    # iteration can tolerate.
    E_structure: np.ndarray | None = None

    def __post_init__(self):
        self.P0 = np.atleast_2d(np.asarray(self.P0, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        for name in ("Q", "Q_y", "Q_z"):
            val = getattr(self, name)
            if val is not None:
                setattr(self, name, np.atleast_2d(np.asarray(val, dtype=float)))
        if self.eps_num <= 0 or self.eps_shift <= 0:
            raise ValueError("step schedule a/(k+b) needs a > 0 and b > 0")
        if self.eps_conv <= 0:
            raise ValueError("convergence threshold must be positive")
        if self.bound_scale <= 0 or self.bound_shift <= 0:
            raise ValueError("bound-set radii must be positive and increasing")
        if np.abs(self.P0 - self.P0.T).max() > 1e-12 * max(1.0, np.abs(self.P0).max()):
            raise ValueError("P0 must be symmetric")
        if self.E_structure is not None:
            self.E_structure = np.atleast_2d(np.asarray(self.E_structure, dtype=float))

    def eps(self, k):
        return self.eps_num / (k + self.eps_shift)

    def bound_radius(self, j):
        return self.bound_scale * (j + self.bound_shift)


@dataclass
class StageResult:
    H: np.ndarray
    K: np.ndarray
    E_term: np.ndarray | None = None   # E^T P for the variants that carry it
    E: np.ndarray | None = None        # direct estimate when E is structured


@dataclass
class ViResult:
    P_final: np.ndarray
    K_final: np.ndarray
    iters: int
    resets: int
    converged: bool
    history: np.ndarray               # rows (k, j, specnorm P_k, step metric)
    E_rho_identified: np.ndarray | None = None


def _qr_solver(M):
    """Return a least-squares solver for the fixed tall matrix M."""
    Q, Rf = np.linalg.qr(M)
    diag = np.abs(np.diag(Rf))
    if diag.min() <= RANK_QR_RTOL * diag.max():
        raise RankConditionError(
            "stage matrix is numerically rank deficient (needs %d independent columns)"
            % M.shape[1])
    return lambda rhs: solve_triangular(Rf, Q.T @ rhs, lower=False)


# The data matrices carry directions excited only by decaying plant modes,
# whose singular values sit barely above roundoff; the QR gate therefore only
# screens for exact singularity and the meaningful rank decision is made by
# regression.check_rank.
RANK_QR_RTOL = 64 * np.finfo(float).eps


class _StageSolver:
    """Pre-factored least-squares stages for one (variant, data) pair."""

    def __init__(self, variant, data: RegressionData, cfg: ViConfig):
        self.variant = variant
        self.data = data
        self.cfg = cfg
        self.n_a = data.dims["n_a"]
        self.half = self.n_a * (self.n_a + 1) // 2
        verdict = check_rank(data, 3 if variant in (4, 6) else variant)
        if not verdict.satisfied:
            raise RankConditionError(
                "rank %d < required %d for variant %d"
                % (verdict.rank, verdict.required, variant))
        self.S = cfg.E_structure if variant in (3, 4, 5, 6) else None
        if variant == 1:
            self.solve_full = _qr_solver(np.hstack([data.I_aa, -2.0 * data.I_au]))
        elif variant == 2:
            self.solve_reduced = _qr_solver(data.I_aa)
        else:
            if self.S is None:
                self.solve_full = _qr_solver(
                    np.hstack([data.I_aa, 2.0 * data.Gamma_av]))
            if variant in (4, 6):
                self.solve_reduced = _qr_solver(data.I_aa)
        self.Rinv_Bt = None
        if data.known_B is not None:
            self.Rinv_Bt = np.linalg.solve(cfg.R, data.known_B.T)
        self.const_rhs = np.zeros(data.delta_a.shape[0])
        if variant in (2, 5, 6):
            self.const_rhs = self.const_rhs + data.I_yy @ vecs(cfg.Q_y)
        if variant in (5, 6):
            self.const_rhs = self.const_rhs + data.I_zz @ vecs(cfg.Q_z)

    def gain(self, P):
        return -self.Rinv_Bt @ P

    def _phi(self, P):
        """Right-hand side common to all variants for the iterate P."""
        rhs = self.data.delta_a @ vecs(P) + self.const_rhs
        if self.variant == 1:
            return rhs
        if self.variant == 2:
            K = self.gain(P)
            return rhs + 2.0 * self.data.I_au @ K.reshape(-1, order="F")
        return rhs - 2.0 * self.data.Gamma_aBu @ P.reshape(-1, order="F")

    def _e_term_map(self, P):
        """T with vec(E^T P) = T vec(W) for the parameterization E = S W."""
        q = self.data.dims["q"]
        SP = self.S.T @ P                       # r x n_a
        r = SP.shape[0]
        T = np.zeros((q * self.n_a, r * q))
        for i in range(self.n_a):
            for a in range(q):
                T[i * q + a, a * r:(a + 1) * r] = SP[:, i]
        return T

    def solve(self, P, reduced=False, E_term=None) -> StageResult:
        rhs = self._phi(P)
        if self.variant == 1:
            theta = self.solve_full(rhs)
            H = unvecs(theta[:self.half], self.n_a)
            m = self.data.dims["m"]
            K = theta[self.half:].reshape((m, self.n_a), order="F")
            return StageResult(H=H, K=K)
        if self.variant == 2:
            theta = self.solve_reduced(rhs)
            return StageResult(H=unvecs(theta, self.n_a), K=self.gain(P))
        if reduced:
            rhs = rhs - 2.0 * self.data.Gamma_av @ E_term.reshape(-1, order="F")
            theta = self.solve_reduced(rhs)
            return StageResult(H=unvecs(theta, self.n_a), K=self.gain(P))
        q = self.data.dims["q"]
        if self.S is not None:
            r = self.S.shape[1]
            M = np.hstack([self.data.I_aa, 2.0 * self.data.Gamma_av @ self._e_term_map(P)])
            theta = _qr_solver(M)(rhs)
            W = theta[self.half:].reshape((r, q), order="F")
            E_out = self.S @ W
            return StageResult(H=unvecs(theta[:self.half], self.n_a),
                               K=self.gain(P), E_term=E_out.T @ P, E=E_out)
        theta = self.solve_full(rhs)
        E_term_out = theta[self.half:].reshape((q, self.n_a), order="F")
        return StageResult(H=unvecs(theta[:self.half], self.n_a),
                           K=self.gain(P), E_term=E_term_out)


def solve_stage(variant, P_k, data: RegressionData, cfg: ViConfig,
                identified_E=None) -> StageResult:
    """One least-squares stage for the iterate P_k (convenience wrapper)."""
    solver = _StageSolver(variant, data, cfg)
    if variant in (4, 6) and identified_E is not None:
        return solver.solve(P_k, reduced=True, E_term=identified_E.T @ P_k)
    return solver.solve(P_k)


def identify_E(solver: _StageSolver, P0):
    """Recover the exogenous-input matrix from the k = 0 full stage solve."""
    if np.min(np.linalg.eigvalsh(P0)) <= 0:
        raise ValueError("E identification needs a positive definite P0")
    stage = solver.solve(P0)
    if stage.E is not None:
        return stage.E
    # stage.E_term = E^T P0  =>  E = P0^{-1} (E^T P0)^T
    return np.linalg.solve(P0, stage.E_term.T)


def vi_run(variant, data: RegressionData, cfg: ViConfig) -> ViResult:
    """Run the value-iteration loop; non-convergence is reported, not raised."""
    if variant in (1, 3, 4) and np.min(np.linalg.eigvalsh(cfg.P0)) <= 0:
        raise ValueError("variant %d requires a positive definite P0" % variant)
    if variant in (1, 3, 4) and cfg.Q is None:
        raise ValueError("variant %d needs the weight Q" % variant)
    if variant in (2, 5, 6) and cfg.Q_y is None:
        raise ValueError("variant %d needs Q_y" % variant)
    if variant in (5, 6) and cfg.Q_z is None:
        raise ValueError("variant %d needs Q_z" % variant)
    solver = _StageSolver(variant, data, cfg)
    E_identified = None
    E_term_fn = None
    if variant in (4, 6):
        E_identified = identify_E(solver, cfg.P0)
        Et = E_identified.T
        E_term_fn = lambda P: Et @ P
    P = cfg.P0.copy()
    j = 0
    resets = 0
    history = np.empty((cfg.max_iters, 4))
    for k in range(cfg.max_iters):
        eps = cfg.eps(k)
        if variant in (4, 6):
            stage = solver.solve(P, reduced=True, E_term=E_term_fn(P))
        else:
            stage = solver.solve(P)
        if variant in (1, 3, 4):
            update = stage.H + cfg.Q - stage.K.T @ cfg.R @ stage.K
        else:
            update = stage.H - stage.K.T @ cfg.R @ stage.K
        P_tilde = P + eps * update
        step_metric = np.linalg.norm(P_tilde - P, 2) / eps
        history[k] = (k, j, np.linalg.norm(P, 2), step_metric)
        if np.linalg.norm(P_tilde, 2) > cfg.bound_radius(j):
            P = cfg.P0.copy()
            j += 1
            resets += 1
            continue
        if step_metric < cfg.eps_conv:
            return ViResult(P_final=P, K_final=stage.K, iters=k + 1, resets=resets,
                            converged=True, history=history[:k + 1],
                            E_rho_identified=E_identified)
        P = P_tilde
    stage = solver.solve(P, reduced=True, E_term=E_term_fn(P)) if variant in (4, 6) \
        else solver.solve(P)
    return ViResult(P_final=P, K_final=stage.K, iters=cfg.max_iters, resets=resets,
                    converged=False, history=history,
                    E_rho_identified=E_identified)


def export_history_csv(result: ViResult, path):
    """Convergence history: k, j, ||P_k||, ||P~_{k+1}-P_k||/eps_k."""
    with open(path, "w") as fh:
        fh.write("k,j,normP,step_metric\n")
        for k, j, norm_p, metric in result.history:
            fh.write("%d,%d,%.17g,%.17g\n" % (int(k), int(j), norm_p, metric))

"""Minimal p-copy internal model construction and exosystem recasting."""

from dataclasses import dataclass, field

import numpy as np

from .linalg import companion_from_alpha, char_poly_alpha

ANNIHILATION_TOL = 1e-10


@dataclass
class Exosystem:
    """Autonomous generator v' = S v with initial condition v0.

    S may not have eigenvalues with negative real part (modes that decay on
    their own need no regulation and break uniqueness of the steady state).
    """

    S: np.ndarray
    v0: np.ndarray

    def __post_init__(self):
        self.S = np.atleast_2d(np.asarray(self.S, dtype=float))
        self.v0 = np.atleast_1d(np.asarray(self.v0, dtype=float))
        if self.S.shape[0] != self.S.shape[1]:
            raise ValueError("S must be square")
        if self.v0.size != self.S.shape[0]:
            raise ValueError("v0 length %d does not match S dimension %d"
                             % (self.v0.size, self.S.shape[0]))
        margin = float(np.min(np.linalg.eigvals(self.S).real))
        if margin < -1e-9:
            raise ValueError("exosystem has a decaying mode (min Re eig = %g)" % margin)

    @property
    def q(self):
        return self.S.shape[0]


@dataclass
class InternalModel:
    """p-copy compensator (G1, G2) built from a monic polynomial.

    beta is the bottom-row companion matrix of the polynomial and sigma the
    last unit vector, so (beta, sigma) is controllable by construction.
    """

    minpoly: np.ndarray
    p: int
    beta: np.ndarray = field(init=False)
    sigma: np.ndarray = field(init=False)
    G1: np.ndarray = field(init=False)
    G2: np.ndarray = field(init=False)

    def __post_init__(self):
        self.minpoly = np.asarray(self.minpoly, dtype=float)
        d = self.minpoly.size
        if d < 1:
            raise ValueError("minimal polynomial must have degree >= 1")
        if self.p < 1:
            raise ValueError("p must be a positive integer")
        self.beta = companion_from_alpha(self.minpoly)
        self.sigma = np.zeros((d, 1))
        self.sigma[-1, 0] = 1.0
        self.G1 = np.kron(np.eye(self.p), self.beta)
        self.G2 = np.kron(np.eye(self.p), self.sigma)

    @property
    def n_z(self):
        return self.p * self.minpoly.size


def minimal_polynomial(S, tol=ANNIHILATION_TOL):
    """Smallest-degree monic polynomial annihilating S, ascending coefficients.

    Found by an incremental rank test on the Krylov sequence
    vec(I), vec(S), vec(S^2), ...
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    q = S.shape[0]
    scale = max(1.0, float(np.linalg.norm(S, "fro")))
    powers = [np.eye(q)]
    for _ in range(q):
        powers.append(powers[-1] @ S)
    vecs_ = np.column_stack([p.reshape(-1) for p in powers])
    for d in range(1, q + 1):
        basis = vecs_[:, :d]
        target = vecs_[:, d]
        coef, *_ = np.linalg.lstsq(basis, target, rcond=None)
        residual = np.linalg.norm(basis @ coef - target)
        if residual <= tol * scale**d:
            return -coef  # S^d + sum_i alpha_i S^i = 0
    raise RuntimeError("Cayley-Hamilton violated; numerical breakdown")


def build_p_copy(minpoly, p):
    """Minimal p-copy internal model of the exosystem with the given minimal polynomial."""
    return InternalModel(minpoly=np.asarray(minpoly, dtype=float), p=int(p))


def recast_exosystem(minpoly, vhat0):
    """Known companion-form exosystem generating the signal with the given modes.

    Downstream code treats the generated vhat as the known exogenous signal;
    the unknown output map is absorbed into the (unknown) plant matrices.
    """
    minpoly = np.asarray(minpoly, dtype=float)
    S_hat = companion_from_alpha(minpoly)
    return Exosystem(S=S_hat, v0=np.asarray(vhat0, dtype=float))


def check_minpoly(minpoly, S, tol=1e-8):
    """Frobenius norm of minpoly(S); diagnostic for user-supplied polynomials."""
    minpoly = np.asarray(minpoly, dtype=float)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    acc = np.linalg.matrix_power(S, minpoly.size)
    power = np.eye(S.shape[0])
    for a in minpoly:
        acc = acc + a * power
        power = power @ S
    return float(np.linalg.norm(acc, "fro"))


def companion_char_poly(beta):
    """Ascending characteristic-polynomial coefficients of a companion block."""
    return char_poly_alpha(beta)

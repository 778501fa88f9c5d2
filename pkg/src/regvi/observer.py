"""Learner-visible observer machinery.

Everything in this module is constructible from user choices alone (the
observer polynomial and the channel counts m, p); nothing here touches the
plant matrices.  The filter bank runs one companion system per input and
output channel, so its state has dimension n*(m+p).
"""

from dataclasses import dataclass, field

import numpy as np

from .linalg import CompanionPair, poly_from_roots


@dataclass
class ObserverKnown:
    """Known matrices of the parameterized observer filter bank.

    A_full = I_{m+p} (x) A_companion drives the stacked filter state; B_zeta
    routes the m input channels and E_zeta the p output channels into the
    corresponding companion blocks.
    """

    companion: CompanionPair
    m: int
    p: int
    A_full: np.ndarray = field(init=False)
    B_zeta: np.ndarray = field(init=False)
    E_zeta: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.companion.dim
        b = self.companion.b_vec.reshape(-1, 1)
        self.A_full = np.kron(np.eye(self.m + self.p), self.companion.A_mat)
        self.B_zeta = np.vstack([np.kron(np.eye(self.m), b),
                                 np.zeros((self.p * n, self.m))])
        self.E_zeta = np.vstack([np.zeros((self.m * n, self.p)),
                                 np.kron(np.eye(self.p), b)])

    @property
    def n(self):
        return self.companion.dim

    @property
    def n_zeta(self):
        return self.companion.dim * (self.m + self.p)

    @classmethod
    def from_alpha(cls, alpha, m, p):
        return cls(companion=CompanionPair(np.asarray(alpha, dtype=float)), m=int(m), p=int(p))

    @classmethod
    def from_poles(cls, poles, m, p):
        """Build from user-chosen observer poles; the polynomial stays knowable."""
        return cls.from_alpha(poly_from_roots(poles), m, p)

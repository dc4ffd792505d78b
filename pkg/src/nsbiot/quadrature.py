"""Fixed-order integration rules on the reference triangle and unit segment."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

VOLUME_ORDER = 4
INTERFACE_ORDER = 5


@dataclass(frozen=True)
class QuadRule:
    """Quadrature points and weights.

    Triangle rules use reference coordinates (x, y) on the triangle with
    vertices (0,0), (1,0), (0,1); weights sum to 1/2. Segment rules use a
    parameter s in [0, 1]; weights sum to 1.
    """

    points: np.ndarray
    weights: np.ndarray
    order: int

    def __len__(self):
        return len(self.weights)


def _sym_orbit(a, w):
    b = 1.0 - 2.0 * a
    bary = np.array([[a, a, b], [a, b, a], [b, a, a]])
    return bary, np.full(3, w)


def _from_bary(groups):
    bary = np.vstack([g[0] for g in groups])
    w = np.concatenate([g[1] for g in groups])
    # barycentric (l0, l1, l2) -> reference (x, y) = (l1, l2)
    return bary[:, 1:].copy(), 0.5 * w


def _dunavant(order):
    if order == 1:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([0.5])
    if order == 2:
        return _from_bary([_sym_orbit(1.0 / 6.0, 1.0 / 3.0)])
    if order == 4:
        return _from_bary([
            _sym_orbit(0.445948490915965, 0.223381589678011),
            _sym_orbit(0.091576213509771, 0.109951743655322),
        ])
    if order == 5:
        centre = (np.array([[1.0 / 3.0] * 3]), np.array([0.225]))
        return _from_bary([
            centre,
            _sym_orbit(0.470142064105115, 0.132394152788506),
            _sym_orbit(0.101286507323456, 0.125939180544827),
        ])
    return None


def _collapsed_gauss(order):
    # Duffy collapse of the square onto the triangle; Gauss-Jacobi in the
    # collapsed direction absorbs the Jacobian, so all weights stay positive.
    n = order // 2 + 1
    xg, wg = np.polynomial.legendre.leggauss(n)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (xg + 1.0)
    r = 0.5 * (xj + 1.0)
    pts = []
    wts = []
    for ri, wri in zip(r, wj):
        for si, wsi in zip(s, wg):
            pts.append((si * (1.0 - ri), ri))
            wts.append(wsi * wri / 8.0)
    return np.array(pts), np.array(wts)


@lru_cache(maxsize=None)
def triangle_rule(order: int) -> QuadRule:
    """Rule exact for bivariate polynomials of total degree ``order`` (1..6)."""
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= 6:
        raise ValueError(f"unsupported triangle quadrature order {order!r} (1..6)")
    tab = _dunavant(order if order != 3 else 4)
    if tab is None:
        tab = _collapsed_gauss(order)
    pts, wts = tab
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadRule(pts, wts, int(order))


@lru_cache(maxsize=None)
def segment_rule(order: int) -> QuadRule:
    """Gauss-Legendre rule on [0, 1] exact up to degree ``order`` (1..8)."""
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= 8:
        raise ValueError(f"unsupported segment quadrature order {order!r} (1..8)")
    n = order // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    pts = 0.5 * (x + 1.0)
    wts = 0.5 * w
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadRule(pts, wts, int(order))

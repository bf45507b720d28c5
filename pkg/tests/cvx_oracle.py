"""Translate a compiled conic program to cvxopt (test oracle only)."""

import numpy as np

from mixedtraffic.sdp import smat


def solve_with_cvxopt(cp, tol=1e-9):
    from cvxopt import matrix, solvers
    Gs, hs = [], []
    for b in cp.blocks:
        cols = [-smat(b.F[j], b.k).ravel(order="F") for j in range(b.F.shape[0])]
        Gs.append(matrix(np.stack(cols, axis=1)))
        hs.append(matrix(smat(b.F0, b.k)))
    solvers.options.update(show_progress=False, abstol=tol, reltol=tol, feastol=tol)
    kw = {}
    if cp.E.shape[0]:
        # cvxopt needs full row rank equalities.
        q, r, piv = __import__("scipy").linalg.qr(cp.E.T, pivoting=True)
        rank = int(np.sum(np.abs(np.diag(r)) > 1e-10 * abs(r[0, 0])))
        rows = np.sort(piv[:rank])
        kw = dict(A=matrix(cp.E[rows]), b=matrix(cp.f[rows]))
    out = solvers.sdp(matrix(cp.c), Gs=Gs, hs=hs, **kw)
    return out["status"], (None if out["x"] is None else float(cp.c @ np.array(out["x"]).ravel() + cp.c0))

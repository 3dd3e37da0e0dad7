"""Reference numpy implementations of the hot kernels.

These define the semantics; the compiled versions in ``_core`` must
match them to rounding.  The module is import-safe everywhere and is
selected automatically when the extension is unavailable (or when
``APXHOMOG_FORCE_PY`` is set).
"""

from __future__ import annotations

import numpy as np


def local_stiffness(aqp, pairprod, w):
    """Per-element stiffness entries for the upper-triangle basis pairs.

    aqp      : (ne, nq, d, d) coefficient at quadrature points
    pairprod : (nq, npair, d, d) outer products grad_i ⊗ grad_j
    w        : (nq,) quadrature weights (volume factor included)
    returns  : (ne, npair)
    """
    return np.einsum("eqkl,qpkl,q->ep", aqp, pairprod, w, optimize=True)


def local_load(aqp, grads, w, axis):
    """Per-element load -sum_q w_q (A e_axis) . grad_i  -> (ne, nloc)."""
    return -np.einsum("eqk,qik,q->ei", aqp[:, :, :, axis], grads, w, optimize=True)


def energy_bilinear(aqp, gk, gl, w, eweights=None):
    """Weighted bilinear energy  sum_e ew_e sum_q w_q gk . A gl.

    gk, gl : (ne, nq, d) gradient fields at quadrature points
    aqp    : (ne, nq, d, d) or None for the identity coefficient
    """
    if aqp is None:
        per_elem = np.einsum("eqk,eqk,q->e", gk, gl, w, optimize=True)
    else:
        per_elem = np.einsum("eqk,eqkl,eql,q->e", gk, aqp, gl, w, optimize=True)
    if eweights is not None:
        per_elem = per_elem * eweights
    return float(per_elem.sum())


def rho_scan(bflat, tidx, ay, zbases, cutoff=-np.inf):
    """Best sup-norm match of a field window against translated copies.

    bflat  : (nb, ns) field entries on a flat master lattice
    tidx   : (nt,) flat offsets of the comparison window
    ay     : (nt, ns) field entries on the translated window
    zbases : (nz,) flat base offsets of the candidate translations
    cutoff : abort once the running minimum drops to this value or below
    returns (best, argz); argz indexes zbases.  When the scan aborts at
    the cutoff, best is a valid upper bound for the true minimum.
    """
    best = np.inf
    arg = -1
    chunk = max(1, int(2**22 // max(1, tidx.size * ay.shape[1])))
    for start in range(0, zbases.size, chunk):
        zb = zbases[start : start + chunk]
        vals = bflat[zb[:, None] + tidx[None, :], :]
        diffs = np.abs(vals - ay[None, :, :]).max(axis=(1, 2))
        j = int(np.argmin(diffs))
        if diffs[j] < best:
            best = float(diffs[j])
            arg = start + j
        if best <= cutoff:
            break
    return best, arg

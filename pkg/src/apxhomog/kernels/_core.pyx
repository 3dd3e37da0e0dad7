# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels; semantics match pykernels."""

import numpy as np

cimport cython
from libc.math cimport fabs, INFINITY


def local_stiffness(double[:, :, :, ::1] aqp, double[:, :, :, ::1] pairprod,
                    double[::1] w):
    cdef Py_ssize_t ne = aqp.shape[0]
    cdef Py_ssize_t nq = aqp.shape[1]
    cdef Py_ssize_t d = aqp.shape[2]
    cdef Py_ssize_t npair = pairprod.shape[1]
    out_arr = np.zeros((ne, npair))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t e, q, p, k, l
    cdef double acc, wq
    for e in range(ne):
        for p in range(npair):
            acc = 0.0
            for q in range(nq):
                wq = w[q]
                for k in range(d):
                    for l in range(d):
                        acc += wq * aqp[e, q, k, l] * pairprod[q, p, k, l]
            out[e, p] = acc
    return out_arr


def local_load(double[:, :, :, ::1] aqp, double[:, :, ::1] grads,
               double[::1] w, Py_ssize_t axis):
    cdef Py_ssize_t ne = aqp.shape[0]
    cdef Py_ssize_t nq = aqp.shape[1]
    cdef Py_ssize_t d = aqp.shape[2]
    cdef Py_ssize_t nloc = grads.shape[1]
    out_arr = np.zeros((ne, nloc))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t e, q, i, k
    cdef double acc
    for e in range(ne):
        for i in range(nloc):
            acc = 0.0
            for q in range(nq):
                for k in range(d):
                    acc += w[q] * aqp[e, q, k, axis] * grads[q, i, k]
            out[e, i] = -acc
    return out_arr


def energy_bilinear(aqp, double[:, :, ::1] gk, double[:, :, ::1] gl,
                    double[::1] w, eweights=None):
    cdef Py_ssize_t ne = gk.shape[0]
    cdef Py_ssize_t nq = gk.shape[1]
    cdef Py_ssize_t d = gk.shape[2]
    cdef double[:, :, :, ::1] a
    cdef double[::1] ew
    cdef bint has_a = aqp is not None
    cdef bint has_ew = eweights is not None
    if has_a:
        a = aqp
    if has_ew:
        ew = eweights
    cdef Py_ssize_t e, q, k, l
    cdef double total = 0.0, per, acc
    for e in range(ne):
        per = 0.0
        for q in range(nq):
            acc = 0.0
            if has_a:
                for k in range(d):
                    for l in range(d):
                        acc += gk[e, q, k] * a[e, q, k, l] * gl[e, q, l]
            else:
                for k in range(d):
                    acc += gk[e, q, k] * gl[e, q, k]
            per += w[q] * acc
        if has_ew:
            per *= ew[e]
        total += per
    return total


def rho_scan(double[:, ::1] bflat, long[::1] tidx, double[:, ::1] ay,
             long[::1] zbases, double cutoff=-INFINITY):
    cdef Py_ssize_t nt = tidx.shape[0]
    cdef Py_ssize_t ns = ay.shape[1]
    cdef Py_ssize_t nz = zbases.shape[0]
    cdef double best = INFINITY
    cdef Py_ssize_t arg = -1
    cdef Py_ssize_t iz, it, s
    cdef long base, row
    cdef double m, diff
    for iz in range(nz):
        base = zbases[iz]
        m = 0.0
        for it in range(nt):
            row = base + tidx[it]
            for s in range(ns):
                diff = fabs(bflat[row, s] - ay[it, s])
                if diff > m:
                    m = diff
            if m >= best:
                break
        if m < best:
            best = m
            arg = iz
            if best <= cutoff:
                break
    return best, arg

"""Compiled kernels for the optimizer inner loop.

``thickness_kernel`` mirrors ``geometry.thickness`` candidate by candidate but
only returns the value; tests pin the two against each other.

The soft kernels replace the hard minimum by a log-sum-exp over smooth terms.
Only edge pairs far apart along the curve enter through their segment
distance, with a smoothstep weight in the arc gap, which keeps the surrogate
continuous where critical pairs appear and vanish.
"""
from __future__ import annotations

import math

import numba
import numpy as np

_SLACK = 1e-9
_PAR = 1e-6
_EPS = 1e-12


@numba.njit(cache=True)
def _crit(tix, tiy, tiz, tox, toy, toz, ux, uy, uz):
    a = tix * ux + tiy * uy + tiz * uz
    b = tox * ux + toy * uy + toz * uz
    return min(a, b) <= _SLACK and max(a, b) >= -_SLACK


@numba.njit(cache=True)
def thickness_kernel(v):
    n = v.shape[0]
    d = np.empty((n, 3))
    l = np.empty(n)
    t = np.empty((n, 3))
    for i in range(n):
        j = (i + 1) % n
        for k in range(3):
            d[i, k] = v[j, k] - v[i, k]
        l[i] = math.sqrt(d[i, 0] ** 2 + d[i, 1] ** 2 + d[i, 2] ** 2)
        if l[i] == 0.0:
            return 0.0
        for k in range(3):
            t[i, k] = d[i, k] / l[i]

    best = np.inf
    # corner radii
    for i in range(n):
        p = (i - 1) % n
        cx = d[p, 1] * d[i, 2] - d[p, 2] * d[i, 1]
        cy = d[p, 2] * d[i, 0] - d[p, 0] * d[i, 2]
        cz = d[p, 0] * d[i, 1] - d[p, 1] * d[i, 0]
        s = math.sqrt(cx * cx + cy * cy + cz * cz)
        c = d[p, 0] * d[i, 0] + d[p, 1] * d[i, 1] + d[p, 2] * d[i, 2]
        if s == 0.0:
            if c < 0.0:
                return 0.0
            continue
        r = min(l[p], l[i]) * (l[p] * l[i] + c) / (2.0 * s)
        if r < best:
            best = r

    half = np.inf
    for i in range(n):
        pi_ = (i - 1) % n
        for j in range(n):
            gap = (j - i) % n
            # vertex i to interior of edge j
            if gap != 0 and gap != n - 1:
                wx = v[i, 0] - v[j, 0]
                wy = v[i, 1] - v[j, 1]
                wz = v[i, 2] - v[j, 2]
                s = (wx * d[j, 0] + wy * d[j, 1] + wz * d[j, 2]) / (l[j] * l[j])
                if s > _EPS and s < 1.0 - _EPS:
                    ux = wx - s * d[j, 0]
                    uy = wy - s * d[j, 1]
                    uz = wz - s * d[j, 2]
                    dist = math.sqrt(ux * ux + uy * uy + uz * uz)
                    if dist == 0.0:
                        return 0.0
                    if dist < half:
                        if _crit(t[pi_, 0], t[pi_, 1], t[pi_, 2], t[i, 0], t[i, 1], t[i, 2],
                                 ux / dist, uy / dist, uz / dist):
                            half = dist
            if j <= i or gap < 2 or gap > n - 2:
                continue
            # vertex-vertex
            ux = v[i, 0] - v[j, 0]
            uy = v[i, 1] - v[j, 1]
            uz = v[i, 2] - v[j, 2]
            dist = math.sqrt(ux * ux + uy * uy + uz * uz)
            if dist == 0.0:
                return 0.0
            if dist < half:
                pj = (j - 1) % n
                if _crit(t[pi_, 0], t[pi_, 1], t[pi_, 2], t[i, 0], t[i, 1], t[i, 2],
                         ux / dist, uy / dist, uz / dist) and \
                        _crit(t[pj, 0], t[pj, 1], t[pj, 2], t[j, 0], t[j, 1], t[j, 2],
                              -ux / dist, -uy / dist, -uz / dist):
                    half = dist
            # edge-edge
            a = l[i] * l[i]
            e = l[j] * l[j]
            b = d[i, 0] * d[j, 0] + d[i, 1] * d[j, 1] + d[i, 2] * d[j, 2]
            c = d[i, 0] * ux + d[i, 1] * uy + d[i, 2] * uz
            f = d[j, 0] * ux + d[j, 1] * uy + d[j, 2] * uz
            den = a * e - b * b
            sin_ang = math.sqrt(max(den, 0.0) / (a * e))
            if sin_ang < _PAR:
                s0 = -c / a
                s1 = (b - c) / a
                lo = max(min(s0, s1), 0.0)
                hi = min(max(s0, s1), 1.0)
                if hi - lo <= _EPS:
                    continue
                s = 0.5 * (lo + hi)
                tt = (b * s + f) / e
            else:
                s = (b * f - c * e) / den
                tt = (a * f - b * c) / den
            if s > _EPS and s < 1.0 - _EPS and tt > _EPS and tt < 1.0 - _EPS:
                px = ux + s * d[i, 0] - tt * d[j, 0]
                py = uy + s * d[i, 1] - tt * d[j, 1]
                pz = uz + s * d[i, 2] - tt * d[j, 2]
                dist = math.sqrt(px * px + py * py + pz * pz)
                if dist < half:
                    half = dist
    return min(best, 0.5 * half)


@numba.njit(cache=True)
def length_kernel(v):
    n = v.shape[0]
    total = 0.0
    for i in range(n):
        j = (i + 1) % n
        total += math.sqrt((v[j, 0] - v[i, 0]) ** 2 + (v[j, 1] - v[i, 1]) ** 2
                           + (v[j, 2] - v[i, 2]) ** 2)
    return total

@numba.njit(cache=True)
def _seg_closest(p0, d0, p1, d1):
    a = d0[0]*d0[0]+d0[1]*d0[1]+d0[2]*d0[2]
    e = d1[0]*d1[0]+d1[1]*d1[1]+d1[2]*d1[2]
    rx = p0[0]-p1[0]; ry = p0[1]-p1[1]; rz = p0[2]-p1[2]
    b = d0[0]*d1[0]+d0[1]*d1[1]+d0[2]*d1[2]
    c = d0[0]*rx+d0[1]*ry+d0[2]*rz
    f = d1[0]*rx+d1[1]*ry+d1[2]*rz
    den = a*e-b*b
    s = 0.0
    if den > 1e-14*a*e:
        s = min(max((b*f-c*e)/den, 0.0), 1.0)
    t = (b*s+f)/e
    if t < 0.0:
        t = 0.0; s = min(max(-c/a, 0.0), 1.0)
    elif t > 1.0:
        t = 1.0; s = min(max((b-c)/a, 0.0), 1.0)
    return s, t

@numba.njit(cache=True)
def _segdist(p0, d0, p1, d1):
    s, t = _seg_closest(p0, d0, p1, d1)
    x = p0[0] + s * d0[0] - p1[0] - t * d1[0]
    y = p0[1] + s * d0[1] - p1[1] - t * d1[1]
    z = p0[2] + s * d0[2] - p1[2] - t * d1[2]
    return math.sqrt(x * x + y * y + z * z)


@numba.njit(cache=True)
def soft_thickness(v, beta, sep0, width):
    """Smoothed thickness ``(soft, hard)`` of ``v``; both are 0 on degenerate input.

    Terms are the split corner radii plus half segment distances of edge
    pairs whose arc gap exceeds ``sep0``; gap-weighted log-sum-exp with
    sharpness ``beta``.
    """
    n = v.shape[0]
    d = np.empty((n, 3)); l = np.empty(n); cum = np.empty(n+1)
    cum[0] = 0.0
    for i in range(n):
        j = (i+1) % n
        for k in range(3):
            d[i, k] = v[j, k]-v[i, k]
        l[i] = math.sqrt(d[i, 0]**2+d[i, 1]**2+d[i, 2]**2)
        if l[i] == 0.0:
            return 0.0, 0.0
        cum[i+1] = cum[i]+l[i]
    L = cum[n]
    nt = 2*n + n*n
    tv = np.empty(nt); tw = np.empty(nt); m = 0
    for i in range(n):
        p = (i-1) % n
        cx = d[p, 1]*d[i, 2]-d[p, 2]*d[i, 1]
        cy = d[p, 2]*d[i, 0]-d[p, 0]*d[i, 2]
        cz = d[p, 0]*d[i, 1]-d[p, 1]*d[i, 0]
        s = math.sqrt(cx*cx+cy*cy+cz*cz)
        c = d[p, 0]*d[i, 0]+d[p, 1]*d[i, 1]+d[p, 2]*d[i, 2]
        if s == 0.0:
            if c < 0.0:
                return 0.0, 0.0
            continue
        q = (l[p]*l[i]+c)/(2.0*s)
        tv[m] = l[p]*q; tw[m] = 1.0; m += 1
        tv[m] = l[i]*q; tw[m] = 1.0; m += 1
    for i in range(n):
        for j in range(i+2, n):
            # arc gap between the two edges, both ways round
            g1 = cum[j]-cum[i+1]
            g2 = L-(cum[j+1]-cum[i])
            g = min(g1, g2)
            if g <= sep0:
                continue
            u = (g-sep0)/width
            w = 1.0 if u >= 1.0 else u*u*(3.0-2.0*u)
            tv[m] = 0.5*_segdist(v[i], d[i], v[j], d[j]); tw[m] = w; m += 1
    hard = np.inf
    for k in range(m):
        if tv[k] < hard:
            hard = tv[k]
    if hard <= 0.0:
        return 0.0, 0.0
    acc = 0.0
    for k in range(m):
        acc += tw[k]*math.exp(-beta*(tv[k]-hard))
    return hard-math.log(acc)/beta, hard

@numba.njit(cache=True)
def soft_ropelength_grad(v, beta, sep0, width):
    """``(L / soft, d(L / soft)/dv, soft, hard)``; the ratio is inf on degenerate input."""
    n = v.shape[0]
    g = np.zeros((n, 3))
    d = np.empty((n, 3)); l = np.empty(n); t = np.empty((n, 3)); cum = np.empty(n+1)
    cum[0] = 0.0
    for i in range(n):
        j = (i+1) % n
        for k in range(3):
            d[i, k] = v[j, k]-v[i, k]
        l[i] = math.sqrt(d[i, 0]**2+d[i, 1]**2+d[i, 2]**2)
        if l[i] == 0.0:
            return np.inf, g, 0.0, 0.0
        for k in range(3):
            t[i, k] = d[i, k]/l[i]
        cum[i+1] = cum[i]+l[i]
    L = cum[n]
    nr = 2*n
    rv = np.empty(nr); rok = np.zeros(n, dtype=numba.boolean)
    hard = np.inf
    for i in range(n):
        p = (i-1) % n
        cx = d[p, 1]*d[i, 2]-d[p, 2]*d[i, 1]
        cy = d[p, 2]*d[i, 0]-d[p, 0]*d[i, 2]
        cz = d[p, 0]*d[i, 1]-d[p, 1]*d[i, 0]
        s = math.sqrt(cx*cx+cy*cy+cz*cz)
        c = d[p, 0]*d[i, 0]+d[p, 1]*d[i, 1]+d[p, 2]*d[i, 2]
        if s == 0.0:
            if c < 0.0:
                return np.inf, g, 0.0, 0.0
            rv[2*i] = np.inf; rv[2*i+1] = np.inf
            continue
        rok[i] = True
        q = (l[p]*l[i]+c)/(2.0*s)
        rv[2*i] = l[p]*q; rv[2*i+1] = l[i]*q
        hard = min(hard, rv[2*i], rv[2*i+1])
    # pair terms
    npair = n*(n-1)//2
    pi_ = np.empty(npair, dtype=np.int64); pj = np.empty(npair, dtype=np.int64)
    pv = np.empty(npair); pw = np.empty(npair); pdw = np.empty(npair); pside = np.empty(npair, dtype=np.int64)
    m = 0
    for i in range(n):
        for j in range(i+2, n):
            g1 = cum[j]-cum[i+1]
            g2 = L-(cum[j+1]-cum[i])
            if g1 <= g2:
                gg = g1; side = 1
            else:
                gg = g2; side = 2
            if gg <= sep0:
                continue
            u = (gg-sep0)/width
            if u >= 1.0:
                w = 1.0; dw = 0.0
            else:
                w = u*u*(3.0-2.0*u); dw = 6.0*u*(1.0-u)/width
            dist = _segdist(v[i], d[i], v[j], d[j])
            pi_[m] = i; pj[m] = j; pv[m] = 0.5*dist; pw[m] = w; pdw[m] = dw; pside[m] = side
            hard = min(hard, 0.5*dist)
            m += 1
    if not hard > 0.0:
        return np.inf, g, 0.0, 0.0
    acc = 0.0
    for k in range(nr):
        if rv[k] < np.inf:
            acc += math.exp(-beta*(rv[k]-hard))
    for k in range(m):
        acc += pw[k]*math.exp(-beta*(pv[k]-hard))
    Ts = hard-math.log(acc)/beta
    if not Ts > 0.0:
        return np.inf, g, Ts, hard
    f = L/Ts
    # dTs/dterm = w e / acc ; dTs/dw = -(1/beta) e / acc
    gT = np.zeros((n, 3))
    ecoef = np.zeros(n+1)   # coefficient on edge lengths (difference array)
    for i in range(n):
        if not rok[i]:
            continue
        p = (i-1) % n
        X0 = d[p, 1]*d[i, 2]-d[p, 2]*d[i, 1]
        X1 = d[p, 2]*d[i, 0]-d[p, 0]*d[i, 2]
        X2 = d[p, 0]*d[i, 1]-d[p, 1]*d[i, 0]
        s = math.sqrt(X0*X0+X1*X1+X2*X2)
        q = rv[2*i+1]/l[i]
        a1 = math.exp(-beta*(rv[2*i]-hard))/acc
        a2 = math.exp(-beta*(rv[2*i+1]-hard))/acc
        # ds/ddp = (di x X)/s ; ds/ddi = (X x dp)/s
        sp0 = (d[i, 1]*X2-d[i, 2]*X1)/s; sp1 = (d[i, 2]*X0-d[i, 0]*X2)/s; sp2 = (d[i, 0]*X1-d[i, 1]*X0)/s
        si0 = (X1*d[p, 2]-X2*d[p, 1])/s; si1 = (X2*d[p, 0]-X0*d[p, 2])/s; si2 = (X0*d[p, 1]-X1*d[p, 0])/s
        qp = np.empty(3); qi = np.empty(3)
        spv = (sp0, sp1, sp2); siv = (si0, si1, si2)
        for k in range(3):
            qp[k] = (l[i]*t[p, k]+d[i, k])/(2.0*s)-q*spv[k]/s
            qi[k] = (l[p]*t[i, k]+d[p, k])/(2.0*s)-q*siv[k]/s
        for k in range(3):
            gdp = a1*(t[p, k]*q+l[p]*qp[k])+a2*(l[i]*qp[k])
            gdi = a1*(l[p]*qi[k])+a2*(t[i, k]*q+l[i]*qi[k])
            # dp = v_i - v_p ; di = v_{i+1} - v_i
            gT[i, k] += gdp-gdi
            gT[p, k] -= gdp
            gT[(i+1) % n, k] += gdi
    for k in range(m):
        i = pi_[k]; j = pj[k]
        e = math.exp(-beta*(pv[k]-hard))/acc
        a = pw[k]*e
        if a > 0.0:
            s_, t_ = _seg_closest(v[i], d[i], v[j], d[j])
            nx = v[i, 0]+s_*d[i, 0]-v[j, 0]-t_*d[j, 0]
            ny = v[i, 1]+s_*d[i, 1]-v[j, 1]-t_*d[j, 1]
            nz = v[i, 2]+s_*d[i, 2]-v[j, 2]-t_*d[j, 2]
            dist = 2.0*pv[k]
            if dist > 0.0:
                c = 0.5*a/dist
                i1 = (i+1) % n; j1 = (j+1) % n
                gT[i, 0] += c*(1-s_)*nx; gT[i, 1] += c*(1-s_)*ny; gT[i, 2] += c*(1-s_)*nz
                gT[i1, 0] += c*s_*nx; gT[i1, 1] += c*s_*ny; gT[i1, 2] += c*s_*nz
                gT[j, 0] -= c*(1-t_)*nx; gT[j, 1] -= c*(1-t_)*ny; gT[j, 2] -= c*(1-t_)*nz
                gT[j1, 0] -= c*t_*nx; gT[j1, 1] -= c*t_*ny; gT[j1, 2] -= c*t_*nz
        if pdw[k] > 0.0:
            cw = -e/beta*pdw[k]
            if pside[k] == 1:   # edges i+1 .. j-1
                ecoef[i+1] += cw; ecoef[j] -= cw
            else:               # edges j+1 .. n-1 and 0 .. i-1
                ecoef[j+1] += cw; ecoef[n] -= cw
                ecoef[0] += cw; ecoef[i] -= cw
    run = 0.0
    for e_ in range(n):
        run += ecoef[e_]
        if run != 0.0:
            e1 = (e_+1) % n
            for k in range(3):
                gT[e1, k] += run*t[e_, k]
                gT[e_, k] -= run*t[e_, k]
    for i in range(n):
        p = (i-1) % n
        for k in range(3):
            gL = t[p, k]-t[i, k]
            g[i, k] = (gL*Ts-L*gT[i, k])/(Ts*Ts)
    return f, g, Ts, hard

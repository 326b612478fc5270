"""Interior-point solver for cone LPs over orthant x second-order cones.

Solves the homogeneous self-dual embedding of

    min c'x   s.t.  Ax = b,  Gx + s = h,  s in K

with Nesterov-Todd scaling and Mehrotra predictor-corrector steps, in the
style of conelp/ECOS. Each iteration factors one reduced KKT matrix

    [ G' W^-2 G + dI   A' ]
    [ A               -dI ]

(static regularization d, iterative refinement against the unregularized
system) and performs three back-solves: one for the tau-elimination column
(-c, b, h) and one per predictor/corrector direction. Cones of equal
dimension are processed as (count, q) arrays so all Jordan-algebra work is
vectorized.

Self-dual embedding bookkeeping: iterate (x, y, z, s, tau, kappa) with

    res_x = A'y + G'z + c*tau        res_tau = c'x + b'y + h'z + kappa
    res_y = Ax - b*tau               mu = (s'z + tau*kappa) / (deg K + 1)
    res_z = Gx + s - h*tau

tau -> positive with kappa -> 0 yields an optimal pair; kappa -> positive
with tau -> 0 yields a primal or dual infeasibility certificate.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .conic import ConicSolution, StandardConeProgram

STEP_FRAC = 0.99
REG_DELTA = 1e-8
REFINE_STEPS = 4


class _Layout:
    """Row bookkeeping: orthant block, then runs of equal-dimension cones."""

    def __init__(self, dims):
        self.l = dims.nonneg
        self.m = dims.total
        self.degree = dims.degree
        self.groups = []  # (q, start_row, count)
        soc = list(dims.soc)
        off = self.l
        i = 0
        while i < len(soc):
            q = soc[i]
            j = i
            while j < len(soc) and soc[j] == q:
                j += 1
            self.groups.append((q, off, j - i))
            off += q * (j - i)
            i = j
        # sparse pattern of the block-diagonal W^-2 matrix
        rows = [np.arange(self.l)]
        cols = [np.arange(self.l)]
        for q, start, count in self.groups:
            base = start + q * np.arange(count)
            ii = np.arange(q)
            r = base[:, None, None] + ii[None, :, None] + np.zeros((1, 1, q), np.int64)
            c = base[:, None, None] + np.zeros((1, q, 1), np.int64) + ii[None, None, :]
            rows.append(r.ravel())
            cols.append(c.ravel())
        self._w2_rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        self._w2_cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)

    def soc_view(self, u, group):
        q, start, count = group
        return u[start:start + q * count].reshape(count, q)

    def cone_e(self):
        e = np.zeros(self.m)
        e[:self.l] = 1.0
        for q, start, count in self.groups:
            e[start:start + q * count:q] = 1.0
        return e


def _jmul(u, v, layout):
    """Jordan product u o v on the composite cone."""
    out = np.empty_like(u)
    l = layout.l
    out[:l] = u[:l] * v[:l]
    for g in layout.groups:
        U = layout.soc_view(u, g)
        V = layout.soc_view(v, g)
        O = layout.soc_view(out, g)
        O[:, 0] = (U * V).sum(axis=1)
        O[:, 1:] = U[:, :1] * V[:, 1:] + V[:, :1] * U[:, 1:]
    return out


def _jinv(lmbda, d, layout):
    """Solve lmbda o x = d (arrow-matrix inverse per cone)."""
    out = np.empty_like(d)
    l = layout.l
    out[:l] = d[:l] / lmbda[:l]
    for g in layout.groups:
        L = layout.soc_view(lmbda, g)
        D = layout.soc_view(d, g)
        O = layout.soc_view(out, g)
        jl = L[:, 0] ** 2 - (L[:, 1:] ** 2).sum(axis=1)
        x0 = (L[:, 0] * D[:, 0] - (L[:, 1:] * D[:, 1:]).sum(axis=1)) / jl
        O[:, 0] = x0
        O[:, 1:] = (D[:, 1:] - x0[:, None] * L[:, 1:]) / L[:, :1]
    return out


def _min_margin(u, layout):
    """Distance-to-boundary proxy: min over orthant entries and u0 - ||u1||."""
    vals = [u[:layout.l].min()] if layout.l else []
    for g in layout.groups:
        U = layout.soc_view(u, g)
        vals.append((U[:, 0] - np.linalg.norm(U[:, 1:], axis=1)).min())
    return min(vals) if vals else np.inf


def _max_step(u, d, layout):
    """sup {a >= 0 : u + a*d in K} for u strictly interior."""
    amax = np.inf
    l = layout.l
    if l:
        neg = d[:l] < 0
        if neg.any():
            amax = min(amax, (u[:l][neg] / -d[:l][neg]).min())
    for g in layout.groups:
        U = layout.soc_view(u, g)
        D = layout.soc_view(d, g)
        # roots of J(u + a*d) = ja*a^2 + 2*jb*a + jc, jc = J(u) > 0
        ja = D[:, 0] ** 2 - (D[:, 1:] ** 2).sum(axis=1)
        jb = U[:, 0] * D[:, 0] - (U[:, 1:] * D[:, 1:]).sum(axis=1)
        jc = U[:, 0] ** 2 - (U[:, 1:] ** 2).sum(axis=1)
        disc = jb ** 2 - ja * jc
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            r1 = np.where(np.abs(ja) > 1e-300, (-jb - sq) / ja, np.inf)
            r2 = np.where(np.abs(ja) > 1e-300, (-jb + sq) / ja, np.inf)
            rl = np.where(jb < 0, -jc / (2.0 * jb), np.inf)  # ja ~ 0 branch
        roots = np.stack([r1, r2, np.where(np.abs(ja) <= 1e-300, rl, np.inf)])
        roots[:, disc < 0] = np.inf
        roots[roots <= 0] = np.inf
        step = roots.min()
        if step < amax:
            amax = float(step)
    return amax


class _Scaling:
    """Nesterov-Todd scaling W with lambda = W z = W^-1 s."""

    def __init__(self, layout):
        self.layout = layout
        self.pos_w = np.ones(layout.l)
        # per group: eta (count,), wbar (count, q) with wbar' J wbar = 1
        self.soc = []
        for q, _, count in layout.groups:
            wbar = np.zeros((count, q))
            wbar[:, 0] = 1.0
            self.soc.append((np.ones(count), wbar))
        self.lmbda = None

    @classmethod
    def from_sz(cls, layout, s, z):
        sc = cls(layout)
        l = layout.l
        sc.pos_w = np.sqrt(s[:l] / z[:l])
        for gi, g in enumerate(layout.groups):
            S = layout.soc_view(s, g)
            Z = layout.soc_view(z, g)
            js = S[:, 0] ** 2 - (S[:, 1:] ** 2).sum(axis=1)
            jz = Z[:, 0] ** 2 - (Z[:, 1:] ** 2).sum(axis=1)
            js = np.maximum(js, 1e-300)
            jz = np.maximum(jz, 1e-300)
            sbar = S / np.sqrt(js)[:, None]
            zbar = Z / np.sqrt(jz)[:, None]
            gam = np.sqrt((1.0 + (sbar * zbar).sum(axis=1)) / 2.0)
            wbar = sbar.copy()
            wbar[:, 0] += zbar[:, 0]
            wbar[:, 1:] -= zbar[:, 1:]
            wbar /= (2.0 * gam)[:, None]
            eta = (js / jz) ** 0.25
            sc.soc[gi] = (eta, wbar)
        sc.lmbda = sc.mult_w(z)
        return sc

    # Wbar u = [a*u0 + q'u1 ; u1 + q*(u0 + q'u1/(1+a))] with wbar = (a, q)
    def mult_w(self, u):
        out = np.empty_like(u)
        out[:self.layout.l] = self.pos_w * u[:self.layout.l]
        for g, (eta, wbar) in zip(self.layout.groups, self.soc):
            U = self.layout.soc_view(u, g)
            O = self.layout.soc_view(out, g)
            a = wbar[:, 0]
            qu = (wbar[:, 1:] * U[:, 1:]).sum(axis=1)
            O[:, 0] = eta * (a * U[:, 0] + qu)
            coef = U[:, 0] + qu / (1.0 + a)
            O[:, 1:] = eta[:, None] * (U[:, 1:] + wbar[:, 1:] * coef[:, None])
        return out

    def mult_winv(self, u):
        # W^-1 = (1/eta) J Wbar J
        out = np.empty_like(u)
        out[:self.layout.l] = u[:self.layout.l] / self.pos_w
        for g, (eta, wbar) in zip(self.layout.groups, self.soc):
            U = self.layout.soc_view(u, g)
            O = self.layout.soc_view(out, g)
            a = wbar[:, 0]
            qu = (wbar[:, 1:] * U[:, 1:]).sum(axis=1)
            O[:, 0] = (a * U[:, 0] - qu) / eta
            coef = -U[:, 0] + qu / (1.0 + a)
            O[:, 1:] = (U[:, 1:] + wbar[:, 1:] * coef[:, None]) / eta[:, None]
        return out

    def w2inv_data(self):
        """Block data of W^-2 matching the layout's sparse pattern."""
        parts = [1.0 / np.maximum(self.pos_w ** 2, 1e-300)]
        for (q, _, count), (eta, wbar) in zip(self.layout.groups, self.soc):
            v = wbar.copy()
            v[:, 1:] *= -1.0  # J wbar
            jmat = -np.eye(q)
            jmat[0, 0] = 1.0
            # W^-2 = eta^-2 (2 (Jwbar)(Jwbar)' - J)
            blocks = 2.0 * v[:, :, None] * v[:, None, :] - jmat[None, :, :]
            blocks *= (eta ** -2.0)[:, None, None]
            parts.append(blocks.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)


class _KKT:
    """Reduced KKT factorization shared by the three per-iteration solves."""

    def __init__(self, std: StandardConeProgram, layout: _Layout,
                 delta: float = REG_DELTA):
        self.layout = layout
        self.A = std.A.tocsr()
        self.G = std.G.tocsr()
        self.AT = self.A.T.tocsr()
        self.GT = self.G.T.tocsr()
        self.n = std.c.size
        self.p = std.b.size
        self.delta = delta
        self.w2inv = None
        self.H = None
        self.lu = None
        self.safe_mode = False

    def factor(self, scaling: _Scaling):
        m = self.layout.m
        self.scal = scaling
        data = scaling.w2inv_data()
        self.w2inv = sp.csr_matrix(
            (data, (self.layout._w2_rows, self.layout._w2_cols)), shape=(m, m))
        self.H = (self.GT @ self.w2inv @ self.G).tocsr()
        delta = self.delta
        for attempt in range(3):
            n, p = self.n, self.p
            Ih = sp.identity(n, format="csr") * delta
            if p:
                K = sp.bmat(
                    [[self.H + Ih, self.AT], [self.A, -delta * sp.identity(p)]],
                    format="csc")
            else:
                K = (self.H + Ih).tocsc()
            try:
                self.lu = self._factorize(K)
                self._K = K
                return
            except RuntimeError:
                delta *= 1e3  # singular factor: bump regularization
        raise RuntimeError("KKT factorization failed")

    def _factorize(self, K):
        # The regularized KKT matrix is symmetric quasi-definite, so a
        # static-pivot (LDL'-like) factorization exists for any symmetric
        # ordering and avoids the fill blowup of threshold pivoting.  Its
        # lower accuracy is recovered by the refinement loop in solve3;
        # safe_mode falls back to partial pivoting if refinement ever
        # stops making progress.
        if not self.safe_mode:
            return spla.splu(K, permc_spec="MMD_AT_PLUS_A",
                             options={"SymmetricMode": True,
                                      "DiagPivotThresh": 0.0})
        return spla.splu(K, permc_spec="COLAMD")

    def solve3(self, bx, by, bz):
        """Solve [0 A' G'; A 0 0; G 0 -W^2] (dx,dy,dz) = (bx,by,bz).

        Internally works with the scaled unknown xi = W dz, whose block rows

            A'dy + G'(W^-1 xi) = bx,   A dx = by,   W^-1(G dx) - xi = W^-1 bz

        involve only W^-1 (condition ~ mu^-1/2), so iterative refinement
        keeps working long after residuals of the normal-equations form
        H = G'W^-2G (condition ~ mu^-1) have degenerated to noise.
        """
        winv = self.scal.mult_winv
        wbz = winv(bz)
        rhs_x = bx + self.GT @ winv(wbz)
        rhs = np.concatenate([rhs_x, by])
        sol = self.lu.solve(rhs)
        dx, dy = sol[:self.n], sol[self.n:]
        xi = winv(self.G @ dx) - wbz

        def residual(dx, dy, xi):
            f1 = bx - self.GT @ winv(xi) - (self.AT @ dy if self.p else 0.0)
            f2 = by - self.A @ dx if self.p else np.zeros(0)
            f3 = winv(self.G @ dx) - xi - wbz
            return f1, f2, f3

        scale = 1.0 + max(np.abs(bx).max(initial=0.0),
                          np.abs(by).max(initial=0.0),
                          np.abs(wbz).max(initial=0.0))
        f1, f2, f3 = residual(dx, dy, xi)
        rnorm = max(np.abs(f1).max(initial=0.0), np.abs(f2).max(initial=0.0),
                    np.abs(f3).max(initial=0.0))
        for _ in range(REFINE_STEPS):
            if rnorm <= 1e-14 * scale:
                break
            corr = self.lu.solve(
                np.concatenate([f1 + self.GT @ winv(f3), f2]))
            cx, cy = corr[:self.n], corr[self.n:]
            cxi = winv(self.G @ cx) - f3
            g1, g2, g3 = residual(dx + cx, dy + cy, xi + cxi)
            rnorm2 = max(np.abs(g1).max(initial=0.0),
                         np.abs(g2).max(initial=0.0),
                         np.abs(g3).max(initial=0.0))
            if rnorm2 >= rnorm:  # correction no longer trustworthy
                break
            dx, dy, xi = dx + cx, dy + cy, xi + cxi
            f1, f2, f3, rnorm = g1, g2, g3, rnorm2
        if rnorm > 1e-6 * scale and not self.safe_mode:
            # static pivoting broke down for this scaling; redo the
            # factorization with threshold pivoting and keep it that way
            self.safe_mode = True
            self.lu = self._factorize(self._K)
            return self.solve3(bx, by, bz)
        return dx, dy, winv(xi)


def solve_standard(std: StandardConeProgram, feastol=1e-7, reltol=1e-7,
                   abstol=1e-9, max_iter=200, verbose=False) -> ConicSolution:
    layout = _Layout(std.dims)
    if layout.m == 0:
        raise ValueError("program has no cone constraints")
    c = np.asarray(std.c, dtype=np.float64)
    b = np.asarray(std.b, dtype=np.float64)
    h = np.asarray(std.h, dtype=np.float64)
    A, G = std.A.tocsr(), std.G.tocsr()
    AT, GT = A.T.tocsr(), G.T.tocsr()
    cn, bn, hn = np.linalg.norm(c), np.linalg.norm(b), np.linalg.norm(h)
    e = layout.cone_e()

    kkt = _KKT(std, layout)
    kkt.factor(_Scaling(layout))  # W = I for the initial point
    xp, _, zp = kkt.solve3(np.zeros_like(c), b, h)
    s = -zp
    xd, yd, zd = kkt.solve3(-c, np.zeros_like(b), np.zeros_like(h))
    x, y, z = xp, yd, zd.copy()
    ms = _min_margin(s, layout)
    if ms <= 1e-12:
        s = s + (1.0 - ms) * e
    mz = _min_margin(z, layout)
    if mz <= 1e-12:
        z = z + (1.0 - mz) * e
    tau, kappa = 1.0, 1.0

    best = None
    best_merit = np.inf
    status, it = "max_iter", 0

    def scaled_point():
        return x / tau, y / tau, z / tau, s / tau

    for it in range(1, max_iter + 1):
        rx = AT @ y + GT @ z + c * tau
        ry = A @ x - b * tau
        rz = G @ x + s - h * tau
        rtau = float(c @ x + b @ y + h @ z + kappa)

        xs, ys, zs, ss = scaled_point()
        pcost = float(c @ xs)
        dcost = float(-(b @ ys + h @ zs))
        gap = float(ss @ zs)
        relgap = gap / max(1.0, abs(pcost), abs(dcost))
        pres = max(np.linalg.norm(A @ xs - b) / (1.0 + bn),
                   np.linalg.norm(G @ xs + ss - h) / (1.0 + hn))
        dres = np.linalg.norm(AT @ ys + GT @ zs + c) / (1.0 + cn)
        merit = max(pres, dres, relgap)
        if merit < best_merit:
            best_merit = merit
            best = (xs.copy(), ys.copy(), zs.copy(), ss.copy(),
                    pcost, pres, dres, gap, relgap)
        if verbose:
            print(f"it {it:3d}  pcost {pcost: .6e}  gap {gap:.2e} "
                  f" pres {pres:.2e}  dres {dres:.2e}")
        if pres <= feastol and dres <= feastol and (gap <= abstol
                                                    or relgap <= reltol):
            return ConicSolution(
                status="optimal", x=xs, y=ys, z=zs, s=ss, objective=pcost,
                iterations=it,
                residuals={"pres": pres, "dres": dres, "gap": gap,
                           "relgap": relgap})

        # certificate checks: A'y + G'z = rx - c*tau etc. are cheap reuses
        hz_by = float(b @ y + h @ z)
        if hz_by < -1e-12:
            w = -1.0 / hz_by
            cert_res = np.linalg.norm(rx - c * tau) * w / (1.0 + cn)
            if cert_res <= feastol:
                return ConicSolution(
                    status="infeasible", x=None, y=w * y, z=w * z,
                    s=None, objective=None, iterations=it,
                    residuals={"cert_res": cert_res},
                    certificate={"type": "primal", "measure": 1.0,
                                 "residual": cert_res})
        ctx = float(c @ x)
        if ctx < -1e-12:
            w = -1.0 / ctx
            unb_res = max(np.linalg.norm(ry + b * tau) * w / (1.0 + bn),
                          np.linalg.norm(rz + h * tau) * w / (1.0 + hn))
            if unb_res <= feastol:
                return ConicSolution(
                    status="unbounded", x=w * x, y=None, z=None,
                    s=w * s, objective=None, iterations=it,
                    residuals={"cert_res": unb_res},
                    certificate={"type": "dual", "measure": 1.0,
                                 "residual": unb_res})

        mu = (float(s @ z) + tau * kappa) / (layout.degree + 1)
        if not np.isfinite(mu) or mu <= 0:
            status = "max_iter"
            break

        scal = _Scaling.from_sz(layout, s, z)
        lm = scal.lmbda
        kkt.factor(scal)
        vx, vy, vz = kkt.solve3(-c, b, h)
        denom = float(c @ vx + b @ vy + h @ vz) - kappa / tau
        if abs(denom) < 1e-300:
            status = "max_iter"
            break

        def direction(sc, ds, dtk):
            wd = scal.mult_w(_jinv(lm, ds, layout))
            ux, uy, uz = kkt.solve3(-sc * rx, -sc * ry, -sc * rz - wd)
            numer = -sc * rtau - float(c @ ux + b @ uy + h @ uz) - dtk / tau
            dtau = numer / denom
            dx = ux + dtau * vx
            dy = uy + dtau * vy
            dz = uz + dtau * vz
            # ds from the third block row (exact by construction); the
            # equivalent wd - W^2 dz amplifies roundoff by cond(W)^2
            dsv = -sc * rz + dtau * h - G @ dx
            dkap = (dtk - kappa * dtau) / tau
            return dx, dy, dz, dsv, dtau, dkap

        def cone_alpha(dz, dsv, dtau, dkap):
            dzt = scal.mult_w(dz)
            dst = scal.mult_winv(dsv)
            amax = min(_max_step(lm, dst, layout), _max_step(lm, dzt, layout))
            if dtau < 0:
                amax = min(amax, tau / -dtau)
            if dkap < 0:
                amax = min(amax, kappa / -dkap)
            return amax, dzt, dst

        # predictor
        ds_aff = -_jmul(lm, lm, layout)
        dx_a, dy_a, dz_a, dsv_a, dtau_a, dkap_a = direction(
            1.0, ds_aff, -tau * kappa)
        amax_a, dzt_a, dst_a = cone_alpha(dz_a, dsv_a, dtau_a, dkap_a)
        alpha_aff = min(1.0, amax_a)
        sigma = min(1.0, max(0.0, 1.0 - alpha_aff)) ** 3

        # corrector
        ds = (-_jmul(lm, lm, layout) - _jmul(dst_a, dzt_a, layout)
              + sigma * mu * e)
        dtk = -tau * kappa - dtau_a * dkap_a + sigma * mu
        dx, dy, dz, dsv, dtau, dkap = direction(1.0 - sigma, ds, dtk)
        if verbose:
            sc_ = 1.0 - sigma
            e1 = AT @ dy + GT @ dz + c * dtau + sc_ * rx
            e2 = A @ dx - b * dtau + sc_ * ry
            e3 = G @ dx + dsv - h * dtau + sc_ * rz
            e4 = float(c @ dx + b @ dy + h @ dz + dkap) + sc_ * rtau
            e5 = _jmul(lm, scal.mult_w(dz) + scal.mult_winv(dsv), layout) - ds
            e6 = kappa * dtau + tau * dkap - dtk
            print(f"      dir res: e1 {np.abs(e1).max():.2e} e2 "
                  f"{np.abs(e2).max() if e2.size else 0:.2e} "
                  f"e3 {np.abs(e3).max():.2e} e4 {abs(e4):.2e} "
                  f"e5 {np.abs(e5).max():.2e} e6 {abs(e6):.2e}")
        amax, _, _ = cone_alpha(dz, dsv, dtau, dkap)
        alpha = min(1.0, STEP_FRAC * amax)
        if alpha <= 1e-9:
            status = "max_iter"
            break
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * dsv
        tau += alpha * dtau
        kappa += alpha * dkap
        if verbose:
            print(f"      alpha {alpha:.3e}  sigma {sigma:.3e}  tau {tau:.3e}"
                  f"  kappa {kappa:.3e}  mu {mu:.3e}")
        if tau <= 1e-300:
            status = "max_iter"
            break

    xs, ys, zs, ss, pcost, pres, dres, gap, relgap = best
    return ConicSolution(
        status=status, x=xs, y=ys, z=zs, s=ss, objective=pcost,
        iterations=it,
        residuals={"pres": pres, "dres": dres, "gap": gap, "relgap": relgap})

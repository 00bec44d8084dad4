"""Sequential-impulse rigid-body substep (numba-compiled).

Maximal coordinates with per-axis inverse masses: the cart rail is expressed
by zeroing the torso's y inverse mass and inverse inertia, so no explicit
prismatic constraint is needed. Constraint impulses accumulate within one
substep only; nothing carries over between substeps, which keeps stepping
bitwise deterministic for identical inputs.

Contact normals always point from body B toward body A. Static geometry is
body index -1 (infinite mass). The free object is body index 11.
"""

import math

import numpy as np
from numba import njit

MAXC = 64          # contact slot capacity per substep
PROJ_CLAMP = 0.2   # max positional correction per joint per pass, meters


@njit(cache=True, inline="always")
def _wrap(x):
    r = (x + math.pi) % (2.0 * math.pi)
    if r <= 0.0:
        r += 2.0 * math.pi
    return r - math.pi


@njit(cache=True)
def substep(pos, theta, vel, omega,
            inv_m, inv_i, gmask, g, dt,
            jp, jc, jsign, jap, jac, jlo, jhi, jkp, jkd, jtau, q_target,
            cart_kp, cart_kd, cart_fmax, cart_target, cart_lim,
            obj_verts, sph_body, sph_local, sph_r,
            st_verts, st_norms,
            mu, restitution, rest_thresh, baumgarte, slop, max_depen,
            iters, proj_passes,
            c_a, c_b, c_p, c_n, c_ra, c_rb, c_kn, c_kt, c_vt, c_jn, c_jt,
            c_depth, ow, onrm,
            rep_flag, rep_force, applied_tau):
    nb = pos.shape[0]
    nj = jp.shape[0]
    beta_dt = baumgarte / dt

    # ---- external forces --------------------------------------------------
    for i in range(nb):
        vel[i, 1] -= dt * g * gmask[i]

    # ---- collision detection ----------------------------------------------
    mv = obj_verts.shape[0]
    co = math.cos(theta[11])
    so = math.sin(theta[11])
    for v in range(mv):
        ow[v, 0] = pos[11, 0] + co * obj_verts[v, 0] - so * obj_verts[v, 1]
        ow[v, 1] = pos[11, 1] + so * obj_verts[v, 0] + co * obj_verts[v, 1]
    for v in range(mv):
        ex = ow[(v + 1) % mv, 0] - ow[v, 0]
        ey = ow[(v + 1) % mv, 1] - ow[v, 1]
        ln = math.sqrt(ex * ex + ey * ey)
        onrm[v, 0] = ey / ln
        onrm[v, 1] = -ex / ln

    n = 0
    # object vertices vs static polys
    for s in range(st_verts.shape[0]):
        for v in range(mv):
            best = -1.0e30
            bi = -1
            for e in range(st_verts.shape[1]):
                d = (st_norms[s, e, 0] * (ow[v, 0] - st_verts[s, e, 0])
                     + st_norms[s, e, 1] * (ow[v, 1] - st_verts[s, e, 1]))
                if d > best:
                    best = d
                    bi = e
            if best < slop and n < MAXC:
                c_a[n] = 11
                c_b[n] = -1
                c_p[n, 0] = ow[v, 0]
                c_p[n, 1] = ow[v, 1]
                c_n[n, 0] = st_norms[s, bi, 0]
                c_n[n, 1] = st_norms[s, bi, 1]
                c_depth[n] = -best
                n += 1
    # static poly vertices vs object (table corners poking the object)
    for s in range(st_verts.shape[0]):
        for v in range(st_verts.shape[1]):
            px = st_verts[s, v, 0]
            py = st_verts[s, v, 1]
            best = -1.0e30
            bi = -1
            for e in range(mv):
                d = onrm[e, 0] * (px - ow[e, 0]) + onrm[e, 1] * (py - ow[e, 1])
                if d > best:
                    best = d
                    bi = e
            if best < slop and n < MAXC:
                c_a[n] = 11
                c_b[n] = -1
                c_p[n, 0] = px
                c_p[n, 1] = py
                c_n[n, 0] = -onrm[bi, 0]
                c_n[n, 1] = -onrm[bi, 1]
                c_depth[n] = -best
                n += 1
    # hand spheres vs object and statics
    for si in range(sph_body.shape[0]):
        b = sph_body[si]
        cb = math.cos(theta[b])
        sb = math.sin(theta[b])
        cx = pos[b, 0] + cb * sph_local[si, 0] - sb * sph_local[si, 1]
        cy = pos[b, 1] + sb * sph_local[si, 0] + cb * sph_local[si, 1]
        r = sph_r[si]
        for target in range(1 + st_verts.shape[0]):
            if target == 0:
                ne = mv
            else:
                ne = st_verts.shape[1]
            best_in = -1.0e30
            bi_in = -1
            best_d = 1.0e30
            bx = 0.0
            by = 0.0
            inside = True
            for e in range(ne):
                if target == 0:
                    ax = ow[e, 0]
                    ay = ow[e, 1]
                    qx = ow[(e + 1) % ne, 0]
                    qy = ow[(e + 1) % ne, 1]
                    nxx = onrm[e, 0]
                    nyy = onrm[e, 1]
                else:
                    s = target - 1
                    ax = st_verts[s, e, 0]
                    ay = st_verts[s, e, 1]
                    qx = st_verts[s, (e + 1) % ne, 0]
                    qy = st_verts[s, (e + 1) % ne, 1]
                    nxx = st_norms[s, e, 0]
                    nyy = st_norms[s, e, 1]
                d = nxx * (cx - ax) + nyy * (cy - ay)
                if d > best_in:
                    best_in = d
                    bi_in = e
                if d > 0.0:
                    inside = False
                ex = qx - ax
                ey = qy - ay
                ll = ex * ex + ey * ey
                t = ((cx - ax) * ex + (cy - ay) * ey) / ll
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
                ppx = ax + t * ex
                ppy = ay + t * ey
                dd = math.sqrt((cx - ppx) ** 2 + (cy - ppy) ** 2)
                if dd < best_d:
                    best_d = dd
                    bx = ppx
                    by = ppy
            made = False
            nx = 0.0
            ny = 0.0
            depth = 0.0
            ppx = bx
            ppy = by
            if inside:
                if target == 0:
                    nx = onrm[bi_in, 0]
                    ny = onrm[bi_in, 1]
                else:
                    nx = st_norms[target - 1, bi_in, 0]
                    ny = st_norms[target - 1, bi_in, 1]
                depth = r - best_in
                ppx = cx - nx * best_in
                ppy = cy - ny * best_in
                made = True
            elif best_d - r < slop:
                if best_d > 1.0e-12:
                    nx = (cx - bx) / best_d
                    ny = (cy - by) / best_d
                else:
                    if target == 0:
                        nx = onrm[bi_in, 0]
                        ny = onrm[bi_in, 1]
                    else:
                        nx = st_norms[target - 1, bi_in, 0]
                        ny = st_norms[target - 1, bi_in, 1]
                depth = r - best_d
                made = True
            if made and n < MAXC:
                c_a[n] = b
                c_b[n] = 11 if target == 0 else -1
                c_p[n, 0] = ppx
                c_p[n, 1] = ppy
                c_n[n, 0] = nx
                c_n[n, 1] = ny
                c_depth[n] = depth
                n += 1

    # ---- constraint setup --------------------------------------------------
    j_ra = np.empty((nj, 2))
    j_rb = np.empty((nj, 2))
    j_c = np.empty((nj, 2))
    q_now = np.empty(nj)
    for k in range(nj):
        a = jc[k]
        b = jp[k]
        ca = math.cos(theta[a])
        sa = math.sin(theta[a])
        cbq = math.cos(theta[b])
        sbq = math.sin(theta[b])
        j_ra[k, 0] = ca * jac[k, 0] - sa * jac[k, 1]
        j_ra[k, 1] = sa * jac[k, 0] + ca * jac[k, 1]
        j_rb[k, 0] = cbq * jap[k, 0] - sbq * jap[k, 1]
        j_rb[k, 1] = sbq * jap[k, 0] + cbq * jap[k, 1]
        j_c[k, 0] = pos[a, 0] + j_ra[k, 0] - pos[b, 0] - j_rb[k, 0]
        j_c[k, 1] = pos[a, 1] + j_ra[k, 1] - pos[b, 1] - j_rb[k, 1]
        q_now[k] = jsign[k] * _wrap(theta[a] - theta[b])
    jlim_acc = np.zeros(nj)
    cart_acc = 0.0

    # PD actuation solved as implicit soft motor constraints: unconditionally
    # stable for stiff gains on light links, with the torque limit expressed
    # as an impulse clamp. At convergence the statics reduce to
    # tau = kp*(target - q) - kd*qd.
    mot_acc = np.zeros(nj)
    mot_gamma = np.empty(nj)
    mot_beta = np.empty(nj)
    for k in range(nj):
        soft = dt * jkp[k] + jkd[k]
        mot_gamma[k] = 1.0 / (dt * soft)
        mot_beta[k] = jkp[k] / soft
    cart_soft = dt * cart_kp + cart_kd
    cart_gamma = 1.0 / (dt * cart_soft)
    cart_beta = cart_kp / cart_soft
    cart_mot_acc = 0.0

    for j in range(n):
        a = c_a[j]
        b = c_b[j]
        c_ra[j, 0] = c_p[j, 0] - pos[a, 0]
        c_ra[j, 1] = c_p[j, 1] - pos[a, 1]
        nx = c_n[j, 0]
        ny = c_n[j, 1]
        tx = -ny
        ty = nx
        cra = c_ra[j, 0] * ny - c_ra[j, 1] * nx
        crat = c_ra[j, 0] * ty - c_ra[j, 1] * tx
        kn = inv_m[a, 0] * nx * nx + inv_m[a, 1] * ny * ny + inv_i[a] * cra * cra
        kt = inv_m[a, 0] * tx * tx + inv_m[a, 1] * ty * ty + inv_i[a] * crat * crat
        vax = vel[a, 0] - omega[a] * c_ra[j, 1]
        vay = vel[a, 1] + omega[a] * c_ra[j, 0]
        vbx = 0.0
        vby = 0.0
        if b >= 0:
            c_rb[j, 0] = c_p[j, 0] - pos[b, 0]
            c_rb[j, 1] = c_p[j, 1] - pos[b, 1]
            crb = c_rb[j, 0] * ny - c_rb[j, 1] * nx
            crbt = c_rb[j, 0] * ty - c_rb[j, 1] * tx
            kn += inv_m[b, 0] * nx * nx + inv_m[b, 1] * ny * ny + inv_i[b] * crb * crb
            kt += inv_m[b, 0] * tx * tx + inv_m[b, 1] * ty * ty + inv_i[b] * crbt * crbt
            vbx = vel[b, 0] - omega[b] * c_rb[j, 1]
            vby = vel[b, 1] + omega[b] * c_rb[j, 0]
        else:
            c_rb[j, 0] = 0.0
            c_rb[j, 1] = 0.0
        c_kn[j] = kn
        c_kt[j] = kt
        vn0 = (vax - vbx) * nx + (vay - vby) * ny
        vt_target = 0.0
        if (a == 11 or b == 11) and vn0 < -rest_thresh:
            vt_target = -restitution * vn0
        pen = c_depth[j] - slop
        if pen > 0.0:
            bp = beta_dt * pen
            if bp > max_depen:
                bp = max_depen
            if bp > vt_target:
                vt_target = bp
        c_vt[j] = vt_target
        c_jn[j] = 0.0
        c_jt[j] = 0.0

    # ---- velocity iterations ----------------------------------------------
    for it in range(iters):
        for k in range(nj):
            a = jc[k]
            b = jp[k]
            kq = inv_i[a] + inv_i[b]
            if kq < 1.0e-14:
                continue
            qd = jsign[k] * (omega[a] - omega[b])
            rhs = qd + mot_beta[k] * (q_now[k] - q_target[k]) \
                + mot_gamma[k] * mot_acc[k]
            lam = -rhs / (kq + mot_gamma[k])
            lim = jtau[k] * dt
            new = mot_acc[k] + lam
            if new > lim:
                new = lim
            elif new < -lim:
                new = -lim
            d = new - mot_acc[k]
            mot_acc[k] = new
            tw = jsign[k] * d
            omega[a] += inv_i[a] * tw
            omega[b] -= inv_i[b] * tw

        rhs = vel[0, 0] + cart_beta * (pos[0, 0] - cart_target) \
            + cart_gamma * cart_mot_acc
        lam = -rhs / (inv_m[0, 0] + cart_gamma)
        lim = cart_fmax * dt
        new = cart_mot_acc + lam
        if new > lim:
            new = lim
        elif new < -lim:
            new = -lim
        vel[0, 0] += inv_m[0, 0] * (new - cart_mot_acc)
        cart_mot_acc = new

        for k in range(nj):
            a = jc[k]
            b = jp[k]
            rax = j_ra[k, 0]
            ray = j_ra[k, 1]
            rbx = j_rb[k, 0]
            rby = j_rb[k, 1]
            cdx = vel[a, 0] - omega[a] * ray - vel[b, 0] + omega[b] * rby
            cdy = vel[a, 1] + omega[a] * rax - vel[b, 1] - omega[b] * rbx
            rhsx = -(cdx + beta_dt * j_c[k, 0])
            rhsy = -(cdy + beta_dt * j_c[k, 1])
            k11 = (inv_m[a, 0] + inv_m[b, 0]
                   + inv_i[a] * ray * ray + inv_i[b] * rby * rby)
            k12 = -inv_i[a] * rax * ray - inv_i[b] * rbx * rby
            k22 = (inv_m[a, 1] + inv_m[b, 1]
                   + inv_i[a] * rax * rax + inv_i[b] * rbx * rbx)
            det = k11 * k22 - k12 * k12
            if det < 1.0e-14:
                continue
            px = (k22 * rhsx - k12 * rhsy) / det
            py = (k11 * rhsy - k12 * rhsx) / det
            vel[a, 0] += inv_m[a, 0] * px
            vel[a, 1] += inv_m[a, 1] * py
            omega[a] += inv_i[a] * (rax * py - ray * px)
            vel[b, 0] -= inv_m[b, 0] * px
            vel[b, 1] -= inv_m[b, 1] * py
            omega[b] -= inv_i[b] * (rbx * py - rby * px)

        for k in range(nj):
            a = jc[k]
            b = jp[k]
            kq = inv_i[a] + inv_i[b]
            if kq < 1.0e-14:
                continue
            qd = jsign[k] * (omega[a] - omega[b])
            q = q_now[k]
            if q < jlo[k]:
                bias = beta_dt * (jlo[k] - q)
                lam = (bias - qd) / kq
                new = jlim_acc[k] + lam
                if new < 0.0:
                    new = 0.0
                d = new - jlim_acc[k]
                jlim_acc[k] = new
            elif q > jhi[k]:
                bias = beta_dt * (q - jhi[k])
                lam = (-bias - qd) / kq
                new = jlim_acc[k] + lam
                if new > 0.0:
                    new = 0.0
                d = new - jlim_acc[k]
                jlim_acc[k] = new
            else:
                continue
            tw = jsign[k] * d
            omega[a] += inv_i[a] * tw
            omega[b] -= inv_i[b] * tw

        x0 = pos[0, 0]
        if x0 < -cart_lim:
            bias = beta_dt * (-cart_lim - x0)
            lam = (bias - vel[0, 0]) / inv_m[0, 0]
            new = cart_acc + lam
            if new < 0.0:
                new = 0.0
            vel[0, 0] += inv_m[0, 0] * (new - cart_acc)
            cart_acc = new
        elif x0 > cart_lim:
            bias = beta_dt * (x0 - cart_lim)
            lam = (-bias - vel[0, 0]) / inv_m[0, 0]
            new = cart_acc + lam
            if new > 0.0:
                new = 0.0
            vel[0, 0] += inv_m[0, 0] * (new - cart_acc)
            cart_acc = new

        for j in range(n):
            a = c_a[j]
            b = c_b[j]
            nx = c_n[j, 0]
            ny = c_n[j, 1]
            vax = vel[a, 0] - omega[a] * c_ra[j, 1]
            vay = vel[a, 1] + omega[a] * c_ra[j, 0]
            vbx = 0.0
            vby = 0.0
            if b >= 0:
                vbx = vel[b, 0] - omega[b] * c_rb[j, 1]
                vby = vel[b, 1] + omega[b] * c_rb[j, 0]
            vn = (vax - vbx) * nx + (vay - vby) * ny
            lam = (c_vt[j] - vn) / c_kn[j]
            new = c_jn[j] + lam
            if new < 0.0:
                new = 0.0
            d = new - c_jn[j]
            c_jn[j] = new
            dx = d * nx
            dy = d * ny
            vel[a, 0] += inv_m[a, 0] * dx
            vel[a, 1] += inv_m[a, 1] * dy
            omega[a] += inv_i[a] * (c_ra[j, 0] * dy - c_ra[j, 1] * dx)
            if b >= 0:
                vel[b, 0] -= inv_m[b, 0] * dx
                vel[b, 1] -= inv_m[b, 1] * dy
                omega[b] -= inv_i[b] * (c_rb[j, 0] * dy - c_rb[j, 1] * dx)

            tx = -ny
            ty = nx
            vax = vel[a, 0] - omega[a] * c_ra[j, 1]
            vay = vel[a, 1] + omega[a] * c_ra[j, 0]
            vbx = 0.0
            vby = 0.0
            if b >= 0:
                vbx = vel[b, 0] - omega[b] * c_rb[j, 1]
                vby = vel[b, 1] + omega[b] * c_rb[j, 0]
            vt = (vax - vbx) * tx + (vay - vby) * ty
            lam = -vt / c_kt[j]
            hi = mu * c_jn[j]
            new = c_jt[j] + lam
            if new > hi:
                new = hi
            elif new < -hi:
                new = -hi
            d = new - c_jt[j]
            c_jt[j] = new
            dx = d * tx
            dy = d * ty
            vel[a, 0] += inv_m[a, 0] * dx
            vel[a, 1] += inv_m[a, 1] * dy
            omega[a] += inv_i[a] * (c_ra[j, 0] * dy - c_ra[j, 1] * dx)
            if b >= 0:
                vel[b, 0] -= inv_m[b, 0] * dx
                vel[b, 1] -= inv_m[b, 1] * dy
                omega[b] -= inv_i[b] * (c_rb[j, 0] * dy - c_rb[j, 1] * dx)

    for k in range(nj):
        applied_tau[1 + k] = mot_acc[k] / dt
    applied_tau[0] = cart_mot_acc / dt

    # ---- integrate ---------------------------------------------------------
    for i in range(nb):
        pos[i, 0] += dt * vel[i, 0]
        pos[i, 1] += dt * vel[i, 1]
        theta[i] += dt * omega[i]

    # ---- joint position projection ------------------------------------------
    for _ in range(proj_passes):
        for k in range(nj):
            a = jc[k]
            b = jp[k]
            ca = math.cos(theta[a])
            sa = math.sin(theta[a])
            cbq = math.cos(theta[b])
            sbq = math.sin(theta[b])
            rax = ca * jac[k, 0] - sa * jac[k, 1]
            ray = sa * jac[k, 0] + ca * jac[k, 1]
            rbx = cbq * jap[k, 0] - sbq * jap[k, 1]
            rby = sbq * jap[k, 0] + cbq * jap[k, 1]
            cx = pos[a, 0] + rax - pos[b, 0] - rbx
            cy = pos[a, 1] + ray - pos[b, 1] - rby
            cl = math.sqrt(cx * cx + cy * cy)
            if cl < 1.0e-12:
                continue
            if cl > PROJ_CLAMP:
                cx *= PROJ_CLAMP / cl
                cy *= PROJ_CLAMP / cl
            k11 = (inv_m[a, 0] + inv_m[b, 0]
                   + inv_i[a] * ray * ray + inv_i[b] * rby * rby)
            k12 = -inv_i[a] * rax * ray - inv_i[b] * rbx * rby
            k22 = (inv_m[a, 1] + inv_m[b, 1]
                   + inv_i[a] * rax * rax + inv_i[b] * rbx * rbx)
            det = k11 * k22 - k12 * k12
            if det < 1.0e-14:
                continue
            px = -(k22 * cx - k12 * cy) / det
            py = -(k11 * cy - k12 * cx) / det
            pos[a, 0] += inv_m[a, 0] * px
            pos[a, 1] += inv_m[a, 1] * py
            theta[a] += inv_i[a] * (rax * py - ray * px)
            pos[b, 0] -= inv_m[b, 0] * px
            pos[b, 1] -= inv_m[b, 1] * py
            theta[b] -= inv_i[b] * (rbx * py - rby * px)

    # ---- contact report -----------------------------------------------------
    for j in range(n):
        if c_jn[j] <= 0.0:
            continue
        a = c_a[j]
        b = c_b[j]
        nx = c_n[j, 0]
        ny = c_n[j, 1]
        jx = c_jn[j] * nx - c_jt[j] * ny
        jy = c_jn[j] * ny + c_jt[j] * nx
        mag = math.sqrt(jx * jx + jy * jy) / dt
        if b == 11 and a < 11:
            rep_flag[a] = 1
            rep_force[a] += mag
        elif a == 11 and 0 <= b < 11:
            rep_flag[b] = 1
            rep_force[b] += mag
    return n

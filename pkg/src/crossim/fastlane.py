"""JIT-compiled tick kernel for trial-shaped worlds.

The generic engine pays numpy dispatch overhead on every one of its ~150
array operations, which dominates at trial scale (one controlled pedestrian
plus a few dozen vehicles on straight links). This kernel runs the identical
physics in one compiled pass. run_trial() picks it automatically when the
world shape allows; the engine's vectorized path remains the reference and
the two are held together by equivalence tests.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(f):
            return f

        return deco if not (args and callable(args[0])) else args[0]

from .engine import (
    OFFROAD_SHIELD,
    VEHICLE_PAIR_RADIUS,
    WALKER_PAIR_RADIUS,
    WorldState,
)
from .social_force import PEDESTRIAN_RADIUS, VEHICLE_LENGTH, VEHICLE_WIDTH

HALF_L = VEHICLE_LENGTH / 2.0
HALF_W = VEHICLE_WIDTH / 2.0


@njit(cache=True)
def _bitmap_ok(ok, x0, y0, cell, nx, ny, px, py):
    if nx == 0:
        return False
    ix = int(math.floor((px - x0) / cell))
    iy = int(math.floor((py - y0) / cell))
    if ix < 0 or ix >= nx or iy < 0 or iy >= ny:
        return False
    return ok[ix, iy] != 0


@njit(cache=True)
def _zone_contains(zn, zoff, lo, hi, px, py):
    for k in range(lo, hi):
        if px * zn[k, 0] + py * zn[k, 1] < zoff[k] - 1e-12:
            return False
    return True


@njit(cache=True)
def trial_tick(
    dt,
    # pedestrian state and command
    px, py, pvx, pvy, pheading,
    dvx, dvy,
    tau, vmax, a_veh, b_veh,
    # walkable / roadway bitmaps
    perm_ok, perm_x0, perm_y0, perm_cell, perm_nx, perm_ny,
    road_ok, road_x0, road_y0, road_cell, road_nx, road_ny,
    # vehicles
    link, s, speed, is_av,
    p_T, p_a, p_b, p_s0, p_delta, p_bem, p_ab, des, override,
    ox, oy, dx, dy, length,
    # crossing pieces and zones
    piece_link, piece_entry, piece_stop, piece_cw,
    pn, poff, pstart,
    signal_not_green,
    zn, zoff, zstart, zbbox,
    prev_zone,
    s_safe, t_ant, near_r, slow_r, slow_frac,
    # outputs
    em_now, yield_now, overlap_now, imminent_req, gone,
    near_dist, near_speed, new_zone,
):
    nv = len(s)
    npieces = len(piece_link)
    ncw = len(prev_zone)

    # ---- vehicle accelerations from the state at t ----
    acc = np.empty(nv)
    inter = np.zeros(nv)
    needed = np.zeros(nv)
    order = np.argsort(link.astype(np.float64) * 1.0e7 + s)
    for k in range(nv - 1):
        i = order[k]
        j = order[k + 1]
        if link[i] != link[j]:
            continue
        gap = s[j] - VEHICLE_LENGTH - s[i]
        lead_v = speed[j]
        engaged = gap <= near_r or (gap <= slow_r and lead_v < slow_frac * des[i])
        if engaged:
            dv = speed[i] - lead_v
            s_star = p_s0[i] + speed[i] * p_T[i] + speed[i] * dv / p_ab[i]
            g = gap if gap > 1e-9 else 1e-9
            term = (s_star / g) ** 2
            if term > inter[i]:
                inter[i] = term
            closing = speed[i] ** 2 - lead_v**2
            if closing > 0.0:
                g6 = gap if gap > 1e-6 else 1e-6
                req = closing / (2.0 * g6)
                if req > needed[i]:
                    needed[i] = req

    # zone occupancy (from the ped membership at t) and entry prediction
    for ci in range(ncw):
        incoming = False
        if prev_zone[ci] == 0:
            pad = 2.0 * t_ant
            if (
                px >= zbbox[ci, 0] - pad
                and px <= zbbox[ci, 2] + pad
                and py >= zbbox[ci, 1] - pad
                and py <= zbbox[ci, 3] + pad
            ):
                for fk in range(4):
                    frac = 0.25 * (fk + 1)
                    ax = px + pvx * (frac * t_ant)
                    ay = py + pvy * (frac * t_ant)
                    if _zone_contains(zn, zoff, zstart[ci], zstart[ci + 1], ax, ay):
                        incoming = True
                        break
        new_zone[ci] = 1 if (prev_zone[ci] != 0 or incoming) else 0  # reused as trigger scratch

    for pi in range(npieces):
        li = piece_link[pi]
        ci = piece_cw[pi]
        trigger = new_zone[ci] != 0
        ped_in_piece = False
        if prev_zone[ci] != 0:
            ped_in_piece = _zone_contains(pn, poff, pstart[pi], pstart[pi + 1], px, py)
        for vi in range(nv):
            if link[vi] != li:
                continue
            upstream = s[vi] < piece_entry[pi]
            if signal_not_green != 0 and s[vi] < piece_stop[pi]:
                g = piece_stop[pi] - s[vi]
                s_star = p_s0[vi] + speed[vi] * p_T[vi] + speed[vi] * speed[vi] / p_ab[vi]
                gg = g if g > 1e-9 else 1e-9
                term = (s_star / gg) ** 2
                if term > inter[vi]:
                    inter[vi] = term
                g6 = g if g > 1e-6 else 1e-6
                req = speed[vi] ** 2 / (2.0 * g6)
                if req > needed[vi]:
                    needed[vi] = req
            if trigger and upstream and is_av[vi] != 0:
                g = piece_entry[pi] - s_safe - s[vi]
                if g < 0.1:
                    g = 0.1
                s_star = p_s0[vi] + speed[vi] * p_T[vi] + speed[vi] * speed[vi] / p_ab[vi]
                term = (s_star / g) ** 2
                if term > inter[vi]:
                    inter[vi] = term
                req = speed[vi] ** 2 / (2.0 * g)
                if req > needed[vi]:
                    needed[vi] = req
                if g <= slow_r:
                    yield_now[vi] = 1
            if ped_in_piece and upstream and is_av[vi] == 0:
                d_entry = piece_entry[pi] - s[vi]
                if d_entry < 1e-6:
                    d_entry = 1e-6
                required = speed[vi] ** 2 / (2.0 * d_entry)
                if required <= p_bem[vi]:
                    g = piece_entry[pi] - s_safe - s[vi]
                    if g < 0.1:
                        g = 0.1
                    s_star = p_s0[vi] + speed[vi] * p_T[vi] + speed[vi] * speed[vi] / p_ab[vi]
                    term = (s_star / g) ** 2
                    if term > inter[vi]:
                        inter[vi] = term
                    req = speed[vi] ** 2 / (2.0 * g)
                    if req > needed[vi]:
                        needed[vi] = req

    for vi in range(nv):
        a = p_a[vi] * (1.0 - (speed[vi] / des[vi]) ** p_delta[vi] - inter[vi])
        low = -p_b[vi] if (is_av[vi] != 0 and needed[vi] <= p_b[vi]) else -p_bem[vi]
        if a < low:
            a = low
        if a > p_a[vi]:
            a = p_a[vi]
        if not math.isnan(override[vi]):
            a = override[vi]
            if a < -p_bem[vi]:
                a = -p_bem[vi]
            if a > p_a[vi]:
                a = p_a[vi]
        acc[vi] = a

    # ---- pedestrian force from the state at t ----
    fx = (dvx - pvx) / tau
    fy = (dvy - pvy) / tau
    on_road = _bitmap_ok(road_ok, road_x0, road_y0, road_cell, road_nx, road_ny, px, py)
    for vi in range(nv):
        cs = s[vi] - HALF_L
        cx = ox[link[vi]] + dx[link[vi]] * cs
        cy = oy[link[vi]] + dy[link[vi]] * cs
        ddx = px - cx
        ddy = py - cy
        if ddx * ddx + ddy * ddy > VEHICLE_PAIR_RADIUS * VEHICLE_PAIR_RADIUS:
            continue
        c = dx[link[vi]]
        sn = dy[link[vi]]
        lx = c * ddx + sn * ddy
        ly = -sn * ddx + c * ddy
        if lx < -HALF_L:
            lx = -HALF_L
        elif lx > HALF_L:
            lx = HALF_L
        if ly < -HALF_W:
            ly = -HALF_W
        elif ly > HALF_W:
            ly = HALF_W
        refx = cx + c * lx - sn * ly
        refy = cy + sn * lx + c * ly
        vx_ = px - refx
        vy_ = py - refy
        dist = math.sqrt(vx_ * vx_ + vy_ * vy_)
        if dist <= VEHICLE_PAIR_RADIUS and dist > 1e-9:
            amp = a_veh if on_road else a_veh * OFFROAD_SHIELD
            mag = amp * math.exp((PEDESTRIAN_RADIUS - dist) / b_veh) / (dist if dist > 1e-9 else 1e-9)
            fx += mag * vx_
            fy += mag * vy_

    # ---- integrate: vehicles then the pedestrian ----
    for vi in range(nv):
        v_new = speed[vi] + acc[vi] * dt
        if v_new < 0.0:
            v_new = 0.0
        if (speed[vi] - v_new) / dt > p_b[vi] + 1e-12:
            em_now[vi] = 1
        speed[vi] = v_new
        s[vi] = s[vi] + v_new * dt
        if s[vi] > length[link[vi]]:
            gone[vi] = 1

    npvx = pvx + fx * dt
    npvy = pvy + fy * dt
    sp = math.sqrt(npvx * npvx + npvy * npvy)
    if sp > vmax:
        scale = vmax / sp
        npvx *= scale
        npvy *= scale
        sp = vmax
    npx = px + npvx * dt
    npy = py + npvy * dt
    if perm_nx > 0 and not _bitmap_ok(perm_ok, perm_x0, perm_y0, perm_cell, perm_nx, perm_ny, npx, npy):
        npx = px
        npy = py
        npvx = 0.0
        npvy = 0.0
        sp = 0.0
    npheading = pheading
    if sp > 0.1:
        npheading = math.atan2(npvy, npvx)

    # ---- post-state bookkeeping: zone membership, events, view support ----
    for ci in range(ncw):
        inside = False
        if (
            npx >= zbbox[ci, 0] - 0.5
            and npx <= zbbox[ci, 2] + 0.5
            and npy >= zbbox[ci, 1] - 0.5
            and npy <= zbbox[ci, 3] + 0.5
        ):
            inside = _zone_contains(zn, zoff, zstart[ci], zstart[ci + 1], npx, npy)
        new_zone[ci] = 1 if inside else 0

    min_required = 0.0
    for pi in range(npieces):
        near_dist[pi] = np.inf
        near_speed[pi] = 0.0
        li = piece_link[pi]
        ped_in_piece_now = False
        if new_zone[piece_cw[pi]] != 0:
            ped_in_piece_now = _zone_contains(pn, poff, pstart[pi], pstart[pi + 1], npx, npy)
        for vi in range(nv):
            if link[vi] != li:
                continue
            d = piece_entry[pi] - s[vi]
            if d > 0.0 and d < near_dist[pi]:
                near_dist[pi] = d
                near_speed[pi] = speed[vi]
            if ped_in_piece_now and d > 0.1:
                req = speed[vi] ** 2 / (2.0 * d)
                if req > min_required:
                    min_required = req

    # overlap and unavoidable-conflict accident flags on the post state
    for vi in range(nv):
        cs = s[vi] - HALF_L
        cx = ox[link[vi]] + dx[link[vi]] * cs
        cy = oy[link[vi]] + dy[link[vi]] * cs
        ddx = npx - cx
        ddy = npy - cy
        if ddx * ddx + ddy * ddy > VEHICLE_PAIR_RADIUS * VEHICLE_PAIR_RADIUS:
            continue
        c = dx[link[vi]]
        sn = dy[link[vi]]
        lx = c * ddx + sn * ddy
        ly = -sn * ddx + c * ddy
        if lx < -HALF_L:
            lx = -HALF_L
        elif lx > HALF_L:
            lx = HALF_L
        if ly < -HALF_W:
            ly = -HALF_W
        elif ly > HALF_W:
            ly = HALF_W
        refx = cx + c * lx - sn * ly
        refy = cy + sn * lx + c * ly
        if math.hypot(npx - refx, npy - refy) <= PEDESTRIAN_RADIUS:
            overlap_now[vi] = 1
    for pi in range(npieces):
        ci = piece_cw[pi]
        if new_zone[ci] == 0:
            continue
        if not _zone_contains(pn, poff, pstart[pi], pstart[pi + 1], npx, npy):
            continue
        li = piece_link[pi]
        for vi in range(nv):
            if link[vi] != li:
                continue
            d = piece_entry[pi] - s[vi]
            if d <= 0.0:
                continue
            required = speed[vi] ** 2 / (2.0 * d)
            if required > p_bem[vi]:
                imminent_req[vi] = required

    return npx, npy, npvx, npvy, npheading, min_required


class FastTrial:
    """Owns the mutable arrays for one kernel-driven trial run."""

    @staticmethod
    def supported(world: WorldState) -> bool:
        if not HAVE_NUMBA:
            return False
        idx = world.index
        if not idx.all_straight or idx.obstacle_polys or idx.loop.any():
            return False
        vsel, wsel = world._selections()
        if len(wsel) != 1 or not world.controlled[wsel[0]]:
            return False
        if world.kind[wsel[0]] != 2:  # pedestrian
            return False
        return True

    def __init__(self, world: WorldState, respondent_id: int):
        idx = world.index
        self.index = idx
        self.engine = world.engine
        self.dt = world.dt
        self.hz = world.hz
        self.tick_no = world.tick
        self.t = world.t
        vsel, wsel = world._selections()
        ri = int(wsel[0])
        if world.ids[ri] != respondent_id:
            raise ValueError("fast path expects the single walker to be the respondent")
        self.ped_id = respondent_id
        sf = world.sf_params[world.param_idx[ri]]
        self.tau = float(sf.tau)
        self.vmax = float(sf.v_max)
        self.a_veh = float(sf.strength["vehicle"])
        self.b_veh = float(sf.reach["vehicle"])
        self.px, self.py = float(world.pos[ri, 0]), float(world.pos[ri, 1])
        self.pvx, self.pvy = float(world.vel[ri, 0]), float(world.vel[ri, 1])
        self.pheading = float(world.heading[ri])

        self.v_ids = world.ids[vsel].copy()
        self.link = world.link[vsel].astype(np.int32)
        self.s = world.s[vsel].copy()
        self.speed = world.speed[vsel].copy()
        self.is_av = (world.kind[vsel] == 1).astype(np.uint8)
        rows = world._vehicle_param_rows(vsel)
        self.p_T = rows["T"].copy()
        self.p_a = rows["a"].copy()
        self.p_b = rows["b"].copy()
        self.p_s0 = rows["s0"].copy()
        self.p_delta = rows["delta"].copy()
        self.p_bem = rows["b_emergency"].copy()
        self.p_ab = rows["two_sqrt_ab"].copy()
        self.des = np.where(world.v0[vsel] > 0, world.v0[vsel], rows["v0"]).astype(np.float64)
        self.override = world.accel_override[vsel].copy()

        self.ox = idx.origin[:, 0].copy()
        self.oy = idx.origin[:, 1].copy()
        self.dx = idx.direction[:, 0].copy()
        self.dy = idx.direction[:, 1].copy()
        self.length = idx.length.copy()

        pieces = idx.pieces
        self.piece_link = np.array([p.link for p in pieces], dtype=np.int32)
        self.piece_entry = np.array([p.s_entry for p in pieces])
        self.piece_stop = np.array([p.s_stop for p in pieces])
        self.piece_cw = np.array([p.crosswalk for p in pieces], dtype=np.int32)
        if pieces:
            self.pn = np.concatenate([p.region.normal for p in pieces])
            self.poff = np.concatenate([p.region.offset for p in pieces])
            self.pstart = np.cumsum([0] + [len(p.region.offset) for p in pieces]).astype(np.int64)
        else:
            self.pn = np.zeros((0, 2))
            self.poff = np.zeros(0)
            self.pstart = np.zeros(1, dtype=np.int64)
        ncw = len(idx.crosswalk_ids)
        if ncw:
            self.zn = np.concatenate([r.normal for r in idx.zone_region])
            self.zoff = np.concatenate([r.offset for r in idx.zone_region])
            self.zstart = np.cumsum([0] + [len(r.offset) for r in idx.zone_region]).astype(np.int64)
            self.zbbox = np.array(idx.zone_bbox, dtype=np.float64)
        else:
            self.zn = np.zeros((0, 2))
            self.zoff = np.zeros(0)
            self.zstart = np.zeros(1, dtype=np.int64)
            self.zbbox = np.zeros((0, 4))

        def bitmap_args(bm):
            if bm.ok is None:
                return (np.zeros((0, 0), dtype=np.uint8), 0.0, 0.0, 1.0, 0, 0)
            return (
                bm.ok.astype(np.uint8),
                float(bm.x0),
                float(bm.y0),
                float(bm.cell),
                bm.nx,
                bm.ny,
            )

        self.perm = bitmap_args(idx.permitted)
        self.road = bitmap_args(idx.road_mask)

        self.em = world.em_mask[vsel].astype(np.uint8)
        self.yieldf = world.yield_mask[vsel].astype(np.uint8)
        self.zone = (
            world.zone_mask[ri].astype(np.uint8).copy() if ncw else np.zeros(0, dtype=np.uint8)
        )
        self.npieces = len(pieces)
        self.near_dist = np.full(self.npieces, np.inf)
        self.near_speed = np.zeros(self.npieces)
        self._init_nearest()

    def _init_nearest(self):
        for pi in range(self.npieces):
            on = self.link == self.piece_link[pi]
            d = self.piece_entry[pi] - self.s[on]
            ahead = d > 0
            if ahead.any():
                j = int(np.argmin(d[ahead]))
                self.near_dist[pi] = float(d[ahead][j])
                self.near_speed[pi] = float(self.speed[on][ahead][j])
            else:
                self.near_dist[pi] = np.inf
                self.near_speed[pi] = 0.0

    def tick(self, desired: tuple[float, float], signal_not_green: bool):
        """One engine tick; returns the transition report for event assembly."""
        nv = len(self.s)
        em_now = np.zeros(nv, dtype=np.uint8)
        yield_now = np.zeros(nv, dtype=np.uint8)
        overlap_now = np.zeros(nv, dtype=np.uint8)
        imminent_req = np.zeros(nv)
        gone = np.zeros(nv, dtype=np.uint8)
        new_zone = np.zeros(len(self.zone), dtype=np.uint8)
        spd_before = self.speed.copy()
        eng = self.engine
        res = trial_tick(
            self.dt,
            self.px, self.py, self.pvx, self.pvy, self.pheading,
            float(desired[0]), float(desired[1]),
            self.tau, self.vmax, self.a_veh, self.b_veh,
            *self.perm, *self.road,
            self.link, self.s, self.speed, self.is_av,
            self.p_T, self.p_a, self.p_b, self.p_s0, self.p_delta,
            self.p_bem, self.p_ab, self.des, self.override,
            self.ox, self.oy, self.dx, self.dy, self.length,
            self.piece_link, self.piece_entry, self.piece_stop, self.piece_cw,
            self.pn, self.poff, self.pstart,
            np.uint8(1 if signal_not_green else 0),
            self.zn, self.zoff, self.zstart, self.zbbox,
            self.zone,
            eng.s_safe, eng.t_anticipate, eng.perception_near,
            eng.perception_slow, eng.slow_leader_fraction,
            em_now, yield_now, overlap_now, imminent_req, gone,
            self.near_dist, self.near_speed, new_zone,
        )
        self.px, self.py, self.pvx, self.pvy, self.pheading, min_required = res
        self.tick_no += 1
        self.t = self.tick_no / self.hz

        em_started = [int(self.v_ids[i]) for i in np.nonzero(em_now & ~self.em)[0]]
        em_decel = {
            int(self.v_ids[i]): float((spd_before[i] - self.speed[i]) / self.dt)
            for i in np.nonzero(em_now & ~self.em)[0]
        }
        yield_started = [int(self.v_ids[i]) for i in np.nonzero(yield_now & ~self.yieldf)[0]]
        entered = [ci for ci in range(len(new_zone)) if new_zone[ci] and not self.zone[ci]]
        exited = [ci for ci in range(len(new_zone)) if self.zone[ci] and not new_zone[ci]]
        overlaps = [int(self.v_ids[i]) for i in np.nonzero(overlap_now)[0]]
        imminent = {
            int(self.v_ids[i]): float(imminent_req[i]) for i in np.nonzero(imminent_req > 0)[0]
        }
        self.em = em_now
        self.yieldf = yield_now
        self.zone = new_zone
        if gone.any():
            keep = gone == 0
            for name in (
                "v_ids", "link", "s", "speed", "is_av", "p_T", "p_a", "p_b", "p_s0",
                "p_delta", "p_bem", "p_ab", "des", "override", "em", "yieldf",
            ):
                setattr(self, name, getattr(self, name)[keep])
        return {
            "em_started": em_started,
            "em_decel": em_decel,
            "yield_started": yield_started,
            "entered": entered,
            "exited": exited,
            "overlaps": overlaps,
            "imminent": imminent,
            "min_required": float(min_required),
        }

    def ped_sample(self):
        return (self.px, self.py, self.pvx, self.pvy, self.pheading)

    def vehicle_positions(self):
        cs = self.s - HALF_L
        x = self.ox[self.link] + self.dx[self.link] * cs
        y = self.oy[self.link] + self.dy[self.link] * cs
        heading = np.arctan2(self.dy[self.link], self.dx[self.link])
        return x, y, heading

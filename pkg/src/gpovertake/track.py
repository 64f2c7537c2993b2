"""Arc-length raceline representation and Frenet-frame geometry.

A raceline is an ordered table of waypoints along the reference (racing) line:
arc length ``s``, Cartesian position, heading, curvature, lateral corridor
bounds and a reference speed.  All queries interpolate linearly between
waypoints; closed tracks wrap ``s`` modulo the total length.

Sign convention used everywhere in this package: the lateral offset ``n`` is
positive toward the *left* bound (left of the direction of travel), i.e. the
left normal is ``(-sin(psi), cos(psi))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi

COLUMNS = ("s_m", "x_m", "y_m", "psi_rad", "kappa_1pm", "d_left_m", "d_right_m", "v_ref_mps")
_REQUIRED = ("x_m", "y_m", "d_left_m", "d_right_m", "v_ref_mps")


class TrackFormatError(ValueError):
    """A track file violates the expected table format or its invariants."""


class GeometryError(ValueError):
    """A Frenet query folds over the local center of curvature."""


class ProjectionError(ValueError):
    """No centerline projection was found near the query point."""


def wrap_angle(angle):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    wrapped = np.mod(angle, TWO_PI)
    wrapped = np.where(wrapped > math.pi, wrapped - TWO_PI, wrapped)
    if np.ndim(angle) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class FrenetPose:
    """Track-relative pose: arc length, lateral deviation, heading error."""

    s: float
    n: float
    theta: float


@dataclass(frozen=True)
class TrackPoint:
    """Interpolated raceline quantities at one (or a vector of) arc length(s)."""

    x: object
    y: object
    psi: object
    kappa: object
    d_left: object
    d_right: object
    v_ref: object


@dataclass(frozen=True)
class Raceline:
    """Immutable arc-length-parameterized track.

    Waypoint arrays must be strictly increasing in ``s`` starting at 0.  For a
    closed track the last waypoint does *not* repeat the first; the closing
    segment is synthesized internally and ``total_length`` includes it.
    """

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    kappa: np.ndarray
    d_left: np.ndarray
    d_right: np.ndarray
    v_ref: np.ndarray
    closed: bool

    def __post_init__(self):
        n = self.s.shape[0]
        if n < 2:
            raise ValueError("raceline needs at least two waypoints")
        for name in ("s", "x", "y", "psi", "kappa", "d_left", "d_right", "v_ref"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"field {name} has shape {arr.shape}, expected ({n},)")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"field {name} contains non-finite values")
            object.__setattr__(self, name, arr)
        if not np.all(np.diff(self.s) > 0):
            raise ValueError("arc length s must be strictly increasing")
        if abs(self.s[0]) > 1e-9:
            raise ValueError("arc length must start at 0")
        if np.any(self.d_left <= 0) or np.any(self.d_right <= 0):
            raise ValueError("lateral bounds d_left, d_right must be positive")

        psi_u = np.unwrap(self.psi)
        object.__setattr__(self, "psi", psi_u)

        if self.closed:
            close_len = math.hypot(self.x[0] - self.x[-1], self.y[0] - self.y[-1])
            if close_len < 1e-9:
                raise ValueError("closed track must not repeat the first waypoint")
            total = float(self.s[-1] + close_len)
            # Virtual closing row: same geometry as waypoint 0, heading continued
            # through the nearest full winding so interpolation stays smooth.
            turns = round((psi_u[-1] - psi_u[0]) / TWO_PI)
            psi_close = psi_u[0] + TWO_PI * turns
            if abs(psi_close - psi_u[-1]) > math.pi:
                psi_close += TWO_PI * (1 if psi_close < psi_u[-1] else -1)
            s_ext = np.append(self.s, total)
            x_ext = np.append(self.x, self.x[0])
            y_ext = np.append(self.y, self.y[0])
            psi_ext = np.append(psi_u, psi_close)
            kap_ext = np.append(self.kappa, self.kappa[0])
            dl_ext = np.append(self.d_left, self.d_left[0])
            dr_ext = np.append(self.d_right, self.d_right[0])
            vr_ext = np.append(self.v_ref, self.v_ref[0])
        else:
            total = float(self.s[-1])
            s_ext = self.s
            x_ext, y_ext, psi_ext = self.x, self.y, psi_u
            kap_ext, dl_ext, dr_ext, vr_ext = self.kappa, self.d_left, self.d_right, self.v_ref

        ds = np.diff(s_ext)
        object.__setattr__(self, "total_length", total)
        object.__setattr__(self, "_s_ext", s_ext)
        object.__setattr__(self, "_x_ext", x_ext)
        object.__setattr__(self, "_y_ext", y_ext)
        object.__setattr__(self, "_psi_ext", psi_ext)
        object.__setattr__(self, "_kappa_ext", kap_ext)
        object.__setattr__(self, "_dl_ext", dl_ext)
        object.__setattr__(self, "_dr_ext", dr_ext)
        object.__setattr__(self, "_vref_ext", vr_ext)
        object.__setattr__(self, "_ds_ext", ds)
        object.__setattr__(self, "_dx_ds", np.diff(x_ext) / ds)
        object.__setattr__(self, "_dy_ds", np.diff(y_ext) / ds)
        object.__setattr__(self, "_dpsi_ds", np.diff(psi_ext) / ds)
        object.__setattr__(self, "_dkap_ds", np.diff(kap_ext) / ds)
        object.__setattr__(self, "mean_spacing", float(np.mean(ds)))

    # -- interpolation ----------------------------------------------------

    def wrap_s(self, s):
        """Map arbitrary arc length onto [0, total_length) (closed) or clamp (open)."""
        if self.closed:
            return np.mod(s, self.total_length)
        return np.clip(s, 0.0, self.total_length)

    def _segments(self, s_wrapped):
        idx = np.searchsorted(self._s_ext, s_wrapped, side="right") - 1
        idx = np.clip(idx, 0, len(self._s_ext) - 2)
        w = (s_wrapped - self._s_ext[idx]) / self._ds_ext[idx]
        return idx, w

    def sample(self, s) -> TrackPoint:
        """Interpolate all raceline fields at arc length(s) ``s``.

        ``s`` may be a scalar or an array; closed tracks wrap, open tracks
        clamp to the table range.
        """
        sq = np.asarray(s, dtype=float)
        scalar = sq.ndim == 0
        sm = self.wrap_s(sq)
        i, w = self._segments(sm)

        def lerp(a):
            return a[i] + w * (a[i + 1] - a[i])

        psi = wrap_angle(lerp(self._psi_ext))
        pt = TrackPoint(
            x=lerp(self._x_ext),
            y=lerp(self._y_ext),
            psi=psi,
            kappa=lerp(self._kappa_ext),
            d_left=lerp(self._dl_ext),
            d_right=lerp(self._dr_ext),
            v_ref=lerp(self._vref_ext),
        )
        if scalar:
            return TrackPoint(*(float(v) for v in (pt.x, pt.y, pt.psi, pt.kappa, pt.d_left, pt.d_right, pt.v_ref)))
        return pt

    def curvature_slope(self, s):
        """d(kappa)/ds of the linear interpolant (piecewise constant)."""
        sq = np.asarray(s, dtype=float)
        i, _ = self._segments(self.wrap_s(sq))
        out = self._dkap_ds[i]
        return float(out) if sq.ndim == 0 else out

    # -- Frenet transforms -------------------------------------------------

    def frenet_to_cartesian(self, pose: FrenetPose):
        """Map a Frenet pose to Cartesian (x, y, psi).

        Raises GeometryError when |n| reaches 0.99/|kappa| (offset would fold
        over the local center of curvature).
        """
        tp = self.sample(pose.s)
        if tp.kappa != 0.0 and abs(pose.n) > 0.99 / abs(tp.kappa):
            raise GeometryError(
                f"lateral offset {pose.n:.3f} m folds over centerline at s={pose.s:.3f} "
                f"(kappa={tp.kappa:.4f})"
            )
        sin_p, cos_p = math.sin(tp.psi), math.cos(tp.psi)
        return (
            tp.x - pose.n * sin_p,
            tp.y + pose.n * cos_p,
            wrap_angle(tp.psi + pose.theta),
        )

    def _tangent_gap(self, s_hat, px, py):
        """g(s) = (p - r(s)) . t_hat(s), derivative, and residual components."""
        sm = float(self.wrap_s(s_hat))
        i, w = self._segments(np.asarray(sm))
        i = int(i)
        rx = self._x_ext[i] + w * (self._x_ext[i + 1] - self._x_ext[i])
        ry = self._y_ext[i] + w * (self._y_ext[i + 1] - self._y_ext[i])
        psi = self._psi_ext[i] + w * (self._psi_ext[i + 1] - self._psi_ext[i])
        tx, ty = math.cos(psi), math.sin(psi)
        gx, gy = px - rx, py - ry
        g = gx * tx + gy * ty
        dg = -(self._dx_ds[i] * tx + self._dy_ds[i] * ty) + (gx * -ty + gy * tx) * self._dpsi_ds[i]
        return g, dg, gx, gy, psi

    def cartesian_to_frenet(self, x, y, psi, hint_s=None, window=20.0) -> FrenetPose:
        """Project a Cartesian pose onto the raceline.

        The projection is the arc length where the residual to the centerline
        is perpendicular to the interpolated heading, found by Newton
        iteration seeded either at ``hint_s`` or at the nearest waypoint
        within ``window`` meters of ``hint_s`` (whole track when no hint).
        """
        if hint_s is None:
            cand = np.arange(len(self.s))
        else:
            hint_w = float(self.wrap_s(hint_s))
            d = np.abs(self.s - hint_w)
            if self.closed:
                d = np.minimum(d, self.total_length - d)
            cand = np.nonzero(d <= window)[0]
            if cand.size == 0:
                cand = np.array([int(np.argmin(d))])
        dist2 = (self.x[cand] - x) ** 2 + (self.y[cand] - y) ** 2
        k = int(cand[np.argmin(dist2)])
        s_hat = float(self.s[k])
        if hint_s is not None and math.sqrt(float(np.min(dist2))) > window:
            raise ProjectionError(
                f"point ({x:.2f}, {y:.2f}) is farther than {window} m from the track near the hint"
            )

        span = 4.0 * self.mean_spacing
        converged = False
        for _ in range(60):
            g, dg, *_ = self._tangent_gap(s_hat, x, y)
            if dg == 0.0:
                break
            step = -g / dg
            if step > span:
                step = span
            elif step < -span:
                step = -span
            s_hat += step
            if abs(step) < 1e-12 * max(1.0, self.total_length):
                converged = True
                break
        if not converged:
            s_hat = self._bisect_projection(s_hat, x, y)
            if s_hat is None:
                raise ProjectionError(f"projection did not converge near s={self.s[k]:.2f}")

        g, _, gx, gy, psi_c = self._tangent_gap(s_hat, x, y)
        n = -gx * math.sin(psi_c) + gy * math.cos(psi_c)
        return FrenetPose(
            s=float(self.wrap_s(s_hat)),
            n=float(n),
            theta=wrap_angle(psi - psi_c),
        )

    def _bisect_projection(self, s_center, px, py):
        span = 2.0 * self.mean_spacing
        lo, hi = s_center - span, s_center + span
        g_lo, *_ = self._tangent_gap(lo, px, py)
        g_hi, *_ = self._tangent_gap(hi, px, py)
        for _ in range(8):
            if g_lo * g_hi <= 0:
                break
            lo -= span
            hi += span
            g_lo, *_ = self._tangent_gap(lo, px, py)
            g_hi, *_ = self._tangent_gap(hi, px, py)
        else:
            return None
        for _ in range(90):
            mid = 0.5 * (lo + hi)
            g_mid, *_ = self._tangent_gap(mid, px, py)
            if g_lo * g_mid <= 0:
                hi = mid
                g_hi = g_mid
            else:
                lo = mid
                g_lo = g_mid
        return 0.5 * (lo + hi)

    def frenet_path_derivatives(self, s, n, s_dot, n_dot, s_ddot, n_ddot):
        """Cartesian position/velocity/acceleration of a lateral-offset path.

        Derivatives are exact for the piecewise-linear interpolant actually
        used by frenet_to_cartesian (chord tangent and interpolated-heading
        normal), so they agree with finite differences of sampled positions.
        Returns (x, y, xd, yd, xdd, ydd) arrays.
        """
        sq = np.asarray(s, dtype=float)
        sm = self.wrap_s(sq)
        i, w = self._segments(sm)
        rx = self._x_ext[i] + w * (self._x_ext[i + 1] - self._x_ext[i])
        ry = self._y_ext[i] + w * (self._y_ext[i + 1] - self._y_ext[i])
        psi = self._psi_ext[i] + w * (self._psi_ext[i + 1] - self._psi_ext[i])
        rpx, rpy = self._dx_ds[i], self._dy_ds[i]
        psi_p = self._dpsi_ds[i]
        tx, ty = np.cos(psi), np.sin(psi)
        nx, ny = -ty, tx

        x = rx + n * nx
        y = ry + n * ny
        # d(n_hat)/ds = -psi' * t_hat with t_hat the heading tangent.
        vx = (rpx - n * psi_p * tx) * s_dot + n_dot * nx
        vy = (rpy - n * psi_p * ty) * s_dot + n_dot * ny
        ax = (
            (rpx - n * psi_p * tx) * s_ddot
            - (2.0 * n_dot * psi_p * s_dot) * tx
            - n * (psi_p * s_dot) ** 2 * nx
            + n_ddot * nx
        )
        ay = (
            (rpy - n * psi_p * ty) * s_ddot
            - (2.0 * n_dot * psi_p * s_dot) * ty
            - n * (psi_p * s_dot) ** 2 * ny
            + n_ddot * ny
        )
        return x, y, vx, vy, ax, ay


# -- ingestion ---------------------------------------------------------------


def _smooth(values, window, closed):
    if window <= 1:
        return np.asarray(values, dtype=float)
    half = window // 2
    kernel = np.ones(2 * half + 1) / (2 * half + 1)
    if closed:
        padded = np.concatenate([values[-half:], values, values[:half]])
    else:
        padded = np.concatenate([np.repeat(values[0], half), values, np.repeat(values[-1], half)])
    return np.convolve(padded, kernel, mode="valid")


def make_raceline(
    x,
    y,
    d_left,
    d_right,
    v_ref,
    s=None,
    psi=None,
    kappa=None,
    closed=None,
    smooth_window=5,
) -> Raceline:
    """Build a Raceline, deriving s/heading/curvature when not supplied.

    Missing ``s`` is the cumulative chord length.  Missing ``psi``/``kappa``
    are finite differences of the waypoint polyline smoothed with a moving
    average of ``smooth_window`` points.  ``closed=None`` applies a heuristic:
    the track is closed when the endpoints are within two median spacings.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if s is None:
        seg = np.hypot(np.diff(x), np.diff(y))
        s = np.concatenate([[0.0], np.cumsum(seg)])
    else:
        s = np.asarray(s, dtype=float)
        s = s - s[0]

    spacing = np.median(np.diff(s))
    if closed is None:
        closed = math.hypot(x[-1] - x[0], y[-1] - y[0]) <= 2.0 * spacing

    if psi is None or kappa is None:
        if closed:
            k = 3
            close_len = math.hypot(x[0] - x[-1], y[0] - y[-1])
            s_pad = np.concatenate([s[-k:] - (s[-1] + close_len), s, s[:k] + s[-1] + close_len])
            x_pad = np.concatenate([x[-k:], x, x[:k]])
            y_pad = np.concatenate([y[-k:], y, y[:k]])
        else:
            k = 0
            s_pad, x_pad, y_pad = s, x, y
        dx = np.gradient(x_pad, s_pad, edge_order=2)
        dy = np.gradient(y_pad, s_pad, edge_order=2)
        psi_fd = np.unwrap(np.arctan2(dy, dx))
        psi_fd = _smooth(psi_fd, smooth_window, closed=False)
        kappa_fd = np.gradient(psi_fd, s_pad, edge_order=2)
        kappa_fd = _smooth(kappa_fd, smooth_window, closed=False)
        if k:
            psi_fd = psi_fd[k:-k]
            kappa_fd = kappa_fd[k:-k]
        if psi is None:
            psi = psi_fd
        if kappa is None:
            kappa = kappa_fd

    n = len(x)

    def full(value, name):
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            return np.full(n, float(arr))
        if arr.shape != (n,):
            raise ValueError(f"{name} must be scalar or length {n}")
        return arr

    return Raceline(
        s=s,
        x=x,
        y=y,
        psi=np.asarray(psi, dtype=float),
        kappa=np.asarray(kappa, dtype=float),
        d_left=full(d_left, "d_left"),
        d_right=full(d_right, "d_right"),
        v_ref=full(v_ref, "v_ref"),
        closed=bool(closed),
    )


def load_raceline(path, closed=None, smooth_window=5) -> Raceline:
    """Load a raceline from a delimiter-separated text table.

    The first non-empty line is a header of comma-separated column names (an
    optional leading ``#`` is ignored).  Required columns: x_m, y_m, d_left_m,
    d_right_m, v_ref_mps.  Optional: s_m, psi_rad, kappa_1pm (derived when
    absent).  Errors report 1-based line numbers.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    header = None
    rows = []
    row_lines = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        if header is None:
            header = [c.strip().lstrip("#").strip() for c in text.lstrip("#").split(",")]
            continue
        if text.startswith("#"):
            continue
        parts = text.split(",")
        if len(parts) != len(header):
            raise TrackFormatError(
                f"{path.name}:{lineno}: expected {len(header)} fields, got {len(parts)}"
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise TrackFormatError(f"{path.name}:{lineno}: {exc}") from None
        row_lines.append(lineno)
    if header is None or not rows:
        raise TrackFormatError(f"{path.name}: no data rows")
    missing = [c for c in _REQUIRED if c not in header]
    if missing:
        raise TrackFormatError(f"{path.name}: missing required columns {missing}")

    table = np.asarray(rows, dtype=float)
    col = {name: table[:, j] for j, name in enumerate(header)}

    for name in ("d_left_m", "d_right_m"):
        bad = np.nonzero(col[name] <= 0)[0]
        if bad.size:
            raise TrackFormatError(
                f"{path.name}:{row_lines[bad[0]]}: {name} must be positive"
            )
    if "s_m" in col:
        ds = np.diff(col["s_m"])
        bad = np.nonzero(ds <= 0)[0]
        if bad.size:
            raise TrackFormatError(
                f"{path.name}:{row_lines[bad[0] + 1]}: s_m must be strictly increasing"
            )

    try:
        return make_raceline(
            x=col["x_m"],
            y=col["y_m"],
            d_left=col["d_left_m"],
            d_right=col["d_right_m"],
            v_ref=col["v_ref_mps"],
            s=col.get("s_m"),
            psi=col.get("psi_rad"),
            kappa=col.get("kappa_1pm"),
            closed=closed,
            smooth_window=smooth_window,
        )
    except ValueError as exc:
        raise TrackFormatError(f"{path.name}: {exc}") from None


def save_raceline(raceline: Raceline, path):
    """Write a raceline as the full 8-column text table."""
    path = Path(path)
    data = np.column_stack(
        [
            raceline.s,
            raceline.x,
            raceline.y,
            wrap_angle(raceline.psi),
            raceline.kappa,
            raceline.d_left,
            raceline.d_right,
            raceline.v_ref,
        ]
    )
    with path.open("w") as fh:
        fh.write(",".join(COLUMNS) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.9f}" for v in row) + "\n")


# -- synthetic tracks ---------------------------------------------------------


def make_straight(length=50.0, spacing=0.1, half_width=1.2, v_ref=4.0) -> Raceline:
    """Straight open track along +x."""
    s = np.arange(0.0, length + 0.5 * spacing, spacing)
    return make_raceline(
        x=s,
        y=np.zeros_like(s),
        d_left=half_width,
        d_right=half_width,
        v_ref=v_ref,
        s=s,
        psi=np.zeros_like(s),
        kappa=np.zeros_like(s),
        closed=False,
    )


def make_circle(radius=5.0, spacing=0.05, half_width=1.2, v_ref=4.0) -> Raceline:
    """Closed circular track of the given radius, counter-clockwise."""
    total = TWO_PI * radius
    n = int(round(total / spacing))
    s = np.arange(n) * (total / n)
    phi = s / radius
    return make_raceline(
        x=radius * np.cos(phi),
        y=radius * np.sin(phi),
        d_left=half_width,
        d_right=half_width,
        v_ref=v_ref,
        s=s,
        psi=phi + math.pi / 2.0,
        kappa=np.full(n, 1.0 / radius),
        closed=True,
    )


def make_s_curve(length=60.0, amplitude=2.0, wavelength=30.0, spacing=0.05, half_width=1.5, v_ref=4.0) -> Raceline:
    """Open sinusoidal S-curve y = A sin(2 pi x / wavelength) with exact geometry."""
    x = np.arange(0.0, length + 0.5 * spacing, spacing)
    k = TWO_PI / wavelength
    y = amplitude * np.sin(k * x)
    yp = amplitude * k * np.cos(k * x)
    ypp = -amplitude * k * k * np.sin(k * x)
    psi = np.arctan2(yp, np.ones_like(x))
    kappa = ypp / (1.0 + yp**2) ** 1.5
    return make_raceline(
        x=x, y=y, d_left=half_width, d_right=half_width, v_ref=v_ref,
        psi=psi, kappa=kappa, closed=False,
    )


def make_oval_chicane(
    radius=6.0,
    straight=16.0,
    chicane_amp=1.2,
    chicane_len=12.0,
    spacing=0.1,
    half_width=1.2,
    v_cap=4.6,
    a_lat=3.0,
) -> Raceline:
    """Closed stadium oval with a chicane on the return straight.

    The reference speed is curvature-limited (sqrt(a_lat/|kappa|)) capped at
    v_cap and smoothed, which keeps it in a narrow band on this layout.
    """
    dense = spacing / 4.0

    def straight_piece(p0, p1):
        vec = np.asarray(p1) - np.asarray(p0)
        length = float(np.hypot(*vec))
        t = np.arange(0.0, length, dense)
        heading = math.atan2(vec[1], vec[0])
        xs = p0[0] + t * math.cos(heading)
        ys = p0[1] + t * math.sin(heading)
        return xs, ys, np.full_like(t, heading), np.zeros_like(t), t

    def arc_piece(center, r, phi0, phi1):
        arc = r * abs(phi1 - phi0)
        t = np.arange(0.0, arc, dense)
        phi = phi0 + np.sign(phi1 - phi0) * t / r
        xs = center[0] + r * np.cos(phi)
        ys = center[1] + r * np.sin(phi)
        return xs, ys, phi + math.pi / 2.0, np.full_like(t, 1.0 / r), t

    def chicane_piece(x_start, y0, run):
        # Traveling in -x; lateral bump is zero-slope at both ends.
        xi = np.arange(0.0, run, dense)
        start = 0.5 * (run - chicane_len)
        rel = np.clip((xi - start) / chicane_len, 0.0, 1.0)
        b = 0.5 * chicane_amp * (1.0 - np.cos(TWO_PI * rel))
        bp = (math.pi * chicane_amp / chicane_len) * np.sin(TWO_PI * rel)
        bpp = (2.0 * math.pi**2 * chicane_amp / chicane_len**2) * np.cos(TWO_PI * rel)
        mask = (xi >= start) & (xi <= start + chicane_len)
        bp = np.where(mask, bp, 0.0)
        bpp = np.where(mask, bpp, 0.0)
        xs = x_start - xi
        ys = y0 + b
        psi = np.arctan2(bp, -np.ones_like(xi))
        kappa = -bpp / (1.0 + bp**2) ** 1.5
        ds = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(xs), np.diff(ys)))])
        return xs, ys, psi, kappa, ds

    pieces = [
        straight_piece((0.0, 0.0), (straight, 0.0)),
        arc_piece((straight, radius), radius, -math.pi / 2.0, math.pi / 2.0),
        chicane_piece(straight, 2.0 * radius, straight),
        arc_piece((0.0, radius), radius, math.pi / 2.0, 3.0 * math.pi / 2.0),
    ]
    xs, ys, psis, kappas = [], [], [], []
    for px, py, ppsi, pkap, _ in pieces:
        xs.append(px)
        ys.append(py)
        psis.append(np.unwrap(ppsi))
        kappas.append(pkap)
    x_all = np.concatenate(xs)
    y_all = np.concatenate(ys)
    psi_all = np.unwrap(np.concatenate(psis))
    kap_all = np.concatenate(kappas)

    # Recompute exact cumulative arc length over the concatenated samples.
    seg = np.hypot(np.diff(x_all), np.diff(y_all))
    s_all = np.concatenate([[0.0], np.cumsum(seg)])
    close_len = math.hypot(x_all[0] - x_all[-1], y_all[0] - y_all[-1])
    total = s_all[-1] + close_len

    s_grid = np.arange(0.0, total - 0.5 * spacing, spacing)
    x_g = np.interp(s_grid, s_all, x_all)
    y_g = np.interp(s_grid, s_all, y_all)
    psi_g = np.interp(s_grid, s_all, psi_all)
    kap_g = np.interp(s_grid, s_all, kap_all)

    v = np.minimum(v_cap, np.sqrt(a_lat / np.maximum(np.abs(kap_g), 1e-6)))
    v = _smooth(v, 41, closed=True)

    return make_raceline(
        x=x_g, y=y_g, d_left=half_width, d_right=half_width, v_ref=v,
        s=s_grid, psi=psi_g, kappa=kap_g, closed=True,
    )

"""Sliding-window record of the applied input.

Signals are piecewise linear between stored nodes. A repeated timestamp marks a
jump: the first node of the pair carries the left limit, the second the right
limit. This is how the right-continuous controller output u(t) = k(z(t)),
which resets at every sampling instant, is stored without losing the jump.

All windows are left-closed and right-open, ``[t - tau, t)``.
"""

from __future__ import annotations

import csv
import io
import math

import numpy as np

from .errors import CoverageError, ValidationError

_SLOP = 1e-9


def _norms(values):
    # row-wise Euclidean norm, rescaled so tiny entries do not square to zero
    values = np.asarray(values, dtype=float)
    peak = np.max(np.abs(values), axis=-1, keepdims=True)
    safe = np.where(peak > 0, peak, 1.0)
    return peak[..., 0] * np.linalg.norm(values / safe, axis=-1)


class PiecewiseLinearSignal:
    """Immutable piecewise-linear signal on ``[times[0], times[-1]]``."""

    def __init__(self, times, values):
        t = np.ascontiguousarray(times, dtype=float).ravel()
        u = np.asarray(values, dtype=float)
        if u.ndim == 1:
            u = u.reshape(len(t), -1)
        if len(t) < 1 or u.shape[0] != len(t):
            raise ValidationError("times and values must be non-empty and of equal length")
        if np.any(np.diff(t) < 0):
            raise ValidationError("timestamps must be non-decreasing")
        if len(t) > 2 and np.any((t[2:] == t[1:-1]) & (t[1:-1] == t[:-2])):
            raise ValidationError("at most two nodes may share a timestamp")
        self._t = t
        self._u = np.ascontiguousarray(u)
        cells = np.diff(t)[:, None] * (u[1:] + u[:-1]) * 0.5
        self._prefix = np.vstack([np.zeros((1, u.shape[1])), np.cumsum(cells, axis=0)])

    @property
    def times(self):
        return self._t

    @property
    def values(self):
        return self._u

    @property
    def m(self):
        return self._u.shape[1]

    @property
    def start(self):
        return float(self._t[0])

    @property
    def end(self):
        return float(self._t[-1])

    def _check_span(self, a, b):
        scale = max(1.0, abs(self._t[0]), abs(self._t[-1]))
        if a < self._t[0] - _SLOP * scale or b > self._t[-1] + _SLOP * scale:
            raise CoverageError(
                f"range [{a:.12g}, {b:.12g}] outside stored span "
                f"[{self._t[0]:.12g}, {self._t[-1]:.12g}]"
            )

    def value(self, s, side="right"):
        """Interpolated value at ``s`` (scalar or array); ``side`` picks the limit at jumps."""
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        self._check_span(s_arr.min(), s_arr.max())
        s_arr = np.clip(s_arr, self._t[0], self._t[-1])
        out = self._interp(s_arr, left=(side == "left"))
        return out[0] if np.ndim(s) == 0 else out

    def _interp(self, s, left):
        t, u = self._t, self._u
        K = len(t)
        if K == 1:
            return np.repeat(u, len(s), axis=0)
        if left:
            k = np.searchsorted(t, s, side="left") - 1
        else:
            k = np.searchsorted(t, s, side="right") - 1
        k = np.clip(k, 0, K - 2)
        span = t[k + 1] - t[k]
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(span > 0, (s - t[k]) / np.where(span > 0, span, 1.0), 0.0 if left else 1.0)
        w = np.clip(w, 0.0, 1.0)[:, None]
        return u[k] + w * (u[k + 1] - u[k])

    def step_integrals(self, edges):
        """Exact integrals of the signal over consecutive cells ``[edges[i], edges[i+1]]``."""
        e = np.asarray(edges, dtype=float)
        if len(e) < 2:
            return np.zeros((0, self.m))
        self._check_span(e[0], e[-1])
        e = np.clip(e, self._t[0], self._t[-1])
        a, b = e[:-1], e[1:]
        ua = self._interp(a, left=False)
        ub = self._interp(b, left=True)
        t, u = self._t, self._u
        kL = np.searchsorted(t, a, side="right")
        kR = np.searchsorted(t, b, side="left") - 1
        out = (b - a)[:, None] * (ua + ub) * 0.5
        inner = kL <= kR
        if np.any(inner):
            i = np.nonzero(inner)[0]
            l, r = kL[i], kR[i]
            left_part = (t[l] - a[i])[:, None] * (ua[i] + u[l]) * 0.5
            mid = self._prefix[r] - self._prefix[l]
            right_part = (b[i] - t[r])[:, None] * (u[r] + ub[i]) * 0.5
            out[i] = left_part + mid + right_part
        return out

    def integral(self, a, b):
        """Componentwise integral over ``[a, b]``; exact for piecewise-linear data."""
        if b < a:
            raise ValidationError("integral bounds must satisfy a <= b")
        if a == b:
            return np.zeros(self.m)
        return self.step_integrals([a, b])[0]

    def sup_norm(self, a, b):
        """``sup |u(s)|`` over ``[a, b)``; zero for an empty window."""
        self._check_span(a, b)
        if b <= a:
            return 0.0
        t = self._t
        a_c, b_c = max(a, t[0]), min(b, t[-1])
        ends = np.vstack([self._interp(np.array([a_c]), False), self._interp(np.array([b_c]), True)])
        best = float(np.max(_norms(ends)))
        i0 = np.searchsorted(t, a_c, side="right")
        i1 = np.searchsorted(t, b_c, side="left")
        if i1 > i0:
            best = max(best, float(np.max(_norms(self._u[i0:i1]))))
        return best

    def sup_norms(self, query_times, width):
        """Vectorised ``sup_norm(t - width, t)`` for every ``t`` in ``query_times``."""
        q = np.asarray(query_times, dtype=float)
        t = self._t
        norms = _norms(self._u)
        a = np.maximum(q - width, t[0])
        b = np.minimum(q, t[-1])
        ends = np.maximum(_norms(self._interp(a, False)), _norms(self._interp(b, True)))
        i0 = np.searchsorted(t, a, side="right")
        i1 = np.searchsorted(t, b, side="left")
        inner = _range_max(norms, i0, i1)
        out = np.maximum(ends, inner)
        return np.where(b > a, out, 0.0)

    def step_nodes(self, edges):
        """Quadrature nodes for each cell: both cell ends plus interior stored nodes.

        Returns ``(times, values, offsets)``; cell ``i`` owns
        ``times[offsets[i]:offsets[i+1]]``.
        """
        e = np.asarray(edges, dtype=float)
        self._check_span(e[0], e[-1])
        e = np.clip(e, self._t[0], self._t[-1])
        a, b = e[:-1], e[1:]
        t, u = self._t, self._u
        kL = np.searchsorted(t, a, side="right")
        kR = np.searchsorted(t, b, side="left") - 1
        inner = np.maximum(kR - kL + 1, 0)
        counts = inner + 2
        offsets = np.concatenate([[0], np.cumsum(counts)])
        total = int(offsets[-1])
        times = np.empty(total)
        values = np.empty((total, self.m))
        times[offsets[:-1]] = a
        values[offsets[:-1]] = self._interp(a, False)
        times[offsets[1:] - 1] = b
        values[offsets[1:] - 1] = self._interp(b, True)
        if inner.sum():
            cell = np.repeat(np.arange(len(a)), inner)
            rank = np.arange(int(inner.sum())) - np.repeat(np.cumsum(inner) - inner, inner)
            src = kL[cell] + rank
            dst = offsets[cell] + 1 + rank
            times[dst] = t[src]
            values[dst] = u[src]
        return times, values, offsets


def _range_max(arr, lo, hi):
    """max(arr[lo:hi]) per query via a sparse table; -inf for empty ranges."""
    n = len(arr)
    out = np.full(len(lo), -np.inf)
    if n == 0:
        return out
    table = [arr]
    j = 1
    while (1 << j) <= n:
        prev = table[-1]
        half = 1 << (j - 1)
        table.append(np.maximum(prev[:-half], prev[half:]))
        j += 1
    ok = hi > lo
    if not np.any(ok):
        return out
    l, h = lo[ok], hi[ok]
    length = h - l
    level = np.floor(np.log2(length)).astype(int)
    res = np.empty(len(l))
    for lev in np.unique(level):
        sel = level == lev
        tab = table[lev]
        res[sel] = np.maximum(tab[l[sel]], tab[h[sel] - (1 << lev)])
    out[ok] = res
    return out


class InputWindow(PiecewiseLinearSignal):
    """A history window re-based to ``[0, tau)`` (the shift used by the predictor)."""

    def __init__(self, times, values, tau):
        super().__init__(times, values)
        self.tau = float(tau)
        if abs(self._t[0]) > 1e-12 or abs(self._t[-1] - self.tau) > 1e-9 * max(1.0, self.tau):
            raise ValidationError("window nodes must span [0, tau]")
        self._t[0] = 0.0
        self._t[-1] = self.tau

    @property
    def norm(self):
        """``sup |u|`` over ``[0, tau)``."""
        return self.sup_norm(0.0, self.tau)

    @classmethod
    def from_function(cls, fn, tau, samples):
        t = np.linspace(0.0, tau, samples + 1)
        vals = np.array([np.atleast_1d(fn(s)) for s in t], dtype=float)
        return cls(t, vals, tau)


class InputHistory:
    """Mutable record of the applied input with eviction past a retention horizon.

    Single writer: the simulator appends, readers query between writes.
    Queries never look further back than ``retention`` seconds before the
    newest node.
    """

    def __init__(self, tau, m, dt_rec, retention=None):
        if not tau > 0:
            raise ValidationError("tau must be positive")
        if not dt_rec > 0:
            raise ValidationError("dt_rec must be positive")
        self.tau = float(tau)
        self.m = int(m)
        self.dt_rec = float(dt_rec)
        self.retention = float(retention) if retention is not None else 2.0 * self.tau
        if self.retention < self.tau:
            raise ValidationError("retention horizon must be at least tau")
        self._t = np.empty(256)
        self._u = np.empty((256, self.m))
        self._lo = 0
        self._hi = 0
        self._cache = None

    @classmethod
    def constant(cls, tau, value, dt_rec=None, retention=None):
        """History preloaded with a constant input on ``[-tau, 0)``."""
        value = np.atleast_1d(np.asarray(value, dtype=float))
        dt_rec = dt_rec or tau / 1000.0
        hist = cls(tau, len(value), dt_rec, retention)
        hist.preload(lambda s: value)
        return hist

    def preload(self, fn):
        """Record ``fn`` sampled at ``dt_rec`` on ``[-tau, 0]`` into an empty history."""
        if self._hi > self._lo:
            raise ValidationError("preload requires an empty history")
        count = max(1, int(math.ceil(self.tau / self.dt_rec - 1e-9)))
        ts = np.linspace(-self.tau, 0.0, count + 1)
        samples = [(float(s), np.atleast_1d(fn(s))) for s in ts]
        self.record(-self.tau, 0.0, samples)

    # -- writing ---------------------------------------------------------
    def _push(self, t, u):
        if self._hi == len(self._t):
            live = self._hi - self._lo
            if self._lo > len(self._t) // 2:
                self._t[:live] = self._t[self._lo:self._hi]
                self._u[:live] = self._u[self._lo:self._hi]
            else:
                t_new = np.empty(2 * len(self._t))
                u_new = np.empty((2 * len(self._t), self.m))
                t_new[:live] = self._t[self._lo:self._hi]
                u_new[:live] = self._u[self._lo:self._hi]
                self._t, self._u = t_new, u_new
            self._lo, self._hi = 0, live
        self._t[self._hi] = t
        self._u[self._hi] = u
        self._hi += 1
        self._cache = None

    def _vec(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.shape != (self.m,):
            raise ValidationError(f"input sample must have length {self.m}, got {u.shape}")
        return u

    @property
    def empty(self):
        return self._hi == self._lo

    @property
    def end(self):
        if self.empty:
            raise CoverageError("history is empty")
        return float(self._t[self._hi - 1])

    @property
    def start(self):
        if self.empty:
            raise CoverageError("history is empty")
        return float(self._t[self._lo])

    def start_segment(self, t, u):
        """Open a new segment at the current end; ``u`` is the right limit (a jump is allowed)."""
        if not self.empty and abs(t - self.end) > _SLOP * max(1.0, abs(t)):
            raise ValidationError(f"segment start {t!r} does not meet record end {self.end!r}")
        t = t if self.empty else self.end
        self._push(t, self._vec(u))

    def append(self, t, u):
        """Continue the current segment with a later node."""
        if self.empty:
            raise ValidationError("append on an empty history; call start_segment first")
        if not t > self.end:
            raise ValidationError(f"timestamps must increase: {t!r} <= {self.end!r}")
        if t - self.end > self.dt_rec * (1 + 1e-6):
            raise ValidationError(
                f"gap of {t - self.end:.3g} s exceeds recording resolution {self.dt_rec:.3g} s"
            )
        self._push(t, self._vec(u))
        self._evict()

    def record(self, t0, t1, samples):
        """Append ``samples`` (``(time, value)`` pairs spanning ``[t0, t1]``) as a new segment."""
        samples = list(samples)
        if len(samples) < 2:
            raise ValidationError("a segment needs at least two samples")
        if not self.empty and abs(t0 - self.end) > _SLOP * max(1.0, abs(t0)):
            kind = "gap" if t0 > self.end else "overlap"
            raise ValidationError(f"{kind} between record end {self.end!r} and new segment at {t0!r}")
        if abs(samples[0][0] - t0) > _SLOP * max(1.0, abs(t0)) or abs(samples[-1][0] - t1) > _SLOP * max(1.0, abs(t1)):
            raise ValidationError("samples must start at t0 and end at t1")
        self.start_segment(t0, samples[0][1])
        times = np.array([float(s) for s, _ in samples[1:]])
        values = np.array([self._vec(u) for _, u in samples[1:]]).reshape(len(times), self.m)
        self._extend(times, values)
        return self

    def _extend(self, times, values):
        gaps = np.diff(np.concatenate([[self.end], times]))
        if np.any(gaps <= 0):
            raise ValidationError("timestamps must increase within a segment")
        if np.any(gaps > self.dt_rec * (1 + 1e-6)):
            raise ValidationError(
                f"gap of {gaps.max():.3g} s exceeds recording resolution {self.dt_rec:.3g} s"
            )
        need = self._hi + len(times)
        if need > len(self._t):
            live = self._hi - self._lo
            cap = max(2 * len(self._t), 2 * (live + len(times)))
            t_new, u_new = np.empty(cap), np.empty((cap, self.m))
            t_new[:live] = self._t[self._lo:self._hi]
            u_new[:live] = self._u[self._lo:self._hi]
            self._t, self._u = t_new, u_new
            self._lo, self._hi = 0, live
        self._t[self._hi:self._hi + len(times)] = times
        self._u[self._hi:self._hi + len(times)] = values
        self._hi += len(times)
        self._cache = None
        self._evict()

    def _evict(self):
        cutoff = self.end - self.retention
        if self._t[self._lo] >= cutoff:
            return
        view = self._t[self._lo:self._hi]
        k = int(np.searchsorted(view, cutoff, side="right")) - 1
        if k > 0:
            # keep a jump pair intact
            if k >= 1 and view[k - 1] == view[k]:
                k -= 1
            if k > 0:
                self._lo += k
                self._cache = None

    # -- reading ---------------------------------------------------------
    def signal(self):
        """Immutable snapshot of everything currently stored."""
        if self.empty:
            raise CoverageError("history is empty")
        if self._cache is None:
            self._cache = PiecewiseLinearSignal(
                self._t[self._lo:self._hi].copy(), self._u[self._lo:self._hi].copy()
            )
        return self._cache

    def value_at(self, s, side="right"):
        return self.signal().value(s, side)

    def integral(self, a, b):
        return self.signal().integral(a, b)

    def sup_norm_window(self, t):
        """``sup |u(s)|`` for ``s`` in ``[t - tau, t)``."""
        return self.signal().sup_norm(t - self.tau, t)

    def window(self, t):
        """Window ``[t - tau, t)`` re-based to ``[0, tau)``."""
        sig = self.signal()
        a = t - self.tau
        sig._check_span(a, t)
        ts, us = sig.times, sig.values
        i0 = np.searchsorted(ts, a, side="right")
        i1 = np.searchsorted(ts, t, side="left")
        times = np.concatenate([[a], ts[i0:i1], [t]]) - a
        values = np.vstack([sig.value(a, "right")[None, :], us[i0:i1], sig.value(t, "left")[None, :]])
        return InputWindow(times, values, self.tau)

    def nodes(self):
        return self._t[self._lo:self._hi].copy(), self._u[self._lo:self._hi].copy()

    # -- serialisation ---------------------------------------------------
    def to_csv(self, path=None):
        t, u = self.nodes()
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time"] + [f"u_{j + 1}" for j in range(self.m)])
        for ti, ui in zip(t, u):
            w.writerow([repr(float(ti))] + [repr(float(v)) for v in ui])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source, tau, dt_rec=None, retention=None):
        """Rebuild a history from ``to_csv`` output (path or text)."""
        if isinstance(source, str) and "\n" not in source:
            with open(source, newline="") as fh:
                source = fh.read()
        rows = list(csv.reader(io.StringIO(source)))
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        t, u = data[:, 0], data[:, 1:]
        if dt_rec is None:
            gaps = np.diff(t)
            dt_rec = float(gaps[gaps > 0].max()) if np.any(gaps > 0) else tau
        hist = cls(tau, u.shape[1], dt_rec, retention if retention is not None else max(2 * tau, t[-1] - t[0]))
        start = 0
        for i in range(1, len(t) + 1):
            if i == len(t) or t[i] == t[i - 1]:
                seg = list(zip(t[start:i], u[start:i]))
                if len(seg) == 1:
                    hist.start_segment(float(seg[0][0]), seg[0][1])
                else:
                    hist.record(float(seg[0][0]), float(seg[-1][0]), seg)
                start = i
        return hist

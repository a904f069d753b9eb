"""Gradient-angle traces, loss curves, PCA loss landscapes and their files."""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

import numpy as np

# returned by cosine() when either vector is (numerically) zero
COSINE_SENTINEL = float("nan")
ZERO_NORM = 1e-12


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu < ZERO_NORM or nv < ZERO_NORM:
        return COSINE_SENTINEL
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True)
class StepRecord:
    run_id: int
    seed: int
    mode: str
    t: int
    beta_t: float
    energies: tuple
    grad_norms: tuple
    cos_raw: float
    cos_terms: float
    combined_norm: float
    state_norm: float
    cagrad_warning: bool = False


def trace_columns(n_conditions: int) -> list[str]:
    return (["run_id", "seed", "mode", "t", "beta_t"]
            + [f"energy_{i}" for i in range(n_conditions)]
            + [f"gradnorm_{i}" for i in range(n_conditions)]
            + ["cos_raw", "cos_terms", "combined_norm", "state_norm", "cagrad_warning"])


def fmt(v) -> str:
    """Floats with 17 significant digits; everything else via str()."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def record_row(rec: StepRecord) -> list:
    return ([rec.run_id, rec.seed, rec.mode, rec.t, rec.beta_t] + list(rec.energies)
            + list(rec.grad_norms)
            + [rec.cos_raw, rec.cos_terms, rec.combined_norm, rec.state_norm, rec.cagrad_warning])


def _write_text(path: str, text: str) -> None:
    try:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    _write_text(path, csv_text(header, rows))


def emit_trace_csv(records: Sequence[StepRecord], path: str, n_conditions: int | None = None) -> None:
    if n_conditions is None:
        n_conditions = len(records[0].energies) if records else 0
    write_csv(path, trace_columns(n_conditions), (record_row(r) for r in records))


# -- PCA ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LandscapeGrid:
    directions: np.ndarray          # (2, d), orthonormal rows
    explained: np.ndarray           # (2,) explained-variance ratios
    center: np.ndarray = None       # (d,) grid origin
    a: np.ndarray = None            # (na,) coordinates along directions[0]
    b: np.ndarray = None            # (nb,) coordinates along directions[1]
    energy: np.ndarray = None       # (na, nb)
    t: int = 0

    def embed(self, a: float, b: float) -> np.ndarray:
        return self.center + a * self.directions[0] + b * self.directions[1]

    def project(self, x) -> tuple[float, float]:
        d = np.asarray(x, dtype=float) - self.center
        return float(d @ self.directions[0]), float(d @ self.directions[1])


def _power_iteration(cov, start, max_iter, tol):
    v = start / np.linalg.norm(start)
    lam = float(v @ cov @ v)
    for _ in range(max_iter):
        w = cov @ v
        nw = float(np.linalg.norm(w))
        if nw < 1e-300:
            return v, 0.0, False
        w = w / nw
        if w @ v < 0:
            w = -w
        delta = float(np.linalg.norm(w - v))
        v = w
        lam = float(v @ cov @ v)
        if delta < tol:
            break
    return v, lam, True


def pca_project(points, k: int = 2, seed: int = 0, max_iter: int = 100, tol: float = 1e-9) -> LandscapeGrid:
    """Top-k principal directions by power iteration with deflation."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] < 2:
        raise ValueError(f"PCA needs >= 3 points of dimension >= 2, got shape {pts.shape}")
    d = pts.shape[1]
    center = pts.mean(axis=0)
    cov = (pts - center).T @ (pts - center) / (pts.shape[0] - 1)
    total = float(np.trace(cov))
    rng = np.random.default_rng(seed)
    deflated = cov.copy()
    dirs, lams = [], []
    for comp in range(k):
        start = np.zeros(d)
        start[0] = 1.0
        for prev in dirs:
            start -= (start @ prev) * prev
        if np.linalg.norm(start) < 1e-8:
            start = rng.standard_normal(d)
        v, lam, ok = _power_iteration(deflated, start, max_iter, tol)
        if not ok or lam <= 1e-12 * max(total, 1e-300):
            # stagnated: retry from a seeded random start
            v, lam, ok = _power_iteration(deflated, rng.standard_normal(d), max_iter, tol)
        for prev in dirs:
            v = v - (v @ prev) * prev
        nv = np.linalg.norm(v)
        if nv < 1e-8:
            v = rng.standard_normal(d)
            for prev in dirs:
                v = v - (v @ prev) * prev
            nv = np.linalg.norm(v)
        v = v / nv
        lam = max(float(v @ cov @ v), 0.0) if ok else 0.0
        if lam <= 1e-12 * max(total, 1e-300):
            lam = 0.0
        dirs.append(v)
        lams.append(lam)
        deflated = deflated - lam * np.outer(v, v)
    explained = np.array(lams) / total if total > 0 else np.zeros(k)
    return LandscapeGrid(directions=np.stack(dirs), explained=explained, center=center)


def landscape_scan(mixture, conds, t: int, schedule, n_samples: int = 2000, grid=(41, 41, 3.0),
                   seed: int = 0) -> LandscapeGrid:
    """Total condition energy on a PCA plane through samples of the diffused marginal.

    ``grid`` is (na, nb, extent) with extent in standard deviations along
    each principal direction.
    """
    from .condition import energy_value

    if n_samples < 100:
        raise ValueError(f"landscape needs at least 100 samples, got {n_samples}")
    na, nb, extent = grid
    rng = np.random.Generator(np.random.Philox(seed))
    marginal = mixture.diffused(schedule.alpha_bar(t))
    pts = marginal.sample(n_samples, rng)
    pca = pca_project(pts, 2, seed=seed)
    cov = np.cov(pts.T)
    spread = [math.sqrt(max(float(v @ cov @ v), 0.0)) for v in pca.directions]
    a = np.linspace(-extent * spread[0], extent * spread[0], na)
    b = np.linspace(-extent * spread[1], extent * spread[1], nb)
    energy = np.zeros((na, nb))
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            x = pca.center + ai * pca.directions[0] + bj * pca.directions[1]
            energy[i, j] = sum(energy_value(c, x, t, mixture, schedule) for c in conds)
    return LandscapeGrid(pca.directions, pca.explained, pca.center, a, b, energy, t)


def emit_landscape_csv(grid: LandscapeGrid, path: str) -> None:
    rows = ((ai, bj, grid.energy[i, j]) for i, ai in enumerate(grid.a) for j, bj in enumerate(grid.b))
    write_csv(path, ["a", "b", "energy"], rows)


# -- SVG --------------------------------------------------------------------------

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"]
# viridis anchor colours for the heatmap
_CMAP = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]], dtype=float)


def _c(v: float) -> str:
    return f"{v:.2f}"


def _colour(u: float) -> str:
    u = min(max(u, 0.0), 1.0) * (len(_CMAP) - 1)
    i = min(int(u), len(_CMAP) - 2)
    rgb = _CMAP[i] + (u - i) * (_CMAP[i + 1] - _CMAP[i])
    return "#%02x%02x%02x" % tuple(int(round(c)) for c in rgb)


def _svg(width, height, body) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n' + "".join(body) + "</svg>\n")


def line_plot_svg(series: dict, title: str = "", xlabel: str = "t", ylabel: str = "",
                  width: int = 640, height: int = 400, reverse_x: bool = True) -> str:
    """Polyline chart; ``series`` maps label -> (xs, ys). Non-finite points are skipped."""
    left, right, top, bottom = 70, 150, 30, 45
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys if np.isfinite(y)]
    body = [f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-size="13">{escape(str(title))}</text>\n']
    if not xs_all or not ys_all:
        return _svg(width, height, body)
    x0, x1 = min(xs_all), max(xs_all)
    y0, y1 = min(ys_all), max(ys_all)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        u = (x - x0) / (x1 - x0)
        return left + (1 - u if reverse_x else u) * pw

    def py(y):
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    body.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>\n')
    for k in range(5):
        yv = y0 + k * (y1 - y0) / 4
        body.append(f'<text x="{left - 5}" y="{_c(py(yv) + 4)}" text-anchor="end" font-size="10">{yv:.3g}</text>\n')
        xv = x0 + k * (x1 - x0) / 4
        body.append(f'<text x="{_c(px(xv))}" y="{top + ph + 15}" text-anchor="middle" font-size="10">{xv:.3g}</text>\n')
    body.append(f'<text x="{left + pw / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="11">{escape(str(xlabel))}</text>\n')
    body.append(f'<text x="14" y="{top + ph / 2:.0f}" text-anchor="middle" font-size="11" '
                f'transform="rotate(-90 14 {top + ph / 2:.0f})">{escape(str(ylabel))}</text>\n')
    for n, (label, (xs, ys)) in enumerate(series.items()):
        colour = _PALETTE[n % len(_PALETTE)]
        pts = " ".join(f"{_c(px(x))},{_c(py(y))}" for x, y in zip(xs, ys) if np.isfinite(y))
        body.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>\n')
        ly = top + 14 * (n + 1)
        body.append(f'<line x1="{width - right + 10}" y1="{ly}" x2="{width - right + 30}" y2="{ly}" '
                    f'stroke="{colour}" stroke-width="2"/>\n')
        body.append(f'<text x="{width - right + 35}" y="{ly + 4}" font-size="10">{escape(str(label))}</text>\n')
    return _svg(width, height, body)


def heatmap_svg(grid: LandscapeGrid, paths: dict | None = None, title: str = "",
                cell: int = 10) -> str:
    """Colour-mapped energy grid; optional projected trajectories drawn on top."""
    na, nb = grid.energy.shape
    margin = 40
    width, height = na * cell + 2 * margin + 120, nb * cell + 2 * margin
    finite = grid.energy[np.isfinite(grid.energy)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    body = [f'<text x="{margin}" y="20" font-size="13">{escape(str(title))}</text>\n']
    for i in range(na):
        for j in range(nb):
            colour = _colour((grid.energy[i, j] - lo) / span)
            body.append(f'<rect x="{margin + i * cell}" y="{margin + (nb - 1 - j) * cell}" '
                        f'width="{cell}" height="{cell}" fill="{colour}"/>\n')
    a0, a1, b0, b1 = grid.a[0], grid.a[-1], grid.b[0], grid.b[-1]

    def px(a):
        return margin + cell / 2 + (a - a0) / (a1 - a0) * (na - 1) * cell

    def py(b):
        return margin + cell / 2 + (1 - (b - b0) / (b1 - b0)) * (nb - 1) * cell

    for n, (label, pts) in enumerate((paths or {}).items()):
        colour = _PALETTE[(n + 1) % len(_PALETTE)]
        coords = " ".join(f"{_c(px(a))},{_c(py(b))}" for a, b in pts)
        body.append(f'<polyline fill="none" stroke="{colour}" stroke-width="2" points="{coords}"/>\n')
        ly = margin + 14 * (n + 1)
        body.append(f'<line x1="{width - 115}" y1="{ly}" x2="{width - 95}" y2="{ly}" stroke="{colour}" stroke-width="2"/>\n')
        body.append(f'<text x="{width - 90}" y="{ly + 4}" font-size="10">{escape(str(label))}</text>\n')
    body.append(f'<text x="{margin}" y="{height - 10}" font-size="10">energy range [{lo:.4g}, {hi:.4g}], '
                f'explained variance {grid.explained[0]:.3f} / {grid.explained[1]:.3f}</text>\n')
    return _svg(width, height, body)


def write_svg(path: str, text: str) -> None:
    _write_text(path, text)

"""Diagnostics and artifact generation.

Streamline tracing turns the per-element orientation field into tow-path
style curves; principal stress directions support the classic alignment
check; SVG/CSV/VTK writers keep every output byte-deterministic so repeated
runs can be diffed directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .fem import ElementKernel, FemSolution
from .material import OrthotropicLaw, cx
from .mesh import StructuredGrid
from .orientation import DesignState


# ---------------------------------------------------------------------------
# streamlines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Streamline:
    points: np.ndarray           # (k, 2)
    reason: str                  # boundary | proximity | max-length


class _FieldSampler:
    """Bilinear sampling of a per-element vector field between centroids.

    Inactive cells carry zero weight so the interpolant clamps naturally at
    mask boundaries; a query whose four surrounding centroids are all
    inactive returns None.
    """

    def __init__(self, grid: StructuredGrid, m: np.ndarray, n: np.ndarray):
        self.grid = grid
        full = np.zeros((2, grid.ny * grid.nx))
        full[0, grid.active_ids] = m
        full[1, grid.active_ids] = n
        self.mfull = full[0].reshape(grid.ny, grid.nx)
        self.nfull = full[1].reshape(grid.ny, grid.nx)
        self.act = grid.active.reshape(grid.ny, grid.nx).astype(float)

    def inside(self, p) -> bool:
        g = self.grid
        i = int(p[0] // g.hx)
        j = int(p[1] // g.hy)
        if p[0] < 0 or p[1] < 0 or i >= g.nx or j >= g.ny:
            return False
        return bool(self.act[j, i])

    def direction(self, p) -> Optional[np.ndarray]:
        g = self.grid
        u = p[0] / g.hx - 0.5
        v = p[1] / g.hy - 0.5
        i0 = int(np.clip(np.floor(u), 0, g.nx - 1))
        j0 = int(np.clip(np.floor(v), 0, g.ny - 1))
        i1 = min(i0 + 1, g.nx - 1)
        j1 = min(j0 + 1, g.ny - 1)
        fu = float(np.clip(u - i0, 0.0, 1.0))
        fv = float(np.clip(v - j0, 0.0, 1.0))
        w = np.array([(1 - fu) * (1 - fv), fu * (1 - fv),
                      (1 - fu) * fv, fu * fv])
        jj = (j0, j0, j1, j1)
        ii = (i0, i1, i0, i1)
        w = w * np.array([self.act[a, b] for a, b in zip(jj, ii)])
        ws = w.sum()
        if ws < 1e-12:
            return None
        vec = np.array([
            sum(wk * self.mfull[a, b] for wk, a, b in zip(w, jj, ii)),
            sum(wk * self.nfull[a, b] for wk, a, b in zip(w, jj, ii)),
        ]) / ws
        nv = np.hypot(vec[0], vec[1])
        if nv < 1e-12:
            return None
        return vec / nv


def _trace_half(sampler: _FieldSampler, seed: np.ndarray, sign: float,
                step: float, other_pts: Optional[cKDTree], min_dist: float,
                max_steps: int):
    """Integrate one direction with a fixed-step midpoint rule.

    The field is a line field: each sampled vector is flipped to align with
    the previous step so traces never double back at sign changes.
    """
    pts = [seed.copy()]
    d_prev = sampler.direction(seed)
    if d_prev is None:
        return pts, "boundary"
    d_prev = sign * d_prev
    p = seed.copy()
    for _ in range(max_steps):
        v1 = sampler.direction(p)
        if v1 is None:
            return pts, "boundary"
        if np.dot(v1, d_prev) < 0:
            v1 = -v1
        mid = p + 0.5 * step * v1
        v2 = sampler.direction(mid)
        if v2 is None:
            return pts, "boundary"
        if np.dot(v2, v1) < 0:
            v2 = -v2
        p_new = p + step * v2
        if not sampler.inside(p_new):
            return pts, "boundary"
        if other_pts is not None and other_pts.query(p_new)[0] < min_dist:
            return pts, "proximity"
        pts.append(p_new)
        p = p_new
        d_prev = v2
    return pts, "max-length"


def trace_streamlines(grid: StructuredGrid, m: np.ndarray, n: np.ndarray,
                      separation: float, max_lines: int = 200) -> List[Streamline]:
    """Near-evenly spaced streamlines of the directionless field (m, n).

    Seeds are chosen farthest-point style: each new line starts at the
    active centroid farthest from everything traced so far, until no
    centroid is at least ``separation`` away.
    """
    if separation < max(grid.hx, grid.hy) / 2:
        raise ValueError("separation must be at least half a cell")
    sampler = _FieldSampler(grid, m, n)
    step = min(grid.hx, grid.hy) / 2.0
    max_steps = int(4 * (grid.nx * grid.hx + grid.ny * grid.hy) / step)
    cent = grid.centroids()
    lines: List[Streamline] = []
    accepted: List[np.ndarray] = []

    center = cent.mean(axis=0)
    while len(lines) < max_lines:
        if not accepted:
            seed = cent[int(np.argmin(np.linalg.norm(cent - center, axis=1)))]
        else:
            tree = cKDTree(np.vstack(accepted))
            d, _ = tree.query(cent)
            k = int(np.argmax(d))
            if d[k] < separation:
                break
            seed = cent[k]
        tree = cKDTree(np.vstack(accepted)) if accepted else None
        fwd, reason_f = _trace_half(sampler, seed, +1.0, step, tree,
                                    separation / 2, max_steps)
        bwd, reason_b = _trace_half(sampler, seed, -1.0, step, tree,
                                    separation / 2, max_steps)
        pts = np.vstack([np.array(bwd[::-1]), np.array(fwd[1:])]) \
            if len(fwd) > 1 else np.array(bwd[::-1])
        reason = "max-length" if "max-length" in (reason_f, reason_b) else reason_f
        if len(pts) >= 3:
            lines.append(Streamline(points=pts, reason=reason))
            accepted.extend(list(pts))
        else:
            # blocked seed: mark it so farthest-point search moves on
            accepted.append(seed)
    return lines


# ---------------------------------------------------------------------------
# principal stress directions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PrincipalDirections:
    directions: np.ndarray       # (n_e, 2, 2): [:, 0] major, [:, 1] minor
    magnitudes: np.ndarray       # (n_e, 2) signed, major first


def principal_directions(grid: StructuredGrid, solution: FemSolution,
                         m: np.ndarray, n: np.ndarray,
                         law: OrthotropicLaw) -> PrincipalDirections:
    """Element-center principal stresses from the oriented material law."""
    kernel = ElementKernel(grid.hx, grid.hy)
    b = kernel.b_center()
    ue = solution.u[grid.element_dofs]
    strain = ue @ b.T                                   # (n_e, 3)
    c_all = cx(law, np.asarray(m), np.asarray(n))
    sig = np.einsum("eab,eb->ea", c_all, strain)        # (s11, s22, s12)
    tensors = np.empty((sig.shape[0], 2, 2))
    tensors[:, 0, 0] = sig[:, 0]
    tensors[:, 1, 1] = sig[:, 1]
    tensors[:, 0, 1] = tensors[:, 1, 0] = sig[:, 2]
    w, v = np.linalg.eigh(tensors)                      # ascending eigenvalues
    mags = w[:, ::-1]
    dirs = v[:, :, ::-1].transpose(0, 2, 1)             # rows are directions
    return PrincipalDirections(directions=dirs, magnitudes=mags)


# ---------------------------------------------------------------------------
# SVG rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Heatmap:
    values: np.ndarray
    label: str = ""
    vmin: Optional[float] = None
    vmax: Optional[float] = None


@dataclass(frozen=True)
class OrientationGlyphs:
    m: np.ndarray
    n: np.ndarray
    color: str = "#1a1a1a"


@dataclass(frozen=True)
class StreamlinePaths:
    lines: Sequence[Streamline]
    color: str = "#00335c"


@dataclass(frozen=True)
class PrincipalGlyphs:
    principal: PrincipalDirections
    tensile_color: str = "#c22a1e"
    compressive_color: str = "#1e50c2"


_VIRIDIS = np.array([[0.267, 0.005, 0.329],
                     [0.128, 0.567, 0.551],
                     [0.993, 0.906, 0.144]])


def _colormap(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    seg = np.clip(t * 2.0, 0.0, 2.0)
    lo = np.minimum(seg.astype(int), 1)
    f = seg - lo
    return _VIRIDIS[lo] * (1 - f)[:, None] + _VIRIDIS[lo + 1] * f[:, None]


def _hex(rgb_row) -> str:
    r, g, b = (int(round(255 * c)) for c in rgb_row)
    return f"#{r:02x}{g:02x}{b:02x}"


def _fmt(v: float) -> str:
    return repr(float(v))


def render(grid: StructuredGrid, layers: Sequence = (), title: str = "",
           width_px: int = 800) -> str:
    """Compose layers into a standalone deterministic SVG document."""
    w = grid.nx * grid.hx
    h = grid.ny * grid.hy
    height_px = max(1, int(round(width_px * h / w)))
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width_px}" '
        f'height="{height_px}" viewBox="0 0 {_fmt(w)} {_fmt(h)}">',
    ]
    if title:
        out.append(f"<!-- {title} -->")
    cent = grid.centroids()
    ids = grid.active_ids
    xs = (ids % grid.nx) * grid.hx
    ys = (ids // grid.nx) * grid.hy

    def flip(y):
        return h - y

    for layer in layers:
        if isinstance(layer, Heatmap):
            vmin = layer.vmin if layer.vmin is not None else float(layer.values.min())
            vmax = layer.vmax if layer.vmax is not None else float(layer.values.max())
            span = vmax - vmin if vmax > vmin else 1.0
            colors = _colormap((layer.values - vmin) / span)
            out.append(f'<!-- heatmap "{layer.label}" scale {_fmt(vmin)} .. {_fmt(vmax)} -->')
            out.append('<g stroke="none">')
            for k in range(ids.size):
                out.append(
                    f'<rect x="{_fmt(xs[k])}" y="{_fmt(flip(ys[k]) - grid.hy)}" '
                    f'width="{_fmt(grid.hx)}" height="{_fmt(grid.hy)}" '
                    f'fill="{_hex(colors[k])}"/>')
            out.append("</g>")
        elif isinstance(layer, OrientationGlyphs):
            half = 0.4 * min(grid.hx, grid.hy)
            out.append(f'<g stroke="{layer.color}" stroke-width="{_fmt(0.1 * half)}">')
            for k in range(ids.size):
                dx, dy = half * layer.m[k], half * layer.n[k]
                out.append(
                    f'<line x1="{_fmt(cent[k, 0] - dx)}" y1="{_fmt(flip(cent[k, 1] - dy))}" '
                    f'x2="{_fmt(cent[k, 0] + dx)}" y2="{_fmt(flip(cent[k, 1] + dy))}"/>')
            out.append("</g>")
        elif isinstance(layer, StreamlinePaths):
            out.append(f'<g fill="none" stroke="{layer.color}" '
                       f'stroke-width="{_fmt(0.15 * min(grid.hx, grid.hy))}">')
            for line in layer.lines:
                coords = " ".join(f"{_fmt(p[0])},{_fmt(flip(p[1]))}" for p in line.points)
                out.append(f'<polyline points="{coords}"/>')
            out.append("</g>")
        elif isinstance(layer, PrincipalGlyphs):
            half = 0.4 * min(grid.hx, grid.hy)
            mags = layer.principal.magnitudes
            dirs = layer.principal.directions
            norm = max(float(np.abs(mags).max()), 1e-30)
            out.append(f'<g stroke-width="{_fmt(0.08 * half)}">')
            for k in range(ids.size):
                for which in (0, 1):
                    mag = mags[k, which]
                    color = (layer.tensile_color if mag >= 0
                             else layer.compressive_color)
                    ln = half * abs(mag) / norm
                    dx, dy = ln * dirs[k, which, 0], ln * dirs[k, which, 1]
                    out.append(
                        f'<line stroke="{color}" x1="{_fmt(cent[k, 0] - dx)}" '
                        f'y1="{_fmt(flip(cent[k, 1] - dy))}" '
                        f'x2="{_fmt(cent[k, 0] + dx)}" y2="{_fmt(flip(cent[k, 1] + dy))}"/>')
            out.append("</g>")
        else:
            raise TypeError(f"unknown layer type {type(layer).__name__}")

    # active-domain outline: edges between active cells and anything else
    segs = []
    act = grid.active.reshape(grid.ny, grid.nx)
    for j in range(grid.ny):
        for i in range(grid.nx):
            if not act[j, i]:
                continue
            x0, y0 = i * grid.hx, j * grid.hy
            if i == 0 or not act[j, i - 1]:
                segs.append((x0, y0, x0, y0 + grid.hy))
            if i == grid.nx - 1 or not act[j, i + 1]:
                segs.append((x0 + grid.hx, y0, x0 + grid.hx, y0 + grid.hy))
            if j == 0 or not act[j - 1, i]:
                segs.append((x0, y0, x0 + grid.hx, y0))
            if j == grid.ny - 1 or not act[j + 1, i]:
                segs.append((x0, y0 + grid.hy, x0 + grid.hx, y0 + grid.hy))
    out.append(f'<g stroke="#000000" stroke-width="{_fmt(0.05 * min(grid.hx, grid.hy))}">')
    for x1, y1, x2, y2 in segs:
        out.append(f'<line x1="{_fmt(x1)}" y1="{_fmt(flip(y1))}" '
                   f'x2="{_fmt(x2)}" y2="{_fmt(flip(y2))}"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# CSV / VTK export
# ---------------------------------------------------------------------------

def export_csv(grid: StructuredGrid, fields: Dict[str, np.ndarray], path: str):
    """Per-element CSV: element_id, cx, cy, then the given columns in order."""
    cent = grid.centroids()
    names = list(fields)
    with open(path, "w", newline="") as fh:
        fh.write("element_id,cx,cy," + ",".join(names) + "\n")
        for k, e in enumerate(grid.active_ids):
            row = [str(int(e)), _fmt(cent[k, 0]), _fmt(cent[k, 1])]
            row += [_fmt(fields[nm][k]) for nm in names]
            fh.write(",".join(row) + "\n")


def write_design_csv(grid: StructuredGrid, state: DesignState, path: str):
    export_csv(grid, {"s": state.s, "t": state.t, "m": state.m, "n": state.n,
                      "theta_deg": state.theta_deg}, path)


def read_field_csv(path: str):
    """Read an export_csv file back into a grid plus column dict.

    The grid is reconstructed from the centroid lattice; only spacing and
    the active set matter to downstream consumers.
    """
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    ids = data["element_id"].astype(int)
    cxs, cys = data["cx"], data["cy"]
    ux, uy = np.unique(cxs), np.unique(cys)
    hx = float(np.min(np.diff(ux))) if ux.size > 1 else 2 * float(ux[0])
    hy = float(np.min(np.diff(uy))) if uy.size > 1 else 2 * float(uy[0])
    i = np.rint(cxs / hx - 0.5).astype(int)
    j = np.rint(cys / hy - 0.5).astype(int)
    nx, ny = int(i.max()) + 1, int(j.max()) + 1
    active = np.zeros(nx * ny, dtype=bool)
    active[j * nx + i] = True
    order = np.argsort(j * nx + i, kind="stable")
    cols = {nm: np.asarray(data[nm])[order]
            for nm in data.dtype.names
            if nm not in ("element_id", "cx", "cy")}
    from .mesh import StructuredGrid as _G
    grid = _G(nx=nx, ny=ny, hx=hx, hy=hy, active=active)
    return grid, cols


def write_history_csv(history, path: str):
    """One row per iteration; the format contract for determinism checks."""
    with open(path, "w", newline="") as fh:
        fh.write("iter,compliance_J,max_kappa_ratio,max_psi_ratio,"
                 "mu,lambda_max,Lambda,p\n")
        for r in history:
            fh.write(",".join([str(r.iteration), _fmt(r.compliance),
                               _fmt(r.max_kappa_ratio), _fmt(r.max_psi_ratio),
                               _fmt(r.mu), _fmt(r.lambda_max),
                               _fmt(r.weight), _fmt(r.p)]) + "\n")


def export_vtk(grid: StructuredGrid, fields: Dict[str, np.ndarray], path: str):
    """Legacy ASCII structured grid with per-cell data (inactive cells 0)."""
    npx, npy = grid.nx + 1, grid.ny + 1
    with open(path, "w", newline="") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("orientation field export\n")
        fh.write("ASCII\nDATASET STRUCTURED_GRID\n")
        fh.write(f"DIMENSIONS {npx} {npy} 1\n")
        fh.write(f"POINTS {npx * npy} double\n")
        for j in range(npy):
            for i in range(npx):
                fh.write(f"{_fmt(i * grid.hx)} {_fmt(j * grid.hy)} 0.0\n")
        fh.write(f"CELL_DATA {grid.nx * grid.ny}\n")
        fh.write("SCALARS active int 1\nLOOKUP_TABLE default\n")
        for a in grid.active:
            fh.write(f"{int(a)}\n")
        for nm, vals in fields.items():
            full = np.zeros(grid.nx * grid.ny)
            full[grid.active_ids] = vals
            fh.write(f"SCALARS {nm} double 1\nLOOKUP_TABLE default\n")
            for v in full:
                fh.write(f"{_fmt(v)}\n")

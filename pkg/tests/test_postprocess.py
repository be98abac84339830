"""Streamline tracing, principal stress directions, SVG and file exports."""

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from towsteer import material, mesh, postprocess
from towsteer.fem import FemProblem, FemSolution
from towsteer.mesh import StructuredGrid
from towsteer.optimizer import HistoryRow
from towsteer.postprocess import (Heatmap, OrientationGlyphs, PrincipalGlyphs,
                                  StreamlinePaths, export_csv, export_vtk,
                                  principal_directions, read_field_csv,
                                  render, trace_streamlines, write_design_csv,
                                  write_history_csv)


def _full_grid(nx, ny, hx, hy):
    return StructuredGrid(nx=nx, ny=ny, hx=hx, hy=hy,
                          active=np.ones(nx * ny, dtype=bool))


# ---------------------------------------------------------------------------
# streamlines
# ---------------------------------------------------------------------------

def test_uniform_field_gives_horizontal_parallel_lines():
    grid = _full_grid(20, 10, 0.05, 0.05)
    m = np.ones(grid.n_active)
    n = np.zeros(grid.n_active)
    lines = trace_streamlines(grid, m, n, separation=0.1)
    assert len(lines) >= 3
    ys = []
    for line in lines:
        assert np.ptp(line.points[:, 1]) < 1e-9
        assert line.points[:, 0].max() - line.points[:, 0].min() > 0.5
        ys.append(line.points[0, 1])
    gaps = np.diff(np.sort(ys))
    assert gaps.min() >= 0.1 - 0.025 - 1e-12
    assert gaps.max() <= 2 * 0.1 + 0.025 + 1e-12


def test_consecutive_points_within_two_steps():
    grid = _full_grid(16, 16, 0.0625, 0.0625)
    rng = np.random.default_rng(0)
    theta = rng.uniform(0, np.pi, grid.n_active)
    lines = trace_streamlines(grid, np.cos(theta), np.sin(theta),
                              separation=0.125)
    step = min(grid.hx, grid.hy) / 2
    for line in lines:
        d = np.linalg.norm(np.diff(line.points, axis=0), axis=1)
        assert d.max() <= 2 * step + 1e-12


def test_separation_below_half_cell_rejected():
    grid = _full_grid(8, 8, 0.1, 0.1)
    with pytest.raises(ValueError):
        trace_streamlines(grid, np.ones(64), np.zeros(64), separation=0.04)


def test_circular_field_traces_concentric_arcs():
    grid = _full_grid(40, 40, 0.025, 0.025)
    c = grid.centroids()
    dx_, dy_ = c[:, 0] - 0.5, c[:, 1] - 0.5
    r = np.hypot(dx_, dy_)
    lines = trace_streamlines(grid, -dy_ / r, dx_ / r, separation=0.1)
    checked = 0
    for line in lines:
        pr = np.hypot(line.points[:, 0] - 0.5, line.points[:, 1] - 0.5)
        mean_r = pr.mean()
        if not (0.15 <= mean_r <= 0.42) or len(line.points) < 12:
            continue
        assert pr.std() / mean_r < 0.05
        a, b, d = line.points[:-2], line.points[1:-1], line.points[2:]
        cross = np.abs((b[:, 0] - a[:, 0]) * (d[:, 1] - a[:, 1])
                       - (b[:, 1] - a[:, 1]) * (d[:, 0] - a[:, 0]))
        curv = 2 * cross / (np.linalg.norm(b - a, axis=1)
                            * np.linalg.norm(d - b, axis=1)
                            * np.linalg.norm(d - a, axis=1))
        assert abs(np.median(curv) * mean_r - 1.0) < 0.1
        checked += 1
    assert checked >= 2


def test_interface_sign_continuity_never_doubles_back():
    grid = _full_grid(20, 20, 0.05, 0.05)
    c = grid.centroids()
    left = c[:, 0] < 0.5
    m = np.where(left, 1.0, 0.0)
    n = np.where(left, 0.0, 1.0)
    lines = trace_streamlines(grid, m, n, separation=0.1)
    for line in lines:
        steps = np.diff(line.points, axis=0)
        if len(steps) < 2:
            continue
        dots = np.sum(steps[:-1] * steps[1:], axis=1)
        assert dots.min() >= -1e-9


def test_streamlines_respect_active_mask():
    grid, _ = mesh.build_preset(mesh.lbracket_preset(nx=20, ny=20))
    theta = np.full(grid.n_active, np.radians(45.0))
    lines = trace_streamlines(grid, np.cos(theta), np.sin(theta),
                              separation=0.1)
    assert lines
    for line in lines:
        assert line.reason in ("boundary", "proximity", "max-length")
        i = np.clip((line.points[:, 0] // grid.hx).astype(int), 0, grid.nx - 1)
        j = np.clip((line.points[:, 1] // grid.hy).astype(int), 0, grid.ny - 1)
        assert grid.active[j * grid.nx + i].all()


# ---------------------------------------------------------------------------
# principal stress directions
# ---------------------------------------------------------------------------

def _center_b(hx, hy):
    b = np.zeros((3, 8))
    xi = np.array([-1.0, 1.0, 1.0, -1.0])
    eta = np.array([-1.0, -1.0, 1.0, 1.0])
    dndx = xi / (2.0 * hx)
    dndy = eta / (2.0 * hy)
    b[0, 0::2] = dndx
    b[1, 1::2] = dndy
    b[2, 0::2] = dndy
    b[2, 1::2] = dndx
    return b


def test_principal_directions_match_closed_form_oracle():
    preset = mesh.cantilever_preset(nx=6, ny=4)
    grid, load = mesh.build_preset(preset)
    rng = np.random.default_rng(1)
    theta = rng.uniform(0, np.pi, grid.n_active)
    m, n = np.cos(theta), np.sin(theta)
    sol = FemProblem(grid, load, preset.material).solve(m, n)
    res = principal_directions(grid, sol, m, n, preset.material)

    b0 = _center_b(grid.hx, grid.hy)
    c_all = material.cx(preset.material, m, n)
    for k in rng.choice(grid.n_active, 8, replace=False):
        ue = sol.u[grid.element_dofs[k]]
        s11, s22, s12 = c_all[k] @ (b0 @ ue)
        mean = 0.5 * (s11 + s22)
        dev = np.hypot(0.5 * (s11 - s22), s12)
        lam = np.array([mean + dev, mean - dev])
        scale = max(abs(lam[0]), abs(lam[1]))
        assert np.abs(res.magnitudes[k] - lam).max() <= 1e-10 * scale
        phi = 0.5 * np.arctan2(2 * s12, s11 - s22)
        major = np.array([np.cos(phi), np.sin(phi)])
        if dev > 1e-6 * scale:
            assert abs(abs(res.directions[k, 0] @ major) - 1.0) < 1e-9
        assert abs(res.directions[k, 0] @ res.directions[k, 1]) < 1e-12


def test_uniaxial_strip_major_direction_along_load():
    preset = mesh.tension_strip_preset(nx=24, ny=8)
    grid, load = mesh.build_preset(preset)
    m = np.ones(grid.n_active)
    n = np.zeros(grid.n_active)
    sol = FemProblem(grid, load, preset.material).solve(m, n)
    res = principal_directions(grid, sol, m, n, preset.material)
    c = grid.centroids()
    span = grid.nx * grid.hx
    mid = (c[:, 0] > span / 3) & (c[:, 0] < 2 * span / 3)
    align = np.abs(res.directions[mid, 0, 0])
    assert align.min() > 0.999
    ratio = np.abs(res.magnitudes[mid, 1]) / np.abs(res.magnitudes[mid, 0])
    assert ratio.max() < 0.05


def test_pure_shear_gives_diagonal_directions():
    grid = _full_grid(4, 4, 0.25, 0.25)
    law = material.isotropic(10e9, 0.25)
    gamma = 1e-3
    coords = grid.node_coords()
    u = np.zeros(grid.n_dofs)
    u[0::2] = gamma * coords[:, 1]
    sol = FemSolution(u=u, compliance=0.0, residual=0.0)
    m = np.ones(grid.n_active)
    n = np.zeros(grid.n_active)
    res = principal_directions(grid, sol, m, n, law)
    tau = law.g12 * gamma
    assert np.allclose(res.magnitudes[:, 0], tau, rtol=1e-10)
    assert np.allclose(res.magnitudes[:, 1], -tau, rtol=1e-10)
    diag = np.array([1.0, 1.0]) / np.sqrt(2.0)
    dots = np.abs(res.directions[:, 0] @ diag)
    assert np.allclose(dots, 1.0, atol=1e-9)


# ---------------------------------------------------------------------------
# SVG rendering
# ---------------------------------------------------------------------------

def test_render_empty_layers_is_valid_svg():
    grid, _ = mesh.build_preset(mesh.lbracket_preset(nx=8, ny=8))
    doc = render(grid)
    root = ET.fromstring(doc)
    assert root.tag.endswith("svg")
    assert doc.startswith('<?xml version="1.0"')


def test_render_uniform_heatmap_single_color():
    grid = _full_grid(5, 4, 0.2, 0.25)
    doc = render(grid, [Heatmap(values=np.zeros(grid.n_active), label="kappa")])
    fills = {line.split('fill="')[1][:7]
             for line in doc.splitlines() if "<rect" in line}
    assert len(fills) == 1


def test_render_is_deterministic_and_composes_all_layers():
    preset = mesh.lbracket_preset(nx=10, ny=10)
    grid, load = mesh.build_preset(preset)
    theta = np.radians(np.linspace(-80.0, 80.0, grid.n_active))
    m, n = np.cos(theta), np.sin(theta)
    sol = FemProblem(grid, load, preset.material).solve(m, n)
    lines = trace_streamlines(grid, m, n, separation=0.2)
    pr = principal_directions(grid, sol, m, n, preset.material)
    layers = [Heatmap(values=np.abs(np.sin(theta)), label="f", vmin=0.0, vmax=1.0),
              OrientationGlyphs(m=m, n=n),
              StreamlinePaths(lines=lines),
              PrincipalGlyphs(principal=pr)]
    d1 = render(grid, layers, title="combined")
    d2 = render(grid, layers, title="combined")
    assert d1 == d2
    ET.fromstring(d1)
    assert d1.count("<polyline") == len(lines)


def test_render_rejects_unknown_layer():
    grid = _full_grid(4, 4, 0.25, 0.25)
    with pytest.raises(TypeError):
        render(grid, [object()])


# ---------------------------------------------------------------------------
# CSV / VTK round trips
# ---------------------------------------------------------------------------

def test_field_csv_roundtrip(tmp_path):
    grid, _ = mesh.build_preset(mesh.lbracket_preset(nx=8, ny=8))
    rng = np.random.default_rng(4)
    fields = {"kappa": rng.normal(size=grid.n_active),
              "psi": rng.normal(size=grid.n_active)}
    path = tmp_path / "fields.csv"
    export_csv(grid, fields, str(path))
    grid2, cols = read_field_csv(str(path))
    assert (grid2.nx, grid2.ny) == (grid.nx, grid.ny)
    assert np.isclose(grid2.hx, grid.hx) and np.isclose(grid2.hy, grid.hy)
    assert np.array_equal(grid2.active, grid.active)
    assert np.array_equal(cols["kappa"], fields["kappa"])
    assert np.array_equal(cols["psi"], fields["psi"])


def test_design_csv_columns(tmp_path):
    preset = mesh.cantilever_preset(nx=4, ny=4)
    grid, _ = mesh.build_preset(preset)
    from towsteer import orientation
    s, t = orientation.initial_design(grid, 30.0)
    st = orientation.evaluate(orientation.filter_matrix(grid, 0.0), s, t)
    path = tmp_path / "design.csv"
    write_design_csv(grid, st, str(path))
    _, cols = read_field_csv(str(path))
    assert set(cols) == {"s", "t", "m", "n", "theta_deg"}
    assert np.allclose(cols["theta_deg"], 30.0)


def test_history_csv_format_and_determinism(tmp_path):
    rows = [HistoryRow(iteration=0, compliance=144.64, max_kappa_ratio=0.0,
                       max_psi_ratio=0.0, mu=10.0, lambda_max=0.0,
                       weight=0.01, p=0.0),
            HistoryRow(iteration=1, compliance=101.5, max_kappa_ratio=1.25,
                       max_psi_ratio=0.8, mu=10.0, lambda_max=0.3,
                       weight=0.01, p=0.0)]
    p1, p2 = tmp_path / "h1.csv", tmp_path / "h2.csv"
    write_history_csv(rows, str(p1))
    write_history_csv(rows, str(p2))
    b1, b2 = p1.read_bytes(), p2.read_bytes()
    assert b1 == b2
    text = b1.decode()
    assert text.splitlines()[0] == ("iter,compliance_J,max_kappa_ratio,"
                                    "max_psi_ratio,mu,lambda_max,Lambda,p")
    assert len(text.splitlines()) == 3


def test_vtk_export_structure(tmp_path):
    active = np.ones(6, dtype=bool)
    active[4] = False
    grid = StructuredGrid(nx=3, ny=2, hx=0.5, hy=0.5, active=active)
    vals = np.arange(1.0, grid.n_active + 1)
    path = tmp_path / "out.vtk"
    export_vtk(grid, {"demo": vals}, str(path))
    text = path.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile")
    assert "DIMENSIONS 4 3 1" in text
    assert "POINTS 12 double" in text
    assert "CELL_DATA 6" in text
    k = text.index("SCALARS demo double 1")
    cells = [float(v) for v in text[k + 2:k + 8]]
    assert cells[4] == 0.0                      # masked cell zero-filled
    assert sorted(v for i, v in enumerate(cells) if i != 4) == list(vals)

"""Delimited output, figures and solution dumps.

The convergence CSV schema is fixed:

    MeshSize,NbElements,CondensedDofs,EnergyError,PressureError,Rate,
    TimeAssembly,TimeSolve

(one line, shown wrapped). EnergyError carries the relative combined
velocity-pressure error; Rate is empty on the first level. Numeric columns
use fixed exponent formats so identical runs produce identical bytes; the
two wall-time columns are the only ones expected to differ between repeat
runs, and strip_time_columns() exists for comparisons that ignore them.

Figures are rendered with the Agg backend next to the CSV they illustrate.
"""
from __future__ import annotations

import json

import numpy as np

CSV_HEADER = ("MeshSize,NbElements,CondensedDofs,EnergyError,PressureError,"
              "Rate,TimeAssembly,TimeSolve")

FLUX_CSV_HEADER = ("MeshSize,NbElements,CondensedDofs,Flux,FarVelocity,"
                   "TimeAssembly,TimeSolve")


def format_convergence_csv(table):
    lines = [CSV_HEADER]
    for r in table.reports:
        rate = "" if r.rate is None else f"{r.rate:.6f}"
        lines.append(",".join([
            f"{r.h:.16e}",
            str(r.n_elements),
            str(r.condensed_dofs),
            f"{r.error:.16e}",
            f"{r.error_pressure:.16e}",
            rate,
            f"{r.time_assembly:.6f}",
            f"{r.time_solve:.6f}",
        ]))
    return "\n".join(lines) + "\n"


def write_convergence_csv(table, path):
    content = format_convergence_csv(table)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(content)
    return content


def format_flux_csv(rows):
    """rows: iterables (h, n_elements, dofs, flux, far_velocity, ta, ts)."""
    lines = [FLUX_CSV_HEADER]
    for h, ne, dofs, flux, far, ta, ts in rows:
        lines.append(",".join([
            f"{h:.16e}", str(ne), str(dofs), f"{flux:.16e}", f"{far:.16e}",
            f"{ta:.6f}", f"{ts:.6f}"]))
    return "\n".join(lines) + "\n"


def strip_time_columns(csv_text):
    """Drop the trailing wall-time columns from every CSV line."""
    out = []
    for line in csv_text.strip().split("\n"):
        out.append(",".join(line.split(",")[:-2]))
    return "\n".join(out) + "\n"


def _agg_pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def render_convergence_figure(tables, path, title=None):
    """Log-log error vs mesh size for one or more studies.

    Each table plots its EnergyError series plus a dashed h^(k+1) guide
    anchored at the finest level.
    """
    plt = _agg_pyplot()
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    for table in tables:
        hs = np.array([r.h for r in table.reports])
        errs = np.array([r.error for r in table.reports])
        line, = ax.loglog(hs, errs, "o-", label=f"k={table.k}")
        if len(hs) > 1 and errs[-1] > 0.0:
            guide = errs[-1] * (hs / hs[-1]) ** (table.k + 1)
            ax.loglog(hs, guide, "--", color=line.get_color(), alpha=0.4,
                      label=f"h^{table.k + 1}")
    ax.set_xlabel("mesh size h")
    ax.set_ylabel("relative error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_flux_figure(series, path, title=None):
    """Interface flux against mesh size, one line per polynomial degree.

    series: dict k -> (h list, flux list).
    """
    plt = _agg_pyplot()
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    for k in sorted(series):
        hs, fluxes = series[k]
        ax.semilogx(hs, fluxes, "o-", label=f"k={k}")
    ax.set_xlabel("mesh size h")
    ax.set_ylabel("interface flux")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def solution_dump(mesh, ops, layout, solution):
    """JSON-ready dict of all DOF coefficients and vertex velocities.

    Face and element blocks list the x-component coefficients then the
    y-component ones in the local bases; vertex velocities come from the
    regime-consistent potential reconstruction of each cell.
    """
    half = layout.face_dim // 2
    nk = ops[0].layout.n_scalar
    faces = []
    for face in mesh.faces:
        block = solution.velocity[layout.face_slice(face.id)]
        faces.append({
            "id": face.id,
            "vertices": [int(v) for v in face.vertex_ids],
            "boundary": bool(face.boundary),
            "coefficients_x": block[:half].tolist(),
            "coefficients_y": block[half:].tolist(),
        })
    elements = []
    for elem in mesh.elements:
        op = ops[elem.id]
        eb = solution.velocity[layout.elem_slice(elem.id)]
        loc = layout.extract_local(solution.velocity, mesh, elem.id)
        verts = mesh.element_coords(elem)
        vals = op.eval_potential(loc, verts)
        elements.append({
            "id": elem.id,
            "vertices": [int(v) for v in elem.vertex_ids],
            "coefficients_x": eb[:nk].tolist(),
            "coefficients_y": eb[nk:].tolist(),
            "pressure": solution.pressure[
                elem.id * nk:(elem.id + 1) * nk].tolist(),
            "vertex_velocity": vals.tolist(),
        })
    return {
        "format": "brinkman2d-solution",
        "version": 1,
        "k": ops[0].layout.k,
        "multiplier": solution.multiplier,
        "residual": solution.residual,
        "faces": faces,
        "elements": elements,
    }


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")

"""Legacy ASCII VTK output for meshes, solutions, and recovered fluxes."""
from __future__ import annotations

import numpy as np

from .flux import RecoveredFlux, eval_flux
from .ifem_space import EnrichedSpace
from .mesh import StructuredMesh


def write_vtk(path, mesh: StructuredMesh, point_data: dict = None,
              cell_data: dict = None, title: str = "eifem") -> None:
    """Triangulated unstructured grid with optional scalar/vector fields.

    Arrays of shape (n,) are written as scalars, (n, 2) as 3d vectors with
    a zero z component.
    """
    point_data = point_data or {}
    cell_data = cell_data or {}
    nv, nt = mesh.n_vertices, mesh.n_elems
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} double",
    ]
    for p in mesh.vertices:
        lines.append(f"{p[0]:.17g} {p[1]:.17g} 0")
    lines.append(f"CELLS {nt} {4 * nt}")
    for tri in mesh.triangles:
        lines.append(f"3 {tri[0]} {tri[1]} {tri[2]}")
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["5"] * nt)

    def emit(block: dict, count: int, header: str):
        if not block:
            return
        lines.append(f"{header} {count}")
        for name, arr in block.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(f"{v:.17g}" for v in arr)
            else:
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{v[0]:.17g} {v[1]:.17g} 0" for v in arr)

    emit(point_data, nv, "POINT_DATA")
    emit(cell_data, nt, "CELL_DATA")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_solution_vtk(path, space: EnrichedSpace, full: np.ndarray) -> None:
    """Nodal values as point data, element constants as cell data."""
    write_vtk(
        path,
        space.mesh,
        point_data={"p_nodal": full[: space.n_vertices]},
        cell_data={"p_const": full[space.n_vertices:]},
        title="potential",
    )


def write_flux_vtk(path, recovered: RecoveredFlux) -> None:
    """Recovered flux sampled at element centroids, plus its divergence."""
    space = recovered.space
    mesh = space.mesh
    cent = mesh.vertices[mesh.triangles].mean(axis=1)
    vecs = np.array(
        [eval_flux(recovered, t, cent[t, 0], cent[t, 1]) for t in range(mesh.n_elems)]
    )
    write_vtk(
        path,
        mesh,
        cell_data={"u": vecs, "div_u": recovered.divergence()},
        title="recovered flux",
    )

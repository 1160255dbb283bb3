"""Legacy-ASCII VTK unstructured-grid writer (triangles and tetrahedra)."""

from __future__ import annotations

import numpy as np

VTK_TRIANGLE = 5
VTK_TETRA = 10


def write_vtk(path, vertices, elements, point_data=None, title="stcutfem mesh") -> None:
    """Write a simplicial mesh with optional point scalars.

    2D space-time points (x, t) are embedded as (x, t, 0).
    """
    vertices = np.asarray(vertices, dtype=float)
    elements = np.asarray(elements, dtype=np.int64)
    n, dim = vertices.shape
    nv = elements.shape[1]
    cell_type = VTK_TRIANGLE if nv == 3 else VTK_TETRA

    lines = [
        "# vtk DataFile Version 2.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    pts = np.zeros((n, 3))
    pts[:, :dim] = vertices
    lines.extend(" ".join(f"{c:.16g}" for c in p) for p in pts)

    m = len(elements)
    lines.append(f"CELLS {m} {m * (nv + 1)}")
    lines.extend(f"{nv} " + " ".join(str(v) for v in el) for el in elements)
    lines.append(f"CELL_TYPES {m}")
    lines.extend(str(cell_type) for _ in range(m))

    if point_data:
        lines.append(f"POINT_DATA {n}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.16g}" for v in values)

    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")

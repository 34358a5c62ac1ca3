"""Solid modelling on layered depth-normal images (LDNIs).

Sample closed triangle meshes into three orthogonal layered depth-normal
images, run Boolean and offset operations column by column, and contour the
result back into a closed two-manifold triangle mesh.
"""
from .contour import (CellEdgeRecord, ContourReport, EdgeClass, NodeSignField, QefData, QuadMesh,
                      VertexCluster, build_node_signs, build_quads, classify_and_regularize_edges,
                      cluster_cell_nodes, contour, contour_report, fix_nonmanifold, place_vertex,
                      regularize_edge, smooth_unconstrained, triangulate)
from .csg import (BooleanConfig, BooleanOp, boolean_columns, boolean_solid, offset_solid,
                  remove_small_intervals)
from .errors import *  # noqa: F401,F403
from .io import read_ldni, read_mesh, write_ldni, write_mesh
from .mesh import (Axis, GridSpec, Inside, MeshAudit, Membership, Outside, TriangleMesh,
                   audit_mesh, bounding_cube, point_in_solid_oracle, ray_surface_hits)
from .metrics import (ErrorReport, MemoryReport, memory_report, reference_gridnode_contour,
                      surface_distance)
from .sampler import (HermiteSample, Ldni, LdniSolid, LdniStats, NormalMode, PixelColumn,
                      classify_grid_node, column_membership, sample_solid, sample_sphere, stats,
                      validate_parity)

__version__ = "0.1.0"

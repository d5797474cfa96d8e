"""Platonic solids and the homographies between projected neighbor faces.

Scene: solid of unit circumradius centered at the world origin, pinhole
camera with identity intrinsics at a fixed generic point inside the solid.
Two faces sharing an edge are related by a rotational symmetry of the
solid: the one-step turn of the fan of faces around their shared vertex of
lowest index. That rotation maps face a's plane (and vertex triangle) onto
face b's, so it induces a homography between the two projections in the
image; normalized to unit determinant it is an SL(3) element whose log is
the network input. Rotating the camera in place by R maps every homography
H to R H R^T, i.e. the inputs transform by the adjoint action.

Geometry the construction rests on:

- A homography induced by a rigid map between two planes has determinant
  d_b/d_a: the ratio of the planes' offsets from the camera center, signed
  along the carried normal. The symmetry rotation carries outward normal
  to outward normal, so a camera interior to the solid (all outward
  offsets positive) sees det > 0 for every ordered pair; it is also the
  only viewpoint from which all faces project into a single image. The
  hinge fold about the shared edge, by contrast, carries face a's outward
  normal to face b's inward normal (a closed oriented surface traverses a
  shared edge in opposite directions in its two faces), so its determinant
  is negative from any interior viewpoint and for the non-straddling pairs
  from every exterior one: no camera position gives it principal logs for
  all pairs.
- The symmetry homography fixes the shared vertex's projection and has
  spectrum (1, z, z_conj) with arg(z) near the fan step angle, 2*pi over
  the vertex order (3, 4, or 5 faces around a vertex), safely off the
  negative real axis, so the principal log always exists. The per-class
  vertex orders survive in the eigenstructure of the inputs.
- The camera sits off-center so the plane offsets differ by pair; at the
  exact center every homography is an exactly conjugated rotation and the
  logs collapse onto a single compact orbit family.

Using the lowest shared vertex index for both orderings of a pair makes
the two rotations exact inverses, hence vee(log H_ab) = -vee(log H_ba).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import LieAlgebra, get_algebra

SOLIDS = ("tetrahedron", "octahedron", "icosahedron")


class GenerationError(RuntimeError):
    """A geometric construction left its valid regime (degenerate plane,
    non-positive homography determinant, or no principal log)."""


# Generic interior viewpoint, safely within the tetrahedron's insphere
# (inradius 1/3 at unit circumradius, the smallest of the three solids).
CAMERA_CENTER = np.array([0.12, 0.08, 0.05])
# World -> camera axes: x right, y down, z forward.
CAMERA_AXES = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


def camera_extrinsics(camera_rotation: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(R, t) with X_cam = R X_world + t; rotation spins the camera in place."""
    r = CAMERA_AXES
    t = -CAMERA_AXES @ CAMERA_CENTER
    if camera_rotation is not None:
        rc = np.asarray(camera_rotation, dtype=np.float64)
        r = rc @ r
        t = rc @ t
    return r, t


def _tetrahedron_vertices() -> np.ndarray:
    v = np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64
    )
    return v / np.sqrt(3.0)


def _octahedron_vertices() -> np.ndarray:
    return np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
        dtype=np.float64,
    )


def _icosahedron_vertices() -> np.ndarray:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = []
    for a in (-1.0, 1.0):
        for b in (-phi, phi):
            v.append([0.0, a, b])
            v.append([a, b, 0.0])
            v.append([b, 0.0, a])
    v = np.array(v)
    return v / np.linalg.norm(v[0])


def _support_faces(verts: np.ndarray) -> list[tuple[int, int, int]]:
    # Convex-face scan: a vertex triple is a face iff its plane has every
    # other vertex strictly on one side. Orientation is fixed outward.
    n = len(verts)
    faces = []
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                nrm = np.cross(verts[j] - verts[i], verts[k] - verts[i])
                length = np.linalg.norm(nrm)
                if length < 1e-9:
                    continue
                nrm = nrm / length
                side = (verts - verts[i]) @ nrm
                others = np.delete(side, [i, j, k])
                if np.all(others < -1e-7):
                    faces.append((i, j, k))
                elif np.all(others > 1e-7):
                    faces.append((i, k, j))
    faces.sort(key=lambda f: tuple(sorted(f)))
    return faces


@dataclass(frozen=True)
class PlatonicSolid:
    name: str
    vertices: np.ndarray
    faces: tuple[tuple[int, int, int], ...]
    pairs: tuple[tuple[int, int], ...]  # ordered neighboring face pairs

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)


def _build_solid(name: str) -> PlatonicSolid:
    verts = {
        "tetrahedron": _tetrahedron_vertices,
        "octahedron": _octahedron_vertices,
        "icosahedron": _icosahedron_vertices,
    }[name]()
    faces = _support_faces(verts)
    pairs = []
    for a in range(len(faces)):
        for b in range(len(faces)):
            if a != b and len(set(faces[a]) & set(faces[b])) == 2:
                pairs.append((a, b))
    pairs.sort()
    n_edges = len(pairs) // 2
    if len(verts) - n_edges + len(faces) != 2:
        raise GenerationError(f"{name}: Euler check failed (V={len(verts)}, E={n_edges}, F={len(faces)})")
    return PlatonicSolid(name, verts, tuple(faces), tuple(pairs))


_SOLID_CACHE: dict[str, PlatonicSolid] = {}


def get_solid(name: str) -> PlatonicSolid:
    if name not in SOLIDS:
        raise KeyError(f"unknown solid {name!r}; choose from {SOLIDS}")
    if name not in _SOLID_CACHE:
        _SOLID_CACHE[name] = _build_solid(name)
    return _SOLID_CACHE[name]


def pair_correspondence(
    solid: PlatonicSolid, ia: int, ib: int
) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
    """Vertex correspondence of the fan-step symmetry taking face a to b.

    The fixed point is the shared vertex of lowest index s0; the step sends
    the shared edge (s0, s1) to face b's other edge at s0, so s1 lands on
    face b's apex and face a's apex lands on s1.
    """
    fa, fb = solid.faces[ia], solid.faces[ib]
    shared = sorted(set(fa) & set(fb))
    if len(shared) != 2:
        raise GenerationError(f"faces {ia} and {ib} of {solid.name} share no edge")
    s0, s1 = shared
    apex_a = next(i for i in fa if i not in shared)
    apex_b = next(i for i in fb if i not in shared)
    return (s0, s1, apex_a), (s0, apex_b, s1)


def _pair_rotation(solid: PlatonicSolid, ia: int, ib: int) -> np.ndarray:
    # Rotation about the origin realizing pair_correspondence: a symmetry
    # of the solid mapping face a onto face b, fixing shared vertex s0.
    src, dst = pair_correspondence(solid, ia, ib)
    v = solid.vertices
    m_src = v[list(src)].T
    m_dst = v[list(dst)].T
    g = m_dst @ np.linalg.inv(m_src)
    u, _, vt = np.linalg.svd(g)
    r = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    if np.max(np.abs(r @ m_src - m_dst)) > 1e-9:
        raise GenerationError(
            f"no rotation realizes the fan step for {solid.name} faces {ia}->{ib}"
        )
    # The map must be a symmetry of the whole solid (it permutes vertices).
    dists = np.linalg.norm((v @ r.T)[:, None, :] - v[None, :, :], axis=2)
    if dists.min(axis=1).max() > 1e-9:
        raise GenerationError(
            f"fan step for {solid.name} faces {ia}->{ib} is not a symmetry"
        )
    return r


def _face_plane_camera(
    solid: PlatonicSolid, ia: int, r_e: np.ndarray, t_e: np.ndarray
) -> tuple[np.ndarray, float]:
    fa = solid.faces[ia]
    v = solid.vertices
    nrm = np.cross(v[fa[1]] - v[fa[0]], v[fa[2]] - v[fa[0]])
    nrm = nrm / np.linalg.norm(nrm)
    n_c = r_e @ nrm
    d = n_c @ (r_e @ v[fa[0]] + t_e)
    if abs(d) < 1e-9:
        raise GenerationError(f"face {ia} plane of {solid.name} passes through the camera")
    return n_c, float(d)


def face_pair_homography_matrix(
    solid: PlatonicSolid, ia: int, ib: int, camera_rotation: np.ndarray | None = None
) -> np.ndarray:
    """Unit-determinant homography mapping face a's projection onto face b's."""
    r_e, t_e = camera_extrinsics(camera_rotation)
    r_f = _pair_rotation(solid, ia, ib)
    r_c = r_e @ r_f @ r_e.T
    t_c = t_e - r_c @ t_e
    n_c, d = _face_plane_camera(solid, ia, r_e, t_e)
    h_raw = r_c + np.outer(t_c, n_c) / d
    det = np.linalg.det(h_raw)
    if det <= 1e-9:
        # det(H) is the offset ratio d_b/d_a; non-positive means the camera
        # is not on the same side of both face planes (exterior viewpoint).
        raise GenerationError(
            f"homography determinant {det:.3e} <= 0 for {solid.name} faces "
            f"{ia}->{ib}; the camera must be interior to the solid"
        )
    return h_raw / np.cbrt(det)


def face_pair_homography(
    solid: PlatonicSolid,
    ia: int,
    ib: int,
    camera_rotation: np.ndarray | None = None,
    algebra: LieAlgebra | None = None,
) -> np.ndarray:
    """Algebra coefficients vee(log H) of the normalized face-pair homography."""
    algebra = algebra if algebra is not None else get_algebra("sl3")
    h = face_pair_homography_matrix(solid, ia, ib, camera_rotation)
    return algebra.log_map(h)


def base_logs(solid: PlatonicSolid, algebra: LieAlgebra | None = None) -> np.ndarray:
    """Stacked logs for every ordered neighboring face pair, identity camera."""
    algebra = algebra if algebra is not None else get_algebra("sl3")
    mats = np.stack(
        [face_pair_homography_matrix(solid, a, b) for a, b in solid.pairs]
    )
    return algebra.log_map(mats)


def project_points(points_world: np.ndarray, camera_rotation: np.ndarray | None = None) -> np.ndarray:
    """Pinhole projection (identity intrinsics) of world points, (..., 3) -> (..., 2)."""
    r_e, t_e = camera_extrinsics(camera_rotation)
    cam = points_world @ r_e.T + t_e
    return cam[..., :2] / cam[..., 2:3]


def reprojection_error(
    solid: PlatonicSolid, ia: int, ib: int, camera_rotation: np.ndarray | None = None
) -> float:
    """Max image-space error of H mapping face a's projected vertices to b's.

    Correspondence from the fan-step symmetry (pair_correspondence): the
    shared vertex of lowest index is fixed, the other shared vertex lands
    on face b's apex, face a's apex lands on the other shared vertex."""
    src_idx, dst_idx = pair_correspondence(solid, ia, ib)
    src = solid.vertices[list(src_idx)]
    dst = solid.vertices[list(dst_idx)]
    h = face_pair_homography_matrix(solid, ia, ib, camera_rotation)
    img_a = project_points(src, camera_rotation)
    img_b = project_points(dst, camera_rotation)
    hom = np.concatenate([img_a, np.ones((3, 1))], axis=1) @ h.T
    mapped = hom[:, :2] / hom[:, 2:3]
    return float(np.max(np.abs(mapped - img_b)))

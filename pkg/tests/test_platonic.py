"""Solid geometry, face-pair homographies, and the camera-rotation law."""

import numpy as np
import pytest

from lienn import platonic
from lienn.platonic import (
    GenerationError,
    SOLIDS,
    base_logs,
    camera_extrinsics,
    face_pair_homography,
    face_pair_homography_matrix,
    get_solid,
    pair_correspondence,
    project_points,
    reprojection_error,
)

EXPECTED = {
    "tetrahedron": {"vertices": 4, "faces": 4, "pairs": 12},
    "octahedron": {"vertices": 6, "faces": 8, "pairs": 24},
    "icosahedron": {"vertices": 12, "faces": 20, "pairs": 60},
}


def _rotations(n=4, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        out.append(q * np.linalg.det(q))
    return out


def test_solid_counts_and_unit_vertices():
    """Vertex/face/ordered-pair counts are 4/4/12, 6/8/24, 12/20/60."""
    for name in SOLIDS:
        solid = get_solid(name)
        want = EXPECTED[name]
        assert len(solid.vertices) == want["vertices"]
        assert len(solid.faces) == want["faces"]
        assert solid.n_pairs == want["pairs"]
        assert np.abs(np.linalg.norm(solid.vertices, axis=1) - 1.0).max() < 1e-12


def test_get_solid_rejects_unknown():
    with pytest.raises(KeyError):
        get_solid("cube")


def test_pairs_are_ordered_edge_neighbors():
    """Every ordered pair shares an edge, and both orders appear."""
    for name in SOLIDS:
        solid = get_solid(name)
        pair_set = set(solid.pairs)
        assert len(pair_set) == solid.n_pairs
        for a, b in solid.pairs:
            assert a != b
            assert len(set(solid.faces[a]) & set(solid.faces[b])) == 2
            assert (b, a) in pair_set


def test_pair_correspondence_fixed_point():
    """The lowest shared vertex is fixed; apexes swap with the other one."""
    solid = get_solid("tetrahedron")
    for a, b in solid.pairs:
        src, dst = pair_correspondence(solid, a, b)
        assert src[0] == dst[0]
        assert set(src) <= set(solid.faces[a]) | set(solid.faces[b])
    with pytest.raises(GenerationError):
        # Opposite faces of the octahedron share no edge.
        oct_solid = get_solid("octahedron")
        non_neighbors = [
            (i, j)
            for i in range(8)
            for j in range(8)
            if i != j and len(set(oct_solid.faces[i]) & set(oct_solid.faces[j])) == 0
        ]
        pair_correspondence(oct_solid, *non_neighbors[0])


def test_camera_extrinsics_interior_center():
    """The camera sits at the configured interior point, x right, y down."""
    r, t = camera_extrinsics()
    assert np.allclose(r @ r.T, np.eye(3))
    center = -r.T @ t
    assert np.allclose(center, platonic.CAMERA_CENTER)
    rot = _rotations(1)[0]
    r2, t2 = camera_extrinsics(rot)
    # Spinning in place keeps the center.
    assert np.allclose(-r2.T @ t2, platonic.CAMERA_CENTER)


def test_homography_matrices_have_unit_determinant():
    for name in SOLIDS:
        solid = get_solid(name)
        for a, b in solid.pairs:
            h = face_pair_homography_matrix(solid, a, b)
            assert abs(np.linalg.det(h) - 1.0) < 1e-10


def test_reprojection_of_shared_vertices():
    """H maps face a's projected correspondence onto face b's within 1e-6."""
    for name in SOLIDS:
        solid = get_solid(name)
        for a, b in solid.pairs:
            assert reprojection_error(solid, a, b) < 1e-6


def test_reprojection_under_rotated_camera():
    rots = _rotations(2, seed=5)
    solid = get_solid("octahedron")
    for rot in rots:
        for a, b in solid.pairs[:6]:
            assert reprojection_error(solid, a, b, camera_rotation=rot) < 1e-6


def test_camera_rotation_conjugates_homographies():
    """Rotating the camera by R maps every H to R H R^{-1}."""
    rots = _rotations(3, seed=7)
    for name in SOLIDS:
        solid = get_solid(name)
        for rot in rots:
            for a, b in solid.pairs[:8]:
                h = face_pair_homography_matrix(solid, a, b)
                h_rot = face_pair_homography_matrix(solid, a, b, camera_rotation=rot)
                ref = rot @ h @ rot.T
                rel = np.abs(h_rot - ref).max() / (np.abs(ref).max() + 1e-12)
                assert rel < 1e-8


def test_base_logs_shape_and_exp_round_trip(sl3):
    """Logs are real sl(3) coefficients whose exp recovers the homography."""
    for name in SOLIDS:
        solid = get_solid(name)
        logs = base_logs(solid, sl3)
        assert logs.shape == (solid.n_pairs, 8)
        mats = np.stack(
            [face_pair_homography_matrix(solid, a, b) for a, b in solid.pairs]
        )
        assert np.abs(sl3.exp_map(logs) - mats).max() < 1e-9


def test_project_points_pinhole():
    pts = np.array([[0.3, 0.2, 0.9], [0.0, 0.0, 1.0]])
    img = project_points(pts)
    r, t = camera_extrinsics()
    cam = pts @ r.T + t
    assert np.allclose(img, cam[:, :2] / cam[:, 2:3])


def test_face_pair_homography_coefficients(sl3):
    solid = get_solid("tetrahedron")
    a, b = solid.pairs[0]
    coeffs = face_pair_homography(solid, a, b)
    h = face_pair_homography_matrix(solid, a, b)
    assert np.abs(sl3.exp_map(coeffs) - h).max() < 1e-9

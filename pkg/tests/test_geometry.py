import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asmfield.geometry import (AxisAngle, RigidTransform, TriMesh, compose,
                               exp_rotation, read_obj, read_stl, rotation_log,
                               validate_mesh, write_obj, write_stl)
from conftest import make_cube


def random_rotation(rng):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return exp_rotation(AxisAngle(axis=axis, angle=rng.uniform(-np.pi, np.pi)))


def random_transform(rng):
    r = random_rotation(rng)
    return RigidTransform(r.rotation, rng.uniform(-3, 3, size=3))


class TestValidation:
    def test_cube_accepted(self, unit_cube):
        report = validate_mesh(unit_cube)
        assert report.ok, report.summary()

    def test_flipped_face_reports_three_edges(self, unit_cube):
        faces = unit_cube.faces.copy()
        faces[0] = faces[0][::-1]
        report = validate_mesh(TriMesh(unit_cube.vertices, faces))
        assert len(report.inconsistent_edges) == 3
        assert not report.boundary_edges

    def test_missing_square_face_reports_four_boundary_edges(self, unit_cube):
        # drop both triangles of the bottom quad
        faces = unit_cube.faces[2:]
        report = validate_mesh(TriMesh(unit_cube.vertices, faces))
        assert len(report.boundary_edges) == 4
        assert not report.inconsistent_edges

    def test_degenerate_face_rejected(self, unit_cube):
        verts = np.vstack([unit_cube.vertices, unit_cube.vertices[:1]])
        faces = np.vstack([unit_cube.faces, [[0, 0, 8]]])
        report = validate_mesh(TriMesh(verts, faces))
        assert report.degenerate_faces

    def test_out_of_range_index(self, unit_cube):
        faces = unit_cube.faces.copy()
        faces[0, 0] = 99
        report = validate_mesh(TriMesh(unit_cube.vertices, faces))
        assert report.bad_indices == [0]  # face 0 holds the bad reference


class TestRigidTransform:
    def test_identity_compose(self):
        rng = np.random.default_rng(0)
        t = random_transform(rng)
        out = compose(RigidTransform.identity(), t)
        assert np.allclose(out.rotation, t.rotation)
        assert np.allclose(out.translation, t.translation)

    def test_inverse_composes_to_identity(self):
        rng = np.random.default_rng(1)
        t = random_transform(rng)
        out = compose(t, t.inverse())
        assert np.allclose(out.rotation, np.eye(3), atol=1e-9)
        assert np.allclose(out.translation, 0.0, atol=1e-9)

    def test_rotation_then_translation_on_origin(self):
        rz = exp_rotation(AxisAngle(axis=[0, 0, 1], angle=np.pi / 2))
        shift = RigidTransform.from_translation([1, 0, 0])
        # rotate the translated origin: (1,0,0) -> (0,1,0)
        assert np.allclose(compose(rz, shift).apply([0, 0, 0]), [0, 1, 0],
                           atol=1e-12)

    def test_rejects_non_orthogonal(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3) * 1.001, np.zeros(3))

    def test_rejects_reflection(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            RigidTransform(r, np.zeros(3))

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30, deadline=None)
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        t = random_transform(rng)
        p = rng.uniform(-10, 10, size=3)
        back = t.inverse_apply(t.apply(p))
        assert np.linalg.norm(back - p) <= 1e-9 * max(1.0, np.linalg.norm(p))

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30, deadline=None)
    def test_compose_associative(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_transform(rng) for _ in range(3))
        p = rng.uniform(-5, 5, size=3)
        left = compose(compose(a, b), c).apply(p)
        right = compose(a, compose(b, c)).apply(p)
        assert np.allclose(left, right, atol=1e-9)


class TestExpRotation:
    def test_quarter_turn_about_z(self):
        t = exp_rotation(AxisAngle(axis=[0, 0, 1], angle=np.pi / 2))
        assert np.allclose(t.apply([1, 0, 0]), [0, 1, 0], atol=1e-12)

    def test_zero_angle_is_identity(self):
        t = exp_rotation(AxisAngle(axis=[0, 1, 0], angle=0.0))
        assert np.allclose(t.rotation, np.eye(3))

    def test_half_turn_about_x(self):
        t = exp_rotation(AxisAngle(axis=[1, 0, 0], angle=np.pi))
        assert np.allclose(t.apply([0, 1, 0]), [0, -1, 0], atol=1e-12)

    def test_log_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            angle = rng.uniform(1e-4, np.pi - 1e-4)
            r = exp_rotation(AxisAngle(axis=axis, angle=angle)).rotation
            vec = rotation_log(r)
            assert np.allclose(vec, axis * angle, atol=1e-8)

    def test_axis_must_be_unit(self):
        with pytest.raises(ValueError):
            AxisAngle(axis=[1, 1, 0], angle=0.2)


class TestMeshIO:
    def test_obj_round_trip_bit_exact(self, unit_cube, tmp_path):
        rng = np.random.default_rng(3)
        mesh = TriMesh(unit_cube.vertices + rng.uniform(-0.01, 0.01, (8, 3)),
                       unit_cube.faces)
        path = tmp_path / "cube.obj"
        write_obj(mesh, path)
        back = read_obj(path)
        assert np.array_equal(back.vertices, mesh.vertices)
        assert np.array_equal(back.faces, mesh.faces)

    def test_obj_rejects_quads(self, tmp_path):
        path = tmp_path / "quad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        with pytest.raises(ValueError, match="triangles only"):
            read_obj(path)

    def test_stl_round_trip_welds(self, unit_cube, tmp_path):
        path = tmp_path / "cube.stl"
        write_stl(unit_cube, path)
        back = read_stl(path)
        assert back.n_faces == unit_cube.n_faces
        assert validate_mesh(back).ok
        assert abs(back.volume() - unit_cube.volume()) < 1e-6

    def test_stl_face_order_preserved(self, unit_cube, tmp_path):
        path = tmp_path / "cube.stl"
        write_stl(unit_cube, path)
        back = read_stl(path)
        for fi in range(unit_cube.n_faces):
            orig = unit_cube.vertices[unit_cube.faces[fi]]
            got = back.vertices[back.faces[fi]]
            assert np.allclose(orig, got, atol=1e-6)


class TestMeshProperties:
    def test_cube_volume(self, unit_cube):
        assert math.isclose(unit_cube.volume(), 1.0, rel_tol=1e-12)

    def test_normals_unit_length(self, unit_cube):
        lens = np.linalg.norm(unit_cube.face_normals, axis=1)
        assert np.max(np.abs(lens - 1.0)) < 1e-9

    def test_transformed_volume_invariant(self, unit_cube):
        rng = np.random.default_rng(11)
        t = random_transform(rng)
        assert math.isclose(unit_cube.transformed(t).volume(), 1.0,
                            rel_tol=1e-9)

    def test_content_hash_changes_with_geometry(self, unit_cube):
        other = make_cube(center=(0.5, 0, 0))
        assert unit_cube.content_hash != other.content_hash
        assert unit_cube.content_hash == make_cube().content_hash

import numpy as np
import pytest

from mpgtrack import so3
from mpgtrack.camera import (
    CameraModel,
    backproject,
    frustum_contains,
    load_camera,
    project,
    project_with_jacobian,
    rotation_to_camera,
    rotation_to_world,
    save_camera,
)
from mpgtrack.errors import BehindCameraError, InvalidInputError, InvalidRotationError, ParseError, SchemaError

from helpers import random_camera


@pytest.fixture
def ident():
    return CameraModel(1000, 1000, 500, 500, np.eye(3), np.zeros(3))


def test_optical_axis(ident):
    assert np.allclose(project(ident, [[0, 0, 2]]), [[500, 500]])


def test_offset_point(ident):
    assert np.allclose(project(ident, [[0.5, 0, 2]]), [[750, 500]])


def test_behind_camera_names_index(ident):
    with pytest.raises(BehindCameraError) as info:
        project(ident, [[0, 0, 1], [0, 0, 0], [0, 0, -1]])
    assert info.value.indices == [1, 2]


def test_invalid_intrinsics_and_rotation():
    with pytest.raises(InvalidInputError):
        CameraModel(0, 1000, 500, 500, np.eye(3), np.zeros(3))
    with pytest.raises(InvalidRotationError):
        CameraModel(1000, 1000, 500, 500, np.diag([1, 1, -1.0]), np.zeros(3))


def test_scale_covariance_along_rays(ident, rng):
    pts = rng.uniform(-1, 1, (20, 3)) + [0, 0, 4]
    for lam in (0.5, 2.0, 13.0):
        assert np.allclose(project(ident, lam * pts), project(ident, pts), atol=1e-9)


def test_projection_jacobian(rng):
    cam = random_camera(rng)
    pts = rng.uniform(-0.5, 0.5, (5, 3))
    _, jac = project_with_jacobian(cam, pts)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        num = (project(cam, pts + e) - project(cam, pts - e)) / (2 * h)
        assert np.allclose(jac[:, :, i], num, atol=1e-4)


def test_rotation_to_world_examples(ident):
    assert np.allclose(rotation_to_world(ident, np.eye(3)), np.eye(3))
    cam = ident.with_extrinsics(so3.rot_z(np.pi / 2), np.zeros(3))
    assert np.allclose(rotation_to_world(cam, so3.rot_z(np.pi / 2)), np.eye(3), atol=1e-15)


def test_rotation_roundtrip(rng):
    cam = random_camera(rng)
    r = so3.exp_map(rng.normal(size=3))
    out = rotation_to_world(cam, r)
    assert np.allclose(rotation_to_camera(cam, out), r, atol=1e-12)
    assert so3.is_rotation(out, tol=1e-12)


def test_rotation_to_world_rejects_non_orthonormal(ident):
    with pytest.raises(InvalidRotationError):
        rotation_to_world(ident, np.eye(3) * 1.01)


def test_frustum_examples(ident):
    assert frustum_contains(ident, [0, 0, 2], 1000, 1000, (0.5, 10))
    assert not frustum_contains(ident, [0, 0, -2], 1000, 1000, (0.5, 10))
    assert not frustum_contains(ident, [0, 0, 20], 1000, 1000, (0.5, 10))


def test_backproject_inverts_project(rng):
    cam = random_camera(rng)
    p = backproject(cam, (321.0, 654.0), 4.0)
    assert np.allclose(project(cam, p[None])[0], [321.0, 654.0])
    assert cam.to_camera(p)[2] == pytest.approx(4.0)


def test_look_at_puts_target_on_axis():
    cam = CameraModel.look_at([3, -4, 2], [0, 0, 1], 800, 800, 320, 240)
    assert np.allclose(project(cam, [[0, 0, 1]]), [[320, 240]])
    # world up appears as image up (smaller v)
    assert project(cam, [[0, 0, 1.5]])[0, 1] < 240


def test_file_roundtrip_and_errors(tmp_path, rng):
    cam = random_camera(rng)
    path = tmp_path / "cam.json"
    save_camera(path, cam)
    again = load_camera(path)
    assert np.allclose(again.rotation, cam.rotation) and np.allclose(again.translation, cam.translation)
    (tmp_path / "bad.json").write_text('{"fx": 1,\n oops}')
    with pytest.raises(ParseError) as info:
        load_camera(tmp_path / "bad.json")
    assert info.value.line == 2
    (tmp_path / "partial.json").write_text('{"fx": 1}')
    with pytest.raises(SchemaError):
        load_camera(tmp_path / "partial.json")


def test_transformed_camera_sees_moved_world_identically(rng):
    cam = random_camera(rng)
    r = so3.exp_map(rng.normal(size=3))
    t = rng.normal(size=3)
    pts = rng.uniform(-0.5, 0.5, (10, 3))
    assert np.allclose(project(cam.transformed(r, t), pts @ r.T + t), project(cam, pts), atol=1e-9)

import os
import subprocess
import sys
import textwrap

import cv2
import numpy as np
import pytest

import stubengine as engine


@pytest.fixture(autouse=True)
def clean_injection_state(monkeypatch):
    monkeypatch.delenv("STUB_FAIL", raising=False)
    engine._fail_fired = False
    yield
    engine._fail_fired = False


def build_scene(**kwargs):
    scene = engine.Scene(**kwargs)
    scene.add_plane(friction_coefficient=0.6)
    scene.add_sphere(radius=0.2, mass=1.0, elasticity=0.8, position=(0, 0, 1))
    return scene


def probe(path):
    cap = cv2.VideoCapture(str(path))
    meta = (
        int(cap.get(cv2.CAP_PROP_FRAME_WIDTH)),
        int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT)),
        cap.get(cv2.CAP_PROP_FPS),
        int(cap.get(cv2.CAP_PROP_FRAME_COUNT)),
    )
    cap.release()
    return meta


class TestSceneBasics:
    def test_frame_count_is_rounded_product(self):
        assert engine.Scene(fps=60, duration=5.0).frame_count == 300
        assert engine.Scene(fps=30, duration=5.0).frame_count == 150
        assert engine.Scene(fps=24, duration=2.1).frame_count == round(24 * 2.1)

    def test_compliant_video(self, tmp_path):
        scene = build_scene()
        scene.set_camera(position=(4, 4, 2), target=(0, 0, 0.5), fov=35)
        scene.run()
        out = tmp_path / "genesis_video.mp4"
        scene.save_video(str(out))
        assert probe(out) == (1280, 640, 60.0, 300)
        assert out.stat().st_size > 100_000

    def test_save_without_stepping_still_renders_full_clip(self, tmp_path):
        scene = build_scene()
        out = tmp_path / "v.mp4"
        scene.save_video(str(out))
        assert probe(out)[3] == scene.frame_count

    def test_viewer_request_rejected(self):
        with pytest.raises(RuntimeError, match="show_viewer"):
            engine.Scene(show_viewer=True)

    def test_unknown_pattern_rejected(self):
        with pytest.raises(ValueError, match="pattern"):
            engine.Scene(pattern="plasma")


class TestParameterValidation:
    def test_misspelled_keyword_raises_type_error(self):
        scene = engine.Scene()
        with pytest.raises(TypeError, match="unexpected keyword argument 'friction_coef'"):
            scene.add_sphere(friction_coef=0.5)

    def test_negative_mass(self):
        scene = engine.Scene()
        with pytest.raises(ValueError, match="mass must be positive"):
            scene.add_box(mass=-2.0)

    def test_elasticity_out_of_range(self):
        scene = engine.Scene()
        with pytest.raises(ValueError, match="elasticity"):
            scene.add_sphere(elasticity=3.5)

    def test_friction_out_of_range(self):
        scene = engine.Scene()
        with pytest.raises(ValueError, match="friction_coefficient"):
            scene.add_plane(friction_coefficient=-0.1)


class TestPatterns:
    def test_static_frames_identical(self):
        scene = build_scene(pattern="static")
        frames = [scene._frame(i, 64, 32) for i in range(4)]
        assert all(np.array_equal(frames[0], f) for f in frames[1:])

    def test_jitter_flickers_every_frame(self):
        scene = build_scene(pattern="jitter")
        frames = [scene._frame(i, 64, 32).astype(int) for i in range(6)]
        diffs = [np.abs(a - b).mean() for a, b in zip(frames, frames[1:])]
        assert all(d > 20 for d in diffs)
        # deterministic: same index, same color
        assert np.array_equal(scene._frame(3, 64, 32), scene._frame(3, 64, 32))

    def test_smooth_changes_gently(self):
        scene = build_scene(pattern="smooth")
        a = scene._frame(0, 640, 64).astype(float)
        b = scene._frame(1, 640, 64).astype(float)
        assert not np.array_equal(a, b)
        assert np.abs(a - b).mean() < 12.0

    def test_frame_content_keyed_by_entity_parameters(self):
        one = build_scene()
        other = engine.Scene()
        other.add_plane(friction_coefficient=0.9)
        assert not np.array_equal(one._frame(0, 32, 16), other._frame(0, 32, 16))


class TestDeterminism:
    def test_identical_scenes_identical_bytes(self, tmp_path):
        digests = []
        for name in ("a.mp4", "b.mp4"):
            scene = build_scene()
            scene.run()
            out = tmp_path / name
            scene.save_video(str(out))
            digests.append(out.read_bytes())
        assert digests[0] == digests[1]


SCRIPT = textwrap.dedent(
    """
    import stubengine as engine
    engine.init()
    scene = engine.Scene()
    scene.add_plane(friction_coefficient=0.6)
    scene.add_sphere(radius=0.2, mass=1.0, elasticity=0.8, position=(0, 0, 1))
    scene.run()
    scene.save_video("genesis_video.mp4")
    """
)


def run_script(tmp_path, mode, timeout=60):
    workdir = tmp_path / mode
    workdir.mkdir()
    (workdir / "s.py").write_text(SCRIPT)
    env = {k: v for k, v in os.environ.items() if k != "STUB_FAIL"}
    env["STUB_FAIL"] = mode
    return (
        subprocess.run(
            [sys.executable, "s.py"], cwd=workdir, env=env,
            capture_output=True, text=True, timeout=timeout,
        ),
        workdir / "genesis_video.mp4",
    )


class TestFailureInjection:
    def test_none_mode_is_clean(self, tmp_path):
        proc, video = run_script(tmp_path, "none")
        assert proc.returncode == 0
        assert probe(video) == (1280, 640, 60.0, 300)

    def test_raise_api(self, tmp_path):
        proc, _ = run_script(tmp_path, "raise_api")
        assert proc.returncode != 0
        assert "has no attribute 'friction_coef'" in proc.stderr

    def test_raise_param(self, tmp_path):
        proc, _ = run_script(tmp_path, "raise_param")
        assert proc.returncode != 0
        assert "exceeds physical limits" in proc.stderr

    def test_timeout_busy_loops(self, tmp_path):
        with pytest.raises(subprocess.TimeoutExpired):
            run_script(tmp_path, "timeout", timeout=2)

    def test_no_file(self, tmp_path):
        proc, video = run_script(tmp_path, "no_file")
        assert proc.returncode == 0
        assert not video.exists()

    def test_small_file_keeps_metadata(self, tmp_path):
        proc, video = run_script(tmp_path, "small_file")
        assert proc.returncode == 0
        assert video.stat().st_size < 100_000
        assert probe(video) == (1280, 640, 60.0, 300)

    def test_resolution(self, tmp_path):
        proc, video = run_script(tmp_path, "resolution")
        assert proc.returncode == 0
        assert probe(video)[:2] == (640, 480)
        assert video.stat().st_size > 100_000

    def test_fps_preserves_duration(self, tmp_path):
        proc, video = run_script(tmp_path, "fps")
        assert proc.returncode == 0
        width, height, fps, frames = probe(video)
        assert (width, height) == (1280, 640)
        assert fps == 30.0
        assert frames / fps == pytest.approx(5.0)

    def test_unknown_mode_aborts_distinctly(self, tmp_path):
        proc, _ = run_script(tmp_path, "explode")
        assert proc.returncode != 0
        assert "unknown STUB_FAIL value 'explode'" in proc.stderr

    def test_injection_fires_exactly_once_per_process(self, monkeypatch):
        monkeypatch.setenv("STUB_FAIL", "raise_api")
        engine._fail_fired = False
        scene = build_scene()
        with pytest.raises(AttributeError):
            scene.step()
        scene.step()  # second call must not re-fire
        assert scene._steps_taken == 1

import numpy as np
import pytest

from ivskit.imgcore import GrayImage
from ivskit.synth import Bubble, SceneSpec, render_scene


def disk_scene(size=160, bubbles=(), noise=0.01, seed=0, texture=0.2, blur=0.8):
    return render_scene(SceneSpec(
        width=size, height=size, bubbles=tuple(bubbles), background=0.85,
        noise_sigma=noise, blur_sigma=blur, seed=seed,
        texture_amplitude=texture, texture_seed=7,
    ))


@pytest.fixture(scope="session")
def textured_image():
    rng = np.random.default_rng(11)
    bubbles = [Bubble(int(rng.integers(20, 140)), int(rng.integers(20, 140)), 8, 0.15)
               for _ in range(6)]
    return disk_scene(bubbles=bubbles, seed=3).image


@pytest.fixture(scope="session")
def textured_image_variant():
    rng = np.random.default_rng(11)
    bubbles = [Bubble(int(rng.integers(20, 140)), int(rng.integers(20, 140)), 8, 0.15)
               for _ in range(6)]
    return disk_scene(bubbles=bubbles, seed=4).image


@pytest.fixture
def constant_image():
    return GrayImage(np.full((64, 64), 0.4))


def transition_schedule(frames_per_level=3):
    """Six levels, abrupt morphology change between the third and fourth."""
    from ivskit.synth import RegimeLevel, RegimeSchedule

    calm = dict(n_bubbles=6, radius=9, n_small=8, small_radius=2)
    busy = dict(n_bubbles=15, radius=9, elongation=2, n_small=8, small_radius=2)
    levels = tuple(RegimeLevel(q=10.0 * (i + 1), **(calm if i < 3 else busy)) for i in range(6))
    return RegimeSchedule(levels=levels, frames_per_level=frames_per_level)


def memory_run(schedule, seed):
    """Frame sets plus loaders backed by in-memory scenes."""
    from ivskit.synth import render_run

    sets, scenes, rows = render_run(schedule, seed)
    return sets, (lambda ref: scenes[ref.key].image), (lambda ref: scenes[ref.key].mask), rows


# criterion number -> (title, passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")

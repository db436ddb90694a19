import pytest

from crossim import bundled_scene_text
from crossim.scene import load_scene


@pytest.fixture(scope="session")
def scene():
    return load_scene(bundled_scene_text())

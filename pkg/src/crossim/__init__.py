"""crossim: deterministic multi-modal street-crossing micro-simulation with a
stated-preference trial protocol and scaled-logit choice estimation.
"""

from importlib.resources import files as _files

__version__ = "0.1.0"


def bundled_scene_text() -> str:
    """The example two-lane intersection scene shipped with the package."""
    return (_files(__name__) / "data" / "laurier_rivard.json").read_text(encoding="utf-8")

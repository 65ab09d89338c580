from pathlib import Path

import pytest

from hpnp.image import Image, load_image

CROP_DIR = Path(__file__).parent / "data" / "crops"


@pytest.fixture(scope="session")
def crops() -> dict[str, Image]:
    return {path.stem: load_image(path) for path in sorted(CROP_DIR.glob("*.pgm"))}


@pytest.fixture(scope="session")
def crop_dir() -> Path:
    return CROP_DIR

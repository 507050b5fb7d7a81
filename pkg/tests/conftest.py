import numpy as np
import pytest

from slidesearch.build import build_database
from slidesearch.core import Magnification
from slidesearch.dataset import (
    ClassSpec,
    SynthSpec,
    extract_patches,
    generate_synthetic,
    save_annotations,
)
from slidesearch.index import IndexParams

TINY_CLASSES = (
    ClassSpec("artery", (200, 80, 90), 31.0, 15.0, 10.0),
    ClassSpec("fat", (235, 225, 150), 17.0, 120.0, 10.0),
    ClassSpec("nerve", (90, 170, 120), 53.0, 70.0, 10.0),
    ClassSpec("stroma", (120, 110, 210), 41.0, 45.0, 10.0),
)

TINY_SPEC = SynthSpec(
    seed=11,
    n_slides=3,
    classes=TINY_CLASSES,
    regions_per_slide=4,
    slide_width_px=1024,
    slide_height_px=1024,
    tile_size_px=256,
    region_margin_px=32,
    slide_organs=("prostate", "breast"),
)


@pytest.fixture(scope="session")
def tiny_store(tmp_path_factory):
    """3 slides, 4 striped classes, full pyramid; shared read-only."""
    root = tmp_path_factory.mktemp("tiny_store")
    store, annotations = generate_synthetic(TINY_SPEC, root)
    save_annotations(root / "annotations.json", annotations)
    return store, annotations


@pytest.fixture(scope="session")
def tiny_patches(tiny_store):
    store, annotations = tiny_store
    return extract_patches(store, annotations, Magnification.M40X,
                           side_px=256)


@pytest.fixture(scope="session")
def tiny_db(tiny_store, tiny_patches):
    """Shard set over 256-px patches (256 is inside the 200..400 window,
    so region queries can hit exact patches)."""
    store, _ = tiny_store
    shards = build_database(store, tiny_patches,
                            params=IndexParams(n_shards=2), threads=2)
    return shards


@pytest.fixture()
def rng():
    return np.random.default_rng(810)

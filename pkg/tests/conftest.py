import numpy as np
import pytest

from stylegallery.fixtures import demo_pair
from stylegallery.maskio import image_to_png_bytes


@pytest.fixture(scope="session")
def demo_images():
    return demo_pair(size=64)


@pytest.fixture(scope="session")
def demo_png_bytes(demo_images):
    content, styles = demo_images
    return image_to_png_bytes(content.pixels), [image_to_png_bytes(s.pixels) for s in styles]


@pytest.fixture
def fast_config():
    """Small step counts so service/CLI round trips stay quick."""
    return {
        "transfer": {"opt_steps": 12, "denoise_steps": 4, "seed": 3},
        "inversion_steps": 4,
    }


def wait_for_state(client, job_id, state, timeout=60.0):
    import time

    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        doc = client.get(f"/jobs/{job_id}").json()
        if doc["state"] == state:
            return doc
        if doc["state"] == "failed" and state != "failed":
            raise AssertionError(f"job failed: {doc['error']}")
        time.sleep(0.05)
    raise TimeoutError(f"job {job_id} never reached {state}")

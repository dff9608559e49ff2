import json
import os

import numpy as np
import pytest

FIXTURES = os.path.join(os.path.dirname(__file__), os.pardir, "fixtures")


def fixture_path(name: str) -> str:
    return os.path.abspath(os.path.join(FIXTURES, name))


def load_reference(path: str):
    """Read the pinned-input reference file written by the fixture exporter.

    Returns ``(inputs [count, *input_shape], {layer_index: activations})``.
    """
    with open(os.path.join(path, "ref.json"), "r", encoding="utf-8") as fh:
        desc = json.load(fh)
    blob = open(os.path.join(path, desc.get("data_file", "ref.bin")), "rb").read()
    count = desc["count"]
    in_shape = tuple(desc["input_shape"])
    inputs = np.frombuffer(blob, dtype="<f4", count=count * int(np.prod(in_shape)),
                           offset=desc["inputs_offset"]).reshape((count,) + in_shape)
    acts = {}
    for entry in desc["layers"]:
        shape = (count,) + tuple(entry["shape"])
        acts[entry["layer"]] = np.frombuffer(
            blob, dtype="<f4", count=int(np.prod(shape)),
            offset=entry["offset"]).reshape(shape)
    return inputs.copy(), {k: v.copy() for k, v in acts.items()}


@pytest.fixture(scope="session")
def tiny_mlp_dir():
    return fixture_path("tiny_mlp")


@pytest.fixture(scope="session")
def tiny_cnn_dir():
    return fixture_path("tiny_cnn")

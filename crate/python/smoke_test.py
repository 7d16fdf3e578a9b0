"""Smoke test for the Python extension.

Build first:  cargo build -p layered-design-py --release
Then run:     python3 python/smoke_test.py
"""

import importlib.machinery
import importlib.util
import io
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FIXTURE = ROOT / "crates/core/tests/fixtures/worked_example"


def load_extension():
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "liblayered_design_py.so"
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("layered_design_py", str(lib))
            spec = importlib.util.spec_from_file_location("layered_design_py", lib, loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("liblayered_design_py.so not found; run `cargo build -p layered-design-py` first")


def main():
    ld = load_extension()
    design = ld.Design.from_json((FIXTURE / "design.json").read_text(), str(FIXTURE))
    assert design.size == (1080, 1920), design.size
    assert design.validate() == []
    assert design.transcript() == (FIXTURE / "transcript.txt").read_text()

    png = design.render(level=5, aliased=True)
    assert png == (FIXTURE / "golden_g5.png").read_bytes()
    try:
        from PIL import Image

        assert Image.open(io.BytesIO(design.render(level=1))).size == (1080, 1920)
    except ImportError:
        pass

    assert ld.plan(design)["logo_image"] == ["photo"]
    composed = ld.compose_heuristic(design, seed=3)
    assert composed.validate() == []
    scores = composed.scores()
    assert scores["val"] == 1.0 and 0.0 <= scores["ove"] <= 1.0, scores
    assert json.loads(composed.to_json())["id"] == "spring-clean"

    try:
        ld.Design.from_json("{}")
    except ValueError:
        pass
    else:
        raise AssertionError("bad JSON accepted")
    print("python smoke test passed:", composed)


if __name__ == "__main__":
    main()

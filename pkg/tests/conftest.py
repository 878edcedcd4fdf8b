"""Shared fixtures: small knowledge bases and ASCII mask helpers."""
import numpy as np
import pytest

from virreq.kb import KbBuilder, KbRegistry, KbVersion
from virreq.masks import BinaryMask


def mask(text: str) -> BinaryMask:
    """Build a mask from ASCII art: '#' set, '.' clear, rows newline-split."""
    rows = [r.strip() for r in text.strip().splitlines()]
    width = len(rows[0])
    assert all(len(r) == width for r in rows), "ragged ascii mask"
    bits = np.array([[c == "#" for c in r] for r in rows], dtype=bool)
    return BinaryMask(bits)


def ascii_mask(m: BinaryMask) -> str:
    return "\n".join("".join("#" if v else "." for v in row)
                     for row in m.bits)


def box_mask(width: int, height: int, a0: int, b0: int, a1: int,
             b1: int) -> BinaryMask:
    """Filled rectangle with inclusive corners, (a, b) = (column, row)."""
    bits = np.zeros((height, width), dtype=bool)
    bits[b0:b1 + 1, a0:a1 + 1] = True
    return BinaryMask(bits)


@pytest.fixture
def mini_kb() -> KbVersion:
    """Three top-level classes: one stuff, two things with two parts each."""
    b = KbBuilder()
    b.add("road")
    person = b.add("person", countable=True)
    b.add("torso", parent=person)
    b.add("head", parent=person)
    car = b.add("car", countable=True)
    b.add("wheel", parent=car)
    b.add("body", parent=car)
    return b.freeze()


@pytest.fixture
def mini_registry(mini_kb) -> KbRegistry:
    reg = KbRegistry()
    reg.put(mini_kb)
    return reg


@pytest.fixture
def cpp_kb() -> KbVersion:
    """Street-scene vocabulary: 11 stuff + 8 thing classes, 5 with parts."""
    b = KbBuilder()
    for label in ("road", "sidewalk", "building", "wall", "fence", "pole",
                  "traffic light", "traffic sign", "vegetation", "terrain",
                  "sky"):
        b.add(label)
    human_parts = ("torso", "head", "arm", "leg")
    vehicle_parts = ("chassis", "window", "wheel", "light", "license plate")
    for label, parts in (("person", human_parts), ("rider", human_parts),
                         ("car", vehicle_parts), ("truck", vehicle_parts),
                         ("bus", vehicle_parts), ("train", ()),
                         ("motorcycle", ()), ("bicycle", ())):
        cid = b.add(label, countable=True)
        for part in parts:
            b.add(part, parent=cid)
    return b.freeze()


def class_id(kb: KbVersion, label: str, parent: str = None) -> int:
    """Resolve a label, disambiguating shared part names by parent label."""
    found = kb.find_by_label(label)
    if parent is not None:
        found = [c for c in found
                 if kb.concept(kb.parent_of(c.id)).label == parent]
    assert len(found) == 1, f"{label!r} matches {len(found)} concepts"
    return found[0].id


# test_acceptance appends one line per criterion; printed after the run so
# the verdicts stay visible even though pytest captures stdout
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

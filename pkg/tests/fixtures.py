"""Hand-built interaction files with known post-filter counts."""

from pathlib import Path

CORE_USERS = 36
CORE_ITEMS = 25
LIGHT_USERS = 10
LIGHT_ITEMS = 9
RARE_FROM_CORE = 9

# After the >= 10 filter only the complete core block survives.
EXPECTED = {"users": CORE_USERS, "items": CORE_ITEMS, "interactions": CORE_USERS * CORE_ITEMS}


def write_thousand_line_fixture(path) -> Path:
    """1,000 lines in ML10M ``user::item::rating::timestamp`` layout.

    * 36 core users x 25 core items, every pair present: 900 lines.
    * 10 light users with 9 items each (too few): 90 lines. Light user 0's
      ninth item is the rare item, so that item starts with 10 interactions.
    * The rare item is also rated by 9 core users: 9 lines.
    * One exact duplicate of a core line: 1 line.

    The first filter pass drops the light users; the rare item then has 9
    interactions and goes in the second pass. Core users keep 25 items.
    """
    lines = []
    for u in range(CORE_USERS):
        for i in range(CORE_ITEMS):
            lines.append(f"{u + 1}::{i + 1}::4::{1000 + len(lines)}")
    rare = 999
    for v in range(LIGHT_USERS):
        items = [i + 1 for i in range(LIGHT_ITEMS)]
        if v == 0:
            items[-1] = rare
        for i in items:
            lines.append(f"{500 + v}::{i}::3::{1000 + len(lines)}")
    for u in range(RARE_FROM_CORE):
        lines.append(f"{u + 1}::{rare}::5::{1000 + len(lines)}")
    lines.append(lines[0])
    assert len(lines) == 1000
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path

#!/usr/bin/env python3
"""Regenerate the bundled track tables."""

from pathlib import Path

from gpovertake.track import make_oval_chicane, make_circle, save_raceline

ROOT = Path(__file__).resolve().parent.parent / "tracks"


def main():
    ROOT.mkdir(exist_ok=True)
    save_raceline(make_oval_chicane(), ROOT / "oval_chicane.csv")
    save_raceline(make_circle(radius=8.0, spacing=0.1, v_ref=4.0), ROOT / "circle_r8.csv")
    print(f"wrote tracks to {ROOT}")


if __name__ == "__main__":
    main()

"""Print the parameter census of every preset next to its reported size."""

import argparse

from anthe.model import PRESETS, count_params, preset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--components", action="store_true", help="also break each total down by component")
    args = ap.parse_args()

    print(f"{'preset':<22} {'params':>12} {'reported':>9} {'dev':>7}")
    for name, (_, reported) in PRESETS.items():
        c = count_params(preset(name))
        dev = f"{c.total / reported - 1:+.2%}" if reported else ""
        rep = f"{reported / 1e6:.0f}M" if reported else ""
        print(f"{name:<22} {c.total:>12,d} {rep:>9} {dev:>7}")
        if args.components:
            for k, v in c.as_dict().items():
                if k != "total" and v:
                    print(f"    {k:<20} {v:>12,d}")


if __name__ == "__main__":
    main()

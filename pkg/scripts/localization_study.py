"""Run the desk-scale pseudo-localization study and write the results as JSON.

    python scripts/localization_study.py --jobs 4 --out results/study.json
"""

import argparse
import json
import logging
from dataclasses import fields
from pathlib import Path

from asobo.study import StudyConfig, run_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    defaults = StudyConfig()
    for f in fields(StudyConfig):
        if f.name == "tcn":
            continue
        value = getattr(defaults, f.name)
        ap.add_argument("--" + f.name.replace("_", "-"), type=type(value) if value is not None else float,
                        default=value)
    ap.add_argument("--out", type=Path, default=Path("results/study.json"))
    args = vars(ap.parse_args())
    out = args.pop("out")
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    result = run_study(StudyConfig(**args), log=logging.getLogger("study").info)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result.as_dict(), indent=2))


if __name__ == "__main__":
    main()

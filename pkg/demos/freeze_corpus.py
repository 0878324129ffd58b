"""Regenerate the expected-output sidecars of tests/corpus from the enumeration oracle.

Only the trace-enumeration semantics is used here; the operator semantics is
what the corpus tests then check against these files.

    python3 demos/freeze_corpus.py [corpus-dir]
"""
import json
import sys
from pathlib import Path

from oppl.suites import DISCRETE_CFG, expected_document

root = Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "tests" / "corpus")
for path in sorted(root.glob("*.oppl")):
    doc = expected_document("", path.read_text(encoding="utf-8"), DISCRETE_CFG)
    doc["ctx"] = ""
    path.with_suffix(".json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{path.stem}: {doc['kind']}")

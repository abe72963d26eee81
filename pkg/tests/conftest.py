import sys
from pathlib import Path

from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).resolve().parent))

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

GOLDEN_DIR = Path(__file__).resolve().parent.parent / "golden"


def load_golden_cases(path=None):
    """Parse golden/codec_vectors.txt into {case: {key: value}} with hex decoded."""
    text = (path or GOLDEN_DIR / "codec_vectors.txt").read_text()
    cases, current = {}, None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, value = line.split(None, 1)
        if key == "case":
            current = cases.setdefault(value, {})
        elif key in ("n", "f"):
            current[key] = int(value)
        else:
            current[key] = bytes.fromhex(value)
    return cases

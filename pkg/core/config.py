#!/usr/bin/env python3
"""
Configuration module for the video pointing toolkit
"""

import os
import sys
from pathlib import Path

import psutil

# Optional: load .env if present
try:
    from dotenv import load_dotenv  # type: ignore
    load_dotenv()
except Exception:  # pragma: no cover - optional dependency
    pass

TOOL_NAME = "videopoint-toolkit"
TOOL_VERSION = "1.0.0"

STRATEGIES = (
    "bidirectional", "prefer-left", "prefer-right",
    "intersection", "larger", "smaller",
)

# Read env first
DEFAULT_LOG_LEVEL = os.getenv("VPT_LOG_LEVEL", "INFO").upper()
LOG_FILE = os.getenv("VPT_LOG_FILE", "")
OUTPUT_ROOT = os.getenv("VPT_OUTPUT_ROOT")
_K = os.getenv("VPT_K")
_TAU = os.getenv("VPT_TAU")
_STRATEGY = os.getenv("VPT_STRATEGY")
_CONTEXT_LENGTH = os.getenv("VPT_CONTEXT_LENGTH")
_CANDIDATES = os.getenv("VPT_CANDIDATES")
_SEED = os.getenv("VPT_SEED")
_WORKERS = os.getenv("VPT_WORKERS")

# Fallback to user config.py at project root (one level up from this file's directory)
try:
    project_root = Path(__file__).resolve().parents[1]
    user_config_path = project_root / "config.py"
    if user_config_path.exists():
        import importlib.util
        _spec = importlib.util.spec_from_file_location("user_toolkit_config", str(user_config_path))
        if _spec and _spec.loader:
            _config = importlib.util.module_from_spec(_spec)
            _spec.loader.exec_module(_config)  # type: ignore
            DEFAULT_LOG_LEVEL = os.getenv("VPT_LOG_LEVEL", getattr(_config, "LOG_LEVEL", DEFAULT_LOG_LEVEL)).upper()
            OUTPUT_ROOT = OUTPUT_ROOT or getattr(_config, "OUTPUT_ROOT", None)
            _K = _K or getattr(_config, "K", None)
            _TAU = _TAU or getattr(_config, "TAU", None)
            _STRATEGY = _STRATEGY or getattr(_config, "STRATEGY", None)
            _CONTEXT_LENGTH = _CONTEXT_LENGTH or getattr(_config, "CONTEXT_LENGTH", None)
            _CANDIDATES = _CANDIDATES or getattr(_config, "CANDIDATES", None)
            _SEED = _SEED or getattr(_config, "SEED", None)
            _WORKERS = _WORKERS or getattr(_config, "WORKERS", None)
except Exception:
    # Silent fallback; validation happens below
    pass


def _fail(message: str) -> None:
    print(f"ERROR: {message}", file=sys.stderr)
    sys.exit(1)


def _as_int(raw, default: int, name: str) -> int:
    if raw is None or str(raw).strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        _fail(f"{name} must be an integer.")
    return default  # unreachable


def _as_float(raw, default: float, name: str) -> float:
    if raw is None or str(raw).strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        _fail(f"{name} must be a number.")
    return default  # unreachable


# Output location
OUTPUT_ROOT = str(OUTPUT_ROOT or "runs")

# Fusion defaults: k = 5 and tau = 0.7 are the reference operating point
DEFAULT_K = _as_int(_K, 5, "VPT_K")
DEFAULT_TAU = _as_float(_TAU, 0.7, "VPT_TAU")
DEFAULT_STRATEGY = str(_STRATEGY or "bidirectional").strip().lower()

# Temporal module context length l
DEFAULT_CONTEXT_LENGTH = _as_int(_CONTEXT_LENGTH, 4, "VPT_CONTEXT_LENGTH")

# Annotation: candidate points per (frame, object)
DEFAULT_CANDIDATES = _as_int(_CANDIDATES, 5, "VPT_CANDIDATES")

DEFAULT_SEED = _as_int(_SEED, 0, "VPT_SEED")
DEFAULT_WORKERS = _as_int(_WORKERS, psutil.cpu_count(logical=False) or 1, "VPT_WORKERS")

# Validate ranges
if DEFAULT_K < 1:
    _fail("VPT_K must be >= 1.")
if not 0.0 <= DEFAULT_TAU <= 1.0:
    _fail("VPT_TAU must lie in [0, 1].")
if DEFAULT_STRATEGY not in STRATEGIES:
    _fail(f"VPT_STRATEGY must be one of: {', '.join(STRATEGIES)}.")
if DEFAULT_CONTEXT_LENGTH < 1:
    _fail("VPT_CONTEXT_LENGTH must be >= 1.")
if DEFAULT_CANDIDATES < 1:
    _fail("VPT_CANDIDATES must be >= 1.")
if DEFAULT_WORKERS < 1:
    DEFAULT_WORKERS = 1

# Exit codes shared by every command
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT_ERROR = 2
EXIT_VERIFICATION_FAILED = 3

# Verification thresholds for attn-check
GRAD_REL_ERROR_THRESHOLD = 1e-4
SOFTMAX_RESIDUAL_THRESHOLD = 1e-9

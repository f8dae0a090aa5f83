"""Static integer-overflow detection and source repair for a C subset.

The pipeline: parse (`frontend`), lower to per-function control-flow graphs
(`cfg`), explore paths symbolically while an overflow checker probes every
assignment (`symexec`, `overflow`), stage guard repairs validated against the
path constraints (`repair`), and re-analyze patched sources.  `bench` grows
ground-truthed synthetic corpora for scoring; `cli` and `service` wrap the
pipeline for the command line and a loopback review API.
"""

from .cfg import CfgConfig, build_unit, dump_cfg
from .constraints import (ConstraintSystem, SolverConfig, SolverUnavailable,
                          Verdict, check_sat)
from .frontend import ParseFailure, parse, parse_ok
from .overflow import BoundInfo, BugReport, DetectionRun, analyze_source
from .repair import (RepairCandidate, RepairConfig, apply_candidates,
                     generate_candidates, revalidate)
from .service import FindingStore, serve_review

__version__ = "0.1.0"

__all__ = [
    "BoundInfo",
    "BugReport",
    "CfgConfig",
    "ConstraintSystem",
    "DetectionRun",
    "FindingStore",
    "ParseFailure",
    "RepairCandidate",
    "RepairConfig",
    "SolverConfig",
    "SolverUnavailable",
    "Verdict",
    "analyze_source",
    "apply_candidates",
    "build_unit",
    "check_sat",
    "dump_cfg",
    "generate_candidates",
    "parse",
    "parse_ok",
    "revalidate",
    "serve_review",
    "__version__",
]

"""Dataflow-mapping optimizer for multi-core computing-in-memory accelerators.

Turns a DNN layer plus a hardware description into a mixed-integer model
whose solution is a complete temporal/spatial mapping, and re-evaluates any
mapping with an independent stall-aware analytical latency model.
"""

__version__ = "0.1.0"

from .arch import ArchSpec, MacroSpec, MemoryLevel, SpatialAxis, load_arch, \
    operand_path_candidates
from .baselines import BaselineConfig, exhaustive_best, heuristic_search, ws_constrained
from .enumeration import CandidateTable, TileCandidate, build_candidate_table, \
    enumerate_candidates, relevant_dims
from .errors import CimoptError
from .latency import LatencyReport, energy_edp, evaluate
from .mapping import Mapping, decode_solution, re_encode, verify_mapping
from .mipbuild import BuildContext, ObjectiveWeights, build_model
from .mipmodel import MipModel
from .solve import SolveConfig, SolveResult, solve, solve_builtin
from .workload import (FactorSet, FactorizationConfig, LayerShape, factorize_layer,
                       flex_score, flexible_factorization, load_workload, prime_factors)

"""Bilinear similarity learning that maximizes retrieval top precision."""
from .core import (
    DualSolution,
    RankingResult,
    RetrievalDataset,
    SimilarityModel,
    TripletSet,
    enumerate_triplets,
    validate_dataset,
)
from .metrics import hinge_loss, mean_top_precision, primal_objective, top_irrelevant_index, top_precision
from .qp import GramOracle, SolverConfig, WorkingSet, certify, project_capped_simplex, recover_W, solve_dual
from .similarity import rank_database, score, score_all
from .trainer import baseline_identity, evaluate, split_queries, train

__version__ = "0.1.0"

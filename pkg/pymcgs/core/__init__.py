"""
Core functionality for pymcgs
"""
from .graph import (
    ExecState,
    OperatorKind,
    ExpansionMode,
    EdgeKind,
    RefKind,
    SolutionPayload,
    SolutionNode,
    EdgeRecord,
    SolutionGraph,
    StructureReport,
    validate_structure,
)
from .search import SearchPolicyConfig, RewardRecord, MemoryTiers, uct_score, select, compute_reward, backpropagate
from .engine import Direction, TaskSpec, ProposalRequest, EvalOutcome, ReviewVerdict, ProposalEngine, Environment
from .knowledge import KnowledgeBase, KnowledgeEntry, retrieve, injection_context
from .synthetic import SyntheticEngine, SyntheticEnvironment
from .operators import OperatorBudgets, OperatorScheduler, ReferenceSet, choose_operator, build_reference_set, expand
from .config import RunConfig
from .events import EventKind, EventLog, EventRecord, replay_events
from .orchestrator import Orchestrator, RunReport
from .report import emit_report

__all__ = [
    'ExecState',
    'OperatorKind',
    'ExpansionMode',
    'EdgeKind',
    'RefKind',
    'SolutionPayload',
    'SolutionNode',
    'EdgeRecord',
    'SolutionGraph',
    'StructureReport',
    'validate_structure',
    'SearchPolicyConfig',
    'RewardRecord',
    'MemoryTiers',
    'uct_score',
    'select',
    'compute_reward',
    'backpropagate',
    'Direction',
    'TaskSpec',
    'ProposalRequest',
    'EvalOutcome',
    'ReviewVerdict',
    'ProposalEngine',
    'Environment',
    'KnowledgeBase',
    'KnowledgeEntry',
    'retrieve',
    'injection_context',
    'SyntheticEngine',
    'SyntheticEnvironment',
    'OperatorBudgets',
    'OperatorScheduler',
    'ReferenceSet',
    'choose_operator',
    'build_reference_set',
    'expand',
    'RunConfig',
    'EventKind',
    'EventLog',
    'EventRecord',
    'replay_events',
    'Orchestrator',
    'RunReport',
    'emit_report',
]

"""Distributed dynamic clustering of multi-agent states over a communication graph."""

from .agent import AgentParams, AgentState, EstimateMessage, ProtocolError, agent_tick, init_agent
from .clustering import HysteresisPolicy, Membership, assign_cluster, cluster_results, nearest_cluster
from .consensus import ClusterEstimates, NumericalFault, StateSample, StructuralError, max_stable_step
from .graph import Graph, GraphError, build_graph, components, is_connected, laplacian, neighbors
from .netsim import (AbstractScenario, ConfigError, FaultModel, PerturbationEvent, Scenario, SimConfig,
                     Simulation, TraceError, compare_traces, run, summarize)

__version__ = "0.1.0"

__all__ = [
    "AgentParams", "AgentState", "EstimateMessage", "ProtocolError", "agent_tick", "init_agent",
    "HysteresisPolicy", "Membership", "assign_cluster", "cluster_results", "nearest_cluster",
    "ClusterEstimates", "NumericalFault", "StateSample", "StructuralError", "max_stable_step",
    "Graph", "GraphError", "build_graph", "components", "is_connected", "laplacian", "neighbors",
    "AbstractScenario", "ConfigError", "FaultModel", "PerturbationEvent", "Scenario", "SimConfig",
    "Simulation", "TraceError", "compare_traces", "run", "summarize",
]

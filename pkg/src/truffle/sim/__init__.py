from truffle.sim.cluster import Cluster, ClusterProfiles, MeasurementRecord, Mode, deploy
from truffle.sim.workflow import FunctionSpec, Topology, WorkflowSpec, chain_workflow, video_workflow

__all__ = [
    "Cluster",
    "ClusterProfiles",
    "FunctionSpec",
    "MeasurementRecord",
    "Mode",
    "Topology",
    "WorkflowSpec",
    "chain_workflow",
    "deploy",
    "video_workflow",
]

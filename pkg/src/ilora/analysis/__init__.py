from .cluster import ClusterAssignment, cluster_sequences, kmeans, purity
from .evaluate import EvalRecord, EvalReport, evaluate, score_outputs
from .export import export_attention, export_curves, export_heatmap, read_heatmap_csv
from .gradients import (GradientCapture, GradientRecord, Heatmap, block_contrast, grad_similarity,
                        split_groups)

__all__ = [
    "ClusterAssignment", "EvalRecord", "EvalReport", "GradientCapture", "GradientRecord", "Heatmap",
    "block_contrast", "cluster_sequences", "evaluate", "export_attention", "export_curves",
    "export_heatmap", "grad_similarity", "kmeans", "purity", "read_heatmap_csv", "score_outputs",
    "split_groups",
]

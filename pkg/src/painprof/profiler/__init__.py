"""Pain-response profiles: descriptors, spectral clustering, cluster statistics."""
from painprof.profiler.descriptors import (
    DESCRIPTOR_DIM, SubjectDescriptor, build_descriptor, build_descriptors, descriptor_matrix,
    normalize_levels,
)
from painprof.profiler.report import (
    heatmap_order, heatmap_svg, load_assignments, save_assignments, save_similarity_csv,
)
from painprof.profiler.spectral import (
    DEFAULT_GAMMA, SpectralModel, jacobi_eigh, kmeans, random_walk_laplacian, similarity_matrix,
    spectral_cluster, spectral_embedding, symmetric_laplacian,
)
from painprof.profiler.stats import ClusterStats, cluster_statistics, format_cluster_table

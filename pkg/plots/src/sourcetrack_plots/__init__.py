"""Figure rendering for sourcetrack run directories.

A pure consumer of the pipeline's CSV contracts: nothing here recomputes
physics, and numeric annotations come only from the files a run wrote.
"""

from .figures import (
    FIGURE_KINDS,
    FigureSpec,
    render,
    render_chain_histogram,
    render_indicator_slice,
    render_path3d,
)
from .reading import (
    ContractError,
    read_chain_csv,
    read_metrics_txt,
    read_slice_csv,
    read_track_csv,
    read_true_path_csv,
)

__version__ = "0.1.0"

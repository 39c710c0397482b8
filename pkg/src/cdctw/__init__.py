"""Multi-view temporal alignment: DTW, CTW, DCTW and conditionally gated variants."""

from cdctw.seqcore import AlignmentPath, PairedViews, SequenceView

__all__ = ["AlignmentPath", "PairedViews", "SequenceView"]

__version__ = "0.1.0"
